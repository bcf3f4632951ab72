use super::*;
use crate::data::synthetic::{general_corpus, nonce_words, random_facts, PLACES};
use crate::data::{
    mlm_collate_with, triple_to_cloze, Cloze, LabeledExample, MaskingConfig, MlmBatch, Templates, Vocab,
};
use crate::eval::metrics;
use crate::model::{
    freeze_mask, is_domain_adapter_param, KnowledgeTarget, Model, ModelConfig, RoutingMode, Stage, TaskKind,
};
use crate::tensor::{grad_check, Array, ParameterStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicUsize, Ordering};

/// The gradient-suite toy: V = 50, d = 16, d_ff = 32, two layers.
fn toy(task: TaskKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        hidden_dim: 16,
        ffn_dim: 32,
        num_layers: 2,
        num_heads: 2,
        max_seq_len: 12,
        adapter_layers: vec![0, 1],
        dropout: 0.0,
        task,
        ..ModelConfig::default()
    }
}

fn scramble(store: &mut ParameterStore, seed: u64, select: impl Fn(&str) -> bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().filter(|n| select(n)).map(str::to_string).collect();
    for n in names {
        let shape = store.value(&n).unwrap().shape().to_vec();
        store.set(n, Array::uniform(&shape, 0.3, &mut rng));
    }
}

fn sentences(n: usize, seed: u64, vocab: u32) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..9);
            std::iter::once(3)
                .chain((0..len).map(|_| rng.random_range(5..vocab)))
                .collect()
        })
        .collect()
}

fn batches(vocab: usize) -> (MlmBatch, MlmBatch) {
    let cfg = MaskingConfig {
        select_prob: 0.4,
        ..MaskingConfig::default()
    };
    let d = mlm_collate_with(&sentences(3, 1, vocab as u32), vocab, &cfg, 11);
    let g = mlm_collate_with(&sentences(3, 2, vocab as u32), vocab, &cfg, 12);
    assert!(d.supervised() > 0);
    (d, g)
}

fn loss_parts(model: &Model, store: &ParameterStore, cfg: &Stage1Config) -> Stage1Loss {
    let (d, g) = batches(model.config().vocab_size);
    let mut tape = Tape::new();
    stage1_loss(&mut tape, model, store, Some(&d), Some(&g), cfg, None).unwrap()
}

fn total_value(model: &Model, store: &ParameterStore, cfg: &Stage1Config) -> f64 {
    let (d, g) = batches(model.config().vocab_size);
    let mut tape = Tape::new();
    let l = stage1_loss(&mut tape, model, store, Some(&d), Some(&g), cfg, None).unwrap();
    tape.scalar_value(l.total.unwrap())
}

#[test]
fn total_loss_is_lambda_weighted_sum() {
    let model = Model::new(toy(TaskKind::None)).unwrap();
    let mut store = model.init(0).unwrap();
    scramble(&mut store, 5, is_domain_adapter_param);
    for lambda in [0.0, 0.5, 1.0, 2.5] {
        let cfg = Stage1Config {
            lambda,
            ..Stage1Config::default()
        };
        let parts = loss_parts(&model, &store, &cfg);
        let (lk, ls) = (parts.l_k.unwrap(), parts.l_s.unwrap());
        assert_eq!(total_value(&model, &store, &cfg), lambda * lk + ls);
        if lambda == 0.0 {
            assert_eq!(total_value(&model, &store, &cfg), ls);
        }
    }
    // 0.5 * 2.0 + 0.3 = 1.3, the hand example
    assert!((0.5f64 * 2.0 + 0.3 - 1.3).abs() < 1e-15);
}

/// Per layer: squared L2 over features, averaged over real tokens; then
/// averaged over layers. Computed from a separate captured forward pass.
fn sampling_oracle(model: &Model, store: &ParameterStore, batch: &MlmBatch) -> f64 {
    let mut tape = Tape::new();
    let out = model
        .forward(
            &mut tape,
            store,
            &batch.tokens,
            &RoutingMode::Vanilla,
            crate::model::ForwardOptions::capture(),
        )
        .unwrap();
    let real = batch.tokens.real_rows();
    let mut total = 0.0;
    for c in &out.captures {
        let f = tape.value(c.ffn_out).clone();
        let k = tape.value(c.adapter_outs[0]).clone();
        let mut layer = 0.0;
        for &r in &real {
            layer += f
                .row(r)
                .iter()
                .zip(k.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        total += layer / real.len() as f64;
    }
    total / out.captures.len() as f64
}

#[test]
fn sampling_loss_matches_direct_recomputation() {
    let model = Model::new(toy(TaskKind::None)).unwrap();
    let mut store = model.init(3).unwrap();
    let (_, g) = batches(50);
    // At initialization the adapter outputs zero, so L_S is the mean of |F|^2.
    let init = loss_parts(&model, &store, &Stage1Config::default()).l_s.unwrap();
    let oracle = sampling_oracle(&model, &store, &g);
    assert!((init - oracle).abs() < 1e-12 * oracle.max(1.0), "{init} vs {oracle}");
    assert!(init > 0.0);
    scramble(&mut store, 9, is_domain_adapter_param);
    let trained = loss_parts(&model, &store, &Stage1Config::default()).l_s.unwrap();
    assert!((trained - sampling_oracle(&model, &store, &g)).abs() < 1e-12 * trained.max(1.0));
}

#[test]
fn stage1_gradient_matches_finite_differences() {
    let model = Model::new(toy(TaskKind::None)).unwrap();
    let mut store = model.init(0).unwrap();
    scramble(&mut store, 21, is_domain_adapter_param);
    let mask = freeze_mask(Stage::Knowledge(KnowledgeTarget::DomainAdapter(0)), model.config()).unwrap();
    store.set_trainable(mask.iter().cloned()).unwrap();
    let names: Vec<String> = mask.iter().cloned().collect();
    let flat: Vec<f64> = names
        .iter()
        .flat_map(|n| store.value(n).unwrap().data().to_vec())
        .collect();
    let cfg = Stage1Config::default();
    let (d, g) = batches(50);
    let report = grad_check(
        |x: &[f64]| {
            let mut s = store.clone();
            let mut off = 0;
            for n in &names {
                let len = s.value(n).unwrap().data().len();
                s.value_mut(n).unwrap().data_mut().copy_from_slice(&x[off..off + len]);
                off += len;
            }
            s.zero_grads();
            let mut tape = Tape::new();
            let l = stage1_loss(&mut tape, &model, &s, Some(&d), Some(&g), &cfg, None).unwrap();
            let total = l.total.unwrap();
            tape.backward(total).unwrap();
            tape.write_grads(&mut s).unwrap();
            let grad = names.iter().flat_map(|n| s.grad(n).unwrap().data().to_vec()).collect();
            (tape.scalar_value(total), grad)
        },
        &flat,
        1e-5,
    );
    assert!(flat.len() > 200);
    assert!(
        report.passes(1e-4),
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst_index
    );
}

fn fact_world(n: usize) -> (Vocab, Vec<Cloze>, Vec<Vec<u32>>) {
    let general = general_corpus(60, 4);
    let facts = random_facts(&nonce_words(n, 0), "/r/LocatedAt", &PLACES, 5);
    let templates = Templates::builtin();
    let texts: Vec<String> = general
        .iter()
        .cloned()
        .chain(facts.iter().map(|f| templates.instantiate(f).unwrap()))
        .collect();
    let vocab = Vocab::build(texts.iter().map(String::as_str), 300).unwrap();
    let clozes = facts
        .iter()
        .map(|f| triple_to_cloze(f, &templates, &vocab, 12).unwrap())
        .collect();
    let general = general.iter().map(|s| vocab.encode(s, 12)).collect();
    (vocab, clozes, general)
}

fn fact_model(vocab: usize, task: TaskKind) -> Model {
    Model::new(ModelConfig {
        vocab_size: vocab,
        task_adapter_style: "pfeiffer".into(),
        gate_style: "linear".into(),
        ..toy(task)
    })
    .unwrap()
}

#[test]
fn stage1_changes_only_the_knowledge_target() {
    let (vocab, clozes, general) = fact_world(20);
    let model = fact_model(vocab.len(), TaskKind::Classification { classes: 2 });
    let mut store = model.init(1).unwrap();
    let mask = freeze_mask(Stage::Knowledge(KnowledgeTarget::DomainAdapter(0)), model.config()).unwrap();
    let outside = store.digest(|n| !mask.contains(n));
    let inside = store.digest(|n| mask.contains(n));
    let items: Vec<DomainItem> = clozes.into_iter().map(DomainItem::Cloze).collect();
    let cfg = Stage1Config {
        epochs: 5,
        lr: 1e-3,
        ..Stage1Config::default()
    };
    stage1_train(&model, &mut store, &items, &general, &cfg, |_, _, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(store.digest(|n| !mask.contains(n)), outside);
    assert_ne!(store.digest(|n| mask.contains(n)), inside);
}

#[test]
fn knowledge_loss_decreases_on_fact_corpus() {
    let (vocab, clozes, general) = fact_world(50);
    let model = fact_model(vocab.len(), TaskKind::None);
    let mut store = model.init(2).unwrap();
    let items: Vec<DomainItem> = clozes.into_iter().map(DomainItem::Cloze).collect();
    let cfg = Stage1Config {
        epochs: 6,
        lr: 1e-3,
        ..Stage1Config::default()
    };
    let report = stage1_train(&model, &mut store, &items, &general, &cfg, |_, _, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    let first = report.epochs[0].l_k.unwrap();
    let last = report.epochs.last().unwrap().l_k.unwrap();
    assert!(last < first, "{first} -> {last}");
    assert_eq!(report.curve.records.len(), 6 * steps_per_epoch(50, general.len(), &cfg));
}

#[test]
fn sampling_loss_alone_pulls_adapter_onto_ffn() {
    let (vocab, clozes, general) = fact_world(10);
    let model = Model::new(ModelConfig {
        adapter_reduction: 2,
        ..fact_model(vocab.len(), TaskKind::None).config().clone()
    })
    .unwrap();
    let mut store = model.init(4).unwrap();
    let items: Vec<DomainItem> = clozes.into_iter().map(DomainItem::Cloze).collect();
    let cfg = Stage1Config {
        lambda: 0.0,
        epochs: 60,
        lr: 1e-2,
        ..Stage1Config::default()
    };
    let report = stage1_train(&model, &mut store, &items, &general, &cfg, |_, _, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    for r in &report.curve.records {
        assert_eq!(r.total, r.l_s.unwrap());
    }
    let first = report.epochs[0].l_s.unwrap();
    let last = report.epochs.last().unwrap().l_s.unwrap();
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn without_sampling_loss_the_csv_leaves_l_s_empty() {
    let (vocab, clozes, general) = fact_world(10);
    let model = fact_model(vocab.len(), TaskKind::None);
    let mut store = model.init(0).unwrap();
    let items: Vec<DomainItem> = clozes.into_iter().map(DomainItem::Cloze).collect();
    let cfg = Stage1Config {
        epochs: 1,
        sampling_loss: false,
        ..Stage1Config::default()
    };
    let report = stage1_train(&model, &mut store, &items, &general, &cfg, |_, _, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    let csv = report.curve.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,L_K,L_S,L"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert!(cells[2].is_empty() && !cells[1].is_empty(), "{line}");
    }
    assert_eq!(steps_per_epoch(10, general.len(), &cfg), 1);
}

#[test]
fn epoch_length_covers_the_longer_corpus() {
    let cfg = Stage1Config::default();
    assert_eq!(cfg.halves(), (10, 10));
    assert_eq!(steps_per_epoch(50, 200, &cfg), 20);
    assert_eq!(steps_per_epoch(250, 200, &cfg), 25);
    let no_old = Stage1Config {
        sampling_loss: false,
        ..cfg.clone()
    };
    assert_eq!(no_old.halves(), (10, 0));
    assert_eq!(steps_per_epoch(50, 200, &no_old), 5);
}

#[test]
fn early_stop_ends_training() {
    let (vocab, clozes, general) = fact_world(10);
    let model = fact_model(vocab.len(), TaskKind::None);
    let mut store = model.init(0).unwrap();
    let items: Vec<DomainItem> = clozes.into_iter().map(DomainItem::Cloze).collect();
    let cfg = Stage1Config {
        epochs: 50,
        ..Stage1Config::default()
    };
    let report = stage1_train(&model, &mut store, &items, &general, &cfg, |e, _, _| {
        if e == 1 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(report.epochs.len(), 2);
}

#[test]
fn stage1_config_validation() {
    let bad = [
        Stage1Config {
            mix_ratio: 1.0,
            ..Stage1Config::default()
        },
        Stage1Config {
            lambda: -1.0,
            ..Stage1Config::default()
        },
        Stage1Config {
            batch_size: 1,
            ..Stage1Config::default()
        },
        Stage1Config {
            warmup_epochs: 11,
            ..Stage1Config::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    Stage1Config::default().validate().unwrap();
}

#[test]
fn summary_labels_copy_the_first_answer() {
    let (vocab, clozes, _) = fact_world(4);
    let model = fact_model(vocab.len(), TaskKind::None);
    let mut store = model.init(0).unwrap();
    let items: Vec<DomainItem> = clozes.iter().cloned().map(DomainItem::Cloze).collect();
    let refs: Vec<&DomainItem> = items.iter().collect();
    let mut b = super::stage1::collate_domain(&refs, vocab.len(), 0);
    let before = b.supervised();
    super::pretrain::add_summary_labels(&mut b);
    assert_eq!(b.supervised(), before + clozes.len());
    for (i, c) in clozes.iter().enumerate() {
        assert_eq!(b.labels[i * b.tokens.seq], c.answers[0] as i64);
    }
    // training with it still leaves the backbone alone
    let outside = store.digest(|n| !is_domain_adapter_param(n));
    let cfg = Stage1Config {
        epochs: 1,
        summary_token: true,
        ..Stage1Config::default()
    };
    stage1_train(
        &model,
        &mut store,
        &items,
        &[],
        &Stage1Config {
            sampling_loss: false,
            ..cfg
        },
        |_, _, _| ControlFlow::Continue(()),
    )
    .unwrap();
    assert_eq!(store.digest(|n| !is_domain_adapter_param(n)), outside);
}

fn task_examples(n: usize, seed: u64, vocab: u32, classes: usize) -> Vec<TaskExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % classes;
            // the class is written into the second token
            let mut ids = vec![3, 5 + c as u32];
            ids.extend((0..rng.random_range(2..6)).map(|_| rng.random_range(5..vocab)));
            TaskExample {
                ids,
                target: Target::Class(c),
            }
        })
        .collect()
}

#[test]
fn zero_task_head_starts_at_log_classes() {
    let model = fact_model(50, TaskKind::Classification { classes: 3 });
    let store = model.init(0).unwrap();
    let ex = task_examples(6, 0, 50, 3);
    let refs: Vec<&TaskExample> = ex.iter().collect();
    let mut tape = Tape::new();
    let l = stage2_loss(&mut tape, &model, &store, &refs, &RoutingMode::Gated, None).unwrap();
    assert!((tape.scalar_value(l) - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn stage2_overfits_and_freezes_the_rest() {
    let model = fact_model(50, TaskKind::Classification { classes: 3 });
    let mut store = model.init(5).unwrap();
    scramble(&mut store, 6, is_domain_adapter_param);
    let train = task_examples(9, 1, 50, 3);
    let mask = freeze_mask(Stage::Task, model.config()).unwrap();
    let frozen = store.digest(|n| !mask.contains(n));
    let cfg = Stage2Config {
        lr: 1e-2,
        batch_size: 3,
        epochs: 30,
        ..Stage2Config::default()
    };
    let acc = metrics().get("accuracy").unwrap();
    let r = stage2_train(&model, &mut store, &train, &train, &[], &cfg, acc.as_ref()).unwrap();
    assert!(r.test.is_nan());
    assert_eq!(store.digest(|n| !mask.contains(n)), frozen);
    let preds = predict(&model, &store, &train, &RoutingMode::Gated).unwrap();
    assert_eq!(acc.compute(&preds, &golds(&train)).unwrap(), 1.0);
    assert!(r.best_validation >= r.validation[0]);
    assert_eq!(r.validation[r.best_epoch], r.best_validation);
    let b = r.best_epoch;
    assert!(r.validation.iter().all(|&v| v <= r.best_validation));
    for e in 0..r.validation.len() {
        if r.validation[e] == r.best_validation && e != b {
            assert!(
                r.validation_loss[e] > r.validation_loss[b] || (r.validation_loss[e] == r.validation_loss[b] && e > b)
            );
        }
    }
}

#[test]
fn stage2_keeps_best_epoch_parameters() {
    let model = fact_model(50, TaskKind::Classification { classes: 2 });
    let mut store = model.init(7).unwrap();
    let train = task_examples(8, 2, 50, 2);
    let val = task_examples(8, 3, 50, 2);
    let acc = metrics().get("accuracy").unwrap();
    let cfg = Stage2Config {
        lr: 5e-3,
        batch_size: 2,
        epochs: 8,
        ..Stage2Config::default()
    };
    let r = stage2_train(&model, &mut store, &train, &val, &val, &cfg, acc.as_ref()).unwrap();
    // the restored parameters reproduce the selected validation score
    assert_eq!(r.test, r.best_validation);
    assert!(r.best_validation >= r.validation[0]);
}

#[test]
fn regression_head_overfits() {
    let model = fact_model(50, TaskKind::Regression);
    let mut store = model.init(8).unwrap();
    let mut train = task_examples(6, 4, 50, 3);
    for (i, e) in train.iter_mut().enumerate() {
        e.target = Target::Value(i as f64 * 0.5 - 1.0);
    }
    let refs: Vec<&TaskExample> = train.iter().collect();
    let mask = freeze_mask(Stage::Task, model.config()).unwrap();
    store.set_trainable(mask).unwrap();
    let mut opt = crate::tensor::OptimizerState::new(crate::tensor::AdamW {
        lr: 1e-2,
        weight_decay: 0.0,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = stage2_step(&model, &mut store, &mut opt, &refs, &RoutingMode::Gated, 1.0, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..200 {
        last = stage2_step(&model, &mut store, &mut opt, &refs, &RoutingMode::Gated, 1.0, &mut rng).unwrap();
    }
    assert!(last < 0.01 * first, "{first} -> {last}");
    let pearson = metrics().get("pearson").unwrap();
    let p = predict(&model, &store, &train, &RoutingMode::Gated).unwrap();
    assert!(pearson.compute(&p, &golds(&train)).unwrap() > 0.99);
}

#[test]
fn non_gated_routing_leaves_gate_untouched() {
    let model = fact_model(50, TaskKind::Classification { classes: 2 });
    let mut store = model.init(9).unwrap();
    let gate = store.digest(crate::model::is_gate_param);
    let train = task_examples(4, 5, 50, 2);
    let cfg = Stage2Config {
        epochs: 2,
        batch_size: 2,
        routing: RoutingMode::AdapterOnly(0),
        ..Stage2Config::default()
    };
    let acc = metrics().get("accuracy").unwrap();
    stage2_train(&model, &mut store, &train, &train, &[], &cfg, acc.as_ref()).unwrap();
    assert_eq!(store.digest(crate::model::is_gate_param), gate);
}

#[test]
fn label_space_orders_and_validates() {
    let ex = |l: &str| LabeledExample {
        text: "a b".into(),
        text2: None,
        label: l.into(),
    };
    let space = LabelSpace::classification(["pos", "neg", "pos"]);
    assert_eq!(space, LabelSpace::Classes(vec!["neg".into(), "pos".into()]));
    assert_eq!(space.task_kind(), TaskKind::Classification { classes: 2 });
    assert_eq!(space.target("pos").unwrap(), Target::Class(1));
    assert!(matches!(space.target("meh"), Err(TrainError::UnknownLabel { .. })));
    assert_eq!(LabelSpace::Regression.target(" 2.5").unwrap(), Target::Value(2.5));
    assert!(LabelSpace::Regression.target("x").is_err());
    let vocab = Vocab::build(["a b"], 20).unwrap();
    let enc = space.encode(&[ex("neg")], &vocab, 8).unwrap();
    assert_eq!(enc[0].ids, vocab.encode("a b", 8));
}

#[test]
fn transplant_moves_adapter_slots() {
    let one = Model::new(toy(TaskKind::None)).unwrap();
    let mut src = one.init(0).unwrap();
    scramble(&mut src, 3, is_domain_adapter_param);
    let two = Model::new(ModelConfig {
        num_domain_adapters: 2,
        ..toy(TaskKind::None)
    })
    .unwrap();
    let mut dst = two.init(1).unwrap();
    let untouched = dst.digest(|n| n.contains(".domain_adapter.0."));
    let copied = transplant_adapter(&mut dst, &src, 0, 1).unwrap();
    assert_eq!(copied, 8);
    assert_eq!(dst.digest(|n| n.contains(".domain_adapter.0.")), untouched);
    for (name, v) in src.iter().filter(|(n, _)| n.contains(".domain_adapter.0.")) {
        let moved = name.replace(".domain_adapter.0.", ".domain_adapter.1.");
        assert_eq!(dst.value(&moved).unwrap(), v);
    }
    let wide = Model::new(ModelConfig {
        adapter_reduction: 4,
        ..toy(TaskKind::None)
    })
    .unwrap();
    let mut other = wide.init(0).unwrap();
    assert!(transplant_adapter(&mut other, &src, 0, 0).is_err());
    assert!(transplant_adapter(&mut dst, &src, 0, 5).is_err());
}

#[test]
fn grid_single_point_and_full_default_grid() {
    let r = grid_search(&[1e-4], &[8], |p| Ok(p.lr * p.batch_size as f64)).unwrap();
    assert_eq!(
        r.best,
        GridPoint {
            lr: 1e-4,
            batch_size: 8
        }
    );
    assert_eq!(r.scores.len(), 1);
    let calls = AtomicUsize::new(0);
    let r = grid_search(&DEFAULT_LEARNING_RATES, &DEFAULT_BATCH_SIZES, |p| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(-(p.lr - 1e-4).abs() - p.batch_size as f64 * 1e-6)
    })
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 12);
    assert_eq!(
        r.best,
        GridPoint {
            lr: 1e-4,
            batch_size: 2
        }
    );
    let seen: BTreeSet<(u64, usize)> = r.scores.iter().map(|(p, _)| (p.lr.to_bits(), p.batch_size)).collect();
    assert_eq!(seen.len(), 12);
}

#[test]
fn grid_ties_and_nan() {
    let r = grid_search(&[5e-4, 1e-4], &[16, 4], |_| Ok(0.5)).unwrap();
    assert_eq!(
        r.best,
        GridPoint {
            lr: 1e-4,
            batch_size: 4
        }
    );
    let r = grid_search(&[1e-4, 5e-4], &[2], |p| Ok(if p.lr == 1e-4 { f64::NAN } else { 0.1 })).unwrap();
    assert_eq!(r.best.lr, 5e-4);
    assert!(grid_search(&[], &[2], |_| Ok(0.0)).is_err());
    assert!(grid_search(&[1e-4], &[2], |_| Err(TrainError::Empty("x"))).is_err());
}

#[test]
fn grid_is_permutation_invariant() {
    let score = |p: GridPoint| Ok((p.lr * 1e4).sin() + (p.batch_size as f64).cos());
    let a = grid_search(&[5e-5, 1e-4, 5e-4], &[2, 4, 8, 16], score).unwrap();
    let b = grid_search(&[5e-4, 5e-5, 1e-4], &[16, 2, 8, 4], score).unwrap();
    assert_eq!(a, b);
}

#[test]
fn derived_seeds_are_distinct() {
    let mut seen = BTreeSet::new();
    for a in 0..4 {
        for b in 0..256 {
            assert!(seen.insert(derive_seed(7, a, b)));
        }
    }
    assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
}

#[test]
fn pretraining_lowers_mlm_loss_and_stage_one_leaves_backbone() {
    let (vocab, _, general) = fact_world(4);
    let model = fact_model(vocab.len(), TaskKind::None);
    let mut store = model.init(0).unwrap();
    let adapters = store.digest(is_domain_adapter_param);
    let losses = pretrain(
        &model,
        &mut store,
        &general,
        &PretrainConfig {
            epochs: 8,
            batch_size: 10,
            ..PretrainConfig::default()
        },
    )
    .unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    assert_eq!(store.digest(is_domain_adapter_param), adapters);
    let clozes = single_mask_clozes(&general[..5]);
    assert_eq!(clozes.len(), general[..5].iter().map(|s| s.len() - 1).sum::<usize>());
    let acc = mask_fill_accuracy(&model, &store, &clozes, &RoutingMode::Vanilla, 16).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
