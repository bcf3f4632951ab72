use super::vocab::{Vocab, MASK, NUM_SPECIAL, PAD};
use crate::model::TokenBatch;
use crate::tensor::IGNORE_INDEX;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Masked-LM inputs with per-position labels (`IGNORE_INDEX` where unsupervised).
#[derive(Clone, Debug, PartialEq)]
pub struct MlmBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<i64>,
    pub stats: MaskStats,
}

impl MlmBatch {
    pub fn supervised(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaskStats {
    pub eligible: usize,
    pub selected: usize,
    pub masked: usize,
    pub kept: usize,
    pub randomized: usize,
}

impl std::ops::AddAssign for MaskStats {
    fn add_assign(&mut self, o: Self) {
        self.eligible += o.eligible;
        self.selected += o.selected;
        self.masked += o.masked;
        self.kept += o.kept;
        self.randomized += o.randomized;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingConfig {
    /// Probability that an eligible token is selected.
    pub select_prob: f64,
    /// Of selected tokens, fraction replaced by `<mask>`.
    pub mask_frac: f64,
    /// Of selected tokens, fraction left unchanged. The rest get a random token.
    pub keep_frac: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            select_prob: 0.15,
            mask_frac: 0.85,
            keep_frac: 0.10,
        }
    }
}

pub fn mlm_collate(sequences: &[Vec<u32>], vocab: &Vocab, seed: u64) -> MlmBatch {
    mlm_collate_with(sequences, vocab.len(), &MaskingConfig::default(), seed)
}

/// Pads `sequences` and corrupts non-special tokens. Each eligible token is
/// selected independently; selected tokens keep their original id as label.
pub fn mlm_collate_with(sequences: &[Vec<u32>], vocab_size: usize, cfg: &MaskingConfig, seed: u64) -> MlmBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = TokenBatch::from_sequences(sequences, PAD);
    let mut labels = vec![IGNORE_INDEX; tokens.ids.len()];
    let mut stats = MaskStats::default();
    let can_randomize = vocab_size > NUM_SPECIAL as usize;
    for (pos, id) in tokens.ids.iter_mut().enumerate() {
        if *id < NUM_SPECIAL || !tokens.attention_mask[pos] {
            continue;
        }
        stats.eligible += 1;
        if !rng.random_bool(cfg.select_prob) {
            continue;
        }
        stats.selected += 1;
        labels[pos] = *id as i64;
        let r: f64 = rng.random();
        if r < cfg.mask_frac {
            *id = MASK;
            stats.masked += 1;
        } else if r < cfg.mask_frac + cfg.keep_frac || !can_randomize {
            stats.kept += 1;
        } else {
            *id = rng.random_range(NUM_SPECIAL..vocab_size as u32);
            stats.randomized += 1;
        }
    }
    MlmBatch { tokens, labels, stats }
}
