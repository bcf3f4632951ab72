use super::{ModelConfig, ModelError, Result, TaskKind};
use crate::tensor::{ParameterStore, Tape, Tensor};

/// Vocabulary logits `[rows, V]` for hidden states viewed as `[rows, d]`.
/// With a tied head the token embedding matrix is reused transposed.
pub fn lm_head_forward(tape: &mut Tape, store: &ParameterStore, cfg: &ModelConfig, hidden: Tensor) -> Result<Tensor> {
    let h = tape.flatten_rows(hidden)?;
    let w = if cfg.tie_lm_head {
        let emb = tape.param(store, "embed.token.weight")?;
        tape.transpose(emb)?
    } else {
        tape.param(store, "lm_head.weight")?
    };
    let b = tape.param(store, "lm_head.bias")?;
    let logits = tape.matmul(h, w)?;
    Ok(tape.add(logits, b)?)
}

/// Linear head on the first-token representation of each sequence.
/// Classification gives `[B, C]`, regression gives `[B]`.
pub fn task_head_forward(tape: &mut Tape, store: &ParameterStore, cfg: &ModelConfig, hidden: Tensor) -> Result<Tensor> {
    let shape = tape.shape(hidden).to_vec();
    if shape.len() != 3 {
        return Err(ModelError::Config(format!(
            "task head expects [B, T, d], got {shape:?}"
        )));
    }
    let (b, t) = (shape[0], shape[1]);
    match cfg.task {
        TaskKind::None => return Err(ModelError::Config("model has no task head".into())),
        TaskKind::Classification { classes } if classes < 2 => {
            return Err(ModelError::Config(format!(
                "classification needs at least 2 classes, got {classes}"
            )))
        }
        _ => {}
    }
    let flat = tape.flatten_rows(hidden)?;
    let rows: Vec<usize> = (0..b).map(|i| i * t).collect();
    let pooled = tape.gather_rows(flat, &rows)?;
    let w = tape.param(store, "task_head.weight")?;
    let bias = tape.param(store, "task_head.bias")?;
    let out = tape.linear(pooled, w, Some(bias))?;
    match cfg.task {
        TaskKind::Regression => Ok(tape.reshape(out, &[b])?),
        _ => Ok(out),
    }
}
