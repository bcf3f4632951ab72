use super::{Result, TrainError};
use rayon::prelude::*;

pub const DEFAULT_BATCH_SIZES: [usize; 4] = [2, 4, 8, 16];
pub const DEFAULT_LEARNING_RATES: [f64; 3] = [5e-5, 1e-4, 5e-4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    pub best_score: f64,
    /// Every evaluated point in canonical order (lr, then batch size).
    pub scores: Vec<(GridPoint, f64)>,
}

/// Evaluates `run` on every (lr, batch size) combination, in parallel, and
/// returns the highest score. Ties go to the lower learning rate, then the
/// smaller batch; NaN scores never win. Duplicate grid values are merged.
pub fn grid_search<F>(lrs: &[f64], batch_sizes: &[usize], run: F) -> Result<GridResult>
where
    F: Fn(GridPoint) -> Result<f64> + Sync,
{
    let mut lrs = lrs.to_vec();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut batches = batch_sizes.to_vec();
    batches.sort_unstable();
    batches.dedup();
    if lrs.is_empty() || batches.is_empty() {
        return Err(TrainError::Config(
            "grid search needs at least one learning rate and one batch size".into(),
        ));
    }
    let points: Vec<GridPoint> = lrs
        .iter()
        .flat_map(|&lr| batches.iter().map(move |&batch_size| GridPoint { lr, batch_size }))
        .collect();
    let scores: Vec<(GridPoint, f64)> = points
        .par_iter()
        .map(|&p| run(p).map(|s| (p, s)))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &(_, s)) in scores.iter().enumerate() {
        let b = scores[best].1;
        if s > b || (b.is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    Ok(GridResult {
        best: scores[best].0,
        best_score: scores[best].1,
        scores,
    })
}
