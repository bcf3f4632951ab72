use super::corpus::LabeledExample;
use super::{DataError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
}

/// Draws `k` training and `k` disjoint validation examples per class from
/// `pool` without replacement. `test` is passed through unchanged.
pub fn few_shot_sample(pool: &[LabeledExample], test: &[LabeledExample], k: usize, seed: u64) -> Result<FewShotSplit> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in pool.iter().enumerate() {
        by_class.entry(ex.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 * k {
            return Err(DataError::ClassTooSmall {
                class: class.to_string(),
                have: idx.len(),
                need: 2 * k,
            });
        }
        idx.shuffle(&mut rng);
        train.extend(idx[..k].iter().map(|&i| pool[i].clone()));
        validation.extend(idx[k..2 * k].iter().map(|&i| pool[i].clone()));
    }
    Ok(FewShotSplit {
        train,
        validation,
        test: test.to_vec(),
        seed,
    })
}
