use super::{Array, ParameterStore, Result, TensorError};
use std::collections::BTreeMap;

/// AdamW hyperparameters. Weight decay is decoupled from the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Array,
    second: Array,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub hyper: AdamW,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(hyper: AdamW) -> Self {
        Self {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// One bias-corrected AdamW update of every trainable parameter, scaled
    /// by `lr_scale`. All gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParameterStore, lr_scale: f64) -> Result<()> {
        let trainable = store.trainable().clone();
        for name in &trainable {
            if store.grad(name).is_none() {
                return Err(TensorError::MissingGradient(name.clone()));
            }
        }
        self.moments.retain(|k, _| trainable.contains(k));
        self.step += 1;
        let h = self.hyper;
        let lr = h.lr * lr_scale;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for (name, p) in store.iter_mut() {
            if !trainable.contains(name) {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above");
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: Array::zeros(p.value.shape()),
                second: Array::zeros(p.value.shape()),
            });
            let decay = 1.0 - lr * h.weight_decay;
            let values = p.value.data_mut();
            let (m1, m2) = (m.first.data_mut(), m.second.data_mut());
            for i in 0..values.len() {
                let g = grad.data()[i];
                m1[i] = h.beta1 * m1[i] + (1.0 - h.beta1) * g;
                m2[i] = h.beta2 * m2[i] + (1.0 - h.beta2) * g * g;
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                if h.weight_decay != 0.0 {
                    values[i] *= decay;
                }
                values[i] -= lr * mhat / (vhat.sqrt() + h.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Linear warmup followed by linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl ScheduleConfig {
    pub fn new(warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if warmup_steps > total_steps || total_steps == 0 {
            return Err(TensorError::InvalidSchedule {
                warmup: warmup_steps,
                total: total_steps,
            });
        }
        Ok(Self {
            warmup_steps,
            total_steps,
        })
    }
}

/// Learning-rate multiplier at `step`. Steps past the end clamp to 0.
pub fn lr_at(step: usize, sched: ScheduleConfig) -> f64 {
    let ScheduleConfig {
        warmup_steps: warmup,
        total_steps: total,
    } = sched;
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return step as f64 / warmup as f64;
    }
    (total - step) as f64 / (total - warmup) as f64
}
