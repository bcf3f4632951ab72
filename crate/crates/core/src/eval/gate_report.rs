use crate::model::{ForwardOptions, Model, ModelError, RoutingMode, TokenBatch};
use crate::tensor::{ParameterStore, Tape};
use std::collections::BTreeMap;

/// Mean expert weight per adapter layer, averaged over non-padding tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct GateReport {
    /// `(layer, expert, mean weight)`, experts in gate order (adapters, then FFN).
    pub rows: Vec<(usize, usize, f64)>,
}

impl GateReport {
    pub fn mean_weight(&self, layer: usize, expert: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == layer && r.1 == expert).map(|r| r.2)
    }

    /// Mean over layers of each expert's weight.
    pub fn expert_means(&self) -> Vec<f64> {
        let experts = self.rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        (0..experts)
            .map(|e| {
                let w: Vec<f64> = self.rows.iter().filter(|r| r.1 == e).map(|r| r.2).collect();
                w.iter().sum::<f64>() / w.len() as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,expert,mean-weight\n");
        for (l, e, w) in &self.rows {
            s.push_str(&format!("{l},{e},{w}\n"));
        }
        s
    }
}

/// Runs `batches` through the encoder under `mode` (gated or forced) without
/// dropout and averages the expert weights.
pub fn gate_report(
    model: &Model,
    store: &ParameterStore,
    batches: &[TokenBatch],
    mode: &RoutingMode,
) -> Result<GateReport, ModelError> {
    if !matches!(mode, RoutingMode::Gated | RoutingMode::Forced(_)) {
        return Err(ModelError::Routing("gate report needs gated or forced routing".into()));
    }
    let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut tokens = 0usize;
    for b in batches {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, b, mode, ForwardOptions::eval())?;
        let real = b.real_rows();
        tokens += real.len();
        for (layer, w) in &out.gate_weights {
            let w = tape.value(*w);
            let e = w.last_dim();
            for &r in &real {
                for (x, &v) in w.row(r).iter().enumerate().take(e) {
                    *sums.entry((*layer, x)).or_insert(0.0) += v;
                }
            }
        }
    }
    let rows = sums
        .into_iter()
        .map(|((l, e), s)| (l, e, if tokens == 0 { 0.0 } else { s / tokens as f64 }))
        .collect();
    Ok(GateReport { rows })
}
