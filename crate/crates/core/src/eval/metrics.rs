use super::{EvalError, Result};
use crate::registry::Registry;
use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskFamily {
    Classification,
    Regression,
}

impl TaskFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Regression => "regression",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Predictions {
    pub fn family(&self) -> TaskFamily {
        match self {
            Predictions::Classes(_) => TaskFamily::Classification,
            Predictions::Values(_) => TaskFamily::Regression,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Predictions::Classes(v) => v.len(),
            Predictions::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_lengths(preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(EvalError::LengthMismatch { preds, golds });
    }
    if preds == 0 {
        return Err(EvalError::TooFew("F1", 1));
    }
    Ok(())
}

/// Per-class (tp, fp, fn) for every class seen in either vector.
fn confusion(preds: &[usize], golds: &[usize]) -> BTreeMap<usize, (usize, usize, usize)> {
    let mut c: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            c.entry(p).or_default().0 += 1;
        } else {
            c.entry(p).or_default().1 += 1;
            c.entry(g).or_default().2 += 1;
        }
    }
    c
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn micro_f1(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let (tp, fp, fn_) = confusion(preds, golds)
        .values()
        .fold((0, 0, 0), |a, &(t, p, n)| (a.0 + t, a.1 + p, a.2 + n));
    Ok(f1(tp, fp, fn_))
}

/// Unweighted mean of per-class F1 over classes present in either vector.
pub fn macro_f1(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let c = confusion(preds, golds);
    Ok(c.values().map(|&(t, p, n)| f1(t, p, n)).sum::<f64>() / c.len() as f64)
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    Ok(preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / preds.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            preds: x.len(),
            golds: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::TooFew("pearson", 2));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantVector);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn family(&self) -> TaskFamily;
    fn compute(&self, preds: &Predictions, golds: &Predictions) -> Result<f64>;
}

fn mismatch(metric: &'static str, expected: TaskFamily, got: &Predictions) -> EvalError {
    EvalError::TaskMismatch {
        metric,
        expected: expected.as_str(),
        got: got.family().as_str(),
    }
}

struct ClassMetric(&'static str, fn(&[usize], &[usize]) -> Result<f64>);

impl Metric for ClassMetric {
    fn name(&self) -> &'static str {
        self.0
    }
    fn family(&self) -> TaskFamily {
        TaskFamily::Classification
    }
    fn compute(&self, preds: &Predictions, golds: &Predictions) -> Result<f64> {
        match (preds, golds) {
            (Predictions::Classes(p), Predictions::Classes(g)) => (self.1)(p, g),
            (Predictions::Classes(_), other) | (other, _) => Err(mismatch(self.0, self.family(), other)),
        }
    }
}

struct Pearson;

impl Metric for Pearson {
    fn name(&self) -> &'static str {
        "pearson"
    }
    fn family(&self) -> TaskFamily {
        TaskFamily::Regression
    }
    fn compute(&self, preds: &Predictions, golds: &Predictions) -> Result<f64> {
        match (preds, golds) {
            (Predictions::Values(p), Predictions::Values(g)) => pearson(p, g),
            (Predictions::Values(_), other) | (other, _) => Err(mismatch("pearson", self.family(), other)),
        }
    }
}

static METRICS: LazyLock<Registry<dyn Metric>> = LazyLock::new(|| {
    let mut r: Registry<dyn Metric> = Registry::new("metric");
    r.register("micro-f1", Arc::new(ClassMetric("micro-f1", micro_f1)));
    r.register("macro-f1", Arc::new(ClassMetric("macro-f1", macro_f1)));
    r.register("accuracy", Arc::new(ClassMetric("accuracy", accuracy)));
    r.register("pearson", Arc::new(Pearson));
    r
});

pub fn metrics() -> &'static Registry<dyn Metric> {
    &METRICS
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Gold count per class; empty for regression.
    pub supports: BTreeMap<usize, usize>,
}

impl MetricReport {
    pub fn compute(metric: &dyn Metric, preds: &Predictions, golds: &Predictions) -> Result<Self> {
        let value = metric.compute(preds, golds)?;
        let mut supports = BTreeMap::new();
        if let Predictions::Classes(g) = golds {
            for &c in g {
                *supports.entry(c).or_insert(0) += 1;
            }
        }
        Ok(Self {
            metric: metric.name().to_string(),
            value,
            supports,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("metric,value\n{},{}\n", self.metric, self.value);
        if !self.supports.is_empty() {
            s.push_str("class,support\n");
            for (c, n) in &self.supports {
                s.push_str(&format!("{c},{n}\n"));
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedAggregate {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl std::fmt::Display for SeedAggregate {
    /// Percent with one decimal, e.g. `60.6±4.9`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}±{:.1}", self.mean * 100.0, self.std * 100.0)
    }
}

pub fn aggregate_seeds(values: &[f64]) -> Result<SeedAggregate> {
    if values.is_empty() {
        return Err(EvalError::TooFew("seed aggregation", 1));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let all_equal = values.iter().all(|&v| v == values[0]);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SeedAggregate {
        values: values.to_vec(),
        mean: if all_equal { values[0] } else { mean.clamp(min, max) },
        std: if all_equal { 0.0 } else { var.sqrt() },
    })
}
