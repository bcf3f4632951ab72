//! Central-difference gradient verification.

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor on the denominator, so that coordinates whose
/// true gradient is zero are judged by absolute error at that floor.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Default denominator floor used by [`grad_check`].
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient returned by `f` at `params` against
/// central differences with step `eps`, coordinate by coordinate.
///
/// `f` maps a flat parameter vector to `(value, gradient)`.
pub fn grad_check<F>(mut f: F, params: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let (plus, _) = f(&probe);
        probe[i] = orig - eps;
        let (minus, _) = f(&probe);
        probe[i] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    let mut max_rel_err = 0.0;
    let mut worst_index = None;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n, REL_ERR_FLOOR);
        if e > max_rel_err {
            max_rel_err = e;
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
    }
}
