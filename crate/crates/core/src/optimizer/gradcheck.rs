/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index with the largest relative error.
    pub worst_index: Option<usize>,
    pub failing: Vec<usize>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Denominator floor for relative errors, so coordinates whose true
/// gradient vanishes are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-7;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `params`, one coordinate at a time,
/// compared against `analytic`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], analytic: &[f64], h: f64, tol: f64) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut x = params.to_vec();
    let mut report = GradCheckReport::default();
    for i in 0..x.len() {
        let x0 = x[i];
        x[i] = x0 + h;
        let fp = f(&x);
        x[i] = x0 - h;
        let fm = f(&x);
        x[i] = x0;
        let num = (fp - fm) / (2.0 * h);
        let rel = relative_error(analytic[i], num);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_index = Some(i);
        }
        if !(rel < tol) {
            report.failing.push(i);
        }
        report.numeric.push(num);
    }
    report
}
