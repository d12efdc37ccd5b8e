/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// The relative error of coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|, f)`
/// with the floor `f = 1e-3 · max_j |a_j|`, so coordinates whose gradient is
/// negligible next to the largest one are judged against that scale instead
/// of against rounding noise.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-12);
    let mut p = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_err || !rel.is_finite() {
            report = GradCheckReport { max_rel_err: if rel.is_finite() { rel } else { f64::INFINITY }, worst_index: i, analytic: a, numeric };
        }
    }
    report
}
