use crate::kernel::DenseMatrix;

/// Denominator floor for the relative error, so entries whose true gradient is
/// zero are judged on absolute error instead of amplified round-off.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub index: usize,
    pub max_rel_err: f64,
    /// Flat position of the worst entry.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// `loss` receives the full parameter list with exactly one entry perturbed and
/// must be deterministic. Every entry of every tensor is probed.
pub fn finite_diff_check<F>(
    mut loss: F,
    values: &[DenseMatrix],
    analytic: &[DenseMatrix],
    eps: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[DenseMatrix]) -> f64,
{
    assert!(
        (1e-6..=1e-4).contains(&eps),
        "finite difference step must lie in [1e-6, 1e-4]"
    );
    assert_eq!(values.len(), analytic.len(), "one analytic gradient per tensor");
    let mut work: Vec<DenseMatrix> = values.to_vec();
    let mut tensors = Vec::with_capacity(values.len());
    for t in 0..values.len() {
        assert_eq!(values[t].shape(), analytic[t].shape());
        let mut worst = TensorCheck {
            index: t,
            max_rel_err: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..values[t].data().len() {
            let orig = values[t].data()[k];
            work[t].data_mut()[k] = orig + eps;
            let up = loss(&work);
            work[t].data_mut()[k] = orig - eps;
            let down = loss(&work);
            work[t].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[t].data()[k];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_err || !err.is_finite() {
                worst = TensorCheck {
                    index: t,
                    max_rel_err: err,
                    worst_entry: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        tensors.push(worst);
    }
    let max_rel_err = tensors
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    GradCheckReport {
        passed: max_rel_err < tol,
        tensors,
        max_rel_err,
        tol,
    }
}
