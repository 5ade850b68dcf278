//! Central-difference gradient oracle.

/// Relative error `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Estimate `∂f/∂p_i` for every element of `params` by central differences
/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h`. `params` is restored before return.
pub fn finite_diff_gradient<F>(mut f: F, params: &mut [f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + step;
        let plus = f(params);
        params[i] = original - step;
        let minus = f(params);
        params[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}
