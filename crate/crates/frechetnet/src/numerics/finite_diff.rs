//! Central-difference gradients, used as the oracle for hand-derived
//! adjoints.

use ndarray::{Array1, ArrayView1};

/// Central-difference gradient of `f` at `x` with step `h`:
/// `(f(x + h e_j) - f(x - h e_j)) / (2 h)` per coordinate.
pub fn finite_diff_gradient<F>(f: F, x: &ArrayView1<f64>, h: f64) -> Array1<f64>
where
    F: Fn(&ArrayView1<f64>) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.to_owned();
    let mut grad = Array1::<f64>::zeros(x.len());
    for j in 0..x.len() {
        let original = probe[j];
        probe[j] = original + h;
        let up = f(&probe.view());
        probe[j] = original - h;
        let down = f(&probe.view());
        probe[j] = original;
        grad[j] = (up - down) / (2.0 * h);
    }
    grad
}
