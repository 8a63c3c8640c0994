//! Central finite differences as an independent oracle for reverse-mode
//! gradients. Everything here runs at `f64`.

use crate::tensor::Tensor;

/// Step used by all checks.
pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)`, with the denominator floored at `1e-8` so two
/// vanishing values compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` at `x` along the given coordinates.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut buf = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            buf[i] = x[i] + STEP;
            let fp = f(&buf);
            buf[i] = x[i] - STEP;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * STEP)
        })
        .collect()
}

/// Largest relative error between `analytic[i]` and central differences
/// over `coords`.
pub fn max_error_against(analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> f64 {
    let numeric = central_difference(f, x, coords);
    coords
        .iter()
        .zip(&numeric)
        .map(|(&i, &n)| relative_error(analytic[i], n))
        .fold(0.0, f64::max)
}

/// Gradient check for a scalar function of one tensor.
pub fn max_rel_error(f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, x: &[f64], shape: &[usize], coords: &[usize]) -> f64 {
    let leaf = Tensor::param(x.to_vec(), shape);
    let analytic = f(&leaf).backward().wrt(&leaf);
    max_error_against(&analytic, &mut |v| f(&Tensor::from_vec(v.to_vec(), shape)).item(), x, coords)
}

/// Evenly spaced sample of `n` coordinates out of `len`.
pub fn sample_coords(len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n + (i * 7919) % (len / n).max(1)).collect()
}

/// Panics when the full-coordinate check exceeds `1e-4`.
pub fn check(f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, x: &[f64], shape: &[usize]) {
    let coords: Vec<usize> = (0..x.len()).collect();
    let err = max_rel_error(f, x, shape, &coords);
    assert!(err < 1e-4, "gradient check failed: max relative error {err:e}");
}
