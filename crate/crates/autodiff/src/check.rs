//! Central finite differences, evaluated only through forward passes.

use crate::scalar::Scalar;

/// Derivative of `f` at `x[i]` by central differences with step `h`.
pub fn central_difference<T: Scalar>(x: &mut [T], i: usize, h: T, mut f: impl FnMut(&[T]) -> T) -> T {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (T::lit(2.0) * h)
}

/// Full gradient of `f` by central differences.
pub fn numeric_gradient<T: Scalar>(x: &[T], h: T, mut f: impl FnMut(&[T]) -> T) -> Vec<T> {
    let mut work = x.to_vec();
    (0..x.len()).map(|i| central_difference(&mut work, i, h, &mut f)).collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
