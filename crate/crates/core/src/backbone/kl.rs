//! Divergence terms of the evidence lower bound.

use stylefusion_autodiff::{Scalar, Var};

/// Closed-form `KL(N(m_q, s_q^2) || N(m_p, s_p^2))` per element, summed.
/// Arguments are flat slices of equal length holding means and log standard
/// deviations.
pub fn gaussian_kl(m_q: &[f64], logs_q: &[f64], m_p: &[f64], logs_p: &[f64]) -> f64 {
    m_q.iter()
        .zip(logs_q)
        .zip(m_p.iter().zip(logs_p))
        .map(|((&mq, &lq), (&mp, &lp))| lp - lq + ((2.0 * lq).exp() + (mq - mp).powi(2)) / (2.0 * (2.0 * lp).exp()) - 0.5)
        .sum()
}

/// Same closed form on the tape, summed over every element.
pub fn gaussian_kl_var<'t, T: Scalar>(m_q: Var<'t, T>, logs_q: Var<'t, T>, m_p: Var<'t, T>, logs_p: Var<'t, T>) -> Var<'t, T> {
    let inv_var_p = (logs_p.scale(T::lit(-2.0))).exp();
    let num = (logs_q.scale(T::lit(2.0))).exp() + (m_q - m_p).square();
    (logs_p - logs_q + (num * inv_var_p).scale(T::lit(0.5))).add_scalar(T::lit(-0.5)).sum()
}

/// Single-sample estimate of `KL(q(z) || p(z))` when the prior lives in flow
/// space: `fz = f(z)` with log-determinant `logdet`, `z` drawn from the
/// posterior with log standard deviation `logs_q`. The posterior entropy is
/// taken in expectation.
pub fn flow_kl<'t, T: Scalar>(fz: Var<'t, T>, logs_q: Var<'t, T>, m_p: Var<'t, T>, logs_p: Var<'t, T>, logdet: Var<'t, T>) -> Var<'t, T> {
    let sq = (fz - m_p).square() * logs_p.scale(T::lit(-2.0)).exp();
    (logs_p - logs_q + sq.scale(T::lit(0.5))).add_scalar(T::lit(-0.5)).sum() - logdet
}
