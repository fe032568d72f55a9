//! Model parameters, derived constants and the closed-form profiles.
//!
//! The profile equation on `z > 0` reads
//!
//! ```text
//! -((1 - v) z + 1) F'(z) = (2 - v - 2 m0) F(z) + ∫_0^z F(z - y) F(y) dy,   M0(F) = m0
//! ```
//!
//! and the fat-tail existence argument needs `0 < m0 <= m0_bar(v) < v / 2`.

use std::f64::consts::{E, LN_2};

use serde::Serialize;

use crate::error::{domain, Error, Result};

/// Bisection tolerance for the slack constant `sigma_star`.
pub const SIGMA_TOL: f64 = 1e-12;

/// The pair `(v, m0)` parametrizing the self-similar system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    v: f64,
    m0: f64,
}

impl ModelParams {
    /// Parameters in the existence regime: `0 < v < 1` and `0 < m0 < v / 2`.
    pub fn new(v: f64, m0: f64) -> Result<Self> {
        check_v(v)?;
        if !(m0 > 0.0 && m0 < 0.5 * v) {
            return Err(domain(format!("m0 = {m0} must lie in (0, v/2) = (0, {})", 0.5 * v)));
        }
        Ok(Self { v, m0 })
    }

    /// Any pair for which a positive profile can exist: `0 < v < 1`, `0 < m0 <= 1 - v`.
    ///
    /// Covers the exponential family (`m0 = 1 - v`) and exploratory solves
    /// beyond the proven threshold. Nothing downstream is certified for these
    /// unless a residual test says so.
    pub fn relaxed(v: f64, m0: f64) -> Result<Self> {
        check_v(v)?;
        if !(m0 > 0.0 && m0 <= 1.0 - v) {
            return Err(domain(format!("m0 = {m0} must lie in (0, 1 - v] = (0, {}]", 1.0 - v)));
        }
        Ok(Self { v, m0 })
    }

    /// The exponential family member `m0 = 1 - v`.
    pub fn exponential(v: f64) -> Result<Self> {
        check_v(v)?;
        Ok(Self { v, m0: 1.0 - v })
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// `1 - v`, the coefficient of `z` in the drift and the grid grading rate.
    pub fn drift_rate(&self) -> f64 {
        1.0 - self.v
    }

    /// `2 - v - 2 m0`, the coefficient of the linear term.
    pub fn linear_coefficient(&self) -> f64 {
        2.0 - self.v - 2.0 * self.m0
    }

    /// `(2 - v) / (1 - v)`, the decay exponent of every fat-tail solution.
    pub fn tail_exponent(&self) -> f64 {
        tail_exponent(self.v)
    }

    /// `(2 - v - 2 m0) / (1 - v)`, the supersolution decay exponent.
    pub fn alpha(&self) -> f64 {
        self.linear_coefficient() / self.drift_rate()
    }

    /// Whether the pair lies in the existence regime `0 < m0 < v / 2`.
    pub fn is_standard(&self) -> bool {
        self.m0 < 0.5 * self.v
    }
}

fn check_v(v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("v = {v} must lie in (0, 1)")))
    }
}

pub fn tail_exponent(v: f64) -> f64 {
    (2.0 - v) / (1.0 - v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub tau_inf: f64,
    pub a_m0: f64,
    pub a_0: f64,
    pub b_m0: f64,
    pub sigma_star: f64,
    pub tau_star: f64,
    pub m0_bar: f64,
}

/// Computes the supersolution exponent, the barrier constant `tau_star` and
/// the threshold `m0_bar`.
///
/// `sigma_star` is the smallest `σ > 0` with `b_m0 · 2^(a_0 + σ) <= σ`.
pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants> {
    let (v, m0) = (params.v, params.m0);
    if !params.is_standard() {
        return Err(domain(format!("m0 = {m0} must lie in (0, v/2) for the barrier constants")));
    }
    let m0_bar = admissible_threshold(v)?;
    if m0 > m0_bar {
        return Err(Error::ThresholdExceeded { m0, m0_bar });
    }
    let a_0 = tail_exponent(v);
    let a_m0 = params.alpha();
    let b_m0 = 2.0 * m0 / (1.0 - v);
    let sigma_star = smallest_sigma(b_m0, a_0);
    Ok(DerivedConstants { alpha: a_m0, tau_inf: a_0, a_m0, a_0, b_m0, sigma_star, tau_star: a_0 + sigma_star, m0_bar })
}

// σ - b 2^(a + σ) is concave and increasing on [0, 1/ln 2] whenever a root
// exists there, so plain bisection brackets the smallest root.
fn smallest_sigma(b: f64, a: f64) -> f64 {
    let slack = |s: f64| s - b * (a + s).exp2();
    let (mut lo, mut hi) = (0.0_f64, 1.0 / LN_2);
    while hi - lo > SIGMA_TOL {
        let mid = 0.5 * (lo + hi);
        if slack(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `F_v(z) = (1 - v) v e^{-v z}`, the exponentially decaying solution with `m0 = 1 - v`.
pub fn exponential_profile(v: f64, z: f64) -> Result<f64> {
    check_v(v)?;
    if !(z >= 0.0) {
        return Err(domain(format!("z = {z} must be nonnegative")));
    }
    Ok((1.0 - v) * v * (-v * z).exp())
}

/// `F̄(z) = m0 (1 + (1 - v) z)^{-alpha}`.
pub fn supersolution_value(params: &ModelParams, z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(domain(format!("z = {z} must be nonnegative")));
    }
    Ok(params.m0 * (1.0 + params.drift_rate() * z).powf(-params.alpha()))
}

/// Largest `m0` for which the barrier constant exists:
/// `(1 - v) · max_σ(σ 2^{-σ}) / (2 · 2^{a_0})`, capped at `v / 2`.
pub fn admissible_threshold(v: f64) -> Result<f64> {
    check_v(v)?;
    let peak = 1.0 / (E * LN_2);
    let bound = (1.0 - v) * peak / (2.0 * tail_exponent(v).exp2());
    Ok(bound.min(0.5 * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_domain() {
        assert!(ModelParams::new(0.5, 0.01).is_ok());
        assert!(ModelParams::new(1.5, 0.01).is_err());
        assert!(ModelParams::new(0.5, 0.25).is_err());
        assert!(ModelParams::new(0.5, 0.0).is_err());
        assert!(ModelParams::relaxed(0.5, 0.4999).is_ok());
        assert!(ModelParams::relaxed(0.5, 0.6).is_err());
    }

    #[test]
    fn alpha_value() {
        let p = ModelParams::new(0.5, 0.01).unwrap();
        let c = derive_constants(&p).unwrap();
        assert!((c.alpha - 2.96).abs() < 1e-14);
        assert_eq!(c.alpha, c.a_m0);
        assert_eq!(c.a_0, 3.0);
        assert!((c.b_m0 - 0.04).abs() < 1e-15);
        assert!(c.tau_star >= c.a_0);
    }

    #[test]
    fn tau_star_satisfies_barrier() {
        let p = ModelParams::new(0.5, 0.01).unwrap();
        let c = derive_constants(&p).unwrap();
        assert!(c.b_m0 * c.tau_star.exp2() <= c.sigma_star);
        let below = c.sigma_star - 2.0 * SIGMA_TOL;
        assert!(c.b_m0 * (c.a_0 + below).exp2() > below);
        assert!((c.tau_star - 3.4316).abs() < 1e-4);
    }

    #[test]
    fn threshold_errors() {
        let p = ModelParams::new(0.5, 0.02).unwrap();
        match derive_constants(&p) {
            Err(Error::ThresholdExceeded { m0_bar, .. }) => assert!((m0_bar - 0.016585).abs() < 1e-6),
            other => panic!("expected threshold error, got {other:?}"),
        }
    }

    #[test]
    fn m0_at_threshold_accepted() {
        let m0_bar = admissible_threshold(0.5).unwrap();
        let p = ModelParams::new(0.5, m0_bar).unwrap();
        let c = derive_constants(&p).unwrap();
        assert!((c.sigma_star - 1.0 / LN_2).abs() < 1e-5);
    }

    #[test]
    fn exponential_values() {
        assert_eq!(exponential_profile(0.5, 0.0).unwrap(), 0.25);
        assert!(exponential_profile(0.5, -1.0).is_err());
        assert!(exponential_profile(1.0, 1.0).is_err());
    }

    #[test]
    fn supersolution_values() {
        let p = ModelParams::new(0.5, 0.01).unwrap();
        assert_eq!(supersolution_value(&p, 0.0).unwrap(), 0.01);
        let want = 0.01 * 2f64.powf(-2.96);
        assert!((supersolution_value(&p, 2.0).unwrap() - want).abs() < 1e-16);
        assert!((want - 1.285e-3).abs() < 1e-6);
    }

    #[test]
    fn supersolution_ode() {
        let p = ModelParams::new(0.4, 0.03).unwrap();
        let d = 1e-5;
        for &z in &[0.1, 1.0, 7.5, 120.0] {
            let f = |x| supersolution_value(&p, x).unwrap();
            let deriv = (f(z + d) - f(z - d)) / (2.0 * d);
            let lhs = -(p.drift_rate() * z + 1.0) * deriv;
            let rhs = p.linear_coefficient() * f(z);
            assert!((lhs - rhs).abs() <= 1e-8 * rhs, "z = {z}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn threshold_below_half_v_and_vanishing() {
        for i in 1..100 {
            let v = i as f64 / 100.0;
            assert!(admissible_threshold(v).unwrap() <= 0.5 * v);
        }
        assert!(admissible_threshold(0.999).unwrap() < 1e-200);
    }

    #[test]
    fn threshold_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 15..100 {
            let m = admissible_threshold(i as f64 / 100.0).unwrap();
            assert!(m < prev);
            prev = m;
        }
    }
}
