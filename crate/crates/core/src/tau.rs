//! The auxiliary problem in τ-form: the operator `H[G, τ]`, the monotone
//! iteration started at the constant barrier `tau_star`, and profile
//! reconstruction.
//!
//! For a fixed datum `G` with `M0(G) = m0`,
//!
//! ```text
//! H[G, τ](z) = z / ((1 - v) z + 1) · (2 - v - 2 m0 + h[G, τ](z))
//! h[G, τ](z) = 2 ∫_0^{z/2} G(y) exp(∫_{z-y}^z τ(s)/s ds) dy
//! ```
//!
//! `H` is positive and order preserving, and `H[G, tau_star] <= tau_star`, so
//! the iterates decrease monotonically to the fixed point.

use log::warn;

use crate::error::{domain, Error, Result};
use crate::grid::{half_range_trapezoid, GridFunction, TauFunction};
use crate::model::{derive_constants, ModelParams};

/// Absolute slack for monotonicity checks, as a multiple of the cap.
pub const MONOTONE_SLACK: f64 = 1e-13;

/// Allowed relative mismatch between `M0(G)` and `m0`.
const MASS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct InnerSolveOptions {
    /// Sup-norm bound on `τ_{i+1} - τ_i` at the nodes.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from `2 tau_inf` and clamp there instead of requiring `tau_star`.
    pub exploratory: bool,
}

impl Default for InnerSolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, exploratory: false }
    }
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub tau: TauFunction,
    pub iterations: usize,
    /// Last sup-norm update.
    pub update: f64,
    /// Upper barrier the iteration started from.
    pub cap: f64,
    /// False when a monotonicity or cap violation was downgraded to a warning.
    pub monotone: bool,
}

fn check_datum(g: &GridFunction) -> Result<()> {
    if let Some(j) = g.values().iter().position(|&x| x < 0.0) {
        return Err(domain(format!("datum G is negative at node {j}")));
    }
    Ok(())
}

/// Evaluates `h` at every node with `exp(∫_x^{z_j} τ/s)` supplied by `factor(j, x)`.
fn h_sweep(g: &GridFunction, factor: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let grid = g.grid();
    let gv = g.values();
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            if j == 0 {
                return 0.0;
            }
            2.0 * half_range_trapezoid(grid, z, |y, node| {
                let gy = match node {
                    Some(k) => gv[k],
                    None => g.value_at(y),
                };
                gy * factor(j, z - y)
            })
        })
        .collect()
}

fn assemble(g: &GridFunction, params: &ModelParams, h: &[f64]) -> Result<TauFunction> {
    let grid = g.grid();
    let lin = params.linear_coefficient();
    let rate = params.drift_rate();
    let values = grid.nodes().iter().zip(h).map(|(&z, &hz)| z / (rate * z + 1.0) * (lin + hz)).collect();
    TauFunction::new(grid.clone(), values, lin, params.tail_exponent(), None)
}

/// `h[G, τ]` at the nodes.
pub fn h_operator(g: &GridFunction, tau: &TauFunction, _params: &ModelParams) -> Result<Vec<f64>> {
    if !g.grid().same_as(tau.grid()) {
        return Err(Error::GridMismatch);
    }
    check_datum(g)?;
    let cum = tau.cumulative();
    let grid = g.grid();
    Ok(h_sweep(g, |j, x| {
        let (m, t) = grid.locate(x);
        (cum[j] - tau.cumulative_in_cell(m, t)).exp()
    }))
}

/// `H[G, τ]` at the nodes; `H(0) = 0` and the output slope at the origin is `2 - v - 2 m0`.
pub fn apply_h(g: &GridFunction, tau: &TauFunction, params: &ModelParams) -> Result<TauFunction> {
    let h = h_operator(g, tau, params)?;
    assemble(g, params, &h)
}

/// `h[G, c]` for the constant function `τ ≡ c`, where the exponential factor is `(z / (z - y))^c`.
pub fn h_operator_constant(g: &GridFunction, c: f64) -> Result<Vec<f64>> {
    check_datum(g)?;
    let nodes = g.grid().nodes();
    Ok(h_sweep(g, |j, x| (nodes[j] / x).powf(c)))
}

/// `H[G, c]` for the constant function `τ ≡ c`.
pub fn apply_h_constant(g: &GridFunction, c: f64, params: &ModelParams) -> Result<TauFunction> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(domain(format!("constant tau = {c} must be finite and nonnegative")));
    }
    let h = h_operator_constant(g, c)?;
    assemble(g, params, &h)
}

pub fn inner_solve(g: &GridFunction, params: &ModelParams, opts: &InnerSolveOptions) -> Result<InnerSolution> {
    inner_solve_observed(g, params, opts, |_, _| {})
}

/// Monotone iteration `τ_0 = tau_star`, `τ_{i+1} = H[G, τ_i]`, reporting every
/// iterate to `observer`.
pub fn inner_solve_observed(
    g: &GridFunction,
    params: &ModelParams,
    opts: &InnerSolveOptions,
    mut observer: impl FnMut(usize, &TauFunction),
) -> Result<InnerSolution> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(domain("inner tolerance must be positive and max_iter at least 1"));
    }
    let m0 = params.m0();
    let mass = g.moment(0)?;
    if (mass - m0).abs() > MASS_TOL * m0 {
        return Err(domain(format!("datum mass {mass} differs from m0 = {m0}")));
    }
    let (cap, strict) = match derive_constants(params) {
        Ok(c) => (c.tau_star, true),
        Err(_) if opts.exploratory => (2.0 * params.tail_exponent(), false),
        Err(e) => return Err(e),
    };
    let slack = MONOTONE_SLACK * cap;
    let mut monotone = true;

    let mut prev_values = vec![cap; g.grid().len()];
    prev_values[0] = 0.0;
    let mut next = apply_h_constant(g, cap, params)?;
    let mut iterations = 1;
    loop {
        let mut values = next.values().to_vec();
        let mut update = 0.0_f64;
        for (j, (x, &prev)) in values.iter_mut().zip(&prev_values).enumerate() {
            if *x > prev + slack || *x > cap + slack {
                let detail = format!("iterate {iterations} rose from {prev} to {x} (cap {cap})");
                if strict {
                    return Err(Error::NumericalConsistency { node: j, detail });
                }
                if monotone {
                    warn!("exploratory solve: node {j}: {detail}");
                }
                monotone = false;
            }
            *x = x.clamp(0.0, cap);
            update = update.max((*x - prev).abs());
        }
        let tau = TauFunction::new(g.grid().clone(), values, next.slope0(), next.limit_inf(), Some(cap))?;
        observer(iterations, &tau);
        if update <= opts.tol {
            return Ok(InnerSolution { tau, iterations, update, cap, monotone });
        }
        if iterations >= opts.max_iter {
            return Err(Error::InnerNonConvergence { iterations, residual: update, last: Box::new(tau) });
        }
        next = apply_h(g, &tau, params)?;
        prev_values = tau.values().to_vec();
        iterations += 1;
    }
}

/// `F(z) = F(0) exp(-∫_0^z τ(s)/s ds)`, scaled so that `M0(F) = m0`; the
/// tail exponent is `τ`'s limit at infinity.
pub fn reconstruct_profile(tau: &TauFunction, params: &ModelParams) -> Result<GridFunction> {
    let p = tau.limit_inf();
    if !(p > 1.0) {
        return Err(Error::DivergentNormalization(p));
    }
    let shape: Vec<f64> = tau.cumulative().iter().map(|i| (-i).exp()).collect();
    let shape = GridFunction::new(tau.grid().clone(), shape, p)?;
    let mass = shape.moment(0)?;
    shape.scaled(params.m0() / mass)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::Grid;
    use crate::model::exponential_profile;

    fn seed(v: f64, m0: f64, zmax: f64, n: usize) -> GridFunction {
        let grid = Arc::new(Grid::build(zmax, n, v).unwrap());
        let g = GridFunction::from_fn(grid, 3.0, |z| m0 * v * (-v * z).exp()).unwrap();
        let mass = g.moment(0).unwrap();
        g.scaled(m0 / mass).unwrap()
    }

    #[test]
    fn reconstruct_exponential() {
        let v = 0.5;
        let params = ModelParams::relaxed(v, 0.4).unwrap();
        let grid = Arc::new(Grid::build(150.0, 2049, v).unwrap());
        let vals = grid.nodes().iter().map(|z| v * z).collect();
        let tau = TauFunction::new(grid.clone(), vals, v, 3.0, None).unwrap();
        let f = reconstruct_profile(&tau, &params).unwrap();
        for (&z, &fz) in grid.nodes().iter().zip(f.values()).step_by(50) {
            let exact = 0.4 / (1.0 - v) * exponential_profile(v, z).unwrap();
            assert!((fz - exact).abs() <= 1e-6 * (1.0 + z) * exact, "z = {z}: {fz} vs {exact}");
        }
    }

    #[test]
    fn divergent_normalization() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let grid = Arc::new(Grid::build(100.0, 33, 0.5).unwrap());
        let tau = TauFunction::new(grid, vec![0.5; 33], 0.0, 0.9, None).unwrap();
        assert!(matches!(reconstruct_profile(&tau, &params), Err(Error::DivergentNormalization(_))));
    }

    #[test]
    fn h_positive_and_monotone() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let g = seed(0.5, 0.01, 1e4, 257);
        let grid = g.grid().clone();
        let low: Vec<f64> = grid.nodes().iter().map(|z| 2.0 * z / (1.0 + z)).collect();
        let high: Vec<f64> = grid.nodes().iter().map(|z| 3.2 * z / (0.5 + z)).collect();
        let t1 = TauFunction::new(grid.clone(), low, 2.0, 3.0, None).unwrap();
        let t2 = TauFunction::new(grid.clone(), high, 6.4, 3.0, None).unwrap();
        let h1 = apply_h(&g, &t1, &params).unwrap();
        let h2 = apply_h(&g, &t2, &params).unwrap();
        assert_eq!(h1.values()[0], 0.0);
        for (a, b) in h1.values().iter().zip(h2.values()) {
            assert!(*a >= 0.0 && a <= b);
        }
    }

    #[test]
    fn h_limit_at_infinity() {
        let (v, m0) = (0.5, 0.01);
        let params = ModelParams::new(v, m0).unwrap();
        let g = seed(v, m0, 1e6, 1025);
        let grid = g.grid().clone();
        let vals = grid.nodes().iter().map(|z| 3.0 * z / (1.0 + z)).collect();
        let tau = TauFunction::new(grid.clone(), vals, 3.0, 3.0, None).unwrap();
        let h = h_operator(&g, &tau, &params).unwrap();
        let out = apply_h(&g, &tau, &params).unwrap();
        let n = grid.len() - 1;
        assert!((h[n] - 2.0 * m0).abs() < 1e-5);
        assert!((out.values()[n] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn barrier_and_h_bound() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let c = derive_constants(&params).unwrap();
        let g = seed(0.5, 0.01, 1e5, 513);
        let h = h_operator_constant(&g, c.tau_star).unwrap();
        let out = apply_h_constant(&g, c.tau_star, &params).unwrap();
        let bound = 2.0 * 0.01 * c.tau_star.exp2();
        for (hz, tz) in h.iter().zip(out.values()) {
            assert!(*hz <= bound && *tz <= c.tau_star);
        }
    }

    #[test]
    fn inner_solve_monotone_and_bounded() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let g = seed(0.5, 0.01, 1e5, 513);
        let mut prev: Option<Vec<f64>> = None;
        let sol = inner_solve_observed(&g, &params, &InnerSolveOptions::default(), |_, t| {
            if let Some(p) = &prev {
                assert!(t.values().iter().zip(p).all(|(a, b)| *a <= b + 1e-13 * 3.5));
            }
            prev = Some(t.values().to_vec());
        })
        .unwrap();
        assert!(sol.monotone && sol.update <= 1e-10);
        assert!(sol.tau.values().iter().all(|&x| (0.0..=sol.cap).contains(&x)));
        let f = reconstruct_profile(&sol.tau, &params).unwrap();
        let f0 = f.values()[0];
        assert!((0.01 - 2.0 * 1e-4..=0.01).contains(&f0));
        assert!(f.is_nonincreasing());
    }

    #[test]
    fn inner_solve_rejects_wrong_mass_and_threshold() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let g = seed(0.5, 0.02, 1e4, 129);
        assert!(inner_solve(&g, &params, &InnerSolveOptions::default()).is_err());
        let params = ModelParams::new(0.5, 0.02).unwrap();
        assert!(matches!(
            inner_solve(&g, &params, &InnerSolveOptions::default()),
            Err(Error::ThresholdExceeded { .. })
        ));
    }

    #[test]
    fn inner_solve_iteration_cap() {
        let params = ModelParams::new(0.5, 0.01).unwrap();
        let g = seed(0.5, 0.01, 1e4, 129);
        let opts = InnerSolveOptions { tol: 1e-14, max_iter: 2, exploratory: false };
        assert!(matches!(inner_solve(&g, &params, &opts), Err(Error::InnerNonConvergence { iterations: 2, .. })));
    }
}
