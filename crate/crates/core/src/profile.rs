//! Outer fixed-point loop `G ↦ S[G]` over the auxiliary problem, plus the
//! certification tools: model residual, moments and tail-exponent fit.

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{half_convolution, Grid, GridFunction, TauFunction};
use crate::model::{derive_constants, supersolution_value, ModelParams};
use crate::tau::{inner_solve, reconstruct_profile, InnerSolution, InnerSolveOptions};

/// Fits with a larger log-deviation are flagged as not power-law.
pub const POWER_LAW_DEVIATION: f64 = 1e-2;

/// Damping is halved at most this many times.
const MAX_HALVINGS: u32 = 4;

#[derive(Debug, Clone, Copy)]
pub struct OuterOptions {
    pub zmax: f64,
    pub nodes: usize,
    pub inner: InnerSolveOptions,
    /// Bound on the weighted sup-norm of `G_{k+1} - G_k`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping `θ ∈ (0, 1]`.
    pub damping: f64,
    pub certification: Tolerances,
    /// Allow `m0 > m0_bar`; outputs are uncertified unless the residual passes.
    pub exploratory: bool,
    /// Decades below `zmax` used by the tail fit.
    pub fit_decades: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            zmax: 1e6,
            nodes: 2049,
            inner: InnerSolveOptions::default(),
            tol: 1e-9,
            max_iter: 200,
            damping: 1.0,
            certification: Tolerances::default(),
            exploratory: false,
            fit_decades: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub fp_residual: f64,
    pub model_residual_norm: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    #[serde(rename = "M0")]
    pub mass: f64,
    #[serde(rename = "M1")]
    pub first_moment: f64,
    pub tail_exponent_fit: f64,
    pub tail_fit_deviation: f64,
    pub tail_prefactor: f64,
    pub v_effective: f64,
    pub damping: f64,
    pub converged: bool,
    /// False when the inner iteration downgraded a monotonicity violation to a warning.
    pub monotone: bool,
    pub certified: bool,
    pub exploratory: bool,
}

#[derive(Debug, Clone)]
pub struct ProfileSolution {
    pub params: ModelParams,
    pub profile: GridFunction,
    pub tau: TauFunction,
    pub report: SolveReport,
    pub certificate: Certificate,
}

#[derive(Debug, Clone)]
pub struct AuxiliarySolution {
    pub profile: GridFunction,
    pub inner: InnerSolution,
}

/// `S[G]`: the solution of the auxiliary problem with datum `G`.
pub fn auxiliary_solve(g: &GridFunction, params: &ModelParams, opts: &InnerSolveOptions) -> Result<AuxiliarySolution> {
    let inner = inner_solve(g, params, opts)?;
    let profile = reconstruct_profile(&inner.tau, params)?;
    Ok(AuxiliarySolution { profile, inner })
}

/// The seed `m0 v e^{-v z}` renormalized so its discrete mass is exactly `m0`.
pub fn exponential_seed(grid: Arc<Grid>, params: &ModelParams) -> Result<GridFunction> {
    let (v, m0) = (params.v(), params.m0());
    let g = GridFunction::from_fn(grid, params.tail_exponent(), |z| m0 * v * (-v * z).exp())?;
    let mass = g.moment(0)?;
    g.scaled(m0 / mass)
}

/// `sup_j |x_j| (1 + z_j)^p`.
pub fn weighted_sup(grid: &Grid, values: &[f64], p: f64) -> f64 {
    grid.nodes().iter().zip(values).map(|(z, x)| x.abs() * (1.0 + z).powf(p)).fold(0.0, f64::max)
}

fn outer_weight(params: &ModelParams) -> f64 {
    params.tail_exponent() - 0.5
}

/// Damped Picard iteration `G_{k+1} = (1 - θ) G_k + θ S[G_k]` from the exponential seed.
pub fn outer_solve(params: &ModelParams, opts: &OuterOptions) -> Result<ProfileSolution> {
    if !opts.exploratory {
        derive_constants(params)?;
    }
    if opts.nodes < 8 {
        return Err(domain(format!("solver grid needs at least 8 nodes, got {}", opts.nodes)));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(domain("damping must lie in (0, 1], tol > 0, max_iter >= 1"));
    }
    let inner_opts = InnerSolveOptions { exploratory: opts.exploratory, ..opts.inner };
    let grid = Arc::new(Grid::build(opts.zmax, opts.nodes, params.v())?);
    let weight = outer_weight(params);
    let mut g = exponential_seed(grid.clone(), params)?;
    let mut theta = opts.damping;
    let mut halvings = 0;
    let mut prev_norm = f64::INFINITY;
    let mut inner_total = 0;
    let mut best: Option<(f64, AuxiliarySolution, usize)> = None;
    let mut monotone = true;

    for k in 1..=opts.max_iter {
        let aux = match auxiliary_solve(&g, params, &inner_opts) {
            Ok(aux) => aux,
            Err(e) => {
                return Err(match best {
                    Some((norm, aux, its)) if opts.exploratory => {
                        warn!("inner solve failed at outer step {k}: {e}");
                        let sol = finish(params, opts, aux, its, inner_total, norm, theta, false, monotone)?;
                        Error::OuterNonConvergence { iterations: k, residual: norm, best: Box::new(sol) }
                    }
                    _ => e,
                })
            }
        };
        inner_total += aux.inner.iterations;
        monotone &= aux.inner.monotone;
        let next: Vec<f64> =
            g.values().iter().zip(aux.profile.values()).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        let diff: Vec<f64> = next.iter().zip(g.values()).map(|(a, b)| a - b).collect();
        let norm = weighted_sup(&grid, &diff, weight);
        debug!("outer step {k}: update {norm:e}, damping {theta}, inner sweeps {}", aux.inner.iterations);

        if norm <= opts.tol {
            return finish(params, opts, aux, k, inner_total, norm, theta, true, monotone);
        }
        if norm > prev_norm && halvings < MAX_HALVINGS {
            theta *= 0.5;
            halvings += 1;
            debug!("update grew, damping halved to {theta}");
        }
        prev_norm = norm;
        if best.as_ref().is_none_or(|b| norm < b.0) {
            best = Some((norm, aux, k));
        }
        g = GridFunction::new(grid.clone(), next, params.tail_exponent())?;
    }
    let (norm, aux, its) = best.expect("at least one outer step ran");
    let sol = finish(params, opts, aux, its, inner_total, norm, theta, false, monotone)?;
    Err(Error::OuterNonConvergence { iterations: opts.max_iter, residual: norm, best: Box::new(sol) })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    params: &ModelParams,
    opts: &OuterOptions,
    aux: AuxiliarySolution,
    outer_iterations: usize,
    inner_total: usize,
    fp_residual: f64,
    damping: f64,
    converged: bool,
    monotone: bool,
) -> Result<ProfileSolution> {
    let profile = aux.profile;
    let cert = certify(&profile, params, &opts.certification, opts.fit_decades)?;
    let fit = cert.fit;
    let mass = profile.moment(0)?;
    let first_moment = profile.moment(1)?;
    let converged = converged && fp_residual <= opts.tol;
    let report = SolveReport {
        outer_iterations,
        inner_iterations_total: inner_total,
        fp_residual,
        model_residual_norm: cert.residual_norm,
        f0: profile.values()[0],
        mass,
        first_moment,
        tail_exponent_fit: fit.exponent,
        tail_fit_deviation: fit.max_deviation,
        tail_prefactor: fit.prefactor,
        v_effective: mass / first_moment,
        damping,
        converged,
        monotone,
        certified: converged && monotone && cert.passed(),
        exploratory: opts.exploratory,
    };
    Ok(ProfileSolution { params: *params, profile, tau: aux.inner.tau, report, certificate: cert })
}

/// `d ln F / dξ` at the nodes by fourth-order differences on the uniform `ξ` grid.
fn log_slope(grid: &Grid, logs: &[f64]) -> Vec<f64> {
    let n = logs.len();
    let s = 12.0 * grid.step();
    let l = |i: usize| logs[i];
    (0..n)
        .map(|j| match j {
            0 => (-25.0 * l(0) + 48.0 * l(1) - 36.0 * l(2) + 16.0 * l(3) - 3.0 * l(4)) / s,
            1 => (-3.0 * l(0) - 10.0 * l(1) + 18.0 * l(2) - 6.0 * l(3) + l(4)) / s,
            j if j == n - 2 => (3.0 * l(n - 1) + 10.0 * l(n - 2) - 18.0 * l(n - 3) + 6.0 * l(n - 4) - l(n - 5)) / s,
            j if j == n - 1 => {
                (25.0 * l(n - 1) - 48.0 * l(n - 2) + 36.0 * l(n - 3) - 16.0 * l(n - 4) + 3.0 * l(n - 5)) / s
            }
            j => (l(j - 2) - 8.0 * l(j - 1) + 8.0 * l(j + 1) - l(j + 2)) / s,
        })
        .collect()
}

/// `τ_F = -z F'/F` recovered from the samples alone.
pub fn recover_tau(f: &GridFunction) -> Result<Vec<f64>> {
    let grid = f.grid();
    if grid.len() < 5 {
        return Err(domain("log-derivative needs at least 5 nodes"));
    }
    if let Some(j) = f.values().iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ResidualUndefined(j));
    }
    let logs: Vec<f64> = f.values().iter().map(|x| x.ln()).collect();
    let rate = grid.rate();
    Ok(log_slope(grid, &logs).iter().zip(grid.nodes()).map(|(d, &z)| -d * rate * z / (1.0 + rate * z)).collect())
}

/// Residual of the profile equation at the nodes,
/// `((1 - v) z + 1) τ_F F / z - (2 - v - 2 m0) F - ∫_0^z F(z - y) F(y) dy`,
/// with `τ_F` from the log-derivative of the samples (the first term equals
/// `-(1 - v) F · d ln F / dξ`, so `z = 0` needs no special case).
pub fn residual_selfsimilar(f: &GridFunction, params: &ModelParams) -> Result<GridFunction> {
    let grid = f.grid();
    if grid.len() < 5 {
        return Err(domain("residual needs at least 5 nodes"));
    }
    if let Some(j) = f.values().iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ResidualUndefined(j));
    }
    let logs: Vec<f64> = f.values().iter().map(|x| x.ln()).collect();
    let slope = log_slope(grid, &logs);
    let rate = params.drift_rate();
    let lin = params.linear_coefficient();
    let values = grid
        .nodes()
        .iter()
        .zip(f.values())
        .zip(&slope)
        .map(|((&z, &fz), &d)| Ok(-rate * fz * d - lin * fz - half_convolution(f, f, z)?))
        .collect::<Result<Vec<f64>>>()?;
    GridFunction::new(grid.clone(), values, f.tail_exponent())
}

/// Acceptance bounds for a computed profile. All but `residual` are relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Weighted sup-norm of the model residual.
    pub residual: f64,
    pub mass: f64,
    /// `F(0)` against `m0 (1 - m0)`.
    pub f0: f64,
    /// `M1` against `m0 / v`.
    pub first_moment: f64,
    /// Fitted tail exponent against `(2 - v) / (1 - v)`.
    pub tail: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { residual: 1e-6, mass: 1e-9, f0: 1e-5, first_moment: 5e-3, tail: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub residual_norm: f64,
    pub fit: TailFit,
    pub checks: Vec<Check>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn relative_check(name: &'static str, value: f64, target: f64, tolerance: f64) -> Check {
    let err = (value - target).abs() / target.abs();
    Check { name, value, target, tolerance, pass: err <= tolerance, note: format!("relative error {err:.3e}") }
}

/// Recomputes residual, moments, `F(0)`, tail exponent, monotonicity and the
/// supersolution bound from the samples alone.
pub fn certify(f: &GridFunction, params: &ModelParams, tol: &Tolerances, fit_decades: f64) -> Result<Certificate> {
    let grid = f.grid();
    let (v, m0) = (params.v(), params.m0());
    let tau_inf = params.tail_exponent();
    let residual = residual_selfsimilar(f, params)?;
    let residual_norm = weighted_sup(grid, residual.values(), tau_inf);
    let fit = tail_exponent_fit(f, fit_decades)?;
    let mut checks = vec![
        Check {
            name: "residual",
            value: residual_norm,
            target: 0.0,
            tolerance: tol.residual,
            pass: residual_norm <= tol.residual,
            note: "weighted sup-norm".into(),
        },
        relative_check("M0", f.moment(0)?, m0, tol.mass),
        relative_check("F0", f.values()[0], m0 * (1.0 - m0), tol.f0),
        relative_check("M1", f.moment(1)?, m0 / v, tol.first_moment),
    ];
    let mut tail = relative_check("tail_exponent", fit.exponent, tau_inf, tol.tail);
    if !fit.power_law {
        tail.pass = false;
        tail.note = format!("non-power-law tail (log deviation {:.3e})", fit.max_deviation);
    }
    checks.push(tail);
    let monotone = f.is_nonnegative() && f.is_nonincreasing();
    checks.push(Check {
        name: "monotone",
        value: f64::from(u8::from(monotone)),
        target: 1.0,
        tolerance: 0.0,
        pass: monotone,
        note: "nonnegative and non-increasing".into(),
    });
    if params.is_standard() {
        let excess = grid
            .nodes()
            .iter()
            .zip(f.values())
            .map(|(&z, &fz)| Ok(fz / supersolution_value(params, z)? - 1.0))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: "supersolution",
            value: excess,
            target: 0.0,
            tolerance: 1e-12,
            pass: excess <= 1e-12,
            note: "max of F / F_bar - 1".into(),
        });
    }
    Ok(Certificate { residual_norm, fit, checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    /// Fitted `p̂` in `F ≈ c z^{-p̂}`.
    pub exponent: f64,
    pub prefactor: f64,
    /// Largest `|ln F - fit|` over the window.
    pub max_deviation: f64,
    pub power_law: bool,
    pub points: usize,
}

/// Least-squares slope of `ln F` against `ln z` over `[zmax 10^{-decades}, zmax]`.
pub fn tail_exponent_fit(f: &GridFunction, decades: f64) -> Result<TailFit> {
    let grid = f.grid();
    let lo = grid.zmax() * 10f64.powf(-decades);
    let pts: Vec<(f64, f64)> = grid
        .nodes()
        .iter()
        .zip(f.values())
        .filter(|(&z, _)| z > 0.0 && z >= lo)
        .map(|(&z, &fz)| {
            if fz > 0.0 {
                Ok((z.ln(), fz.ln()))
            } else {
                Err(domain(format!("profile vanishes at z = {z} inside the fit window")))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 4 {
        return Err(Error::FitWindow(pts.len()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_deviation = pts.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(TailFit {
        exponent: -slope,
        prefactor: intercept.exp(),
        max_deviation,
        power_law: max_deviation <= POWER_LAW_DEVIATION,
        points: pts.len(),
    })
}
