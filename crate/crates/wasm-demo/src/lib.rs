//! Browser bindings. Every exported function returns a JSON string so the page
//! needs nothing beyond `JSON.parse`.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use coagdrift_core::evolution::{init_from_profile, self_similar_error, Convolution, EvolutionOptions, Simulator};
use coagdrift_core::model::{admissible_threshold, derive_constants, exponential_profile, supersolution_value};
use coagdrift_core::profile::Check;
use coagdrift_core::{outer_solve, Error, Grid, GridFunction, ModelParams, OuterOptions, SolveReport};

const DEMO_ZMAX: f64 = 1e6;

#[derive(Debug, Serialize)]
pub struct ThresholdView {
    pub v: f64,
    pub tau_inf: f64,
    pub m0_bar: f64,
    pub m0: f64,
    pub admissible: bool,
    pub alpha: Option<f64>,
    pub sigma_star: Option<f64>,
    pub tau_star: Option<f64>,
}

pub fn threshold_view(v: f64, m0: f64) -> Result<ThresholdView, Error> {
    let m0_bar = admissible_threshold(v)?;
    let constants = ModelParams::new(v, m0).and_then(|p| derive_constants(&p)).ok();
    Ok(ThresholdView {
        v,
        tau_inf: coagdrift_core::model::tail_exponent(v),
        m0_bar,
        m0,
        admissible: constants.is_some(),
        alpha: constants.map(|c| c.alpha),
        sigma_star: constants.map(|c| c.sigma_star),
        tau_star: constants.map(|c| c.tau_star),
    })
}

#[derive(Debug, Serialize)]
pub struct ProfileView {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub tau: Vec<f64>,
    /// `m0 (1 + (1 - v) z)^{-alpha}`, empty outside the existence regime.
    pub supersolution: Vec<f64>,
    /// `m0 v e^{-v z}`, the exponential seed of the iteration.
    pub seed: Vec<f64>,
    pub report: SolveReport,
    pub checks: Vec<Check>,
}

fn demo_params(v: f64, m0: f64, force: bool) -> Result<(ModelParams, bool), Error> {
    if force {
        let p = ModelParams::relaxed(v, m0)?;
        let exploratory = derive_constants(&p).is_err();
        Ok((p, exploratory))
    } else {
        Ok((ModelParams::new(v, m0)?, false))
    }
}

pub fn profile_view(v: f64, m0: f64, nodes: usize, force: bool) -> Result<ProfileView, Error> {
    let (params, exploratory) = demo_params(v, m0, force)?;
    let opts = OuterOptions { zmax: DEMO_ZMAX, nodes: nodes.clamp(65, 2049), exploratory, ..OuterOptions::default() };
    let sol = match outer_solve(&params, &opts) {
        Ok(sol) => sol,
        Err(Error::OuterNonConvergence { best, .. }) => *best,
        Err(e) => return Err(e),
    };
    let z = sol.profile.grid().nodes().to_vec();
    let supersolution = if params.is_standard() {
        z.iter().map(|&x| supersolution_value(&params, x)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let seed = z.iter().map(|&x| m0 * v * (-v * x).exp()).collect();
    Ok(ProfileView {
        f: sol.profile.values().to_vec(),
        tau: sol.tau.values().to_vec(),
        z,
        supersolution,
        seed,
        report: sol.report,
        checks: sol.certificate.checks,
    })
}

#[derive(Debug, Serialize)]
pub struct EvolutionView {
    pub xmax: f64,
    pub cells: usize,
    pub x: Vec<f64>,
    /// Simulated `f(t1, x)`.
    pub f: Vec<f64>,
    /// Self-similar prediction `t1^{-2} F(x / t1)`.
    pub similarity: Vec<f64>,
    pub t: Vec<f64>,
    pub m1: Vec<f64>,
    pub u_t: Vec<f64>,
    pub error: Vec<f64>,
}

/// Evolves from `t = 1` to `t1`. `m0 = 1 - v` selects the exponential profile,
/// anything else a fat-tail solve on a coarse grid.
pub fn evolution_view(v: f64, m0: f64, cells: usize, t1: f64) -> Result<EvolutionView, Error> {
    if !(t1 > 1.0 && t1 <= 4.0) {
        return Err(Error::ParameterDomain(format!("t1 = {t1} must lie in (1, 4]")));
    }
    let exponential = (m0 - (1.0 - v)).abs() < 1e-12;
    let profile = if exponential {
        let p = ModelParams::exponential(v)?;
        let grid = Arc::new(Grid::build(40.0 / v, 1025, v)?);
        let vals = grid.nodes().iter().map(|&z| exponential_profile(v, z)).collect::<Result<_, _>>()?;
        GridFunction::new(grid, vals, p.tail_exponent())?
    } else {
        let params = ModelParams::new(v, m0)?;
        outer_solve(&params, &OuterOptions { nodes: 513, ..OuterOptions::default() })?.profile
    };
    let cells = cells.clamp(128, 4096);
    let xmax = 15.0 * t1 / v;
    let state = init_from_profile(&profile, 1.0, cells, xmax, false)?;
    let opts = EvolutionOptions { convolution: Convolution::Fft, ..EvolutionOptions::default() };
    let mut sim = Simulator::new(state, opts)?;
    let (mut t, mut m1, mut u_t, mut error) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let samples = 40;
    for k in 0..=samples {
        let target = 1.0 + (t1 - 1.0) * k as f64 / samples as f64;
        sim.advance_to(target, None)?;
        let s = sim.state();
        t.push(s.t());
        m1.push(s.m1());
        u_t.push(s.u() * s.t());
        error.push(self_similar_error(s, &profile, 10.0)?);
    }
    let s = sim.state();
    let x: Vec<f64> = (0..s.cells()).map(|i| s.center(i)).collect();
    let similarity = x.iter().map(|&xi| profile.value_at(xi / t1) / (t1 * t1)).collect();
    Ok(EvolutionView { xmax, cells, f: s.values().to_vec(), similarity, x, t, m1, u_t, error })
}

fn to_json<T: Serialize>(r: Result<T, Error>) -> Result<String, String> {
    r.map_err(|e| e.to_string()).and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
}

#[wasm_bindgen]
pub fn thresholds(v: f64, m0: f64) -> Result<String, String> {
    to_json(threshold_view(v, m0))
}

#[wasm_bindgen]
pub fn solve_profile(v: f64, m0: f64, nodes: usize, force: bool) -> Result<String, String> {
    to_json(profile_view(v, m0, nodes, force))
}

#[wasm_bindgen]
pub fn evolve(v: f64, m0: f64, cells: usize, t1: f64) -> Result<String, String> {
    to_json(evolution_view(v, m0, cells, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_json() {
        let s = thresholds(0.5, 0.01).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!((v["m0_bar"].as_f64().unwrap() - 0.016585).abs() < 1e-6);
        assert_eq!(v["admissible"], true);
        let v: serde_json::Value = serde_json::from_str(&thresholds(0.5, 0.02).unwrap()).unwrap();
        assert!(v["tau_star"].is_null());
        assert!(thresholds(2.0, 0.1).is_err());
    }

    #[test]
    fn profile_on_small_grid() {
        let view = profile_view(0.5, 0.005, 257, false).unwrap();
        assert_eq!(view.z.len(), 257);
        assert_eq!(view.supersolution.len(), 257);
        assert!(view.report.converged);
        assert!(view.f.iter().zip(&view.supersolution).all(|(f, s)| f <= s));
        assert!(profile_view(0.5, 0.02, 257, false).is_err());
    }

    #[test]
    fn forced_profile_has_no_supersolution() {
        let view = profile_view(0.5, 0.3, 129, true).unwrap();
        assert!(view.supersolution.is_empty());
        assert!(view.report.exploratory);
    }

    #[test]
    fn exponential_evolution_tracks_similarity() {
        let view = evolution_view(0.5, 0.5, 512, 2.0).unwrap();
        assert_eq!(view.x.len(), 512);
        assert!(view.u_t.iter().all(|u| (u / 0.5 - 1.0).abs() < 2e-2));
        let peak = view.similarity[0] * 4.0;
        assert!(view.error.iter().all(|e| *e < 2e-2 * peak));
        assert!(evolution_view(0.5, 0.5, 512, 0.5).is_err());
    }
}
