//! Finite-volume integration of the time-dependent model
//!
//! ```text
//! ∂t f + ∂x((x u - 1) f) = ∫_0^x f(x - y) f(y) dy - 2 f M0(f),   u = M0(f) / m1
//! ```
//!
//! on uniform cells with first-order upwind fluxes and explicit Euler steps.

use std::sync::Arc;

use log::warn;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::GridFunction;

/// Fraction of the first moment the domain must hold.
pub const CONTAINMENT: f64 = 0.999;

const NEGATIVE_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Convolution {
    #[default]
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolutionOptions {
    pub cfl: f64,
    pub convolution: Convolution,
    pub drift: bool,
    pub coagulation: bool,
    /// Hold `u` at this value instead of the mean-field closure.
    pub frozen_u: Option<f64>,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { cfl: 0.5, convolution: Convolution::Direct, drift: true, coagulation: true, frozen_u: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub u: f64,
    /// Number carried out through `x = 0` so far.
    pub outflow_left: f64,
    /// Number carried out through `x = Xmax` so far.
    pub outflow_right: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionState {
    dx: f64,
    f: Vec<f64>,
    t: f64,
    m1_target: f64,
    u: f64,
    outflow_left: f64,
    outflow_right: f64,
}

impl EvolutionState {
    /// A state from explicit cell averages on `[0, xmax]`.
    pub fn new(f: Vec<f64>, xmax: f64, t: f64, m1_target: f64) -> Result<Self> {
        if f.len() < 2 || !(xmax > 0.0) || !(t >= 0.0) {
            return Err(domain("need at least 2 cells, xmax > 0 and t >= 0"));
        }
        if let Some(i) = f.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(domain(format!("cell {i} is negative or not finite")));
        }
        if !(m1_target > 0.0 && m1_target.is_finite()) {
            return Err(domain("first moment must be positive; the zero state has no mean field"));
        }
        let dx = xmax / f.len() as f64;
        let mut s = Self { dx, f, t, m1_target, u: 0.0, outflow_left: 0.0, outflow_right: 0.0 };
        s.u = s.m0() / m1_target;
        Ok(s)
    }

    pub fn cells(&self) -> usize {
        self.f.len()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn xmax(&self) -> f64 {
        self.dx * self.f.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.f.len()).map(|k| k as f64 * self.dx).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn m1_target(&self) -> f64 {
        self.m1_target
    }

    pub fn m0(&self) -> f64 {
        self.dx * self.f.iter().sum::<f64>()
    }

    pub fn m1(&self) -> f64 {
        self.dx * self.f.iter().enumerate().map(|(i, v)| self.center(i) * v).sum::<f64>()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            t: self.t,
            m0: self.m0(),
            m1: self.m1(),
            u: self.u,
            outflow_left: self.outflow_left,
            outflow_right: self.outflow_right,
        }
    }

    /// `f` at `x` by linear interpolation between cell centers.
    pub fn value_at(&self, x: f64) -> f64 {
        let s = x / self.dx - 0.5;
        let n = self.f.len();
        let i = (s.floor().max(0.0) as usize).min(n - 2);
        let w = s - i as f64;
        (1.0 - w) * self.f[i] + w * self.f[i + 1]
    }
}

/// Cell values `t0^{-2} F(x_i / t0)` at the centers of `cells` cells on `[0, xmax]`.
///
/// `m1_target` is the first moment of the whole profile, analytic tail
/// included, so the closure keeps `u(t0) = M0 / M1 = v / t0` even when the
/// domain cuts the tail. A domain holding less than 99.9% of that moment
/// errors when `strict`, otherwise it only warns.
pub fn init_from_profile(f: &GridFunction, t0: f64, cells: usize, xmax: f64, strict: bool) -> Result<EvolutionState> {
    if !(t0 > 0.0) {
        return Err(domain(format!("t0 = {t0} must be positive")));
    }
    if cells < 2 || !(xmax > 0.0) {
        return Err(domain("need at least 2 cells and xmax > 0"));
    }
    let dx = xmax / cells as f64;
    let vals: Vec<f64> = (0..cells).map(|i| f.value_at((i as f64 + 0.5) * dx / t0) / (t0 * t0)).collect();
    let m1 = f.moment(1)?;
    let state = EvolutionState::new(vals, xmax, t0, m1)?;
    let fraction = state.m1() / m1;
    if fraction < CONTAINMENT {
        if strict {
            return Err(Error::Truncation { xmax, fraction });
        }
        warn!("xmax = {xmax} holds only {fraction:.6} of the first moment");
    }
    Ok(state)
}

/// Smallest cutoff `t0 · z_j` for which the profile's first moment up to
/// the node `z_j` reaches the containment fraction.
pub fn default_xmax(f: &GridFunction, t0: f64) -> Result<f64> {
    let total = f.moment(1)?;
    let grid = f.grid();
    let g: Vec<f64> = (0..grid.len()).map(|j| grid.nodes()[j] * f.values()[j] * grid.jacobian()[j]).collect();
    let mut acc = 0.0;
    for j in 1..grid.len() {
        acc += 0.5 * grid.step() * (g[j - 1] + g[j]);
        if acc >= CONTAINMENT * total {
            return Ok(t0 * grid.nodes()[j]);
        }
    }
    Err(Error::Truncation { xmax: t0 * grid.zmax(), fraction: acc / total })
}

/// Pair sums `c_n = Σ_{k+l=n} f_k f_l` for `n < f.len()`.
pub fn pair_sums_direct(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n).map(|m| (0..=m).map(|k| f[k] * f[m - k]).sum()).collect()
}

/// Zero-padded FFT evaluation of [`pair_sums_direct`].
pub struct FftConvolver {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl FftConvolver {
    pub fn new(cells: usize) -> Self {
        let len = (2 * cells).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            buf: vec![Complex::default(); len],
        }
    }

    pub fn pair_sums(&mut self, f: &[f64]) -> Vec<f64> {
        assert!(2 * f.len() <= self.len, "convolver planned for fewer cells");
        for (i, b) in self.buf.iter_mut().enumerate() {
            *b = Complex::new(f.get(i).copied().unwrap_or(0.0), 0.0);
        }
        self.forward.process(&mut self.buf);
        for b in self.buf.iter_mut() {
            *b = *b * *b;
        }
        self.inverse.process(&mut self.buf);
        let scale = 1.0 / self.len as f64;
        self.buf[..f.len()].iter().map(|c| (c.re * scale).max(0.0)).collect()
    }
}

impl std::fmt::Debug for FftConvolver {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("FftConvolver").field("len", &self.len).finish()
    }
}

#[derive(Debug)]
pub struct Simulator {
    state: EvolutionState,
    opts: EvolutionOptions,
    fft: Option<FftConvolver>,
    steps: usize,
}

impl Simulator {
    pub fn new(mut state: EvolutionState, opts: EvolutionOptions) -> Result<Self> {
        if !(opts.cfl > 0.0 && opts.cfl <= 1.0) {
            return Err(domain(format!("cfl = {} must lie in (0, 1]", opts.cfl)));
        }
        if let Some(u) = opts.frozen_u {
            state.u = u;
        }
        let fft = (opts.convolution == Convolution::Fft).then(|| FftConvolver::new(state.cells()));
        Ok(Self { state, opts, fft, steps: 0 })
    }

    pub fn state(&self) -> &EvolutionState {
        &self.state
    }

    pub fn into_state(self) -> EvolutionState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Largest step allowed by the transport CFL and loss-term conditions.
    pub fn max_step(&self) -> f64 {
        let s = &self.state;
        let mut bound = f64::INFINITY;
        if self.opts.drift {
            let speed = 1.0f64.max((s.xmax() * s.u - 1.0).abs());
            bound = bound.min(self.opts.cfl * s.dx / speed);
        }
        if self.opts.coagulation {
            let m0 = s.m0();
            if m0 > 0.0 {
                bound = bound.min(0.25 / m0);
            }
        }
        bound
    }

    /// One explicit step of length `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let bound = self.max_step();
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepSize { dt, bound });
        }
        let s = &self.state;
        let n = s.cells();
        let dx = s.dx;
        let mut next = s.f.clone();
        let (mut out_left, mut out_right) = (0.0, 0.0);

        if self.opts.drift {
            // flux[k] at x = k dx; no inflow through either end
            let mut flux = vec![0.0; n + 1];
            for (k, fl) in flux.iter_mut().enumerate() {
                let speed = k as f64 * dx * s.u - 1.0;
                *fl = if speed > 0.0 {
                    if k == 0 {
                        0.0
                    } else {
                        speed * s.f[k - 1]
                    }
                } else if k == n {
                    0.0
                } else {
                    speed * s.f[k]
                };
            }
            for i in 0..n {
                next[i] -= dt / dx * (flux[i + 1] - flux[i]);
            }
            out_left = -flux[0] * dt;
            out_right = flux[n] * dt;
        }

        if self.opts.coagulation {
            let c = match self.fft.as_mut() {
                Some(fft) => fft.pair_sums(&s.f),
                None => pair_sums_direct(&s.f),
            };
            let m0 = s.m0();
            for i in 0..n {
                let prev = if i == 0 { 0.0 } else { c[i - 1] };
                let gain = 0.5 * dx * (c[i] + prev);
                next[i] += dt * (gain - 2.0 * s.f[i] * m0);
            }
        }

        let peak = s.f.iter().copied().fold(0.0, f64::max);
        for (i, x) in next.iter_mut().enumerate() {
            if *x < 0.0 {
                if *x < -NEGATIVE_SLACK * peak {
                    return Err(Error::SchemeFailure { cell: i, value: *x });
                }
                *x = 0.0;
            }
        }

        let st = &mut self.state;
        st.f = next;
        st.t += dt;
        st.outflow_left += out_left;
        st.outflow_right += out_right;
        st.u = self.opts.frozen_u.unwrap_or_else(|| st.m0() / st.m1_target);
        self.steps += 1;
        Ok(())
    }

    /// Steps until `t_end`, with steps of `dt` (or the largest stable step) and
    /// a shortened last step landing exactly on `t_end`.
    pub fn advance_to(&mut self, t_end: f64, dt: Option<f64>) -> Result<()> {
        while self.state.t < t_end {
            let remaining = t_end - self.state.t;
            if remaining <= 1e-12 * t_end.abs().max(1.0) {
                self.state.t = t_end;
                break;
            }
            let h = dt.unwrap_or_else(|| self.max_step()).min(remaining);
            self.step(h)?;
        }
        Ok(())
    }
}

/// `sup_{z ∈ [0, z_cmp]} |t² f(t, t z) - F(z)|` over the profile nodes in the window.
pub fn self_similar_error(state: &EvolutionState, f: &GridFunction, z_cmp: f64) -> Result<f64> {
    let t = state.t();
    if !(t > 0.0) {
        return Err(domain("comparison needs t > 0"));
    }
    if !(z_cmp > 0.0) || t * z_cmp > state.xmax() {
        return Err(Error::Window { z_cmp, t, xmax: state.xmax() });
    }
    Ok(f.grid()
        .nodes()
        .iter()
        .zip(f.values())
        .take_while(|(&z, _)| z <= z_cmp)
        .map(|(&z, &fz)| (t * t * state.value_at(t * z) - fz).abs())
        .fold(0.0, f64::max))
}
