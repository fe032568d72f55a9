use thiserror::Error;

use crate::grid::TauFunction;
use crate::profile::ProfileSolution;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("m0 = {m0} exceeds the admissible threshold m0_bar = {m0_bar}")]
    ThresholdExceeded { m0: f64, m0_bar: f64 },

    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("moment of order {order} diverges for tail exponent {exponent}")]
    DivergentMoment { order: u32, exponent: f64 },

    #[error("profile normalization diverges: tail exponent {0} must exceed 1")]
    DivergentNormalization(f64),

    #[error("inner iteration did not converge after {iterations} sweeps (last update {residual:e})")]
    InnerNonConvergence { iterations: usize, residual: f64, last: Box<TauFunction> },

    #[error("outer iteration did not converge after {iterations} steps (last update {residual:e})")]
    OuterNonConvergence { iterations: usize, residual: f64, best: Box<ProfileSolution> },

    #[error("numerical consistency violated at node {node}: {detail}")]
    NumericalConsistency { node: usize, detail: String },

    #[error("residual undefined at node {0}: profile sample is not positive")]
    ResidualUndefined(usize),

    #[error("tail fit window holds {0} nodes, need at least 4")]
    FitWindow(usize),

    #[error("time step {dt:e} violates the stability bound {bound:e}")]
    StepSize { dt: f64, bound: f64 },

    #[error("scheme failure: cell {cell} went negative ({value:e})")]
    SchemeFailure { cell: usize, value: f64 },

    #[error("comparison window [0, {z_cmp}] at t = {t} exceeds the simulated domain {xmax}")]
    Window { z_cmp: f64, t: f64, xmax: f64 },

    #[error("domain cutoff {xmax} holds only {fraction:.6} of the first moment")]
    Truncation { xmax: f64, fraction: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::ParameterDomain(msg.into())
}
