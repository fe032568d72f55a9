//! Graded semi-infinite grids, profiles with an algebraic tail closure,
//! quadrature, half-range convolution and the logarithmic integral of τ.
//!
//! Nodes are uniform in `ξ = ln(1 + (1 - v) z)`, the variable in which the
//! supersolution is a pure exponential. Integrals over the whole grid use the
//! trapezoid rule in `ξ` with Gregory end corrections; partial-range
//! integrals (convolutions) use the trapezoid rule in `z` over the nodes they
//! contain.

use std::sync::Arc;

use crate::error::{domain, Error, Result};

/// Smallest grid `build` accepts (both endpoints).
pub const MIN_NODES: usize = 2;

/// Relative tolerance when checking that imported nodes are uniform in `ξ`.
const GRADING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    xi: Vec<f64>,
    jac: Vec<f64>,
    rate: f64,
    step: f64,
}

impl Grid {
    /// Nodes uniform in `ln(1 + (1 - v) z)` from `0` to `zmax`.
    pub fn build(zmax: f64, n: usize, v: f64) -> Result<Self> {
        if !(zmax > 0.0 && zmax.is_finite()) {
            return Err(domain(format!("zmax = {zmax} must be positive and finite")));
        }
        if n < MIN_NODES {
            return Err(domain(format!("grid needs at least {MIN_NODES} nodes, got {n}")));
        }
        if !(v > 0.0 && v < 1.0) {
            return Err(domain(format!("v = {v} must lie in (0, 1)")));
        }
        let rate = 1.0 - v;
        let xi_max = (rate * zmax).ln_1p();
        let last = (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|j| (xi_max * j as f64 / last).exp_m1() / rate).collect();
        nodes[0] = 0.0;
        nodes[n - 1] = zmax;
        Self::from_parts(nodes, rate)
    }

    /// Rebuilds a grid from stored nodes, checking the grading.
    pub fn from_nodes(nodes: Vec<f64>, v: f64) -> Result<Self> {
        if !(v > 0.0 && v < 1.0) {
            return Err(domain(format!("v = {v} must lie in (0, 1)")));
        }
        if nodes.len() < MIN_NODES {
            return Err(domain(format!("grid needs at least {MIN_NODES} nodes, got {}", nodes.len())));
        }
        if nodes[0] != 0.0 {
            return Err(domain("first node must be 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes[nodes.len() - 1].is_finite() {
            return Err(domain("nodes must be finite and strictly increasing"));
        }
        let grid = Self::from_parts(nodes, 1.0 - v)?;
        let h = grid.step;
        for (j, &x) in grid.xi.iter().enumerate() {
            if (x - h * j as f64).abs() > GRADING_TOL * grid.xi[grid.len() - 1].max(1.0) {
                return Err(domain(format!("node {j} is not on the graded grid for v = {v}")));
            }
        }
        Ok(grid)
    }

    fn from_parts(nodes: Vec<f64>, rate: f64) -> Result<Self> {
        let xi: Vec<f64> = nodes.iter().map(|&z| (rate * z).ln_1p()).collect();
        if xi.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("grid too fine to resolve in floating point"));
        }
        let jac = nodes.iter().map(|&z| (1.0 + rate * z) / rate).collect();
        let step = xi[xi.len() - 1] / (xi.len() - 1) as f64;
        Ok(Self { nodes, xi, jac, rate, step })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn zmax(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Grading rate `1 - v`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Uniform spacing in `ξ`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// `dz/dξ` at the nodes.
    pub fn jacobian(&self) -> &[f64] {
        &self.jac
    }

    /// Cell index `m` and fraction `t ∈ [0, 1]` in `ξ` with `z_m <= x <= z_{m+1}`.
    /// Exact nodes come back as `(j, 0)` (or `(N - 2, 1)` for the last node).
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        let xi = (self.rate * x).ln_1p();
        let mut m = ((xi / self.step) as usize).min(n - 2);
        while m > 0 && xi < self.xi[m] {
            m -= 1;
        }
        while m < n - 2 && xi >= self.xi[m + 1] {
            m += 1;
        }
        let t = ((xi - self.xi[m]) / (self.xi[m + 1] - self.xi[m])).clamp(0.0, 1.0);
        (m, t)
    }

    /// `∫_0^zmax f dz` from node samples: trapezoid in `ξ` with Gregory end
    /// corrections through third differences (plain trapezoid below 8 nodes).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n = self.len();
        let g = |j: usize| values[j] * self.jac[j];
        let sum: f64 = if n >= 8 {
            const END: [f64; 4] = [251.0 / 720.0, 897.0 / 720.0, 633.0 / 720.0, 739.0 / 720.0];
            let ends: f64 = (0..4).map(|i| END[i] * (g(i) + g(n - 1 - i))).sum();
            let inner: f64 = (4..n - 4).map(g).sum();
            ends + inner
        } else {
            0.5 * (g(0) + g(n - 1)) + (1..n - 1).map(g).sum::<f64>()
        };
        sum * self.step
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || (self.rate == other.rate && self.nodes == other.nodes)
    }
}

/// Profile samples on a grid plus a power-law tail `F(zmax) (z / zmax)^{-p}`.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
    logs: Vec<f64>,
    tail_exponent: f64,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, tail_exponent: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if let Some(j) = values.iter().position(|x| !x.is_finite()) {
            return Err(domain(format!("sample {j} is not finite")));
        }
        if !tail_exponent.is_finite() {
            return Err(domain("tail exponent must be finite"));
        }
        let logs = values.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect();
        Ok(Self { grid, values, logs, tail_exponent })
    }

    pub fn from_fn(grid: Arc<Grid>, tail_exponent: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&z| f(z)).collect();
        Self::new(grid, values, tail_exponent)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_exponent(&self) -> f64 {
        self.tail_exponent
    }

    pub fn with_tail_exponent(mut self, p: f64) -> Self {
        self.tail_exponent = p;
        self
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|x| x * factor).collect(), self.tail_exponent)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&x| x >= 0.0)
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    /// Value at an arbitrary `x >= 0`.
    ///
    /// Inside the grid: cubic interpolation of `ln F` in `ξ` when the four
    /// stencil samples are positive, linear in `ln F` when only the cell
    /// endpoints are, plain linear otherwise. Beyond `zmax`: the tail model.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        let zmax = self.grid.zmax();
        if x >= zmax {
            return self.values[n - 1] * (x / zmax).powf(-self.tail_exponent);
        }
        let (m, t) = self.grid.locate(x);
        if t == 0.0 {
            return self.values[m];
        }
        let (a, b) = (self.values[m], self.values[m + 1]);
        if !(a > 0.0 && b > 0.0) {
            return a + t * (b - a);
        }
        if n >= 4 {
            let base = m.saturating_sub(1).min(n - 4);
            let s = &self.logs[base..base + 4];
            if s.iter().all(|l| l.is_finite()) {
                let p = (m - base) as f64 + t;
                return cubic_lagrange(s, p).exp();
            }
        }
        (self.logs[m] + t * (self.logs[m + 1] - self.logs[m])).exp()
    }

    /// `M_k(F)` for `k` in {0, 1}: grid quadrature plus the closed-form tail
    /// `F(zmax) zmax^{k+1} / (p - k - 1)`.
    pub fn moment(&self, k: u32) -> Result<f64> {
        let p = self.tail_exponent;
        if p <= k as f64 + 1.0 {
            return Err(Error::DivergentMoment { order: k, exponent: p });
        }
        let nodes = self.grid.nodes();
        let weighted: Vec<f64> = match k {
            0 => self.values.clone(),
            _ => self.values.iter().zip(nodes).map(|(f, z)| f * z.powi(k as i32)).collect(),
        };
        let zmax = self.grid.zmax();
        let tail = self.values[nodes.len() - 1] * zmax.powi(k as i32 + 1) / (p - k as f64 - 1.0);
        Ok(self.grid.integrate(&weighted) + tail)
    }
}

fn cubic_lagrange(y: &[f64], p: f64) -> f64 {
    let (p1, p2, p3) = (p - 1.0, p - 2.0, p - 3.0);
    -y[0] * p1 * p2 * p3 / 6.0 + y[1] * p * p2 * p3 / 2.0 - y[2] * p * p1 * p3 / 2.0 + y[3] * p * p1 * p2 / 6.0
}

/// Trapezoid rule in `z` over the nodes below `z / 2` plus the endpoint `z / 2`.
///
/// `f` receives the abscissa and, for grid nodes, the node index. Past `zmax`
/// the last grid ratio is continued geometrically.
pub(crate) fn half_range_trapezoid(grid: &Grid, z: f64, mut f: impl FnMut(f64, Option<usize>) -> f64) -> f64 {
    let half = 0.5 * z;
    if !(half > 0.0) {
        return 0.0;
    }
    let nodes = grid.nodes();
    let mut sum = 0.0;
    let mut prev_y = 0.0;
    let mut prev_f = f(0.0, Some(0));
    let mut k = 1;
    while k < nodes.len() && nodes[k] < half {
        let fy = f(nodes[k], Some(k));
        sum += 0.5 * (nodes[k] - prev_y) * (prev_f + fy);
        prev_y = nodes[k];
        prev_f = fy;
        k += 1;
    }
    if k == nodes.len() {
        let ratio = nodes[k - 1] / nodes[k - 2].max(f64::MIN_POSITIVE);
        let mut y = prev_y * ratio;
        while y < half {
            let fy = f(y, None);
            sum += 0.5 * (y - prev_y) * (prev_f + fy);
            prev_y = y;
            prev_f = fy;
            y *= ratio;
        }
    }
    let fh = f(half, None);
    sum + 0.5 * (half - prev_y) * (prev_f + fh)
}

/// `2 ∫_0^{z/2} F(z - y) G(y) dy`.
pub fn half_convolution(f: &GridFunction, g: &GridFunction, z: f64) -> Result<f64> {
    if !f.grid.same_as(&g.grid) {
        return Err(Error::GridMismatch);
    }
    if !(z >= 0.0) {
        return Err(domain(format!("z = {z} must be nonnegative")));
    }
    let gv = g.values();
    Ok(2.0
        * half_range_trapezoid(&g.grid, z, |y, node| {
            let gy = match node {
                Some(k) => gv[k],
                None => g.value_at(y),
            };
            f.value_at(z - y) * gy
        }))
}

/// `∫_0^z F(z - y) F(y) dy`, which for identical arguments is by definition
/// twice the half-range form.
pub fn self_convolution(f: &GridFunction, z: f64) -> Result<f64> {
    half_convolution(f, f, z)
}

/// `∫_0^z F(z - y) G(y) dy` by the trapezoid rule in `z` over the nodes
/// below `z` plus the endpoint. Independent of the half-range route.
pub fn full_convolution(f: &GridFunction, g: &GridFunction, z: f64) -> Result<f64> {
    if !f.grid.same_as(&g.grid) {
        return Err(Error::GridMismatch);
    }
    if !(z >= 0.0) {
        return Err(domain(format!("z = {z} must be nonnegative")));
    }
    // reuse the half-range walker on [0, 2z / 2]
    let gv = g.values();
    Ok(half_range_trapezoid(&g.grid, 2.0 * z, |y, node| {
        let gy = match node {
            Some(k) => gv[k],
            None => g.value_at(y),
        };
        f.value_at(z - y) * gy
    }))
}

/// Logarithmic-derivative representation `τ = -z F'/F` of a profile.
#[derive(Debug, Clone)]
pub struct TauFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
    slope0: f64,
    limit_inf: f64,
    cap: Option<f64>,
    integrand: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TauFunction {
    /// `slope0` is `lim τ(s)/s` at `s = 0`, `limit_inf` the asserted limit at
    /// infinity (used past `zmax`), `cap` an optional upper bound.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, slope0: f64, limit_inf: f64, cap: Option<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        for (j, &x) in values.iter().enumerate() {
            if !(x.is_finite() && x >= 0.0) {
                return Err(domain(format!("tau sample {j} = {x} must be finite and nonnegative")));
            }
            if let Some(c) = cap {
                if x > c {
                    return Err(domain(format!("tau sample {j} = {x} exceeds cap {c}")));
                }
            }
        }
        if !slope0.is_finite() || !limit_inf.is_finite() {
            return Err(domain("slope0 and limit_inf must be finite"));
        }
        let nodes = grid.nodes();
        let jac = grid.jacobian();
        let integrand: Vec<f64> =
            (0..grid.len()).map(|j| if j == 0 { slope0 * jac[0] } else { values[j] / nodes[j] * jac[j] }).collect();
        let xi = grid.xi();
        let mut cumulative = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cumulative.push(acc);
        for j in 1..grid.len() {
            acc += 0.5 * (xi[j] - xi[j - 1]) * (integrand[j - 1] + integrand[j]);
            cumulative.push(acc);
        }
        Ok(Self { grid, values, slope0, limit_inf, cap, integrand, cumulative })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slope0(&self) -> f64 {
        self.slope0
    }

    pub fn limit_inf(&self) -> f64 {
        self.limit_inf
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    /// `∫_0^{z_j} τ(s)/s ds` at the nodes.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `∫_0^x τ(s)/s ds` for any `x >= 0`: exact integral of the piecewise
    /// linear (in `ξ`) interpolant inside the grid, `limit_inf · ln(x / zmax)`
    /// added past it.
    pub fn cumulative_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        let zmax = self.grid.zmax();
        if x >= zmax {
            return self.cumulative[n - 1] + self.limit_inf * (x / zmax).ln();
        }
        let (m, t) = self.grid.locate(x);
        self.cumulative_in_cell(m, t)
    }

    #[inline]
    pub(crate) fn cumulative_in_cell(&self, m: usize, t: f64) -> f64 {
        if t == 0.0 {
            return self.cumulative[m];
        }
        if t == 1.0 {
            return self.cumulative[m + 1];
        }
        let xi = self.grid.xi();
        let d = xi[m + 1] - xi[m];
        let half_t2 = 0.5 * t * t;
        self.cumulative[m] + d * ((t - half_t2) * self.integrand[m] + half_t2 * self.integrand[m + 1])
    }

    /// Pointwise value at any `x >= 0`, linear in `ξ` between nodes.
    pub fn value_at(&self, x: f64) -> f64 {
        if x >= self.grid.zmax() {
            return self.limit_inf;
        }
        let (m, t) = self.grid.locate(x);
        self.values[m] + t * (self.values[m + 1] - self.values[m])
    }
}

/// `∫_{z1}^{z2} τ(s)/s ds`.
pub fn log_integral(tau: &TauFunction, z1: f64, z2: f64) -> Result<f64> {
    if !(z1 >= 0.0 && z1 <= z2) {
        return Err(domain(format!("need 0 <= z1 <= z2, got z1 = {z1}, z2 = {z2}")));
    }
    if z1 == z2 {
        return Ok(0.0);
    }
    Ok(tau.cumulative_at(z2) - tau.cumulative_at(z1))
}
