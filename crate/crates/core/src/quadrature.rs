//! Tensor-product quadrature over `R+^r1 x [0,1]^r2`.
//!
//! Gauss rules are built from the three-term recurrence of their orthogonal
//! polynomials: nodes are the eigenvalues of the Jacobi matrix (found by
//! Sturm-sequence bisection) and weights come from the Christoffel function.
//!
//! The oracle evaluators here integrate the defining integrals of the
//! statistics directly and are meant for testing the closed forms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{pow_count, MixedSample, Mode, WeightParams};

/// Largest sample the integral oracles accept.
pub const ORACLE_MAX_ROWS: usize = 50;

/// Relative change tolerated between a rule and its refinement.
pub const REFINEMENT_TOLERANCE: f64 = 1e-8;

// Tail cut: exp(-TAIL_EXPONENT) is below double precision relative to any
// retained term.
const TAIL_EXPONENT: f64 = 45.0;

// ---------------------------------------------------------------------------
// Gauss rules from recurrences

/// Nodes and weights of the Gauss rule whose monic orthogonal polynomials
/// satisfy `p_{k+1} = (x - alpha_k) p_k - beta_k p_{k-1}`; `beta[0]` is unused
/// and `mass` is the total mass of the measure.
fn gauss_from_recurrence(alpha: &[f64], beta: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let m = alpha.len();
    let off: Vec<f64> = (0..m)
        .map(|k| if k == 0 { 0.0 } else { beta[k].sqrt() })
        .collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..m {
        let radius = off[k] + if k + 1 < m { off[k + 1] } else { 0.0 };
        lo = lo.min(alpha[k] - radius);
        hi = hi.max(alpha[k] + radius);
    }

    // Number of eigenvalues strictly below `x`.
    let below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for k in 0..m {
            let sub = if k == 0 { 0.0 } else { beta[k] / q };
            q = alpha[k] - x - sub;
            if q == 0.0 {
                q = -f64::EPSILON * (x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };

    let mut nodes = Vec::with_capacity(m);
    for i in 0..m {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..2000 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if below(mid) > i {
                b = mid;
            } else {
                a = mid;
            }
        }
        nodes.push(0.5 * (a + b));
    }

    let weights = nodes
        .iter()
        .map(|&x| {
            let mut prev = 0.0;
            let mut cur = 1.0 / mass.sqrt();
            let mut total = cur * cur;
            for k in 0..m - 1 {
                let next = ((x - alpha[k]) * cur - off[k] * prev) / off[k + 1];
                prev = cur;
                cur = next;
                total += cur * cur;
            }
            1.0 / total
        })
        .collect();
    (nodes, weights)
}

/// Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha = vec![0.0; m];
    let beta: Vec<f64> = (0..m)
        .map(|k| {
            let k = k as f64;
            k * k / (4.0 * k * k - 1.0)
        })
        .collect();
    let (x, w) = gauss_from_recurrence(&alpha, &beta, 2.0);
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Gauss–Jacobi rule for `int_0^1 f(t) t^power dt`.
pub fn gauss_jacobi_unit(m: usize, power: f64) -> (Vec<f64>, Vec<f64>) {
    let b = power;
    let alpha: Vec<f64> = (0..m)
        .map(|k| {
            if k == 0 {
                b / (b + 2.0)
            } else {
                let s = 2.0 * k as f64 + b;
                b * b / (s * (s + 2.0))
            }
        })
        .collect();
    let beta: Vec<f64> = (0..m)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                let k = k as f64;
                let s = 2.0 * k + b;
                4.0 * k * k * (k + b) * (k + b) / (s * s * (s + 1.0) * (s - 1.0))
            }
        })
        .collect();
    let mass = 2f64.powf(b + 1.0) / (b + 1.0);
    let (x, w) = gauss_from_recurrence(&alpha, &beta, mass);
    let scale = 2f64.powf(b + 1.0);
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| v / scale).collect(),
    )
}

/// Gauss–Laguerre rule for `int_0^inf f(x) e^{-x} dx`.
pub fn gauss_laguerre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha: Vec<f64> = (0..m).map(|k| 2.0 * k as f64 + 1.0).collect();
    let beta: Vec<f64> = (0..m).map(|k| (k * k) as f64).collect();
    gauss_from_recurrence(&alpha, &beta, 1.0)
}

// ---------------------------------------------------------------------------
// One-dimensional rules

/// Nodes and weights on one axis. The weights already include the axis part
/// of the weight function, so `sum w_i f(x_i)` approximates `int f * weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Composite Gauss–Legendre with `m` nodes per panel between consecutive breaks.
    pub fn composite_legendre(m: usize, breaks: &[f64]) -> Self {
        let (x, w) = gauss_legendre_unit(m);
        let mut nodes = Vec::with_capacity(m * breaks.len());
        let mut weights = Vec::with_capacity(m * breaks.len());
        for pair in breaks.windows(2) {
            let (lo, h) = (pair[0], pair[1] - pair[0]);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(lo + h * xi);
                weights.push(h * wi);
            }
        }
        Self { nodes, weights }
    }

    /// `int_0^inf f(s) e^{-rate s} ds` on geometrically growing panels.
    ///
    /// `decay` brackets the exponential rates of the whole integrand
    /// (`f` times the weight): the first panel resolves the fastest rate and
    /// the last one reaches where the slowest has died out.
    pub fn exponential_graded(m: usize, rate: f64, decay: DecayRange) -> Self {
        let end = TAIL_EXPONENT / decay.slowest;
        let mut breaks = vec![0.0];
        let mut edge = 1.0 / decay.fastest;
        while edge < end {
            breaks.push(edge);
            edge *= 2.0;
        }
        breaks.push(end);
        let mut rule = Self::composite_legendre(m, &breaks);
        for (w, s) in rule.weights.iter_mut().zip(&rule.nodes) {
            *w *= (-rate * s).exp();
        }
        rule
    }

    /// `int_0^inf f(s) e^{-rate s} ds` through `u = e^{-rate s}` and Gauss–Legendre in `u`.
    pub fn exponential_log_legendre(m: usize, rate: f64) -> Self {
        let (u, w) = gauss_legendre_unit(m);
        Self {
            nodes: u.iter().map(|u| -u.ln() / rate).collect(),
            weights: w.iter().map(|w| w / rate).collect(),
        }
    }

    /// `int_0^inf f(s) e^{-rate s} ds` by scaled Gauss–Laguerre.
    pub fn exponential_laguerre(m: usize, rate: f64) -> Self {
        let (x, w) = gauss_laguerre(m);
        Self {
            nodes: x.iter().map(|x| x / rate).collect(),
            weights: w.iter().map(|w| w / rate).collect(),
        }
    }

    /// `int_0^1 f(t) t^power dt` by Gauss–Jacobi.
    pub fn power_jacobi(m: usize, power: f64) -> Self {
        let (nodes, weights) = gauss_jacobi_unit(m, power);
        Self { nodes, weights }
    }

    /// `int_0^1 f(t) t^power dt` by Gauss–Legendre with `t^power` in the integrand.
    pub fn power_legendre(m: usize, power: f64) -> Self {
        let (nodes, w) = gauss_legendre_unit(m);
        let weights = nodes
            .iter()
            .zip(&w)
            .map(|(t, w)| w * t.powf(power))
            .collect();
        Self { nodes, weights }
    }
}

/// Range of exponential decay rates of an integrand on a continuous axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRange {
    pub slowest: f64,
    pub fastest: f64,
}

impl DecayRange {
    fn generic(rate: f64) -> Self {
        Self {
            slowest: rate,
            fastest: 8.0 * rate + 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Tensor-product rules

/// How continuous axes carry the `e^{-a s}` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContinuousAxis {
    /// Composite Gauss–Legendre on panels doubling in width; `nodes` is per panel.
    Graded,
    /// `u = e^{-a s}` followed by Gauss–Legendre on `(0, 1)`.
    LogLegendre,
    /// Scaled Gauss–Laguerre.
    Laguerre,
}

/// How count axes carry the `t^b` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountAxis {
    /// Gauss–Jacobi, exact for polynomial integrands.
    Jacobi,
    /// Gauss–Legendre with `t^b` evaluated at the nodes.
    Legendre,
}

/// Recipe for the per-axis rules of a tensor-product integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureRule {
    /// Node count per axis (per panel for graded axes). At least 2.
    pub nodes: usize,
    pub continuous: ContinuousAxis,
    pub count: CountAxis,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self {
            nodes: 12,
            continuous: ContinuousAxis::Graded,
            count: CountAxis::Jacobi,
        }
    }
}

impl QuadratureRule {
    pub fn new(nodes: usize, continuous: ContinuousAxis, count: CountAxis) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidParameter(
                "a quadrature rule needs at least 2 nodes".into(),
            ));
        }
        Ok(Self {
            nodes,
            continuous,
            count,
        })
    }

    /// The same recipe with twice as many nodes.
    pub fn refined(&self) -> Self {
        Self {
            nodes: 2 * self.nodes,
            ..*self
        }
    }

    fn continuous_axis(&self, rate: f64, decay: DecayRange) -> AxisRule {
        match self.continuous {
            ContinuousAxis::Graded => AxisRule::exponential_graded(self.nodes, rate, decay),
            ContinuousAxis::LogLegendre => AxisRule::exponential_log_legendre(self.nodes, rate),
            ContinuousAxis::Laguerre => AxisRule::exponential_laguerre(self.nodes, rate),
        }
    }

    fn count_axis(&self, power: f64) -> AxisRule {
        match self.count {
            CountAxis::Jacobi => AxisRule::power_jacobi(self.nodes, power),
            CountAxis::Legendre => AxisRule::power_legendre(self.nodes, power),
        }
    }

    fn axes(&self, wp: &WeightParams, decays: &[DecayRange]) -> Vec<AxisRule> {
        let mut axes: Vec<AxisRule> = wp
            .a()
            .iter()
            .zip(decays)
            .map(|(&a, &d)| self.continuous_axis(a, d))
            .collect();
        axes.extend(wp.b().iter().map(|&b| self.count_axis(b)));
        axes
    }
}

/// Tensor-product approximation of `int f(s, t) w(s, t) ds dt`.
pub fn integrate_weighted<F>(
    f: F,
    wp: &WeightParams,
    r1: usize,
    r2: usize,
    rule: &QuadratureRule,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if wp.a().len() != r1 || wp.b().len() != r2 {
        return Err(Error::DimensionMismatch(
            "weight does not match (r1, r2)".into(),
        ));
    }
    let decays: Vec<DecayRange> = wp.a().iter().map(|&a| DecayRange::generic(a)).collect();
    let axes = rule.axes(wp, &decays);
    let dim = r1 + r2;
    let mut index = vec![0usize; dim];
    let mut s = vec![0.0; r1];
    let mut t = vec![0.0; r2];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for (axis, (&i, rule)) in index.iter().zip(&axes).enumerate() {
            weight *= rule.weights[i];
            if axis < r1 {
                s[axis] = rule.nodes[i];
            } else {
                t[axis - r1] = rule.nodes[i];
            }
        }
        total += weight * f(&s, &t);

        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(total);
            }
            axis -= 1;
            index[axis] += 1;
            if index[axis] < axes[axis].len() {
                break;
            }
            index[axis] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Integral oracles for I and T

/// Which integral the oracle evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    /// `int xi_n w`.
    I,
    /// `int xi_n^2 w`.
    T,
}

/// Evaluates I or T from its integral definition on a tensor grid, then
/// repeats with doubled node counts and accepts the value only if the two
/// agree to [`REFINEMENT_TOLERANCE`] relative to the integral of
/// `(|psi_n| + |marginal product|)^power`, the size of the terms that cancel.
pub fn oracle_statistic(
    sample: &MixedSample,
    wp: &WeightParams,
    kind: OracleKind,
    mode: Mode,
    rule: &QuadratureRule,
) -> Result<f64> {
    if sample.n() > ORACLE_MAX_ROWS {
        return Err(Error::OracleTooLarge {
            max: ORACLE_MAX_ROWS,
            got: sample.n(),
        });
    }
    wp.check_against(sample)?;
    let power = match kind {
        OracleKind::I => 1,
        OracleKind::T => 2,
    };
    let decays: Vec<DecayRange> = (0..sample.r1())
        .map(|j| {
            let col = sample.x_column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(0.0, f64::max);
            let a = wp.a()[j];
            DecayRange {
                slowest: a + power as f64 * lo,
                fastest: a + power as f64 * hi,
            }
        })
        .collect();

    let coarse = grid_integral(sample, &rule.axes(wp, &decays), mode, power);
    let fine = grid_integral(sample, &rule.refined().axes(wp, &decays), mode, power);
    let scale = fine.mass.max(coarse.mass);
    if scale > 0.0 {
        let change = (fine.value - coarse.value).abs() / scale;
        if !(change < REFINEMENT_TOLERANCE) {
            return Err(Error::NonConvergent { change });
        }
    }
    Ok(fine.value)
}

#[derive(Debug, Clone, Copy)]
struct GridResult {
    value: f64,
    mass: f64,
}

/// Per-axis factor tables: `factors[p * n + i]` is row `i`'s factor at node `p`
/// (`e^{-s_p x_i}` or `t_p^{y_i}`).
fn axis_factors(sample: &MixedSample, axis: usize, rule: &AxisRule) -> Vec<f64> {
    let n = sample.n();
    let r1 = sample.r1();
    let mut out = Vec::with_capacity(rule.len() * n);
    for &node in &rule.nodes {
        for i in 0..n {
            out.push(if axis < r1 {
                (-node * sample.x(i, axis)).exp()
            } else {
                pow_count(node, sample.y(i, axis - r1))
            });
        }
    }
    out
}

/// Sums `W * xi_n^power` over the grid. `xi_n` at a grid point is built from
/// the same row sums as `eval_xi_n`, with per-axis powers tabulated once.
fn grid_integral(sample: &MixedSample, axes: &[AxisRule], mode: Mode, power: i32) -> GridResult {
    let n = sample.n();
    let tables: Vec<Vec<f64>> = axes
        .iter()
        .enumerate()
        .map(|(l, r)| axis_factors(sample, l, r))
        .collect();
    let node_means: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            t.chunks(n)
                .map(|c| c.iter().sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    let mut walk = GridWalk {
        n,
        r1: sample.r1(),
        dim: axes.len(),
        mode,
        power,
        axes,
        tables: &tables,
        node_means: &node_means,
        joint: vec![vec![1.0; n]; axes.len() + 1],
        block: vec![vec![1.0; n]; axes.len() + 1],
        acc: GridResult {
            value: 0.0,
            mass: 0.0,
        },
    };
    walk.visit(0, 1.0, 1.0);
    walk.acc
}

struct GridWalk<'a> {
    n: usize,
    r1: usize,
    dim: usize,
    mode: Mode,
    power: i32,
    axes: &'a [AxisRule],
    tables: &'a [Vec<f64>],
    node_means: &'a [Vec<f64>],
    joint: Vec<Vec<f64>>,
    block: Vec<Vec<f64>>,
    acc: GridResult,
}

impl GridWalk<'_> {
    fn visit(&mut self, level: usize, weight: f64, marginal: f64) {
        if level == self.dim {
            let psi = self.joint[level].iter().sum::<f64>() / self.n as f64;
            let xi = psi - marginal;
            let term = xi.powi(self.power);
            self.acc.value += weight * term;
            self.acc.mass += weight * (psi.abs() + marginal.abs()).powi(self.power);
            return;
        }
        let n = self.n;
        let block_start = level == 0 || level == self.r1;
        let block_end = level + 1 == self.r1 || level + 1 == self.dim;
        for p in 0..self.axes[level].len() {
            let factor = &self.tables[level][p * n..(p + 1) * n];
            let (lower, upper) = self.joint.split_at_mut(level + 1);
            for i in 0..n {
                upper[0][i] = lower[level][i] * factor[i];
            }
            let next_marginal = match self.mode {
                Mode::Total => marginal * self.node_means[level][p],
                Mode::TwoVector => {
                    let (lower, upper) = self.block.split_at_mut(level + 1);
                    for i in 0..n {
                        let base = if block_start { 1.0 } else { lower[level][i] };
                        upper[0][i] = base * factor[i];
                    }
                    if block_end {
                        marginal * upper[0].iter().sum::<f64>() / n as f64
                    } else {
                        marginal
                    }
                }
            };
            self.visit(
                level + 1,
                weight * self.axes[level].weights[p],
                next_marginal,
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian-weighted oscillatory integrals for the characteristic-function statistic

/// Upper integration limit for a continuous axis with weight `e^{-sigma^2 u^2 / 2}`.
pub fn gaussian_cutoff(sigma: f64) -> f64 {
    (2.0 * TAIL_EXPONENT).sqrt() / sigma
}

const OSC_NODES: usize = 8;
const MAX_PHASE_PER_PANEL: f64 = 2.0;

/// Evaluates `g(d) = int_0^upper e^{i u d} e^{-sigma^2 u^2 / 2} du` with
/// composite Gauss–Legendre whose panel count grows with `|d|`, so every
/// panel spans at most two radians of phase.
#[derive(Debug, Clone)]
pub struct OscillatoryIntegral {
    upper: f64,
    sigma: f64,
    min_panels: usize,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
    // levels[k]: weights of the rule with min_panels * 2^k panels, panel-major
    levels: Vec<Vec<f64>>,
}

impl OscillatoryIntegral {
    /// `upper` is 1 for count axes and [`gaussian_cutoff`] for continuous axes.
    pub fn new(sigma: f64, upper: f64) -> Self {
        let min_panels = ((sigma * upper).ceil() as usize).max(2).next_power_of_two();
        let (gl_nodes, gl_weights) = gauss_legendre_unit(OSC_NODES);
        Self {
            upper,
            sigma,
            min_panels,
            gl_nodes,
            gl_weights,
            levels: Vec::new(),
        }
    }

    pub fn for_continuous(sigma: f64) -> Self {
        Self::new(sigma, gaussian_cutoff(sigma))
    }

    pub fn for_count(sigma: f64) -> Self {
        Self::new(sigma, 1.0)
    }

    fn level_for(&self, d: f64) -> usize {
        let needed = (d.abs() * self.upper / MAX_PHASE_PER_PANEL).ceil() as usize;
        let mut level = 0;
        while self.min_panels << level < needed {
            level += 1;
        }
        level
    }

    fn ensure_level(&mut self, level: usize) {
        while self.levels.len() <= level {
            let panels = self.min_panels << self.levels.len();
            let h = self.upper / panels as f64;
            let half_var = 0.5 * self.sigma * self.sigma;
            let mut table = Vec::with_capacity(panels * OSC_NODES);
            for p in 0..panels {
                for (x, w) in self.gl_nodes.iter().zip(&self.gl_weights) {
                    let u = h * (p as f64 + x);
                    table.push(h * w * (-half_var * u * u).exp());
                }
            }
            self.levels.push(table);
        }
    }

    pub fn value(&mut self, d: f64) -> Complex64 {
        let level = self.level_for(d);
        self.ensure_level(level);
        let panels = self.min_panels << level;
        let h = self.upper / panels as f64;
        let table = &self.levels[level];
        let within: Vec<Complex64> = self
            .gl_nodes
            .iter()
            .map(|x| Complex64::from_polar(1.0, h * x * d))
            .collect();
        let step = Complex64::from_polar(1.0, h * d);
        let mut rotation = Complex64::new(1.0, 0.0);
        let mut total = Complex64::new(0.0, 0.0);
        for (p, chunk) in table.chunks(OSC_NODES).enumerate() {
            if p % 256 == 0 {
                rotation = Complex64::from_polar(1.0, h * p as f64 * d);
            }
            let panel: Complex64 = chunk.iter().zip(&within).map(|(w, e)| e * *w).sum();
            total += rotation * panel;
            rotation *= step;
        }
        total
    }
}

/// Reference evaluation of the characteristic-function statistic: the squared
/// modulus of the ecf difference is computed pointwise on a tensor grid and
/// integrated directly. Each axis uses composite Gauss–Legendre with
/// `nodes` points per panel and panel widths resolving the sample's spread.
pub fn direct_d_statistic(
    sample: &MixedSample,
    sigma_x: &[f64],
    sigma_y: &[f64],
    mode: Mode,
    nodes: usize,
) -> Result<f64> {
    if sample.n() > ORACLE_MAX_ROWS {
        return Err(Error::OracleTooLarge {
            max: ORACLE_MAX_ROWS,
            got: sample.n(),
        });
    }
    if sigma_x.len() != sample.r1() || sigma_y.len() != sample.r2() {
        return Err(Error::DimensionMismatch(
            "sigma vectors do not match the sample".into(),
        ));
    }
    let n = sample.n();
    let dim = sample.dim();
    let mut axes = Vec::with_capacity(dim);
    let mut tables: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
    for l in 0..dim {
        let values = sample.axis_values(l);
        let (sigma, upper) = if l < sample.r1() {
            (sigma_x[l], gaussian_cutoff(sigma_x[l]))
        } else {
            (sigma_y[l - sample.r1()], 1.0)
        };
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let panels = ((upper * (hi - lo)).ceil() as usize + (sigma * upper).ceil() as usize).max(2);
        let breaks: Vec<f64> = (0..=panels)
            .map(|p| upper * p as f64 / panels as f64)
            .collect();
        let mut rule = AxisRule::composite_legendre(nodes, &breaks);
        for (w, u) in rule.weights.iter_mut().zip(&rule.nodes) {
            *w *= (-0.5 * sigma * sigma * u * u).exp();
        }
        let mut table = Vec::with_capacity(rule.len() * n);
        for &u in &rule.nodes {
            table.extend(values.iter().map(|v| Complex64::from_polar(1.0, u * v)));
        }
        tables.push(table);
        axes.push(rule);
    }
    let node_means: Vec<Vec<Complex64>> = tables
        .iter()
        .map(|t| {
            t.chunks(n)
                .map(|c| c.iter().sum::<Complex64>() / n as f64)
                .collect()
        })
        .collect();
    let mut walk = EcfWalk {
        n,
        r1: sample.r1(),
        dim,
        mode,
        axes: &axes,
        tables: &tables,
        node_means: &node_means,
        joint: vec![vec![Complex64::new(1.0, 0.0); n]; dim + 1],
        block: vec![vec![Complex64::new(1.0, 0.0); n]; dim + 1],
        acc: 0.0,
    };
    walk.visit(0, 1.0, Complex64::new(1.0, 0.0));
    Ok(n as f64 * walk.acc)
}

struct EcfWalk<'a> {
    n: usize,
    r1: usize,
    dim: usize,
    mode: Mode,
    axes: &'a [AxisRule],
    tables: &'a [Vec<Complex64>],
    node_means: &'a [Vec<Complex64>],
    joint: Vec<Vec<Complex64>>,
    block: Vec<Vec<Complex64>>,
    acc: f64,
}

impl EcfWalk<'_> {
    fn visit(&mut self, level: usize, weight: f64, marginal: Complex64) {
        let n = self.n;
        if level == self.dim {
            let ecf = self.joint[level].iter().sum::<Complex64>() / n as f64;
            self.acc += weight * (ecf - marginal).norm_sqr();
            return;
        }
        let block_start = level == 0 || level == self.r1;
        let block_end = level + 1 == self.r1 || level + 1 == self.dim;
        for p in 0..self.axes[level].len() {
            let factor = &self.tables[level][p * n..(p + 1) * n];
            let (lower, upper) = self.joint.split_at_mut(level + 1);
            for i in 0..n {
                upper[0][i] = lower[level][i] * factor[i];
            }
            let next_marginal = match self.mode {
                Mode::Total => marginal * self.node_means[level][p],
                Mode::TwoVector => {
                    let (lower, upper) = self.block.split_at_mut(level + 1);
                    for i in 0..n {
                        let base = if block_start {
                            Complex64::new(1.0, 0.0)
                        } else {
                            lower[level][i]
                        };
                        upper[0][i] = base * factor[i];
                    }
                    if block_end {
                        marginal * upper[0].iter().sum::<Complex64>() / n as f64
                    } else {
                        marginal
                    }
                }
            };
            self.visit(
                level + 1,
                weight * self.axes[level].weights[p],
                next_marginal,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{eval_xi_n, TransformPoint};

    fn reference() -> MixedSample {
        MixedSample::from_rows(&[vec![1.0], vec![2.0]], &[vec![0], vec![1]]).unwrap()
    }

    #[test]
    fn legendre_is_exact_on_monomials() {
        for m in [2, 5, 16, 32, 64] {
            let (x, w) = gauss_legendre_unit(m);
            assert!(w.iter().all(|w| *w > 0.0));
            for k in 0..2 * m {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = 1.0 / (k as f64 + 1.0);
                assert!((q - exact).abs() <= 1e-13, "m={m} k={k} err={}", q - exact);
            }
        }
    }

    #[test]
    fn jacobi_is_exact_on_weighted_monomials() {
        for &b in &[0.2, 1.0, 2.7, 5.0] {
            for m in [2, 6, 16] {
                let (x, w) = gauss_jacobi_unit(m, b);
                assert!(w.iter().all(|w| *w > 0.0));
                for k in 0..2 * m {
                    let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                    let exact = 1.0 / (b + k as f64 + 1.0);
                    assert!(
                        (q - exact).abs() <= 1e-13 * exact.max(1e-3) * 10.0,
                        "b={b} m={m} k={k}"
                    );
                }
            }
        }
    }

    #[test]
    fn laguerre_is_exact_on_monomials() {
        let (x, w) = gauss_laguerre(10);
        let mut factorial = 1.0;
        for k in 0..20 {
            if k > 0 {
                factorial *= k as f64;
            }
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            assert!((q / factorial - 1.0).abs() < 1e-11, "k={k}");
        }
    }

    #[test]
    fn integrate_weighted_examples_for_every_axis_treatment() {
        let one = WeightParams::new(vec![1.0], vec![1.0]).unwrap();
        let two = WeightParams::new(vec![2.0], vec![1.0]).unwrap();
        for continuous in [
            ContinuousAxis::Graded,
            ContinuousAxis::LogLegendre,
            ContinuousAxis::Laguerre,
        ] {
            for count in [CountAxis::Jacobi, CountAxis::Legendre] {
                let rule = QuadratureRule::new(32, continuous, count).unwrap();
                let v = integrate_weighted(|_, _| 1.0, &one, 1, 1, &rule).unwrap();
                assert!((v - 0.5).abs() < 1e-10, "{continuous:?} {count:?}: {v}");
                let v = integrate_weighted(|s, _| (-s[0]).exp(), &one, 1, 1, &rule).unwrap();
                assert!((v - 0.25).abs() < 1e-10, "{continuous:?} {count:?}: {v}");
                let v = integrate_weighted(|_, t| t[0], &two, 1, 1, &rule).unwrap();
                assert!(
                    (v - 1.0 / 6.0).abs() < 1e-10,
                    "{continuous:?} {count:?}: {v}"
                );
            }
        }
    }

    #[test]
    fn refinement_error_shrinks_on_smooth_integrand() {
        let wp = WeightParams::new(vec![0.7], vec![1.3]).unwrap();
        let f = |s: &[f64], t: &[f64]| (-(1.7 * s[0])).exp() * (1.0 + t[0]).ln();
        let rule =
            |m| QuadratureRule::new(m, ContinuousAxis::LogLegendre, CountAxis::Legendre).unwrap();
        let mut prev = f64::INFINITY;
        for m in [4, 8, 16] {
            let a = integrate_weighted(f, &wp, 1, 1, &rule(m)).unwrap();
            let b = integrate_weighted(f, &wp, 1, 1, &rule(2 * m)).unwrap();
            let change = (a - b).abs();
            assert!(change < prev);
            prev = change;
        }
    }

    #[test]
    fn oracle_reference_values() {
        let s = reference();
        let wp = WeightParams::new(vec![1.0], vec![1.0]).unwrap();
        let rule = QuadratureRule::default();
        let i = oracle_statistic(&s, &wp, OracleKind::I, Mode::TwoVector, &rule).unwrap();
        assert!((i - 1.0 / 144.0).abs() < 1e-8);
        let t = oracle_statistic(&s, &wp, OracleKind::T, Mode::TwoVector, &rule).unwrap();
        let t_hand = 0.0958333333333333 + 0.0914930555555556 - 0.1871527777777778;
        assert!((t - t_hand).abs() < 1e-8 * t_hand.abs() + 1e-15, "t={t}");
    }

    #[test]
    fn oracle_with_log_legendre_default_size() {
        let s = reference();
        let wp = WeightParams::new(vec![1.0], vec![1.0]).unwrap();
        let rule =
            QuadratureRule::new(64, ContinuousAxis::LogLegendre, CountAxis::Legendre).unwrap();
        let i = oracle_statistic(&s, &wp, OracleKind::I, Mode::TwoVector, &rule).unwrap();
        assert!((i - 1.0 / 144.0).abs() < 1e-8);
    }

    #[test]
    fn oracle_single_row_is_zero() {
        let s = MixedSample::from_rows(&[vec![0.3, 2.0]], &[vec![4]]).unwrap();
        let wp = WeightParams::new(vec![1.0, 0.5], vec![2.0]).unwrap();
        for mode in [Mode::TwoVector, Mode::Total] {
            let t =
                oracle_statistic(&s, &wp, OracleKind::T, mode, &QuadratureRule::default()).unwrap();
            assert!(t.abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_large_samples() {
        let x: Vec<Vec<f64>> = (0..51).map(|i| vec![1.0 + i as f64]).collect();
        let y: Vec<Vec<u64>> = (0..51).map(|i| vec![i as u64 % 3]).collect();
        let s = MixedSample::from_rows(&x, &y).unwrap();
        let wp = WeightParams::new(vec![1.0], vec![1.0]).unwrap();
        let err = oracle_statistic(
            &s,
            &wp,
            OracleKind::I,
            Mode::TwoVector,
            &QuadratureRule::default(),
        );
        assert!(matches!(err, Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn oracle_reports_non_convergence() {
        let s = MixedSample::from_rows(
            &[vec![0.05], vec![3.0], vec![1.0]],
            &[vec![0], vec![7], vec![2]],
        )
        .unwrap();
        let wp = WeightParams::new(vec![4.0], vec![0.3]).unwrap();
        let crude =
            QuadratureRule::new(2, ContinuousAxis::LogLegendre, CountAxis::Legendre).unwrap();
        let err = oracle_statistic(&s, &wp, OracleKind::T, Mode::TwoVector, &crude);
        assert!(matches!(err, Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn tabulated_grid_matches_pointwise_xi() {
        // The grid walk must reproduce eval_xi_n at every node it visits.
        let s = MixedSample::from_rows(
            &[vec![0.4, 1.1], vec![2.0, 0.3], vec![1.5, 1.5]],
            &[vec![0, 2], vec![3, 1], vec![1, 1]],
        )
        .unwrap();
        let wp = WeightParams::new(vec![0.5, 2.0], vec![1.0, 3.0]).unwrap();
        let rule = QuadratureRule::new(3, ContinuousAxis::LogLegendre, CountAxis::Jacobi).unwrap();
        let decays = vec![DecayRange::generic(0.5), DecayRange::generic(2.0)];
        let axes = rule.axes(&wp, &decays);
        for mode in [Mode::TwoVector, Mode::Total] {
            let grid = grid_integral(&s, &axes, mode, 1).value;
            let direct = integrate_weighted_axes(&axes, 2, |sv, tv| {
                eval_xi_n(
                    &s,
                    &TransformPoint::new(sv.to_vec(), tv.to_vec()).unwrap(),
                    mode,
                )
                .unwrap()
            });
            assert!((grid - direct).abs() < 1e-15, "{mode}: {grid} vs {direct}");
        }
    }

    fn integrate_weighted_axes<F: Fn(&[f64], &[f64]) -> f64>(
        axes: &[AxisRule],
        r1: usize,
        f: F,
    ) -> f64 {
        let mut total = 0.0;
        let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
        let size: usize = counts.iter().product();
        for flat in 0..size {
            let mut rem = flat;
            let mut idx = vec![0; axes.len()];
            for l in (0..axes.len()).rev() {
                idx[l] = rem % counts[l];
                rem /= counts[l];
            }
            let pts: Vec<f64> = idx.iter().zip(axes).map(|(&i, a)| a.nodes[i]).collect();
            let w: f64 = idx.iter().zip(axes).map(|(&i, a)| a.weights[i]).product();
            total += w * f(&pts[..r1], &pts[r1..]);
        }
        total
    }

    #[test]
    fn oscillatory_integral_matches_closed_form_real_part() {
        let sigma = 0.5;
        let mut g = OscillatoryIntegral::for_continuous(sigma);
        for &d in &[0.0, 0.3, -1.7, 4.0, 25.0, 130.0] {
            let v = g.value(d);
            let exact = (std::f64::consts::PI / 2.0).sqrt() / sigma
                * (-d * d / (2.0 * sigma * sigma)).exp();
            assert!((v.re - exact).abs() < 1e-12, "d={d}: {} vs {exact}", v.re);
        }
    }

    #[test]
    fn oscillatory_integral_matches_dawson_imaginary_part() {
        // int_0^inf sin(u d) e^{-u^2 sigma^2/2} du = (sqrt 2/sigma) F(d / (sigma sqrt 2)),
        // F(x) = int_0^x e^{t^2 - x^2} dt.
        let sigma = 0.5;
        let mut g = OscillatoryIntegral::for_continuous(sigma);
        for &d in &[0.2, 1.0, -2.5, 7.0] {
            let x = d / (sigma * 2f64.sqrt());
            let panels: Vec<f64> = (0..=400).map(|p| x * p as f64 / 400.0).collect();
            let dawson =
                AxisRule::composite_legendre(10, &panels).integrate(|t| (t * t - x * x).exp());
            let exact = 2f64.sqrt() / sigma * dawson;
            assert!((g.value(d).im - exact).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn oscillatory_integral_on_unit_interval_matches_fine_rule() {
        let sigma = 0.5;
        let mut g = OscillatoryIntegral::for_count(sigma);
        let breaks: Vec<f64> = (0..=4000).map(|p| p as f64 / 4000.0).collect();
        let fine = AxisRule::composite_legendre(12, &breaks);
        for &d in &[0.0, 1.0, -3.0, 57.0, 1234.0] {
            let re = fine.integrate(|u| (u * d).cos() * (-0.125 * u * u).exp());
            let im = fine.integrate(|u| (u * d).sin() * (-0.125 * u * u).exp());
            let v = g.value(d);
            assert!(
                (v.re - re).abs() < 1e-12 && (v.im - im).abs() < 1e-12,
                "d={d}"
            );
        }
    }

    #[test]
    fn direct_d_is_zero_for_single_row() {
        let s = MixedSample::from_rows(&[vec![1.3]], &[vec![2]]).unwrap();
        let d = direct_d_statistic(&s, &[0.5], &[0.5], Mode::TwoVector, 8).unwrap();
        assert!(d.abs() < 1e-14);
    }
}
