//! Synthetic mixed-type data: marginal quantile transforms, bivariate
//! copulas and regular-vine composition.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use rand::distr::Distribution;
use rand::{Rng, RngExt};
use rand_distr::{Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::transforms::MixedSample;

/// Tolerance of the numeric h-function inversion.
pub const H_INVERSE_TOL: f64 = 1e-10;
/// Relative tolerance of the gamma quantile.
pub const GAMMA_QUANTILE_TOL: f64 = 1e-12;

const UNIT_LO: f64 = f64::MIN_POSITIVE;
const UNIT_HI: f64 = 1.0 - f64::EPSILON / 2.0;

fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_LO, UNIT_HI)
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

// Marginals

/// Marginal distribution of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarginalSpec {
    /// Mean `1 / rate`.
    Exponential {
        rate: f64,
    },
    /// Mean `shape / rate`.
    Gamma {
        shape: f64,
        rate: f64,
    },
    Poisson {
        mean: f64,
    },
    /// Number of failures before the `size`-th success, success probability
    /// `prob`; mean `size (1 - prob) / prob`.
    NegBinomial {
        size: f64,
        prob: f64,
    },
    Binomial {
        trials: u64,
        prob: f64,
    },
}

impl MarginalSpec {
    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            MarginalSpec::Exponential { .. } | MarginalSpec::Gamma { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let prob = |p: f64| p > 0.0 && p < 1.0;
        let ok = match *self {
            MarginalSpec::Exponential { rate } => positive(rate),
            MarginalSpec::Gamma { shape, rate } => positive(shape) && positive(rate),
            MarginalSpec::Poisson { mean } => positive(mean),
            MarginalSpec::NegBinomial { size, prob: p } => positive(size) && prob(p),
            MarginalSpec::Binomial { trials, prob: p } => trials > 0 && prob(p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid marginal parameters: {self}"
            )))
        }
    }

    /// Inverse CDF at `u`. Count families return the smallest `k` with
    /// `CDF(k) >= u`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        self.validate()?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantile level {u} outside (0, 1)"
            )));
        }
        Ok(PreparedMarginal::new(*self).quantile(u))
    }
}

impl fmt::Display for MarginalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MarginalSpec::Exponential { rate } => write!(f, "E({rate})"),
            MarginalSpec::Gamma { shape, rate } => write!(f, "gamma({shape},{rate})"),
            MarginalSpec::Poisson { mean } => write!(f, "P({mean})"),
            MarginalSpec::NegBinomial { size, prob } => write!(f, "NB({size},{prob})"),
            MarginalSpec::Binomial { trials, prob } => write!(f, "B({trials},{prob})"),
        }
    }
}

fn gamma_quantile(shape: f64, rate: f64, u: f64) -> f64 {
    // Solve in z = rate * x against whichever tail is better conditioned.
    let upper = u > 0.5;
    let target = if upper { 1.0 - u } else { u };
    let residual = |z: f64| {
        if upper {
            target - gamma_ur(shape, z)
        } else {
            gamma_lr(shape, z) - target
        }
    };
    let ln_norm = ln_gamma(shape);
    let density = |z: f64| ((shape - 1.0) * z.ln() - z - ln_norm).exp();

    let wh = {
        let c = 1.0 / (9.0 * shape);
        shape * (1.0 - c + normal_quantile(u) * c.sqrt()).powi(3)
    };
    let small = ((u.ln() + ln_gamma(shape + 1.0)) / shape).exp();
    let mut z = if wh > 0.0 && u > 0.05 {
        wh
    } else {
        small.max(f64::MIN_POSITIVE)
    };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    for _ in 0..200 {
        let r = residual(z);
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let step = r / density(z);
        let mut next = z - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * z.max(1.0)
            };
        }
        let done = (next - z).abs() <= GAMMA_QUANTILE_TOL * next;
        z = next;
        if done {
            break;
        }
    }
    z / rate
}

/// A marginal ready for repeated quantile evaluation; count families carry
/// a cached CDF table.
#[derive(Debug, Clone)]
pub(crate) enum PreparedMarginal {
    Exponential(f64),
    Gamma { shape: f64, rate: f64 },
    Count { cdf: Vec<f64> },
}

impl PreparedMarginal {
    pub(crate) fn new(spec: MarginalSpec) -> Self {
        match spec {
            MarginalSpec::Exponential { rate } => PreparedMarginal::Exponential(rate),
            MarginalSpec::Gamma { shape, rate } => PreparedMarginal::Gamma { shape, rate },
            MarginalSpec::Poisson { mean } => {
                Self::count_table((-mean).exp(), |k| mean / (k + 1) as f64, None)
            }
            MarginalSpec::NegBinomial { size, prob } => Self::count_table(
                prob.powf(size),
                |k| (k as f64 + size) / (k + 1) as f64 * (1.0 - prob),
                None,
            ),
            MarginalSpec::Binomial { trials, prob } => Self::count_table(
                (1.0 - prob).powf(trials as f64),
                |k| (trials - k) as f64 / (k + 1) as f64 * prob / (1.0 - prob),
                Some(trials),
            ),
        }
    }

    fn count_table(first: f64, ratio: impl Fn(u64) -> f64, last: Option<u64>) -> Self {
        let mut cdf = Vec::new();
        let mut pmf = first;
        let mut acc = 0.0;
        let mut k = 0u64;
        loop {
            acc += pmf;
            cdf.push(acc);
            if last == Some(k) || (1.0 - acc < 1e-16 && k > 0 && ratio(k) < 1.0) || k > 10_000_000 {
                break;
            }
            pmf *= ratio(k);
            k += 1;
        }
        PreparedMarginal::Count { cdf }
    }

    pub(crate) fn is_continuous(&self) -> bool {
        !matches!(self, PreparedMarginal::Count { .. })
    }

    pub(crate) fn quantile(&self, u: f64) -> f64 {
        match self {
            PreparedMarginal::Exponential(rate) => -(-u).ln_1p() / rate,
            PreparedMarginal::Gamma { shape, rate } => gamma_quantile(*shape, *rate, u),
            PreparedMarginal::Count { cdf } => {
                cdf.partition_point(|&c| c < u).min(cdf.len() - 1) as f64
            }
        }
    }
}

// Copulas

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
    Joe,
}

/// A one-parameter bivariate copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCopula", into = "RawCopula")]
pub struct Copula {
    family: CopulaFamily,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCopula {
    family: CopulaFamily,
    #[serde(default)]
    theta: f64,
}

impl TryFrom<RawCopula> for Copula {
    type Error = Error;
    fn try_from(raw: RawCopula) -> Result<Self> {
        Copula::new(raw.family, raw.theta)
    }
}

impl From<Copula> for RawCopula {
    fn from(c: Copula) -> Self {
        RawCopula {
            family: c.family,
            theta: c.theta,
        }
    }
}

impl Copula {
    pub const INDEPENDENCE: Copula = Copula {
        family: CopulaFamily::Independence,
        theta: 0.0,
    };

    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        let ok = match family {
            CopulaFamily::Independence => true,
            CopulaFamily::Gaussian => theta > -1.0 && theta < 1.0,
            CopulaFamily::Clayton => theta > 0.0 && theta.is_finite(),
            CopulaFamily::Gumbel | CopulaFamily::Joe => (1.0..f64::INFINITY).contains(&theta),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "parameter {theta} out of range for {family:?}"
            )));
        }
        let theta = if family == CopulaFamily::Independence {
            0.0
        } else {
            theta
        };
        Ok(Self { family, theta })
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Population Kendall's tau.
    pub fn kendall_tau(&self) -> f64 {
        let t = self.theta;
        match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Gaussian => 2.0 / PI * t.asin(),
            CopulaFamily::Clayton => t / (t + 2.0),
            CopulaFamily::Gumbel => 1.0 - 1.0 / t,
            CopulaFamily::Joe => {
                let terms = 100_000;
                let sum: f64 = (1..=terms)
                    .map(|k| {
                        let k = k as f64;
                        1.0 / (k * (t * k + 2.0) * (t * (k - 1.0) + 2.0))
                    })
                    .sum();
                // Remaining terms behave like 1 / (t^2 k^3).
                let tail = 1.0 / (2.0 * t * t * (terms as f64 + 0.5).powi(2));
                1.0 - 4.0 * (sum + tail)
            }
        }
    }

    /// `h(u | v) = dC(u, v) / dv`, the conditional distribution of the first
    /// argument given the second.
    pub fn h(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let t = self.theta;
        let value = match self.family {
            CopulaFamily::Independence => u,
            CopulaFamily::Gaussian => {
                normal_cdf((normal_quantile(u) - t * normal_quantile(v)) / (1.0 - t * t).sqrt())
            }
            CopulaFamily::Clayton => {
                let s = u.powf(-t) + v.powf(-t) - 1.0;
                (-(1.0 + t) * v.ln() - (1.0 / t + 1.0) * s.ln()).exp()
            }
            CopulaFamily::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let a = (x.powf(t) + y.powf(t)).powf(1.0 / t);
                (-a + (1.0 - t) * a.ln() + (t - 1.0) * y.ln() + y).exp()
            }
            CopulaFamily::Joe => {
                let (ub, vb) = ((1.0 - u).powf(t), (1.0 - v).powf(t));
                let s = ub + vb - ub * vb;
                s.powf(1.0 / t - 1.0) * (1.0 - v).powf(t - 1.0) * (1.0 - ub)
            }
        };
        value.clamp(0.0, 1.0)
    }

    /// Solves `h(u | v) = w` for `u`.
    pub fn h_inverse(&self, w: f64, v: f64) -> f64 {
        let (w, v) = (clamp_unit(w), clamp_unit(v));
        let t = self.theta;
        let u = match self.family {
            CopulaFamily::Independence => w,
            CopulaFamily::Gaussian => {
                normal_cdf(normal_quantile(w) * (1.0 - t * t).sqrt() + t * normal_quantile(v))
            }
            CopulaFamily::Clayton => {
                let base = (w.ln() + (1.0 + t) * v.ln()) * (-t / (1.0 + t));
                (base.exp() + 1.0 - v.powf(-t)).powf(-1.0 / t)
            }
            CopulaFamily::Gumbel | CopulaFamily::Joe => {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.h(mid, v) < w {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= H_INVERSE_TOL * hi.min(1.0 - lo).max(f64::MIN_POSITIVE) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        clamp_unit(u)
    }

    /// One draw of a uniform pair. Archimedean families use their frailty
    /// representation; the Gaussian family uses correlated normals.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let t = self.theta;
        match self.family {
            CopulaFamily::Independence => (open_uniform(rng), open_uniform(rng)),
            CopulaFamily::Gaussian => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                let z2 = t * z1 + (1.0 - t * t).sqrt() * z2;
                (clamp_unit(normal_cdf(z1)), clamp_unit(normal_cdf(z2)))
            }
            CopulaFamily::Clayton | CopulaFamily::Gumbel | CopulaFamily::Joe => {
                let frailty = self.frailty(rng);
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                (self.generator(e1 / frailty), self.generator(e2 / frailty))
            }
        }
    }

    fn frailty<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = self.theta;
        match self.family {
            CopulaFamily::Clayton => Gamma::new(1.0 / t, 1.0).expect("valid gamma").sample(rng),
            CopulaFamily::Gumbel => positive_stable(1.0 / t, rng),
            CopulaFamily::Joe => sibuya(1.0 / t, rng),
            _ => 1.0,
        }
    }

    // Laplace transform of the frailty.
    fn generator(&self, s: f64) -> f64 {
        let t = self.theta;
        let value = match self.family {
            CopulaFamily::Clayton => (-s.ln_1p() / t).exp(),
            CopulaFamily::Gumbel => (-s.powf(1.0 / t)).exp(),
            CopulaFamily::Joe => -((-(-s).exp_m1()).ln() / t).exp_m1(),
            _ => (-s).exp(),
        };
        clamp_unit(value)
    }

    /// Short label such as `Cl(0.5)`.
    pub fn label(&self) -> String {
        let name = match self.family {
            CopulaFamily::Independence => return "Ind.".into(),
            CopulaFamily::Gaussian => "Ga",
            CopulaFamily::Clayton => "Cl",
            CopulaFamily::Gumbel => "Gu",
            CopulaFamily::Joe => "Joe",
        };
        format!("{name}({})", self.theta)
    }
}

/// Positive stable variable with Laplace transform `exp(-t^alpha)`,
/// by Kanter's representation.
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u = PI * open_uniform(rng);
    let w: f64 = Exp1.sample(rng);
    let a = ((alpha * u).sin() / u.sin()).powf(1.0 / (1.0 - alpha)) * ((1.0 - alpha) * u).sin()
        / (alpha * u).sin();
    (a / w).powf((1.0 - alpha) / alpha)
}

/// Sibuya variable with parameter `alpha`, by inverting its survival
/// function `P(V > k) = Gamma(k + 1 - alpha) / (Gamma(1 - alpha) k!)`.
fn sibuya<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let ln_u = open_uniform(rng).ln();
    let ln_norm = ln_gamma(1.0 - alpha);
    let ln_survival = |k: f64| ln_gamma(k + 1.0 - alpha) - ln_norm - ln_gamma(k + 1.0);
    if ln_survival(1.0) <= ln_u {
        return 1.0;
    }
    // Smallest k with survival(k) <= u lies in (lo, hi].
    let mut lo = 1.0;
    let mut hi = 2.0;
    while ln_survival(hi) > ln_u {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return hi;
        }
    }
    while hi - lo > 1.0 {
        let mid = (0.5 * (lo + hi)).floor();
        if mid <= lo || mid >= hi {
            break;
        }
        if ln_survival(mid) > ln_u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `n` i.i.d. pairs from a copula.
pub fn copula_pair_sample<R: Rng + ?Sized>(
    copula: &Copula,
    n: usize,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    (0..n).map(|_| copula.sample_pair(rng)).collect()
}

// Vines

/// One edge `pair[0], pair[1] | given` of a regular vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VineEdge {
    /// Tree level, starting at 1.
    pub tree: usize,
    pub pair: [usize; 2],
    #[serde(default)]
    pub given: Vec<usize>,
    pub copula: Copula,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Fresh {
        out: usize,
    },
    Inverse {
        out: usize,
        w: usize,
        cond: usize,
        edge: usize,
    },
    Forward {
        out: usize,
        u: usize,
        cond: usize,
        edge: usize,
    },
}

/// A validated regular vine with a precompiled sampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct VineSpec {
    dim: usize,
    edges: Vec<VineEdge>,
    steps: Vec<Step>,
    output: Vec<usize>,
    slots: usize,
}

fn mask_of(vars: &[usize]) -> u64 {
    vars.iter().fold(0, |m, &v| m | 1 << v)
}

fn find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) -> bool {
    let (ra, rb) = (find_root(parent, a), find_root(parent, b));
    if ra == rb {
        return false;
    }
    parent[ra] = rb;
    true
}

impl VineSpec {
    pub fn new(dim: usize, edges: Vec<VineEdge>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidVine(msg));
        if !(2..=64).contains(&dim) {
            return bad(format!("dimension must be between 2 and 64, got {dim}"));
        }
        for (i, e) in edges.iter().enumerate() {
            let mut vars: Vec<usize> = e.pair.iter().chain(&e.given).copied().collect();
            if e.tree == 0 || e.tree >= dim {
                return bad(format!("edge {i}: tree {} outside 1..{}", e.tree, dim - 1));
            }
            if e.given.len() != e.tree - 1 {
                return bad(format!(
                    "edge {i}: tree {} needs {} conditioning variables",
                    e.tree,
                    e.tree - 1
                ));
            }
            if vars.iter().any(|&v| v >= dim) {
                return bad(format!("edge {i}: variable index out of range"));
            }
            vars.sort_unstable();
            vars.dedup();
            if vars.len() != e.tree + 1 {
                return bad(format!("edge {i}: repeated variable"));
            }
        }
        let mut by_tree: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for (i, e) in edges.iter().enumerate() {
            by_tree[e.tree].push(i);
        }
        for tree in 1..dim {
            if by_tree[tree].len() != dim - tree {
                return bad(format!(
                    "tree {tree} has {} edges, needs {}",
                    by_tree[tree].len(),
                    dim - tree
                ));
            }
        }
        let constraint = |e: &VineEdge| mask_of(&e.pair) | mask_of(&e.given);
        let mut parent: Vec<usize> = (0..dim).collect();
        for &i in &by_tree[1] {
            if !union(&mut parent, edges[i].pair[0], edges[i].pair[1]) {
                return bad("first tree contains a cycle".into());
            }
        }
        for tree in 2..dim {
            let lower = &by_tree[tree - 1];
            let mut parent: Vec<usize> = (0..lower.len()).collect();
            for &i in &by_tree[tree] {
                let (c, d) = (constraint(&edges[i]), mask_of(&edges[i].given));
                let mut joined = None;
                'search: for (p, &f) in lower.iter().enumerate() {
                    for (q, &g) in lower.iter().enumerate().skip(p + 1) {
                        let (cf, cg) = (constraint(&edges[f]), constraint(&edges[g]));
                        if cf | cg == c && cf & cg == d {
                            joined = Some((p, q));
                            break 'search;
                        }
                    }
                }
                let Some((p, q)) = joined else {
                    return bad(format!(
                        "edge {i} in tree {tree} violates the proximity condition"
                    ));
                };
                if !union(&mut parent, p, q) {
                    return bad(format!("tree {tree} contains a cycle"));
                }
            }
        }
        let (steps, output, slots) = compile(dim, &edges)?;
        Ok(Self {
            dim,
            edges,
            steps,
            output,
            slots,
        })
    }

    /// All edges independent.
    pub fn independence(dim: usize) -> Result<Self> {
        Self::d_vine(
            dim,
            &vec![Copula::INDEPENDENCE; dim.saturating_sub(1)],
            Copula::INDEPENDENCE,
        )
    }

    /// D-vine on the path `0 - 1 - ... - dim-1`, with the given first-tree
    /// copulas and one copula for every deeper edge.
    pub fn d_vine(dim: usize, first_tree: &[Copula], deeper: Copula) -> Result<Self> {
        if dim < 2 || first_tree.len() != dim - 1 {
            return Err(Error::InvalidVine(format!(
                "a {dim}-variable path needs {} edges",
                dim.saturating_sub(1)
            )));
        }
        let mut edges = Vec::new();
        for tree in 1..dim {
            for i in 0..dim - tree {
                edges.push(VineEdge {
                    tree,
                    pair: [i, i + tree],
                    given: (i + 1..i + tree).collect(),
                    copula: if tree == 1 { first_tree[i] } else { deeper },
                });
            }
        }
        Self::new(dim, edges)
    }

    /// The default dependence structure for `r1` continuous followed by `r2`
    /// count variables: a D-vine path with same-type neighbours adjacent,
    /// `same` on same-type first-tree edges, `cross` on the single
    /// cross-type first-tree edge and on every deeper edge. A `same`
    /// parameter of `None` makes the same-type edges independent.
    pub fn default_structure(
        r1: usize,
        r2: usize,
        family: CopulaFamily,
        same: Option<f64>,
        cross: f64,
    ) -> Result<Self> {
        if r1 == 0 || r2 == 0 {
            return Err(Error::InvalidVine(
                "need at least one variable of each type".into(),
            ));
        }
        if family == CopulaFamily::Independence {
            return Self::independence(r1 + r2);
        }
        let cross = Copula::new(family, cross)?;
        let same = match same {
            Some(theta) => Copula::new(family, theta)?,
            None => Copula::INDEPENDENCE,
        };
        let first: Vec<Copula> = (0..r1 + r2 - 1)
            .map(|i| if i + 1 == r1 { cross } else { same })
            .collect();
        Self::d_vine(r1 + r2, &first, cross)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edges(&self) -> &[VineEdge] {
        &self.edges
    }

    /// Fills `out` (length `dim`) with one uniform vector; `slots` is scratch.
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, slots: &mut [f64], out: &mut [f64]) {
        for step in &self.steps {
            match *step {
                Step::Fresh { out } => slots[out] = open_uniform(rng),
                Step::Inverse { out, w, cond, edge } => {
                    slots[out] = self.edges[edge].copula.h_inverse(slots[w], slots[cond])
                }
                Step::Forward { out, u, cond, edge } => {
                    slots[out] = self.edges[edge].copula.h(slots[u], slots[cond])
                }
            }
        }
        for (o, &s) in out.iter_mut().zip(&self.output) {
            *o = slots[s];
        }
    }
}

/// Orders the variables by peeling a conditioned variable of the top edge
/// off repeatedly, then records the h-function steps that sample each
/// variable given the ones before it.
fn compile(dim: usize, edges: &[VineEdge]) -> Result<(Vec<Step>, Vec<usize>, usize)> {
    let bad = |msg: &str| Error::InvalidVine(msg.to_string());
    let mut alive = vec![true; edges.len()];
    let mut removal: Vec<(usize, Vec<usize>)> = Vec::new();
    for m in (2..=dim).rev() {
        let top = (0..edges.len())
            .find(|&i| alive[i] && edges[i].tree == m - 1)
            .ok_or_else(|| bad("missing top edge"))?;
        let mut chosen = None;
        for &var in &edges[top].pair {
            let column: Vec<usize> = (1..m)
                .filter_map(|tree| {
                    let hits: Vec<usize> = (0..edges.len())
                        .filter(|&i| {
                            alive[i] && edges[i].tree == tree && edges[i].pair.contains(&var)
                        })
                        .collect();
                    (hits.len() == 1).then(|| hits[0])
                })
                .collect();
            let leaks = (0..edges.len())
                .any(|i| alive[i] && edges[i].given.contains(&var) && !column.contains(&i));
            if column.len() == m - 1 && !leaks {
                chosen = Some((var, column));
                break;
            }
        }
        let (var, column) = chosen.ok_or_else(|| bad("vine cannot be ordered for sampling"))?;
        for &i in &column {
            alive[i] = false;
        }
        removal.push((var, column));
    }
    let last = (0..dim)
        .find(|v| removal.iter().all(|(r, _)| r != v))
        .expect("one variable left");
    removal.push((last, Vec::new()));
    removal.reverse();

    let by_constraint: HashMap<u64, usize> = edges
        .iter()
        .enumerate()
        .map(|(i, e)| (mask_of(&e.pair) | mask_of(&e.given), i))
        .collect();
    let mut plan = Plan {
        edges,
        by_constraint,
        slots: HashMap::new(),
        steps: Vec::new(),
    };
    let mut sampled = 0u64;
    for (var, column) in &removal {
        if column.is_empty() {
            plan.fresh(*var, 0);
        } else {
            let mut w = plan.fresh(*var, sampled);
            for &edge in column.iter().rev() {
                let e = &edges[edge];
                let other = if e.pair[0] == *var {
                    e.pair[1]
                } else {
                    e.pair[0]
                };
                let given = mask_of(&e.given);
                let cond = plan.require(other, given)?;
                let out = plan.slot(*var, given);
                plan.steps.push(Step::Inverse { out, w, cond, edge });
                w = out;
            }
        }
        sampled |= 1 << var;
    }
    let output = (0..dim).map(|v| plan.slots[&(v, 0)]).collect();
    Ok((plan.steps, output, plan.slots.len()))
}

struct Plan<'a> {
    edges: &'a [VineEdge],
    by_constraint: HashMap<u64, usize>,
    // (variable, conditioning mask) -> slot holding F(variable | mask)
    slots: HashMap<(usize, u64), usize>,
    steps: Vec<Step>,
}

impl Plan<'_> {
    fn slot(&mut self, var: usize, given: u64) -> usize {
        let next = self.slots.len();
        *self.slots.entry((var, given)).or_insert(next)
    }

    fn fresh(&mut self, var: usize, given: u64) -> usize {
        let out = self.slot(var, given);
        self.steps.push(Step::Fresh { out });
        out
    }

    // Every family here is exchangeable, so the conditional of either
    // conditioned variable is the same h-function with arguments swapped.
    fn require(&mut self, var: usize, given: u64) -> Result<usize> {
        if let Some(&s) = self.slots.get(&(var, given)) {
            return Ok(s);
        }
        let missing =
            || Error::InvalidVine("a required conditional distribution is not in the vine".into());
        let &edge = self
            .by_constraint
            .get(&(given | 1 << var))
            .ok_or_else(missing)?;
        let e = &self.edges[edge];
        if !e.pair.contains(&var) {
            return Err(missing());
        }
        let other = if e.pair[0] == var {
            e.pair[1]
        } else {
            e.pair[0]
        };
        let inner = mask_of(&e.given);
        let u = self.require(var, inner)?;
        let cond = self.require(other, inner)?;
        let out = self.slot(var, given);
        self.steps.push(Step::Forward { out, u, cond, edge });
        Ok(out)
    }
}

/// `n` rows of uniforms from a vine, row-major.
pub fn vine_sample<R: Rng + ?Sized>(vine: &VineSpec, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut slots = vec![0.0; vine.slots];
    (0..n)
        .map(|_| {
            let mut row = vec![0.0; vine.dim];
            vine.sample_into(rng, &mut slots, &mut row);
            row
        })
        .collect()
}

// Datasets

/// Marginals plus a vine, ready to produce samples.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    marginals: Vec<PreparedMarginal>,
    vine: VineSpec,
    r1: usize,
    r2: usize,
}

impl DataGenerator {
    /// Continuous marginals must come before count marginals.
    pub fn new(marginals: &[MarginalSpec], vine: VineSpec) -> Result<Self> {
        if marginals.len() != vine.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} marginals for a {}-variable vine",
                marginals.len(),
                vine.dim()
            )));
        }
        for m in marginals {
            m.validate()?;
        }
        let r1 = marginals.iter().take_while(|m| m.is_continuous()).count();
        if r1 == 0 || r1 == marginals.len() || marginals[r1..].iter().any(|m| m.is_continuous()) {
            return Err(Error::InvalidParameter(
                "need continuous marginals first, then at least one count marginal".into(),
            ));
        }
        let prepared: Vec<PreparedMarginal> = marginals
            .iter()
            .map(|m| PreparedMarginal::new(*m))
            .collect();
        debug_assert!(prepared[..r1].iter().all(PreparedMarginal::is_continuous));
        Ok(Self {
            marginals: prepared,
            vine,
            r1,
            r2: marginals.len() - r1,
        })
    }

    pub fn r1(&self) -> usize {
        self.r1
    }

    pub fn r2(&self) -> usize {
        self.r2
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<MixedSample> {
        let mut slots = vec![0.0; self.vine.slots];
        let mut row = vec![0.0; self.vine.dim];
        let mut x = Vec::with_capacity(n * self.r1);
        let mut y = Vec::with_capacity(n * self.r2);
        for _ in 0..n {
            self.vine.sample_into(rng, &mut slots, &mut row);
            for (l, (m, &u)) in self.marginals.iter().zip(&row).enumerate() {
                let q = m.quantile(u);
                if l < self.r1 {
                    // Quantiles at the extreme low end can round to zero.
                    x.push(q.max(f64::MIN_POSITIVE));
                } else {
                    y.push(q as u64);
                }
            }
        }
        MixedSample::from_flat(x, y, self.r1, self.r2)
    }
}

pub fn generate_dataset<R: Rng + ?Sized>(
    marginals: &[MarginalSpec],
    vine: &VineSpec,
    n: usize,
    rng: &mut R,
) -> Result<MixedSample> {
    DataGenerator::new(marginals, vine.clone())?.sample(n, rng)
}
