//! Closed-form test statistics and the characteristic-function competitor.
//!
//! T and D share one engine. Both are double sums over pairs of rows of a
//! product of per-coordinate kernels, so they are driven by a handful of
//! `n x n` factor matrices: one per block in two-vector mode, one per
//! coordinate in total mode. A permutation of the rows within a block only
//! reindexes its factor, so permuted statistics never rebuild a kernel.

use std::collections::HashMap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::OscillatoryIntegral;
use crate::summation::mean_of;
use crate::transforms::{MixedSample, Mode, WeightParams};
use crate::variance::{sigma_hat_sq, transformed_columns};

/// Default scale of the Gaussian weight in the characteristic-function statistic.
pub const DEFAULT_D_SIGMA: f64 = 0.5;

/// Default `(a, b)` used when the caller gives none.
pub fn default_tuning(mode: Mode) -> (f64, f64) {
    match mode {
        Mode::TwoVector => (1.0, 5.0),
        Mode::Total => (1.0, 1.0),
    }
}

/// Integration domain of the D statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DDomain {
    /// All of `R^r` with weight `exp(-sum u^2 / (2 sigma^2))`. The integral
    /// has a closed form, so the kernels are exact.
    #[default]
    Whole,
    /// Positive half-line for continuous coordinates and `[0, 1]` for count
    /// coordinates, weight `exp(-sum sigma^2 u^2 / 2)`, by quadrature.
    Orthant,
}

impl DDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            DDomain::Whole => "whole",
            DDomain::Orthant => "orthant",
        }
    }
}

impl std::fmt::Display for DDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(DDomain::Whole),
            "orthant" => Ok(DDomain::Orthant),
            other => Err(Error::InvalidParameter(format!(
                "unknown D domain `{other}`"
            ))),
        }
    }
}

/// Per-coordinate scales of the Gaussian weight of the D statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSigma {
    x: Vec<f64>,
    y: Vec<f64>,
    #[serde(default)]
    domain: DDomain,
}

impl DSigma {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::InvalidParameter(
                "sigma needs at least one entry per block".into(),
            ));
        }
        if let Some(s) = x.iter().chain(&y).find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {s}"
            )));
        }
        Ok(Self {
            x,
            y,
            domain: DDomain::default(),
        })
    }

    pub fn with_domain(mut self, domain: DDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn domain(&self) -> DDomain {
        self.domain
    }

    pub fn uniform(sigma: f64, r1: usize, r2: usize) -> Result<Self> {
        Self::new(vec![sigma; r1], vec![sigma; r2])
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    fn check_against(&self, sample: &MixedSample) -> Result<()> {
        if self.x.len() != sample.r1() || self.y.len() != sample.r2() {
            return Err(Error::DimensionMismatch(format!(
                "sigma has {}+{} entries, sample has {}+{} columns",
                self.x.len(),
                self.y.len(),
                sample.r1(),
                sample.r2()
            )));
        }
        Ok(())
    }
}

/// A statistic together with its tuning.
#[derive(Debug, Clone, PartialEq)]
pub enum StatisticKind {
    I { mode: Mode, weight: WeightParams },
    T { mode: Mode, weight: WeightParams },
    StI { mode: Mode, weight: WeightParams },
    D { mode: Mode, sigma: DSigma },
}

impl StatisticKind {
    pub fn mode(&self) -> Mode {
        match self {
            StatisticKind::I { mode, .. }
            | StatisticKind::T { mode, .. }
            | StatisticKind::StI { mode, .. }
            | StatisticKind::D { mode, .. } => *mode,
        }
    }

    /// Short lowercase name: `i`, `t`, `sti` or `d`.
    pub fn name(&self) -> &'static str {
        match self {
            StatisticKind::I { .. } => "i",
            StatisticKind::T { .. } => "t",
            StatisticKind::StI { .. } => "sti",
            StatisticKind::D { .. } => "d",
        }
    }

    /// I-type statistics are signed; tests compare their absolute values.
    pub fn is_signed(&self) -> bool {
        matches!(self, StatisticKind::I { .. } | StatisticKind::StI { .. })
    }
}

/// An evaluated statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct StatValue {
    pub value: f64,
    pub kind: StatisticKind,
    pub n: usize,
}

impl StatValue {
    /// Value for display: T and D are integrals of squares, so float noise
    /// below zero is shown as zero.
    pub fn reported(&self) -> f64 {
        match self.kind {
            StatisticKind::T { .. } | StatisticKind::D { .. } => self.value.max(0.0),
            _ => self.value,
        }
    }
}

fn check_nonempty(sample: &MixedSample) -> Result<()> {
    if sample.n() == 0 {
        return Err(Error::EmptySample);
    }
    Ok(())
}

fn i_from_columns(cols: &[Vec<f64>], perms: &[&[usize]]) -> f64 {
    let n = cols[0].len();
    let joint = mean_of(n, |i| {
        cols.iter().zip(perms).map(|(c, p)| c[p[i]]).product()
    });
    let marginal: f64 = cols.iter().map(|c| mean_of(n, |i| c[i])).product();
    joint - marginal
}

/// The I statistic: joint empirical mean of the row transforms minus the
/// product of their marginal means.
pub fn i_statistic(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Result<f64> {
    check_nonempty(sample)?;
    wp.check_against(sample)?;
    let cols = transformed_columns(sample, wp, mode);
    let identity: Vec<usize> = (0..sample.n()).collect();
    let perms: Vec<&[usize]> = vec![&identity; cols.len()];
    Ok(i_from_columns(&cols, &perms))
}

/// The T statistic, computed from the factorized pair-kernel form in
/// `O(n^2 (r1 + r2))`. The raw value may be slightly negative from rounding.
pub fn t_statistic(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Result<f64> {
    check_nonempty(sample)?;
    wp.check_against(sample)?;
    let engine = KernelEngine::new(t_factors(sample, wp, mode));
    Ok(engine.combine(&engine.identity()))
}

/// The three pair sums making up T, kept separate for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTerms {
    /// `mean_{j,k}` of the product of pair kernels.
    pub joint: f64,
    /// Product of the kernel means.
    pub marginal: f64,
    /// Twice the mean over rows of the product of kernel row means.
    pub cross: f64,
}

impl TTerms {
    pub fn value(&self) -> f64 {
        self.joint + self.marginal - self.cross
    }
}

pub fn t_terms(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Result<TTerms> {
    check_nonempty(sample)?;
    wp.check_against(sample)?;
    let engine = KernelEngine::new(t_factors(sample, wp, mode));
    let (joint, cross) = engine.joint_and_cross(&engine.identity());
    Ok(TTerms {
        joint,
        marginal: engine.marginal,
        cross: 2.0 * cross,
    })
}

/// `sqrt(n) I / sigma_hat`.
pub fn standardized_i(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Result<f64> {
    let i = i_statistic(sample, wp, mode)?;
    let sigma = sigma_hat_sq(sample, wp, mode)?.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok((sample.n() as f64).sqrt() / sigma * i)
}

/// The characteristic-function statistic: `n` times the weighted squared
/// distance between the joint ecf and the product of the marginal ecfs.
///
/// The squared modulus expands into pair sums of one-dimensional integrals
/// of `e^{i u d}` against the weight. Over the whole line these are Gaussian
/// kernels in closed form; on the [`DDomain::Orthant`] domain they are
/// evaluated by adaptive composite Gauss–Legendre.
pub fn d_statistic(sample: &MixedSample, sigma: &DSigma, mode: Mode) -> Result<f64> {
    check_nonempty(sample)?;
    sigma.check_against(sample)?;
    let n = sample.n() as f64;
    Ok(match sigma.domain() {
        DDomain::Whole => {
            let engine = KernelEngine::new(d_whole_factors(sample, sigma, mode));
            n * engine.combine(&engine.identity())
        }
        DDomain::Orthant => {
            let engine = KernelEngine::new(d_factors(sample, sigma, mode));
            n * engine.combine(&engine.identity())
        }
    })
}

/// Evaluates any statistic kind.
pub fn evaluate(sample: &MixedSample, kind: &StatisticKind) -> Result<StatValue> {
    let value = match kind {
        StatisticKind::I { mode, weight } => i_statistic(sample, weight, *mode)?,
        StatisticKind::T { mode, weight } => t_statistic(sample, weight, *mode)?,
        StatisticKind::StI { mode, weight } => standardized_i(sample, weight, *mode)?,
        StatisticKind::D { mode, sigma } => d_statistic(sample, sigma, *mode)?,
    };
    Ok(StatValue {
        value,
        kind: kind.clone(),
        n: sample.n(),
    })
}

// Pair-kernel engine

trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
    fn scale(self, by: f64) -> Self;
    fn real(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn scale(self, by: f64) -> Self {
        self * by
    }
    fn real(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn scale(self, by: f64) -> Self {
        self * by
    }
    fn real(self) -> f64 {
        self.re
    }
}

/// Row-major `n x n` kernel with cached row sums.
#[derive(Debug, Clone)]
struct PairKernel<S> {
    n: usize,
    values: Vec<S>,
    row_means: Vec<S>,
    mean: S,
}

impl<S: Scalar> PairKernel<S> {
    fn from_fn(n: usize, mut entry: impl FnMut(usize, usize) -> S) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                values.push(entry(j, k));
            }
        }
        Self::from_values(n, values)
    }

    fn from_values(n: usize, values: Vec<S>) -> Self {
        let inv = 1.0 / n as f64;
        let row_means: Vec<S> = values
            .chunks(n)
            .map(|row| row.iter().fold(S::zero(), |acc, &v| acc + v).scale(inv))
            .collect();
        let mean = row_means
            .iter()
            .fold(S::zero(), |acc, &v| acc + v)
            .scale(inv);
        Self {
            n,
            values,
            row_means,
            mean,
        }
    }

    fn hadamard(mut self, other: &Self) -> Self {
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v = *v * *w;
        }
        Self::from_values(self.n, self.values)
    }
}

struct KernelEngine<S> {
    n: usize,
    factors: Vec<PairKernel<S>>,
    // Product of the factor means; unchanged by any reindexing.
    marginal: S,
}

impl<S: Scalar> KernelEngine<S> {
    fn new(factors: Vec<PairKernel<S>>) -> Self {
        let n = factors[0].n;
        let marginal = factors.iter().fold(S::one(), |acc, f| acc * f.mean);
        Self {
            n,
            factors,
            marginal,
        }
    }

    fn identity(&self) -> Vec<Vec<usize>> {
        vec![(0..self.n).collect(); self.factors.len()]
    }

    /// `mean_{j,k} prod K_f[p_f(j), p_f(k)] + prod mean(K_f)
    ///  - 2 mean_j prod rowmean_f[p_f(j)]`, real part.
    fn combine(&self, perms: &[Vec<usize>]) -> f64 {
        let (joint, cross) = self.joint_and_cross(perms);
        (joint + self.marginal - cross.scale(2.0)).real()
    }

    fn joint_and_cross(&self, perms: &[Vec<usize>]) -> (S, S) {
        let n = self.n;
        let inv = 1.0 / n as f64;
        let mut joint = S::zero();
        let mut cross = S::zero();
        for j in 0..n {
            let mut row_acc = S::zero();
            match self.factors.as_slice() {
                [f0, f1] => {
                    let (r0, r1) = (
                        &f0.values[perms[0][j] * n..][..n],
                        &f1.values[perms[1][j] * n..][..n],
                    );
                    let (p0, p1) = (&perms[0], &perms[1]);
                    for k in 0..n {
                        row_acc = row_acc + r0[p0[k]] * r1[p1[k]];
                    }
                }
                factors => {
                    let rows: Vec<&[S]> = factors
                        .iter()
                        .zip(perms)
                        .map(|(f, p)| &f.values[p[j] * n..][..n])
                        .collect();
                    for k in 0..n {
                        let prod = rows
                            .iter()
                            .zip(perms)
                            .fold(S::one(), |acc, (r, p)| acc * r[p[k]]);
                        row_acc = row_acc + prod;
                    }
                }
            }
            joint = joint + row_acc.scale(inv);
            cross = cross
                + self
                    .factors
                    .iter()
                    .zip(perms)
                    .fold(S::one(), |acc, (f, p)| acc * f.row_means[p[j]]);
        }
        (joint.scale(inv), cross.scale(inv))
    }
}

fn t_axis_kernel(values: &[f64], shift: f64) -> PairKernel<f64> {
    PairKernel::from_fn(values.len(), |j, k| 1.0 / (values[j] + values[k] + shift))
}

fn t_factors(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Vec<PairKernel<f64>> {
    let axes: Vec<PairKernel<f64>> = (0..sample.dim())
        .map(|l| {
            let shift = if l < sample.r1() {
                wp.a()[l]
            } else {
                wp.b()[l - sample.r1()] + 1.0
            };
            t_axis_kernel(&sample.axis_values(l), shift)
        })
        .collect();
    group_factors(axes, sample.r1(), mode)
}

fn group_factors<S: Scalar>(axes: Vec<PairKernel<S>>, r1: usize, mode: Mode) -> Vec<PairKernel<S>> {
    match mode {
        Mode::Total => axes,
        Mode::TwoVector => {
            let mut it = axes.into_iter();
            let x = it
                .by_ref()
                .take(r1)
                .reduce(|acc, k| acc.hadamard(&k))
                .expect("r1 > 0");
            let y = it.reduce(|acc, k| acc.hadamard(&k)).expect("r2 > 0");
            vec![x, y]
        }
    }
}

fn d_axis_kernel(
    values: &[f64],
    mut integral: OscillatoryIntegral,
    integer: bool,
) -> PairKernel<Complex64> {
    let n = values.len();
    let mut values_out = vec![Complex64::new(0.0, 0.0); n * n];
    let mut cache: HashMap<i64, Complex64> = HashMap::new();
    for j in 0..n {
        for k in j..n {
            let diff = values[j] - values[k];
            let g = if integer {
                let key = diff.abs() as i64;
                let g = *cache
                    .entry(key)
                    .or_insert_with(|| integral.value(key as f64));
                if diff < 0.0 {
                    g.conj()
                } else {
                    g
                }
            } else {
                integral.value(diff)
            };
            values_out[j * n + k] = g;
            values_out[k * n + j] = g.conj();
        }
    }
    PairKernel::from_values(n, values_out)
}

/// `int_R e^{i u d} exp(-u^2 / (2 sigma^2)) du`.
pub fn whole_line_kernel(sigma: f64, d: f64) -> f64 {
    sigma * std::f64::consts::TAU.sqrt() * (-0.5 * sigma * sigma * d * d).exp()
}

fn d_whole_factors(sample: &MixedSample, sigma: &DSigma, mode: Mode) -> Vec<PairKernel<f64>> {
    let axes: Vec<PairKernel<f64>> = (0..sample.dim())
        .map(|l| {
            let s = if l < sample.r1() {
                sigma.x()[l]
            } else {
                sigma.y()[l - sample.r1()]
            };
            let values = sample.axis_values(l);
            let n = values.len();
            let mut out = vec![0.0; n * n];
            for j in 0..n {
                for k in j..n {
                    let g = whole_line_kernel(s, values[j] - values[k]);
                    out[j * n + k] = g;
                    out[k * n + j] = g;
                }
            }
            PairKernel::from_values(n, out)
        })
        .collect();
    group_factors(axes, sample.r1(), mode)
}

fn d_factors(sample: &MixedSample, sigma: &DSigma, mode: Mode) -> Vec<PairKernel<Complex64>> {
    let axes: Vec<PairKernel<Complex64>> = (0..sample.dim())
        .map(|l| {
            let values = sample.axis_values(l);
            if l < sample.r1() {
                d_axis_kernel(
                    &values,
                    OscillatoryIntegral::for_continuous(sigma.x()[l]),
                    false,
                )
            } else {
                d_axis_kernel(
                    &values,
                    OscillatoryIntegral::for_count(sigma.y()[l - sample.r1()]),
                    true,
                )
            }
        })
        .collect();
    group_factors(axes, sample.r1(), mode)
}

// Permutation support

/// Row permutations for every non-anchor group of coordinates.
///
/// Two-vector mode has one group (the count block, the continuous block
/// stays in place); total mode has one group per coordinate after the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shuffle {
    perms: Vec<Vec<usize>>,
}

impl Shuffle {
    /// Number of permutations a shuffle needs for the given layout.
    pub fn groups(mode: Mode, r1: usize, r2: usize) -> usize {
        match mode {
            Mode::TwoVector => 1,
            Mode::Total => r1 + r2 - 1,
        }
    }

    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        for p in &perms {
            let mut seen = vec![false; p.len()];
            for &i in p {
                if i >= p.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidParameter(
                        "shuffle entry is not a permutation".into(),
                    ));
                }
            }
        }
        Ok(Self { perms })
    }

    pub fn identity(n: usize, groups: usize) -> Self {
        Self {
            perms: vec![(0..n).collect(); groups],
        }
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// The sample obtained by applying the shuffle to the groups' columns.
    pub fn apply(&self, sample: &MixedSample, mode: Mode) -> Result<MixedSample> {
        let (n, r1, r2) = (sample.n(), sample.r1(), sample.r2());
        self.check(n, Shuffle::groups(mode, r1, r2))?;
        let group_of = |axis: usize| match mode {
            Mode::TwoVector => (axis >= r1).then_some(0),
            Mode::Total => axis.checked_sub(1),
        };
        let mut x = Vec::with_capacity(n * r1);
        let mut y = Vec::with_capacity(n * r2);
        for i in 0..n {
            for j in 0..r1 {
                let row = group_of(j).map_or(i, |g| self.perms[g][i]);
                x.push(sample.x(row, j));
            }
            for k in 0..r2 {
                let row = group_of(r1 + k).map_or(i, |g| self.perms[g][i]);
                y.push(sample.y(row, k));
            }
        }
        MixedSample::from_flat(x, y, r1, r2)
    }

    fn check(&self, n: usize, groups: usize) -> Result<()> {
        if self.perms.len() != groups || self.perms.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "shuffle has {} permutations, layout needs {groups} of length {n}",
                self.perms.len()
            )));
        }
        Ok(())
    }
}

enum Prepared {
    I { cols: Vec<Vec<f64>> },
    StI { cols: Vec<Vec<f64>>, scale: f64 },
    T { engine: KernelEngine<f64> },
    D { engine: KernelEngine<f64> },
    DOrthant { engine: KernelEngine<Complex64> },
}

/// A statistic with its per-sample work done once, so that values for many
/// shuffles of the same sample cost `O(n)` (I types) or `O(n^2)` (T, D).
pub struct PreparedStatistic {
    kind: StatisticKind,
    n: usize,
    groups: usize,
    inner: Prepared,
}

impl PreparedStatistic {
    pub fn prepare(sample: &MixedSample, kind: &StatisticKind) -> Result<Self> {
        check_nonempty(sample)?;
        let mode = kind.mode();
        let inner = match kind {
            StatisticKind::I { weight, .. } => {
                weight.check_against(sample)?;
                Prepared::I {
                    cols: transformed_columns(sample, weight, mode),
                }
            }
            StatisticKind::StI { weight, .. } => {
                weight.check_against(sample)?;
                // sigma_hat depends only on the marginal columns, so it is
                // the same for every shuffle.
                let sigma = sigma_hat_sq(sample, weight, mode)?.sqrt();
                if !(sigma > 0.0) {
                    return Err(Error::DegenerateVariance);
                }
                Prepared::StI {
                    cols: transformed_columns(sample, weight, mode),
                    scale: (sample.n() as f64).sqrt() / sigma,
                }
            }
            StatisticKind::T { weight, .. } => {
                weight.check_against(sample)?;
                Prepared::T {
                    engine: KernelEngine::new(t_factors(sample, weight, mode)),
                }
            }
            StatisticKind::D { sigma, .. } => {
                sigma.check_against(sample)?;
                match sigma.domain() {
                    DDomain::Whole => Prepared::D {
                        engine: KernelEngine::new(d_whole_factors(sample, sigma, mode)),
                    },
                    DDomain::Orthant => Prepared::DOrthant {
                        engine: KernelEngine::new(d_factors(sample, sigma, mode)),
                    },
                }
            }
        };
        Ok(Self {
            kind: kind.clone(),
            n: sample.n(),
            groups: Shuffle::groups(mode, sample.r1(), sample.r2()),
            inner,
        })
    }

    pub fn kind(&self) -> &StatisticKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of permutations a [`Shuffle`] for this statistic carries.
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn observed(&self) -> f64 {
        self.value_with(&vec![(0..self.n).collect(); self.groups + 1])
    }

    /// Value on the sample with the shuffle applied.
    pub fn permuted(&self, shuffle: &Shuffle) -> Result<f64> {
        shuffle.check(self.n, self.groups)?;
        let mut perms = Vec::with_capacity(self.groups + 1);
        perms.push((0..self.n).collect());
        perms.extend(shuffle.perms.iter().cloned());
        Ok(self.value_with(&perms))
    }

    fn value_with(&self, perms: &[Vec<usize>]) -> f64 {
        let slices: Vec<&[usize]> = perms.iter().map(Vec::as_slice).collect();
        match &self.inner {
            Prepared::I { cols } => i_from_columns(cols, &slices),
            Prepared::StI { cols, scale } => scale * i_from_columns(cols, &slices),
            Prepared::T { engine } => engine.combine(perms),
            Prepared::D { engine } => self.n as f64 * engine.combine(perms),
            Prepared::DOrthant { engine } => self.n as f64 * engine.combine(perms),
        }
    }
}
