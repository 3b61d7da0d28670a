//! Empirical transforms of a mixed sample.
//!
//! A sample holds `r1` positive continuous coordinates and `r2` count
//! coordinates per row. The joint empirical transform is
//! `psi_n(s, t) = mean_i exp(-s . x_i) * prod_k t_k^{y_ik}` and the test
//! statistics measure how far it is from a product of marginal transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summation::mean_of;

/// Which null hypothesis a statistic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Independence of the continuous block from the count block.
    #[serde(alias = "two_vector")]
    TwoVector,
    /// Mutual independence of all `r1 + r2` coordinates.
    Total,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TwoVector => "two-vector",
            Mode::Total => "total",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-vector" | "two_vector" => Ok(Mode::TwoVector),
            "total" => Ok(Mode::Total),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

/// `n` rows of a positive continuous block and a count block, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    x: Vec<f64>,
    y: Vec<u64>,
    n: usize,
    r1: usize,
    r2: usize,
}

impl MixedSample {
    /// Builds a sample from rows. Every continuous entry must be finite and
    /// strictly positive.
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<u64>]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} continuous rows but {} count rows",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::EmptySample);
        }
        let r1 = x[0].len();
        let r2 = y[0].len();
        let mut flat_x = Vec::with_capacity(x.len() * r1);
        let mut flat_y = Vec::with_capacity(y.len() * r2);
        for (i, (xr, yr)) in x.iter().zip(y).enumerate() {
            if xr.len() != r1 || yr.len() != r2 {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has a different width"
                )));
            }
            flat_x.extend_from_slice(xr);
            flat_y.extend_from_slice(yr);
        }
        Self::from_flat(flat_x, flat_y, r1, r2)
    }

    /// Builds a sample from columns: `x[j]` is the j-th continuous column.
    pub fn from_columns(x: &[Vec<f64>], y: &[Vec<u64>]) -> Result<Self> {
        let r1 = x.len();
        let r2 = y.len();
        if r1 == 0 || r2 == 0 {
            return Err(Error::DimensionMismatch(
                "need at least one continuous and one count column".into(),
            ));
        }
        let n = x[0].len();
        if x.iter().any(|c| c.len() != n) || y.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("columns differ in length".into()));
        }
        let mut flat_x = Vec::with_capacity(n * r1);
        let mut flat_y = Vec::with_capacity(n * r2);
        for i in 0..n {
            flat_x.extend(x.iter().map(|c| c[i]));
            flat_y.extend(y.iter().map(|c| c[i]));
        }
        Self::from_flat(flat_x, flat_y, r1, r2)
    }

    /// Builds a sample from row-major buffers of widths `r1` and `r2`.
    pub fn from_flat(x: Vec<f64>, y: Vec<u64>, r1: usize, r2: usize) -> Result<Self> {
        if r1 == 0 || r2 == 0 {
            return Err(Error::DimensionMismatch(
                "need at least one continuous and one count column".into(),
            ));
        }
        if x.len() % r1 != 0 || y.len() % r2 != 0 || x.len() / r1 != y.len() / r2 {
            return Err(Error::DimensionMismatch(
                "buffer lengths do not match widths".into(),
            ));
        }
        let n = x.len() / r1;
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if let Some(pos) = x.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidSample(format!(
                "continuous value {} at row {}, column {} is not strictly positive",
                x[pos],
                pos / r1,
                pos % r1
            )));
        }
        Ok(Self { x, y, n, r1, r2 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r1(&self) -> usize {
        self.r1
    }

    pub fn r2(&self) -> usize {
        self.r2
    }

    /// Total number of coordinates.
    pub fn dim(&self) -> usize {
        self.r1 + self.r2
    }

    pub fn x(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.r1 + col]
    }

    pub fn y(&self, row: usize, col: usize) -> u64 {
        self.y[row * self.r2 + col]
    }

    pub fn x_row(&self, row: usize) -> &[f64] {
        &self.x[row * self.r1..(row + 1) * self.r1]
    }

    pub fn y_row(&self, row: usize) -> &[u64] {
        &self.y[row * self.r2..(row + 1) * self.r2]
    }

    pub fn x_column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i, col)).collect()
    }

    pub fn y_column(&self, col: usize) -> Vec<u64> {
        (0..self.n).map(|i| self.y(i, col)).collect()
    }

    /// Coordinate `axis` of every row as reals; continuous axes come first.
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        if axis < self.r1 {
            self.x_column(axis)
        } else {
            (0..self.n)
                .map(|i| self.y(i, axis - self.r1) as f64)
                .collect()
        }
    }

    /// Returns the sample with rows reordered: row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn reorder_rows(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n {
            return Err(Error::DimensionMismatch(
                "row order has the wrong length".into(),
            ));
        }
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.y.len());
        for &i in order {
            x.extend_from_slice(self.x_row(i));
            y.extend_from_slice(self.y_row(i));
        }
        Ok(Self { x, y, ..*self })
    }

    fn check_dims(&self, r1: usize, r2: usize, what: &str) -> Result<()> {
        if r1 != self.r1 || r2 != self.r2 {
            return Err(Error::DimensionMismatch(format!(
                "{what} has dimensions ({r1}, {r2}) but the sample has ({}, {})",
                self.r1, self.r2
            )));
        }
        Ok(())
    }
}

/// A point `(s, t)` with `s >= 0` componentwise and `t` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPoint {
    s: Vec<f64>,
    t: Vec<f64>,
}

impl TransformPoint {
    pub fn new(s: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(
                "every s component must be >= 0".into(),
            ));
        }
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "every t component must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { s, t })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }
}

/// Tuning vectors of the weight `w(s, t) = prod t_k^{b_k} * exp(-sum a_j s_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl WeightParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidParameter(
                "weight vectors must be non-empty".into(),
            ));
        }
        if !a.iter().all(positive) || !b.iter().all(positive) {
            return Err(Error::InvalidParameter(
                "weight parameters must be strictly positive".into(),
            ));
        }
        Ok(Self { a, b })
    }

    /// The same `a` on every continuous axis and the same `b` on every count axis.
    pub fn uniform(a: f64, b: f64, r1: usize, r2: usize) -> Result<Self> {
        Self::new(vec![a; r1], vec![b; r2])
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub(crate) fn check_against(&self, sample: &MixedSample) -> Result<()> {
        sample.check_dims(self.a.len(), self.b.len(), "weight")
    }
}

fn check_point(sample: &MixedSample, p: &TransformPoint) -> Result<()> {
    sample.check_dims(p.s.len(), p.t.len(), "point")
}

fn row_factor(sample: &MixedSample, i: usize, p: &TransformPoint) -> f64 {
    let exponent: f64 = sample.x_row(i).iter().zip(&p.s).map(|(x, s)| s * x).sum();
    let pgf: f64 = sample
        .y_row(i)
        .iter()
        .zip(&p.t)
        .map(|(&y, &t)| pow_count(t, y))
        .product();
    (-exponent).exp() * pgf
}

/// `t^y` with `0^0 = 1`.
pub(crate) fn pow_count(t: f64, y: u64) -> f64 {
    if y == 0 {
        1.0
    } else if y <= i32::MAX as u64 {
        t.powi(y as i32)
    } else {
        t.powf(y as f64)
    }
}

/// Joint empirical transform `psi_n(s, t)`.
pub fn eval_psi_n(sample: &MixedSample, p: &TransformPoint) -> Result<f64> {
    check_point(sample, p)?;
    Ok(mean_of(sample.n, |i| row_factor(sample, i, p)))
}

/// Product of empirical marginal transforms at `p`.
///
/// In two-vector mode this is `L_n(s) * G_n(t)`; in total mode it is the
/// product of all `r1 + r2` univariate transforms.
pub fn eval_marginal_product(sample: &MixedSample, p: &TransformPoint, mode: Mode) -> Result<f64> {
    check_point(sample, p)?;
    let n = sample.n;
    Ok(match mode {
        Mode::TwoVector => {
            let laplace = mean_of(n, |i| {
                let e: f64 = sample.x_row(i).iter().zip(&p.s).map(|(x, s)| s * x).sum();
                (-e).exp()
            });
            let pgf = mean_of(n, |i| {
                sample
                    .y_row(i)
                    .iter()
                    .zip(&p.t)
                    .map(|(&y, &t)| pow_count(t, y))
                    .product()
            });
            laplace * pgf
        }
        Mode::Total => {
            let laplace: f64 = (0..sample.r1)
                .map(|j| mean_of(n, |i| (-p.s[j] * sample.x(i, j)).exp()))
                .product();
            let pgf: f64 = (0..sample.r2)
                .map(|k| mean_of(n, |i| pow_count(p.t[k], sample.y(i, k))))
                .product();
            laplace * pgf
        }
    })
}

/// Empirical process `xi_n = psi_n - (product of marginals)`.
pub fn eval_xi_n(sample: &MixedSample, p: &TransformPoint, mode: Mode) -> Result<f64> {
    Ok(eval_psi_n(sample, p)? - eval_marginal_product(sample, p, mode)?)
}

/// Weight `w(s, t) = prod t_k^{b_k} * exp(-sum a_j s_j)`.
pub fn eval_weight(wp: &WeightParams, p: &TransformPoint) -> Result<f64> {
    if wp.a.len() != p.s.len() || wp.b.len() != p.t.len() {
        return Err(Error::DimensionMismatch(
            "weight and point dimensions differ".into(),
        ));
    }
    let exponent: f64 = wp.a.iter().zip(&p.s).map(|(a, s)| a * s).sum();
    let power: f64 = wp.b.iter().zip(&p.t).map(|(b, t)| t.powf(*b)).product();
    Ok((-exponent).exp() * power)
}
