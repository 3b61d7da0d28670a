//! Variance estimators for the standardized I statistic and the covariance
//! kernels of the limiting Gaussian processes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{AxisRule, ContinuousAxis, CountAxis, DecayRange, QuadratureRule};
use crate::summation::mean_of;
use crate::transforms::{MixedSample, Mode, TransformPoint, WeightParams};

/// Poisson series are summed until the remaining tail mass drops below this.
pub const SERIES_TAIL: f64 = 1e-12;

/// Row-wise transformed columns whose moments drive the I statistic.
///
/// Two-vector mode yields two columns, `prod_j 1/(x_ij + a_j)` and
/// `prod_k 1/(y_ik + b_k + 1)`; total mode yields one column per coordinate.
pub(crate) fn transformed_columns(
    sample: &MixedSample,
    wp: &WeightParams,
    mode: Mode,
) -> Vec<Vec<f64>> {
    let n = sample.n();
    let x_factor = |i: usize, j: usize| 1.0 / (sample.x(i, j) + wp.a()[j]);
    let y_factor = |i: usize, k: usize| 1.0 / (sample.y(i, k) as f64 + wp.b()[k] + 1.0);
    match mode {
        Mode::TwoVector => vec![
            (0..n)
                .map(|i| (0..sample.r1()).map(|j| x_factor(i, j)).product())
                .collect(),
            (0..n)
                .map(|i| (0..sample.r2()).map(|k| y_factor(i, k)).product())
                .collect(),
        ],
        Mode::Total => {
            let mut cols: Vec<Vec<f64>> = (0..sample.r1())
                .map(|j| (0..n).map(|i| x_factor(i, j)).collect())
                .collect();
            cols.extend(
                (0..sample.r2()).map(|k| (0..n).map(|i| y_factor(i, k)).collect::<Vec<_>>()),
            );
            cols
        }
    }
}

fn unbiased_variance(col: &[f64]) -> f64 {
    let n = col.len();
    let mean = mean_of(n, |i| col[i]);
    let ss = crate::summation::sum_terms(n, |i| (col[i] - mean) * (col[i] - mean));
    ss / (n as f64 - 1.0)
}

/// Variance of a product of independent factors from their first moments
/// and squared coefficients of variation, in the rearranged form
/// `prod m1^2 * (prod(1 + c_j) - 1 - sum c_j)`, which is a sum of
/// non-negative elementary symmetric terms.
pub(crate) fn total_variance_from_moments(means: &[f64], cv2: &[f64]) -> f64 {
    let d = cv2.len();
    let mut elementary = vec![0.0; d + 1];
    elementary[0] = 1.0;
    for &c in cv2 {
        for k in (1..=d).rev() {
            elementary[k] += c * elementary[k - 1];
        }
    }
    let higher: f64 = elementary[2..].iter().sum();
    let scale: f64 = means.iter().map(|m| m * m).product();
    scale * higher
}

/// Estimated variance of the limit of `sqrt(n) I_n`.
///
/// Two-vector mode: product of the unbiased sample variances of the two
/// transformed columns. Total mode: the moment formula for the total
/// independence variance with sample means and bias-corrected second
/// moments `mean^2 + s^2` plugged in; with one coordinate per block both
/// modes return the same number.
pub fn sigma_hat_sq(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Result<f64> {
    wp.check_against(sample)?;
    if sample.n() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: sample.n(),
        });
    }
    let cols = transformed_columns(sample, wp, mode);
    Ok(match mode {
        Mode::TwoVector => unbiased_variance(&cols[0]) * unbiased_variance(&cols[1]),
        Mode::Total => {
            let means: Vec<f64> = cols.iter().map(|c| mean_of(c.len(), |i| c[i])).collect();
            let cv2: Vec<f64> = cols
                .iter()
                .zip(&means)
                .map(|(c, m)| unbiased_variance(c) / (m * m))
                .collect();
            total_variance_from_moments(&means, &cv2)
        }
    })
}

/// Marginal law with a closed-form transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum AnalyticMarginal {
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Poisson with the given mean.
    Poisson { mean: f64 },
}

impl AnalyticMarginal {
    fn parameter(&self) -> f64 {
        match *self {
            AnalyticMarginal::Exponential { rate } => rate,
            AnalyticMarginal::Poisson { mean } => mean,
        }
    }

    /// Laplace transform `E e^{-sX}`; only defined for continuous families.
    pub fn laplace(&self, s: f64) -> Result<f64> {
        match *self {
            AnalyticMarginal::Exponential { rate } => Ok(rate / (rate + s)),
            _ => Err(Error::InvalidParameter(
                "Laplace transform needs a continuous family".into(),
            )),
        }
    }

    /// Generating function `E t^Y`; only defined for count families.
    pub fn pgf(&self, t: f64) -> Result<f64> {
        match *self {
            AnalyticMarginal::Poisson { mean } => Ok((mean * (t - 1.0)).exp()),
            _ => Err(Error::InvalidParameter(
                "generating function needs a count family".into(),
            )),
        }
    }

    /// `E (Z + shift)^{-power}`: by quadrature for the exponential family and
    /// by a truncated series for the Poisson family.
    pub fn inverse_moment(&self, shift: f64, power: i32) -> f64 {
        match *self {
            AnalyticMarginal::Exponential { rate } => {
                let decay = DecayRange {
                    slowest: rate,
                    fastest: rate + power as f64 / shift + 1.0,
                };
                let rule = AxisRule::exponential_graded(24, rate, decay);
                rate * rule.integrate(|x| (x + shift).powi(-power))
            }
            AnalyticMarginal::Poisson { mean } => {
                let mut pmf = (-mean).exp();
                let mut cdf = 0.0;
                let mut total = 0.0;
                let mut y = 0u64;
                loop {
                    total += pmf * (y as f64 + shift).powi(-power);
                    cdf += pmf;
                    if 1.0 - cdf < SERIES_TAIL && y as f64 > mean {
                        return total;
                    }
                    y += 1;
                    pmf *= mean / y as f64;
                }
            }
        }
    }
}

/// Independent analytic marginals for every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    x: Vec<AnalyticMarginal>,
    y: Vec<AnalyticMarginal>,
}

impl AnalyticModel {
    pub fn new(x: Vec<AnalyticMarginal>, y: Vec<AnalyticMarginal>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one marginal per block".into(),
            ));
        }
        if !x
            .iter()
            .all(|m| matches!(m, AnalyticMarginal::Exponential { .. }))
        {
            return Err(Error::InvalidParameter(
                "continuous block must use the exponential family".into(),
            ));
        }
        if !y
            .iter()
            .all(|m| matches!(m, AnalyticMarginal::Poisson { .. }))
        {
            return Err(Error::InvalidParameter(
                "count block must use the Poisson family".into(),
            ));
        }
        if x.iter()
            .chain(&y)
            .any(|m| !(m.parameter() > 0.0 && m.parameter().is_finite()))
        {
            return Err(Error::InvalidParameter(
                "marginal parameters must be positive".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn r1(&self) -> usize {
        self.x.len()
    }

    pub fn r2(&self) -> usize {
        self.y.len()
    }

    fn check_point(&self, p: &TransformPoint) -> Result<()> {
        if p.s().len() != self.x.len() || p.t().len() != self.y.len() {
            return Err(Error::DimensionMismatch(
                "point does not match the model".into(),
            ));
        }
        Ok(())
    }
}

/// Covariance kernel of the limiting process at `(p1, p2)`.
pub fn cov_kernel(
    model: &AnalyticModel,
    p1: &TransformPoint,
    p2: &TransformPoint,
    mode: Mode,
) -> Result<f64> {
    model.check_point(p1)?;
    model.check_point(p2)?;
    let (s1, s2, t1, t2) = (p1.s(), p2.s(), p1.t(), p2.t());
    let mut l_sum = Vec::with_capacity(s1.len());
    let mut l_prod = Vec::with_capacity(s1.len());
    for (j, m) in model.x.iter().enumerate() {
        l_sum.push(m.laplace(s1[j] + s2[j])?);
        l_prod.push(m.laplace(s1[j])? * m.laplace(s2[j])?);
    }
    let mut g_prod_arg = Vec::with_capacity(t1.len());
    let mut g_prod = Vec::with_capacity(t1.len());
    for (k, m) in model.y.iter().enumerate() {
        g_prod_arg.push(m.pgf(t1[k] * t2[k])?);
        g_prod.push(m.pgf(t1[k])? * m.pgf(t2[k])?);
    }
    let product = |v: &[f64]| v.iter().product::<f64>();
    Ok(match mode {
        Mode::TwoVector => {
            (product(&l_sum) - product(&l_prod)) * (product(&g_prod_arg) - product(&g_prod))
        }
        Mode::Total => {
            let d = (l_sum.len() + g_prod.len()) as f64;
            let all_l = product(&l_prod);
            let all_g = product(&g_prod);
            let mut value = product(&l_sum) * product(&g_prod_arg) + (d - 1.0) * all_l * all_g;
            for j in 0..l_sum.len() {
                let others: f64 = (0..l_prod.len())
                    .filter(|&i| i != j)
                    .map(|i| l_prod[i])
                    .product();
                value -= l_sum[j] * others * all_g;
            }
            for k in 0..g_prod.len() {
                let others: f64 = (0..g_prod.len())
                    .filter(|&i| i != k)
                    .map(|i| g_prod[i])
                    .product();
                value -= g_prod_arg[k] * others * all_l;
            }
            value
        }
    })
}

/// Integrates the covariance kernel against `w(p1) w(p2)` on a tensor grid
/// with `rule.nodes` points per axis (per panel on continuous axes).
pub fn sigma_sq_by_quadrature(
    model: &AnalyticModel,
    wp: &WeightParams,
    mode: Mode,
    rule: &QuadratureRule,
) -> Result<f64> {
    if wp.a().len() != model.r1() || wp.b().len() != model.r2() {
        return Err(Error::DimensionMismatch(
            "weight does not match the model".into(),
        ));
    }
    let s_axes: Vec<AxisRule> = wp
        .a()
        .iter()
        .zip(&model.x)
        .map(|(&a, m)| {
            let decay = DecayRange {
                slowest: a,
                fastest: a + m.parameter() + 1.0,
            };
            match rule.continuous {
                ContinuousAxis::Graded => AxisRule::exponential_graded(rule.nodes, a, decay),
                ContinuousAxis::LogLegendre => AxisRule::exponential_log_legendre(rule.nodes, a),
                ContinuousAxis::Laguerre => AxisRule::exponential_laguerre(rule.nodes, a),
            }
        })
        .collect();
    let t_axes: Vec<AxisRule> = wp
        .b()
        .iter()
        .map(|&b| match rule.count {
            CountAxis::Jacobi => AxisRule::power_jacobi(rule.nodes, b),
            CountAxis::Legendre => AxisRule::power_legendre(rule.nodes, b),
        })
        .collect();

    // Axis order: s1, t1, s2, t2.
    let mut axes: Vec<&AxisRule> = Vec::new();
    axes.extend(&s_axes);
    axes.extend(&t_axes);
    axes.extend(&s_axes);
    axes.extend(&t_axes);
    let (r1, r2) = (model.r1(), model.r2());
    let half = r1 + r2;
    let mut index = vec![0usize; axes.len()];
    let mut coords = vec![0.0; axes.len()];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for (l, (&i, axis)) in index.iter().zip(&axes).enumerate() {
            weight *= axis.weights[i];
            coords[l] = axis.nodes[i];
        }
        let p1 = TransformPoint::new(coords[..r1].to_vec(), coords[r1..half].to_vec())?;
        let p2 = TransformPoint::new(
            coords[half..half + r1].to_vec(),
            coords[half + r1..].to_vec(),
        )?;
        total += weight * cov_kernel(model, &p1, &p2, mode)?;

        let mut l = axes.len();
        loop {
            if l == 0 {
                return Ok(total);
            }
            l -= 1;
            index[l] += 1;
            if index[l] < axes[l].len() {
                break;
            }
            index[l] = 0;
        }
    }
}

/// Population variance from analytic inverse moments of the marginals.
pub fn sigma_sq_analytic(model: &AnalyticModel, wp: &WeightParams, mode: Mode) -> Result<f64> {
    if wp.a().len() != model.r1() || wp.b().len() != model.r2() {
        return Err(Error::DimensionMismatch(
            "weight does not match the model".into(),
        ));
    }
    let shifts = wp.a().iter().copied().chain(wp.b().iter().map(|b| b + 1.0));
    let moments: Vec<(f64, f64)> = model
        .x
        .iter()
        .chain(&model.y)
        .zip(shifts)
        .map(|(m, shift)| (m.inverse_moment(shift, 1), m.inverse_moment(shift, 2)))
        .collect();
    Ok(match mode {
        Mode::TwoVector => {
            let block_var = |ms: &[(f64, f64)]| {
                ms.iter().map(|m| m.1).product::<f64>()
                    - ms.iter().map(|m| m.0 * m.0).product::<f64>()
            };
            block_var(&moments[..model.r1()]) * block_var(&moments[model.r1()..])
        }
        Mode::Total => {
            let means: Vec<f64> = moments.iter().map(|m| m.0).collect();
            let cv2: Vec<f64> = moments.iter().map(|m| m.1 / (m.0 * m.0) - 1.0).collect();
            total_variance_from_moments(&means, &cv2)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> MixedSample {
        MixedSample::from_rows(&[vec![1.0], vec![2.0]], &[vec![0], vec![1]]).unwrap()
    }

    fn wp11() -> WeightParams {
        WeightParams::new(vec![1.0], vec![1.0]).unwrap()
    }

    fn exp_poi() -> AnalyticModel {
        AnalyticModel::new(
            vec![AnalyticMarginal::Exponential { rate: 1.5 }],
            vec![AnalyticMarginal::Poisson { mean: 2.0 }],
        )
        .unwrap()
    }

    fn point(s: &[f64], t: &[f64]) -> TransformPoint {
        TransformPoint::new(s.to_vec(), t.to_vec()).unwrap()
    }

    #[test]
    fn reference_sigma_hat() {
        let v = sigma_hat_sq(&reference(), &wp11(), Mode::TwoVector).unwrap();
        assert!((v - 1.0 / 5184.0).abs() < 1e-15);
    }

    #[test]
    fn modes_agree_with_one_coordinate_per_block() {
        let s = MixedSample::from_rows(
            &[vec![0.3], vec![1.9], vec![0.7], vec![2.4]],
            &[vec![3], vec![0], vec![2], vec![2]],
        )
        .unwrap();
        let wp = WeightParams::new(vec![0.5], vec![2.0]).unwrap();
        let a = sigma_hat_sq(&s, &wp, Mode::TwoVector).unwrap();
        let b = sigma_hat_sq(&s, &wp, Mode::Total).unwrap();
        assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn constant_column_gives_zero() {
        let s = MixedSample::from_rows(
            &[vec![1.0], vec![1.0], vec![1.0]],
            &[vec![0], vec![4], vec![1]],
        )
        .unwrap();
        assert_eq!(sigma_hat_sq(&s, &wp11(), Mode::TwoVector).unwrap(), 0.0);
        assert_eq!(sigma_hat_sq(&s, &wp11(), Mode::Total).unwrap(), 0.0);
    }

    #[test]
    fn needs_two_rows() {
        let s = MixedSample::from_rows(&[vec![1.0]], &[vec![0]]).unwrap();
        assert!(matches!(
            sigma_hat_sq(&s, &wp11(), Mode::TwoVector),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn total_formula_matches_literal_expansion() {
        // prod m2 + (d-1) prod m1^2 - sum_d m2_d prod_{j != d} m1_j^2
        let cases = [
            vec![(0.4, 0.2)],
            vec![(0.3, 0.11), (0.5, 0.3)],
            vec![(0.2, 0.05), (0.6, 0.4), (0.1, 0.02)],
        ];
        for ms in cases {
            let d = ms.len() as f64;
            let m1sq: Vec<f64> = ms.iter().map(|m| m.0 * m.0).collect();
            let mut literal =
                ms.iter().map(|m| m.1).product::<f64>() + (d - 1.0) * m1sq.iter().product::<f64>();
            for i in 0..ms.len() {
                let others: f64 = (0..ms.len()).filter(|&j| j != i).map(|j| m1sq[j]).product();
                literal -= ms[i].1 * others;
            }
            let means: Vec<f64> = ms.iter().map(|m| m.0).collect();
            let cv2: Vec<f64> = ms.iter().map(|m| m.1 / (m.0 * m.0) - 1.0).collect();
            let ours = total_variance_from_moments(&means, &cv2);
            assert!((ours - literal).abs() < 1e-14, "{ours} vs {literal}");
        }
    }

    #[test]
    fn cov_kernel_reference_value() {
        let k = cov_kernel(
            &exp_poi(),
            &point(&[1.0], &[0.5]),
            &point(&[1.0], &[0.5]),
            Mode::TwoVector,
        )
        .unwrap();
        let expected = (3.0 / 7.0 - 0.36) * ((-1.5f64).exp() - (-2.0f64).exp());
        assert!((k - expected).abs() < 1e-15);
        assert!((k - 0.0060202).abs() < 5e-8);
    }

    #[test]
    fn cov_kernel_vanishes_on_boundaries() {
        let m = exp_poi();
        for mode in [Mode::TwoVector, Mode::Total] {
            let k = cov_kernel(&m, &point(&[0.0], &[0.3]), &point(&[0.0], &[0.8]), mode).unwrap();
            assert!(k.abs() < 1e-16);
            let k = cov_kernel(&m, &point(&[0.4], &[1.0]), &point(&[2.0], &[1.0]), mode).unwrap();
            assert!(k.abs() < 1e-16);
        }
    }

    #[test]
    fn cov_kernel_modes_agree_in_two_dimensions() {
        let m = exp_poi();
        let (p, q) = (point(&[0.7], &[0.2]), point(&[1.9], &[0.6]));
        let a = cov_kernel(&m, &p, &q, Mode::TwoVector).unwrap();
        let b = cov_kernel(&m, &p, &q, Mode::Total).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn poisson_inverse_moments_match_direct_sum() {
        let m = AnalyticMarginal::Poisson { mean: 2.0 };
        let direct: f64 = (0..60u64)
            .map(|y| {
                let ln_p =
                    -2.0 + y as f64 * 2f64.ln() - statrs::function::gamma::ln_gamma(y as f64 + 1.0);
                ln_p.exp() / (y as f64 + 2.0)
            })
            .sum();
        assert!((m.inverse_moment(2.0, 1) - direct).abs() < 1e-12);
    }

    #[test]
    fn exponential_inverse_moment_matches_exponential_integral() {
        // E 1/(X + a) = rate e^{rate a} E1(rate a); E1(1) = 0.21938393439552...
        let m = AnalyticMarginal::Exponential { rate: 1.0 };
        let v = m.inverse_moment(1.0, 1);
        assert!((v - std::f64::consts::E * 0.219_383_934_395_520_3).abs() < 1e-12);
    }

    #[test]
    fn quadrature_variance_matches_moments() {
        let wp = WeightParams::new(vec![2.0], vec![1.0]).unwrap();
        let model = exp_poi();
        let exact = sigma_sq_analytic(&model, &wp, Mode::TwoVector).unwrap();
        let rule = QuadratureRule::new(10, ContinuousAxis::Graded, CountAxis::Jacobi).unwrap();
        let quad = sigma_sq_by_quadrature(&model, &wp, Mode::TwoVector, &rule).unwrap();
        assert!((quad - exact).abs() <= 1e-5 * exact, "{quad} vs {exact}");
        let total = sigma_sq_by_quadrature(&model, &wp, Mode::Total, &rule).unwrap();
        assert!((total - quad).abs() <= 1e-12 * quad);
    }

    #[test]
    fn quadrature_variance_shrinks_with_large_a() {
        let model = exp_poi();
        let rule = QuadratureRule::new(6, ContinuousAxis::Graded, CountAxis::Jacobi).unwrap();
        let mut prev = f64::INFINITY;
        for a in [1.0, 4.0, 16.0, 64.0] {
            let wp = WeightParams::new(vec![a], vec![1.0]).unwrap();
            let v = sigma_sq_by_quadrature(&model, &wp, Mode::TwoVector, &rule).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(prev < 1e-6);
    }
}
