//! P-values, Monte-Carlo null quantiles and warp-speed power estimation.
//!
//! Every replicate draws from its own ChaCha stream, selected by the
//! replicate index, and results are collected in index order. Output
//! therefore depends only on the inputs and the seed, not on the number of
//! worker threads.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::{erfc, erfc_inv};

use crate::empirical::quantile_sorted;
use crate::error::{Error, Result};
use crate::sampling::{DataGenerator, MarginalSpec, VineSpec};
use crate::statistics::{PreparedStatistic, Shuffle, StatisticKind};
use crate::transforms::{MixedSample, Mode, WeightParams};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "MIXEDINDEP_THREADS";
pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const DEFAULT_REPLICATES: usize = 10_000;

/// Random stream for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// Runs `job(0..count)` on the worker pool and returns results in index order.
pub fn run_indexed<T, F>(count: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    pool().install(|| (0..count).into_par_iter().map(job).collect())
}

/// Uniform random permutations, one per group.
pub fn random_shuffle<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, groups: usize) -> Shuffle {
    let perms = (0..groups)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    Shuffle::new(perms).expect("shuffled identity is a permutation")
}

/// Two-sided standard normal p-value `2 (1 - Phi(|z|))`.
pub fn asymptotic_pvalue(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "statistic must be finite, got {z}"
        )));
    }
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2))
}

/// Quantile of `|Z|` for a standard normal `Z`; the large-sample limit of
/// [`mc_null_quantiles`].
pub fn abs_normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level {level} outside (0, 1)"
        )));
    }
    Ok(std::f64::consts::SQRT_2 * erfc_inv(1.0 - level))
}

/// Outcome of a permutation test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub p_value: f64,
    pub permutations: usize,
}

fn magnitude(kind: &StatisticKind, value: f64) -> f64 {
    if kind.is_signed() {
        value.abs()
    } else {
        value
    }
}

/// Permutation p-value `(1 + #{s_b >= s_obs}) / (B + 1)`, comparing absolute
/// values for the signed I-type statistics.
///
/// Two-vector mode permutes the count block rows jointly; total mode
/// permutes every coordinate but the first independently.
pub fn permutation_pvalue(
    sample: &MixedSample,
    kind: &StatisticKind,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    if permutations == 0 {
        return Err(Error::InvalidParameter(
            "need at least one permutation".into(),
        ));
    }
    if sample.n() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: sample.n(),
        });
    }
    let prepared = PreparedStatistic::prepare(sample, kind)?;
    let observed = prepared.observed();
    let target = magnitude(kind, observed);
    let hits = run_indexed(permutations, |b| {
        let shuffle = random_shuffle(
            &mut replicate_rng(seed, b as u64),
            sample.n(),
            prepared.groups(),
        );
        let value = prepared
            .permuted(&shuffle)
            .expect("shuffle matches the sample");
        magnitude(kind, value) >= target
    });
    let count = hits.iter().filter(|&&h| h).count();
    Ok(PermutationTest {
        observed,
        p_value: (1 + count) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

/// A null design: independent marginals, continuous first.
fn null_generator(marginals: &[MarginalSpec]) -> Result<DataGenerator> {
    DataGenerator::new(marginals, VineSpec::independence(marginals.len())?)
}

/// Signed `sqrt(n) I / sigma_hat` over `replicates` independent null samples.
/// Samples with a degenerate variance estimate are skipped.
pub fn mc_null_statistics(
    marginals: &[MarginalSpec],
    wp: &WeightParams,
    mode: Mode,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let generator = null_generator(marginals)?;
    if wp.a().len() != generator.r1() || wp.b().len() != generator.r2() {
        return Err(Error::DimensionMismatch(
            "weight does not match the marginals".into(),
        ));
    }
    let kind = StatisticKind::StI {
        mode,
        weight: wp.clone(),
    };
    let values = run_indexed(replicates, |r| -> Result<Option<f64>> {
        let sample = generator.sample(n, &mut replicate_rng(seed, r as u64))?;
        match PreparedStatistic::prepare(&sample, &kind) {
            Ok(p) => Ok(Some(p.observed())),
            Err(Error::DegenerateVariance) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut out = Vec::with_capacity(replicates);
    for v in values {
        out.extend(v?);
    }
    Ok(out)
}

/// Empirical quantiles of `sqrt(n) |I| / sigma_hat` under independence.
pub fn mc_null_quantiles(
    marginals: &[MarginalSpec],
    wp: &WeightParams,
    mode: Mode,
    n: usize,
    replicates: usize,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "quantile level {l} outside (0, 1)"
        )));
    }
    let mut values: Vec<f64> = mc_null_statistics(marginals, wp, mode, n, replicates, seed)?
        .into_iter()
        .map(f64::abs)
        .collect();
    values.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&l| quantile_sorted(&values, l))
        .collect()
}

/// One warp-speed power study: a data design plus the statistics to compare.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub marginals: Vec<MarginalSpec>,
    pub vine: VineSpec,
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub statistics: Vec<StatisticKind>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<DataGenerator> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("sample size must be at least 2, got {}", self.n));
        }
        if self.replicates == 0 {
            return bad("need at least one replicate".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.statistics.is_empty() {
            return bad("no statistics requested".into());
        }
        DataGenerator::new(&self.marginals, self.vine.clone())
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Rejection rate of one statistic in a power study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCell {
    pub statistic: String,
    pub mode: Mode,
    /// `(a, b)` when the weights are uniform across coordinates.
    pub tuning: Option<(f64, f64)>,
    pub rejection_rate_pct: f64,
    pub critical_value: f64,
    /// Replicates where the statistic was undefined (zero variance estimate).
    pub degenerate: usize,
}

fn uniform_tuning(kind: &StatisticKind) -> Option<(f64, f64)> {
    let weight = match kind {
        StatisticKind::I { weight, .. }
        | StatisticKind::T { weight, .. }
        | StatisticKind::StI { weight, .. } => weight,
        StatisticKind::D { .. } => return None,
    };
    let (a, b) = (weight.a()[0], weight.b()[0]);
    (weight.a().iter().all(|&v| v == a) && weight.b().iter().all(|&v| v == b)).then_some((a, b))
}

/// Warp-speed power estimate: each replicate contributes one alternative
/// statistic and one permuted statistic per cell. The pooled permuted values
/// form each cell's null distribution; a replicate rejects when its
/// statistic exceeds the `ceil((1 - alpha) N)`-th smallest pooled value.
pub fn warp_speed_power(config: &SimulationConfig) -> Result<Vec<PowerCell>> {
    let generator = config.validate()?;
    let (r1, r2) = (generator.r1(), generator.r2());
    let cells = config.statistics.len();
    let per_replicate = run_indexed(config.replicates, |r| -> Result<Vec<Option<(f64, f64)>>> {
        let mut rng = replicate_rng(config.seed, r as u64);
        let sample = generator.sample(config.n, &mut rng)?;
        // One set of permutations per replicate, shared by every cell.
        let shuffle = random_shuffle(&mut rng, config.n, r1 + r2 - 1);
        config
            .statistics
            .iter()
            .map(|kind| {
                let prepared = match PreparedStatistic::prepare(&sample, kind) {
                    Ok(p) => p,
                    Err(Error::DegenerateVariance) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let own = Shuffle::new(shuffle.perms()[..prepared.groups()].to_vec())?;
                let alt = magnitude(kind, prepared.observed());
                let null = magnitude(kind, prepared.permuted(&own)?);
                Ok(Some((alt, null)))
            })
            .collect()
    });
    let mut columns: Vec<Vec<Option<(f64, f64)>>> =
        vec![Vec::with_capacity(config.replicates); cells];
    for row in per_replicate {
        for (c, v) in row?.into_iter().enumerate() {
            columns[c].push(v);
        }
    }
    config
        .statistics
        .iter()
        .zip(columns)
        .map(|(kind, column)| {
            let degenerate = column.iter().filter(|v| v.is_none()).count();
            let pairs: Vec<(f64, f64)> = column.into_iter().flatten().collect();
            if pairs.is_empty() {
                return Err(Error::DegenerateVariance);
            }
            let mut nulls: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            nulls.sort_by(f64::total_cmp);
            let rank = ((1.0 - config.alpha) * nulls.len() as f64).ceil() as usize;
            let critical = nulls[rank.clamp(1, nulls.len()) - 1];
            let rejected = pairs.iter().filter(|p| p.0 > critical).count();
            Ok(PowerCell {
                statistic: kind.name().to_string(),
                mode: kind.mode(),
                tuning: uniform_tuning(kind),
                rejection_rate_pct: 100.0 * rejected as f64 / config.replicates as f64,
                critical_value: critical,
                degenerate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::CopulaFamily;
    use crate::statistics::DSigma;

    fn wp(a: f64, b: f64) -> WeightParams {
        WeightParams::new(vec![a], vec![b]).unwrap()
    }

    #[test]
    fn normal_pvalues() {
        assert_eq!(asymptotic_pvalue(0.0).unwrap(), 1.0);
        assert!((asymptotic_pvalue(1.96).unwrap() - 0.05).abs() < 2e-4);
        assert!((asymptotic_pvalue(-2.58).unwrap() - 0.0099).abs() < 1e-4);
        assert!(asymptotic_pvalue(f64::NAN).is_err());
    }

    #[test]
    fn abs_normal_quantiles_invert_the_pvalue() {
        let q95 = abs_normal_quantile(0.95).unwrap();
        assert!((q95 - 1.959964).abs() < 1e-6);
        assert!((abs_normal_quantile(0.99).unwrap() - 2.575829).abs() < 1e-6);
        assert!(
            (asymptotic_pvalue(q95).unwrap() - 0.05).abs() < 1e-9,
            "{}",
            asymptotic_pvalue(q95).unwrap()
        );
        assert!(abs_normal_quantile(1.0).is_err());
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::RngExt;
        let a: u64 = replicate_rng(7, 0).random();
        let b: u64 = replicate_rng(7, 1).random();
        let c: u64 = replicate_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn constant_count_column_gives_unit_pvalue() {
        let s = MixedSample::from_rows(
            &[vec![0.5], vec![1.5], vec![2.5], vec![0.2]],
            &vec![vec![1]; 4],
        )
        .unwrap();
        let kind = StatisticKind::T {
            mode: Mode::TwoVector,
            weight: wp(1.0, 1.0),
        };
        assert_eq!(permutation_pvalue(&s, &kind, 99, 3).unwrap().p_value, 1.0);
    }

    #[test]
    fn single_permutation_pvalues() {
        let s = MixedSample::from_rows(
            &[vec![0.5], vec![1.5], vec![2.5]],
            &[vec![0], vec![3], vec![1]],
        )
        .unwrap();
        let kind = StatisticKind::I {
            mode: Mode::TwoVector,
            weight: wp(1.0, 1.0),
        };
        for seed in 0..20 {
            let p = permutation_pvalue(&s, &kind, 1, seed).unwrap().p_value;
            assert!(p == 0.5 || p == 1.0);
        }
        assert!(permutation_pvalue(&s, &kind, 0, 0).is_err());
        let one = MixedSample::from_rows(&[vec![0.5]], &[vec![0]]).unwrap();
        assert!(matches!(
            permutation_pvalue(&one, &kind, 9, 0),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn strong_dependence_is_detected() {
        let m = [
            MarginalSpec::Exponential { rate: 1.5 },
            MarginalSpec::Poisson { mean: 2.0 },
        ];
        let vine = VineSpec::default_structure(1, 1, CopulaFamily::Gaussian, None, 0.9).unwrap();
        let s = crate::sampling::generate_dataset(&m, &vine, 40, &mut replicate_rng(8, 0)).unwrap();
        for kind in [
            StatisticKind::T {
                mode: Mode::TwoVector,
                weight: wp(1.0, 5.0),
            },
            StatisticKind::StI {
                mode: Mode::Total,
                weight: wp(1.0, 1.0),
            },
            StatisticKind::D {
                mode: Mode::TwoVector,
                sigma: DSigma::uniform(0.5, 1, 1).unwrap(),
            },
        ] {
            let p = permutation_pvalue(&s, &kind, 199, 1).unwrap().p_value;
            assert!(p <= 0.01, "{} {p}", kind.name());
        }
    }

    #[test]
    fn null_quantiles_are_seeded() {
        let m = [
            MarginalSpec::Exponential { rate: 1.5 },
            MarginalSpec::Poisson { mean: 2.0 },
        ];
        let a = mc_null_quantiles(&m, &wp(2.0, 1.0), Mode::TwoVector, 30, 200, &[0.5, 0.95], 5)
            .unwrap();
        let b = mc_null_quantiles(&m, &wp(2.0, 1.0), Mode::TwoVector, 30, 200, &[0.5, 0.95], 5)
            .unwrap();
        assert_eq!(a, b);
        assert!(a[0] < a[1]);
        assert!(mc_null_quantiles(&m, &wp(2.0, 1.0), Mode::TwoVector, 30, 10, &[1.0], 5).is_err());
    }

    #[test]
    fn warp_speed_on_independent_data_holds_level() {
        let config = SimulationConfig {
            marginals: vec![
                MarginalSpec::Exponential { rate: 1.5 },
                MarginalSpec::Poisson { mean: 2.0 },
            ],
            vine: VineSpec::independence(2).unwrap(),
            n: 20,
            replicates: 2000,
            alpha: 0.05,
            seed: 11,
            statistics: vec![
                StatisticKind::StI {
                    mode: Mode::TwoVector,
                    weight: wp(1.0, 5.0),
                },
                StatisticKind::T {
                    mode: Mode::TwoVector,
                    weight: wp(1.0, 5.0),
                },
            ],
        };
        for cell in warp_speed_power(&config).unwrap() {
            assert!((cell.rejection_rate_pct - 5.0).abs() < 2.0, "{cell:?}");
            assert_eq!(cell.tuning, Some((1.0, 5.0)));
        }
    }

    #[test]
    fn warp_speed_detects_dependence() {
        let config = SimulationConfig {
            marginals: vec![
                MarginalSpec::Exponential { rate: 1.5 },
                MarginalSpec::Poisson { mean: 2.0 },
            ],
            vine: VineSpec::default_structure(1, 1, CopulaFamily::Gaussian, None, 0.8).unwrap(),
            n: 50,
            replicates: 300,
            alpha: 0.05,
            seed: 2,
            statistics: vec![StatisticKind::I {
                mode: Mode::TwoVector,
                weight: wp(1.0, 5.0),
            }],
        };
        let cells = warp_speed_power(&config).unwrap();
        assert!(cells[0].rejection_rate_pct > 80.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SimulationConfig {
            marginals: vec![
                MarginalSpec::Exponential { rate: 1.5 },
                MarginalSpec::Poisson { mean: 2.0 },
            ],
            vine: VineSpec::independence(2).unwrap(),
            n: 20,
            replicates: 10,
            alpha: 0.05,
            seed: 0,
            statistics: vec![StatisticKind::I {
                mode: Mode::TwoVector,
                weight: wp(1.0, 5.0),
            }],
        };
        let mut c = base.clone();
        c.alpha = 1.0;
        assert!(matches!(warp_speed_power(&c), Err(Error::InvalidConfig(_))));
        let mut c = base.clone();
        c.vine = VineSpec::independence(3).unwrap();
        assert!(matches!(warp_speed_power(&c), Err(Error::InvalidConfig(_))));
        let mut c = base;
        c.statistics.clear();
        assert!(matches!(warp_speed_power(&c), Err(Error::InvalidConfig(_))));
    }
}
