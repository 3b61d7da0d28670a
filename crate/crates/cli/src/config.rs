//! Study configuration files (TOML, or JSON by extension).

use std::path::Path;

use mixedindep_core::sampling::{Copula, CopulaFamily, MarginalSpec, VineEdge, VineSpec};
use mixedindep_core::statistics::default_tuning;
use mixedindep_core::{DDomain, DSigma, Mode, StatisticKind, WeightParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A scalar that broadcasts over coordinates, or one value per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    /// Values for `len` coordinates.
    pub fn expand(&self, len: usize, what: &str) -> CliResult<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); len]),
            OneOrMany::Many(v) if v.len() == len => Ok(v.clone()),
            OneOrMany::Many(v) => Err(CliError::Config(format!(
                "{what} has {} entries, expected {len}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatName {
    I,
    T,
    Sti,
    D,
}

impl std::str::FromStr for StatName {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" => Ok(StatName::I),
            "t" => Ok(StatName::T),
            "sti" | "st.i" => Ok(StatName::Sti),
            "d" => Ok(StatName::D),
            other => Err(CliError::Usage(format!(
                "unknown statistic '{other}' (expected i, t, sti or d)"
            ))),
        }
    }
}

/// One statistic with its tuning, as written in a config or on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatEntry {
    pub stat: StatName,
    #[serde(default = "two_vector")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DDomain>,
}

fn two_vector() -> Mode {
    Mode::TwoVector
}

pub const DEFAULT_SIGMA: f64 = 0.5;

impl StatEntry {
    /// Fills in defaults so the entry records the tuning actually used.
    pub fn resolved(&self) -> CliResult<Self> {
        let mut out = self.clone();
        if self.stat == StatName::D {
            if self.a.is_some() || self.b.is_some() {
                return Err(CliError::Config(
                    "the d statistic takes sigma, not a or b".into(),
                ));
            }
            out.sigma.get_or_insert(OneOrMany::One(DEFAULT_SIGMA));
            out.domain.get_or_insert(DDomain::default());
        } else {
            if self.sigma.is_some() || self.domain.is_some() {
                return Err(CliError::Config(format!(
                    "sigma and domain only apply to d, not {:?}",
                    self.stat
                )));
            }
            let (a, b) = default_tuning(self.mode);
            out.a.get_or_insert(OneOrMany::One(a));
            out.b.get_or_insert(OneOrMany::One(b));
        }
        Ok(out)
    }

    pub fn kind(&self, r1: usize, r2: usize) -> CliResult<StatisticKind> {
        let entry = self.resolved()?;
        let mode = entry.mode;
        if entry.stat == StatName::D {
            let sigma = entry.sigma.as_ref().expect("resolved");
            let (sx, sy) = match sigma {
                OneOrMany::Many(v) if v.len() == r1 + r2 => (v[..r1].to_vec(), v[r1..].to_vec()),
                OneOrMany::One(s) => (vec![*s; r1], vec![*s; r2]),
                OneOrMany::Many(v) => {
                    return Err(CliError::Config(format!(
                        "sigma has {} entries, expected {}",
                        v.len(),
                        r1 + r2
                    )))
                }
            };
            return Ok(StatisticKind::D {
                mode,
                sigma: DSigma::new(sx, sy)?.with_domain(entry.domain.unwrap_or_default()),
            });
        }
        let a = entry.a.as_ref().expect("resolved").expand(r1, "a")?;
        let b = entry.b.as_ref().expect("resolved").expand(r2, "b")?;
        let weight = WeightParams::new(a, b)?;
        Ok(match entry.stat {
            StatName::I => StatisticKind::I { mode, weight },
            StatName::T => StatisticKind::T { mode, weight },
            StatName::Sti => StatisticKind::StI { mode, weight },
            StatName::D => unreachable!(),
        })
    }
}

/// Dependence structure between the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "layout", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VineConfig {
    #[default]
    Independence,
    /// Path vine with same-type variables adjacent; see
    /// [`VineSpec::default_structure`].
    Default {
        family: CopulaFamily,
        #[serde(default)]
        same: Option<f64>,
        cross: f64,
    },
    /// Path vine `0 - 1 - ... - d-1` with explicit first-tree copulas.
    DVine {
        first_tree: Vec<Copula>,
        deeper: Copula,
    },
    /// Any regular vine, edge by edge.
    Edges { edges: Vec<VineEdge> },
}

impl VineConfig {
    pub fn build(&self, r1: usize, r2: usize) -> CliResult<VineSpec> {
        let dim = r1 + r2;
        let vine = match self {
            VineConfig::Independence => VineSpec::independence(dim)?,
            VineConfig::Default {
                family,
                same,
                cross,
            } => VineSpec::default_structure(r1, r2, *family, *same, *cross)?,
            VineConfig::DVine { first_tree, deeper } => VineSpec::d_vine(dim, first_tree, *deeper)?,
            VineConfig::Edges { edges } => VineSpec::new(dim, edges.clone())?,
        };
        Ok(vine)
    }

    /// Short label of the alternative, e.g. `Gu(1.5)`.
    pub fn label(&self) -> String {
        match self {
            VineConfig::Independence => "Ind.".into(),
            VineConfig::Default {
                family,
                same,
                cross,
            } => {
                let cross = Copula::new(*family, *cross)
                    .map(|c| c.label())
                    .unwrap_or_else(|_| "?".into());
                match same {
                    Some(theta) => format!("{cross}, same-type {theta}"),
                    None => cross,
                }
            }
            VineConfig::DVine { first_tree, .. } => first_tree
                .iter()
                .map(Copula::label)
                .collect::<Vec<_>>()
                .join("-"),
            VineConfig::Edges { edges } => format!("{}-edge vine", edges.len()),
        }
    }
}

fn design_label(marginals: &[MarginalSpec]) -> String {
    marginals
        .iter()
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join("×")
}

fn split_marginals(marginals: &[MarginalSpec]) -> CliResult<(usize, usize)> {
    let r1 = marginals.iter().take_while(|m| m.is_continuous()).count();
    if r1 == 0 || r1 == marginals.len() || marginals[r1..].iter().any(MarginalSpec::is_continuous) {
        return Err(CliError::Config(
            "list continuous marginals first, then at least one count marginal".into(),
        ));
    }
    Ok((r1, marginals.len() - r1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerStudy {
    #[serde(default)]
    pub design: Option<String>,
    pub n: OneOrMany<usize>,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    pub statistics: Vec<StatEntry>,
}

fn default_alpha() -> f64 {
    0.05
}

/// Config of `mixedindep power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub marginals: Vec<MarginalSpec>,
    #[serde(default)]
    pub vine: VineConfig,
    pub study: PowerStudy,
}

impl PowerConfig {
    pub fn layout(&self) -> CliResult<(usize, usize)> {
        split_marginals(&self.marginals)
    }

    pub fn design(&self) -> String {
        self.study
            .design
            .clone()
            .unwrap_or_else(|| format!("{} {}", design_label(&self.marginals), self.vine.label()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub a: OneOrMany<f64>,
    pub b: OneOrMany<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileStudy {
    #[serde(default)]
    pub design: Option<String>,
    #[serde(default = "two_vector")]
    pub mode: Mode,
    pub n: OneOrMany<usize>,
    pub replicates: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    pub weights: Vec<WeightEntry>,
}

fn default_levels() -> Vec<f64> {
    vec![0.95, 0.99]
}

/// Config of `mixedindep quantiles`. Null designs only, so there is no vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileConfig {
    pub marginals: Vec<MarginalSpec>,
    pub study: QuantileStudy,
}

impl QuantileConfig {
    pub fn layout(&self) -> CliResult<(usize, usize)> {
        split_marginals(&self.marginals)
    }

    pub fn design(&self) -> String {
        self.study
            .design
            .clone()
            .unwrap_or_else(|| design_label(&self.marginals))
    }
}

/// Parses TOML, or JSON when `path` ends in `.json`.
pub fn parse_config<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POWER: &str = r#"
[[marginals]]
family = "exponential"
rate = 1.5

[[marginals]]
family = "poisson"
mean = 2.0

[vine]
layout = "default"
family = "gumbel"
cross = 1.5

[study]
n = [20, 50]
replicates = 100
seed = 3

[[study.statistics]]
stat = "sti"
a = 1.0
b = 5.0

[[study.statistics]]
stat = "d"
mode = "total"
"#;

    #[test]
    fn power_config_parses_and_labels() {
        let cfg: PowerConfig = parse_config(POWER, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.layout().unwrap(), (1, 1));
        assert_eq!(cfg.study.n.to_vec(), vec![20, 50]);
        assert_eq!(cfg.study.alpha, 0.05);
        assert_eq!(cfg.design(), "E(1.5)×P(2) Gu(1.5)");
        let d = cfg.study.statistics[1].resolved().unwrap();
        assert_eq!(d.sigma, Some(OneOrMany::One(DEFAULT_SIGMA)));
        assert_eq!(d.mode, Mode::Total);
        assert!(cfg.vine.build(1, 1).is_ok());
    }

    #[test]
    fn json_configs_are_accepted() {
        let cfg: PowerConfig = parse_config(POWER, Path::new("x.toml")).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PowerConfig = parse_config(&json, Path::new("x.json")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_mistakes_are_reported() {
        let typo = POWER.replace("replicates", "replicate");
        assert!(matches!(
            parse_config::<PowerConfig>(&typo, Path::new("x.toml")),
            Err(CliError::Config(_))
        ));
        let entry = StatEntry {
            stat: StatName::D,
            mode: Mode::TwoVector,
            a: Some(OneOrMany::One(1.0)),
            b: None,
            sigma: None,
            domain: None,
        };
        assert!(entry.resolved().is_err());
        let entry = StatEntry {
            stat: StatName::I,
            mode: Mode::Total,
            a: Some(OneOrMany::Many(vec![1.0, 2.0])),
            b: None,
            sigma: None,
            domain: None,
        };
        assert!(entry.kind(1, 1).is_err());
        let swapped = [
            MarginalSpec::Poisson { mean: 2.0 },
            MarginalSpec::Exponential { rate: 1.0 },
        ];
        assert!(split_marginals(&swapped).is_err());
    }

    #[test]
    fn defaults_follow_the_mode() {
        let entry = StatEntry {
            stat: StatName::T,
            mode: Mode::Total,
            a: None,
            b: None,
            sigma: None,
            domain: None,
        };
        let resolved = entry.resolved().unwrap();
        assert_eq!(
            (resolved.a, resolved.b),
            (Some(OneOrMany::One(1.0)), Some(OneOrMany::One(1.0)))
        );
        assert_eq!("st.I".parse::<StatName>().unwrap(), StatName::Sti);
    }
}
