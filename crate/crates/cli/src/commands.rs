//! The three commands, separated from argument parsing and output.

use std::fmt::Write as _;
use std::path::PathBuf;

use mixedindep_core::empirical::quantile_sorted;
use mixedindep_core::inference::{
    abs_normal_quantile, asymptotic_pvalue, mc_null_statistics, permutation_pvalue,
    warp_speed_power, SimulationConfig,
};
use mixedindep_core::{evaluate, DDomain, MixedSample, Mode, StatisticKind, WeightParams};
use serde::{Deserialize, Serialize};

use crate::config::{OneOrMany, PowerConfig, QuantileConfig, StatEntry, StatName};
use crate::data::read_mixed_csv;
use crate::error::{CliError, CliResult};

/// Smallest sample for which the normal approximation of st.I is offered.
pub const ASYMPTOTIC_MIN_N: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Permutation,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub statistic: StatName,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DDomain>,
    pub n: usize,
    pub value: f64,
    pub p_value: f64,
    pub method: PValueMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub stats: Vec<StatName>,
    pub mode: Mode,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub domain: Option<DDomain>,
    pub permutations: usize,
    pub seed: u64,
    pub asymptotic: bool,
}

fn many(v: &Option<Vec<f64>>) -> Option<OneOrMany<f64>> {
    v.as_ref().map(|v| {
        if v.len() == 1 {
            OneOrMany::One(v[0])
        } else {
            OneOrMany::Many(v.clone())
        }
    })
}

/// Runs the requested tests on one sample. Warnings go to `notes`.
pub fn run_test(
    sample: &MixedSample,
    opts: &TestOptions,
    notes: &mut Vec<String>,
) -> CliResult<Vec<TestRecord>> {
    if opts.stats.is_empty() {
        return Err(CliError::Usage("no statistics requested".into()));
    }
    let mut out = Vec::new();
    for &stat in &opts.stats {
        let entry = if stat == StatName::D {
            StatEntry {
                stat,
                mode: opts.mode,
                a: None,
                b: None,
                sigma: many(&opts.sigma),
                domain: opts.domain,
            }
        } else {
            StatEntry {
                stat,
                mode: opts.mode,
                a: many(&opts.a),
                b: many(&opts.b),
                sigma: None,
                domain: None,
            }
        };
        let entry = entry.resolved()?;
        let kind = entry.kind(sample.r1(), sample.r2())?;
        let use_normal = stat == StatName::Sti && opts.asymptotic && sample.n() >= ASYMPTOTIC_MIN_N;
        if stat == StatName::Sti && opts.asymptotic && !use_normal {
            notes.push(format!(
                "n = {} is below {ASYMPTOTIC_MIN_N}; st.I uses the permutation p-value",
                sample.n()
            ));
        }
        let (value, p_value, method) = if use_normal {
            let v = evaluate(sample, &kind)?;
            (
                v.reported(),
                asymptotic_pvalue(v.value)?,
                PValueMethod::Asymptotic,
            )
        } else {
            let test = permutation_pvalue(sample, &kind, opts.permutations, opts.seed)?;
            let reported = mixedindep_core::StatValue {
                value: test.observed,
                kind: kind.clone(),
                n: sample.n(),
            }
            .reported();
            (reported, test.p_value, PValueMethod::Permutation)
        };
        let permuted = method == PValueMethod::Permutation;
        out.push(TestRecord {
            statistic: stat,
            mode: opts.mode,
            a: entry.a,
            b: entry.b,
            sigma: entry.sigma,
            domain: entry.domain,
            n: sample.n(),
            value,
            p_value,
            method,
            permutations: permuted.then_some(opts.permutations),
            seed: permuted.then_some(opts.seed),
        });
    }
    Ok(out)
}

pub fn cmd_test(
    input: &PathBuf,
    x: &[String],
    y: &[String],
    opts: &TestOptions,
    notes: &mut Vec<String>,
) -> CliResult<Vec<TestRecord>> {
    let sample = read_mixed_csv(input, x, y)?;
    run_test(&sample, opts, notes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub statistic: StatName,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DDomain>,
    pub design: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rejection_rate_pct: f64,
    /// Missing when no replicate produced a usable null value.
    pub critical_value: Option<f64>,
    pub degenerate: usize,
}

pub fn run_power(cfg: &PowerConfig) -> CliResult<Vec<PowerRecord>> {
    let (r1, r2) = cfg.layout()?;
    let vine = cfg.vine.build(r1, r2)?;
    let entries: Vec<StatEntry> = cfg
        .study
        .statistics
        .iter()
        .map(StatEntry::resolved)
        .collect::<CliResult<_>>()?;
    let kinds: Vec<StatisticKind> = entries
        .iter()
        .map(|e| e.kind(r1, r2))
        .collect::<CliResult<_>>()?;
    let design = cfg.design();
    let mut records = Vec::new();
    for n in cfg.study.n.to_vec() {
        let sim = SimulationConfig {
            marginals: cfg.marginals.clone(),
            vine: vine.clone(),
            n,
            replicates: cfg.study.replicates,
            alpha: cfg.study.alpha,
            seed: cfg.study.seed,
            statistics: kinds.clone(),
        };
        for (entry, cell) in entries.iter().zip(warp_speed_power(&sim)?) {
            records.push(PowerRecord {
                statistic: entry.stat,
                mode: entry.mode,
                a: entry.a.clone(),
                b: entry.b.clone(),
                sigma: entry.sigma.clone(),
                domain: entry.domain,
                design: design.clone(),
                n,
                replicates: cfg.study.replicates,
                alpha: cfg.study.alpha,
                seed: cfg.study.seed,
                rejection_rate_pct: cell.rejection_rate_pct,
                critical_value: cell
                    .critical_value
                    .is_finite()
                    .then_some(cell.critical_value),
                degenerate: cell.degenerate,
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRecord {
    pub design: String,
    pub mode: Mode,
    pub a: OneOrMany<f64>,
    pub b: OneOrMany<f64>,
    pub n: usize,
    #[serde(rename = "N")]
    pub replicates: usize,
    /// Replicates with a usable variance estimate.
    pub used: usize,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub records: Vec<QuantileRecord>,
    /// Quantiles of `|Z|` at the same levels.
    pub limit: Vec<f64>,
}

pub fn run_quantiles(cfg: &QuantileConfig) -> CliResult<QuantileReport> {
    let (r1, r2) = cfg.layout()?;
    let study = &cfg.study;
    let limit = study
        .levels
        .iter()
        .map(|&l| abs_normal_quantile(l))
        .collect::<Result<Vec<_>, _>>()?;
    let design = cfg.design();
    let mut records = Vec::new();
    for w in &study.weights {
        let wp = WeightParams::new(w.a.expand(r1, "a")?, w.b.expand(r2, "b")?)?;
        for n in study.n.to_vec() {
            let mut values: Vec<f64> = mc_null_statistics(
                &cfg.marginals,
                &wp,
                study.mode,
                n,
                study.replicates,
                study.seed,
            )?
            .into_iter()
            .map(f64::abs)
            .collect();
            if values.is_empty() {
                return Err(CliError::Core(mixedindep_core::Error::DegenerateVariance));
            }
            values.sort_by(f64::total_cmp);
            let quantiles = study
                .levels
                .iter()
                .map(|&l| quantile_sorted(&values, l))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(QuantileRecord {
                design: design.clone(),
                mode: study.mode,
                a: w.a.clone(),
                b: w.b.clone(),
                n,
                replicates: study.replicates,
                used: values.len(),
                levels: study.levels.clone(),
                quantiles,
            });
        }
    }
    Ok(QuantileReport { records, limit })
}

// Text output

fn show(v: &OneOrMany<f64>) -> String {
    match v {
        OneOrMany::One(x) => x.to_string(),
        OneOrMany::Many(xs) => format!(
            "[{}]",
            xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        ),
    }
}

fn stat_label(s: StatName) -> &'static str {
    match s {
        StatName::I => "I",
        StatName::T => "T",
        StatName::Sti => "st.I",
        StatName::D => "D",
    }
}

fn tuning_label(
    a: &Option<OneOrMany<f64>>,
    b: &Option<OneOrMany<f64>>,
    sigma: &Option<OneOrMany<f64>>,
    domain: Option<DDomain>,
) -> String {
    match (a, b, sigma) {
        (Some(a), Some(b), _) => format!("({},{})", show(a), show(b)),
        (_, _, Some(s)) if domain == Some(DDomain::Orthant) => format!("sigma={} orthant", show(s)),
        (_, _, Some(s)) => format!("sigma={}", show(s)),
        _ => String::new(),
    }
}

/// Left-aligns the first column and right-aligns the rest.
fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn format_value(v: f64) -> String {
    if v == 0.0 || (1e-3..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

pub fn render_test(records: &[TestRecord]) -> String {
    let mut rows = vec![
        ["statistic", "mode", "tuning", "value", "p-value", "method"]
            .map(String::from)
            .to_vec(),
    ];
    for r in records {
        rows.push(vec![
            stat_label(r.statistic).into(),
            r.mode.to_string(),
            tuning_label(&r.a, &r.b, &r.sigma, r.domain),
            format_value(r.value),
            format!("{:.4}", r.p_value),
            match r.method {
                PValueMethod::Permutation => {
                    format!("permutation (B={})", r.permutations.unwrap_or(0))
                }
                PValueMethod::Asymptotic => "normal".into(),
            },
        ]);
    }
    let mut out = String::new();
    if let Some(r) = records.first() {
        let _ = writeln!(out, "n = {}", r.n);
    }
    out + &aligned(&rows)
}

pub fn render_power(records: &[PowerRecord]) -> String {
    let mut out = String::new();
    let mut start = 0;
    while start < records.len() {
        let head = &records[start];
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.n == head.n && r.design == head.design)
                .count();
        let _ = writeln!(
            out,
            "{}, n = {}, N = {}, alpha = {}",
            head.design, head.n, head.replicates, head.alpha
        );
        let mut rows = vec![[
            "statistic",
            "mode",
            "tuning",
            "reject %",
            "critical",
            "degenerate",
        ]
        .map(String::from)
        .to_vec()];
        for r in &records[start..end] {
            rows.push(vec![
                stat_label(r.statistic).into(),
                r.mode.to_string(),
                tuning_label(&r.a, &r.b, &r.sigma, r.domain),
                format!("{:.1}", r.rejection_rate_pct),
                r.critical_value.map_or("-".into(), format_value),
                r.degenerate.to_string(),
            ]);
        }
        out += &aligned(&rows);
        out.push('\n');
        start = end;
    }
    out
}

pub fn render_quantiles(report: &QuantileReport) -> String {
    let mut out = String::new();
    let Some(first) = report.records.first() else {
        return out;
    };
    let _ = writeln!(
        out,
        "{}, {}, N = {}",
        first.design, first.mode, first.replicates
    );
    let mut sizes: Vec<usize> = Vec::new();
    for r in &report.records {
        if !sizes.contains(&r.n) {
            sizes.push(r.n);
        }
    }
    for (li, level) in first.levels.iter().enumerate() {
        let mut rows = vec![std::iter::once(format!("q{level}  (a,b)"))
            .chain(sizes.iter().map(|n| format!("n={n}")))
            .collect::<Vec<_>>()];
        let mut seen: Vec<String> = Vec::new();
        for r in &report.records {
            let label = format!("({},{})", show(&r.a), show(&r.b));
            if seen.contains(&label) {
                continue;
            }
            let mut row = vec![label.clone()];
            for n in &sizes {
                let cell = report
                    .records
                    .iter()
                    .find(|q| q.n == *n && format!("({},{})", show(&q.a), show(&q.b)) == label);
                row.push(cell.map_or("-".into(), |q| format!("{:.2}", q.quantiles[li])));
            }
            seen.push(label);
            rows.push(row);
        }
        let mut limit = vec!["limit".to_string(), format!("{:.2}", report.limit[li])];
        limit.extend(std::iter::repeat_n(
            String::new(),
            sizes.len().saturating_sub(1),
        ));
        rows.push(limit);
        out += &aligned(&rows);
        out.push('\n');
    }
    for r in report.records.iter().filter(|r| r.used < r.replicates) {
        let _ = writeln!(
            out,
            "note: n={} ({},{}) used {} of {} replicates",
            r.n,
            show(&r.a),
            show(&r.b),
            r.used,
            r.replicates
        );
    }
    out
}
