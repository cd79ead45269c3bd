//! Ensemble runs, exponent fits and growth diagnostics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;
use crate::stats::{log_log_slope, median, quantile};
use crate::timing::{build_seeded, RuleKind, TimingError};
use crate::walk::{berw_run, Engine, RangeSeries, WalkConfig, WalkError, WalkRun};

/// First time included in exponent fits.
pub const FIT_START: u64 = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("non-monotone range series for seed {seed}")]
    NonMonotone { seed: u64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, runs: u64) -> Self {
        Self {
            command: command.to_string(),
            params: BTreeMap::new(),
            master_seed,
            seeds: (0..runs).map(|i| derive_seed(master_seed, i)).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Manifest of a single run driven directly by `seed`.
    pub fn single(command: &str, seed: u64) -> Self {
        Self { seeds: vec![seed], ..Self::new(command, seed, 0) }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFit {
    pub seed: u64,
    pub points: Vec<(u64, u64)>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub rule: String,
    pub n_max: u64,
    pub per_seed: Vec<SeedFit>,
    /// Slope of all `(log n, log R_n)` pairs pooled.
    pub pooled_slope: f64,
    pub median_slope: f64,
    pub iqr: (f64, f64),
    /// Seeds dropped after a resource failure.
    pub excluded: Vec<u64>,
}

/// Dyadic times in `[FIT_START, n_max]` together with `n_max`.
pub fn fit_grid(n_max: u64) -> Vec<u64> {
    let mut g: Vec<u64> = (14..64).map(|j| 1u64 << j).take_while(|&t| t <= n_max).collect();
    if g.last() != Some(&n_max) && n_max >= FIT_START {
        g.push(n_max);
    }
    g
}

/// Slope of `log R` against `log t` over `points`, refusing decreasing `R`.
pub fn fit_points(seed: u64, points: Vec<(u64, u64)>) -> Result<SeedFit, AnalysisError> {
    if points.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(AnalysisError::NonMonotone { seed });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
    let slope = log_log_slope(&x, &y).ok_or_else(|| AnalysisError::Domain("fit needs two distinct times".into()))?;
    Ok(SeedFit { seed, points, slope })
}

fn range_points(rule: RuleKind, seed: u64, n_max: u64, max_sites: Option<usize>) -> Result<Vec<(u64, u64)>, AnalysisError> {
    let grid = fit_grid(n_max);
    let cps: Vec<(u64, u64)> = match rule {
        RuleKind::Berw => {
            let mut cfg = WalkConfig::new(seed, n_max).engine(Engine::Stream);
            cfg.max_sites = max_sites;
            berw_run(&cfg)?.series.checkpoints.iter().map(|c| (c.t, c.range)).collect()
        }
        other => build_seeded(other, seed, n_max, false)?.checkpoints,
    };
    Ok(cps.into_iter().filter(|(t, _)| grid.contains(t)).collect())
}

/// Fits `log R_n ~ α log n` per seed on [`fit_grid`].
pub fn estimate_alpha(
    master: u64,
    seeds: u64,
    n_max: u64,
    rule: RuleKind,
    max_sites: Option<usize>,
) -> Result<ExponentFit, AnalysisError> {
    if n_max < FIT_START || fit_grid(n_max).len() < 2 {
        return Err(AnalysisError::Domain(format!("n_max = {n_max} leaves fewer than two fit points")));
    }
    let results: Vec<(u64, Result<Vec<(u64, u64)>, AnalysisError>)> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master, i);
            (seed, range_points(rule, seed, n_max, max_sites))
        })
        .collect();
    let mut per_seed = Vec::new();
    let mut excluded = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(points) => per_seed.push(fit_points(seed, points)?),
            Err(AnalysisError::Walk(WalkError::Resource { .. })) | Err(AnalysisError::Timing(TimingError::Resource(_))) => {
                excluded.push(seed)
            }
            Err(e) => return Err(e),
        }
    }
    if per_seed.is_empty() {
        return Err(AnalysisError::Domain("every seed failed".into()));
    }
    let slopes: Vec<f64> = per_seed.iter().map(|f| f.slope).collect();
    let (px, py): (Vec<f64>, Vec<f64>) =
        per_seed.iter().flat_map(|f| f.points.iter().map(|&(t, r)| (t as f64, r as f64))).unzip();
    Ok(ExponentFit {
        rule: rule.name().to_string(),
        n_max,
        pooled_slope: log_log_slope(&px, &py).unwrap_or(f64::NAN),
        median_slope: median(&slopes),
        iqr: (quantile(&slopes, 0.25), quantile(&slopes, 0.75)),
        per_seed,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: u64,
    pub range: u64,
    /// `R_t - t^{4/7} / ln² t`.
    pub margin: f64,
    /// `R_t √(ln ln t) / t`.
    pub upper_ratio: f64,
    /// `max_{s <= t} |y_s| / √t`.
    pub vertical_scaling: f64,
    /// `max_{s <= t} |y_s| / √(2 M ln ln M)` with `M` the vertical step count.
    pub lil_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub seed: u64,
    pub n: u64,
    pub rows: Vec<DiagnosticRow>,
    /// Largest number of vertical entries into a single level.
    pub max_level_entries: u64,
    /// `2 √(R ln ln(R ∨ 4))` at the final time.
    pub level_cap: f64,
    pub levels_over_cap: usize,
    pub max_level_ratio: f64,
}

impl DiagnosticsReport {
    pub fn final_row(&self) -> &DiagnosticRow {
        self.rows.last().expect("at least t = 0")
    }
}

pub fn lower_bound(t: u64) -> f64 {
    let t = t as f64;
    t.powf(4.0 / 7.0) / t.ln().powi(2)
}

fn lnln(x: f64) -> f64 {
    x.ln().ln()
}

pub fn diagnostic_rows(series: &RangeSeries) -> Vec<DiagnosticRow> {
    series
        .checkpoints
        .iter()
        .filter(|c| c.t >= 16)
        .map(|c| {
            let t = c.t as f64;
            let m = c.vertical.max(16) as f64;
            DiagnosticRow {
                t: c.t,
                range: c.range,
                margin: c.range as f64 - lower_bound(c.t),
                upper_ratio: c.range as f64 * lnln(t).sqrt() / t,
                vertical_scaling: c.max_abs_y() as f64 / t.sqrt(),
                lil_ratio: c.max_abs_y() as f64 / (2.0 * m * lnln(m)).sqrt(),
            }
        })
        .collect()
}

pub fn bound_diagnostics(run: &WalkRun) -> DiagnosticsReport {
    let last = run.series.last();
    let r = last.range as f64;
    let level_cap = 2.0 * (r * r.max(4.0).ln().ln()).sqrt();
    let max_level_entries = run.level_entries.values().copied().max().unwrap_or(0);
    DiagnosticsReport {
        seed: run.config.seed,
        n: run.config.n_steps,
        rows: diagnostic_rows(&run.series),
        max_level_entries,
        level_cap,
        levels_over_cap: run.level_entries.values().filter(|&&e| e as f64 > level_cap).count(),
        max_level_ratio: max_level_entries as f64 / level_cap,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrenceProbe {
    pub threshold: u32,
    pub sites_at_least: u64,
    pub origin_visits: u32,
    /// Visit count to number of sites with that count.
    pub histogram: BTreeMap<u32, u64>,
}

pub fn recurrence_probe(run: &WalkRun, threshold: u32) -> RecurrenceProbe {
    let mut histogram = BTreeMap::new();
    let mut sites_at_least = 0;
    for (_, c) in run.visits.iter() {
        *histogram.entry(c).or_insert(0) += 1;
        if c >= threshold {
            sites_at_least += 1;
        }
    }
    RecurrenceProbe {
        threshold,
        sites_at_least,
        origin_visits: run.visits.get(crate::env::Site::ORIGIN),
        histogram,
    }
}
