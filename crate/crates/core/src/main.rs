use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use berw::analysis::{
    bound_diagnostics, diagnostic_rows, estimate_alpha, recurrence_probe, AnalysisError, DiagnosticsReport,
    RecurrenceProbe, RunManifest,
};
use berw::env::{abelian_equal, particles_at, AbelianVerdict, CeaseOnFirst, EnvError, Environment, Site};
use berw::excursions::{ensemble_report, simulate, ExcursionError, StripConfig, Version};
use berw::io::{write_json, write_rows, write_series, write_trajectory, IoError, Report};
use berw::level::{detect_bad_interval, surplus_scan, LevelEnvironment, LevelError, DEFAULT_BUDGET};
use berw::rng::{seeded_rng, srw_path};
use berw::slow::{
    maximal_slow_dyadic_cover, solve_theta, uncovered_probability, DyadicInterval, PathExtrema, SlowError, ThetaRoot,
};
use berw::timing::{build_seeded, RuleKind, TimingError};
use berw::walk::{berw_run, Engine, RangeSeries, WalkConfig, WalkError};

#[derive(Parser)]
#[command(name = "berw", version, about = "Balanced excited random walk laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Output {
    /// Output directory; JSON goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one walk and report its range series.
    Simulate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value = "berw")]
        rule: RuleKind,
        #[arg(long, default_value = "stream")]
        engine: Engine,
        /// Record the position every `stride` steps.
        #[arg(long, default_value_t = 0)]
        stride: u64,
        #[arg(long)]
        max_sites: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Fit the range growth exponent over an ensemble.
    EstimateAlpha {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1 << 20)]
        n: u64,
        #[arg(long, default_value = "berw")]
        rule: RuleKind,
        #[arg(long)]
        max_sites: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Compare used instructions under random movement lists.
    AbelianCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 5)]
        particles: usize,
        #[arg(long, default_value_t = 1000)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Maximal slow dyadic cover of a simple random walk path.
    SlowCover {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 12)]
        k: u32,
        #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
        epsilon: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Surplus and bad-interval scans of level environments.
    LevelStats {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 16)]
        n: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Strip excursion ensemble.
    Excursions {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 5)]
        width: i64,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
        #[arg(long, default_value = "a")]
        version: String,
        #[command(flatten)]
        output: Output,
    },
    /// Growth bound diagnostics and a recurrence probe for one walk.
    Diagnostics {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        /// Visit count reported by the recurrence probe.
        #[arg(long, default_value_t = 10)]
        threshold: u32,
        #[command(flatten)]
        output: Output,
    },
    /// Write figure data: sampled trajectory, range series and diagnostics.
    Export {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 1000)]
        stride: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Contract(String),
    Resource(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Contract(_) => 2,
            Failure::Resource(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl From<WalkError> for Failure {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::Resource { .. } => Failure::Resource(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

impl From<TimingError> for Failure {
    fn from(e: TimingError) -> Self {
        match e {
            TimingError::Resource(_) => Failure::Resource(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Walk(w) => w.into(),
            AnalysisError::Timing(t) => t.into(),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

impl From<LevelError> for Failure {
    fn from(e: LevelError) -> Self {
        match e {
            LevelError::Budget(_) => Failure::Resource(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

macro_rules! contract_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Contract(e.to_string())
            }
        }
    )*};
}
contract_errors!(EnvError, SlowError, ExcursionError);

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `report.json`, or `manifest.json` plus `name.csv` rows.
fn emit<T: Serialize, R: Serialize>(output: &Output, manifest: RunManifest, result: T, rows: &[R], name: &str) -> Result<(), Failure> {
    match (&output.out, output.format) {
        (None, Format::Json) => write_json(&Report { manifest, result }, io::stdout().lock())?,
        (None, Format::Csv) => write_rows(rows, io::stdout().lock())?,
        (Some(dir), Format::Json) => write_json(&Report { manifest, result }, create(dir, "report.json")?)?,
        (Some(dir), Format::Csv) => {
            write_json(&manifest, create(dir, "manifest.json")?)?;
            write_rows(rows, create(dir, &format!("{name}.csv"))?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RangeRow {
    t: u64,
    range: u64,
}

#[derive(Serialize)]
struct AbelianSummary {
    equal: u64,
    different: u64,
    indeterminate: u64,
}

#[derive(Serialize)]
struct CoverSummary {
    seed: u64,
    k: u32,
    epsilon: f64,
    members: Vec<DyadicInterval>,
    covered_fraction: f64,
    antichain: bool,
    uncovered: Vec<UncoveredRow>,
    theta: Vec<ThetaRoot>,
}

#[derive(Serialize)]
struct UncoveredRow {
    k: u32,
    epsilon: f64,
    s: u64,
    estimate: f64,
    se: f64,
}

#[derive(Serialize)]
struct SimulateResult<'a> {
    series: &'a RangeSeries,
    trajectory: &'a [(u64, Site)],
}

#[derive(Serialize)]
struct DiagnosticsResult {
    diagnostics: DiagnosticsReport,
    recurrence: RecurrenceProbe,
}

#[derive(Serialize)]
struct LevelRow {
    seed: u64,
    max_surplus: i64,
    surplus_threshold: f64,
    surplus_ok: bool,
    worst_ratio: f64,
    worst_a: i64,
    worst_b: i64,
    bad_interval: bool,
}

#[derive(Serialize)]
struct ParticleRow {
    seed: u64,
    start_x: i64,
    returned: bool,
    truncated: bool,
    vertical_moves: u64,
}

#[derive(Serialize)]
struct SlopeRow {
    seed: u64,
    slope: f64,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { seed, n, rule, engine, stride, max_sites, output } => {
            let manifest = RunManifest::single("simulate", seed)
                .param("n", n)
                .param("rule", rule)
                .param("engine", format!("{engine:?}").to_lowercase())
                .param("stride", stride);
            if rule == RuleKind::Berw {
                let mut cfg = WalkConfig::new(seed, n).engine(engine).stride(stride);
                cfg.max_sites = max_sites;
                let run = berw_run(&cfg)?;
                eprintln!("R_{n} = {}, final position {}", run.series.last().range, run.trajectory.final_position);
                if let (Some(dir), Format::Csv) = (&output.out, output.format) {
                    write_json(&manifest, create(dir, "manifest.json")?)?;
                    write_series(&run.series, create(dir, "series.csv")?)?;
                    write_trajectory(&run.trajectory.points, create(dir, "trajectory.csv")?)?;
                    return Ok(());
                }
                let rows = &run.series.checkpoints;
                let result = SimulateResult { series: &run.series, trajectory: &run.trajectory.points };
                emit(&output, manifest, result, rows, "series")
            } else {
                let built = build_seeded(rule, seed, n, false)?;
                eprintln!("R_{n} = {}, final position {}", built.range, built.final_position);
                let rows: Vec<RangeRow> = built.checkpoints.iter().map(|&(t, range)| RangeRow { t, range }).collect();
                emit(&output, manifest, &built.checkpoints, &rows, "series")
            }
        }
        Command::EstimateAlpha { seed, seeds, n, rule, max_sites, output } => {
            let manifest = RunManifest::new("estimate-alpha", seed, seeds).param("n", n).param("rule", rule);
            let fit = estimate_alpha(seed, seeds, n, rule, max_sites)?;
            eprintln!("median slope {:.4}, IQR [{:.4}, {:.4}]", fit.median_slope, fit.iqr.0, fit.iqr.1);
            let rows: Vec<SlopeRow> = fit.per_seed.iter().map(|f| SlopeRow { seed: f.seed, slope: f.slope }).collect();
            emit(&output, manifest, &fit, &rows, "slopes")
        }
        Command::AbelianCheck { seed, seeds, particles, budget, output } => {
            let manifest = RunManifest::new("abelian-check", seed, seeds)
                .param("particles", particles)
                .param("budget", budget);
            let mut s = AbelianSummary { equal: 0, different: 0, indeterminate: 0 };
            for &sd in &manifest.seeds {
                let mut rng = seeded_rng(sd);
                let env = CeaseOnFirst(Environment::new(sd));
                let starts: Vec<Site> =
                    (0..particles).map(|_| Site::new(rng.gen_range(-3..=3), rng.gen_range(-3..=3))).collect();
                let mut a: Vec<usize> = (0..particles).collect();
                let mut b = a.clone();
                a.shuffle(&mut rng);
                b.shuffle(&mut rng);
                match abelian_equal(&env, &particles_at(&starts), &a, &b, budget)? {
                    AbelianVerdict::Equal => s.equal += 1,
                    AbelianVerdict::Different => s.different += 1,
                    AbelianVerdict::Indeterminate => s.indeterminate += 1,
                }
            }
            eprintln!("equal {}, different {}, indeterminate {}", s.equal, s.different, s.indeterminate);
            let different = s.different;
            emit(&output, manifest, &s, &[&s], "abelian")?;
            if different > 0 {
                return Err(Failure::Contract(format!("{different} movement list pairs used different instructions")));
            }
            Ok(())
        }
        Command::SlowCover { seed, seeds, k, epsilon, output } => {
            let manifest = RunManifest::new("slow-cover", seed, seeds).param("k", k).param("epsilon", epsilon);
            if k > 24 {
                return Err(Failure::Contract(format!("k = {k} exceeds 24")));
            }
            let path = PathExtrema::new(srw_path(seed, 1 << k));
            let cover = maximal_slow_dyadic_cover(&path, epsilon, k)?;
            // uncovered probability of the midpoint 2^(j-1) of each horizon 2^j
            let uncovered = (1..=k)
                .map(|j| {
                    let s = 1u64 << (j - 1);
                    uncovered_probability(&manifest.seeds, epsilon, j, s)
                        .map(|e| UncoveredRow { k: j, epsilon, s, estimate: e.mean, se: e.se })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let theta = (1..=99).map(|i| solve_theta(i as f64 / 100.0)).collect::<Result<Vec<_>, _>>()?;
            let summary = CoverSummary {
                seed,
                k,
                epsilon,
                members: cover.members.clone(),
                covered_fraction: cover.covered_fraction(),
                antichain: cover.is_antichain(),
                uncovered,
                theta,
            };
            eprintln!("{} members, covered fraction {:.4}", summary.members.len(), summary.covered_fraction);
            if let (Some(dir), Format::Csv) = (&output.out, output.format) {
                write_json(&manifest, create(dir, "manifest.json")?)?;
                write_rows(&summary.members, create(dir, "cover.csv")?)?;
                write_rows(&summary.uncovered, create(dir, "uncovered.csv")?)?;
                write_rows(&summary.theta, create(dir, "theta.csv")?)?;
                return Ok(());
            }
            emit(&output, manifest, &summary, &summary.members, "cover")
        }
        Command::LevelStats { seed, seeds, n, output } => {
            let manifest = RunManifest::new("level-stats", seed, seeds).param("n", n);
            let mut rows = Vec::new();
            for &sd in &manifest.seeds {
                let env = LevelEnvironment::new(0, Environment::new(sd));
                let scan = surplus_scan(&env, n)?;
                let bad = detect_bad_interval(&env, n, false, DEFAULT_BUDGET)?;
                rows.push(LevelRow {
                    seed: sd,
                    max_surplus: scan.max_surplus,
                    surplus_threshold: scan.threshold,
                    surplus_ok: scan.e_holds,
                    worst_ratio: bad.worst.ratio,
                    worst_a: bad.worst.a,
                    worst_b: bad.worst.b,
                    bad_interval: bad.d_holds,
                });
            }
            let ok = rows.iter().filter(|r| r.surplus_ok).count();
            let bad = rows.iter().filter(|r| r.bad_interval).count();
            eprintln!("surplus bound held in {ok}/{seeds}, bad interval in {bad}/{seeds}");
            emit(&output, manifest, &rows, &rows, "levels")
        }
        Command::Excursions { seed, seeds, width, horizon, version, output } => {
            let version = match version.to_ascii_lowercase().as_str() {
                "a" => Version::A,
                "b" => Version::B,
                other => return Err(Failure::Contract(format!("unknown version {other}"))),
            };
            let manifest = RunManifest::new("excursions", seed, seeds)
                .param("width", width)
                .param("horizon", horizon)
                .param("version", format!("{version:?}"));
            let runs = manifest
                .seeds
                .iter()
                .map(|&sd| simulate(&StripConfig::new(width, horizon, sd).version(version)))
                .collect::<Result<Vec<_>, _>>()?;
            let report = ensemble_report(&runs, &[1, 2, 3]);
            eprintln!("return rate {:.4}", report.return_rate);
            let rows: Vec<ParticleRow> = runs
                .iter()
                .zip(&manifest.seeds)
                .flat_map(|(r, &seed)| {
                    r.particles.iter().map(move |p| ParticleRow {
                        seed,
                        start_x: p.start_x,
                        returned: p.returned,
                        truncated: p.truncated,
                        vertical_moves: p.vertical_moves,
                    })
                })
                .collect();
            emit(&output, manifest, &report, &rows, "particles")
        }
        Command::Diagnostics { seed, n, threshold, output } => {
            let manifest = RunManifest::single("diagnostics", seed).param("n", n).param("threshold", threshold);
            let run = berw_run(&WalkConfig::new(seed, n))?;
            let diag = bound_diagnostics(&run);
            let probe = recurrence_probe(&run, threshold);
            eprintln!(
                "max level entries {} against cap {:.1}, {} sites visited at least {threshold} times",
                diag.max_level_entries, diag.level_cap, probe.sites_at_least
            );
            let rows = diag.rows.clone();
            emit(&output, manifest, DiagnosticsResult { diagnostics: diag, recurrence: probe }, &rows, "diagnostics")
        }
        Command::Export { seed, n, stride, out } => {
            let manifest = RunManifest::single("export", seed).param("n", n).param("stride", stride);
            let run = berw_run(&WalkConfig::new(seed, n).stride(stride))?;
            write_json(&manifest, create(&out, "manifest.json")?)?;
            write_trajectory(&run.trajectory.points, create(&out, "trajectory.csv")?)?;
            write_series(&run.series, create(&out, "series.csv")?)?;
            write_rows(&diagnostic_rows(&run.series), create(&out, "diagnostics.csv")?)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (kind, msg) = match &e {
                Failure::Contract(m) => ("contract violation", m),
                Failure::Resource(m) => ("resource failure", m),
                Failure::Io(m) => ("io error", m),
            };
            eprintln!("error: {kind}: {msg}");
            ExitCode::from(e.code())
        }
    }
}
