//! The balanced excited random walk.
//!
//! On the first departure from a site the walk steps vertically, on every
//! later departure horizontally, each time to one of the two neighbours with
//! equal probability. Two engines share the decision rule:
//!
//! * [`Engine::Stream`] draws a fresh fair bit per step;
//! * [`Engine::Stack`] reads `I(x, k)` from the keyed [`Environment`], `k`
//!   being the departure index at `x`.
//!
//! Each stack instruction is read at most once, so both engines have the
//! same law.
//!
//! A vertical step happens exactly when leaving a site for the first time,
//! so with `V_t` the number of vertical steps among the first `t`,
//! `R_t = V_t + 1{Z_t is visited for the first time at t} = V_{t+1}`.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Direction, EnvError, Environment, Site, Stacks};
use crate::rng::BitStream;
use crate::sitemap::SiteMap;
use crate::timing::{StepKind, TimingSequence};

/// Longest run for which a full step log may be kept.
pub const FULL_LOG_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WalkError {
    #[error("site limit of {limit} reached at t = {t}")]
    Resource { t: u64, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("t = {0} is not a checkpoint of this run")]
    NotACheckpoint(u64),
    #[error("t = {t} beyond the run length {n}")]
    BeyondRun { t: u64, n: u64 },
    #[error("full step log required")]
    NoStepLog,
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Engine {
    #[default]
    Stream,
    Stack,
}

impl std::str::FromStr for Engine {
    type Err = WalkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stream" => Ok(Engine::Stream),
            "stack" => Ok(Engine::Stack),
            other => Err(WalkError::Config(format!("unknown engine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub seed: u64,
    pub n_steps: u64,
    pub engine: Engine,
    /// Record `(t, Z_t)` whenever `stride` divides `t`; 0 records nothing.
    pub record_stride: u64,
    /// Keep every step (only up to [`FULL_LOG_LIMIT`]).
    pub full_log: bool,
    /// Abort with [`WalkError::Resource`] once this many sites are visited.
    pub max_sites: Option<usize>,
}

impl WalkConfig {
    pub fn new(seed: u64, n_steps: u64) -> Self {
        Self { seed, n_steps, engine: Engine::Stream, record_stride: 0, full_log: false, max_sites: None }
    }

    pub fn engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn stride(mut self, stride: u64) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_full_log(mut self) -> Self {
        self.full_log = true;
        self
    }

    pub fn max_sites(mut self, limit: usize) -> Self {
        self.max_sites = Some(limit);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub range: u64,
    pub vertical_steps: u64,
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: i64,
    pub y_max: i64,
    /// `N_t`, horizontal steps so far.
    pub horizontal: u64,
    /// `M_t`, vertical steps so far (equal to `vertical_steps`).
    pub vertical: u64,
    /// `Z_t` was visited for the first time at `t`.
    pub fresh: bool,
}

impl Checkpoint {
    pub fn horizontal_span(&self) -> u64 {
        self.x_max.abs_diff(self.x_min)
    }

    pub fn vertical_span(&self) -> u64 {
        self.y_max.abs_diff(self.y_min)
    }

    /// `max_{s<=t} |y_s|`.
    pub fn max_abs_y(&self) -> u64 {
        self.y_max.unsigned_abs().max(self.y_min.unsigned_abs())
    }

    /// `R_t = V_t + 1{Z_t fresh}`.
    pub fn range_identity_holds(&self) -> bool {
        self.range == self.vertical_steps + u64::from(self.fresh)
    }
}

/// Checkpoints at `t = 0, 1, 2, 4, ...` and at the final time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSeries {
    pub checkpoints: Vec<Checkpoint>,
}

impl RangeSeries {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("series always holds t = 0")
    }

    pub fn at(&self, t: u64) -> Option<&Checkpoint> {
        self.checkpoints.binary_search_by_key(&t, |c| c.t).ok().map(|i| &self.checkpoints[i])
    }

    pub fn is_monotone(&self) -> bool {
        self.checkpoints.windows(2).all(|w| w[0].range <= w[1].range && w[0].t < w[1].t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(t, Z_t)` at multiples of the record stride.
    pub points: Vec<(u64, Site)>,
    pub final_position: Site,
    /// Every step direction, when a full log was requested.
    pub steps: Option<Vec<Direction>>,
}

#[derive(Debug, Clone)]
pub struct WalkRun {
    pub config: WalkConfig,
    pub trajectory: Trajectory,
    pub series: RangeSeries,
    /// Visit counts per site; `Z_0` counts as a visit.
    pub visits: SiteMap,
    /// Vertical entries per level; the start counts as an entry into level 0.
    pub level_entries: BTreeMap<i64, u64>,
}

struct Tracker {
    x_min: i64,
    x_max: i64,
    y_min: i64,
    y_max: i64,
    horizontal: u64,
    vertical: u64,
}

impl Tracker {
    fn checkpoint(&self, t: u64, range: u64, fresh: bool) -> Checkpoint {
        Checkpoint {
            t,
            range,
            vertical_steps: self.vertical,
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
            horizontal: self.horizontal,
            vertical: self.vertical,
            fresh,
        }
    }
}

fn run_with<F>(config: &WalkConfig, mut direction: F) -> Result<WalkRun, WalkError>
where
    F: FnMut(Site, u64) -> Result<Direction, EnvError>,
{
    let n = config.n_steps;
    if config.full_log && n > FULL_LOG_LIMIT {
        return Err(WalkError::Config(format!("full step log requested for n = {n} > {FULL_LOG_LIMIT}")));
    }
    let limit = config.max_sites.unwrap_or(usize::MAX);
    let expected = ((n as f64).powf(0.8) as usize).clamp(1024, 1 << 26).min(limit.saturating_add(1));
    let mut visits = SiteMap::with_capacity(expected);
    let mut levels: HashMap<i64, u64> = HashMap::new();
    let mut pos = Site::ORIGIN;
    let mut here = visits.increment(pos).expect("origin packs");
    levels.insert(0, 1);
    let mut tr = Tracker { x_min: 0, x_max: 0, y_min: 0, y_max: 0, horizontal: 0, vertical: 0 };
    let mut series = RangeSeries { checkpoints: vec![tr.checkpoint(0, 1, true)] };
    let mut points = Vec::new();
    if config.record_stride > 0 {
        points.reserve((n / config.record_stride + 1).min(1 << 24) as usize);
        points.push((0, pos));
    }
    let mut steps = config.full_log.then(|| Vec::with_capacity(n as usize));
    let mut next_cp = 1u64;
    for t in 1..=n {
        let dir = direction(pos, u64::from(here))?;
        pos = pos.step(dir);
        if dir.is_vertical() {
            tr.vertical += 1;
            *levels.entry(pos.y).or_insert(0) += 1;
            tr.y_min = tr.y_min.min(pos.y);
            tr.y_max = tr.y_max.max(pos.y);
        } else {
            tr.horizontal += 1;
            tr.x_min = tr.x_min.min(pos.x);
            tr.x_max = tr.x_max.max(pos.x);
        }
        here = visits.increment(pos).ok_or(WalkError::Resource { t, limit })?;
        if here == 1 && visits.len() > limit {
            return Err(WalkError::Resource { t, limit });
        }
        if let Some(s) = steps.as_mut() {
            s.push(dir);
        }
        if config.record_stride > 0 && t % config.record_stride == 0 {
            points.push((t, pos));
        }
        if t == next_cp || t == n {
            series.checkpoints.push(tr.checkpoint(t, visits.len() as u64, here == 1));
            if t == next_cp {
                next_cp = next_cp.saturating_mul(2);
            }
        }
    }
    Ok(WalkRun {
        config: config.clone(),
        trajectory: Trajectory { points, final_position: pos, steps },
        series,
        visits,
        level_entries: levels.into_iter().collect(),
    })
}

/// Runs the walk with the engine named in `config`.
pub fn berw_run(config: &WalkConfig) -> Result<WalkRun, WalkError> {
    match config.engine {
        Engine::Stream => {
            let mut bits = BitStream::new(config.seed);
            run_with(config, |_, k| {
                let up = bits.bit();
                Ok(if k == 1 { Direction::vertical(up) } else { Direction::horizontal(up) })
            })
        }
        Engine::Stack => berw_run_with_stacks(&Environment::new(config.seed), config),
    }
}

/// Runs the walk on arbitrary stacks: departure `k` from `x` follows
/// `I(x, k)`. Cease flags are ignored.
pub fn berw_run_with_stacks<S: Stacks + ?Sized>(stacks: &S, config: &WalkConfig) -> Result<WalkRun, WalkError> {
    run_with(config, |site, k| Ok(stacks.instruction(site, k)?.direction))
}

/// The walk split into its horizontal walk `X`, vertical walk `Y` and
/// timing sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub timing: TimingSequence,
}

pub fn decompose(trajectory: &Trajectory) -> Result<Decomposition, WalkError> {
    let steps = trajectory.steps.as_ref().ok_or(WalkError::NoStepLog)?;
    let mut x = vec![0i64];
    let mut y = vec![0i64];
    let mut timing = TimingSequence::new();
    for d in steps {
        let (dx, dy) = d.delta();
        if d.is_horizontal() {
            x.push(x.last().unwrap() + dx);
            timing.push(StepKind::Horizontal);
        } else {
            y.push(y.last().unwrap() + dy);
            timing.push(StepKind::Vertical);
        }
    }
    Ok(Decomposition { x, y, timing })
}

/// `(max - min)` of each coordinate over `[0, t]`.
pub fn coordinate_extrema(series: &RangeSeries, t: u64) -> Result<(u64, u64), WalkError> {
    let last = series.last().t;
    if t > last {
        return Err(WalkError::BeyondRun { t, n: last });
    }
    let c = series.at(t).ok_or(WalkError::NotACheckpoint(t))?;
    Ok((c.horizontal_span(), c.vertical_span()))
}

/// Reconstructs `Z_0..=Z_n` from a full step log.
pub fn replay_path(steps: &[Direction]) -> Vec<Site> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut p = Site::ORIGIN;
    out.push(p);
    for d in steps {
        p = p.step(*d);
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ConstantStacks;

    #[test]
    fn zero_steps() {
        let run = berw_run(&WalkConfig::new(1, 0)).unwrap();
        assert_eq!(run.series.checkpoints.len(), 1);
        assert_eq!(run.series.last().range, 1);
        assert_eq!(run.trajectory.final_position, Site::ORIGIN);
        assert_eq!(coordinate_extrema(&run.series, 0).unwrap(), (0, 0));
    }

    #[test]
    fn straight_up_oracle() {
        let run = berw_run_with_stacks(&ConstantStacks::up_right(), &WalkConfig::new(0, 37).with_full_log()).unwrap();
        assert_eq!(run.trajectory.final_position, Site::new(0, 37));
        for c in &run.series.checkpoints {
            assert_eq!(c.range, c.t + 1);
            assert_eq!(c.vertical_steps, c.t);
            assert_eq!(c.horizontal, 0);
            assert_eq!(c.range, 1 + c.vertical_steps);
        }
        assert!(run.trajectory.steps.as_ref().unwrap().iter().all(|d| *d == Direction::North));
        assert_eq!(coordinate_extrema(&run.series, 4).unwrap(), (0, 4));
        assert_eq!(coordinate_extrema(&run.series, 37).unwrap(), (0, 37));
        assert_eq!(coordinate_extrema(&run.series, 5), Err(WalkError::NotACheckpoint(5)));
        assert_eq!(coordinate_extrema(&run.series, 38), Err(WalkError::BeyondRun { t: 38, n: 37 }));
        let dec = decompose(&run.trajectory).unwrap();
        assert!(dec.timing.pairs().all(|(n, _)| n == 0));
        assert!(dec.timing.pairs().enumerate().all(|(t, (_, m))| m == t as u64));
    }

    #[test]
    fn back_and_forth_breaks_the_naive_identity() {
        // (0,0) -> (0,1) -> (0,0): two vertical steps, two sites
        let mut stacks = crate::env::ScriptedStacks::new();
        use crate::env::Instruction;
        stacks.push_stack(Site::ORIGIN, &[Instruction::step(Direction::North), Instruction::step(Direction::East)]);
        stacks.push_stack(Site::new(0, 1), &[Instruction::step(Direction::South)]);
        let run = berw_run_with_stacks(&stacks, &WalkConfig::new(0, 2)).unwrap();
        let c = run.series.at(2).unwrap();
        assert_eq!((c.range, c.vertical_steps, c.fresh), (2, 2, false));
        assert!(c.range_identity_holds());
        assert_ne!(c.range, 1 + c.vertical_steps);
    }

    #[test]
    fn first_step_is_vertical() {
        for seed in 0..20 {
            let run = berw_run(&WalkConfig::new(seed, 1).with_full_log()).unwrap();
            let dec = decompose(&run.trajectory).unwrap();
            assert_eq!(dec.timing.pairs().collect::<Vec<_>>(), vec![(0, 0), (0, 1)]);
            assert_eq!(dec.x, vec![0]);
            assert_eq!(dec.y.len(), 2);
        }
    }

    #[test]
    fn full_log_limit_enforced() {
        let err = berw_run(&WalkConfig::new(0, FULL_LOG_LIMIT + 1).with_full_log()).unwrap_err();
        assert!(matches!(err, WalkError::Config(_)));
        let run = berw_run(&WalkConfig::new(0, 100)).unwrap();
        assert_eq!(decompose(&run.trajectory), Err(WalkError::NoStepLog));
    }

    #[test]
    fn site_limit_is_a_resource_error() {
        let err = berw_run(&WalkConfig::new(3, 100_000).max_sites(50)).unwrap_err();
        match err {
            WalkError::Resource { t, limit } => {
                assert_eq!(limit, 50);
                assert!(t > 0 && t < 100_000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stride_records_multiples() {
        let run = berw_run(&WalkConfig::new(8, 1000).stride(100).with_full_log()).unwrap();
        let path = replay_path(run.trajectory.steps.as_ref().unwrap());
        assert_eq!(run.trajectory.points.len(), 11);
        for (t, z) in &run.trajectory.points {
            assert_eq!(t % 100, 0);
            assert_eq!(path[*t as usize], *z);
        }
    }

    #[test]
    fn engines_parse() {
        assert_eq!("stack".parse::<Engine>().unwrap(), Engine::Stack);
        assert!("warp".parse::<Engine>().is_err());
    }
}
