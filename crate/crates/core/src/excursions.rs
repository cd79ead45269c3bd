//! Continuous-time excursion families from the horizontal axis.
//!
//! One particle starts at each `(x, 0)` with `|x| <= W`. Every site carries a
//! rate-one Poisson clock; on its `n`-th firing, if active particles are
//! present, one of them (picked with the keyed uniform `U(y, n)` and the
//! ordering `u, u+1, u-1, u+2, ...` around the site's abscissa `u`) reads the
//! next instruction of the site's stack and steps. A particle stops on its
//! return to the axis. Outside the simulation box a particle is marked
//! truncated and removed.
//!
//! In [`Version::B`] every first instruction `I(y, 1)` is replaced by the
//! reading particle's own Rademacher sequence.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Direction, Environment, Site};
use crate::rng::{exp1, keyed, unit_open_closed, BitStream};
use crate::stats::Estimate;

const TAG_FIRE: u64 = 0xF12E;
const TAG_TIE: u64 = 0x71E;
const TAG_ENV: u64 = 0xE27;
const TAG_OWN: u64 = 0x0B1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcursionError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Version {
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripConfig {
    /// Particles start at `(x, 0)` for `|x| <= half_width`.
    pub half_width: i64,
    pub horizon: f64,
    pub seed: u64,
    /// The box is `|x| <= half_width + margin`, `|y| <= margin`.
    pub margin: i64,
    pub version: Version,
    pub log_events: bool,
}

impl StripConfig {
    pub fn new(half_width: i64, horizon: f64, seed: u64) -> Self {
        Self { half_width, horizon, seed, margin: 64, version: Version::A, log_events: false }
    }

    pub fn version(mut self, v: Version) -> Self {
        self.version = v;
        self
    }

    pub fn margin(mut self, m: i64) -> Self {
        self.margin = m;
        self
    }

    pub fn logged(mut self) -> Self {
        self.log_events = true;
        self
    }

    fn validate(&self) -> Result<(), ExcursionError> {
        if self.half_width < 0 || self.margin < 1 || !(self.horizon > 0.0) {
            return Err(ExcursionError::Domain(format!(
                "need half_width >= 0, margin >= 1, horizon > 0; got {}, {}, {}",
                self.half_width, self.margin, self.horizon
            )));
        }
        Ok(())
    }

    fn in_box(&self, s: Site) -> bool {
        s.x.abs() <= self.half_width + self.margin && s.y.abs() <= self.margin
    }
}

/// Position of `x` in the ordering `u, u+1, u-1, u+2, u-2, ...`.
pub fn tie_rank(u: i64, x: i64) -> u64 {
    let d = x - u;
    match d.signum() {
        0 => 0,
        1 => 2 * d as u64 - 1,
        _ => 2 * d.unsigned_abs(),
    }
}

/// Index into `m` ordered candidates chosen by `u` in `(0, 1]`.
pub fn tie_pick(u: f64, m: usize) -> usize {
    ((u * m as f64).ceil() as usize).clamp(1, m) - 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleStats {
    pub start_x: i64,
    pub returned: bool,
    pub truncated: bool,
    /// Vertical moves made, `τ*`.
    pub vertical_moves: u64,
    /// Vertical departures per level.
    pub departures: BTreeMap<i64, u64>,
    pub final_position: Site,
}

impl ParticleStats {
    pub fn departures_from(&self, level: i64) -> u64 {
        self.departures.get(&level).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_bits: u64,
    pub site: Site,
    pub firing: u64,
    pub particle: usize,
    pub instruction: u64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub particles: Vec<ParticleStats>,
    pub moves: u64,
    pub events: Option<Vec<EventRecord>>,
}

struct Clock {
    n: u64,
    time: f64,
}

pub fn simulate(cfg: &StripConfig) -> Result<ExcursionStats, ExcursionError> {
    cfg.validate()?;
    let env = Environment::new(keyed(cfg.seed, &[TAG_ENV]));
    let fire_gap = |s: Site, n: u64| exp1(keyed(cfg.seed, &[TAG_FIRE, s.x as u64, s.y as u64, n]));
    let mut clocks: HashMap<Site, Clock> = HashMap::new();
    let mut used: HashMap<Site, u64> = HashMap::new();
    let mut occupants: HashMap<Site, Vec<usize>> = HashMap::new();
    let mut heap: BinaryHeap<Reverse<(u64, i64, i64, u64)>> = BinaryHeap::new();
    let mut own: Vec<u64> = Vec::new();
    let mut stats: Vec<ParticleStats> = Vec::new();
    let mut events = cfg.log_events.then(Vec::new);

    let schedule = |site: Site, after: f64, clocks: &mut HashMap<Site, Clock>, heap: &mut BinaryHeap<_>| {
        let c = clocks.entry(site).or_insert(Clock { n: 0, time: 0.0 });
        while c.time <= after {
            c.n += 1;
            c.time += fire_gap(site, c.n);
        }
        heap.push(Reverse((c.time.to_bits(), site.x, site.y, c.n)));
    };

    for x in -cfg.half_width..=cfg.half_width {
        let start = Site::new(x, 0);
        stats.push(ParticleStats {
            start_x: x,
            returned: false,
            truncated: false,
            vertical_moves: 0,
            departures: BTreeMap::new(),
            final_position: start,
        });
        own.push(0);
        occupants.insert(start, vec![stats.len() - 1]);
        schedule(start, 0.0, &mut clocks, &mut heap);
    }

    let mut moves = 0u64;
    while let Some(Reverse((bits, x, y, n))) = heap.pop() {
        let t = f64::from_bits(bits);
        if t > cfg.horizon {
            break;
        }
        let site = Site::new(x, y);
        let Some(here) = occupants.get_mut(&site) else { continue };
        here.sort_by_key(|&p| tie_rank(x, stats[p].start_x));
        let u = unit_open_closed(keyed(cfg.seed, &[TAG_TIE, x as u64, y as u64, n]));
        let p = here.remove(tie_pick(u, here.len()));
        let vacated = here.is_empty();
        if vacated {
            occupants.remove(&site);
        }
        let k = {
            let c = used.entry(site).or_insert(0);
            *c += 1;
            *c
        };
        let dir = match (cfg.version, k) {
            (Version::B, 1) => {
                own[p] += 1;
                let w = keyed(cfg.seed, &[TAG_OWN, stats[p].start_x as u64, own[p]]);
                Direction::vertical(w >> 63 == 1)
            }
            _ => env.instruction_at(site, k).expect("k >= 1").direction,
        };
        moves += 1;
        if let Some(log) = events.as_mut() {
            log.push(EventRecord { time_bits: bits, site, firing: n, particle: p, instruction: k, direction: dir });
        }
        let next = site.step(dir);
        let st = &mut stats[p];
        if dir.is_vertical() {
            st.vertical_moves += 1;
            *st.departures.entry(site.y).or_insert(0) += 1;
        }
        st.final_position = next;
        if next.y == 0 {
            st.returned = true;
        } else if !cfg.in_box(next) {
            st.truncated = true;
        } else {
            let dest = occupants.entry(next).or_default();
            dest.push(p);
            if dest.len() == 1 {
                schedule(next, t, &mut clocks, &mut heap);
            }
        }
        if !vacated {
            schedule(site, t, &mut clocks, &mut heap);
        }
    }
    Ok(ExcursionStats { particles: stats, moves, events })
}

/// Aggregate over an ensemble, conditioning on particles that stayed in the
/// box; departures are averaged over returned particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionReport {
    pub runs: usize,
    pub particles: usize,
    pub return_rate: f64,
    pub truncation_rate: f64,
    pub mean_departures: BTreeMap<i64, Estimate>,
}

pub fn ensemble_report(runs: &[ExcursionStats], levels: &[i64]) -> ExcursionReport {
    let all: Vec<&ParticleStats> = runs.iter().flat_map(|r| &r.particles).collect();
    let kept: Vec<&&ParticleStats> = all.iter().filter(|p| !p.truncated).collect();
    let returned: Vec<&&&ParticleStats> = kept.iter().filter(|p| p.returned).collect();
    let mean_departures = levels
        .iter()
        .map(|&i| (i, Estimate::from_samples(returned.iter().map(|p| p.departures_from(i) as f64))))
        .collect();
    ExcursionReport {
        runs: runs.len(),
        particles: all.len(),
        return_rate: returned.len() as f64 / kept.len().max(1) as f64,
        truncation_rate: (all.len() - kept.len()) as f64 / all.len().max(1) as f64,
        mean_departures,
    }
}

/// Departures from level `i >= 1` during one SRW excursion from 0.
///
/// Below `i` the walk is simulated step by step. Every excursion above `i`
/// returns to `i` almost surely, so an up-step from `i` is folded into an
/// immediate return.
pub fn srw_excursion_departures_one(bits: &mut BitStream, i: u64) -> u64 {
    let i = i as i64;
    if !bits.bit() {
        return 0;
    }
    let mut s = 1i64;
    let mut count = 0u64;
    loop {
        if s == i {
            count += 1;
            if bits.bit() {
                continue;
            }
            s -= 1;
        } else {
            s += bits.sign();
        }
        if s == 0 {
            return count;
        }
    }
}

/// Mean departures from level `i` over `trials` SRW excursions.
pub fn srw_excursion_departures(i: u64, trials: u64, seed: u64) -> Result<Estimate, ExcursionError> {
    if i == 0 {
        return Err(ExcursionError::Domain("level must be at least 1".into()));
    }
    let mut bits = BitStream::new(keyed(seed, &[i]));
    Ok(Estimate::from_samples((0..trials).map(|_| srw_excursion_departures_one(&mut bits, i) as f64)))
}

/// Rate-one Poisson firings on `[0, t]` in the box `|x|, |y| <= radius`.
#[derive(Debug, Clone)]
pub struct FiringLog {
    pub radius: i64,
    pub horizon: f64,
    times: HashMap<Site, Vec<f64>>,
}

impl FiringLog {
    pub fn generate(seed: u64, radius: i64, horizon: f64) -> Self {
        let mut times = HashMap::new();
        for x in -radius..=radius {
            for y in -radius..=radius {
                let mut v = Vec::new();
                let mut t = 0.0;
                for n in 1.. {
                    t += exp1(keyed(seed, &[TAG_FIRE, x as u64, y as u64, n]));
                    if t > horizon {
                        break;
                    }
                    v.push(t);
                }
                times.insert(Site::new(x, y), v);
            }
        }
        Self { radius, horizon, times }
    }

    pub fn times(&self, s: Site) -> &[f64] {
        self.times.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Latest firing at `s` not after `bound`.
    pub fn latest_before(&self, s: Site, bound: f64) -> Option<f64> {
        let v = self.times(s);
        let i = v.partition_point(|&t| t <= bound);
        (i > 0).then(|| v[i - 1])
    }
}

/// Self-avoiding vertex sequences `V_1..V_n`, `V_1` adjacent to the origin,
/// carrying firing times `t >= T_1 >= T_2 >= ... >= T_n`.
pub fn descending_chains(log: &FiringLog, t: f64, n: usize) -> u64 {
    fn dfs(log: &FiringLog, path: &mut Vec<Site>, bound: f64, left: usize) -> u64 {
        if left == 0 {
            return 1;
        }
        let last = *path.last().unwrap();
        let mut total = 0;
        for d in [Direction::East, Direction::West, Direction::North, Direction::South] {
            let v = last.step(d);
            if path[1..].contains(&v) {
                continue;
            }
            // the latest admissible firing leaves the most room downstream
            if let Some(tv) = log.latest_before(v, bound) {
                path.push(v);
                total += dfs(log, path, tv, left - 1);
                path.pop();
            }
        }
        total
    }
    let mut path = vec![Site::ORIGIN];
    dfs(log, &mut path, t, n)
}

pub fn count_descending_chains(t: f64, n: usize, radius: i64, trials: u64, seed: u64) -> Result<Estimate, ExcursionError> {
    if n == 0 || !(t >= 0.0) {
        return Err(ExcursionError::Domain(format!("need n >= 1 and t >= 0, got {n}, {t}")));
    }
    if radius < n as i64 {
        return Err(ExcursionError::Domain(format!("box radius {radius} cannot contain chains of length {n}")));
    }
    Ok(Estimate::from_samples((0..trials).map(|i| {
        let log = FiringLog::generate(keyed(seed, &[i]), n as i64, t);
        descending_chains(&log, t, n) as f64
    })))
}
