//! Walk families inside a single horizontal level.
//!
//! The `a`-family runs walks one after another from `(a_1, y), (a_2, y), ...`.
//! Each walk reads the first unused instruction at its current site; on
//! reaching a site whose stack is untouched it reads that site's (vertical)
//! first instruction and stops. The lifetime of a walk is the number of
//! instructions it reads.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Direction, Site, Stacks, UsedSet};
use crate::rng::BitStream;
use crate::stats::Estimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelError {
    #[error("step budget of {0} instructions exhausted")]
    Budget(u64),
    #[error("infeasible entries: {x} used {used} times, U = {allowed}")]
    Infeasible { x: i64, used: u64, allowed: u32 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}

/// Number of vertical entries `U_x` into the level at each abscissa.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryCounts {
    /// Vertical first instructions at `(x, y ± 1)` pointing into the level,
    /// plus one at the origin of level 0.
    FromStacks,
    Constant(u32),
    Table { values: BTreeMap<i64, u32>, default: u32 },
}

#[derive(Debug, Clone)]
pub struct LevelEnvironment<S> {
    pub level: i64,
    pub stacks: S,
    pub entries: EntryCounts,
}

impl<S: Stacks> LevelEnvironment<S> {
    pub fn new(level: i64, stacks: S) -> Self {
        Self { level, stacks, entries: EntryCounts::FromStacks }
    }

    pub fn with_entries(mut self, entries: EntryCounts) -> Self {
        self.entries = entries;
        self
    }

    pub fn u(&self, x: i64) -> u32 {
        match &self.entries {
            EntryCounts::Constant(c) => *c,
            EntryCounts::Table { values, default } => values.get(&x).copied().unwrap_or(*default),
            EntryCounts::FromStacks => {
                let y = self.level;
                let below = self.stacks.instruction(Site::new(x, y - 1), 1).map(|i| i.direction == Direction::North);
                let above = self.stacks.instruction(Site::new(x, y + 1), 1).map(|i| i.direction == Direction::South);
                u32::from(below.unwrap_or(false)) + u32::from(above.unwrap_or(false)) + u32::from(x == 0 && y == 0)
            }
        }
    }

    /// `A_I` for `I = [a, b)`: each `x` repeated `U_x` times.
    pub fn entries_of(&self, a: i64, b: i64) -> Vec<i64> {
        (a..b).flat_map(|x| std::iter::repeat_n(x, self.u(x) as usize)).collect()
    }

    /// `S_I = Σ_{x in [a, b)} (U_x - 1)`.
    pub fn surplus(&self, a: i64, b: i64) -> i64 {
        (a..b).map(|x| self.u(x) as i64 - 1).sum()
    }

    fn direction(&self, x: i64, k: u64) -> Result<Direction, LevelError> {
        Ok(self.stacks.instruction(Site::new(x, self.level), k)?.direction)
    }
}

/// Instruction counters for one level, stored densely around the entries.
#[derive(Debug, Clone)]
pub struct LevelState {
    lo: i64,
    used: VecDeque<u64>,
    pub total: u64,
}

impl LevelState {
    pub fn new(center: i64) -> Self {
        Self { lo: center, used: VecDeque::new(), total: 0 }
    }

    fn slot(&mut self, x: i64) -> &mut u64 {
        if self.used.is_empty() {
            self.lo = x;
        }
        while x < self.lo {
            self.used.push_front(0);
            self.lo -= 1;
        }
        let i = (x - self.lo) as usize;
        while i >= self.used.len() {
            self.used.push_back(0);
        }
        &mut self.used[i]
    }

    pub fn used_at(&self, x: i64) -> u64 {
        if x < self.lo {
            return 0;
        }
        self.used.get((x - self.lo) as usize).copied().unwrap_or(0)
    }

    pub fn is_visited(&self, x: i64) -> bool {
        self.used_at(x) > 0
    }

    /// Maximal runs of visited sites, as inclusive `(start, end)`.
    pub fn visited_intervals(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        let mut run: Option<(i64, i64)> = None;
        for (i, &c) in self.used.iter().enumerate() {
            let x = self.lo + i as i64;
            match (c > 0, run) {
                (true, Some((s, _))) => run = Some((s, x)),
                (true, None) => run = Some((x, x)),
                (false, Some(r)) => {
                    out.push(r);
                    run = None;
                }
                (false, None) => {}
            }
        }
        out.extend(run);
        out
    }

    pub fn used_set(&self, level: i64) -> UsedSet {
        self.used
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (Site::new(self.lo + i as i64, level), c))
            .collect()
    }

    /// Distance from `x` to the nearest unvisited site, and to the first
    /// unvisited site on its right.
    pub fn distances(&self, x: i64) -> (u64, u64) {
        if !self.is_visited(x) {
            return (0, 0);
        }
        let mut r = x;
        while self.is_visited(r) {
            r += 1;
        }
        let mut l = x;
        while self.is_visited(l) {
            l -= 1;
        }
        let right = (r - x) as u64;
        (right.min((x - l) as u64), right)
    }

    /// Runs one walk from `x`; returns its lifetime.
    pub fn run_walk<S: Stacks>(&mut self, env: &LevelEnvironment<S>, start: i64, budget: u64) -> Result<u64, LevelError> {
        let mut x = start;
        let mut life = 0u64;
        loop {
            if self.total >= budget {
                return Err(LevelError::Budget(budget));
            }
            let c = self.slot(x);
            *c += 1;
            let k = *c;
            self.total += 1;
            life += 1;
            if k == 1 {
                return Ok(life);
            }
            x += env.direction(x, k)?.delta().0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub lifetimes: Vec<u64>,
    pub total: u64,
    pub visited: Vec<(i64, i64)>,
}

pub const DEFAULT_BUDGET: u64 = 1 << 40;

pub fn run_family<S: Stacks>(env: &LevelEnvironment<S>, a: &[i64], budget: u64) -> Result<FamilyResult, LevelError> {
    let (res, _) = run_family_state(env, a, budget)?;
    Ok(res)
}

pub fn run_family_state<S: Stacks>(
    env: &LevelEnvironment<S>,
    a: &[i64],
    budget: u64,
) -> Result<(FamilyResult, LevelState), LevelError> {
    let mut st = LevelState::new(a.first().copied().unwrap_or(0));
    let mut lifetimes = Vec::with_capacity(a.len());
    for &x in a {
        lifetimes.push(st.run_walk(env, x, budget)?);
    }
    let total = st.total;
    Ok((FamilyResult { lifetimes, total, visited: st.visited_intervals() }, st))
}

pub fn check_feasible<S: Stacks>(env: &LevelEnvironment<S>, a: &[i64]) -> Result<(), LevelError> {
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for &x in a {
        *counts.entry(x).or_insert(0) += 1;
    }
    for (x, used) in counts {
        let allowed = env.u(x);
        if used > u64::from(allowed) {
            return Err(LevelError::Infeasible { x, used, allowed });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusScan {
    pub n: u64,
    /// Maximal surplus over `[a, b)` with `-n² <= a <= b <= n²`, `b - a <= n`.
    pub max_surplus: i64,
    pub argmax: (i64, i64),
    pub threshold: f64,
    /// `M_n <= √(6 n ln n)`.
    pub e_holds: bool,
}

pub fn surplus_threshold(n: u64) -> f64 {
    (6.0 * n as f64 * (n as f64).ln()).sqrt()
}

pub fn surplus_scan<S: Stacks>(env: &LevelEnvironment<S>, n: u64) -> Result<SurplusScan, LevelError> {
    if n < 2 {
        return Err(LevelError::Domain(format!("surplus scan needs n >= 2, got {n}")));
    }
    let lo = -((n * n) as i64);
    let hi = (n * n) as i64;
    let w = n as usize;
    // prefix[i] = S of [lo, lo + i)
    let mut prefix = Vec::with_capacity((hi - lo + 1) as usize);
    prefix.push(0i64);
    for x in lo..hi {
        prefix.push(prefix.last().unwrap() + env.u(x) as i64 - 1);
    }
    let mut best = (0i64, (lo, lo));
    let mut window: VecDeque<usize> = VecDeque::new();
    for b in 0..prefix.len() {
        while window.back().is_some_and(|&i| prefix[i] >= prefix[b]) {
            window.pop_back();
        }
        window.push_back(b);
        while *window.front().unwrap() + w < b {
            window.pop_front();
        }
        let a = *window.front().unwrap();
        let s = prefix[b] - prefix[a];
        if s > best.0 {
            best = (s, (lo + a as i64, lo + b as i64));
        }
    }
    let threshold = surplus_threshold(n);
    Ok(SurplusScan { n, max_surplus: best.0, argmax: best.1, threshold, e_holds: best.0 as f64 <= threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    /// Largest distance to the nearest unvisited site at a walk's start.
    pub max_distance: u64,
    /// Largest distance to the first unvisited site on the right.
    pub max_right_distance: u64,
    pub max_surplus: i64,
}

impl BoundaryCheck {
    pub fn holds(&self) -> bool {
        self.max_right_distance as i64 <= self.max_surplus
    }
}

/// Per-walk start distances for a non-decreasing feasible entry sequence
/// of at most `n` points in `[-n², n²)`, compared with `M_n`.
pub fn boundary_distances<S: Stacks>(env: &LevelEnvironment<S>, a: &[i64], budget: u64) -> Result<Vec<(u64, u64)>, LevelError> {
    if a.windows(2).any(|w| w[0] > w[1]) {
        return Err(LevelError::Domain("entries must be non-decreasing".into()));
    }
    check_feasible(env, a)?;
    let mut st = LevelState::new(a.first().copied().unwrap_or(0));
    let mut out = Vec::with_capacity(a.len());
    for &x in a {
        out.push(st.distances(x));
        st.run_walk(env, x, budget)?;
    }
    Ok(out)
}

pub fn boundary_distance_check<S: Stacks>(env: &LevelEnvironment<S>, a: &[i64], n: u64) -> Result<BoundaryCheck, LevelError> {
    let sq = (n * n) as i64;
    if a.len() as u64 > n || a.iter().any(|&x| x < -sq || x >= sq) {
        return Err(LevelError::Domain(format!("need at most {n} entries inside [-{sq}, {sq})")));
    }
    let d = boundary_distances(env, a, DEFAULT_BUDGET)?;
    let scan = surplus_scan(env, n)?;
    let check = BoundaryCheck {
        max_distance: d.iter().map(|p| p.0).max().unwrap_or(0),
        max_right_distance: d.iter().map(|p| p.1).max().unwrap_or(0),
        max_surplus: scan.max_surplus,
    };
    assert!(check.holds(), "boundary distance exceeds maximal surplus: {check:?}");
    Ok(check)
}

/// Exit time of a SRW from `(0, r)` started at `m`.
pub fn exit_time(bits: &mut BitStream, r: i64, m: i64) -> u64 {
    let mut s = m;
    let mut t = 0;
    while s > 0 && s < r {
        s += bits.sign();
        t += 1;
    }
    t
}

/// `P(𝕃_{r,m} > 8 r² m)`, with `𝕃_{r,m}` the sum of `r` exit times from
/// `(0, r)` started at `m`.
pub fn exit_time_tail(r: u64, m: u64, trials: u64, seed: u64) -> Result<Estimate, LevelError> {
    if r == 0 || m == 0 {
        return Err(LevelError::Domain("need r, m >= 1".into()));
    }
    let starts = vec![m as i64; r as usize];
    total_exit_tail(&starts, r, (8 * r * r * m) as f64, trials, seed)
}

/// `P(𝕃'_r > 4 n r²)` for walks started at `starts` inside `(0, r)`.
pub fn total_exit_tail_prime(starts: &[i64], r: u64, n: u64, trials: u64, seed: u64) -> Result<Estimate, LevelError> {
    if starts.len() as u64 != r || starts.iter().any(|&s| s <= 0 || s >= r as i64) || r > n {
        return Err(LevelError::Domain("need r starting points inside (0, r) and r <= n".into()));
    }
    total_exit_tail(starts, r, (4 * n * r * r) as f64, trials, seed)
}

fn total_exit_tail(starts: &[i64], r: u64, threshold: f64, trials: u64, seed: u64) -> Result<Estimate, LevelError> {
    let mut bits = BitStream::new(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let total: u64 = starts.iter().map(|&m| exit_time(&mut bits, r as i64, m)).sum();
        if total as f64 > threshold {
            hits += 1;
        }
    }
    Ok(Estimate::proportion(hits, trials as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub a: i64,
    pub b: i64,
    pub entries: usize,
    pub total: u64,
    /// `𝓛_{A_I} / (|I| n^{3/2} √(ln n))`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadIntervalReport {
    pub n: u64,
    pub threshold_ratio: f64,
    pub worst: IntervalRecord,
    /// Some interval has ratio at least `2^7`.
    pub d_holds: bool,
    pub intervals: Option<Vec<IntervalRecord>>,
}

pub fn bad_interval_scale(n: u64, len: u64) -> f64 {
    len as f64 * (n as f64).powf(1.5) * (n as f64).ln().sqrt()
}

/// Scans every `I = [a, b) ⊆ [-n², n²)` with `1 <= |I| <= n`.
///
/// For a fixed `a`, `A_{[a, b+1)}` adds `U_b` walks from `b` to
/// `A_{[a, b)}`; by the Abelian property the instructions used by the larger
/// family are those of the smaller one plus those of the extra walks run
/// afterwards, so each `a` needs a single pass.
pub fn detect_bad_interval<S: Stacks>(
    env: &LevelEnvironment<S>,
    n: u64,
    keep_all: bool,
    budget: u64,
) -> Result<BadIntervalReport, LevelError> {
    if n < 2 {
        return Err(LevelError::Domain(format!("need n >= 2, got {n}")));
    }
    let sq = (n * n) as i64;
    let us: Vec<u32> = (-sq..sq).map(|x| env.u(x)).collect();
    let mut worst = IntervalRecord { a: -sq, b: -sq + 1, entries: 0, total: 0, ratio: 0.0 };
    let mut all = keep_all.then(Vec::new);
    for a in -sq..sq {
        let mut st = LevelState::new(a);
        let mut entries = 0usize;
        for b in a + 1..=(a + n as i64).min(sq) {
            let x = b - 1;
            for _ in 0..us[(x + sq) as usize] {
                st.run_walk(env, x, budget)?;
                entries += 1;
            }
            let len = (b - a) as u64;
            let rec = IntervalRecord { a, b, entries, total: st.total, ratio: st.total as f64 / bad_interval_scale(n, len) };
            if rec.ratio > worst.ratio {
                worst = rec.clone();
            }
            if let Some(v) = all.as_mut() {
                v.push(rec);
            }
        }
    }
    let threshold_ratio = 128.0;
    Ok(BadIntervalReport { n, threshold_ratio, d_holds: worst.ratio >= threshold_ratio, worst, intervals: all })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub total: u64,
    pub intervals: Vec<(i64, i64)>,
    pub interval_totals: Vec<u64>,
}

impl DecompositionCheck {
    pub fn holds(&self) -> bool {
        self.total <= self.interval_totals.iter().sum()
    }
}

/// `𝓛_A` against `Σ_j 𝓛_{A_{I_j}}` over the visited intervals `I_j` of `A`.
pub fn decomposition_check<S: Stacks>(env: &LevelEnvironment<S>, a: &[i64], budget: u64) -> Result<DecompositionCheck, LevelError> {
    check_feasible(env, a)?;
    let fam = run_family(env, a, budget)?;
    let mut interval_totals = Vec::with_capacity(fam.visited.len());
    for &(s, e) in &fam.visited {
        interval_totals.push(run_family(env, &env.entries_of(s, e + 1), budget)?.total);
    }
    Ok(DecompositionCheck { total: fam.total, intervals: fam.visited, interval_totals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        particles_at, run_movement_list, CeaseOnFirst, ConstantStacks, Environment, Instruction, ScriptedStacks,
    };
    use crate::rng::seeded_rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn right_env() -> LevelEnvironment<ConstantStacks> {
        LevelEnvironment::new(0, ConstantStacks::up_right())
    }

    #[test]
    fn single_walk_lives_one_step() {
        let env = LevelEnvironment::new(3, Environment::new(1));
        for x in [-5, 0, 7] {
            let r = run_family(&env, &[x], DEFAULT_BUDGET).unwrap();
            assert_eq!(r.lifetimes, vec![1]);
            assert_eq!(r.visited, vec![(x, x)]);
        }
    }

    #[test]
    fn hand_executed_block() {
        // U = 2 on 0..6, stacks always point right
        let env = right_env().with_entries(EntryCounts::Table {
            values: (0..6).map(|x| (x, 2)).collect(),
            default: 0,
        });
        let a: Vec<i64> = (0..6).flat_map(|x| [x, x]).collect();
        let d = boundary_distances(&env, &a, DEFAULT_BUDGET).unwrap();
        let nearest: Vec<u64> = d.iter().map(|p| p.0).collect();
        assert_eq!(nearest, vec![0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6]);
        let right: Vec<u64> = d.iter().map(|p| p.1).collect();
        assert_eq!(right, vec![0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6]);
        let fam = run_family(&env, &a, DEFAULT_BUDGET).unwrap();
        assert_eq!(fam.lifetimes, vec![1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7]);
        assert_eq!(fam.visited, vec![(0, 11)]);
        let check = boundary_distance_check(&env, &a, 12).unwrap();
        assert_eq!(check.max_surplus, 6);
        assert_eq!(check.max_right_distance, 6);
    }

    #[test]
    fn infeasible_and_unsorted_rejected() {
        let env = right_env().with_entries(EntryCounts::Constant(1));
        assert!(matches!(
            boundary_distances(&env, &[0, 0], DEFAULT_BUDGET),
            Err(LevelError::Infeasible { x: 0, used: 2, allowed: 1 })
        ));
        assert!(boundary_distances(&env, &[1, 0], DEFAULT_BUDGET).is_err());
    }

    #[test]
    fn entry_counts_from_stacks() {
        let mut s = ScriptedStacks::new();
        s.set(Site::new(0, -1), 1, Instruction::step(Direction::North)).unwrap();
        s.set(Site::new(0, 1), 1, Instruction::step(Direction::South)).unwrap();
        s.set(Site::new(1, -1), 1, Instruction::step(Direction::South)).unwrap();
        s.set(Site::new(1, 1), 1, Instruction::step(Direction::South)).unwrap();
        let env = LevelEnvironment::new(0, s);
        assert_eq!(env.u(0), 3);
        assert_eq!(env.u(1), 1);
        let env1 = LevelEnvironment::new(1, Environment::new(5));
        let env0 = LevelEnvironment::new(0, Environment::new(5));
        assert!(env1.u(0) <= 2);
        assert!(env0.u(0) >= 1);
    }

    #[test]
    fn unit_entries_have_no_surplus() {
        let env = right_env().with_entries(EntryCounts::Constant(1));
        let s = surplus_scan(&env, 8).unwrap();
        assert_eq!(s.max_surplus, 0);
        assert!(s.e_holds);
        assert!(surplus_scan(&env, 1).is_err());
    }

    #[test]
    fn sliding_window_matches_brute_force() {
        for seed in 0..10 {
            let env = LevelEnvironment::new(0, Environment::new(seed));
            let n = 6u64;
            let sq = 36i64;
            let mut best = 0;
            for a in -sq..=sq {
                for b in a..=(a + 6).min(sq) {
                    best = best.max(env.surplus(a, b));
                }
            }
            assert_eq!(surplus_scan(&env, n).unwrap().max_surplus, best);
        }
    }

    #[test]
    fn permutation_invariance_and_abelian_agreement() {
        let mut rng = seeded_rng(3);
        for seed in 0..50 {
            let env = LevelEnvironment::new(2, Environment::new(seed));
            let mut a: Vec<i64> = (0..12).map(|_| rng.gen_range(-6..6)).collect();
            let (base, st) = run_family_state(&env, &a, DEFAULT_BUDGET).unwrap();
            for _ in 0..5 {
                a.shuffle(&mut rng);
                assert_eq!(run_family(&env, &a, DEFAULT_BUDGET).unwrap().total, base.total);
            }
            // round-robin through all walkers on ceasing stacks
            let stacks = CeaseOnFirst(Environment::new(seed));
            let starts: Vec<Site> = a.iter().map(|&x| Site::new(x, 2)).collect();
            let list: Vec<usize> = (0..a.len()).collect();
            let out = run_movement_list(&stacks, &particles_at(&starts), &list, 1 << 30).unwrap();
            assert!(out.all_ceased());
            assert_eq!(out.used, st.used_set(2));
        }
    }

    #[test]
    fn visited_intervals_contain_entries() {
        let env = LevelEnvironment::new(1, Environment::new(8));
        let a = [-20, -20, -3, 0, 0, 1, 15];
        let fam = run_family(&env, &a, DEFAULT_BUDGET).unwrap();
        for &(s, e) in &fam.visited {
            assert!(a.iter().any(|&x| s <= x && x <= e));
        }
        assert!(fam.visited.windows(2).all(|w| w[0].1 + 1 < w[1].0));
    }

    #[test]
    fn incremental_scan_matches_direct_families() {
        let env = LevelEnvironment::new(0, Environment::new(21));
        let rep = detect_bad_interval(&env, 4, true, DEFAULT_BUDGET).unwrap();
        for rec in rep.intervals.unwrap() {
            let direct = run_family(&env, &env.entries_of(rec.a, rec.b), DEFAULT_BUDGET).unwrap();
            assert_eq!(direct.total, rec.total, "[{}, {})", rec.a, rec.b);
        }
        let none = LevelEnvironment::new(0, Environment::new(21)).with_entries(EntryCounts::Constant(0));
        let rep = detect_bad_interval(&none, 10, false, DEFAULT_BUDGET).unwrap();
        assert_eq!(rep.worst.total, 0);
        assert!(!rep.d_holds);
    }

    #[test]
    fn budget_is_enforced() {
        let env = LevelEnvironment::new(0, Environment::new(2));
        let a = vec![0i64; 50];
        assert_eq!(run_family(&env, &a, 100), Err(LevelError::Budget(100)));
    }

    #[test]
    fn exit_tail_trivial_and_bounded() {
        assert_eq!(exit_time_tail(5, 5, 100, 1).unwrap().mean, 0.0);
        assert_eq!(exit_time(&mut BitStream::new(0), 5, 7), 0);
        let e = exit_time_tail(10, 3, 2000, 4).unwrap();
        assert!(e.mean < 0.05);
        assert!(total_exit_tail_prime(&[1, 2], 3, 3, 10, 0).is_err());
        assert!(total_exit_tail_prime(&[1, 2, 2], 3, 3, 10, 0).is_ok());
    }
}
