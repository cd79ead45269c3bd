//! Interlacing two one-dimensional walks into a planar one.
//!
//! A timing sequence `(N_t, M_t)` says how many horizontal (`X`) and vertical
//! (`Y`) steps have been used by time `t`; the planar walk is
//! `Z_t = (X_{N_t}, Y_{M_t})`. A [`TimingRule`] picks the next step kind.
//! Rules flagged as Y-adapted read `Y` through a guard that refuses any
//! index beyond `M_t`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Site;
use crate::rng::BitStream;
use crate::sitemap::SiteMap;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("Y-adapted rule read Y[{index}] at time {t}, beyond M_t = {m}")]
    ContractViolation { t: u64, index: u64, m: u64 },
    #[error("{which} walk has no step {index}")]
    SourceExhausted { which: &'static str, index: u64 },
    #[error("{0}")]
    Domain(String),
    #[error("unknown rule {0:?} (expected berw, coin, block, always-h or always-v)")]
    UnknownRule(String),
    #[error("lattice coordinate out of range at time {0}")]
    Resource(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Horizontal,
    Vertical,
}

/// `(N_t, M_t)` for `t = 0..=T`, stored as the prefix counts `N_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingSequence {
    horizontal: Vec<u64>,
}

impl Default for TimingSequence {
    fn default() -> Self {
        Self::new()
    }
}

impl TimingSequence {
    pub fn new() -> Self {
        Self { horizontal: vec![0] }
    }

    pub fn from_kinds<I: IntoIterator<Item = StepKind>>(kinds: I) -> Self {
        let mut q = Self::new();
        for k in kinds {
            q.push(k);
        }
        q
    }

    pub fn push(&mut self, kind: StepKind) {
        let last = *self.horizontal.last().unwrap();
        self.horizontal.push(last + u64::from(kind == StepKind::Horizontal));
    }

    /// The horizon `T`.
    pub fn horizon(&self) -> u64 {
        self.horizontal.len() as u64 - 1
    }

    pub fn n_at(&self, t: u64) -> u64 {
        self.horizontal[t as usize]
    }

    pub fn m_at(&self, t: u64) -> u64 {
        t - self.horizontal[t as usize]
    }

    /// Kind of the step from `t` to `t + 1`.
    pub fn kind(&self, t: u64) -> StepKind {
        if self.horizontal[t as usize + 1] > self.horizontal[t as usize] {
            StepKind::Horizontal
        } else {
            StepKind::Vertical
        }
    }

    pub fn kinds(&self) -> impl Iterator<Item = StepKind> + '_ {
        self.horizontal.windows(2).map(|w| if w[1] > w[0] { StepKind::Horizontal } else { StepKind::Vertical })
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.horizontal.iter().enumerate().map(|(t, &n)| (n, t as u64 - n))
    }
}

/// A one-dimensional nearest-neighbour walk that is either generated lazily
/// from a seed or given as a fixed finite path.
#[derive(Debug, Clone)]
pub struct LazyWalk {
    path: Vec<i64>,
    bits: Option<BitStream>,
    deepest: u64,
    which: &'static str,
}

impl LazyWalk {
    pub fn seeded(seed: u64, which: &'static str) -> Self {
        Self { path: vec![0], bits: Some(BitStream::new(seed)), deepest: 0, which }
    }

    pub fn fixed(path: Vec<i64>, which: &'static str) -> Result<Self, TimingError> {
        if path.is_empty() {
            return Err(TimingError::Domain(format!("{which} path is empty")));
        }
        if path.windows(2).any(|w| w[0].abs_diff(w[1]) != 1) {
            return Err(TimingError::Domain(format!("{which} path is not nearest-neighbour")));
        }
        Ok(Self { path, bits: None, deepest: 0, which })
    }

    pub fn at(&mut self, i: u64) -> Result<i64, TimingError> {
        let idx = i as usize;
        while idx >= self.path.len() {
            let Some(bits) = self.bits.as_mut() else {
                return Err(TimingError::SourceExhausted { which: self.which, index: i });
            };
            let last = *self.path.last().unwrap();
            self.path.push(last + bits.sign());
        }
        self.deepest = self.deepest.max(i);
        Ok(self.path[idx])
    }

    /// Largest index ever read.
    pub fn deepest(&self) -> u64 {
        self.deepest
    }

    /// Positions materialized so far.
    pub fn materialized(&self) -> &[i64] {
        &self.path
    }
}

/// What a rule may look at when choosing the step out of `Z_t`.
pub struct RuleContext<'a> {
    t: u64,
    position: Site,
    n: u64,
    m: u64,
    visits_here: u32,
    guard_y: bool,
    x: &'a mut LazyWalk,
    y: &'a mut LazyWalk,
    aux: &'a mut BitStream,
}

impl RuleContext<'_> {
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn position(&self) -> Site {
        self.position
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    /// Visits to the current site so far, the present one included.
    pub fn visits_here(&self) -> u32 {
        self.visits_here
    }

    pub fn is_fresh(&self) -> bool {
        self.visits_here == 1
    }

    /// Any position of `X`, however deep.
    pub fn x(&mut self, i: u64) -> Result<i64, TimingError> {
        self.x.at(i)
    }

    /// Position `Y_j`; a guarded context refuses `j > M_t`.
    pub fn y(&mut self, j: u64) -> Result<i64, TimingError> {
        if self.guard_y && j > self.m {
            return Err(TimingError::ContractViolation { t: self.t, index: j, m: self.m });
        }
        self.y.at(j)
    }

    /// A fair coin from the auxiliary source.
    pub fn coin(&mut self) -> bool {
        self.aux.bit()
    }
}

pub trait TimingRule {
    fn name(&self) -> &'static str;

    fn y_adapted(&self) -> bool {
        true
    }

    fn decide(&mut self, ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError>;
}

/// Vertical on the first departure from a site, horizontal afterwards.
#[derive(Debug, Default, Clone, Copy)]
pub struct BerwRule;

impl TimingRule for BerwRule {
    fn name(&self) -> &'static str {
        "berw"
    }

    fn decide(&mut self, ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError> {
        Ok(if ctx.is_fresh() { StepKind::Vertical } else { StepKind::Horizontal })
    }
}

/// Independent fair coin per step; gives the planar simple random walk.
#[derive(Debug, Default, Clone, Copy)]
pub struct CoinRule;

impl TimingRule for CoinRule {
    fn name(&self) -> &'static str {
        "coin"
    }

    fn decide(&mut self, ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError> {
        Ok(if ctx.coin() { StepKind::Horizontal } else { StepKind::Vertical })
    }
}

/// Alternating single-coordinate blocks of lengths 1, 2, 4, ...; the first
/// block is horizontal.
#[derive(Debug, Default, Clone, Copy)]
pub struct BlockRule;

impl TimingRule for BlockRule {
    fn name(&self) -> &'static str {
        "block"
    }

    fn decide(&mut self, ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError> {
        // block b covers t in [2^b - 1, 2^(b+1) - 1)
        let block = 63 - (ctx.t() + 1).leading_zeros();
        Ok(if block.is_multiple_of(2) { StepKind::Horizontal } else { StepKind::Vertical })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysHorizontal;

impl TimingRule for AlwaysHorizontal {
    fn name(&self) -> &'static str {
        "always-h"
    }

    fn decide(&mut self, _ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError> {
        Ok(StepKind::Horizontal)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysVertical;

impl TimingRule for AlwaysVertical {
    fn name(&self) -> &'static str {
        "always-v"
    }

    fn decide(&mut self, _ctx: &mut RuleContext<'_>) -> Result<StepKind, TimingError> {
        Ok(StepKind::Vertical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    Berw,
    Coin,
    Block,
    AlwaysHorizontal,
    AlwaysVertical,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] =
        [RuleKind::Berw, RuleKind::Coin, RuleKind::Block, RuleKind::AlwaysHorizontal, RuleKind::AlwaysVertical];

    /// Fresh rule instance; harnesses build one per run.
    pub fn build(self) -> Box<dyn TimingRule + Send> {
        match self {
            RuleKind::Berw => Box::new(BerwRule),
            RuleKind::Coin => Box::new(CoinRule),
            RuleKind::Block => Box::new(BlockRule),
            RuleKind::AlwaysHorizontal => Box::new(AlwaysHorizontal),
            RuleKind::AlwaysVertical => Box::new(AlwaysVertical),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Berw => "berw",
            RuleKind::Coin => "coin",
            RuleKind::Block => "block",
            RuleKind::AlwaysHorizontal => "always-h",
            RuleKind::AlwaysVertical => "always-v",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = TimingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleKind::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| TimingError::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct BuiltWalk {
    pub timing: TimingSequence,
    /// `Z_0..=Z_T`, when requested.
    pub path: Option<Vec<Site>>,
    pub final_position: Site,
    /// Distinct sites among `Z_0..=Z_T`.
    pub range: u64,
    /// `(t, #{Z_0..Z_t})` at `t = 0, 1, 2, 4, ...` and at `T`.
    pub checkpoints: Vec<(u64, u64)>,
    /// Deepest index of `X` the rule inspected.
    pub x_depth: u64,
}

/// Runs `rule` for `horizon` steps over the walks `x` and `y`.
pub fn build_walk(
    x: &mut LazyWalk,
    y: &mut LazyWalk,
    rule: &mut dyn TimingRule,
    aux_seed: u64,
    horizon: u64,
    keep_path: bool,
) -> Result<BuiltWalk, TimingError> {
    let mut aux = BitStream::new(aux_seed);
    let guard_y = rule.y_adapted();
    let mut timing = TimingSequence::new();
    let mut visits = SiteMap::with_capacity(1024);
    let mut pos = Site::new(x.at(0)?, y.at(0)?);
    let mut here = visits.increment(pos).ok_or(TimingError::Resource(0))?;
    let mut path = keep_path.then(|| {
        let mut v = Vec::with_capacity(horizon as usize + 1);
        v.push(pos);
        v
    });
    let mut checkpoints = vec![(0, 1)];
    let mut next_cp = 1u64;
    let (mut n, mut m) = (0u64, 0u64);
    for t in 0..horizon {
        let kind = {
            let mut ctx = RuleContext {
                t,
                position: pos,
                n,
                m,
                visits_here: here,
                guard_y,
                x: &mut *x,
                y: &mut *y,
                aux: &mut aux,
            };
            rule.decide(&mut ctx)?
        };
        match kind {
            StepKind::Horizontal => {
                n += 1;
                pos.x = x.at(n)?;
            }
            StepKind::Vertical => {
                m += 1;
                pos.y = y.at(m)?;
            }
        }
        timing.push(kind);
        here = visits.increment(pos).ok_or(TimingError::Resource(t + 1))?;
        if let Some(p) = path.as_mut() {
            p.push(pos);
        }
        if t + 1 == next_cp {
            checkpoints.push((t + 1, visits.len() as u64));
            next_cp *= 2;
        }
    }
    if checkpoints.last().map(|c| c.0) != Some(horizon) {
        checkpoints.push((horizon, visits.len() as u64));
    }
    // guarded reads never go past M_t, so only X depth is informative
    Ok(BuiltWalk { timing, path, final_position: pos, range: visits.len() as u64, checkpoints, x_depth: x.deepest() })
}

/// Convenience: seeded `X`, `Y` and auxiliary source derived from one seed.
pub fn build_seeded(rule: RuleKind, seed: u64, horizon: u64, keep_path: bool) -> Result<BuiltWalk, TimingError> {
    let mut x = LazyWalk::seeded(crate::rng::keyed(seed, &[0x58]), "X");
    let mut y = LazyWalk::seeded(crate::rng::keyed(seed, &[0x59]), "Y");
    let mut r = rule.build();
    build_walk(&mut x, &mut y, r.as_mut(), crate::rng::keyed(seed, &[0x55]), horizon, keep_path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaStats {
    /// `sigma_{i+1} - sigma_i` for every completed increment, `sigma_0 = 0`.
    pub increments: Vec<u64>,
    pub mean: Option<f64>,
    pub max: Option<u64>,
    /// No horizontal step at all.
    pub empty: bool,
}

/// Jump times `sigma_i` of `N`, with `sigma_0 = 0`.
pub fn sigma_times(q: &TimingSequence) -> Vec<u64> {
    let mut s = vec![0];
    s.extend((1..=q.horizon()).filter(|&t| q.n_at(t) > q.n_at(t - 1)));
    s
}

pub fn sigma_stats(q: &TimingSequence) -> SigmaStats {
    let sig = sigma_times(q);
    let increments: Vec<u64> = sig.windows(2).map(|w| w[1] - w[0]).collect();
    if increments.is_empty() {
        return SigmaStats { increments, mean: None, max: None, empty: true };
    }
    let mean = increments.iter().sum::<u64>() as f64 / increments.len() as f64;
    let max = increments.iter().copied().max();
    SigmaStats { increments, mean: Some(mean), max, empty: false }
}

/// Mean σ increment split by whether `Z_{sigma_i}` was a fresh site at
/// time `sigma_i`: `(fresh_mean, fresh_count, old_mean, old_count)`.
pub fn sigma_means_by_state(q: &TimingSequence, path: &[Site]) -> (Option<f64>, usize, Option<f64>, usize) {
    let sig = sigma_times(q);
    let mut visits = SiteMap::with_capacity(path.len().min(1 << 20));
    let mut fresh_at = Vec::with_capacity(path.len());
    for &z in path {
        fresh_at.push(visits.increment(z) == Some(1));
    }
    let (mut fs, mut fc, mut os, mut oc) = (0u64, 0usize, 0u64, 0usize);
    for w in sig.windows(2) {
        let d = w[1] - w[0];
        if fresh_at[w[0] as usize] {
            fs += d;
            fc += 1;
        } else {
            os += d;
            oc += 1;
        }
    }
    let mean = |s: u64, c: usize| (c > 0).then(|| s as f64 / c as f64);
    (mean(fs, fc), fc, mean(os, oc), oc)
}

/// Image `[U-, U+]` of the X-interval `[a, b]` on the Z timeline.
pub fn phi_map(q: &TimingSequence, a: u64, b: u64) -> Result<(u64, u64), TimingError> {
    if a > b {
        return Err(TimingError::Domain(format!("empty X-interval [{a}, {b}]")));
    }
    let n_total = q.n_at(q.horizon());
    if b > n_total {
        return Err(TimingError::Domain(format!("X-interval end {b} beyond N_T = {n_total}")));
    }
    let counts = &q.horizontal;
    let lo = counts.partition_point(|&n| n < a) as u64;
    let hi = counts.partition_point(|&n| n <= b) as u64 - 1;
    Ok((lo, hi))
}
