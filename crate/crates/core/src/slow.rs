//! Slow intervals of one-dimensional simple random walk paths.
//!
//! `I = [s, s + t]` is ε-slow for a path `S` when `R_I - 1 <= ε √t`, with
//! `R_I` the number of sites visited during `I`. For a nearest-neighbour
//! path that number is `max - min + 1` over `I`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{srw_path, BitStream};
use crate::stats::Estimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlowError {
    #[error("interval [{start}, {end}] outside path of length {len}")]
    OutOfBounds { start: u64, end: u64, len: u64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// A path with sparse tables for O(1) range-min and range-max.
#[derive(Debug, Clone)]
pub struct PathExtrema {
    path: Vec<i64>,
    mins: Vec<Vec<i64>>,
    maxs: Vec<Vec<i64>>,
}

impl PathExtrema {
    pub fn new(path: Vec<i64>) -> Self {
        let n = path.len();
        let mut mins = vec![path.clone()];
        let mut maxs = vec![path.clone()];
        let mut w = 1;
        while 2 * w <= n {
            let (pm, px) = (mins.last().unwrap(), maxs.last().unwrap());
            let len = n - 2 * w + 1;
            let m: Vec<i64> = (0..len).map(|i| pm[i].min(pm[i + w])).collect();
            let x: Vec<i64> = (0..len).map(|i| px[i].max(px[i + w])).collect();
            mins.push(m);
            maxs.push(x);
            w *= 2;
        }
        Self { path, mins, maxs }
    }

    pub fn path(&self) -> &[i64] {
        &self.path
    }

    /// Number of steps, i.e. positions minus one.
    pub fn steps(&self) -> u64 {
        self.path.len().saturating_sub(1) as u64
    }

    fn check(&self, start: u64, len: u64) -> Result<(), SlowError> {
        let end = start.saturating_add(len);
        if self.path.is_empty() || end > self.steps() {
            return Err(SlowError::OutOfBounds { start, end, len: self.steps() });
        }
        Ok(())
    }

    /// `(min, max)` of the path over `[start, start + len]`.
    pub fn extrema(&self, start: u64, len: u64) -> Result<(i64, i64), SlowError> {
        self.check(start, len)?;
        let (a, cnt) = (start as usize, len as usize + 1);
        let lvl = (usize::BITS - 1 - cnt.leading_zeros()) as usize;
        let b = a + cnt - (1 << lvl);
        Ok((self.mins[lvl][a].min(self.mins[lvl][b]), self.maxs[lvl][a].max(self.maxs[lvl][b])))
    }

    /// Sites visited during `[start, start + len]`.
    pub fn range(&self, start: u64, len: u64) -> Result<u64, SlowError> {
        let (lo, hi) = self.extrema(start, len)?;
        Ok(hi.abs_diff(lo) + 1)
    }

    pub fn is_slow(&self, start: u64, len: u64, eps: f64) -> Result<bool, SlowError> {
        if !(eps > 0.0) {
            return Err(SlowError::Domain(format!("epsilon must be positive, got {eps}")));
        }
        let r = self.range(start, len)?;
        Ok(slow_test(r, len, eps))
    }
}

#[inline]
fn slow_test(range: u64, len: u64, eps: f64) -> bool {
    len == 0 || (range - 1) as f64 <= eps * (len as f64).sqrt()
}

/// `[k 2^j, (k + 1) 2^j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub j: u32,
    pub k: u64,
}

impl DyadicInterval {
    pub fn start(&self) -> u64 {
        self.k << self.j
    }

    pub fn end(&self) -> u64 {
        (self.k + 1) << self.j
    }

    pub fn len(&self) -> u64 {
        1 << self.j
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &DyadicInterval) -> bool {
        self.start() <= other.start() && other.end() <= self.end()
    }

    /// Shares no step with `other` (endpoints may coincide).
    pub fn step_disjoint(&self, other: &DyadicInterval) -> bool {
        self.end() <= other.start() || other.end() <= self.start()
    }

    pub fn parent(&self) -> DyadicInterval {
        DyadicInterval { j: self.j + 1, k: self.k / 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowCover {
    pub horizon_log2: u32,
    pub epsilon: f64,
    /// Maximal slow dyadic intervals in increasing order.
    pub members: Vec<DyadicInterval>,
    /// Steps covered by the members.
    pub covered_steps: u64,
}

impl SlowCover {
    pub fn covered_fraction(&self) -> f64 {
        self.covered_steps as f64 / (1u64 << self.horizon_log2) as f64
    }

    /// Members pairwise step-disjoint and none containing another.
    pub fn is_antichain(&self) -> bool {
        self.members.windows(2).all(|w| w[0].end() <= w[1].start())
    }
}

/// The ε-slow dyadic intervals of `[0, 2^k]` not strictly contained in
/// another ε-slow dyadic interval.
pub fn maximal_slow_dyadic_cover(path: &PathExtrema, eps: f64, k: u32) -> Result<SlowCover, SlowError> {
    if k >= 63 {
        return Err(SlowError::Domain(format!("horizon 2^{k} too large")));
    }
    path.check(0, 1 << k)?;
    if !(eps > 0.0) {
        return Err(SlowError::Domain(format!("epsilon must be positive, got {eps}")));
    }
    let mut members = Vec::new();
    let mut stack = vec![DyadicInterval { j: k, k: 0 }];
    while let Some(d) = stack.pop() {
        if path.is_slow(d.start(), d.len(), eps)? {
            members.push(d);
        } else if d.j > 0 {
            stack.push(DyadicInterval { j: d.j - 1, k: 2 * d.k + 1 });
            stack.push(DyadicInterval { j: d.j - 1, k: 2 * d.k });
        }
    }
    let covered_steps = members.iter().map(|d| d.len()).sum();
    Ok(SlowCover { horizon_log2: k, epsilon: eps, members, covered_steps })
}

/// True when no ε-slow dyadic interval of `[0, 2^k]` contains `s`.
///
/// The dyadic intervals containing `s` form at most two nested chains, the
/// ancestors of `[s, s+1]` and of `[s-1, s]`; each chain is scanned once.
pub fn is_uncovered(path: &[i64], eps: f64, k: u32, s: u64) -> bool {
    let horizon = 1u64 << k;
    let mut chains = Vec::with_capacity(2);
    if s < horizon {
        chains.push(s);
    }
    if s >= 1 {
        chains.push(s - 1);
    }
    for unit in chains {
        let (mut lo, mut hi) = (unit as usize, unit as usize + 1);
        let (mut mn, mut mx) = (path[lo].min(path[hi]), path[lo].max(path[hi]));
        for j in 0..=k {
            let a = ((unit >> j) << j) as usize;
            let b = a + (1usize << j);
            for &v in &path[a..lo] {
                mn = mn.min(v);
                mx = mx.max(v);
            }
            for &v in &path[hi + 1..=b] {
                mn = mn.min(v);
                mx = mx.max(v);
            }
            lo = a;
            hi = b;
            if slow_test(mx.abs_diff(mn) + 1, 1 << j, eps) {
                return false;
            }
        }
    }
    true
}

/// Fraction of SRW paths (one per seed) on which `s` is uncovered.
pub fn uncovered_probability(seeds: &[u64], eps: f64, k: u32, s: u64) -> Result<Estimate, SlowError> {
    if s > 1 << k {
        return Err(SlowError::Domain(format!("s = {s} outside [0, 2^{k}]")));
    }
    if !(eps > 0.0) {
        return Err(SlowError::Domain(format!("epsilon must be positive, got {eps}")));
    }
    let hits = seeds.iter().filter(|&&seed| is_uncovered(&srw_path(seed, 1 << k), eps, k, s)).count();
    Ok(Estimate::proportion(hits, seeds.len()))
}

/// `g(θ) = θ a - ln cosh θ`.
pub fn g(theta: f64, a: f64) -> f64 {
    theta * a - log_cosh(theta)
}

fn log_cosh(x: f64) -> f64 {
    let x = x.abs();
    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRoot {
    pub a: f64,
    pub theta: f64,
    pub residual: f64,
}

impl ThetaRoot {
    pub fn lower_bound(&self) -> f64 {
        2.0 * self.a
    }

    pub fn upper_bound(&self) -> f64 {
        2.0 * self.a * (1.0 + 1.0 / (1.0 - self.a).powi(2))
    }

    pub fn within_bounds(&self) -> bool {
        self.lower_bound() <= self.theta && self.theta <= self.upper_bound()
    }
}

/// Positive root of `g(·, a)` for `a` in `(0, 1)`.
pub fn solve_theta(a: f64) -> Result<ThetaRoot, SlowError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(SlowError::Domain(format!("a = {a} outside (0, 1)")));
    }
    // g > 0 at a since ln cosh x <= x^2 / 2, and g < 0 at ln 2 / (1 - a)
    let (mut lo, mut hi) = (a, std::f64::consts::LN_2 / (1.0 - a));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid, a) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = a - theta.tanh();
        let next = theta - g(theta, a) / d;
        if next.is_finite() && next > lo - 1e-12 && next < hi + 1e-12 && g(next, a).abs() < g(theta, a).abs() {
            theta = next;
        }
    }
    let root = ThetaRoot { a, theta, residual: g(theta, a).abs() };
    assert!(root.within_bounds(), "theta bounds violated at a = {a}: {root:?}");
    Ok(root)
}

/// Record times `(k, R_k)` of a SRW range up to `k_max`, starting at `(0, 1)`.
pub fn range_records(seed: u64, k_max: u64) -> Vec<(u64, u64)> {
    let mut bits = BitStream::new(seed);
    let (mut s, mut lo, mut hi) = (0i64, 0i64, 0i64);
    let mut out = vec![(0, 1)];
    for k in 1..=k_max {
        s += bits.sign();
        if s < lo || s > hi {
            lo = lo.min(s);
            hi = hi.max(s);
            out.push((k, (hi - lo + 1) as u64));
        }
    }
    out
}

/// Default truncation for `sup_k {R_k √l - γ (k + l)}`.
pub fn default_k_max(l: u64, gamma: f64) -> u64 {
    ((64.0 * l as f64 / (gamma * gamma)) as u64).clamp(1024, 1 << 20)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSupEstimate {
    pub l: u64,
    pub gamma: f64,
    pub k_max: u64,
    pub estimate: Estimate,
    /// Fraction of samples whose maximiser lies below `k_max / 2`.
    pub early_fraction: f64,
    pub stabilized: bool,
}

/// Range records of an ensemble, reused across values of `γ`.
#[derive(Debug, Clone)]
pub struct RangeSupEnsemble {
    pub l: u64,
    pub k_max: u64,
    records: Vec<Vec<(u64, u64)>>,
}

impl RangeSupEnsemble {
    pub fn new(seeds: &[u64], l: u64, k_max: u64) -> Self {
        let records = seeds.iter().map(|&s| range_records(s, k_max)).collect();
        Self { l, k_max, records }
    }

    fn sample(&self, rec: &[(u64, u64)], gamma: f64) -> (f64, u64) {
        let sl = (self.l as f64).sqrt();
        // between records R_k is constant and the objective decreases in k
        rec.iter()
            .map(|&(k, r)| (r as f64 * sl - gamma * (k + self.l) as f64, k))
            .fold((f64::NEG_INFINITY, 0), |best, c| if c.0 > best.0 { c } else { best })
    }

    pub fn estimate(&self, gamma: f64) -> RangeSupEstimate {
        let mut early = 0usize;
        let vals: Vec<f64> = self
            .records
            .iter()
            .map(|rec| {
                let (v, k) = self.sample(rec, gamma);
                if k < self.k_max / 2 {
                    early += 1;
                }
                v
            })
            .collect();
        let early_fraction = early as f64 / vals.len().max(1) as f64;
        RangeSupEstimate {
            l: self.l,
            gamma,
            k_max: self.k_max,
            estimate: Estimate::from_samples(vals),
            early_fraction,
            stabilized: early_fraction >= 0.99,
        }
    }

    /// Smallest `γ` in `[lo, hi]` with a nonpositive mean, by bisection.
    pub fn smallest_gamma(&self, mut lo: f64, mut hi: f64) -> Option<f64> {
        if self.estimate(hi).estimate.mean > 0.0 {
            return None;
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if self.estimate(mid).estimate.mean > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi)
    }
}

/// Monte Carlo estimate of `E sup_{k <= k_max} {R_k √l - γ (k + l)}`.
pub fn range_sup_functional(seeds: &[u64], l: u64, gamma: f64, k_max: Option<u64>) -> Result<RangeSupEstimate, SlowError> {
    if !(gamma > 0.0) || l == 0 {
        return Err(SlowError::Domain(format!("need gamma > 0 and l >= 1, got {gamma}, {l}")));
    }
    let k_max = k_max.unwrap_or_else(|| default_k_max(l, gamma));
    Ok(RangeSupEnsemble::new(seeds, l, k_max).estimate(gamma))
}

/// Exit time of a SRW from `(-m, m)`, capped at `cap`.
pub fn hitting_time(seed: u64, m: u64, cap: u64) -> u64 {
    let mut bits = BitStream::new(seed);
    let m = m as i64;
    let mut s = 0i64;
    for t in 1..=cap {
        s += bits.sign();
        if s.abs() >= m {
            return t;
        }
    }
    cap + 1
}

/// `P(τ_m > k m²)` for each `k`, from one walk per seed.
pub fn hitting_time_profile(seeds: &[u64], m: u64, ks: &[u64]) -> Result<Vec<Estimate>, SlowError> {
    if m < 2 || ks.contains(&0) {
        return Err(SlowError::Domain("need m >= 2 and k >= 1".into()));
    }
    let cap = ks.iter().max().copied().unwrap_or(0) * m * m;
    let taus: Vec<u64> = seeds.iter().map(|&s| hitting_time(s, m, cap)).collect();
    Ok(ks
        .iter()
        .map(|&k| Estimate::proportion(taus.iter().filter(|&&t| t > k * m * m).count(), taus.len()))
        .collect())
}

pub fn hitting_time_tail(seeds: &[u64], m: u64, k: u64) -> Result<Estimate, SlowError> {
    Ok(hitting_time_profile(seeds, m, &[k])?[0])
}
