//! Instruction stacks and the movement-list engine for finite particle
//! systems.
//!
//! A stack assigns to every site `x` and index `k >= 1` an [`Instruction`]:
//! the `k`-th departure from `x` follows `I(x, k)`. The balanced environment
//! puts a vertical Rademacher step at `k = 1` and horizontal Rademacher steps
//! at every `k >= 2`. Cease flags never occur there; they only appear in
//! scripted or explicitly modified stacks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::keyed;

const TAG_INSTRUCTION: u64 = 0x1A57;
const TAG_CEASE: u64 = 0xCEA5E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub x: i64,
    pub y: i64,
}

impl Site {
    pub const ORIGIN: Site = Site { x: 0, y: 0 };

    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn step(self, dir: Direction) -> Site {
        let (dx, dy) = dir.delta();
        Site { x: self.x + dx, y: self.y + dy }
    }

    pub fn l1(self, other: Site) -> u64 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Unit coordinate vector: `±e1` horizontal, `±e2` vertical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    #[inline]
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
            Direction::North => (0, 1),
            Direction::South => (0, -1),
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::North | Direction::South)
    }

    pub fn is_horizontal(self) -> bool {
        !self.is_vertical()
    }

    #[inline]
    pub fn horizontal(positive: bool) -> Self {
        if positive {
            Direction::East
        } else {
            Direction::West
        }
    }

    #[inline]
    pub fn vertical(positive: bool) -> Self {
        if positive {
            Direction::North
        } else {
            Direction::South
        }
    }

    pub fn from_delta(dx: i64, dy: i64) -> Option<Self> {
        match (dx, dy) {
            (1, 0) => Some(Direction::East),
            (-1, 0) => Some(Direction::West),
            (0, 1) => Some(Direction::North),
            (0, -1) => Some(Direction::South),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::East => "+e1",
            Direction::West => "-e1",
            Direction::North => "+e2",
            Direction::South => "-e2",
        })
    }
}

impl FromStr for Direction {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+e1" => Ok(Direction::East),
            "-e1" => Ok(Direction::West),
            "+e2" => Ok(Direction::North),
            "-e2" => Ok(Direction::South),
            other => Err(EnvError::Parse { line: 0, msg: format!("unknown direction {other:?}") }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub direction: Direction,
    pub cease: bool,
}

impl Instruction {
    pub fn step(direction: Direction) -> Self {
        Self { direction, cease: false }
    }

    pub fn ceasing(direction: Direction) -> Self {
        Self { direction, cease: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("instruction index must be at least 1")]
    ZeroIndex,
    #[error("no scripted instruction at {site}, index {k}")]
    Unscripted { site: Site, k: u64 },
    #[error("stack file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("movement list refers to particle {0}, which does not exist")]
    UnknownParticle(usize),
    #[error("particle {0} never appears in the movement list")]
    MissingParticle(usize),
    #[error("io: {0}")]
    Io(String),
}

/// Source of instructions `I(x, k)`, `k >= 1`.
pub trait Stacks {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError>;
}

impl<S: Stacks + ?Sized> Stacks for &S {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        (**self).instruction(site, k)
    }
}

/// The balanced excited environment as a keyed pseudorandom function of
/// `(seed, x, y, k)`. Nothing is materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
}

impl Environment {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Fair bit behind `I(site, k)`; `true` means the positive direction.
    #[inline]
    pub fn bit(&self, site: Site, k: u64) -> bool {
        keyed(self.seed, &[TAG_INSTRUCTION, site.x as u64, site.y as u64, k]) >> 63 == 1
    }

    pub fn instruction_at(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        if k == 0 {
            return Err(EnvError::ZeroIndex);
        }
        let up = self.bit(site, k);
        let direction = if k == 1 { Direction::vertical(up) } else { Direction::horizontal(up) };
        Ok(Instruction::step(direction))
    }
}

impl Stacks for Environment {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        self.instruction_at(site, k)
    }
}

/// Every first instruction points `vertical`, every later one `horizontal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantStacks {
    pub vertical: Direction,
    pub horizontal: Direction,
}

impl ConstantStacks {
    /// "All vertical = up, all horizontal = right".
    pub fn up_right() -> Self {
        Self { vertical: Direction::North, horizontal: Direction::East }
    }
}

impl Stacks for ConstantStacks {
    fn instruction(&self, _site: Site, k: u64) -> Result<Instruction, EnvError> {
        match k {
            0 => Err(EnvError::ZeroIndex),
            1 => Ok(Instruction::step(self.vertical)),
            _ => Ok(Instruction::step(self.horizontal)),
        }
    }
}

/// Wraps another source and attaches pseudorandom cease flags, each address
/// independently with probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct CeaseAugmented<S> {
    pub inner: S,
    pub seed: u64,
    pub p: f64,
}

impl<S: Stacks> Stacks for CeaseAugmented<S> {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        let mut ins = self.inner.instruction(site, k)?;
        let u = crate::rng::unit_open_closed(keyed(self.seed, &[TAG_CEASE, site.x as u64, site.y as u64, k]));
        ins.cease |= u <= self.p;
        Ok(ins)
    }
}

/// Marks every first instruction as ceasing. With this modification a
/// particle system started in one level stops exactly when a walker leaves
/// the level through a fresh site.
#[derive(Debug, Clone, Copy)]
pub struct CeaseOnFirst<S>(pub S);

impl<S: Stacks> Stacks for CeaseOnFirst<S> {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        let mut ins = self.0.instruction(site, k)?;
        if k == 1 {
            ins.cease = true;
        }
        Ok(ins)
    }
}

/// Explicit finite stacks, loadable from a plain-text stack file.
///
/// One record per line: `x y k direction cease`, where direction is one of
/// `+e1 -e1 +e2 -e2` and cease is `0` or `1`. Blank lines and lines starting
/// with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedStacks {
    records: BTreeMap<(Site, u64), Instruction>,
}

impl ScriptedStacks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, site: Site, k: u64, ins: Instruction) -> Result<(), EnvError> {
        if k == 0 {
            return Err(EnvError::ZeroIndex);
        }
        self.records.insert((site, k), ins);
        Ok(())
    }

    /// Sets the whole stack at `site` starting from index 1.
    pub fn push_stack(&mut self, site: Site, stack: &[Instruction]) {
        for (i, ins) in stack.iter().enumerate() {
            self.records.insert((site, i as u64 + 1), *ins);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut out = Self::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| EnvError::Parse { line: no + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let x: i64 = fields[0].parse().map_err(|e| err(format!("x: {e}")))?;
            let y: i64 = fields[1].parse().map_err(|e| err(format!("y: {e}")))?;
            let k: u64 = fields[2].parse().map_err(|e| err(format!("k: {e}")))?;
            let direction: Direction = fields[3].parse().map_err(|_| err(format!("direction {:?}", fields[3])))?;
            let cease = match fields[4] {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(err(format!("cease flag {other:?}"))),
            };
            if k == 0 {
                return Err(err("index k must be at least 1".into()));
            }
            if out.records.insert((Site::new(x, y), k), Instruction { direction, cease }).is_some() {
                return Err(err(format!("duplicate record for ({x}, {y}) index {k}")));
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y k direction cease\n");
        for ((site, k), ins) in &self.records {
            s.push_str(&format!("{} {} {} {} {}\n", site.x, site.y, k, ins.direction, u8::from(ins.cease)));
        }
        s
    }
}

impl Stacks for ScriptedStacks {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        if k == 0 {
            return Err(EnvError::ZeroIndex);
        }
        self.records.get(&(site, k)).copied().ok_or(EnvError::Unscripted { site, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Particle {
    pub id: usize,
    pub start: Site,
    pub position: Site,
    pub ceased: bool,
}

impl Particle {
    pub fn new(id: usize, start: Site) -> Self {
        Self { id, start, position: start, ceased: false }
    }
}

/// Numbers particles `0..` from their start sites.
pub fn particles_at(starts: &[Site]) -> Vec<Particle> {
    starts.iter().enumerate().map(|(i, s)| Particle::new(i, *s)).collect()
}

/// Instructions consumed per site. Used indices at a site always form the
/// prefix `1..=count`, so the count identifies the used addresses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsedSet {
    counts: BTreeMap<Site, u64>,
}

impl UsedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, site: Site) -> u64 {
        self.counts.get(&site).copied().unwrap_or(0)
    }

    /// Marks the next instruction at `site` used and returns its index.
    pub fn consume(&mut self, site: Site) -> u64 {
        let c = self.counts.entry(site).or_insert(0);
        *c += 1;
        *c
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn sites(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts.iter().map(|(s, c)| (*s, *c))
    }

    /// Address-wise inclusion.
    pub fn is_subset_of(&self, other: &UsedSet) -> bool {
        self.counts.iter().all(|(s, c)| other.count(*s) >= *c)
    }

    pub fn contains(&self, site: Site, k: u64) -> bool {
        k >= 1 && self.count(site) >= k
    }
}

impl FromIterator<(Site, u64)> for UsedSet {
    fn from_iter<T: IntoIterator<Item = (Site, u64)>>(iter: T) -> Self {
        let counts = iter.into_iter().filter(|(_, c)| *c > 0).collect();
        Self { counts }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovementOutcome {
    pub used: UsedSet,
    pub particles: Vec<Particle>,
    /// Instructions consumed.
    pub moves: u64,
    /// Invitations handed out, including those to ceased particles.
    pub invitations: u64,
    /// The budget ran out while some particle was still live.
    pub exhausted: bool,
}

impl MovementOutcome {
    pub fn all_ceased(&self) -> bool {
        self.particles.iter().all(|p| p.ceased)
    }
}

/// Replays a movement list against `env`, cycling the list when it runs
/// out, until every particle has ceased or `budget` instructions have been
/// consumed.
pub fn run_movement_list<S: Stacks + ?Sized>(
    env: &S,
    particles: &[Particle],
    list: &[usize],
    budget: u64,
) -> Result<MovementOutcome, EnvError> {
    let mut state: Vec<Particle> = particles.to_vec();
    let mut used = UsedSet::new();
    let mut out = MovementOutcome { used: UsedSet::new(), particles: Vec::new(), moves: 0, invitations: 0, exhausted: false };
    if let Some(&bad) = list.iter().find(|&&id| id >= state.len()) {
        return Err(EnvError::UnknownParticle(bad));
    }
    let mut listed = vec![false; state.len()];
    for &id in list {
        listed[id] = true;
    }
    if let Some(p) = state.iter().find(|p| !p.ceased && !listed[p.id]) {
        return Err(EnvError::MissingParticle(p.id));
    }
    let mut live = state.iter().filter(|p| !p.ceased).count();
    let mut cursor = 0usize;
    while live > 0 {
        let p = &mut state[list[cursor]];
        cursor = (cursor + 1) % list.len();
        out.invitations += 1;
        if p.ceased {
            continue;
        }
        if out.moves == budget {
            out.exhausted = true;
            break;
        }
        let k = used.consume(p.position);
        let ins = env.instruction(p.position, k)?;
        p.position = p.position.step(ins.direction);
        out.moves += 1;
        if ins.cease {
            p.ceased = true;
            live -= 1;
        }
    }
    out.used = used;
    out.particles = state;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbelianVerdict {
    Equal,
    Different,
    /// At least one run hit its budget with live particles.
    Indeterminate,
}

/// Compares the used instructions of two movement lists.
pub fn abelian_equal<S: Stacks + ?Sized>(
    env: &S,
    particles: &[Particle],
    list_a: &[usize],
    list_b: &[usize],
    budget: u64,
) -> Result<AbelianVerdict, EnvError> {
    let a = run_movement_list(env, particles, list_a, budget)?;
    let b = run_movement_list(env, particles, list_b, budget)?;
    if a.exhausted || b.exhausted {
        return Ok(AbelianVerdict::Indeterminate);
    }
    Ok(if a.used == b.used { AbelianVerdict::Equal } else { AbelianVerdict::Different })
}
