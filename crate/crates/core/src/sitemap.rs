//! Open-addressed visit counter keyed by packed lattice sites.

use crate::env::Site;

const EMPTY: u64 = u64::MAX;
const LIMIT: i64 = i32::MAX as i64 - 1;

#[inline]
fn pack(site: Site) -> Option<u64> {
    if site.x.abs() > LIMIT || site.y.abs() > LIMIT {
        return None;
    }
    let hx = (site.x as i32 as u32) ^ 0x8000_0000;
    let hy = (site.y as i32 as u32) ^ 0x8000_0000;
    Some(((hx as u64) << 32) | hy as u64)
}

#[inline]
fn unpack(key: u64) -> Site {
    let x = ((key >> 32) as u32 ^ 0x8000_0000) as i32 as i64;
    let y = ((key as u32) ^ 0x8000_0000) as i32 as i64;
    Site { x, y }
}

/// Per-site `u32` counters with linear probing.
///
/// Coordinates must fit in `i32` (minus the sentinel); anything farther out
/// is rejected by [`SiteMap::increment`].
#[derive(Debug, Clone)]
pub struct SiteMap {
    keys: Vec<u64>,
    vals: Vec<u32>,
    len: usize,
    shift: u32,
}

impl Default for SiteMap {
    fn default() -> Self {
        Self::with_capacity(1024)
    }
}

impl SiteMap {
    pub fn with_capacity(expected: usize) -> Self {
        let slots = (expected.max(8) * 2).next_power_of_two();
        Self {
            keys: vec![EMPTY; slots],
            vals: vec![0; slots],
            len: 0,
            shift: 64 - slots.trailing_zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn slot(&self, key: u64) -> usize {
        (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> self.shift) as usize
    }

    #[inline]
    fn find(&self, key: u64) -> (usize, bool) {
        let mask = self.keys.len() - 1;
        let mut i = self.slot(key);
        loop {
            let k = self.keys[i];
            if k == key {
                return (i, true);
            }
            if k == EMPTY {
                return (i, false);
            }
            i = (i + 1) & mask;
        }
    }

    pub fn get(&self, site: Site) -> u32 {
        match pack(site) {
            Some(key) => {
                let (i, found) = self.find(key);
                if found {
                    self.vals[i]
                } else {
                    0
                }
            }
            None => 0,
        }
    }

    /// Adds one to the counter at `site` and returns the new value, or
    /// `None` when the site cannot be packed.
    #[inline]
    pub fn increment(&mut self, site: Site) -> Option<u32> {
        let key = pack(site)?;
        let (i, found) = self.find(key);
        if found {
            self.vals[i] += 1;
            return Some(self.vals[i]);
        }
        self.keys[i] = key;
        self.vals[i] = 1;
        self.len += 1;
        if self.len * 2 > self.keys.len() {
            self.grow();
        }
        Some(1)
    }

    fn grow(&mut self) {
        let slots = self.keys.len() * 2;
        let keys = std::mem::replace(&mut self.keys, vec![EMPTY; slots]);
        let vals = std::mem::replace(&mut self.vals, vec![0; slots]);
        self.shift -= 1;
        for (k, v) in keys.into_iter().zip(vals) {
            if k != EMPTY {
                let (i, _) = self.find(k);
                self.keys[i] = k;
                self.vals[i] = v;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u32)> + '_ {
        self.keys
            .iter()
            .zip(&self.vals)
            .filter(|(k, _)| **k != EMPTY)
            .map(|(k, v)| (unpack(*k), *v))
    }
}
