//! Memory-side cache simulator over vector element indices.
//!
//! Element `i` lives at byte address `i * element_bytes`; its line is
//! `address / line_bytes`. Replacement is LRU, fully associative unless a
//! way count is given. Recency lists are intrusive and indexed by line id,
//! so each access is O(1) with no hashing.

use crate::error::{Error, Result};

pub const DEFAULT_LINE_BYTES: u32 = 64;
pub const DEFAULT_ELEMENT_BYTES: u32 = 16;

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    pub line_bytes: u32,
    /// `None` for fully associative.
    pub ways: Option<u32>,
    pub element_bytes: u32,
}

impl CacheConfig {
    pub fn new(capacity_bytes: u64, line_bytes: u32, ways: Option<u32>, element_bytes: u32) -> Result<Self> {
        let cfg = CacheConfig {
            capacity_bytes,
            line_bytes,
            ways,
            element_bytes,
        };
        if line_bytes == 0 || element_bytes == 0 || !line_bytes.is_multiple_of(element_bytes) {
            return Err(Error::Config(format!(
                "line of {line_bytes} bytes does not hold whole {element_bytes}-byte elements"
            )));
        }
        if capacity_bytes < line_bytes as u64 || !capacity_bytes.is_multiple_of(line_bytes as u64) {
            return Err(Error::Config(format!(
                "capacity {capacity_bytes} is not a positive multiple of the {line_bytes}-byte line"
            )));
        }
        if let Some(w) = ways {
            if w == 0 || !cfg.lines().is_multiple_of(w as u64) {
                return Err(Error::Config(format!("{} lines cannot form {w}-way sets", cfg.lines())));
            }
        }
        Ok(cfg)
    }

    /// 64-byte lines of 16-byte elements, fully associative.
    pub fn fully_associative(capacity_bytes: u64) -> Result<Self> {
        CacheConfig::new(capacity_bytes, DEFAULT_LINE_BYTES, None, DEFAULT_ELEMENT_BYTES)
    }

    pub fn lines(&self) -> u64 {
        self.capacity_bytes / self.line_bytes as u64
    }

    pub fn elements_per_line(&self) -> u32 {
        self.line_bytes / self.element_bytes
    }

    #[inline]
    pub fn line_of(&self, index: u32) -> u32 {
        ((index as u64 * self.element_bytes as u64) / self.line_bytes as u64) as u32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }

    pub fn add(&mut self, other: CacheStats) {
        self.accesses += other.accesses;
        self.hits += other.hits;
        self.misses += other.misses;
    }
}

/// LRU simulator for an address space of `k` elements.
#[derive(Clone, Debug)]
pub struct CacheSim {
    cfg: CacheConfig,
    ways: u32,
    sets: u32,
    // per line id
    prev: Vec<u32>,
    next: Vec<u32>,
    resident: Vec<bool>,
    // per set: most and least recently used line, occupancy
    head: Vec<u32>,
    tail: Vec<u32>,
    count: Vec<u32>,
    stats: CacheStats,
}

impl CacheSim {
    pub fn new(cfg: &CacheConfig, k: usize) -> Self {
        let span = (k as u64 * cfg.element_bytes as u64).div_ceil(cfg.line_bytes as u64).max(1) as usize;
        let lines = cfg.lines().min(u32::MAX as u64) as u32;
        let (sets, ways) = match cfg.ways {
            Some(w) => (lines / w, w),
            None => (1, lines),
        };
        CacheSim {
            cfg: *cfg,
            ways,
            sets,
            prev: vec![NIL; span],
            next: vec![NIL; span],
            resident: vec![false; span],
            head: vec![NIL; sets as usize],
            tail: vec![NIL; sets as usize],
            count: vec![0; sets as usize],
            stats: CacheStats::default(),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    #[inline]
    pub fn line_of(&self, index: u32) -> u32 {
        self.cfg.line_of(index)
    }

    #[inline]
    pub fn contains_line(&self, line: u32) -> bool {
        self.resident[line as usize]
    }

    fn unlink(&mut self, set: usize, line: u32) {
        let (p, n) = (self.prev[line as usize], self.next[line as usize]);
        if p == NIL {
            self.head[set] = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            self.tail[set] = p;
        } else {
            self.prev[n as usize] = p;
        }
    }

    fn push_front(&mut self, set: usize, line: u32) {
        let h = self.head[set];
        self.prev[line as usize] = NIL;
        self.next[line as usize] = h;
        if h == NIL {
            self.tail[set] = line;
        } else {
            self.prev[h as usize] = line;
        }
        self.head[set] = line;
    }

    /// Touches `line`; returns true on a hit.
    #[inline]
    pub fn access_line(&mut self, line: u32) -> bool {
        let set = (line % self.sets) as usize;
        self.stats.accesses += 1;
        if self.resident[line as usize] {
            self.stats.hits += 1;
            if self.head[set] != line {
                self.unlink(set, line);
                self.push_front(set, line);
            }
            return true;
        }
        self.stats.misses += 1;
        if self.count[set] == self.ways {
            let victim = self.tail[set];
            self.unlink(set, victim);
            self.resident[victim as usize] = false;
        } else {
            self.count[set] += 1;
        }
        self.resident[line as usize] = true;
        self.push_front(set, line);
        false
    }

    #[inline]
    pub fn access(&mut self, index: u32) -> bool {
        self.access_line(self.cfg.line_of(index))
    }

    /// Empties the cache; counters are kept.
    pub fn flush(&mut self) {
        for set in 0..self.sets as usize {
            let mut line = self.head[set];
            while line != NIL {
                self.resident[line as usize] = false;
                line = self.next[line as usize];
            }
            self.head[set] = NIL;
            self.tail[set] = NIL;
            self.count[set] = 0;
        }
    }
}

/// Simulates an arbitrary index sequence over `k` elements.
pub fn simulate_indices(indices: impl IntoIterator<Item = u32>, k: usize, cfg: &CacheConfig) -> CacheStats {
    let mut sim = CacheSim::new(cfg, k);
    for i in indices {
        sim.access(i);
    }
    sim.stats()
}
