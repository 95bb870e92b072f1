//! Offline reordering of the LPN index matrix for cache locality.
//!
//! Column swapping relabels columns in order of first use in a row-major
//! scan, so entries touched close together in time sit on nearby lines.
//! Row look-ahead then reorders individual accesses: while row `h` is
//! processed in order, entries of the next `window - 1` rows are issued
//! early whenever their line is already cached or has just been loaded.
//! The result is a [`SortedCsr`]: a permutation plus a flat
//! `(colidx, rowidx)` schedule.

mod cache;

pub use cache::{simulate_indices, CacheConfig, CacheSim, CacheStats, DEFAULT_ELEMENT_BYTES, DEFAULT_LINE_BYTES};

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lpn::{RowSource, SparseMatrix};

pub const DEFAULT_WINDOW: usize = 64;
/// Rows sorted together; the scheduling cache starts cold in each block.
pub const SORT_BLOCK_ROWS: usize = 1 << 16;

const SORTED_MAGIC: &[u8; 4] = b"IRNS";
const SORTED_VERSION: u16 = 1;

/// A reordered access schedule for one matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortedCsr {
    n: usize,
    k: usize,
    d: usize,
    window: usize,
    cache: CacheConfig,
    /// New column position to original column.
    perm: Vec<u32>,
    colidx: Vec<u32>,
    rowidx: Vec<u32>,
}

impl SortedCsr {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn cache_config(&self) -> &CacheConfig {
        &self.cache
    }

    pub fn perm(&self) -> &[u32] {
        &self.perm
    }

    pub fn colidx(&self) -> &[u32] {
        &self.colidx
    }

    pub fn rowidx(&self) -> &[u32] {
        &self.rowidx
    }

    /// Checks the structural invariants against the source matrix.
    pub fn verify_against(&self, a: &SparseMatrix) -> Result<()> {
        if !is_permutation(&self.perm, self.k) {
            return Err(Error::Format("column order is not a permutation".into()));
        }
        if self.colidx.len() != a.n() * a.d() || self.rowidx.len() != self.colidx.len() {
            return Err(Error::LengthMismatch("schedule length differs from n * d".into()));
        }
        let mut got: Vec<(u32, u32)> = self
            .rowidx
            .iter()
            .zip(&self.colidx)
            .map(|(&r, &c)| (r, self.perm[c as usize]))
            .collect();
        let mut want: Vec<(u32, u32)> = (0..a.n())
            .flat_map(|i| a.row(i).iter().map(move |&c| (i as u32, c)))
            .collect();
        got.sort_unstable();
        want.sort_unstable();
        if got != want {
            return Err(Error::Format("schedule entries differ from the matrix".into()));
        }
        Ok(())
    }
}

fn is_permutation(p: &[u32], k: usize) -> bool {
    if p.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    p.iter().all(|&x| (x as usize) < k && !std::mem::replace(&mut seen[x as usize], true))
}

/// Columns in order of first appearance; unused columns follow in
/// ascending order. Returns new position -> original column.
pub fn first_occurrence_perm(src: &impl RowSource) -> Vec<u32> {
    let k = src.cols();
    let mut seen = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    src.for_each_row(|_, row| {
        for &c in row {
            if !std::mem::replace(&mut seen[c as usize], true) {
                perm.push(c);
            }
        }
    });
    perm.extend((0..k as u32).filter(|&c| !seen[c as usize]));
    perm
}

pub fn invert_perm(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old as usize] = new as u32;
    }
    inv
}

/// A row source with columns renamed through `inv` (original -> new).
pub struct Relabeled<'a, S> {
    src: &'a S,
    inv: &'a [u32],
}

impl<'a, S: RowSource> Relabeled<'a, S> {
    pub fn new(src: &'a S, inv: &'a [u32]) -> Self {
        Relabeled { src, inv }
    }
}

impl<S: RowSource> RowSource for Relabeled<'_, S> {
    fn rows(&self) -> usize {
        self.src.rows()
    }

    fn cols(&self) -> usize {
        self.src.cols()
    }

    fn weight(&self) -> usize {
        self.src.weight()
    }

    fn for_each_row<F: FnMut(usize, &[u32])>(&self, mut f: F) {
        let mut buf = vec![0u32; self.src.weight()];
        self.src.for_each_row(|i, row| {
            for (b, &c) in buf.iter_mut().zip(row) {
                *b = self.inv[c as usize];
            }
            f(i, &buf);
        });
    }
}

/// Relabels columns by first occurrence. Returns `(perm, A')` where
/// column `c` of `A'` is column `perm[c]` of `A`.
pub fn column_swap(a: &SparseMatrix) -> (Vec<u32>, SparseMatrix) {
    let perm = first_occurrence_perm(a);
    let inv = invert_perm(&perm);
    let colidx = a.colidx().iter().map(|&c| inv[c as usize]).collect();
    (perm, SparseMatrix::from_parts_unchecked(a.n(), a.k(), a.d(), colidx))
}

#[derive(Default)]
struct WindowRow {
    row: usize,
    cols: Vec<u32>,
    done: Vec<bool>,
}

/// Streaming row look-ahead scheduler.
///
/// Push rows in order; each scheduled `(row, col)` is passed to the sink.
pub struct Lookahead {
    window: usize,
    block_rows: usize,
    sim: CacheSim,
    rows: VecDeque<WindowRow>,
    spare: Vec<WindowRow>,
    // per line: admitted entries waiting for that line, as (row, slot)
    pending: Vec<Vec<(usize, u32)>>,
    in_block: usize,
}

impl Lookahead {
    pub fn new(window: usize, cfg: &CacheConfig, k: usize) -> Result<Self> {
        Lookahead::with_block(window, cfg, k, SORT_BLOCK_ROWS)
    }

    pub fn with_block(window: usize, cfg: &CacheConfig, k: usize, block_rows: usize) -> Result<Self> {
        if window == 0 || block_rows == 0 {
            return Err(Error::Config("look-ahead window and block must be at least 1 row".into()));
        }
        let lines = cfg.line_of(k.saturating_sub(1) as u32) as usize + 1;
        Ok(Lookahead {
            window,
            block_rows,
            sim: CacheSim::new(cfg, k),
            rows: VecDeque::with_capacity(window),
            spare: Vec::new(),
            pending: vec![Vec::new(); lines],
            in_block: 0,
        })
    }

    pub fn push_row(&mut self, row: usize, cols: &[u32], sink: &mut impl FnMut(usize, u32)) {
        let mut wr = self.spare.pop().unwrap_or_default();
        wr.row = row;
        wr.cols.clear();
        wr.cols.extend_from_slice(cols);
        wr.done.clear();
        wr.done.resize(cols.len(), false);
        if !self.rows.is_empty() {
            for (slot, &c) in cols.iter().enumerate() {
                let line = self.sim.line_of(c);
                if self.sim.contains_line(line) {
                    self.sim.access_line(line);
                    sink(row, c);
                    wr.done[slot] = true;
                } else {
                    self.pending[line as usize].push((row, slot as u32));
                }
            }
        }
        self.rows.push_back(wr);
        if self.rows.len() >= self.window {
            self.process_head(sink);
        }
        self.in_block += 1;
        if self.in_block == self.block_rows {
            self.drain(sink);
            self.sim.flush();
            self.in_block = 0;
        }
    }

    fn process_head(&mut self, sink: &mut impl FnMut(usize, u32)) {
        let Some(mut head) = self.rows.pop_front() else {
            return;
        };
        let base = self.rows.front().map_or(usize::MAX, |r| r.row);
        for slot in 0..head.cols.len() {
            if head.done[slot] {
                continue;
            }
            let c = head.cols[slot];
            let line = self.sim.line_of(c);
            let hit = self.sim.access_line(line);
            sink(head.row, c);
            head.done[slot] = true;
            if hit {
                continue;
            }
            let mut waiting = std::mem::take(&mut self.pending[line as usize]);
            for &(row, s) in &waiting {
                if row <= head.row {
                    continue;
                }
                let wr = &mut self.rows[row - base];
                if !wr.done[s as usize] {
                    self.sim.access_line(line);
                    sink(row, wr.cols[s as usize]);
                    wr.done[s as usize] = true;
                }
            }
            waiting.clear();
            self.pending[line as usize] = waiting;
        }
        self.spare.push(head);
    }

    /// Schedules everything still buffered.
    pub fn drain(&mut self, sink: &mut impl FnMut(usize, u32)) {
        while !self.rows.is_empty() {
            self.process_head(sink);
        }
    }
}

/// Row look-ahead over a column-swapped matrix `a_prime` whose columns
/// relate to the original via `perm`.
pub fn row_lookahead(a_prime: &SparseMatrix, perm: &[u32], window: usize, cfg: &CacheConfig) -> Result<SortedCsr> {
    if !is_permutation(perm, a_prime.k()) {
        return Err(Error::Config("perm is not a permutation of the columns".into()));
    }
    let mut la = Lookahead::new(window, cfg, a_prime.k())?;
    let total = a_prime.n() * a_prime.d();
    let mut colidx = Vec::with_capacity(total);
    let mut rowidx = Vec::with_capacity(total);
    let mut sink = |r: usize, c: u32| {
        rowidx.push(r as u32);
        colidx.push(c);
    };
    for i in 0..a_prime.n() {
        la.push_row(i, a_prime.row(i), &mut sink);
    }
    la.drain(&mut sink);
    Ok(SortedCsr {
        n: a_prime.n(),
        k: a_prime.k(),
        d: a_prime.d(),
        window,
        cache: *cfg,
        perm: perm.to_vec(),
        colidx,
        rowidx,
    })
}

/// Column swap followed by row look-ahead.
pub fn sort_matrix(a: &SparseMatrix, window: usize, cfg: &CacheConfig) -> Result<SortedCsr> {
    let (perm, swapped) = column_swap(a);
    row_lookahead(&swapped, &perm, window, cfg)
}

/// Plain row-major schedule with identity permutation.
pub fn row_major(a: &SparseMatrix, cfg: &CacheConfig) -> SortedCsr {
    SortedCsr {
        n: a.n(),
        k: a.k(),
        d: a.d(),
        window: 1,
        cache: *cfg,
        perm: (0..a.k() as u32).collect(),
        colidx: a.colidx().to_vec(),
        rowidx: (0..a.n() as u32).flat_map(|i| std::iter::repeat_n(i, a.d())).collect(),
    }
}

pub fn simulate_cache(schedule: &SortedCsr, cfg: &CacheConfig) -> CacheStats {
    simulate_indices(schedule.colidx.iter().copied(), schedule.k, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    Unsorted,
    Swap,
    SwapLookahead,
}

impl Schedule {
    pub const ALL: [Schedule; 3] = [Schedule::Unsorted, Schedule::Swap, Schedule::SwapLookahead];

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Unsorted => "none",
            Schedule::Swap => "swap",
            Schedule::SwapLookahead => "swap+lookahead",
        }
    }

    pub fn parse(s: &str) -> Option<Schedule> {
        Schedule::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// One simulated access stream: an optional look-ahead stage feeding a
/// measuring cache.
struct Lane {
    lookahead: Option<Lookahead>,
    sim: CacheSim,
}

impl Lane {
    fn new(schedule: Schedule, window: usize, cfg: &CacheConfig, k: usize) -> Result<Self> {
        let lookahead = match schedule {
            Schedule::SwapLookahead => Some(Lookahead::new(window, cfg, k)?),
            _ => None,
        };
        Ok(Lane {
            lookahead,
            sim: CacheSim::new(cfg, k),
        })
    }

    fn push_row(&mut self, row: usize, cols: &[u32]) {
        let sim = &mut self.sim;
        match &mut self.lookahead {
            Some(la) => la.push_row(row, cols, &mut |_, c| {
                sim.access(c);
            }),
            None => {
                for &c in cols {
                    sim.access(c);
                }
            }
        }
    }

    fn finish(mut self) -> CacheStats {
        let sim = &mut self.sim;
        if let Some(la) = &mut self.lookahead {
            la.drain(&mut |_, c| {
                sim.access(c);
            });
        }
        self.sim.stats()
    }
}

/// Column-swap permutation inverse for a schedule (`None` when unsorted).
fn swap_inverse(src: &impl RowSource, schedule: Schedule) -> Option<Vec<u32>> {
    match schedule {
        Schedule::Unsorted => None,
        _ => Some(invert_perm(&first_occurrence_perm(src))),
    }
}

fn for_each_scheduled_row(src: &impl RowSource, inv: Option<&[u32]>, mut f: impl FnMut(usize, &[u32])) {
    match inv {
        Some(inv) => Relabeled::new(src, inv).for_each_row(|i, r| f(i, r)),
        None => src.for_each_row(|i, r| f(i, r)),
    }
}

/// Hit statistics of one schedule under several cache configurations,
/// from a single pass over the rows.
pub fn schedule_stats(
    src: &impl RowSource,
    schedule: Schedule,
    window: usize,
    configs: &[CacheConfig],
) -> Result<Vec<CacheStats>> {
    let k = src.cols();
    let inv = swap_inverse(src, schedule);
    let mut lanes = configs
        .iter()
        .map(|cfg| Lane::new(schedule, window, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    for_each_scheduled_row(src, inv.as_deref(), |i, row| {
        for lane in &mut lanes {
            lane.push_row(i, row);
        }
    });
    Ok(lanes.into_iter().map(Lane::finish).collect())
}

/// Per-rank hit statistics for row-partitioned matrices, one inner vector
/// per partitioning. Every rank has its own cache; one pass over the rows
/// serves all partitionings.
pub fn partitioned_stats(
    src: &impl RowSource,
    schedule: Schedule,
    window: usize,
    cfg: &CacheConfig,
    partitions: &[Vec<Range<usize>>],
) -> Result<Vec<Vec<CacheStats>>> {
    let k = src.cols();
    let inv = swap_inverse(src, schedule);
    struct Part<'a> {
        ranges: &'a [Range<usize>],
        current: usize,
        lane: Option<Lane>,
        done: Vec<CacheStats>,
    }
    let mut parts: Vec<Part> = partitions
        .iter()
        .map(|r| Part {
            ranges: r,
            current: 0,
            lane: None,
            done: Vec::with_capacity(r.len()),
        })
        .collect();
    let mut err = None;
    for_each_scheduled_row(src, inv.as_deref(), |i, row| {
        for p in &mut parts {
            while p.current < p.ranges.len() && i >= p.ranges[p.current].end {
                let lane = p.lane.take();
                p.done.push(lane.map(Lane::finish).unwrap_or_default());
                p.current += 1;
            }
            if p.current == p.ranges.len() || i < p.ranges[p.current].start {
                continue;
            }
            if p.lane.is_none() {
                match Lane::new(schedule, window, cfg, k) {
                    Ok(l) => p.lane = Some(l),
                    Err(e) => {
                        err.get_or_insert(e);
                        continue;
                    }
                }
            }
            if let Some(lane) = &mut p.lane {
                lane.push_row(i, row);
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(parts
        .into_iter()
        .map(|mut p| {
            while p.done.len() < p.ranges.len() {
                let lane = p.lane.take();
                p.done.push(lane.map(Lane::finish).unwrap_or_default());
            }
            p.done
        })
        .collect())
}

fn put_u32s(w: &mut impl Write, xs: &[u32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_sorted(path: &Path, s: &SortedCsr) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SORTED_MAGIC)?;
    w.write_all(&SORTED_VERSION.to_le_bytes())?;
    w.write_all(&(s.n as u64).to_le_bytes())?;
    w.write_all(&(s.k as u64).to_le_bytes())?;
    w.write_all(&(s.d as u16).to_le_bytes())?;
    w.write_all(&(s.window as u32).to_le_bytes())?;
    w.write_all(&s.cache.capacity_bytes.to_le_bytes())?;
    w.write_all(&s.cache.line_bytes.to_le_bytes())?;
    w.write_all(&s.cache.ways.unwrap_or(0).to_le_bytes())?;
    w.write_all(&s.cache.element_bytes.to_le_bytes())?;
    put_u32s(&mut w, &s.perm)?;
    put_u32s(&mut w, &s.colidx)?;
    put_u32s(&mut w, &s.rowidx)?;
    w.flush()?;
    Ok(())
}

pub fn read_sorted(path: &Path) -> Result<SortedCsr> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    const HEAD: usize = 4 + 2 + 8 + 8 + 2 + 4 + 8 + 4 + 4 + 4;
    if bytes.len() < HEAD || &bytes[..4] != SORTED_MAGIC {
        return Err(Error::Format("not a sorted-matrix file".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u16_at(4) != SORTED_VERSION {
        return Err(Error::Format(format!("unsupported sorted-matrix version {}", u16_at(4))));
    }
    let n = u64_at(6) as usize;
    let k = u64_at(14) as usize;
    let d = u16_at(22) as usize;
    let window = u32_at(24) as usize;
    let ways = u32_at(40);
    let cache = CacheConfig::new(u64_at(28), u32_at(36), (ways != 0).then_some(ways), u32_at(44))?;
    let body = &bytes[HEAD..];
    let want = (k + 2 * n * d) * 4;
    if body.len() != want {
        return Err(Error::LengthMismatch(format!(
            "sorted-matrix body has {} bytes, expected {want}",
            body.len()
        )));
    }
    let words: Vec<u32> = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let perm = words[..k].to_vec();
    let colidx = words[k..k + n * d].to_vec();
    let rowidx = words[k + n * d..].to_vec();
    if !is_permutation(&perm, k) {
        return Err(Error::Format("column order is not a permutation".into()));
    }
    if colidx.iter().any(|&c| c as usize >= k) || rowidx.iter().any(|&r| r as usize >= n) {
        return Err(Error::Format("index out of range".into()));
    }
    Ok(SortedCsr {
        n,
        k,
        d,
        window,
        cache,
        perm,
        colidx,
        rowidx,
    })
}
