//! Analytic latency model for running the extension beside DRAM ranks.
//!
//! LPN rows are split evenly across ranks; each rank streams its index
//! schedule through a private cache and pays DRAM timing on misses. SPCOT
//! runs on PRG cores attached to each DIMM and overlaps with LPN. A final
//! XOR merge across DIMMs costs one cycle per output.
//!
//! Per-rank LPN cycles:
//! `hits * t_hit + misses * (t_rcd + t_cl + t_bl) + accesses`.
//!
//! SPCOT cycles:
//! `ceil(ceil(calls / cores) / utilization) + pipeline_depth`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::ggm::{schedule_expansion, TreeShape};
use crate::locality::{partitioned_stats, CacheConfig, CacheStats, Schedule};
use crate::lpn::{LpnParams, RowSource};
use crate::prg::PrgKind;

pub const CSV_HEADER: &str = "params,ranks,cache_bytes,spcot_cycles,lpn_cycles,total_cycles,total_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmpConfig {
    pub ranks: usize,
    pub memory_clock_mhz: f64,
    pub t_hit: u64,
    pub t_rcd: u64,
    pub t_cl: u64,
    pub t_bl: u64,
    pub chacha_cores_per_dimm: u64,
    pub pipeline_depth: u64,
    pub ranks_per_dimm: usize,
    /// Bytes one rank receives per memory cycle during the broadcast.
    pub bus_bytes_per_cycle: u64,
}

impl Default for NmpConfig {
    fn default() -> Self {
        NmpConfig {
            ranks: 16,
            memory_clock_mhz: 1200.0,
            t_hit: 2,
            t_rcd: 16,
            t_cl: 16,
            t_bl: 4,
            chacha_cores_per_dimm: 4,
            pipeline_depth: 8,
            ranks_per_dimm: 2,
            bus_bytes_per_cycle: 16,
        }
    }
}

impl NmpConfig {
    pub fn with_ranks(ranks: usize) -> Self {
        NmpConfig {
            ranks,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let timings = [self.t_hit, self.t_rcd, self.t_cl, self.t_bl, self.chacha_cores_per_dimm, self.pipeline_depth];
        if self.ranks == 0 || self.ranks_per_dimm == 0 || self.bus_bytes_per_cycle == 0 {
            return Err(Error::Config("ranks, ranks per DIMM and bus width must be positive".into()));
        }
        if timings.contains(&0) {
            return Err(Error::Config("timing constants and core counts must be at least 1".into()));
        }
        if self.memory_clock_mhz.is_nan() || self.memory_clock_mhz <= 0.0 {
            return Err(Error::Config("memory clock must be positive".into()));
        }
        Ok(())
    }

    pub fn dimms(&self) -> usize {
        self.ranks.div_ceil(self.ranks_per_dimm)
    }

    /// PRG cores available to SPCOT.
    pub fn spcot_cores(&self) -> u64 {
        self.chacha_cores_per_dimm * self.dimms() as u64
    }

    pub fn miss_cycles(&self) -> u64 {
        self.t_rcd + self.t_cl + self.t_bl
    }

    pub fn cycles_to_ms(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.memory_clock_mhz * 1000.0)
    }
}

/// `ranks` contiguous row ranges over `[0, n)` whose sizes differ by at
/// most one; the first `n % ranks` ranges get the extra row.
pub fn partition_rows(n: usize, ranks: usize) -> Result<Vec<Range<usize>>> {
    if ranks == 0 || ranks > n {
        return Err(Error::Config(format!("cannot split {n} rows across {ranks} ranks")));
    }
    let (base, extra) = (n / ranks, n % ranks);
    let mut start = 0;
    Ok((0..ranks)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let range = start..start + len;
            start += len;
            range
        })
        .collect())
}

pub fn estimate_lpn_cycles(stats: &[CacheStats], cfg: &NmpConfig) -> Vec<u64> {
    stats
        .iter()
        .map(|s| s.hits * cfg.t_hit + s.misses * cfg.miss_cycles() + s.accesses)
        .collect()
}

/// PRG calls for `t` trees of `ell` leaves with fanout `m`.
pub fn spcot_prg_calls(t: usize, ell: usize, fanout: usize, kind: PrgKind) -> Result<u64> {
    let depth = crate::ggm::depth_for(fanout, ell)
        .ok_or_else(|| Error::Config(format!("{ell} leaves is not a power of {fanout}")))?;
    Ok(t as u64 * TreeShape::new(fanout, depth).expansions() * kind.calls_per_expansion())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpcotEstimate {
    pub prg_calls: u64,
    pub cores: u64,
    pub utilization: f64,
    pub cycles: u64,
}

impl SpcotEstimate {
    /// Issue cycles per core with every pipeline slot busy.
    pub fn full_utilization_cycles(&self) -> u64 {
        self.prg_calls.div_ceil(self.cores)
    }
}

/// SPCOT cycles on `cores` PRG cores. Utilization is that of one core
/// expanding its `ceil(t / cores)` share of the trees.
pub fn estimate_spcot_cycles(
    t: usize,
    ell: usize,
    fanout: usize,
    kind: PrgKind,
    cores: u64,
    cfg: &NmpConfig,
) -> Result<SpcotEstimate> {
    if cores == 0 {
        return Err(Error::Config("at least one PRG core is required".into()));
    }
    let prg_calls = spcot_prg_calls(t, ell, fanout, kind)?;
    let depth = crate::ggm::depth_for(fanout, ell).unwrap_or(0);
    let share = t.div_ceil(cores as usize);
    let shapes = vec![TreeShape::new(fanout, depth); share];
    let utilization = schedule_expansion(&shapes, cfg.pipeline_depth as usize).utilization();
    let per_core = prg_calls.div_ceil(cores);
    let cycles = (per_core as f64 / utilization).ceil() as u64 + cfg.pipeline_depth;
    Ok(SpcotEstimate {
        prg_calls,
        cores,
        utilization,
        cycles,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmpReport {
    pub per_rank_cycles: Vec<u64>,
    pub lpn_cycles: u64,
    pub spcot_cycles: u64,
    pub reduce_overhead: u64,
    pub total_cycles: u64,
    pub total_ms: f64,
    /// One-time cost of sending the `k` pre-generated blocks to every
    /// rank; not part of `total_cycles`.
    pub broadcast_bytes: u64,
    pub broadcast_cycles: u64,
}

/// Overlaps SPCOT with the slowest rank and adds the final merge.
pub fn total_latency(spcot_cycles: u64, per_rank_cycles: Vec<u64>, params: &LpnParams, cfg: &NmpConfig) -> NmpReport {
    let lpn_cycles = per_rank_cycles.iter().copied().max().unwrap_or(0);
    let reduce_overhead = params.n as u64;
    let total_cycles = spcot_cycles.max(lpn_cycles) + reduce_overhead;
    let broadcast_bytes = params.k as u64 * 16;
    NmpReport {
        per_rank_cycles,
        lpn_cycles,
        spcot_cycles,
        reduce_overhead,
        total_cycles,
        total_ms: cfg.cycles_to_ms(total_cycles),
        broadcast_bytes,
        broadcast_cycles: broadcast_bytes.div_ceil(cfg.bus_bytes_per_cycle),
    }
}

/// Full model for one workload under several rank counts, from a single
/// pass over the matrix rows.
pub struct NmpRun<'a, S> {
    pub src: &'a S,
    pub params: LpnParams,
    pub fanout: usize,
    pub kind: PrgKind,
    pub schedule: Schedule,
    pub window: usize,
    pub cache: CacheConfig,
}

impl<S: RowSource> NmpRun<'_, S> {
    pub fn run(&self, configs: &[NmpConfig]) -> Result<Vec<NmpReport>> {
        for c in configs {
            c.validate()?;
        }
        let parts = configs
            .iter()
            .map(|c| partition_rows(self.src.rows(), c.ranks))
            .collect::<Result<Vec<_>>>()?;
        let stats = partitioned_stats(self.src, self.schedule, self.window, &self.cache, &parts)?;
        configs
            .iter()
            .zip(stats)
            .map(|(cfg, st)| {
                let spcot =
                    estimate_spcot_cycles(self.params.t, self.params.ell, self.fanout, self.kind, cfg.spcot_cores(), cfg)?;
                Ok(total_latency(spcot.cycles, estimate_lpn_cycles(&st, cfg), &self.params, cfg))
            })
            .collect()
    }
}

pub fn csv_row(params: &str, ranks: usize, cache_bytes: u64, r: &NmpReport) -> String {
    format!(
        "{params},{ranks},{cache_bytes},{},{},{},{:.6}",
        r.spcot_cycles, r.lpn_cycles, r.total_cycles, r.total_ms
    )
}
