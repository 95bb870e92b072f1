use std::io::Write;
use std::time::Instant;

use log::info;
use ote_core::base::dealer_generate;
use ote_core::engine::{EngineConfig, LpnMatrix, ReceiverSession, SenderSession};
use ote_core::locality::{schedule_stats, simulate_cache, sort_matrix, write_sorted, Schedule};
use ote_core::lpn::{gen_matrix_dims, MatrixSpec};
use ote_core::nmp::{csv_row, NmpConfig, NmpRun, CSV_HEADER};
use ote_core::prg::{derive_seed, PrgKind};
use ote_core::transport::loopback_mux;
use ote_core::Block;

use crate::args::{BenchArgs, CacheSimArgs, NmpSimArgs, SortArgs, WorkloadArgs};
use crate::protocol::dealer_delta;
use crate::{output, CmdResult, Failure};

/// Leading comment line of every CSV this tool writes.
pub const SCHEMA_LINE: &str = "# schema: 1";

const BENCH_CONFIGS: [(usize, PrgKind, &str); 4] = [
    (2, PrgKind::DoubleFixedKey, "fixedkey"),
    (4, PrgKind::QuadFixedKey, "fixedkey"),
    (2, PrgKind::STREAM, "stream"),
    (4, PrgKind::STREAM, "stream"),
];

/// One extension iteration per tree shape and PRG, counting sender-side
/// PRG calls.
pub fn bench(a: BenchArgs) -> CmdResult {
    let mut rows = Vec::new();
    for (m, kind, prg) in BENCH_CONFIGS {
        let cfg = EngineConfig::new(a.params.lpn_params(m)?, m, kind, a.matrix_seed)?;
        let matrix = LpnMatrix::generate(&cfg)?;
        let (sp, rp) = dealer_generate(cfg.consumption(), dealer_delta(Block(2))?, Block(3))?;
        let mut snd = SenderSession::new(cfg, sp, Block(4));
        let mut rcv = ReceiverSession::new(cfg, rp, derive_seed(Block(4), 1));
        let (x, y) = loopback_mux();
        let (mut sc, mut rc) = (x.open_session(1)?, y.open_session(1)?);
        let start = Instant::now();
        let (s, r) = std::thread::scope(|scope| {
            let h = scope.spawn(|| snd.extend(&mut sc, &matrix));
            let r = rcv.extend(&mut rc, &matrix);
            (h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)), r)
        });
        let wall = start.elapsed();
        let (_, stats) = s?;
        r?;
        info!("{} m={m} {prg}: {} calls in {wall:?}", a.params.name, stats.prg.calls);
        rows.push((m, prg, stats.prg.calls, wall));
    }
    let base = rows[0].2 as f64;
    let mut out = output(a.csv.as_deref())?;
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["params", "m_ary", "prg", "prg_calls", "ratio", "wall_ms"])?;
    for (m, prg, calls, wall) in rows {
        w.write_record([
            a.params.name.to_string(),
            m.to_string(),
            prg.to_string(),
            calls.to_string(),
            format!("{:.4}", base / calls as f64),
            format!("{:.3}", wall.as_secs_f64() * 1e3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn workload(w: &WorkloadArgs) -> Result<(String, MatrixSpec), Failure> {
    let (name, n, k, d) = match (&w.params, w.n, w.k, w.d) {
        (Some(p), ..) => (p.name.to_string(), p.n, p.k, p.d),
        (None, Some(n), Some(k), Some(d)) => ("custom".to_string(), n, k, d),
        _ => return Err(Failure::usage("give --params or all of --n, --k, --d")),
    };
    if d == 0 || d > k || k > u32::MAX as usize {
        return Err(Failure::usage(format!("row weight {d} invalid for k = {k}")));
    }
    let n = w.rows.map_or(n, |r| r.min(n));
    Ok((name, MatrixSpec { seed: w.matrix_seed, n, k, d }))
}

pub fn cache_sim(a: CacheSimArgs) -> CmdResult {
    let (name, spec) = workload(&a.workload)?;
    let configs = a
        .cache
        .iter()
        .map(|&c| a.cache_args.config(c))
        .collect::<ote_core::Result<Vec<_>>>()?;
    let mut out = output(a.csv.as_deref())?;
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["params", "cache_bytes", "schedule", "accesses", "hits", "hit_rate", "misses", "rows", "window"])?;
    for choice in a.schedule {
        let schedule = Schedule::from(choice);
        let start = Instant::now();
        let stats = schedule_stats(&spec, schedule, a.cache_args.window, &configs)?;
        info!("{} {} rows, {}: {:?}", name, spec.n, schedule.name(), start.elapsed());
        for (cfg, st) in configs.iter().zip(stats) {
            w.write_record([
                name.clone(),
                cfg.capacity_bytes.to_string(),
                schedule.name().to_string(),
                st.accesses.to_string(),
                st.hits.to_string(),
                format!("{:.6}", st.hit_rate()),
                st.misses.to_string(),
                spec.n.to_string(),
                a.cache_args.window.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn nmp_sim(a: NmpSimArgs) -> CmdResult {
    let params = a.params.lpn_params(a.m_ary)?;
    let spec = MatrixSpec { seed: a.matrix_seed, n: params.n, k: params.k, d: params.d };
    let configs: Vec<NmpConfig> = a
        .ranks
        .iter()
        .map(|&ranks| NmpConfig {
            ranks,
            memory_clock_mhz: a.memory_clock_mhz,
            t_hit: a.t_hit,
            t_rcd: a.t_rcd,
            t_cl: a.t_cl,
            t_bl: a.t_bl,
            chacha_cores_per_dimm: a.chacha_cores_per_dimm,
            pipeline_depth: a.pipeline_depth,
            ranks_per_dimm: a.ranks_per_dimm,
            ..NmpConfig::default()
        })
        .collect();
    let run = NmpRun {
        src: &spec,
        params,
        fanout: a.m_ary,
        kind: a.prg.kind(a.m_ary),
        schedule: a.schedule.into(),
        window: a.cache_args.window,
        cache: a.cache_args.config(a.cache)?,
    };
    let start = Instant::now();
    let reports = run.run(&configs)?;
    info!("{} ranks {:?}: {:?}", a.params.name, a.ranks, start.elapsed());
    let mut out = output(a.csv.as_deref())?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "{CSV_HEADER}")?;
    for (cfg, r) in configs.iter().zip(&reports) {
        writeln!(out, "{}", csv_row(a.params.name, cfg.ranks, a.cache, r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn sort(a: SortArgs) -> CmdResult {
    let (name, spec) = workload(&a.workload)?;
    let cfg = a.cache_args.config(a.cache)?;
    let matrix = gen_matrix_dims(spec.seed, spec.n, spec.k, spec.d)?;
    let start = Instant::now();
    let sorted = sort_matrix(&matrix, a.cache_args.window, &cfg)?;
    let st = simulate_cache(&sorted, &cfg);
    info!("sorted {name} in {:?}", start.elapsed());
    write_sorted(&a.out, &sorted)?;
    println!(
        "{name}: {} rows, {} accesses, hit rate {:.4} at {} bytes",
        spec.n,
        st.accesses,
        st.hit_rate(),
        cfg.capacity_bytes
    );
    Ok(())
}
