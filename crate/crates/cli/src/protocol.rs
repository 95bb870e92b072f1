use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use ote_core::base::{
    dealer_generate, read_receiver_pool, read_sender_pool, write_receiver_pool, write_sender_pool, CotBatch, Delta,
};
use ote_core::engine::{
    read_batch, verify_batches, write_batch, EngineConfig, IterationStats, LpnMatrix, ReceiverSession, SenderSession,
};
use ote_core::locality::read_sorted;
use ote_core::prg::derive_seed;
use ote_core::transport::{loopback_mux, tcp_accept, tcp_connect_retry, tcp_listen, Mux};
use ote_core::Block;
use serde_json::{json, Value};

use crate::args::{DealerArgs, GenArgs, Role, VerifyArgs};
use crate::{output, CmdResult, Failure};

const SESSION: u16 = 1;

/// The sender's global offset, shared with the dealer through `seed`.
pub fn dealer_delta(seed: Block) -> Result<Delta, Failure> {
    Ok(Delta::new(derive_seed(seed, 0))?)
}

fn engine_config(a: &GenArgs) -> Result<EngineConfig, Failure> {
    let params = a.params.lpn_params(a.m_ary)?;
    Ok(EngineConfig::new(params, a.m_ary, a.prg.kind(a.m_ary), a.matrix_seed)?)
}

fn load_matrix(cfg: &EngineConfig, sorted: Option<&Path>) -> Result<LpnMatrix, Failure> {
    let plain = LpnMatrix::generate(cfg)?;
    let Some(path) = sorted else {
        return Ok(plain);
    };
    let s = read_sorted(path)?;
    let LpnMatrix::Plain(a) = &plain else { unreachable!() };
    s.verify_against(a)
        .map_err(|e| Failure::usage(format!("{}: not a schedule of this matrix: {e}", path.display())))?;
    Ok(LpnMatrix::Sorted(s))
}

/// Appends iteration outputs into one dump.
#[derive(Default)]
struct Collected {
    batch: Option<CotBatch>,
    stats: IterationStats,
}

impl Collected {
    fn push(&mut self, batch: CotBatch, st: IterationStats) {
        self.stats.emitted += st.emitted;
        self.stats.reserved += st.reserved;
        self.stats.cots_consumed += st.cots_consumed;
        self.stats.prg.add(st.prg);
        self.stats.ot_prg.add(st.ot_prg);
        self.stats.bytes_sent += st.bytes_sent;
        self.stats.bytes_received += st.bytes_received;
        self.stats.wall += st.wall;
        self.batch = Some(match (self.batch.take(), batch) {
            (None, b) => b,
            (Some(CotBatch::Sender { delta, mut blocks }), CotBatch::Sender { blocks: more, .. }) => {
                blocks.extend(more);
                CotBatch::Sender { delta, blocks }
            }
            (Some(CotBatch::Receiver { mut bits, mut blocks }), CotBatch::Receiver { bits: b2, blocks: more }) => {
                bits.extend(b2);
                blocks.extend(more);
                CotBatch::Receiver { bits, blocks }
            }
            _ => unreachable!("one role per collector"),
        });
    }

    fn json(&self, role: &str) -> Value {
        let s = &self.stats;
        json!({
            "role": role,
            "emitted": s.emitted,
            "reserved": s.reserved,
            "prg_calls": s.prg.calls,
            "prg_expansions": s.prg.expansions,
            "ot_prg_calls": s.ot_prg.calls,
            "cots_consumed": s.cots_consumed,
            "bytes_sent": s.bytes_sent,
            "bytes_received": s.bytes_received,
            "wall_ms": s.wall.as_secs_f64() * 1e3,
        })
    }

    fn write(&self, path: &Path) -> CmdResult {
        if let Some(b) = &self.batch {
            write_batch(path, b)?;
            info!("wrote {} correlations to {}", b.len(), path.display());
        }
        Ok(())
    }
}

fn header(a: &GenArgs, cfg: &EngineConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema".into(), json!(1));
    m.insert("params".into(), json!(a.params.name));
    m.insert("m_ary".into(), json!(a.m_ary));
    m.insert("prg".into(), json!(cfg.kind.name()));
    m.insert("ell".into(), json!(cfg.params.ell));
    m.insert("iterations".into(), json!(a.iterations));
    m
}

fn emit_stats(path: Option<&PathBuf>, v: &Value) -> CmdResult {
    let mut out = output(path.map(PathBuf::as_path))?;
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| Failure::verify(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn gen(a: GenArgs) -> CmdResult {
    if a.iterations == 0 {
        return Err(Failure::usage("--iterations must be at least 1"));
    }
    let cfg = engine_config(&a)?;
    let matrix = load_matrix(&cfg, a.sorted.as_deref())?;
    info!(
        "{} m={} prg={} ell={} consumes {} emits {}",
        a.params.name,
        a.m_ary,
        cfg.kind.name(),
        cfg.params.ell,
        cfg.consumption(),
        cfg.emitted_count()
    );
    if a.loopback {
        gen_loopback(&a, cfg, &matrix)
    } else {
        gen_network(&a, cfg, &matrix)
    }
}

fn gen_loopback(a: &GenArgs, cfg: EngineConfig, matrix: &LpnMatrix) -> CmdResult {
    let delta = dealer_delta(a.delta_seed)?;
    let (sp, rp) = dealer_generate(cfg.consumption(), delta, a.dealer_seed)?;
    let mut snd = SenderSession::new(cfg, sp, a.seed);
    let mut rcv = ReceiverSession::new(cfg, rp, derive_seed(a.seed, 1));
    let (x, y) = loopback_mux();
    let (mut sent, mut received) = (Collected::default(), Collected::default());
    for _ in 0..a.iterations {
        let (mut sc, mut rc) = (x.open_session(SESSION)?, y.open_session(SESSION)?);
        let (s, r) = std::thread::scope(|scope| {
            let h = scope.spawn(|| snd.extend(&mut sc, matrix));
            let r = rcv.extend(&mut rc, matrix);
            (h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)), r)
        });
        let (sb, ss) = s?;
        let (rb, rs) = r?;
        sent.push(sb, ss);
        received.push(rb, rs);
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        sent.write(&dir.join("sender.irnc"))?;
        received.write(&dir.join("receiver.irnc"))?;
    }
    let mut v = header(a, &cfg);
    v.insert("role".into(), json!("loopback"));
    v.insert("sender".into(), sent.json("sender"));
    v.insert("receiver".into(), received.json("receiver"));
    emit_stats(a.stats.as_ref(), &Value::Object(v))
}

fn connect(a: &GenArgs) -> Result<Mux, Failure> {
    let endpoint = match (&a.listen, &a.connect) {
        (Some(addr), None) => {
            let listener = tcp_listen(addr)?;
            info!("listening on {}", listener.local_addr()?);
            tcp_accept(&listener)?
        }
        (None, Some(addr)) => tcp_connect_retry(addr, Duration::from_secs(a.connect_timeout))?,
        _ => return Err(Failure::usage("exactly one of --listen or --connect is required")),
    };
    Ok(Mux::new(endpoint))
}

fn gen_network(a: &GenArgs, cfg: EngineConfig, matrix: &LpnMatrix) -> CmdResult {
    let role = a.role.ok_or_else(|| Failure::usage("--role is required"))?;
    let mux = connect(a)?;
    let start = Instant::now();
    let mut got = Collected::default();
    match role {
        Role::Sender => {
            let pool = match &a.pool {
                Some(p) => read_sender_pool(p)?,
                None => dealer_generate(cfg.consumption(), dealer_delta(a.delta_seed)?, a.dealer_seed)?.0,
            };
            let mut s = SenderSession::new(cfg, pool, a.seed);
            for _ in 0..a.iterations {
                let (b, st) = s.extend(&mut mux.open_session(SESSION)?, matrix)?;
                got.push(b, st);
            }
        }
        Role::Receiver => {
            let pool = match &a.pool {
                Some(p) => read_receiver_pool(p)?,
                None => dealer_generate(cfg.consumption(), dealer_delta(a.delta_seed)?, a.dealer_seed)?.1,
            };
            let mut r = ReceiverSession::new(cfg, pool, a.seed);
            for _ in 0..a.iterations {
                let (b, st) = r.extend(&mut mux.open_session(SESSION)?, matrix)?;
                got.push(b, st);
            }
        }
    }
    info!("{} iterations in {:?}", a.iterations, start.elapsed());
    if let Some(path) = &a.out {
        got.write(path)?;
    }
    let mut v = header(a, &cfg);
    let role_name = match role {
        Role::Sender => "sender",
        Role::Receiver => "receiver",
    };
    if let Value::Object(stats) = got.json(role_name) {
        v.extend(stats);
    }
    emit_stats(a.stats.as_ref(), &Value::Object(v))
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let s = read_batch(&a.sender)?;
    let r = read_batch(&a.receiver)?;
    let rep = verify_batches(&s, &r)?;
    let first = rep.first_invalid.map_or("none".to_string(), |i| i.to_string());
    println!("total {}\nvalid {}\nfirst_invalid {first}", rep.total, rep.valid);
    if rep.all_valid() {
        Ok(())
    } else {
        Err(Failure::verify(format!("{} of {} correlations invalid", rep.total - rep.valid, rep.total)))
    }
}

pub fn dealer(a: DealerArgs) -> CmdResult {
    let count = match a.count {
        Some(c) => c,
        None => {
            let params = a.params.lpn_params(a.m_ary)?;
            EngineConfig::new(params, a.m_ary, ote_core::prg::PrgKind::STREAM, Block(0))?.consumption()
        }
    };
    let (sp, rp) = dealer_generate(count, dealer_delta(a.delta_seed)?, a.dealer_seed)?;
    write_sender_pool(&a.sender_out, &sp)?;
    write_receiver_pool(&a.receiver_out, &rp)?;
    info!("dealt {count} correlations");
    Ok(())
}
