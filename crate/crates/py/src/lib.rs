//! Python bindings: presets, loopback extension, dumps, verification,
//! chosen OT on the output, and the cache and near-memory models.

use std::path::PathBuf;

use ote_core::base::{dealer_generate, CotBatch, Delta, OtReceipt};
use ote_core::engine::{
    read_batch, verify_batches, write_batch, EngineConfig, IterationStats, LpnMatrix, OtReceiver, OtSender,
    ReceiverSession, SenderSession,
};
use ote_core::locality::{schedule_stats, CacheConfig, Schedule};
use ote_core::lpn::MatrixSpec;
use ote_core::nmp::{spcot_prg_calls, NmpConfig, NmpRun};
use ote_core::params::{preset, ParamPreset, PRESETS};
use ote_core::prg::{derive_seed, PrgKind};
use ote_core::transport::loopback_mux;
use ote_core::{Block, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ote, OteError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::ZeroDelta => PyValueError::new_err(e.to_string()),
        _ => OteError::new_err(e.to_string()),
    }
}

fn find_preset(name: &str) -> PyResult<ParamPreset> {
    preset(name).ok_or_else(|| PyValueError::new_err(format!("unknown parameter set `{name}`")))
}

fn prg_kind(prg: &str, m_ary: usize) -> PyResult<PrgKind> {
    match (prg, m_ary) {
        ("stream", 2 | 4) => Ok(PrgKind::STREAM),
        ("fixedkey", 2) => Ok(PrgKind::DoubleFixedKey),
        ("fixedkey", 4) => Ok(PrgKind::QuadFixedKey),
        _ => Err(PyValueError::new_err(format!("unsupported prg `{prg}` with m_ary {m_ary}"))),
    }
}

fn schedule(name: &str) -> PyResult<Schedule> {
    Schedule::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown schedule `{name}`")))
}

/// Named parameter set.
#[pyclass(frozen, get_all, skip_from_py_object, module = "ote")]
#[derive(Clone)]
pub struct Preset {
    name: String,
    n: usize,
    ell: usize,
    k: usize,
    t: usize,
    d: usize,
}

#[pymethods]
impl Preset {
    fn __repr__(&self) -> String {
        format!("Preset({}, n={}, ell={}, k={}, t={}, d={})", self.name, self.n, self.ell, self.k, self.t, self.d)
    }
}

impl From<&ParamPreset> for Preset {
    fn from(p: &ParamPreset) -> Self {
        Preset { name: p.name.into(), n: p.n, ell: p.ell, k: p.k, t: p.t, d: p.d }
    }
}

#[pyfunction]
fn presets() -> Vec<Preset> {
    PRESETS.iter().map(Preset::from).collect()
}

/// One role's correlations. Blocks are 128-bit Python ints.
#[pyclass(skip_from_py_object, module = "ote")]
#[derive(Clone)]
pub struct Batch {
    inner: CotBatch,
}

#[pymethods]
impl Batch {
    #[getter]
    fn role(&self) -> &'static str {
        match self.inner {
            CotBatch::Sender { .. } => "sender",
            CotBatch::Receiver { .. } => "receiver",
        }
    }

    /// The sender's global offset, or None for a receiver batch.
    #[getter]
    fn delta(&self) -> Option<u128> {
        match &self.inner {
            CotBatch::Sender { delta, .. } => Some(delta.block().0),
            CotBatch::Receiver { .. } => None,
        }
    }

    #[getter]
    fn blocks(&self) -> Vec<u128> {
        match &self.inner {
            CotBatch::Sender { blocks, .. } | CotBatch::Receiver { blocks, .. } => blocks.iter().map(|b| b.0).collect(),
        }
    }

    /// Choice bits, or None for a sender batch.
    #[getter]
    fn bits(&self) -> Option<Vec<bool>> {
        match &self.inner {
            CotBatch::Receiver { bits, .. } => Some(bits.clone()),
            CotBatch::Sender { .. } => None,
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_batch(&path, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
fn load_batch(path: PathBuf) -> PyResult<Batch> {
    Ok(Batch { inner: read_batch(&path).map_err(err)? })
}

#[pyfunction]
fn make_sender_batch(delta: u128, blocks: Vec<u128>) -> PyResult<Batch> {
    let delta = Delta::new(Block(delta)).map_err(err)?;
    Ok(Batch { inner: CotBatch::Sender { delta, blocks: blocks.into_iter().map(Block).collect() } })
}

#[pyfunction]
fn make_receiver_batch(bits: Vec<bool>, blocks: Vec<u128>) -> PyResult<Batch> {
    if bits.len() != blocks.len() {
        return Err(PyValueError::new_err("bits and blocks differ in length"));
    }
    Ok(Batch { inner: CotBatch::Receiver { bits, blocks: blocks.into_iter().map(Block).collect() } })
}

/// Returns `(total, valid, first_invalid)`.
#[pyfunction]
fn verify(sender: &Batch, receiver: &Batch) -> PyResult<(usize, usize, Option<usize>)> {
    let r = verify_batches(&sender.inner, &receiver.inner).map_err(err)?;
    Ok((r.total, r.valid, r.first_invalid))
}

fn stats_dict<'py>(py: Python<'py>, s: &IterationStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("emitted", s.emitted)?;
    d.set_item("reserved", s.reserved)?;
    d.set_item("cots_consumed", s.cots_consumed)?;
    d.set_item("prg_calls", s.prg.calls)?;
    d.set_item("prg_expansions", s.prg.expansions)?;
    d.set_item("ot_prg_calls", s.ot_prg.calls)?;
    d.set_item("bytes_sent", s.bytes_sent)?;
    d.set_item("bytes_received", s.bytes_received)?;
    d.set_item("wall_ms", s.wall.as_secs_f64() * 1e3)?;
    Ok(d)
}

type Run = Vec<(CotBatch, IterationStats, CotBatch, IterationStats)>;
type PyRun<'py> = Vec<(Batch, Bound<'py, PyDict>, Batch, Bound<'py, PyDict>)>;
type StatsRow = (u64, u64, u64, u64, f64);

fn loopback(cfg: EngineConfig, iterations: usize, delta_seed: Block, dealer_seed: Block, seed: Block) -> ote_core::Result<Run> {
    let matrix = LpnMatrix::generate(&cfg)?;
    let delta = Delta::new(derive_seed(delta_seed, 0))?;
    let (sp, rp) = dealer_generate(cfg.consumption(), delta, dealer_seed)?;
    let mut snd = SenderSession::new(cfg, sp, seed);
    let mut rcv = ReceiverSession::new(cfg, rp, derive_seed(seed, 1));
    let (x, y) = loopback_mux();
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (mut sc, mut rc) = (x.open_session(1)?, y.open_session(1)?);
        let (s, r) = std::thread::scope(|scope| {
            let h = scope.spawn(|| snd.extend(&mut sc, &matrix));
            let r = rcv.extend(&mut rc, &matrix);
            (h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)), r)
        });
        let ((sb, ss), (rb, rs)) = (s?, r?);
        out.push((sb, ss, rb, rs));
    }
    Ok(out)
}

/// Runs `iterations` chained extensions with both roles in process.
/// Returns a list of `(sender_batch, sender_stats, receiver_batch,
/// receiver_stats)` tuples, one per iteration.
#[pyfunction]
#[pyo3(signature = (params="toy", m_ary=4, prg="stream", iterations=1, matrix_seed=1, delta_seed=2, dealer_seed=3, seed=4))]
#[allow(clippy::too_many_arguments)]
fn run_loopback<'py>(
    py: Python<'py>,
    params: &str,
    m_ary: usize,
    prg: &str,
    iterations: usize,
    matrix_seed: u128,
    delta_seed: u128,
    dealer_seed: u128,
    seed: u128,
) -> PyResult<PyRun<'py>> {
    let p = find_preset(params)?;
    let kind = prg_kind(prg, m_ary)?;
    let cfg = EngineConfig::new(p.lpn_params(m_ary).map_err(err)?, m_ary, kind, Block(matrix_seed)).map_err(err)?;
    let run = py
        .detach(|| loopback(cfg, iterations, Block(delta_seed), Block(dealer_seed), Block(seed)))
        .map_err(err)?;
    run.into_iter()
        .map(|(sb, ss, rb, rs)| Ok((Batch { inner: sb }, stats_dict(py, &ss)?, Batch { inner: rb }, stats_dict(py, &rs)?)))
        .collect()
}

/// Chosen-message OT, sender side, spending a sender batch.
#[pyclass(name = "OtSender", module = "ote")]
pub struct PyOtSender {
    inner: OtSender,
}

#[pymethods]
impl PyOtSender {
    #[new]
    fn new(batch: &Batch) -> PyResult<Self> {
        Ok(PyOtSender { inner: OtSender::new(batch.inner.clone()).map_err(err)? })
    }

    /// Encrypts `(m0, m1)` on correlation `index`.
    fn send(&mut self, index: usize, correction: bool, m0: u128, m1: u128) -> PyResult<(u128, u128)> {
        let (c0, c1) = self.inner.send_at(index, correction, Block(m0), Block(m1)).map_err(err)?;
        Ok((c0.0, c1.0))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Receiver key for one chosen OT.
#[pyclass(name = "OtReceipt", module = "ote")]
pub struct PyOtReceipt {
    inner: OtReceipt,
}

#[pymethods]
impl PyOtReceipt {
    /// Bit to send to the sender.
    #[getter]
    fn correction(&self) -> bool {
        self.inner.correction
    }

    fn decode(&self, c0: u128, c1: u128) -> u128 {
        self.inner.decode(Block(c0), Block(c1)).0
    }
}

/// Chosen-message OT, receiver side, spending a receiver batch.
#[pyclass(name = "OtReceiver", module = "ote")]
pub struct PyOtReceiver {
    inner: OtReceiver,
}

#[pymethods]
impl PyOtReceiver {
    #[new]
    fn new(batch: &Batch) -> PyResult<Self> {
        Ok(PyOtReceiver { inner: OtReceiver::new(batch.inner.clone()).map_err(err)? })
    }

    fn choose(&mut self, index: usize, choice: bool) -> PyResult<PyOtReceipt> {
        Ok(PyOtReceipt { inner: self.inner.choose_at(index, choice).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Hit statistics per cache size: list of `(cache_bytes, accesses, hits,
/// misses, hit_rate)`.
#[pyfunction]
#[pyo3(signature = (n, k, d, caches, schedule="swap+lookahead", window=64, matrix_seed=1, line=64, element=16))]
#[allow(clippy::too_many_arguments)]
fn cache_sim(
    py: Python<'_>,
    n: usize,
    k: usize,
    d: usize,
    caches: Vec<u64>,
    schedule: &str,
    window: usize,
    matrix_seed: u128,
    line: u32,
    element: u32,
) -> PyResult<Vec<StatsRow>> {
    let sched = self::schedule(schedule)?;
    if d == 0 || d > k {
        return Err(PyValueError::new_err(format!("row weight {d} invalid for k = {k}")));
    }
    let configs = caches
        .iter()
        .map(|&c| CacheConfig::new(c, line, None, element))
        .collect::<ote_core::Result<Vec<_>>>()
        .map_err(err)?;
    let spec = MatrixSpec { seed: Block(matrix_seed), n, k, d };
    let stats = py.detach(|| schedule_stats(&spec, sched, window, &configs)).map_err(err)?;
    Ok(caches
        .iter()
        .zip(stats)
        .map(|(&c, s)| (c, s.accesses, s.hits, s.misses, s.hit_rate()))
        .collect())
}

/// Near-memory latency for each rank count: list of dicts.
#[pyfunction]
#[pyo3(signature = (params, ranks, cache=1 << 20, schedule="swap+lookahead", m_ary=4, prg="stream", matrix_seed=1))]
#[allow(clippy::too_many_arguments)]
fn nmp_sim<'py>(
    py: Python<'py>,
    params: &str,
    ranks: Vec<usize>,
    cache: u64,
    schedule: &str,
    m_ary: usize,
    prg: &str,
    matrix_seed: u128,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let p = find_preset(params)?;
    let lpn = p.lpn_params(m_ary).map_err(err)?;
    let spec = MatrixSpec { seed: Block(matrix_seed), n: lpn.n, k: lpn.k, d: lpn.d };
    let run = NmpRun {
        src: &spec,
        params: lpn,
        fanout: m_ary,
        kind: prg_kind(prg, m_ary)?,
        schedule: self::schedule(schedule)?,
        window: ote_core::locality::DEFAULT_WINDOW,
        cache: CacheConfig::fully_associative(cache).map_err(err)?,
    };
    let configs: Vec<NmpConfig> = ranks.iter().map(|&r| NmpConfig::with_ranks(r)).collect();
    let reports = py.detach(|| run.run(&configs)).map_err(err)?;
    configs
        .iter()
        .zip(reports)
        .map(|(c, r)| {
            let d = PyDict::new(py);
            d.set_item("ranks", c.ranks)?;
            d.set_item("spcot_cycles", r.spcot_cycles)?;
            d.set_item("lpn_cycles", r.lpn_cycles)?;
            d.set_item("per_rank_cycles", r.per_rank_cycles)?;
            d.set_item("reduce_overhead", r.reduce_overhead)?;
            d.set_item("total_cycles", r.total_cycles)?;
            d.set_item("total_ms", r.total_ms)?;
            d.set_item("broadcast_bytes", r.broadcast_bytes)?;
            Ok(d)
        })
        .collect()
}

/// PRG calls to expand `t` trees of `ell` leaves.
#[pyfunction]
#[pyo3(signature = (t, ell, m_ary=4, prg="stream"))]
fn prg_calls(t: usize, ell: usize, m_ary: usize, prg: &str) -> PyResult<u64> {
    spcot_prg_calls(t, ell, m_ary, prg_kind(prg, m_ary)?).map_err(err)
}

#[pymodule]
pub fn ote(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OteError", m.py().get_type::<OteError>())?;
    m.add_class::<Preset>()?;
    m.add_class::<Batch>()?;
    m.add_class::<PyOtSender>()?;
    m.add_class::<PyOtReceiver>()?;
    m.add_class::<PyOtReceipt>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(load_batch, m)?)?;
    m.add_function(wrap_pyfunction!(make_sender_batch, m)?)?;
    m.add_function(wrap_pyfunction!(make_receiver_batch, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_loopback, m)?)?;
    m.add_function(wrap_pyfunction!(cache_sim, m)?)?;
    m.add_function(wrap_pyfunction!(nmp_sim, m)?)?;
    m.add_function(wrap_pyfunction!(prg_calls, m)?)?;
    Ok(())
}
