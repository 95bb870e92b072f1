//! One extension iteration end to end, chaining across iterations, chosen
//! OT on extension output, and duplex operation.
//!
//! The sender expands `t` trees and holds `w`; the receiver learns every
//! leaf except one per tree, so `w = v ^ u*delta` with `u` one-hot per noise
//! block. Local encoding then gives `z = rA ^ w`, `x = eA ^ u`,
//! `y = sA ^ v`, and `z = y ^ x*delta` holds position by position. The
//! first `k + t*log2(ell)` outputs become the next iteration's base pools.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::base::{pool_reserve, CotBatch, CotPools, Delta, OtReceipt, ReceiverCotPool, SenderCotPool};
use crate::block::{pack_bits, read_blocks, unpack_bits, write_blocks, Block};
use crate::error::{Error, Result};
use crate::locality::SortedCsr;
use crate::lpn::{self, gen_matrix, LpnParams, SparseMatrix};
use crate::prg::{crhf, derive_seed, PrgCounter, PrgKind, PrgStream};
use crate::spcot::{Spcot, SpcotParams};
use crate::transport::{Channel, Mux, MsgType};

const DUMP_MAGIC: &[u8; 4] = b"IRNC";
const DUMP_VERSION: u16 = 1;
const HANDSHAKE_LABEL: &[u8] = b"ote handshake v1";

pub const SENDER_SESSION: u16 = 1;
pub const RECEIVER_SESSION: u16 = 2;

/// Everything both parties must agree on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// `ell` here is the number of leaves actually expanded per tree.
    pub params: LpnParams,
    pub fanout: usize,
    pub kind: PrgKind,
    pub matrix_seed: Block,
}

impl EngineConfig {
    pub fn new(params: LpnParams, fanout: usize, kind: PrgKind, matrix_seed: Block) -> Result<Self> {
        params.validate()?;
        let cfg = EngineConfig {
            params,
            fanout,
            kind,
            matrix_seed,
        };
        let sp = cfg.spcot_params()?;
        NoiseLayout::regular(params.n, params.t, sp.ell())?;
        if cfg.reserve_count() > params.n {
            return Err(Error::Config(format!(
                "n = {} cannot cover the {} correlations reserved for the next iteration",
                params.n,
                cfg.reserve_count()
            )));
        }
        Ok(cfg)
    }

    pub fn spcot_params(&self) -> Result<SpcotParams> {
        SpcotParams::new(self.params.ell, self.fanout, self.kind)
    }

    fn log2_ell(&self) -> usize {
        self.params.ell.trailing_zeros() as usize
    }

    /// Base correlations one iteration consumes: `k + t*log2(ell)`.
    pub fn consumption(&self) -> usize {
        self.params.k + self.params.t * self.log2_ell()
    }

    /// Outputs kept back to seed the next iteration.
    pub fn reserve_count(&self) -> usize {
        self.consumption()
    }

    pub fn emitted_count(&self) -> usize {
        self.params.n - self.reserve_count()
    }

    /// Digest of the agreed parameters for iteration `iteration`.
    pub fn digest(&self, iteration: u64) -> [u8; 32] {
        let p = &self.params;
        let mut h = Sha256::new();
        h.update(HANDSHAKE_LABEL);
        for v in [p.n, p.k, p.t, p.ell, p.d, self.fanout] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(self.kind.name().as_bytes());
        if let PrgKind::MultiOutputStream { rounds } = self.kind {
            h.update([rounds]);
        }
        h.update(self.matrix_seed.to_le_bytes());
        h.update(iteration.to_le_bytes());
        h.finalize().into()
    }
}

/// Exchanges parameter digests; fails on any disagreement.
pub fn handshake(ch: &mut dyn Channel, cfg: &EngineConfig, iteration: u64) -> Result<()> {
    let mine = cfg.digest(iteration);
    ch.send(MsgType::Control, &mine)?;
    let theirs = ch.recv_expect(MsgType::Control)?;
    if theirs != mine {
        return Err(Error::HandshakeMismatch);
    }
    Ok(())
}

/// The LPN matrix in either plain row order or a locality-sorted schedule.
#[derive(Clone, Debug)]
pub enum LpnMatrix {
    Plain(SparseMatrix),
    Sorted(SortedCsr),
}

impl LpnMatrix {
    pub fn generate(cfg: &EngineConfig) -> Result<Self> {
        Ok(LpnMatrix::Plain(gen_matrix(cfg.matrix_seed, &cfg.params)?))
    }

    pub fn n(&self) -> usize {
        match self {
            LpnMatrix::Plain(a) => a.n(),
            LpnMatrix::Sorted(s) => s.n(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            LpnMatrix::Plain(a) => a.k(),
            LpnMatrix::Sorted(s) => s.k(),
        }
    }

    fn check(&self, params: &LpnParams) -> Result<()> {
        if self.n() != params.n || self.k() != params.k {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, parameters need {}x{}",
                self.n(),
                self.k(),
                params.n,
                params.k
            )));
        }
        Ok(())
    }

    pub fn encode_blocks(&self, vec: &[Block], addend: &[Block]) -> Result<Vec<Block>> {
        match self {
            LpnMatrix::Plain(a) => lpn::encode_blocks(a, vec, addend),
            LpnMatrix::Sorted(s) => {
                let permuted = permute(s, vec)?;
                lpn::encode_sorted(s, &permuted, addend)
            }
        }
    }

    pub fn encode_bits(&self, bits: &[bool], addend: &[bool]) -> Result<Vec<bool>> {
        match self {
            LpnMatrix::Plain(a) => lpn::encode_bits(a, bits, addend),
            LpnMatrix::Sorted(s) => {
                let permuted = permute(s, bits)?;
                lpn::encode_sorted_bits(s, &permuted, addend)
            }
        }
    }
}

fn permute<T: Copy>(s: &SortedCsr, vec: &[T]) -> Result<Vec<T>> {
    if vec.len() != s.k() {
        return Err(Error::Dimension(format!("vector has {} entries, expected {}", vec.len(), s.k())));
    }
    Ok(s.perm().iter().map(|&c| vec[c as usize]).collect())
}

/// Regular noise: `t` consecutive blocks of `ceil(n/t)` positions, the
/// last one taking the remainder. Each block holds one noise position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseLayout {
    pub starts: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl NoiseLayout {
    pub fn regular(n: usize, t: usize, ell: usize) -> Result<Self> {
        if t == 0 || t > n {
            return Err(Error::Config(format!("cannot place {t} noise blocks in {n} positions")));
        }
        let b = n.div_ceil(t);
        if (t - 1) * b >= n {
            return Err(Error::Config(format!(
                "{t} blocks of {b} positions leave the last block of n = {n} empty"
            )));
        }
        if b > ell {
            return Err(Error::Config(format!("noise blocks of {b} positions exceed {ell} leaves")));
        }
        let sizes: Vec<usize> = (0..t).map(|i| if i + 1 < t { b } else { n - (t - 1) * b }).collect();
        let starts = (0..t).map(|i| i * b).collect();
        Ok(NoiseLayout { starts, sizes })
    }

    pub fn blocks(&self) -> usize {
        self.sizes.len()
    }

    /// One uniform offset per block.
    pub fn sample_alphas(&self, stream: &mut PrgStream) -> Vec<usize> {
        self.sizes.iter().map(|&b| stream.below(b as u32) as usize).collect()
    }

    /// Global noise positions for per-block offsets.
    pub fn positions(&self, alphas: &[usize]) -> Vec<usize> {
        self.starts.iter().zip(alphas).map(|(s, a)| s + a).collect()
    }

    /// Concatenates the first `sizes[j]` leaves of tree `j`.
    fn assemble<'a>(&self, trees: impl Iterator<Item = &'a [Block]>) -> Vec<Block> {
        let mut out = Vec::with_capacity(self.starts.last().copied().unwrap_or(0) + self.sizes.last().copied().unwrap_or(0));
        for (leaves, &b) in trees.zip(&self.sizes) {
            out.extend_from_slice(&leaves[..b]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IterationStats {
    pub emitted: usize,
    pub reserved: usize,
    pub cots_consumed: usize,
    /// PRG usage expanding the SPCOT trees.
    pub prg: PrgCounter,
    /// PRG usage inside the per-level (m-1)-of-m OTs.
    pub ot_prg: PrgCounter,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub wall: Duration,
}

fn check_pool(remaining: usize, cfg: &EngineConfig) -> Result<()> {
    if remaining < cfg.consumption() {
        return Err(Error::PoolExhausted {
            requested: cfg.consumption(),
            available: remaining,
        });
    }
    Ok(())
}

/// Sender state carried across iterations.
#[derive(Clone, Debug)]
pub struct SenderSession {
    cfg: EngineConfig,
    pool: SenderCotPool,
    seed: Block,
    iteration: u64,
}

impl SenderSession {
    /// `seed` drives the tree roots of every iteration.
    pub fn new(cfg: EngineConfig, pool: SenderCotPool, seed: Block) -> Self {
        SenderSession {
            cfg,
            pool,
            seed,
            iteration: 0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn delta(&self) -> Delta {
        self.pool.delta()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn pool(&self) -> &SenderCotPool {
        &self.pool
    }

    /// Runs one iteration; the reserved prefix replaces the base pool.
    pub fn extend(&mut self, ch: &mut dyn Channel, matrix: &LpnMatrix) -> Result<(CotBatch, IterationStats)> {
        let start = Instant::now();
        let (sent0, recv0) = (ch.bytes_sent(), ch.bytes_received());
        let cfg = self.cfg;
        let p = cfg.params;
        matrix.check(&p)?;
        check_pool(self.pool.remaining(), &cfg)?;
        let layout = NoiseLayout::regular(p.n, p.t, p.ell)?;
        handshake(ch, &cfg, self.iteration)?;

        let mut stream = PrgStream::new(derive_seed(self.seed, self.iteration));
        let roots: Vec<Block> = (0..p.t).map(|_| stream.next_block()).collect();
        let ot_seed = stream.next_block();
        let mut spcot = Spcot::new(cfg.spcot_params()?);
        let trees = spcot.send_batch(ch, &mut self.pool, &roots, ot_seed)?;
        let w = layout.assemble(trees.iter().map(|o| o.w.as_slice()));
        drop(trees);
        let r = self.pool.take(p.k)?.to_vec();
        let z = matrix.encode_blocks(&r, &w)?;
        let consumed = spcot.cots_consumed() + p.k;

        let delta = self.pool.delta();
        let (pools, batch) = pool_reserve(CotBatch::Sender { delta, blocks: z }, cfg.reserve_count())?;
        let CotPools::Sender(next) = pools else {
            unreachable!("sender batch yields sender pools")
        };
        self.pool = next;
        log::debug!(
            "sender iteration {}: {} emitted, {} tree PRG calls",
            self.iteration,
            batch.len(),
            spcot.tree_counter().calls
        );
        self.iteration += 1;
        Ok((
            batch,
            IterationStats {
                emitted: cfg.emitted_count(),
                reserved: cfg.reserve_count(),
                cots_consumed: consumed,
                prg: spcot.tree_counter(),
                ot_prg: spcot.ot_counter(),
                bytes_sent: ch.bytes_sent() - sent0,
                bytes_received: ch.bytes_received() - recv0,
                wall: start.elapsed(),
            },
        ))
    }
}

/// Receiver state carried across iterations.
#[derive(Clone, Debug)]
pub struct ReceiverSession {
    cfg: EngineConfig,
    pool: ReceiverCotPool,
    seed: Block,
    iteration: u64,
    last_noise: Vec<usize>,
}

impl ReceiverSession {
    /// `seed` drives the noise positions of every iteration.
    pub fn new(cfg: EngineConfig, pool: ReceiverCotPool, seed: Block) -> Self {
        ReceiverSession {
            cfg,
            pool,
            seed,
            iteration: 0,
            last_noise: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn pool(&self) -> &ReceiverCotPool {
        &self.pool
    }

    /// Noise positions of the last iteration, before truncation.
    pub fn last_noise_positions(&self) -> &[usize] {
        &self.last_noise
    }

    pub fn extend(&mut self, ch: &mut dyn Channel, matrix: &LpnMatrix) -> Result<(CotBatch, IterationStats)> {
        let start = Instant::now();
        let (sent0, recv0) = (ch.bytes_sent(), ch.bytes_received());
        let cfg = self.cfg;
        let p = cfg.params;
        matrix.check(&p)?;
        check_pool(self.pool.remaining(), &cfg)?;
        let layout = NoiseLayout::regular(p.n, p.t, p.ell)?;
        handshake(ch, &cfg, self.iteration)?;

        let mut stream = PrgStream::new(derive_seed(self.seed, self.iteration));
        let alphas = layout.sample_alphas(&mut stream);
        let mut spcot = Spcot::new(cfg.spcot_params()?);
        let trees = spcot.receive_batch(ch, &mut self.pool, &alphas)?;
        let v = layout.assemble(trees.iter().map(|o| o.v.as_slice()));
        drop(trees);
        let noise = layout.positions(&alphas);
        let mut u = vec![false; p.n];
        for &i in &noise {
            u[i] = true;
        }
        let (e, s) = self.pool.take(p.k)?;
        let (e, s) = (e.to_vec(), s.to_vec());
        let x = matrix.encode_bits(&e, &u)?;
        let y = matrix.encode_blocks(&s, &v)?;
        let consumed = spcot.cots_consumed() + p.k;

        let (pools, batch) = pool_reserve(CotBatch::Receiver { bits: x, blocks: y }, cfg.reserve_count())?;
        let CotPools::Receiver(next) = pools else {
            unreachable!("receiver batch yields receiver pools")
        };
        self.pool = next;
        self.last_noise = noise;
        log::debug!("receiver iteration {}: {} emitted", self.iteration, batch.len());
        self.iteration += 1;
        Ok((
            batch,
            IterationStats {
                emitted: cfg.emitted_count(),
                reserved: cfg.reserve_count(),
                cots_consumed: consumed,
                prg: spcot.tree_counter(),
                ot_prg: spcot.ot_counter(),
                bytes_sent: ch.bytes_sent() - sent0,
                bytes_received: ch.bytes_received() - recv0,
                wall: start.elapsed(),
            },
        ))
    }
}

/// Chosen-message OT on extension output, sender side. Each correlation
/// can be spent once; the tweak is its index.
#[derive(Clone, Debug)]
pub struct OtSender {
    delta: Delta,
    blocks: Vec<Block>,
    used: Vec<bool>,
    cursor: usize,
}

impl OtSender {
    pub fn new(batch: CotBatch) -> Result<Self> {
        match batch {
            CotBatch::Sender { delta, blocks } => Ok(OtSender {
                delta,
                used: vec![false; blocks.len()],
                blocks,
                cursor: 0,
            }),
            CotBatch::Receiver { .. } => Err(Error::Config("receiver batch given to an OT sender".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Index the next [`OtSender::next`] call would use.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn claim(used: &mut [bool], index: usize) -> Result<()> {
        match used.get_mut(index) {
            None => Err(Error::PoolExhausted {
                requested: index + 1,
                available: used.len(),
            }),
            Some(true) => Err(Error::AlreadyConsumed(index)),
            Some(u) => {
                *u = true;
                Ok(())
            }
        }
    }

    /// Encrypts `(m0, m1)` on correlation `index` given the receiver's
    /// correction bit.
    pub fn send_at(&mut self, index: usize, correction: bool, m0: Block, m1: Block) -> Result<(Block, Block)> {
        Self::claim(&mut self.used, index)?;
        let r0 = self.blocks[index];
        let r1 = r0 ^ self.delta.block();
        let (k0, k1) = if correction { (r1, r0) } else { (r0, r1) };
        Ok((m0 ^ crhf(k0, index as u64), m1 ^ crhf(k1, index as u64)))
    }

    /// Uses the next unspent correlation in order.
    pub fn next(&mut self, correction: bool, m0: Block, m1: Block) -> Result<(usize, (Block, Block))> {
        while self.cursor < self.used.len() && self.used[self.cursor] {
            self.cursor += 1;
        }
        let i = self.cursor;
        Ok((i, self.send_at(i, correction, m0, m1)?))
    }
}

/// Chosen-message OT on extension output, receiver side.
#[derive(Clone, Debug)]
pub struct OtReceiver {
    bits: Vec<bool>,
    blocks: Vec<Block>,
    used: Vec<bool>,
    cursor: usize,
}

impl OtReceiver {
    pub fn new(batch: CotBatch) -> Result<Self> {
        match batch {
            CotBatch::Receiver { bits, blocks } => Ok(OtReceiver {
                used: vec![false; blocks.len()],
                bits,
                blocks,
                cursor: 0,
            }),
            CotBatch::Sender { .. } => Err(Error::Config("sender batch given to an OT receiver".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Spends correlation `index` to receive message `choice`. Send
    /// `receipt.correction` to the sender, then decode its reply.
    pub fn choose_at(&mut self, index: usize, choice: bool) -> Result<OtReceipt> {
        OtSender::claim(&mut self.used, index)?;
        Ok(OtReceipt::from_cot(self.bits[index], self.blocks[index], choice, index as u64))
    }

    pub fn next(&mut self, choice: bool) -> Result<(usize, OtReceipt)> {
        while self.cursor < self.used.len() && self.used[self.cursor] {
            self.cursor += 1;
        }
        let i = self.cursor;
        Ok((i, self.choose_at(i, choice)?))
    }
}

/// Which end of a duplex link this process is. Party A sends on
/// session [`SENDER_SESSION`] and receives on [`RECEIVER_SESSION`];
/// party B mirrors that.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DuplexParty {
    A,
    B,
}

impl DuplexParty {
    fn session_ids(self) -> (u16, u16) {
        match self {
            DuplexParty::A => (SENDER_SESSION, RECEIVER_SESSION),
            DuplexParty::B => (RECEIVER_SESSION, SENDER_SESSION),
        }
    }
}

pub struct DuplexOutput {
    pub sent: CotBatch,
    pub received: CotBatch,
    pub sender_stats: IterationStats,
    pub receiver_stats: IterationStats,
}

/// Runs this party's sender and receiver iterations concurrently over two
/// sessions of one link. The peer must call this with the other party.
pub fn run_duplex(
    mux: &Mux,
    party: DuplexParty,
    matrix: &LpnMatrix,
    sender: &mut SenderSession,
    receiver: &mut ReceiverSession,
) -> Result<DuplexOutput> {
    let (send_id, recv_id) = party.session_ids();
    let mut send_ch = mux.open_session(send_id)?;
    let mut recv_ch = mux.open_session(recv_id)?;
    let (sent, received) = std::thread::scope(|s| {
        let h = s.spawn(|| sender.extend(&mut send_ch, matrix));
        let received = receiver.extend(&mut recv_ch, matrix);
        let sent = h.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
        (sent, received)
    });
    let (sent, sender_stats) = sent?;
    let (received, receiver_stats) = received?;
    Ok(DuplexOutput {
        sent,
        received,
        sender_stats,
        receiver_stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub total: usize,
    pub valid: usize,
    pub first_invalid: Option<usize>,
}

impl VerifyReport {
    pub fn all_valid(&self) -> bool {
        self.valid == self.total
    }
}

/// Checks `w = y ^ x*delta` position by position.
pub fn verify_batches(sender: &CotBatch, receiver: &CotBatch) -> Result<VerifyReport> {
    let (CotBatch::Sender { delta, blocks: w }, CotBatch::Receiver { bits: x, blocks: y }) = (sender, receiver) else {
        return Err(Error::Config("verification needs one sender and one receiver batch".into()));
    };
    if w.len() != y.len() || x.len() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "sender has {} correlations, receiver {}",
            w.len(),
            y.len()
        )));
    }
    let d = delta.block();
    let mut valid = 0;
    let mut first_invalid = None;
    for (i, ((&w, &x), &y)) in w.iter().zip(x).zip(y).enumerate() {
        if w == y ^ d.select(x) {
            valid += 1;
        } else {
            first_invalid.get_or_insert(i);
        }
    }
    Ok(VerifyReport {
        total: w.len(),
        valid,
        first_invalid,
    })
}

pub fn write_batch(path: &Path, batch: &CotBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut buf = Vec::with_capacity(batch.len() * 17 + 64);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    match batch {
        CotBatch::Sender { delta, blocks } => {
            buf.push(0);
            buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
            buf.extend_from_slice(&delta.block().to_le_bytes());
            write_blocks(&mut buf, blocks);
        }
        CotBatch::Receiver { bits, blocks } => {
            buf.push(1);
            buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
            buf.extend_from_slice(&pack_bits(bits));
            write_blocks(&mut buf, blocks);
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<CotBatch> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 15 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Format("not a correlation dump".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported correlation dump version {version}")));
    }
    let role = bytes[6];
    let count = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
    let body = &bytes[15..];
    let short = |what: &str| Error::LengthMismatch(format!("correlation dump is missing {what}"));
    match role {
        0 => {
            if body.len() < 16 {
                return Err(short("the offset"));
            }
            let delta = Delta::new_unchecked(Block::from_slice(&body[..16]));
            let blocks = &body[16..];
            if blocks.len() != count * Block::BYTES {
                return Err(Error::LengthMismatch(format!(
                    "{} bytes of blocks for {count} correlations",
                    blocks.len()
                )));
            }
            let blocks = read_blocks(blocks).ok_or_else(|| short("blocks"))?;
            Ok(CotBatch::Sender { delta, blocks })
        }
        1 => {
            let nbits = count.div_ceil(8);
            if body.len() != nbits + count * Block::BYTES {
                return Err(Error::LengthMismatch(format!(
                    "{} body bytes for {count} correlations",
                    body.len()
                )));
            }
            let bits = unpack_bits(&body[..nbits], count).ok_or_else(|| short("choice bits"))?;
            let blocks = read_blocks(&body[nbits..]).ok_or_else(|| short("blocks"))?;
            Ok(CotBatch::Receiver { bits, blocks })
        }
        r => Err(Error::Format(format!("unknown role byte {r}"))),
    }
}
