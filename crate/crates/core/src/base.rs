//! Base correlated OTs: the dealer, consumption pools, and the
//! derandomized chosen OT that spends one COT per transfer.
//!
//! A COT pairs a sender value `r0` with a receiver bit `b` and block
//! `r_b = r0 ^ b*delta`. To transfer one of `(m0, m1)` with choice `c`, the
//! receiver announces `d = b ^ c` and the sender returns
//! `c_j = m_j ^ H(r_{j^d})`. Only `c_c` is masked by the receiver's `r_b`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::block::{pack_bits, read_blocks, unpack_bits, write_blocks, Block};
use crate::error::{Error, Result};
use crate::prg::{crhf, PrgStream};

const DEALER_MAGIC: &[u8; 4] = b"IRNB";
const DEALER_VERSION: u16 = 1;

/// The sender's global offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delta(Block);

impl Delta {
    pub fn new(value: Block) -> Result<Self> {
        if value.is_zero() {
            return Err(Error::ZeroDelta);
        }
        Ok(Delta(value))
    }

    /// Skips the nonzero check. A zero offset makes every correlation
    /// trivial; only test harnesses should want one.
    pub fn new_unchecked(value: Block) -> Self {
        Delta(value)
    }

    #[inline]
    pub fn block(self) -> Block {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SenderCotPool {
    delta: Delta,
    blocks: Vec<Block>,
    cursor: usize,
}

impl SenderCotPool {
    pub fn new(delta: Delta, blocks: Vec<Block>) -> Self {
        SenderCotPool {
            delta,
            blocks,
            cursor: 0,
        }
    }

    pub fn delta(&self) -> Delta {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.blocks.len() - self.cursor
    }

    /// All `r0` values, consumed or not.
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Consumes the next `n` correlations and returns their `r0` values.
    pub fn take(&mut self, n: usize) -> Result<&[Block]> {
        if n > self.remaining() {
            return Err(Error::PoolExhausted {
                requested: n,
                available: self.remaining(),
            });
        }
        let start = self.cursor;
        self.cursor += n;
        Ok(&self.blocks[start..self.cursor])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceiverCotPool {
    bits: Vec<bool>,
    blocks: Vec<Block>,
    cursor: usize,
}

impl ReceiverCotPool {
    pub fn new(bits: Vec<bool>, blocks: Vec<Block>) -> Result<Self> {
        if bits.len() != blocks.len() {
            return Err(Error::LengthMismatch(format!(
                "{} choice bits but {} blocks",
                bits.len(),
                blocks.len()
            )));
        }
        Ok(ReceiverCotPool {
            bits,
            blocks,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.blocks.len() - self.cursor
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Consumes the next `n` correlations and returns `(b, r_b)` slices.
    pub fn take(&mut self, n: usize) -> Result<(&[bool], &[Block])> {
        if n > self.remaining() {
            return Err(Error::PoolExhausted {
                requested: n,
                available: self.remaining(),
            });
        }
        let start = self.cursor;
        self.cursor += n;
        Ok((&self.bits[start..self.cursor], &self.blocks[start..self.cursor]))
    }
}

/// Deterministically deals `count` correlations from `seed`.
pub fn dealer_generate(
    count: usize,
    delta: Delta,
    seed: Block,
) -> Result<(SenderCotPool, ReceiverCotPool)> {
    if count == 0 {
        return Err(Error::Config("dealer count must be at least 1".into()));
    }
    if delta.block().is_zero() {
        return Err(Error::ZeroDelta);
    }
    Ok(dealer_generate_raw(count, delta, seed))
}

/// Dealer without argument checks; accepts a zero offset.
pub fn dealer_generate_raw(count: usize, delta: Delta, seed: Block) -> (SenderCotPool, ReceiverCotPool) {
    let mut stream = PrgStream::new(seed);
    let mut sender = Vec::with_capacity(count);
    let mut bits = Vec::with_capacity(count);
    let mut receiver = Vec::with_capacity(count);
    for _ in 0..count {
        let r0 = stream.next_block();
        let b = stream.next_bool();
        sender.push(r0);
        bits.push(b);
        receiver.push(r0 ^ delta.block().select(b));
    }
    (
        SenderCotPool::new(delta, sender),
        ReceiverCotPool {
            bits,
            blocks: receiver,
            cursor: 0,
        },
    )
}

/// Sender half of one chosen OT on an already consumed COT `r0`.
#[inline]
pub fn ot_encrypt(r0: Block, delta: Delta, m0: Block, m1: Block, d: bool, tweak: u64) -> (Block, Block) {
    let r1 = r0 ^ delta.block();
    let (k0, k1) = if d { (r1, r0) } else { (r0, r1) };
    (m0 ^ crhf(k0, tweak), m1 ^ crhf(k1, tweak))
}

/// Consumes one COT and encrypts `(m0, m1)` under correction bit `d`.
pub fn ot_send(
    pool: &mut SenderCotPool,
    m0: Block,
    m1: Block,
    d: bool,
    tweak: u64,
) -> Result<(Block, Block)> {
    let delta = pool.delta;
    let r0 = pool.take(1)?[0];
    Ok(ot_encrypt(r0, delta, m0, m1, d, tweak))
}

/// Receiver state for one chosen OT: the bit to send and the decoding key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OtReceipt {
    pub correction: bool,
    pub choice: bool,
    key: Block,
}

impl OtReceipt {
    /// Builds the receipt from a consumed COT `(b, r_b)`.
    #[inline]
    pub fn from_cot(bit: bool, rb: Block, choice: bool, tweak: u64) -> Self {
        OtReceipt {
            correction: bit ^ choice,
            choice,
            key: crhf(rb, tweak),
        }
    }

    #[inline]
    pub fn decode(&self, c0: Block, c1: Block) -> Block {
        if self.choice {
            c1 ^ self.key
        } else {
            c0 ^ self.key
        }
    }
}

/// Consumes one COT and prepares to receive message `choice`.
pub fn ot_receive(pool: &mut ReceiverCotPool, choice: bool, tweak: u64) -> Result<OtReceipt> {
    let (bits, blocks) = pool.take(1)?;
    Ok(OtReceipt::from_cot(bits[0], blocks[0], choice, tweak))
}

/// One role's output of an extension iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CotBatch {
    /// `z` values; the matching receiver value is `z ^ x*delta`.
    Sender { delta: Delta, blocks: Vec<Block> },
    Receiver { bits: Vec<bool>, blocks: Vec<Block> },
}

/// Base pools produced by reserving part of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CotPools {
    Sender(SenderCotPool),
    Receiver(ReceiverCotPool),
}

impl CotBatch {
    pub fn len(&self) -> usize {
        match self {
            CotBatch::Sender { blocks, .. } | CotBatch::Receiver { blocks, .. } => blocks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits off the first `count` correlations as the next iteration's base
/// pools; the rest is returned for the consumer.
pub fn pool_reserve(batch: CotBatch, count: usize) -> Result<(CotPools, CotBatch)> {
    if count > batch.len() {
        return Err(Error::InsufficientBatch {
            requested: count,
            available: batch.len(),
        });
    }
    Ok(match batch {
        CotBatch::Sender { delta, mut blocks } => {
            let rest = blocks.split_off(count);
            (
                CotPools::Sender(SenderCotPool::new(delta, blocks)),
                CotBatch::Sender {
                    delta,
                    blocks: rest,
                },
            )
        }
        CotBatch::Receiver {
            mut bits,
            mut blocks,
        } => {
            let rest_bits = bits.split_off(count);
            let rest = blocks.split_off(count);
            (
                CotPools::Receiver(ReceiverCotPool {
                    bits,
                    blocks,
                    cursor: 0,
                }),
                CotBatch::Receiver {
                    bits: rest_bits,
                    blocks: rest,
                },
            )
        }
    })
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != magic {
        return Err(Error::Format(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != DEALER_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_exact_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Format(format!("truncated: expected {len} bytes, got {}", buf.len())));
    }
    Ok(buf)
}

pub fn write_sender_pool(path: &Path, pool: &SenderCotPool) -> Result<()> {
    let mut out = Vec::with_capacity(30 + pool.len() * 16);
    out.extend_from_slice(DEALER_MAGIC);
    out.extend_from_slice(&DEALER_VERSION.to_le_bytes());
    out.extend_from_slice(&(pool.len() as u64).to_le_bytes());
    out.extend_from_slice(&pool.delta.block().to_le_bytes());
    write_blocks(&mut out, &pool.blocks);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&out)?;
    f.flush()?;
    Ok(())
}

pub fn write_receiver_pool(path: &Path, pool: &ReceiverCotPool) -> Result<()> {
    let mut out = Vec::with_capacity(14 + pool.len() * 17);
    out.extend_from_slice(DEALER_MAGIC);
    out.extend_from_slice(&DEALER_VERSION.to_le_bytes());
    out.extend_from_slice(&(pool.len() as u64).to_le_bytes());
    out.extend_from_slice(&pack_bits(&pool.bits));
    write_blocks(&mut out, &pool.blocks);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&out)?;
    f.flush()?;
    Ok(())
}

pub fn read_sender_pool(path: &Path) -> Result<SenderCotPool> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, DEALER_MAGIC)?;
    let count = read_u64(&mut r)? as usize;
    let delta = Block::from_slice(&read_exact_vec(&mut r, 16)?);
    let body = read_exact_vec(&mut r, count * 16)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after sender blocks".into()));
    }
    let blocks = read_blocks(&body).ok_or_else(|| Error::Format("bad block data".into()))?;
    Ok(SenderCotPool::new(Delta::new(delta)?, blocks))
}

pub fn read_receiver_pool(path: &Path) -> Result<ReceiverCotPool> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, DEALER_MAGIC)?;
    let count = read_u64(&mut r)? as usize;
    let packed = read_exact_vec(&mut r, count.div_ceil(8))?;
    let body = read_exact_vec(&mut r, count * 16)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after receiver blocks".into()));
    }
    let bits = unpack_bits(&packed, count).ok_or_else(|| Error::Format("bad bit vector".into()))?;
    let blocks = read_blocks(&body).ok_or_else(|| Error::Format("bad block data".into()))?;
    ReceiverCotPool::new(bits, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn delta() -> Delta {
        Delta::new(Block(0xdead_beef_0000_0000_1111_2222_3333_4444)).unwrap()
    }

    fn holds(s: &SenderCotPool, r: &ReceiverCotPool) -> bool {
        s.blocks()
            .iter()
            .zip(r.bits().iter().zip(r.blocks()))
            .all(|(&w, (&b, &v))| v == w ^ s.delta().block().select(b))
    }

    #[test]
    fn zero_delta_rejected() {
        assert!(matches!(Delta::new(Block::ZERO), Err(Error::ZeroDelta)));
        let z = Delta::new_unchecked(Block::ZERO);
        assert!(matches!(dealer_generate(4, z, Block(1)), Err(Error::ZeroDelta)));
        assert!(dealer_generate(0, delta(), Block(1)).is_err());
    }

    #[test]
    fn single_correlation_both_bits() {
        // search seeds until both bit values have been seen
        let (mut saw0, mut saw1) = (false, false);
        for seed in 0..64u128 {
            let (s, r) = dealer_generate(1, delta(), Block(seed)).unwrap();
            if r.bits()[0] {
                saw1 = true;
                assert_eq!(r.blocks()[0], s.blocks()[0] ^ delta().block());
            } else {
                saw0 = true;
                assert_eq!(r.blocks()[0], s.blocks()[0]);
            }
        }
        assert!(saw0 && saw1);
    }

    #[test]
    fn ten_thousand_correlations_hold() {
        let (s, r) = dealer_generate(10_000, delta(), Block(99)).unwrap();
        assert!(holds(&s, &r));
        let ones = r.bits().iter().filter(|&&b| b).count();
        assert!((4500..5500).contains(&ones));
    }

    #[test]
    fn dealer_is_deterministic() {
        let a = dealer_generate(50, delta(), Block(3)).unwrap();
        let b = dealer_generate(50, delta(), Block(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chosen_ot_all_bit_combinations() {
        let m0 = Block(0x1111);
        let m1 = Block(0x2222);
        let (mut s, mut r) = dealer_generate(256, delta(), Block(8)).unwrap();
        let mut seen = [[false; 2]; 2];
        for i in 0..256u64 {
            let choice = i % 2 == 1;
            let b = r.bits()[i as usize];
            seen[b as usize][choice as usize] = true;
            let receipt = ot_receive(&mut r, choice, i).unwrap();
            assert_eq!(receipt.correction, b ^ choice);
            let (c0, c1) = ot_send(&mut s, m0, m1, receipt.correction, i).unwrap();
            let got = receipt.decode(c0, c1);
            assert_eq!(got, if choice { m1 } else { m0 });
            // the other ciphertext does not open with the receiver's key
            let flipped = OtReceipt { choice: !choice, ..receipt };
            assert_ne!(flipped.decode(c0, c1), if choice { m0 } else { m1 });
        }
        assert!(seen.iter().flatten().all(|&x| x));
    }

    #[test]
    fn exhaustion_errors() {
        let (mut s, mut r) = dealer_generate(2, delta(), Block(1)).unwrap();
        ot_send(&mut s, Block(1), Block(2), false, 0).unwrap();
        ot_send(&mut s, Block(1), Block(2), false, 1).unwrap();
        assert!(matches!(
            ot_send(&mut s, Block(1), Block(2), false, 2),
            Err(Error::PoolExhausted { requested: 1, available: 0 })
        ));
        assert!(r.take(3).is_err());
        assert_eq!(r.consumed(), 0);
        r.take(2).unwrap();
        assert!(ot_receive(&mut r, true, 0).is_err());
    }

    #[test]
    fn reserve_partitions() {
        let batch = CotBatch::Sender {
            delta: delta(),
            blocks: (0..10).map(Block).collect(),
        };
        let (pools, rest) = pool_reserve(batch.clone(), 10).unwrap();
        assert!(rest.is_empty());
        assert!(matches!(pools, CotPools::Sender(ref p) if p.len() == 10));
        let (pools, rest) = pool_reserve(batch.clone(), 0).unwrap();
        assert_eq!(rest.len(), 10);
        assert!(matches!(pools, CotPools::Sender(ref p) if p.is_empty()));
        let (pools, rest) = pool_reserve(batch.clone(), 4).unwrap();
        let CotPools::Sender(p) = pools else { panic!() };
        let CotBatch::Sender { blocks, .. } = rest else { panic!() };
        assert_eq!(p.blocks(), &(0..4).map(Block).collect::<Vec<_>>()[..]);
        assert_eq!(blocks, (4..10).map(Block).collect::<Vec<_>>());
        assert!(matches!(
            pool_reserve(batch, 11),
            Err(Error::InsufficientBatch { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn dealer_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (s, r) = dealer_generate(37, delta(), Block(5)).unwrap();
        let sp = dir.path().join("s.bin");
        let rp = dir.path().join("r.bin");
        write_sender_pool(&sp, &s).unwrap();
        write_receiver_pool(&rp, &r).unwrap();
        assert_eq!(std::fs::metadata(&sp).unwrap().len(), 4 + 2 + 8 + 16 + 37 * 16);
        assert_eq!(std::fs::metadata(&rp).unwrap().len(), 4 + 2 + 8 + 5 + 37 * 16);
        assert_eq!(read_sender_pool(&sp).unwrap(), s);
        assert_eq!(read_receiver_pool(&rp).unwrap(), r);
        // wrong file kind
        assert!(read_sender_pool(&rp).is_err());
        std::fs::write(&sp, b"XXXX").unwrap();
        assert!(matches!(read_sender_pool(&sp), Err(Error::Format(_)) | Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn conservation_and_no_reuse(count in 1usize..64, chunks in prop::collection::vec(0usize..9, 1..20)) {
            let (mut s, mut r) = dealer_generate(count, delta(), Block(count as u128)).unwrap();
            for n in chunks {
                let before = s.remaining();
                match s.take(n) {
                    Ok(got) => prop_assert_eq!(got.len(), n),
                    Err(Error::PoolExhausted { requested, available }) => {
                        prop_assert_eq!(requested, n);
                        prop_assert_eq!(available, before);
                        prop_assert!(n > before);
                    }
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                let _ = r.take(n);
                prop_assert_eq!(s.consumed() + s.remaining(), count);
                prop_assert_eq!(s.consumed(), r.consumed());
            }
            let rest = s.remaining();
            s.take(rest).unwrap();
            prop_assert!(s.take(1).is_err());
        }

        #[test]
        fn chosen_ot_correct(seed: u128, m0: u128, m1: u128, choice: bool, tweak: u64) {
            let (mut s, mut r) = dealer_generate(1, delta(), Block(seed)).unwrap();
            prop_assert!(holds(&s, &r));
            let receipt = ot_receive(&mut r, choice, tweak).unwrap();
            let (c0, c1) = ot_send(&mut s, Block(m0), Block(m1), receipt.correction, tweak).unwrap();
            prop_assert_eq!(receipt.decode(c0, c1), Block(if choice { m1 } else { m0 }));
        }
    }
}
