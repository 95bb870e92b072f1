//! Pseudo-random expansion primitives.
//!
//! Two node-expansion PRGs are provided. The multi-output stream PRG runs a
//! ChaCha-style permutation over a 512-bit state keyed by the 128-bit seed and
//! returns the whole state as four blocks from a single call. The fixed-key
//! PRGs run AES-128 under public constant keys in Davies-Meyer mode and cost
//! one cipher call per output block; they exist as the baseline for operation
//! counting.
//!
//! The same ChaCha core also backs the index stream used to sample the LPN
//! matrix, the correlation-robust hash, and seed derivation. Each use loads a
//! distinct domain word into the counter row of the state.

use std::sync::OnceLock;

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;

use crate::block::Block;

const SIGMA: [u32; 4] = [0x6170_7865, 0x3320_646e, 0x7962_2d32, 0x6b20_6574];

/// Pads the 128-bit seed to a 256-bit key.
const KEY_PAD: [u32; 4] = [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344];

const DOMAIN_EXPAND: u32 = 0x4e4f_4445;
const DOMAIN_STREAM: u32 = 0x5354_524d;
const DOMAIN_HASH: u32 = 0x4352_4846;
const DOMAIN_DERIVE: u32 = 0x4445_5256;

/// Round count used by the multi-output PRG unless configured otherwise.
pub const DEFAULT_ROUNDS: u8 = 8;

const FIXED_KEYS: [u128; 4] = [
    0x6a09_e667_f3bc_c908_bb67_ae85_84ca_a73b,
    0x3c6e_f372_fe94_f82b_a54f_f53a_5f1d_36f1,
    0x510e_527f_ade6_82d1_9b05_688c_2b3e_6c1f,
    0x1f83_d9ab_fb41_bd6b_5be0_cd19_137e_2179,
];

fn fixed_ciphers() -> &'static [Aes128; 4] {
    static CIPHERS: OnceLock<[Aes128; 4]> = OnceLock::new();
    CIPHERS.get_or_init(|| FIXED_KEYS.map(|k| Aes128::new(&k.to_le_bytes().into())))
}

/// Which PRG expands tree nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrgKind {
    /// Two fixed-key cipher calls per expansion, two output blocks.
    DoubleFixedKey,
    /// Four fixed-key cipher calls per expansion, four output blocks.
    QuadFixedKey,
    /// One ChaCha-style permutation per expansion, four output blocks.
    MultiOutputStream { rounds: u8 },
}

impl PrgKind {
    pub const STREAM: PrgKind = PrgKind::MultiOutputStream {
        rounds: DEFAULT_ROUNDS,
    };

    /// Output blocks per expansion.
    pub fn width(self) -> usize {
        match self {
            PrgKind::DoubleFixedKey => 2,
            PrgKind::QuadFixedKey | PrgKind::MultiOutputStream { .. } => 4,
        }
    }

    /// Primitive (cipher or permutation) calls per expansion.
    pub fn calls_per_expansion(self) -> u64 {
        match self {
            PrgKind::DoubleFixedKey => 2,
            PrgKind::QuadFixedKey => 4,
            PrgKind::MultiOutputStream { .. } => 1,
        }
    }

    /// The variant used for binary (fanout 2) mini-trees.
    pub fn binary(self) -> PrgKind {
        match self {
            PrgKind::QuadFixedKey => PrgKind::DoubleFixedKey,
            other => other,
        }
    }

    pub fn supports_fanout(self, fanout: usize) -> bool {
        match self {
            PrgKind::DoubleFixedKey => fanout == 2,
            PrgKind::QuadFixedKey => fanout == 4,
            PrgKind::MultiOutputStream { .. } => fanout == 2 || fanout == 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrgKind::DoubleFixedKey => "fixedkey2",
            PrgKind::QuadFixedKey => "fixedkey4",
            PrgKind::MultiOutputStream { .. } => "stream",
        }
    }
}

/// Output of one expansion: two or four blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Expansion {
    blocks: [Block; 4],
    len: u8,
}

impl Expansion {
    #[inline]
    pub fn as_slice(&self) -> &[Block] {
        &self.blocks[..self.len as usize]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[inline(always)]
fn quarter_round(s: &mut [u32; 16], a: usize, b: usize, c: usize, d: usize) {
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(16);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(12);
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(8);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(7);
}

/// ChaCha block function: `rounds` alternating column and diagonal rounds
/// followed by the feed-forward addition.
fn chacha_block(key: Block, counter: [u32; 4], rounds: u8) -> [u32; 16] {
    let k = key.to_words();
    let input = [
        SIGMA[0], SIGMA[1], SIGMA[2], SIGMA[3], k[0], k[1], k[2], k[3], KEY_PAD[0], KEY_PAD[1],
        KEY_PAD[2], KEY_PAD[3], counter[0], counter[1], counter[2], counter[3],
    ];
    let mut s = input;
    for r in 0..rounds {
        if r % 2 == 0 {
            quarter_round(&mut s, 0, 4, 8, 12);
            quarter_round(&mut s, 1, 5, 9, 13);
            quarter_round(&mut s, 2, 6, 10, 14);
            quarter_round(&mut s, 3, 7, 11, 15);
        } else {
            quarter_round(&mut s, 0, 5, 10, 15);
            quarter_round(&mut s, 1, 6, 11, 12);
            quarter_round(&mut s, 2, 7, 8, 13);
            quarter_round(&mut s, 3, 4, 9, 14);
        }
    }
    for (w, i) in s.iter_mut().zip(input) {
        *w = w.wrapping_add(i);
    }
    s
}

#[inline]
fn counter_words(value: u64, domain: u32) -> [u32; 4] {
    [value as u32, (value >> 32) as u32, domain, 0]
}

#[inline]
fn state_blocks(s: &[u32; 16]) -> [Block; 4] {
    [
        Block::from_words([s[0], s[1], s[2], s[3]]),
        Block::from_words([s[4], s[5], s[6], s[7]]),
        Block::from_words([s[8], s[9], s[10], s[11]]),
        Block::from_words([s[12], s[13], s[14], s[15]]),
    ]
}

#[inline]
fn fixed_key_dm(key_index: usize, x: Block) -> Block {
    let mut buf = x.to_le_bytes().into();
    fixed_ciphers()[key_index].encrypt_block(&mut buf);
    Block::from_le_bytes(buf.into()) ^ x
}

/// Expands `seed` into 2 or 4 blocks. `tweak` names the node being expanded.
pub fn prg_expand(seed: Block, kind: PrgKind, tweak: u64) -> Expansion {
    match kind {
        PrgKind::MultiOutputStream { rounds } => {
            let s = chacha_block(seed, counter_words(tweak, DOMAIN_EXPAND), rounds);
            Expansion {
                blocks: state_blocks(&s),
                len: 4,
            }
        }
        PrgKind::DoubleFixedKey | PrgKind::QuadFixedKey => {
            let x = seed ^ Block(tweak as u128);
            let width = kind.width();
            let mut blocks = [Block::ZERO; 4];
            for (i, out) in blocks.iter_mut().enumerate().take(width) {
                *out = fixed_key_dm(i, x);
            }
            Expansion {
                blocks,
                len: width as u8,
            }
        }
    }
}

/// Correlation-robust hash: the first block of one stream-PRG call keyed by
/// `x`, with the tweak in the counter row.
pub fn crhf(x: Block, tweak: u64) -> Block {
    let s = chacha_block(x, counter_words(tweak, DOMAIN_HASH), DEFAULT_ROUNDS);
    Block::from_words([s[0], s[1], s[2], s[3]])
}

/// Derives an independent seed from `root` for the given tweak.
pub fn derive_seed(root: Block, tweak: u64) -> Block {
    let s = chacha_block(root, counter_words(tweak, DOMAIN_DERIVE), DEFAULT_ROUNDS);
    Block::from_words([s[0], s[1], s[2], s[3]])
}

/// Counts expansions and the primitive calls they cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrgCounter {
    /// Number of `prg_expand` invocations.
    pub expansions: u64,
    /// Cipher or permutation calls behind those invocations.
    pub calls: u64,
}

impl PrgCounter {
    pub fn add(&mut self, other: PrgCounter) {
        self.expansions += other.expansions;
        self.calls += other.calls;
    }
}

/// A PRG bound to one kind for a whole session, with call accounting.
#[derive(Clone, Debug)]
pub struct Prg {
    kind: PrgKind,
    counter: PrgCounter,
}

impl Prg {
    pub fn new(kind: PrgKind) -> Self {
        Prg {
            kind,
            counter: PrgCounter::default(),
        }
    }

    pub fn kind(&self) -> PrgKind {
        self.kind
    }

    pub fn counter(&self) -> PrgCounter {
        self.counter
    }

    #[inline]
    pub fn expand(&mut self, seed: Block, tweak: u64) -> Expansion {
        self.counter.expansions += 1;
        self.counter.calls += self.kind.calls_per_expansion();
        let out = prg_expand(seed, self.kind, tweak);
        debug_assert_eq!(out.len(), self.kind.width());
        out
    }
}

/// Deterministic byte stream keyed by a seed. Prefix-consistent: reading n
/// bytes and then m more yields the first n+m bytes of the stream.
#[derive(Clone, Debug)]
pub struct PrgStream {
    seed: Block,
    block_index: u64,
    buf: [u8; 64],
    pos: usize,
}

impl PrgStream {
    pub fn new(seed: Block) -> Self {
        PrgStream {
            seed,
            block_index: 0,
            buf: [0; 64],
            pos: 64,
        }
    }

    fn refill(&mut self) {
        let s = chacha_block(
            self.seed,
            counter_words(self.block_index, DOMAIN_STREAM),
            DEFAULT_ROUNDS,
        );
        for (chunk, w) in self.buf.chunks_exact_mut(4).zip(s) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        self.block_index += 1;
        self.pos = 0;
    }

    pub fn fill(&mut self, out: &mut [u8]) {
        let mut written = 0;
        while written < out.len() {
            if self.pos == 64 {
                self.refill();
            }
            let n = (64 - self.pos).min(out.len() - written);
            out[written..written + n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
            self.pos += n;
            written += n;
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        let mut b = [0u8; 4];
        self.fill(&mut b);
        u32::from_le_bytes(b)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut b = [0u8; 8];
        self.fill(&mut b);
        u64::from_le_bytes(b)
    }

    pub fn next_block(&mut self) -> Block {
        let mut b = [0u8; 16];
        self.fill(&mut b);
        Block::from_le_bytes(b)
    }

    pub fn next_bool(&mut self) -> bool {
        let mut b = [0u8; 1];
        self.fill(&mut b);
        b[0] & 1 == 1
    }

    /// Uniform value in `[0, bound)` by rejection sampling. `bound` must be
    /// nonzero.
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "bound must be positive");
        // Largest multiple of `bound` that fits in 2^32.
        let zone = u32::MAX - (u32::MAX - bound + 1) % bound;
        loop {
            let v = self.next_u32();
            if v <= zone {
                return v % bound;
            }
        }
    }

    pub fn below_u64(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }
}

/// The first `byte_count` bytes of the stream keyed by `seed`.
pub fn prg_stream(seed: Block, byte_count: usize) -> Vec<u8> {
    let mut out = vec![0u8; byte_count];
    PrgStream::new(seed).fill(&mut out);
    out
}
