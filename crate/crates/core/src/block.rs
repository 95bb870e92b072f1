//! 128-bit blocks, the payload of every correlation and tree node.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

/// A 128-bit value. Serialized as 16 little-endian bytes.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block(pub u128);

impl Block {
    pub const ZERO: Block = Block(0);
    pub const BYTES: usize = 16;

    #[inline]
    pub const fn new(value: u128) -> Self {
        Block(value)
    }

    #[inline]
    pub fn from_le_bytes(bytes: [u8; 16]) -> Self {
        Block(u128::from_le_bytes(bytes))
    }

    #[inline]
    pub fn to_le_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    /// Reads a block from the first 16 bytes of `bytes`.
    ///
    /// Panics if fewer than 16 bytes are available.
    #[inline]
    pub fn from_slice(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 16];
        buf.copy_from_slice(&bytes[..16]);
        Block::from_le_bytes(buf)
    }

    #[inline]
    pub fn from_words(words: [u32; 4]) -> Self {
        Block(
            words[0] as u128
                | (words[1] as u128) << 32
                | (words[2] as u128) << 64
                | (words[3] as u128) << 96,
        )
    }

    #[inline]
    pub fn to_words(self) -> [u32; 4] {
        [
            self.0 as u32,
            (self.0 >> 32) as u32,
            (self.0 >> 64) as u32,
            (self.0 >> 96) as u32,
        ]
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Returns `self` if `bit` is set, zero otherwise.
    #[inline]
    pub fn select(self, bit: bool) -> Block {
        Block(self.0 & (bit as u128).wrapping_neg())
    }

    /// XOR of every block in the iterator.
    pub fn xor_all<I: IntoIterator<Item = Block>>(iter: I) -> Block {
        iter.into_iter().fold(Block::ZERO, |acc, b| acc ^ b)
    }
}

impl BitXor for Block {
    type Output = Block;

    #[inline]
    fn bitxor(self, rhs: Block) -> Block {
        Block(self.0 ^ rhs.0)
    }
}

impl BitXorAssign for Block {
    #[inline]
    fn bitxor_assign(&mut self, rhs: Block) {
        self.0 ^= rhs.0;
    }
}

impl From<u128> for Block {
    fn from(value: u128) -> Self {
        Block(value)
    }
}

impl From<Block> for u128 {
    fn from(block: Block) -> Self {
        block.0
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block({:032x})", self.0)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Appends the little-endian encoding of every block to `out`.
pub(crate) fn write_blocks(out: &mut Vec<u8>, blocks: &[Block]) {
    out.reserve(blocks.len() * Block::BYTES);
    for b in blocks {
        out.extend_from_slice(&b.to_le_bytes());
    }
}

/// Decodes a byte slice whose length must be a multiple of 16.
pub(crate) fn read_blocks(bytes: &[u8]) -> Option<Vec<Block>> {
    if !bytes.len().is_multiple_of(Block::BYTES) {
        return None;
    }
    Some(bytes.chunks_exact(Block::BYTES).map(Block::from_slice).collect())
}

/// Packs bits LSB-first into bytes.
pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], count: usize) -> Option<Vec<bool>> {
    if bytes.len() != count.div_ceil(8) {
        return None;
    }
    Some((0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}
