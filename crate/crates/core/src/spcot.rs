//! Single-point COT over m-ary GGM trees.
//!
//! The sender expands a tree from a random root and, level by level, lets
//! the receiver learn every class sum except the one on its path to `alpha`.
//! The receiver rebuilds all leaves but `alpha`; a final message
//! `psi = delta ^ XOR(leaves)` lets it compute `leaf_alpha ^ delta`.
//!
//! Per level, a fanout-2 tree spends one chosen OT. A fanout-4 tree runs a
//! 3-of-4 OT: the sender masks each class sum with a leaf of a fresh 4-leaf
//! binary mini-tree and conveys all mini-leaves but one through two chosen
//! OTs. Either way a tree consumes `log2(ell)` base COTs.
//!
//! Batches of trees run in lockstep: one correction frame and one
//! ciphertext frame per level carry every tree, then one frame carries all
//! `psi` values.

use crate::base::{ot_encrypt, Delta, OtReceipt, ReceiverCotPool, SenderCotPool};
use crate::block::{pack_bits, read_blocks, unpack_bits, write_blocks, Block};
use crate::error::{Error, Result};
use crate::ggm::{
    class_sums, depth_for, expand_full_tree, expand_level, level_class_sums, node_tweak, reconstruct_level,
    recover_punctured_leaf, LevelSums, PuncturedTree,
};
use crate::prg::{crhf, derive_seed, Prg, PrgCounter, PrgKind};
use crate::transport::{Channel, MsgType};

const MINI_TREE_FLAG: u32 = 0x8000_0000;
const MINI_MASK_LEVEL: usize = 0xff;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpcotParams {
    ell: usize,
    fanout: usize,
    depth: usize,
    kind: PrgKind,
}

impl SpcotParams {
    pub fn new(ell: usize, fanout: usize, kind: PrgKind) -> Result<Self> {
        if fanout != 2 && fanout != 4 {
            return Err(Error::Config(format!("fanout {fanout} not in {{2, 4}}")));
        }
        if !kind.supports_fanout(fanout) {
            return Err(Error::Config(format!(
                "PRG {} cannot expand a {fanout}-ary tree",
                kind.name()
            )));
        }
        let depth = depth_for(fanout, ell)
            .ok_or_else(|| Error::Config(format!("ell {ell} is not a power of {fanout}")))?;
        crate::ggm::leaf_count(fanout, depth)?;
        Ok(SpcotParams {
            ell,
            fanout,
            depth,
            kind,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn kind(&self) -> PrgKind {
        self.kind
    }

    /// Base COTs per level.
    pub fn ots_per_level(&self) -> usize {
        self.fanout.trailing_zeros() as usize
    }

    /// Base COTs per tree, `log2(ell)`.
    pub fn cots_per_tree(&self) -> usize {
        self.ots_per_level() * self.depth
    }

    /// Ciphertext blocks the sender returns per tree and level.
    pub fn ciphertexts_per_level(&self) -> usize {
        match self.fanout {
            2 => 2,
            _ => 2 * 2 + 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpcotSenderOutput {
    pub w: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpcotReceiverOutput {
    pub alpha: usize,
    pub v: Vec<Block>,
}

impl SpcotReceiverOutput {
    /// The implicit one-hot vector `u`.
    pub fn u(&self) -> Vec<bool> {
        (0..self.v.len()).map(|i| i == self.alpha).collect()
    }
}

fn mini_tree_id(tweak: u64) -> u32 {
    MINI_TREE_FLAG | (tweak as u32 & !MINI_TREE_FLAG)
}

fn mask_tweak(mini_id: u32, class: usize) -> u64 {
    node_tweak(mini_id, MINI_MASK_LEVEL, class)
}

/// Sender side of one (m-1)-of-m OT over class sums, using already
/// consumed COTs `r0s` (one for m=2, two for m=4). `tweak` is the index of
/// the first COT; later COTs use `tweak + 1`.
#[allow(clippy::too_many_arguments)]
fn class_sums_encrypt(
    sums: &[Block],
    r0s: &[Block],
    corrections: &[bool],
    delta: Delta,
    ot_seed: Block,
    tweak: u64,
    ot_prg: &mut Prg,
    out: &mut Vec<Block>,
) -> Result<()> {
    match sums.len() {
        2 => {
            let (c0, c1) = ot_encrypt(r0s[0], delta, sums[0], sums[1], corrections[0], tweak);
            out.extend([c0, c1]);
        }
        4 => {
            let mini_id = mini_tree_id(tweak);
            let seed = derive_seed(ot_seed, tweak);
            let mini = expand_full_tree(seed, 2, 2, mini_id, ot_prg)?;
            for lvl in 0..2 {
                let k = level_class_sums(&mini, lvl + 1)?.sums;
                let (c0, c1) = ot_encrypt(r0s[lvl], delta, k[0], k[1], corrections[lvl], tweak + lvl as u64);
                out.extend([c0, c1]);
            }
            for (j, (&s, &q)) in sums.iter().zip(mini.leaves()).enumerate() {
                out.push(s ^ crhf(q, mask_tweak(mini_id, j)));
            }
        }
        m => return Err(Error::Config(format!("fanout {m} not in {{2, 4}}"))),
    }
    Ok(())
}

/// Receiver state for one (m-1)-of-m OT.
struct ClassSumsReceipt {
    fanout: usize,
    withheld: usize,
    receipts: Vec<OtReceipt>,
    tweak: u64,
}

impl ClassSumsReceipt {
    fn new(fanout: usize, withheld: usize, bits: &[bool], rbs: &[Block], tweak: u64) -> Self {
        let receipts = if fanout == 2 {
            vec![OtReceipt::from_cot(bits[0], rbs[0], withheld == 0, tweak)]
        } else {
            // pick the complement class at each mini-tree level
            let a1 = withheld >> 1;
            let a2 = withheld & 1;
            vec![
                OtReceipt::from_cot(bits[0], rbs[0], a1 == 0, tweak),
                OtReceipt::from_cot(bits[1], rbs[1], a2 == 0, tweak + 1),
            ]
        };
        ClassSumsReceipt {
            fanout,
            withheld,
            receipts,
            tweak,
        }
    }

    fn corrections(&self) -> impl Iterator<Item = bool> + '_ {
        self.receipts.iter().map(|r| r.correction)
    }

    fn decode(&self, ct: &[Block], ot_prg: &mut Prg) -> Result<Vec<(usize, Block)>> {
        if self.fanout == 2 {
            let k = self.receipts[0].decode(ct[0], ct[1]);
            return Ok(vec![(1 - self.withheld, k)]);
        }
        let mini_id = mini_tree_id(self.tweak);
        let mut mini = PuncturedTree::new(2, 2, self.withheld, mini_id)?;
        for lvl in 1..=2 {
            let r = &self.receipts[lvl - 1];
            let k = r.decode(ct[2 * (lvl - 1)], ct[2 * (lvl - 1) + 1]);
            let class = 1 - mini.path_digit(lvl);
            reconstruct_level(&mut mini, lvl, &[(class, k)], ot_prg)?;
        }
        let q = mini.leaves();
        Ok((0..4)
            .filter(|&j| j != self.withheld)
            .map(|j| (j, ct[4 + j] ^ crhf(q[j], mask_tweak(mini_id, j))))
            .collect())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Malformed(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

/// Runs batches of SPCOTs on one channel and accounts PRG work.
///
/// `tree_prg` counts only the main-tree expansions; mini-tree expansions
/// for 3-of-4 OTs are tallied separately.
#[derive(Clone, Debug)]
pub struct Spcot {
    params: SpcotParams,
    tree_prg: Prg,
    ot_prg: Prg,
    cots: usize,
}

impl Spcot {
    pub fn new(params: SpcotParams) -> Self {
        Spcot {
            params,
            tree_prg: Prg::new(params.kind),
            ot_prg: Prg::new(params.kind.binary()),
            cots: 0,
        }
    }

    pub fn params(&self) -> &SpcotParams {
        &self.params
    }

    pub fn tree_counter(&self) -> PrgCounter {
        self.tree_prg.counter()
    }

    pub fn ot_counter(&self) -> PrgCounter {
        self.ot_prg.counter()
    }

    pub fn cots_consumed(&self) -> usize {
        self.cots
    }

    /// Sender side for `roots.len()` trees. Tree `j` uses the COTs
    /// `j*log2(ell) ..` of the consumed range. `ot_seed` keys the mini-trees.
    pub fn send_batch(
        &mut self,
        ch: &mut dyn Channel,
        pool: &mut SenderCotPool,
        roots: &[Block],
        ot_seed: Block,
    ) -> Result<Vec<SpcotSenderOutput>> {
        let p = self.params;
        let t = roots.len();
        let per_tree = p.cots_per_tree();
        let per_level = p.ots_per_level();
        let delta = pool.delta();
        let cots = pool.take(t * per_tree)?.to_vec();
        self.cots += cots.len();

        let mut levels: Vec<Vec<Block>> = roots.iter().map(|&r| vec![r]).collect();
        let mut ct = Vec::with_capacity(t * p.ciphertexts_per_level());
        for level in 1..=p.depth {
            for (j, nodes) in levels.iter_mut().enumerate() {
                *nodes = expand_level(nodes, p.fanout, level - 1, j as u32, &mut self.tree_prg);
            }
            let payload = ch.recv_expect(MsgType::LevelOtCorr)?;
            let corr = unpack_bits(&payload, t * per_level)
                .ok_or_else(|| Error::Malformed("correction frame length".into()))?;
            ct.clear();
            for (j, nodes) in levels.iter().enumerate() {
                let sums = class_sums(nodes, p.fanout);
                let first = j * per_tree + (level - 1) * per_level;
                class_sums_encrypt(
                    &sums,
                    &cots[first..first + per_level],
                    &corr[j * per_level..(j + 1) * per_level],
                    delta,
                    ot_seed,
                    first as u64,
                    &mut self.ot_prg,
                    &mut ct,
                )?;
            }
            let mut buf = Vec::with_capacity(ct.len() * Block::BYTES);
            write_blocks(&mut buf, &ct);
            ch.send(MsgType::LevelOtCt, &buf)?;
        }
        let psi: Vec<Block> = levels
            .iter()
            .map(|leaves| delta.block() ^ Block::xor_all(leaves.iter().copied()))
            .collect();
        let mut buf = Vec::with_capacity(t * Block::BYTES);
        write_blocks(&mut buf, &psi);
        ch.send(MsgType::Psi, &buf)?;
        Ok(levels.into_iter().map(|w| SpcotSenderOutput { w }).collect())
    }

    /// Receiver side, tree `j` punctured at `alphas[j]`.
    pub fn receive_batch(
        &mut self,
        ch: &mut dyn Channel,
        pool: &mut ReceiverCotPool,
        alphas: &[usize],
    ) -> Result<Vec<SpcotReceiverOutput>> {
        let p = self.params;
        let t = alphas.len();
        let per_tree = p.cots_per_tree();
        let per_level = p.ots_per_level();
        let mut trees = alphas
            .iter()
            .enumerate()
            .map(|(j, &a)| PuncturedTree::new(p.fanout, p.depth, a, j as u32))
            .collect::<Result<Vec<_>>>()?;
        let (bits, rbs) = pool.take(t * per_tree)?;
        let (bits, rbs) = (bits.to_vec(), rbs.to_vec());
        self.cots += bits.len();

        let ct_per_tree = p.ciphertexts_per_level();
        for level in 1..=p.depth {
            let receipts: Vec<ClassSumsReceipt> = trees
                .iter()
                .enumerate()
                .map(|(j, tree)| {
                    let first = j * per_tree + (level - 1) * per_level;
                    ClassSumsReceipt::new(
                        p.fanout,
                        tree.path_digit(level),
                        &bits[first..first + per_level],
                        &rbs[first..first + per_level],
                        first as u64,
                    )
                })
                .collect();
            let corr: Vec<bool> = receipts.iter().flat_map(|r| r.corrections()).collect();
            ch.send(MsgType::LevelOtCorr, &pack_bits(&corr))?;

            let payload = ch.recv_expect(MsgType::LevelOtCt)?;
            let ct = read_blocks(&payload).ok_or_else(|| Error::Malformed("ciphertext frame length".into()))?;
            check_len("ciphertext blocks", ct.len(), t * ct_per_tree)?;
            for (j, (tree, r)) in trees.iter_mut().zip(&receipts).enumerate() {
                let received = r.decode(&ct[j * ct_per_tree..(j + 1) * ct_per_tree], &mut self.ot_prg)?;
                reconstruct_level(tree, level, &received, &mut self.tree_prg)?;
            }
        }
        let payload = ch.recv_expect(MsgType::Psi)?;
        let psi = read_blocks(&payload).ok_or_else(|| Error::Malformed("psi frame length".into()))?;
        check_len("psi values", psi.len(), t)?;
        trees
            .into_iter()
            .zip(psi)
            .map(|(tree, psi)| {
                let alpha = tree.alpha();
                let punctured = recover_punctured_leaf(&tree, psi)?;
                let mut v = tree.into_leaves();
                v[alpha] = punctured;
                Ok(SpcotReceiverOutput { alpha, v })
            })
            .collect()
    }
}

/// One SPCOT, sender side.
pub fn spcot_send(
    ch: &mut dyn Channel,
    pool: &mut SenderCotPool,
    params: SpcotParams,
    seed: Block,
) -> Result<SpcotSenderOutput> {
    let mut s = Spcot::new(params);
    let ot_seed = derive_seed(seed, u64::MAX);
    Ok(s.send_batch(ch, pool, &[seed], ot_seed)?.remove(0))
}

/// One SPCOT, receiver side.
pub fn spcot_receive(
    ch: &mut dyn Channel,
    pool: &mut ReceiverCotPool,
    params: SpcotParams,
    alpha: usize,
) -> Result<SpcotReceiverOutput> {
    let mut s = Spcot::new(params);
    Ok(s.receive_batch(ch, pool, &[alpha])?.remove(0))
}

/// Stand-alone (m-1)-of-m OT of one level's class sums, sender side.
/// Consumes `log2(m)` COTs.
pub fn oblivious_class_sums_send(
    ch: &mut dyn Channel,
    pool: &mut SenderCotPool,
    sums: &LevelSums,
    ot_seed: Block,
    tweak: u64,
    ot_prg: &mut Prg,
) -> Result<()> {
    let m = sums.sums.len();
    if m != 2 && m != 4 {
        return Err(Error::Config(format!("fanout {m} not in {{2, 4}}")));
    }
    let n = m.trailing_zeros() as usize;
    let delta = pool.delta();
    let r0s = pool.take(n)?.to_vec();
    let corr = unpack_bits(&ch.recv_expect(MsgType::LevelOtCorr)?, n)
        .ok_or_else(|| Error::Malformed("correction frame length".into()))?;
    let mut ct = Vec::new();
    class_sums_encrypt(&sums.sums, &r0s, &corr, delta, ot_seed, tweak, ot_prg, &mut ct)?;
    let mut buf = Vec::new();
    write_blocks(&mut buf, &ct);
    ch.send(MsgType::LevelOtCt, &buf)
}

/// Receiver side: returns the sums of every class except `withheld`.
pub fn oblivious_class_sums_receive(
    ch: &mut dyn Channel,
    pool: &mut ReceiverCotPool,
    fanout: usize,
    withheld: usize,
    tweak: u64,
    ot_prg: &mut Prg,
) -> Result<Vec<(usize, Block)>> {
    if fanout != 2 && fanout != 4 {
        return Err(Error::Config(format!("fanout {fanout} not in {{2, 4}}")));
    }
    if withheld >= fanout {
        return Err(Error::Config(format!("class {withheld} out of range")));
    }
    let n = fanout.trailing_zeros() as usize;
    let (bits, rbs) = pool.take(n)?;
    let r = ClassSumsReceipt::new(fanout, withheld, bits, rbs, tweak);
    ch.send(MsgType::LevelOtCorr, &pack_bits(&r.corrections().collect::<Vec<_>>()))?;
    let ct = read_blocks(&ch.recv_expect(MsgType::LevelOtCt)?)
        .ok_or_else(|| Error::Malformed("ciphertext frame length".into()))?;
    check_len("ciphertext blocks", ct.len(), if fanout == 2 { 2 } else { 8 })?;
    r.decode(&ct, ot_prg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::dealer_generate;
    use crate::transport::{loopback_mux, Session};
    use std::thread;

    fn delta() -> Delta {
        Delta::new(Block(0x0f0f_1234_5678_9abc_def0_1111_2222_3333)).unwrap()
    }

    fn sessions() -> (Session, Session) {
        let (a, b) = loopback_mux();
        (a.open_session(1).unwrap(), b.open_session(1).unwrap())
    }

    /// Runs one batch jointly and returns outputs plus both channels' byte
    /// counts and the sender's driver.
    fn run(
        params: SpcotParams,
        roots: Vec<Block>,
        alphas: Vec<usize>,
        d: Delta,
    ) -> (Vec<SpcotSenderOutput>, Vec<SpcotReceiverOutput>, Spcot, Spcot, u64) {
        let (mut sp, mut rp) = dealer_generate(roots.len() * params.cots_per_tree() + 3, d, Block(11)).unwrap();
        let (mut cs, mut cr) = sessions();
        let h = thread::spawn(move || {
            let mut s = Spcot::new(params);
            let out = s.send_batch(&mut cs, &mut sp, &roots, Block(77)).unwrap();
            assert_eq!(sp.remaining(), 3);
            (out, s, cs.bytes_sent())
        });
        let mut r = Spcot::new(params);
        let v = r.receive_batch(&mut cr, &mut rp, &alphas).unwrap();
        assert_eq!(rp.remaining(), 3);
        let (w, s, sent) = h.join().unwrap();
        (w, v, s, r, sent + cr.bytes_sent())
    }

    fn check(w: &SpcotSenderOutput, v: &SpcotReceiverOutput, d: Delta) {
        assert_eq!(w.w.len(), v.v.len());
        for i in 0..w.w.len() {
            if i == v.alpha {
                assert_eq!(w.w[i], v.v[i] ^ d.block());
            } else {
                assert_eq!(w.w[i], v.v[i]);
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(SpcotParams::new(64, 4, PrgKind::STREAM).is_ok());
        assert!(SpcotParams::new(32, 4, PrgKind::STREAM).is_err());
        assert!(SpcotParams::new(16, 4, PrgKind::DoubleFixedKey).is_err());
        assert!(SpcotParams::new(16, 3, PrgKind::STREAM).is_err());
        let p = SpcotParams::new(4096, 4, PrgKind::STREAM).unwrap();
        assert_eq!((p.depth(), p.cots_per_tree()), (6, 12));
        let p = SpcotParams::new(4096, 2, PrgKind::STREAM).unwrap();
        assert_eq!((p.depth(), p.cots_per_tree()), (12, 12));
    }

    #[test]
    fn four_leaf_binary_walkthrough() {
        // alpha = 1: the receiver learns s^2_0, s^2_2, s^2_3 and v[1] = s^2_1 ^ delta
        let p = SpcotParams::new(4, 2, PrgKind::DoubleFixedKey).unwrap();
        let (w, v, s, _, _) = run(p, vec![Block(5)], vec![1], delta());
        let mut prg = Prg::new(PrgKind::DoubleFixedKey);
        let tree = expand_full_tree(Block(5), 2, 2, 0, &mut prg).unwrap();
        assert_eq!(w[0].w, tree.leaves());
        assert_eq!(v[0].v[1], tree.leaves()[1] ^ delta().block());
        assert_eq!(s.cots_consumed(), 2);
        assert_eq!(s.tree_counter().calls, 6);
    }

    #[test]
    fn transcript_shape() {
        // one level message pair per tree level, then psi
        for (m, rounds) in [(2usize, 2usize), (4, 1)] {
            let p = SpcotParams::new(4, m, PrgKind::STREAM).unwrap();
            let (mut sp, mut rp) = dealer_generate(2, delta(), Block(1)).unwrap();
            let (a, b) = loopback_mux();
            let mut cs = a.open_session(1).unwrap();
            let mut cr = b.open_session(1).unwrap();
            // records every frame type the receiver sees
            struct Tap<'a>(&'a mut Session, Vec<MsgType>);
            impl Channel for Tap<'_> {
                fn send(&mut self, t: MsgType, p: &[u8]) -> Result<()> {
                    self.1.push(t);
                    self.0.send(t, p)
                }
                fn recv(&mut self) -> Result<(MsgType, Vec<u8>)> {
                    let f = self.0.recv()?;
                    self.1.push(f.0);
                    Ok(f)
                }
                fn bytes_sent(&self) -> u64 {
                    self.0.bytes_sent()
                }
                fn bytes_received(&self) -> u64 {
                    self.0.bytes_received()
                }
            }
            let h = thread::spawn(move || spcot_send(&mut cs, &mut sp, p, Block(9)).map(|_| sp.consumed()));
            let mut tap = Tap(&mut cr, Vec::new());
            spcot_receive(&mut tap, &mut rp, p, 2).unwrap();
            let mut expected = Vec::new();
            for _ in 0..rounds {
                expected.extend([MsgType::LevelOtCorr, MsgType::LevelOtCt]);
            }
            expected.push(MsgType::Psi);
            assert_eq!(tap.1, expected, "m={m}");
            assert_eq!(h.join().unwrap().unwrap(), 2);
            assert_eq!(rp.consumed(), 2);
        }
    }

    #[test]
    fn exhaustive_alpha_sixty_four_leaves() {
        for (m, kind) in [(2, PrgKind::DoubleFixedKey), (2, PrgKind::STREAM), (4, PrgKind::STREAM), (4, PrgKind::QuadFixedKey)] {
            let p = SpcotParams::new(64, m, kind).unwrap();
            let roots: Vec<Block> = (0..64).map(|j| Block(1000 + j)).collect();
            let alphas: Vec<usize> = (0..64).collect();
            let (w, v, s, r, _) = run(p, roots, alphas, delta());
            for (j, (w, v)) in w.iter().zip(&v).enumerate() {
                assert_eq!(v.alpha, j);
                check(w, v, delta());
            }
            assert_eq!(s.cots_consumed(), 64 * 6);
            assert_eq!(r.cots_consumed(), 64 * 6);
        }
    }

    #[test]
    fn four_ary_sixteen_leaves_one_hot() {
        let p = SpcotParams::new(16, 4, PrgKind::STREAM).unwrap();
        let (_, v, _, _, _) = run(p, (0..16).map(Block).collect(), (0..16).collect(), delta());
        for (a, out) in v.iter().enumerate() {
            let u = out.u();
            assert_eq!(u.iter().position(|&b| b), Some(a));
            assert_eq!(u.iter().filter(|&&b| b).count(), 1);
        }
    }

    #[test]
    fn zero_delta_gives_equal_vectors() {
        let z = Delta::new_unchecked(Block::ZERO);
        let p = SpcotParams::new(16, 2, PrgKind::STREAM).unwrap();
        let (sp, rp) = crate::base::dealer_generate_raw(4, z, Block(2));
        let (mut sp, mut rp) = (sp, rp);
        let (mut cs, mut cr) = sessions();
        let h = thread::spawn(move || spcot_send(&mut cs, &mut sp, p, Block(3)).unwrap());
        let v = spcot_receive(&mut cr, &mut rp, p, 7).unwrap();
        assert_eq!(h.join().unwrap().w, v.v);
    }

    #[test]
    fn four_ary_sends_more_bytes_per_tree() {
        let p2 = SpcotParams::new(16, 2, PrgKind::STREAM).unwrap();
        let p4 = SpcotParams::new(16, 4, PrgKind::STREAM).unwrap();
        let (.., b2) = run(p2, vec![Block(1)], vec![3], delta());
        let (.., b4) = run(p4, vec![Block(1)], vec![3], delta());
        // level frames only: 4 x (corr + 2 blocks) vs 2 x (corr + 8 blocks)
        assert!(b4 >= b2, "{b4} < {b2}");
    }

    #[test]
    fn deterministic_transcripts() {
        let p = SpcotParams::new(64, 4, PrgKind::STREAM).unwrap();
        let a = run(p, vec![Block(4), Block(5)], vec![9, 60], delta());
        let b = run(p, vec![Block(4), Block(5)], vec![9, 60], delta());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.4, b.4);
    }

    #[test]
    fn class_sums_ot_withholds_one_class() {
        for m in [2usize, 4] {
            for withheld in 0..m {
                let sums = LevelSums {
                    level: 1,
                    sums: (0..m as u128).map(|j| Block(0xa0 + j)).collect(),
                };
                let (mut sp, mut rp) = dealer_generate(2, delta(), Block(withheld as u128)).unwrap();
                let (mut cs, mut cr) = sessions();
                let s2 = sums.clone();
                let h = thread::spawn(move || {
                    let mut prg = Prg::new(PrgKind::STREAM);
                    oblivious_class_sums_send(&mut cs, &mut sp, &s2, Block(5), 40, &mut prg).unwrap();
                    sp.consumed()
                });
                let mut prg = Prg::new(PrgKind::STREAM);
                let got = oblivious_class_sums_receive(&mut cr, &mut rp, m, withheld, 40, &mut prg).unwrap();
                let consumed = h.join().unwrap();
                assert_eq!(consumed, m.trailing_zeros() as usize);
                assert_eq!(rp.consumed(), consumed);
                assert_eq!(got.len(), m - 1);
                for (j, s) in got {
                    assert_ne!(j, withheld);
                    assert_eq!(s, sums.sums[j]);
                }
            }
        }
    }

    #[test]
    fn withheld_mini_leaf_is_needed() {
        // For m=4 the receiver's punctured mini-tree has a zero placeholder at
        // the withheld class, so unmasking that ciphertext gives garbage.
        let sums: Vec<Block> = (0..4).map(|j| Block(0x100 + j)).collect();
        let d = delta();
        let (mut sp, mut rp) = dealer_generate(2, d, Block(17)).unwrap();
        let r0s = sp.take(2).unwrap().to_vec();
        for withheld in 0..4 {
            let (bits, rbs) = (rp.bits()[..2].to_vec(), rp.blocks()[..2].to_vec());
            let r = ClassSumsReceipt::new(4, withheld, &bits, &rbs, 0);
            let corr: Vec<bool> = r.corrections().collect();
            let mut ct = Vec::new();
            let mut prg = Prg::new(PrgKind::STREAM);
            class_sums_encrypt(&sums, &r0s, &corr, d, Block(3), 0, &mut prg, &mut ct).unwrap();
            let mut rprg = Prg::new(PrgKind::STREAM);
            let got = r.decode(&ct, &mut rprg).unwrap();
            assert_eq!(got.len(), 3);
            let mut mini = PuncturedTree::new(2, 2, withheld, mini_tree_id(0)).unwrap();
            for lvl in 1..=2 {
                let k = r.receipts[lvl - 1].decode(ct[2 * (lvl - 1)], ct[2 * lvl - 1]);
                let class = 1 - mini.path_digit(lvl);
                reconstruct_level(&mut mini, lvl, &[(class, k)], &mut rprg).unwrap();
            }
            let guess = ct[4 + withheld] ^ crhf(mini.leaves()[withheld], mask_tweak(mini_tree_id(0), withheld));
            assert_ne!(guess, sums[withheld]);
            // with the sender's real leaf it opens
            let mut sprg = Prg::new(PrgKind::STREAM);
            let full = expand_full_tree(derive_seed(Block(3), 0), 2, 2, mini_tree_id(0), &mut sprg).unwrap();
            let real = ct[4 + withheld] ^ crhf(full.leaves()[withheld], mask_tweak(mini_tree_id(0), withheld));
            assert_eq!(real, sums[withheld]);
        }
        let _ = rp.take(2);
    }

    #[test]
    fn short_pool_errors() {
        let p = SpcotParams::new(16, 2, PrgKind::STREAM).unwrap();
        let (mut sp, _) = dealer_generate(3, delta(), Block(1)).unwrap();
        let (mut cs, _cr) = sessions();
        assert!(matches!(
            spcot_send(&mut cs, &mut sp, p, Block(1)),
            Err(Error::PoolExhausted { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn malformed_ciphertext_frame_rejected() {
        let p = SpcotParams::new(4, 2, PrgKind::STREAM).unwrap();
        let (_, mut rp) = dealer_generate(2, delta(), Block(1)).unwrap();
        let (mut cs, mut cr) = sessions();
        let h = thread::spawn(move || {
            cs.recv().unwrap();
            cs.send(MsgType::LevelOtCt, &[0u8; 16]).unwrap();
        });
        assert!(matches!(spcot_receive(&mut cr, &mut rp, p, 1), Err(Error::Malformed(_))));
        h.join().unwrap();
    }
}
