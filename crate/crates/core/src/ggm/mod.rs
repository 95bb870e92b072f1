//! m-ary GGM trees: full expansion, per-level class sums, and punctured
//! reconstruction.
//!
//! Nodes at level `i` are indexed `0..m^i`; the children of node `p` are
//! `p*m .. p*m + m`, so a node's class is its index modulo `m`. The receiver
//! of a punctured tree knows every node except those on the path to leaf
//! `alpha`, whose base-m digits select one class per level.

mod schedule;

pub use schedule::{
    schedule_expansion, schedule_with_policy, ExpansionPolicy, ExpansionSchedule, ExpansionStep,
    TreeShape,
};

use crate::block::Block;
use crate::error::{Error, Result};
use crate::prg::Prg;

const INDEX_BITS: u32 = 24;

/// 64-bit node tweak: `tree_id:32 | level:8 | node_index:24`.
#[inline]
pub fn node_tweak(tree_id: u32, level: usize, index: usize) -> u64 {
    debug_assert!(level < 256);
    debug_assert!(index < 1 << INDEX_BITS);
    (tree_id as u64) << 32 | (level as u64) << INDEX_BITS | index as u64
}

/// Checks a (fanout, depth) pair and returns the leaf count.
pub fn leaf_count(fanout: usize, depth: usize) -> Result<usize> {
    if fanout != 2 && fanout != 4 {
        return Err(Error::Config(format!("fanout {fanout} not in {{2, 4}}")));
    }
    if depth == 0 {
        return Err(Error::Config("tree depth must be at least 1".into()));
    }
    let internal = fanout
        .checked_pow(depth as u32 - 1)
        .filter(|&n| n <= 1 << INDEX_BITS)
        .ok_or_else(|| Error::Config(format!("depth {depth} too large for fanout {fanout}")))?;
    Ok(internal * fanout)
}

/// Depth of an m-ary tree with exactly `leaves` leaves, if `leaves` is a
/// positive power of `fanout`.
pub fn depth_for(fanout: usize, leaves: usize) -> Option<usize> {
    if fanout < 2 || leaves < fanout {
        return None;
    }
    let mut n = 1usize;
    let mut depth = 0;
    while n < leaves {
        n = n.checked_mul(fanout)?;
        depth += 1;
    }
    (n == leaves).then_some(depth)
}

fn check_prg(prg: &Prg, fanout: usize) -> Result<()> {
    if !prg.kind().supports_fanout(fanout) {
        return Err(Error::Config(format!(
            "PRG {} cannot expand a {fanout}-ary tree",
            prg.kind().name()
        )));
    }
    Ok(())
}

/// A fully expanded tree as held by the sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GgmTree {
    fanout: usize,
    depth: usize,
    levels: Vec<Vec<Block>>,
}

impl GgmTree {
    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level(&self, level: usize) -> &[Block] {
        &self.levels[level]
    }

    pub fn leaves(&self) -> &[Block] {
        &self.levels[self.depth]
    }

    pub fn into_leaves(mut self) -> Vec<Block> {
        self.levels.pop().unwrap_or_default()
    }
}

/// Expands one parent level into the next.
pub(crate) fn expand_level(parents: &[Block], fanout: usize, level: usize, tree_id: u32, prg: &mut Prg) -> Vec<Block> {
    let mut children = Vec::with_capacity(parents.len() * fanout);
    for (idx, &node) in parents.iter().enumerate() {
        let out = prg.expand(node, node_tweak(tree_id, level, idx));
        children.extend_from_slice(&out.as_slice()[..fanout]);
    }
    children
}

/// Expands the whole tree rooted at `seed`.
pub fn expand_full_tree(
    seed: Block,
    fanout: usize,
    depth: usize,
    tree_id: u32,
    prg: &mut Prg,
) -> Result<GgmTree> {
    leaf_count(fanout, depth)?;
    check_prg(prg, fanout)?;
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(vec![seed]);
    for level in 0..depth {
        let next = expand_level(&levels[level], fanout, level, tree_id, prg);
        levels.push(next);
    }
    Ok(GgmTree {
        fanout,
        depth,
        levels,
    })
}

/// Expands a cohort of trees level by level: every tree's level `i` is
/// produced before any tree's level `i + 1`.
pub fn expand_cohort(
    roots: &[(u32, Block)],
    fanout: usize,
    depth: usize,
    prg: &mut Prg,
) -> Result<Vec<GgmTree>> {
    leaf_count(fanout, depth)?;
    check_prg(prg, fanout)?;
    let mut trees: Vec<Vec<Vec<Block>>> = roots.iter().map(|&(_, s)| vec![vec![s]]).collect();
    for level in 0..depth {
        for (levels, &(tree_id, _)) in trees.iter_mut().zip(roots) {
            let next = expand_level(&levels[level], fanout, level, tree_id, prg);
            levels.push(next);
        }
    }
    Ok(trees
        .into_iter()
        .map(|levels| GgmTree {
            fanout,
            depth,
            levels,
        })
        .collect())
}

/// XOR of the nodes of one level, split by class (index mod m).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSums {
    pub level: usize,
    pub sums: Vec<Block>,
}

impl LevelSums {
    pub fn total(&self) -> Block {
        Block::xor_all(self.sums.iter().copied())
    }
}

/// `sums[j]` is the XOR of every node whose index is congruent to `j` mod
/// `fanout`.
pub fn class_sums(nodes: &[Block], fanout: usize) -> Vec<Block> {
    let mut sums = vec![Block::ZERO; fanout];
    for chunk in nodes.chunks(fanout) {
        for (s, &n) in sums.iter_mut().zip(chunk) {
            *s ^= n;
        }
    }
    sums
}

pub fn level_class_sums(tree: &GgmTree, level: usize) -> Result<LevelSums> {
    if level == 0 || level > tree.depth {
        return Err(Error::LevelOutOfRange {
            level,
            depth: tree.depth,
        });
    }
    Ok(LevelSums {
        level,
        sums: class_sums(&tree.levels[level], tree.fanout),
    })
}

/// The receiver's view of a tree punctured at leaf `alpha`.
///
/// Unknown nodes are stored as zero. Levels are filled in one at a time by
/// [`reconstruct_level`].
#[derive(Clone, Debug)]
pub struct PuncturedTree {
    fanout: usize,
    depth: usize,
    tree_id: u32,
    alpha: usize,
    /// Base-m digits of alpha, most significant first.
    path: Vec<usize>,
    levels: Vec<Vec<Block>>,
}

impl PuncturedTree {
    pub fn new(fanout: usize, depth: usize, alpha: usize, tree_id: u32) -> Result<Self> {
        let leaves = leaf_count(fanout, depth)?;
        if alpha >= leaves {
            return Err(Error::Config(format!("alpha {alpha} out of range 0..{leaves}")));
        }
        let mut path = vec![0; depth];
        let mut rest = alpha;
        for digit in path.iter_mut().rev() {
            *digit = rest % fanout;
            rest /= fanout;
        }
        Ok(PuncturedTree {
            fanout,
            depth,
            tree_id,
            alpha,
            path,
            levels: vec![vec![Block::ZERO]],
        })
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    /// Digit `alpha_level` (1-based level), the class withheld at `level`.
    pub fn path_digit(&self, level: usize) -> usize {
        self.path[level - 1]
    }

    /// Index of the single unknown node at `level`.
    pub fn unknown_index(&self, level: usize) -> usize {
        self.path[..level]
            .iter()
            .fold(0, |acc, &d| acc * self.fanout + d)
    }

    /// Number of levels reconstructed so far.
    pub fn reconstructed(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, level: usize) -> &[Block] {
        &self.levels[level]
    }

    /// Leaves, with the punctured leaf as zero. Only meaningful once every
    /// level has been reconstructed.
    pub fn leaves(&self) -> &[Block] {
        &self.levels[self.levels.len() - 1]
    }

    pub fn into_leaves(mut self) -> Vec<Block> {
        self.levels.pop().unwrap_or_default()
    }
}

/// Reconstructs `level` from the class sums of every class except the
/// withheld one (`alpha_level`).
///
/// Known parents are expanded with the PRG. For each received class `j`, the
/// child of the unknown parent in class `j` equals the received sum XOR every
/// other class-`j` node on the level.
pub fn reconstruct_level(
    partial: &mut PuncturedTree,
    level: usize,
    received: &[(usize, Block)],
    prg: &mut Prg,
) -> Result<()> {
    let m = partial.fanout;
    if level == 0 || level > partial.depth {
        return Err(Error::LevelOutOfRange {
            level,
            depth: partial.depth,
        });
    }
    if level != partial.reconstructed() + 1 {
        return Err(Error::Config(format!(
            "level {level} requested but {} levels reconstructed",
            partial.reconstructed()
        )));
    }
    check_prg(prg, m)?;
    if received.len() != m - 1 {
        return Err(Error::Malformed(format!(
            "expected {} class sums, got {}",
            m - 1,
            received.len()
        )));
    }
    let withheld = partial.path_digit(level);
    let mut seen = vec![false; m];
    for &(class, _) in received {
        if class >= m || class == withheld || seen[class] {
            return Err(Error::Malformed(format!(
                "class label {class} invalid or repeated (withheld class {withheld})"
            )));
        }
        seen[class] = true;
    }

    let unknown_parent = partial.unknown_index(level - 1);
    let parents = &partial.levels[level - 1];
    let mut nodes = Vec::with_capacity(parents.len() * m);
    for (idx, &node) in parents.iter().enumerate() {
        if idx == unknown_parent {
            nodes.extend(std::iter::repeat_n(Block::ZERO, m));
        } else {
            let out = prg.expand(node, node_tweak(partial.tree_id, level - 1, idx));
            nodes.extend_from_slice(&out.as_slice()[..m]);
        }
    }
    let known = class_sums(&nodes, m);
    for &(class, sum) in received {
        nodes[unknown_parent * m + class] = sum ^ known[class];
    }
    partial.levels.push(nodes);
    Ok(())
}

/// Recovers `leaf_alpha ^ delta` from `psi = delta ^ (XOR of all leaves)`.
pub fn recover_punctured_leaf(partial: &PuncturedTree, psi: Block) -> Result<Block> {
    if partial.reconstructed() != partial.depth {
        return Err(Error::Config(format!(
            "{} of {} levels reconstructed; more than one leaf unknown",
            partial.reconstructed(),
            partial.depth
        )));
    }
    Ok(psi ^ Block::xor_all(partial.leaves().iter().copied()))
}
