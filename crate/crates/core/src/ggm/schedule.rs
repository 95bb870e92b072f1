//! Cycle-level model of a pipelined PRG core expanding many trees.
//!
//! The core accepts one node expansion per cycle and returns its children
//! `pipeline_depth` cycles later. A child can only be expanded once its
//! parent's output is back, so a single tree leaves the pipeline mostly
//! idle near the root. Interleaving trees fills those bubbles.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeShape {
    pub fanout: usize,
    pub depth: usize,
}

impl TreeShape {
    pub fn new(fanout: usize, depth: usize) -> Self {
        TreeShape { fanout, depth }
    }

    /// Number of internal nodes, i.e. PRG invocations for one tree.
    pub fn expansions(&self) -> u64 {
        (0..self.depth).map(|l| (self.fanout as u64).pow(l as u32)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExpansionPolicy {
    /// Deepest ready node first, then lowest tree, then lowest index.
    #[default]
    Hybrid,
    /// Shallowest ready node first.
    BreadthFirst,
    /// One tree at a time in preorder, stalling until each input is ready.
    DepthFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpansionStep {
    pub tree: usize,
    pub level: usize,
    pub index: usize,
    pub cycle: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ExpansionSchedule {
    pub steps: Vec<ExpansionStep>,
    /// Idle cycles between the first and the last issue.
    pub stalls: u64,
    pub pipeline_depth: usize,
}

impl ExpansionSchedule {
    /// Issued expansions over busy-plus-idle cycles. An empty schedule
    /// counts as fully utilized.
    pub fn utilization(&self) -> f64 {
        let issued = self.steps.len() as u64;
        if issued == 0 {
            return 1.0;
        }
        issued as f64 / (issued + self.stalls) as f64
    }

    /// Cycle at which the last output leaves the pipeline.
    pub fn makespan(&self) -> u64 {
        self.steps
            .last()
            .map_or(0, |s| s.cycle + self.pipeline_depth as u64)
    }
}

pub fn schedule_expansion(trees: &[TreeShape], pipeline_depth: usize) -> ExpansionSchedule {
    schedule_with_policy(trees, pipeline_depth, ExpansionPolicy::Hybrid)
}

type Node = (usize, usize, usize);
type Key = (usize, usize, usize);

pub fn schedule_with_policy(
    trees: &[TreeShape],
    pipeline_depth: usize,
    policy: ExpansionPolicy,
) -> ExpansionSchedule {
    let latency = pipeline_depth.max(1) as u64;
    match policy {
        ExpansionPolicy::DepthFirst => in_order(trees, latency, pipeline_depth),
        ExpansionPolicy::Hybrid => greedy(trees, latency, pipeline_depth, |(t, l, i)| {
            (usize::MAX - l, t, i)
        }),
        ExpansionPolicy::BreadthFirst => greedy(trees, latency, pipeline_depth, |(t, l, i)| (l, t, i)),
    }
}

/// Issues the lowest-keyed ready node every cycle.
fn greedy(
    trees: &[TreeShape],
    latency: u64,
    pipeline_depth: usize,
    key: impl Fn(Node) -> Key,
) -> ExpansionSchedule {
    let mut out = ExpansionSchedule {
        pipeline_depth,
        ..Default::default()
    };
    let mut ready: BinaryHeap<Reverse<(Key, Node)>> = BinaryHeap::new();
    let mut in_flight: VecDeque<(u64, Node)> = VecDeque::new();
    for (t, shape) in trees.iter().enumerate() {
        if shape.depth > 0 {
            let n = (t, 0, 0);
            ready.push(Reverse((key(n), n)));
        }
    }
    let mut cycle = 0u64;
    while !ready.is_empty() || !in_flight.is_empty() {
        while let Some(&(at, n)) = in_flight.front() {
            if at > cycle {
                break;
            }
            in_flight.pop_front();
            ready.push(Reverse((key(n), n)));
        }
        match ready.pop() {
            Some(Reverse((_, (t, l, i)))) => {
                out.steps.push(ExpansionStep {
                    tree: t,
                    level: l,
                    index: i,
                    cycle,
                });
                let shape = trees[t];
                if l + 1 < shape.depth {
                    for c in 0..shape.fanout {
                        in_flight.push_back((cycle + latency, (t, l + 1, i * shape.fanout + c)));
                    }
                }
                cycle += 1;
            }
            None => {
                // nothing ready: jump to the next arrival
                let next = in_flight.front().map_or(cycle, |&(at, _)| at);
                out.stalls += next - cycle;
                cycle = next;
            }
        }
    }
    out
}

fn in_order(trees: &[TreeShape], latency: u64, pipeline_depth: usize) -> ExpansionSchedule {
    let mut out = ExpansionSchedule {
        pipeline_depth,
        ..Default::default()
    };
    let mut cycle = 0u64;
    for (t, shape) in trees.iter().enumerate() {
        if shape.depth == 0 {
            continue;
        }
        // finished[l]: when the latest level-l node's children become ready.
        // In preorder that node is always the parent of the next level-l+1 step.
        let mut finished = vec![0u64; shape.depth + 1];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((l, i)) = stack.pop() {
            let ready_at = if l == 0 { cycle } else { finished[l - 1] };
            if ready_at > cycle {
                if !out.steps.is_empty() {
                    out.stalls += ready_at - cycle;
                }
                cycle = ready_at;
            }
            out.steps.push(ExpansionStep {
                tree: t,
                level: l,
                index: i,
                cycle,
            });
            finished[l] = cycle + latency;
            cycle += 1;
            if l + 1 < shape.depth {
                for c in (0..shape.fanout).rev() {
                    stack.push((l + 1, i * shape.fanout + c));
                }
            }
        }
    }
    out
}
