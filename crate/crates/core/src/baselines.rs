//! Classical solvers: greedy, CELF lazy greedy, stochastic greedy, and an
//! exact branch-and-bound optimum for max coverage.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand::seq::index;

use crate::error::{GcombError, Result};
use crate::fmt;
use crate::graph::{Graph, Side};
use crate::objectives::{Objective, ObjectiveSpec};
use crate::seed;

/// Header matching [`SolveResult::csv_row`].
pub const SOLVE_CSV_HEADER: &str = "method,dataset,b,objective,evals,seconds";

/// Default search-node budget for [`exact_mcp`].
pub const EXACT_MAX_NODES: u64 = 50_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    /// Picks in selection order.
    pub solution: Vec<usize>,
    pub objective: f64,
    /// Marginal-gain evaluations performed.
    pub evals: u64,
    pub wall_time: f64,
    /// Set when the budget exceeded the candidate count and was clamped.
    pub truncated: bool,
}

impl SolveResult {
    pub fn csv_row(&self, method: &str, dataset: &str, b: usize) -> String {
        format!(
            "{method},{dataset},{b},{},{},{}",
            fmt::real(self.objective),
            self.evals,
            fmt::real(self.wall_time)
        )
    }
}

fn clamp_budget(b: usize, available: usize) -> (usize, bool) {
    if b > available {
        (available, true)
    } else {
        (b, false)
    }
}

/// Plain greedy: `b` rounds, each adding the candidate of largest marginal
/// gain (smallest id on ties).
pub fn greedy(obj: &Objective, b: usize) -> Result<SolveResult> {
    let start = Instant::now();
    let candidates = obj.candidates();
    let (b, truncated) = clamp_budget(b, candidates.len());
    let mut state = obj.empty_state();
    let mut evals = 0u64;
    for _ in 0..b {
        let mut best: Option<(f64, usize)> = None;
        for &v in &candidates {
            if state.contains(v) {
                continue;
            }
            let g = obj.gain_unchecked(&state, v);
            evals += 1;
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, v));
            }
        }
        let (_, v) = best.expect("budget clamped to candidate count");
        obj.insert(&mut state, v)?;
    }
    Ok(SolveResult {
        objective: obj.value(&state),
        solution: state.picks().to_vec(),
        evals,
        wall_time: start.elapsed().as_secs_f64(),
        truncated,
    })
}

#[derive(Debug)]
struct Bound {
    gain: f64,
    node: usize,
    round: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    // Max-heap order: larger gain first, then smaller node id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// CELF lazy greedy. Relies on submodularity: a stale gain is an upper bound
/// on the current one, so a refreshed heap top is the greedy choice. With the
/// same tie-breaking it returns exactly the greedy sequence.
pub fn celf(obj: &Objective, b: usize) -> Result<SolveResult> {
    let start = Instant::now();
    let candidates = obj.candidates();
    let (b, truncated) = clamp_budget(b, candidates.len());
    let mut state = obj.empty_state();
    let mut evals = 0u64;
    let mut heap: BinaryHeap<Bound> = BinaryHeap::with_capacity(candidates.len());
    if b > 0 {
        for &v in &candidates {
            heap.push(Bound {
                gain: obj.gain_unchecked(&state, v),
                node: v,
                round: 0,
            });
            evals += 1;
        }
    }
    for round in 0..b {
        while let Some(mut top) = heap.pop() {
            if top.round == round {
                obj.insert(&mut state, top.node)?;
                break;
            }
            top.gain = obj.gain_unchecked(&state, top.node);
            top.round = round;
            evals += 1;
            heap.push(top);
        }
    }
    Ok(SolveResult {
        objective: obj.value(&state),
        solution: state.picks().to_vec(),
        evals,
        wall_time: start.elapsed().as_secs_f64(),
        truncated,
    })
}

/// Number of candidates stochastic greedy evaluates per round:
/// `⌈(n / b) · ln(1/ε)⌉`, at least 1.
pub fn stochastic_sample_size(candidates: usize, b: usize, epsilon: f64) -> usize {
    if b == 0 {
        return 0;
    }
    let s = (candidates as f64 / b as f64 * (1.0 / epsilon).ln()).ceil();
    (s as usize).max(1)
}

/// Stochastic greedy: each round evaluates a uniform random subset of the
/// remaining candidates and adds its best member.
pub fn stochastic_greedy(obj: &Objective, b: usize, epsilon: f64, seed: u64) -> Result<SolveResult> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GcombError::domain(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let start = Instant::now();
    let candidates = obj.candidates();
    let (b, truncated) = clamp_budget(b, candidates.len());
    let sample = stochastic_sample_size(candidates.len(), b, epsilon);
    let mut rng = seed::rng(seed);
    let mut state = obj.empty_state();
    let mut evals = 0u64;
    for _ in 0..b {
        let remaining: Vec<usize> = candidates.iter().copied().filter(|&v| !state.contains(v)).collect();
        let take = sample.min(remaining.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, remaining.len(), take)
            .into_iter()
            .map(|i| remaining[i])
            .collect();
        picked.sort_unstable();
        let mut best: Option<(f64, usize)> = None;
        for v in picked {
            let g = obj.gain_unchecked(&state, v);
            evals += 1;
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, v));
            }
        }
        let (_, v) = best.expect("non-empty sample");
        obj.insert(&mut state, v)?;
    }
    Ok(SolveResult {
        objective: obj.value(&state),
        solution: state.picks().to_vec(),
        evals,
        wall_time: start.elapsed().as_secs_f64(),
        truncated,
    })
}

type Bits = Vec<u64>;

struct CoverSearch {
    sets: Vec<Bits>,
    words: usize,
    best: u32,
    best_pick: Vec<usize>,
    path: Vec<usize>,
    nodes: u64,
    max_nodes: u64,
    evals: u64,
}

impl CoverSearch {
    fn fresh(&self, covered: &[u64], set: usize) -> u32 {
        covered
            .iter()
            .zip(&self.sets[set])
            .map(|(c, s)| (s & !c).count_ones())
            .sum()
    }

    // Depth-first search over combinations. At each node the residual
    // gains are sorted descending; the i-th branch may only use candidates
    // from position i on, so `covered + (sum of the k largest gains from i)`
    // bounds every completion of it.
    fn search(&mut self, covered: &[u64], count: u32, k: usize, allowed: &[usize]) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.max_nodes {
            return Err(GcombError::Refused(format!(
                "exact search exceeded {} nodes",
                self.max_nodes
            )));
        }
        if count > self.best {
            self.best = count;
            self.best_pick = self.path.clone();
        }
        if k == 0 {
            return Ok(());
        }
        let mut gains: Vec<(u32, usize)> = allowed
            .iter()
            .map(|&a| (self.fresh(covered, a), a))
            .filter(|&(g, _)| g > 0)
            .collect();
        self.evals += allowed.len() as u64;
        gains.sort_unstable_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut next = vec![0u64; self.words];
        for i in 0..gains.len() {
            let bound: u32 = count + gains[i..].iter().take(k).map(|g| g.0).sum::<u32>();
            if bound <= self.best {
                break;
            }
            let (gain, a) = gains[i];
            for (n, (c, s)) in next.iter_mut().zip(covered.iter().zip(&self.sets[a])) {
                *n = c | s;
            }
            let rest: Vec<usize> = gains[i + 1..].iter().map(|g| g.1).collect();
            self.path.push(a);
            let child = next.clone();
            self.search(&child, count + gain, k - 1, &rest)?;
            self.path.pop();
        }
        Ok(())
    }
}

/// Provably optimal max coverage by branch-and-bound, refusing once the
/// search expands more than [`EXACT_MAX_NODES`] nodes.
pub fn exact_mcp(g: &Graph, b: usize) -> Result<SolveResult> {
    exact_mcp_with_limit(g, b, EXACT_MAX_NODES)
}

pub fn exact_mcp_with_limit(g: &Graph, b: usize, max_nodes: u64) -> Result<SolveResult> {
    let start = Instant::now();
    let sides = g
        .sides()
        .ok_or_else(|| GcombError::domain("exact MCP requires a bipartite graph"))?;
    let side_a = g.side_a_nodes();
    let mut b_index = vec![usize::MAX; g.node_count()];
    let mut nb = 0;
    for v in 0..g.node_count() {
        if sides[v] == Side::B {
            b_index[v] = nb;
            nb += 1;
        }
    }
    let words = nb.div_ceil(64).max(1);
    let sets: Vec<Bits> = side_a
        .iter()
        .map(|&a| {
            let mut bits = vec![0u64; words];
            for &u in g.neighbors(a) {
                let j = b_index[u];
                bits[j / 64] |= 1 << (j % 64);
            }
            bits
        })
        .collect();
    let (b, truncated) = clamp_budget(b, side_a.len());

    let mut search = CoverSearch {
        sets,
        words,
        best: 0,
        best_pick: Vec::new(),
        path: Vec::new(),
        nodes: 0,
        max_nodes,
        evals: 0,
    };
    // Seed the incumbent with greedy so pruning starts early.
    let mut covered = vec![0u64; words];
    let mut count = 0;
    let mut pick = Vec::new();
    for _ in 0..b {
        let best = (0..search.sets.len())
            .filter(|i| !pick.contains(i))
            .map(|i| (search.fresh(&covered, i), i))
            .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
        if let Some((gain, i)) = best {
            for (c, s) in covered.iter_mut().zip(&search.sets[i]) {
                *c |= s;
            }
            count += gain;
            pick.push(i);
        }
    }
    search.best = count;
    search.best_pick = pick;
    let all: Vec<usize> = (0..search.sets.len()).collect();
    search.search(&vec![0u64; words], 0, b, &all)?;

    let mut solution: Vec<usize> = search.best_pick.iter().map(|&i| side_a[i]).collect();
    // Pad with unused candidates so the solution has exactly b nodes.
    for &a in &side_a {
        if solution.len() >= b {
            break;
        }
        if !solution.contains(&a) {
            solution.push(a);
        }
    }
    let objective = if nb == 0 { 0.0 } else { search.best as f64 / nb as f64 };
    Ok(SolveResult {
        solution,
        objective,
        evals: search.evals,
        wall_time: start.elapsed().as_secs_f64(),
        truncated,
    })
}

/// Convenience for objectives that need their own spec.
pub fn greedy_on(g: &Graph, spec: ObjectiveSpec, b: usize) -> Result<SolveResult> {
    greedy(&Objective::new(g, spec)?, b)
}
