//! Objective functions: budgeted max coverage (MCP), budgeted max vertex
//! cover (MVC) and influence maximization (IM) under Independent Cascade.
//!
//! IM spreads are Monte-Carlo estimates over live-edge worlds. Arc `a` is
//! live in simulation `i` iff `hash(world_seed, i, a) < W(a)`, so worlds
//! are a pure function of `(world_seed, i)` and serial and parallel
//! execution agree bit for bit. With common random numbers the world seed
//! is fixed, which makes the estimate an average of coverage functions and
//! hence exactly monotone and submodular.

use rayon::prelude::*;

use crate::error::{GcombError, Result};
use crate::graph::{Graph, Side};
use crate::seed;

/// Simulation count used while generating training labels.
pub const TRAIN_MC_SIMS: usize = 1000;
/// Simulation count used for final reported spreads.
pub const EVAL_MC_SIMS: usize = 10_000;
/// Largest number of probabilistic arcs [`exact_spread`] will enumerate.
pub const EXACT_SPREAD_MAX_ARCS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Mcp,
    Mvc,
    Im,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mcp => "mcp",
            ObjectiveKind::Mvc => "mvc",
            ObjectiveKind::Im => "im",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self != ObjectiveKind::Im
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = GcombError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcp" => Ok(ObjectiveKind::Mcp),
            "mvc" => Ok(ObjectiveKind::Mvc),
            "im" => Ok(ObjectiveKind::Im),
            other => Err(GcombError::domain(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Monte-Carlo simulations per IM estimate.
    pub mc_sims: usize,
    pub seed: u64,
    /// Share live-edge worlds across every IM estimate.
    pub common_random_numbers: bool,
}

impl ObjectiveSpec {
    pub fn mcp() -> Self {
        Self::new(ObjectiveKind::Mcp)
    }

    pub fn mvc() -> Self {
        Self::new(ObjectiveKind::Mvc)
    }

    pub fn im(mc_sims: usize, seed: u64) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Im,
            mc_sims,
            seed,
            common_random_numbers: true,
        }
    }

    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveSpec {
            kind,
            mc_sims: TRAIN_MC_SIMS,
            seed: 0,
            common_random_numbers: true,
        }
    }
}

/// Incremental bookkeeping for a growing solution set.
///
/// For MCP the covered universe is side B; for MVC a pick covers every
/// incident edge, so the per-node pick flags determine the covered edges and
/// `covered_count` counts them; for IM with common random numbers each
/// simulation keeps the set of nodes its world activates.
#[derive(Clone, Debug)]
pub struct CoverState {
    picks: Vec<usize>,
    chosen: Vec<bool>,
    covered: Vec<bool>,
    covered_count: usize,
    // IM only: one activation bitset per simulation.
    active: Vec<Vec<u64>>,
    active_total: u64,
}

impl CoverState {
    pub fn picks(&self) -> &[usize] {
        &self.picks
    }

    pub fn contains(&self, v: usize) -> bool {
        self.chosen[v]
    }

    pub fn covered_count(&self) -> usize {
        self.covered_count
    }

    /// Per-element covered flags (side-B nodes for MCP, picked nodes for MVC).
    pub fn covered(&self) -> &[bool] {
        &self.covered
    }
}

#[derive(Clone, Debug)]
pub struct Objective<'g> {
    g: &'g Graph,
    spec: ObjectiveSpec,
    denom: f64,
}

impl<'g> Objective<'g> {
    pub fn new(g: &'g Graph, spec: ObjectiveSpec) -> Result<Self> {
        if spec.mc_sims == 0 {
            return Err(GcombError::domain("mc_sims must be at least 1"));
        }
        let denom = match spec.kind {
            ObjectiveKind::Mcp => {
                if !g.is_bipartite() {
                    return Err(GcombError::domain("MCP requires a bipartite graph"));
                }
                g.side_b_count() as f64
            }
            ObjectiveKind::Mvc => g.edge_count() as f64,
            ObjectiveKind::Im => g.node_count() as f64,
        };
        Ok(Objective { g, spec, denom })
    }

    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    /// Nodes that may enter a solution: side A for MCP, every node otherwise.
    pub fn candidates(&self) -> Vec<usize> {
        match self.spec.kind {
            ObjectiveKind::Mcp => self.g.side_a_nodes(),
            _ => (0..self.g.node_count()).collect(),
        }
    }

    pub fn is_candidate(&self, v: usize) -> bool {
        v < self.g.node_count()
            && (self.spec.kind != ObjectiveKind::Mcp || self.g.side(v) == Some(Side::A))
    }

    fn scale(&self, raw: f64) -> f64 {
        if self.denom == 0.0 {
            0.0
        } else {
            raw / self.denom
        }
    }

    fn check_candidate(&self, v: usize) -> Result<()> {
        if v >= self.g.node_count() {
            return Err(GcombError::domain(format!("node {v} out of range")));
        }
        if !self.is_candidate(v) {
            return Err(GcombError::domain(format!("node {v} is not on side A")));
        }
        Ok(())
    }

    /// `f(S)`. Duplicate entries in `set` are ignored.
    pub fn eval(&self, set: &[usize]) -> Result<f64> {
        for &v in set {
            self.check_candidate(v)?;
        }
        match self.spec.kind {
            ObjectiveKind::Im => Ok(self.im_estimate(set).0),
            _ => {
                let mut state = self.empty_state();
                for &v in set {
                    if !state.chosen[v] {
                        self.insert(&mut state, v)?;
                    }
                }
                Ok(self.value(&state))
            }
        }
    }

    /// IM spread estimate and its standard error over `mc_sims` worlds.
    pub fn im_estimate(&self, set: &[usize]) -> (f64, f64) {
        let world = self.world_seed(set);
        let n = self.g.node_count();
        if n == 0 {
            return (0.0, 0.0);
        }
        let counts: Vec<u64> = (0..self.spec.mc_sims as u64)
            .into_par_iter()
            .map_init(
                || Scratch::new(n),
                |scratch, sim| cascade(self.g, world, sim, set, None, scratch) as u64,
            )
            .collect();
        let sims = counts.len() as f64;
        let total: u64 = counts.iter().sum();
        let mean = total as f64 / sims;
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / (sims - 1.0).max(1.0);
        (mean / n as f64, (var / sims).sqrt() / n as f64)
    }

    fn world_seed(&self, set: &[usize]) -> u64 {
        if self.spec.common_random_numbers {
            self.spec.seed
        } else {
            let mut sorted = set.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            sorted
                .iter()
                .fold(seed::derive(self.spec.seed, sorted.len() as u64), |h, &v| {
                    seed::derive(h, v as u64)
                })
        }
    }

    pub fn empty_state(&self) -> CoverState {
        let n = self.g.node_count();
        let covered_len = match self.spec.kind {
            ObjectiveKind::Mcp | ObjectiveKind::Mvc => n,
            ObjectiveKind::Im => 0,
        };
        let active = if self.spec.kind == ObjectiveKind::Im && self.spec.common_random_numbers {
            vec![vec![0u64; n.div_ceil(64)]; self.spec.mc_sims]
        } else {
            Vec::new()
        };
        CoverState {
            picks: Vec::new(),
            chosen: vec![false; n],
            covered: vec![false; covered_len],
            covered_count: 0,
            active,
            active_total: 0,
        }
    }

    /// `f(S)` for the set held by `state`.
    pub fn value(&self, state: &CoverState) -> f64 {
        match self.spec.kind {
            ObjectiveKind::Im if self.spec.common_random_numbers => {
                self.scale(state.active_total as f64 / self.spec.mc_sims as f64)
            }
            ObjectiveKind::Im => self.im_estimate(&state.picks).0,
            _ => self.scale(state.covered_count as f64),
        }
    }

    /// `f(S ∪ {v}) − f(S)`.
    pub fn marginal_gain(&self, state: &CoverState, v: usize) -> Result<f64> {
        self.check_candidate(v)?;
        if state.chosen[v] {
            return Err(GcombError::domain(format!("node {v} is already in the solution")));
        }
        Ok(self.gain_unchecked(state, v))
    }

    pub(crate) fn gain_unchecked(&self, state: &CoverState, v: usize) -> f64 {
        match self.spec.kind {
            ObjectiveKind::Mcp => {
                let fresh = self.g.neighbors(v).iter().filter(|&&u| !state.covered[u]).count();
                self.scale(fresh as f64)
            }
            ObjectiveKind::Mvc => self.scale(self.mvc_fresh_edges(state, v) as f64),
            ObjectiveKind::Im if self.spec.common_random_numbers => {
                let n = self.g.node_count();
                let world = self.spec.seed;
                let fresh: u64 = state
                    .active
                    .par_iter()
                    .enumerate()
                    .map_init(
                        || Scratch::new(n),
                        |scratch, (sim, active)| {
                            cascade(self.g, world, sim as u64, &[v], Some(active), scratch) as u64
                        },
                    )
                    .sum();
                self.scale(fresh as f64 / self.spec.mc_sims as f64)
            }
            ObjectiveKind::Im => {
                let mut with = state.picks.clone();
                with.push(v);
                self.im_estimate(&with).0 - self.im_estimate(&state.picks).0
            }
        }
    }

    fn mvc_fresh_edges(&self, state: &CoverState, v: usize) -> usize {
        let out = self.g.neighbors(v).iter().filter(|&&u| !state.chosen[u]).count();
        if self.g.is_directed() {
            out + self.g.in_neighbors(v).iter().filter(|&&u| !state.chosen[u]).count()
        } else {
            out
        }
    }

    /// Adds `v` to the solution and returns its marginal gain.
    pub fn insert(&self, state: &mut CoverState, v: usize) -> Result<f64> {
        self.check_candidate(v)?;
        if state.chosen[v] {
            return Err(GcombError::domain(format!("node {v} is already in the solution")));
        }
        let gain = match self.spec.kind {
            ObjectiveKind::Mcp => {
                let mut fresh = 0;
                for &u in self.g.neighbors(v) {
                    if !state.covered[u] {
                        state.covered[u] = true;
                        fresh += 1;
                    }
                }
                state.covered_count += fresh;
                self.scale(fresh as f64)
            }
            ObjectiveKind::Mvc => {
                let fresh = self.mvc_fresh_edges(state, v);
                state.covered[v] = true;
                state.covered_count += fresh;
                self.scale(fresh as f64)
            }
            ObjectiveKind::Im if self.spec.common_random_numbers => {
                let n = self.g.node_count();
                let world = self.spec.seed;
                let g = self.g;
                let fresh: u64 = state
                    .active
                    .par_iter_mut()
                    .enumerate()
                    .map_init(
                        || Scratch::new(n),
                        |scratch, (sim, active)| {
                            let added = cascade(g, world, sim as u64, &[v], Some(active), scratch);
                            for &u in &scratch.reached {
                                active[u / 64] |= 1 << (u % 64);
                            }
                            added as u64
                        },
                    )
                    .sum();
                state.active_total += fresh;
                self.scale(fresh as f64 / self.spec.mc_sims as f64)
            }
            ObjectiveKind::Im => self.gain_unchecked(state, v),
        };
        state.chosen[v] = true;
        state.picks.push(v);
        Ok(gain)
    }
}

struct Scratch {
    mark: Vec<bool>,
    reached: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            mark: vec![false; n],
            reached: Vec::new(),
        }
    }
}

#[inline]
fn arc_live(world: u64, sim: u64, arc: usize, w: f64) -> bool {
    if w >= 1.0 {
        return true;
    }
    if w <= 0.0 {
        return false;
    }
    seed::unit_from_hash(seed::derive(seed::derive(world, sim), arc as u64)) < w
}

/// Breadth-first cascade in world `(world, sim)` from `seeds`, never
/// entering nodes flagged in `blocked`. Returns the number of newly reached
/// nodes; they are left in `scratch.reached`.
fn cascade(
    g: &Graph,
    world: u64,
    sim: u64,
    seeds: &[usize],
    blocked: Option<&Vec<u64>>,
    scratch: &mut Scratch,
) -> usize {
    let is_blocked = |u: usize| blocked.is_some_and(|b| b[u / 64] >> (u % 64) & 1 == 1);
    for &u in &scratch.reached {
        scratch.mark[u] = false;
    }
    scratch.reached.clear();
    for &s in seeds {
        if !scratch.mark[s] && !is_blocked(s) {
            scratch.mark[s] = true;
            scratch.reached.push(s);
        }
    }
    let mut head = 0;
    while head < scratch.reached.len() {
        let u = scratch.reached[head];
        head += 1;
        let start = g.arc_start(u);
        for (i, (&v, &w)) in g.neighbors(u).iter().zip(g.neighbor_weights(u)).enumerate() {
            if scratch.mark[v] || is_blocked(v) {
                continue;
            }
            if arc_live(world, sim, start + i, w) {
                scratch.mark[v] = true;
                scratch.reached.push(v);
            }
        }
    }
    scratch.reached.len()
}

/// Exact expected IC spread `E[Γ(S)]` by enumerating every live-edge world.
///
/// Arcs with weight 0 or 1 are deterministic; only the remaining arcs are
/// enumerated, and more than [`EXACT_SPREAD_MAX_ARCS`] of them is refused.
pub fn exact_spread(g: &Graph, set: &[usize]) -> Result<f64> {
    let n = g.node_count();
    for &v in set {
        if v >= n {
            return Err(GcombError::domain(format!("node {v} out of range")));
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut random_arcs = Vec::new();
    for u in 0..n {
        for (i, &w) in g.neighbor_weights(u).iter().enumerate() {
            if w > 0.0 && w < 1.0 {
                random_arcs.push((g.arc_start(u) + i, w));
            }
        }
    }
    if random_arcs.len() > EXACT_SPREAD_MAX_ARCS {
        return Err(GcombError::Refused(format!(
            "exact spread over {} probabilistic arcs exceeds the limit of {}",
            random_arcs.len(),
            EXACT_SPREAD_MAX_ARCS
        )));
    }
    let mut live = vec![false; g.arc_count()];
    for u in 0..n {
        for (i, &w) in g.neighbor_weights(u).iter().enumerate() {
            live[g.arc_start(u) + i] = w >= 1.0;
        }
    }
    let mut expected = 0.0;
    let mut seen = vec![false; n];
    let mut queue = Vec::with_capacity(n);
    for mask in 0u32..(1u32 << random_arcs.len()) {
        let mut prob = 1.0;
        for (bit, &(arc, w)) in random_arcs.iter().enumerate() {
            let on = mask >> bit & 1 == 1;
            live[arc] = on;
            prob *= if on { w } else { 1.0 - w };
        }
        seen.iter_mut().for_each(|s| *s = false);
        queue.clear();
        for &s in set {
            if !seen[s] {
                seen[s] = true;
                queue.push(s);
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for (i, &v) in g.neighbors(u).iter().enumerate() {
                if live[g.arc_start(u) + i] && !seen[v] {
                    seen[v] = true;
                    queue.push(v);
                }
            }
        }
        expected += prob * queue.len() as f64;
    }
    Ok(expected / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_edge_list, Graph};

    fn path_half() -> Graph {
        Graph::from_edges(3, true, vec![(0, 1, 0.5), (1, 2, 0.5)]).unwrap()
    }

    fn hand_mcp() -> Graph {
        // a1 = 0 covers b1..b3 (2,3,4); a2 = 1 covers b3, b4 (4,5).
        let g = Graph::from_edges(6, true, vec![(0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0), (1, 4, 1.0), (1, 5, 1.0)])
            .unwrap();
        g.with_sides(vec![Side::A, Side::A, Side::B, Side::B, Side::B, Side::B]).unwrap()
    }

    #[test]
    fn mcp_empty_and_star() {
        let g = hand_mcp();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        assert_eq!(obj.eval(&[]).unwrap(), 0.0);
        let st = obj.empty_state();
        assert_eq!(obj.marginal_gain(&st, 0).unwrap(), 3.0 / 4.0);
        assert_eq!(obj.eval(&[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn mcp_fully_covered_neighbour_gives_zero() {
        let g = hand_mcp();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let mut st = obj.empty_state();
        obj.insert(&mut st, 1).unwrap();
        // Cover b1, b2 through a fresh state to make a1's neighbours covered.
        let g2 = Graph::from_edges(4, true, vec![(0, 2, 1.0), (1, 2, 1.0), (1, 3, 1.0)])
            .unwrap()
            .with_sides(vec![Side::A, Side::A, Side::B, Side::B])
            .unwrap();
        let obj2 = Objective::new(&g2, ObjectiveSpec::mcp()).unwrap();
        let mut st2 = obj2.empty_state();
        obj2.insert(&mut st2, 1).unwrap();
        assert_eq!(obj2.marginal_gain(&st2, 0).unwrap(), 0.0);
        assert_eq!(st2.covered_count(), 2);
    }

    #[test]
    fn mcp_rejects_side_b_and_non_bipartite() {
        let g = hand_mcp();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        assert!(matches!(obj.eval(&[2]), Err(GcombError::Domain(_))));
        let plain = Graph::from_edges(2, true, vec![(0, 1, 1.0)]).unwrap();
        assert!(Objective::new(&plain, ObjectiveSpec::mcp()).is_err());
    }

    #[test]
    fn gain_of_member_is_an_error() {
        let g = hand_mcp();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let mut st = obj.empty_state();
        obj.insert(&mut st, 0).unwrap();
        assert!(obj.marginal_gain(&st, 0).is_err());
        assert!(obj.insert(&mut st, 0).is_err());
    }

    #[test]
    fn mvc_triangle() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n".as_bytes(), false).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mvc()).unwrap();
        let mut st = obj.empty_state();
        obj.insert(&mut st, 0).unwrap();
        assert_eq!(obj.value(&st), 2.0 / 3.0);
        assert_eq!(obj.marginal_gain(&st, 1).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn mvc_directed_counts_incoming_arcs() {
        let g = Graph::from_edges(3, true, vec![(0, 1, 1.0), (2, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mvc()).unwrap();
        assert_eq!(obj.eval(&[1]).unwrap(), 1.0);
        assert_eq!(obj.eval(&[0]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn im_zero_weights_counts_seeds_only() {
        let g = Graph::from_edges(4, true, vec![(0, 1, 0.0), (1, 2, 0.0), (2, 3, 0.0)]).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::im(50, 1)).unwrap();
        assert_eq!(obj.eval(&[1]).unwrap(), 0.25);
        assert_eq!(exact_spread(&g, &[1, 2]).unwrap(), 0.5);
    }

    #[test]
    fn im_unit_weights_is_reachability() {
        let g = Graph::from_edges(4, true, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::im(20, 1)).unwrap();
        assert_eq!(obj.eval(&[0]).unwrap(), 0.75);
        assert_eq!(exact_spread(&g, &[0]).unwrap(), 0.75);
    }

    #[test]
    fn exact_spread_on_half_path() {
        let g = path_half();
        let exact = exact_spread(&g, &[0]).unwrap();
        assert!((exact - (1.0 + 0.5 * 1.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mc_spread_on_half_path_within_three_sigma() {
        let g = path_half();
        let obj = Objective::new(&g, ObjectiveSpec::im(20_000, 9)).unwrap();
        let (mean, se) = obj.im_estimate(&[0]);
        assert!((mean - 0.5833333333333334).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn exact_spread_refuses_large_graphs() {
        let edges: Vec<_> = (0..21).map(|i| (i, i + 1, 0.5)).collect();
        let g = Graph::from_edges(22, true, edges).unwrap();
        assert!(matches!(exact_spread(&g, &[0]), Err(GcombError::Refused(_))));
    }

    #[test]
    fn im_incremental_matches_eval_under_crn() {
        let g = crate::graph::gen_ba(60, 2, 3).unwrap();
        let g = crate::graph::assign_weights(
            &g,
            &crate::graph::WeightModel::new(crate::graph::WeightKind::Constant, 0),
        );
        let obj = Objective::new(&g, ObjectiveSpec::im(200, 4)).unwrap();
        let mut st = obj.empty_state();
        let mut total = 0.0;
        for &v in &[3, 17, 40] {
            let predicted = obj.marginal_gain(&st, v).unwrap();
            let before = obj.eval(st.picks()).unwrap();
            let after = obj.eval(&[st.picks(), &[v]].concat()).unwrap();
            assert!((predicted - (after - before)).abs() < 1e-12);
            total += obj.insert(&mut st, v).unwrap();
        }
        assert!((obj.value(&st) - obj.eval(&[3, 17, 40]).unwrap()).abs() < 1e-12);
        assert!((total - obj.value(&st)).abs() < 1e-12);
    }

    #[test]
    fn im_without_crn_is_still_deterministic() {
        let g = path_half();
        let mut spec = ObjectiveSpec::im(500, 2);
        spec.common_random_numbers = false;
        let obj = Objective::new(&g, spec).unwrap();
        assert_eq!(obj.eval(&[0]).unwrap(), obj.eval(&[0]).unwrap());
        let st = obj.empty_state();
        assert!(obj.marginal_gain(&st, 0).unwrap() > 0.0);
    }

    #[test]
    fn rejects_zero_sims() {
        let g = path_half();
        assert!(Objective::new(&g, ObjectiveSpec::im(0, 0)).is_err());
    }
}
