//! Q-learning head.
//!
//! A state is the chosen set S plus the remaining good nodes C. Each good
//! node carries a two-dimensional feature `[score', locality]`, where
//! locality counts the neighbours not yet covered by the neighbourhoods of
//! S. The network is linear:
//! `Q(S, v) = Θ4 · Concat(Θ1 μ_C, Θ2 μ_S, Θ3 μ_v)` with max-pooled set
//! summaries. Training is n-step fitted Q-learning over a replay memory;
//! inference picks the argmax b times.
//!
//! Locality can be computed exactly or estimated from an importance sample
//! of the good nodes' neighbourhood, drawn proportionally to score'.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng as _;

use crate::baselines::SolveResult;
use crate::error::{GcombError, Result};
use crate::fmt;
use crate::gcn::{gcn_forward, GcnParams};
use crate::graph::Graph;
use crate::nn::{dot, Adam, Mat};
use crate::noise::{predict_good_nodes, rank_order, NoiseCutoffModel};
use crate::objectives::Objective;
use crate::seed::{self, Rng};

pub const DEFAULT_QDIM: usize = 32;
pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_NSTEP: usize = 2;
pub const DEFAULT_QLR: f64 = 5e-4;
pub const DEFAULT_EPISODES: usize = 10;
pub const DEFAULT_STEPS: usize = 50;
pub const REPLAY_CAPACITY: usize = 50;
pub const REPLAY_BATCH: usize = 8;
pub const DEFAULT_SAMPLE_EPS: f64 = 0.1;

const MIN_EXPLORE: f64 = 0.05;
const EXPLORE_DECAY: f64 = 0.9;
const HEADER: &str = "q-v1";
const ABSENT: u32 = u32::MAX;

pub type Feature = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct QParams {
    pub t1: Mat,
    pub t2: Mat,
    pub t3: Mat,
    pub t4: Vec<f64>,
}

/// Inputs of one Q evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QInput {
    pub mu_c: Feature,
    pub mu_s: Feature,
    pub mu_v: Feature,
}

impl QParams {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(GcombError::domain("q dimension must be positive"));
        }
        let mut rng = seed::rng(seed);
        Ok(QParams {
            t1: Mat::glorot(dim, 2, &mut rng),
            t2: Mat::glorot(dim, 2, &mut rng),
            t3: Mat::glorot(dim, 2, &mut rng),
            t4: Mat::glorot(3 * dim, 1, &mut rng).data,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        QParams {
            t1: Mat::zeros(dim, 2),
            t2: Mat::zeros(dim, 2),
            t3: Mat::zeros(dim, 2),
            t4: vec![0.0; 3 * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.t1.rows
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = d > 0
            && [&self.t1, &self.t2, &self.t3]
                .iter()
                .all(|m| m.rows == d && m.cols == 2 && m.data.len() == 2 * d)
            && self.t4.len() == 3 * d;
        if ok {
            Ok(())
        } else {
            Err(GcombError::domain("inconsistent q parameter shapes"))
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [&self.t1.data, &self.t2.data, &self.t3.data, &self.t4]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.t1.data, &mut self.t2.data, &mut self.t3.data, &mut self.t4]
    }

    /// The part of Q shared by every action in a state.
    fn state_term(&self, mu_c: &Feature, mu_s: &Feature) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for r in 0..d {
            q += self.t4[r] * dot(self.t1.row(r), mu_c);
            q += self.t4[d + r] * dot(self.t2.row(r), mu_s);
        }
        q
    }

    /// `Θ3ᵀ Θ4[2d..]`, so that the action term is a dot product with μ_v.
    fn action_coef(&self) -> Feature {
        let d = self.dim();
        let mut c = [0.0; 2];
        self.t3.mul_t_vec_add(&self.t4[2 * d..], &mut c);
        c
    }

    pub fn q_value(&self, x: &QInput) -> f64 {
        self.state_term(&x.mu_c, &x.mu_s) + dot(&self.action_coef(), &x.mu_v)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{HEADER} {}", self.dim())?;
        for (tag, m) in [("T1", &self.t1), ("T2", &self.t2), ("T3", &self.t3)] {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    writeln!(out, "{tag} {r} {c} {}", fmt::real(m.get(r, c)))?;
                }
            }
        }
        for (i, v) in self.t4.iter().enumerate() {
            writeln!(out, "T4 {i} {}", fmt::real(*v))?;
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let bad = |msg: String| GcombError::Format(msg);
        let mut lines = input.lines();
        let head = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad("empty q model file".into()))?;
        let dim = match head.split_whitespace().collect::<Vec<_>>().as_slice() {
            [tag, d] if *tag == HEADER => d
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| bad(format!("invalid dimension `{d}`")))?,
            _ => return Err(bad(format!("missing `{HEADER}` header"))),
        };
        let mut p = QParams::zeros(dim);
        let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("invalid index `{s}`")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("invalid number `{s}`")));
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                [tag @ ("T1" | "T2" | "T3"), r, c, v] => {
                    let m = match *tag {
                        "T1" => &mut p.t1,
                        "T2" => &mut p.t2,
                        _ => &mut p.t3,
                    };
                    let (r, c) = (idx(r)?, idx(c)?);
                    if r >= m.rows || c >= m.cols {
                        return Err(bad(format!("index out of range in `{line}`")));
                    }
                    m.set(r, c, num(v)?);
                }
                ["T4", i, v] => {
                    let i = idx(i)?;
                    *p.t4
                        .get_mut(i)
                        .ok_or_else(|| bad(format!("index out of range in `{line}`")))? = num(v)?;
                }
                _ => return Err(bad(format!("unexpected `{line}`"))),
            }
        }
        Ok(p)
    }
}

/// A regression sample with a fixed target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QSample {
    pub input: QInput,
    pub target: f64,
}

/// Mean squared error of Q over `samples`.
pub fn q_loss(params: &QParams, samples: &[QSample]) -> f64 {
    samples
        .iter()
        .map(|s| (s.target - params.q_value(&s.input)).powi(2))
        .sum::<f64>()
        / samples.len().max(1) as f64
}

/// [`q_loss`] and its gradient, shaped like the parameters. Targets are
/// treated as constants.
pub fn q_loss_and_grad(params: &QParams, samples: &[QSample]) -> (f64, QParams) {
    let d = params.dim();
    let mut grad = QParams::zeros(d);
    let mut loss = 0.0;
    let scale = 2.0 / samples.len().max(1) as f64;
    let mut h = vec![0.0; d];
    for s in samples {
        let err = params.q_value(&s.input) - s.target;
        loss += err * err;
        let delta = scale * err;
        for (block, (theta, g, mu)) in [
            (&params.t1, &mut grad.t1, &s.input.mu_c),
            (&params.t2, &mut grad.t2, &s.input.mu_s),
            (&params.t3, &mut grad.t3, &s.input.mu_v),
        ]
        .into_iter()
        .enumerate()
        {
            theta.mul_vec_into(mu, &mut h);
            let w4 = &params.t4[block * d..(block + 1) * d];
            for r in 0..d {
                grad.t4[block * d + r] += delta * h[r];
                let coef = delta * w4[r];
                g.data[2 * r] += coef * mu[0];
                g.data[2 * r + 1] += coef * mu[1];
            }
        }
    }
    (loss / samples.len().max(1) as f64, grad)
}

/// State reached after a transition, kept for the bootstrap term.
#[derive(Clone, Debug, PartialEq)]
pub struct NextState {
    pub mu_c: Feature,
    pub mu_s: Feature,
    pub candidates: Vec<Feature>,
}

/// An n-step transition: the first state-action, the sum of the n rewards
/// that followed, and the state n picks later (`None` when terminal).
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub input: QInput,
    pub reward: f64,
    pub next: Option<NextState>,
}

/// `Σ r + γ · max_v Q(S', v)`, or just `Σ r` when S' is terminal.
pub fn td_target(params: &QParams, t: &Transition, gamma: f64) -> f64 {
    match &t.next {
        Some(next) if !next.candidates.is_empty() => {
            let base = params.state_term(&next.mu_c, &next.mu_s);
            let coef = params.action_coef();
            let best = next
                .candidates
                .iter()
                .map(|mu| dot(&coef, mu))
                .fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * (base + best)
        }
        _ => t.reward,
    }
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Up to `batch` distinct transitions chosen uniformly.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Vec<&Transition> {
        let k = batch.min(self.items.len());
        index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// `⌈ln(2U²) / (2ε²)⌉`, clamped to `[1, U]`.
pub fn sample_size(universe: usize, eps: f64) -> usize {
    let u = universe.max(1) as f64;
    let z = ((2.0 * u * u).ln() / (2.0 * eps * eps)).ceil();
    (z as usize).clamp(1, universe.max(1))
}

/// Draws from a node universe proportionally to importance.
#[derive(Clone, Debug)]
pub struct ImportanceSampler {
    nodes: Vec<usize>,
    importance: Vec<f64>,
    dist: WeightedIndex<f64>,
    uniform_fallback: bool,
}

/// A drawn sample: `(position in the universe, weight)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    pub draws: Vec<(usize, f64)>,
    /// The sample size reached the universe size, so the whole universe was
    /// taken once with unit weights.
    pub census: bool,
}

impl ImportanceSampler {
    /// Nodes with a non-positive or non-finite score are left out. If none
    /// remain, every node is kept with uniform importance.
    pub fn new(nodes: &[usize], scores: &[f64]) -> Result<Self> {
        if nodes.len() != scores.len() {
            return Err(GcombError::domain("nodes and scores differ in length"));
        }
        let kept: Vec<(usize, f64)> = nodes
            .iter()
            .zip(scores)
            .filter(|(_, s)| s.is_finite() && **s > 0.0)
            .map(|(&v, &s)| (v, s))
            .collect();
        let (nodes, raw, uniform_fallback) = if kept.is_empty() {
            (nodes.to_vec(), vec![1.0; nodes.len()], true)
        } else {
            let (n, s) = kept.into_iter().unzip();
            (n, s, false)
        };
        if nodes.is_empty() {
            return Err(GcombError::domain("empty sampling universe"));
        }
        let total: f64 = raw.iter().sum();
        let importance: Vec<f64> = raw.iter().map(|s| s / total).collect();
        let dist = WeightedIndex::new(&importance)
            .map_err(|e| GcombError::Numeric(format!("importance weights: {e}")))?;
        Ok(ImportanceSampler {
            nodes,
            importance,
            dist,
            uniform_fallback,
        })
    }

    pub fn universe_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn is_uniform_fallback(&self) -> bool {
        self.uniform_fallback
    }

    /// `z` draws with replacement, each weighted `1 / I(v)`.
    pub fn draw(&self, z: usize, rng: &mut Rng) -> Vec<(usize, f64)> {
        (0..z)
            .map(|_| {
                let i = self.dist.sample(rng);
                (i, 1.0 / self.importance[i])
            })
            .collect()
    }

    /// A sample of size [`sample_size`]; a size equal to the universe is
    /// taken as the full universe.
    pub fn sample(&self, eps: f64, rng: &mut Rng) -> WeightedSample {
        let z = sample_size(self.universe_size(), eps);
        if z >= self.universe_size() {
            WeightedSample {
                draws: (0..self.universe_size()).map(|i| (i, 1.0)).collect(),
                census: true,
            }
        } else {
            WeightedSample {
                draws: self.draw(z, rng),
                census: false,
            }
        }
    }
}

/// `Σ ŵ I / Σ ŵ` over a sample.
pub fn weighted_mean(draws: &[(usize, f64)], importance: &[f64]) -> f64 {
    let (num, den) = draws
        .iter()
        .fold((0.0, 0.0), |(n, d), &(i, w)| (n + w * importance[i], d + w));
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Locality {
    Exact,
    Sampled { eps: f64 },
}

/// Episode state over a fixed set of good nodes.
#[derive(Clone, Debug)]
pub struct Episode<'g> {
    g: &'g Graph,
    good: Vec<usize>,
    pos: Vec<u32>,
    score: Vec<f64>,
    deg_scale: f64,
    chosen: Vec<bool>,
    picks: Vec<usize>,
    covered: Vec<bool>,
    loc: Vec<usize>,
    sampler: Option<(ImportanceSampler, f64)>,
    seed: u64,
}

impl<'g> Episode<'g> {
    /// `good` must be duplicate-free; `scores` holds score' for every node
    /// of the graph (only good nodes and their neighbours are read).
    pub fn new(g: &'g Graph, good: &[usize], scores: &[f64], locality: Locality, seed: u64) -> Result<Self> {
        let n = g.node_count();
        if scores.len() != n {
            return Err(GcombError::domain("score vector does not match the graph"));
        }
        let mut good = good.to_vec();
        good.sort_unstable();
        good.dedup();
        let mut pos = vec![ABSENT; n];
        for (i, &v) in good.iter().enumerate() {
            if v >= n {
                return Err(GcombError::domain(format!("node {v} out of range")));
            }
            pos[v] = i as u32;
        }
        let max_score = good.iter().map(|&v| scores[v]).fold(f64::NEG_INFINITY, f64::max);
        let s_scale = if max_score > 0.0 { max_score } else { 1.0 };
        let score = good.iter().map(|&v| scores[v] / s_scale).collect();
        let max_deg = good.iter().map(|&v| g.out_degree(v)).max().unwrap_or(0);
        let deg_scale = if max_deg > 0 { max_deg as f64 } else { 1.0 };
        let loc = good.iter().map(|&v| g.out_degree(v)).collect();
        let sampler = match locality {
            Locality::Exact => None,
            Locality::Sampled { eps } => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(GcombError::domain(format!("sampling error bound {eps} not in (0, 1)")));
                }
                let mut universe: Vec<usize> = good.iter().flat_map(|&v| g.neighbors(v).iter().copied()).collect();
                universe.sort_unstable();
                universe.dedup();
                if universe.is_empty() {
                    None
                } else {
                    let s: Vec<f64> = universe.iter().map(|&u| scores[u]).collect();
                    Some((ImportanceSampler::new(&universe, &s)?, eps))
                }
            }
        };
        Ok(Episode {
            g,
            good,
            chosen: vec![false; pos.iter().filter(|&&p| p != ABSENT).count()],
            pos,
            score,
            deg_scale,
            picks: Vec::new(),
            covered: vec![false; n],
            loc,
            sampler,
            seed,
        })
    }

    pub fn good(&self) -> &[usize] {
        &self.good
    }

    pub fn picks(&self) -> &[usize] {
        &self.picks
    }

    pub fn is_candidate(&self, v: usize) -> bool {
        matches!(self.pos.get(v), Some(&p) if p != ABSENT && !self.chosen[p as usize])
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.good
            .iter()
            .zip(&self.chosen)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v)
    }

    pub fn candidate_count(&self) -> usize {
        self.good.len() - self.picks.len()
    }

    pub fn uses_uniform_fallback(&self) -> bool {
        self.sampler.as_ref().is_some_and(|(s, _)| s.is_uniform_fallback())
    }

    /// Exact `|N(v) \ ∪_{u∈S} N(u)|` for a good node.
    pub fn exact_locality(&self, v: usize) -> Option<usize> {
        match self.pos.get(v) {
            Some(&p) if p != ABSENT => Some(self.loc[p as usize]),
            _ => None,
        }
    }

    /// Locality of every good node in the current state, exact or estimated
    /// from the sample for the current step.
    pub fn localities(&self) -> Vec<f64> {
        let Some((sampler, eps)) = &self.sampler else {
            return self.loc.iter().map(|&l| l as f64).collect();
        };
        let mut rng = seed::rng(seed::derive(self.seed, self.picks.len() as u64));
        let sample = sampler.sample(*eps, &mut rng);
        let mut weight: Vec<(usize, f64)> = sample.draws.iter().map(|&(i, w)| (sampler.nodes[i], w)).collect();
        weight.sort_unstable_by_key(|x| x.0);
        let mut num = vec![0.0; self.good.len()];
        let mut den = vec![0.0; self.good.len()];
        let (mut tot_num, mut tot_den) = (0.0, 0.0);
        let mut i = 0;
        while i < weight.len() {
            let u = weight[i].0;
            let mut w = 0.0;
            while i < weight.len() && weight[i].0 == u {
                w += weight[i].1;
                i += 1;
            }
            let unc = if self.covered[u] { 0.0 } else { w };
            tot_num += unc;
            tot_den += w;
            for &x in self.g.in_neighbors(u) {
                let p = self.pos[x];
                if p != ABSENT {
                    num[p as usize] += unc;
                    den[p as usize] += w;
                }
            }
        }
        let global = if tot_den > 0.0 { tot_num / tot_den } else { 0.0 };
        self.good
            .iter()
            .enumerate()
            .map(|(p, &v)| {
                let frac = if den[p] > 0.0 { num[p] / den[p] } else { global };
                self.g.out_degree(v) as f64 * frac
            })
            .collect()
    }

    /// Scaled `[score', locality]` of every good node.
    pub fn features(&self) -> Vec<Feature> {
        self.localities()
            .into_iter()
            .zip(&self.score)
            .map(|(l, &s)| [s, l / self.deg_scale])
            .collect()
    }

    /// Max-pooled summaries of the candidates and of the chosen set; an
    /// empty set pools to zero.
    pub fn summaries(&self, feats: &[Feature]) -> (Feature, Feature) {
        let mut c = [f64::NEG_INFINITY; 2];
        let mut s = [f64::NEG_INFINITY; 2];
        for (f, &chosen) in feats.iter().zip(&self.chosen) {
            let t = if chosen { &mut s } else { &mut c };
            t[0] = t[0].max(f[0]);
            t[1] = t[1].max(f[1]);
        }
        let fix = |x: Feature| if x[0] == f64::NEG_INFINITY { [0.0; 2] } else { x };
        (fix(c), fix(s))
    }

    pub fn pick(&mut self, v: usize) -> Result<()> {
        if !self.is_candidate(v) {
            return Err(GcombError::domain(format!("node {v} is not a candidate")));
        }
        self.chosen[self.pos[v] as usize] = true;
        self.picks.push(v);
        for &u in self.g.neighbors(v) {
            if !self.covered[u] {
                self.covered[u] = true;
                for &x in self.g.in_neighbors(u) {
                    let p = self.pos[x];
                    if p != ABSENT {
                        self.loc[p as usize] -= 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Candidate with the largest Q; ties go to the smaller id.
    fn best(&self, params: &QParams, feats: &[Feature], mu_c: &Feature, mu_s: &Feature) -> Option<usize> {
        let base = params.state_term(mu_c, mu_s);
        let coef = params.action_coef();
        let mut best: Option<(usize, f64)> = None;
        for p in 0..self.good.len() {
            if self.chosen[p] {
                continue;
            }
            let q = base + dot(&coef, &feats[p]);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((p, q));
            }
        }
        best.map(|(p, _)| self.good[p])
    }

    /// Q of a candidate in the current state.
    pub fn q_value(&self, params: &QParams, v: usize) -> Result<f64> {
        if !self.is_candidate(v) {
            return Err(GcombError::domain(format!("node {v} is not a candidate")));
        }
        let feats = self.features();
        let (mu_c, mu_s) = self.summaries(&feats);
        Ok(params.q_value(&QInput {
            mu_c,
            mu_s,
            mu_v: feats[self.pos[v] as usize],
        }))
    }

    fn next_state(&self, feats: &[Feature], mu_c: Feature, mu_s: Feature) -> NextState {
        NextState {
            mu_c,
            mu_s,
            candidates: feats
                .iter()
                .zip(&self.chosen)
                .filter(|(_, &c)| !c)
                .map(|(f, _)| *f)
                .collect(),
        }
    }
}

/// One training graph: its objective, good nodes and GCN scores.
#[derive(Clone, Copy, Debug)]
pub struct QTrainItem<'a> {
    pub objective: &'a Objective<'a>,
    pub good: &'a [usize],
    /// score' for every node of the graph.
    pub scores: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct QTrainConfig {
    pub episodes: usize,
    /// Picks per episode, capped by the number of good nodes.
    pub steps: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub lr: f64,
    pub capacity: usize,
    pub batch: usize,
    pub locality: Locality,
    pub seed: u64,
}

impl Default for QTrainConfig {
    fn default() -> Self {
        QTrainConfig {
            episodes: DEFAULT_EPISODES,
            steps: DEFAULT_STEPS,
            n_step: DEFAULT_NSTEP,
            gamma: DEFAULT_GAMMA,
            lr: DEFAULT_QLR,
            capacity: REPLAY_CAPACITY,
            batch: REPLAY_BATCH,
            locality: Locality::Exact,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTrainReport {
    pub episodes: usize,
    pub steps: usize,
    pub updates: usize,
    pub last_loss: f64,
    /// Mean update loss of each episode (0 when it made no update).
    pub episode_losses: Vec<f64>,
}

struct StepRecord {
    input: QInput,
    reward: f64,
}

fn update(
    params: &mut QParams,
    opt: &mut Adam,
    memory: &ReplayMemory,
    cfg: &QTrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let batch: Vec<QSample> = memory
        .sample(cfg.batch, rng)
        .into_iter()
        .map(|t| QSample {
            input: t.input,
            target: td_target(params, t, cfg.gamma),
        })
        .collect();
    let (loss, grad) = q_loss_and_grad(params, &batch);
    if !loss.is_finite() {
        return Err(GcombError::Numeric(format!("q loss became {loss}")));
    }
    opt.step(&mut params.tensors_mut(), &grad.tensors());
    Ok(loss)
}

/// n-step fitted Q-learning with ε-greedy exploration,
/// `ε = max(0.05, 0.9^t)` over the global step count. Episodes cycle through
/// the training graphs in order.
pub fn q_train(items: &[QTrainItem], params0: QParams, cfg: &QTrainConfig) -> Result<(QParams, QTrainReport)> {
    params0.validate()?;
    if items.is_empty() {
        return Err(GcombError::domain("no training graphs"));
    }
    if cfg.episodes == 0 || cfg.steps == 0 || cfg.n_step == 0 || cfg.batch == 0 {
        return Err(GcombError::domain("episodes, steps, n and batch size must be positive"));
    }
    let mut rng = seed::rng(seed::derive_labeled(cfg.seed, "q-train"));
    let loc_seed = seed::derive_labeled(cfg.seed, "q-locality");
    let mut params = params0;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(cfg.lr, &sizes);
    let mut memory = ReplayMemory::new(cfg.capacity);
    let mut report = QTrainReport::default();
    let mut global_t: i32 = 0;

    for e in 0..cfg.episodes {
        report.episodes = e + 1;
        let item = &items[e % items.len()];
        let obj = item.objective;
        let g = obj.graph();
        let good: Vec<usize> = item.good.iter().copied().filter(|&v| obj.is_candidate(v)).collect();
        let mut env = Episode::new(g, &good, item.scores, cfg.locality, seed::derive(loc_seed, e as u64))?;
        let horizon = cfg.steps.min(env.good().len());
        let updates_before = report.updates;
        let mut loss_sum = 0.0;
        if horizon == 0 {
            report.episode_losses.push(0.0);
            continue;
        }
        let mut state = obj.empty_state();
        let mut records: Vec<StepRecord> = Vec::with_capacity(horizon);
        let mut feats = env.features();
        let (mut mu_c, mut mu_s) = env.summaries(&feats);
        for t in 0..horizon {
            global_t = global_t.saturating_add(1);
            report.steps += 1;
            let explore = MIN_EXPLORE.max(EXPLORE_DECAY.powi(global_t));
            let v = if rng.gen::<f64>() < explore {
                let cands: Vec<usize> = env.candidates().collect();
                cands[rng.gen_range(0..cands.len())]
            } else {
                env.best(&params, &feats, &mu_c, &mu_s).expect("candidates remain")
            };
            let mu_v = feats[env.pos[v] as usize];
            let reward = obj.insert(&mut state, v)?;
            records.push(StepRecord {
                input: QInput { mu_c, mu_s, mu_v },
                reward,
            });
            env.pick(v)?;
            let terminal = t + 1 == horizon;
            if !terminal {
                feats = env.features();
                (mu_c, mu_s) = env.summaries(&feats);
            }
            if t + 1 >= cfg.n_step {
                let i = t + 1 - cfg.n_step;
                memory.push(Transition {
                    input: records[i].input,
                    reward: records[i..=t].iter().map(|r| r.reward).sum(),
                    next: (!terminal).then(|| env.next_state(&feats, mu_c, mu_s)),
                });
                report.last_loss = update(&mut params, &mut opt, &memory, cfg, &mut rng)?;
                loss_sum += report.last_loss;
                report.updates += 1;
            }
        }
        // Steps too close to the end for a full n-step window.
        let first_open = (horizon + 1).saturating_sub(cfg.n_step);
        for i in first_open..horizon {
            memory.push(Transition {
                input: records[i].input,
                reward: records[i..].iter().map(|r| r.reward).sum(),
                next: None,
            });
            report.last_loss = update(&mut params, &mut opt, &memory, cfg, &mut rng)?;
            loss_sum += report.last_loss;
            report.updates += 1;
        }
        let made = report.updates - updates_before;
        report
            .episode_losses
            .push(if made > 0 { loss_sum / made as f64 } else { 0.0 });
    }
    Ok((params, report))
}

#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Restrict candidates to the noise model's good nodes.
    pub prune: bool,
    pub locality: Locality,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            prune: true,
            locality: Locality::Exact,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcombSolve {
    pub result: SolveResult,
    /// Size of the candidate set the head chose from.
    pub good_count: usize,
    /// The predicted good set had fewer than b nodes and was extended.
    pub extended: bool,
    /// Every importance weight was zero, so sampling fell back to uniform.
    pub uniform_fallback: bool,
}

/// Candidate set for budget `b`: the noise model's good nodes that are
/// valid picks, extended by the next-ranked candidates when fewer than `b`.
/// Without pruning every candidate is returned. The flag reports extension.
pub fn good_nodes(obj: &Objective, noise: &NoiseCutoffModel, b: usize, prune: bool) -> Result<(Vec<usize>, bool)> {
    let g = obj.graph();
    if !prune {
        return Ok((obj.candidates(), false));
    }
    let b_norm = b as f64 / g.node_count().max(1) as f64;
    let mut good: Vec<usize> = predict_good_nodes(noise, g, b_norm)?
        .into_iter()
        .filter(|&v| obj.is_candidate(v))
        .collect();
    if good.len() >= b {
        return Ok((good, false));
    }
    let mut inside = vec![false; g.node_count()];
    good.iter().for_each(|&v| inside[v] = true);
    for v in rank_order(g) {
        if good.len() >= b {
            break;
        }
        if !inside[v] && obj.is_candidate(v) {
            inside[v] = true;
            good.push(v);
        }
    }
    good.sort_unstable();
    Ok((good, true))
}

/// Budget-b inference: prune, score with one GCN pass, then pick the
/// argmax of Q b times.
pub fn solve(
    obj: &Objective,
    b: usize,
    noise: &NoiseCutoffModel,
    gcn: &GcnParams,
    q: &QParams,
    cfg: &SolveConfig,
) -> Result<GcombSolve> {
    if b == 0 {
        return Err(GcombError::domain("budget must be at least 1"));
    }
    q.validate()?;
    let start = Instant::now();
    let g = obj.graph();
    let (good, extended) = good_nodes(obj, noise, b, cfg.prune)?;
    let scores = gcn_forward(g, gcn, &good)?.to_dense(g.node_count());
    let mut env = Episode::new(g, &good, &scores, cfg.locality, seed::derive_labeled(cfg.seed, "solve-locality"))?;
    let truncated = b > env.good().len();
    let b = b.min(env.good().len());
    for _ in 0..b {
        let feats = env.features();
        let (mu_c, mu_s) = env.summaries(&feats);
        let v = env.best(q, &feats, &mu_c, &mu_s).expect("candidates remain");
        env.pick(v)?;
    }
    let wall_time = start.elapsed().as_secs_f64();
    let solution = env.picks().to_vec();
    let objective = obj.eval(&solution)?;
    Ok(GcombSolve {
        result: SolveResult {
            solution,
            objective,
            evals: 0,
            wall_time,
            truncated,
        },
        good_count: env.good().len(),
        extended,
        uniform_fallback: env.uses_uniform_fallback(),
    })
}
