//! Mean-pool graph convolutional node scorer.
//!
//! Layer k maps `Concat(mean of neighbours' h^{k-1}, own h^{k-1})` through
//! `W^k` and a ReLU; the score is `w · h^K`. There are no biases. The input
//! feature is the outgoing weight sum scaled by its maximum over the graph.
//!
//! Only the nodes whose representation is actually needed are evaluated:
//! the output set at layer K, widened by one hop per layer going down.

use std::io::{BufRead, Write};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{GcombError, Result};
use crate::fmt;
use crate::graph::Graph;
use crate::nn::{dot, Adam, Mat};
use crate::noise::{predict_good_nodes, NoiseCutoffModel};
use crate::seed::{self, Rng};
use crate::supervision::NodeScoreTable;

pub const DEFAULT_DEPTH: usize = 2;
pub const DEFAULT_DIM: usize = 60;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_STEPS: usize = 1000;

const HEADER: &str = "gcn-v1";
const ABSENT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    /// `layers[k-1]` is `W^k`: `dim × 2` for k = 1, `dim × 2·dim` after.
    pub layers: Vec<Mat>,
    pub w: Vec<f64>,
    pub dropout: f64,
}

impl GcnParams {
    /// Glorot-uniform initialization.
    pub fn new(depth: usize, dim: usize, dropout: f64, seed: u64) -> Result<Self> {
        check_hyper(depth, dim, dropout)?;
        let mut rng = seed::rng(seed);
        let layers = (0..depth)
            .map(|k| Mat::glorot(dim, if k == 0 { 2 } else { 2 * dim }, &mut rng))
            .collect();
        let w = Mat::glorot(dim, 1, &mut rng).data;
        Ok(GcnParams { layers, w, dropout })
    }

    pub fn zeros(depth: usize, dim: usize) -> Self {
        GcnParams {
            layers: (0..depth)
                .map(|k| Mat::zeros(dim, if k == 0 { 2 } else { 2 * dim }))
                .collect(),
            w: vec![0.0; dim],
            dropout: 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|m| m.data.len()).sum::<usize>() + self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_hyper(self.depth(), self.dim(), self.dropout)?;
        let dim = self.dim();
        for (k, m) in self.layers.iter().enumerate() {
            let cols = if k == 0 { 2 } else { 2 * dim };
            if m.rows != dim || m.cols != cols || m.data.len() != dim * cols {
                return Err(GcombError::domain(format!(
                    "layer {} has shape {}x{}, expected {dim}x{cols}",
                    k + 1,
                    m.rows,
                    m.cols
                )));
            }
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = self.layers.iter().map(|m| m.data.as_slice()).collect();
        t.push(&self.w);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = self.layers.iter_mut().map(|m| m.data.as_mut_slice()).collect();
        t.push(&mut self.w);
        t
    }

    fn sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{HEADER} {} {}", self.depth(), self.dim())?;
        for (k, m) in self.layers.iter().enumerate() {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    writeln!(out, "W {} {r} {c} {}", k + 1, fmt::real(m.get(r, c)))?;
                }
            }
        }
        for (i, v) in self.w.iter().enumerate() {
            writeln!(out, "w {i} {}", fmt::real(*v))?;
        }
        Ok(())
    }

    /// Reads a model file; the dropout rate is not stored and is set to the
    /// default.
    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let head = lines
            .next()
            .transpose()?
            .ok_or_else(|| GcombError::Format("empty gcn model file".into()))?;
        let h: Vec<&str> = head.split_whitespace().collect();
        let (depth, dim) = match h.as_slice() {
            [tag, k, d] if *tag == HEADER => (parse_idx(k)?, parse_idx(d)?),
            _ => return Err(GcombError::Format(format!("missing `{HEADER}` header"))),
        };
        check_hyper(depth, dim, DEFAULT_DROPOUT).map_err(|e| GcombError::Format(e.to_string()))?;
        let mut p = GcnParams::zeros(depth, dim);
        p.dropout = DEFAULT_DROPOUT;
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["W", k, r, c, v] => {
                    let (k, r, c) = (parse_idx(k)?, parse_idx(r)?, parse_idx(c)?);
                    let m = k
                        .checked_sub(1)
                        .and_then(|k| p.layers.get_mut(k))
                        .filter(|m| r < m.rows && c < m.cols)
                        .ok_or_else(|| GcombError::Format(format!("index out of range in `{line}`")))?;
                    m.set(r, c, parse_real(v)?);
                }
                ["w", i, v] => {
                    let i = parse_idx(i)?;
                    *p.w
                        .get_mut(i)
                        .ok_or_else(|| GcombError::Format(format!("index out of range in `{line}`")))? =
                        parse_real(v)?;
                }
                _ => return Err(GcombError::Format(format!("unexpected `{line}`"))),
            }
        }
        Ok(p)
    }
}

fn check_hyper(depth: usize, dim: usize, dropout: f64) -> Result<()> {
    if depth == 0 || dim == 0 {
        return Err(GcombError::domain("gcn depth and dimension must be positive"));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(GcombError::domain(format!("dropout {dropout} not in [0, 1)")));
    }
    Ok(())
}

fn parse_idx(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| GcombError::Format(format!("invalid index `{s}`")))
}

fn parse_real(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| GcombError::Format(format!("invalid number `{s}`")))
}

/// `x_v / max_u x_u`; a graph whose features are all zero gets a constant 1.
pub fn input_features(g: &Graph) -> Vec<f64> {
    let x = g.out_weight_sum();
    let max = x.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        x.iter().map(|v| v / max).collect()
    } else {
        vec![1.0; x.len()]
    }
}

struct Layer {
    nodes: Vec<usize>,
    pos: Vec<u32>,
    input: Vec<f64>,
    pre: Vec<f64>,
    h: Vec<f64>,
    mask: Option<Vec<f64>>,
}

struct Forward {
    layers: Vec<Layer>,
}

impl Forward {
    fn out(&self) -> &Layer {
        self.layers.last().expect("at least one layer")
    }

    fn score(&self, params: &GcnParams, v: usize) -> f64 {
        let top = self.out();
        let dim = params.dim();
        let i = top.pos[v] as usize;
        dot(&params.w, &top.h[i * dim..(i + 1) * dim])
    }
}

fn node_sets(g: &Graph, out: &[usize], depth: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); depth];
    let mut cur: Vec<usize> = out.to_vec();
    cur.sort_unstable();
    cur.dedup();
    for k in (0..depth).rev() {
        sets[k] = cur.clone();
        if k > 0 {
            let mut next = cur.clone();
            for &v in &cur {
                next.extend_from_slice(g.neighbors(v));
            }
            next.sort_unstable();
            next.dedup();
            cur = next;
        }
    }
    sets
}

fn forward(g: &Graph, params: &GcnParams, out: &[usize], mut rng: Option<&mut Rng>) -> Forward {
    let n = g.node_count();
    let dim = params.dim();
    let h0 = input_features(g);
    let sets = node_sets(g, out, params.depth());
    let mut layers: Vec<Layer> = Vec::with_capacity(sets.len());
    for (k, nodes) in sets.into_iter().enumerate() {
        let in_dim = if k == 0 { 1 } else { dim };
        let prev = layers.last();
        let prev_h = |u: usize| -> &[f64] {
            match prev {
                None => std::slice::from_ref(&h0[u]),
                Some(p) => {
                    let i = p.pos[u] as usize;
                    &p.h[i * dim..(i + 1) * dim]
                }
            }
        };
        let w = &params.layers[k];
        let mut input = vec![0.0; nodes.len() * 2 * in_dim];
        let mut pre = vec![0.0; nodes.len() * dim];
        input
            .par_chunks_mut(2 * in_dim)
            .zip(pre.par_chunks_mut(dim))
            .zip(nodes.par_iter())
            .for_each(|((inp, z), &v)| {
                let nb = g.neighbors(v);
                if !nb.is_empty() {
                    for &u in nb {
                        for (a, x) in inp[..in_dim].iter_mut().zip(prev_h(u)) {
                            *a += x;
                        }
                    }
                    let inv = 1.0 / nb.len() as f64;
                    inp[..in_dim].iter_mut().for_each(|a| *a *= inv);
                }
                inp[in_dim..].copy_from_slice(prev_h(v));
                w.mul_vec_into(inp, z);
            });
        let mut h: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mask = match rng.as_deref_mut() {
            Some(r) if params.dropout > 0.0 => {
                let keep = 1.0 - params.dropout;
                let m: Vec<f64> = (0..h.len())
                    .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                h.iter_mut().zip(&m).for_each(|(a, s)| *a *= s);
                Some(m)
            }
            _ => None,
        };
        let mut pos = vec![ABSENT; n];
        for (i, &v) in nodes.iter().enumerate() {
            pos[v] = i as u32;
        }
        layers.push(Layer {
            nodes,
            pos,
            input,
            pre,
            h,
            mask,
        });
    }
    Forward { layers }
}

/// GCN scores for a node set and its one-hop neighbourhood.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnScores {
    /// Scored nodes in ascending id order.
    pub nodes: Vec<usize>,
    pub scores: Vec<f64>,
    pos: Vec<u32>,
}

impl GcnScores {
    /// Scores as a dense vector over `node_count` nodes; unscored nodes get 0.
    pub fn to_dense(&self, node_count: usize) -> Vec<f64> {
        let mut d = vec![0.0; node_count];
        for (&v, &s) in self.nodes.iter().zip(&self.scores) {
            d[v] = s;
        }
        d
    }

    pub fn get(&self, v: usize) -> Option<f64> {
        match self.pos.get(v) {
            Some(&i) if i != ABSENT => Some(self.scores[i as usize]),
            _ => None,
        }
    }
}

/// Scores every node of `good ∪ N(good)` with dropout disabled.
pub fn gcn_forward(g: &Graph, params: &GcnParams, good: &[usize]) -> Result<GcnScores> {
    params.validate()?;
    check_nodes(g, good)?;
    let mut out: Vec<usize> = good.to_vec();
    for &v in good {
        out.extend_from_slice(g.neighbors(v));
    }
    score_nodes(g, params, &out)
}

/// Scores exactly the given nodes with dropout disabled.
pub fn score_nodes(g: &Graph, params: &GcnParams, nodes: &[usize]) -> Result<GcnScores> {
    params.validate()?;
    check_nodes(g, nodes)?;
    let f = forward(g, params, nodes, None);
    let top = f.out();
    let scores = top.nodes.iter().map(|&v| f.score(params, v)).collect();
    Ok(GcnScores {
        nodes: top.nodes.clone(),
        scores,
        pos: top.pos.clone(),
    })
}

fn check_nodes(g: &Graph, nodes: &[usize]) -> Result<()> {
    match nodes.iter().find(|&&v| v >= g.node_count()) {
        Some(v) => Err(GcombError::domain(format!("node {v} out of range"))),
        None => Ok(()),
    }
}

/// Mean squared error over `batch` (pairs of node and target score) and its
/// gradient, shaped like the parameters. Dropout is disabled.
pub fn loss_and_grad(g: &Graph, params: &GcnParams, batch: &[(usize, f64)]) -> Result<(f64, GcnParams)> {
    params.validate()?;
    check_nodes(g, &batch.iter().map(|b| b.0).collect::<Vec<_>>())?;
    if batch.is_empty() {
        return Err(GcombError::domain("empty batch"));
    }
    Ok(backprop(g, params, batch, None))
}

/// Loss alone, for finite-difference checks.
pub fn loss(g: &Graph, params: &GcnParams, batch: &[(usize, f64)]) -> Result<f64> {
    params.validate()?;
    if batch.is_empty() {
        return Err(GcombError::domain("empty batch"));
    }
    let nodes: Vec<usize> = batch.iter().map(|b| b.0).collect();
    check_nodes(g, &nodes)?;
    let f = forward(g, params, &nodes, None);
    Ok(mse(&f, params, batch))
}

fn mse(f: &Forward, params: &GcnParams, batch: &[(usize, f64)]) -> f64 {
    batch
        .iter()
        .map(|&(v, t)| (t - f.score(params, v)).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

fn backprop(g: &Graph, params: &GcnParams, batch: &[(usize, f64)], rng: Option<&mut Rng>) -> (f64, GcnParams) {
    let dim = params.dim();
    let depth = params.depth();
    let nodes: Vec<usize> = batch.iter().map(|b| b.0).collect();
    let f = forward(g, params, &nodes, rng);
    let loss = mse(&f, params, batch);
    let mut grad = GcnParams::zeros(depth, dim);
    grad.dropout = params.dropout;

    let top = f.out();
    let mut dh = vec![0.0; top.h.len()];
    let scale = 2.0 / batch.len() as f64;
    for &(v, t) in batch {
        let i = top.pos[v] as usize;
        let hv = &top.h[i * dim..(i + 1) * dim];
        let d = scale * (dot(&params.w, hv) - t);
        for c in 0..dim {
            grad.w[c] += d * hv[c];
            dh[i * dim + c] += d * params.w[c];
        }
    }

    for k in (0..depth).rev() {
        let layer = &f.layers[k];
        let in_dim = if k == 0 { 1 } else { dim };
        let mut dprev = if k > 0 {
            vec![0.0; f.layers[k - 1].h.len()]
        } else {
            Vec::new()
        };
        let mut dz = vec![0.0; dim];
        let mut din = vec![0.0; 2 * in_dim];
        for (i, &v) in layer.nodes.iter().enumerate() {
            let mut any = false;
            for c in 0..dim {
                let j = i * dim + c;
                let m = layer.mask.as_ref().map_or(1.0, |m| m[j]);
                dz[c] = if layer.pre[j] > 0.0 { dh[j] * m } else { 0.0 };
                any |= dz[c] != 0.0;
            }
            if !any {
                continue;
            }
            let inp = &layer.input[i * 2 * in_dim..(i + 1) * 2 * in_dim];
            grad.layers[k].add_outer(&dz, inp);
            if k == 0 {
                continue;
            }
            din.iter_mut().for_each(|x| *x = 0.0);
            params.layers[k].mul_t_vec_add(&dz, &mut din);
            let prev = &f.layers[k - 1];
            let nb = g.neighbors(v);
            if !nb.is_empty() {
                let inv = 1.0 / nb.len() as f64;
                for &u in nb {
                    let p = prev.pos[u] as usize;
                    for c in 0..dim {
                        dprev[p * dim + c] += din[c] * inv;
                    }
                }
            }
            let p = prev.pos[v] as usize;
            for c in 0..dim {
                dprev[p * dim + c] += din[dim + c];
            }
        }
        dh = dprev;
    }
    (loss, grad)
}

/// One training graph with its labels.
#[derive(Clone, Copy, Debug)]
pub struct GcnTrainItem<'a> {
    pub graph: &'a Graph,
    pub table: &'a NodeScoreTable,
    /// Nodes that may be selected; `None` means every node.
    pub eligible: Option<&'a [bool]>,
}

#[derive(Clone, Debug)]
pub struct GcnTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation loss is measured every this many steps and after the last.
    pub val_every: usize,
}

impl Default for GcnTrainConfig {
    fn default() -> Self {
        GcnTrainConfig {
            steps: DEFAULT_STEPS,
            lr: DEFAULT_LR,
            seed: 0,
            val_every: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GcnTrainReport {
    pub steps: usize,
    /// Steps whose sampled good-node set was empty.
    pub skipped: usize,
    pub last_train_loss: f64,
    pub best_val_loss: f64,
    /// Step after which the returned parameters were taken (0 = initial).
    pub best_step: usize,
    /// `(step, mean training loss since the previous checkpoint, validation
    /// loss)` at every validation checkpoint.
    pub history: Vec<(usize, f64, Option<f64>)>,
}

/// Good nodes of `item` at budget `b_norm` with their target scores.
pub fn training_batch(item: &GcnTrainItem, noise: &NoiseCutoffModel, b_norm: f64) -> Result<Vec<(usize, f64)>> {
    Ok(predict_good_nodes(noise, item.graph, b_norm)?
        .into_iter()
        .filter(|&v| item.eligible.is_none_or(|e| e[v]))
        .map(|v| (v, item.table.scores[v]))
        .collect())
}

fn b_max(item: &GcnTrainItem, noise: &NoiseCutoffModel) -> f64 {
    if item.table.b_max_norm > 0.0 {
        item.table.b_max_norm
    } else {
        noise.b_max_norm
    }
}

/// Mean validation loss at each graph's largest budget; `None` when no
/// validation graph yields a non-empty batch.
fn validation_loss(items: &[GcnTrainItem], noise: &NoiseCutoffModel, params: &GcnParams) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0;
    for item in items {
        let b = b_max(item, noise);
        if !(b > 0.0) {
            continue;
        }
        let batch = training_batch(item, noise, b)?;
        if batch.is_empty() {
            continue;
        }
        let nodes: Vec<usize> = batch.iter().map(|x| x.0).collect();
        let f = forward(item.graph, params, &nodes, None);
        total += mse(&f, params, &batch);
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Trains with Adam on one sampled (graph, budget) pair per step and returns
/// the parameters with the lowest validation loss. The first half (rounded
/// up) of `items` is used for training and the rest for validation; a single
/// graph serves both roles.
pub fn gcn_train(
    items: &[GcnTrainItem],
    noise: &NoiseCutoffModel,
    params0: GcnParams,
    cfg: &GcnTrainConfig,
) -> Result<(GcnParams, GcnTrainReport)> {
    params0.validate()?;
    if cfg.steps == 0 {
        return Err(GcombError::domain("training needs at least one step"));
    }
    if items.is_empty() {
        return Err(GcombError::domain("no training graphs"));
    }
    for item in items {
        if item.table.scores.len() != item.graph.node_count() {
            return Err(GcombError::domain("score table does not match its graph"));
        }
    }
    let n_train = items.len().div_ceil(2);
    let (train, val) = items.split_at(n_train);
    let val = if val.is_empty() { train } else { val };

    let mut rng = seed::rng(seed::derive_labeled(cfg.seed, "gcn-train"));
    let mut params = params0;
    let mut opt = Adam::new(cfg.lr, &params.sizes());
    let mut report = GcnTrainReport::default();
    let mut best = validation_loss(val, noise, &params)?.map(|l| (l, params.clone()));
    if let Some((l, _)) = &best {
        report.best_val_loss = *l;
    }
    let val_every = cfg.val_every.max(1);
    let (mut window_loss, mut window_steps) = (0.0, 0usize);

    for step in 1..=cfg.steps {
        report.steps = step;
        let item = &train[rng.gen_range(0..train.len())];
        let bmax = b_max(item, noise);
        // Uniform on (0, bmax].
        let b = bmax * (1.0 - rng.gen::<f64>());
        let batch = if b > 0.0 {
            training_batch(item, noise, b)?
        } else {
            Vec::new()
        };
        if batch.is_empty() {
            report.skipped += 1;
        } else {
            let (l, grad) = backprop(item.graph, &params, &batch, Some(&mut rng));
            if !l.is_finite() {
                return Err(GcombError::Numeric(format!("gcn loss became {l} at step {step}")));
            }
            report.last_train_loss = l;
            window_loss += l;
            window_steps += 1;
            let grads = grad.tensors();
            opt.step(&mut params.tensors_mut(), &grads);
        }
        if step % val_every == 0 || step == cfg.steps {
            let val_loss = validation_loss(val, noise, &params)?;
            let mean_train = if window_steps > 0 { window_loss / window_steps as f64 } else { 0.0 };
            report.history.push((step, mean_train, val_loss));
            (window_loss, window_steps) = (0.0, 0);
            if let Some(l) = val_loss {
                if !l.is_finite() {
                    return Err(GcombError::Numeric(format!("gcn validation loss became {l} at step {step}")));
                }
                if best.as_ref().is_none_or(|(b, _)| l < *b) {
                    best = Some((l, params.clone()));
                    report.best_val_loss = l;
                    report.best_step = step;
                }
            }
        }
    }
    match best {
        Some((_, p)) => Ok((p, report)),
        None => {
            report.best_step = report.steps;
            Ok((params, report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_bp;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v, 0.5)).collect();
        Graph::from_edges(n, false, edges).unwrap()
    }

    fn all_nodes_model() -> NoiseCutoffModel {
        NoiseCutoffModel {
            knots: vec![(1.0, 100.0)],
            b_max_norm: 1.0,
        }
    }

    #[test]
    fn zero_params_give_zero_scores() {
        let g = path(6);
        let p = GcnParams::zeros(2, 8);
        let s = gcn_forward(&g, &p, &[0, 3]).unwrap();
        assert_eq!(s.nodes, vec![0, 1, 2, 3, 4]);
        assert!(s.scores.iter().all(|&x| x == 0.0));
        assert_eq!(s.get(5), None);
    }

    #[test]
    fn two_node_hand_computation() {
        // Arcs 0->1 (0.8) and 1->0 (0.2): x = [0.8, 0.2], h0 = [1, 0.25].
        let g = Graph::from_edges(2, true, vec![(0, 1, 0.8), (1, 0, 0.2)]).unwrap();
        let mut p = GcnParams::zeros(1, 2);
        p.layers[0].data = vec![1.0, -0.5, -2.0, 3.0];
        p.w = vec![0.3, 0.7];
        let s = gcn_forward(&g, &p, &[0]).unwrap();
        // Node 0: agg = h0[1] = 0.25, self = 1.
        // z = [0.25 - 0.5, -0.5 + 3] = [-0.25, 2.5] -> score 0.7 * 2.5.
        assert!((s.get(0).unwrap() - 1.75).abs() < 1e-12);
        // Node 1: agg = 1, self = 0.25.
        // z = [1 - 0.125, -2 + 0.75] = [0.875, -1.25] -> score 0.3 * 0.875.
        assert!((s.get(1).unwrap() - 0.2625).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_uses_zero_aggregate() {
        let g = Graph::from_edges(3, false, vec![(0, 1, 1.0)]).unwrap();
        let p = GcnParams::new(1, 4, 0.0, 3).unwrap();
        let s = gcn_forward(&g, &p, &[2]).unwrap();
        // x_2 = 0 so the self half is zero too.
        assert_eq!(s.get(2), Some(0.0));
        let mut manual = 0.0;
        for r in 0..4 {
            manual += p.w[r] * (p.layers[0].get(r, 1) * 0.0).max(0.0);
        }
        assert_eq!(s.get(2).unwrap(), manual);
    }

    fn central_diff(g: &Graph, p: &GcnParams, batch: &[(usize, f64)]) -> f64 {
        let (_, grad) = loss_and_grad(g, p, batch).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let n_tensors = p.depth() + 1;
        for t in 0..n_tensors {
            let len = p.tensors()[t].len();
            for i in 0..len {
                let mut plus = p.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t][i] -= h;
                let fd = (loss(g, &plus, batch).unwrap() - loss(g, &minus, batch).unwrap()) / (2.0 * h);
                let an = grad.tensors()[t][i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = crate::graph::assign_weights(
            &crate::graph::gen_ba(10, 2, 4).unwrap(),
            &crate::graph::WeightModel::new(crate::graph::WeightKind::TriValency, 9),
        );
        let p = GcnParams::new(2, 5, 0.0, 11).unwrap();
        let batch = vec![(0, 0.3), (4, 0.1), (7, 0.05)];
        let err = central_diff(&g, &p, &batch);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let g = gen_bp(60, 0.1, 2).unwrap();
        let p = GcnParams::new(2, 16, 0.1, 5).unwrap();
        let a = gcn_forward(&g, &p, &[0, 1, 2]).unwrap();
        let b = gcn_forward(&g, &p, &[0, 1, 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_depend_only_on_k_hop_neighbourhood() {
        // Path 0-1-...-9; V^g = {0}, K = 2, so nodes 0..=3 are involved in
        // the output set {0, 1}. Changing the edge 7-8 (keeping the max
        // feature unchanged) must not alter the scores.
        let g1 = path(10);
        let mut edges: Vec<_> = (1..10).map(|v| (v - 1, v, 0.5)).collect();
        edges[7].2 = 0.1;
        let g2 = Graph::from_edges(10, false, edges).unwrap();
        let p = GcnParams::new(2, 8, 0.0, 1).unwrap();
        let a = gcn_forward(&g1, &p, &[0]).unwrap();
        let b = gcn_forward(&g2, &p, &[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_round_trip() {
        let p = GcnParams::new(3, 4, 0.1, 8).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let q = GcnParams::read(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert!(GcnParams::read("gcn-v1 2 3\nW 3 0 0 1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = GcnParams::zeros(2, 3);
        p.layers[1] = Mat::zeros(3, 3);
        assert!(gcn_forward(&path(3), &p, &[0]).is_err());
    }

    #[test]
    fn zero_targets_and_zero_init_leave_params_unchanged() {
        let g = path(5);
        let table = NodeScoreTable {
            scores: vec![0.0; 5],
            m: 1,
            sum_final: 1.0,
            b_max_norm: 1.0,
        };
        let items = [GcnTrainItem {
            graph: &g,
            table: &table,
            eligible: None,
        }];
        let p0 = GcnParams::zeros(2, 4);
        let cfg = GcnTrainConfig {
            steps: 50,
            ..Default::default()
        };
        let (p, report) = gcn_train(&items, &all_nodes_model(), p0.clone(), &cfg).unwrap();
        assert_eq!(p, p0);
        assert_eq!(report.last_train_loss, 0.0);
    }

    #[test]
    fn single_node_regression_converges() {
        let g = Graph::from_edges(1, false, vec![]).unwrap();
        let table = NodeScoreTable {
            scores: vec![0.7],
            m: 1,
            sum_final: 1.0,
            b_max_norm: 1.0,
        };
        let items = [GcnTrainItem {
            graph: &g,
            table: &table,
            eligible: None,
        }];
        let p0 = GcnParams::new(DEFAULT_DEPTH, DEFAULT_DIM, DEFAULT_DROPOUT, 1).unwrap();
        let cfg = GcnTrainConfig {
            steps: 1000,
            seed: 2,
            ..Default::default()
        };
        let (p, _) = gcn_train(&items, &all_nodes_model(), p0, &cfg).unwrap();
        let s = gcn_forward(&g, &p, &[0]).unwrap().get(0).unwrap();
        assert!((s - 0.7).abs() < 1e-3, "score {s}");
    }
}
