//! Budget-indexed noise predictor.
//!
//! Nodes are ranked by their raw feature (outgoing weight sum). For each
//! normalized budget the model stores the worst percentile rank any
//! probabilistic-greedy prefix of that size reached on the training graphs;
//! at inference every node ranked at or above the interpolated cutoff is
//! kept and the rest are pruned.

use std::io::{BufRead, Write};

use crate::error::{GcombError, Result};
use crate::fmt;
use crate::graph::Graph;
use crate::supervision::SolutionTrace;

/// Budgets (fractions of |V|) at which cutoffs are fitted, before being
/// intersected with `(0, b_max]`.
pub const BUDGET_GRID: [f64; 7] = [0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05];

const HEADER: &str = "noise-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCutoffModel {
    /// `(normalized budget, percentile cutoff)`, strictly increasing in
    /// budget and non-decreasing in cutoff.
    pub knots: Vec<(f64, f64)>,
    pub b_max_norm: f64,
}

/// Rank of every node by descending raw feature; ties go to the smaller id.
pub fn feature_ranks(g: &Graph) -> Vec<usize> {
    let order = rank_order(g);
    let mut rank = vec![0; order.len()];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    rank
}

/// Nodes sorted best-first by raw feature.
pub fn rank_order(g: &Graph) -> Vec<usize> {
    let x = g.out_weight_sum();
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    order
}

/// Percentile of a rank: rank 0 maps to 0.
pub fn percentile(rank: usize, node_count: usize) -> f64 {
    100.0 * rank as f64 / node_count as f64
}

/// Number of nodes a normalized budget stands for: `⌈b · |V|⌉`.
pub fn budget_count(b_norm: f64, node_count: usize) -> usize {
    (b_norm * node_count as f64).ceil() as usize
}

/// The default fitting grid for a given `b_max_norm`.
pub fn default_budgets(b_max_norm: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = BUDGET_GRID.iter().copied().filter(|&b| b <= b_max_norm).collect();
    if b_max_norm > 0.0 && grid.last() != Some(&b_max_norm) {
        grid.push(b_max_norm);
    }
    grid
}

/// Largest trace length over node count across all graphs.
pub fn b_max_norm(data: &[(&Graph, &[SolutionTrace])]) -> f64 {
    data.iter()
        .flat_map(|(g, traces)| {
            traces
                .iter()
                .map(move |t| t.len() as f64 / g.node_count().max(1) as f64)
        })
        .fold(0.0, f64::max)
}

/// Fits cutoffs at `budgets` from each graph's traces.
pub fn fit_noise(data: &[(&Graph, &[SolutionTrace])], budgets: &[f64]) -> Result<NoiseCutoffModel> {
    if data.is_empty() {
        return Err(GcombError::domain("fit_noise needs at least one graph"));
    }
    let mut budgets = budgets.to_vec();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    if budgets.is_empty() {
        return Err(GcombError::domain("fit_noise needs at least one budget"));
    }
    if let Some(b) = budgets.iter().find(|&&b| !(b > 0.0)) {
        return Err(GcombError::domain(format!("budget {b} is not positive")));
    }
    let ranks: Vec<Vec<usize>> = data.iter().map(|(g, _)| feature_ranks(g)).collect();
    let mut knots = Vec::with_capacity(budgets.len());
    let mut running = 0.0f64;
    for &b in &budgets {
        let mut cutoff = 0.0f64;
        for ((g, traces), rank) in data.iter().zip(&ranks) {
            let n = g.node_count();
            let k = budget_count(b, n);
            let worst = traces
                .iter()
                .flat_map(|t| t.nodes().take(k))
                .map(|v| rank[v])
                .max();
            if let Some(r) = worst {
                cutoff = cutoff.max(percentile(r, n));
            }
        }
        running = running.max(cutoff);
        knots.push((b, running));
    }
    Ok(NoiseCutoffModel {
        knots,
        b_max_norm: b_max_norm(data),
    })
}

impl NoiseCutoffModel {
    /// Percentile cutoff at `b_norm`, interpolated linearly between knots
    /// and clamped to the end knots outside their range.
    pub fn cutoff(&self, b_norm: f64) -> Result<f64> {
        let (first, last) = match (self.knots.first(), self.knots.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(GcombError::domain("noise model has no knots")),
        };
        if !(b_norm > 0.0) {
            return Err(GcombError::domain(format!("budget {b_norm} is not positive")));
        }
        if b_norm <= first.0 {
            return Ok(first.1);
        }
        if b_norm >= last.0 {
            return Ok(last.1);
        }
        let i = self.knots.partition_point(|k| k.0 <= b_norm);
        let (b0, c0) = self.knots[i - 1];
        let (b1, c1) = self.knots[i];
        if b_norm == b0 {
            return Ok(c0);
        }
        Ok(c0 + (c1 - c0) * (b_norm - b0) / (b1 - b0))
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{HEADER}")?;
        writeln!(out, "bmax {}", fmt::real(self.b_max_norm))?;
        for &(b, c) in &self.knots {
            writeln!(out, "knot {} {}", fmt::real(b), fmt::real(c))?;
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == HEADER => {}
            _ => return Err(GcombError::Format(format!("missing `{HEADER}` header"))),
        }
        let mut model = NoiseCutoffModel {
            knots: Vec::new(),
            b_max_norm: 0.0,
        };
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| GcombError::Format(format!("invalid number `{s}`")))
            };
            match f.as_slice() {
                [] => {}
                ["bmax", v] => model.b_max_norm = num(v)?,
                ["knot", b, c] => model.knots.push((num(b)?, num(c)?)),
                _ => return Err(GcombError::Format(format!("unexpected `{line}`"))),
            }
        }
        if model.knots.is_empty() {
            return Err(GcombError::Format("noise model has no knots".into()));
        }
        if model.knots.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 > w[1].1) {
            return Err(GcombError::Format("knots are not monotone".into()));
        }
        Ok(model)
    }
}

/// Nodes whose feature percentile is at most the cutoff for `b_norm`,
/// in ascending id order.
pub fn predict_good_nodes(model: &NoiseCutoffModel, g: &Graph, b_norm: f64) -> Result<Vec<usize>> {
    let cutoff = model.cutoff(b_norm)?;
    let n = g.node_count();
    let ranks = feature_ranks(g);
    Ok((0..n).filter(|&v| percentile(ranks[v], n) <= cutoff).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn star_like(n: usize) -> Graph {
        // Node v has out-degree n-1-v, so rank(v) = v.
        let edges: Vec<_> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v, 1.0)))
            .collect();
        Graph::from_edges(n, true, edges).unwrap()
    }

    fn trace(nodes: &[usize]) -> SolutionTrace {
        SolutionTrace {
            picks: nodes.iter().map(|&v| (v, 0.1)).collect(),
            final_value: 0.1 * nodes.len() as f64,
            graph_id: 0,
            run_index: 0,
        }
    }

    #[test]
    fn ranks_descending_with_id_ties() {
        let g = Graph::from_edges(4, true, vec![(1, 0, 1.0), (2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(rank_order(&g), vec![2, 1, 0, 3]);
        assert_eq!(feature_ranks(&g), vec![2, 1, 0, 3]);
    }

    #[test]
    fn aligned_picks_give_budget_percentile() {
        let g = star_like(100);
        let traces = vec![trace(&(0..10).collect::<Vec<_>>())];
        let model = fit_noise(&[(&g, &traces)], &[0.05, 0.1]).unwrap();
        // The worst of the top-k ranked nodes has rank k-1.
        assert_eq!(model.knots, vec![(0.05, 4.0), (0.1, 9.0)]);
        assert_eq!(model.b_max_norm, 0.1);
    }

    #[test]
    fn rank_nine_of_ten_is_ninetieth_percentile() {
        let g = star_like(10);
        let traces = vec![trace(&[0, 9, 1])];
        let model = fit_noise(&[(&g, &traces)], &[0.2]).unwrap();
        assert_eq!(model.knots, vec![(0.2, 90.0)]);
    }

    #[test]
    fn max_across_graphs() {
        let g1 = star_like(10);
        let g2 = star_like(10);
        let t1 = vec![trace(&[3])];
        let t2 = vec![trace(&[5])];
        let model = fit_noise(&[(&g1, &t1), (&g2, &t2)], &[0.1]).unwrap();
        assert_eq!(model.knots, vec![(0.1, 50.0)]);
    }

    #[test]
    fn cutoffs_forced_monotone() {
        let g = star_like(10);
        // Prefix of 1 reaches rank 8, prefix of 2 only adds rank 0.
        let traces = vec![trace(&[8, 0, 1])];
        let model = fit_noise(&[(&g, &traces)], &[0.1, 0.2]).unwrap();
        assert_eq!(model.knots, vec![(0.1, 80.0), (0.2, 80.0)]);
    }

    #[test]
    fn short_traces_truncate_naturally() {
        let g = star_like(10);
        let traces = vec![trace(&[2])];
        let model = fit_noise(&[(&g, &traces)], &[0.5]).unwrap();
        assert_eq!(model.knots, vec![(0.5, 20.0)]);
    }

    #[test]
    fn interpolation_and_clamping() {
        let model = NoiseCutoffModel {
            knots: vec![(0.01, 10.0), (0.03, 30.0)],
            b_max_norm: 0.03,
        };
        assert_eq!(model.cutoff(0.01).unwrap(), 10.0);
        assert!((model.cutoff(0.02).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(model.cutoff(0.001).unwrap(), 10.0);
        assert_eq!(model.cutoff(0.5).unwrap(), 30.0);
        assert!(model.cutoff(0.0).is_err());
        let empty = NoiseCutoffModel {
            knots: vec![],
            b_max_norm: 0.0,
        };
        assert!(empty.cutoff(0.1).is_err());
    }

    #[test]
    fn full_cutoff_keeps_everything() {
        let g = star_like(20);
        let model = NoiseCutoffModel {
            knots: vec![(0.1, 100.0)],
            b_max_norm: 0.1,
        };
        assert_eq!(predict_good_nodes(&model, &g, 0.1).unwrap(), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn boundary_node_is_kept() {
        let g = star_like(10);
        let model = NoiseCutoffModel {
            knots: vec![(0.1, 30.0)],
            b_max_norm: 0.1,
        };
        assert_eq!(predict_good_nodes(&model, &g, 0.1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn default_grid_respects_bmax() {
        assert_eq!(default_budgets(0.003), vec![0.0005, 0.001, 0.002, 0.003]);
        assert_eq!(default_budgets(0.05), BUDGET_GRID.to_vec());
        assert!(default_budgets(0.0).is_empty());
    }

    #[test]
    fn file_round_trip() {
        let model = NoiseCutoffModel {
            knots: vec![(0.001, 1.5), (0.01, 7.25)],
            b_max_norm: 0.01,
        };
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        assert_eq!(NoiseCutoffModel::read(buf.as_slice()).unwrap(), model);
        assert!(NoiseCutoffModel::read("knot 1 2\n".as_bytes()).is_err());
    }
}
