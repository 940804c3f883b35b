//! Soft supervision labels from probabilistic greedy.
//!
//! Each run samples the next node with probability proportional to its
//! marginal gain, so repeated runs explore the solution space around the
//! greedy path. A node's score is its total gain across runs divided by the
//! total objective value reached.

use std::io::{BufRead, Write};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{GcombError, Result};
use crate::fmt;
use crate::objectives::Objective;
use crate::seed;

/// Default gain threshold that ends a run.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Default number of runs per training graph.
pub const DEFAULT_RUNS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionTrace {
    /// `(node, marginal gain at pick time)` in pick order.
    pub picks: Vec<(usize, f64)>,
    pub final_value: f64,
    pub graph_id: usize,
    pub run_index: usize,
}

impl SolutionTrace {
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.picks.iter().map(|p| p.0)
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }
}

/// One probabilistic-greedy run.
///
/// Negative gains (Monte-Carlo noise) are clamped to zero. The run stops when
/// no candidate has positive gain, or when the sampled node's gain is at most
/// `delta`; that node is not added.
pub fn prob_greedy(obj: &Objective, delta: f64, seed: u64) -> Result<SolutionTrace> {
    if !(delta > 0.0) {
        return Err(GcombError::domain(format!("delta must be positive, got {delta}")));
    }
    let mut rng = seed::rng(seed);
    let candidates = obj.candidates();
    let mut state = obj.empty_state();
    let mut picks = Vec::new();
    let mut gains = vec![0.0; candidates.len()];
    loop {
        let mut total = 0.0;
        for (slot, &v) in gains.iter_mut().zip(&candidates) {
            *slot = if state.contains(v) {
                0.0
            } else {
                obj.gain_unchecked(&state, v).max(0.0)
            };
            total += *slot;
        }
        if !(total > 0.0) {
            break;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &g) in gains.iter().enumerate() {
            if g > 0.0 {
                acc += g;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let i = chosen.expect("positive total has a positive entry");
        if gains[i] <= delta {
            break;
        }
        let v = candidates[i];
        let gain = obj.insert(&mut state, v)?;
        picks.push((v, gain));
    }
    Ok(SolutionTrace {
        picks,
        final_value: obj.value(&state),
        graph_id: 0,
        run_index: 0,
    })
}

/// `runs` independent traces; run `i` uses seed `derive(seed, i)` so the
/// result does not depend on scheduling.
pub fn prob_greedy_runs(
    obj: &Objective,
    runs: usize,
    delta: f64,
    seed: u64,
    graph_id: usize,
) -> Result<Vec<SolutionTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            prob_greedy(obj, delta, seed::derive(seed, i as u64)).map(|mut t| {
                t.graph_id = graph_id;
                t.run_index = i;
                t
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeScoreTable {
    pub scores: Vec<f64>,
    /// Number of runs aggregated.
    pub m: usize,
    /// Sum of the runs' final objective values.
    pub sum_final: f64,
    /// Longest run length divided by the node count.
    pub b_max_norm: f64,
}

/// Aggregates traces of one graph with `node_count` nodes into per-node
/// scores `Σ_i gain_i(v) / Σ_i f(S_i)`.
pub fn build_scores(traces: &[SolutionTrace], node_count: usize) -> Result<NodeScoreTable> {
    if traces.is_empty() {
        return Err(GcombError::domain("cannot build scores from zero traces"));
    }
    let mut scores = vec![0.0; node_count];
    let mut sum_final = 0.0;
    let mut longest = 0;
    for t in traces {
        for &(v, gain) in &t.picks {
            if v >= node_count {
                return Err(GcombError::domain(format!("trace node {v} out of range")));
            }
            scores[v] += gain;
        }
        sum_final += t.final_value;
        longest = longest.max(t.len());
    }
    if sum_final > 0.0 {
        scores.iter_mut().for_each(|s| *s /= sum_final);
    }
    Ok(NodeScoreTable {
        scores,
        m: traces.len(),
        sum_final,
        b_max_norm: if node_count == 0 {
            0.0
        } else {
            longest as f64 / node_count as f64
        },
    })
}

/// Writes traces as `trace <i> <final_value>` blocks followed by
/// `pick <node> <gain>` lines.
pub fn write_traces(traces: &[SolutionTrace], mut out: impl Write) -> Result<()> {
    for t in traces {
        writeln!(out, "trace {} {}", t.run_index, fmt::real(t.final_value))?;
        for &(v, g) in &t.picks {
            writeln!(out, "pick {v} {}", fmt::real(g))?;
        }
    }
    Ok(())
}

pub fn read_traces(input: impl BufRead) -> Result<Vec<SolutionTrace>> {
    let mut traces: Vec<SolutionTrace> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => {}
            ["trace", idx, value] => traces.push(SolutionTrace {
                picks: Vec::new(),
                final_value: parse_num(value, i + 1)?,
                graph_id: 0,
                run_index: parse_num(idx, i + 1)?,
            }),
            ["pick", v, g] => {
                let t = traces
                    .last_mut()
                    .ok_or_else(|| GcombError::parse(i + 1, "pick before any trace"))?;
                t.picks.push((parse_num(v, i + 1)?, parse_num(g, i + 1)?));
            }
            _ => return Err(GcombError::parse(i + 1, format!("unexpected `{line}`"))),
        }
    }
    Ok(traces)
}

/// Writes a score table: `nodes <n>`, `runs <m> <sum_final> <b_max_norm>`,
/// then one `score <node> <value>` line per node.
pub fn write_scores(table: &NodeScoreTable, mut out: impl Write) -> Result<()> {
    writeln!(out, "nodes {}", table.scores.len())?;
    writeln!(
        out,
        "runs {} {} {}",
        table.m,
        fmt::real(table.sum_final),
        fmt::real(table.b_max_norm)
    )?;
    for (v, s) in table.scores.iter().enumerate() {
        writeln!(out, "score {v} {}", fmt::real(*s))?;
    }
    Ok(())
}

pub fn read_scores(input: impl BufRead) -> Result<NodeScoreTable> {
    let mut table = NodeScoreTable {
        scores: Vec::new(),
        m: 0,
        sum_final: 0.0,
        b_max_norm: 0.0,
    };
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => {}
            ["nodes", n] => table.scores = vec![0.0; parse_num(n, i + 1)?],
            ["runs", m, sum, bmax] => {
                table.m = parse_num(m, i + 1)?;
                table.sum_final = parse_num(sum, i + 1)?;
                table.b_max_norm = parse_num(bmax, i + 1)?;
            }
            ["score", v, s] => {
                let v: usize = parse_num(v, i + 1)?;
                let slot = table
                    .scores
                    .get_mut(v)
                    .ok_or_else(|| GcombError::parse(i + 1, format!("node {v} out of range")))?;
                *slot = parse_num(s, i + 1)?;
            }
            _ => return Err(GcombError::parse(i + 1, format!("unexpected `{line}`"))),
        }
    }
    Ok(table)
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| GcombError::parse(line, format!("invalid number `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_bp, Graph, Side};
    use crate::objectives::ObjectiveSpec;

    fn disjoint_pair() -> Graph {
        // Two side-A nodes covering disjoint halves of side B.
        let edges = vec![(0, 2, 1.0), (0, 3, 1.0), (1, 4, 1.0), (1, 5, 1.0)];
        let sides = vec![Side::A, Side::A, Side::B, Side::B, Side::B, Side::B];
        Graph::from_edges(6, true, edges).unwrap().with_sides(sides).unwrap()
    }

    #[test]
    fn degenerate_distribution_forces_first_pick() {
        // Only node 0 has any gain.
        let g = Graph::from_edges(4, true, vec![(0, 2, 1.0), (0, 3, 1.0)])
            .unwrap()
            .with_sides(vec![Side::A, Side::A, Side::B, Side::B])
            .unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        for s in 0..20 {
            let t = prob_greedy(&obj, 0.01, s).unwrap();
            assert_eq!(t.picks, vec![(0, 1.0)]);
        }
    }

    #[test]
    fn first_pick_is_fair_between_equal_nodes() {
        let g = disjoint_pair();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let runs = 10_000;
        let zeros = (0..runs)
            .filter(|&i| prob_greedy(&obj, 0.01, seed::derive(99, i)).unwrap().picks[0].0 == 0)
            .count() as f64;
        let sigma = (runs as f64 * 0.25).sqrt();
        assert!((zeros - runs as f64 / 2.0).abs() < 3.0 * sigma, "{zeros}");
    }

    #[test]
    fn large_delta_gives_empty_trace() {
        let g = disjoint_pair();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let t = prob_greedy(&obj, 0.5, 3).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.final_value, 0.0);
        assert!(prob_greedy(&obj, 0.0, 3).is_err());
    }

    #[test]
    fn scores_direct_formula() {
        let t = SolutionTrace {
            picks: vec![(1, 0.4), (0, 0.4)],
            final_value: 0.8,
            graph_id: 0,
            run_index: 0,
        };
        let table = build_scores(&[t], 3).unwrap();
        assert_eq!(table.scores[1], 0.5);
        assert_eq!(table.scores[2], 0.0);
        assert_eq!(table.m, 1);
    }

    #[test]
    fn scores_two_traces() {
        let mk = |g, i| SolutionTrace {
            picks: vec![(0, g)],
            final_value: 0.5,
            graph_id: 0,
            run_index: i,
        };
        let table = build_scores(&[mk(0.2, 0), mk(0.1, 1)], 1).unwrap();
        assert!((table.scores[0] - 0.3).abs() < 1e-15);
        assert!(build_scores(&[], 3).is_err());
    }

    #[test]
    fn traces_are_deterministic_and_sum_to_one() {
        let g = gen_bp(200, 0.1, 4).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let a = prob_greedy_runs(&obj, 6, 0.01, 7, 0).unwrap();
        let b = prob_greedy_runs(&obj, 6, 0.01, 7, 0).unwrap();
        assert_eq!(a, b);
        for t in &a {
            let total: f64 = t.picks.iter().map(|p| p.1).sum();
            assert!((total - t.final_value).abs() < 1e-12);
            assert!(t.picks.iter().all(|p| p.1 > 0.01));
        }
        let table = build_scores(&a, g.node_count()).unwrap();
        let sum: f64 = table.scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for t in &a {
            assert!(t.nodes().all(|v| table.scores[v] > 0.0));
        }
        let longest = a.iter().map(|t| t.len()).max().unwrap();
        assert_eq!(table.b_max_norm, longest as f64 / 200.0);
    }

    #[test]
    fn text_round_trip() {
        let g = gen_bp(60, 0.2, 1).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let traces = prob_greedy_runs(&obj, 3, 0.01, 2, 0).unwrap();
        let mut buf = Vec::new();
        write_traces(&traces, &mut buf).unwrap();
        assert_eq!(read_traces(buf.as_slice()).unwrap(), traces);

        let table = build_scores(&traces, g.node_count()).unwrap();
        let mut buf = Vec::new();
        write_scores(&table, &mut buf).unwrap();
        assert_eq!(read_scores(buf.as_slice()).unwrap(), table);
    }
}
