//! End-to-end training and benchmarking.
//!
//! Component seeds are derived from one master seed with these labels:
//! `label` (probabilistic greedy, indexed by graph), `ic-worlds` (IM
//! simulations), `gcn-init`, `gcn-train`, `q-init`, `q-train`, `q-locality`,
//! `solve`, `solve-locality` and `sg` (stochastic greedy). The CLI adds
//! `weights` for generated edge weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{celf, exact_mcp_with_limit, greedy, stochastic_greedy, SolveResult, EXACT_MAX_NODES};
use crate::error::{GcombError, Result};
use crate::fmt;
use crate::gcn::{self, gcn_forward, gcn_train, GcnParams, GcnTrainConfig, GcnTrainItem, GcnTrainReport};
use crate::graph::{to_bipartite, Graph};
use crate::noise::{b_max_norm, budget_count, default_budgets, fit_noise, NoiseCutoffModel};
use crate::objectives::{Objective, ObjectiveKind, ObjectiveSpec, TRAIN_MC_SIMS};
use crate::qlearn::{self, good_nodes, q_train, solve, Locality, QParams, QTrainConfig, QTrainItem, QTrainReport, SolveConfig};
use crate::seed;
use crate::supervision::{build_scores, prob_greedy_runs, NodeScoreTable, SolutionTrace, DEFAULT_DELTA, DEFAULT_RUNS};

pub const NOISE_FILE: &str = "noise.model";
pub const GCN_FILE: &str = "gcn.model";
pub const Q_FILE: &str = "q.model";
pub const BENCH_CSV_HEADER: &str = "method,dataset,objective,b,value,evals,seconds";

/// MCP needs a bipartite instance; other graphs are turned into their
/// bipartite double cover. Everything else is returned unchanged.
pub fn instance_for(kind: ObjectiveKind, g: Graph) -> Graph {
    if kind == ObjectiveKind::Mcp && !g.is_bipartite() {
        to_bipartite(&g)
    } else {
        g
    }
}

/// The objective spec used for a kind, with IM worlds seeded from `seed`.
pub fn objective_spec(kind: ObjectiveKind, mc_sims: usize, seed: u64) -> ObjectiveSpec {
    match kind {
        ObjectiveKind::Im => ObjectiveSpec::im(mc_sims, seed::derive_labeled(seed, "ic-worlds")),
        k => ObjectiveSpec::new(k),
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub mc_sims: usize,
    pub runs: usize,
    pub delta: f64,
    pub gcn_depth: usize,
    pub gcn_dim: usize,
    pub gcn_dropout: f64,
    pub gcn_steps: usize,
    pub gcn_lr: f64,
    pub q_dim: usize,
    pub q_episodes: usize,
    /// Picks per episode; `None` uses the longest training trace.
    pub q_steps: Option<usize>,
    pub n_step: usize,
    pub gamma: f64,
    pub q_lr: f64,
    pub locality: Locality,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::Mcp,
            mc_sims: TRAIN_MC_SIMS,
            runs: DEFAULT_RUNS,
            delta: DEFAULT_DELTA,
            gcn_depth: gcn::DEFAULT_DEPTH,
            gcn_dim: gcn::DEFAULT_DIM,
            gcn_dropout: gcn::DEFAULT_DROPOUT,
            gcn_steps: gcn::DEFAULT_STEPS,
            gcn_lr: gcn::DEFAULT_LR,
            q_dim: qlearn::DEFAULT_QDIM,
            q_episodes: qlearn::DEFAULT_EPISODES,
            q_steps: None,
            n_step: qlearn::DEFAULT_NSTEP,
            gamma: qlearn::DEFAULT_GAMMA,
            q_lr: qlearn::DEFAULT_QLR,
            locality: Locality::Exact,
            seed: 0,
        }
    }
}

/// The three learned artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub noise: NoiseCutoffModel,
    pub gcn: GcnParams,
    pub q: QParams,
}

impl Models {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        let mut w = open(NOISE_FILE)?;
        self.noise.write(&mut w)?;
        w.flush()?;
        let mut w = open(GCN_FILE)?;
        self.gcn.write(&mut w)?;
        w.flush()?;
        let mut w = open(Q_FILE)?;
        self.q.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| -> Result<BufReader<File>> { Ok(BufReader::new(File::open(dir.join(name))?)) };
        Ok(Models {
            noise: NoiseCutoffModel::read(open(NOISE_FILE)?)?,
            gcn: GcnParams::read(open(GCN_FILE)?)?,
            q: QParams::read(open(Q_FILE)?)?,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// `(phase, seconds)` in execution order.
    pub phases: Vec<(&'static str, f64)>,
    pub total_seconds: f64,
    pub traces: usize,
    pub b_max_norm: f64,
    pub gcn: GcnTrainReport,
    pub q: QTrainReport,
}

impl TrainReport {
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for (name, secs) in &self.phases {
            writeln!(out, "phase {name} {}", fmt::real(*secs))?;
        }
        writeln!(out, "total {}", fmt::real(self.total_seconds))?;
        writeln!(out, "traces {}", self.traces)?;
        writeln!(out, "bmax {}", fmt::real(self.b_max_norm))?;
        writeln!(
            out,
            "gcn-best step {} val {}",
            self.gcn.best_step,
            fmt::real(self.gcn.best_val_loss)
        )?;
        for (step, train, val) in &self.gcn.history {
            let val = val.map_or_else(|| "none".to_string(), fmt::real);
            writeln!(out, "gcn-loss {step} {} {val}", fmt::real(*train))?;
        }
        for (e, l) in self.q.episode_losses.iter().enumerate() {
            writeln!(out, "q-loss {} {}", e + 1, fmt::real(*l))?;
        }
        Ok(())
    }
}

/// Labels every graph with probabilistic greedy and returns the traces.
pub fn label(graphs: &[Graph], cfg: &TrainConfig) -> Result<Vec<Vec<SolutionTrace>>> {
    let spec = objective_spec(cfg.objective, cfg.mc_sims, cfg.seed);
    let base = seed::derive_labeled(cfg.seed, "label");
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let obj = Objective::new(g, spec)?;
            prob_greedy_runs(&obj, cfg.runs, cfg.delta, seed::derive(base, i as u64), i)
        })
        .collect()
}

/// Probabilistic-greedy labels, score tables, noise model, GCN and
/// Q-network, in that order. Graphs must already suit the objective (see
/// [`instance_for`]).
pub fn train(graphs: &[Graph], cfg: &TrainConfig) -> Result<(Models, TrainReport)> {
    if graphs.is_empty() {
        return Err(GcombError::domain("no training graphs"));
    }
    let total = Instant::now();
    let mut report = TrainReport::default();
    let mut phase = Instant::now();
    let mut lap = |name: &'static str, report: &mut TrainReport| {
        report.phases.push((name, phase.elapsed().as_secs_f64()));
        phase = Instant::now();
    };

    let spec = objective_spec(cfg.objective, cfg.mc_sims, cfg.seed);
    let objectives: Vec<Objective> = graphs
        .iter()
        .map(|g| Objective::new(g, spec))
        .collect::<Result<_>>()?;
    let traces = label(graphs, cfg)?;
    report.traces = traces.iter().map(Vec::len).sum();
    lap("label", &mut report);

    let tables: Vec<NodeScoreTable> = traces
        .iter()
        .zip(graphs)
        .map(|(t, g)| build_scores(t, g.node_count()))
        .collect::<Result<_>>()?;
    lap("scores", &mut report);

    let data: Vec<(&Graph, &[SolutionTrace])> = graphs.iter().zip(&traces).map(|(g, t)| (g, t.as_slice())).collect();
    let bmax = b_max_norm(&data);
    report.b_max_norm = bmax;
    let noise = fit_noise(&data, &default_budgets(bmax))?;
    lap("noise", &mut report);

    let eligible: Vec<Vec<bool>> = objectives
        .iter()
        .map(|o| (0..o.graph().node_count()).map(|v| o.is_candidate(v)).collect())
        .collect();
    let items: Vec<GcnTrainItem> = graphs
        .iter()
        .zip(&tables)
        .zip(&eligible)
        .map(|((g, t), e)| GcnTrainItem {
            graph: g,
            table: t,
            eligible: Some(e),
        })
        .collect();
    let params0 = GcnParams::new(
        cfg.gcn_depth,
        cfg.gcn_dim,
        cfg.gcn_dropout,
        seed::derive_labeled(cfg.seed, "gcn-init"),
    )?;
    let gcn_cfg = GcnTrainConfig {
        steps: cfg.gcn_steps,
        lr: cfg.gcn_lr,
        seed: cfg.seed,
        ..Default::default()
    };
    let (gcn, gcn_report) = gcn_train(&items, &noise, params0, &gcn_cfg)?;
    report.gcn = gcn_report;
    lap("gcn", &mut report);

    let mut goods = Vec::with_capacity(graphs.len());
    let mut scores = Vec::with_capacity(graphs.len());
    for (obj, table) in objectives.iter().zip(&tables) {
        let g = obj.graph();
        let b = budget_count(table.b_max_norm, g.node_count()).max(1);
        let (good, _) = good_nodes(obj, &noise, b, true)?;
        scores.push(gcn_forward(g, &gcn, &good)?.to_dense(g.node_count()));
        goods.push(good);
    }
    let q_items: Vec<QTrainItem> = objectives
        .iter()
        .zip(&goods)
        .zip(&scores)
        .map(|((o, good), s)| QTrainItem {
            objective: o,
            good,
            scores: s,
        })
        .collect();
    let longest = traces.iter().flatten().map(SolutionTrace::len).max().unwrap_or(1);
    let q_cfg = QTrainConfig {
        episodes: cfg.q_episodes,
        steps: cfg.q_steps.unwrap_or(longest).max(1),
        n_step: cfg.n_step,
        gamma: cfg.gamma,
        lr: cfg.q_lr,
        locality: cfg.locality,
        seed: cfg.seed,
        ..Default::default()
    };
    let q0 = QParams::new(cfg.q_dim, seed::derive_labeled(cfg.seed, "q-init"))?;
    let (q, q_report) = q_train(&q_items, q0, &q_cfg)?;
    report.q = q_report;
    lap("q", &mut report);

    report.total_seconds = total.elapsed().as_secs_f64();
    Ok((Models { noise, gcn, q }, report))
}

/// The top-b candidates by GCN score among the good nodes (ties to the
/// smaller id), without the Q-network.
pub fn gcn_top_b(obj: &Objective, b: usize, models: &Models, prune: bool) -> Result<SolveResult> {
    if b == 0 {
        return Err(GcombError::domain("budget must be at least 1"));
    }
    let start = Instant::now();
    let (good, _) = good_nodes(obj, &models.noise, b, prune)?;
    let scores = gcn::score_nodes(obj.graph(), &models.gcn, &good)?;
    let mut order: Vec<(usize, f64)> = scores.nodes.iter().copied().zip(scores.scores.iter().copied()).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let truncated = b > order.len();
    let solution: Vec<usize> = order.into_iter().take(b).map(|x| x.0).collect();
    let wall_time = start.elapsed().as_secs_f64();
    let objective = obj.eval(&solution)?;
    Ok(SolveResult {
        solution,
        objective,
        evals: 0,
        wall_time,
        truncated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gcomb,
    GcombNoPrune,
    GcnTopB,
    Greedy,
    Celf,
    Sg,
    Exact,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Gcomb,
        Method::GcombNoPrune,
        Method::GcnTopB,
        Method::Greedy,
        Method::Celf,
        Method::Sg,
        Method::Exact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gcomb => "gcomb",
            Method::GcombNoPrune => "gcomb-noprune",
            Method::GcnTopB => "gcn-top-b",
            Method::Greedy => "greedy",
            Method::Celf => "celf",
            Method::Sg => "sg",
            Method::Exact => "exact",
        }
    }

    pub fn needs_models(self) -> bool {
        matches!(self, Method::Gcomb | Method::GcombNoPrune | Method::GcnTopB)
    }
}

impl FromStr for Method {
    type Err = GcombError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GcombError::domain(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub dataset: String,
    pub objective: ObjectiveKind,
    pub b: usize,
    /// `None` when the method refused the instance.
    pub result: Option<SolveResult>,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        let head = format!("{},{},{},{}", self.method.name(), self.dataset, self.objective.name(), self.b);
        match &self.result {
            Some(r) => format!("{head},{},{},{}", fmt::real(r.objective), r.evals, fmt::real(r.wall_time)),
            None => format!("{head},refused,0,{}", fmt::real(0.0)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sg_epsilon: f64,
    pub locality: Locality,
    pub exact_max_nodes: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sg_epsilon: 0.1,
            locality: Locality::Exact,
            exact_max_nodes: EXACT_MAX_NODES,
            seed: 0,
        }
    }
}

/// Runs one method at one budget.
pub fn run_method(
    method: Method,
    obj: &Objective,
    b: usize,
    models: Option<&Models>,
    cfg: &BenchConfig,
) -> Result<Option<SolveResult>> {
    let need = || models.ok_or_else(|| GcombError::domain(format!("method {} needs trained models", method.name())));
    let solve_cfg = |prune| SolveConfig {
        prune,
        locality: cfg.locality,
        seed: seed::derive_labeled(cfg.seed, "solve"),
    };
    let r = match method {
        Method::Gcomb | Method::GcombNoPrune => {
            let m = need()?;
            solve(obj, b, &m.noise, &m.gcn, &m.q, &solve_cfg(method == Method::Gcomb))?.result
        }
        Method::GcnTopB => gcn_top_b(obj, b, need()?, true)?,
        Method::Greedy => greedy(obj, b)?,
        Method::Celf => celf(obj, b)?,
        Method::Sg => stochastic_greedy(obj, b, cfg.sg_epsilon, seed::derive_labeled(cfg.seed, "sg"))?,
        Method::Exact => {
            if obj.spec().kind != ObjectiveKind::Mcp {
                return Ok(None);
            }
            match exact_mcp_with_limit(obj.graph(), b, cfg.exact_max_nodes) {
                Ok(r) => r,
                Err(GcombError::Refused(_)) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    };
    Ok(Some(r))
}

/// Every (budget, method) cell on one dataset, budgets outermost and
/// methods in the given order.
pub fn bench(
    dataset: &str,
    obj: &Objective,
    budgets: &[usize],
    methods: &[Method],
    models: Option<&Models>,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(budgets.len() * methods.len());
    for &b in budgets {
        if b == 0 {
            return Err(GcombError::domain("budgets must be positive"));
        }
        for &method in methods {
            rows.push(BenchRow {
                method,
                dataset: dataset.to_string(),
                objective: obj.spec().kind,
                b,
                result: run_method(method, obj, b, models, cfg)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_bp;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            runs: 4,
            gcn_dim: 8,
            gcn_steps: 20,
            q_dim: 4,
            q_episodes: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn train_save_load_round_trip() {
        let graphs = vec![gen_bp(40, 0.15, 1).unwrap(), gen_bp(40, 0.15, 2).unwrap()];
        let (models, report) = train(&graphs, &tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path()).unwrap();
        let mut back = Models::load(dir.path()).unwrap();
        back.gcn.dropout = models.gcn.dropout;
        assert_eq!(back, models);
        let phases: f64 = report.phases.iter().map(|p| p.1).sum();
        assert!(phases <= report.total_seconds * 1.01 + 1e-3);
        assert_eq!(report.phases.len(), 5);
    }

    #[test]
    fn training_is_reproducible() {
        let graphs = vec![gen_bp(40, 0.15, 5).unwrap()];
        let a = train(&graphs, &tiny_config()).unwrap().0;
        let b = train(&graphs, &tiny_config()).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn bench_rows_and_refusals() {
        let g = gen_bp(60, 0.1, 7).unwrap();
        let obj = Objective::new(&g, ObjectiveSpec::mcp()).unwrap();
        let cfg = BenchConfig {
            exact_max_nodes: 1,
            ..Default::default()
        };
        let rows = bench("bp", &obj, &[3], &[Method::Greedy, Method::Celf, Method::Exact], None, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows[0].result.as_ref().unwrap().objective,
            rows[1].result.as_ref().unwrap().objective
        );
        assert!(rows[2].result.is_none());
        assert!(rows[2].csv_row().starts_with("exact,bp,mcp,3,refused,"));
        assert!(bench("bp", &obj, &[3], &[Method::Gcomb], None, &cfg).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn non_bipartite_graphs_are_doubled_for_mcp() {
        let g = crate::graph::gen_ba(30, 2, 1).unwrap();
        let h = instance_for(ObjectiveKind::Mcp, g.clone());
        assert!(h.is_bipartite());
        assert_eq!(h.node_count(), 60);
        let k = instance_for(ObjectiveKind::Mvc, g.clone());
        assert_eq!(k.node_count(), 30);
    }
}
