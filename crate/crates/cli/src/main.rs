mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcomb::graph::{self, assign_weights, WeightKind, WeightModel};
use gcomb::objectives::{EVAL_MC_SIMS, TRAIN_MC_SIMS};
use gcomb::pipeline::{self, BenchConfig, BenchRow, Method, Models, TrainConfig, BENCH_CSV_HEADER};
use gcomb::qlearn::{self, Locality};
use gcomb::supervision::{build_scores, write_scores, write_traces, DEFAULT_DELTA, DEFAULT_RUNS};
use gcomb::{gcn, GcombError, Graph, Objective, ObjectiveKind};

#[derive(Parser)]
#[command(name = "gcomb", version, about = "Learned greedy heuristics for budgeted coverage problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Run probabilistic greedy on one graph and write traces and scores.
    Label(LabelArgs),
    /// Train the noise model, GCN and Q-network.
    Train(TrainArgs),
    /// Solve one instance with trained models.
    Solve(SolveArgs),
    /// Compare methods over budgets and datasets.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenKind {
    /// Random bipartite graph, 20% of nodes on side A.
    Bp {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Barabási–Albert graph.
    Ba {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[command(flatten)]
        common: GenCommon,
    },
}

#[derive(Args)]
struct GenCommon {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Weights::Unit)]
    weights: Weights,
    /// Output edge list; defaults to `<kind>-<n>-<seed>.edges`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Unit,
    Constant,
    Trivalency,
}

impl From<Weights> for WeightKind {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Unit => WeightKind::Unit,
            Weights::Constant => WeightKind::Constant,
            Weights::Trivalency => WeightKind::TriValency,
        }
    }
}

#[derive(Args)]
struct GraphInput {
    /// Treat edge lists without `#! directed` as directed.
    #[arg(long)]
    directed: bool,
    #[arg(long, default_value = "mcp")]
    objective: ObjectiveKind,
    /// IM Monte-Carlo simulations per estimate.
    #[arg(long)]
    mc_sims: Option<usize>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training edge lists, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    graphs: Vec<PathBuf>,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    model_dir: PathBuf,
    /// Training report path; defaults to `<model-dir>/train.report`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = gcn::DEFAULT_DEPTH)]
    gcn_depth: usize,
    #[arg(long, default_value_t = gcn::DEFAULT_DIM)]
    gcn_dim: usize,
    #[arg(long, default_value_t = gcn::DEFAULT_DROPOUT)]
    gcn_dropout: f64,
    #[arg(long, default_value_t = gcn::DEFAULT_STEPS)]
    gcn_steps: usize,
    #[arg(long, default_value_t = gcn::DEFAULT_LR)]
    gcn_lr: f64,
    #[arg(long, default_value_t = qlearn::DEFAULT_QDIM)]
    q_dim: usize,
    #[arg(long, default_value_t = qlearn::DEFAULT_EPISODES)]
    q_episodes: usize,
    /// Picks per episode; defaults to the longest training trace.
    #[arg(long)]
    q_steps: Option<usize>,
    #[arg(long, default_value_t = qlearn::DEFAULT_NSTEP)]
    n_step: usize,
    #[arg(long, default_value_t = qlearn::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = qlearn::DEFAULT_QLR)]
    q_lr: f64,
    #[command(flatten)]
    locality: LocalityArgs,
}

#[derive(Args)]
struct LocalityArgs {
    /// Estimate locality from an importance sample instead of counting it.
    #[arg(long)]
    sampled_locality: bool,
    #[arg(long, default_value_t = qlearn::DEFAULT_SAMPLE_EPS)]
    sample_eps: f64,
}

impl LocalityArgs {
    fn locality(&self) -> Result<Locality, CliError> {
        if !self.sampled_locality {
            return Ok(Locality::Exact);
        }
        if !(self.sample_eps > 0.0 && self.sample_eps < 1.0) {
            return Err(CliError::Usage(format!("--sample-eps must lie in (0, 1), got {}", self.sample_eps)));
        }
        Ok(Locality::Sampled { eps: self.sample_eps })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long)]
    b: usize,
    /// Skip noise pruning and score every candidate.
    #[arg(long)]
    no_prune: bool,
    #[command(flatten)]
    locality: LocalityArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ordered solution sidecar; defaults to `<graph>.solution`.
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Test edge lists, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    graphs: Vec<PathBuf>,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long, required = true, value_delimiter = ',')]
    budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "greedy,celf")]
    methods: Vec<String>,
    /// Needed by gcomb, gcomb-noprune and gcn-top-b.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Add the unpruned GCOMB ablation next to every gcomb row.
    #[arg(long)]
    no_prune: bool,
    #[arg(long, default_value_t = 0.1)]
    sg_epsilon: f64,
    #[command(flatten)]
    locality: LocalityArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(GcombError),
}

impl From<GcombError> for CliError {
    fn from(e: GcombError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gcomb: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_threads() -> CliResult {
    let Ok(raw) = std::env::var("GCOMB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("GCOMB_THREADS must be a count, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen { kind } => cmd_gen(kind),
        Command::Label(a) => cmd_label(a),
        Command::Train(a) => cmd_train(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(kind: GenKind) -> CliResult {
    let (g, name, common) = match kind {
        GenKind::Bp { n, p, common } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage(format!("--p must lie in [0, 1], got {p}")));
            }
            if n < 5 {
                return Err(CliError::Usage(format!("--n must be at least 5, got {n}")));
            }
            (graph::gen_bp(n, p, common.seed)?, format!("bp-{n}-{}", common.seed), common)
        }
        GenKind::Ba { n, m, common } => {
            if m < 1 || n <= m {
                return Err(CliError::Usage(format!("need n > m >= 1, got n={n} m={m}")));
            }
            (graph::gen_ba(n, m, common.seed)?, format!("ba-{n}-{}", common.seed), common)
        }
    };
    let weights = WeightModel::new(common.weights.into(), gcomb::seed::derive_labeled(common.seed, "weights"));
    let g = assign_weights(&g, &weights);
    let out = common.out.unwrap_or_else(|| PathBuf::from(format!("{name}.edges")));
    let mut w = create(&out)?;
    graph::write_edge_list(&g, &mut w)?;
    w.flush()?;
    println!("{} nodes {} edges {}", out.display(), g.node_count(), g.edge_count());
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_instance(path: &Path, input: &GraphInput) -> CliResult<Graph> {
    if !path.exists() {
        return Err(CliError::Usage(format!("graph file {} does not exist", path.display())));
    }
    let g = graph::load_edge_list(path, input.directed)?;
    Ok(pipeline::instance_for(input.objective, g))
}

fn load_models(dir: &Path) -> CliResult<Models> {
    for name in [pipeline::NOISE_FILE, pipeline::GCN_FILE, pipeline::Q_FILE] {
        let p = dir.join(name);
        if !p.exists() {
            return Err(CliError::Usage(format!("missing model file {}", p.display())));
        }
    }
    Ok(Models::load(dir)?)
}

fn cmd_label(a: LabelArgs) -> CliResult {
    let g = load_instance(&a.graph, &a.input)?;
    let cfg = TrainConfig {
        objective: a.input.objective,
        mc_sims: a.input.mc_sims.unwrap_or(TRAIN_MC_SIMS),
        runs: a.runs,
        delta: a.delta,
        seed: a.seed,
        ..Default::default()
    };
    let graphs = [g];
    let traces = pipeline::label(&graphs, &cfg)?.pop().unwrap_or_default();
    let mut w = create(&a.traces)?;
    write_traces(&traces, &mut w)?;
    w.flush()?;
    if let Some(path) = &a.scores {
        let table = build_scores(&traces, graphs[0].node_count())?;
        let mut w = create(path)?;
        write_scores(&table, &mut w)?;
        w.flush()?;
    }
    println!("traces {} picks {}", traces.len(), traces.iter().map(|t| t.len()).sum::<usize>());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let graphs: Vec<Graph> = a
        .graphs
        .iter()
        .map(|p| load_instance(p, &a.input))
        .collect::<CliResult<_>>()?;
    if !(0.0..1.0).contains(&a.gcn_dropout) {
        return Err(CliError::Usage(format!("--gcn-dropout must lie in [0, 1), got {}", a.gcn_dropout)));
    }
    let cfg = TrainConfig {
        objective: a.input.objective,
        mc_sims: a.input.mc_sims.unwrap_or(TRAIN_MC_SIMS),
        runs: a.runs,
        delta: a.delta,
        gcn_depth: a.gcn_depth,
        gcn_dim: a.gcn_dim,
        gcn_dropout: a.gcn_dropout,
        gcn_steps: a.gcn_steps,
        gcn_lr: a.gcn_lr,
        q_dim: a.q_dim,
        q_episodes: a.q_episodes,
        q_steps: a.q_steps,
        n_step: a.n_step,
        gamma: a.gamma,
        q_lr: a.q_lr,
        locality: a.locality.locality()?,
        seed: a.seed,
    };
    let (models, report) = pipeline::train(&graphs, &cfg)?;
    models.save(&a.model_dir)?;
    let report_path = a.report.unwrap_or_else(|| a.model_dir.join("train.report"));
    let mut w = create(&report_path)?;
    report.write(&mut w)?;
    w.flush()?;
    for (name, secs) in &report.phases {
        println!("phase {name} {secs:.3}s");
    }
    println!("total {:.3}s", report.total_seconds);
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> CliResult {
    if a.b == 0 {
        return Err(CliError::Usage("--b must be positive".into()));
    }
    let models = load_models(&a.model_dir)?;
    let g = load_instance(&a.graph, &a.input)?;
    let spec = pipeline::objective_spec(a.input.objective, a.input.mc_sims.unwrap_or(EVAL_MC_SIMS), a.seed);
    let obj = Objective::new(&g, spec)?;
    let cfg = qlearn::SolveConfig {
        prune: !a.no_prune,
        locality: a.locality.locality()?,
        seed: gcomb::seed::derive_labeled(a.seed, "solve"),
    };
    let out = qlearn::solve(&obj, a.b, &models.noise, &models.gcn, &models.q, &cfg)?;
    let row = BenchRow {
        method: if a.no_prune { Method::GcombNoPrune } else { Method::Gcomb },
        dataset: dataset_name(&a.graph),
        objective: a.input.objective,
        b: a.b,
        result: Some(out.result.clone()),
    };
    println!("{BENCH_CSV_HEADER}");
    println!("{}", row.csv_row());

    let sidecar = a.solution.unwrap_or_else(|| {
        let mut p = a.graph.clone().into_os_string();
        p.push(".solution");
        PathBuf::from(p)
    });
    let mut w = create(&sidecar)?;
    writeln!(w, "# rank node original-id")?;
    for (rank, &v) in out.result.solution.iter().enumerate() {
        writeln!(w, "{} {v} {}", rank + 1, g.original_id(v))?;
    }
    w.flush()?;
    if out.extended {
        eprintln!("note: good set smaller than b, extended with the next ranked nodes");
    }
    if out.result.truncated {
        eprintln!("note: budget clamped to {} candidates", out.result.solution.len());
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    if a.budgets.contains(&0) {
        return Err(CliError::Usage("budgets must be positive".into()));
    }
    let mut methods: Vec<Method> = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<_>>()?;
    if a.no_prune && methods.contains(&Method::Gcomb) && !methods.contains(&Method::GcombNoPrune) {
        let at = methods.iter().position(|&m| m == Method::Gcomb).unwrap_or(0);
        methods.insert(at + 1, Method::GcombNoPrune);
    }
    let models = if methods.iter().any(|m| m.needs_models()) {
        let dir = a
            .model_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("--model-dir is required for learned methods".into()))?;
        Some(load_models(dir)?)
    } else {
        None
    };
    let cfg = BenchConfig {
        sg_epsilon: a.sg_epsilon,
        locality: a.locality.locality()?,
        seed: a.seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for path in &a.graphs {
        let g = load_instance(path, &a.input)?;
        let spec = pipeline::objective_spec(a.input.objective, a.input.mc_sims.unwrap_or(EVAL_MC_SIMS), a.seed);
        let obj = Objective::new(&g, spec)?;
        rows.extend(pipeline::bench(&dataset_name(path), &obj, &a.budgets, &methods, models.as_ref(), &cfg)?);
    }

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for row in &rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    out.flush()?;
    Ok(())
}
