use std::path::Path;
use std::process::{Command, Output};

fn gcomb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcomb"))
        .args(args)
        .env("GCOMB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gcomb(args);
    assert!(
        out.status.success(),
        "gcomb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_bp(dir: &Path, name: &str, n: usize, seed: u64) -> String {
    let path = dir.join(name);
    ok(&["gen", "bp", "--n", &n.to_string(), "--p", "0.15", "--seed", &seed.to_string(), "--out", s(&path)]);
    s(&path).to_string()
}

fn train(dir: &Path, graphs: &str, model_dir: &Path) -> String {
    ok(&[
        "train",
        "--graphs",
        graphs,
        "--model-dir",
        s(model_dir),
        "--seed",
        "5",
        "--runs",
        "4",
        "--gcn-dim",
        "8",
        "--gcn-steps",
        "20",
        "--q-dim",
        "4",
        "--q-episodes",
        "2",
        "--report",
        s(&dir.join(format!("{}.report", model_dir.file_name().unwrap().to_str().unwrap()))),
    ])
}

#[test]
fn gen_bp_writes_file_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bp.edges");
    let line = ok(&["gen", "bp", "--n", "1000", "--p", "0.1", "--seed", "1", "--out", s(&out)]);
    assert!(line.contains("nodes 1000 edges "), "{line}");
    let g = gcomb::graph::load_edge_list(&out, false).unwrap();
    assert_eq!(g.node_count(), 1000);
    assert!(g.is_bipartite());
    assert!(line.trim_end().ends_with(&format!("edges {}", g.edge_count())));
}

#[test]
fn gen_ba_edge_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ba.edges");
    let line = ok(&["gen", "ba", "--n", "1000", "--m", "4", "--out", s(&out)]);
    assert!(line.trim_end().ends_with(&format!("edges {}", 4 * 996)), "{line}");
    let g = gcomb::graph::load_edge_list(&out, false).unwrap();
    assert_eq!(g.edge_count(), 4 * 996);
}

#[test]
fn invalid_probability_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcomb(&["gen", "bp", "--n", "100", "--p", "1.5", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = gcomb(&["gen", "bp", "--n", "100"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_bp(dir.path(), "a.edges", 40, 1);
    let b = gen_bp(dir.path(), "b.edges", 40, 2);
    let graphs = format!("{a},{b}");
    let m1 = dir.path().join("m1");
    let m2 = dir.path().join("m2");
    train(dir.path(), &graphs, &m1);
    train(dir.path(), &graphs, &m2);
    for name in ["noise.model", "gcn.model", "q.model"] {
        let x = std::fs::read(m1.join(name)).unwrap();
        let y = std::fs::read(m2.join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between identical runs");
    }

    let models = gcomb::pipeline::Models::load(&m1).unwrap();
    let again = dir.path().join("m3");
    models.save(&again).unwrap();
    for name in ["noise.model", "gcn.model", "q.model"] {
        assert_eq!(std::fs::read(m1.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap());
    }

    let report = std::fs::read_to_string(dir.path().join("m1.report")).unwrap();
    let phases: f64 = report
        .lines()
        .filter_map(|l| l.strip_prefix("phase "))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    let total: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("total "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("phase ")).count(), 5);
    assert!((phases - total).abs() <= 0.01 * total + 1e-4, "phases {phases} total {total}");
}

#[test]
fn solve_emits_row_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_bp(dir.path(), "a.edges", 40, 1);
    let models = dir.path().join("m");
    train(dir.path(), &a, &models);
    let test = gen_bp(dir.path(), "test.edges", 60, 9);
    let sidecar = dir.path().join("sol.txt");

    let out = ok(&["solve", "--graph", &test, "--model-dir", s(&models), "--b", "1", "--solution", s(&sidecar)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "method,dataset,objective,b,value,evals,seconds");
    assert!(lines[1].starts_with("gcomb,test,mcp,1,"), "{}", lines[1]);
    let picks: Vec<usize> = std::fs::read_to_string(&sidecar)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(picks.len(), 1);

    let g = gcomb::graph::load_edge_list(&test, false).unwrap();
    let obj = gcomb::Objective::new(&g, gcomb::ObjectiveSpec::mcp()).unwrap();
    let value: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(value, obj.eval(&picks).unwrap());

    // Every side-A node: exercises the extension path past the good set.
    let out = ok(&["solve", "--graph", &test, "--model-dir", s(&models), "--b", "12", "--solution", s(&sidecar)]);
    assert!(out.lines().nth(1).unwrap().starts_with("gcomb,test,mcp,12,"));
    let n = std::fs::read_to_string(&sidecar).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(n, 12);
}

#[test]
fn solve_without_models_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let test = gen_bp(dir.path(), "t.edges", 30, 1);
    let out = gcomb(&["solve", "--graph", &test, "--model-dir", s(&dir.path().join("none")), "--b", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_graph_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.edges");
    std::fs::write(&p, "0 1\n1 x\n").unwrap();
    let out = gcomb(&["bench", "--graphs", s(&p), "--budgets", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_greedy_matches_celf_and_bounds_exact() {
    let dir = tempfile::tempdir().unwrap();
    let g1 = gen_bp(dir.path(), "g1.edges", 50, 3);
    let g2 = gen_bp(dir.path(), "g2.edges", 50, 4);
    let csv = dir.path().join("bench.csv");
    ok(&[
        "bench",
        "--graphs",
        &format!("{g1},{g2}"),
        "--budgets",
        "2,4",
        "--methods",
        "greedy,celf,exact,sg",
        "--out",
        s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,dataset,objective,b,value,evals,seconds"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 4);
    let value = |m: &str, d: &str, b: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == m && r[1] == d && r[3] == b)
            .unwrap()[4]
            .parse()
            .unwrap()
    };
    for d in ["g1", "g2"] {
        for b in ["2", "4"] {
            let (gr, ce, ex) = (value("greedy", d, b), value("celf", d, b), value("exact", d, b));
            assert_eq!(gr, ce);
            assert!(ex >= gr);
            assert!(gr >= (1.0 - (-1.0f64).exp()) * ex);
        }
    }
}

#[test]
fn bench_with_models_and_no_prune_toggle() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_bp(dir.path(), "a.edges", 40, 1);
    let models = dir.path().join("m");
    train(dir.path(), &a, &models);
    let test = gen_bp(dir.path(), "t.edges", 60, 2);
    let out = ok(&[
        "bench",
        "--graphs",
        &test,
        "--budgets",
        "3",
        "--methods",
        "gcomb,gcn-top-b,greedy",
        "--no-prune",
        "--model-dir",
        s(&models),
    ]);
    let methods: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["gcomb", "gcomb-noprune", "gcn-top-b", "greedy"]);
    let out = gcomb(&["bench", "--graphs", &test, "--budgets", "3", "--methods", "gcomb"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    let out = dir.path().join("g.edges");
    std::fs::write(&cfg, format!("n 50\np 0.2\nseed 3\nout {}\n", out.display())).unwrap();
    let line = ok(&["gen", "bp", "--config", s(&cfg), "--n", "60"]);
    assert!(line.contains("nodes 60 "), "{line}");
    assert!(out.exists());
}

#[test]
fn subcommands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen_bp(dir.path(), "g.edges", 50, 1);
    let again = gen_bp(dir.path(), "h.edges", 50, 1);
    assert_eq!(std::fs::read(&g).unwrap(), std::fs::read(&again).unwrap());
    let t1 = dir.path().join("t1");
    let t2 = dir.path().join("t2");
    for t in [&t1, &t2] {
        ok(&["label", "--graph", &g, "--runs", "3", "--seed", "2", "--traces", s(t)]);
    }
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());
}
