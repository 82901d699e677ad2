use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const GOLDEN_BENCHMARK_AUC: f64 = 0.9441;

fn droso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_droso"))
        .args(args)
        .env_remove("DROSO_THREADS")
        .output()
        .expect("spawn droso")
}

fn ok(args: &[&str]) -> String {
    let out = droso(args);
    assert!(
        out.status.success(),
        "droso {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn printed_auc(stdout: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with("AUC: ")).expect("AUC line");
    line["AUC: ".len()..].parse().unwrap()
}

/// Clean and benchmark traversals plus a default ensemble, shared by tests.
struct Fixture {
    dir: TempDir,
    train_stdout: String,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        ok(&["synth", "--out", s(&root.join("clean")), "--places", "50", "--seed", "1"]);
        ok(&[
            "synth", "--out", s(&root.join("bench")), "--places", "50", "--seed", "1",
            "--query-seed", "2", "--noise", "0.15", "--shift", "10", "--brightness", "0.05",
        ]);
        let train_stdout = ok(&[
            "train", "--ref-dir", s(&root.join("clean/reference")),
            "--model", s(&root.join("default.drsn")), "--seed", "7",
        ]);
        Fixture { dir, train_stdout }
    })
}

#[test]
fn synth_writes_numbered_pgms() {
    let f = fixture();
    for sub in ["clean/reference", "clean/query", "bench/query"] {
        let mut names: Vec<_> = std::fs::read_dir(f.path(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 50);
        assert_eq!(names[0], "000000.pgm");
        assert_eq!(names[49], "000049.pgm");
    }
}

#[test]
fn default_training_fits_every_member() {
    let f = fixture();
    let accs: Vec<f64> = f
        .train_stdout
        .lines()
        .filter_map(|l| l.split("train accuracy ").nth(1))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(accs.len(), 64);
    assert!(accs.iter().all(|&a| a >= 0.9), "{accs:?}");
    assert!(f.train_stdout.contains(" s "), "wall time printed");

    let ens: droso_core::Ensemble32 = droso_core::persist::load(&f.path("default.drsn")).unwrap();
    assert_eq!((ens.len(), ens.activations(), ens.places(), ens.radius()), (64, 192, 50, 25));
    assert!(ens.models().iter().all(|m| m.is_quantized()));
}

#[test]
fn single_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs");
    std::fs::create_dir(&refs).unwrap();
    std::fs::copy(fixture().path("clean/reference/000000.pgm"), refs.join("000000.pgm")).unwrap();
    let model = dir.path().join("m.drsn");
    let out = droso(&["train", "--ref-dir", s(&refs), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("need ≥ 2 places"));
    assert!(!model.exists());
}

#[test]
fn undecodable_frames_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        std::fs::copy(
            fixture().path(&format!("clean/reference/{i:06}.pgm")),
            dir.path().join(format!("{i:06}.pgm")),
        )
        .unwrap();
    }
    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    let model = dir.path().join("m.drsn");
    let out = droso(&["train", "--ref-dir", s(dir.path()), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.png"));
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let refs = fixture().path("clean/reference");
    let files: Vec<Vec<u8>> = ["a.drsn", "b.drsn"]
        .iter()
        .map(|name| {
            let p = dir.path().join(name);
            ok(&["train", "--ref-dir", s(&refs), "--model", s(&p), "--models", "4", "--seed", "11"]);
            std::fs::read(p).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
    let other = dir.path().join("c.drsn");
    ok(&["train", "--ref-dir", s(&refs), "--model", s(&other), "--models", "4", "--seed", "12"]);
    assert_ne!(std::fs::read(other).unwrap(), files[0]);
}

#[test]
fn unperturbed_queries_score_perfectly() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (pr, log) = (dir.path().join("pr.csv"), dir.path().join("log.csv"));
    let stdout = ok(&[
        "evaluate", "--model", s(&f.path("default.drsn")), "--query-dir", s(&f.path("clean/query")),
        "--tolerance", "0", "--pr-out", s(&pr), "--log-out", s(&log),
    ]);
    assert!(stdout.contains("AUC: 1.0000"), "{stdout}");

    let pr = std::fs::read_to_string(pr).unwrap();
    let mut lines = pr.lines();
    assert!(lines.next().unwrap().starts_with("# droso evaluate "));
    assert_eq!(lines.next(), Some("recall,precision"));
    assert!(lines.all(|l| l.ends_with(",1.000000")));

    let log = std::fs::read_to_string(log).unwrap();
    assert!(log.starts_with("# droso evaluate "));
    let rows: Vec<_> = log.lines().skip(2).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.ends_with(",1")));
}

#[test]
fn noisy_benchmark_matches_golden() {
    let f = fixture();
    let stdout = ok(&[
        "evaluate", "--model", s(&f.path("default.drsn")), "--query-dir", s(&f.path("bench/query")),
        "--tolerance", "0",
    ]);
    let auc = printed_auc(&stdout);
    assert!((auc - GOLDEN_BENCHMARK_AUC).abs() <= 0.05, "auc {auc}");
}

#[test]
fn missing_model_leaves_no_csv() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (pr, log) = (dir.path().join("pr.csv"), dir.path().join("log.csv"));
    let out = droso(&[
        "evaluate", "--model", s(&dir.path().join("missing.drsn")), "--query-dir",
        s(&f.path("clean/query")), "--pr-out", s(&pr), "--log-out", s(&log),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!pr.exists() && !log.exists());
}

#[test]
fn corrupt_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bad.drsn");
    std::fs::write(&model, b"XXXX garbage").unwrap();
    let out = droso(&["evaluate", "--model", s(&model), "--query-dir", s(&fixture().path("clean/query"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn place_count_mismatch_needs_mapping() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let queries = dir.path().join("q");
    std::fs::create_dir(&queries).unwrap();
    // Queries 0..10 are copies of reference frames 20..30.
    let mut gt = String::from("query,reference\n");
    for q in 0..10 {
        let r = q + 20;
        std::fs::copy(
            f.path(&format!("clean/reference/{r:06}.pgm")),
            queries.join(format!("{q:06}.pgm")),
        )
        .unwrap();
        gt.push_str(&format!("{q},{r}\n"));
    }
    let model = f.path("default.drsn");
    let out = droso(&["evaluate", "--model", s(&model), "--query-dir", s(&queries)]);
    assert_eq!(out.status.code(), Some(2));

    let gt_path = dir.path().join("gt.csv");
    std::fs::write(&gt_path, gt).unwrap();
    let stdout = ok(&[
        "evaluate", "--model", s(&model), "--query-dir", s(&queries), "--gt", s(&gt_path),
        "--tolerance", "0",
    ]);
    assert_eq!(printed_auc(&stdout), 1.0);
}

#[test]
fn benchmark_reports_latency() {
    let f = fixture();
    let stdout = ok(&["benchmark", "--model", s(&f.path("default.drsn")), "--iterations", "20"]);
    for key in ["mean: ", "p95: ", "fps: ", "model size: "] {
        assert!(stdout.contains(key), "{stdout}");
    }
    let out = droso(&["benchmark", "--model", s(&f.path("default.drsn")), "--iterations", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

fn sweep_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn sweep_grid() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "sweep", "--ref-dir", s(&f.path("bench/reference")), "--query-dir",
            s(&f.path("bench/query")), "--models", "1,8", "--activations", "64,192",
            "--tolerance", "0", "--seed", "7", "--out", s(&out),
        ]);
        std::fs::read_to_string(out).unwrap()
    };
    let first = run("a.csv");
    assert!(first.starts_with("# droso sweep "));
    assert!(first.contains("\nn_models,activations,auc,train_s,eval_ms\n"));
    let rows = sweep_rows(&first);
    assert_eq!(rows.len(), 4);
    let auc = |n: &str, k: &str| -> f64 {
        rows.iter().find(|r| r[0] == n && r[1] == k).unwrap()[2].parse().unwrap()
    };
    for r in &rows {
        let a: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&a), "{r:?}");
    }
    for k in ["64", "192"] {
        assert!(auc("8", k) >= auc("1", k) - 0.02, "k={k}: {rows:?}");
    }

    // Timings are wall-clock; everything else must repeat exactly.
    let second = run("b.csv");
    let deterministic = |csv: &str| -> Vec<Vec<String>> {
        sweep_rows(csv).into_iter().map(|r| r[..3].to_vec()).collect()
    };
    assert_eq!(deterministic(&first), deterministic(&second));
    assert_eq!(first.lines().next(), second.lines().next());
}

#[test]
fn sweep_failed_cell_is_nan_row() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    // Zero activations cannot form a feature tag.
    ok(&[
        "sweep", "--ref-dir", s(&f.path("clean/reference")), "--query-dir", s(&f.path("clean/query")),
        "--models", "2", "--activations", "0,64", "--epochs", "5", "--out", s(&out),
    ]);
    let rows = sweep_rows(&std::fs::read_to_string(out).unwrap());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2..], ["NaN", "NaN", "NaN"]);
    assert!(rows[1][2].parse::<f64>().unwrap() > 0.5);
}

#[test]
fn exit_codes() {
    assert_eq!(droso(&[]).status.code(), Some(1));
    assert_eq!(droso(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(droso(&["--help"]).status.code(), Some(0));
    assert_eq!(droso(&["--version"]).status.code(), Some(0));
    assert_eq!(
        droso(&["train", "--ref-dir", "/nonexistent/refs", "--model", "m.drsn"]).status.code(),
        Some(2)
    );
    let refs = fixture().path("clean/reference");
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.drsn");
    let bad_lr = droso(&["train", "--ref-dir", s(&refs), "--model", s(&model), "--lr", "-1"]);
    assert_eq!(bad_lr.status.code(), Some(1));

    let threads = Command::new(env!("CARGO_BIN_EXE_droso"))
        .args(["train", "--ref-dir", s(&refs), "--model", s(&model), "--models", "2", "--epochs", "2"])
        .env("DROSO_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
    let capped = Command::new(env!("CARGO_BIN_EXE_droso"))
        .args(["train", "--ref-dir", s(&refs), "--model", s(&model), "--models", "2", "--epochs", "2"])
        .env("DROSO_THREADS", "1")
        .output()
        .unwrap();
    assert!(capped.status.success());
}
