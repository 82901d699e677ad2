use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use droso_core::eval::{correct_rate, match_log_csv, pr_csv};
use droso_core::imaging::{list_frames, read_frame_dir};
use droso_core::synth::{generate_query, generate_reference, write_frames};
use droso_core::voting::radius_from_fraction;
use droso_core::{
    benchmark as bench, evaluate as eval_ensemble, persist, preprocess, preprocess_all, Ensemble32,
    EnsembleConfig, GroundTruth, ImageVector32, SynthConfig, TrainConfig,
};

use crate::{BenchmarkArgs, EvaluateArgs, Failure, SweepArgs, SynthArgs, TrainArgs, TrainingArgs};

type CmdResult = Result<(), Failure>;

fn require_dir(path: &Path, flag: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{flag} {} is not a directory", path.display())))
    }
}

fn require_file(path: &Path, flag: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{flag} {} does not exist", path.display())))
    }
}

/// The parent of an output file must already exist.
fn require_writable(path: &Path, flag: &str) -> CmdResult {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if path.is_dir() {
        return Err(Failure::Usage(format!("{flag} {} is a directory", path.display())));
    }
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{flag}: directory {} does not exist", parent.display())))
    }
}

fn write_output(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))
}

fn load_vectors(dir: &Path) -> Result<Vec<ImageVector32>, Failure> {
    let frames = read_frame_dir(dir)?;
    Ok(preprocess_all(&frames)?)
}

fn load_ground_truth(gt: Option<&Path>, tolerance: usize) -> Result<GroundTruth, Failure> {
    match gt {
        None => Ok(GroundTruth::identity(tolerance)),
        Some(p) => GroundTruth::from_csv(p, tolerance).map_err(|e| Failure::Data(e.to_string())),
    }
}

/// Checks that every query has a ground-truth place inside the reference set.
fn check_ground_truth(gt: &GroundTruth, queries: usize, places: usize) -> CmdResult {
    match gt.mapped_queries() {
        None if queries != places => Err(Failure::Data(format!(
            "{queries} queries but the model has {places} places; pass --gt to map them"
        ))),
        Some(n) if n != queries => Err(Failure::Data(format!(
            "ground truth covers {n} queries but the query directory has {queries}"
        ))),
        _ => match (0..queries).find(|&q| gt.truth(q).is_none_or(|r| r >= places)) {
            Some(q) => Err(Failure::Data(format!("ground truth for query {q} is outside 0..{places}"))),
            None => Ok(()),
        },
    }
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig { epochs: t.epochs, learning_rate: t.lr, ..TrainConfig::default() }
}

fn config_line(command: &str, fields: &[(&str, String)]) -> String {
    let mut line = format!("droso {command}");
    for (k, v) in fields {
        let _ = write!(line, " {k}={v}");
    }
    line
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let reference_cfg = SynthConfig { seed: a.seed, places: a.places, ..SynthConfig::default() };
    let query_cfg = SynthConfig {
        seed: a.query_seed.unwrap_or(a.seed),
        places: a.places,
        noise_sigma: a.noise,
        brightness_shift: a.brightness,
        shift_px: a.shift,
    };
    query_cfg.validate()?;
    let reference = generate_reference(&reference_cfg)?;
    let query = generate_query(&reference, &query_cfg)?;
    write_frames(&a.out.join("reference"), &reference)?;
    write_frames(&a.out.join("query"), &query)?;
    println!(
        "{}",
        config_line(
            "synth",
            &[
                ("out", a.out.display().to_string()),
                ("places", a.places.to_string()),
                ("seed", a.seed.to_string()),
                ("query_seed", query_cfg.seed.to_string()),
                ("noise", a.noise.to_string()),
                ("brightness", a.brightness.to_string()),
                ("shift", a.shift.to_string()),
            ],
        )
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> CmdResult {
    require_dir(&a.ref_dir, "--ref-dir")?;
    require_writable(&a.model, "--model")?;
    let cfg = EnsembleConfig {
        models: a.models,
        activations: a.activations,
        radius_fraction: a.training.radius_frac,
        train: train_config(&a.training),
        master_seed: a.training.seed,
        quantize: !a.no_quantize,
    };
    cfg.train.validate()?;
    if cfg.models == 0 {
        return Err(Failure::Usage("--models must be at least 1".into()));
    }

    let refs = load_vectors(&a.ref_dir)?;
    if refs.len() < 2 {
        return Err(Failure::Data(format!("need ≥ 2 places, found {}", refs.len())));
    }
    radius_from_fraction(cfg.radius_fraction, refs.len())?;
    println!(
        "{}",
        config_line(
            "train",
            &[
                ("ref_dir", a.ref_dir.display().to_string()),
                ("places", refs.len().to_string()),
                ("models", cfg.models.to_string()),
                ("activations", cfg.activations.to_string()),
                ("radius_frac", cfg.radius_fraction.to_string()),
                ("epochs", cfg.train.epochs.to_string()),
                ("lr", cfg.train.learning_rate.to_string()),
                ("seed", cfg.master_seed.to_string()),
                ("quantize", cfg.quantize.to_string()),
            ],
        )
    );

    let start = Instant::now();
    let ensemble = Ensemble32::train(&refs, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    for (i, m) in ensemble.models().iter().enumerate() {
        println!("model {i:>3}: train accuracy {:.4}", m.accuracy(&refs)?);
    }
    let bytes = persist::save(&ensemble, &a.model)?;
    println!(
        "trained {} models on {} places in {elapsed:.2} s (radius {}); wrote {bytes} bytes to {}",
        ensemble.len(),
        ensemble.places(),
        ensemble.radius(),
        a.model.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> CmdResult {
    require_file(&a.model, "--model")?;
    require_dir(&a.query_dir, "--query-dir")?;
    if let Some(gt) = &a.gt {
        require_file(gt, "--gt")?;
    }
    for (path, flag) in [(&a.pr_out, "--pr-out"), (&a.log_out, "--log-out")] {
        if let Some(p) = path {
            require_writable(p, flag)?;
        }
    }

    let mut ensemble: Ensemble32 = persist::load(&a.model)?;
    if let Some(f) = a.radius_frac {
        let radius = radius_from_fraction(f, ensemble.places())?;
        ensemble = ensemble.with_radius(radius);
    }
    let gt = load_ground_truth(a.gt.as_deref(), a.tolerance)?;
    let queries = load_vectors(&a.query_dir)?;
    check_ground_truth(&gt, queries.len(), ensemble.places())?;

    let (curve, results) = eval_ensemble(&ensemble, &queries, &gt)?;
    let header = config_line(
        "evaluate",
        &[
            ("model", a.model.display().to_string()),
            ("query_dir", a.query_dir.display().to_string()),
            ("models", ensemble.len().to_string()),
            ("activations", ensemble.activations().to_string()),
            ("places", ensemble.places().to_string()),
            ("radius", ensemble.radius().to_string()),
            ("seed", ensemble.master_seed().to_string()),
            ("tolerance", a.tolerance.to_string()),
            ("gt", a.gt.as_ref().map_or("identity".into(), |p| p.display().to_string())),
        ],
    );
    println!("{header}");
    if let Some(p) = &a.pr_out {
        write_output(p, &pr_csv(&curve, Some(&header)))?;
    }
    if let Some(p) = &a.log_out {
        write_output(p, &match_log_csv(&results, Some(&header)))?;
    }
    println!("correct: {:.4}", correct_rate(&results));
    println!("AUC: {:.4}", curve.auc);
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs) -> CmdResult {
    require_file(&a.model, "--model")?;
    if let Some(d) = &a.query_dir {
        require_dir(d, "--query-dir")?;
    }
    let ensemble: Ensemble32 = persist::load(&a.model)?;
    let img = match &a.query_dir {
        Some(d) => {
            let first = list_frames(d)?
                .into_iter()
                .next()
                .ok_or_else(|| Failure::Data(format!("no frames in {}", d.display())))?;
            preprocess(&droso_core::imaging::read_frame(&first)?)?
        }
        None => ImageVector32::constant(0.5)?,
    };
    let stats = bench(&ensemble, &img, a.iterations)?;
    let size = fs::metadata(&a.model).map_err(|e| Failure::Data(e.to_string()))?.len();
    println!(
        "{}",
        config_line(
            "benchmark",
            &[
                ("model", a.model.display().to_string()),
                ("models", ensemble.len().to_string()),
                ("activations", ensemble.activations().to_string()),
                ("places", ensemble.places().to_string()),
                ("iterations", stats.iterations.to_string()),
            ],
        )
    );
    println!("model size: {size} bytes ({:.3} MiB)", size as f64 / (1024.0 * 1024.0));
    println!("mean: {:.4} ms", stats.mean_ms);
    println!("p95: {:.4} ms", stats.p95_ms);
    println!("fps: {:.1}", stats.fps);
    Ok(())
}

struct Cell {
    auc: f64,
    train_s: f64,
    eval_ms: f64,
}

fn sweep_cell(
    refs: &[ImageVector32],
    queries: &[ImageVector32],
    gt: &GroundTruth,
    cfg: &EnsembleConfig,
) -> Result<Cell, Failure> {
    let start = Instant::now();
    let ensemble = Ensemble32::train(refs, cfg)?;
    let train_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (curve, _) = eval_ensemble(&ensemble, queries, gt)?;
    let eval_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Cell { auc: curve.auc, train_s, eval_ms })
}

pub fn sweep(a: &SweepArgs) -> CmdResult {
    require_dir(&a.ref_dir, "--ref-dir")?;
    require_dir(&a.query_dir, "--query-dir")?;
    if let Some(gt) = &a.gt {
        require_file(gt, "--gt")?;
    }
    require_writable(&a.out, "--out")?;
    if a.models.is_empty() || a.activations.is_empty() {
        return Err(Failure::Usage("sweep grid is empty".into()));
    }
    let train = train_config(&a.training);
    train.validate()?;

    let refs = load_vectors(&a.ref_dir)?;
    if refs.len() < 2 {
        return Err(Failure::Data(format!("need ≥ 2 places, found {}", refs.len())));
    }
    let queries = load_vectors(&a.query_dir)?;
    let gt = load_ground_truth(a.gt.as_deref(), a.tolerance)?;
    check_ground_truth(&gt, queries.len(), refs.len())?;

    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let header = config_line(
        "sweep",
        &[
            ("ref_dir", a.ref_dir.display().to_string()),
            ("query_dir", a.query_dir.display().to_string()),
            ("models", join(&a.models)),
            ("activations", join(&a.activations)),
            ("radius_frac", a.training.radius_frac.to_string()),
            ("epochs", a.training.epochs.to_string()),
            ("lr", a.training.lr.to_string()),
            ("seed", a.training.seed.to_string()),
            ("tolerance", a.tolerance.to_string()),
            ("gt", a.gt.as_ref().map_or("identity".into(), |p| p.display().to_string())),
        ],
    );
    println!("{header}");

    let mut csv = format!("# {header}\nn_models,activations,auc,train_s,eval_ms\n");
    let mut failed = 0;
    for &n in &a.models {
        for &k in &a.activations {
            let cfg = EnsembleConfig {
                models: n,
                activations: k,
                radius_fraction: a.training.radius_frac,
                train,
                master_seed: a.training.seed,
                quantize: true,
            };
            match sweep_cell(&refs, &queries, &gt, &cfg) {
                Ok(c) => {
                    println!("n_models={n} activations={k}: AUC {:.4}", c.auc);
                    let _ = writeln!(csv, "{n},{k},{:.6},{:.3},{:.3}", c.auc, c.train_s, c.eval_ms);
                }
                Err(e) => {
                    eprintln!("n_models={n} activations={k}: {}", e.message());
                    failed += 1;
                    let _ = writeln!(csv, "{n},{k},NaN,NaN,NaN");
                }
            }
        }
    }
    write_output(&a.out, &csv)?;
    if failed == a.models.len() * a.activations.len() {
        return Err(Failure::Data("every sweep cell failed".into()));
    }
    Ok(())
}
