use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use graphcnn::data::{
    degree_node_features_with, load_tu_dataset, locate_dataset, stratified_folds, Dataset,
};
use graphcnn::model::Architecture;
use graphcnn::train::{evaluate_with, train_fold, TrainHistory};
use graphcnn::verify::{reference_conv, run_all, VerifyOptions, VerifyReport};
use graphcnn::{Graph, Real};

use crate::config::{ExperimentConfig, Precision};
use crate::error::{CliError, CliResult};
use crate::report::{render_baselines, CvReport, FoldResult, SweepReport, SweepRow};

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::runtime(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Loads the configured dataset and fixes the model's class count.
/// Any problem here is a configuration error: nothing has run yet.
pub fn load_dataset(cfg: &mut ExperimentConfig) -> CliResult<Dataset> {
    let (dir, name) = locate_dataset(&cfg.data_root, &cfg.dataset).ok_or_else(|| {
        CliError::config(format!(
            "dataset {} not found under {} (expected {}_A.txt and companions; set --data-root or {})",
            cfg.dataset,
            cfg.data_root.display(),
            cfg.dataset,
            crate::config::DATA_ROOT_ENV
        ))
    })?;
    let mut ds = load_tu_dataset(&dir, &name).map_err(|e| CliError::config(e.to_string()))?;
    if ds.node_labels.is_none() {
        ds = degree_node_features_with(&ds, cfg.degree_cap, cfg.degree_features)
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    if ds.num_classes < 2 {
        return Err(CliError::config(format!(
            "dataset {} has a single class",
            cfg.dataset
        )));
    }
    cfg.model.num_classes = ds.num_classes;
    cfg.validate()?;
    log::info!(
        "{}: {} graphs, {} classes, {} node features",
        ds.name,
        ds.len(),
        ds.num_classes,
        ds.feature_dim
    );
    Ok(ds)
}

fn dry_run(cfg: &ExperimentConfig) {
    println!("{}", cfg.to_json());
}

struct FoldRun {
    accuracy: f64,
    history: TrainHistory,
    checkpoint: graphcnn::checkpoint::Checkpoint,
}

fn run_fold<T: Real>(
    cfg: &ExperimentConfig,
    fold: usize,
    train: &[&Graph],
    test: &[&Graph],
) -> graphcnn::Result<FoldRun> {
    let (spec, tc) = cfg.for_fold(fold);
    let (mut model, history) = train_fold::<T>(train, &spec, &tc)?;
    let accuracy = if test.is_empty() {
        f64::NAN
    } else {
        evaluate_with(&mut model, test, tc.batch_size, tc.lambda)?
    };
    Ok(FoldRun {
        accuracy,
        history,
        checkpoint: graphcnn::checkpoint::Checkpoint::from_model(&model),
    })
}

fn run_fold_dispatch(
    cfg: &ExperimentConfig,
    fold: usize,
    train: &[&Graph],
    test: &[&Graph],
) -> graphcnn::Result<FoldRun> {
    match cfg.precision {
        Precision::F32 => run_fold::<f32>(cfg, fold, train, test),
        Precision::F64 => run_fold::<f64>(cfg, fold, train, test),
    }
}

/// Trains on the whole dataset; writes `checkpoint.json` and `history.csv`.
pub fn cmd_train(mut cfg: ExperimentConfig, dry: bool) -> CliResult<()> {
    let ds = load_dataset(&mut cfg)?;
    if dry {
        dry_run(&cfg);
        return Ok(());
    }
    let graphs: Vec<&Graph> = ds.graphs.iter().collect();
    let start = Instant::now();
    let run = run_fold_dispatch(&cfg, 0, &graphs, &[]).map_err(CliError::runtime)?;
    let dir = &cfg.out;
    atomic_write(&dir.join("history.csv"), run.history.to_csv().as_bytes())?;
    let ck = run.checkpoint.to_json().map_err(CliError::runtime)?;
    atomic_write(&dir.join("checkpoint.json"), ck.as_bytes())?;
    atomic_write(&dir.join("config.json"), cfg.to_json().as_bytes())?;
    let last = run.history.records.last().expect("at least one epoch");
    println!(
        "trained {} on {} for {} epochs in {:.1}s: loss {:.4}, training accuracy {:.2}%",
        cfg.model.architecture,
        ds.name,
        cfg.train.epochs,
        start.elapsed().as_secs_f64(),
        last.loss,
        100.0 * last.train_acc
    );
    println!("wrote {}", dir.display());
    Ok(())
}

/// Runs k-fold cross-validation on an already loaded dataset and writes
/// `report.json`, `report.csv`, `history_<i>.csv` and `checkpoint_<i>.json`
/// under `cfg.out`. Failed folds are recorded, not fatal.
pub fn crossval(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<CvReport> {
    let plan = stratified_folds(ds, cfg.folds, cfg.train.seed)?;
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<FoldResult>> = Mutex::new(Vec::new());
    let io_error: Mutex<Option<CliError>> = Mutex::new(None);
    let jobs = cfg.jobs.min(cfg.folds).max(1);

    let worker = || loop {
        let fold = next.fetch_add(1, Ordering::SeqCst);
        if fold >= cfg.folds {
            break;
        }
        let train_idx = plan.train_indices(fold);
        let train = ds.subset(&train_idx);
        let test = ds.subset(plan.test_indices(fold));
        let t = Instant::now();
        let outcome = run_fold_dispatch(cfg, fold, &train, &test);
        let seconds = t.elapsed().as_secs_f64();
        let mut result = FoldResult {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            accuracy: None,
            seconds,
            first_loss: None,
            final_loss: None,
            final_train_acc: None,
            error: None,
        };
        match outcome {
            Ok(run) => {
                result.accuracy = Some(run.accuracy);
                result.first_loss = run.history.first_loss();
                result.final_loss = run.history.final_loss();
                result.final_train_acc = run.history.records.last().map(|r| r.train_acc);
                let written = atomic_write(
                    &cfg.out.join(format!("history_{fold}.csv")),
                    run.history.to_csv().as_bytes(),
                )
                .and_then(|_| {
                    let ck = run.checkpoint.to_json().map_err(CliError::runtime)?;
                    atomic_write(
                        &cfg.out.join(format!("checkpoint_{fold}.json")),
                        ck.as_bytes(),
                    )
                });
                if let Err(e) = written {
                    io_error.lock().unwrap().get_or_insert(e);
                }
                log::info!(
                    "fold {fold}: accuracy {:.2}% ({seconds:.1}s)",
                    100.0 * run.accuracy
                );
            }
            Err(e) => {
                log::error!("fold {fold} failed: {e}");
                result.error = Some(e.to_string());
            }
        }
        results.lock().unwrap().push(result);
    };

    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    let mut folds = results.into_inner().unwrap();
    folds.sort_by_key(|f| f.fold);
    let report = CvReport::new(cfg.clone(), folds, start.elapsed().as_secs_f64());
    atomic_write(&cfg.out.join("report.json"), report.to_json().as_bytes())?;
    atomic_write(&cfg.out.join("report.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

fn fail_on_failed_folds(report: &CvReport) -> CliResult<()> {
    let failed = report.failed_folds();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "{} of {} folds failed: {:?}",
            failed.len(),
            report.folds.len(),
            failed
        )))
    }
}

pub fn cmd_crossval(mut cfg: ExperimentConfig, dry: bool) -> CliResult<CvReport> {
    let ds = load_dataset(&mut cfg)?;
    if dry {
        dry_run(&cfg);
        return Ok(CvReport::new(cfg, Vec::new(), 0.0));
    }
    let report = crossval(&cfg, &ds)?;
    print!("{}", report.render());
    if let Some(t) = render_baselines(&cfg.dataset) {
        print!("{t}");
    }
    println!("wrote {}", cfg.out.display());
    fail_on_failed_folds(&report)?;
    Ok(report)
}

fn sweep(
    cfg: ExperimentConfig,
    ds: &Dataset,
    parameter: &str,
    values: &[usize],
    apply: impl Fn(&mut ExperimentConfig, usize),
) -> CliResult<SweepReport> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        apply(&mut c, v);
        c.out = cfg.out.join(format!("{parameter}_{v}"));
        c.validate()?;
        log::info!("{parameter} = {v}");
        let report = crossval(&c, ds)?;
        print!("{}", report.render());
        let failed = report.failed_folds().len();
        if failed > 0 {
            failures.push(v);
        }
        rows.push(SweepRow {
            value: v,
            mean: report.mean,
            std: report.std,
            seconds: report.seconds,
            failed_folds: failed,
        });
    }
    let report = SweepReport {
        parameter: parameter.to_string(),
        dataset: cfg.dataset.clone(),
        architecture: cfg.model.architecture.to_string(),
        rows,
    };
    let stem = format!("sweep_{parameter}");
    atomic_write(
        &cfg.out.join(format!("{stem}.csv")),
        report.to_csv().as_bytes(),
    )?;
    atomic_write(
        &cfg.out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&report)
            .expect("plain data serializes")
            .as_bytes(),
    )?;
    atomic_write(
        &cfg.out.join(format!("{stem}_monotonicity.txt")),
        report.monotonicity().as_bytes(),
    )?;
    print!("{}", report.render());
    print!("{}", report.monotonicity());
    if !failures.is_empty() {
        return Err(CliError::runtime(format!(
            "folds failed for {parameter} = {failures:?}"
        )));
    }
    Ok(report)
}

/// Cross-validation at every depth preset of the architecture.
pub fn cmd_sweep_depth(mut cfg: ExperimentConfig, dry: bool) -> CliResult<SweepReport> {
    let presets = cfg.model.architecture.depth_presets().to_vec();
    // a depth that is only valid for another architecture must not block the sweep
    cfg.model.depth = presets[0];
    cfg.model.channel_plan = None;
    let ds = load_dataset(&mut cfg)?;
    if dry {
        dry_run(&cfg);
        return Ok(empty_sweep(&cfg, "depth"));
    }
    sweep(cfg, &ds, "depth", &presets, |c, d| c.model.depth = d)
}

pub const SWEEP_KS: [usize; 3] = [3, 6, 9];

/// Cross-validation at receptive fields 3, 6 and 9.
pub fn cmd_sweep_k(mut cfg: ExperimentConfig, dry: bool) -> CliResult<SweepReport> {
    match cfg.model.architecture {
        Architecture::Resnet | Architecture::Densenet => {}
        Architecture::Inception => {
            return Err(CliError::config(
                "sweep-k does not apply to inception: its tributaries fix their own receptive fields (3, 6, 9 and 6)",
            ))
        }
        Architecture::Plain => {
            return Err(CliError::config(
                "sweep-k is defined for resnet and densenet",
            ))
        }
    }
    let ds = load_dataset(&mut cfg)?;
    if dry {
        dry_run(&cfg);
        return Ok(empty_sweep(&cfg, "k"));
    }
    sweep(cfg, &ds, "k", &SWEEP_KS, |c, k| c.model.k = k)
}

fn empty_sweep(cfg: &ExperimentConfig, parameter: &str) -> SweepReport {
    SweepReport {
        parameter: parameter.into(),
        dataset: cfg.dataset.clone(),
        architecture: cfg.model.architecture.to_string(),
        rows: Vec::new(),
    }
}

pub fn cmd_verify(seed: u64, dry: bool) -> CliResult<VerifyReport> {
    let opts = VerifyOptions {
        seed,
        ..VerifyOptions::default()
    };
    if dry {
        println!("{opts:#?}");
        return Ok(VerifyReport::default());
    }
    let report = run_all(reference_conv, &opts);
    print!("{}", report.render());
    if report.passed() {
        println!("all suites passed");
        Ok(report)
    } else {
        Err(CliError::runtime("verification failed"))
    }
}
