//! Implementations behind the `spdy` subcommands.
//!
//! Every command prints one JSON object on stdout. Output files are
//! written through a temporary sibling and renamed into place, so a
//! crashed command never leaves a half-written CSV or archive behind;
//! run directories get the same guarantee from the manifest being
//! written last.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use spdy_core::archive::{load_archive, save_archive};
use spdy_core::dynamics::{
    accuracy_of_logits, branch_run, build_dataset, forward_loss, train, CheckpointSeries,
    PerturbSpec, RunStatus, Snapshot, TrainConfig,
};
use spdy_core::interventions::{
    barrier, global_magnitude_mask, interpolate, masked_retrain, svd_prune, Mask, SpectralBand,
};
use spdy_core::manifest::{self, LineageTags};
use spdy_core::metrics::analyze_series;
use spdy_core::presets;
use spdy_core::report::{report_for_series, rows_from_record, Report};
use spdy_core::views::{default_pairs, ParamSet};
use spdy_core::Error;

/// Environment variable naming the output root for new run directories.
/// `--out` overrides it; with neither, runs land under `./spdy-out`.
pub const OUT_ENV: &str = "SPDY_OUT";

/// What went wrong, split the way the exit codes are documented:
/// 1 = bad invocation, 2 = bad data or configuration, 3 = numerical
/// failure.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

pub type OpResult<T> = std::result::Result<T, Failure>;

pub fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Usage(_) => 1,
        Failure::Core(e) => match e {
            Error::NonFiniteEntry { .. }
            | Error::NonFiniteValue { .. }
            | Error::EmptySpectrum { .. }
            | Error::Diverged { .. } => 3,
            _ => 2,
        },
    }
}

pub fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("spdy-out"))
}

/// Step budget, checkpoint cadence, and seed overrides shared by the
/// training commands.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

pub fn apply_overrides(cfg: &mut TrainConfig, ov: &Overrides) {
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = ov.steps {
        cfg.steps = steps;
    }
    if let Some(every) = ov.checkpoint_every {
        cfg.checkpoint_every = every;
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SweepGrid {
    WeightDecay,
    SgdDecay,
    DataFraction,
    Eta,
}

fn emit(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    println!("{text}");
}

fn write_atomic(path: &Path, bytes: &[u8]) -> OpResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Refuse to write into a directory that already holds a finished run.
fn ensure_fresh(dir: &Path) -> OpResult<()> {
    if manifest::is_complete(dir) {
        return Err(Failure::Core(Error::Manifest {
            detail: format!(
                "{} already holds a completed run; pick another --name or remove it",
                dir.display()
            ),
        }));
    }
    Ok(())
}

fn run_value(dir: &Path, series: &CheckpointSeries) -> serde_json::Value {
    let last = series.snapshots.last();
    json!({
        "run_dir": dir.display().to_string(),
        "status": series.status,
        "checkpoints": series.snapshots.len(),
        "final_step": last.map(|s| s.step),
        "final_eval": last.map(|s| s.eval),
    })
}

fn persist(dir: &Path, series: &CheckpointSeries, tags: &LineageTags) -> OpResult<serde_json::Value> {
    manifest::write_run_dir(dir, series, tags)?;
    Ok(run_value(dir, series))
}

/// A diverged run is still written out (its manifest records the status)
/// but the command exits through the numerical-failure code.
fn check_diverged(series: &CheckpointSeries) -> OpResult<()> {
    if let RunStatus::Diverged { at } = series.status {
        let loss = series
            .snapshots
            .last()
            .map_or(f64::INFINITY, |s| s.eval.train_loss);
        return Err(Failure::Core(Error::Diverged { step: at, loss }));
    }
    Ok(())
}

fn pick<'a>(series: &'a CheckpointSeries, step: Option<u64>) -> OpResult<&'a Snapshot> {
    match step {
        Some(step) => Ok(series.at_step(step)?),
        None => series.snapshots.last().ok_or_else(|| {
            Failure::Core(Error::Manifest {
                detail: "run has no checkpoints".into(),
            })
        }),
    }
}

/// Interpolation and barriers only mean something when both runs share a
/// model shape, dataset, and data split.
fn check_compatible(a: &TrainConfig, b: &TrainConfig) -> OpResult<()> {
    let key = |cfg: &TrainConfig| {
        json!({
            "model": cfg.model,
            "dataset": cfg.dataset,
            "data_seed": cfg.data_seed,
        })
    };
    if key(a) != key(b) {
        return Err(Failure::Core(Error::Manifest {
            detail: "runs disagree on model, dataset, or data seed".into(),
        }));
    }
    Ok(())
}

/// Loss and accuracy of one parameter set on a run's own data.
fn eval_value(cfg: &TrainConfig, params: &ParamSet) -> OpResult<serde_json::Value> {
    let data = build_dataset(&cfg.dataset, cfg.model.loss, cfg.data_seed)?;
    let (train_loss, logits) = forward_loss(&cfg.model, params, &data.train)?;
    let train_acc = accuracy_of_logits(&logits, &data.train.targets);
    let (val_loss, val_acc) = match &data.val {
        Some(batch) => {
            let (loss, logits) = forward_loss(&cfg.model, params, batch)?;
            (Some(loss), accuracy_of_logits(&logits, &batch.targets))
        }
        None => (None, None),
    };
    Ok(json!({
        "train_loss": train_loss,
        "train_acc": train_acc,
        "val_loss": val_loss,
        "val_acc": val_acc,
    }))
}

fn band_name(band: SpectralBand) -> &'static str {
    match band {
        SpectralBand::TopHalf => "top-half",
        SpectralBand::BottomHalf => "bottom-half",
    }
}

pub fn cmd_train(cfg: TrainConfig, dir: PathBuf) -> OpResult<()> {
    ensure_fresh(&dir)?;
    let series = train(&cfg)?;
    let value = persist(&dir, &series, &LineageTags::default())?;
    emit(&value);
    check_diverged(&series)
}

pub fn cmd_sweep(
    grid: SweepGrid,
    out: &Path,
    ov: &Overrides,
    split: Option<u64>,
) -> OpResult<()> {
    match grid {
        SweepGrid::WeightDecay => {
            let runs = presets::WEIGHT_DECAY_GRID
                .iter()
                .map(|&wd| (format!("wd-{wd}"), presets::grokking_sweep(wd)))
                .collect();
            sweep_plain(&out.join("sweep-weight-decay"), runs, ov)
        }
        SweepGrid::SgdDecay => {
            let runs = presets::SGD_DECAY_GRID
                .iter()
                .map(|&wd| (format!("wd-{wd}"), presets::clusters_sweep(wd)))
                .collect();
            sweep_plain(&out.join("sweep-sgd-decay"), runs, ov)
        }
        SweepGrid::DataFraction => {
            let runs = presets::DATA_FRACTION_GRID
                .iter()
                .map(|&frac| {
                    let cfg = presets::grokking(frac, 1.0, presets::GROKKING_SEED);
                    (format!("frac-{frac}"), cfg)
                })
                .collect();
            sweep_plain(&out.join("sweep-data-fraction"), runs, ov)
        }
        SweepGrid::Eta => sweep_eta(&out.join("sweep-eta"), ov, split),
    }
}

fn sweep_plain(root: &Path, runs: Vec<(String, TrainConfig)>, ov: &Overrides) -> OpResult<()> {
    let mut planned = Vec::new();
    for (name, mut cfg) in runs {
        apply_overrides(&mut cfg, ov);
        let dir = root.join(&name);
        ensure_fresh(&dir)?;
        planned.push((dir, cfg));
    }
    let mut values = Vec::new();
    let mut diverged = Ok(());
    for (dir, cfg) in &planned {
        let series = train(cfg)?;
        values.push(persist(dir, &series, &LineageTags::default())?);
        if diverged.is_ok() {
            diverged = check_diverged(&series);
        }
    }
    emit(&json!({
        "sweep_root": root.display().to_string(),
        "runs": values,
    }));
    diverged
}

/// One trunk, then a branch per perturbation magnitude, all split at the
/// same checkpoint.
fn sweep_eta(root: &Path, ov: &Overrides, split: Option<u64>) -> OpResult<()> {
    let plan = presets::lmc_plan();
    let split = split.unwrap_or(plan.eta_split);
    let mut cfg = presets::lmc_trunk(plan.trunk_seeds[0]);
    apply_overrides(&mut cfg, ov);

    let trunk_dir = root.join("trunk");
    ensure_fresh(&trunk_dir)?;
    let mut branches = Vec::new();
    for &eta in plan.eta_grid.iter() {
        let dir = root.join(format!("eta-{eta}"));
        ensure_fresh(&dir)?;
        branches.push((eta, dir));
    }

    let trunk = train(&cfg)?;
    let mut values = vec![persist(&trunk_dir, &trunk, &LineageTags::default())?];
    let mut diverged = check_diverged(&trunk);
    let trunk_name = trunk_dir.display().to_string();
    for (i, (eta, dir)) in branches.iter().enumerate() {
        let seed = plan.branch_seed_base + i as u64;
        let branch = branch_run(&trunk, split, seed, Some(&PerturbSpec { eta: *eta }))?;
        let tags = LineageTags {
            trunk: Some(trunk_name.clone()),
            mask_id: None,
        };
        values.push(persist(dir, &branch, &tags)?);
        if diverged.is_ok() {
            diverged = check_diverged(&branch);
        }
    }
    emit(&json!({
        "sweep_root": root.display().to_string(),
        "split_step": split,
        "runs": values,
    }));
    diverged
}

/// Metrics CSV for a run: every analyzable layer at every checkpoint,
/// plus the model's default alignment chain. Byte-identical across
/// repeated invocations on the same run directory.
pub fn cmd_analyze(run: &Path, csv_out: Option<PathBuf>) -> OpResult<()> {
    let series = manifest::load_series(run)?;
    let last = series.snapshots.last().ok_or_else(|| {
        Failure::Core(Error::Manifest {
            detail: format!("{} has no checkpoints", run.display()),
        })
    })?;
    let pairs = default_pairs(&last.params.metas());
    let mut report = Report::default();
    for rec in analyze_series(&series.view(), &pairs)? {
        report.extend(rows_from_record(&rec));
    }
    let path = csv_out.unwrap_or_else(|| run.join("metrics.csv"));
    write_atomic(&path, report.to_csv()?.as_bytes())?;
    emit(&json!({
        "csv": path.display().to_string(),
        "rows": report.rows.len(),
        "checkpoints": series.snapshots.len(),
    }));
    Ok(())
}

/// Full report: training curves plus the metric sweep, as CSV and JSON.
pub fn cmd_report(
    run: &Path,
    csv_out: Option<PathBuf>,
    json_out: Option<PathBuf>,
) -> OpResult<()> {
    let series = manifest::load_series(run)?;
    let report = report_for_series(&series, None)?;
    let csv_path = csv_out.unwrap_or_else(|| run.join("report.csv"));
    let json_path = json_out.unwrap_or_else(|| run.join("report.json"));
    write_atomic(&csv_path, report.to_csv()?.as_bytes())?;
    write_atomic(&json_path, report.to_json()?.as_bytes())?;
    emit(&json!({
        "csv": csv_path.display().to_string(),
        "json": json_path.display().to_string(),
        "rows": report.rows.len(),
    }));
    Ok(())
}

pub fn cmd_prune_svd(
    run: &Path,
    band: SpectralBand,
    include_final: bool,
    step: Option<u64>,
    save: Option<PathBuf>,
) -> OpResult<()> {
    let series = manifest::load_series(run)?;
    let snap = pick(&series, step)?;
    let full = eval_value(&series.config, &snap.params)?;
    let pruned_params = svd_prune(&snap.params, band, !include_final)?;
    let pruned = eval_value(&series.config, &pruned_params)?;
    if let Some(path) = &save {
        save_archive(path, &pruned_params)?;
    }
    emit(&json!({
        "run_dir": run.display().to_string(),
        "step": snap.step,
        "band": band_name(band),
        "exclude_final": !include_final,
        "full": full,
        "pruned": pruned,
        "saved": save.map(|p| p.display().to_string()),
    }));
    Ok(())
}

/// Build a global magnitude mask from a checkpoint and save it as a 0/1
/// tensor archive next to the run (or wherever `--mask-out` points).
pub fn cmd_prune_magnitude(
    run: &Path,
    keep: f64,
    include_final: bool,
    step: Option<u64>,
    mask_out: Option<PathBuf>,
) -> OpResult<()> {
    let series = manifest::load_series(run)?;
    let snap = pick(&series, step)?;
    let mask = global_magnitude_mask(&snap.params, keep, !include_final)?;
    let path = mask_out.unwrap_or_else(|| run.join(format!("mask-keep-{keep}.spdy")));
    save_archive(&path, &mask.as_param_set(&snap.params)?)?;
    emit(&json!({
        "run_dir": run.display().to_string(),
        "step": snap.step,
        "mask": path.display().to_string(),
        "kept": mask.kept(),
        "total": mask.total(),
        "layerwise_sparsity": mask.layerwise_sparsity(),
    }));
    Ok(())
}

/// Rewind a run to an early checkpoint and retrain with the masked-out
/// weights frozen at zero.
pub fn cmd_retrain_masked(
    run: &Path,
    mask_file: &Path,
    rewind: u64,
    seed: u64,
    dir: PathBuf,
) -> OpResult<()> {
    ensure_fresh(&dir)?;
    let trunk = manifest::load_series(run)?;
    let mask = Mask::from_param_set(&load_archive(mask_file)?)?;
    let series = masked_retrain(&trunk, &mask, rewind, seed)?;
    let tags = LineageTags {
        trunk: Some(run.display().to_string()),
        mask_id: Some(mask_file.display().to_string()),
    };
    let value = persist(&dir, &series, &tags)?;
    emit(&value);
    check_diverged(&series)
}

pub fn cmd_interpolate(
    run_a: &Path,
    run_b: &Path,
    alpha: f64,
    step_a: Option<u64>,
    step_b: Option<u64>,
    save: Option<PathBuf>,
) -> OpResult<()> {
    let a = manifest::load_series(run_a)?;
    let b = manifest::load_series(run_b)?;
    check_compatible(&a.config, &b.config)?;
    let pa = pick(&a, step_a)?;
    let pb = pick(&b, step_b)?;
    let blended = interpolate(&pa.params, &pb.params, alpha)?;
    let eval = eval_value(&a.config, &blended)?;
    if let Some(path) = &save {
        save_archive(path, &blended)?;
    }
    emit(&json!({
        "run_a": run_a.display().to_string(),
        "run_b": run_b.display().to_string(),
        "step_a": pa.step,
        "step_b": pb.step,
        "alpha": alpha,
        "eval": eval,
        "saved": save.map(|p| p.display().to_string()),
    }));
    Ok(())
}

/// Branch a run at a checkpoint after a norm-matched random perturbation
/// and train the branch to the trunk's budget.
pub fn cmd_perturb(run: &Path, eta: f64, split: u64, seed: u64, dir: PathBuf) -> OpResult<()> {
    ensure_fresh(&dir)?;
    let trunk = manifest::load_series(run)?;
    let branch = branch_run(&trunk, split, seed, Some(&PerturbSpec { eta }))?;
    let tags = LineageTags {
        trunk: Some(run.display().to_string()),
        mask_id: None,
    };
    let value = persist(&dir, &branch, &tags)?;
    emit(&value);
    check_diverged(&branch)
}

pub fn cmd_barrier(
    run_a: &Path,
    run_b: &Path,
    grid: usize,
    step_a: Option<u64>,
    step_b: Option<u64>,
    json_out: Option<PathBuf>,
) -> OpResult<()> {
    let a = manifest::load_series(run_a)?;
    let b = manifest::load_series(run_b)?;
    check_compatible(&a.config, &b.config)?;
    let pa = pick(&a, step_a)?;
    let pb = pick(&b, step_b)?;
    let result = barrier(&a.config, &pa.params, &pb.params, grid)?;
    let value = json!({
        "run_a": run_a.display().to_string(),
        "run_b": run_b.display().to_string(),
        "step_a": pa.step,
        "step_b": pb.step,
        "result": result,
    });
    if let Some(path) = &json_out {
        let text = serde_json::to_string_pretty(&value)?;
        write_atomic(path, text.as_bytes())?;
    }
    emit(&value);
    Ok(())
}
