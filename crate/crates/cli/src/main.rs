//! `spdy`: train the library's preset experiments, sweep its standard
//! grids, and run spectral analyses and interventions on saved run
//! directories.
//!
//! Every run lands in its own directory (one weight archive per
//! checkpoint plus a manifest) under the output root, which is `--out`
//! when given, else `$SPDY_OUT`, else `./spdy-out`. Commands print a
//! JSON summary on stdout and exit 0 on success, 1 on a bad invocation,
//! 2 on bad data or configuration, and 3 on numerical failure.

mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spdy_core::dynamics::{LabelMode, TrainConfig};
use spdy_core::interventions::SpectralBand;
use spdy_core::presets;

use ops::{Failure, OpResult, Overrides};

#[derive(Parser)]
#[command(
    name = "spdy",
    version,
    about = "Spectral dynamics of weight matrices: training, metrics, interventions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one preset or a JSON config into a run directory
    Train(TrainArgs),
    /// Train every point of one of the standard parameter grids
    Sweep(SweepArgs),
    /// Write the per-checkpoint metrics CSV for a run
    Analyze(AnalyzeArgs),
    /// Write the full metric report (CSV and JSON) for a run
    Report(ReportArgs),
    /// Evaluate a run with each layer truncated to one spectral band
    PruneSvd(PruneSvdArgs),
    /// Save a global magnitude mask built from a run's weights
    PruneMagnitude(PruneMagnitudeArgs),
    /// Rewind a run and retrain it under a saved mask
    RetrainMasked(RetrainMaskedArgs),
    /// Evaluate a convex combination of two runs' weights
    Interpolate(InterpolateArgs),
    /// Branch a run at a checkpoint with a norm-matched perturbation
    Perturb(PerturbArgs),
    /// Loss barrier on the linear path between two runs
    Barrier(BarrierArgs),
}

/// Built-in experiments.
#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Modular addition, 40% of the pairs, weight decay 1
    GrokkingMain,
    /// Modular addition, 30% of the pairs, no weight decay
    GrokkingControl,
    /// Gaussian clusters with their real labels
    ClustersTrue,
    /// Gaussian clusters with shuffled labels
    ClustersRandom,
    /// Small cluster net used for mask experiments
    ClustersCompact,
    /// Trunk run for connectivity experiments
    LmcTrunk,
}

fn preset_config(preset: Preset) -> (TrainConfig, &'static str) {
    match preset {
        Preset::GrokkingMain => (presets::grokking_main(), "grokking-main"),
        Preset::GrokkingControl => (presets::grokking_control(), "grokking-control"),
        Preset::ClustersTrue => (
            presets::clusters(LabelMode::True, presets::CLUSTERS_SEED),
            "clusters-true",
        ),
        Preset::ClustersRandom => (
            presets::clusters(LabelMode::Random, presets::CLUSTERS_SEED),
            "clusters-random",
        ),
        Preset::ClustersCompact => (presets::lottery_plan().trunk, "clusters-compact"),
        Preset::LmcTrunk => {
            let plan = presets::lmc_plan();
            (presets::lmc_trunk(plan.trunk_seeds[0]), "lmc-trunk")
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Grokking run per weight decay in {0, 0.1, 1, 10}
    WeightDecay,
    /// Cluster run per decay in {0, 0.001, 0.01, 0.1}
    SgdDecay,
    /// Grokking run per train fraction in {0.3, 0.7, 0.9}
    DataFraction,
    /// Perturbed branch per eta in {0, 0.1, 0.25, 0.5, 1, 2.5}
    Eta,
}

impl Grid {
    fn to_ops(self) -> ops::SweepGrid {
        match self {
            Grid::WeightDecay => ops::SweepGrid::WeightDecay,
            Grid::SgdDecay => ops::SweepGrid::SgdDecay,
            Grid::DataFraction => ops::SweepGrid::DataFraction,
            Grid::Eta => ops::SweepGrid::Eta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Band {
    /// Keep the top ceil(R/2) directions of each spectrum
    TopHalf,
    /// Keep the bottom floor(R/2) directions
    BottomHalf,
}

impl Band {
    fn to_core(self) -> SpectralBand {
        match self {
            Band::TopHalf => SpectralBand::TopHalf,
            Band::BottomHalf => SpectralBand::BottomHalf,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Built-in experiment to run
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    /// JSON training config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory name (defaults to the preset or config file name)
    #[arg(long)]
    name: Option<String>,
    /// Output root (defaults to $SPDY_OUT, then ./spdy-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the step budget
    #[arg(long)]
    steps: Option<u64>,
    /// Override the checkpoint cadence
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Which grid to train
    #[arg(long, value_enum)]
    grid: Grid,
    /// Output root (defaults to $SPDY_OUT, then ./spdy-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split step for the eta grid (defaults to the preset split)
    #[arg(long)]
    split: Option<u64>,
    /// Override the step budget of every run in the grid
    #[arg(long)]
    steps: Option<u64>,
    /// Override the checkpoint cadence of every run in the grid
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Override the training seed of every run in the grid
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory
    run: PathBuf,
    /// Where to write the CSV (defaults to metrics.csv inside the run)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory
    run: PathBuf,
    /// Where to write the CSV (defaults to report.csv inside the run)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Where to write the JSON (defaults to report.json inside the run)
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PruneSvdArgs {
    /// Run directory
    run: PathBuf,
    /// Which spectral band to keep
    #[arg(long, value_enum)]
    band: Band,
    /// Also prune the final (output) layer
    #[arg(long)]
    include_final: bool,
    /// Checkpoint step to prune (defaults to the last)
    #[arg(long)]
    step: Option<u64>,
    /// Save the pruned weights as an archive
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct PruneMagnitudeArgs {
    /// Run directory
    run: PathBuf,
    /// Fraction of weights to keep, in (0, 1]
    #[arg(long)]
    keep: f64,
    /// Also mask the final (output) layer
    #[arg(long)]
    include_final: bool,
    /// Checkpoint step to mask (defaults to the last)
    #[arg(long)]
    step: Option<u64>,
    /// Where to save the mask archive (defaults inside the run)
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrainMaskedArgs {
    /// Trunk run directory
    run: PathBuf,
    /// Mask archive, as saved by prune-magnitude
    #[arg(long)]
    mask: PathBuf,
    /// Checkpoint step to rewind to
    #[arg(long)]
    rewind: u64,
    /// Data-order seed for the retrain
    #[arg(long)]
    seed: u64,
    /// Run directory name (defaults to one derived from the trunk)
    #[arg(long)]
    name: Option<String>,
    /// Output root (defaults to $SPDY_OUT, then ./spdy-out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpolateArgs {
    /// First run directory
    run_a: PathBuf,
    /// Second run directory
    run_b: PathBuf,
    /// Interpolation coefficient (0 = first run, 1 = second)
    #[arg(long)]
    alpha: f64,
    /// Checkpoint step in the first run (defaults to the last)
    #[arg(long)]
    step_a: Option<u64>,
    /// Checkpoint step in the second run (defaults to the last)
    #[arg(long)]
    step_b: Option<u64>,
    /// Save the blended weights as an archive
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    /// Trunk run directory
    run: PathBuf,
    /// Perturbation size as a fraction of each tensor's norm
    #[arg(long)]
    eta: f64,
    /// Checkpoint step to branch from
    #[arg(long)]
    split: u64,
    /// Seed for the noise and the branch's data order
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run directory name (defaults to one derived from the trunk)
    #[arg(long)]
    name: Option<String>,
    /// Output root (defaults to $SPDY_OUT, then ./spdy-out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BarrierArgs {
    /// First run directory
    run_a: PathBuf,
    /// Second run directory
    run_b: PathBuf,
    /// Number of interpolation points, endpoints included
    #[arg(long, default_value_t = 11)]
    grid: usize,
    /// Checkpoint step in the first run (defaults to the last)
    #[arg(long)]
    step_a: Option<u64>,
    /// Checkpoint step in the second run (defaults to the last)
    #[arg(long)]
    step_b: Option<u64>,
    /// Also write the result to a JSON file
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Directory name for a derived run: the trunk's name plus what was done
/// to it.
fn derived_name(trunk: &std::path::Path, suffix: String) -> String {
    match trunk.file_name().and_then(|n| n.to_str()) {
        Some(stem) => format!("{stem}-{suffix}"),
        None => suffix,
    }
}

fn run_train(args: TrainArgs) -> OpResult<()> {
    let (mut cfg, default_name) = match (args.preset, &args.config) {
        (Some(preset), None) => {
            let (cfg, name) = preset_config(preset);
            (cfg, name.to_string())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let cfg: TrainConfig = serde_json::from_str(&text)?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("run")
                .to_string();
            (cfg, stem)
        }
        _ => {
            return Err(Failure::Usage(
                "pass exactly one of --preset or --config".into(),
            ))
        }
    };
    ops::apply_overrides(
        &mut cfg,
        &Overrides {
            seed: args.seed,
            steps: args.steps,
            checkpoint_every: args.checkpoint_every,
        },
    );
    let dir = ops::out_root(args.out).join(args.name.unwrap_or(default_name));
    ops::cmd_train(cfg, dir)
}

fn dispatch(command: Command) -> OpResult<()> {
    match command {
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => ops::cmd_sweep(
            args.grid.to_ops(),
            &ops::out_root(args.out),
            &Overrides {
                seed: args.seed,
                steps: args.steps,
                checkpoint_every: args.checkpoint_every,
            },
            args.split,
        ),
        Command::Analyze(args) => ops::cmd_analyze(&args.run, args.csv),
        Command::Report(args) => ops::cmd_report(&args.run, args.csv, args.json),
        Command::PruneSvd(args) => ops::cmd_prune_svd(
            &args.run,
            args.band.to_core(),
            args.include_final,
            args.step,
            args.save,
        ),
        Command::PruneMagnitude(args) => ops::cmd_prune_magnitude(
            &args.run,
            args.keep,
            args.include_final,
            args.step,
            args.mask_out,
        ),
        Command::RetrainMasked(args) => {
            let name = args.name.unwrap_or_else(|| {
                derived_name(&args.run, format!("masked-r{}-s{}", args.rewind, args.seed))
            });
            let dir = ops::out_root(args.out).join(name);
            ops::cmd_retrain_masked(&args.run, &args.mask, args.rewind, args.seed, dir)
        }
        Command::Interpolate(args) => ops::cmd_interpolate(
            &args.run_a,
            &args.run_b,
            args.alpha,
            args.step_a,
            args.step_b,
            args.save,
        ),
        Command::Perturb(args) => {
            let name = args.name.unwrap_or_else(|| {
                derived_name(&args.run, format!("eta-{}-s{}", args.eta, args.seed))
            });
            let dir = ops::out_root(args.out).join(name);
            ops::cmd_perturb(&args.run, args.eta, args.split, args.seed, dir)
        }
        Command::Barrier(args) => ops::cmd_barrier(
            &args.run_a,
            &args.run_b,
            args.grid,
            args.step_a,
            args.step_b,
            args.json,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap wants exit code 2 for parse errors; the documented contract
        // reserves 2 for data problems, so usage errors become 1.
        Err(err) => {
            let _ = err.print();
            return if err.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(ops::exit_code(&failure))
        }
    }
}
