//! Canned experiment configurations.
//!
//! Each preset is a complete `TrainConfig` (or a small plan around one)
//! for the experiments the CLI exposes: grokking on modular addition,
//! weight-decay and data-fraction sweeps, the clusters task with true or
//! random labels, lottery-ticket pruning, and trunk/branch mode
//! connectivity. Budgets are desk-scale: every run finishes in minutes
//! on one core.

use crate::dynamics::{
    Activation, Architecture, DatasetSpec, InitScheme, LabelMode, LossKind, ModelSpec, OptimKind,
    OptimizerConfig, Schedule, StopRule, TrainConfig,
};
use crate::views::Dtype;

/// Weight-decay sweep coefficients (AdamW on the grokking task).
pub const WEIGHT_DECAY_GRID: [f64; 4] = [0.0, 0.1, 1.0, 10.0];
/// Weight-decay sweep coefficients for the SGD-with-momentum setting.
pub const SGD_DECAY_GRID: [f64; 4] = [0.0, 0.001, 0.01, 0.1];
/// Training-set fractions for the grokking data sweep.
pub const DATA_FRACTION_GRID: [f64; 3] = [0.3, 0.7, 0.9];
/// Perturbation magnitudes for the branch-perturbation sweep.
pub const ETA_GRID: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 1.0, 2.5];

/// Modulus of the desk-scale modular-addition task.
pub const GROKKING_P: usize = 23;
/// Hidden width of the grokking MLP.
pub const GROKKING_WIDTH: usize = 128;
/// Step budget for grokking runs; with weight decay 1 validation crosses
/// 0.99 around step 87,000, and the no-decay control runs the budget out.
pub const GROKKING_BUDGET: u64 = 150_000;
pub const GROKKING_CHECKPOINT_EVERY: u64 = 500;
pub const GROKKING_SEED: u64 = 101;
pub const GROKKING_DATA_SEED: u64 = 7;

fn grokking_model() -> ModelSpec {
    ModelSpec {
        architecture: Architecture::Mlp,
        widths: vec![2 * GROKKING_P, GROKKING_WIDTH, GROKKING_P],
        // The squared activation multiplies the two one-hot inputs'
        // phase features against each other, so a width-128 net can
        // represent the sum's phases exactly; with relu or tanh this
        // instance memorizes but does not generalize inside any
        // desk-scale budget. Mean-squared loss matters for the same
        // reason: under cross-entropy the logit scale AdamW sustains
        // against decay keeps the memorizing solution competitive.
        activation: Activation::Square,
        init: InitScheme::UniformScaled,
        loss: LossKind::Mse,
        bias: true,
    }
}

/// Grokking-style run: modular addition, full-batch AdamW. Spectra near
/// rank collapse are precision-sensitive, so snapshots stay f64.
pub fn grokking(train_fraction: f64, weight_decay: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        model: grokking_model(),
        optim: OptimizerConfig {
            kind: OptimKind::Adamw,
            lr: 1e-3,
            momentum: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay,
            schedule: Schedule::Constant,
        },
        dataset: DatasetSpec::ModularAddition {
            p: GROKKING_P,
            train_fraction,
        },
        steps: GROKKING_BUDGET,
        checkpoint_every: GROKKING_CHECKPOINT_EVERY,
        batch_size: None,
        seed,
        data_seed: GROKKING_DATA_SEED,
        snapshot_dtype: Dtype::F64,
        stop: None,
    }
}

/// The headline grokking run: 40% of the pairs, weight decay 1, stopping
/// once validation accuracy reaches 0.99.
pub fn grokking_main() -> TrainConfig {
    let mut cfg = grokking(0.4, 1.0, GROKKING_SEED);
    cfg.stop = Some(StopRule::ValAccAtLeast { threshold: 0.99 });
    cfg
}

/// Control run that does not generalize inside the budget: 30% of the
/// pairs and no weight decay.
pub fn grokking_control() -> TrainConfig {
    let mut cfg = grokking(0.3, 0.0, GROKKING_SEED);
    cfg.stop = Some(StopRule::ValAccAtLeast { threshold: 0.99 });
    cfg
}

/// Fixed-budget grokking run for the weight-decay sweep; no stop rule, so
/// final checkpoints across the sweep are at the same step.
pub const WD_SWEEP_BUDGET: u64 = 12_000;

pub fn grokking_sweep(weight_decay: f64) -> TrainConfig {
    let mut cfg = grokking(0.4, weight_decay, GROKKING_SEED);
    cfg.steps = WD_SWEEP_BUDGET;
    cfg
}

/// Cluster-classification instance: 2,000 points in 64 dimensions, ten
/// Gaussian clusters, four-layer MLP.
pub const CLUSTERS_N: usize = 2_000;
pub const CLUSTERS_D: usize = 64;
pub const CLUSTERS_CLASSES: usize = 10;
pub const CLUSTERS_WIDTH: usize = 128;
pub const CLUSTERS_BUDGET: u64 = 60_000;
pub const CLUSTERS_CHECKPOINT_EVERY: u64 = 1_000;
pub const CLUSTERS_BATCH: usize = 128;
pub const CLUSTERS_SEED: u64 = 301;
pub const CLUSTERS_DATA_SEED: u64 = 31;

/// The clusters task: SGD with momentum 0.9 at a constant rate of 1e-3,
/// run until train accuracy hits 1 (memorization under random labels
/// takes most of the budget; true labels stop far earlier).
pub fn clusters(label_mode: LabelMode, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            architecture: Architecture::Mlp,
            widths: vec![
                CLUSTERS_D,
                CLUSTERS_WIDTH,
                CLUSTERS_WIDTH,
                CLUSTERS_WIDTH,
                CLUSTERS_CLASSES,
            ],
            activation: Activation::Relu,
            init: InitScheme::UniformScaled,
            loss: LossKind::CrossEntropy,
            bias: true,
        },
        optim: OptimizerConfig {
            kind: OptimKind::SgdMomentum,
            lr: 1e-3,
            momentum: 0.9,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        },
        dataset: DatasetSpec::GaussianClusters {
            n: CLUSTERS_N,
            d: CLUSTERS_D,
            classes: CLUSTERS_CLASSES,
            label_mode,
        },
        steps: CLUSTERS_BUDGET,
        checkpoint_every: CLUSTERS_CHECKPOINT_EVERY,
        batch_size: Some(CLUSTERS_BATCH),
        seed,
        data_seed: CLUSTERS_DATA_SEED,
        snapshot_dtype: Dtype::F32,
        stop: Some(StopRule::TrainAccAtLeast { threshold: 1.0 }),
    }
}

/// Clusters run with an SGD-style weight decay, fixed budget (for the
/// decay sweep).
pub fn clusters_sweep(weight_decay: f64) -> TrainConfig {
    let mut cfg = clusters(LabelMode::True, CLUSTERS_SEED);
    cfg.optim.weight_decay = weight_decay;
    cfg.steps = 6_000;
    cfg.stop = None;
    cfg
}

/// Compact clusters instance for protocols that train many runs
/// (lottery tickets, trunk/branch connectivity).
pub const COMPACT_N: usize = 512;
pub const COMPACT_D: usize = 32;
pub const COMPACT_WIDTH: usize = 64;
pub const COMPACT_BATCH: usize = 64;
pub const COMPACT_DATA_SEED: u64 = 53;

pub fn clusters_compact(steps: u64, checkpoint_every: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            architecture: Architecture::Mlp,
            widths: vec![
                COMPACT_D,
                COMPACT_WIDTH,
                COMPACT_WIDTH,
                CLUSTERS_CLASSES,
            ],
            activation: Activation::Relu,
            init: InitScheme::UniformScaled,
            loss: LossKind::CrossEntropy,
            bias: true,
        },
        optim: OptimizerConfig {
            kind: OptimKind::SgdMomentum,
            lr: 1e-2,
            momentum: 0.9,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        },
        dataset: DatasetSpec::GaussianClusters {
            n: COMPACT_N,
            d: COMPACT_D,
            classes: CLUSTERS_CLASSES,
            label_mode: LabelMode::True,
        },
        steps,
        checkpoint_every,
        batch_size: Some(COMPACT_BATCH),
        seed,
        data_seed: COMPACT_DATA_SEED,
        snapshot_dtype: Dtype::F32,
        stop: None,
    }
}

/// Lottery-ticket protocol: train a trunk, mask to the top 5% of weights
/// by magnitude at the end, rewind early, retrain under the mask, and
/// compare against retrains under count-matched random masks.
#[derive(Clone, Debug)]
pub struct LotteryPlan {
    pub trunk: TrainConfig,
    pub keep_frac: f64,
    pub rewind_step: u64,
    pub retrain_seeds: [u64; 3],
}

pub fn lottery_plan() -> LotteryPlan {
    LotteryPlan {
        trunk: clusters_compact(4_000, 200, 401),
        keep_frac: 0.05,
        rewind_step: 200,
        retrain_seeds: [71, 72, 73],
    }
}

/// Trunk/branch connectivity protocol: three trunks, three branches per
/// trunk at an early, middle, and late split, plus a perturbation sweep
/// at the middle split.
#[derive(Clone, Debug)]
pub struct LmcPlan {
    pub trunk_seeds: [u64; 3],
    pub splits: [u64; 3],
    /// Data-order seed for every branch; branches at the same split from
    /// the same trunk with the same seed coincide, so each (trunk, split)
    /// gets its own offset added.
    pub branch_seed_base: u64,
    pub eta_split: u64,
    pub eta_grid: [f64; 6],
    pub barrier_grid: usize,
}

pub fn lmc_plan() -> LmcPlan {
    LmcPlan {
        trunk_seeds: [501, 502, 503],
        splits: [400, 2_000, 4_800],
        branch_seed_base: 900,
        eta_split: 2_000,
        eta_grid: ETA_GRID,
        barrier_grid: 11,
    }
}

/// Steps in each connectivity trunk.
pub const LMC_TRUNK_STEPS: u64 = 6_000;
pub const LMC_CHECKPOINT_EVERY: u64 = 400;

pub fn lmc_trunk(seed: u64) -> TrainConfig {
    let mut cfg = clusters_compact(LMC_TRUNK_STEPS, LMC_CHECKPOINT_EVERY, seed);
    // Random labels give every data order its own memorization basin,
    // which is what makes the split step matter. With true labels this
    // instance funnels every branch into one attractor: all barriers
    // come out exactly zero and agreement saturates regardless of split.
    if let DatasetSpec::GaussianClusters { label_mode, .. } = &mut cfg.dataset {
        *label_mode = LabelMode::Random;
    }
    cfg
}
