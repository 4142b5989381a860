//! Deterministic training of small networks with dense spectral snapshots.
//!
//! Everything a run needs is captured in [`TrainConfig`]; two runs with the
//! same config produce bitwise identical checkpoint series. Randomness is
//! split by purpose: `seed` drives init and data order, `data_seed` drives
//! the dataset itself (splits, centers, labels, teachers), so the same data
//! can be revisited under different inits and vice versa.

mod data;
mod model;
mod optim;
mod train;

pub use data::{build_dataset, Batch, Dataset, Targets};
pub use model::{
    accuracy_of_logits, backward, balance_defect, end_to_end, forward_loss, init_balanced,
    init_balanced_with_bases, init_params, GradSet,
};
pub use optim::{lr_at, OptState};
pub use train::{branch_run, perturb, run, train, RunSetup, DIVERGENCE_LOSS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::views::{Dtype, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    DeepLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// Elementwise square. On one-hot pair encodings this activation
    /// multiplies input channels against each other, which is what lets a
    /// two-layer net represent products of periodic features compactly.
    Square,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform entries within +-1/sqrt(fan_in).
    UniformScaled,
    /// W_i = O_i diag(s) O_{i-1}^T with shared spectrum s: all layers start
    /// with equal Grams and aligned singular bases. Deep linear only.
    Balanced,
    /// Every weight zero.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Layer extents, input first: `[d_in, h_1, ..., d_out]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
    pub loss: LossKind,
    /// Add a bias vector to every layer. Bias tensors are 1-D, so they
    /// stay outside spectral analysis, pruning, and perturbation. Deep
    /// linear networks are bias-free by definition.
    #[serde(default)]
    pub bias: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument {
                context: format!("model needs at least one layer, widths {:?}", self.widths),
            });
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument {
                context: format!("zero width in {:?}", self.widths),
            });
        }
        if self.architecture == Architecture::DeepLinear && self.activation != Activation::Identity
        {
            return Err(Error::InvalidArgument {
                context: "deep_linear requires identity activation".into(),
            });
        }
        if self.init == InitScheme::Balanced && self.architecture != Architecture::DeepLinear {
            return Err(Error::InvalidArgument {
                context: "balanced init is defined for deep_linear only".into(),
            });
        }
        if self.architecture == Architecture::DeepLinear && self.bias {
            return Err(Error::InvalidArgument {
                context: "deep_linear networks are bias-free".into(),
            });
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    SgdMomentum,
    Adamw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine from the base rate toward zero over the run; strictly
    /// positive at every executed step.
    Cosine,
    /// Multiply by `factor` at each listed step.
    StepDecay { times: Vec<u64>, factor: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant
    }
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimKind,
    pub lr: f64,
    /// Momentum coefficient for sgd_momentum.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// L2 coefficient for sgd_momentum, decoupled decay for adamw.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument {
                context: format!("optimizer config out of range: {self:?}"),
            });
        }
        if let Schedule::StepDecay { factor, .. } = self.schedule {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::InvalidArgument {
                    context: format!("step decay factor {factor} must be positive"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    True,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// All p^2 ordered pairs (a, b) with label (a + b) mod p, inputs the
    /// concatenated one-hot encodings. Split into train/val by shuffling
    /// with the data seed.
    ModularAddition { p: usize, train_fraction: f64 },
    /// n points around `classes` Gaussian centers in d dims. `random` label
    /// mode replaces the cluster labels with frozen uniform draws. No
    /// validation split.
    GaussianClusters {
        n: usize,
        d: usize,
        classes: usize,
        label_mode: LabelMode,
    },
    /// Identity inputs with targets from a fixed random linear map of the
    /// same dimension, so a (deep) linear model can drive the loss to zero.
    LinearTeacher { dim: usize },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DatasetSpec::ModularAddition { p, train_fraction } => {
                *p >= 2
                    && train_fraction.is_finite()
                    && *train_fraction > 0.0
                    && *train_fraction <= 1.0
            }
            DatasetSpec::GaussianClusters { n, d, classes, .. } => {
                *n >= 1 && *d >= 1 && *classes >= 2 && *classes <= *n
            }
            DatasetSpec::LinearTeacher { dim } => *dim >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument {
                context: format!("dataset spec out of range: {self:?}"),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    /// Stop at the first checkpoint whose validation accuracy reaches the
    /// threshold.
    ValAccAtLeast { threshold: f64 },
    TrainAccAtLeast { threshold: f64 },
    TrainLossBelow { threshold: f64 },
}

fn default_dtype() -> Dtype {
    Dtype::F32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub optim: OptimizerConfig,
    pub dataset: DatasetSpec,
    pub steps: u64,
    pub checkpoint_every: u64,
    /// None = full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub data_seed: u64,
    /// Storage precision of snapshots. Snapshots are quantized to this
    /// precision when captured, so in-memory analysis matches what a
    /// round-trip through an archive would see.
    #[serde(default = "default_dtype")]
    pub snapshot_dtype: Dtype,
    #[serde(default)]
    pub stop: Option<StopRule>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.dataset.validate()?;
        if self.steps == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument {
                context: "steps and checkpoint_every must be positive".into(),
            });
        }
        if self.checkpoint_every > self.steps {
            return Err(Error::InvalidArgument {
                context: format!(
                    "checkpoint cadence {} exceeds the {}-step budget",
                    self.checkpoint_every, self.steps
                ),
            });
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument {
                context: "batch_size 0".into(),
            });
        }
        if let Some(rule) = &self.stop {
            let ok = match rule {
                StopRule::ValAccAtLeast { threshold } | StopRule::TrainAccAtLeast { threshold } => {
                    (0.0..=1.0).contains(threshold)
                }
                StopRule::TrainLossBelow { threshold } => threshold.is_finite() && *threshold > 0.0,
            };
            if !ok {
                return Err(Error::InvalidArgument {
                    context: format!("stop rule out of range: {rule:?}"),
                });
            }
        }
        // The dataset must plug into the model.
        let (d_in, d_out) = match &self.dataset {
            DatasetSpec::ModularAddition { p, .. } => (2 * p, *p),
            DatasetSpec::GaussianClusters { d, classes, .. } => (*d, *classes),
            DatasetSpec::LinearTeacher { dim } => (*dim, *dim),
        };
        if self.model.input_dim() != d_in || self.model.output_dim() != d_out {
            return Err(Error::ShapeMismatch {
                context: "model vs dataset".into(),
                expected: format!("widths {d_in}..{d_out}"),
                got: format!(
                    "widths {}..{}",
                    self.model.input_dim(),
                    self.model.output_dim()
                ),
            });
        }
        if matches!(self.dataset, DatasetSpec::LinearTeacher { .. })
            && self.model.loss != LossKind::Mse
        {
            return Err(Error::InvalidArgument {
                context: "linear_teacher targets need mse loss".into(),
            });
        }
        Ok(())
    }
}

/// Where a branch came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub split_step: u64,
    pub branch_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_eta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    StoppedEarly { at: u64 },
    Diverged { at: u64 },
}

/// Loss and accuracy on the full splits at a checkpoint, plus the learning
/// rate in force there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: u64,
    pub params: ParamSet,
    pub eval: EvalStats,
}

#[derive(Clone, Debug)]
pub struct CheckpointSeries {
    pub config: TrainConfig,
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
    pub lineage: Option<Lineage>,
}

impl CheckpointSeries {
    pub fn view(&self) -> Vec<(u64, &ParamSet)> {
        self.snapshots.iter().map(|s| (s.step, &s.params)).collect()
    }

    pub fn at_step(&self, step: u64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| s.step == step)
            .ok_or(Error::MissingCheckpoint { step })
    }

    /// First snapshot at or after the given step.
    pub fn at_or_after(&self, step: u64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| s.step >= step)
            .ok_or(Error::MissingCheckpoint { step })
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("series has snapshots")
    }

    pub fn steps(&self) -> Vec<u64> {
        self.snapshots.iter().map(|s| s.step).collect()
    }
}

/// Norm-matched random direction: `eta` scales each perturbed tensor's
/// Frobenius norm. The output layer is never perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub eta: f64,
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eta.is_finite() && self.eta >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument {
                context: format!("perturbation magnitude {}", self.eta),
            })
        }
    }
}

/// Snapshot steps for a window `[start, end]`: the window start, four more
/// dense points inside the first cadence interval, every multiple of
/// `every` after that, and the window end.
pub fn snapshot_steps(start: u64, end: u64, every: u64) -> Vec<u64> {
    assert!(every > 0 && start <= end);
    let mut steps = vec![start, end];
    for k in 1..5 {
        let dense = start + (k * every + 2) / 5;
        if dense < end {
            steps.push(dense);
        }
    }
    let mut t = start.saturating_add(every);
    while t < end {
        steps.push(t);
        t = t.saturating_add(every);
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}
