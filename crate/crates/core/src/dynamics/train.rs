//! The training loop, branching, and norm-matched perturbations.

use std::collections::BTreeSet;

use crate::dynamics::{
    backward, build_dataset, forward_loss, init_params, lr_at, snapshot_steps,
    accuracy_of_logits, Batch, CheckpointSeries, Dataset, EvalStats, Lineage, OptState,
    PerturbSpec, RunStatus, Snapshot, StopRule, TrainConfig,
};
use crate::error::{Error, Result};
use crate::interventions::Mask;
use crate::rng::Stream;
use crate::views::ParamSet;

/// A batch loss at or beyond this value ends the run as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Everything `run` needs beyond the config: starting parameters, where in
/// the step count they sit, which stream orders the data, and an optional
/// freeze mask.
pub struct RunSetup<'a> {
    pub cfg: &'a TrainConfig,
    pub params: ParamSet,
    pub start_step: u64,
    pub order_seed: u64,
    pub mask: Option<&'a Mask>,
    pub lineage: Option<Lineage>,
}

struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    stream: Stream,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, mut stream: Stream) -> BatchSampler {
        let mut order: Vec<usize> = (0..n).collect();
        stream.shuffle(&mut order);
        BatchSampler {
            order,
            pos: 0,
            batch: batch.min(n),
            stream,
        }
    }

    /// Next fixed-size minibatch; reshuffles at epoch boundaries and drops
    /// the short tail so every step sees the same batch size.
    fn draw(&mut self, train: &Batch) -> Batch {
        if self.pos + self.batch > self.order.len() {
            self.stream.shuffle(&mut self.order);
            self.pos = 0;
        }
        let idx = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        train.subset(idx)
    }
}

fn evaluate(cfg: &TrainConfig, params: &ParamSet, data: &Dataset, lr: f64) -> Result<EvalStats> {
    let (train_loss, logits) = forward_loss(&cfg.model, params, &data.train)?;
    let train_acc = accuracy_of_logits(&logits, &data.train.targets);
    let (val_loss, val_acc) = match &data.val {
        Some(v) => {
            let (l, lg) = forward_loss(&cfg.model, params, v)?;
            (Some(l), accuracy_of_logits(&lg, &v.targets))
        }
        None => (None, None),
    };
    Ok(EvalStats {
        train_loss,
        train_acc,
        val_loss,
        val_acc,
        lr,
    })
}

fn stop_triggered(rule: Option<&StopRule>, eval: &EvalStats) -> bool {
    match rule {
        None => false,
        Some(StopRule::ValAccAtLeast { threshold }) => {
            eval.val_acc.is_some_and(|a| a >= *threshold)
        }
        Some(StopRule::TrainAccAtLeast { threshold }) => {
            eval.train_acc.is_some_and(|a| a >= *threshold)
        }
        Some(StopRule::TrainLossBelow { threshold }) => eval.train_loss < *threshold,
    }
}

/// Drive a run forward from `start_step` to the configured step count,
/// recording snapshots on the cadence. Divergence ends the run with the
/// snapshots gathered so far rather than an error.
pub fn run(setup: RunSetup) -> Result<CheckpointSeries> {
    let cfg = setup.cfg;
    cfg.validate()?;
    if setup.start_step > cfg.steps {
        return Err(Error::InvalidArgument {
            context: format!(
                "start step {} beyond run length {}",
                setup.start_step, cfg.steps
            ),
        });
    }
    let data = build_dataset(&cfg.dataset, cfg.model.loss, cfg.data_seed)?;
    let mut params = setup.params;
    if let Some(mask) = setup.mask {
        mask.check_matches(&params)?;
        mask.zero_params(&mut params);
    }
    let mut opt = OptState::new(&cfg.optim, &params);
    let snaps: BTreeSet<u64> =
        snapshot_steps(setup.start_step, cfg.steps, cfg.checkpoint_every)
            .into_iter()
            .collect();
    let mut sampler = cfg
        .batch_size
        .map(|b| BatchSampler::new(data.train.len(), b, Stream::new(setup.order_seed, "data")));

    let mut snapshots = Vec::new();
    let mut status = RunStatus::Completed;
    for step in setup.start_step..cfg.steps {
        if snaps.contains(&step) {
            let eval = evaluate(cfg, &params, &data, lr_at(&cfg.optim, step, cfg.steps))?;
            if !eval.train_loss.is_finite() || eval.train_loss >= DIVERGENCE_LOSS {
                status = RunStatus::Diverged { at: step };
                break;
            }
            snapshots.push(Snapshot {
                step,
                params: params.quantized(cfg.snapshot_dtype),
                eval,
            });
            if stop_triggered(cfg.stop.as_ref(), &eval) {
                status = RunStatus::StoppedEarly { at: step };
                break;
            }
        }
        let minibatch;
        let batch = match &mut sampler {
            Some(s) => {
                minibatch = s.draw(&data.train);
                &minibatch
            }
            None => &data.train,
        };
        let (loss, mut grads) = backward(&cfg.model, &params, batch)?;
        if !loss.is_finite() || loss >= DIVERGENCE_LOSS {
            status = RunStatus::Diverged { at: step };
            break;
        }
        if let Some(mask) = setup.mask {
            mask.zero_grads(&mut grads);
        }
        opt.step(
            &cfg.optim,
            lr_at(&cfg.optim, step, cfg.steps),
            &mut params,
            &grads,
        )?;
        if let Some(mask) = setup.mask {
            mask.zero_params(&mut params);
        }
    }
    if status == RunStatus::Completed {
        let eval = evaluate(cfg, &params, &data, lr_at(&cfg.optim, cfg.steps, cfg.steps))?;
        if !eval.train_loss.is_finite() || eval.train_loss >= DIVERGENCE_LOSS {
            status = RunStatus::Diverged { at: cfg.steps };
        } else {
            snapshots.push(Snapshot {
                step: cfg.steps,
                params: params.quantized(cfg.snapshot_dtype),
                eval,
            });
        }
    }
    Ok(CheckpointSeries {
        config: cfg.clone(),
        snapshots,
        status,
        lineage: setup.lineage,
    })
}

/// Fresh run from initialization.
pub fn train(cfg: &TrainConfig) -> Result<CheckpointSeries> {
    cfg.validate()?;
    let params = init_params(&cfg.model, cfg.seed)?;
    run(RunSetup {
        cfg,
        params,
        start_step: 0,
        order_seed: cfg.seed,
        mask: None,
        lineage: None,
    })
}

/// Continue a trunk run from one of its checkpoints under a fresh data
/// order, optionally after a norm-matched perturbation. Optimizer state
/// starts cold: the branch shares parameters with the trunk, not momentum.
pub fn branch_run(
    trunk: &CheckpointSeries,
    split_step: u64,
    branch_seed: u64,
    perturbation: Option<&PerturbSpec>,
) -> Result<CheckpointSeries> {
    let snap = trunk.at_step(split_step)?;
    let mut params = snap.params.clone();
    if let Some(p) = perturbation {
        params = perturb(&params, p, branch_seed)?;
    }
    run(RunSetup {
        cfg: &trunk.config,
        params,
        start_step: split_step,
        order_seed: branch_seed,
        mask: None,
        lineage: Some(Lineage {
            split_step,
            branch_seed,
            perturb_eta: perturbation.map(|p| p.eta),
        }),
    })
}

/// Add Gaussian noise rescaled so each perturbed tensor moves by exactly
/// `eta` times its own Frobenius norm. The final weight matrix (the output
/// layer) and non-analyzable tensors such as biases are left untouched.
pub fn perturb(params: &ParamSet, spec: &PerturbSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut out = params.clone();
    let last_analyzable = out.tensors.iter().rposition(|t| t.kind.analyzable());
    for (idx, t) in out.tensors.iter_mut().enumerate() {
        if Some(idx) == last_analyzable || !t.kind.analyzable() || spec.eta == 0.0 {
            continue;
        }
        let mut stream = Stream::substream(seed, "perturb", idx as u64);
        let noise: Vec<f64> = (0..t.data.len()).map(|_| stream.normal()).collect();
        let noise_norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w_norm = t.frobenius_norm();
        if noise_norm == 0.0 || w_norm == 0.0 {
            continue;
        }
        let scale = spec.eta * w_norm / noise_norm;
        for (x, d) in t.data.iter_mut().zip(noise.iter()) {
            *x += scale * d;
        }
    }
    Ok(out)
}
