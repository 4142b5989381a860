//! Surgery on trained parameters: spectral truncation, magnitude masks,
//! masked retraining, and interpolation between runs.

use crate::dynamics::{run, CheckpointSeries, GradSet, RunSetup, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::{low_rank_reconstruct, svd, Matrix};
use crate::metrics::{diagonal_score, score_is_truncated, sva_matrix, DIAG_LIMIT};
use crate::rng::Stream;
use crate::views::{view_matrix, ParamSet, ParamTensor, TensorKind};

/// A barrier at or below this value counts as linear mode connectivity.
pub const LMC_TOLERANCE: f64 = 1e-3;

/// Per-entry keep/zero decisions, parallel to a `ParamSet`'s tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub keep: Vec<Vec<bool>>,
}

impl Mask {
    pub fn all_ones(params: &ParamSet) -> Mask {
        Mask {
            keep: params
                .tensors
                .iter()
                .map(|t| vec![true; t.data.len()])
                .collect(),
        }
    }

    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.keep.len() != params.tensors.len()
            || self
                .keep
                .iter()
                .zip(params.tensors.iter())
                .any(|(k, t)| k.len() != t.data.len())
        {
            return Err(Error::ShapeMismatch {
                context: "mask vs params".into(),
                expected: format!(
                    "{:?} entries",
                    params.tensors.iter().map(|t| t.data.len()).collect::<Vec<_>>()
                ),
                got: format!(
                    "{:?} entries",
                    self.keep.iter().map(|k| k.len()).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.keep
            .iter()
            .map(|k| k.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.keep.iter().map(|k| k.len()).sum()
    }

    /// Kept fraction per tensor, in tensor order.
    pub fn layerwise_sparsity(&self) -> Vec<f64> {
        self.keep
            .iter()
            .map(|k| {
                if k.is_empty() {
                    0.0
                } else {
                    k.iter().filter(|&&b| b).count() as f64 / k.len() as f64
                }
            })
            .collect()
    }

    /// Kept entry count per tensor.
    pub fn per_tensor_counts(&self) -> Vec<usize> {
        self.keep
            .iter()
            .map(|k| k.iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn zero_params(&self, params: &mut ParamSet) {
        for (t, k) in params.tensors.iter_mut().zip(self.keep.iter()) {
            for (x, &keep) in t.data.iter_mut().zip(k.iter()) {
                if !keep {
                    *x = 0.0;
                }
            }
        }
    }

    pub fn zero_grads(&self, grads: &mut GradSet) {
        for (g, k) in grads.by_tensor.iter_mut().zip(self.keep.iter()) {
            for (x, &keep) in g.iter_mut().zip(k.iter()) {
                if !keep {
                    *x = 0.0;
                }
            }
        }
    }

    /// Render the mask as tensors shaped like `like`, 1.0 for kept slots
    /// and 0.0 for frozen ones, so it can ride the archive format.
    pub fn as_param_set(&self, like: &ParamSet) -> Result<ParamSet> {
        self.check_matches(like)?;
        let tensors = like
            .tensors
            .iter()
            .zip(self.keep.iter())
            .map(|(t, k)| {
                ParamTensor::new(
                    &t.name,
                    t.kind,
                    t.dims.clone(),
                    k.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                )
            })
            .collect::<Result<_>>()?;
        Ok(ParamSet { tensors })
    }

    /// Decode a mask stored as 0/1 tensors; anything else is rejected.
    pub fn from_param_set(params: &ParamSet) -> Result<Mask> {
        let mut keep = Vec::with_capacity(params.tensors.len());
        for t in &params.tensors {
            let mut k = Vec::with_capacity(t.data.len());
            for &x in &t.data {
                k.push(if x == 0.0 {
                    false
                } else if x == 1.0 {
                    true
                } else {
                    return Err(Error::InvalidArgument {
                        context: format!("mask entry {x} in {} is not 0 or 1", t.name),
                    });
                });
            }
            keep.push(k);
        }
        Ok(Mask { keep })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralBand {
    /// Keep the top ceil(R/2) directions of each pruned tensor.
    TopHalf,
    /// Keep the bottom floor(R/2) directions.
    BottomHalf,
}

/// Index of the last tensor that participates in analysis; pruning flags
/// treat it as "the final layer".
fn final_analyzable(params: &ParamSet) -> Option<usize> {
    params.tensors.iter().rposition(|t| t.kind.analyzable())
}

/// Replace each analyzable tensor by its reconstruction from half of its
/// spectrum. With `exclude_final` the last analyzable tensor passes
/// through untouched; 1-D and unclassified tensors always do.
pub fn svd_prune(params: &ParamSet, band: SpectralBand, exclude_final: bool) -> Result<ParamSet> {
    let skip = if exclude_final {
        final_analyzable(params)
    } else {
        None
    };
    let mut out = params.clone();
    for (idx, t) in out.tensors.iter_mut().enumerate() {
        if !t.kind.analyzable() || Some(idx) == skip {
            continue;
        }
        let w = view_matrix(t)?;
        let f = svd(&w)?;
        let r = f.sigma.len();
        let split = r.div_ceil(2);
        let keep: Vec<usize> = match band {
            SpectralBand::TopHalf => (0..split).collect(),
            SpectralBand::BottomHalf => (split..r).collect(),
        };
        let pruned = low_rank_reconstruct(&f, &keep)?;
        let data = unview(t, &pruned)?;
        t.data = data;
    }
    Ok(out)
}

/// Write a matrix in a tensor's analysis orientation back into the
/// tensor's native layout. Inverse of `view_matrix` for analyzable kinds.
fn unview(t: &ParamTensor, m: &Matrix) -> Result<Vec<f64>> {
    let native = view_matrix(t)?;
    if (m.rows(), m.cols()) != (native.rows(), native.cols()) {
        return Err(Error::ShapeMismatch {
            context: format!("unview of '{}'", t.name),
            expected: format!("{}x{}", native.rows(), native.cols()),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    match t.kind {
        TensorKind::Linear | TensorKind::LstmStack | TensorKind::FusedQkv | TensorKind::Conv => {
            // These views are flat reinterpretations of the native layout.
            Ok(m.data().to_vec())
        }
        TensorKind::ConvTranspose => {
            // The view swapped the two leading axes; swap them back.
            let (ci, co, h, w) = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
            let mut data = vec![0.0; ci * co * h * w];
            for o in 0..co {
                for i in 0..ci {
                    for hh in 0..h {
                        for ww in 0..w {
                            let col = (i * h + hh) * w + ww;
                            let native_idx = ((i * co + o) * h + hh) * w + ww;
                            data[native_idx] = m.get(o, col);
                        }
                    }
                }
            }
            Ok(data)
        }
        TensorKind::Other | TensorKind::Vector => Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "analyzable kind".into(),
            got: t.kind.label().into(),
        }),
    }
}

/// Global magnitude mask: keep the round(keep_frac * pool) entries of
/// largest magnitude across the pooled tensors, ties broken by tensor
/// order then flat index. Tensors outside the pool (non-analyzable ones,
/// and the final layer under `exclude_final`) are kept whole.
pub fn global_magnitude_mask(
    params: &ParamSet,
    keep_frac: f64,
    exclude_final: bool,
) -> Result<Mask> {
    if !(keep_frac.is_finite() && keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::InvalidArgument {
            context: format!("keep fraction {keep_frac}"),
        });
    }
    let skip = if exclude_final {
        final_analyzable(params)
    } else {
        None
    };
    let pooled =
        |idx: usize, t: &ParamTensor| -> bool { t.kind.analyzable() && Some(idx) != skip };

    let mut mask = Mask {
        keep: params
            .tensors
            .iter()
            .enumerate()
            .map(|(idx, t)| vec![!pooled(idx, t); t.data.len()])
            .collect(),
    };
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, t) in params.tensors.iter().enumerate() {
        if !pooled(ti, t) {
            continue;
        }
        for (i, &x) in t.data.iter().enumerate() {
            entries.push((x.abs(), ti, i));
        }
    }
    let n_keep = (keep_frac * entries.len() as f64).round() as usize;
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for &(_, ti, i) in entries.iter().take(n_keep) {
        mask.keep[ti][i] = true;
    }
    Ok(mask)
}

/// Random mask with exactly the same kept count per tensor as `reference`.
pub fn random_mask_matched(reference: &Mask, seed: u64) -> Mask {
    let mut keep = Vec::with_capacity(reference.keep.len());
    for (ti, ref_k) in reference.keep.iter().enumerate() {
        let hold = ref_k.iter().filter(|&&b| b).count();
        let mut k = vec![false; ref_k.len()];
        let mut stream = Stream::substream(seed, "mask", ti as u64);
        for i in stream.sample_distinct(ref_k.len(), hold) {
            k[i] = true;
        }
        keep.push(k);
    }
    Mask { keep }
}

/// Rewind a trunk to an early snapshot and retrain under a fixed mask:
/// masked entries are zeroed at entry and pinned at zero by zeroing their
/// gradients every step. The retrain runs out the trunk's remaining budget
/// with data order from `retrain_seed`.
pub fn masked_retrain(
    trunk: &CheckpointSeries,
    mask: &Mask,
    rewind_step: u64,
    retrain_seed: u64,
) -> Result<CheckpointSeries> {
    let snap = trunk.at_step(rewind_step)?;
    mask.check_matches(&snap.params)?;
    run(RunSetup {
        cfg: &trunk.config,
        params: snap.params.clone(),
        start_step: rewind_step,
        order_seed: retrain_seed,
        mask: Some(mask),
        lineage: Some(crate::dynamics::Lineage {
            split_step: rewind_step,
            branch_seed: retrain_seed,
            perturb_eta: None,
        }),
    })
}

/// Elementwise interpolation (1 - alpha) a + alpha b between two
/// structurally identical parameter sets.
pub fn interpolate(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
    if !alpha.is_finite() {
        return Err(Error::NonFiniteValue {
            context: "interpolation coefficient".into(),
            value: alpha,
        });
    }
    a.check_same_structure(b)?;
    let mut out = a.clone();
    for (t, tb) in out.tensors.iter_mut().zip(b.tensors.iter()) {
        for (x, &y) in t.data.iter_mut().zip(tb.data.iter()) {
            *x = (1.0 - alpha) * *x + alpha * y;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BarrierResult {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub endpoint_losses: (f64, f64),
    /// max_alpha [L(interp(alpha)) - ((1 - alpha) L(a) + alpha L(b))],
    /// reported raw: a convex path gives a negative value.
    pub barrier: f64,
    /// barrier <= LMC_TOLERANCE.
    pub lmc: bool,
}

/// Barrier of an arbitrary loss along the linear path between two endpoint
/// parameter sets, on `grid_n` evenly spaced points including both
/// endpoints.
pub fn barrier_on(
    mut loss: impl FnMut(&ParamSet) -> Result<f64>,
    a: &ParamSet,
    b: &ParamSet,
    grid_n: usize,
) -> Result<BarrierResult> {
    if grid_n < 3 {
        return Err(Error::InvalidArgument {
            context: format!("barrier grid of {grid_n} points, need at least 3"),
        });
    }
    let mut alphas = Vec::with_capacity(grid_n);
    let mut losses = Vec::with_capacity(grid_n);
    for i in 0..grid_n {
        let alpha = i as f64 / (grid_n - 1) as f64;
        let params = interpolate(a, b, alpha)?;
        let l = loss(&params)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteValue {
                context: format!("barrier loss at alpha {alpha}"),
                value: l,
            });
        }
        alphas.push(alpha);
        losses.push(l);
    }
    let (l0, l1) = (losses[0], losses[grid_n - 1]);
    let barrier = alphas
        .iter()
        .zip(losses.iter())
        .map(|(&alpha, &l)| l - ((1.0 - alpha) * l0 + alpha * l1))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BarrierResult {
        alphas,
        losses,
        endpoint_losses: (l0, l1),
        barrier,
        lmc: barrier <= LMC_TOLERANCE,
    })
}

/// Train-loss barrier between two endpoints under the dataset and loss of
/// `cfg`.
pub fn barrier(
    cfg: &TrainConfig,
    a: &ParamSet,
    b: &ParamSet,
    grid_n: usize,
) -> Result<BarrierResult> {
    let dataset = crate::dynamics::build_dataset(&cfg.dataset, cfg.model.loss, cfg.data_seed)?;
    barrier_on(
        |p| Ok(crate::dynamics::forward_loss(&cfg.model, p, &dataset.train)?.0),
        a,
        b,
        grid_n,
    )
}

/// Agreement of one tensor's singular directions across two models.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LayerAgreement {
    pub name: String,
    pub diag: Vec<f64>,
    pub score: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BranchSva {
    pub layers: Vec<LayerAgreement>,
    pub mean_score: f64,
}

/// Singular-vector agreement between two runs' endpoints, per analyzable
/// tensor in the full view, across models rather than across time.
pub fn branch_sva(a: &ParamSet, b: &ParamSet) -> Result<BranchSva> {
    a.check_same_structure(b)?;
    let mut layers = Vec::new();
    for (ta, tb) in a.tensors.iter().zip(b.tensors.iter()) {
        if !ta.kind.analyzable() {
            continue;
        }
        let fa = svd(&view_matrix(ta)?)?;
        let fb = svd(&view_matrix(tb)?)?;
        let s = sva_matrix(&fa, &fb, DIAG_LIMIT)?;
        layers.push(LayerAgreement {
            name: ta.name.clone(),
            diag: (0..s.rows().min(s.cols())).map(|i| s.get(i, i)).collect(),
            score: diagonal_score(&s),
            truncated: score_is_truncated(&s),
        });
    }
    if layers.is_empty() {
        return Err(Error::InvalidArgument {
            context: "no analyzable tensors to compare".into(),
        });
    }
    let mean_score = layers.iter().map(|l| l.score).sum::<f64>() / layers.len() as f64;
    Ok(BranchSva { layers, mean_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        train, Activation, Architecture, DatasetSpec, InitScheme, LabelMode, LossKind, ModelSpec,
        OptimKind, OptimizerConfig, RunStatus, Schedule, TrainConfig,
    };
    use crate::views::Dtype;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelSpec {
                architecture: Architecture::Mlp,
                widths: vec![4, 10, 3],
                activation: Activation::Relu,
                init: InitScheme::UniformScaled,
                loss: LossKind::CrossEntropy,
                bias: false,
            },
            optim: OptimizerConfig {
                kind: OptimKind::SgdMomentum,
                lr: 0.05,
                momentum: 0.9,
                betas: (0.9, 0.999),
                eps: 1e-8,
                weight_decay: 0.0,
                schedule: Schedule::Constant,
            },
            dataset: DatasetSpec::GaussianClusters {
                n: 36,
                d: 4,
                classes: 3,
                label_mode: LabelMode::True,
            },
            steps: 60,
            checkpoint_every: 20,
            batch_size: None,
            seed: 5,
            data_seed: 6,
            snapshot_dtype: Dtype::F64,
            stop: None,
        }
    }

    fn diag_tensor(values: &[f64]) -> ParamSet {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, &v) in values.iter().enumerate() {
            data[i * n + i] = v;
        }
        ParamSet {
            tensors: vec![ParamTensor::new("w1", TensorKind::Linear, vec![n, n], data).unwrap()],
        }
    }

    #[test]
    fn all_ones_mask_keeps_everything() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let mask = Mask::all_ones(params);
        assert_eq!(mask.kept(), mask.total());
        assert_eq!(mask.layerwise_sparsity(), vec![1.0, 1.0]);
    }

    #[test]
    fn svd_prune_splits_a_diagonal_spectrum() {
        let params = diag_tensor(&[3.0, 2.0, 1.0, 0.5]);
        let top = svd_prune(&params, SpectralBand::TopHalf, false).unwrap();
        let bottom = svd_prune(&params, SpectralBand::BottomHalf, false).unwrap();
        let want_top = diag_tensor(&[3.0, 2.0, 0.0, 0.0]);
        let want_bottom = diag_tensor(&[0.0, 0.0, 1.0, 0.5]);
        for (got, want) in [(&top, &want_top), (&bottom, &want_bottom)] {
            for (a, b) in got.tensors[0].data.iter().zip(want.tensors[0].data.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn svd_prune_halves_partition_the_original() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let top = svd_prune(params, SpectralBand::TopHalf, false).unwrap();
        let bottom = svd_prune(params, SpectralBand::BottomHalf, false).unwrap();
        for ((orig, t), b) in params
            .tensors
            .iter()
            .zip(top.tensors.iter())
            .zip(bottom.tensors.iter())
        {
            let w = view_matrix(orig).unwrap();
            let wt = view_matrix(t).unwrap();
            let wb = view_matrix(b).unwrap();
            let mut resid = 0.0f64;
            for ((x, a), bb) in w.data().iter().zip(wt.data()).zip(wb.data()) {
                resid += (x - a - bb) * (x - a - bb);
            }
            assert!(resid.sqrt() <= 1e-10 * w.frobenius_norm());
            // Top half keeps at most ceil(R/2) nonzero directions.
            let f = svd(&wt).unwrap();
            let nonzero = f.sigma.iter().filter(|&&s| s > 1e-10 * f.sigma[0]).count();
            assert!(nonzero <= f.sigma.len().div_ceil(2));
        }
    }

    #[test]
    fn svd_prune_can_spare_the_final_layer() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let pruned = svd_prune(params, SpectralBand::TopHalf, true).unwrap();
        assert_eq!(
            pruned.tensors.last().unwrap().data,
            params.tensors.last().unwrap().data
        );
        assert_ne!(pruned.tensors[0].data, params.tensors[0].data);
    }

    #[test]
    fn magnitude_mask_keeps_the_largest_entries() {
        let params = ParamSet {
            tensors: vec![ParamTensor::new(
                "w1",
                TensorKind::Linear,
                vec![2, 2],
                vec![3.0, -4.0, 1.0, 2.0],
            )
            .unwrap()],
        };
        let mask = global_magnitude_mask(&params, 0.5, false).unwrap();
        assert_eq!(mask.keep[0], vec![true, true, false, false]);
        let all = global_magnitude_mask(&params, 1.0, false).unwrap();
        assert_eq!(all.kept(), 4);
    }

    #[test]
    fn mask_round_trips_through_tensor_form() {
        let params = ParamSet {
            tensors: vec![ParamTensor::new(
                "w1",
                TensorKind::Linear,
                vec![2, 2],
                vec![3.0, -4.0, 1.0, 2.0],
            )
            .unwrap()],
        };
        let mask = global_magnitude_mask(&params, 0.5, false).unwrap();
        let as_params = mask.as_param_set(&params).unwrap();
        assert_eq!(as_params.tensors[0].data, vec![1.0, 1.0, 0.0, 0.0]);
        let back = Mask::from_param_set(&as_params).unwrap();
        assert_eq!(back.keep, mask.keep);

        let mut corrupt = as_params.clone();
        corrupt.tensors[0].data[0] = 0.5;
        assert!(Mask::from_param_set(&corrupt).is_err());
    }

    #[test]
    fn magnitude_mask_hits_the_requested_count() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let total: usize = params.tensors.iter().map(|t| t.data.len()).sum();
        for frac in [0.1, 0.3, 0.5, 0.9] {
            let mask = global_magnitude_mask(params, frac, false).unwrap();
            let want = (frac * total as f64).round() as usize;
            assert_eq!(mask.kept(), want);
        }
        let mask = global_magnitude_mask(params, 0.3, false).unwrap();
        let mut kept_min = f64::INFINITY;
        let mut dropped_max = 0.0f64;
        for (t, k) in params.tensors.iter().zip(mask.keep.iter()) {
            for (x, &keep) in t.data.iter().zip(k.iter()) {
                if keep {
                    kept_min = kept_min.min(x.abs());
                } else {
                    dropped_max = dropped_max.max(x.abs());
                }
            }
        }
        assert!(kept_min >= dropped_max);
        // Unequal magnitude scales produce unequal layerwise sparsities.
        let sparsities = mask.layerwise_sparsity();
        assert!((sparsities[0] - sparsities[1]).abs() > 1e-3);
    }

    #[test]
    fn magnitude_mask_exclusion_keeps_final_layer_dense() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let mask = global_magnitude_mask(params, 0.2, true).unwrap();
        assert!(mask.keep.last().unwrap().iter().all(|&b| b));
        let pool: usize = params.tensors[0].data.len();
        assert_eq!(
            mask.per_tensor_counts()[0],
            (0.2 * pool as f64).round() as usize
        );
    }

    #[test]
    fn magnitude_mask_breaks_ties_deterministically() {
        let params = ParamSet {
            tensors: vec![ParamTensor::new(
                "w1",
                TensorKind::Linear,
                vec![2, 2],
                vec![0.5, 0.5, 0.5, 0.5],
            )
            .unwrap()],
        };
        let mask = global_magnitude_mask(&params, 0.5, false).unwrap();
        assert_eq!(mask.keep[0], vec![true, true, false, false]);
    }

    #[test]
    fn random_mask_matches_counts_but_not_positions() {
        let series = train(&small_cfg()).unwrap();
        let params = &series.last().params;
        let mag = global_magnitude_mask(params, 0.4, false).unwrap();
        let rand = random_mask_matched(&mag, 77);
        assert_eq!(mag.per_tensor_counts(), rand.per_tensor_counts());
        assert_ne!(mag, rand);
        let again = random_mask_matched(&mag, 77);
        assert_eq!(rand, again);
        let other = random_mask_matched(&mag, 78);
        assert_ne!(rand, other);
        // An all-ones reference reproduces itself.
        let ones = Mask::all_ones(params);
        assert_eq!(random_mask_matched(&ones, 3), ones);
    }

    #[test]
    fn unview_round_trips_conv_transpose() {
        let dims = vec![3, 2, 3, 3];
        let data: Vec<f64> = (0..54).map(|i| i as f64).collect();
        let t = ParamTensor::new("up", TensorKind::ConvTranspose, dims, data.clone()).unwrap();
        let m = view_matrix(&t).unwrap();
        let back = unview(&t, &m).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let series = train(&small_cfg()).unwrap();
        let a = &series.snapshots[0].params;
        let b = &series.last().params;
        let at_zero = interpolate(a, b, 0.0).unwrap();
        let at_one = interpolate(a, b, 1.0).unwrap();
        assert_eq!(&at_zero, a);
        assert_eq!(&at_one, b);
        let mid = interpolate(a, b, 0.5).unwrap();
        for ((t, ta), tb) in mid
            .tensors
            .iter()
            .zip(a.tensors.iter())
            .zip(b.tensors.iter())
        {
            for ((x, &xa), &xb) in t.data.iter().zip(ta.data.iter()).zip(tb.data.iter()) {
                assert!((x - 0.5 * (xa + xb)).abs() < 1e-15);
            }
        }
        // Interpolating a set with itself is the identity at any alpha.
        let same = interpolate(a, a, 0.37).unwrap();
        for (t, ta) in same.tensors.iter().zip(a.tensors.iter()) {
            for (x, y) in t.data.iter().zip(ta.data.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interpolation_rejects_structure_mismatch() {
        let series = train(&small_cfg()).unwrap();
        let a = &series.last().params;
        let mut b = a.clone();
        b.tensors[0].dims = vec![10, 4];
        b.tensors[0].name = "other".into();
        assert!(interpolate(a, &b, 0.5).is_err());
    }

    fn scalar_params(w: f64) -> ParamSet {
        ParamSet {
            tensors: vec![ParamTensor::new("w1", TensorKind::Linear, vec![1, 1], vec![w]).unwrap()],
        }
    }

    #[test]
    fn barrier_matches_closed_forms_on_scalar_losses() {
        let a = scalar_params(-1.0);
        let b = scalar_params(1.0);
        // Quadratic bowl: the path dips below the endpoint line, so the
        // raw maximum sits at the endpoints.
        let quad =
            barrier_on(|p| Ok(p.tensors[0].data[0] * p.tensors[0].data[0]), &a, &b, 11).unwrap();
        assert!(quad.barrier.abs() < 1e-12);
        assert!(quad.lmc);
        assert_eq!(quad.endpoint_losses, (1.0, 1.0));
        // Interior losses really are below the chord.
        assert!(quad.losses[5] < 1e-12);

        // Double well with minima at the endpoints: worst point midway.
        let well = barrier_on(
            |p| {
                let w = p.tensors[0].data[0];
                Ok((w * w - 1.0) * (w * w - 1.0))
            },
            &a,
            &b,
            11,
        )
        .unwrap();
        assert!((well.barrier - 1.0).abs() < 1e-12);
        assert!(!well.lmc);
        let mid = well.alphas.iter().position(|&x| x == 0.5).unwrap();
        assert_eq!(well.losses[mid], 1.0);
    }

    #[test]
    fn barrier_of_identical_endpoints_is_zero() {
        let cfg = small_cfg();
        let series = train(&cfg).unwrap();
        let p = &series.last().params;
        let res = barrier(&cfg, p, p, 11).unwrap();
        assert_eq!(res.alphas.len(), 11);
        assert_eq!(res.alphas[0], 0.0);
        assert_eq!(res.alphas[10], 1.0);
        assert!(res.barrier.abs() < 1e-12);
        assert!(res.lmc);
        assert!(barrier(&cfg, p, p, 2).is_err());
    }

    #[test]
    fn barrier_is_symmetric_and_detects_bumps() {
        let cfg = small_cfg();
        let mut cfg2 = cfg.clone();
        cfg2.seed = 99;
        let a = train(&cfg).unwrap();
        let b = train(&cfg2).unwrap();
        let fwd = barrier(&cfg, &a.last().params, &b.last().params, 11).unwrap();
        let rev = barrier(&cfg, &b.last().params, &a.last().params, 11).unwrap();
        assert!(fwd.barrier > 0.0);
        assert!((fwd.barrier - rev.barrier).abs() < 1e-12);
        for (x, y) in fwd.losses.iter().zip(rev.losses.iter().rev()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_retrain_pins_masked_entries_at_zero() {
        let cfg = small_cfg();
        let trunk = train(&cfg).unwrap();
        let mask = global_magnitude_mask(&trunk.last().params, 0.5, false).unwrap();
        let retrained = masked_retrain(&trunk, &mask, 20, 123).unwrap();
        assert_eq!(retrained.status, RunStatus::Completed);
        assert_eq!(retrained.snapshots[0].step, 20);
        assert_eq!(retrained.last().step, 60);
        for snap in &retrained.snapshots {
            for (t, k) in snap.params.tensors.iter().zip(mask.keep.iter()) {
                for (x, &keep) in t.data.iter().zip(k.iter()) {
                    if !keep {
                        assert_eq!(*x, 0.0);
                    }
                }
            }
        }
        // Retraining with an all-ones mask is exactly a branch of the trunk.
        let full = Mask::all_ones(&trunk.last().params);
        let a = masked_retrain(&trunk, &full, 20, 123).unwrap();
        let b = crate::dynamics::branch_run(&trunk, 20, 123, None).unwrap();
        assert_eq!(a.snapshots.len(), b.snapshots.len());
        for (sa, sb) in a.snapshots.iter().zip(b.snapshots.iter()) {
            assert_eq!(sa.params, sb.params);
        }
    }

    #[test]
    fn masked_loss_ignores_values_in_masked_slots() {
        // The run zeroes masked entries on entry, so whatever the rewind
        // point stored there cannot influence the retrain.
        let cfg = small_cfg();
        let trunk = train(&cfg).unwrap();
        let mask = global_magnitude_mask(&trunk.last().params, 0.5, false).unwrap();
        let a = masked_retrain(&trunk, &mask, 20, 7).unwrap();

        let mut scrambled = trunk.clone();
        let snap_idx = scrambled
            .snapshots
            .iter()
            .position(|s| s.step == 20)
            .unwrap();
        let mut stream = Stream::new(9, "garbage");
        for (t, k) in scrambled.snapshots[snap_idx]
            .params
            .tensors
            .iter_mut()
            .zip(mask.keep.iter())
        {
            for (x, &keep) in t.data.iter_mut().zip(k.iter()) {
                if !keep {
                    *x = stream.normal();
                }
            }
        }
        let b = masked_retrain(&scrambled, &mask, 20, 7).unwrap();
        for (sa, sb) in a.snapshots.iter().zip(b.snapshots.iter()) {
            assert_eq!(sa.params, sb.params);
        }
    }

    #[test]
    fn branch_sva_is_one_for_identical_endpoints() {
        let series = train(&small_cfg()).unwrap();
        let p = &series.last().params;
        let s = branch_sva(p, p).unwrap();
        assert!((s.mean_score - 1.0).abs() < 1e-9);
        assert_eq!(s.layers.len(), 2);
        assert_eq!(s.layers[0].name, "w1");
        for layer in &s.layers {
            assert!(layer.truncated || layer.diag.len() >= 10);
            for &d in &layer.diag {
                assert!(d > 1.0 - 1e-9);
            }
        }
        let mut q = p.clone();
        let mut stream = Stream::new(1, "scramble");
        for x in &mut q.tensors[1].data {
            *x = stream.normal();
        }
        let s2 = branch_sva(p, &q).unwrap();
        assert!(s2.mean_score < s.mean_score);
    }
}
