//! MLPs and deep linear networks: init, forward loss, and hand-rolled
//! reverse-mode gradients.
//!
//! Layer l maps h to act(h W_l^T + b_l) with W_l of shape (widths[l],
//! widths[l-1]), so weight rows are output channels and the stored tensors
//! are exactly the matrices the spectral analysis consumes. Biases are
//! optional per model; deep linear networks never carry them.

use crate::dynamics::{Activation, Architecture, Batch, InitScheme, LossKind, ModelSpec, Targets};
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal_columns, Matrix};
use crate::rng::Stream;
use crate::views::{view_matrix, ParamSet, ParamTensor, TensorKind};

/// Balanced init draws its shared spectrum from this band.
const BALANCED_SIGMA_LO: f64 = 0.3;
const BALANCED_SIGMA_HI: f64 = 0.9;

/// Per-tensor gradients, parallel to `ParamSet::tensors`.
#[derive(Clone, Debug)]
pub struct GradSet {
    pub by_tensor: Vec<Vec<f64>>,
}

pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    match spec.init {
        InitScheme::UniformScaled => init_uniform(spec, seed),
        InitScheme::Balanced => init_balanced(spec, seed),
        InitScheme::Zero => init_zero(spec),
    }
}

/// Biases start at zero, so seeds reach the same weights whether or not
/// the model carries them and the initial spectra stay bias-free.
fn zero_bias(l: usize, out: usize) -> Result<ParamTensor> {
    ParamTensor::new(
        &format!("b{l}"),
        TensorKind::Vector,
        vec![out],
        vec![0.0; out],
    )
}

fn init_zero(spec: &ModelSpec) -> Result<ParamSet> {
    let mut tensors = Vec::new();
    for l in 1..spec.widths.len() {
        let (out, fan_in) = (spec.widths[l], spec.widths[l - 1]);
        tensors.push(ParamTensor::new(
            &format!("w{l}"),
            TensorKind::Linear,
            vec![out, fan_in],
            vec![0.0; out * fan_in],
        )?);
        if spec.bias {
            tensors.push(zero_bias(l, out)?);
        }
    }
    Ok(ParamSet { tensors })
}

fn init_uniform(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let mut stream = Stream::new(seed, "init");
    let mut tensors = Vec::new();
    for l in 1..spec.widths.len() {
        let (out, fan_in) = (spec.widths[l], spec.widths[l - 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> = (0..out * fan_in)
            .map(|_| stream.uniform_symmetric(bound))
            .collect();
        tensors.push(ParamTensor::new(
            &format!("w{l}"),
            TensorKind::Linear,
            vec![out, fan_in],
            data,
        )?);
        if spec.bias {
            tensors.push(zero_bias(l, out)?);
        }
    }
    Ok(ParamSet { tensors })
}

/// W_l = O_l diag(s) O_{l-1}^T with a shared spectrum s and orthonormal
/// factors, so every layer starts with the same singular values, equal
/// Grams across layer boundaries, and perfectly aligned adjacent bases.
pub fn init_balanced(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    init_balanced_with_bases(spec, None, None, seed)
}

/// Balanced init with the two outer orthogonal bases chosen by the caller
/// and interior bases drawn from the seed. Passing the singular factors of
/// a target linear map pins the whole chain to that map's modes, which
/// decouples gradient descent into independent scalar flows and makes the
/// balance conservation law exact up to rounding.
///
/// `first` must have orthonormal columns of shape widths[0] x r and `last`
/// widths[L] x r, where r is the smallest width.
pub fn init_balanced_with_bases(
    spec: &ModelSpec,
    first: Option<&Matrix>,
    last: Option<&Matrix>,
    seed: u64,
) -> Result<ParamSet> {
    spec.validate()?;
    let mut stream = Stream::new(seed, "init");
    let r = *spec.widths.iter().min().unwrap();
    let mut spectrum: Vec<f64> = (0..r)
        .map(|_| BALANCED_SIGMA_LO + (BALANCED_SIGMA_HI - BALANCED_SIGMA_LO) * stream.uniform())
        .collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let boundary = |given: Option<&Matrix>, want_rows: usize| -> Result<Option<Matrix>> {
        match given {
            None => Ok(None),
            Some(m) => {
                if (m.rows(), m.cols()) != (want_rows, r) {
                    return Err(Error::ShapeMismatch {
                        context: "balanced init basis".into(),
                        expected: format!("{want_rows}x{r}"),
                        got: format!("{}x{}", m.rows(), m.cols()),
                    });
                }
                Ok(Some(m.clone()))
            }
        }
    };
    let first = boundary(first, spec.widths[0])?;
    let last = boundary(last, *spec.widths.last().unwrap())?;

    let top = spec.widths.len() - 1;
    let factors: Vec<Matrix> = spec
        .widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if i == 0 {
                if let Some(f) = &first {
                    return f.clone();
                }
            }
            if i == top {
                if let Some(l) = &last {
                    return l.clone();
                }
            }
            random_orthonormal_columns(w, r, &mut stream)
        })
        .collect();

    let mut tensors = Vec::new();
    for l in 1..spec.widths.len() {
        let mut scaled = factors[l].clone();
        for row in 0..scaled.rows() {
            for (j, s) in spectrum.iter().enumerate() {
                scaled.set(row, j, scaled.get(row, j) * s);
            }
        }
        let w = scaled.matmul_transpose_rhs(&factors[l - 1])?;
        tensors.push(ParamTensor::new(
            &format!("w{l}"),
            TensorKind::Linear,
            vec![spec.widths[l], spec.widths[l - 1]],
            w.data().to_vec(),
        )?);
    }
    Ok(ParamSet { tensors })
}

fn apply_activation(a: Activation, z: &Matrix) -> Matrix {
    match a {
        Activation::Identity => z.clone(),
        Activation::Relu => Matrix::from_fn(z.rows(), z.cols(), |r, c| z.get(r, c).max(0.0)),
        Activation::Tanh => Matrix::from_fn(z.rows(), z.cols(), |r, c| z.get(r, c).tanh()),
        Activation::Square => Matrix::from_fn(z.rows(), z.cols(), |r, c| {
            let v = z.get(r, c);
            v * v
        }),
    }
}

/// d act/d z expressed through the preactivation z and activation h.
fn activation_grad(a: Activation, z: f64, h: f64) -> f64 {
    match a {
        Activation::Identity => 1.0,
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - h * h,
        Activation::Square => 2.0 * z,
    }
}

struct ForwardTrace {
    /// hs[0] is the input; hs[l] the post-activation output of layer l.
    hs: Vec<Matrix>,
    /// zs[l] is the preactivation of layer l+1.
    zs: Vec<Matrix>,
}

/// Per-layer weights and biases, split out of the flat tensor list.
struct LayerParams {
    weights: Vec<Matrix>,
    /// One vector per layer when the model carries biases.
    biases: Option<Vec<Vec<f64>>>,
}

/// Tensors stored per layer: `[w]` or `[w, b]`.
fn tensors_per_layer(spec: &ModelSpec) -> usize {
    if spec.bias {
        2
    } else {
        1
    }
}

fn layer_params(spec: &ModelSpec, params: &ParamSet) -> Result<LayerParams> {
    let layers = spec.layer_count();
    let stride = tensors_per_layer(spec);
    if params.tensors.len() != layers * stride {
        return Err(Error::ShapeMismatch {
            context: "params vs model".into(),
            expected: format!("{} tensors", layers * stride),
            got: format!("{}", params.tensors.len()),
        });
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = spec.bias.then(|| Vec::with_capacity(layers));
    for l in 0..layers {
        weights.push(view_matrix(&params.tensors[l * stride])?);
        if let Some(bs) = &mut biases {
            let b = &params.tensors[l * stride + 1];
            if b.dims != [spec.widths[l + 1]] {
                return Err(Error::ShapeMismatch {
                    context: format!("bias {}", b.name),
                    expected: format!("[{}]", spec.widths[l + 1]),
                    got: format!("{:?}", b.dims),
                });
            }
            bs.push(b.data.clone());
        }
    }
    Ok(LayerParams { weights, biases })
}

fn hidden_activation(spec: &ModelSpec) -> Activation {
    match spec.architecture {
        Architecture::Mlp => spec.activation,
        Architecture::DeepLinear => Activation::Identity,
    }
}

fn forward_trace(spec: &ModelSpec, net: &LayerParams, x: &Matrix) -> Result<ForwardTrace> {
    let act = hidden_activation(spec);
    let layers = net.weights.len();
    let mut hs = vec![x.clone()];
    let mut zs = Vec::with_capacity(layers);
    for (l, w) in net.weights.iter().enumerate() {
        let mut z = hs[l].matmul_transpose_rhs(w)?;
        if let Some(bs) = &net.biases {
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&bs[l]) {
                    *v += b;
                }
            }
        }
        let h = if l + 1 < layers {
            apply_activation(act, &z)
        } else {
            z.clone()
        };
        zs.push(z);
        hs.push(h);
    }
    Ok(ForwardTrace { hs, zs })
}

/// Mean loss over the batch and its gradient in the logits.
fn loss_and_logit_grad(loss: LossKind, logits: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let inv_n = 1.0 / n as f64;
    match (loss, targets) {
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            if labels.len() != n {
                return Err(Error::ShapeMismatch {
                    context: "labels vs logits".into(),
                    expected: format!("{n} labels"),
                    got: format!("{}", labels.len()),
                });
            }
            let mut total = 0.0;
            let mut grad = Matrix::zeros(n, logits.cols());
            for r in 0..n {
                let row = logits.row(r);
                let y = labels[r];
                if y >= row.len() {
                    return Err(Error::InvalidArgument {
                        context: format!("label {y} out of range for {} logits", row.len()),
                    });
                }
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|&z| (z - m).exp()).sum();
                total += m + sum_exp.ln() - row[y];
                let g = grad.row_mut(r);
                for (c, &z) in row.iter().enumerate() {
                    g[c] = ((z - m).exp() / sum_exp) * inv_n;
                }
                g[y] -= inv_n;
            }
            Ok((total * inv_n, grad))
        }
        (LossKind::Mse, Targets::Values(y)) => {
            let diff = logits.sub(y)?;
            let loss = diff.frobenius_inner(&diff)? * inv_n;
            Ok((loss, diff.scale(2.0 * inv_n)))
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => Err(Error::InvalidArgument {
            context: "cross entropy needs class labels".into(),
        }),
        (LossKind::Mse, Targets::Labels(_)) => Err(Error::InvalidArgument {
            context: "mse needs dense targets".into(),
        }),
    }
}

/// Batch loss and logits, no gradients.
pub fn forward_loss(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, Matrix)> {
    let net = layer_params(spec, params)?;
    let trace = forward_trace(spec, &net, &batch.x)?;
    let logits = trace.hs.last().unwrap();
    let (loss, _) = loss_and_logit_grad(spec.loss, logits, &batch.targets)?;
    Ok((loss, logits.clone()))
}

/// Batch loss together with gradients for every tensor, biases included.
pub fn backward(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, GradSet)> {
    let net = layer_params(spec, params)?;
    let trace = forward_trace(spec, &net, &batch.x)?;
    let logits = trace.hs.last().unwrap();
    let (loss, mut d_z) = loss_and_logit_grad(spec.loss, logits, &batch.targets)?;

    let act = hidden_activation(spec);
    let layers = net.weights.len();
    let stride = tensors_per_layer(spec);
    let mut grads = vec![Vec::new(); params.tensors.len()];
    for l in (0..layers).rev() {
        let d_w = d_z.matmul_transpose_lhs(&trace.hs[l])?;
        grads[l * stride] = d_w.data().to_vec();
        if spec.bias {
            // d_b is d_z summed over the batch dimension.
            let mut d_b = vec![0.0; d_z.cols()];
            for r in 0..d_z.rows() {
                for (g, &v) in d_b.iter_mut().zip(d_z.row(r)) {
                    *g += v;
                }
            }
            grads[l * stride + 1] = d_b;
        }
        if l > 0 {
            let d_h = d_z.matmul(&net.weights[l])?;
            let z = &trace.zs[l - 1];
            let h = &trace.hs[l];
            d_z = Matrix::from_fn(d_h.rows(), d_h.cols(), |r, c| {
                d_h.get(r, c) * activation_grad(act, z.get(r, c), h.get(r, c))
            });
        }
    }
    Ok((loss, GradSet { by_tensor: grads }))
}

/// Fraction of rows whose argmax logit matches the label. None for dense
/// regression targets, where argmax has no meaning.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (c, &z) in row.iter().enumerate() {
        if z > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of rows whose predicted argmax matches the target: the label
/// itself for classification targets, the target row's argmax for dense
/// (one-hot style) targets. `None` when dense targets are not class-like
/// (more than one maximal entry would make argmax ill-defined, as would a
/// non-classification regression target; callers on such data read the
/// loss instead).
pub fn accuracy_of_logits(logits: &Matrix, targets: &Targets) -> Option<f64> {
    let n = logits.rows();
    let mut hits = 0usize;
    match targets {
        Targets::Labels(labels) => {
            for r in 0..n {
                if argmax(logits.row(r)) == labels[r] {
                    hits += 1;
                }
            }
        }
        Targets::Values(values) => {
            for r in 0..n {
                let row = values.row(r);
                let best = argmax(row);
                if row.iter().filter(|&&v| v == row[best]).count() != 1 {
                    return None;
                }
                if argmax(logits.row(r)) == best {
                    hits += 1;
                }
            }
        }
    }
    Some(hits as f64 / n as f64)
}

/// Largest Frobenius mismatch between adjacent Grams,
/// max_l |W_{l+1}^T W_{l+1} - W_l W_l^T|_F. Zero under balanced init and
/// conserved by gradient flow in deep linear networks.
pub fn balance_defect(params: &ParamSet) -> Result<f64> {
    let mats: Vec<Matrix> = params.tensors.iter().map(view_matrix).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for pair in mats.windows(2) {
        let incoming = pair[1].matmul_transpose_lhs(&pair[1])?;
        let outgoing = pair[0].matmul_transpose_rhs(&pair[0])?;
        worst = worst.max(incoming.sub(&outgoing)?.frobenius_norm());
    }
    Ok(worst)
}

/// The end-to-end linear map W_L ... W_1.
pub fn end_to_end(params: &ParamSet) -> Result<Matrix> {
    let mats: Vec<Matrix> = params.tensors.iter().map(view_matrix).collect::<Result<_>>()?;
    let mut product = mats
        .first()
        .ok_or(Error::InvalidArgument {
            context: "end-to-end product of an empty param set".into(),
        })?
        .clone();
    for w in &mats[1..] {
        product = w.matmul(&product)?;
    }
    Ok(product)
}
