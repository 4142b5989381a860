//! Parameter tensors and their matrix views.
//!
//! Spectral measurements only ever see 2-D matrices. This module owns the
//! conventions for getting there from each tensor layout:
//!
//! * `linear (out, in)`: taken as is.
//! * `conv (c_out, c_in, h, w)`: flattened to `c_out x (c_in * h * w)`, or
//!   sliced at the spatial center `(floor(h/2), floor(w/2))` to
//!   `c_out x c_in` when a channel-to-channel view is wanted.
//! * `conv_transpose (c_in, c_out, h, w)`: leading dims swapped first, then
//!   treated like `conv`.
//! * `lstm_stack (4H, D)`: four gate blocks stacked in the order input,
//!   forget, cell candidate, output; views select one `H x D` block.
//! * `fused_qkv (3d, d)`: Q, K, V blocks stacked; views select one head's
//!   row band inside a block.
//!
//! `default_pairs` walks a model manifest in feed order and emits the
//! alignment pairs used when no explicit pairing is given.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Linear,
    Conv,
    ConvTranspose,
    LstmStack,
    FusedQkv,
    Other,
    Vector,
}

impl TensorKind {
    pub fn label(self) -> &'static str {
        match self {
            TensorKind::Linear => "linear",
            TensorKind::Conv => "conv",
            TensorKind::ConvTranspose => "conv_transpose",
            TensorKind::LstmStack => "lstm_stack",
            TensorKind::FusedQkv => "fused_qkv",
            TensorKind::Other => "other",
            TensorKind::Vector => "vector",
        }
    }

    /// Kinds that have a matrix view and participate in analysis.
    pub fn analyzable(self) -> bool {
        !matches!(self, TensorKind::Other | TensorKind::Vector)
    }
}

impl std::fmt::Display for TensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Storage precision of a tensor in an archive. Analysis always runs in f64;
/// this only records what the bytes on disk were.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    /// Round a value to this storage precision.
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            Dtype::F32 => x as f32 as f64,
            Dtype::F64 => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub kind: TensorKind,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    pub stored_dtype: Dtype,
}

impl ParamTensor {
    pub fn new(name: &str, kind: TensorKind, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch {
                context: format!("tensor '{name}'"),
                expected: format!("{expect} entries for dims {dims:?}"),
                got: format!("{} entries", data.len()),
            });
        }
        let arity_ok = match kind {
            TensorKind::Linear => dims.len() == 2,
            TensorKind::Conv | TensorKind::ConvTranspose => dims.len() == 4,
            TensorKind::LstmStack => dims.len() == 2 && dims[0] % 4 == 0 && dims[0] > 0,
            TensorKind::FusedQkv => dims.len() == 2 && dims[0] == 3 * dims[1] && dims[1] > 0,
            TensorKind::Vector => dims.len() == 1,
            TensorKind::Other => !dims.is_empty(),
        };
        if !arity_ok {
            return Err(Error::InvalidArgument {
                context: format!("tensor '{name}': dims {dims:?} invalid for kind {kind}"),
            });
        }
        Ok(ParamTensor {
            name: name.to_string(),
            kind,
            dims,
            data,
            stored_dtype: Dtype::F64,
        })
    }

    pub fn meta(&self) -> TensorMeta {
        TensorMeta {
            name: self.name.clone(),
            kind: self.kind,
            dims: self.dims.clone(),
            head_count: None,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Shape-level description of a tensor, enough to derive views and pairs
/// without the payload. `head_count` matters only for `fused_qkv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub kind: TensorKind,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_count: Option<usize>,
}

/// An ordered set of named tensors; order is feed order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Result<&ParamTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or(Error::MissingTensor { name: name.into() })
    }

    pub fn metas(&self) -> Vec<TensorMeta> {
        self.tensors.iter().map(|t| t.meta()).collect()
    }

    /// Copy with every entry rounded to the given storage precision and the
    /// stored dtype stamped accordingly.
    pub fn quantized(&self, dtype: Dtype) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let mut q = t.clone();
                if dtype == Dtype::F32 {
                    for x in &mut q.data {
                        *x = dtype.quantize(*x);
                    }
                }
                q.stored_dtype = dtype;
                q
            })
            .collect();
        ParamSet { tensors }
    }

    /// Same names, kinds and dims in the same order.
    pub fn check_same_structure(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "param sets".into(),
                expected: format!("{} tensors", self.tensors.len()),
                got: format!("{} tensors", other.tensors.len()),
            });
        }
        for (a, b) in self.tensors.iter().zip(other.tensors.iter()) {
            if a.name != b.name || a.kind != b.kind || a.dims != b.dims {
                return Err(Error::ShapeMismatch {
                    context: "param sets".into(),
                    expected: format!("{} {} {:?}", a.name, a.kind, a.dims),
                    got: format!("{} {} {:?}", b.name, b.kind, b.dims),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmGate {
    Input,
    Forget,
    Cell,
    Output,
}

impl LstmGate {
    pub fn index(self) -> usize {
        match self {
            LstmGate::Input => 0,
            LstmGate::Forget => 1,
            LstmGate::Cell => 2,
            LstmGate::Output => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QkvBlock {
    Q,
    K,
    V,
}

impl QkvBlock {
    pub fn index(self) -> usize {
        match self {
            QkvBlock::Q => 0,
            QkvBlock::K => 1,
            QkvBlock::V => 2,
        }
    }
}

/// Which matrix a tensor contributes to an alignment pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseView {
    Full,
    ConvCenter,
    LstmGate { gate: LstmGate },
    QkvHead {
        block: QkvBlock,
        head: usize,
        head_count: usize,
    },
    /// Column band of a linear tensor: the input rows fed by one head of an
    /// upstream fused projection.
    InputBand { head: usize, head_count: usize },
}

impl BaseView {
    fn with_head(self, h: usize) -> BaseView {
        match self {
            BaseView::QkvHead {
                block, head_count, ..
            } => BaseView::QkvHead {
                block,
                head: h,
                head_count,
            },
            BaseView::InputBand { head_count, .. } => BaseView::InputBand {
                head: h,
                head_count,
            },
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewSelector {
    pub view: BaseView,
    /// Swap input and output sides after taking the base view. Used on the
    /// K side of Q-K pairs, where both matrices meet output-to-output.
    #[serde(default)]
    pub transposed: bool,
}

impl ViewSelector {
    pub fn full() -> Self {
        ViewSelector {
            view: BaseView::Full,
            transposed: false,
        }
    }

    fn with_head(self, h: usize) -> Self {
        ViewSelector {
            view: self.view.with_head(h),
            transposed: self.transposed,
        }
    }
}

/// Matrix view of a tensor per the layout conventions above.
pub fn view_matrix(t: &ParamTensor) -> Result<Matrix> {
    match t.kind {
        TensorKind::Linear | TensorKind::LstmStack | TensorKind::FusedQkv => {
            Matrix::new(t.dims[0], t.dims[1], t.data.clone())
        }
        TensorKind::Conv => {
            let (co, rest) = (t.dims[0], t.dims[1] * t.dims[2] * t.dims[3]);
            Matrix::new(co, rest, t.data.clone())
        }
        TensorKind::ConvTranspose => {
            let (ci, co, h, w) = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
            Ok(Matrix::from_fn(co, ci * h * w, |o, flat| {
                let i = flat / (h * w);
                let hh = (flat / w) % h;
                let ww = flat % w;
                t.data[((i * co + o) * h + hh) * w + ww]
            }))
        }
        TensorKind::Other | TensorKind::Vector => Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "a kind with a matrix view".into(),
            got: t.kind.label().into(),
        }),
    }
}

/// Center spatial slice of a conv kernel: `c_out x c_in` at
/// `(floor(h/2), floor(w/2))`.
pub fn view_conv_center(t: &ParamTensor) -> Result<Matrix> {
    if t.kind != TensorKind::Conv {
        return Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "conv".into(),
            got: t.kind.label().into(),
        });
    }
    let (co, ci, h, w) = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
    let (hc, wc) = (h / 2, w / 2);
    Ok(Matrix::from_fn(co, ci, |o, i| {
        t.data[((o * ci + i) * h + hc) * w + wc]
    }))
}

/// One gate block of a stacked LSTM weight: `H x D`.
pub fn view_lstm_gate(t: &ParamTensor, gate: LstmGate) -> Result<Matrix> {
    if t.kind != TensorKind::LstmStack {
        return Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "lstm_stack".into(),
            got: t.kind.label().into(),
        });
    }
    let h = t.dims[0] / 4;
    let d = t.dims[1];
    let start = gate.index() * h * d;
    Matrix::new(h, d, t.data[start..start + h * d].to_vec())
}

/// One head's row band inside one block of a fused QKV weight:
/// `(d / head_count) x d`.
pub fn view_qkv_head(
    t: &ParamTensor,
    block: QkvBlock,
    head: usize,
    head_count: usize,
) -> Result<Matrix> {
    if t.kind != TensorKind::FusedQkv {
        return Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "fused_qkv".into(),
            got: t.kind.label().into(),
        });
    }
    let d = t.dims[1];
    if head_count == 0 || d % head_count != 0 {
        return Err(Error::InvalidArgument {
            context: format!(
                "tensor '{}': head_count {head_count} does not divide model dim {d}",
                t.name
            ),
        });
    }
    if head >= head_count {
        return Err(Error::InvalidArgument {
            context: format!("tensor '{}': head {head} out of {head_count}", t.name),
        });
    }
    let dh = d / head_count;
    let start = (block.index() * d + head * dh) * d;
    Matrix::new(dh, d, t.data[start..start + dh * d].to_vec())
}

/// Column band of a linear tensor covering one upstream head's rows of the
/// input: `out x (in / head_count)`.
pub fn view_input_band(t: &ParamTensor, head: usize, head_count: usize) -> Result<Matrix> {
    if t.kind != TensorKind::Linear {
        return Err(Error::KindMismatch {
            name: t.name.clone(),
            expected: "linear".into(),
            got: t.kind.label().into(),
        });
    }
    let (out, inp) = (t.dims[0], t.dims[1]);
    if head_count == 0 || inp % head_count != 0 {
        return Err(Error::InvalidArgument {
            context: format!(
                "tensor '{}': head_count {head_count} does not divide input dim {inp}",
                t.name
            ),
        });
    }
    if head >= head_count {
        return Err(Error::InvalidArgument {
            context: format!("tensor '{}': head {head} out of {head_count}", t.name),
        });
    }
    let dh = inp / head_count;
    Ok(Matrix::from_fn(out, dh, |o, i| {
        t.data[o * inp + head * dh + i]
    }))
}

pub fn apply_view(t: &ParamTensor, sel: &ViewSelector) -> Result<Matrix> {
    let base = match sel.view {
        BaseView::Full => view_matrix(t)?,
        BaseView::ConvCenter => view_conv_center(t)?,
        BaseView::LstmGate { gate } => view_lstm_gate(t, gate)?,
        BaseView::QkvHead {
            block,
            head,
            head_count,
        } => view_qkv_head(t, block, head, head_count)?,
        BaseView::InputBand { head, head_count } => view_input_band(t, head, head_count)?,
    };
    Ok(if sel.transposed {
        base.transpose()
    } else {
        base
    })
}

/// One side of an alignment pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    pub tensor: String,
    pub view: ViewSelector,
}

/// A pair of views whose singular bases get compared. When `head_count` is
/// set, the head index inside the selectors is a template and the pair is
/// evaluated once per head, averaging the resulting alignment matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub name: String,
    pub upstream: TensorRef,
    pub downstream: TensorRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_count: Option<usize>,
}

impl AlignmentPair {
    pub fn plain(name: &str, up: &str, up_view: ViewSelector, down: &str, down_view: ViewSelector) -> Self {
        AlignmentPair {
            name: name.to_string(),
            upstream: TensorRef {
                tensor: up.to_string(),
                view: up_view,
            },
            downstream: TensorRef {
                tensor: down.to_string(),
                view: down_view,
            },
            head_count: None,
        }
    }

    /// Concrete (upstream, downstream) selector instances, one per head.
    pub fn instances(&self) -> Vec<(ViewSelector, ViewSelector)> {
        match self.head_count {
            None => vec![(self.upstream.view, self.downstream.view)],
            Some(hc) => (0..hc)
                .map(|h| {
                    (
                        self.upstream.view.with_head(h),
                        self.downstream.view.with_head(h),
                    )
                })
                .collect(),
        }
    }
}

/// Shape of a selector's view given the tensor's meta: (rows, cols).
fn view_shape(meta: &TensorMeta, sel: &ViewSelector) -> Option<(usize, usize)> {
    let d = &meta.dims;
    let base = match sel.view {
        BaseView::Full => match meta.kind {
            TensorKind::Linear | TensorKind::LstmStack | TensorKind::FusedQkv => (d[0], d[1]),
            TensorKind::Conv => (d[0], d[1] * d[2] * d[3]),
            TensorKind::ConvTranspose => (d[1], d[0] * d[2] * d[3]),
            _ => return None,
        },
        BaseView::ConvCenter => {
            if meta.kind != TensorKind::Conv {
                return None;
            }
            (d[0], d[1])
        }
        BaseView::LstmGate { .. } => {
            if meta.kind != TensorKind::LstmStack {
                return None;
            }
            (d[0] / 4, d[1])
        }
        BaseView::QkvHead { head_count, .. } => {
            if meta.kind != TensorKind::FusedQkv || head_count == 0 || d[1] % head_count != 0 {
                return None;
            }
            (d[1] / head_count, d[1])
        }
        BaseView::InputBand { head_count, .. } => {
            if meta.kind != TensorKind::Linear || head_count == 0 || d[1] % head_count != 0 {
                return None;
            }
            (d[0], d[1] / head_count)
        }
    };
    Some(if sel.transposed {
        (base.1, base.0)
    } else {
        base
    })
}

/// Alignment pairs implied by the model structure:
///
/// * consecutive analyzable tensors, upstream full (or cell gate for LSTM)
///   against downstream full (or center slice when conv follows conv, cell
///   gate for LSTM);
/// * Q-K per head within each fused QKV tensor;
/// * V-O per head when a linear output projection follows a fused QKV (the
///   chain then continues from the projection, with no extra full pair).
///
/// Candidate links whose inner dimensions do not meet are dropped.
pub fn default_pairs(metas: &[TensorMeta]) -> Vec<AlignmentPair> {
    let chain: Vec<&TensorMeta> = metas.iter().filter(|m| m.kind.analyzable()).collect();
    let mut pairs = Vec::new();
    let mut prev: Option<&TensorMeta> = None;
    let mut i = 0;
    while i < chain.len() {
        let cur = chain[i];
        if let Some(p) = prev {
            if let Some(pair) = link_pair(p, cur) {
                pairs.push(pair);
            }
        }
        if cur.kind == TensorKind::FusedQkv {
            let hc = cur.head_count.unwrap_or(1);
            let d = cur.dims[1];
            if hc > 0 && d % hc == 0 {
                pairs.push(AlignmentPair {
                    name: format!("{}.q<->{}.k", cur.name, cur.name),
                    upstream: TensorRef {
                        tensor: cur.name.clone(),
                        view: ViewSelector {
                            view: BaseView::QkvHead {
                                block: QkvBlock::Q,
                                head: 0,
                                head_count: hc,
                            },
                            transposed: false,
                        },
                    },
                    downstream: TensorRef {
                        tensor: cur.name.clone(),
                        view: ViewSelector {
                            view: BaseView::QkvHead {
                                block: QkvBlock::K,
                                head: 0,
                                head_count: hc,
                            },
                            transposed: true,
                        },
                    },
                    head_count: Some(hc),
                });
                // A linear projection of matching width right after the QKV
                // block is its output side; pair V against it per head.
                if let Some(&next) = chain.get(i + 1) {
                    if next.kind == TensorKind::Linear && next.dims[1] == d && next.dims[1] % hc == 0
                    {
                        pairs.push(AlignmentPair {
                            name: format!("{}.v<->{}", cur.name, next.name),
                            upstream: TensorRef {
                                tensor: cur.name.clone(),
                                view: ViewSelector {
                                    view: BaseView::QkvHead {
                                        block: QkvBlock::V,
                                        head: 0,
                                        head_count: hc,
                                    },
                                    transposed: false,
                                },
                            },
                            downstream: TensorRef {
                                tensor: next.name.clone(),
                                view: ViewSelector {
                                    view: BaseView::InputBand {
                                        head: 0,
                                        head_count: hc,
                                    },
                                    transposed: false,
                                },
                            },
                            head_count: Some(hc),
                        });
                        prev = Some(next);
                        i += 2;
                        continue;
                    }
                }
            }
            prev = None;
            i += 1;
            continue;
        }
        prev = Some(cur);
        i += 1;
    }
    pairs
}

/// Generic consecutive-tensor pair, or None when the dimensions disagree.
fn link_pair(up: &TensorMeta, down: &TensorMeta) -> Option<AlignmentPair> {
    let up_sel = ViewSelector {
        view: match up.kind {
            TensorKind::LstmStack => BaseView::LstmGate {
                gate: LstmGate::Cell,
            },
            _ => BaseView::Full,
        },
        transposed: false,
    };
    let down_sel = ViewSelector {
        view: match down.kind {
            TensorKind::Conv
                if matches!(up.kind, TensorKind::Conv | TensorKind::ConvTranspose) =>
            {
                BaseView::ConvCenter
            }
            TensorKind::LstmStack => BaseView::LstmGate {
                gate: LstmGate::Cell,
            },
            _ => BaseView::Full,
        },
        transposed: false,
    };
    let (u_rows, _) = view_shape(up, &up_sel)?;
    let (_, d_cols) = view_shape(down, &down_sel)?;
    if u_rows != d_cols {
        return None;
    }
    Some(AlignmentPair::plain(
        &format!("{}->{}", up.name, down.name),
        &up.name,
        up_sel,
        &down.name,
        down_sel,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(name: &str, kind: TensorKind, dims: Vec<usize>) -> ParamTensor {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|i| i as f64).collect();
        ParamTensor::new(name, kind, dims, data).unwrap()
    }

    #[test]
    fn arity_rules_enforced() {
        assert!(ParamTensor::new("a", TensorKind::Linear, vec![2, 3, 4], vec![0.0; 24]).is_err());
        assert!(ParamTensor::new("a", TensorKind::Conv, vec![2, 3], vec![0.0; 6]).is_err());
        assert!(ParamTensor::new("a", TensorKind::LstmStack, vec![10, 3], vec![0.0; 30]).is_err());
        assert!(ParamTensor::new("a", TensorKind::FusedQkv, vec![10, 3], vec![0.0; 30]).is_err());
        assert!(ParamTensor::new("a", TensorKind::Vector, vec![2, 2], vec![0.0; 4]).is_err());
        assert!(ParamTensor::new("a", TensorKind::Linear, vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn linear_view_is_identity_layout() {
        let t = labeled("w", TensorKind::Linear, vec![3, 4]);
        let m = view_matrix(&t).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 4));
        assert_eq!(m.get(2, 1), 9.0);
    }

    #[test]
    fn conv_view_flattens_trailing_dims() {
        let t = labeled("c", TensorKind::Conv, vec![8, 4, 3, 3]);
        let m = view_matrix(&t).unwrap();
        assert_eq!((m.rows(), m.cols()), (8, 36));
        // Row o is the contiguous block of 36 kernel entries.
        assert_eq!(m.get(2, 5), (2 * 36 + 5) as f64);
    }

    #[test]
    fn conv_transpose_view_swaps_leading_dims() {
        let t = labeled("ct", TensorKind::ConvTranspose, vec![4, 8, 3, 3]);
        let m = view_matrix(&t).unwrap();
        assert_eq!((m.rows(), m.cols()), (8, 36));
        // Entry (o, (i, hh, ww)) must read tensor[i][o][hh][ww].
        for o in 0..8 {
            for i in 0..4 {
                for hh in 0..3 {
                    for ww in 0..3 {
                        let got = m.get(o, (i * 3 + hh) * 3 + ww);
                        let want = (((i * 8 + o) * 3 + hh) * 3 + ww) as f64;
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_center_slice() {
        let t = labeled("c", TensorKind::Conv, vec![8, 4, 3, 3]);
        let m = view_conv_center(&t).unwrap();
        assert_eq!((m.rows(), m.cols()), (8, 4));
        for o in 0..8 {
            for i in 0..4 {
                assert_eq!(m.get(o, i), (((o * 4 + i) * 3 + 1) * 3 + 1) as f64);
            }
        }
    }

    #[test]
    fn conv_center_even_kernel_floors() {
        let t = labeled("c", TensorKind::Conv, vec![2, 3, 2, 2]);
        let m = view_conv_center(&t).unwrap();
        // floor(2/2) = 1 in both spatial dims.
        assert_eq!(m.get(0, 0), (((0 * 3) * 2 + 1) * 2 + 1) as f64);
        assert_eq!(m.get(1, 2), (((1 * 3 + 2) * 2 + 1) * 2 + 1) as f64);
    }

    #[test]
    fn lstm_gate_blocks() {
        let t = labeled("l", TensorKind::LstmStack, vec![16, 5]);
        let cell = view_lstm_gate(&t, LstmGate::Cell).unwrap();
        assert_eq!((cell.rows(), cell.cols()), (4, 5));
        // Cell candidate is the third block: rows 8..12 of the stack.
        assert_eq!(cell.get(0, 0), 40.0);
        let mut stacked = Vec::new();
        for g in [LstmGate::Input, LstmGate::Forget, LstmGate::Cell, LstmGate::Output] {
            stacked.extend_from_slice(view_lstm_gate(&t, g).unwrap().data());
        }
        assert_eq!(stacked, t.data);
    }

    #[test]
    fn qkv_head_band() {
        let t = labeled("qkv", TensorKind::FusedQkv, vec![12, 4]);
        let m = view_qkv_head(&t, QkvBlock::K, 1, 2).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
        // K block starts at row 4; head 1 of 2 covers rows 6..8.
        assert_eq!(m.get(0, 0), 24.0);
        assert!(view_qkv_head(&t, QkvBlock::Q, 0, 3).is_err());
        assert!(view_qkv_head(&t, QkvBlock::Q, 2, 2).is_err());
    }

    #[test]
    fn input_band_selects_columns() {
        let t = labeled("o", TensorKind::Linear, vec![3, 4]);
        let m = view_input_band(&t, 1, 2).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(2, 1), 11.0);
    }

    #[test]
    fn views_reject_wrong_kinds() {
        let v = labeled("b", TensorKind::Vector, vec![7]);
        assert!(view_matrix(&v).is_err());
        let lin = labeled("w", TensorKind::Linear, vec![3, 4]);
        assert!(view_conv_center(&lin).is_err());
        assert!(view_lstm_gate(&lin, LstmGate::Input).is_err());
        assert!(view_qkv_head(&lin, QkvBlock::Q, 0, 1).is_err());
    }

    #[test]
    fn transposed_selector_swaps_shape() {
        let t = labeled("w", TensorKind::Linear, vec![3, 4]);
        let m = apply_view(
            &t,
            &ViewSelector {
                view: BaseView::Full,
                transposed: true,
            },
        )
        .unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 3));
        assert_eq!(m.get(1, 2), 9.0);
    }

    fn meta(name: &str, kind: TensorKind, dims: Vec<usize>) -> TensorMeta {
        TensorMeta {
            name: name.into(),
            kind,
            dims,
            head_count: None,
        }
    }

    #[test]
    fn mlp_chain_pairs() {
        let metas = vec![
            meta("w1", TensorKind::Linear, vec![8, 4]),
            meta("b1", TensorKind::Vector, vec![8]),
            meta("w2", TensorKind::Linear, vec![8, 8]),
            meta("w3", TensorKind::Linear, vec![3, 8]),
        ];
        let pairs = default_pairs(&metas);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].name, "w1->w2");
        assert_eq!(pairs[1].name, "w2->w3");
        assert_eq!(pairs[0].upstream.view, ViewSelector::full());
        assert_eq!(pairs[0].downstream.view, ViewSelector::full());
    }

    #[test]
    fn conv_stack_uses_center_downstream() {
        let metas = vec![
            meta("c1", TensorKind::Conv, vec![8, 3, 3, 3]),
            meta("c2", TensorKind::Conv, vec![16, 8, 3, 3]),
            meta("c3", TensorKind::Conv, vec![16, 16, 3, 3]),
            meta("c4", TensorKind::Conv, vec![32, 16, 3, 3]),
        ];
        let pairs = default_pairs(&metas);
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_eq!(p.downstream.view.view, BaseView::ConvCenter);
            assert_eq!(p.upstream.view.view, BaseView::Full);
        }
    }

    #[test]
    fn attention_block_pairs() {
        let mut qkv = meta("attn", TensorKind::FusedQkv, vec![24, 8]);
        qkv.head_count = Some(2);
        let metas = vec![
            meta("embed", TensorKind::Linear, vec![8, 20]),
            qkv,
            meta("proj", TensorKind::Linear, vec![8, 8]),
            meta("ff1", TensorKind::Linear, vec![32, 8]),
            meta("ff2", TensorKind::Linear, vec![8, 32]),
        ];
        let pairs = default_pairs(&metas);
        let names: Vec<&str> = pairs.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "embed->attn",
                "attn.q<->attn.k",
                "attn.v<->proj",
                "proj->ff1",
                "ff1->ff2",
            ]
        );
        let qk = &pairs[1];
        assert_eq!(qk.head_count, Some(2));
        assert_eq!(qk.instances().len(), 2);
        assert!(qk.downstream.view.transposed);
        // Head substitution reaches both sides.
        let (u1, d1) = qk.instances()[1];
        match (u1.view, d1.view) {
            (
                BaseView::QkvHead { head: hu, .. },
                BaseView::QkvHead { head: hd, .. },
            ) => {
                assert_eq!((hu, hd), (1, 1));
            }
            other => panic!("unexpected views {other:?}"),
        }
    }

    #[test]
    fn lstm_chain_uses_cell_gate() {
        let metas = vec![
            meta("embed", TensorKind::Linear, vec![12, 30]),
            meta("rnn", TensorKind::LstmStack, vec![48, 12]),
            meta("head", TensorKind::Linear, vec![5, 12]),
        ];
        let pairs = default_pairs(&metas);
        assert_eq!(pairs.len(), 2);
        assert_eq!(
            pairs[0].downstream.view.view,
            BaseView::LstmGate {
                gate: LstmGate::Cell
            }
        );
        assert_eq!(
            pairs[1].upstream.view.view,
            BaseView::LstmGate {
                gate: LstmGate::Cell
            }
        );
    }

    #[test]
    fn mismatched_links_are_dropped() {
        let metas = vec![
            meta("w1", TensorKind::Linear, vec![8, 4]),
            meta("w2", TensorKind::Linear, vec![3, 9]),
        ];
        assert!(default_pairs(&metas).is_empty());
    }
}
