//! Binary checkpoint archives.
//!
//! One archive holds one `ParamSet`. The layout is little-endian
//! throughout:
//!
//! ```text
//! magic   4 bytes  "SPDY"
//! version u32      1
//! count   u32      number of tensors
//! then per tensor:
//!   name_len u32
//!   name     UTF-8 bytes
//!   kind     u8    0 linear, 1 conv, 2 conv_transpose, 3 lstm_stack,
//!                  4 fused_qkv, 5 other, 6 vector
//!   dtype    u8    0 f32, 1 f64
//!   ndim     u8
//!   dims     ndim x u64
//!   payload  product(dims) entries, IEEE-754, row-major
//! ```
//!
//! f32 payloads are upcast to f64 on load; the original precision stays
//! visible as the tensor's `stored_dtype`. Parse errors report the byte
//! offset of the field that failed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::views::{Dtype, ParamSet, ParamTensor, TensorKind};

pub const MAGIC: [u8; 4] = *b"SPDY";
pub const FORMAT_VERSION: u32 = 1;

fn kind_code(kind: TensorKind) -> u8 {
    match kind {
        TensorKind::Linear => 0,
        TensorKind::Conv => 1,
        TensorKind::ConvTranspose => 2,
        TensorKind::LstmStack => 3,
        TensorKind::FusedQkv => 4,
        TensorKind::Other => 5,
        TensorKind::Vector => 6,
    }
}

fn kind_from_code(code: u8) -> Option<TensorKind> {
    Some(match code {
        0 => TensorKind::Linear,
        1 => TensorKind::Conv,
        2 => TensorKind::ConvTranspose,
        3 => TensorKind::LstmStack,
        4 => TensorKind::FusedQkv,
        5 => TensorKind::Other,
        6 => TensorKind::Vector,
        _ => return None,
    })
}

fn dtype_code(dtype: Dtype) -> u8 {
    match dtype {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

/// Serialize a parameter set to archive bytes. Each tensor's payload is
/// written at its `stored_dtype`.
pub fn write_archive(params: &ParamSet) -> Result<Vec<u8>> {
    for (i, t) in params.tensors.iter().enumerate() {
        if params.tensors[..i].iter().any(|p| p.name == t.name) {
            return Err(Error::InvalidArgument {
                context: format!("duplicate tensor name '{}'", t.name),
            });
        }
        if t.name.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument {
                context: format!("tensor name of {} bytes", t.name.len()),
            });
        }
        if t.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument {
                context: format!("tensor '{}' has {} dims", t.name, t.dims.len()),
            });
        }
    }
    if params.tensors.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument {
            context: format!("{} tensors", params.tensors.len()),
        });
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(kind_code(t.kind));
        out.push(dtype_code(t.stored_dtype));
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t.stored_dtype {
            Dtype::F32 => {
                for &x in &t.data {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &x in &t.data {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let start = self.pos;
        let end = start.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                self.pos = end;
                Ok(&self.bytes[start..end])
            }
            None => Err(Error::Archive {
                offset: start as u64,
                detail: format!(
                    "unexpected end of file reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - start
                ),
            }),
        }
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parse archive bytes back into a parameter set.
pub fn read_archive(bytes: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Archive {
            offset: 0,
            detail: format!("bad magic {magic:02x?}, expected \"SPDY\""),
        });
    }
    let version_at = c.pos as u64;
    let version = c.u32_le("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Archive {
            offset: version_at,
            detail: format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let count = c.u32_le("tensor count")? as usize;
    let mut tensors: Vec<ParamTensor> = Vec::new();
    for _ in 0..count {
        let tensor_at = c.pos as u64;
        let name_len = c.u32_le("name length")? as usize;
        let name_at = c.pos as u64;
        let name_bytes = c.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::Archive {
                offset: name_at,
                detail: format!("tensor name is not UTF-8: {e}"),
            })?
            .to_string();
        if tensors.iter().any(|t| t.name == name) {
            return Err(Error::Archive {
                offset: name_at,
                detail: format!("duplicate tensor name '{name}'"),
            });
        }
        let kind_at = c.pos as u64;
        let kind_byte = c.u8("tensor kind")?;
        let kind = kind_from_code(kind_byte).ok_or_else(|| Error::Archive {
            offset: kind_at,
            detail: format!("unknown tensor kind code {kind_byte}"),
        })?;
        let dtype_at = c.pos as u64;
        let dtype_byte = c.u8("dtype")?;
        let dtype = match dtype_byte {
            0 => Dtype::F32,
            1 => Dtype::F64,
            _ => {
                return Err(Error::Archive {
                    offset: dtype_at,
                    detail: format!("unknown dtype code {dtype_byte}"),
                })
            }
        };
        let ndim = c.u8("ndim")? as usize;
        let dims_at = c.pos as u64;
        let mut dims = Vec::with_capacity(ndim);
        let mut count_entries: usize = 1;
        for _ in 0..ndim {
            let d = c.u64_le("dimension")?;
            let d: usize = d.try_into().map_err(|_| Error::Archive {
                offset: dims_at,
                detail: format!("dimension {d} out of range"),
            })?;
            count_entries = count_entries.checked_mul(d).ok_or(Error::Archive {
                offset: dims_at,
                detail: "tensor size overflows".into(),
            })?;
            dims.push(d);
        }
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        let payload_at = c.pos as u64;
        let payload_len = count_entries.checked_mul(width).ok_or(Error::Archive {
            offset: payload_at,
            detail: "payload size overflows".into(),
        })?;
        let payload = c.take(payload_len, "payload")?;
        let data: Vec<f64> = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        let mut tensor = ParamTensor::new(&name, kind, dims, data).map_err(|e| Error::Archive {
            offset: tensor_at,
            detail: format!("invalid tensor record: {e}"),
        })?;
        tensor.stored_dtype = dtype;
        tensors.push(tensor);
    }
    if c.pos != bytes.len() {
        return Err(Error::Archive {
            offset: c.pos as u64,
            detail: format!("{} trailing bytes after last tensor", bytes.len() - c.pos),
        });
    }
    Ok(ParamSet { tensors })
}

pub fn save_archive(path: &Path, params: &ParamSet) -> Result<()> {
    let bytes = write_archive(params)?;
    std::fs::write(path, bytes).map_err(Error::Io)
}

pub fn load_archive(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(Error::Io)?;
    read_archive(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> ParamSet {
        ParamSet {
            tensors: vec![
                ParamTensor::new(
                    "w1",
                    TensorKind::Linear,
                    vec![2, 3],
                    vec![1.0, -2.5, 3.25, 0.0, 1e-30, -7.125],
                )
                .unwrap(),
                ParamTensor::new(
                    "conv.up",
                    TensorKind::ConvTranspose,
                    vec![2, 2, 1, 1],
                    vec![0.5, -0.5, 2.0, 4.0],
                )
                .unwrap(),
                ParamTensor::new(
                    "rnn",
                    TensorKind::LstmStack,
                    vec![4, 2],
                    (0..8).map(|i| i as f64 / 7.0).collect(),
                )
                .unwrap(),
                ParamTensor::new("bias", TensorKind::Vector, vec![3], vec![0.1, 0.2, 0.3]).unwrap(),
                ParamTensor::new("stats", TensorKind::Other, vec![1, 1, 2], vec![9.0, -9.0])
                    .unwrap(),
            ],
        }
    }

    #[test]
    fn empty_set_is_header_only() {
        let bytes = write_archive(&ParamSet::default()).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[0..4], b"SPDY");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        let back = read_archive(&bytes).unwrap();
        assert!(back.tensors.is_empty());
    }

    #[test]
    fn single_f64_tensor_byte_layout() {
        let params = ParamSet {
            tensors: vec![ParamTensor::new(
                "w",
                TensorKind::Linear,
                vec![2, 2],
                vec![1.0, 2.0, 3.0, 4.0],
            )
            .unwrap()],
        };
        let bytes = write_archive(&params).unwrap();
        // header 12 + (name_len 4 + name 1) + kind/dtype/ndim 3 + dims 16
        // + payload 32
        assert_eq!(bytes.len(), 68);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'w');
        assert_eq!(bytes[17], 0); // linear
        assert_eq!(bytes[18], 1); // f64
        assert_eq!(bytes[19], 2); // ndim
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[28..36].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[36..44].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[60..68].try_into().unwrap()), 4.0);
    }

    #[test]
    fn f64_round_trip_is_bitwise() {
        let params = sample_set();
        let back = read_archive(&write_archive(&params).unwrap()).unwrap();
        assert_eq!(back.tensors.len(), params.tensors.len());
        for (a, b) in params.tensors.iter().zip(back.tensors.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.dims, b.dims);
            assert_eq!(a.stored_dtype, b.stored_dtype);
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn f32_payload_upcasts_and_keeps_its_flag() {
        let params = sample_set().quantized(Dtype::F32);
        let bytes = write_archive(&params).unwrap();
        let f64_bytes = write_archive(&sample_set()).unwrap();
        assert!(bytes.len() < f64_bytes.len());
        let back = read_archive(&bytes).unwrap();
        for (a, b) in params.tensors.iter().zip(back.tensors.iter()) {
            assert_eq!(b.stored_dtype, Dtype::F32);
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                // Already rounded to f32 on the way in, so exact now.
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_sized_tensor_round_trips() {
        let params = ParamSet {
            tensors: vec![ParamTensor::new("w", TensorKind::Linear, vec![0, 3], vec![]).unwrap()],
        };
        let back = read_archive(&write_archive(&params).unwrap()).unwrap();
        assert_eq!(back.tensors[0].dims, vec![0, 3]);
        assert!(back.tensors[0].data.is_empty());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = write_archive(&sample_set()).unwrap();
        bytes[1] = b'X';
        match read_archive(&bytes) {
            Err(Error::Archive { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected archive error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_reports_offset_four() {
        let mut bytes = write_archive(&ParamSet::default()).unwrap();
        bytes[4] = 9;
        match read_archive(&bytes) {
            Err(Error::Archive { offset, detail }) => {
                assert_eq!(offset, 4);
                assert!(detail.contains("version"));
            }
            other => panic!("expected archive error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_code_reports_its_offset() {
        let mut bytes = write_archive(&ParamSet {
            tensors: vec![
                ParamTensor::new("w", TensorKind::Linear, vec![1, 1], vec![2.0]).unwrap(),
            ],
        })
        .unwrap();
        // kind byte sits right after header (12) + name_len (4) + name (1)
        bytes[17] = 7;
        match read_archive(&bytes) {
            Err(Error::Archive { offset, detail }) => {
                assert_eq!(offset, 17);
                assert!(detail.contains("kind"));
            }
            other => panic!("expected archive error, got {other:?}"),
        }
    }

    #[test]
    fn every_truncation_point_errors_with_an_offset_in_range() {
        let bytes = write_archive(&sample_set()).unwrap();
        for cut in 0..bytes.len() {
            match read_archive(&bytes[..cut]) {
                Err(Error::Archive { offset, .. }) => {
                    assert!(offset <= cut as u64, "offset {offset} past cut {cut}");
                }
                Ok(_) => panic!("truncation to {cut} bytes parsed"),
                Err(other) => panic!("unexpected error at cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = write_archive(&sample_set()).unwrap();
        let clean_len = bytes.len();
        bytes.push(0);
        match read_archive(&bytes) {
            Err(Error::Archive { offset, detail }) => {
                assert_eq!(offset, clean_len as u64);
                assert!(detail.contains("trailing"));
            }
            other => panic!("expected archive error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected_both_ways() {
        let t = ParamTensor::new("w", TensorKind::Linear, vec![1, 1], vec![2.0]).unwrap();
        let params = ParamSet {
            tensors: vec![t.clone(), t],
        };
        assert!(write_archive(&params).is_err());
        // Splice the same record twice by hand to hit the read-side check.
        let one = write_archive(&ParamSet {
            tensors: vec![ParamTensor::new("w", TensorKind::Linear, vec![1, 1], vec![2.0]).unwrap()],
        })
        .unwrap();
        let record = &one[12..];
        let mut forged = Vec::new();
        forged.extend_from_slice(b"SPDY");
        forged.extend_from_slice(&1u32.to_le_bytes());
        forged.extend_from_slice(&2u32.to_le_bytes());
        forged.extend_from_slice(record);
        forged.extend_from_slice(record);
        match read_archive(&forged) {
            Err(Error::Archive { detail, .. }) => assert!(detail.contains("duplicate")),
            other => panic!("expected archive error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_dims_fail_cleanly() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SPDY");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(b"w");
        bytes.push(0); // linear
        bytes.push(1); // f64
        bytes.push(2); // ndim
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_archive(&bytes), Err(Error::Archive { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step_000000.spdy");
        let params = sample_set();
        save_archive(&path, &params).unwrap();
        let back = load_archive(&path).unwrap();
        assert_eq!(params, back);
    }

    fn arb_tensor(idx: usize) -> impl Strategy<Value = ParamTensor> {
        (1usize..5, 1usize..5, proptest::bool::ANY).prop_flat_map(move |(rows, cols, wide)| {
            let n = rows * cols;
            (
                proptest::collection::vec(
                    prop_oneof![
                        -1e6f64..1e6,
                        Just(0.0),
                        Just(-0.0),
                        Just(f64::MIN_POSITIVE),
                    ],
                    n,
                ),
                Just(rows),
                Just(cols),
                Just(wide),
            )
                .prop_map(move |(data, rows, cols, f32_store)| {
                    let t = ParamTensor::new(
                        &format!("t{idx}"),
                        TensorKind::Linear,
                        vec![rows, cols],
                        data,
                    )
                    .unwrap();
                    if f32_store {
                        let q = ParamSet { tensors: vec![t] }.quantized(Dtype::F32);
                        q.tensors.into_iter().next().unwrap()
                    } else {
                        t
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn random_sets_round_trip_bitwise(
            t0 in arb_tensor(0),
            t1 in arb_tensor(1),
            t2 in arb_tensor(2),
        ) {
            let params = ParamSet { tensors: vec![t0, t1, t2] };
            let back = read_archive(&write_archive(&params).unwrap()).unwrap();
            prop_assert_eq!(params.tensors.len(), back.tensors.len());
            for (a, b) in params.tensors.iter().zip(back.tensors.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.dims, &b.dims);
                prop_assert_eq!(a.stored_dtype, b.stored_dtype);
                for (x, y) in a.data.iter().zip(b.data.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
