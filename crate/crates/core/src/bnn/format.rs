//! `MOB1` model files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MOB1"
//! 4       2           version (1)
//! 6       1           parameter kind: 0 = quantized, 1 = real batch norm
//! 7       1           ring bits m (0 when unspecified, real models only)
//! 8       8           q (0 for real models)
//! 16      4           layer count L
//! 20      4 (L + 1)   sizes n_0 .. n_L
//! then per layer j with d = n_{j+1} outputs and k = n_j inputs:
//!         ceil(d k / 8)   sign bits, row-major, LSB first, 1 = +1
//!   kind 0: d i64 s', then d i64 t'
//!   kind 1: d f64 γ, d f64 β, d f64 μ, d f64 σ², then one f64 ε
//! ```
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::bits::Bits;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::ring::RingModulus;

use super::model::{
    FloatBnnModel, FloatLayer, QuantLayer, QuantizedBnParams, QuantizedBnnModel, RealBnParams,
    SignMatrix,
};

pub const MODEL_MAGIC: &[u8; 4] = b"MOB1";
pub const MODEL_VERSION: u16 = 1;
const KIND_QUANTIZED: u8 = 0;
const KIND_REAL: u8 = 1;
const MAX_LAYERS: usize = 4096;
const MAX_WIDTH: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Quantized(QuantizedBnnModel),
    Real(FloatBnnModel),
}

fn write_header(w: &mut ByteWriter, kind: u8, bits: u8, q: u64, sizes: &[usize]) {
    w.put_bytes(MODEL_MAGIC)
        .put_u16(MODEL_VERSION)
        .put_u8(kind)
        .put_u8(bits)
        .put_u64(q)
        .put_u32((sizes.len() - 1) as u32);
    for &s in sizes {
        w.put_u32(s as u32);
    }
}

fn write_signs(w: &mut ByteWriter, m: &SignMatrix) {
    let bits: Bits = m.data().iter().map(|&v| v > 0).collect();
    w.put_bytes(&bits.to_bytes());
}

fn read_signs(r: &mut ByteReader<'_>, rows: usize, cols: usize) -> Result<SignMatrix> {
    let len = rows * cols;
    let bits = Bits::from_bytes(r.take(len.div_ceil(8))?, len)?;
    let data = bits.iter().map(|b| if b { 1 } else { -1 }).collect();
    SignMatrix::new(rows, cols, data)
}

pub fn quantized_to_bytes(model: &QuantizedBnnModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_header(&mut w, KIND_QUANTIZED, model.modulus().bits() as u8, model.q(), &model.sizes());
    for layer in model.layers() {
        write_signs(&mut w, &layer.weights);
        for &v in layer.bn.scale.iter().chain(&layer.bn.shift) {
            w.put_i64(v);
        }
    }
    w.into_bytes()
}

pub fn real_to_bytes(model: &FloatBnnModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_header(&mut w, KIND_REAL, 0, 0, &model.sizes());
    for layer in model.layers() {
        write_signs(&mut w, &layer.weights);
        let bn = &layer.bn;
        for v in bn.gamma.iter().chain(&bn.beta).chain(&bn.mean).chain(&bn.var) {
            w.put_f64(*v);
        }
        w.put_f64(bn.eps);
    }
    w.into_bytes()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a MOB1 model file".into()));
    }
    let version = r.get_u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = r.get_u8()?;
    let bits = r.get_u8()?;
    let q = r.get_u64()?;
    let layers = r.get_u32()? as usize;
    if layers == 0 || layers > MAX_LAYERS {
        return Err(Error::Format(format!("implausible layer count {layers}")));
    }
    let sizes = (0..=layers)
        .map(|_| {
            let s = r.get_u32()? as usize;
            if s == 0 || s > MAX_WIDTH {
                return Err(Error::Format(format!("implausible layer width {s}")));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let read_f64s = |r: &mut ByteReader<'_>, n: usize| (0..n).map(|_| r.get_f64()).collect::<Result<Vec<_>>>();

    let file = match kind {
        KIND_QUANTIZED => {
            let modulus = RingModulus::new(bits as u32).map_err(|e| Error::Format(e.to_string()))?;
            let mut out = Vec::with_capacity(layers);
            for j in 0..layers {
                let (d, k) = (sizes[j + 1], sizes[j]);
                let weights = read_signs(&mut r, d, k)?;
                let scale = (0..d).map(|_| r.get_i64()).collect::<Result<Vec<_>>>()?;
                let shift = (0..d).map(|_| r.get_i64()).collect::<Result<Vec<_>>>()?;
                out.push(QuantLayer {
                    weights,
                    bn: QuantizedBnParams { scale, shift },
                });
            }
            ModelFile::Quantized(QuantizedBnnModel::new(out, q, modulus)?)
        }
        KIND_REAL => {
            let mut out = Vec::with_capacity(layers);
            for j in 0..layers {
                let (d, k) = (sizes[j + 1], sizes[j]);
                let weights = read_signs(&mut r, d, k)?;
                let gamma = read_f64s(&mut r, d)?;
                let beta = read_f64s(&mut r, d)?;
                let mean = read_f64s(&mut r, d)?;
                let var = read_f64s(&mut r, d)?;
                let eps = r.get_f64()?;
                out.push(FloatLayer {
                    weights,
                    bn: RealBnParams {
                        gamma,
                        beta,
                        mean,
                        var,
                        eps,
                    },
                });
            }
            ModelFile::Real(FloatBnnModel::new(out)?)
        }
        other => return Err(Error::Format(format!("unknown parameter kind {other}"))),
    };
    r.finish()?;
    Ok(file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    model_from_bytes(&fs::read(path)?)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedBnnModel> {
    match load_model(path)? {
        ModelFile::Quantized(m) => Ok(m),
        ModelFile::Real(_) => Err(Error::Format(
            "model has real batch-norm parameters; quantize it first".into(),
        )),
    }
}

pub fn save_quantized(path: impl AsRef<Path>, model: &QuantizedBnnModel) -> Result<()> {
    fs::write(path, quantized_to_bytes(model))?;
    Ok(())
}

pub fn save_real(path: impl AsRef<Path>, model: &FloatBnnModel) -> Result<()> {
    fs::write(path, real_to_bytes(model))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_quantized() -> QuantizedBnnModel {
        let layers = vec![
            QuantLayer {
                weights: SignMatrix::from_fn(3, 5, |i, j| (i * 7 + j * 3) % 4 < 2),
                bn: QuantizedBnParams { scale: vec![1, -2, i64::MAX], shift: vec![i64::MIN, 0, 9] },
            },
            QuantLayer {
                weights: SignMatrix::from_fn(2, 3, |i, j| i != j),
                bn: QuantizedBnParams { scale: vec![4, 5], shift: vec![-6, 7] },
            },
        ];
        QuantizedBnnModel::new(layers, 10_000, RingModulus::M32).unwrap()
    }

    #[test]
    fn quantized_round_trip() {
        let m = sample_quantized();
        let bytes = quantized_to_bytes(&m);
        assert_eq!(&bytes[..4], b"MOB1");
        assert_eq!(model_from_bytes(&bytes).unwrap(), ModelFile::Quantized(m));
    }

    #[test]
    fn real_round_trip_is_bit_exact() {
        let layer = FloatLayer {
            weights: SignMatrix::from_fn(2, 9, |i, j| (i + j) % 3 == 0),
            bn: RealBnParams {
                gamma: vec![0.1, -3.25],
                beta: vec![f64::MIN_POSITIVE, 1e-300],
                mean: vec![12.5, -0.0],
                var: vec![1.0 / 3.0, 7.0],
                eps: 1e-5,
            },
        };
        let m = FloatBnnModel::new(vec![layer]).unwrap();
        let bytes = real_to_bytes(&m);
        match model_from_bytes(&bytes).unwrap() {
            ModelFile::Real(back) => {
                assert_eq!(back, m);
                assert_eq!(back.layers()[0].bn.mean[1].to_bits(), (-0.0f64).to_bits());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_files_are_rejected() {
        let bytes = quantized_to_bytes(&sample_quantized());
        assert!(model_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(model_from_bytes(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(model_from_bytes(&bad_magic).is_err());
        let mut bad_bits = bytes.clone();
        bad_bits[7] = 12;
        assert!(model_from_bytes(&bad_bits).is_err());
        let mut bad_kind = bytes;
        bad_kind[6] = 9;
        assert!(model_from_bytes(&bad_kind).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mob");
        let m = sample_quantized();
        save_quantized(&path, &m).unwrap();
        assert_eq!(load_quantized(&path).unwrap(), m);
        assert!(matches!(load_quantized(dir.path().join("missing")), Err(Error::Io(_))));
    }
}
