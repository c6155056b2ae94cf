use sha2::{Digest, Sha256};

use crate::codec::ByteWriter;
use crate::error::{Error, Result};
use crate::ring::RingModulus;

/// Public architecture metadata: layer sizes `n_0, …, n_L`, the scale
/// parameter `q` and the ring width. Servers hold this in the clear.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelMeta {
    pub sizes: Vec<usize>,
    pub q: u64,
    pub modulus: RingModulus,
}

impl ModelMeta {
    pub fn new(sizes: Vec<usize>, q: u64, modulus: RingModulus) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("a model needs at least an input and an output layer".into()));
        }
        if sizes.iter().any(|&s| s == 0 || s > u32::MAX as usize) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(ModelMeta { sizes, q, modulus })
    }

    /// Number of weight layers `L`.
    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_u8(self.modulus.bits() as u8).put_u64(self.q).put_u32(self.layer_count() as u32);
        for &s in &self.sizes {
            w.put_u32(s as u32);
        }
        w.into_bytes()
    }

    pub fn from_reader(r: &mut crate::codec::ByteReader<'_>) -> Result<Self> {
        let modulus = RingModulus::new(r.get_u8()? as u32).map_err(|e| Error::Format(e.to_string()))?;
        let q = r.get_u64()?;
        let layers = r.get_u32()? as usize;
        if layers == 0 || layers > 4096 {
            return Err(Error::Format(format!("implausible layer count {layers}")));
        }
        let sizes = (0..=layers).map(|_| r.get_u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        ModelMeta::new(sizes, q, modulus).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the serialized metadata; parties compare it during the handshake.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// A matrix with entries in `{-1, +1}`, row-major, `rows = d_out`, `cols = d_in`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!("{} entries for a {rows}x{cols} sign matrix", data.len())));
        }
        if let Some(bad) = data.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Contract(format!("weight {bad} is not ±1")));
        }
        Ok(SignMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..rows * cols)
            .map(|k| if f(k / cols, k % cols) { 1 } else { -1 })
            .collect();
        SignMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Learned batch-normalization statistics of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RealBnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl RealBnParams {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.gamma.len();
        if self.beta.len() != d || self.mean.len() != d || self.var.len() != d {
            return Err(Error::Shape("batch-norm parameter vectors differ in length".into()));
        }
        Ok(())
    }

    /// Evaluates `γ (x - μ) / sqrt(σ² + ε) + β` for node `i`.
    pub fn apply(&self, i: usize, x: f64) -> f64 {
        self.gamma[i] * (x - self.mean[i]) / (self.var[i] + self.eps).sqrt() + self.beta[i]
    }
}

/// Batch normalization folded into `s x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedBnParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Integer batch normalization `s' x + t'`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedBnParams {
    pub scale: Vec<i64>,
    pub shift: Vec<i64>,
}

impl QuantizedBnParams {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    pub fn max_abs_scale(&self) -> u128 {
        self.scale.iter().map(|v| v.unsigned_abs() as u128).max().unwrap_or(0)
    }

    pub fn max_abs_shift(&self) -> u128 {
        self.shift.iter().map(|v| v.unsigned_abs() as u128).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatLayer {
    pub weights: SignMatrix,
    pub bn: RealBnParams,
}

/// A trained model with real-valued batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatBnnModel {
    layers: Vec<FloatLayer>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantLayer {
    pub weights: SignMatrix,
    pub bn: QuantizedBnParams,
}

/// A model with integer batch normalization, ready for the secure pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedBnnModel {
    layers: Vec<QuantLayer>,
    q: u64,
    modulus: RingModulus,
}

fn check_chain<'a>(shapes: impl Iterator<Item = (&'a SignMatrix, usize)>) -> Result<Vec<usize>> {
    let mut sizes = Vec::new();
    for (j, (w, bn_len)) in shapes.enumerate() {
        if let Some(&prev) = sizes.last() {
            if w.cols() != prev {
                return Err(Error::Shape(format!(
                    "layer {j} takes {} inputs but the previous layer has {prev} outputs",
                    w.cols()
                )));
            }
        } else {
            sizes.push(w.cols());
        }
        if bn_len != w.rows() {
            return Err(Error::Shape(format!(
                "layer {j} has {} outputs but {bn_len} batch-norm nodes",
                w.rows()
            )));
        }
        sizes.push(w.rows());
    }
    if sizes.is_empty() {
        return Err(Error::Shape("a model needs at least one layer".into()));
    }
    Ok(sizes)
}

impl FloatBnnModel {
    pub fn new(layers: Vec<FloatLayer>) -> Result<Self> {
        for l in &layers {
            l.bn.check()?;
        }
        check_chain(layers.iter().map(|l| (&l.weights, l.bn.len())))?;
        Ok(FloatBnnModel { layers })
    }

    pub fn layers(&self) -> &[FloatLayer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.cols())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    /// Real-valued forward pass with sign activations; returns the output
    /// layer's batch-normalized scores.
    pub fn infer(&self, input: &[i64]) -> Result<Vec<f64>> {
        let mut a: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        for (j, layer) in self.layers.iter().enumerate() {
            let w = &layer.weights;
            if a.len() != w.cols() {
                return Err(Error::Shape(format!("layer {j} expects {} inputs, got {}", w.cols(), a.len())));
            }
            let scores: Vec<f64> = (0..w.rows())
                .map(|i| {
                    let c: f64 = w.row(i).iter().zip(&a).map(|(&wi, &x)| wi as f64 * x).sum();
                    layer.bn.apply(i, c)
                })
                .collect();
            a = if j + 1 < self.layers.len() {
                scores.iter().map(|&b| if b >= 0.0 { 1.0 } else { -1.0 }).collect()
            } else {
                scores
            };
        }
        Ok(a)
    }
}

impl QuantizedBnnModel {
    pub fn new(layers: Vec<QuantLayer>, q: u64, modulus: RingModulus) -> Result<Self> {
        for l in &layers {
            if l.bn.scale.len() != l.bn.shift.len() {
                return Err(Error::Shape("s' and t' differ in length".into()));
            }
        }
        check_chain(layers.iter().map(|l| (&l.weights, l.bn.len())))?;
        Ok(QuantizedBnnModel { layers, q, modulus })
    }

    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [QuantLayer] {
        &mut self.layers
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn with_modulus(mut self, modulus: RingModulus) -> Self {
        self.modulus = modulus;
        self
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.cols())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            sizes: self.sizes(),
            q: self.q,
            modulus: self.modulus,
        }
    }
}

/// `c = W a` in exact integers.
pub fn full_connection(a: &[i64], w: &SignMatrix) -> Result<Vec<i64>> {
    if a.len() != w.cols() {
        return Err(Error::Shape(format!("matrix has {} columns, vector has {} entries", w.cols(), a.len())));
    }
    (0..w.rows())
        .map(|i| {
            w.row(i).iter().zip(a).try_fold(0i64, |acc, (&wi, &x)| {
                let term = if wi > 0 { x } else { x.checked_neg().ok_or_else(|| overflow("negation"))? };
                acc.checked_add(term).ok_or_else(|| overflow("full connection"))
            })
        })
        .collect()
}

/// `b_i = s'_i c_i + t'_i`.
pub fn batch_norm(c: &[i64], bn: &QuantizedBnParams) -> Result<Vec<i64>> {
    if c.len() != bn.len() || bn.shift.len() != bn.len() {
        return Err(Error::Shape(format!("{} inputs for {} batch-norm nodes", c.len(), bn.len())));
    }
    c.iter()
        .zip(bn.scale.iter().zip(&bn.shift))
        .map(|(&x, (&s, &t))| {
            i64::try_from(s as i128 * x as i128 + t as i128).map_err(|_| overflow("batch normalization"))
        })
        .collect()
}

/// Elementwise sign with `sign(0) = +1`.
pub fn activation(b: &[i64]) -> Vec<i64> {
    b.iter().map(|&v| if v >= 0 { 1 } else { -1 }).collect()
}

fn overflow(what: &str) -> Error {
    Error::Overflow(format!("{what} exceeds 64-bit range"))
}

/// Intermediate values of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub connected: Vec<i64>,
    pub normalized: Vec<i64>,
    /// `None` for the output layer.
    pub activated: Option<Vec<i64>>,
}

/// Runs the layers, recording every intermediate vector.
pub fn infer_trace(model: &QuantizedBnnModel, input: &[i64]) -> Result<Vec<LayerTrace>> {
    let count = model.layers.len();
    let mut trace = Vec::with_capacity(count);
    let mut a = input.to_vec();
    for (j, layer) in model.layers.iter().enumerate() {
        let connected = full_connection(&a, &layer.weights)?;
        let normalized = batch_norm(&connected, &layer.bn)?;
        let activated = (j + 1 < count).then(|| activation(&normalized));
        if let Some(next) = &activated {
            a = next.clone();
        }
        trace.push(LayerTrace {
            connected,
            normalized,
            activated,
        });
    }
    Ok(trace)
}

/// Plaintext integer inference: (FC, BN, sign) for every hidden layer, then FC
/// and BN. The raw output vector is returned; no argmax is applied.
pub fn infer(model: &QuantizedBnnModel, input: &[i64]) -> Result<Vec<i64>> {
    let mut trace = infer_trace(model, input)?;
    Ok(trace.pop().expect("at least one layer").normalized)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qbn(scale: Vec<i64>, shift: Vec<i64>) -> QuantizedBnParams {
        QuantizedBnParams { scale, shift }
    }

    #[test]
    fn full_connection_examples() {
        let w = SignMatrix::new(2, 3, vec![1, -1, 1, -1, -1, 1]).unwrap();
        assert_eq!(full_connection(&[1, 1, 1], &w).unwrap(), vec![1, -1]);
        assert_eq!(full_connection(&[0, 0, 0], &w).unwrap(), vec![0, 0]);
        let ones = SignMatrix::from_fn(4, 784, |_, _| true);
        let out = full_connection(&vec![255; 784], &ones).unwrap();
        assert!(out.iter().all(|&v| v == 199_920));
        assert!(full_connection(&[1, 2], &w).is_err());
        assert!(SignMatrix::new(1, 2, vec![1, 0]).is_err());
    }

    #[test]
    fn batch_norm_examples() {
        assert_eq!(batch_norm(&[5], &qbn(vec![2], vec![3])).unwrap(), vec![13]);
        assert_eq!(batch_norm(&[-4, 9], &qbn(vec![1, 1], vec![0, 0])).unwrap(), vec![-4, 9]);
        assert!(batch_norm(&[1, 2], &qbn(vec![1], vec![0])).is_err());
        assert!(matches!(batch_norm(&[i64::MAX], &qbn(vec![2], vec![0])), Err(Error::Overflow(_))));
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activation(&[-7, 0, 3]), vec![-1, 1, 1]);
        assert_eq!(activation(&[-1, -5]), vec![-1, -1]);
        assert_eq!(activation(&[1, -1]), vec![1, -1]);
    }

    #[test]
    fn hand_traced_two_by_two_network() {
        // 2-2-2-2 network traced by hand:
        //   layer 1: c = (3 - 5, -3 + 5) = (-2, 2); b = (2*-2 + 1, 1*2 - 3) = (-3, -1); a = (-1, -1)
        //   layer 2: c = (-1 - 1, -1 + 1) = (-2, 0); b = (-2 + 0, 0 + 0) = (-2, 0);    a = (-1, 1)
        //   layer 3: c = (-1 + 1, 1 + 1) = (0, 2);   b = (3*0 + 1, 2*2 - 7) = (1, -3)
        let layers = vec![
            QuantLayer {
                weights: SignMatrix::new(2, 2, vec![1, -1, -1, 1]).unwrap(),
                bn: qbn(vec![2, 1], vec![1, -3]),
            },
            QuantLayer {
                weights: SignMatrix::new(2, 2, vec![1, 1, 1, -1]).unwrap(),
                bn: qbn(vec![1, 5], vec![0, 0]),
            },
            QuantLayer {
                weights: SignMatrix::new(2, 2, vec![1, 1, -1, 1]).unwrap(),
                bn: qbn(vec![3, 2], vec![1, -7]),
            },
        ];
        let model = QuantizedBnnModel::new(layers, 10, RingModulus::M16).unwrap();
        let trace = infer_trace(&model, &[3, 5]).unwrap();
        assert_eq!(trace[0].connected, vec![-2, 2]);
        assert_eq!(trace[0].activated, Some(vec![-1, -1]));
        assert_eq!(trace[1].normalized, vec![-2, 0]);
        assert_eq!(trace[1].activated, Some(vec![-1, 1]));
        assert_eq!(infer(&model, &[3, 5]).unwrap(), vec![1, -3]);
    }

    #[test]
    fn zero_input_zero_shift_gives_zero_output() {
        let layers = vec![
            QuantLayer {
                weights: SignMatrix::from_fn(3, 4, |i, j| (i + j) % 2 == 0),
                bn: qbn(vec![5, 6, 7], vec![0, 0, 0]),
            },
            QuantLayer {
                weights: SignMatrix::from_fn(2, 3, |i, j| i == j),
                bn: qbn(vec![1, 2], vec![0, 0]),
            },
        ];
        let model = QuantizedBnnModel::new(layers, 1, RingModulus::M8).unwrap();
        // b = 0 everywhere in layer 1, so every activation is +1; layer 2 then sees
        // row sums of W2 scaled by s'. Recompute that path directly:
        let a1 = activation(&[0, 0, 0]);
        let c2 = full_connection(&a1, &model.layers()[1].weights).unwrap();
        let expected = batch_norm(&c2, &model.layers()[1].bn).unwrap();
        assert_eq!(infer(&model, &[0; 4]).unwrap(), expected);
        assert_eq!(expected, vec![-1, -2]);
    }

    #[test]
    fn shapes_must_chain() {
        let l1 = QuantLayer {
            weights: SignMatrix::from_fn(3, 4, |_, _| true),
            bn: qbn(vec![1; 3], vec![0; 3]),
        };
        let l2 = QuantLayer {
            weights: SignMatrix::from_fn(2, 2, |_, _| true),
            bn: qbn(vec![1; 2], vec![0; 2]),
        };
        assert!(QuantizedBnnModel::new(vec![l1.clone(), l2], 1, RingModulus::M8).is_err());
        let bad_bn = QuantLayer {
            weights: SignMatrix::from_fn(3, 4, |_, _| true),
            bn: qbn(vec![1; 2], vec![0; 2]),
        };
        assert!(QuantizedBnnModel::new(vec![bad_bn], 1, RingModulus::M8).is_err());
        assert!(QuantizedBnnModel::new(vec![], 1, RingModulus::M8).is_err());
        let m = QuantizedBnnModel::new(vec![l1], 7, RingModulus::M8).unwrap();
        assert_eq!(m.sizes(), vec![4, 3]);
        assert_eq!(m.meta().q, 7);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0, 0, 0, 0, 0, 0, 0, 0, 0, 5]), Some(9));
        assert_eq!(argmax(&[4, 4, 4]), Some(0));
        assert_eq!(argmax(&[-3, -1, -2]), Some(1));
        assert_eq!(argmax::<i64>(&[]), None);
    }

    #[test]
    fn meta_round_trip_and_digest() {
        let meta = ModelMeta::new(vec![784, 128, 128, 10], 10_000, RingModulus::M32).unwrap();
        let bytes = meta.to_bytes();
        let mut r = crate::codec::ByteReader::new(&bytes);
        assert_eq!(ModelMeta::from_reader(&mut r).unwrap(), meta);
        let other = ModelMeta::new(vec![784, 64, 64, 10], 10_000, RingModulus::M32).unwrap();
        assert_ne!(meta.digest(), other.digest());
        assert!(ModelMeta::new(vec![3], 1, RingModulus::M8).is_err());
    }
}
