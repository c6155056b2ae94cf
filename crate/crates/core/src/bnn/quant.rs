use crate::error::{Error, Result};
use crate::ring::RingModulus;

use super::model::{
    FloatBnnModel, FoldedBnParams, QuantLayer, QuantizedBnParams, QuantizedBnnModel, RealBnParams,
};

pub const DEFAULT_Q: u64 = 10_000;

/// Largest raw pixel value of an 8-bit image input.
pub const PIXEL_MAX: u64 = 255;

/// `s = γ / sqrt(σ² + ε)`, `t = β - γ μ / sqrt(σ² + ε)`.
pub fn fold_bn(bn: &RealBnParams) -> Result<FoldedBnParams> {
    bn.check()?;
    let mut scale = Vec::with_capacity(bn.len());
    let mut shift = Vec::with_capacity(bn.len());
    for i in 0..bn.len() {
        let denom = (bn.var[i] + bn.eps).sqrt();
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Contract(format!("node {i}: σ² + ε = {} is not positive", bn.var[i] + bn.eps)));
        }
        scale.push(bn.gamma[i] / denom);
        shift.push(bn.beta[i] - bn.gamma[i] * bn.mean[i] / denom);
    }
    Ok(FoldedBnParams { scale, shift })
}

fn floor_to_i64(x: f64, what: &str) -> Result<i64> {
    let f = x.floor();
    const LIMIT: f64 = 9_223_372_036_854_775_808.0; // 2^63
    if !f.is_finite() || !(-LIMIT..LIMIT).contains(&f) {
        return Err(Error::Config(format!("{what} = {x} does not fit in 64 bits")));
    }
    Ok(f as i64)
}

/// `s' = ⌊q s⌋`, `t' = ⌊q t⌋`, flooring toward negative infinity.
pub fn quantize_bn(folded: &FoldedBnParams, q: u64) -> Result<QuantizedBnParams> {
    if q == 0 {
        return Err(Error::Contract("q must be positive".into()));
    }
    if folded.scale.len() != folded.shift.len() {
        return Err(Error::Shape("s and t differ in length".into()));
    }
    let qf = q as f64;
    let scale = folded
        .scale
        .iter()
        .map(|&s| floor_to_i64(qf * s, "q·s"))
        .collect::<Result<_>>()?;
    let shift = folded
        .shift
        .iter()
        .map(|&t| floor_to_i64(qf * t, "q·t"))
        .collect::<Result<_>>()?;
    Ok(QuantizedBnParams { scale, shift })
}

/// Magnitude bounds for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerBound {
    /// Bound on `|c|` after the full connection.
    pub connected: u128,
    /// Bound on `|b|` after batch normalization.
    pub normalized: u128,
    pub max_scale: u128,
    pub max_shift: u128,
}

impl LayerBound {
    pub fn max(&self) -> u128 {
        self.connected.max(self.normalized).max(self.max_scale).max(self.max_shift)
    }
}

/// Worst-case magnitudes for a model with the given shape and parameter
/// magnitudes. Layer 1 sees inputs bounded by `input_bound`; deeper layers see
/// `±1`.
pub fn layer_bounds(
    sizes: &[usize],
    max_scale: &[u128],
    max_shift: &[u128],
    input_bound: u64,
) -> Result<Vec<LayerBound>> {
    let layers = sizes.len().saturating_sub(1);
    if layers == 0 || max_scale.len() != layers || max_shift.len() != layers {
        return Err(Error::Shape("bound inputs do not match the layer count".into()));
    }
    Ok((0..layers)
        .map(|j| {
            let per_input = if j == 0 { input_bound as u128 } else { 1 };
            let connected = (sizes[j] as u128).saturating_mul(per_input);
            let normalized = max_scale[j].saturating_mul(connected).saturating_add(max_shift[j]);
            LayerBound {
                connected,
                normalized,
                max_scale: max_scale[j],
                max_shift: max_shift[j],
            }
        })
        .collect())
}

/// Smallest supported ring with `required <= 2^(m-1) - 1`.
pub fn smallest_fitting_modulus(required: u128) -> Result<RingModulus> {
    RingModulus::ALL
        .iter()
        .copied()
        .find(|m| required < m.half() as u128)
        .ok_or_else(|| {
            Error::Config(format!(
                "values up to {required} need more than 64 bits; lower q or the input range"
            ))
        })
}

/// Smallest ring size for which plaintext integer inference cannot overflow.
pub fn overflow_bound(model: &QuantizedBnnModel, input_bound: u64) -> Result<RingModulus> {
    let sizes = model.sizes();
    let scales: Vec<u128> = model.layers().iter().map(|l| l.bn.max_abs_scale()).collect();
    let shifts: Vec<u128> = model.layers().iter().map(|l| l.bn.max_abs_shift()).collect();
    let bounds = layer_bounds(&sizes, &scales, &shifts, input_bound)?;
    let required = bounds.iter().map(LayerBound::max).max().unwrap_or(0).max(input_bound as u128);
    smallest_fitting_modulus(required)
}

/// Folds and quantizes every layer. With `modulus = None` the smallest safe ring
/// is chosen; a requested ring that is too small is a configuration error.
pub fn quantize_model(
    model: &FloatBnnModel,
    q: u64,
    modulus: Option<RingModulus>,
    input_bound: u64,
) -> Result<QuantizedBnnModel> {
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            Ok(QuantLayer {
                weights: l.weights.clone(),
                bn: quantize_bn(&fold_bn(&l.bn)?, q)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let draft = QuantizedBnnModel::new(layers, q, RingModulus::M64)?;
    let required = overflow_bound(&draft, input_bound)?;
    let chosen = match modulus {
        None => required,
        Some(m) if m.bits() >= required.bits() => m,
        Some(m) => {
            return Err(Error::Config(format!(
                "a {}-bit ring can overflow for this model; at least {} bits are needed",
                m.bits(),
                required.bits()
            )))
        }
    };
    Ok(draft.with_modulus(chosen))
}
