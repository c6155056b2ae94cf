//! Oblivious inference: the integer BNN evaluated on additive shares of both
//! the model and the query.

use rand::Rng;

use crate::bnn::{self, ModelMeta, QuantLayer, QuantizedBnParams, QuantizedBnnModel, SignMatrix};
use crate::circuit;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::net::wire::HEADER_LEN;
use crate::protocols::{PeerChannel, ProtocolContext};
use crate::ring::RingModulus;
use crate::sharing::{
    reconstruct_matrix, reconstruct_vector, share_matrix, share_vector, PartyId, SessionId, ShareMatrix,
    ShareVector,
};

const MODEL_SHARE_MAGIC: &[u8; 4] = b"OBSM";
const MODEL_SHARE_VERSION: u16 = 1;

/// One server's shares of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedLayer {
    pub weights: ShareMatrix,
    pub scale: ShareVector,
    pub shift: ShareVector,
}

/// One server's shares of a model plus the public metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedModel {
    meta: ModelMeta,
    layers: Vec<SharedLayer>,
}

impl SharedModel {
    pub fn new(meta: ModelMeta, layers: Vec<SharedLayer>) -> Result<Self> {
        if layers.len() != meta.layer_count() {
            return Err(Error::Shape(format!(
                "{} layers for metadata with {}",
                layers.len(),
                meta.layer_count()
            )));
        }
        let first = &layers[0].weights;
        let (party, session) = (first.party(), first.session());
        for (j, l) in layers.iter().enumerate() {
            let (d_in, d_out) = (meta.sizes[j], meta.sizes[j + 1]);
            if l.weights.rows() != d_out || l.weights.cols() != d_in || l.scale.len() != d_out || l.shift.len() != d_out {
                return Err(Error::Shape(format!("layer {j} shares do not match sizes {d_in}->{d_out}")));
            }
            for (mp, p, s) in [
                (l.weights.modulus(), l.weights.party(), l.weights.session()),
                (l.scale.modulus(), l.scale.party(), l.scale.session()),
                (l.shift.modulus(), l.shift.party(), l.shift.session()),
            ] {
                meta.modulus.check_same(mp)?;
                if p != party || s != session {
                    return Err(Error::Contract(format!("layer {j} mixes shares of different parties or sessions")));
                }
            }
        }
        Ok(SharedModel { meta, layers })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn layers(&self) -> &[SharedLayer] {
        &self.layers
    }

    pub fn party(&self) -> PartyId {
        self.layers[0].weights.party()
    }

    pub fn session(&self) -> SessionId {
        self.layers[0].weights.session()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(MODEL_SHARE_MAGIC).put_u16(MODEL_SHARE_VERSION);
        w.put_bytes(&self.meta.to_bytes());
        for l in &self.layers {
            l.weights.write_to(&mut w);
            l.scale.write_to(&mut w);
            l.shift.write_to(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MODEL_SHARE_MAGIC {
            return Err(Error::Format("not a model share".into()));
        }
        let version = r.get_u16()?;
        if version != MODEL_SHARE_VERSION {
            return Err(Error::Format(format!("unsupported model share version {version}")));
        }
        let meta = ModelMeta::from_reader(&mut r)?;
        let layers = (0..meta.layer_count())
            .map(|_| {
                Ok(SharedLayer {
                    weights: ShareMatrix::read_from(&mut r)?,
                    scale: ShareVector::read_from(&mut r)?,
                    shift: ShareVector::read_from(&mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        SharedModel::new(meta, layers)
    }
}

/// One server's shares of a client query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedQuery {
    pub input: ShareVector,
}

/// One server's shares of the output vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedOutput {
    pub output: ShareVector,
}

fn encode_weights(m: RingModulus, w: &SignMatrix) -> Vec<u64> {
    let minus_one = m.mask();
    w.data().iter().map(|&v| if v > 0 { 1 } else { minus_one }).collect()
}

/// Splits a quantized model into `n` server shares after checking that plaintext
/// inference on inputs bounded by `input_bound` cannot overflow the model's ring.
pub fn share_model<R: Rng + ?Sized>(
    model: &QuantizedBnnModel,
    input_bound: u64,
    n: usize,
    session: SessionId,
    rng: &mut R,
) -> Result<Vec<SharedModel>> {
    let m = model.modulus();
    let required = bnn::overflow_bound(model, input_bound)?;
    if required.bits() > m.bits() {
        return Err(Error::Overflow(format!(
            "model needs a {}-bit ring but is configured for {} bits",
            required.bits(),
            m.bits()
        )));
    }
    let meta = model.meta();
    let mut per_party: Vec<Vec<SharedLayer>> = (0..n).map(|_| Vec::with_capacity(model.layers().len())).collect();
    for layer in model.layers() {
        let w = &layer.weights;
        let weights = share_matrix(m, w.rows(), w.cols(), &encode_weights(m, w), n, session, rng)?;
        let scale = share_vector(m, &crate::ring::encode_all(m, &layer.bn.scale)?, n, session, rng)?;
        let shift = share_vector(m, &crate::ring::encode_all(m, &layer.bn.shift)?, n, session, rng)?;
        for (((dst, weights), scale), shift) in per_party.iter_mut().zip(weights).zip(scale).zip(shift) {
            dst.push(SharedLayer { weights, scale, shift });
        }
    }
    per_party
        .into_iter()
        .map(|layers| SharedModel::new(meta.clone(), layers))
        .collect()
}

/// Recombines all servers' model shares.
pub fn reconstruct_model(shares: &[SharedModel]) -> Result<QuantizedBnnModel> {
    let first = shares.first().ok_or_else(|| Error::Contract("no model shares".into()))?;
    let meta = first.meta().clone();
    if shares.iter().any(|s| s.meta() != &meta) {
        return Err(Error::Contract("model shares disagree on metadata".into()));
    }
    let m = meta.modulus;
    let layers = (0..meta.layer_count())
        .map(|j| {
            let weights: Vec<ShareMatrix> = shares.iter().map(|s| s.layers[j].weights.clone()).collect();
            let raw = reconstruct_matrix(&weights)?;
            let signs = raw
                .iter()
                .map(|&v| match m.decode(v) {
                    1 => Ok(1i8),
                    -1 => Ok(-1i8),
                    other => Err(Error::Format(format!("weight reconstructs to {other}, not ±1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let decode = |pick: fn(&SharedLayer) -> &ShareVector| -> Result<Vec<i64>> {
                let parts: Vec<ShareVector> = shares.iter().map(|s| pick(&s.layers[j]).clone()).collect();
                reconstruct_vector(&parts)?.into_iter().map(|v| m.decode_i64(v)).collect()
            };
            Ok(QuantLayer {
                weights: SignMatrix::new(meta.sizes[j + 1], meta.sizes[j], signs)?,
                bn: QuantizedBnParams {
                    scale: decode(|l| &l.scale)?,
                    shift: decode(|l| &l.shift)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedBnnModel::new(layers, meta.q, m)
}

/// Shares a client input; its length is checked against the public metadata
/// before any randomness is drawn.
pub fn share_query<R: Rng + ?Sized>(
    meta: &ModelMeta,
    input: &[i64],
    n: usize,
    session: SessionId,
    rng: &mut R,
) -> Result<Vec<SharedQuery>> {
    if input.len() != meta.input_len() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, query has {}",
            meta.input_len(),
            input.len()
        )));
    }
    let encoded = crate::ring::encode_all(meta.modulus, input)?;
    Ok(share_vector(meta.modulus, &encoded, n, session, rng)?
        .into_iter()
        .map(|input| SharedQuery { input })
        .collect())
}

/// Decoded output vector from every server's output share.
pub fn reconstruct_output(outputs: &[SharedOutput]) -> Result<Vec<i64>> {
    let first = outputs.first().ok_or_else(|| Error::Contract("no output shares".into()))?;
    let m = first.output.modulus();
    let parts: Vec<ShareVector> = outputs.iter().map(|o| o.output.clone()).collect();
    reconstruct_vector(&parts)?.into_iter().map(|v| m.decode_i64(v)).collect()
}

/// Predicted class: index of the largest decoded output, lowest index on ties.
pub fn argmax_client(output: &[i64]) -> Result<usize> {
    bnn::argmax(output).ok_or_else(|| Error::Shape("empty output vector".into()))
}

/// `c = W a` on shares, one multiplication per weight in a single round.
pub fn secure_fc<C: PeerChannel>(ctx: &mut ProtocolContext<C>, input: &ShareVector, w: &ShareMatrix) -> Result<ShareVector> {
    if input.len() != w.cols() {
        return Err(Error::Shape(format!("matrix has {} columns, input has {} entries", w.cols(), input.len())));
    }
    let (rows, cols) = (w.rows(), w.cols());
    let mut tiled = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        tiled.extend_from_slice(input.values());
    }
    let tiled = ShareVector::new(input.modulus(), input.party(), input.session(), tiled);
    let weights = ShareVector::new(w.modulus(), w.party(), w.session(), w.values().to_vec());
    let products = ctx.mul_vec(&weights, &tiled)?;
    let m = ctx.modulus();
    let out = (0..rows)
        .map(|i| {
            products.values()[i * cols..(i + 1) * cols]
                .iter()
                .fold(0u64, |acc, &v| m.add(acc, v))
        })
        .collect();
    Ok(ctx.output(out))
}

/// `b = s c + t` on shares.
pub fn secure_bn<C: PeerChannel>(
    ctx: &mut ProtocolContext<C>,
    c: &ShareVector,
    s: &ShareVector,
    t: &ShareVector,
) -> Result<ShareVector> {
    let scaled = ctx.mul_vec(c, s)?;
    ctx.add_vec(&scaled, t)
}

/// Sign activation: `2 [b <= ⌊M/2⌋] - 1`.
pub fn secure_act<C: PeerChannel>(ctx: &mut ProtocolContext<C>, b: &ShareVector) -> Result<ShareVector> {
    let half = ctx.half_vec(b)?;
    let doubled = ctx.mul_const_vec(&half, 2)?;
    let minus_one = vec![ctx.modulus().mask(); b.len()];
    ctx.add_const_vec(&doubled, &minus_one)
}

/// Runs all layers on shares: (FC, BN, sign) for hidden layers, then FC and BN.
pub fn secure_infer<C: PeerChannel>(
    ctx: &mut ProtocolContext<C>,
    model: &SharedModel,
    query: &SharedQuery,
) -> Result<SharedOutput> {
    let meta = model.meta();
    meta.modulus.check_same(ctx.modulus())?;
    if model.party() != ctx.party() || query.input.party() != ctx.party() {
        return Err(Error::Contract("model or query shares belong to another party".into()));
    }
    if query.input.session() != ctx.session() {
        return Err(Error::SessionMismatch {
            expected: ctx.session().0,
            found: query.input.session().0,
        });
    }
    if query.input.len() != meta.input_len() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, query has {}",
            meta.input_len(),
            query.input.len()
        )));
    }
    ctx.admit_session(model.session());
    let last = model.layers().len() - 1;
    let mut a = query.input.clone();
    for (j, layer) in model.layers().iter().enumerate() {
        let c = secure_fc(ctx, &a, &layer.weights)?;
        let b = secure_bn(ctx, &c, &layer.scale, &layer.shift)?;
        a = if j < last { secure_act(ctx, &b)? } else { b };
    }
    Ok(SharedOutput { output: a })
}

/// Predicted per-party communication of one inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InferenceCost {
    pub rounds: u64,
    pub messages_sent: u64,
    pub payload_bytes_sent: u64,
    pub bytes_sent: u64,
}

/// Rounds of one inference; depends only on the layer count, ring size and party count.
pub fn inference_rounds(layers: usize, bits: u32, parties: usize) -> u64 {
    let activation = circuit::half_circuit(bits, parties).and_depth() as u64 + (parties as u64 - 1);
    2 * layers as u64 + (layers as u64).saturating_sub(1) * activation
}

/// Analytic per-party cost of one inference on `parties` servers.
pub fn inference_cost(meta: &ModelMeta, parties: usize) -> InferenceCost {
    let w = meta.modulus.byte_width() as u64;
    let peers = parties as u64 - 1;
    let half = circuit::half_circuit(meta.modulus.bits(), parties);
    let and_layers = half.ands_per_layer();
    let mut payload = 0u64;
    for (j, pair) in meta.sizes.windows(2).enumerate() {
        let (d_in, d_out) = (pair[0] as u64, pair[1] as u64);
        payload += 2 * d_in * d_out * w;
        payload += 2 * d_out * w;
        if j + 1 < meta.layer_count() {
            payload += and_layers.iter().map(|&g| (2 * g as u64 * d_out).div_ceil(8)).sum::<u64>();
            payload += peers * 2 * d_out * w;
        }
    }
    let rounds = inference_rounds(meta.layer_count(), meta.modulus.bits(), parties);
    InferenceCost {
        rounds,
        messages_sent: rounds * peers,
        payload_bytes_sent: payload * peers,
        bytes_sent: (payload + rounds * HEADER_LEN as u64) * peers,
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::bnn::QuantLayer;
    use crate::dealer::budget_for_inference;
    use crate::local::LocalCluster;

    const MODEL: SessionId = SessionId(100);
    const QUERY: SessionId = SessionId(1);

    fn random_model(sizes: &[usize], m: RingModulus, seed: u64) -> QuantizedBnnModel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| QuantLayer {
                weights: SignMatrix::from_fn(w[1], w[0], |_, _| rng.random()),
                bn: QuantizedBnParams {
                    scale: (0..w[1]).map(|_| rng.random_range(-20..=20)).collect(),
                    shift: (0..w[1]).map(|_| rng.random_range(-50..=50)).collect(),
                },
            })
            .collect();
        QuantizedBnnModel::new(layers, 10, m).unwrap()
    }

    fn run_inference(model: &QuantizedBnnModel, input: &[i64], n: usize, seed: u64) -> (Vec<i64>, crate::local::LocalRun<SharedOutput>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let shares = share_model(model, 100, n, MODEL, &mut rng).unwrap();
        let queries = share_query(&model.meta(), input, n, QUERY, &mut rng).unwrap();
        let budget = budget_for_inference(&model.meta(), n);
        let run = LocalCluster::new(n, model.modulus())
            .session(QUERY)
            .seed(seed)
            .budget(&budget)
            .run(|ctx| {
                let p = ctx.party().index();
                secure_infer(ctx, &shares[p], &queries[p])
            })
            .unwrap();
        (reconstruct_output(&run.outputs).unwrap(), run)
    }

    #[test]
    fn model_shares_round_trip() {
        let model = random_model(&[5, 4, 3], RingModulus::M16, 1);
        let shares = share_model(&model, 100, 2, MODEL, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(reconstruct_model(&shares).unwrap(), model);
        assert_ne!(shares[0].to_bytes(), shares[1].to_bytes());
        let back = SharedModel::from_bytes(&shares[1].to_bytes()).unwrap();
        assert_eq!(back, shares[1]);
        assert!(reconstruct_model(&shares[..1]).is_err());
    }

    #[test]
    fn negative_weights_encode_to_minus_one() {
        let model = QuantizedBnnModel::new(
            vec![QuantLayer {
                weights: SignMatrix::new(1, 2, vec![-1, 1]).unwrap(),
                bn: QuantizedBnParams { scale: vec![1], shift: vec![0] },
            }],
            1,
            RingModulus::M8,
        )
        .unwrap();
        let shares = share_model(&model, 1, 2, MODEL, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let w: Vec<ShareMatrix> = shares.iter().map(|s| s.layers()[0].weights.clone()).collect();
        let raw = reconstruct_matrix(&w).unwrap();
        assert_eq!(raw, vec![255, 1]);
        assert_eq!(RingModulus::M8.decode(raw[0]), -1);
    }

    #[test]
    fn sharing_refuses_a_ring_that_can_overflow() {
        let model = random_model(&[784, 8, 2], RingModulus::M16, 4);
        let err = share_model(&model, 255, 2, MODEL, &mut ChaCha20Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Overflow(_)), "{err}");
    }

    #[test]
    fn toy_layers_match_plaintext() {
        let m = RingModulus::M16;
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let w = SignMatrix::new(2, 2, vec![1, -1, -1, 1]).unwrap();
        let wshares = share_matrix(m, 2, 2, &encode_weights(m, &w), 2, QUERY, &mut rng).unwrap();
        let a = share_vector(m, &[3, 5], 2, QUERY, &mut rng).unwrap();
        let zero = share_vector(m, &[0, 0], 2, QUERY, &mut rng).unwrap();
        let run = LocalCluster::new(2, m)
            .triples(8, 0)
            .run(|ctx| {
                let p = ctx.party().index();
                Ok((secure_fc(ctx, &a[p], &wshares[p])?, secure_fc(ctx, &zero[p], &wshares[p])?))
            })
            .unwrap();
        let c: Vec<ShareVector> = run.outputs.iter().map(|o| o.0.clone()).collect();
        let z: Vec<ShareVector> = run.outputs.iter().map(|o| o.1.clone()).collect();
        let decoded: Vec<i128> = reconstruct_vector(&c).unwrap().iter().map(|&v| m.decode(v)).collect();
        assert_eq!(decoded, vec![-2, 2]);
        assert_eq!(reconstruct_vector(&z).unwrap(), vec![0, 0]);
    }

    #[test]
    fn batch_norm_and_activation_match_plaintext() {
        let m = RingModulus::M16;
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let c: Vec<i64> = (0..16).map(|_| rng.random_range(-100..=100)).collect();
        let s: Vec<i64> = (0..16).map(|_| rng.random_range(-50..=50)).collect();
        let t: Vec<i64> = (0..16).map(|_| rng.random_range(-500..=500)).collect();
        let mut share = |v: &[i64]| share_vector(m, &crate::ring::encode_all(m, v).unwrap(), 2, QUERY, &mut rng).unwrap();
        let (cs, ss, ts) = (share(&c), share(&s), share(&t));
        let boundary = share_vector(m, &[0, m.half(), m.encode(-7).unwrap()], 2, QUERY, &mut rng).unwrap();
        let ands = circuit::half_circuit(16, 2).and_count();
        let run = LocalCluster::new(2, m)
            .triples(16 + 16 + 3, ands * (16 + 3))
            .run(|ctx| {
                let p = ctx.party().index();
                let b = secure_bn(ctx, &cs[p], &ss[p], &ts[p])?;
                let a = secure_act(ctx, &b)?;
                let edge = secure_act(ctx, &boundary[p])?;
                Ok((b, a, edge))
            })
            .unwrap();
        let pick = |f: fn(&(ShareVector, ShareVector, ShareVector)) -> &ShareVector| -> Vec<i128> {
            let parts: Vec<ShareVector> = run.outputs.iter().map(|o| f(o).clone()).collect();
            reconstruct_vector(&parts).unwrap().iter().map(|&v| m.decode(v)).collect()
        };
        let qbn = QuantizedBnParams { scale: s, shift: t };
        let expected_b = bnn::batch_norm(&c, &qbn).unwrap();
        let b = pick(|o| &o.0);
        assert_eq!(b, expected_b.iter().map(|&v| v as i128).collect::<Vec<_>>());
        let a = pick(|o| &o.1);
        assert_eq!(a, bnn::activation(&expected_b).iter().map(|&v| v as i128).collect::<Vec<_>>());
        // 0 -> +1, ⌊M/2⌋ -> +1 (inclusive band), -7 -> -1.
        assert_eq!(pick(|o| &o.2), vec![1, 1, -1]);
    }

    #[test]
    fn end_to_end_matches_plaintext_and_budget() {
        for (n, seed) in [(2usize, 11u64), (3, 12)] {
            let model = random_model(&[6, 5, 4, 3], RingModulus::M16, seed);
            let input: Vec<i64> = (0..6).map(|i| (i * 37 % 101) as i64).collect();
            let (out, run) = run_inference(&model, &input, n, seed);
            assert_eq!(out, bnn::infer(&model, &input).unwrap(), "n={n}");
            assert!(run.leftover.iter().all(|&l| l == (0, 0)), "n={n}: {:?}", run.leftover);
            let cost = inference_cost(&model.meta(), n);
            for s in &run.stats {
                assert_eq!(s.rounds, cost.rounds);
                assert_eq!(s.bytes_sent, cost.bytes_sent);
                assert_eq!(s.payload_bytes_sent, cost.payload_bytes_sent);
                assert_eq!(s.messages_sent, cost.messages_sent);
            }
        }
    }

    #[test]
    fn inference_is_deterministic_under_fixed_seeds() {
        let model = random_model(&[4, 3, 3, 2], RingModulus::M16, 21);
        let input = vec![1, 50, 99, 0];
        let (a, run_a) = run_inference(&model, &input, 2, 5);
        let (b, run_b) = run_inference(&model, &input, 2, 5);
        assert_eq!(a, b);
        assert_eq!(run_a.outputs, run_b.outputs);
    }

    #[test]
    fn rounds_depend_only_on_depth_and_ring() {
        assert_eq!(inference_rounds(3, 32, 2), 72);
        for d in [32usize, 64, 128, 256] {
            let meta = ModelMeta::new(vec![784, d, d, 10], 10_000, RingModulus::M32).unwrap();
            assert_eq!(inference_cost(&meta, 2).rounds, 72);
        }
    }

    #[test]
    fn query_length_is_checked_before_sharing() {
        let meta = ModelMeta::new(vec![4, 2], 1, RingModulus::M8).unwrap();
        let err = share_query(&meta, &[1, 2, 3], 2, QUERY, &mut ChaCha20Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(share_query(&meta, &[1, 2, 3, 200], 2, QUERY, &mut ChaCha20Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn argmax_client_examples() {
        assert_eq!(argmax_client(&[0, 0, 0, 0, 0, 0, 0, 0, 0, 5]).unwrap(), 9);
        assert_eq!(argmax_client(&[2, 2, 2]).unwrap(), 0);
        assert_eq!(argmax_client(&[-3, -1, -2]).unwrap(), 1);
        assert!(argmax_client(&[]).is_err());
    }

    #[test]
    fn output_reconstruction_needs_every_server() {
        let model = random_model(&[3, 2, 2], RingModulus::M16, 8);
        let (_, run) = run_inference(&model, &[1, 2, 3], 3, 8);
        assert!(reconstruct_output(&run.outputs[..2]).is_err());
    }

    #[test]
    fn a_single_model_share_looks_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = RingModulus::M8;
        let layer = QuantLayer {
            weights: SignMatrix::from_fn(100, 200, |_, _| true),
            bn: QuantizedBnParams { scale: vec![0; 100], shift: vec![0; 100] },
        };
        let model = QuantizedBnnModel::new(vec![layer], 1, m).unwrap();
        let shares = share_model(&model, 0, 2, MODEL, &mut ChaCha20Rng::seed_from_u64(31)).unwrap();
        let critical = ChiSquared::new(255.0).unwrap().inverse_cdf(0.999);
        for share in &shares {
            let values = share.layers()[0].weights.values();
            let mut counts = [0u64; 256];
            for &v in values {
                counts[v as usize] += 1;
            }
            let expected = values.len() as f64 / 256.0;
            let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            assert!(stat < critical, "party {}: chi-square {stat} >= {critical}", share.party().index());
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn shared_inference_matches_plaintext(
            widths in proptest::collection::vec(1usize..6, 2..5),
            n in 2usize..4,
            wide in proptest::bool::ANY,
            seed in 0u64..1_000_000,
        ) {
            let m = if wide { RingModulus::M32 } else { RingModulus::M16 };
            let model = random_model(&widths, m, seed);
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
            let input: Vec<i64> = (0..widths[0]).map(|_| rng.random_range(0..=100)).collect();
            let (out, _) = run_inference(&model, &input, n, seed);
            proptest::prop_assert_eq!(out, bnn::infer(&model, &input).unwrap());
        }
    }
}
