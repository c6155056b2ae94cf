//! Small reference trainer: binarized forward pass, straight-through backward
//! pass, Adam on real-valued latent weights clipped to `[-1, 1]`.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

use super::idx::Dataset;
use super::model::{argmax, FloatBnnModel, FloatLayer, QuantizedBnnModel, RealBnParams, SignMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f32,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 100,
            learning_rate: 0.01,
            lr_decay: 0.6,
            eps: 1e-4,
            seed: 1,
        }
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;

    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f32>, grads: impl Iterator<Item = &'a f32>, lr: f32, t: i32) {
        let c1 = 1.0 - Self::B1.powi(t);
        let c2 = 1.0 - Self::B2.powi(t);
        for (((p, &g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

struct Layer {
    latent: Array2<f32>,
    gamma: Array1<f32>,
    beta: Array1<f32>,
    opt_w: Adam,
    opt_g: Adam,
    opt_b: Adam,
}

struct Cache {
    input: Array2<f32>,
    binary: Array2<f32>,
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
    y: Array2<f32>,
}

fn sign(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Layer {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha20Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f32).sqrt();
        let latent = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-limit..limit));
        Layer {
            latent,
            gamma: Array1::ones(outputs),
            beta: Array1::zeros(outputs),
            opt_w: Adam::new(inputs * outputs),
            opt_g: Adam::new(outputs),
            opt_b: Adam::new(outputs),
        }
    }

    fn forward(&self, input: Array2<f32>, eps: f32) -> Cache {
        let binary = self.latent.mapv(sign);
        let z = input.dot(&binary.t());
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &z - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        Cache {
            input,
            binary,
            xhat,
            inv_std,
            y,
        }
    }

    /// Returns the gradient with respect to the layer input.
    fn backward(&mut self, cache: &Cache, dy: &Array2<f32>, lr: f32, t: i32) -> Array2<f32> {
        let batch = dy.nrows() as f32;
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dz = (&dxhat * batch - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / batch);
        let dinput = dz.dot(&cache.binary);
        let dw = dz.t().dot(&cache.input);

        self.opt_w.step(self.latent.iter_mut(), dw.iter(), lr, t);
        self.latent.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        self.opt_g.step(self.gamma.iter_mut(), dgamma.iter(), lr, t);
        self.opt_b.step(self.beta.iter_mut(), dbeta.iter(), lr, t);
        dinput
    }
}

fn batch_input(data: &Dataset, indices: &[usize]) -> Array2<f32> {
    let f = data.features();
    Array2::from_shape_fn((indices.len(), f), |(r, c)| data.pixels(indices[r])[c] as f32)
}

/// Trains a float-batch-norm BNN of shape `sizes` (`sizes[0]` must equal the
/// feature count). Deterministic for a fixed `config.seed`.
pub fn train_reference(data: &Dataset, sizes: &[usize], config: &TrainConfig) -> Result<FloatBnnModel> {
    if data.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Shape(format!("invalid architecture {sizes:?}")));
    }
    if sizes[0] != data.features() {
        return Err(Error::Shape(format!(
            "architecture expects {} inputs, dataset has {} features",
            sizes[0],
            data.features()
        )));
    }
    let classes = *sizes.last().expect("checked");
    if let Some(&bad) = data.labels().iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Shape(format!("label {bad} does not fit {classes} outputs")));
    }
    if config.batch_size < 2 || config.epochs == 0 {
        return Err(Error::Config("batch size must be at least 2 and epochs at least 1".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut layers: Vec<Layer> = sizes.windows(2).map(|w| Layer::new(w[0], w[1], &mut rng)).collect();
    let eps = config.eps as f32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = config.learning_rate;
    let mut step = 0i32;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            step += 1;
            let mut caches: Vec<Cache> = Vec::with_capacity(layers.len());
            let mut x = batch_input(data, chunk);
            for (j, layer) in layers.iter().enumerate() {
                let cache = layer.forward(x, eps);
                x = if j + 1 < layers.len() {
                    cache.y.mapv(sign)
                } else {
                    Array2::zeros((0, 0))
                };
                caches.push(cache);
            }
            let logits = &caches.last().expect("at least one layer").y;
            let (loss, mut grad) = softmax_cross_entropy(logits, chunk.iter().map(|&i| data.label(i) as usize));
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
            }
            loss_sum += loss as f64;
            batches += 1;
            for j in (0..layers.len()).rev() {
                let dinput = layers[j].backward(&caches[j], &grad, lr, step);
                if j > 0 {
                    let y_prev = &caches[j - 1].y;
                    grad = dinput * &y_prev.mapv(|v| if v.abs() <= 1.0 { 1.0 } else { 0.0 });
                }
            }
        }
        log::info!("epoch {}: mean loss {:.4}", epoch + 1, loss_sum / batches.max(1) as f64);
        lr *= config.lr_decay;
    }

    finalize(data, &layers, config.eps)
}

fn softmax_cross_entropy(logits: &Array2<f32>, labels: impl Iterator<Item = usize>) -> (f32, Array2<f32>) {
    let batch = logits.nrows() as f32;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, label) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
        loss -= row[label].max(1e-30).ln();
        row[label] -= 1.0;
    }
    grad.mapv_inplace(|v| v / batch);
    (loss / batch, grad)
}

/// Replaces batch statistics by exact population statistics over the training
/// set, layer by layer, using the final binary weights.
fn finalize(data: &Dataset, layers: &[Layer], eps: f64) -> Result<FloatBnnModel> {
    const CHUNK: usize = 1000;
    let binaries: Vec<Array2<f32>> = layers.iter().map(|l| l.latent.mapv(sign)).collect();
    let mut out: Vec<FloatLayer> = Vec::with_capacity(layers.len());
    let all: Vec<usize> = (0..data.len()).collect();

    for (j, layer) in layers.iter().enumerate() {
        let width = layer.gamma.len();
        let mut sum = vec![0.0f64; width];
        let mut sum_sq = vec![0.0f64; width];
        for chunk in all.chunks(CHUNK) {
            let mut x = batch_input(data, chunk);
            for (k, done) in out.iter().enumerate() {
                let z = x.dot(&binaries[k].t());
                x = Array2::from_shape_fn(z.dim(), |(r, c)| {
                    if done.bn.apply(c, z[[r, c]] as f64) >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                });
            }
            let z = x.dot(&binaries[j].t());
            for row in z.axis_iter(Axis(0)) {
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += v as f64;
                    sum_sq[c] += v as f64 * v as f64;
                }
            }
        }
        let n = data.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sum_sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0)).collect();
        let weights = SignMatrix::new(
            width,
            binaries[j].ncols(),
            binaries[j].iter().map(|&v| v as i8).collect(),
        )?;
        out.push(FloatLayer {
            weights,
            bn: RealBnParams {
                gamma: layer.gamma.iter().map(|&g| g as f64).collect(),
                beta: layer.beta.iter().map(|&b| b as f64).collect(),
                mean,
                var,
                eps,
            },
        });
    }
    FloatBnnModel::new(out)
}

/// Fraction of samples whose argmax matches the label.
pub fn accuracy_with(data: &Dataset, predict: impl Fn(&[i64]) -> Result<usize> + Sync) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Training("empty evaluation set".into()));
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let per = data.len().div_ceil(threads);
    let correct = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let predict = &predict;
                scope.spawn(move || -> Result<usize> {
                    let mut hits = 0;
                    for i in (t * per)..((t + 1) * per).min(data.len()) {
                        if predict(&data.input(i))? == data.label(i) as usize {
                            hits += 1;
                        }
                    }
                    Ok(hits)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .sum::<Result<usize>>()
    })?;
    Ok(correct as f64 / data.len() as f64)
}

pub fn float_accuracy(model: &FloatBnnModel, data: &Dataset) -> Result<f64> {
    accuracy_with(data, |x| Ok(argmax(&model.infer(x)?).expect("non-empty output")))
}

pub fn quantized_accuracy(model: &QuantizedBnnModel, data: &Dataset) -> Result<f64> {
    accuracy_with(data, |x| Ok(argmax(&super::model::infer(model, x)?).expect("non-empty output")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let features = 16;
        let mut pixels = Vec::with_capacity(n * features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            for f in 0..features {
                let hot = f % classes == label;
                let base: u8 = if hot { 200 } else { 30 };
                pixels.push(base.saturating_add(rng.random_range(0..40)));
            }
            labels.push(label as u8);
        }
        Dataset::new(features, pixels, labels).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(800, 4, 3);
        let model = train_reference(&data, &[16, 32, 4], &quick()).unwrap();
        assert!(float_accuracy(&model, &data).unwrap() > 0.95);
    }

    #[test]
    fn single_class_is_trivial() {
        let data = blobs(2000, 1, 5);
        let model = train_reference(&data, &[16, 8, 3], &quick()).unwrap();
        assert!(float_accuracy(&model, &data).unwrap() >= 0.99);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let data = blobs(200, 3, 9);
        let a = train_reference(&data, &[16, 8, 3], &quick()).unwrap();
        let b = train_reference(&data, &[16, 8, 3], &quick()).unwrap();
        assert_eq!(a, b);
        let c = train_reference(&data, &[16, 8, 3], &TrainConfig { seed: 2, ..quick() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let data = blobs(10, 2, 1);
        let empty = data.take(0);
        assert!(matches!(train_reference(&empty, &[16, 2], &quick()), Err(Error::Training(_))));
        assert!(train_reference(&data, &[15, 2], &quick()).is_err());
        assert!(train_reference(&data, &[16, 1], &quick()).is_err());
    }
}
