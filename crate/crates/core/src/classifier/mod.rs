//! Instance classifier: tile pixels to positive probability.

mod checkpoint;
pub mod net;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::Architecture;

use crate::error::{Error, Result};
use crate::types::{Bag, Tile};
use net::{Scalar, Workspace};

/// Probability clamp used by the cross-entropy loss.
pub const LOSS_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub arch: Architecture,
    pub params: Vec<f32>,
    pub seed: u64,
}

/// Fan-in scaled uniform weights, zero biases. Deterministic in `seed`.
pub fn init_model(seed: u64, arch: Architecture) -> Result<ClassifierModel> {
    if !arch.is_valid() {
        return Err(Error::InvalidConfig(format!("invalid architecture {arch:?}")));
    }
    let l = arch.layout();
    let (f1, f2, ff) = arch.fan_ins();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0f32; l.total];
    let mut fill = |range: std::ops::Range<usize>, bound: f64| {
        for p in &mut params[range] {
            *p = rng.random_range(-bound..bound) as f32;
        }
    };
    fill(l.w1..l.b1, (6.0 / f1 as f64).sqrt());
    fill(l.w2..l.b2, (6.0 / f2 as f64).sqrt());
    fill(l.wf..l.bf, (3.0 / ff as f64).sqrt());
    Ok(ClassifierModel { arch, params, seed })
}

impl ClassifierModel {
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn check_tile_size(&self, size: usize) -> Result<()> {
        if size != self.arch.input_size {
            return Err(Error::ArchitectureMismatch {
                expected: self.arch.input_size,
                found: size,
            });
        }
        Ok(())
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            model: self,
            ws: Workspace::new(&self.arch),
            buf: Vec::with_capacity(self.arch.input_len()),
        }
    }

    pub fn logit(&self, pixels: &[f32]) -> Result<f32> {
        self.predictor().logit(pixels)
    }
}

/// Reusable inference state for one thread.
pub struct Predictor<'m> {
    model: &'m ClassifierModel,
    ws: Workspace<f32>,
    buf: Vec<f32>,
}

impl Predictor<'_> {
    pub fn logit(&mut self, pixels: &[f32]) -> Result<f32> {
        let arch = &self.model.arch;
        if pixels.len() != arch.input_len() {
            let found = ((pixels.len() / 3) as f64).sqrt() as usize;
            return Err(Error::ShapeMismatch {
                expected: (arch.input_size, arch.input_size),
                found: (found, found),
            });
        }
        Ok(net::forward(arch, &self.model.params, pixels, &mut self.ws))
    }

    pub fn predict(&mut self, pixels: &[f32]) -> Result<f64> {
        Ok(net::sigmoid(self.logit(pixels)? as f64))
    }

    /// Probability for the window of `bag`'s image at `tile`'s footprint.
    pub fn predict_tile(&mut self, bag: &Bag, tile: &Tile) -> Result<f64> {
        self.model.check_tile_size(tile.size)?;
        let mut buf = std::mem::take(&mut self.buf);
        bag.image.window_into(tile.row, tile.col, tile.size, &mut buf);
        let p = self.predict(&buf);
        self.buf = buf;
        p
    }

    pub fn predict_window(&mut self, image: &crate::types::LesionImage, row: usize, col: usize) -> Result<f64> {
        let size = self.model.arch.input_size;
        let mut buf = std::mem::take(&mut self.buf);
        image.window_into(row, col, size, &mut buf);
        let p = self.predict(&buf);
        self.buf = buf;
        p
    }
}

/// p = sigmoid(logit(tile)).
pub fn predict(model: &ClassifierModel, tile_pixels: &[f32]) -> Result<f64> {
    model.predictor().predict(tile_pixels)
}

/// Per-tile probabilities of one bag and the index of the most probable tile.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub bag_index: usize,
    pub probs: Vec<f64>,
    pub argmax_index: usize,
}

impl BagPrediction {
    pub fn from_probs(bag_index: usize, probs: Vec<f64>) -> Result<Self> {
        let argmax_index = argmax_first(&probs).ok_or(Error::EmptyBag(bag_index))?;
        Ok(Self {
            bag_index,
            probs,
            argmax_index,
        })
    }
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best
}

pub fn predict_bag(model: &ClassifierModel, bag: &Bag) -> Result<BagPrediction> {
    predict_bag_with(&mut model.predictor(), bag)
}

fn predict_bag_with(pred: &mut Predictor<'_>, bag: &Bag) -> Result<BagPrediction> {
    if bag.tiles.is_empty() {
        return Err(Error::EmptyBag(bag.index));
    }
    let probs = bag
        .tiles
        .iter()
        .map(|t| pred.predict_tile(bag, t))
        .collect::<Result<Vec<_>>>()?;
    BagPrediction::from_probs(bag.index, probs)
}

/// `predict_bag` over every bag, in parallel. Output order matches `bags`.
pub fn predict_bags(model: &ClassifierModel, bags: &[Bag]) -> Result<Vec<BagPrediction>> {
    bags.par_iter()
        .map_init(|| model.predictor(), |pred, bag| predict_bag_with(pred, bag))
        .collect()
}

/// Binary cross-entropy with the prediction clamped to [ε, 1−ε].
pub fn loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Uniform mean of per-sample losses.
pub fn batch_loss(y_hats: &[f64], ys: &[u8]) -> f64 {
    y_hats.iter().zip(ys).map(|(&p, &y)| loss(p, y)).sum::<f64>() / y_hats.len() as f64
}

fn loss_generic<F: Scalar>(p: F, y: u8) -> F {
    let eps = F::from(LOSS_EPSILON).unwrap();
    let p = p.max(eps).min(F::one() - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(F::one() - p).ln()
    }
}

/// Mean batch loss and its gradient with respect to every parameter.
///
/// The gradient is that of the unclamped loss, `(p − y) · ∂logit/∂θ`; the two
/// agree wherever the clamp is inactive.
pub fn batch_gradient<F: Scalar>(
    arch: &Architecture,
    params: &[F],
    batch: &[(&[F], u8)],
) -> (F, Vec<F>) {
    let mut ws = Workspace::new(arch);
    let mut grad = vec![F::zero(); params.len()];
    let n = F::from(batch.len()).unwrap();
    let mut total = F::zero();
    for &(x, y) in batch {
        let z = net::forward(arch, params, x, &mut ws);
        let p = net::sigmoid(z);
        total += loss_generic(p, y);
        let d = (p - F::from(y).unwrap()) / n;
        net::backward(arch, params, x, &mut ws, d, &mut grad);
    }
    (total / n, grad)
}

/// Mean batch loss only, for finite-difference checks.
pub fn batch_loss_generic<F: Scalar>(arch: &Architecture, params: &[F], batch: &[(&[F], u8)]) -> F {
    let mut ws = Workspace::new(arch);
    let mut total = F::zero();
    for &(x, y) in batch {
        total += loss_generic(net::sigmoid(net::forward(arch, params, x, &mut ws)), y);
    }
    total / F::from(batch.len()).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// 1-based epochs from which another decay factor applies.
    pub decay_epochs: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay: 0.3,
            decay_epochs: vec![15, 25],
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_epsilon <= 0.0 {
            return bad("invalid adaptive-moment parameters");
        }
        Ok(())
    }

    /// Step size for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.learning_rate * self.lr_decay.powi(decays as i32)
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(parameter_count: usize) -> Self {
        Self {
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (cfg.adam_epsilon * c2.sqrt()) as f32;
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// A tile's pixels with its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub pixels: Vec<f32>,
    pub target: u8,
}

/// One pass of mini-batch descent over `samples` in an order shuffled from
/// (`config.seed`, `epoch`). Returns the mean per-sample loss observed
/// during the pass.
pub fn train_epoch(
    model: &mut ClassifierModel,
    optimizer: &mut Adam,
    samples: &[LabeledSample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    config.validate()?;
    let input_len = model.arch.input_len();
    if let Some(s) = samples.iter().find(|s| s.pixels.len() != input_len) {
        return Err(Error::ArchitectureMismatch {
            expected: model.arch.input_size,
            found: ((s.pixels.len() / 3) as f64).sqrt() as usize,
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
    order.shuffle(&mut rng);

    let lr = config.lr_at(epoch);
    let mut ws = Workspace::<f32>::new(&model.arch);
    let mut grad = vec![0f32; model.params.len()];
    let mut total = 0f64;
    for chunk in order.chunks(config.batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = chunk.len() as f32;
        for &i in chunk {
            let s = &samples[i];
            let z = net::forward(&model.arch, &model.params, &s.pixels, &mut ws);
            let p = net::sigmoid(z as f64);
            total += loss(p, s.target);
            let d = (p as f32 - s.target as f32) / n;
            net::backward(&model.arch, &model.params, &s.pixels, &mut ws, d, &mut grad);
        }
        optimizer.step(&mut model.params, &grad, lr, config);
    }
    Ok(total / samples.len() as f64)
}

/// SplitMix64-style combination of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
