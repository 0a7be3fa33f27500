//! Missing-beam regression: the average estimator and a small 1-D
//! convolutional network trained from scratch.
//!
//! The network takes `N` past 4-beam DVL epochs, the currently measured
//! partial beams, and the per-beam mean over the past window, and outputs the
//! `k` missing beams (`k = 2` with `N = 3`, `k = 3` with `N = 5`). Layer
//! pipeline: Conv1D (kernel 2, stride 2, `2N` channels, tanh) over the time
//! axis with the 4 beams as input channels, flattened and zero-padded to `4N`
//! for a residual addition with the flattened past, then FC `4N -> 16` (ReLU),
//! FC `16 -> k` (ReLU), concatenation with the partial beams and the mean
//! (length 8 in both cases), and a final FC `8 -> k`.

use nalgebra::{DMatrix, DVector, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Which beams are missing (0-based, sorted). The studied patterns are
/// `{0, 2}` (beams 1 and 3) and `{0, 2, 3}` (only beam 2 measured).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingPattern {
    missing: Vec<usize>,
}

impl MissingPattern {
    pub fn new(mut missing: Vec<usize>) -> Result<Self> {
        missing.sort_unstable();
        missing.dedup();
        if missing.iter().any(|&i| i > 3) {
            return Err(Error::Contract("beam indices must be 0..3".into()));
        }
        if !(missing.len() == 2 || missing.len() == 3) {
            return Err(Error::Contract(format!(
                "supported missing-beam counts are 2 and 3, got {}",
                missing.len()
            )));
        }
        Ok(Self { missing })
    }

    /// Beams 1 and 3 missing.
    pub fn two_missing() -> Self {
        Self { missing: vec![0, 2] }
    }

    /// Only beam 2 measured.
    pub fn three_missing() -> Self {
        Self { missing: vec![0, 2, 3] }
    }

    pub fn k(&self) -> usize {
        self.missing.len()
    }

    /// Past-window length paired with this k by the layer shapes.
    pub fn window_len(&self) -> usize {
        if self.k() == 2 { 3 } else { 5 }
    }

    pub fn missing_indices(&self) -> &[usize] {
        &self.missing
    }

    pub fn measured_indices(&self) -> Vec<usize> {
        (0..4).filter(|i| !self.missing.contains(i)).collect()
    }

    /// Validity mask with the missing beams cleared.
    pub fn mask(&self) -> [bool; 4] {
        let mut m = [true; 4];
        for &i in &self.missing {
            m[i] = false;
        }
        m
    }
}

/// One regression instance: `N` past full epochs (rows, beam order columns),
/// the measured partial beams, and the per-beam past mean.
#[derive(Debug, Clone)]
pub struct RegressorInput {
    pub past: Vec<[f64; 4]>,
    pub partial: Vec<f64>,
    pub mean4: [f64; 4],
}

impl RegressorInput {
    /// `past` rows oldest first; `partial` holds the measured beams of the
    /// current epoch in beam order. The mean is recomputed, never trusted.
    pub fn new(past: Vec<[f64; 4]>, partial: Vec<f64>, pattern: &MissingPattern) -> Result<Self> {
        if past.len() != pattern.window_len() {
            return Err(Error::Contract(format!(
                "expected {} past epochs for k = {}, got {}",
                pattern.window_len(),
                pattern.k(),
                past.len()
            )));
        }
        if partial.len() != 4 - pattern.k() {
            return Err(Error::Contract(format!(
                "expected {} measured beams, got {}",
                4 - pattern.k(),
                partial.len()
            )));
        }
        let n = past.len() as f64;
        let mut mean4 = [0.0; 4];
        for row in &past {
            for b in 0..4 {
                mean4[b] += row[b] / n;
            }
        }
        Ok(Self { past, partial, mean4 })
    }
}

/// Model-based reference: forecast each missing beam by its own past mean.
pub fn average_estimate(input: &RegressorInput, pattern: &MissingPattern) -> Vec<f64> {
    pattern.missing_indices().iter().map(|&i| input.mean4[i]).collect()
}

/// Merge measured and predicted beams back into positional beam order.
pub fn complete_beams(
    pattern: &MissingPattern,
    partial: &[f64],
    predicted: &[f64],
) -> Result<Vector4<f64>> {
    if partial.len() + predicted.len() != 4
        || predicted.len() != pattern.k()
        || partial.len() != 4 - pattern.k()
    {
        return Err(Error::Contract("beam completion counts must partition the 4 beams".into()));
    }
    let mut out = Vector4::zeros();
    let mut pi = 0;
    let mut mi = 0;
    for b in 0..4 {
        if pattern.missing_indices().contains(&b) {
            out[b] = predicted[mi];
            mi += 1;
        } else {
            out[b] = partial[pi];
            pi += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// Default: beams can be negative.
    Linear,
    /// Faithful to the published output layer.
    Relu,
}

/// Network weights. Conv tensor layout: `[out_channel][in_channel][tap]`,
/// flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub k: usize,
    pub n: usize,
    pub conv_weights: Vec<f64>, // 2N x 4 x 2
    pub conv_bias: Vec<f64>,    // 2N
    pub w1: DMatrix<f64>,       // 16 x 4N
    pub b1: DVector<f64>,       // 16
    pub w2: DMatrix<f64>,       // k x 16
    pub b2: DVector<f64>,       // k
    pub w3: DMatrix<f64>,       // k x 8
    pub b3: DVector<f64>,       // k
    pub output_activation: OutputActivation,
    pub rng_seed: u64,
}

const HIDDEN: usize = 16;
const U_LEN: usize = 8;

impl RegressorModel {
    pub fn channels(&self) -> usize {
        2 * self.n
    }

    /// Conv output length along time for kernel 2, stride 2.
    pub fn conv_len(&self) -> usize {
        (self.n - 2) / 2 + 1
    }

    /// Seeded uniform init on [-sqrt(1/fan_in), +sqrt(1/fan_in)].
    pub fn init(pattern: &MissingPattern, output_activation: OutputActivation, seed: u64) -> Self {
        let k = pattern.k();
        let n = pattern.window_len();
        let c = 2 * n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize| {
            let lim = (1.0 / fan_in as f64).sqrt();
            rng.gen_range(-lim..lim)
        };
        let conv_fan = 4 * 2;
        let conv_weights = (0..c * 4 * 2).map(|_| uniform(conv_fan)).collect();
        let conv_bias = (0..c).map(|_| uniform(conv_fan)).collect();
        let w1 = DMatrix::from_fn(HIDDEN, 4 * n, |_, _| uniform(4 * n));
        let b1 = DVector::from_fn(HIDDEN, |_, _| uniform(4 * n));
        let w2 = DMatrix::from_fn(k, HIDDEN, |_, _| uniform(HIDDEN));
        let b2 = DVector::from_fn(k, |_, _| uniform(HIDDEN));
        let w3 = DMatrix::from_fn(k, U_LEN, |_, _| uniform(U_LEN));
        let b3 = DVector::from_fn(k, |_, _| uniform(U_LEN));
        Self {
            k,
            n,
            conv_weights,
            conv_bias,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            output_activation,
            rng_seed: seed,
        }
    }

    pub fn zeroed(pattern: &MissingPattern, output_activation: OutputActivation) -> Self {
        let mut m = Self::init(pattern, output_activation, 0);
        for p in m.params_flat_mut() {
            *p = 0.0;
        }
        m
    }

    fn conv_idx(&self, c: usize, ci: usize, j: usize) -> usize {
        (c * 4 + ci) * 2 + j
    }

    pub fn num_params(&self) -> usize {
        self.conv_weights.len()
            + self.conv_bias.len()
            + self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    /// Flat parameter view in a fixed order, for the optimizer and the
    /// finite-difference checker.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.conv_weights);
        v.extend_from_slice(&self.conv_bias);
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v.extend(self.w3.iter());
        v.extend(self.b3.iter());
        v
    }

    pub fn params_flat_mut(&mut self) -> Vec<&mut f64> {
        let mut v: Vec<&mut f64> = Vec::with_capacity(self.num_params());
        v.extend(self.conv_weights.iter_mut());
        v.extend(self.conv_bias.iter_mut());
        v.extend(self.w1.iter_mut());
        v.extend(self.b1.iter_mut());
        v.extend(self.w2.iter_mut());
        v.extend(self.b2.iter_mut());
        v.extend(self.w3.iter_mut());
        v.extend(self.b3.iter_mut());
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        for (dst, &src) in self.params_flat_mut().into_iter().zip(flat) {
            *dst = src;
        }
    }

    fn check_input(&self, input: &RegressorInput) -> Result<()> {
        if input.past.len() != self.n || input.partial.len() != 4 - self.k {
            return Err(Error::Contract(format!(
                "input shapes (past {}, partial {}) do not match model (N {}, k {})",
                input.past.len(),
                input.partial.len(),
                self.n,
                self.k
            )));
        }
        Ok(())
    }

    /// Forward pass; pure and deterministic.
    pub fn forward(&self, input: &RegressorInput) -> Result<DVector<f64>> {
        self.check_input(input)?;
        Ok(self.forward_cached(input).output)
    }

    fn forward_cached(&self, input: &RegressorInput) -> ForwardCache {
        let c = self.channels();
        let l = self.conv_len();
        let flat = 4 * self.n;

        // conv over time, tanh
        let mut z = vec![0.0; c * l];
        for ch in 0..c {
            for t in 0..l {
                let mut acc = self.conv_bias[ch];
                for ci in 0..4 {
                    for j in 0..2 {
                        acc += input.past[2 * t + j][ci] * self.conv_weights[self.conv_idx(ch, ci, j)];
                    }
                }
                z[ch * l + t] = acc.tanh();
            }
        }

        // residual: zero-pad flattened conv output to 4N, add flattened past
        let mut y = DVector::zeros(flat);
        for i in 0..flat {
            let x = input.past[i / 4][i % 4];
            y[i] = x + if i < z.len() { z[i] } else { 0.0 };
        }

        let h1_pre = &self.w1 * &y + &self.b1;
        let h1 = h1_pre.map(|v| v.max(0.0));
        let l_pre = &self.w2 * &h1 + &self.b2;
        let l_out = l_pre.map(|v| v.max(0.0));

        let mut u = DVector::zeros(U_LEN);
        for i in 0..self.k {
            u[i] = l_out[i];
        }
        for (i, &p) in input.partial.iter().enumerate() {
            u[self.k + i] = p;
        }
        for b in 0..4 {
            u[4 + b] = input.mean4[b];
        }

        let o_pre = &self.w3 * &u + &self.b3;
        let output = match self.output_activation {
            OutputActivation::Linear => o_pre.clone(),
            OutputActivation::Relu => o_pre.map(|v| v.max(0.0)),
        };

        ForwardCache { z, y, h1_pre, h1, l_pre, u, o_pre, output }
    }

    /// Analytic gradients of the per-sample MSE `(1/k) sum (o - target)^2`.
    pub fn backward(&self, input: &RegressorInput, target: &[f64]) -> Result<Gradients> {
        self.check_input(input)?;
        if target.len() != self.k {
            return Err(Error::Contract("target length must equal k".into()));
        }
        let cache = self.forward_cached(input);
        Ok(self.backward_from_cache(input, target, &cache))
    }

    fn backward_from_cache(
        &self,
        input: &RegressorInput,
        target: &[f64],
        cache: &ForwardCache,
    ) -> Gradients {
        let k = self.k;
        let c = self.channels();
        let l = self.conv_len();

        // d MSE / d output
        let mut d_out = DVector::zeros(k);
        for i in 0..k {
            d_out[i] = 2.0 * (cache.output[i] - target[i]) / k as f64;
        }
        // output activation
        let d_o_pre = match self.output_activation {
            OutputActivation::Linear => d_out,
            OutputActivation::Relu => {
                DVector::from_fn(k, |i, _| if cache.o_pre[i] > 0.0 { d_out[i] } else { 0.0 })
            }
        };

        let d_w3 = &d_o_pre * cache.u.transpose();
        let d_b3 = d_o_pre.clone();
        let d_u = self.w3.transpose() * &d_o_pre;

        // only the L slice of U routes gradient back into the network
        let d_l_pre = DVector::from_fn(k, |i, _| if cache.l_pre[i] > 0.0 { d_u[i] } else { 0.0 });

        let d_w2 = &d_l_pre * cache.h1.transpose();
        let d_b2 = d_l_pre.clone();
        let d_h1 = self.w2.transpose() * &d_l_pre;
        let d_h1_pre =
            DVector::from_fn(HIDDEN, |i, _| if cache.h1_pre[i] > 0.0 { d_h1[i] } else { 0.0 });

        let d_w1 = &d_h1_pre * cache.y.transpose();
        let d_b1 = d_h1_pre.clone();
        let d_y = self.w1.transpose() * &d_h1_pre;

        // gradient flows into conv only through the non-padded positions
        let mut d_conv_w = vec![0.0; self.conv_weights.len()];
        let mut d_conv_b = vec![0.0; c];
        for ch in 0..c {
            for t in 0..l {
                let idx = ch * l + t;
                let z = cache.z[idx];
                let dz = d_y[idx] * (1.0 - z * z);
                d_conv_b[ch] += dz;
                for ci in 0..4 {
                    for j in 0..2 {
                        d_conv_w[self.conv_idx(ch, ci, j)] += dz * input.past[2 * t + j][ci];
                    }
                }
            }
        }

        Gradients {
            conv_weights: d_conv_w,
            conv_bias: d_conv_b,
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
            w3: d_w3,
            b3: d_b3,
        }
    }

    /// Flat JSON serialization: layer name to row-major weight array.
    pub fn to_json(&self) -> Value {
        let act = match self.output_activation {
            OutputActivation::Linear => "linear",
            OutputActivation::Relu => "relu",
        };
        let mat = |m: &DMatrix<f64>| -> Vec<f64> {
            let mut v = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        json!({
            "k": self.k,
            "n": self.n,
            "conv_weights": self.conv_weights,
            "conv_weights_shape": [2 * self.n, 4, 2],
            "conv_bias": self.conv_bias,
            "w1": mat(&self.w1),
            "w1_shape": [HIDDEN, 4 * self.n],
            "b1": self.b1.iter().copied().collect::<Vec<_>>(),
            "w2": mat(&self.w2),
            "w2_shape": [self.k, HIDDEN],
            "b2": self.b2.iter().copied().collect::<Vec<_>>(),
            "w3": mat(&self.w3),
            "w3_shape": [self.k, U_LEN],
            "b3": self.b3.iter().copied().collect::<Vec<_>>(),
            "output_activation": act,
            "seed": self.rng_seed,
        })
    }

    /// Loads a model and validates every shape against the layer-shape law.
    pub fn from_json(v: &Value) -> Result<Self> {
        let get = |key: &str| -> Result<&Value> {
            v.get(key).ok_or_else(|| Error::Config(format!("model JSON missing `{key}`")))
        };
        let k = get("k")?.as_u64().ok_or_else(|| Error::Config("bad k".into()))? as usize;
        let n = get("n")?.as_u64().ok_or_else(|| Error::Config("bad n".into()))? as usize;
        let expected_n = if k == 2 {
            3
        } else if k == 3 {
            5
        } else {
            return Err(Error::Config(format!("unsupported k = {k}")));
        };
        if n != expected_n {
            return Err(Error::Config(format!("k = {k} requires N = {expected_n}, got {n}")));
        }
        let arr = |key: &str, len: usize| -> Result<Vec<f64>> {
            let a = get(key)?
                .as_array()
                .ok_or_else(|| Error::Config(format!("`{key}` must be an array")))?;
            if a.len() != len {
                return Err(Error::Config(format!("`{key}` must have {len} entries, got {}", a.len())));
            }
            a.iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Config(format!("`{key}` holds a non-number"))))
                .collect()
        };
        let c = 2 * n;
        let conv_weights = arr("conv_weights", c * 4 * 2)?;
        let conv_bias = arr("conv_bias", c)?;
        let w1v = arr("w1", HIDDEN * 4 * n)?;
        let b1v = arr("b1", HIDDEN)?;
        let w2v = arr("w2", k * HIDDEN)?;
        let b2v = arr("b2", k)?;
        let w3v = arr("w3", k * U_LEN)?;
        let b3v = arr("b3", k)?;
        let output_activation = match get("output_activation")?.as_str() {
            Some("linear") => OutputActivation::Linear,
            Some("relu") => OutputActivation::Relu,
            other => return Err(Error::Config(format!("bad output_activation {other:?}"))),
        };
        let seed = get("seed")?.as_u64().unwrap_or(0);
        let rowmajor = |v: &[f64], rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
        };
        Ok(Self {
            k,
            n,
            conv_weights,
            conv_bias,
            w1: rowmajor(&w1v, HIDDEN, 4 * n),
            b1: DVector::from_vec(b1v),
            w2: rowmajor(&w2v, k, HIDDEN),
            b2: DVector::from_vec(b2v),
            w3: rowmajor(&w3v, k, U_LEN),
            b3: DVector::from_vec(b3v),
            output_activation,
            rng_seed: seed,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, &self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let v: Value = serde_json::from_reader(f)?;
        Self::from_json(&v)
    }
}

struct ForwardCache {
    z: Vec<f64>,
    y: DVector<f64>,
    h1_pre: DVector<f64>,
    h1: DVector<f64>,
    l_pre: DVector<f64>,
    u: DVector<f64>,
    o_pre: DVector<f64>,
    output: DVector<f64>,
}

/// Parameter gradients, same shapes as [`RegressorModel`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv_weights: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.conv_weights);
        v.extend_from_slice(&self.conv_bias);
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v.extend(self.w3.iter());
        v.extend(self.b3.iter());
        v
    }
}

/// Training hyper-parameters. Defaults: batch 4, lr 1e-3 decayed by 0.1 every
/// 35 epochs, 100 epochs, RMSprop(alpha 0.99, eps 1e-8), MSE loss.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 35,
            epochs: 100,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.epochs == 0
            || self.learning_rate <= 0.0
            || self.lr_decay <= 0.0
            || self.lr_decay_every == 0
            || !(0.0..1.0).contains(&self.rmsprop_alpha)
            || self.rmsprop_eps <= 0.0
        {
            return Err(Error::Contract("training hyper-parameters must be positive".into()));
        }
        Ok(())
    }
}

/// One supervised instance.
pub type TrainExample = (RegressorInput, Vec<f64>);

/// Mean MSE of a model over a dataset, without touching the weights.
pub fn dataset_loss(model: &RegressorModel, dataset: &[TrainExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("dataset is empty".into()));
    }
    let mut total = 0.0;
    for (input, target) in dataset {
        let out = model.forward(input)?;
        let mut loss = 0.0;
        for i in 0..model.k {
            let e = out[i] - target[i];
            loss += e * e;
        }
        total += loss / model.k as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Mini-batch RMSprop training. Returns the trained model and the loss curve:
/// entry 0 is the pre-training dataset loss, entry `e >= 1` the mean training
/// loss over epoch `e`. Deterministic for a fixed shuffle seed.
pub fn train(
    model: &RegressorModel,
    dataset: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<(RegressorModel, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    let mut model = model.clone();
    let mut sq_avg = vec![0.0f64; model.num_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    curve.push(dataset_loss(&model, dataset)?);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32);
        // Fisher-Yates with the seeded stream
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc = vec![0.0f64; model.num_params()];
            for &idx in batch {
                let (input, target) = &dataset[idx];
                let cache = model.forward_cached(input);
                let mut loss = 0.0;
                for i in 0..model.k {
                    let e = cache.output[i] - target[i];
                    loss += e * e;
                }
                loss /= model.k as f64;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                epoch_loss += loss;
                let grads = model.backward_from_cache(input, target, &cache);
                for (acc, g) in grad_acc.iter_mut().zip(grads.flat()) {
                    *acc += g / batch.len() as f64;
                }
            }
            let mut params = model.params_flat();
            for i in 0..params.len() {
                let g = grad_acc[i];
                sq_avg[i] = cfg.rmsprop_alpha * sq_avg[i] + (1.0 - cfg.rmsprop_alpha) * g * g;
                params[i] -= lr * g / (sq_avg[i].sqrt() + cfg.rmsprop_eps);
            }
            model.set_params(&params);
        }
        curve.push(epoch_loss / dataset.len() as f64);
    }
    Ok((model, curve))
}

/// Slides a window over a fully valid DVL beam log and builds supervised
/// examples for `pattern`: inputs are the `N` past epochs plus the measured
/// beams of the current epoch, the target is the beams the dropout removed.
pub fn build_dataset(beam_log: &[Vector4<f64>], pattern: &MissingPattern) -> Result<Vec<TrainExample>> {
    let n = pattern.window_len();
    if beam_log.len() <= n {
        return Err(Error::Contract(format!(
            "need more than {n} epochs to window a dataset, got {}",
            beam_log.len()
        )));
    }
    let measured = pattern.measured_indices();
    let mut out = Vec::with_capacity(beam_log.len() - n);
    for t in n..beam_log.len() {
        let past: Vec<[f64; 4]> = beam_log[t - n..t]
            .iter()
            .map(|b| [b[0], b[1], b[2], b[3]])
            .collect();
        let partial: Vec<f64> = measured.iter().map(|&i| beam_log[t][i]).collect();
        let target: Vec<f64> = pattern.missing_indices().iter().map(|&i| beam_log[t][i]).collect();
        out.push((RegressorInput::new(past, partial, pattern)?, target));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input2(past: Vec<[f64; 4]>, partial: Vec<f64>) -> RegressorInput {
        RegressorInput::new(past, partial, &MissingPattern::two_missing()).unwrap()
    }

    #[test]
    fn pattern_contracts() {
        assert_eq!(MissingPattern::two_missing().missing_indices(), &[0, 2]);
        assert_eq!(MissingPattern::three_missing().missing_indices(), &[0, 2, 3]);
        assert_eq!(MissingPattern::two_missing().window_len(), 3);
        assert_eq!(MissingPattern::three_missing().window_len(), 5);
        assert!(MissingPattern::new(vec![]).is_err());
        assert!(MissingPattern::new(vec![1]).is_err());
        assert!(MissingPattern::new(vec![0, 1, 2, 3]).is_err());
        assert!(MissingPattern::new(vec![0, 4]).is_err());
        assert_eq!(MissingPattern::two_missing().mask(), [false, true, false, true]);
    }

    #[test]
    fn average_estimator_examples() {
        let p = MissingPattern::two_missing();
        let constant = input2(vec![[2.0; 4]; 3], vec![0.0, 0.0]);
        assert_eq!(average_estimate(&constant, &p), vec![2.0, 2.0]);

        let ramp = input2(
            vec![[1.0, 2.0, 3.0, 4.0], [3.0, 4.0, 5.0, 6.0], [5.0, 6.0, 7.0, 8.0]],
            vec![0.0, 0.0],
        );
        assert_eq!(average_estimate(&ramp, &p), vec![3.0, 5.0]);

        // linear ramp lags the true endpoint by (N-1)/2 steps of the slope
        let slope = 2.0;
        let next_b1 = 7.0;
        let est = average_estimate(&ramp, &p)[0];
        assert_eq!(next_b1 - est, (3 - 1) as f64 / 2.0 * slope + slope);
    }

    #[test]
    fn complete_beams_positional_merge() {
        let p2 = MissingPattern::two_missing();
        let y = complete_beams(&p2, &[0.5, 0.7], &[1.1, 1.3]).unwrap();
        assert_eq!(y, Vector4::new(1.1, 0.5, 1.3, 0.7));

        let p3 = MissingPattern::three_missing();
        let y3 = complete_beams(&p3, &[0.5], &[1.1, 1.3, 1.7]).unwrap();
        assert_eq!(y3, Vector4::new(1.1, 0.5, 1.3, 1.7));

        assert!(complete_beams(&p2, &[0.5], &[1.1, 1.3]).is_err());
    }

    #[test]
    fn forward_zero_params_zero_output() {
        for pattern in [MissingPattern::two_missing(), MissingPattern::three_missing()] {
            let m = RegressorModel::zeroed(&pattern, OutputActivation::Linear);
            let past = vec![[1.0, -2.0, 0.5, 3.0]; pattern.window_len()];
            let partial = vec![0.7; 4 - pattern.k()];
            let input = RegressorInput::new(past, partial, &pattern).unwrap();
            let out = m.forward(&input).unwrap();
            assert_eq!(out.len(), pattern.k());
            assert!(out.norm() == 0.0);
        }
    }

    #[test]
    fn layer_shape_law() {
        let m2 = RegressorModel::init(&MissingPattern::two_missing(), OutputActivation::Linear, 1);
        assert_eq!(m2.channels(), 6);
        assert_eq!(m2.w1.shape(), (16, 12));
        assert_eq!(m2.w2.shape(), (2, 16));
        assert_eq!(m2.w3.shape(), (2, 8));
        let m3 = RegressorModel::init(&MissingPattern::three_missing(), OutputActivation::Linear, 1);
        assert_eq!(m3.channels(), 10);
        assert_eq!(m3.w1.shape(), (16, 20));
        assert_eq!(m3.w2.shape(), (3, 16));
        assert_eq!(m3.w3.shape(), (3, 8));
        // U length is 8 in both cases: k + (4-k) + 4
        for m in [&m2, &m3] {
            assert_eq!(m.k + (4 - m.k) + 4, 8);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = RegressorModel::init(&MissingPattern::two_missing(), OutputActivation::Linear, 1);
        let p3 = MissingPattern::three_missing();
        let input = RegressorInput::new(vec![[0.0; 4]; 5], vec![0.1], &p3).unwrap();
        assert!(m.forward(&input).is_err());
    }

    // independent straight-line reimplementation with naive loops
    fn naive_forward(m: &RegressorModel, input: &RegressorInput) -> Vec<f64> {
        let n = m.n;
        let k = m.k;
        let c = 2 * n;
        let l = (n - 2) / 2 + 1;
        let mut z = vec![0.0; c * l];
        for ch in 0..c {
            for t in 0..l {
                let mut s = m.conv_bias[ch];
                for ci in 0..4 {
                    for j in 0..2 {
                        s += input.past[2 * t + j][ci] * m.conv_weights[(ch * 4 + ci) * 2 + j];
                    }
                }
                z[ch * l + t] = s.tanh();
            }
        }
        let mut y = vec![0.0; 4 * n];
        for i in 0..4 * n {
            y[i] = input.past[i / 4][i % 4] + if i < c * l { z[i] } else { 0.0 };
        }
        let mut h1 = vec![0.0; 16];
        for r in 0..16 {
            let mut s = m.b1[r];
            for cidx in 0..4 * n {
                s += m.w1[(r, cidx)] * y[cidx];
            }
            h1[r] = s.max(0.0);
        }
        let mut lv = vec![0.0; k];
        for r in 0..k {
            let mut s = m.b2[r];
            for cidx in 0..16 {
                s += m.w2[(r, cidx)] * h1[cidx];
            }
            lv[r] = s.max(0.0);
        }
        let mut u = vec![0.0; 8];
        for i in 0..k {
            u[i] = lv[i];
        }
        for (i, &p) in input.partial.iter().enumerate() {
            u[k + i] = p;
        }
        for b in 0..4 {
            u[4 + b] = input.mean4[b];
        }
        let mut out = vec![0.0; k];
        for r in 0..k {
            let mut s = m.b3[r];
            for cidx in 0..8 {
                s += m.w3[(r, cidx)] * u[cidx];
            }
            out[r] = match m.output_activation {
                OutputActivation::Linear => s,
                OutputActivation::Relu => s.max(0.0),
            };
        }
        out
    }

    #[test]
    fn forward_matches_naive_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pattern in [MissingPattern::two_missing(), MissingPattern::three_missing()] {
            let m = RegressorModel::init(&pattern, OutputActivation::Linear, 17);
            let past: Vec<[f64; 4]> = (0..pattern.window_len())
                .map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
                .collect();
            let partial: Vec<f64> =
                (0..4 - pattern.k()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let input = RegressorInput::new(past, partial, &pattern).unwrap();
            let a = m.forward(&input).unwrap();
            let b = naive_forward(&m, &input);
            for i in 0..pattern.k() {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_loss_zero_gradients() {
        let pattern = MissingPattern::two_missing();
        let m = RegressorModel::init(&pattern, OutputActivation::Linear, 5);
        let input = input2(vec![[0.4, -0.1, 0.2, 0.9]; 3], vec![0.3, -0.2]);
        let out = m.forward(&input).unwrap();
        let grads = m.backward(&input, &[out[0], out[1]]).unwrap();
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    fn check_gradients(pattern: MissingPattern, seed: u64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = RegressorModel::init(&pattern, OutputActivation::Linear, seed);
        let past: Vec<[f64; 4]> = (0..pattern.window_len())
            .map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
            .collect();
        let partial: Vec<f64> = (0..4 - pattern.k()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..pattern.k()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let input = RegressorInput::new(past, partial, &pattern).unwrap();

        let analytic = m.backward(&input, &target).unwrap().flat();
        let loss = |m: &RegressorModel| -> f64 {
            let o = m.forward(&input).unwrap();
            (0..pattern.k()).map(|i| (o[i] - target[i]).powi(2)).sum::<f64>() / pattern.k() as f64
        };
        let h = 1e-5;
        let base = m.params_flat();
        let mut max_rel = 0.0f64;
        for i in 0..base.len() {
            let mut probe = m.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p);
            let hi = loss(&probe);
            p[i] = base[i] - h;
            probe.set_params(&p);
            let lo = loss(&probe);
            let fd = (hi - lo) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
        }
        assert!(max_rel <= 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn backward_matches_finite_differences_k2() {
        check_gradients(MissingPattern::two_missing(), 21);
    }

    #[test]
    fn backward_matches_finite_differences_k3() {
        check_gradients(MissingPattern::three_missing(), 22);
    }

    #[test]
    fn train_reduces_loss_and_is_reproducible() {
        use rand::Rng;
        let pattern = MissingPattern::two_missing();
        // synthetic linear task: missing beams from history + partials
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut beam_log = Vec::new();
        let mut v = [0.5, 0.2, 0.4, 0.3];
        for _ in 0..400 {
            for b in 0..4 {
                v[b] += rng.gen_range(-0.02..0.02);
            }
            beam_log.push(Vector4::new(v[0], v[1], v[2], v[3]));
        }
        let dataset = build_dataset(&beam_log, &pattern).unwrap();
        let model = RegressorModel::init(&pattern, OutputActivation::Linear, 1);
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let (_, curve) = train(&model, &dataset, &cfg).unwrap();
        assert!(curve.last().unwrap() < &(0.5 * curve[0]));

        let (_, curve2) = train(&model, &dataset, &cfg).unwrap();
        assert_eq!(curve, curve2);
    }

    #[test]
    fn train_empty_dataset_rejected() {
        let model =
            RegressorModel::init(&MissingPattern::two_missing(), OutputActivation::Linear, 1);
        assert!(train(&model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip_and_shape_validation() {
        let m = RegressorModel::init(&MissingPattern::three_missing(), OutputActivation::Relu, 77);
        let v = m.to_json();
        let back = RegressorModel::from_json(&v).unwrap();
        assert_eq!(m, back);

        let mut broken = v.clone();
        broken["w1"] = json!([1.0, 2.0]);
        assert!(RegressorModel::from_json(&broken).is_err());
        let mut bad_n = v;
        bad_n["n"] = json!(4);
        assert!(RegressorModel::from_json(&bad_n).is_err());
    }
}
