//! Two-layer fully connected network that maps log-permeability patches to
//! basis-function windows: ReLU hidden layer with optional batch
//! normalization, inverted dropout, hard-sigmoid outputs, Adam with an
//! optional max-norm constraint, and early stopping on validation cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use std::path::Path;

use crate::dense::gemm;
use crate::error::{CoreError, Result};
use crate::io::Container;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// max(0, min(1, 0.2x + 0.5)), the output activation.
pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

/// Subgradient of [`hard_sigmoid`]: 0.2 on the closed linear segment, 0 when
/// saturated. The kink points go with the linear side.
fn hard_sigmoid_grad(x: f64) -> f64 {
    if (-2.5..=2.5).contains(&x) {
        0.2
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
    pub max_norm: Option<f64>,
    pub init_seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::Config("network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let Some(c) = self.max_norm {
            if !(c > 0.0) {
                return Err(CoreError::Config(format!("max-norm bound {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-feature standardization fitted on the training inputs and stored with
/// the model so inference sees the same scaling.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(inputs: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || inputs.is_empty() || inputs.len() % dim != 0 {
            return Err(CoreError::Shape(format!(
                "normalizer input length {} not a positive multiple of dim {dim}",
                inputs.len()
            )));
        }
        let n = inputs.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in inputs.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in inputs.chunks_exact(dim) {
            for (s, (&v, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|&s| {
                let sd = (s / n as f64).sqrt();
                // constant features would otherwise divide by zero
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, inputs: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        let mut out = inputs.to_vec();
        for row in out.chunks_exact_mut(dim) {
            for (v, (&m, &s)) in row.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// Weight layout is row-major: `w1` is input_dim x hidden_dim (column j holds
/// the incoming weights of hidden unit j), `w2` is hidden_dim x output_dim.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub normalizer: Normalizer,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

struct ForwardCache {
    n: usize,
    /// Pre-activation after batch norm (or the raw affine when it is off).
    z1t: Vec<f64>,
    /// Normalized pre-activation, only filled when batch norm is on.
    z1h: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// 1/sqrt(var + eps) actually used in the pass (batch or running).
    inv_std: Vec<f64>,
    /// Hidden activations after ReLU and dropout, the input to layer 2.
    a_drop: Vec<f64>,
    z2: Vec<f64>,
    out: Vec<f64>,
}

impl MlpModel {
    /// He-scaled normal init for the ReLU layer, smaller scale for the output
    /// layer, zero biases; deterministic in `config.init_seed`.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let (d, h, o) = (config.input_dim, config.hidden_dim, config.output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let s1 = (2.0 / d as f64).sqrt();
        let s2 = (1.0 / h as f64).sqrt();
        let w1 = (0..d * h).map(|_| s1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let w2 = (0..h * o).map(|_| s2 * rng.sample::<f64, _>(StandardNormal)).collect();
        let bn = config.use_batchnorm.then(|| BatchNorm::new(h));
        Ok(MlpModel {
            normalizer: Normalizer::identity(d),
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; o],
            bn,
            config,
        })
    }

    fn batch_count(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.config.input_dim;
        if inputs.is_empty() || inputs.len() % d != 0 {
            return Err(CoreError::Shape(format!(
                "input length {} not a positive multiple of input dim {d}",
                inputs.len()
            )));
        }
        Ok(inputs.len() / d)
    }

    /// Deterministic inference on a row-major batch.
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let n = self.batch_count(inputs)?;
        let xn = self.normalizer.apply(inputs);
        Ok(self.forward_core(&xn, n, Mode::Infer, None).out)
    }

    /// Forward pass in either mode; train mode draws a fresh dropout mask
    /// from `rng` (one uniform per hidden activation, row-major).
    pub fn forward(&self, inputs: &[f64], mode: Mode, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let n = self.batch_count(inputs)?;
        let xn = self.normalizer.apply(inputs);
        let mask = if mode == Mode::Train { self.dropout_mask(n, rng) } else { None };
        Ok(self.forward_core(&xn, n, mode, mask.as_deref()).out)
    }

    /// J = (1/N) sum_i ||y_i - f(x_i)||^2 and its gradient for every
    /// parameter tensor, via reverse accumulation.
    pub fn loss_and_grad(
        &self,
        inputs: &[f64],
        targets: &[f64],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(f64, Gradients)> {
        let n = self.batch_count(inputs)?;
        if targets.len() != n * self.config.output_dim {
            return Err(CoreError::Shape(format!(
                "target length {} does not match {} samples of dim {}",
                targets.len(),
                n,
                self.config.output_dim
            )));
        }
        let xn = self.normalizer.apply(inputs);
        let mask = if mode == Mode::Train { self.dropout_mask(n, rng) } else { None };
        let cache = self.forward_core(&xn, n, mode, mask.as_deref());
        Ok(self.backward(&xn, targets, &cache, mask.as_deref(), mode))
    }

    fn dropout_mask(&self, n: usize, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let rate = self.config.dropout_rate;
        if rate == 0.0 {
            return None;
        }
        let scale = 1.0 / (1.0 - rate);
        Some(
            (0..n * self.config.hidden_dim)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                .collect(),
        )
    }

    fn forward_core(&self, xn: &[f64], n: usize, mode: Mode, mask: Option<&[f64]>) -> ForwardCache {
        let (d, h, o) = (self.config.input_dim, self.config.hidden_dim, self.config.output_dim);
        let mut z1 = vec![0.0; n * h];
        for row in z1.chunks_exact_mut(h) {
            row.copy_from_slice(&self.b1);
        }
        gemm(false, false, n, d, h, 1.0, xn, &self.w1, 1.0, &mut z1);

        let mut z1h = Vec::new();
        let mut batch_mean = Vec::new();
        let mut batch_var = Vec::new();
        let mut inv_std = Vec::new();
        if let Some(bn) = &self.bn {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; h];
                    for row in z1.chunks_exact(h) {
                        for (m, &v) in mean.iter_mut().zip(row) {
                            *m += v;
                        }
                    }
                    for m in &mut mean {
                        *m /= n as f64;
                    }
                    let mut var = vec![0.0; h];
                    for row in z1.chunks_exact(h) {
                        for (s, (&v, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    for s in &mut var {
                        *s /= n as f64; // biased, matching the running update
                    }
                    (mean, var)
                }
                Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            inv_std = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            z1h = vec![0.0; n * h];
            for (zrow, hrow) in z1.chunks_exact_mut(h).zip(z1h.chunks_exact_mut(h)) {
                for j in 0..h {
                    let xh = (zrow[j] - mean[j]) * inv_std[j];
                    hrow[j] = xh;
                    zrow[j] = bn.gamma[j] * xh + bn.beta[j];
                }
            }
            batch_mean = mean;
            batch_var = var;
        }
        let z1t = z1;

        let mut a_drop: Vec<f64> = z1t.iter().map(|&z| z.max(0.0)).collect();
        if let Some(m) = mask {
            for (a, &f) in a_drop.iter_mut().zip(m) {
                *a *= f;
            }
        }

        let mut z2 = vec![0.0; n * o];
        for row in z2.chunks_exact_mut(o) {
            row.copy_from_slice(&self.b2);
        }
        gemm(false, false, n, h, o, 1.0, &a_drop, &self.w2, 1.0, &mut z2);
        let out = z2.iter().map(|&z| hard_sigmoid(z)).collect();

        ForwardCache { n, z1t, z1h, batch_mean, batch_var, inv_std, a_drop, z2, out }
    }

    fn backward(
        &self,
        xn: &[f64],
        targets: &[f64],
        cache: &ForwardCache,
        mask: Option<&[f64]>,
        mode: Mode,
    ) -> (f64, Gradients) {
        let (d, h, o) = (self.config.input_dim, self.config.hidden_dim, self.config.output_dim);
        let n = cache.n;
        let nf = n as f64;

        let mut cost = 0.0;
        let mut g2 = vec![0.0; n * o];
        for i in 0..n * o {
            let r = cache.out[i] - targets[i];
            cost += r * r;
            g2[i] = 2.0 / nf * r * hard_sigmoid_grad(cache.z2[i]);
        }
        cost /= nf;

        let mut gw2 = vec![0.0; h * o];
        gemm(true, false, h, n, o, 1.0, &cache.a_drop, &g2, 0.0, &mut gw2);
        let mut gb2 = vec![0.0; o];
        for row in g2.chunks_exact(o) {
            for (g, &v) in gb2.iter_mut().zip(row) {
                *g += v;
            }
        }

        // hidden-path gradient, reused in place through dropout and ReLU
        let mut gh = vec![0.0; n * h];
        gemm(false, true, n, o, h, 1.0, &g2, &self.w2, 0.0, &mut gh);
        if let Some(m) = mask {
            for (g, &f) in gh.iter_mut().zip(m) {
                *g *= f;
            }
        }
        for (g, &z) in gh.iter_mut().zip(&cache.z1t) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }

        let mut ggamma = Vec::new();
        let mut gbeta = Vec::new();
        if let Some(bn) = &self.bn {
            let mut sum1 = vec![0.0; h];
            let mut sumh = vec![0.0; h];
            for (grow, hrow) in gh.chunks_exact(h).zip(cache.z1h.chunks_exact(h)) {
                for j in 0..h {
                    sum1[j] += grow[j];
                    sumh[j] += grow[j] * hrow[j];
                }
            }
            ggamma = sumh.clone();
            gbeta = sum1.clone();
            match mode {
                Mode::Train => {
                    for (grow, hrow) in gh.chunks_exact_mut(h).zip(cache.z1h.chunks_exact(h)) {
                        for j in 0..h {
                            let scale = bn.gamma[j] * cache.inv_std[j] / nf;
                            grow[j] = scale * (nf * grow[j] - sum1[j] - hrow[j] * sumh[j]);
                        }
                    }
                }
                Mode::Infer => {
                    // running statistics are constants, so no batch coupling
                    for grow in gh.chunks_exact_mut(h) {
                        for j in 0..h {
                            grow[j] *= bn.gamma[j] * cache.inv_std[j];
                        }
                    }
                }
            }
        }

        let mut gw1 = vec![0.0; d * h];
        gemm(true, false, d, n, h, 1.0, xn, &gh, 0.0, &mut gw1);
        let mut gb1 = vec![0.0; h];
        for row in gh.chunks_exact(h) {
            for (g, &v) in gb1.iter_mut().zip(row) {
                *g += v;
            }
        }

        (cost, Gradients { w1: gw1, b1: gb1, w2: gw2, b2: gb2, gamma: ggamma, beta: gbeta })
    }

    fn update_running_stats(&mut self, cache: &ForwardCache) {
        if let Some(bn) = &mut self.bn {
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] =
                    BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.batch_mean[j];
                bn.running_var[j] =
                    BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * cache.batch_var[j];
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_provenance(path, "")
    }

    /// A nonempty `note` (say, a run manifest hash) is stored in the file
    /// metadata and ignored on load.
    pub fn save_with_provenance(&self, path: &Path, note: &str) -> Result<()> {
        let mut c = Container::new("msfv-model");
        if !note.is_empty() {
            c.set("provenance", note);
        }
        c.set("input_dim", self.config.input_dim);
        c.set("hidden_dim", self.config.hidden_dim);
        c.set("output_dim", self.config.output_dim);
        c.set("use_batchnorm", self.config.use_batchnorm);
        c.set("dropout_rate", self.config.dropout_rate);
        c.set("max_norm", self.config.max_norm.map_or("none".into(), |v| v.to_string()));
        c.set("init_seed", self.config.init_seed);
        c.add_section("norm_mean", self.normalizer.mean.clone());
        c.add_section("norm_std", self.normalizer.std.clone());
        c.add_section("w1", self.w1.clone());
        c.add_section("b1", self.b1.clone());
        c.add_section("w2", self.w2.clone());
        c.add_section("b2", self.b2.clone());
        if let Some(bn) = &self.bn {
            c.add_section("bn_gamma", bn.gamma.clone());
            c.add_section("bn_beta", bn.beta.clone());
            c.add_section("bn_running_mean", bn.running_mean.clone());
            c.add_section("bn_running_var", bn.running_var.clone());
        }
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, "msfv-model")?;
        let max_norm = match c.get("max_norm")? {
            "none" => None,
            raw => Some(raw.parse().map_err(|_| {
                CoreError::Format(format!("bad max_norm value {raw:?} in {}", path.display()))
            })?),
        };
        let config = MlpConfig {
            input_dim: c.get_parsed("input_dim")?,
            hidden_dim: c.get_parsed("hidden_dim")?,
            output_dim: c.get_parsed("output_dim")?,
            use_batchnorm: c.get_parsed("use_batchnorm")?,
            dropout_rate: c.get_parsed("dropout_rate")?,
            max_norm,
            init_seed: c.get_parsed("init_seed")?,
        };
        config.validate()?;
        let (d, h, o) = (config.input_dim, config.hidden_dim, config.output_dim);
        let take = |name: &str, len: usize| -> Result<Vec<f64>> {
            let s = c.section(name)?;
            if s.len() != len {
                return Err(CoreError::Format(format!(
                    "section {name:?} has {} values, expected {len}",
                    s.len()
                )));
            }
            Ok(s.to_vec())
        };
        let bn = if config.use_batchnorm {
            Some(BatchNorm {
                gamma: take("bn_gamma", h)?,
                beta: take("bn_beta", h)?,
                running_mean: take("bn_running_mean", h)?,
                running_var: take("bn_running_var", h)?,
            })
        } else {
            None
        };
        Ok(MlpModel {
            normalizer: Normalizer { mean: take("norm_mean", d)?, std: take("norm_std", d)? },
            w1: take("w1", d * h)?,
            b1: take("b1", h)?,
            w2: take("w2", h * o)?,
            b2: take("b2", o)?,
            bn,
            config,
        })
    }

    /// Scales any W1 column whose Euclidean norm exceeds `c` back onto the
    /// bound; columns are the incoming weights of each hidden unit.
    fn project_max_norm(&mut self) {
        let Some(c) = self.config.max_norm else { return };
        let (d, h) = (self.config.input_dim, self.config.hidden_dim);
        for j in 0..h {
            let mut s = 0.0;
            for i in 0..d {
                s += self.w1[i * h + j] * self.w1[i * h + j];
            }
            if s > c * c {
                let f = c / s.sqrt();
                for i in 0..d {
                    self.w1[i * h + j] *= f;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators per parameter tensor, in the order
/// w1, b1, w2, b2, gamma, beta.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let sizes: Vec<usize> = tensor_sizes(model);
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update over every tensor, followed by the
    /// max-norm projection when the model is configured with one.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, p: &AdamParams) {
        self.t += 1;
        let c1 = 1.0 - p.beta1.powi(self.t as i32);
        let c2 = 1.0 - p.beta2.powi(self.t as i32);
        let mut slot = 0;
        let apply = |theta: &mut [f64], g: &[f64], m: &mut Vec<f64>, v: &mut Vec<f64>| {
            debug_assert_eq!(theta.len(), g.len());
            for i in 0..theta.len() {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                theta[i] -= p.learning_rate * mhat / (vhat.sqrt() + p.eps);
            }
        };
        apply(&mut model.w1, &grads.w1, &mut self.m[slot], &mut self.v[slot]);
        slot += 1;
        apply(&mut model.b1, &grads.b1, &mut self.m[slot], &mut self.v[slot]);
        slot += 1;
        apply(&mut model.w2, &grads.w2, &mut self.m[slot], &mut self.v[slot]);
        slot += 1;
        apply(&mut model.b2, &grads.b2, &mut self.m[slot], &mut self.v[slot]);
        slot += 1;
        if let Some(bn) = &mut model.bn {
            apply(&mut bn.gamma, &grads.gamma, &mut self.m[slot], &mut self.v[slot]);
            slot += 1;
            apply(&mut bn.beta, &grads.beta, &mut self.m[slot], &mut self.v[slot]);
            let _ = slot;
        }
        model.project_max_norm();
    }
}

fn tensor_sizes(model: &MlpModel) -> Vec<usize> {
    let mut sizes = vec![model.w1.len(), model.b1.len(), model.w2.len(), model.b2.len()];
    if let Some(bn) = &model.bn {
        sizes.push(bn.gamma.len());
        sizes.push(bn.beta.len());
    }
    sizes
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// None runs full-batch steps, one per epoch.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    /// Optional L2 penalty coefficient on all parameters; off by default.
    pub l2_alpha: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: None,
            max_epochs: 5000,
            patience: 100,
            l2_alpha: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning rate must be positive".into()));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(CoreError::Config("patience and max epochs must be at least 1".into()));
        }
        if let Some(bs) = self.batch_size {
            if bs == 0 {
                return Err(CoreError::Config("batch size must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_cost: Vec<f64>,
    pub val_cost: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_cost: f64,
    pub final_r2: f64,
}

/// Fits the network on `(x_train, y_train)`, early-stopping on validation
/// cost with checkpoint restore; deterministic given the two seeds.
pub fn train(
    x_train: &[f64],
    y_train: &[f64],
    x_val: &[f64],
    y_val: &[f64],
    mlp_config: &MlpConfig,
    tc: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    mlp_config.validate()?;
    tc.validate()?;
    let (d, o) = (mlp_config.input_dim, mlp_config.output_dim);
    let n_train = checked_rows(x_train, d, "training inputs")?;
    let n_val = checked_rows(x_val, d, "validation inputs")?;
    if y_train.len() != n_train * o || y_val.len() != n_val * o {
        return Err(CoreError::Shape("target lengths do not match input row counts".into()));
    }

    let mut model = MlpModel::new(mlp_config.clone())?;
    model.normalizer = Normalizer::fit(x_train, d)?;
    let xn_train = model.normalizer.apply(x_train);
    let xn_val = model.normalizer.apply(x_val);

    let adam = AdamParams {
        learning_rate: tc.learning_rate,
        beta1: tc.beta1,
        beta2: tc.beta2,
        eps: tc.eps_adam,
    };
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);

    let mut report = TrainReport {
        train_cost: Vec::new(),
        val_cost: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_cost: f64::INFINITY,
        final_r2: 0.0,
    };
    let mut best_model = model.clone();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut stopped = tc.max_epochs;

    for epoch in 1..=tc.max_epochs {
        let mut epoch_cost = 0.0;
        let mut steps = 0usize;
        let run_batch = |model: &mut MlpModel,
                             state: &mut AdamState,
                             rng: &mut ChaCha8Rng,
                             xb: &[f64],
                             yb: &[f64],
                             nb: usize| {
            let mask = model.dropout_mask(nb, rng);
            let cache = model.forward_core(xb, nb, Mode::Train, mask.as_deref());
            let (mut cost, mut grads) =
                model.backward(xb, yb, &cache, mask.as_deref(), Mode::Train);
            if let Some(alpha) = tc.l2_alpha {
                cost += alpha * 0.5 * param_sq_norm(model);
                add_l2(&mut grads, model, alpha);
            }
            model.update_running_stats(&cache);
            state.step(model, &grads, &adam);
            cost
        };
        match tc.batch_size {
            None => {
                epoch_cost += run_batch(&mut model, &mut state, &mut rng, &xn_train, y_train, n_train);
                steps += 1;
            }
            Some(bs) => {
                shuffle(&mut order, &mut rng);
                for chunk in order.chunks(bs) {
                    let nb = chunk.len();
                    let mut xb = vec![0.0; nb * d];
                    let mut yb = vec![0.0; nb * o];
                    for (r, &idx) in chunk.iter().enumerate() {
                        xb[r * d..(r + 1) * d].copy_from_slice(&xn_train[idx * d..(idx + 1) * d]);
                        yb[r * o..(r + 1) * o].copy_from_slice(&y_train[idx * o..(idx + 1) * o]);
                    }
                    epoch_cost += run_batch(&mut model, &mut state, &mut rng, &xb, &yb, nb);
                    steps += 1;
                }
            }
        }
        report.train_cost.push(epoch_cost / steps as f64);

        let val_out = model.forward_core(&xn_val, n_val, Mode::Infer, None).out;
        let val_cost = mean_squared_cost(&val_out, y_val, n_val);
        report.val_cost.push(val_cost);
        if val_cost < report.best_val_cost {
            report.best_val_cost = val_cost;
            report.best_epoch = epoch;
            best_model = model.clone();
        }
        if epoch - report.best_epoch >= tc.patience {
            stopped = epoch;
            break;
        }
    }
    report.stopped_epoch = stopped;

    let model = best_model;
    let val_out = model.forward_core(&xn_val, n_val, Mode::Infer, None).out;
    // degenerate validation targets (e.g. a single sample) leave the score
    // undefined; training itself is still valid
    report.final_r2 = r2_score(&val_out, y_val, o).unwrap_or(f64::NAN);
    Ok((model, report))
}

fn checked_rows(inputs: &[f64], dim: usize, what: &str) -> Result<usize> {
    if inputs.is_empty() {
        return Err(CoreError::Config(format!("{what} are empty")));
    }
    if inputs.len() % dim != 0 {
        return Err(CoreError::Shape(format!(
            "{what} length {} not a multiple of dim {dim}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / dim)
}

fn param_sq_norm(model: &MlpModel) -> f64 {
    let mut s: f64 = model.w1.iter().chain(&model.b1).chain(&model.w2).chain(&model.b2).map(|&x| x * x).sum();
    if let Some(bn) = &model.bn {
        s += bn.gamma.iter().chain(&bn.beta).map(|&x| x * x).sum::<f64>();
    }
    s
}

fn add_l2(grads: &mut Gradients, model: &MlpModel, alpha: f64) {
    let pairs: [(&mut Vec<f64>, &Vec<f64>); 4] = [
        (&mut grads.w1, &model.w1),
        (&mut grads.b1, &model.b1),
        (&mut grads.w2, &model.w2),
        (&mut grads.b2, &model.b2),
    ];
    for (g, t) in pairs {
        for (gi, &ti) in g.iter_mut().zip(t) {
            *gi += alpha * ti;
        }
    }
    if let Some(bn) = &model.bn {
        for (gi, &ti) in grads.gamma.iter_mut().zip(&bn.gamma) {
            *gi += alpha * ti;
        }
        for (gi, &ti) in grads.beta.iter_mut().zip(&bn.beta) {
            *gi += alpha * ti;
        }
    }
}

fn shuffle(order: &mut [usize], rng: &mut impl Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// (1/N) sum of squared residuals over a row-major batch of N samples.
pub fn mean_squared_cost(predictions: &[f64], targets: &[f64], n: usize) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    let s: f64 = predictions.iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)).sum();
    s / n as f64
}

/// 1 - sum_i ||t_i - p_i||^2 / sum_i ||t_i - mean||^2 with the per-component
/// sample mean; 1.0 is perfect, 0.0 matches always predicting the mean.
pub fn r2_score(predictions: &[f64], targets: &[f64], dim: usize) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(CoreError::Shape(format!(
            "prediction length {} vs target length {}",
            predictions.len(),
            targets.len()
        )));
    }
    let n = checked_rows(targets, dim, "r2 targets")?;
    let mut mean = vec![0.0; dim];
    for row in targets.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (prow, trow) in predictions.chunks_exact(dim).zip(targets.chunks_exact(dim)) {
        for j in 0..dim {
            ss_res += (trow[j] - prow[j]) * (trow[j] - prow[j]);
            ss_tot += (trow[j] - mean[j]) * (trow[j] - mean[j]);
        }
    }
    if ss_tot == 0.0 {
        return Err(CoreError::Numerical(
            "coefficient of determination undefined: all targets identical".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}
