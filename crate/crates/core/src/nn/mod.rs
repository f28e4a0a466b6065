//! Feed-forward classifier with an embedding head, trained by SGD with
//! momentum, weight decay and a step learning-rate schedule.
//!
//! Layout: `input -> [dense -> activation -> dropout]* -> dense (embedding)
//! -> dense (logits)`. Under the supervised contrastive loss the embedding is
//! L2-normalized and the logit head is fitted with cross-entropy on the
//! detached normalized embedding.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{cross_entropy, jitter_view, softmax, stack_views, supcon_loss_raw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl MlpConfig {
    /// `d -> 64 -> 64 -> 32 -> K`, dropout 0.2, ReLU.
    pub fn desk(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            embedding_dim: 32,
            num_classes,
            dropout: 0.2,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(invalid("input_dim and num_classes must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("need at least one non-empty hidden layer"));
        }
        if self.embedding_dim < 2 {
            return Err(invalid("embedding_dim must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    SupervisedContrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// First epoch (0-based) trained at the decayed rate.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Stddev of the Gaussian jitter producing the second contrastive view.
    pub jitter: f64,
    pub seed: u64,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 200,
            lr_decay_epoch: 160,
            lr_decay_factor: 0.1,
            batch_size: 64,
            loss: LossKind::CrossEntropy,
            temperature: 0.1,
            jitter: 0.05,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay_factor", self.lr_decay_factor),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be >= 1"));
        }
        if self.lr_decay_epoch > self.epochs {
            return Err(invalid("lr_decay_epoch must not exceed epochs"));
        }
        if !(self.jitter >= 0.0) {
            return Err(invalid("jitter must be >= 0"));
        }
        if self.max_grad_norm.is_some_and(|c| !(c > 0.0) || !c.is_finite()) {
            return Err(invalid("max_grad_norm must be > 0"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// Affine layer `y = x W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive stddev");
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Model parameters. Layer order: hidden layers, embedding, logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Dense>,
    normalize_embeddings: bool,
}

/// Eval-mode outputs.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub embeddings: Array2<f64>,
}

struct HiddenCache {
    pre: Array2<f64>,
    out: Array2<f64>,
    mask: Option<Array2<f64>>,
}

struct ForwardCache {
    input: Array2<f64>,
    hidden: Vec<HiddenCache>,
    embedding: Array2<f64>,
    norms: Option<Array1<f64>>,
    logits: Array2<f64>,
}

/// Gradients laid out like [`Mlp`]'s layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales down to `max_norm` if the global norm exceeds it.
    pub fn clip(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm {
            let f = max_norm / norm;
            for l in &mut self.layers {
                l.weight.mapv_inplace(|g| g * f);
                l.bias.mapv_inplace(|g| g * f);
            }
        }
    }
}

/// Loss values from one objective evaluation. Under the contrastive loss
/// `primary` is the contrastive term (which trains the backbone) and `head`
/// the cross-entropy of the detached head; under cross-entropy both are the
/// same value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub primary: f64,
    pub head: f64,
}

impl ObjectiveValue {
    pub fn total(&self, loss: LossKind) -> f64 {
        match loss {
            LossKind::CrossEntropy => self.primary,
            LossKind::SupervisedContrastive => self.primary + self.head,
        }
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden.len() + 2);
        let mut fan_in = config.input_dim;
        let gain = match config.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        for &width in &config.hidden {
            layers.push(Dense::init(fan_in, width, gain, rng));
            fan_in = width;
        }
        layers.push(Dense::init(fan_in, config.embedding_dim, 1.0, rng));
        layers.push(Dense::init(config.embedding_dim, config.num_classes, 1.0, rng));
        Ok(Self {
            config,
            layers,
            normalize_embeddings: false,
        })
    }

    pub(crate) fn from_parts(config: MlpConfig, layers: Vec<Dense>, normalize_embeddings: bool) -> Result<Self> {
        config.validate()?;
        let template = Self {
            config: config.clone(),
            layers: Vec::new(),
            normalize_embeddings,
        };
        let shapes = template.layer_shapes();
        if layers.len() != shapes.len()
            || layers
                .iter()
                .zip(&shapes)
                .any(|(l, &(i, o))| l.weight.dim() != (i, o) || l.bias.len() != o)
        {
            return Err(Error::Checkpoint("tensor shapes do not match the architecture".into()));
        }
        Ok(Self {
            config,
            layers,
            normalize_embeddings,
        })
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.config.input_dim;
        for &w in &self.config.hidden {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, self.config.embedding_dim));
        shapes.push((self.config.embedding_dim, self.config.num_classes));
        shapes
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn normalizes_embeddings(&self) -> bool {
        self.normalize_embeddings
    }

    pub fn set_normalize_embeddings(&mut self, on: bool) {
        self.normalize_embeddings = on;
    }

    /// Zeroes the logit head so every prediction is uniform.
    pub fn zero_head(&mut self) {
        let head = self.layers.last_mut().expect("head layer");
        head.weight.fill(0.0);
        head.bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Flat parameter access in layer order (weight, then bias).
    pub fn param(&self, index: usize) -> f64 {
        *flat_ref(&self.layers, index)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *flat_mut(&mut self.layers, index) = value;
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut R>) -> ForwardCache {
        let act = self.config.activation;
        let p = self.config.dropout;
        let n_hidden = self.config.hidden.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut current = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let pre = layer.forward(current.view());
            let mut out = pre.mapv(|v| act.apply(v));
            let mask = match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m =
                        Array2::from_shape_simple_fn(out.raw_dim(), || if r.random::<f64>() < p { 0.0 } else { keep });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            current = out.clone();
            hidden.push(HiddenCache { pre, out, mask });
        }
        let raw_embedding = self.layers[n_hidden].forward(current.view());
        let (embedding, norms) = if self.normalize_embeddings {
            let norms = raw_embedding
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt().max(1e-12))
                .collect::<Array1<f64>>();
            let z = &raw_embedding / &norms.view().insert_axis(Axis(1));
            (z, Some(norms))
        } else {
            (raw_embedding, None)
        };
        let logits = self.layers[n_hidden + 1].forward(embedding.view());
        ForwardCache {
            input: x.to_owned(),
            hidden,
            embedding,
            norms,
            logits,
        }
    }

    /// Deterministic eval-mode forward pass.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let c = self.run::<rand_chacha::ChaCha8Rng>(x, None);
        Ok(ForwardOutput {
            logits: c.logits,
            embeddings: c.embedding,
        })
    }

    /// Forward pass with fresh dropout masks drawn from `rng`.
    pub fn forward_stochastic<R: Rng + ?Sized>(&self, x: ArrayView2<'_, f64>, rng: &mut R) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let c = self.run(x, Some(rng));
        Ok(ForwardOutput {
            logits: c.logits,
            embeddings: c.embedding,
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(softmax(self.forward(x)?.logits.view()))
    }

    /// `passes x n x K` softmax outputs, each pass with independent dropout
    /// masks.
    pub fn mc_dropout_probs<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        passes: usize,
        rng: &mut R,
    ) -> Result<Array3<f64>> {
        if passes == 0 {
            return Err(invalid("MC dropout needs at least one pass"));
        }
        self.check_input(x)?;
        if self.config.dropout == 0.0 {
            log::warn!("MC dropout with rate 0: every pass is identical");
        }
        let n = x.nrows();
        let k = self.config.num_classes;
        let mut out = Array3::zeros((passes, n, k));
        // The first pre-activation does not depend on the masks.
        let first_out = self.layers[0].forward(x).mapv(|v| self.config.activation.apply(v));
        for mut slot in out.outer_iter_mut() {
            let logits = self.logits_from_first_hidden(&first_out, rng);
            slot.assign(&softmax(logits.view()));
        }
        Ok(out)
    }

    fn logits_from_first_hidden<R: Rng + ?Sized>(&self, first: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        let mut drop = |h: &mut Array2<f64>| {
            if p > 0.0 {
                h.mapv_inplace(|v| if rng.random::<f64>() < p { 0.0 } else { v * keep });
            }
        };
        let n_hidden = self.config.hidden.len();
        let mut h = first.clone();
        drop(&mut h);
        for layer in &self.layers[1..n_hidden] {
            h = layer.forward(h.view()).mapv(|v| self.config.activation.apply(v));
            drop(&mut h);
        }
        let mut e = self.layers[n_hidden].forward(h.view());
        if self.normalize_embeddings {
            crate::linalg::normalize_rows(&mut e);
        }
        self.layers[n_hidden + 1].forward(e.view())
    }

    fn backward(&self, cache: &ForwardCache, d_embedding: Array2<f64>, d_logits: &Array2<f64>) -> Gradients {
        let n_hidden = self.config.hidden.len();
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();

        // Head: input is the (possibly detached) embedding.
        grads[n_hidden + 1].weight = cache.embedding.t().dot(d_logits);
        grads[n_hidden + 1].bias = d_logits.sum_axis(Axis(0));

        let d_raw = match &cache.norms {
            None => d_embedding,
            Some(norms) => {
                // z = e / |e|  =>  de = (dz - z (z . dz)) / |e|
                let z = &cache.embedding;
                let proj = (z * &d_embedding).sum_axis(Axis(1)).insert_axis(Axis(1));
                (&d_embedding - &(z * &proj)) / norms.view().insert_axis(Axis(1))
            }
        };

        let embed_in = match cache.hidden.last() {
            Some(h) => h.out.view(),
            None => cache.input.view(),
        };
        grads[n_hidden].weight = embed_in.t().dot(&d_raw);
        grads[n_hidden].bias = d_raw.sum_axis(Axis(0));
        let mut d_out = d_raw.dot(&self.layers[n_hidden].weight.t());

        for l in (0..n_hidden).rev() {
            let h = &cache.hidden[l];
            if let Some(mask) = &h.mask {
                d_out *= mask;
            }
            let act = self.config.activation;
            let mut d_pre = d_out;
            ndarray::Zip::from(&mut d_pre)
                .and(&h.pre)
                .for_each(|g, &pre| *g *= act.derivative(pre, act.apply(pre)));
            let input = if l == 0 {
                cache.input.view()
            } else {
                cache.hidden[l - 1].out.view()
            };
            grads[l].weight = input.t().dot(&d_pre);
            grads[l].bias = d_pre.sum_axis(Axis(0));
            d_out = d_pre.dot(&self.layers[l].weight.t());
        }
        Gradients { layers: grads }
    }

    /// Objective value and gradients on one batch. For the contrastive loss
    /// `x`/`labels` must already hold both views.
    pub fn objective_and_gradients<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        loss: LossKind,
        temperature: f64,
        rng: Option<&mut R>,
    ) -> Result<(ObjectiveValue, Gradients)> {
        self.check_input(x)?;
        if self.normalize_embeddings != (loss == LossKind::SupervisedContrastive) {
            return Err(invalid("embedding normalization does not match the loss kind"));
        }
        let cache = self.run(x, rng);
        let (head_loss, d_logits) = cross_entropy(cache.logits.view(), labels)?;
        match loss {
            LossKind::CrossEntropy => {
                let d_embedding = d_logits.dot(&self.layers.last().expect("head").weight.t());
                let grads = self.backward(&cache, d_embedding, &d_logits);
                Ok((
                    ObjectiveValue {
                        primary: head_loss,
                        head: head_loss,
                    },
                    grads,
                ))
            }
            LossKind::SupervisedContrastive => {
                let (con, d_z) = supcon_loss_raw(cache.embedding.view(), labels, temperature)?;
                let grads = self.backward(&cache, d_z, &d_logits);
                Ok((
                    ObjectiveValue {
                        primary: con,
                        head: head_loss,
                    },
                    grads,
                ))
            }
        }
    }
}

fn flat_ref(layers: &[Dense], mut index: usize) -> &f64 {
    for l in layers {
        let w = l.weight.len();
        if index < w {
            return l
                .weight
                .as_slice()
                .expect("standard layout")
                .get(index)
                .expect("in range");
        }
        index -= w;
        let b = l.bias.len();
        if index < b {
            return &l.bias[index];
        }
        index -= b;
    }
    panic!("parameter index out of range");
}

fn flat_mut(layers: &mut [Dense], mut index: usize) -> &mut f64 {
    for l in layers {
        let w = l.weight.len();
        if index < w {
            return l
                .weight
                .as_slice_mut()
                .expect("standard layout")
                .get_mut(index)
                .expect("in range");
        }
        index -= w;
        let b = l.bias.len();
        if index < b {
            return &mut l.bias[index];
        }
        index -= b;
    }
    panic!("parameter index out of range");
}

impl Gradients {
    pub fn get(&self, index: usize) -> f64 {
        *flat_ref(&self.layers, index)
    }
}

/// Momentum SGD with coupled weight decay:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Dense>,
}

impl Sgd {
    pub fn new(model: &Mlp, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((layer, vel), g) in model.layers.iter_mut().zip(&mut self.velocity).zip(&grads.layers) {
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut vel.weight)
                .and(&g.weight)
                .for_each(|w, v, &g| {
                    *v = mu * *v + (g + wd * *w);
                    *w -= lr * *v;
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut vel.bias)
                .and(&g.bias)
                .for_each(|w, v, &g| {
                    *v = mu * *v + (g + wd * *w);
                    *w -= lr * *v;
                });
        }
    }
}

/// Per-epoch traces from [`train`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean objective (contrastive + head for the contrastive loss) per epoch.
    pub loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

/// Trains `model` in place. Dropout is active during training; the model is
/// left ready for eval-mode inference.
pub fn train<R: Rng + ?Sized>(
    model: &mut Mlp,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    config.validate()?;
    model.check_input(x)?;
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.config.num_classes) {
        return Err(invalid(format!("label {bad} >= num_classes")));
    }
    model.normalize_embeddings = config.loss == LossKind::SupervisedContrastive;

    let mut opt = Sgd::new(model, config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (value, mut grads) = match config.loss {
                LossKind::CrossEntropy => {
                    model.objective_and_gradients(xb.view(), &yb, config.loss, config.temperature, Some(rng))?
                }
                LossKind::SupervisedContrastive => {
                    let second = jitter_view(xb.view(), config.jitter, rng)?;
                    let (xv, yv) = stack_views(xb.view(), second.view(), &yb);
                    model.objective_and_gradients(xv.view(), &yv, config.loss, config.temperature, Some(rng))?
                }
            };
            let total = value.total(config.loss);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(c) = config.max_grad_norm {
                grads.clip(c);
            }
            opt.step(model, &grads, lr);
            if !model.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += total;
            batches += 1;
        }
        report.loss.push(epoch_loss / batches as f64);
        report.learning_rate.push(lr);
    }
    Ok(report)
}

/// Index of the largest entry in each row; ties go to the lower index.
pub fn argmax_rows(m: ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
