//! The two pixel classifiers.
//!
//! * `Main` (feature set A): one hidden ReLU layer whose activations are
//!   scaled by a learned sigmoid gate and concatenated with the raw input
//!   before the output layer, a small gated residual fusion.
//! * `Co` (feature set B): a linear softmax classifier.
//!
//! Both multiply their logits by a learnable temperature `τ`.
//! Weight matrices are stored `[in, out]`, row-major.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{
    evaluate_pages, loss_and_grad, predict_page, train, train_encoded, train_with_observer,
    PixelBatch, StopReason, TrainConfig, TrainMeta,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{normalized_features, FeatureSetId, Normalizer};
use crate::raster::{GrayImage, Mask, CLASS_COUNT};
use crate::rng::SplitMix64;

pub const MAIN_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Main,
    Co,
}

impl AgentKind {
    pub fn feature_set(self) -> FeatureSetId {
        match self {
            AgentKind::Main => FeatureSetId::A,
            AgentKind::Co => FeatureSetId::B,
        }
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn layer_shapes(self) -> Vec<(&'static str, Vec<usize>)> {
        let d = self.feature_set().dim();
        match self {
            AgentKind::Main => vec![
                ("W1", vec![d, MAIN_HIDDEN]),
                ("b1", vec![MAIN_HIDDEN]),
                ("gate", vec![MAIN_HIDDEN]),
                ("W2", vec![d + MAIN_HIDDEN, CLASS_COUNT]),
                ("b2", vec![CLASS_COUNT]),
            ],
            AgentKind::Co => vec![("W", vec![d, CLASS_COUNT]), ("b", vec![CLASS_COUNT])],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub kind: AgentKind,
    pub feature_set: FeatureSetId,
    pub class_count: usize,
    pub temperature: f64,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub train_meta: Option<TrainMeta>,
}

/// Gradient of the loss with respect to every layer and the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl Gradients {
    pub fn zeros_like(model: &AgentModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.values.len()])
                .collect(),
            temperature: 0.0,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AgentModel {
    /// All parameters zero, `τ = 1`.
    pub fn zeros(kind: AgentKind) -> Self {
        Self {
            kind,
            feature_set: kind.feature_set(),
            class_count: CLASS_COUNT,
            temperature: 1.0,
            layers: kind
                .layer_shapes()
                .into_iter()
                .map(|(name, shape)| Layer {
                    name: name.to_string(),
                    values: vec![0.0; shape.iter().product()],
                    shape,
                })
                .collect(),
            seed: 0,
            train_meta: None,
        }
    }

    /// Weight matrices drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
    /// biases and the gate start at zero, `τ = 1`.
    pub fn init(kind: AgentKind, seed: u64) -> Self {
        let mut model = Self::zeros(kind);
        model.seed = seed;
        let mut rng = SplitMix64::derive_named(seed, "agent-init");
        for layer in &mut model.layers {
            if layer.shape.len() == 2 {
                let bound = 1.0 / (layer.shape[0] as f64).sqrt();
                for v in &mut layer.values {
                    *v = rng.uniform(-bound, bound);
                }
            }
        }
        model
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum::<usize>() + 1
    }

    /// Raw logits `z` for one pixel (scores are `τ·z`). `hidden` must hold
    /// `MAIN_HIDDEN` values for the main agent; it receives `g ⊙ h`.
    fn logits_into(&self, x: &[f64], hidden: &mut [f64], gate: &[f64], z: &mut [f64; CLASS_COUNT]) {
        match self.kind {
            AgentKind::Main => {
                let d = x.len();
                let (w1, b1, w2, b2) = (
                    &self.layers[0].values,
                    &self.layers[1].values,
                    &self.layers[3].values,
                    &self.layers[4].values,
                );
                hidden.copy_from_slice(b1);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &w1[i * MAIN_HIDDEN..(i + 1) * MAIN_HIDDEN];
                    for (h, w) in hidden.iter_mut().zip(row) {
                        *h += xi * w;
                    }
                }
                for (h, g) in hidden.iter_mut().zip(gate) {
                    *h = h.max(0.0) * g;
                }
                z.copy_from_slice(b2);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &w2[i * CLASS_COUNT..(i + 1) * CLASS_COUNT];
                    for (zk, w) in z.iter_mut().zip(row) {
                        *zk += xi * w;
                    }
                }
                for (j, &u) in hidden.iter().enumerate() {
                    let row = &w2[(d + j) * CLASS_COUNT..(d + j + 1) * CLASS_COUNT];
                    for (zk, w) in z.iter_mut().zip(row) {
                        *zk += u * w;
                    }
                }
            }
            AgentKind::Co => {
                let (w, b) = (&self.layers[0].values, &self.layers[1].values);
                z.copy_from_slice(b);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &w[i * CLASS_COUNT..(i + 1) * CLASS_COUNT];
                    for (zk, wv) in z.iter_mut().zip(row) {
                        *zk += xi * wv;
                    }
                }
            }
        }
    }

    pub(crate) fn gate_values(&self) -> Vec<f64> {
        match self.kind {
            AgentKind::Main => self.layers[2].values.iter().map(|&g| sigmoid(g)).collect(),
            AgentKind::Co => Vec::new(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<usize> {
        let d = self.feature_set.dim();
        if !len.is_multiple_of(d) {
            return Err(Error::contract(format!(
                "feature buffer of length {len} is not a multiple of {d} ({:?})",
                self.feature_set
            )));
        }
        Ok(len / d)
    }

    /// Visits the unscaled logits `z` of every pixel in a pixel-major buffer.
    pub(crate) fn for_each_logits(
        &self,
        features: &[f64],
        mut f: impl FnMut(usize, &[f64; CLASS_COUNT]),
    ) -> Result<()> {
        let n = self.check_dim(features.len())?;
        let d = self.feature_set.dim();
        let gate = self.gate_values();
        let mut hidden = [0.0; MAIN_HIDDEN];
        let mut z = [0.0; CLASS_COUNT];
        for i in 0..n {
            self.logits_into(&features[i * d..(i + 1) * d], &mut hidden, &gate, &mut z);
            f(i, &z);
        }
        Ok(())
    }

    /// Class scores `τ·z`, seven per pixel, for a pixel-major feature buffer.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(features.len() / self.feature_set.dim() * CLASS_COUNT);
        let tau = self.temperature;
        self.for_each_logits(features, |_, z| out.extend(z.iter().map(|v| tau * v)))?;
        Ok(out)
    }

    /// Per-pixel argmax over normalized features, ties to the lowest class.
    /// Softmax and the positive factor `τ` preserve the order of the logits,
    /// so the argmax is taken on `z` directly.
    pub fn predict_features(&self, features: &[f64]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(features.len() / self.feature_set.dim());
        self.for_each_logits(features, |_, z| out.push(argmax(z) as u8))?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.feature_set != self.kind.feature_set() {
            return bad(format!(
                "{:?} agent requires feature set {:?}",
                self.kind,
                self.kind.feature_set()
            ));
        }
        if self.class_count != CLASS_COUNT {
            return bad(format!("class_count {} != {CLASS_COUNT}", self.class_count));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature {} must be positive and finite",
                self.temperature
            ));
        }
        let expected = self.kind.layer_shapes();
        if expected.len() != self.layers.len() {
            return bad(format!(
                "expected {} layers, found {}",
                expected.len(),
                self.layers.len()
            ));
        }
        for ((name, shape), layer) in expected.iter().zip(&self.layers) {
            if layer.name != *name || layer.shape != *shape {
                return bad(format!(
                    "layer `{}` {:?} does not match expected `{name}` {shape:?}",
                    layer.name, layer.shape
                ));
            }
            if layer.values.len() != shape.iter().product::<usize>() {
                return bad(format!(
                    "layer `{name}` holds {} values",
                    layer.values.len()
                ));
            }
            if layer.values.iter().any(|v| !v.is_finite()) {
                return bad(format!("layer `{name}` has non-finite values"));
            }
        }
        Ok(())
    }

    /// True when every parameter and `τ` are bit-identical.
    pub fn same_parameters(&self, other: &AgentModel) -> bool {
        self.kind == other.kind
            && self.temperature.to_bits() == other.temperature.to_bits()
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Predicted class mask for a page image.
pub fn predict_mask(
    model: &AgentModel,
    image: &GrayImage,
    normalizer: &Normalizer,
) -> Result<Mask> {
    if normalizer.set_id != model.feature_set {
        return Err(Error::contract(format!(
            "normalizer for {:?} used with a {:?} agent",
            normalizer.set_id, model.feature_set
        )));
    }
    let stack = normalized_features(image, normalizer);
    let labels = model.predict_features(&stack.values)?;
    Mask::from_vec(image.width(), image.height(), labels)
}

/// Per-pixel class scores (`w·h·7`, pixel-major) for a page image.
pub fn score_volume(
    model: &AgentModel,
    image: &GrayImage,
    normalizer: &Normalizer,
) -> Result<Vec<f64>> {
    if normalizer.set_id != model.feature_set {
        return Err(Error::contract("normalizer and agent feature sets differ"));
    }
    let stack = normalized_features(image, normalizer);
    model.forward(&stack.values)
}
