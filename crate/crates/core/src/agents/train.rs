use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AgentKind, AgentModel, Gradients, MAIN_HIDDEN};
use crate::dataset::{encode_all, EncodedPage, PartitionTag, Sample};
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::metrics::ConfusionMatrix;
use crate::raster::CLASS_COUNT;
use crate::rng::SplitMix64;

/// Lower bound applied to `τ` after every step.
pub const MIN_TEMPERATURE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_pixels: usize,
    pub epochs: usize,
    /// Training stops once validation macro-F1 reaches this value.
    pub val_f1_cap: f64,
    pub seed: u64,
    pub class_balancing: bool,
    /// Loss weight of every pixel drawn from a page with the given tag;
    /// tags not listed weigh 1.
    pub per_partition_weights: BTreeMap<PartitionTag, f64>,
    /// Optimizer steps per epoch; defaults to one pass worth of pixels.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_pixels: 4096,
            epochs: 10,
            val_f1_cap: 0.95,
            seed: 0,
            class_balancing: true,
            per_partition_weights: [(PartitionTag::Base, 1.0), (PartitionTag::Novel, 1.0)].into(),
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.val_f1_cap) {
            return Err(Error::config("val_f1_cap", "must lie in [0, 1]"));
        }
        if self.batch_pixels == 0 {
            return Err(Error::config("batch_pixels", "must be positive"));
        }
        if self
            .per_partition_weights
            .values()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::config(
                "per_partition_weights",
                "weights must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn weight_of(&self, tag: PartitionTag) -> f64 {
        self.per_partition_weights.get(&tag).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Cap,
    Epochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub val_f1: Option<f64>,
}

/// A minibatch of pixels with their loss weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelBatch {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    pub partitions: Vec<PartitionTag>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.labels.clear();
        self.weights.clear();
        self.partitions.clear();
    }

    pub fn push(&mut self, x: &[f64], label: u8, weight: f64, partition: PartitionTag) {
        self.features.extend_from_slice(x);
        self.labels.push(label);
        self.weights.push(weight);
        self.partitions.push(partition);
    }

    fn validate(&self, model: &AgentModel) -> Result<f64> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::contract("empty batch"));
        }
        if self.dim != model.feature_set.dim()
            || self.features.len() != n * self.dim
            || self.weights.len() != n
        {
            return Err(Error::contract(
                "batch buffers disagree in length or dimension",
            ));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::contract("negative or NaN example weight"));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y as usize >= CLASS_COUNT) {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::contract("all example weights are zero"));
        }
        Ok(total)
    }
}

/// Weighted mean cross-entropy `Σ w_i CE_i / Σ w_i` and its analytic
/// gradient, `τ` included.
pub fn loss_and_grad(model: &AgentModel, batch: &PixelBatch) -> Result<(f64, Gradients)> {
    let total_w = batch.validate(model)?;
    let mut grads = Gradients::zeros_like(model);
    let tau = model.temperature;
    let d = batch.dim;
    let gate = model.gate_values();
    let mut loss = 0.0;

    let mut pre = [0.0; MAIN_HIDDEN];
    let mut u_hidden = [0.0; MAIN_HIDDEN];
    let mut z = [0.0; CLASS_COUNT];
    let mut dz = [0.0; CLASS_COUNT];

    for (n, (&y, &w)) in batch.labels.iter().zip(&batch.weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let x = &batch.features[n * d..(n + 1) * d];
        match model.kind {
            AgentKind::Main => {
                let (w1, b1, w2, b2) = (
                    &model.layers[0].values,
                    &model.layers[1].values,
                    &model.layers[3].values,
                    &model.layers[4].values,
                );
                pre.copy_from_slice(b1);
                for (i, &xi) in x.iter().enumerate() {
                    for (a, wv) in pre
                        .iter_mut()
                        .zip(&w1[i * MAIN_HIDDEN..(i + 1) * MAIN_HIDDEN])
                    {
                        *a += xi * wv;
                    }
                }
                for j in 0..MAIN_HIDDEN {
                    u_hidden[j] = gate[j] * pre[j].max(0.0);
                }
                z.copy_from_slice(b2);
                for (i, &xi) in x.iter().enumerate() {
                    for (zk, wv) in z
                        .iter_mut()
                        .zip(&w2[i * CLASS_COUNT..(i + 1) * CLASS_COUNT])
                    {
                        *zk += xi * wv;
                    }
                }
                for (j, &u) in u_hidden.iter().enumerate() {
                    for (zk, wv) in z
                        .iter_mut()
                        .zip(&w2[(d + j) * CLASS_COUNT..(d + j + 1) * CLASS_COUNT])
                    {
                        *zk += u * wv;
                    }
                }
            }
            AgentKind::Co => {
                let (wm, b) = (&model.layers[0].values, &model.layers[1].values);
                z.copy_from_slice(b);
                for (i, &xi) in x.iter().enumerate() {
                    for (zk, wv) in z
                        .iter_mut()
                        .zip(&wm[i * CLASS_COUNT..(i + 1) * CLASS_COUNT])
                    {
                        *zk += xi * wv;
                    }
                }
            }
        }

        // softmax cross-entropy on s = τ z
        let smax = z.iter().map(|v| tau * v).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut p = [0.0; CLASS_COUNT];
        for k in 0..CLASS_COUNT {
            p[k] = (tau * z[k] - smax).exp();
            sum += p[k];
        }
        let log_sum = sum.ln() + smax;
        loss += w * (log_sum - tau * z[y as usize]);
        let scale = w / total_w;
        let mut dtau = 0.0;
        for k in 0..CLASS_COUNT {
            let ds = (p[k] / sum - if k == y as usize { 1.0 } else { 0.0 }) * scale;
            dtau += ds * z[k];
            dz[k] = tau * ds;
        }
        grads.temperature += dtau;

        match model.kind {
            AgentKind::Main => {
                let w2 = &model.layers[3].values;
                {
                    let gw2 = &mut grads.layers[3];
                    for (i, &xi) in x.iter().enumerate() {
                        for (g, dzk) in gw2[i * CLASS_COUNT..(i + 1) * CLASS_COUNT]
                            .iter_mut()
                            .zip(&dz)
                        {
                            *g += xi * dzk;
                        }
                    }
                    for (j, &u) in u_hidden.iter().enumerate() {
                        for (g, dzk) in gw2[(d + j) * CLASS_COUNT..(d + j + 1) * CLASS_COUNT]
                            .iter_mut()
                            .zip(&dz)
                        {
                            *g += u * dzk;
                        }
                    }
                }
                for (g, dzk) in grads.layers[4].iter_mut().zip(&dz) {
                    *g += dzk;
                }
                let mut da = [0.0; MAIN_HIDDEN];
                for j in 0..MAIN_HIDDEN {
                    let row = &w2[(d + j) * CLASS_COUNT..(d + j + 1) * CLASS_COUNT];
                    let du: f64 = row.iter().zip(&dz).map(|(a, b)| a * b).sum();
                    let relu = pre[j].max(0.0);
                    grads.layers[2][j] += du * relu * gate[j] * (1.0 - gate[j]);
                    da[j] = if pre[j] > 0.0 { du * gate[j] } else { 0.0 };
                }
                for (g, a) in grads.layers[1].iter_mut().zip(&da) {
                    *g += a;
                }
                let gw1 = &mut grads.layers[0];
                for (i, &xi) in x.iter().enumerate() {
                    for (g, a) in gw1[i * MAIN_HIDDEN..(i + 1) * MAIN_HIDDEN]
                        .iter_mut()
                        .zip(&da)
                    {
                        *g += xi * a;
                    }
                }
            }
            AgentKind::Co => {
                let gw = &mut grads.layers[0];
                for (i, &xi) in x.iter().enumerate() {
                    for (g, dzk) in gw[i * CLASS_COUNT..(i + 1) * CLASS_COUNT]
                        .iter_mut()
                        .zip(&dz)
                    {
                        *g += xi * dzk;
                    }
                }
                for (g, dzk) in grads.layers[1].iter_mut().zip(&dz) {
                    *g += dzk;
                }
            }
        }
    }
    Ok((loss / total_w, grads))
}

/// Draws pixel positions, either class-balanced (class uniformly among the
/// classes present, then a pixel of that class uniformly) or uniformly over
/// all pixels.
enum PixelSampler {
    Balanced(Vec<Vec<(u32, u32)>>),
    Uniform(Vec<usize>),
}

impl PixelSampler {
    fn new(pages: &[&EncodedPage], balanced: bool) -> Self {
        if balanced {
            let mut by_class = vec![Vec::new(); CLASS_COUNT];
            for (p, page) in pages.iter().enumerate() {
                for (i, &y) in page.labels.iter().enumerate() {
                    by_class[y as usize].push((p as u32, i as u32));
                }
            }
            by_class.retain(|v| !v.is_empty());
            PixelSampler::Balanced(by_class)
        } else {
            let mut ends = Vec::with_capacity(pages.len());
            let mut acc = 0;
            for page in pages {
                acc += page.pixel_count();
                ends.push(acc);
            }
            PixelSampler::Uniform(ends)
        }
    }

    fn draw(&self, rng: &mut SplitMix64) -> (usize, usize) {
        match self {
            PixelSampler::Balanced(by_class) => {
                let class = &by_class[rng.below(by_class.len())];
                let (p, i) = class[rng.below(class.len())];
                (p as usize, i as usize)
            }
            PixelSampler::Uniform(ends) => {
                let g = rng.below(*ends.last().expect("non-empty"));
                let p = ends.partition_point(|&e| e <= g);
                let start = if p == 0 { 0 } else { ends[p - 1] };
                (p, g - start)
            }
        }
    }
}

fn check_pages(model: &AgentModel, pages: &[&EncodedPage], what: &str) -> Result<()> {
    if pages.is_empty() {
        return Err(Error::contract(format!("{what} set is empty")));
    }
    if let Some(p) = pages.iter().find(|p| p.set_id != model.feature_set) {
        return Err(Error::contract(format!(
            "{what} page {} is encoded with {:?}, agent expects {:?}",
            p.id, p.set_id, model.feature_set
        )));
    }
    if let Some(p) = pages.iter().find(|p| p.pixel_count() == 0) {
        return Err(Error::contract(format!(
            "{what} page {} has no pixels",
            p.id
        )));
    }
    Ok(())
}

/// Predicted labels for an encoded page.
pub fn predict_page(model: &AgentModel, page: &EncodedPage) -> Result<Vec<u8>> {
    model.predict_features(&page.features)
}

/// Confusion matrix of `model` over encoded pages, merged in page order.
pub fn evaluate_pages(model: &AgentModel, pages: &[&EncodedPage]) -> Result<ConfusionMatrix> {
    let per_page: Vec<ConfusionMatrix> = pages
        .par_iter()
        .map(|page| {
            let mut cm = ConfusionMatrix::new(CLASS_COUNT);
            cm.accumulate_labels(&predict_page(model, page)?, &page.labels)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::new(CLASS_COUNT);
    for cm in &per_page {
        total.merge(cm)?;
    }
    Ok(total)
}

/// Trains from raw samples, encoding them with `normalizer` first.
pub fn train(
    init: &AgentModel,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    normalizer: &Normalizer,
) -> Result<AgentModel> {
    if normalizer.set_id != init.feature_set {
        return Err(Error::contract("normalizer and agent feature sets differ"));
    }
    let tr = encode_all(train_set, normalizer);
    let va = encode_all(val_set, normalizer);
    let tr_refs: Vec<&EncodedPage> = tr.iter().collect();
    let va_refs: Vec<&EncodedPage> = va.iter().collect();
    train_encoded(init, &tr_refs, &va_refs, config)
}

pub fn train_encoded(
    init: &AgentModel,
    train_set: &[&EncodedPage],
    val_set: &[&EncodedPage],
    config: &TrainConfig,
) -> Result<AgentModel> {
    train_with_observer(init, train_set, val_set, config, &mut |_| {})
}

/// Minibatch SGD. `observer` sees every batch before its step. An empty
/// validation set disables the F1 cap.
pub fn train_with_observer(
    init: &AgentModel,
    train_set: &[&EncodedPage],
    val_set: &[&EncodedPage],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&PixelBatch),
) -> Result<AgentModel> {
    config.validate()?;
    init.validate()?;
    check_pages(init, train_set, "training")?;
    if !val_set.is_empty() {
        check_pages(init, val_set, "validation")?;
    }
    if train_set
        .iter()
        .all(|p| config.weight_of(p.partition) == 0.0)
    {
        return Err(Error::contract("every training partition has zero weight"));
    }

    let mut model = init.clone();
    let sampler = PixelSampler::new(train_set, config.class_balancing);
    let mut rng = SplitMix64::derive_named(config.seed, "pixel-sampler");
    let total_px: usize = train_set.iter().map(|p| p.pixel_count()).sum();
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| total_px.div_ceil(config.batch_pixels))
        .max(1);
    let dim = model.feature_set.dim();
    let mut batch = PixelBatch {
        dim,
        ..PixelBatch::default()
    };

    let mut meta = TrainMeta {
        epochs_run: 0,
        stop_reason: StopReason::Epochs,
        val_f1: None,
    };
    for epoch in 0..config.epochs {
        for _ in 0..steps {
            batch.clear();
            for _ in 0..config.batch_pixels {
                let (p, i) = sampler.draw(&mut rng);
                let page = train_set[p];
                batch.push(
                    page.pixel(i),
                    page.labels[i],
                    config.weight_of(page.partition),
                    page.partition,
                );
            }
            observer(&batch);
            if batch.weights.iter().all(|&w| w == 0.0) {
                continue;
            }
            let (_, grads) = loss_and_grad(&model, &batch)?;
            for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                for (v, gv) in layer.values.iter_mut().zip(g) {
                    *v -= config.learning_rate * gv;
                }
            }
            model.temperature =
                (model.temperature - config.learning_rate * grads.temperature).max(MIN_TEMPERATURE);
        }
        meta.epochs_run = epoch + 1;
        if val_set.is_empty() {
            continue;
        }
        let f1 = evaluate_pages(&model, val_set)?.f1()?;
        meta.val_f1 = Some(f1);
        tracing::debug!(epoch, f1, kind = ?model.kind, "validation");
        if f1 >= config.val_f1_cap {
            meta.stop_reason = StopReason::Cap;
            break;
        }
    }
    if model
        .layers
        .iter()
        .any(|l| l.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::contract(
            "training diverged to non-finite parameters",
        ));
    }
    model.train_meta = Some(meta);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSetId;

    fn random_model(kind: AgentKind, seed: u64) -> AgentModel {
        let mut m = AgentModel::init(kind, seed);
        let mut rng = SplitMix64::new(seed + 100);
        for l in &mut m.layers {
            for v in &mut l.values {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        m.temperature = rng.uniform(0.5, 1.5);
        m
    }

    fn random_batch(dim: usize, n: usize, seed: u64) -> PixelBatch {
        let mut rng = SplitMix64::new(seed);
        let mut b = PixelBatch {
            dim,
            ..Default::default()
        };
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let tag = if rng.bernoulli(0.5) {
                PartitionTag::Base
            } else {
                PartitionTag::Novel
            };
            b.push(&x, rng.below(CLASS_COUNT) as u8, rng.uniform(0.1, 1.0), tag);
        }
        b
    }

    #[test]
    fn uniform_scores_give_ln7() {
        let m = AgentModel::zeros(AgentKind::Co);
        let mut b = PixelBatch {
            dim: 8,
            ..Default::default()
        };
        b.push(&[0.5; 8], 3, 1.0, PartitionTag::Base);
        let (loss, _) = loss_and_grad(&m, &b).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn doubling_weights_changes_nothing() {
        for kind in [AgentKind::Main, AgentKind::Co] {
            let m = random_model(kind, 1);
            let b = random_batch(kind.feature_set().dim(), 30, 2);
            let mut b2 = b.clone();
            b2.weights.iter_mut().for_each(|w| *w *= 2.0);
            let (l1, g1) = loss_and_grad(&m, &b).unwrap();
            let (l2, g2) = loss_and_grad(&m, &b2).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
            for (a, c) in g1.layers.iter().flatten().zip(g2.layers.iter().flatten()) {
                assert!((a - c).abs() < 1e-12);
            }
            assert!((g1.temperature - g2.temperature).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_and_empty_batch_rejected() {
        let m = AgentModel::zeros(AgentKind::Co);
        let mut b = random_batch(8, 3, 1);
        b.weights = vec![0.0; 3];
        assert!(matches!(loss_and_grad(&m, &b), Err(Error::Contract(_))));
        let empty = PixelBatch {
            dim: 8,
            ..Default::default()
        };
        assert!(loss_and_grad(&m, &empty).is_err());
    }

    #[test]
    fn temperature_receives_gradient() {
        let m = random_model(AgentKind::Main, 4);
        let (_, g) = loss_and_grad(&m, &random_batch(10, 20, 5)).unwrap();
        assert!(g.temperature != 0.0);
    }

    #[test]
    fn balanced_sampler_visits_every_class() {
        let page = EncodedPage {
            id: "p".into(),
            partition: PartitionTag::Base,
            set_id: FeatureSetId::B,
            width: 10,
            height: 1,
            features: vec![0.0; 80],
            labels: vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 4],
        };
        let s = PixelSampler::new(&[&page], true);
        let mut rng = SplitMix64::new(1);
        let hits = (0..2000).filter(|_| s.draw(&mut rng).1 == 9).count();
        // class 4 has one pixel yet half the draws
        assert!((800..1200).contains(&hits), "{hits}");
        let u = PixelSampler::new(&[&page, &page], false);
        for _ in 0..100 {
            let (p, i) = u.draw(&mut rng);
            assert!(p < 2 && i < 10);
        }
    }
}
