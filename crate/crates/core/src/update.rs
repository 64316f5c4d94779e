//! Updating the main agent with labelled key samples: the mixture of keys
//! and fresh synthetic pages, and the four update strategies.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{evaluate_pages, train_with_observer, AgentModel, PixelBatch, TrainConfig};
use crate::dataset::{EncodedPage, PartitionTag, Sample};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::synth::{document_seed, generate_document, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UpdateStrategy {
    /// Prior weights, novel data only, reduced lr.
    Psft,
    /// Prior weights, base and novel data, reduced lr.
    Pbsft,
    /// Fresh weights, base and novel data, full lr.
    Rbsft,
    /// Prior weights, base and novel data weighted by λ1/λ2, reduced lr.
    Rbsre,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 4] = [Self::Psft, Self::Pbsft, Self::Rbsft, Self::Rbsre];

    pub fn name(self) -> &'static str {
        match self {
            Self::Psft => "PSFT",
            Self::Pbsft => "PBSFT",
            Self::Rbsft => "RBSFT",
            Self::Rbsre => "RBSRE",
        }
    }

    pub fn starts_from_prior(self) -> bool {
        self != Self::Rbsft
    }
}

impl std::str::FromStr for UpdateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("strategy", format!("unknown update strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub target_total: usize,
    pub synth_config: SynthConfig,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            target_total: 100,
            synth_config: SynthConfig::novel_style(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub strategy: UpdateStrategy,
    pub lambda1: f64,
    pub lambda2: f64,
    pub fine_tune_lr_factor: f64,
    pub train: TrainConfig,
    /// PSFT on the labelled keys alone instead of keys plus synthetic pages.
    #[serde(default)]
    pub psft_keys_only: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            strategy: UpdateStrategy::Rbsre,
            lambda1: 0.2,
            lambda2: 0.8,
            fine_tune_lr_factor: 0.1,
            train: TrainConfig::default(),
            psft_keys_only: false,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1 + self.lambda2 > 0.0) {
            return Err(Error::config(
                "lambda",
                "λ1 and λ2 must be non-negative with a positive sum",
            ));
        }
        if !(self.fine_tune_lr_factor > 0.0 && self.fine_tune_lr_factor.is_finite()) {
            return Err(Error::config("fine_tune_lr_factor", "must be positive"));
        }
        self.train.validate()
    }

    /// The training configuration the strategy actually runs with.
    pub fn effective_train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.strategy.starts_from_prior() {
            t.learning_rate *= self.fine_tune_lr_factor;
        }
        t.per_partition_weights = match self.strategy {
            UpdateStrategy::Rbsre => BTreeMap::from([
                (PartitionTag::Base, self.lambda1),
                (PartitionTag::Novel, self.lambda2),
            ]),
            _ => BTreeMap::from([(PartitionTag::Base, 1.0), (PartitionTag::Novel, 1.0)]),
        };
        t
    }
}

/// Base pages and novel (key + synthetic) pages for one update.
#[derive(Debug, Clone)]
pub struct PartitionedTrainSet<'a> {
    pub base: Vec<&'a EncodedPage>,
    pub novel: Vec<&'a EncodedPage>,
    /// Ids of the labelled keys among `novel`.
    pub key_ids: BTreeSet<String>,
}

impl<'a> PartitionedTrainSet<'a> {
    pub fn new(
        base: Vec<&'a EncodedPage>,
        novel: Vec<&'a EncodedPage>,
        key_ids: BTreeSet<String>,
    ) -> Result<Self> {
        if let Some(p) = base.iter().find(|p| p.partition != PartitionTag::Base) {
            return Err(Error::contract(format!(
                "page {} in the base slice is tagged novel",
                p.id
            )));
        }
        if let Some(p) = novel.iter().find(|p| p.partition != PartitionTag::Novel) {
            return Err(Error::contract(format!(
                "page {} in the novel slice is tagged base",
                p.id
            )));
        }
        let mut seen = BTreeSet::new();
        for p in base.iter().chain(&novel) {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::contract(format!(
                    "page id {} appears twice in the training set",
                    p.id
                )));
            }
        }
        if let Some(k) = key_ids.iter().find(|k| !novel.iter().any(|p| &p.id == *k)) {
            return Err(Error::contract(format!(
                "key {k} is not in the novel slice"
            )));
        }
        Ok(Self {
            base,
            novel,
            key_ids,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.base
            .iter()
            .chain(&self.novel)
            .map(|p| p.id.clone())
            .collect()
    }
}

/// Number of synthetic pages needed to reach the target.
pub fn synthesized_count(key_count: usize, target_total: usize) -> Result<usize> {
    target_total.checked_sub(key_count).ok_or_else(|| {
        Error::contract(format!(
            "mixture target {target_total} is below the {key_count} labelled keys"
        ))
    })
}

pub fn mixture_id(seed: u64, k: usize) -> String {
    format!("mix-{seed:016x}-{k:04}")
}

/// Labelled keys followed by freshly synthesized novel-style pages, all
/// tagged novel.
pub fn build_mixture(labeled_keys: &[Sample], mix: &MixConfig) -> Result<Vec<Sample>> {
    if labeled_keys.is_empty() {
        return Err(Error::contract("mixture needs at least one labelled key"));
    }
    mix.synth_config.validate()?;
    let n = synthesized_count(labeled_keys.len(), mix.target_total)?;
    let synth: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|k| {
            let doc = generate_document(&mix.synth_config, document_seed(mix.seed, k))?;
            Ok(Sample::from_document(
                mixture_id(mix.seed, k),
                doc,
                PartitionTag::Novel,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Sample> = labeled_keys
        .iter()
        .map(|s| Sample {
            partition: PartitionTag::Novel,
            ..s.clone()
        })
        .collect();
    out.extend(synth);
    let ids: BTreeSet<&str> = out.iter().map(|s| s.id.as_str()).collect();
    if ids.len() != out.len() {
        return Err(Error::contract("mixture contains duplicated ids"));
    }
    Ok(out)
}

/// Parameters the strategy starts from.
pub fn initial_model(prior: &AgentModel, config: &UpdateConfig) -> AgentModel {
    let mut m = if config.strategy.starts_from_prior() {
        prior.clone()
    } else {
        AgentModel::init(prior.kind, config.train.seed)
    };
    m.train_meta = None;
    m
}

pub fn training_pages<'a>(
    data: &PartitionedTrainSet<'a>,
    config: &UpdateConfig,
) -> Result<Vec<&'a EncodedPage>> {
    let pages: Vec<&EncodedPage> = match config.strategy {
        UpdateStrategy::Psft if config.psft_keys_only => data
            .novel
            .iter()
            .copied()
            .filter(|p| data.key_ids.contains(&p.id))
            .collect(),
        UpdateStrategy::Psft => data.novel.clone(),
        _ => {
            if data.base.is_empty() {
                return Err(Error::contract(format!(
                    "{} needs base pages",
                    config.strategy.name()
                )));
            }
            data.base.iter().chain(&data.novel).copied().collect()
        }
    };
    if data.novel.is_empty() {
        return Err(Error::contract(format!(
            "{} needs novel pages",
            config.strategy.name()
        )));
    }
    if pages.is_empty() {
        return Err(Error::contract(
            "PSFT keys-only update without labelled keys",
        ));
    }
    Ok(pages)
}

pub fn apply_update(
    prior: &AgentModel,
    data: &PartitionedTrainSet,
    val: &[&EncodedPage],
    config: &UpdateConfig,
) -> Result<AgentModel> {
    apply_update_with_observer(prior, data, val, config, &mut |_| {})
}

pub fn apply_update_with_observer(
    prior: &AgentModel,
    data: &PartitionedTrainSet,
    val: &[&EncodedPage],
    config: &UpdateConfig,
    observer: &mut dyn FnMut(&PixelBatch),
) -> Result<AgentModel> {
    config.validate()?;
    prior.validate()?;
    let pages = training_pages(data, config)?;
    let init = initial_model(prior, config);
    if config.train.epochs == 0 {
        return Ok(init);
    }
    train_with_observer(
        &init,
        &pages,
        val,
        &config.effective_train_config(),
        observer,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub metrics: MetricsReport,
}

/// RBSRE at every grid point, evaluated on `test`; rows sorted by λ1 then λ2.
pub fn sweep_lambdas(
    grid: &[(f64, f64)],
    prior: &AgentModel,
    data: &PartitionedTrainSet,
    val: &[&EncodedPage],
    test: &[&EncodedPage],
    config: &UpdateConfig,
) -> Result<Vec<LambdaRow>> {
    if grid.is_empty() {
        return Err(Error::contract("lambda grid is empty"));
    }
    let mut rows = grid
        .par_iter()
        .map(|&(lambda1, lambda2)| {
            let cfg = UpdateConfig {
                strategy: UpdateStrategy::Rbsre,
                lambda1,
                lambda2,
                ..config.clone()
            };
            let model = apply_update(prior, data, val, &cfg)?;
            Ok(LambdaRow {
                lambda1,
                lambda2,
                metrics: evaluate_pages(&model, test)?.report()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.lambda1
            .total_cmp(&b.lambda1)
            .then(a.lambda2.total_cmp(&b.lambda2))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub strategy: UpdateStrategy,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl UpdateReport {
    pub fn new(config: &UpdateConfig, per_seed: Vec<SeedMetrics>) -> Self {
        let f1: Vec<f64> = per_seed.iter().map(|s| s.metrics.f1).collect();
        let (mean_f1, std_f1) = mean_std(&f1);
        Self {
            strategy: config.strategy,
            lambda1: config.lambda1,
            lambda2: config.lambda2,
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            per_seed,
            mean_f1,
            std_f1,
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}
