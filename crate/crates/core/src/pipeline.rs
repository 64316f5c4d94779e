//! Experiment orchestration: corpora, agent initialization, one
//! collaboration round, and the comparison runs built from it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{evaluate_pages, train_encoded, AgentKind, AgentModel, TrainConfig, TrainMeta};
use crate::collab::{
    agreement_scores, select_by_strategy, select_from_agreement, top_up_to_budget, SelectionConfig,
    SelectionResult, SelectionStrategy,
};
use crate::dataset::{encode_all, fit_normalizer_on, EncodedPage, PartitionTag, Sample};
use crate::error::{Error, Result};
use crate::features::{FeatureSetId, Normalizer};
use crate::metrics::MetricsReport;
use crate::rng::SplitMix64;
use crate::synth::{document_seed, generate_document, SynthConfig};
use crate::update::{
    apply_update, build_mixture, mean_std, training_pages, MixConfig, PartitionedTrainSet,
    SeedMetrics, UpdateConfig, UpdateReport, UpdateStrategy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub config: SynthConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub base_train: usize,
    pub base_val: usize,
    pub novel_pool: usize,
    pub novel_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSeeds {
    pub main: u64,
    pub co: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub base: CorpusSpec,
    pub novel: CorpusSpec,
    /// Independent base-style corpus (same sizes as `base`) for the
    /// different-data collaboration modes.
    #[serde(default)]
    pub second_base: Option<CorpusSpec>,
    pub partitions: PartitionSizes,
    pub agent_seeds: AgentSeeds,
    pub init_train: TrainConfig,
    /// Base training pages the feature normalizers are fit on.
    pub normalizer_pages: usize,
    pub selection: SelectionConfig,
    /// Seed of the RANDOM selection baseline.
    pub selection_seed: u64,
    pub mix: MixConfig,
    pub update: UpdateConfig,
    pub replicate_seeds: Vec<u64>,
}

/// Novel pages of the reference benchmark: the novel style with figures
/// three times as frequent as any other region kind.
pub fn figure_heavy_novel_style() -> SynthConfig {
    let mut c = SynthConfig::novel_style();
    c.class_mix_weights[0] = 3.0;
    c
}

/// Synthesizer settings of the mixture pages: the novel page geometry,
/// typography and region frequencies, with nearly flat figures. Only the
/// labelled keys show the novel figure texture.
pub fn mixture_style() -> SynthConfig {
    let mut c = figure_heavy_novel_style();
    c.texture.figure_noise_amplitude = 0.05;
    c.style_tag = "mix".into();
    c
}

impl ExperimentManifest {
    /// The desk-scale benchmark: 200/50 base pages, 60 pool and 100 test
    /// pages in the novel style, 128x128.
    pub fn reference() -> Self {
        let second = SynthConfig {
            style_tag: "base2".into(),
            ..SynthConfig::base_style()
        };
        Self {
            base: CorpusSpec {
                config: SynthConfig::base_style(),
                seed: 11,
            },
            novel: CorpusSpec {
                config: figure_heavy_novel_style(),
                seed: 23,
            },
            second_base: Some(CorpusSpec {
                config: second,
                seed: 37,
            }),
            partitions: PartitionSizes {
                base_train: 200,
                base_val: 50,
                novel_pool: 60,
                novel_test: 100,
            },
            agent_seeds: AgentSeeds { main: 1, co: 2 },
            init_train: TrainConfig {
                epochs: 5,
                steps_per_epoch: Some(200),
                ..TrainConfig::default()
            },
            normalizer_pages: 50,
            selection: SelectionConfig {
                threshold: 0.25,
                budget: Some(12),
                strategy: SelectionStrategy::Kss,
            },
            selection_seed: 5,
            mix: MixConfig {
                target_total: 50,
                synth_config: mixture_style(),
                seed: 3,
            },
            update: UpdateConfig {
                train: TrainConfig {
                    epochs: 10,
                    steps_per_epoch: Some(200),
                    val_f1_cap: 1.0,
                    ..TrainConfig::default()
                },
                ..UpdateConfig::default()
            },
            replicate_seeds: vec![101, 202, 303, 404, 505],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut tags = BTreeSet::new();
        for spec in [
            Some(&self.base),
            Some(&self.novel),
            self.second_base.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            spec.config.validate()?;
            if !tags.insert(spec.config.style_tag.as_str()) {
                return Err(Error::config(
                    "style_tag",
                    "corpora must use distinct style tags",
                ));
            }
        }
        let p = &self.partitions;
        if p.base_train == 0 || p.base_val == 0 || p.novel_pool == 0 || p.novel_test == 0 {
            return Err(Error::config(
                "partitions",
                "every partition needs at least one page",
            ));
        }
        if self.normalizer_pages == 0 {
            return Err(Error::config("normalizer_pages", "must be positive"));
        }
        let seeds: BTreeSet<_> = self.replicate_seeds.iter().collect();
        if seeds.len() != self.replicate_seeds.len() {
            return Err(Error::config("replicate_seeds", "seeds must be distinct"));
        }
        self.init_train.validate()?;
        self.selection.validate()?;
        self.mix.synth_config.validate()?;
        self.update.validate()
    }

    /// This manifest with every run seed derived from `replicate`; corpora
    /// are unchanged.
    pub fn for_replicate(&self, replicate: u64) -> Self {
        let seed = |label: &str| SplitMix64::derive_named(replicate, label).next_u64();
        let mut m = self.clone();
        m.agent_seeds = AgentSeeds {
            main: seed("agent-main"),
            co: seed("agent-co"),
        };
        m.selection_seed = seed("selection");
        m.mix.seed = seed("mixture");
        m.update.train.seed = seed("update");
        m.replicate_seeds = vec![replicate];
        m
    }

    /// Short stable id derived from the manifest contents.
    pub fn run_id(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(format!(
            "run-{}",
            digest[..8]
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        ))
    }

    fn corpus_key(&self) -> Result<String> {
        Ok(serde_json::to_string(&(
            &self.base,
            &self.novel,
            &self.second_base,
            &self.partitions,
            self.normalizer_pages,
        ))?)
    }
}

/// Generates document `i` of a corpus exactly as the on-disk corpus does.
pub fn corpus_sample(spec: &CorpusSpec, i: usize, partition: PartitionTag) -> Result<Sample> {
    let doc = generate_document(&spec.config, document_seed(spec.seed, i))?;
    Ok(Sample::from_document(
        format!("{}-{:05}", spec.config.style_tag, i),
        doc,
        partition,
    ))
}

fn corpus_samples(spec: &CorpusSpec, n: usize, partition: PartitionTag) -> Result<Vec<Sample>> {
    (0..n)
        .into_par_iter()
        .map(|i| corpus_sample(spec, i, partition))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub base_train: Vec<Sample>,
    pub base_val: Vec<Sample>,
    pub novel_pool: Vec<Sample>,
    pub novel_test: Vec<Sample>,
    pub second_train: Vec<Sample>,
    pub second_val: Vec<Sample>,
}

impl Corpora {
    pub fn generate(m: &ExperimentManifest) -> Result<Self> {
        let p = &m.partitions;
        let mut base = corpus_samples(&m.base, p.base_train + p.base_val, PartitionTag::Base)?;
        let base_val = base.split_off(p.base_train);
        let mut novel = corpus_samples(&m.novel, p.novel_pool + p.novel_test, PartitionTag::Novel)?;
        let novel_test = novel.split_off(p.novel_pool);
        let (second_train, second_val) = match &m.second_base {
            Some(spec) => {
                let mut s = corpus_samples(spec, p.base_train + p.base_val, PartitionTag::Base)?;
                let v = s.split_off(p.base_train);
                (s, v)
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            base_train: base,
            base_val,
            novel_pool: novel,
            novel_test,
            second_train,
            second_val,
        })
    }
}

/// Which base corpus an agent is initialized on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseSide {
    Primary,
    Second,
}

#[derive(Debug, Clone)]
pub struct EncodedCorpora {
    pub base_train: Vec<EncodedPage>,
    pub base_val: Vec<EncodedPage>,
    pub novel_pool: Vec<EncodedPage>,
    pub novel_test: Vec<EncodedPage>,
    pub second_train: Vec<EncodedPage>,
    pub second_val: Vec<EncodedPage>,
}

impl EncodedCorpora {
    fn encode(c: &Corpora, norm: &Normalizer) -> Self {
        Self {
            base_train: encode_all(&c.base_train, norm),
            base_val: encode_all(&c.base_val, norm),
            novel_pool: encode_all(&c.novel_pool, norm),
            novel_test: encode_all(&c.novel_test, norm),
            second_train: encode_all(&c.second_train, norm),
            second_val: encode_all(&c.second_val, norm),
        }
    }

    fn base(&self, side: BaseSide) -> (&[EncodedPage], &[EncodedPage]) {
        match side {
            BaseSide::Primary => (&self.base_train, &self.base_val),
            BaseSide::Second => (&self.second_train, &self.second_val),
        }
    }
}

pub fn refs(pages: &[EncodedPage]) -> Vec<&EncodedPage> {
    pages.iter().collect()
}

type ModelKey = (AgentKind, u64, BaseSide, String);
type ModelSlot = Arc<OnceLock<std::result::Result<AgentModel, String>>>;

/// Corpora, normalizers and encodings shared by every run over the same
/// corpus settings, plus a cache of initialized agents.
pub struct Benchmark {
    key: String,
    pub corpora: Corpora,
    pub norm_a: Normalizer,
    pub norm_b: Normalizer,
    pub enc_a: EncodedCorpora,
    pub enc_b: EncodedCorpora,
    models: Mutex<HashMap<ModelKey, ModelSlot>>,
}

impl Benchmark {
    pub fn build(m: &ExperimentManifest) -> Result<Self> {
        m.validate()?;
        let corpora = Corpora::generate(m)?;
        Self::from_corpora(m, corpora, None)
    }

    /// Uses the given normalizers when present, otherwise fits them on the
    /// base training pages.
    pub fn from_corpora(
        m: &ExperimentManifest,
        corpora: Corpora,
        normalizers: Option<(Normalizer, Normalizer)>,
    ) -> Result<Self> {
        let (norm_a, norm_b) = match normalizers {
            Some((a, b)) => {
                if a.set_id != FeatureSetId::A || b.set_id != FeatureSetId::B {
                    return Err(Error::contract("normalizers passed in the wrong order"));
                }
                (a, b)
            }
            None => fit_normalizers(m, &corpora)?,
        };
        let enc_a = EncodedCorpora::encode(&corpora, &norm_a);
        let enc_b = EncodedCorpora::encode(&corpora, &norm_b);
        Ok(Self {
            key: m.corpus_key()?,
            corpora,
            norm_a,
            norm_b,
            enc_a,
            enc_b,
            models: Mutex::new(HashMap::new()),
        })
    }

    pub fn check_manifest(&self, m: &ExperimentManifest) -> Result<()> {
        m.validate()?;
        if m.corpus_key()? != self.key {
            return Err(Error::contract(
                "manifest describes different corpora than this benchmark",
            ));
        }
        Ok(())
    }

    pub fn encoded(&self, set: FeatureSetId) -> &EncodedCorpora {
        match set {
            FeatureSetId::A => &self.enc_a,
            FeatureSetId::B => &self.enc_b,
        }
    }

    pub fn normalizer(&self, set: FeatureSetId) -> &Normalizer {
        match set {
            FeatureSetId::A => &self.norm_a,
            FeatureSetId::B => &self.norm_b,
        }
    }

    /// Trains (or fetches) an agent initialized with `seed` on one of the
    /// base corpora.
    pub fn initial_agent(
        &self,
        kind: AgentKind,
        seed: u64,
        side: BaseSide,
        cfg: &TrainConfig,
    ) -> Result<AgentModel> {
        let key = (kind, seed, side, serde_json::to_string(cfg)?);
        let slot = self
            .models
            .lock()
            .expect("model cache poisoned")
            .entry(key)
            .or_default()
            .clone();
        slot.get_or_init(|| {
            self.train_initial(kind, seed, side, cfg)
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(Error::Contract)
    }

    fn train_initial(
        &self,
        kind: AgentKind,
        seed: u64,
        side: BaseSide,
        cfg: &TrainConfig,
    ) -> Result<AgentModel> {
        let (train, val) = self.encoded(kind.feature_set()).base(side);
        if train.is_empty() {
            return Err(Error::contract("the second base corpus is not configured"));
        }
        let cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let t = Instant::now();
        let model = train_encoded(
            &AgentModel::init(kind, seed),
            &refs(train),
            &refs(val),
            &cfg,
        )?;
        tracing::info!(
            ?kind,
            seed,
            ?side,
            secs = t.elapsed().as_secs_f64(),
            "initialized agent"
        );
        Ok(model)
    }
}

pub fn fit_normalizers(
    m: &ExperimentManifest,
    corpora: &Corpora,
) -> Result<(Normalizer, Normalizer)> {
    let (a, wa) = fit_normalizer_on(&corpora.base_train, FeatureSetId::A, m.normalizer_pages)?;
    let (b, wb) = fit_normalizer_on(&corpora.base_train, FeatureSetId::B, m.normalizer_pages)?;
    for w in wa.iter().chain(&wb) {
        tracing::warn!("{w}");
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub main: AgentModel,
    pub co: AgentModel,
}

/// Trains Main on feature set A and Co on feature set B over the base
/// training pages, validated on the base validation pages.
pub fn run_initialization(bench: &Benchmark, m: &ExperimentManifest) -> Result<Checkpoints> {
    bench.check_manifest(m)?;
    Ok(Checkpoints {
        main: bench.initial_agent(
            AgentKind::Main,
            m.agent_seeds.main,
            BaseSide::Primary,
            &m.init_train,
        )?,
        co: bench.initial_agent(
            AgentKind::Co,
            m.agent_seeds.co,
            BaseSide::Primary,
            &m.init_train,
        )?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Oracle,
    HumanQueue,
}

pub enum Labels {
    Ready(Vec<Sample>),
    /// Annotations are outstanding; the iteration suspends.
    Pending,
}

/// Source of ground-truth masks for selected pool pages.
pub trait LabelProvider {
    fn mode(&self) -> ProviderMode;
    fn labels(
        &mut self,
        run_id: &str,
        selection: &SelectionResult,
        pool: &[Sample],
    ) -> Result<Labels>;
}

/// Answers with the synthesizer's masks.
pub struct OracleLabels;

impl LabelProvider for OracleLabels {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Oracle
    }

    fn labels(
        &mut self,
        _run_id: &str,
        selection: &SelectionResult,
        pool: &[Sample],
    ) -> Result<Labels> {
        selected_samples(selection, pool).map(Labels::Ready)
    }
}

pub fn selected_samples(selection: &SelectionResult, pool: &[Sample]) -> Result<Vec<Sample>> {
    selection
        .selected
        .iter()
        .map(|id| {
            pool.iter()
                .find(|s| &s.id == id)
                .cloned()
                .ok_or_else(|| Error::contract(format!("selected id {id} is not in the pool")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Updated,
    NoKeys,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub run_id: String,
    pub manifest: ExperimentManifest,
    pub provider: ProviderMode,
    pub status: LoopStatus,
    pub init_meta: BTreeMap<String, Option<TrainMeta>>,
    pub baseline: MetricsReport,
    /// Equal to `baseline` when no key was selected.
    pub updated: MetricsReport,
    pub selection: SelectionResult,
    pub key_count: usize,
    pub mixture_size: usize,
    /// Page ids each training stage saw, keyed by stage.
    pub training_ids: BTreeMap<String, Vec<String>>,
    pub test_ids: Vec<String>,
    pub wall_clock_secs: f64,
}

impl LoopReport {
    /// Test pages that leaked into any training stage.
    pub fn hygiene_violations(&self) -> Vec<String> {
        let test: BTreeSet<&String> = self.test_ids.iter().collect();
        self.training_ids
            .iter()
            .flat_map(|(stage, ids)| {
                ids.iter()
                    .filter(|id| test.contains(id))
                    .map(move |id| format!("{stage}: {id}"))
            })
            .collect()
    }

    pub fn f1_gain(&self) -> f64 {
        self.updated.f1 - self.baseline.f1
    }
}

pub enum IterationOutcome {
    Completed {
        report: Box<LoopReport>,
        /// The updated main agent, absent when nothing was selected.
        updated: Option<AgentModel>,
    },
    Suspended {
        run_id: String,
        selection: SelectionResult,
    },
}

/// Selection with the manifest's strategy; the second agent is only used
/// by KSS.
pub fn select_pool(
    bench: &Benchmark,
    m: &ExperimentManifest,
    main: &AgentModel,
    partner: &AgentModel,
) -> Result<SelectionResult> {
    let pool_m = refs(&bench.encoded(main.feature_set).novel_pool);
    match m.selection.strategy {
        SelectionStrategy::Kss => {
            let pool_c = refs(&bench.encoded(partner.feature_set).novel_pool);
            select_from_agreement(
                agreement_scores(main, partner, &pool_m, &pool_c)?,
                &m.selection,
            )
        }
        _ => select_by_strategy(main, &pool_m, &m.selection, m.selection_seed),
    }
}

pub struct RoundOutcome {
    pub status: LoopStatus,
    pub updated: MetricsReport,
    pub model: Option<AgentModel>,
    pub mixture_size: usize,
    pub update_ids: Vec<String>,
}

/// Builds the mixture from labelled keys, applies the configured update to
/// `main` and evaluates it. No keys means no update.
pub fn update_round(
    bench: &Benchmark,
    m: &ExperimentManifest,
    main: &AgentModel,
    labeled: &[Sample],
    baseline: &MetricsReport,
) -> Result<RoundOutcome> {
    if labeled.is_empty() {
        return Ok(RoundOutcome {
            status: LoopStatus::NoKeys,
            updated: baseline.clone(),
            model: None,
            mixture_size: 0,
            update_ids: Vec::new(),
        });
    }
    let mixture = build_mixture(labeled, &m.mix)?;
    let enc = encode_all(&mixture, bench.normalizer(main.feature_set));
    let base = refs(&bench.encoded(main.feature_set).base_train);
    let keys: BTreeSet<String> = labeled.iter().map(|s| s.id.clone()).collect();
    let data = PartitionedTrainSet::new(base, refs(&enc), keys)?;
    let model = apply_update(main, &data, &[], &m.update)?;
    let update_ids = training_pages(&data, &m.update)?
        .iter()
        .map(|p| p.id.clone())
        .collect();
    let updated = evaluate(bench, &model)?;
    Ok(RoundOutcome {
        status: LoopStatus::Updated,
        updated,
        model: Some(model),
        mixture_size: mixture.len(),
        update_ids,
    })
}

/// Metrics of a model on the novel test pages.
pub fn evaluate(bench: &Benchmark, model: &AgentModel) -> Result<MetricsReport> {
    evaluate_pages(model, &refs(&bench.encoded(model.feature_set).novel_test))?.report()
}

fn ids(samples: &[Sample]) -> Vec<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

/// Scores the pool, obtains labels for the selection, updates the main
/// agent and evaluates both versions on the test pages.
pub fn run_kss_iteration(
    bench: &Benchmark,
    m: &ExperimentManifest,
    checkpoints: &Checkpoints,
    provider: &mut dyn LabelProvider,
) -> Result<IterationOutcome> {
    bench.check_manifest(m)?;
    let start = Instant::now();
    let run_id = m.run_id()?;
    let selection = select_pool(bench, m, &checkpoints.main, &checkpoints.co)?;
    let labeled = if selection.selected.is_empty() {
        Vec::new()
    } else {
        match provider.labels(&run_id, &selection, &bench.corpora.novel_pool)? {
            Labels::Ready(l) => l,
            Labels::Pending => return Ok(IterationOutcome::Suspended { run_id, selection }),
        }
    };
    if ids(&labeled) != selection.selected {
        return Err(Error::contract(
            "label provider answered for different samples than selected",
        ));
    }
    let baseline = evaluate(bench, &checkpoints.main)?;
    let round = update_round(bench, m, &checkpoints.main, &labeled, &baseline)?;
    let base_ids = ids(&bench.corpora.base_train);
    let training_ids = BTreeMap::from([
        ("init_main".to_string(), base_ids.clone()),
        ("init_co".to_string(), base_ids),
        ("update".to_string(), round.update_ids),
    ]);
    let report = LoopReport {
        run_id,
        manifest: m.clone(),
        provider: provider.mode(),
        status: round.status,
        init_meta: BTreeMap::from([
            ("main".to_string(), checkpoints.main.train_meta.clone()),
            ("co".to_string(), checkpoints.co.train_meta.clone()),
        ]),
        baseline,
        updated: round.updated,
        key_count: labeled.len(),
        mixture_size: round.mixture_size,
        selection,
        training_ids,
        test_ids: ids(&bench.corpora.novel_test),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(IterationOutcome::Completed {
        report: Box::new(report),
        updated: round.model,
    })
}

/// Initialization plus one oracle-labelled iteration.
pub fn run_oracle_loop(bench: &Benchmark, m: &ExperimentManifest) -> Result<LoopReport> {
    let ck = run_initialization(bench, m)?;
    match run_kss_iteration(bench, m, &ck, &mut OracleLabels)? {
        IterationOutcome::Completed { report, .. } => Ok(*report),
        IterationOutcome::Suspended { .. } => {
            Err(Error::contract("oracle labelling cannot suspend"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CollabMode {
    /// Two main agents, same base data.
    Mmod,
    /// Two main agents, different base data.
    Mmtd,
    /// Main and co agents, same base data.
    Mcod,
    /// Main and co agents, different base data.
    Mctd,
}

impl CollabMode {
    pub const ALL: [CollabMode; 4] = [Self::Mmod, Self::Mmtd, Self::Mcod, Self::Mctd];

    fn partner(self) -> (AgentKind, BaseSide) {
        match self {
            Self::Mmod => (AgentKind::Main, BaseSide::Primary),
            Self::Mmtd => (AgentKind::Main, BaseSide::Second),
            Self::Mcod => (AgentKind::Co, BaseSide::Primary),
            Self::Mctd => (AgentKind::Co, BaseSide::Second),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabModeRow {
    pub mode: CollabMode,
    pub selected: usize,
    pub baseline_f1: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabAblationReport {
    pub manifest: ExperimentManifest,
    pub rows: Vec<CollabModeRow>,
}

/// One oracle round per collaboration mode. The main agent is always the
/// manifest's; the partner uses the co seed (so equal agent seeds make the
/// MMOD pair identical).
pub fn run_collab_mode_ablation(
    bench: &Benchmark,
    m: &ExperimentManifest,
) -> Result<CollabAblationReport> {
    bench.check_manifest(m)?;
    if m.second_base.is_none() {
        return Err(Error::contract(
            "collaboration-mode ablation needs a second base corpus",
        ));
    }
    let m = ExperimentManifest {
        selection: SelectionConfig {
            strategy: SelectionStrategy::Kss,
            ..m.selection.clone()
        },
        ..m.clone()
    };
    let main = bench.initial_agent(
        AgentKind::Main,
        m.agent_seeds.main,
        BaseSide::Primary,
        &m.init_train,
    )?;
    let baseline = evaluate(bench, &main)?;
    let rows = CollabMode::ALL
        .iter()
        .map(|&mode| {
            let (kind, side) = mode.partner();
            let partner = bench.initial_agent(kind, m.agent_seeds.co, side, &m.init_train)?;
            let selection = select_pool(bench, &m, &main, &partner)?;
            let labeled = selected_samples(&selection, &bench.corpora.novel_pool)?;
            let round = update_round(bench, &m, &main, &labeled, &baseline)?;
            Ok(CollabModeRow {
                mode,
                selected: labeled.len(),
                baseline_f1: baseline.f1,
                f1: round.updated.f1,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CollabAblationReport { manifest: m, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub selected: Vec<String>,
    pub baseline_f1: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: SelectionStrategy,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionComparisonReport {
    pub manifest: ExperimentManifest,
    pub budget: usize,
    pub baseline_mean_f1: f64,
    pub rows: Vec<StrategyRow>,
}

impl SelectionComparisonReport {
    pub fn row(&self, s: SelectionStrategy) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == s)
    }
}

/// Every strategy at the same budget, with identical oracle, mixture and
/// update settings, over the replicate seeds.
/// Every selection strategy at the same label budget, one oracle round per
/// replicate. KSS keeps its above-threshold keys first and fills the rest of
/// the budget with the next most-disagreeing samples.
pub fn run_selection_comparison(
    bench: &Benchmark,
    m: &ExperimentManifest,
    budget: usize,
) -> Result<SelectionComparisonReport> {
    bench.check_manifest(m)?;
    if budget == 0 || budget > m.partitions.novel_pool {
        return Err(Error::config(
            "budget",
            "must lie between 1 and the pool size",
        ));
    }
    let per_replicate: Vec<Vec<SeedOutcome>> = m
        .replicate_seeds
        .par_iter()
        .map(|&r| {
            let rm = m.for_replicate(r);
            let ck = run_initialization(bench, &rm)?;
            let baseline = evaluate(bench, &ck.main)?;
            SelectionStrategy::ALL
                .iter()
                .map(|&strategy| {
                    let sm = ExperimentManifest {
                        selection: SelectionConfig {
                            strategy,
                            budget: Some(budget),
                            ..rm.selection.clone()
                        },
                        ..rm.clone()
                    };
                    let mut selection = select_pool(bench, &sm, &ck.main, &ck.co)?;
                    if strategy == SelectionStrategy::Kss {
                        selection = top_up_to_budget(selection)?;
                    }
                    let labeled = selected_samples(&selection, &bench.corpora.novel_pool)?;
                    let round = update_round(bench, &sm, &ck.main, &labeled, &baseline)?;
                    Ok(SeedOutcome {
                        seed: r,
                        selected: selection.selected,
                        baseline_f1: baseline.f1,
                        f1: round.updated.f1,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = SelectionStrategy::ALL
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let per_seed: Vec<SeedOutcome> = per_replicate.iter().map(|v| v[k].clone()).collect();
            let (mean_f1, std_f1) = mean_std(&per_seed.iter().map(|s| s.f1).collect::<Vec<_>>());
            StrategyRow {
                strategy,
                per_seed,
                mean_f1,
                std_f1,
            }
        })
        .collect();
    let baselines: Vec<f64> = per_replicate.iter().map(|v| v[0].baseline_f1).collect();
    Ok(SelectionComparisonReport {
        manifest: m.clone(),
        budget,
        baseline_mean_f1: mean_std(&baselines).0,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateComparisonReport {
    pub manifest: ExperimentManifest,
    pub baseline_mean_f1: f64,
    pub key_counts: Vec<usize>,
    pub reports: Vec<UpdateReport>,
}

impl UpdateComparisonReport {
    pub fn report(&self, s: UpdateStrategy) -> Option<&UpdateReport> {
        self.reports.iter().find(|r| r.strategy == s)
    }
}

/// The four update strategies on the same keys and mixture, per replicate.
pub fn run_update_comparison(
    bench: &Benchmark,
    m: &ExperimentManifest,
) -> Result<UpdateComparisonReport> {
    bench.check_manifest(m)?;
    let per_replicate: Vec<(f64, usize, Vec<SeedMetrics>)> = m
        .replicate_seeds
        .par_iter()
        .map(|&r| {
            let rm = m.for_replicate(r);
            let ck = run_initialization(bench, &rm)?;
            let baseline = evaluate(bench, &ck.main)?;
            let selection = select_pool(bench, &rm, &ck.main, &ck.co)?;
            let labeled = selected_samples(&selection, &bench.corpora.novel_pool)?;
            let metrics = UpdateStrategy::ALL
                .iter()
                .map(|&strategy| {
                    let sm = ExperimentManifest {
                        update: UpdateConfig {
                            strategy,
                            ..rm.update.clone()
                        },
                        ..rm.clone()
                    };
                    Ok(SeedMetrics {
                        seed: r,
                        metrics: update_round(bench, &sm, &ck.main, &labeled, &baseline)?.updated,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((baseline.f1, labeled.len(), metrics))
        })
        .collect::<Result<_>>()?;
    let reports = UpdateStrategy::ALL
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let cfg = UpdateConfig {
                strategy,
                ..m.update.clone()
            };
            UpdateReport::new(
                &cfg,
                per_replicate.iter().map(|(_, _, v)| v[k].clone()).collect(),
            )
        })
        .collect();
    Ok(UpdateComparisonReport {
        manifest: m.clone(),
        baseline_mean_f1: mean_std(&per_replicate.iter().map(|p| p.0).collect::<Vec<_>>()).0,
        key_counts: per_replicate.iter().map(|p| p.1).collect(),
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepReport {
    pub manifest: ExperimentManifest,
    pub rows: Vec<crate::update::LambdaRow>,
}

/// RBSRE over a λ grid for the manifest's own seeds and selection.
pub fn run_lambda_sweep(
    bench: &Benchmark,
    m: &ExperimentManifest,
    grid: &[(f64, f64)],
) -> Result<LambdaSweepReport> {
    let ck = run_initialization(bench, m)?;
    let selection = select_pool(bench, m, &ck.main, &ck.co)?;
    let labeled = selected_samples(&selection, &bench.corpora.novel_pool)?;
    if labeled.is_empty() {
        return Err(Error::contract("no key samples selected; nothing to sweep"));
    }
    let mixture = build_mixture(&labeled, &m.mix)?;
    let enc = encode_all(&mixture, &bench.norm_a);
    let data = PartitionedTrainSet::new(
        refs(&bench.enc_a.base_train),
        refs(&enc),
        ids(&labeled).into_iter().collect(),
    )?;
    let rows = crate::update::sweep_lambdas(
        grid,
        &ck.main,
        &data,
        &[],
        &refs(&bench.enc_a.novel_test),
        &m.update,
    )?;
    Ok(LambdaSweepReport {
        manifest: m.clone(),
        rows,
    })
}
