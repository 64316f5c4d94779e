//! On-disk experiment directory:
//!
//! ```text
//! manifest.json
//! corpora/{base,novel,second_base}/   manifest.jsonl + PGM pairs
//! checkpoints/                        agents and normalizers
//! selections/                         selection results
//! annotations/queue.json, masks/, records/
//! reports/
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::agents::{load_checkpoint, save_checkpoint, AgentModel};
use crate::annotation::{AnnotationRecord, PendingItem, QueueState};
use crate::collab::{SelectionResult, SelectionStrategy};
use crate::dataset::{load_corpus, PartitionTag, Sample};
use crate::error::{Error, Result};
use crate::features::{FeatureSetId, Normalizer};
use crate::pipeline::{
    fit_normalizers, Benchmark, Checkpoints, Corpora, CorpusSpec, ExperimentManifest,
    LabelProvider, Labels, ProviderMode,
};
use crate::raster::{read_mask_pgm, write_mask_pgm, Mask};
use crate::synth::{generate_corpus, CorpusManifest, Split, MANIFEST_FILE};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const BASE_CORPUS: &str = "base";
pub const NOVEL_CORPUS: &str = "novel";
pub const SECOND_CORPUS: &str = "second_base";
pub const MAIN_CHECKPOINT: &str = "main";
pub const CO_CHECKPOINT: &str = "co";
pub const UPDATED_CHECKPOINT: &str = "main_updated";
pub const SELECTION: &str = "selection";
pub const LOOP_REPORT: &str = "loop";

#[derive(Debug, Clone)]
pub struct ExperimentDir {
    root: PathBuf,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    // write-then-rename so readers never see a partial file
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl ExperimentDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates the directory tree and writes the manifest.
    pub fn create(root: impl Into<PathBuf>, manifest: &ExperimentManifest) -> Result<Self> {
        manifest.validate()?;
        let dir = Self::new(root);
        for sub in [
            "corpora",
            "checkpoints",
            "selections",
            "annotations/masks",
            "annotations/records",
            "reports",
        ] {
            let p = dir.root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_json(&dir.manifest_path(), manifest)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_JSON)
    }

    pub fn manifest(&self) -> Result<ExperimentManifest> {
        let m: ExperimentManifest = read_json(&self.manifest_path())?;
        m.validate()?;
        Ok(m)
    }

    pub fn corpus_dir(&self, name: &str) -> PathBuf {
        self.root.join("corpora").join(name)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn normalizer_path(&self, set: FeatureSetId) -> PathBuf {
        let tag = match set {
            FeatureSetId::A => "a",
            FeatureSetId::B => "b",
        };
        self.root
            .join("checkpoints")
            .join(format!("normalizer_{tag}.json"))
    }

    pub fn selection_path(&self, name: &str) -> PathBuf {
        self.root.join("selections").join(format!("{name}.json"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }

    pub fn queue_path(&self) -> PathBuf {
        self.root.join("annotations").join("queue.json")
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join("masks")
            .join(format!("{id}.mask.pgm"))
    }

    pub fn record_path(&self, id: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join("records")
            .join(format!("{id}.json"))
    }

    fn corpora_layout(m: &ExperimentManifest) -> Vec<(&'static str, &CorpusSpec, usize, usize)> {
        let p = &m.partitions;
        let mut v = vec![
            (BASE_CORPUS, &m.base, p.base_train, p.base_val),
            (NOVEL_CORPUS, &m.novel, p.novel_pool, p.novel_test),
        ];
        if let Some(s) = &m.second_base {
            v.push((SECOND_CORPUS, s, p.base_train, p.base_val));
        }
        v
    }

    /// Writes every corpus and fits and saves both normalizers. The first
    /// partition of each corpus is recorded as the train split.
    pub fn materialize(&self, m: &ExperimentManifest) -> Result<()> {
        for (name, spec, first, second) in Self::corpora_layout(m) {
            let dir = self.corpus_dir(name);
            let n = first + second;
            let mut cm =
                generate_corpus(&spec.config, n, spec.seed, &dir, first as f64 / n as f64)?;
            for (i, r) in cm.records.iter_mut().enumerate() {
                r.split = if i < first { Split::Train } else { Split::Val };
            }
            let path = dir.join(MANIFEST_FILE);
            fs::write(&path, cm.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
        }
        let corpora = self.load_corpora(m)?;
        let (a, b) = fit_normalizers(m, &corpora)?;
        a.save(&self.normalizer_path(FeatureSetId::A))?;
        b.save(&self.normalizer_path(FeatureSetId::B))
    }

    fn load_split(
        &self,
        name: &str,
        first: usize,
        second: usize,
        tag: PartitionTag,
    ) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let dir = self.corpus_dir(name);
        let cm = CorpusManifest::load(&dir)?;
        if cm.count(Split::Train) != first || cm.count(Split::Val) != second {
            return Err(Error::contract(format!(
                "corpus {name} holds {}+{} pages, manifest expects {first}+{second}",
                cm.count(Split::Train),
                cm.count(Split::Val)
            )));
        }
        let split = |s: Split| CorpusManifest {
            records: cm
                .records
                .iter()
                .filter(|r| r.split == s)
                .cloned()
                .collect(),
        };
        Ok((
            load_corpus(&dir, &split(Split::Train), tag)?,
            load_corpus(&dir, &split(Split::Val), tag)?,
        ))
    }

    pub fn load_corpora(&self, m: &ExperimentManifest) -> Result<Corpora> {
        let p = &m.partitions;
        let (base_train, base_val) =
            self.load_split(BASE_CORPUS, p.base_train, p.base_val, PartitionTag::Base)?;
        let (novel_pool, novel_test) = self.load_split(
            NOVEL_CORPUS,
            p.novel_pool,
            p.novel_test,
            PartitionTag::Novel,
        )?;
        let (second_train, second_val) = if m.second_base.is_some() {
            self.load_split(SECOND_CORPUS, p.base_train, p.base_val, PartitionTag::Base)?
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Corpora {
            base_train,
            base_val,
            novel_pool,
            novel_test,
            second_train,
            second_val,
        })
    }

    /// Novel pool pages only; cheap enough for the labelling server.
    pub fn load_pool(&self, m: &ExperimentManifest) -> Result<Vec<Sample>> {
        Ok(self
            .load_split(
                NOVEL_CORPUS,
                m.partitions.novel_pool,
                m.partitions.novel_test,
                PartitionTag::Novel,
            )?
            .0)
    }

    pub fn load_normalizers(&self) -> Result<(Normalizer, Normalizer)> {
        Ok((
            Normalizer::load(&self.normalizer_path(FeatureSetId::A))?,
            Normalizer::load(&self.normalizer_path(FeatureSetId::B))?,
        ))
    }

    pub fn load_benchmark(&self, m: &ExperimentManifest) -> Result<Benchmark> {
        let corpora = self.load_corpora(m)?;
        Benchmark::from_corpora(m, corpora, Some(self.load_normalizers()?))
    }

    pub fn save_checkpoints(&self, ck: &Checkpoints) -> Result<()> {
        save_checkpoint(&ck.main, &self.checkpoint_path(MAIN_CHECKPOINT))?;
        save_checkpoint(&ck.co, &self.checkpoint_path(CO_CHECKPOINT))
    }

    pub fn load_checkpoints(&self) -> Result<Checkpoints> {
        Ok(Checkpoints {
            main: load_checkpoint(&self.checkpoint_path(MAIN_CHECKPOINT))?,
            co: load_checkpoint(&self.checkpoint_path(CO_CHECKPOINT))?,
        })
    }

    pub fn load_agent(&self, name: &str) -> Result<AgentModel> {
        load_checkpoint(&self.checkpoint_path(name))
    }

    pub fn write_label(&self, id: &str, mask: &Mask) -> Result<()> {
        let path = self.label_path(id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_mask_pgm(&path, mask)
    }

    pub fn read_label(&self, id: &str) -> Result<Mask> {
        read_mask_pgm(&self.label_path(id))
    }

    pub fn write_record(&self, record: &AnnotationRecord) -> Result<()> {
        write_json(&self.record_path(&record.sample_id), record)
    }

    pub fn read_queue(&self) -> Result<Option<QueueState>> {
        let p = self.queue_path();
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn write_queue(&self, q: &QueueState) -> Result<()> {
        write_json(&self.queue_path(), q)
    }
}

/// Queue entries for a selection: disagreement for KSS, otherwise the
/// strategy's own score.
pub fn pending_items(selection: &SelectionResult) -> Vec<PendingItem> {
    selection
        .selected
        .iter()
        .map(|id| {
            let s = selection.score_of(id).unwrap_or(0.0);
            PendingItem {
                id: id.clone(),
                disagreement: if selection.strategy == SelectionStrategy::Kss {
                    1.0 - s
                } else {
                    s
                },
            }
        })
        .collect()
}

/// Labels written by annotators through the queue. The first request for a
/// run opens the queue and suspends; later requests succeed once nothing is
/// pending.
pub struct QueueLabels {
    pub dir: ExperimentDir,
}

impl LabelProvider for QueueLabels {
    fn mode(&self) -> ProviderMode {
        ProviderMode::HumanQueue
    }

    fn labels(
        &mut self,
        run_id: &str,
        selection: &SelectionResult,
        pool: &[Sample],
    ) -> Result<Labels> {
        let queue = match self.dir.read_queue()? {
            Some(q) if q.run_id.as_deref() == Some(run_id) => q,
            _ => {
                self.dir.write_queue(&QueueState {
                    pending: pending_items(selection),
                    completed: Vec::new(),
                    run_id: Some(run_id.to_string()),
                })?;
                return Ok(Labels::Pending);
            }
        };
        if !queue.pending.is_empty() {
            return Ok(Labels::Pending);
        }
        selection
            .selected
            .iter()
            .map(|id| {
                if !queue.is_completed(id) {
                    return Err(Error::contract(format!(
                        "selected sample {id} was never queued"
                    )));
                }
                let page = pool.iter().find(|s| &s.id == id).ok_or_else(|| {
                    Error::contract(format!("selected id {id} is not in the pool"))
                })?;
                let mask = self.dir.read_label(id)?;
                if mask.width() != page.image.width() || mask.height() != page.image.height() {
                    return Err(Error::contract(format!(
                        "annotation for {id} has the wrong size"
                    )));
                }
                Ok(Sample {
                    mask,
                    ..page.clone()
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Labels::Ready)
    }
}
