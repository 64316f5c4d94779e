//! Labelled pages in memory and their feature encodings.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::features::{normalized_features, FeatureSetId, Normalizer};
use crate::raster::{self, GrayImage, Mask};
use crate::synth::{CorpusManifest, LabeledDocument, ManifestRecord};

/// Which side of the style shift a training page comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionTag {
    Base,
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: Mask,
    pub partition: PartitionTag,
}

impl Sample {
    pub fn from_document(
        id: impl Into<String>,
        doc: LabeledDocument,
        partition: PartitionTag,
    ) -> Self {
        Self {
            id: id.into(),
            image: doc.image,
            mask: doc.mask,
            partition,
        }
    }

    pub fn load(dir: &Path, record: &ManifestRecord, partition: PartitionTag) -> Result<Self> {
        Ok(Self {
            id: record.id.clone(),
            image: raster::read_image_pgm(&dir.join(&record.image_path))?,
            mask: raster::read_mask_pgm(&dir.join(&record.mask_path))?,
            partition,
        })
    }
}

/// Loads every record of a corpus directory in manifest order.
pub fn load_corpus(
    dir: &Path,
    manifest: &CorpusManifest,
    partition: PartitionTag,
) -> Result<Vec<Sample>> {
    manifest
        .records
        .par_iter()
        .map(|r| Sample::load(dir, r, partition))
        .collect()
}

/// Normalized features and labels of one page, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPage {
    pub id: String,
    pub partition: PartitionTag,
    pub set_id: FeatureSetId,
    pub width: usize,
    pub height: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl EncodedPage {
    pub fn encode(sample: &Sample, normalizer: &Normalizer) -> Self {
        let stack = normalized_features(&sample.image, normalizer);
        Self {
            id: sample.id.clone(),
            partition: sample.partition,
            set_id: normalizer.set_id,
            width: stack.width,
            height: stack.height,
            features: stack.values,
            labels: sample.mask.data().to_vec(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.set_id.dim()
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }
}

pub fn encode_all(samples: &[Sample], normalizer: &Normalizer) -> Vec<EncodedPage> {
    samples
        .par_iter()
        .map(|s| EncodedPage::encode(s, normalizer))
        .collect()
}

/// SHA-256 over the ordered ids; identifies the pages a normalizer was fit on.
pub fn fingerprint_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits a normalizer on the first `max_pages` samples.
pub fn fit_normalizer_on(
    samples: &[Sample],
    set_id: FeatureSetId,
    max_pages: usize,
) -> Result<(Normalizer, Vec<String>)> {
    let chosen = &samples[..samples.len().min(max_pages)];
    let stacks: Vec<_> = chosen
        .par_iter()
        .map(|s| crate::features::extract_features(&s.image, set_id))
        .collect();
    Normalizer::fit(
        &stacks,
        set_id,
        fingerprint_ids(chosen.iter().map(|s| s.id.as_str())),
    )
}
