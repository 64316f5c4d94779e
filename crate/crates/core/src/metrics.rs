//! Pixel-level evaluation from a confusion matrix.
//!
//! Rows are ground truth, columns are predictions. A class whose precision or
//! recall denominator is empty scores 0 and is flagged as undefined. Classes
//! absent from both truth and prediction are left out of macro averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::contract("confusion matrix must be square"));
        }
        Ok(Self {
            n,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel at `(gt, pred)`.
    pub fn accumulate(&mut self, pred: &Mask, gt: &Mask) -> Result<()> {
        if !pred.same_dims(gt) {
            return Err(Error::contract(format!(
                "prediction is {}x{}, ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        self.accumulate_labels(pred.data(), gt.data())
    }

    pub fn accumulate_labels(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::contract("label buffers differ in length"));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p >= self.n || g >= self.n {
                return Err(Error::contract(format!(
                    "class id {} out of range for {} classes",
                    p.max(g),
                    self.n
                )));
            }
            self.counts[g * self.n + p] += 1;
        }
        Ok(())
    }

    /// Entrywise sum; used to merge per-image matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::contract("merging matrices of different size"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::contract("metrics of an empty confusion matrix"));
        }
        Ok(())
    }

    fn row_sum(&self, i: usize) -> u64 {
        (0..self.n).map(|j| self.get(i, j)).sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let diag: u64 = (0..self.n).map(|i| self.get(i, i)).sum();
        Ok(diag as f64 / self.total() as f64)
    }

    pub fn precision(&self) -> Result<PerClass> {
        self.ensure_nonempty()?;
        Ok(PerClass::from_ratios(
            (0..self.n).map(|i| (self.get(i, i), self.col_sum(i))),
            &self.absent_classes(),
        ))
    }

    /// Classes with an empty row and an empty column.
    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.row_sum(i) == 0 && self.col_sum(i) == 0)
            .collect()
    }

    pub fn recall(&self) -> Result<PerClass> {
        self.ensure_nonempty()?;
        Ok(PerClass::from_ratios(
            (0..self.n).map(|i| (self.get(i, i), self.row_sum(i))),
            &self.absent_classes(),
        ))
    }

    /// Harmonic mean of macro precision and macro recall.
    pub fn f1(&self) -> Result<f64> {
        let p = self.precision()?.macro_avg;
        let r = self.recall()?.macro_avg;
        Ok(if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        })
    }

    /// `IoU_i = M_ii / (row_i + col_i - M_ii)`.
    pub fn iou(&self) -> Result<IouScores> {
        self.ensure_nonempty()?;
        let pc = PerClass::from_ratios(
            (0..self.n).map(|i| {
                let tp = self.get(i, i);
                (tp, self.row_sum(i) + self.col_sum(i) - tp)
            }),
            &self.absent_classes(),
        );
        Ok(IouScores {
            per_class: pc.per_class,
            mean: pc.macro_avg,
            undefined: pc.undefined,
        })
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            acc: self.accuracy()?,
            precision: self.precision()?,
            recall: self.recall()?,
            f1: self.f1()?,
            iou: self.iou()?,
            pixel_total: self.total(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub per_class: Vec<f64>,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
    /// Classes whose denominator was zero (value reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<usize>,
}

impl PerClass {
    fn from_ratios(parts: impl Iterator<Item = (u64, u64)>, absent: &[usize]) -> Self {
        let mut per_class = Vec::new();
        let mut undefined = Vec::new();
        for (i, (num, den)) in parts.enumerate() {
            if den == 0 {
                undefined.push(i);
                per_class.push(0.0);
            } else {
                per_class.push(num as f64 / den as f64);
            }
        }
        let present: Vec<f64> = per_class
            .iter()
            .enumerate()
            .filter(|(i, _)| !absent.contains(i))
            .map(|(_, v)| *v)
            .collect();
        let macro_avg = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Self {
            per_class,
            macro_avg,
            undefined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouScores {
    pub per_class: Vec<f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<usize>,
}

/// Serialized as `{acc, precision{per_class, macro}, recall{..}, f1,
/// iou{per_class, mean}, pixel_total}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub precision: PerClass,
    pub recall: PerClass,
    pub f1: f64,
    pub iou: IouScores,
    pub pixel_total: u64,
}
