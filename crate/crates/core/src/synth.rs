//! Procedural document pages with pixel-exact ground truth.
//!
//! A page is filled top to bottom, one block per iteration: pick a region
//! kind from the configured mix, size it from the current font scale, render
//! it, advance the cursor. Two-column pages run one such loop per column.
//! Text is drawn as rows of dark blobs; only the blob pixels (and figure/table
//! ink) are labelled, everything else stays background.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, GrayImage, Mask};
use crate::rng::{mix64, SplitMix64};

/// Smallest block the fill loop will place; guarantees progress.
pub const MIN_BLOCK_HEIGHT: usize = 8;
/// Text line height in pixels at font scale 1.0.
pub const BASE_LINE_HEIGHT: f64 = 6.0;
/// Intensity of table rules.
pub const RULE_INK: f64 = 0.0;
/// Intensity of the text-like marks inside table cells.
pub const CELL_INK: f64 = 0.3;

pub const CLASS_NAMES: [&str; 7] = [
    "background",
    "figure",
    "table",
    "section",
    "caption",
    "list",
    "paragraph",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Figure = 1,
    Table = 2,
    Section = 3,
    Caption = 4,
    List = 5,
    Paragraph = 6,
}

impl RegionKind {
    pub const ALL: [RegionKind; 6] = [
        RegionKind::Figure,
        RegionKind::Table,
        RegionKind::Section,
        RegionKind::Caption,
        RegionKind::List,
        RegionKind::Paragraph,
    ];

    pub fn class_id(self) -> u8 {
        self as u8
    }

    pub fn from_class_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).checked_sub(1)?).copied()
    }

    fn is_text(self) -> bool {
        !matches!(self, RegionKind::Figure | RegionKind::Table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Peak deviation of figure pixels around their base gray level.
    pub figure_noise_amplitude: f64,
    /// Inclusive range of table rule spacing in pixels.
    pub table_line_spacing_range: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub page_width_px: usize,
    pub page_height_px: usize,
    pub margin_fraction_range: [f64; 2],
    pub two_column_probability: f64,
    pub font_scale_range: [f64; 2],
    /// Relative frequency of figure, table, section, caption, list, paragraph.
    pub class_mix_weights: [f64; 6],
    pub texture: TextureParams,
    pub style_tag: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            page_width_px: 128,
            page_height_px: 128,
            margin_fraction_range: [0.05, 0.12],
            two_column_probability: 0.5,
            font_scale_range: [0.8, 1.6],
            class_mix_weights: [1.0; 6],
            texture: TextureParams {
                figure_noise_amplitude: 0.2,
                table_line_spacing_range: [6, 12],
            },
            style_tag: "default".into(),
        }
    }
}

impl SynthConfig {
    /// Single-column pages, font scale around 1, nearly flat figures.
    pub fn base_style() -> Self {
        Self {
            margin_fraction_range: [0.06, 0.12],
            two_column_probability: 0.1,
            font_scale_range: [0.8, 1.2],
            texture: TextureParams {
                figure_noise_amplitude: 0.05,
                table_line_spacing_range: [9, 14],
            },
            style_tag: "base".into(),
            ..Self::default()
        }
    }

    /// Mostly two-column pages, larger fonts, heavily textured figures.
    pub fn novel_style() -> Self {
        Self {
            margin_fraction_range: [0.03, 0.08],
            two_column_probability: 0.8,
            font_scale_range: [1.3, 2.2],
            texture: TextureParams {
                figure_noise_amplitude: 0.6,
                table_line_spacing_range: [5, 9],
            },
            style_tag: "novel".into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_width_px < 32 {
            return Err(Error::config("page_width_px", "must be at least 32"));
        }
        if self.page_height_px < 32 {
            return Err(Error::config("page_height_px", "must be at least 32"));
        }
        check_interval(
            "margin_fraction_range",
            self.margin_fraction_range,
            0.0,
            0.4,
        )?;
        check_interval("font_scale_range", self.font_scale_range, 0.5, 3.0)?;
        if !(0.0..=1.0).contains(&self.two_column_probability) {
            return Err(Error::config(
                "two_column_probability",
                "must lie in [0, 1]",
            ));
        }
        if self
            .class_mix_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::config(
                "class_mix_weights",
                "weights must be finite and non-negative",
            ));
        }
        let caption = RegionKind::Caption as usize - 1;
        let placeable = self
            .class_mix_weights
            .iter()
            .enumerate()
            .any(|(i, &w)| i != caption && w > 0.0);
        if !placeable {
            return Err(Error::config(
                "class_mix_weights",
                "at least one non-caption weight must be positive",
            ));
        }
        let a = self.texture.figure_noise_amplitude;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::config(
                "texture.figure_noise_amplitude",
                "must lie in [0, 1]",
            ));
        }
        let [lo, hi] = self.texture.table_line_spacing_range;
        if lo < 2 || lo > hi {
            return Err(Error::config(
                "texture.table_line_spacing_range",
                "need 2 <= lower <= upper",
            ));
        }
        if self.style_tag.is_empty() {
            return Err(Error::config("style_tag", "must not be empty"));
        }
        Ok(())
    }
}

fn check_interval(field: &'static str, r: [f64; 2], min: f64, max: f64) -> Result<()> {
    let [lo, hi] = r;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::config(
            field,
            format!("interval [{lo}, {hi}] is empty"),
        ));
    }
    if lo < min || hi > max {
        return Err(Error::config(
            field,
            format!("interval [{lo}, {hi}] must lie within [{min}, {max}]"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStyle {
    pub font_scale: f64,
    pub noise_amplitude: f64,
    pub line_spacing: usize,
    pub ink: f64,
}

impl RegionStyle {
    pub fn line_height(&self) -> usize {
        line_height(self.font_scale)
    }
}

pub fn line_height(font_scale: f64) -> usize {
    ((BASE_LINE_HEIGHT * font_scale).round() as usize).max(3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub class_id: u8,
    pub rect: Rect,
    pub style: RegionStyle,
    /// Pixels labelled with `class_id` inside `rect`.
    pub foreground_px: usize,
    /// Set when the rect could not hold a single text line.
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub image: GrayImage,
    pub mask: Mask,
    pub regions: Vec<RegionSpec>,
    pub style_tag: String,
    pub seed: u64,
    /// Fill-loop iterations, one entry per column.
    pub fill_iterations: Vec<usize>,
}

/// Rendered pixels and labels of one region, sized like its rect.
#[derive(Debug, Clone)]
pub struct RegionPatch {
    pub pixels: GrayImage,
    pub mask: Mask,
}

impl RegionPatch {
    pub fn foreground_px(&self) -> usize {
        self.mask.data().iter().filter(|&&c| c != 0).count()
    }
}

/// Renders one region into a `rect.w × rect.h` patch. Returns `None` when a
/// text region cannot fit a single line.
pub fn render_region(
    kind: RegionKind,
    rect: Rect,
    style: &RegionStyle,
    rng: &mut SplitMix64,
) -> Option<RegionPatch> {
    if rect.w == 0 || rect.h == 0 {
        return None;
    }
    let mut pixels = GrayImage::new(rect.w, rect.h, 1.0);
    let mut mask = Mask::new(rect.w, rect.h);
    let class = kind.class_id();
    match kind {
        RegionKind::Figure => {
            let base = rng.uniform(0.35, 0.75);
            let a = style.noise_amplitude;
            for y in 0..rect.h {
                for x in 0..rect.w {
                    let v = if a > 0.0 {
                        (base + a * (2.0 * rng.unit() - 1.0)).clamp(0.0, 1.0)
                    } else {
                        base
                    };
                    pixels.set(x, y, v);
                    mask.set(x, y, class);
                }
            }
        }
        RegionKind::Table => {
            let rows = rule_offsets(rect.h, style.line_spacing);
            let cols = rule_offsets(rect.w, style.line_spacing);
            for &y in &rows {
                for x in 0..rect.w {
                    pixels.set(x, y, RULE_INK);
                    mask.set(x, y, class);
                }
            }
            for &x in &cols {
                for y in 0..rect.h {
                    pixels.set(x, y, RULE_INK);
                    mask.set(x, y, class);
                }
            }
            // one short mark per cell, strictly inside the rules
            for ry in rows.windows(2) {
                for cx in cols.windows(2) {
                    let (cell_w, cell_h) = (cx[1] - cx[0] - 1, ry[1] - ry[0] - 1);
                    if cell_w < 3 || cell_h < 3 {
                        continue;
                    }
                    let mark_w = rng.int_in(1, cell_w - 2);
                    let my = ry[0] + 1 + (cell_h - 1) / 2;
                    for x in cx[0] + 2..cx[0] + 2 + mark_w.min(cell_w - 2) {
                        pixels.set(x, my, CELL_INK);
                        mask.set(x, my, class);
                    }
                }
            }
        }
        _ => {
            let lh = style.line_height();
            let rows = rect.h / lh;
            if rows == 0 {
                return None;
            }
            let blob_frac = if kind == RegionKind::Section {
                0.7
            } else {
                0.55
            };
            let blob_h = ((lh as f64 * blob_frac).round() as usize).clamp(1, lh - 1);
            let pad = (lh - blob_h) / 2;
            let gap = ((2.0 * style.font_scale).round() as usize).max(1);
            let (wmin, wmax) = (
                ((2.0 * style.font_scale).round() as usize).max(1),
                ((8.0 * style.font_scale).round() as usize).max(2),
            );
            let (left, right) = match kind {
                RegionKind::Caption => (rect.w / 10, rect.w - rect.w / 10),
                _ => (0, rect.w),
            };
            for r in 0..rows {
                let top = r * lh + pad;
                let mut x = left;
                let line_end = match kind {
                    RegionKind::Section => {
                        left + ((right - left) as f64 * rng.uniform(0.3, 0.7)).round() as usize
                    }
                    _ if r + 1 == rows => {
                        left + ((right - left) as f64 * rng.uniform(0.3, 0.9)).round() as usize
                    }
                    _ => right,
                }
                .clamp(left + 1, right);
                if kind == RegionKind::List {
                    let side = blob_h.min(line_end - x);
                    fill_block(
                        &mut pixels,
                        &mut mask,
                        x,
                        top,
                        side,
                        blob_h,
                        style.ink,
                        class,
                    );
                    x += side + 2 * gap;
                }
                while x < line_end {
                    let w = rng.int_in(wmin, wmax).min(line_end - x);
                    fill_block(&mut pixels, &mut mask, x, top, w, blob_h, style.ink, class);
                    x += w + gap;
                }
            }
        }
    }
    Some(RegionPatch { pixels, mask })
}

#[allow(clippy::too_many_arguments)]
fn fill_block(
    pixels: &mut GrayImage,
    mask: &mut Mask,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    ink: f64,
    class: u8,
) {
    for y in y0..(y0 + h).min(pixels.height()) {
        for x in x0..(x0 + w).min(pixels.width()) {
            pixels.set(x, y, ink);
            mask.set(x, y, class);
        }
    }
}

/// Rule positions along an extent: every `spacing` pixels from 0, plus a
/// closing rule at `extent - 1`.
pub fn rule_offsets(extent: usize, spacing: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..extent).step_by(spacing.max(1)).collect();
    if extent > 0 && *v.last().unwrap() != extent - 1 {
        v.push(extent - 1);
    }
    v
}

/// Generates one page. Deterministic in `(config, seed)`.
pub fn generate_document(config: &SynthConfig, seed: u64) -> Result<LabeledDocument> {
    config.validate()?;
    let (pw, ph) = (config.page_width_px, config.page_height_px);
    let mut layout = SplitMix64::derive_named(seed, "layout");
    let mut texture = SplitMix64::derive_named(seed, "texture");

    let margin = layout.uniform(
        config.margin_fraction_range[0],
        config.margin_fraction_range[1],
    );
    let font_scale = layout.uniform(config.font_scale_range[0], config.font_scale_range[1]);
    let two_column = layout.bernoulli(config.two_column_probability);

    let (mx, my) = (
        (margin * pw as f64).round() as usize,
        (margin * ph as f64).round() as usize,
    );
    let content_x = mx;
    let content_w = pw.saturating_sub(2 * mx);
    let (top, bottom) = (my, ph.saturating_sub(my));

    let columns: Vec<(usize, usize)> = if two_column {
        let gutter = ((0.04 * pw as f64).round() as usize).max(2);
        let col_w = content_w.saturating_sub(gutter) / 2;
        vec![(content_x, col_w), (content_x + col_w + gutter, col_w)]
    } else {
        vec![(content_x, content_w)]
    };

    let mut image = GrayImage::new(pw, ph, 1.0);
    let mut mask = Mask::new(pw, ph);
    let mut regions = Vec::new();
    let mut fill_iterations = Vec::with_capacity(columns.len());
    let content_h = bottom.saturating_sub(top);
    let ink = layout.uniform(0.0, 0.25);

    for &(col_x, col_w) in &columns {
        let mut iterations = 0;
        if col_w == 0 {
            fill_iterations.push(0);
            continue;
        }
        let mut y = top;
        let mut prev: Option<RegionKind> = None;
        while bottom.saturating_sub(y) >= MIN_BLOCK_HEIGHT {
            iterations += 1;
            let remaining = bottom - y;
            let mut weights = config.class_mix_weights;
            if !matches!(prev, Some(RegionKind::Figure | RegionKind::Table)) {
                weights[RegionKind::Caption as usize - 1] = 0.0;
            }
            let kind = RegionKind::ALL[layout
                .weighted_index(&weights)
                .expect("validated mix has a placeable kind")];
            let scale = match kind {
                RegionKind::Section => font_scale * 1.5,
                RegionKind::Caption => font_scale * 0.85,
                _ => font_scale,
            };
            let lh = line_height(scale);
            let desired = match kind {
                RegionKind::Figure => {
                    (layout.uniform(0.18, 0.4) * content_h as f64).round() as usize
                }
                RegionKind::Table => {
                    (layout.uniform(0.15, 0.35) * content_h as f64).round() as usize
                }
                RegionKind::Section => lh,
                RegionKind::Caption => layout.int_in(1, 2) * lh,
                RegionKind::List => layout.int_in(2, 5) * lh,
                RegionKind::Paragraph => layout.int_in(2, 7) * lh,
            };
            let h = desired.max(MIN_BLOCK_HEIGHT).min(remaining);
            let (rx, rw) = match kind {
                RegionKind::Figure | RegionKind::Table => {
                    let frac = if kind == RegionKind::Figure {
                        layout.uniform(0.5, 1.0)
                    } else {
                        layout.uniform(0.7, 1.0)
                    };
                    let w = ((col_w as f64 * frac).round() as usize).clamp(1, col_w);
                    (col_x + (col_w - w) / 2, w)
                }
                _ => (col_x, col_w),
            };
            let spacing = layout.int_in(
                config.texture.table_line_spacing_range[0],
                config.texture.table_line_spacing_range[1],
            );
            let style = RegionStyle {
                font_scale: scale,
                noise_amplitude: config.texture.figure_noise_amplitude,
                line_spacing: spacing,
                ink: if kind.is_text() { ink } else { RULE_INK },
            };
            let rect = Rect { x: rx, y, w: rw, h };
            let mut region_rng = texture.split();
            let (foreground_px, omitted) = match render_region(kind, rect, &style, &mut region_rng)
            {
                Some(patch) => {
                    for py in 0..h {
                        for px in 0..rw {
                            image.set(rx + px, y + py, patch.pixels.get(px, py));
                            mask.set(rx + px, y + py, patch.mask.get(px, py));
                        }
                    }
                    (patch.foreground_px(), false)
                }
                None => (0, true),
            };
            regions.push(RegionSpec {
                class_id: kind.class_id(),
                rect,
                style,
                foreground_px,
                omitted,
            });
            let gap = layout.int_in(2, 4);
            y += h + gap;
            prev = if omitted { None } else { Some(kind) };
        }
        fill_iterations.push(iterations);
    }

    Ok(LabeledDocument {
        // stored intensities are exactly what the 8-bit file holds
        image: image.quantized(),
        mask,
        regions,
        style_tag: config.style_tag.clone(),
        seed,
        fill_iterations,
    })
}

/// Seed of document `index` in a corpus rooted at `corpus_seed`.
pub fn document_seed(corpus_seed: u64, index: usize) -> u64 {
    mix64(corpus_seed ^ mix64(index as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub split: Split,
    pub style_tag: String,
    pub seed: u64,
}

/// JSON-lines corpus index; paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl CorpusManifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Number of training entries for `n` documents at `split_ratio`. The
/// validation share is floored, so a single document always lands in train.
pub fn train_count(n: usize, split_ratio: f64) -> usize {
    let val = ((n as f64) * (1.0 - split_ratio) + 1e-9).floor() as usize;
    n - val.min(n)
}

/// Generates `n` documents, writes `<id>.pgm` / `<id>.mask.pgm` pairs and the
/// manifest into `output_dir`. The first `train_count` ids form the training
/// split.
pub fn generate_corpus(
    config: &SynthConfig,
    n: usize,
    seed: u64,
    output_dir: &Path,
    split_ratio: f64,
) -> Result<CorpusManifest> {
    config.validate()?;
    if n == 0 {
        return Err(Error::contract("corpus size must be at least 1"));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::config("split_ratio", "must lie in (0, 1)"));
    }
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let n_train = train_count(n, split_ratio);
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let doc_seed = document_seed(seed, i);
            let doc = generate_document(config, doc_seed)?;
            let id = format!("{}-{:05}", config.style_tag, i);
            let image_path = format!("{id}.pgm");
            let mask_path = format!("{id}.mask.pgm");
            raster::write_image_pgm(&output_dir.join(&image_path), &doc.image)?;
            raster::write_mask_pgm(&output_dir.join(&mask_path), &doc.mask)?;
            Ok(ManifestRecord {
                id,
                image_path,
                mask_path,
                split: if i < n_train {
                    Split::Train
                } else {
                    Split::Val
                },
                style_tag: config.style_tag.clone(),
                seed: doc_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest { records };
    let path: PathBuf = output_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
