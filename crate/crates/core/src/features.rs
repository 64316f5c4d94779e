//! Per-pixel handcrafted features, two disjoint recipes (one per agent).
//!
//! All neighbourhood filters use clamp-to-edge borders. Box statistics are
//! computed from a padded summed-area table over mean-centred intensities,
//! which keeps constant images exactly constant.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Intensities below this are treated as ink for run lengths and densities.
pub const DARK_THRESHOLD: f64 = 0.5;
/// Standard deviations are floored here when fitting a normalizer.
pub const STD_FLOOR: f64 = 1e-6;
/// Minimum pixel count for fitting a normalizer.
pub const MIN_FIT_PIXELS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    A,
    B,
}

impl FeatureSetId {
    pub fn dim(self) -> usize {
        match self {
            FeatureSetId::A => 10,
            FeatureSetId::B => 8,
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            FeatureSetId::A => &[
                "intensity",
                "mean_r1",
                "mean_r3",
                "mean_r7",
                "std_r3",
                "std_r7",
                "sobel_x_abs",
                "sobel_y_abs",
                "x_norm",
                "y_norm",
            ],
            FeatureSetId::B => &[
                "intensity",
                "hrun",
                "vrun",
                "mean_r15",
                "std_r15",
                "sobel_mag",
                "y_norm",
                "dark_density_r5",
            ],
        }
    }
}

/// Pixel-major feature vectors: pixel `i` occupies `values[i*dim..(i+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub width: usize,
    pub height: usize,
    pub set_id: FeatureSetId,
    pub values: Vec<f64>,
}

impl FeatureStack {
    pub fn dim(&self) -> usize {
        self.set_id.dim()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.dim())
            .copied()
            .collect()
    }

    fn from_channels(
        width: usize,
        height: usize,
        set_id: FeatureSetId,
        channels: &[Vec<f64>],
    ) -> Self {
        debug_assert_eq!(channels.len(), set_id.dim());
        let n = width * height;
        let mut values = Vec::with_capacity(n * channels.len());
        for i in 0..n {
            values.extend(channels.iter().map(|c| c[i]));
        }
        Self {
            width,
            height,
            set_id,
            values,
        }
    }
}

const VAR_SNAP: f64 = 1e-14;

/// Summed-area table over a clamp-padded, mean-centred copy of an image.
struct BoxSums {
    width: usize,
    radius: usize,
    offset: f64,
    stride: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl BoxSums {
    fn new(width: usize, height: usize, data: &[f64], radius: usize) -> Self {
        let offset = data.iter().sum::<f64>() / data.len() as f64;
        let (pw, ph) = (width + 2 * radius, height + 2 * radius);
        let stride = pw + 1;
        let mut sum = vec![0.0; stride * (ph + 1)];
        let mut sum_sq = vec![0.0; stride * (ph + 1)];
        for py in 0..ph {
            let sy = (py as isize - radius as isize).clamp(0, height as isize - 1) as usize;
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for px in 0..pw {
                let sx = (px as isize - radius as isize).clamp(0, width as isize - 1) as usize;
                let v = data[sy * width + sx] - offset;
                row += v;
                row_sq += v * v;
                let at = (py + 1) * stride + px + 1;
                sum[at] = sum[at - stride] + row;
                sum_sq[at] = sum_sq[at - stride] + row_sq;
            }
        }
        Self {
            width,
            radius,
            offset,
            stride,
            sum,
            sum_sq,
        }
    }

    fn window(&self, table: &[f64], x: usize, y: usize) -> f64 {
        // padded window [x, x+2r] x [y, y+2r]
        let k = 2 * self.radius + 1;
        let (x0, y0, x1, y1) = (x, y, x + k, y + k);
        table[y1 * self.stride + x1] - table[y0 * self.stride + x1] - table[y1 * self.stride + x0]
            + table[y0 * self.stride + x0]
    }

    fn mean_and_std(&self, height: usize) -> (Vec<f64>, Vec<f64>) {
        let area = ((2 * self.radius + 1) * (2 * self.radius + 1)) as f64;
        let n = self.width * height;
        let mut means = Vec::with_capacity(n);
        let mut stds = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..self.width {
                let m = self.window(&self.sum, x, y) / area;
                let m2 = self.window(&self.sum_sq, x, y) / area;
                means.push(self.offset + m);
                // cancellation residue on flat windows; any real 8-bit
                // variation is orders of magnitude above this
                let var = m2 - m * m;
                stds.push(if var < VAR_SNAP { 0.0 } else { var.sqrt() });
            }
        }
        (means, stds)
    }
}

pub fn box_mean(image: &GrayImage, radius: usize) -> Vec<f64> {
    BoxSums::new(image.width(), image.height(), image.data(), radius)
        .mean_and_std(image.height())
        .0
}

pub fn box_mean_std(image: &GrayImage, radius: usize) -> (Vec<f64>, Vec<f64>) {
    BoxSums::new(image.width(), image.height(), image.data(), radius).mean_and_std(image.height())
}

/// Sobel responses `(gx, gy)` with clamp-to-edge borders.
pub fn sobel(image: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (image.width(), image.height());
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| image.get_clamped(x + dx, y + dy);
            gx.push((p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)));
            gy.push((p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)));
        }
    }
    (gx, gy)
}

/// Length of the horizontal and vertical dark runs through each pixel,
/// divided by the page width and height respectively; 0 for light pixels.
pub fn dark_run_lengths(image: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (image.width(), image.height());
    let dark: Vec<bool> = image.data().iter().map(|&v| v < DARK_THRESHOLD).collect();
    let mut hrun = vec![0.0; w * h];
    let mut vrun = vec![0.0; w * h];
    for y in 0..h {
        let mut x = 0;
        while x < w {
            if !dark[y * w + x] {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && dark[y * w + x] {
                x += 1;
            }
            let v = (x - start) as f64 / w as f64;
            for xi in start..x {
                hrun[y * w + xi] = v;
            }
        }
    }
    for x in 0..w {
        let mut y = 0;
        while y < h {
            if !dark[y * w + x] {
                y += 1;
                continue;
            }
            let start = y;
            while y < h && dark[y * w + x] {
                y += 1;
            }
            let v = (y - start) as f64 / h as f64;
            for yi in start..y {
                vrun[yi * w + x] = v;
            }
        }
    }
    (hrun, vrun)
}

fn coordinate_channels(w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let norm = |i: usize, n: usize| {
        if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut xs = Vec::with_capacity(w * h);
    let mut ys = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            xs.push(norm(x, w));
            ys.push(norm(y, h));
        }
    }
    (xs, ys)
}

pub fn extract_features(image: &GrayImage, set_id: FeatureSetId) -> FeatureStack {
    let (w, h) = (image.width(), image.height());
    let intensity = image.data().to_vec();
    let (xs, ys) = coordinate_channels(w, h);
    let (gx, gy) = sobel(image);
    let channels = match set_id {
        FeatureSetId::A => {
            let m1 = box_mean(image, 1);
            let (m3, s3) = box_mean_std(image, 3);
            let (m7, s7) = box_mean_std(image, 7);
            vec![
                intensity,
                m1,
                m3,
                m7,
                s3,
                s7,
                gx.iter().map(|v| v.abs()).collect(),
                gy.iter().map(|v| v.abs()).collect(),
                xs,
                ys,
            ]
        }
        FeatureSetId::B => {
            let (hrun, vrun) = dark_run_lengths(image);
            let (m15, s15) = box_mean_std(image, 15);
            let mag = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a * a + b * b).sqrt())
                .collect();
            let dark = GrayImage::from_vec(
                w,
                h,
                image
                    .data()
                    .iter()
                    .map(|&v| if v < DARK_THRESHOLD { 1.0 } else { 0.0 })
                    .collect(),
            )
            .expect("same dims");
            let density = box_mean(&dark, 5);
            vec![intensity, hrun, vrun, m15, s15, mag, ys, density]
        }
    };
    FeatureStack::from_channels(w, h, set_id, &channels)
}

/// Per-channel standardization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub set_id: FeatureSetId,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub corpus_fingerprint: String,
}

impl Normalizer {
    pub fn identity(set_id: FeatureSetId) -> Self {
        Self {
            set_id,
            means: vec![0.0; set_id.dim()],
            stds: vec![1.0; set_id.dim()],
            corpus_fingerprint: "identity".into(),
        }
    }

    /// Fits on every pixel of `stacks`. Returns warnings for channels whose
    /// deviation had to be floored.
    pub fn fit(
        stacks: &[FeatureStack],
        set_id: FeatureSetId,
        corpus_fingerprint: impl Into<String>,
    ) -> Result<(Self, Vec<String>)> {
        let dim = set_id.dim();
        if let Some(s) = stacks.iter().find(|s| s.set_id != set_id) {
            return Err(Error::contract(format!(
                "stack of set {:?} passed to a {:?} normalizer",
                s.set_id, set_id
            )));
        }
        let count: usize = stacks.iter().map(|s| s.pixel_count()).sum();
        if count < MIN_FIT_PIXELS {
            return Err(Error::contract(format!(
                "normalizer needs at least {MIN_FIT_PIXELS} pixels, got {count}"
            )));
        }
        let mut means = vec![0.0; dim];
        for s in stacks {
            for px in s.values.chunks_exact(dim) {
                for (m, v) in means.iter_mut().zip(px) {
                    *m += v;
                }
            }
        }
        means.iter_mut().for_each(|m| *m /= count as f64);
        let mut vars = vec![0.0; dim];
        for s in stacks {
            for px in s.values.chunks_exact(dim) {
                for ((acc, v), m) in vars.iter_mut().zip(px).zip(&means) {
                    let d = v - m;
                    *acc += d * d;
                }
            }
        }
        let mut warnings = Vec::new();
        let names = set_id.channel_names();
        let stds = vars
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let sd = (v / count as f64).sqrt();
                if sd < STD_FLOOR {
                    let msg = format!("channel `{}` is degenerate (std {sd:e}); floored", names[c]);
                    tracing::warn!("{msg}");
                    warnings.push(msg);
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        Ok((
            Self {
                set_id,
                means,
                stds,
                corpus_fingerprint: corpus_fingerprint.into(),
            },
            warnings,
        ))
    }

    pub fn apply(&self, stack: &FeatureStack) -> Result<FeatureStack> {
        if stack.set_id != self.set_id {
            return Err(Error::contract(format!(
                "normalizer for set {:?} applied to set {:?}",
                self.set_id, stack.set_id
            )));
        }
        let mut out = stack.clone();
        self.apply_in_place(&mut out.values);
        Ok(out)
    }

    pub fn apply_in_place(&self, values: &mut [f64]) {
        let dim = self.means.len();
        for px in values.chunks_exact_mut(dim) {
            for ((v, m), s) in px.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.set_id.dim();
        if self.means.len() != dim || self.stds.len() != dim {
            return Err(Error::Format {
                what: "normalizer",
                reason: format!("expected {dim} channels"),
            });
        }
        if self
            .stds
            .iter()
            .any(|s| s.is_nan() || *s <= 0.0 || !s.is_finite())
            || self.means.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Format {
                what: "normalizer",
                reason: "non-finite mean or non-positive std".into(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let n: Self = serde_json::from_str(&text)?;
        n.validate()?;
        Ok(n)
    }
}

/// Extracts and standardizes features for one image.
pub fn normalized_features(image: &GrayImage, normalizer: &Normalizer) -> FeatureStack {
    let mut stack = extract_features(image, normalizer.set_id);
    normalizer.apply_in_place(&mut stack.values);
    stack
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = SplitMix64::new(seed);
        GrayImage::from_vec(w, h, (0..w * h).map(|_| rng.unit()).collect()).unwrap()
    }

    fn brute_box(img: &GrayImage, x: usize, y: usize, r: isize) -> (f64, f64) {
        let mut vals = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                vals.push(img.get_clamped(x as isize + dx, y as isize + dy));
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn constant_image_channels() {
        let img = GrayImage::new(20, 20, 0.5);
        for set in [FeatureSetId::A, FeatureSetId::B] {
            let f = extract_features(&img, set);
            let names = set.channel_names();
            for (c, name) in names.iter().enumerate() {
                let ch = f.channel(c);
                if name.starts_with("std")
                    || name.starts_with("sobel")
                    || name.ends_with("run")
                    || name.starts_with("dark")
                {
                    assert!(ch.iter().all(|&v| v == 0.0), "{name}");
                }
                if name.starts_with("mean") || *name == "intensity" {
                    assert!(ch.iter().all(|&v| v == 0.5), "{name}");
                }
            }
        }
    }

    #[test]
    fn dark_row_run_lengths() {
        let mut img = GrayImage::new(32, 32, 1.0);
        for x in 0..32 {
            img.set(x, 10, 0.0);
        }
        let (hrun, vrun) = dark_run_lengths(&img);
        for x in 0..32 {
            assert_eq!(hrun[10 * 32 + x], 1.0);
            assert_eq!(vrun[10 * 32 + x], 1.0 / 32.0);
        }
        assert_eq!(hrun[11 * 32], 0.0);
    }

    #[test]
    fn box_mean_radius_3_matches_49_tap_loop() {
        let img = random_image(16, 16, 1);
        let fast = box_mean(&img, 3);
        for y in 0..16 {
            for x in 0..16 {
                let (m, _) = brute_box(&img, x, y, 3);
                assert!((fast[y * 16 + x] - m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn filters_match_brute_force_definitions() {
        for seed in 0..20 {
            let img = random_image(16, 16, 100 + seed);
            let a = extract_features(&img, FeatureSetId::A);
            let b = extract_features(&img, FeatureSetId::B);
            for y in 0..16 {
                for x in 0..16 {
                    let i = y * 16 + x;
                    let pa = a.pixel(i);
                    let pb = b.pixel(i);
                    let (m1, _) = brute_box(&img, x, y, 1);
                    let (m3, s3) = brute_box(&img, x, y, 3);
                    let (m7, s7) = brute_box(&img, x, y, 7);
                    let (m15, s15) = brute_box(&img, x, y, 15);
                    for (got, want) in [
                        (pa[1], m1),
                        (pa[2], m3),
                        (pa[3], m7),
                        (pa[4], s3),
                        (pa[5], s7),
                        (pb[3], m15),
                        (pb[4], s15),
                    ] {
                        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
                    }
                    let p =
                        |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy);
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            gx += kx[(dy + 1) as usize][(dx + 1) as usize] * p(dx, dy);
                            gy += kx[(dx + 1) as usize][(dy + 1) as usize] * p(dx, dy);
                        }
                    }
                    assert!((pa[6] - gx.abs()).abs() <= 1e-9);
                    assert!((pa[7] - gy.abs()).abs() <= 1e-9);
                    assert!((pb[5] - (gx * gx + gy * gy).sqrt()).abs() <= 1e-9);
                    let mut dark = 0.0;
                    for dy in -5..=5isize {
                        for dx in -5..=5isize {
                            if p(dx, dy) < DARK_THRESHOLD {
                                dark += 1.0;
                            }
                        }
                    }
                    assert!((pb[7] - dark / 121.0).abs() <= 1e-9);
                    // run lengths by walking left/right and up/down
                    if img.get(x, y) < DARK_THRESHOLD {
                        let walk = |sx: isize, sy: isize| {
                            let (mut n, mut cx, mut cy) = (0, x as isize, y as isize);
                            while (0..16).contains(&cx)
                                && (0..16).contains(&cy)
                                && img.get(cx as usize, cy as usize) < DARK_THRESHOLD
                            {
                                n += 1;
                                cx += sx;
                                cy += sy;
                            }
                            n
                        };
                        assert_eq!(pb[1], (walk(1, 0) + walk(-1, 0) - 1) as f64 / 16.0);
                        assert_eq!(pb[2], (walk(0, 1) + walk(0, -1) - 1) as f64 / 16.0);
                    } else {
                        assert_eq!((pb[1], pb[2]), (0.0, 0.0));
                    }
                    assert_eq!(pa[8], x as f64 / 15.0);
                    assert_eq!(pa[9], y as f64 / 15.0);
                    assert_eq!(pb[6], y as f64 / 15.0);
                }
            }
        }
    }

    #[test]
    fn interior_translation_consistency() {
        // content inside a white canvas, shifted by (5, 3)
        let mut rng = SplitMix64::new(77);
        let mut a = GrayImage::new(64, 64, 1.0);
        let mut b = GrayImage::new(64, 64, 1.0);
        for y in 20..36 {
            for x in 20..36 {
                let v = if rng.bernoulli(0.4) {
                    rng.uniform(0.0, 0.4)
                } else {
                    1.0
                };
                a.set(x, y, v);
                b.set(x + 5, y + 3, v);
            }
        }
        for set in [FeatureSetId::A, FeatureSetId::B] {
            let fa = extract_features(&a, set);
            let fb = extract_features(&b, set);
            let positional: Vec<usize> = set
                .channel_names()
                .iter()
                .enumerate()
                .filter(|(_, n)| n.ends_with("_norm"))
                .map(|(i, _)| i)
                .collect();
            for y in 16..40 {
                for x in 16..40 {
                    let pa = fa.pixel(y * 64 + x);
                    let pb = fb.pixel((y + 3) * 64 + x + 5);
                    for c in 0..set.dim() {
                        if !positional.contains(&c) {
                            assert!((pa[c] - pb[c]).abs() < 1e-9, "channel {c}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn standardizes_fitting_sample() {
        let stacks: Vec<_> = (0..5)
            .map(|s| extract_features(&random_image(20, 20, s), FeatureSetId::A))
            .collect();
        let (norm, warnings) = Normalizer::fit(&stacks, FeatureSetId::A, "test").unwrap();
        assert!(warnings.is_empty());
        let applied: Vec<_> = stacks.iter().map(|s| norm.apply(s).unwrap()).collect();
        let n = 2000.0;
        for c in 0..10 {
            let vals: Vec<f64> = applied.iter().flat_map(|s| s.channel(c)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() <= 1e-9);
            assert!((sd - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn degenerate_channel_is_floored_with_warning() {
        let stacks = vec![extract_features(
            &GrayImage::new(40, 40, 0.7),
            FeatureSetId::B,
        )];
        let (norm, warnings) = Normalizer::fit(&stacks, FeatureSetId::B, "flat").unwrap();
        assert!(!warnings.is_empty());
        assert!(norm.stds.iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn too_few_pixels_rejected() {
        let stacks = vec![extract_features(
            &GrayImage::new(10, 10, 0.7),
            FeatureSetId::B,
        )];
        assert!(Normalizer::fit(&stacks, FeatureSetId::B, "x").is_err());
    }

    #[test]
    fn identity_normalizer_is_identity() {
        let s = extract_features(&random_image(12, 12, 3), FeatureSetId::B);
        assert_eq!(Normalizer::identity(FeatureSetId::B).apply(&s).unwrap(), s);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let stacks: Vec<_> = (0..4)
            .map(|s| extract_features(&random_image(20, 20, s), FeatureSetId::B))
            .collect();
        let (norm, _) = Normalizer::fit(&stacks, FeatureSetId::B, "fp").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.json");
        norm.save(&path).unwrap();
        let back = Normalizer::load(&path).unwrap();
        assert_eq!(back, norm);
        let x = norm.apply(&stacks[0]).unwrap();
        let y = back.apply(&stacks[0]).unwrap();
        assert!(x
            .values
            .iter()
            .zip(&y.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
