//! Human annotations as painted rectangles, and the labelling queue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, CLASS_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRect {
    pub class_id: u8,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub rectangles: Vec<LabeledRect>,
    #[serde(default)]
    pub note: String,
    /// Seconds since the Unix epoch, set by the server.
    #[serde(default)]
    pub timestamp: u64,
}

/// Checks every rectangle against the image bounds and the class range,
/// returning one message per problem.
pub fn rect_problems(rects: &[LabeledRect], width: usize, height: usize) -> Vec<String> {
    let mut out = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        if r.class_id as usize >= CLASS_COUNT {
            out.push(format!(
                "rectangles[{i}].class_id: {} is not below {CLASS_COUNT}",
                r.class_id
            ));
        }
        if r.w == 0 || r.h == 0 {
            out.push(format!(
                "rectangles[{i}]: width and height must be positive"
            ));
        }
        if r.x.checked_add(r.w).is_none_or(|e| e > width)
            || r.y.checked_add(r.h).is_none_or(|e| e > height)
        {
            out.push(format!(
                "rectangles[{i}]: extends outside the {width}x{height} image"
            ));
        }
    }
    out
}

/// Paints rectangles in order onto a background canvas; later ones win.
pub fn rasterize(rects: &[LabeledRect], width: usize, height: usize) -> Result<Mask> {
    let problems = rect_problems(rects, width, height);
    if !problems.is_empty() {
        return Err(Error::contract(problems.join("; ")));
    }
    let mut mask = Mask::new(width, height);
    for r in rects {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                mask.set(x, y, r.class_id);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub id: String,
    /// Disagreement `1 - agreement` that put the sample in the queue.
    pub disagreement: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub pending: Vec<PendingItem>,
    pub completed: Vec<String>,
    pub run_id: Option<String>,
}

impl QueueState {
    pub fn is_pending(&self, id: &str) -> bool {
        self.pending.iter().any(|p| p.id == id)
    }

    pub fn is_completed(&self, id: &str) -> bool {
        self.completed.iter().any(|c| c == id)
    }

    /// Moves `id` from pending to completed.
    pub fn complete(&mut self, id: &str) -> Result<()> {
        let pos = self
            .pending
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| Error::contract(format!("{id} is not pending")))?;
        self.pending.remove(pos);
        self.completed.push(id.to_string());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rect(class_id: u8, x: usize, y: usize, w: usize, h: usize) -> LabeledRect {
        LabeledRect {
            class_id,
            x,
            y,
            w,
            h,
        }
    }

    #[test]
    fn background_rectangle_gives_zeros() {
        let m = rasterize(&[rect(0, 0, 0, 5, 4)], 5, 4).unwrap();
        assert!(m.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn rectangle_area_and_overwrite_order() {
        let m = rasterize(&[rect(1, 1, 1, 3, 2), rect(2, 2, 0, 1, 4)], 5, 4).unwrap();
        assert_eq!(m.histogram()[1], 4);
        assert_eq!(m.histogram()[2], 4);
        assert_eq!(m.get(2, 1), 2);
    }

    #[test]
    fn out_of_bounds_and_bad_class_reported() {
        assert_eq!(rect_problems(&[rect(1, 3, 0, 3, 1)], 5, 4).len(), 1);
        assert_eq!(rect_problems(&[rect(9, 0, 0, 1, 1)], 5, 4).len(), 1);
        assert_eq!(rect_problems(&[rect(1, 0, 0, 0, 1)], 5, 4).len(), 1);
        assert!(rasterize(&[rect(1, usize::MAX, 0, 2, 1)], 5, 4).is_err());
    }

    #[test]
    fn painter_oracle_on_random_sets() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..20 {
            let (w, h) = (rng.int_in(1, 20), rng.int_in(1, 20));
            let rects: Vec<LabeledRect> = (0..rng.int_in(0, 8))
                .map(|_| {
                    let x = rng.below(w);
                    let y = rng.below(h);
                    rect(
                        rng.below(7) as u8,
                        x,
                        y,
                        rng.int_in(1, w - x),
                        rng.int_in(1, h - y),
                    )
                })
                .collect();
            let m = rasterize(&rects, w, h).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let expect = rects
                        .iter()
                        .rev()
                        .find(|r| x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h)
                        .map_or(0, |r| r.class_id);
                    assert_eq!(m.get(x, y), expect);
                }
            }
        }
    }

    #[test]
    fn queue_completion() {
        let mut q = QueueState {
            pending: vec![PendingItem {
                id: "a".into(),
                disagreement: 0.3,
            }],
            ..Default::default()
        };
        q.complete("a").unwrap();
        assert!(q.is_completed("a") && !q.is_pending("a"));
        assert!(q.complete("a").is_err());
    }
}
