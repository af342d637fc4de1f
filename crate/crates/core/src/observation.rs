use std::sync::Arc;

use crate::geometry::Pose;

/// Index into an observation's label vocabulary.
pub type Label = u16;

/// Label of pixels that hit nothing (out of range or open space).
pub const NO_LABEL: Label = Label::MAX;

/// Depth plus per-pixel semantic labels, row-major.
///
/// Depth is planar, in meters; 0 marks an invalid reading. Every pixel with
/// a label other than [`NO_LABEL`] carries a positive depth.
#[derive(Clone, Debug)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub labels: Vec<Label>,
    pub vocab: Arc<[String]>,
    pub pose: Pose,
}

impl Observation {
    pub fn label_name(&self, label: Label) -> Option<&str> {
        if label == NO_LABEL {
            None
        } else {
            self.vocab.get(label as usize).map(String::as_str)
        }
    }

    pub fn label_id(&self, name: &str) -> Option<Label> {
        self.vocab.iter().position(|v| v == name).map(|i| i as Label)
    }

    pub fn region(&self, rect: PixelRect) -> ImageRegion<'_> {
        ImageRegion { obs: self, rect }
    }

    pub fn full_rect(&self) -> PixelRect {
        PixelRect {
            row0: 0,
            row1: self.height,
            col0: 0,
            col1: self.width,
        }
    }
}

/// Half-open pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }

    /// Row-major pixel indices inside the rectangle for an image of `width`.
    pub fn indices(&self, width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.row0..self.row1).flat_map(move |r| (self.col0..self.col1).map(move |c| r * width + c))
    }
}

/// A rectangular view into an observation.
#[derive(Clone, Copy, Debug)]
pub struct ImageRegion<'a> {
    pub obs: &'a Observation,
    pub rect: PixelRect,
}

impl ImageRegion<'_> {
    /// Pixel counts per label inside the region, ascending by label,
    /// excluding [`NO_LABEL`].
    pub fn label_histogram(&self) -> Vec<(Label, usize)> {
        let mut counts: Vec<(Label, usize)> = Vec::new();
        for i in self.rect.indices(self.obs.width) {
            let l = self.obs.labels[i];
            if l == NO_LABEL {
                continue;
            }
            match counts.binary_search_by_key(&l, |(k, _)| *k) {
                Ok(pos) => counts[pos].1 += 1,
                Err(pos) => counts.insert(pos, (l, 1)),
            }
        }
        counts
    }
}
