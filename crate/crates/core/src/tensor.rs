//! Dense prediction and feature tensors shared by the codec, loss and decoder.

use crate::error::{Error, Result};

/// Raw per-cell, per-slot model outputs laid out as `B × H × W × k × (2 + C + r)`.
///
/// Each slot record is `[objectness logits (2) | class logits (C) | coords (r)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    pub batch: usize,
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    pub num_classes: usize,
    pub coord_arity: usize,
    pub data: Vec<f64>,
}

impl PredictionTensor {
    pub fn zeros(batch: usize, rows: usize, cols: usize, steps: usize, num_classes: usize, coord_arity: usize) -> Self {
        let len = batch * rows * cols * steps * (2 + num_classes + coord_arity);
        Self {
            batch,
            rows,
            cols,
            steps,
            num_classes,
            coord_arity,
            data: vec![0.0; len],
        }
    }

    /// Width of one slot record.
    pub fn slot_width(&self) -> usize {
        2 + self.num_classes + self.coord_arity
    }

    /// Number of slots per image (`H · W · k`).
    pub fn slots_per_image(&self) -> usize {
        self.rows * self.cols * self.steps
    }

    pub fn slot_offset(&self, b: usize, row: usize, col: usize, t: usize) -> usize {
        (((b * self.rows + row) * self.cols + col) * self.steps + t) * self.slot_width()
    }

    pub fn slot(&self, b: usize, row: usize, col: usize, t: usize) -> &[f64] {
        let off = self.slot_offset(b, row, col, t);
        &self.data[off..off + self.slot_width()]
    }

    pub fn slot_mut(&mut self, b: usize, row: usize, col: usize, t: usize) -> &mut [f64] {
        let off = self.slot_offset(b, row, col, t);
        let w = self.slot_width();
        &mut self.data[off..off + w]
    }

    /// All slot records of one image, `(row, col, t)`-major.
    pub fn image(&self, b: usize) -> &[f64] {
        let len = self.slots_per_image() * self.slot_width();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn image_mut(&mut self, b: usize) -> &mut [f64] {
        let len = self.slots_per_image() * self.slot_width();
        &mut self.data[b * len..(b + 1) * len]
    }

    pub(crate) fn check_len(&self) -> Result<()> {
        let want = self.batch * self.slots_per_image() * self.slot_width();
        if self.data.len() != want {
            return Err(Error::shape(format!(
                "prediction tensor holds {} values, expected {want}",
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Split a slot record into its objectness, class and coordinate parts.
pub fn split_slot(slot: &[f64], num_classes: usize) -> (&[f64], &[f64], &[f64]) {
    let (obj, rest) = slot.split_at(2);
    let (cls, coords) = rest.split_at(num_classes);
    (obj, cls, coords)
}

/// Per-cell feature vectors laid out as `B × H × W × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(batch: usize, height: usize, width: usize, feature_dim: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || height == 0 || width == 0 || feature_dim == 0 {
            return Err(Error::shape("feature grid dimensions must all be >= 1"));
        }
        if data.len() != batch * height * width * feature_dim {
            return Err(Error::shape(format!(
                "feature grid {batch}x{height}x{width}x{feature_dim} needs {} values, got {}",
                batch * height * width * feature_dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature grid contains non-finite values"));
        }
        Ok(Self {
            batch,
            height,
            width,
            feature_dim,
            data,
        })
    }

    pub fn zeros(batch: usize, height: usize, width: usize, feature_dim: usize) -> Self {
        Self {
            batch,
            height,
            width,
            feature_dim,
            data: vec![0.0; batch * height * width * feature_dim],
        }
    }

    pub fn cell(&self, b: usize, row: usize, col: usize) -> &[f64] {
        let off = ((b * self.height + row) * self.width + col) * self.feature_dim;
        &self.data[off..off + self.feature_dim]
    }

    pub fn cell_mut(&mut self, b: usize, row: usize, col: usize) -> &mut [f64] {
        let off = ((b * self.height + row) * self.width + col) * self.feature_dim;
        &mut self.data[off..off + self.feature_dim]
    }

    pub fn num_cells(&self) -> usize {
        self.batch * self.height * self.width
    }
}
