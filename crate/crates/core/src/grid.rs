//! Grid-relative label encoding and the inverse decoding of predictions.
//!
//! Point coordinates (and box centers) are stored in a cell-local frame
//! where the cell's top-left corner is `(0, 0)` and its bottom-right is
//! `(1, 1)`. Box width and height are fractions of the full image size.

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, ObjectAnnotation};
use crate::error::{Error, Result};
use crate::raster::ImageTensor;
use crate::tensor::{split_slot, PredictionTensor};

/// Image size, grid resolution and label layout for one model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub image_w: usize,
    pub image_h: usize,
    /// Cells per side (`G`).
    pub grid_size: usize,
    /// Maximum objects per cell (`k`).
    pub slots_per_cell: usize,
    /// 2 for point labels, 4 for boxes.
    pub coord_arity: usize,
    pub num_classes: usize,
}

impl GridSpec {
    pub fn new(
        image_w: usize,
        image_h: usize,
        grid_size: usize,
        slots_per_cell: usize,
        coord_arity: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let spec = Self {
            image_w,
            image_h,
            grid_size,
            slots_per_cell,
            coord_arity,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::config("image dimensions must be >= 1"));
        }
        if self.grid_size == 0 || self.slots_per_cell == 0 || self.num_classes == 0 {
            return Err(Error::config("grid_size, slots_per_cell and num_classes must be >= 1"));
        }
        if self.coord_arity != 2 && self.coord_arity != 4 {
            return Err(Error::config(format!(
                "coord_arity must be 2 or 4, got {}",
                self.coord_arity
            )));
        }
        Ok(())
    }

    /// Prediction slots per image, `G² · k`.
    pub fn num_slots(&self) -> usize {
        self.grid_size * self.grid_size * self.slots_per_cell
    }

    pub fn cell_w(&self) -> f64 {
        self.image_w as f64 / self.grid_size as f64
    }

    pub fn cell_h(&self) -> f64 {
        self.image_h as f64 / self.grid_size as f64
    }

    /// Width of one slot record in a prediction tensor.
    pub fn slot_width(&self) -> usize {
        2 + self.num_classes + self.coord_arity
    }

    fn check_annotation(&self, a: &ObjectAnnotation) -> Result<()> {
        let (w, h) = (self.image_w as f64, self.image_h as f64);
        if !(a.x >= 0.0 && a.x < w && a.y >= 0.0 && a.y < h) {
            return Err(Error::OutOfBounds {
                x: a.x,
                y: a.y,
                width: w,
                height: h,
            });
        }
        Ok(())
    }
}

/// Grid cell `(row, col)` containing an annotation's position.
///
/// Cells are half-open on their far edges, so a point exactly on a shared
/// boundary belongs to the higher-index cell; the last row and column are
/// closed by the image bound.
pub fn cell_of(a: &ObjectAnnotation, spec: &GridSpec) -> Result<(usize, usize)> {
    spec.check_annotation(a)?;
    Ok((
        axis_cell(a.y, spec.image_h, spec.grid_size),
        axis_cell(a.x, spec.image_w, spec.grid_size),
    ))
}

fn axis_cell(v: f64, extent: usize, g: usize) -> usize {
    let scaled = v * g as f64 / extent as f64;
    (scaled.floor() as usize).min(g - 1)
}

/// One slot of the padded per-cell target layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTarget {
    pub present: bool,
    /// Only the first `coord_arity` entries are meaningful; the rest stay 0.
    pub coords: [f64; 4],
    pub class_id: usize,
}

impl SlotTarget {
    pub const PADDING: SlotTarget = SlotTarget {
        present: false,
        coords: [0.0; 4],
        class_id: 0,
    };
}

/// Per-cell target slots, indexed `(row · G + col) · k + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTargets {
    pub grid_size: usize,
    pub slots_per_cell: usize,
    pub coord_arity: usize,
    pub slots: Vec<SlotTarget>,
}

impl CellTargets {
    pub fn empty(spec: &GridSpec) -> Self {
        Self {
            grid_size: spec.grid_size,
            slots_per_cell: spec.slots_per_cell,
            coord_arity: spec.coord_arity,
            slots: vec![SlotTarget::PADDING; spec.num_slots()],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[SlotTarget] {
        let k = self.slots_per_cell;
        let off = (row * self.grid_size + col) * k;
        &self.slots[off..off + k]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [SlotTarget] {
        let k = self.slots_per_cell;
        let off = (row * self.grid_size + col) * k;
        &mut self.slots[off..off + k]
    }

    pub fn present_count(&self) -> usize {
        self.slots.iter().filter(|s| s.present).count()
    }
}

/// Assign annotations to cells, keeping the first `k` per cell in input order.
///
/// Returns the padded targets and the number of annotations dropped by the cap.
pub fn encode_labels(annotations: &[ObjectAnnotation], spec: &GridSpec) -> Result<(CellTargets, usize)> {
    spec.validate()?;
    let mut targets = CellTargets::empty(spec);
    let mut fill = vec![0usize; spec.grid_size * spec.grid_size];
    let mut dropped = 0;
    let g = spec.grid_size as f64;
    for a in annotations {
        if a.class_id >= spec.num_classes {
            return Err(Error::input(format!(
                "class_id {} out of range for {} classes",
                a.class_id, spec.num_classes
            )));
        }
        let (row, col) = cell_of(a, spec)?;
        let n = &mut fill[row * spec.grid_size + col];
        if *n == spec.slots_per_cell {
            dropped += 1;
            continue;
        }
        let mut coords = [0.0; 4];
        // Same scaled value cell_of floors, so the difference lands in [0, 1).
        coords[0] = a.x * g / spec.image_w as f64 - col as f64;
        coords[1] = a.y * g / spec.image_h as f64 - row as f64;
        if spec.coord_arity == 4 {
            match (a.w, a.h) {
                (Some(w), Some(h)) if w > 0.0 && h > 0.0 => {
                    coords[2] = w / spec.image_w as f64;
                    coords[3] = h / spec.image_h as f64;
                }
                _ => return Err(Error::input("box labels need positive w and h when coord_arity = 4")),
            }
        }
        targets.cell_mut(row, col)[*n] = SlotTarget {
            present: true,
            coords,
            class_id: a.class_id,
        };
        *n += 1;
    }
    Ok((targets, dropped))
}

/// Options controlling how slot outputs become detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    /// Minimum objectness probability; compared with `>=`.
    pub threshold: f64,
    /// Stop scanning a cell at its first below-threshold slot.
    pub stop_symbol: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            stop_symbol: false,
        }
    }
}

/// Probability of the "object" side of a two-way objectness softmax.
pub fn objectness_prob(logits: &[f64]) -> f64 {
    // softmax([a, b])[1] = 1 / (1 + exp(a - b))
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Decode image `b` of a prediction tensor into image-space detections.
pub fn decode_predictions(
    t: &PredictionTensor,
    b: usize,
    image_id: &str,
    spec: &GridSpec,
    opts: DecodeOptions,
) -> Result<Vec<Detection>> {
    t.check_len()?;
    if t.rows != spec.grid_size
        || t.cols != spec.grid_size
        || t.steps != spec.slots_per_cell
        || t.num_classes != spec.num_classes
        || t.coord_arity != spec.coord_arity
    {
        return Err(Error::shape(format!(
            "prediction tensor {}x{}x{}x(2+{}+{}) does not match grid {}x{}x{}x(2+{}+{})",
            t.rows,
            t.cols,
            t.steps,
            t.num_classes,
            t.coord_arity,
            spec.grid_size,
            spec.grid_size,
            spec.slots_per_cell,
            spec.num_classes,
            spec.coord_arity
        )));
    }
    if b >= t.batch {
        return Err(Error::shape(format!(
            "batch index {b} out of range for batch of {}",
            t.batch
        )));
    }
    let (cw, ch) = (spec.cell_w(), spec.cell_h());
    let mut out = Vec::new();
    for row in 0..spec.grid_size {
        for col in 0..spec.grid_size {
            for step in 0..spec.slots_per_cell {
                let (obj, cls, coords) = split_slot(t.slot(b, row, col, step), spec.num_classes);
                let score = objectness_prob(obj);
                if score < opts.threshold {
                    if opts.stop_symbol {
                        break;
                    }
                    continue;
                }
                let class_id = argmax(cls);
                let (w, h) = if spec.coord_arity == 4 {
                    (
                        Some(coords[2] * spec.image_w as f64),
                        Some(coords[3] * spec.image_h as f64),
                    )
                } else {
                    (None, None)
                };
                out.push(Detection {
                    image_id: image_id.to_string(),
                    class_id,
                    score,
                    x: (col as f64 + coords[0]) * cw,
                    y: (row as f64 + coords[1]) * ch,
                    w,
                    h,
                    cell: Some([row, col]),
                });
            }
        }
    }
    Ok(out)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Logit magnitude used to express certainty in [`perfect_prediction`].
pub const CONFIDENT_LOGIT: f64 = 40.0;

/// A single-image prediction tensor that reproduces `targets` exactly:
/// present slots get objectness probability 1 and a confident class,
/// padded slots get probability 0.
pub fn perfect_prediction(targets: &CellTargets, spec: &GridSpec) -> PredictionTensor {
    let g = spec.grid_size;
    let mut t = PredictionTensor::zeros(1, g, g, spec.slots_per_cell, spec.num_classes, spec.coord_arity);
    for row in 0..g {
        for col in 0..g {
            for (step, target) in targets.cell(row, col).iter().enumerate() {
                let slot = t.slot_mut(0, row, col, step);
                if target.present {
                    slot[1] = CONFIDENT_LOGIT;
                    slot[2 + target.class_id] = CONFIDENT_LOGIT;
                } else {
                    slot[0] = CONFIDENT_LOGIT;
                }
                let base = 2 + spec.num_classes;
                slot[base..base + spec.coord_arity].copy_from_slice(&target.coords[..spec.coord_arity]);
            }
        }
    }
    t
}

/// Map 8-bit pixel values into `[-0.5, 0.5]` via `v / 255 - 0.5`.
pub fn normalize_image(img: &ImageTensor) -> Result<ImageTensor> {
    if let Some(v) = img.values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::input(format!(
            "pixel value {v} outside the 8-bit range [0, 255]"
        )));
    }
    Ok(ImageTensor {
        values: img.values.iter().map(|v| v / 255.0 - 0.5).collect(),
        ..img.clone()
    })
}
