//! Composite detection loss `l = l_o + l_r + l_c` with analytic gradients.
//!
//! * `l_o`: two-way softmax cross-entropy on objectness, averaged over all `n` slots.
//! * `l_r`: root of the mean squared coordinate error over present slots,
//!   `sqrt(1/(m·r) · Σ_i g_o(i) Σ_j (F_r(i,j) − G_r(i,j))²)`.
//! * `l_c`: class cross-entropy averaged over the `m` present slots.
//!
//! With `m = 0` both masked terms are defined as zero.

use crate::assignment::match_cell;
use crate::error::{Error, Result};
use crate::grid::{CellTargets, SlotTarget};
use crate::tensor::PredictionTensor;

/// Floor applied to the regression radicand when forming its gradient.
pub const REGRESSION_EPS: f64 = 1e-12;

/// Per-slot predictions and (already matched) targets for one image.
///
/// Class targets are one-hot and are stored as the index of the hot entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInputs {
    pub num_classes: usize,
    pub coord_arity: usize,
    /// `n × 2`
    pub objectness_logits: Vec<f64>,
    /// `n × C`
    pub class_logits: Vec<f64>,
    /// `n × r`
    pub pred_coords: Vec<f64>,
    /// `g_o(i)`
    pub gt_presence: Vec<bool>,
    /// `n × r`, zero where absent.
    pub gt_coords: Vec<f64>,
    pub gt_class: Vec<usize>,
}

impl LossInputs {
    pub fn num_slots(&self) -> usize {
        self.gt_presence.len()
    }

    /// `m`, the number of real objects.
    pub fn num_present(&self) -> usize {
        self.gt_presence.iter().filter(|p| **p).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_slots();
        let (c, r) = (self.num_classes, self.coord_arity);
        if self.objectness_logits.len() != 2 * n
            || self.class_logits.len() != c * n
            || self.pred_coords.len() != r * n
            || self.gt_coords.len() != r * n
            || self.gt_class.len() != n
        {
            return Err(Error::shape("loss input arrays disagree on slot count"));
        }
        for i in 0..n {
            if self.gt_presence[i] {
                if self.gt_class[i] >= c {
                    return Err(Error::input(format!(
                        "target class {} out of range for {c} classes",
                        self.gt_class[i]
                    )));
                }
            } else if self.gt_coords[i * r..(i + 1) * r].iter().any(|v| *v != 0.0) {
                return Err(Error::input("absent slots must carry zero coordinates"));
            }
        }
        Ok(())
    }

    /// Gather one image's slot records and matched targets.
    pub fn from_slots(slots: &[f64], targets: &[SlotTarget], num_classes: usize, coord_arity: usize) -> Result<Self> {
        let width = 2 + num_classes + coord_arity;
        if slots.len() != targets.len() * width {
            return Err(Error::shape(format!(
                "{} slot values for {} targets of width {width}",
                slots.len(),
                targets.len()
            )));
        }
        let n = targets.len();
        let mut inputs = LossInputs {
            num_classes,
            coord_arity,
            objectness_logits: Vec::with_capacity(2 * n),
            class_logits: Vec::with_capacity(num_classes * n),
            pred_coords: Vec::with_capacity(coord_arity * n),
            gt_presence: Vec::with_capacity(n),
            gt_coords: Vec::with_capacity(coord_arity * n),
            gt_class: Vec::with_capacity(n),
        };
        for (rec, t) in slots.chunks_exact(width).zip(targets) {
            inputs.objectness_logits.extend_from_slice(&rec[..2]);
            inputs.class_logits.extend_from_slice(&rec[2..2 + num_classes]);
            inputs.pred_coords.extend_from_slice(&rec[2 + num_classes..]);
            inputs.gt_presence.push(t.present);
            if t.present {
                inputs.gt_coords.extend_from_slice(&t.coords[..coord_arity]);
            } else {
                inputs.gt_coords.extend(std::iter::repeat_n(0.0, coord_arity));
            }
            inputs.gt_class.push(t.class_id);
        }
        Ok(inputs)
    }
}

/// Loss components and gradients with respect to the raw prediction fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_o: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub total: f64,
    pub grad_objectness: Vec<f64>,
    pub grad_class: Vec<f64>,
    pub grad_coords: Vec<f64>,
}

impl LossBreakdown {
    /// Gradients interleaved back into slot-record layout `[obj | class | coords]`.
    pub fn slot_gradient(&self, num_classes: usize, coord_arity: usize) -> Vec<f64> {
        let n = self.grad_objectness.len() / 2;
        let mut out = Vec::with_capacity(n * (2 + num_classes + coord_arity));
        for i in 0..n {
            out.extend_from_slice(&self.grad_objectness[2 * i..2 * i + 2]);
            out.extend_from_slice(&self.grad_class[num_classes * i..num_classes * (i + 1)]);
            out.extend_from_slice(&self.grad_coords[coord_arity * i..coord_arity * (i + 1)]);
        }
        out
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]`, computed via log-sum-exp.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

pub fn confidence_loss(inputs: &LossInputs) -> (f64, Vec<f64>) {
    let n = inputs.num_slots();
    let mut grad = vec![0.0; 2 * n];
    if n == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    for i in 0..n {
        let logits = &inputs.objectness_logits[2 * i..2 * i + 2];
        let target = usize::from(inputs.gt_presence[i]);
        value += cross_entropy(logits, target);
        let p = softmax(logits);
        for side in 0..2 {
            let hot = if side == target { 1.0 } else { 0.0 };
            grad[2 * i + side] = (p[side] - hot) * scale;
        }
    }
    (value * scale, grad)
}

pub fn regression_loss(inputs: &LossInputs) -> (f64, Vec<f64>) {
    let r = inputs.coord_arity;
    let mut grad = vec![0.0; inputs.pred_coords.len()];
    let m = inputs.num_present();
    if m == 0 {
        return (0.0, grad);
    }
    let denom = (m * r) as f64;
    let mut sum_sq = 0.0;
    for (i, present) in inputs.gt_presence.iter().enumerate() {
        if !present {
            continue;
        }
        for j in 0..r {
            let d = inputs.pred_coords[i * r + j] - inputs.gt_coords[i * r + j];
            sum_sq += d * d;
        }
    }
    let mean_sq = sum_sq / denom;
    let value = mean_sq.sqrt();
    let root = mean_sq.max(REGRESSION_EPS).sqrt();
    for (i, present) in inputs.gt_presence.iter().enumerate() {
        if !present {
            continue;
        }
        for j in 0..r {
            let d = inputs.pred_coords[i * r + j] - inputs.gt_coords[i * r + j];
            grad[i * r + j] = d / (denom * root);
        }
    }
    (value, grad)
}

pub fn class_loss(inputs: &LossInputs) -> (f64, Vec<f64>) {
    let c = inputs.num_classes;
    let mut grad = vec![0.0; inputs.class_logits.len()];
    let m = inputs.num_present();
    if m == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / m as f64;
    let mut value = 0.0;
    for (i, present) in inputs.gt_presence.iter().enumerate() {
        if !present {
            continue;
        }
        let logits = &inputs.class_logits[i * c..(i + 1) * c];
        let target = inputs.gt_class[i];
        value += cross_entropy(logits, target);
        for (k, p) in softmax(logits).into_iter().enumerate() {
            let hot = if k == target { 1.0 } else { 0.0 };
            grad[i * c + k] = (p - hot) * scale;
        }
    }
    (value * scale, grad)
}

pub fn total_loss(inputs: &LossInputs) -> LossBreakdown {
    let (l_o, grad_objectness) = confidence_loss(inputs);
    let (l_r, grad_coords) = regression_loss(inputs);
    let (l_c, grad_class) = class_loss(inputs);
    LossBreakdown {
        l_o,
        l_r,
        l_c,
        total: l_o + l_r + l_c,
        grad_objectness,
        grad_class,
        grad_coords,
    }
}

/// Match every cell of image `b` against its targets and build loss inputs.
pub fn matched_inputs(t: &PredictionTensor, b: usize, targets: &CellTargets) -> Result<LossInputs> {
    if t.rows != targets.grid_size
        || t.cols != targets.grid_size
        || t.steps != targets.slots_per_cell
        || t.coord_arity != targets.coord_arity
    {
        return Err(Error::shape("prediction tensor and targets disagree on layout"));
    }
    let (c, r) = (t.num_classes, t.coord_arity);
    let mut ordered = Vec::with_capacity(targets.slots.len());
    for row in 0..t.rows {
        for col in 0..t.cols {
            let coords: Vec<&[f64]> = (0..t.steps).map(|s| &t.slot(b, row, col, s)[2 + c..]).collect();
            ordered.extend(match_cell(&coords, targets.cell(row, col))?.targets);
        }
    }
    LossInputs::from_slots(t.image(b), &ordered, c, r)
}

/// Loss averaged over the images of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub l_o: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub total: f64,
    /// Gradient over the full prediction tensor, in its own layout.
    pub grad: Vec<f64>,
}

/// Per-image matched losses averaged over the batch; the gradient is scaled
/// accordingly.
pub fn batch_loss(t: &PredictionTensor, targets: &[CellTargets]) -> Result<BatchLoss> {
    t.check_len()?;
    if targets.len() != t.batch {
        return Err(Error::shape(format!(
            "{} target sets for a batch of {}",
            targets.len(),
            t.batch
        )));
    }
    let scale = 1.0 / t.batch.max(1) as f64;
    let mut out = BatchLoss {
        l_o: 0.0,
        l_r: 0.0,
        l_c: 0.0,
        total: 0.0,
        grad: Vec::with_capacity(t.data.len()),
    };
    for (b, tg) in targets.iter().enumerate() {
        let lb = total_loss(&matched_inputs(t, b, tg)?);
        out.l_o += lb.l_o * scale;
        out.l_r += lb.l_r * scale;
        out.l_c += lb.l_c * scale;
        out.total += lb.total * scale;
        out.grad.extend(
            lb.slot_gradient(t.num_classes, t.coord_arity)
                .into_iter()
                .map(|g| g * scale),
        );
    }
    Ok(out)
}
