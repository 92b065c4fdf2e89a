use serde::{Deserialize, Serialize};

use crate::detection::{Detection, ObjectAnnotation};
use crate::error::{Error, Result};
use crate::grid::{cell_of, GridSpec};

/// Geometric test a detection must pass to count as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MatchMode {
    /// Center distance `<= tau` pixels.
    Point { tau: f64 },
    /// Box IoU `>= iou_min`.
    Box { iou_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCriterion {
    #[serde(flatten)]
    pub mode: MatchMode,
    /// A detection must come from the grid cell holding the ground-truth center.
    #[serde(default)]
    pub cell_center_rule: bool,
}

impl MatchCriterion {
    pub fn point(tau: f64) -> Self {
        Self {
            mode: MatchMode::Point { tau },
            cell_center_rule: false,
        }
    }

    pub fn boxes(iou_min: f64) -> Self {
        Self {
            mode: MatchMode::Box { iou_min },
            cell_center_rule: false,
        }
    }

    /// Point criterion with `tau` set to half a grid cell.
    pub fn half_cell(spec: &GridSpec) -> Self {
        Self::point(0.5 * spec.cell_w().min(spec.cell_h()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            MatchMode::Point { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::config(format!("tau must be > 0, got {tau}")))
            }
            MatchMode::Box { iou_min } if !(iou_min > 0.0 && iou_min <= 1.0) => {
                Err(Error::config(format!("iou_min must be in (0, 1], got {iou_min}")))
            }
            _ => Ok(()),
        }
    }
}

/// Intersection over union of two center-format boxes.
pub fn iou(a: &ObjectAnnotation, b: &ObjectAnnotation) -> f64 {
    let (aw, ah) = (a.w.unwrap_or(0.0), a.h.unwrap_or(0.0));
    let (bw, bh) = (b.w.unwrap_or(0.0), b.h.unwrap_or(0.0));
    let ix = ((a.x + aw / 2.0).min(b.x + bw / 2.0) - (a.x - aw / 2.0).max(b.x - bw / 2.0)).max(0.0);
    let iy = ((a.y + ah / 2.0).min(b.y + bh / 2.0) - (a.y - ah / 2.0).max(b.y - bh / 2.0)).max(0.0);
    let inter = ix * iy;
    let union = aw * ah + bw * bh - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices of `dets` sorted by descending score, ties kept in input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy score-ordered matching of one image's detections to its ground truths.
///
/// Returns a true-positive flag per detection, in input order. Each detection
/// claims the best unmatched same-class ground truth that satisfies the
/// criterion (closest center, or highest IoU; ties go to the lower index).
/// `grid` is needed only for the cell-center rule.
pub fn match_detections(
    dets: &[Detection],
    gts: &[ObjectAnnotation],
    criterion: &MatchCriterion,
    grid: Option<&GridSpec>,
) -> Result<Vec<bool>> {
    criterion.validate()?;
    let gt_cells: Option<Vec<Option<(usize, usize)>>> = if criterion.cell_center_rule {
        let spec = grid.ok_or_else(|| Error::config("cell-center rule needs a grid spec"))?;
        Some(gts.iter().map(|g| cell_of(g, spec).ok()).collect())
    } else {
        None
    };
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for idx in score_order(dets) {
        let det = &dets[idx];
        let det_cell = match (&gt_cells, det.cell) {
            (None, _) => None,
            (Some(_), Some([r, c])) => Some((r, c)),
            (Some(_), None) => grid.and_then(|spec| cell_of(&det.annotation(), spec).ok()),
        };
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] || gt.class_id != det.class_id {
                continue;
            }
            if let Some(cells) = &gt_cells {
                if cells[j].is_none() || cells[j] != det_cell {
                    continue;
                }
            }
            // Higher quality is better in both modes.
            let quality = match criterion.mode {
                MatchMode::Point { tau } => {
                    let d = (det.x - gt.x).hypot(det.y - gt.y);
                    if d > tau {
                        continue;
                    }
                    -d
                }
                MatchMode::Box { iou_min } => {
                    let v = iou(&det.annotation(), gt);
                    if v < iou_min {
                        continue;
                    }
                    v
                }
            };
            if best.is_none_or(|(_, q)| quality > q) {
                best = Some((j, quality));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            flags[idx] = true;
        }
    }
    Ok(flags)
}
