use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision/recall sweep of one class plus its all-points average precision.
///
/// `recall` and `precision` hold one point per detection in descending
/// score order; `precision` is the raw (not enveloped) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

impl PrCurve {
    /// Monotone envelope: at each point, the best precision at this or any higher recall.
    pub fn envelope(&self) -> Vec<f64> {
        let mut env = self.precision.clone();
        for i in (0..env.len().saturating_sub(1)).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        env
    }
}

/// All-points average precision.
///
/// Detections are swept in descending score order (stable for ties); the
/// area under the monotone precision envelope is integrated over recall.
/// With no ground truth the AP is 0.
pub fn average_precision(flags: &[bool], scores: &[f64], n_gt: usize) -> Result<PrCurve> {
    if flags.len() != scores.len() {
        return Err(Error::shape(format!(
            "{} flags for {} scores",
            flags.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if flags[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    let mut curve = PrCurve {
        recall,
        precision,
        ap: 0.0,
    };
    if n_gt == 0 {
        return Ok(curve);
    }
    let env = curve.envelope();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (r, p) in curve.recall.iter().zip(&env) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    curve.ap = ap;
    Ok(curve)
}

/// Unweighted mean of per-class APs.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::config("mean AP needs at least one class"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
