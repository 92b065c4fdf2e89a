//! Detection scoring: greedy matching, all-points AP and count RMSE.

mod ap;
mod counts;
mod matching;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ap::{average_precision, mean_ap, PrCurve};
pub use counts::{column_rmse, counts_from_detections, CountMatrix};
pub use matching::{iou, match_detections, score_order, MatchCriterion, MatchMode};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::labels::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// One name per class; its length is the class count.
    pub class_names: Vec<String>,
    pub criterion: MatchCriterion,
    /// Required by the cell-center rule.
    pub grid: Option<GridSpec>,
    /// Inclusive score threshold for counting.
    pub count_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: usize,
    pub name: String,
    pub n_gt: usize,
    pub n_det: usize,
    pub true_positives: usize,
    pub ap: f64,
    pub rmse: f64,
    pub pr: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub num_images: usize,
    pub criterion: MatchCriterion,
    pub count_threshold: f64,
    pub classes: Vec<ClassResult>,
    pub map: f64,
    pub mean_rmse: f64,
    /// Image ids present in the detections but not in the ground truth; excluded.
    pub unknown_images: Vec<String>,
    /// Detections whose class id is outside the class set; excluded.
    pub ignored_detections: usize,
}

/// Score `dets` against `labels`, image by image.
///
/// Images with ground truth but no detections still count (all misses).
pub fn evaluate(dets: &[Detection], labels: &LabelSet, cfg: &EvalConfig) -> Result<EvalResults> {
    let k = cfg.class_names.len();
    if k == 0 {
        return Err(Error::config("evaluation needs at least one class"));
    }
    cfg.criterion.validate()?;
    if !(0.0..=1.0).contains(&cfg.count_threshold) {
        return Err(Error::config("count_threshold must lie in [0, 1]"));
    }
    if let Some((id, a)) = labels
        .iter()
        .flat_map(|(id, v)| v.iter().map(move |a| (id, a)))
        .find(|(_, a)| a.class_id >= k)
    {
        return Err(Error::input(format!(
            "ground truth of {id} has class {} but only {k} classes are configured",
            a.class_id
        )));
    }

    let mut per_image: BTreeMap<&str, Vec<Detection>> = labels.keys().map(|id| (id.as_str(), Vec::new())).collect();
    let mut unknown = BTreeMap::new();
    let mut ignored = 0usize;
    for d in dets {
        if d.class_id >= k {
            ignored += 1;
            continue;
        }
        match per_image.get_mut(d.image_id.as_str()) {
            Some(v) => v.push(d.clone()),
            None => {
                unknown.insert(d.image_id.clone(), ());
            }
        }
    }

    let images: Vec<(&str, &Vec<Detection>)> = per_image.iter().map(|(id, v)| (*id, v)).collect();
    let flags: Vec<Vec<bool>> = images
        .par_iter()
        .map(|(id, v)| match_detections(v, &labels[*id], &cfg.criterion, cfg.grid.as_ref()))
        .collect::<Result<_>>()?;

    let mut class_flags = vec![Vec::new(); k];
    let mut class_scores = vec![Vec::new(); k];
    let mut n_gt = vec![0usize; k];
    for ((id, v), f) in images.iter().zip(&flags) {
        for (d, &tp) in v.iter().zip(f) {
            class_flags[d.class_id].push(tp);
            class_scores[d.class_id].push(d.score);
        }
        for a in &labels[*id] {
            n_gt[a.class_id] += 1;
        }
    }

    let ids: Vec<&str> = images.iter().map(|(id, _)| *id).collect();
    let kept: Vec<Detection> = images.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    let predicted = counts_from_detections(&kept, &ids, k, cfg.count_threshold);
    let mut truth = vec![0u64; ids.len() * k];
    for (j, id) in ids.iter().enumerate() {
        for a in &labels[*id] {
            truth[j * k + a.class_id] += 1;
        }
    }
    let (per_rmse, mean_rmse) = if ids.is_empty() {
        (vec![0.0; k], 0.0)
    } else {
        column_rmse(&CountMatrix::new(ids.len(), k, truth, predicted)?)?
    };

    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let pr = average_precision(&class_flags[c], &class_scores[c], n_gt[c])?;
        classes.push(ClassResult {
            class_id: c,
            name: cfg.class_names[c].clone(),
            n_gt: n_gt[c],
            n_det: class_flags[c].len(),
            true_positives: class_flags[c].iter().filter(|f| **f).count(),
            ap: pr.ap,
            rmse: per_rmse[c],
            pr,
        });
    }
    let aps: Vec<f64> = classes.iter().map(|c| c.ap).collect();
    Ok(EvalResults {
        num_images: ids.len(),
        criterion: cfg.criterion,
        count_threshold: cfg.count_threshold,
        map: mean_ap(&aps)?,
        classes,
        mean_rmse,
        unknown_images: unknown.into_keys().collect(),
        ignored_detections: ignored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::ObjectAnnotation;

    fn det(image: &str, class_id: usize, score: f64, x: f64, y: f64) -> Detection {
        Detection {
            image_id: image.into(),
            class_id,
            score,
            x,
            y,
            w: None,
            h: None,
            cell: None,
        }
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            class_names: vec!["a".into(), "b".into()],
            criterion: MatchCriterion::point(16.0),
            grid: None,
            count_threshold: 0.5,
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let mut labels = LabelSet::new();
        labels.insert(
            "i0".into(),
            vec![
                ObjectAnnotation::point(0, 10.0, 10.0),
                ObjectAnnotation::point(1, 90.0, 90.0),
            ],
        );
        labels.insert("i1".into(), vec![ObjectAnnotation::point(0, 50.0, 50.0)]);
        let dets = [
            det("i0", 0, 0.9, 11.0, 10.0),
            det("i0", 1, 0.8, 90.0, 92.0),
            det("i1", 0, 0.7, 50.0, 50.0),
        ];
        let r = evaluate(&dets, &labels, &cfg()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.mean_rmse, 0.0);
        assert_eq!(r.classes[0].n_gt, 2);
        assert!(r.unknown_images.is_empty());
    }

    #[test]
    fn unknown_images_are_listed_and_excluded() {
        let mut labels = LabelSet::new();
        labels.insert("i0".into(), vec![ObjectAnnotation::point(0, 10.0, 10.0)]);
        let dets = [
            det("ghost", 0, 0.99, 10.0, 10.0),
            det("i0", 0, 0.9, 10.0, 10.0),
            det("i0", 7, 0.9, 10.0, 10.0),
        ];
        let r = evaluate(&dets, &labels, &cfg()).unwrap();
        assert_eq!(r.unknown_images, vec!["ghost".to_string()]);
        assert_eq!(r.ignored_detections, 1);
        assert_eq!(r.classes[0].ap, 1.0);
        // class b has no ground truth
        assert_eq!(r.classes[1].ap, 0.0);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn bad_config_and_labels() {
        let labels = LabelSet::new();
        let mut c = cfg();
        c.class_names.clear();
        assert!(evaluate(&[], &labels, &c).is_err());
        let mut labels = LabelSet::new();
        labels.insert("i".into(), vec![ObjectAnnotation::point(4, 1.0, 1.0)]);
        assert!(evaluate(&[], &labels, &cfg()).is_err());
    }

    #[test]
    fn results_are_json() {
        let mut labels = LabelSet::new();
        labels.insert("i0".into(), vec![ObjectAnnotation::point(0, 10.0, 10.0)]);
        let r = evaluate(&[det("i0", 0, 0.9, 10.0, 10.0)], &labels, &cfg()).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: EvalResults = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(text.contains("\"mode\":\"point\""));
    }
}
