use std::collections::HashMap;

use crate::detection::Detection;
use crate::error::{Error, Result};

/// Ground-truth and predicted per-class counts, one row per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub num_images: usize,
    pub num_classes: usize,
    /// Row-major `num_images × num_classes`.
    pub truth: Vec<u64>,
    pub predicted: Vec<u64>,
}

impl CountMatrix {
    pub fn new(num_images: usize, num_classes: usize, truth: Vec<u64>, predicted: Vec<u64>) -> Result<Self> {
        let n = num_images * num_classes;
        if truth.len() != n || predicted.len() != n {
            return Err(Error::shape(format!(
                "count matrix {num_images}x{num_classes} needs {n} entries per side"
            )));
        }
        Ok(Self {
            num_images,
            num_classes,
            truth,
            predicted,
        })
    }

    /// Single-class matrix from per-image count columns.
    pub fn from_columns(truth: &[u64], predicted: &[u64]) -> Result<Self> {
        Self::new(truth.len(), 1, truth.to_vec(), predicted.to_vec())
    }
}

/// Column-wise RMSE: per class `sqrt(mean_j (y_ij - ŷ_ij)^2)`, plus the mean over classes.
pub fn column_rmse(counts: &CountMatrix) -> Result<(Vec<f64>, f64)> {
    let (n, k) = (counts.num_images, counts.num_classes);
    if n == 0 || k == 0 {
        return Err(Error::shape("column RMSE needs at least one image and one class"));
    }
    let per_class: Vec<f64> = (0..k)
        .map(|i| {
            let sq: f64 = (0..n)
                .map(|j| {
                    let d = counts.truth[j * k + i] as f64 - counts.predicted[j * k + i] as f64;
                    d * d
                })
                .sum();
            (sq / n as f64).sqrt()
        })
        .collect();
    let mean = per_class.iter().sum::<f64>() / k as f64;
    Ok((per_class, mean))
}

/// Count detections with `score >= threshold` per image and class.
///
/// `image_ids` fixes the row order; detections of other images or of
/// classes `>= num_classes` are ignored.
pub fn counts_from_detections(dets: &[Detection], image_ids: &[&str], num_classes: usize, threshold: f64) -> Vec<u64> {
    let rows: HashMap<&str, usize> = image_ids.iter().enumerate().map(|(j, id)| (*id, j)).collect();
    let mut out = vec![0u64; image_ids.len() * num_classes];
    for d in dets {
        if d.score < threshold || d.class_id >= num_classes {
            continue;
        }
        if let Some(&j) = rows.get(d.image_id.as_str()) {
            out[j * num_classes + d.class_id] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image: &str, class_id: usize, score: f64) -> Detection {
        Detection {
            image_id: image.into(),
            class_id,
            score,
            x: 0.0,
            y: 0.0,
            w: None,
            h: None,
            cell: None,
        }
    }

    #[test]
    fn rmse_hand_example() {
        let m = CountMatrix::from_columns(&[3, 5], &[4, 7]).unwrap();
        let (per, mean) = column_rmse(&m).unwrap();
        assert!((per[0] - 1.581139).abs() < 1e-6);
        assert_eq!(mean, per[0]);
    }

    #[test]
    fn perfect_class_halves_mean() {
        let m = CountMatrix::new(2, 2, vec![3, 1, 5, 2], vec![4, 1, 7, 2]).unwrap();
        let (per, mean) = column_rmse(&m).unwrap();
        assert_eq!(per[1], 0.0);
        assert_eq!(mean, per[0] / 2.0);
    }

    #[test]
    fn rmse_needs_data() {
        assert!(column_rmse(&CountMatrix::new(0, 1, vec![], vec![]).unwrap()).is_err());
        assert!(CountMatrix::new(2, 1, vec![1], vec![1, 2]).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let dets = [det("a", 0, 0.6), det("a", 0, 0.5), det("a", 0, 0.4)];
        assert_eq!(counts_from_detections(&dets, &["a"], 1, 0.5), vec![2]);
        assert_eq!(counts_from_detections(&dets, &["a"], 1, 0.0), vec![3]);
        assert_eq!(counts_from_detections(&dets, &["a"], 1, 1.0 + 1e-9), vec![0]);
    }

    #[test]
    fn rows_follow_image_order() {
        let dets = [det("b", 1, 0.9), det("a", 0, 0.9), det("zzz", 0, 0.9), det("a", 5, 0.9)];
        assert_eq!(counts_from_detections(&dets, &["a", "b"], 2, 0.5), vec![1, 0, 0, 1]);
    }
}
