//! Desk-scale training: plain gradient descent on synthetic feature grids.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{decoder_backward, decoder_forward_cached, DecoderConfig, DecoderParams};
use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::grid::{encode_labels, CellTargets, GridSpec};
use crate::loss::batch_loss;
use crate::tensor::FeatureGrid;

/// Feature grids paired with their encoded targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: FeatureGrid,
    pub targets: Vec<CellTargets>,
    /// Slots per cell (`k`).
    pub steps: usize,
    pub num_classes: usize,
    pub coord_arity: usize,
}

impl TrainingSet {
    fn validate(&self) -> Result<()> {
        if self.targets.len() != self.features.batch {
            return Err(Error::shape(format!(
                "{} target sets for {} feature grids",
                self.targets.len(),
                self.features.batch
            )));
        }
        for t in &self.targets {
            if t.grid_size != self.features.height
                || t.grid_size != self.features.width
                || t.slots_per_cell != self.steps
                || t.coord_arity != self.coord_arity
            {
                return Err(Error::shape("targets do not match the feature grid layout"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Seeds parameter initialisation.
    pub seed: u64,
    pub hidden_size: usize,
    pub num_layers: usize,
}

/// Batch-mean loss components at one point of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub l_o: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub total: f64,
}

/// Train a freshly initialised decoder by full-batch gradient descent.
///
/// Targets are re-matched against the current predictions every iteration.
/// The curve holds one point per iteration (loss before its update) plus a
/// final point after the last update.
pub fn train_toy(data: &TrainingSet, cfg: &TrainConfig) -> Result<(DecoderParams, Vec<LossPoint>)> {
    data.validate()?;
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::config("learning_rate must be finite and >= 0"));
    }
    let dcfg = DecoderConfig {
        feature_dim: data.features.feature_dim,
        hidden_size: cfg.hidden_size,
        num_layers: cfg.num_layers,
        num_classes: data.num_classes,
        coord_arity: data.coord_arity,
    };
    let mut params = DecoderParams::init(&dcfg, cfg.seed)?;
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    for step in 0..=cfg.iterations {
        let (pred, cache) = decoder_forward_cached(&data.features, &params, data.steps)?;
        if pred.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                last_finite: curve.last().map(|p: &LossPoint| p.step),
                message: "decoder produced non-finite outputs".into(),
            });
        }
        let loss = batch_loss(&pred, &data.targets)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step,
                last_finite: curve.last().map(|p: &LossPoint| p.step),
                message: format!("total loss became {}", loss.total),
            });
        }
        curve.push(LossPoint {
            step,
            l_o: loss.l_o,
            l_r: loss.l_r,
            l_c: loss.l_c,
            total: loss.total,
        });
        if step == cfg.iterations {
            break;
        }
        let grad = decoder_backward(&params, &cache, &loss.grad)?;
        params.step(&grad, cfg.learning_rate);
        if !params.is_finite() {
            return Err(Error::Divergence {
                step,
                last_finite: Some(step),
                message: "parameters became non-finite".into(),
            });
        }
    }
    Ok((params, curve))
}

/// Synthetic scene generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub spec: GridSpec,
    pub images: usize,
    pub objects_per_image: usize,
    pub seed: u64,
}

/// A synthetic dataset: features, encoded targets and the pixel-space labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScenes {
    pub set: TrainingSet,
    pub labels: Vec<Vec<ObjectAnnotation>>,
}

/// Feature width used by [`toy_scenes`]: occupancy, cell-local x and y, class one-hot.
pub fn toy_feature_dim(num_classes: usize) -> usize {
    3 + num_classes
}

/// Scenes of well-spaced point objects whose cell features linearly encode
/// them: an occupied cell carries `[1, rx, ry, onehot(class)]`, an empty
/// cell all zeros. Objects sit in distinct cells at Chebyshev distance
/// of at least 2 cells from each other.
pub fn toy_scenes(cfg: &ToyConfig) -> Result<ToyScenes> {
    let spec = cfg.spec;
    spec.validate()?;
    if spec.coord_arity != 2 {
        return Err(Error::config("toy scenes use point labels (coord_arity = 2)"));
    }
    let g = spec.grid_size;
    let f = toy_feature_dim(spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut features = FeatureGrid::zeros(cfg.images, g, g, f);
    let mut targets = Vec::with_capacity(cfg.images);
    let mut labels = Vec::with_capacity(cfg.images);
    for b in 0..cfg.images {
        let cells = spaced_cells(&mut rng, g, cfg.objects_per_image)?;
        let mut anns = Vec::with_capacity(cells.len());
        for (row, col) in cells {
            let rx: f64 = rng.random_range(0.25..0.75);
            let ry: f64 = rng.random_range(0.25..0.75);
            let class_id = rng.random_range(0..spec.num_classes);
            let feat = features.cell_mut(b, row, col);
            feat[0] = 1.0;
            feat[1] = rx;
            feat[2] = ry;
            feat[3 + class_id] = 1.0;
            anns.push(ObjectAnnotation::point(
                class_id,
                (col as f64 + rx) * spec.cell_w(),
                (row as f64 + ry) * spec.cell_h(),
            ));
        }
        targets.push(encode_labels(&anns, &spec)?.0);
        labels.push(anns);
    }
    Ok(ToyScenes {
        set: TrainingSet {
            features,
            targets,
            steps: spec.slots_per_cell,
            num_classes: spec.num_classes,
            coord_arity: spec.coord_arity,
        },
        labels,
    })
}

fn spaced_cells(rng: &mut ChaCha8Rng, g: usize, count: usize) -> Result<Vec<(usize, usize)>> {
    for _ in 0..10_000 {
        let picks: Vec<(usize, usize)> = sample(rng, g * g, count).into_iter().map(|i| (i / g, i % g)).collect();
        let spaced = picks.iter().enumerate().all(|(i, a)| {
            picks[i + 1..]
                .iter()
                .all(|b| a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) >= 2)
        });
        if spaced {
            return Ok(picks);
        }
    }
    Err(Error::config(format!(
        "cannot place {count} well-spaced objects on a {g}x{g} grid"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyScenes {
        toy_scenes(&ToyConfig {
            spec: GridSpec::new(224, 224, 4, 2, 2, 3).unwrap(),
            images: 3,
            objects_per_image: 3,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn scenes_are_consistent() {
        let t = toy();
        assert_eq!(t.set.features.feature_dim, 6);
        for (tg, anns) in t.set.targets.iter().zip(&t.labels) {
            assert_eq!(anns.len(), 3);
            assert_eq!(tg.present_count(), 3);
        }
        assert_eq!(t, toy());
    }

    #[test]
    fn zero_learning_rate_keeps_curve_flat() {
        let cfg = TrainConfig {
            iterations: 5,
            learning_rate: 0.0,
            seed: 1,
            hidden_size: 4,
            num_layers: 2,
        };
        let (params, curve) = train_toy(&toy().set, &cfg).unwrap();
        assert_eq!(curve.len(), 6);
        assert!(curve.iter().all(|p| p.total == curve[0].total));
        let dcfg = params.config();
        assert_eq!(params, DecoderParams::init(&dcfg, 1).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let cfg = TrainConfig {
            iterations: 30,
            learning_rate: 0.5,
            seed: 2,
            hidden_size: 8,
            num_layers: 2,
        };
        let (_, a) = train_toy(&toy().set, &cfg).unwrap();
        let (_, b) = train_toy(&toy().set, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.last().unwrap().total < a[0].total);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let cfg = TrainConfig {
            iterations: 200,
            learning_rate: 1e300,
            seed: 2,
            hidden_size: 4,
            num_layers: 1,
        };
        assert!(matches!(train_toy(&toy().set, &cfg), Err(Error::Divergence { .. })));
    }
}
