//! Flat TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{ToyConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, MatchCriterion, MatchMode};
use crate::grid::{DecodeOptions, GridSpec};
use crate::pipeline::{AugmentRanges, DotParams};

/// Every knob of a run. Unknown keys are rejected; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub grid_size: usize,
    pub slots_per_cell: usize,
    pub coord_arity: usize,
    pub num_classes: usize,
    /// Defaults to `class0`, `class1`, ... when empty.
    pub class_names: Vec<String>,

    pub threshold: f64,
    pub stop_symbol: bool,
    pub count_threshold: f64,
    /// `point` or `box`.
    pub match_mode: String,
    /// Point-mode radius in pixels; half a cell side when unset.
    pub tau: Option<f64>,
    pub iou_min: f64,
    pub cell_center_rule: bool,

    pub seed: u64,
    /// Decoder initialisation seed for train-toy.
    pub init_seed: u64,

    pub tile_size: usize,
    pub stride: usize,
    /// `sequential` or `around_objects`.
    pub slice_mode: String,
    pub keep_empty: bool,
    /// Train/dev/test ratios.
    pub split: [f64; 3],

    pub rotation_deg: f64,
    pub zoom: f64,
    pub shear: f64,
    pub shift_px: f64,
    pub copies: usize,

    pub dot_threshold: f64,
    pub min_blob: usize,
    /// JSON dot colour table; sea-lion defaults when unset.
    pub dot_table: Option<PathBuf>,

    pub toy_images: usize,
    pub toy_objects: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub hidden_size: usize,
    pub num_layers: usize,

    pub model_tag: String,

    pub mosaic: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub tiles_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub dotted: Option<PathBuf>,
    pub plain: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub features: Vec<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image_w: 224,
            image_h: 224,
            grid_size: 7,
            slots_per_cell: 2,
            coord_arity: 2,
            num_classes: 1,
            class_names: Vec::new(),
            threshold: 0.5,
            stop_symbol: false,
            count_threshold: 0.5,
            match_mode: "point".into(),
            tau: None,
            iou_min: 0.5,
            cell_center_rule: false,
            seed: 42,
            init_seed: 7,
            tile_size: 224,
            stride: 224,
            slice_mode: "sequential".into(),
            keep_empty: true,
            split: [0.6, 0.2, 0.2],
            rotation_deg: 0.0,
            zoom: 0.0,
            shear: 0.0,
            shift_px: 0.0,
            copies: 1,
            dot_threshold: DotParams::default().threshold,
            min_blob: DotParams::default().min_blob,
            dot_table: None,
            toy_images: 8,
            toy_objects: 3,
            iterations: 2000,
            learning_rate: 0.3,
            hidden_size: 16,
            num_layers: 2,
            model_tag: "celldet".into(),
            mosaic: None,
            labels: None,
            manifest: None,
            tiles_dir: None,
            input: None,
            dotted: None,
            plain: None,
            params: None,
            features: Vec::new(),
            predictions: None,
            results: None,
            report: None,
            output: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.image_w,
            self.image_h,
            self.grid_size,
            self.slots_per_cell,
            self.coord_arity,
            self.num_classes,
        )
    }

    pub fn class_names(&self) -> Result<Vec<String>> {
        if self.class_names.is_empty() {
            return Ok((0..self.num_classes).map(|i| format!("class{i}")).collect());
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(self.class_names.clone())
    }

    pub fn decode_options(&self) -> Result<DecodeOptions> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::config("threshold must be finite and >= 0"));
        }
        Ok(DecodeOptions {
            threshold: self.threshold,
            stop_symbol: self.stop_symbol,
        })
    }

    pub fn criterion(&self) -> Result<MatchCriterion> {
        let spec = self.grid_spec()?;
        let mode = match self.match_mode.as_str() {
            "point" => MatchMode::Point {
                tau: self.tau.unwrap_or_else(|| 0.5 * spec.cell_w().min(spec.cell_h())),
            },
            "box" => MatchMode::Box { iou_min: self.iou_min },
            other => return Err(Error::config(format!("unknown match_mode {other:?}"))),
        };
        let c = MatchCriterion {
            mode,
            cell_center_rule: self.cell_center_rule,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            class_names: self.class_names()?,
            criterion: self.criterion()?,
            grid: Some(self.grid_spec()?),
            count_threshold: self.count_threshold,
        })
    }

    pub fn augment_ranges(&self) -> Result<AugmentRanges> {
        let r = AugmentRanges {
            rotation_deg: self.rotation_deg,
            zoom: self.zoom,
            shear: self.shear,
            shift_px: self.shift_px,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn dot_params(&self) -> DotParams {
        DotParams {
            threshold: self.dot_threshold,
            min_blob: self.min_blob,
        }
    }

    pub fn toy_config(&self) -> Result<ToyConfig> {
        Ok(ToyConfig {
            spec: self.grid_spec()?,
            images: self.toy_images,
            objects_per_image: self.toy_objects,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed: self.init_seed,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
        }
    }

    /// Check the knobs shared by all commands before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.class_names()?;
        self.decode_options()?;
        self.criterion()?;
        self.augment_ranges()?;
        if !(0.0..=1.0).contains(&self.count_threshold) {
            return Err(Error::config("count_threshold must lie in [0, 1]"));
        }
        if !matches!(self.slice_mode.as_str(), "sequential" | "around_objects") {
            return Err(Error::config(format!("unknown slice_mode {:?}", self.slice_mode)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn run_id_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.run_id(), b.run_id());
        b.seed += 1;
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id().len(), 16);
    }

    #[test]
    fn half_cell_tau_by_default() {
        let c = RunConfig::default();
        assert_eq!(c.criterion().unwrap().mode, MatchMode::Point { tau: 16.0 });
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("grid_sise = 4").is_err());
        assert!(RunConfig::from_toml("grid_size = \"four\"").is_err());
        let bad = |s: &str| RunConfig::from_toml(s).unwrap().validate().is_err();
        assert!(bad("grid_size = 0"));
        assert!(bad("match_mode = \"ring\""));
        assert!(bad("tau = -1.0"));
        assert!(bad("num_classes = 2\nclass_names = [\"a\"]"));
        assert!(bad("slice_mode = \"diagonal\""));
        assert!(bad("zoom = -0.5"));
    }
}
