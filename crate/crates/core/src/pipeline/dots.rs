use serde::{Deserialize, Serialize};

use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::raster::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotColor {
    pub name: String,
    pub rgb: [f64; 3],
    /// Per-channel absolute tolerance.
    pub tolerance: [f64; 3],
}

/// Reference dot colours; a colour's index is its class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotColorTable {
    pub classes: Vec<DotColor>,
}

impl DotColorTable {
    /// Sea-lion dot colours. These are eyeballed estimates, not published values.
    pub fn sea_lion_defaults() -> Self {
        let c = |name: &str, rgb: [f64; 3]| DotColor {
            name: name.into(),
            rgb,
            tolerance: [40.0; 3],
        };
        Self {
            classes: vec![
                c("adult_males", [255.0, 0.0, 0.0]),
                c("subadult_males", [250.0, 10.0, 250.0]),
                c("adult_females", [84.0, 42.0, 0.0]),
                c("juveniles", [30.0, 60.0, 180.0]),
                c("pups", [35.0, 180.0, 20.0]),
            ],
        }
    }

    /// Every pair must be separated on some channel by more than both tolerances.
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.classes.iter().enumerate() {
            if a.tolerance.iter().any(|t| t.is_nan() || *t < 0.0) {
                return Err(Error::config(format!("negative tolerance for {}", a.name)));
            }
            for b in &self.classes[i + 1..] {
                let apart = (0..3).any(|c| (a.rgb[c] - b.rgb[c]).abs() > a.tolerance[c] + b.tolerance[c]);
                if !apart {
                    return Err(Error::config(format!(
                        "dot colours {} and {} overlap within tolerance",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nearest colour (Euclidean) among those within tolerance on every channel.
    pub fn classify(&self, rgb: [f64; 3]) -> Option<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, d)| (0..3).all(|c| (rgb[c] - d.rgb[c]).abs() <= d.tolerance[c]))
            .map(|(i, d)| {
                let dist = (0..3).map(|c| (rgb[c] - d.rgb[c]).powi(2)).sum::<f64>();
                (i, dist)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotParams {
    /// A pixel is marked when some channel differs by more than this.
    pub threshold: f64,
    /// Minimum blob area in pixels.
    pub min_blob: usize,
}

impl Default for DotParams {
    fn default() -> Self {
        Self {
            threshold: 30.0,
            min_blob: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DotExtraction {
    pub annotations: Vec<ObjectAnnotation>,
    /// Blobs whose colour matched no table entry.
    pub unclassified: usize,
}

/// Recover dot annotations from a dotted image and its clean twin.
///
/// The difference mask is split into 8-connected blobs; each blob of at
/// least `min_blob` pixels yields one point at the mean of its pixel
/// centers, classified by the mean dotted-image colour over the blob.
/// Blobs are reported in raster order of their first pixel.
pub fn extract_dots(
    dotted: &ImageTensor,
    plain: &ImageTensor,
    table: &DotColorTable,
    params: &DotParams,
) -> Result<DotExtraction> {
    if !dotted.same_dims(plain) {
        return Err(Error::shape(format!(
            "dotted image is {}x{}x{}, plain is {}x{}x{}",
            dotted.height, dotted.width, dotted.channels, plain.height, plain.width, plain.channels
        )));
    }
    if dotted.channels != 3 {
        return Err(Error::shape("dot extraction needs RGB images"));
    }
    let (h, w) = (dotted.height, dotted.width);
    let mask: Vec<bool> = (0..h * w)
        .map(|p| {
            let (r, c) = (p / w, p % w);
            dotted
                .pixel(r, c)
                .iter()
                .zip(plain.pixel(r, c))
                .any(|(a, b)| (a - b).abs() > params.threshold)
        })
        .collect();

    let mut seen = vec![false; h * w];
    let mut out = DotExtraction::default();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
        let mut color = [0.0f64; 3];
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            n += 1;
            sx += c as f64 + 0.5;
            sy += r as f64 + 0.5;
            for (acc, v) in color.iter_mut().zip(dotted.pixel(r, c)) {
                *acc += v;
            }
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if n < params.min_blob {
            continue;
        }
        let mean = color.map(|v| v / n as f64);
        match table.classify(mean) {
            Some(class_id) => out
                .annotations
                .push(ObjectAnnotation::point(class_id, sx / n as f64, sy / n as f64)),
            None => out.unclassified += 1,
        }
    }
    Ok(out)
}
