use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::raster::ImageTensor;

/// A large labelled image; pixels are only touched when tiles are rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<ObjectAnnotation>,
}

impl Mosaic {
    fn check_tile(&self, size: usize) -> Result<()> {
        if size == 0 || size > self.width.min(self.height) {
            return Err(Error::config(format!(
                "tile size {size} does not fit mosaic {} ({}x{})",
                self.id, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A square window of a mosaic with its annotations in tile coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileIndex {
    pub mosaic_id: String,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub annotations: Vec<ObjectAnnotation>,
}

impl TileIndex {
    /// Pixels of this tile cut from the mosaic raster.
    pub fn render(&self, mosaic: &ImageTensor) -> Result<ImageTensor> {
        mosaic.crop(self.x0, self.y0, self.size, self.size)
    }

    /// Stable, filename-safe identifier `{mosaic}_{x0}_{y0}`.
    pub fn tile_id(&self) -> String {
        format!("{}_{}_{}", self.mosaic_id, self.x0, self.y0)
    }
}

fn owns(x0: usize, y0: usize, size: usize, a: &ObjectAnnotation) -> bool {
    let (x0, y0, s) = (x0 as f64, y0 as f64, size as f64);
    a.x >= x0 && a.x < x0 + s && a.y >= y0 && a.y < y0 + s
}

/// Translate into tile coordinates, clipping box extents to the tile.
fn to_tile(a: &ObjectAnnotation, x0: usize, y0: usize, size: usize) -> ObjectAnnotation {
    let t = a.translated(-(x0 as f64), -(y0 as f64));
    match (t.w, t.h) {
        (Some(w), Some(h)) => {
            let s = size as f64;
            let (l, r) = ((t.x - w / 2.0).max(0.0), (t.x + w / 2.0).min(s));
            let (top, bot) = ((t.y - h / 2.0).max(0.0), (t.y + h / 2.0).min(s));
            ObjectAnnotation::boxed(t.class_id, (l + r) / 2.0, (top + bot) / 2.0, r - l, bot - top)
        }
        _ => t,
    }
}

/// Bucket grid over annotation centers, one bucket per `size`-square.
struct SpatialIndex<'a> {
    anns: &'a [ObjectAnnotation],
    size: usize,
    buckets: HashMap<(usize, usize), Vec<usize>>,
}

impl<'a> SpatialIndex<'a> {
    fn new(anns: &'a [ObjectAnnotation], size: usize) -> Self {
        let mut buckets: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, a) in anns.iter().enumerate() {
            if a.x >= 0.0 && a.y >= 0.0 {
                let key = ((a.x / size as f64) as usize, (a.y / size as f64) as usize);
                buckets.entry(key).or_default().push(i);
            }
        }
        Self { anns, size, buckets }
    }

    /// Annotations owned by the window at `(x0, y0)`, in input order.
    fn window(&self, x0: usize, y0: usize, size: usize) -> Vec<&'a ObjectAnnotation> {
        let bx = x0 / self.size..=(x0 + size - 1) / self.size;
        let by = y0 / self.size..=(y0 + size - 1) / self.size;
        let mut hits: Vec<usize> = Vec::new();
        for i in bx {
            for j in by.clone() {
                if let Some(v) = self.buckets.get(&(i, j)) {
                    hits.extend(v.iter().copied().filter(|&k| owns(x0, y0, size, &self.anns[k])));
                }
            }
        }
        hits.sort_unstable();
        hits.into_iter().map(|k| &self.anns[k]).collect()
    }
}

/// Tiles at every `stride` from the origin; partial edge tiles are discarded.
///
/// An annotation belongs to a tile when its center satisfies
/// `x0 <= x < x0 + size` (same for y). With overlapping strides it is
/// attached to every tile that contains it.
pub fn slice_sequential(m: &Mosaic, size: usize, stride: usize, keep_empty: bool) -> Result<Vec<TileIndex>> {
    m.check_tile(size)?;
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    let index = SpatialIndex::new(&m.annotations, size);
    let mut tiles = Vec::new();
    for y0 in (0..=m.height - size).step_by(stride) {
        for x0 in (0..=m.width - size).step_by(stride) {
            let anns: Vec<ObjectAnnotation> = index
                .window(x0, y0, size)
                .into_iter()
                .map(|a| to_tile(a, x0, y0, size))
                .collect();
            if anns.is_empty() && !keep_empty {
                continue;
            }
            tiles.push(TileIndex {
                mosaic_id: m.id.clone(),
                x0,
                y0,
                size,
                annotations: anns,
            });
        }
    }
    Ok(tiles)
}

/// One tile per annotation, centered on it and clamped into the mosaic.
///
/// Every annotation inside the window is attached, so neighbours overlap.
pub fn slice_around_objects(m: &Mosaic, size: usize) -> Result<Vec<TileIndex>> {
    m.check_tile(size)?;
    let index = SpatialIndex::new(&m.annotations, size);
    let half = size as f64 / 2.0;
    let clamp = |v: f64, extent: usize| -> usize {
        let hi = (extent - size) as f64;
        (v - half).round().clamp(0.0, hi) as usize
    };
    Ok(m.annotations
        .iter()
        .map(|a| {
            let (x0, y0) = (clamp(a.x, m.width), clamp(a.y, m.height));
            TileIndex {
                mosaic_id: m.id.clone(),
                x0,
                y0,
                size,
                annotations: index
                    .window(x0, y0, size)
                    .into_iter()
                    .map(|b| to_tile(b, x0, y0, size))
                    .collect(),
            }
        })
        .collect())
}

/// One line of a tile manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub mosaic_id: String,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub annotations: Vec<ObjectAnnotation>,
}

impl TileRecord {
    pub fn new(tile: &TileIndex, split: Option<&str>) -> Self {
        Self {
            mosaic_id: tile.mosaic_id.clone(),
            x0: tile.x0,
            y0: tile.y0,
            size: tile.size,
            split: split.map(str::to_owned),
            annotations: tile.annotations.clone(),
        }
    }

    pub fn tile(&self) -> TileIndex {
        TileIndex {
            mosaic_id: self.mosaic_id.clone(),
            x0: self.x0,
            y0: self.y0,
            size: self.size,
            annotations: self.annotations.clone(),
        }
    }
}

pub fn write_manifest(path: &Path, records: &[TileRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
