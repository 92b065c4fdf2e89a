use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::raster::ImageTensor;

/// Smallest accepted `|det|` of the linear part.
pub const MIN_DETERMINANT: f64 = 1e-6;
/// Sampling attempts before a degenerate transform is reported.
pub const MAX_RESAMPLES: usize = 10;

/// `p' = A p + t` stored row-major as `[[a00, a01, t0], [a10, a11, t1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    /// Rotation (degrees), zoom, shear and shift composed about `center`.
    ///
    /// The linear part is `zoom * R * S` with `R = [[cos, sin], [-sin, cos]]`
    /// and `S = [[1, shear], [0, 1]]`; the center maps to `center + shift`.
    pub fn about_center(rotation_deg: f64, zoom: f64, shear: f64, shift: [f64; 2], center: [f64; 2]) -> Self {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let a = [[zoom * c, zoom * (c * shear + s)], [-zoom * s, zoom * (-s * shear + c)]];
        let t0 = center[0] + shift[0] - (a[0][0] * center[0] + a[0][1] * center[1]);
        let t1 = center[1] + shift[1] - (a[1][0] * center[0] + a[1][1] * center[1]);
        Self {
            m: [[a[0][0], a[0][1], t0], [a[1][0], a[1][1], t1]],
        }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() < MIN_DETERMINANT || !det.is_finite() {
            return Err(Error::config(format!("affine transform is singular (det {det})")));
        }
        let m = &self.m;
        let a = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let t0 = -(a[0][0] * m[0][2] + a[0][1] * m[1][2]);
        let t1 = -(a[1][0] * m[0][2] + a[1][1] * m[1][2]);
        Ok(Self {
            m: [[a[0][0], a[0][1], t0], [a[1][0], a[1][1], t1]],
        })
    }

    /// Map an annotation; boxes become the axis-aligned box enclosing their mapped corners.
    pub fn apply_annotation(&self, a: &ObjectAnnotation) -> ObjectAnnotation {
        match (a.w, a.h) {
            (Some(w), Some(h)) => {
                let corners = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
                    .map(|(dx, dy)| self.apply(a.x + dx * w, a.y + dy * h));
                let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
                    corners.iter().map(pick).fold(init, f)
                };
                let (l, r) = (
                    fold(f64::min, f64::INFINITY, |p| p.0),
                    fold(f64::max, f64::NEG_INFINITY, |p| p.0),
                );
                let (t, b) = (
                    fold(f64::min, f64::INFINITY, |p| p.1),
                    fold(f64::max, f64::NEG_INFINITY, |p| p.1),
                );
                ObjectAnnotation::boxed(a.class_id, (l + r) / 2.0, (t + b) / 2.0, r - l, b - t)
            }
            _ => {
                let (x, y) = self.apply(a.x, a.y);
                ObjectAnnotation::point(a.class_id, x, y)
            }
        }
    }
}

/// Symmetric sampling ranges; zero everywhere means identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentRanges {
    /// Rotation drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Zoom drawn from `[1 - zoom, 1 + zoom]`.
    pub zoom: f64,
    /// Shear factor drawn from `[-shear, shear]`.
    pub shear: f64,
    /// Per-axis shift in pixels drawn from `[-shift_px, shift_px]`.
    pub shift_px: f64,
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let v = [self.rotation_deg, self.zoom, self.shear, self.shift_px];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("augmentation ranges must be finite and >= 0"));
        }
        Ok(())
    }

    /// Draw one transform about `center`, resampling degenerate draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, center: [f64; 2]) -> Result<AffineTransform> {
        self.validate()?;
        let mut sym = |r: f64| if r == 0.0 { 0.0 } else { rng.random_range(-r..=r) };
        for _ in 0..MAX_RESAMPLES {
            let rot = sym(self.rotation_deg);
            let zoom = 1.0 + sym(self.zoom);
            let shear = sym(self.shear);
            let shift = [sym(self.shift_px), sym(self.shift_px)];
            let t = AffineTransform::about_center(rot, zoom, shear, shift, center);
            if t.determinant().abs() >= MIN_DETERMINANT {
                return Ok(t);
            }
        }
        Err(Error::config(format!(
            "no invertible transform after {MAX_RESAMPLES} draws; narrow the zoom range"
        )))
    }
}

/// Warp pixels through `t`: each output pixel center is pulled back through
/// the inverse and sampled bilinearly. Points falling outside the source
/// take the per-channel mean.
pub fn warp_image(img: &ImageTensor, t: &AffineTransform) -> Result<ImageTensor> {
    let inv = t.inverse()?;
    let fill = img.channel_means();
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut out = ImageTensor::filled(h, w, ch, 0.0);
    for row in 0..h {
        for col in 0..w {
            let (sx, sy) = inv.apply(col as f64 + 0.5, row as f64 + 0.5);
            if !(sx >= 0.0 && sx < w as f64 && sy >= 0.0 && sy < h as f64) {
                for (c, v) in fill.iter().enumerate() {
                    out.set(row, col, c, *v);
                }
                continue;
            }
            let (fx, fy) = ((sx - 0.5).max(0.0), (sy - 0.5).max(0.0));
            let (x0, y0) = ((fx as usize).min(w - 1), (fy as usize).min(h - 1));
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..ch {
                let top = img.get(y0, x0, c) * (1.0 - ax) + img.get(y0, x1, c) * ax;
                let bot = img.get(y1, x0, c) * (1.0 - ax) + img.get(y1, x1, c) * ax;
                out.set(row, col, c, top * (1.0 - ay) + bot * ay);
            }
        }
    }
    Ok(out)
}

/// Result of one augmentation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: ImageTensor,
    pub annotations: Vec<ObjectAnnotation>,
    pub transform: AffineTransform,
}

/// Apply one sampled transform jointly to a tile and its annotations.
///
/// Annotations whose mapped center leaves the tile are dropped.
pub fn augment<R: Rng + ?Sized>(
    img: &ImageTensor,
    anns: &[ObjectAnnotation],
    ranges: &AugmentRanges,
    rng: &mut R,
) -> Result<Augmented> {
    let center = [img.width as f64 / 2.0, img.height as f64 / 2.0];
    let transform = ranges.sample(rng, center)?;
    let image = warp_image(img, &transform)?;
    let (w, h) = (img.width as f64, img.height as f64);
    let annotations = anns
        .iter()
        .map(|a| transform.apply_annotation(a))
        .filter(|a| a.x >= 0.0 && a.x < w && a.y >= 0.0 && a.y < h)
        .collect();
    Ok(Augmented {
        image,
        annotations,
        transform,
    })
}
