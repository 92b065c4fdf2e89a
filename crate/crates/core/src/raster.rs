//! In-memory rasters and their on-disk forms.
//!
//! PNG is the lossless container; plain-text netpbm (`.pgm`/`.ppm`, P2/P3)
//! is the ASCII format used for hand-written fixtures.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, RgbImage};

use crate::error::{Error, Result};

/// Row-major `height × width × channels` pixel buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.index(row, col, ch);
        self.values[i] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = self.index(row, col, 0);
        &self.values[i..i + self.channels]
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Copy out the `size_w × size_h` region whose top-left is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size_w: usize, size_h: usize) -> Result<ImageTensor> {
        if x0 + size_w > self.width || y0 + size_h > self.height {
            return Err(Error::shape(format!(
                "crop {size_w}x{size_h}@({x0},{y0}) exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(size_w * size_h * self.channels);
        for row in y0..y0 + size_h {
            let start = self.index(row, x0, 0);
            values.extend_from_slice(&self.values[start..start + size_w * self.channels]);
        }
        Ok(ImageTensor {
            height: size_h,
            width: size_w,
            channels: self.channels,
            values,
        })
    }

    /// Per-channel mean value.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.values.chunks_exact(self.channels.max(1)) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Read a PNG or plain/binary netpbm file. Grayscale stays single-channel,
/// everything else is converted to RGB.
pub fn read_raster(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => ImageTensor::new(h, w, 1, g.into_raw().into_iter().map(f64::from).collect()),
        other => ImageTensor::new(h, w, 3, other.to_rgb8().into_raw().into_iter().map(f64::from).collect()),
    }
}

/// Write a raster, choosing the format from the extension: `.pgm`/`.ppm`
/// produce ASCII netpbm, anything else PNG. Values are rounded into `0..=255`.
pub fn write_raster(path: &Path, img: &ImageTensor) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::shape(format!(
            "only 1- or 3-channel rasters can be written, got {}",
            img.channels
        )));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = img.to_bytes();
    let (w, h) = (img.width as u32, img.height as u32);
    if ext == "pgm" || ext == "ppm" {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let subtype = if img.channels == 1 {
            PnmSubtype::Graymap(SampleEncoding::Ascii)
        } else {
            PnmSubtype::Pixmap(SampleEncoding::Ascii)
        };
        let color = if img.channels == 1 {
            ExtendedColorType::L8
        } else {
            ExtendedColorType::Rgb8
        };
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(subtype)
            .write_image(&bytes, w, h, color)?;
        return Ok(());
    }
    let dynimg = if img.channels == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).ok_or_else(|| Error::shape("raster buffer size"))?)
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).ok_or_else(|| Error::shape("raster buffer size"))?)
    };
    dynimg.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
