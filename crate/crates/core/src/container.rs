//! Little-endian tensor container used for decoder parameters and feature grids.
//!
//! ```text
//! magic      8 bytes  "CELLDET\0"
//! version    u32      1
//! layers     u32      LSTM layer count (parameter files) or 0 (feature grids)
//! count      u32      number of tensors
//! per tensor:
//!   rank     u32
//!   dims     u32 × rank
//!   payload  f32 × prod(dims), row-major
//! ```
//!
//! Parameter files store, per LSTM layer, `w_ih [4H, In]`, `w_hh [4H, H]`,
//! `bias [4H]`, followed by the objectness, class and coordinate heads as
//! `weight [out, H]`, `bias [out]` pairs. Gate blocks are ordered input,
//! forget, candidate, output. A feature-grid file holds a single rank-4
//! tensor `[B, H, W, F]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::decoder::{DecoderConfig, DecoderParams};
use crate::error::{Error, Result};
use crate::tensor::FeatureGrid;

pub const MAGIC: [u8; 8] = *b"CELLDET\0";
pub const VERSION: u32 = 1;

/// One tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub layers: u32,
    pub tensors: Vec<StoredTensor>,
}

impl Container {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.layers.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for d in &t.dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.values.len());
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::input("not a tensor container (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::input(format!("unsupported container version {version}")));
        }
        let layers = read_u32(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::input(format!("tensor rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r)? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::input("tensor size overflows"))?;
            let mut bytes = vec![
                0u8;
                len.checked_mul(4)
                    .ok_or_else(|| Error::input("tensor size overflows"))?
            ];
            read_exact(&mut r, &mut bytes)?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(StoredTensor { dims, values });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::input(e.to_string()))? != 0 {
            return Err(Error::input("trailing bytes after last tensor"));
        }
        Ok(Self { layers, tensors })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::input(format!("truncated tensor container: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn stored(dims: Vec<usize>, values: &[f64]) -> StoredTensor {
    StoredTensor {
        dims,
        values: values.iter().map(|v| *v as f32).collect(),
    }
}

pub fn params_to_container(p: &DecoderParams) -> Container {
    Container {
        layers: p.layers.len() as u32,
        tensors: p
            .tensor_dims()
            .into_iter()
            .zip(p.tensors())
            .map(|(d, t)| stored(d, t))
            .collect(),
    }
}

pub fn params_from_container(c: &Container) -> Result<DecoderParams> {
    let n_layers = c.layers as usize;
    let bad = |msg: &str| Error::input(format!("parameter file: {msg}"));
    if n_layers == 0 {
        return Err(bad("layer count must be >= 1"));
    }
    if c.tensors.len() != 3 * n_layers + 6 {
        return Err(bad(&format!(
            "expected {} tensors for {n_layers} layers, found {}",
            3 * n_layers + 6,
            c.tensors.len()
        )));
    }
    let w_ih0 = &c.tensors[0].dims;
    if w_ih0.len() != 2 || !w_ih0[0].is_multiple_of(4) || w_ih0[0] == 0 {
        return Err(bad("first tensor must be a [4H, F] input weight"));
    }
    let cfg = DecoderConfig {
        feature_dim: w_ih0[1],
        hidden_size: w_ih0[0] / 4,
        num_layers: n_layers,
        num_classes: c.tensors[3 * n_layers + 2].dims.first().copied().unwrap_or(0),
        coord_arity: c.tensors[3 * n_layers + 4].dims.first().copied().unwrap_or(0),
    };
    cfg.validate()?;
    let mut p = DecoderParams::zeros(&cfg);
    let want = p.tensor_dims();
    for (i, (stored, dims)) in c.tensors.iter().zip(&want).enumerate() {
        if &stored.dims != dims {
            return Err(bad(&format!(
                "tensor {i} has dims {:?}, expected {dims:?}",
                stored.dims
            )));
        }
    }
    for (dst, src) in p.tensors_mut().into_iter().zip(&c.tensors) {
        for (d, s) in dst.iter_mut().zip(&src.values) {
            *d = f64::from(*s);
        }
    }
    if !p.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(p)
}

pub fn grid_to_container(g: &FeatureGrid) -> Container {
    Container {
        layers: 0,
        tensors: vec![stored(vec![g.batch, g.height, g.width, g.feature_dim], &g.data)],
    }
}

pub fn grid_from_container(c: &Container) -> Result<FeatureGrid> {
    match c.tensors.as_slice() {
        [t] if t.dims.len() == 4 => FeatureGrid::new(
            t.dims[0],
            t.dims[1],
            t.dims[2],
            t.dims[3],
            t.values.iter().map(|v| f64::from(*v)).collect(),
        ),
        _ => Err(Error::input("feature-grid file must hold exactly one rank-4 tensor")),
    }
}

fn write_file(path: &Path, c: &Container) -> Result<()> {
    std::fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::read_from(bytes.as_slice())
}

pub fn save_params(path: &Path, p: &DecoderParams) -> Result<()> {
    write_file(path, &params_to_container(p))
}

pub fn load_params(path: &Path) -> Result<DecoderParams> {
    params_from_container(&read_file(path)?)
}

pub fn save_grid(path: &Path, g: &FeatureGrid) -> Result<()> {
    write_file(path, &grid_to_container(g))
}

pub fn load_grid(path: &Path) -> Result<FeatureGrid> {
    grid_from_container(&read_file(path)?)
}
