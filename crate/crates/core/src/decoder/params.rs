use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Half-width of the uniform parameter initialisation range.
pub const INIT_RANGE: f64 = 0.08;

/// Shape of a decoder: input features, LSTM stack and head widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub feature_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub coord_arity: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::config("feature_dim, hidden_size and num_layers must be >= 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        if self.coord_arity != 2 && self.coord_arity != 4 {
            return Err(Error::config("coord_arity must be 2 or 4"));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        2 + self.num_classes + self.coord_arity
    }
}

/// One LSTM layer. Gate blocks are stacked `[input, forget, candidate, output]`,
/// each `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4H × input_dim`
    pub w_ih: Vec<f64>,
    /// `4H × H`
    pub w_hh: Vec<f64>,
    /// `4H`
    pub bias: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_ih: vec![0.0; 4 * hidden * input_dim],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// Fully connected `out × in` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseHead {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            weight: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
        }
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.input_dim..(o + 1) * self.input_dim];
            *slot = self.bias[o] + dot(row, x);
        }
    }
}

/// Stacked LSTM plus objectness, class and coordinate heads.
///
/// The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub layers: Vec<LstmLayer>,
    pub objectness: DenseHead,
    pub class: DenseHead,
    pub coords: DenseHead,
}

impl DecoderParams {
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        let h = cfg.hidden_size;
        let layers = (0..cfg.num_layers)
            .map(|l| LstmLayer::zeros(if l == 0 { cfg.feature_dim } else { h }, h))
            .collect();
        Self {
            layers,
            objectness: DenseHead::zeros(h, 2),
            class: DenseHead::zeros(h, cfg.num_classes),
            coords: DenseHead::zeros(h, cfg.coord_arity),
        }
    }

    /// Uniform `(-0.08, 0.08)` initialisation from a seeded ChaCha stream,
    /// drawn in serialization order.
    pub fn init(cfg: &DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> DecoderConfig {
        DecoderConfig {
            feature_dim: self.layers[0].input_dim,
            hidden_size: self.layers[0].hidden,
            num_layers: self.layers.len(),
            num_classes: self.class.output_dim,
            coord_arity: self.coords.output_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config())
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w_ih);
            out.push(&l.w_hh);
            out.push(&l.bias);
        }
        for head in [&self.objectness, &self.class, &self.coords] {
            out.push(&head.weight);
            out.push(&head.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        for head in [&mut self.objectness, &mut self.class, &mut self.coords] {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out
    }

    /// Row-major dims of each tensor, matching [`tensors`](Self::tensors).
    pub fn tensor_dims(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(vec![4 * l.hidden, l.input_dim]);
            out.push(vec![4 * l.hidden, l.hidden]);
            out.push(vec![4 * l.hidden]);
        }
        for head in [&self.objectness, &self.class, &self.coords] {
            out.push(vec![head.output_dim, head.input_dim]);
            out.push(vec![head.output_dim]);
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_values()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &DecoderParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// `self -= lr · grad`
    pub fn step(&mut self, grad: &DecoderParams, lr: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            for (x, g) in a.iter_mut().zip(b) {
                *x -= lr * g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DecoderConfig {
        DecoderConfig {
            feature_dim: 5,
            hidden_size: 4,
            num_layers: 2,
            num_classes: 3,
            coord_arity: 2,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = DecoderParams::init(&cfg(), 7).unwrap();
        let b = DecoderParams::init(&cfg(), 7).unwrap();
        let c = DecoderParams::init(&cfg(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.flatten().iter().all(|v| v.abs() < INIT_RANGE));
    }

    #[test]
    fn flat_roundtrip_and_dims() {
        let a = DecoderParams::init(&cfg(), 1).unwrap();
        let mut b = a.zeros_like();
        b.assign_flat(&a.flatten()).unwrap();
        assert_eq!(a, b);
        let dims = a.tensor_dims();
        for (t, d) in a.tensors().iter().zip(&dims) {
            assert_eq!(t.len(), d.iter().product::<usize>());
        }
        assert_eq!(a.layers[1].input_dim, 4);
        assert_eq!(a.config(), cfg());
    }
}
