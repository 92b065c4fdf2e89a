//! Per-cell LSTM decoding head.
//!
//! Every grid cell's feature vector is fed as the input of a stacked LSTM at
//! each of `k` time steps (zero initial state). At every step the top layer's
//! hidden state drives three dense heads whose outputs form one slot record
//! `[objectness logits (2) | class logits (C) | coords (r)]`. Cells are
//! independent, so any grid size runs with the same parameters.

mod lstm;
mod params;
mod train;

pub use lstm::{lstm_cell_forward, sigmoid, LstmState, StepCache};
pub use params::{DecoderConfig, DecoderParams, DenseHead, LstmLayer, INIT_RANGE};
pub use train::{toy_scenes, train_toy, LossPoint, ToyConfig, ToyScenes, TrainConfig, TrainingSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FeatureGrid, PredictionTensor};

use lstm::{step_backward, step_forward};

/// Cells handled per parallel task; fixed so reductions are order-stable.
const CELLS_PER_TASK: usize = 32;

/// Forward intermediates of one cell: `steps[t][layer]` plus top hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    steps: Vec<Vec<StepCache>>,
    top_h: Vec<Vec<f64>>,
}

/// Decode one cell into `k` slot records.
pub fn decode_cell(feature: &[f64], params: &DecoderParams, k: usize) -> Result<Vec<Vec<f64>>> {
    check_feature(feature, params)?;
    let (out, _) = cell_forward(feature, params, k);
    Ok(out
        .chunks_exact(params.config().output_width())
        .map(<[f64]>::to_vec)
        .collect())
}

fn check_feature(feature: &[f64], params: &DecoderParams) -> Result<()> {
    if feature.len() != params.layers[0].input_dim {
        return Err(Error::shape(format!(
            "feature vector has {} values, decoder expects {}",
            feature.len(),
            params.layers[0].input_dim
        )));
    }
    Ok(())
}

fn cell_forward(feature: &[f64], params: &DecoderParams, k: usize) -> (Vec<f64>, CellCache) {
    let cfg = params.config();
    let width = cfg.output_width();
    let mut states: Vec<LstmState> = params.layers.iter().map(|l| LstmState::zeros(l.hidden)).collect();
    let mut out = vec![0.0; k * width];
    let mut cache = CellCache {
        steps: Vec::with_capacity(k),
        top_h: Vec::with_capacity(k),
    };
    for t in 0..k {
        let mut layer_caches = Vec::with_capacity(params.layers.len());
        let mut input = feature.to_vec();
        for (layer, state) in params.layers.iter().zip(states.iter_mut()) {
            let (next, c) = step_forward(layer, &input, state);
            input.clone_from(&next.h);
            *state = next;
            layer_caches.push(c);
        }
        let rec = &mut out[t * width..(t + 1) * width];
        let (obj, rest) = rec.split_at_mut(2);
        let (cls, coords) = rest.split_at_mut(cfg.num_classes);
        params.objectness.apply(&input, obj);
        params.class.apply(&input, cls);
        params.coords.apply(&input, coords);
        cache.steps.push(layer_caches);
        cache.top_h.push(input);
    }
    (out, cache)
}

fn cell_backward(params: &DecoderParams, cache: &CellCache, upstream: &[f64], grad: &mut DecoderParams) {
    let cfg = params.config();
    let width = cfg.output_width();
    let n_layers = params.layers.len();
    let hd = cfg.hidden_size;
    let k = cache.steps.len();
    let mut dh_next = vec![vec![0.0; hd]; n_layers];
    let mut dc_next = vec![vec![0.0; hd]; n_layers];
    for t in (0..k).rev() {
        let d_out = &upstream[t * width..(t + 1) * width];
        let h_top = &cache.top_h[t];
        let mut dh_top = vec![0.0; hd];
        let (d_obj, rest) = d_out.split_at(2);
        let (d_cls, d_coords) = rest.split_at(cfg.num_classes);
        for (head, ghead, d) in [
            (&params.objectness, &mut grad.objectness, d_obj),
            (&params.class, &mut grad.class, d_cls),
            (&params.coords, &mut grad.coords, d_coords),
        ] {
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                ghead.bias[o] += dv;
                let row = &head.weight[o * hd..(o + 1) * hd];
                let grow = &mut ghead.weight[o * hd..(o + 1) * hd];
                for u in 0..hd {
                    grow[u] += dv * h_top[u];
                    dh_top[u] += dv * row[u];
                }
            }
        }
        let mut dh_from_above = dh_top;
        for l in (0..n_layers).rev() {
            let dh: Vec<f64> = dh_from_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = step_backward(
                &params.layers[l],
                &cache.steps[t][l],
                &dh,
                &dc_next[l],
                &mut grad.layers[l],
            );
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            dh_from_above = dx;
        }
    }
}

/// Forward intermediates for a whole grid, consumed by [`decoder_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    cells: Vec<CellCache>,
}

fn check_grid(grid: &FeatureGrid, params: &DecoderParams, k: usize) -> Result<()> {
    if grid.feature_dim != params.layers[0].input_dim {
        return Err(Error::shape(format!(
            "feature grid has F = {}, decoder expects {}",
            grid.feature_dim, params.layers[0].input_dim
        )));
    }
    if grid.data.len() != grid.num_cells() * grid.feature_dim {
        return Err(Error::shape("feature grid buffer length"));
    }
    if k == 0 {
        return Err(Error::config("slots per cell must be >= 1"));
    }
    Ok(())
}

fn empty_prediction(grid: &FeatureGrid, params: &DecoderParams, k: usize) -> PredictionTensor {
    let cfg = params.config();
    PredictionTensor::zeros(grid.batch, grid.height, grid.width, k, cfg.num_classes, cfg.coord_arity)
}

/// Run the decoder over every cell of a feature grid. Output order is
/// `(batch, row, col, step)`.
pub fn decoder_forward(grid: &FeatureGrid, params: &DecoderParams, k: usize) -> Result<PredictionTensor> {
    check_grid(grid, params, k)?;
    let mut out = empty_prediction(grid, params, k);
    let cell_len = k * params.config().output_width();
    let f = grid.feature_dim;
    out.data
        .par_chunks_mut(cell_len)
        .zip(grid.data.par_chunks(f))
        .for_each(|(dst, feat)| {
            let (vals, _) = cell_forward(feat, params, k);
            dst.copy_from_slice(&vals);
        });
    Ok(out)
}

/// As [`decoder_forward`], also returning the intermediates needed for backprop.
pub fn decoder_forward_cached(
    grid: &FeatureGrid,
    params: &DecoderParams,
    k: usize,
) -> Result<(PredictionTensor, ForwardCache)> {
    check_grid(grid, params, k)?;
    let mut out = empty_prediction(grid, params, k);
    let cell_len = k * params.config().output_width();
    let f = grid.feature_dim;
    let cells: Vec<CellCache> = out
        .data
        .par_chunks_mut(cell_len)
        .zip(grid.data.par_chunks(f))
        .map(|(dst, feat)| {
            let (vals, cache) = cell_forward(feat, params, k);
            dst.copy_from_slice(&vals);
            cache
        })
        .collect();
    Ok((
        out,
        ForwardCache {
            batch: grid.batch,
            height: grid.height,
            width: grid.width,
            steps: k,
            cells,
        },
    ))
}

/// Backpropagate a gradient over the prediction tensor into the parameters.
///
/// `upstream` has the prediction tensor's layout.
pub fn decoder_backward(params: &DecoderParams, cache: &ForwardCache, upstream: &[f64]) -> Result<DecoderParams> {
    let cfg = params.config();
    let cell_len = cache.steps * cfg.output_width();
    if cache.cells.len() != cache.batch * cache.height * cache.width {
        return Err(Error::MissingCache(
            "cache does not cover every cell of the grid".into(),
        ));
    }
    if let Some(c) = cache.cells.first() {
        let top = c.top_h.first().map_or(0, Vec::len);
        let layers = c.steps.first().map_or(0, Vec::len);
        if top != cfg.hidden_size || layers != cfg.num_layers {
            return Err(Error::MissingCache(
                "cache was produced by a decoder of a different shape".into(),
            ));
        }
    }
    if upstream.len() != cache.cells.len() * cell_len {
        return Err(Error::shape(format!(
            "upstream gradient has {} values, expected {}",
            upstream.len(),
            cache.cells.len() * cell_len
        )));
    }
    let partials: Vec<DecoderParams> = cache
        .cells
        .par_chunks(CELLS_PER_TASK)
        .zip(upstream.par_chunks(CELLS_PER_TASK * cell_len))
        .map(|(cells, up)| {
            let mut g = params.zeros_like();
            for (c, u) in cells.iter().zip(up.chunks_exact(cell_len)) {
                cell_backward(params, c, u, &mut g);
            }
            g
        })
        .collect();
    let mut grad = params.zeros_like();
    for p in &partials {
        grad.accumulate(p);
    }
    Ok(grad)
}

/// Decoder parameters with the cache of their most recent forward pass.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub params: DecoderParams,
    pub steps: usize,
    cache: Option<ForwardCache>,
}

impl Decoder {
    pub fn new(params: DecoderParams, steps: usize) -> Self {
        Self {
            params,
            steps,
            cache: None,
        }
    }

    /// Forward pass that keeps intermediates for [`backward`](Self::backward).
    pub fn forward(&mut self, grid: &FeatureGrid) -> Result<PredictionTensor> {
        let (out, cache) = decoder_forward_cached(grid, &self.params, self.steps)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn predict(&self, grid: &FeatureGrid) -> Result<PredictionTensor> {
        decoder_forward(grid, &self.params, self.steps)
    }

    pub fn backward(&self, upstream: &[f64]) -> Result<DecoderParams> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::MissingCache("backward called before forward".into()))?;
        decoder_backward(&self.params, cache, upstream)
    }
}
