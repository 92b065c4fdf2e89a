use super::params::{dot, LstmLayer};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recurrent state `(h, c)` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM step:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
/// g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
pub fn lstm_cell_forward(layer: &LstmLayer, x: &[f64], state: &LstmState) -> Result<LstmState> {
    check_shapes(layer, x, state)?;
    Ok(step_forward(layer, x, state).0)
}

fn check_shapes(layer: &LstmLayer, x: &[f64], state: &LstmState) -> Result<()> {
    if x.len() != layer.input_dim || state.h.len() != layer.hidden || state.c.len() != layer.hidden {
        return Err(Error::shape(format!(
            "LSTM layer expects input {} and state {}, got input {} and state ({}, {})",
            layer.input_dim,
            layer.hidden,
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    Ok(())
}

pub(crate) fn step_forward(layer: &LstmLayer, x: &[f64], state: &LstmState) -> (LstmState, StepCache) {
    let hd = layer.hidden;
    let (n_in, w_ih, w_hh) = (layer.input_dim, &layer.w_ih, &layer.w_hh);
    let pre = |gate: usize, u: usize| {
        let row = gate * hd + u;
        layer.bias[row] + dot(&w_ih[row * n_in..(row + 1) * n_in], x) + dot(&w_hh[row * hd..(row + 1) * hd], &state.h)
    };
    let mut cache = StepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i: vec![0.0; hd],
        f: vec![0.0; hd],
        g: vec![0.0; hd],
        o: vec![0.0; hd],
        tanh_c: vec![0.0; hd],
    };
    let mut next = LstmState::zeros(hd);
    for u in 0..hd {
        let i = sigmoid(pre(0, u));
        let f = sigmoid(pre(1, u));
        let g = pre(2, u).tanh();
        let o = sigmoid(pre(3, u));
        let c = f * state.c[u] + i * g;
        let tc = c.tanh();
        next.c[u] = c;
        next.h[u] = o * tc;
        cache.i[u] = i;
        cache.f[u] = f;
        cache.g[u] = g;
        cache.o[u] = o;
        cache.tanh_c[u] = tc;
    }
    (next, cache)
}

/// Backward through one step. Accumulates into `grad` and returns
/// `(dx, dh_prev, dc_prev)`.
pub(crate) fn step_backward(
    layer: &LstmLayer,
    cache: &StepCache,
    dh: &[f64],
    dc_next: &[f64],
    grad: &mut LstmLayer,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = layer.hidden;
    let n_in = layer.input_dim;
    let mut da = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for u in 0..hd {
        let (i, f, g, o, tc) = (cache.i[u], cache.f[u], cache.g[u], cache.o[u], cache.tanh_c[u]);
        let dc = dc_next[u] + dh[u] * o * (1.0 - tc * tc);
        let d_o = dh[u] * tc;
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * cache.c_prev[u];
        dc_prev[u] = dc * f;
        da[u] = d_i * i * (1.0 - i);
        da[hd + u] = d_f * f * (1.0 - f);
        da[2 * hd + u] = d_g * (1.0 - g * g);
        da[3 * hd + u] = d_o * o * (1.0 - o);
    }
    let mut dx = vec![0.0; n_in];
    let mut dh_prev = vec![0.0; hd];
    for (row, &d) in da.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[row] += d;
        let wi = &layer.w_ih[row * n_in..(row + 1) * n_in];
        let gwi = &mut grad.w_ih[row * n_in..(row + 1) * n_in];
        for k in 0..n_in {
            gwi[k] += d * cache.x[k];
            dx[k] += d * wi[k];
        }
        let wh = &layer.w_hh[row * hd..(row + 1) * hd];
        let gwh = &mut grad.w_hh[row * hd..(row + 1) * hd];
        for k in 0..hd {
            gwh[k] += d * cache.h_prev[k];
            dh_prev[k] += d * wh[k];
        }
    }
    (dx, dh_prev, dc_prev)
}
