//! LSTM cell and stacked-LSTM forward/backward (full backpropagation
//! through time).
//!
//! Gate weights are packed column-wise in the order [input | forget |
//! output | candidate], each block `u` columns wide:
//!
//! ```text
//! z   = x Wx + h_prev Wh + b            (z is [n, 4u])
//! i,f,o = sigmoid(z blocks), g = tanh(z block)
//! c_t = f * c_prev + i * g
//! h_t = o * tanh(c_t)
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// References to one layer's packed gate parameters:
/// `wx` is [d, 4u], `wh` is [u, 4u], `b` is [4u].
#[derive(Clone, Copy)]
pub struct LstmLayerParams<'a> {
    pub wx: &'a Tensor,
    pub wh: &'a Tensor,
    pub b: &'a Tensor,
}

impl LstmLayerParams<'_> {
    pub fn hidden_size(&self) -> usize {
        self.wh.shape()[0]
    }

    fn check(&self, input_dim: usize) -> Result<()> {
        let u = self.hidden_size();
        if self.wx.shape() != [input_dim, 4 * u]
            || self.wh.shape() != [u, 4 * u]
            || self.b.shape() != [4 * u]
        {
            return Err(Error::ShapeMismatch(format!(
                "lstm layer: input {input_dim}, Wx {:?}, Wh {:?}, b {:?}",
                self.wx.shape(),
                self.wh.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// Per-step activations retained for backward.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    gate_i: Tensor,
    gate_f: Tensor,
    gate_o: Tensor,
    gate_g: Tensor,
    tanh_c: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn step_forward(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    layer: LstmLayerParams,
) -> Result<(Tensor, Tensor, StepCache)> {
    layer.check(x.shape()[1])?;
    let n = x.shape()[0];
    let u = layer.hidden_size();
    if h_prev.shape() != [n, u] || c_prev.shape() != [n, u] {
        return Err(Error::ShapeMismatch(format!(
            "lstm state: h {:?}, c {:?}, expected [{n}, {u}]",
            h_prev.shape(),
            c_prev.shape()
        )));
    }

    let mut z = x.matmul(layer.wx)?;
    z.add_assign(&h_prev.matmul(layer.wh)?);
    let b = layer.b.data();
    for r in 0..n {
        let row = z.row_mut(r);
        for j in 0..4 * u {
            row[j] += b[j];
        }
    }

    let mut gate_i = Tensor::zeros(&[n, u]);
    let mut gate_f = Tensor::zeros(&[n, u]);
    let mut gate_o = Tensor::zeros(&[n, u]);
    let mut gate_g = Tensor::zeros(&[n, u]);
    let mut c = Tensor::zeros(&[n, u]);
    let mut tanh_c = Tensor::zeros(&[n, u]);
    let mut h = Tensor::zeros(&[n, u]);
    for r in 0..n {
        let zrow = z.row(r);
        for j in 0..u {
            let i_v = sigmoid(zrow[j]);
            let f_v = sigmoid(zrow[u + j]);
            let o_v = sigmoid(zrow[2 * u + j]);
            let g_v = zrow[3 * u + j].tanh();
            let c_v = f_v * c_prev.at2(r, j) + i_v * g_v;
            let tc = c_v.tanh();
            gate_i.set2(r, j, i_v);
            gate_f.set2(r, j, f_v);
            gate_o.set2(r, j, o_v);
            gate_g.set2(r, j, g_v);
            c.set2(r, j, c_v);
            tanh_c.set2(r, j, tc);
            h.set2(r, j, o_v * tc);
        }
    }
    let cache = StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gate_i,
        gate_f,
        gate_o,
        gate_g,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// One LSTM step: returns (h_t, c_t).
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    layer: LstmLayerParams,
) -> Result<(Tensor, Tensor)> {
    let (h, c, _) = step_forward(x, h_prev, c_prev, layer)?;
    Ok((h, c))
}

/// Accumulated parameter gradients for one layer.
#[derive(Clone, Debug)]
pub struct LstmLayerGrads {
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub db: Tensor,
}

pub struct StackCache {
    /// [layer][step]
    steps: Vec<Vec<StepCache>>,
}

/// Run a stack of LSTM layers over a sequence of input slices (each
/// [n, d]), starting from zero states. Layer j consumes the full hidden
/// sequence of layer j-1. Returns the top layer's final hidden state.
pub fn lstm_stack_forward(
    inputs: &[Tensor],
    layers: &[LstmLayerParams],
) -> Result<(Tensor, StackCache)> {
    assert!(!layers.is_empty(), "lstm stack needs at least one layer");
    assert!(!inputs.is_empty(), "lstm stack needs at least one step");
    let n = inputs[0].shape()[0];
    let mut sequence: Vec<Tensor> = inputs.to_vec();
    let mut steps = Vec::with_capacity(layers.len());
    let mut top_h = Tensor::zeros(&[0, 0]);
    for layer in layers {
        let u = layer.hidden_size();
        let mut h = Tensor::zeros(&[n, u]);
        let mut c = Tensor::zeros(&[n, u]);
        let mut layer_steps = Vec::with_capacity(sequence.len());
        let mut out_seq = Vec::with_capacity(sequence.len());
        for x in &sequence {
            let (h_t, c_t, cache) = step_forward(x, &h, &c, *layer)?;
            layer_steps.push(cache);
            out_seq.push(h_t.clone());
            h = h_t;
            c = c_t;
        }
        top_h = h;
        sequence = out_seq;
        steps.push(layer_steps);
    }
    Ok((top_h, StackCache { steps }))
}

fn step_backward(
    cache: &StepCache,
    layer: LstmLayerParams,
    dh: &Tensor,
    dc_in: &Tensor,
    grads: &mut LstmLayerGrads,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = dh.shape()[0];
    let u = layer.hidden_size();
    let mut dz = Tensor::zeros(&[n, 4 * u]);
    let mut dc_prev = Tensor::zeros(&[n, u]);
    for r in 0..n {
        for j in 0..u {
            let o = cache.gate_o.at2(r, j);
            let tc = cache.tanh_c.at2(r, j);
            let dh_v = dh.at2(r, j);
            // h = o * tanh(c)
            let d_o = dh_v * tc;
            let mut d_c = dc_in.at2(r, j) + dh_v * o * (1.0 - tc * tc);
            let i_v = cache.gate_i.at2(r, j);
            let f_v = cache.gate_f.at2(r, j);
            let g_v = cache.gate_g.at2(r, j);
            let d_i = d_c * g_v;
            let d_f = d_c * cache.c_prev.at2(r, j);
            let d_g = d_c * i_v;
            d_c *= f_v;
            dc_prev.set2(r, j, d_c);
            let zrow = dz.row_mut(r);
            zrow[j] = d_i * i_v * (1.0 - i_v);
            zrow[u + j] = d_f * f_v * (1.0 - f_v);
            zrow[2 * u + j] = d_o * o * (1.0 - o);
            zrow[3 * u + j] = d_g * (1.0 - g_v * g_v);
        }
    }
    let dx = dz.matmul_nt(layer.wx)?;
    let dh_prev = dz.matmul_nt(layer.wh)?;
    grads.dwx.add_assign(&cache.x.matmul_tn(&dz)?);
    grads.dwh.add_assign(&cache.h_prev.matmul_tn(&dz)?);
    for r in 0..n {
        let zrow = dz.row(r);
        for (acc, &g) in grads.db.data_mut().iter_mut().zip(zrow) {
            *acc += g;
        }
    }
    Ok((dx, dh_prev, dc_prev))
}

/// Backpropagate a gradient on the top layer's final hidden state through
/// the whole stack. Returns per-layer parameter gradients (top of the
/// returned vec = top layer... index-aligned with `layers`) and the
/// gradient with respect to each input slice.
pub fn lstm_stack_backward(
    layers: &[LstmLayerParams],
    cache: &StackCache,
    d_top_h: &Tensor,
) -> Result<(Vec<LstmLayerGrads>, Vec<Tensor>)> {
    let t_len = cache.steps[0].len();
    let n = d_top_h.shape()[0];
    let mut grads: Vec<LstmLayerGrads> = layers
        .iter()
        .map(|l| LstmLayerGrads {
            dwx: Tensor::zeros(l.wx.shape()),
            dwh: Tensor::zeros(l.wh.shape()),
            db: Tensor::zeros(l.b.shape()),
        })
        .collect();

    // gradient flowing into each step's hidden output of the current layer
    let mut dh_seq: Vec<Tensor> = (0..t_len)
        .map(|t| {
            if t == t_len - 1 {
                d_top_h.clone()
            } else {
                Tensor::zeros(d_top_h.shape())
            }
        })
        .collect();

    for (layer_idx, layer) in layers.iter().enumerate().rev() {
        let u = layer.hidden_size();
        let mut dh_carry = Tensor::zeros(&[n, u]);
        let mut dc_carry = Tensor::zeros(&[n, u]);
        let mut dx_seq: Vec<Tensor> = Vec::with_capacity(t_len);
        for t in (0..t_len).rev() {
            let mut dh = dh_seq[t].clone();
            dh.add_assign(&dh_carry);
            let (dx, dh_prev, dc_prev) = step_backward(
                &cache.steps[layer_idx][t],
                *layer,
                &dh,
                &dc_carry,
                &mut grads[layer_idx],
            )?;
            dh_carry = dh_prev;
            dc_carry = dc_prev;
            dx_seq.push(dx);
        }
        dx_seq.reverse();
        dh_seq = dx_seq;
    }
    Ok((grads, dh_seq))
}
