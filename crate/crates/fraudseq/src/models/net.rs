//! Parameter construction and forward/backward passes for the four model
//! kinds (rnn, cnn_mtf, fused, mlp).
//!
//! Parameter naming:
//!   lstm{i}.wx / .wh / .b      stacked LSTM layers (rnn, fused)
//!   conv{i}.k / .b             convolution blocks (cnn_mtf, fused)
//!   cnn_dense{i}.w / .b        CNN feature head, tanh only (fused)
//!   dense{i}.w / .b            dense head hidden layers (rnn, cnn_mtf, mlp)
//!   fuse{i}.w / .b             fusion head hidden layers (fused)
//!   out.w / .b                 final linear layer to the 2 logits

use crate::error::{Error, Result};
use crate::models::config::{ModelConfig, ModelKind};
use crate::nn::conv::{avg_pool2d, avg_pool2d_backward, conv2d_backward, conv2d_forward};
use crate::nn::dense::{dense_backward, dense_forward, tanh_backward, tanh_forward};
use crate::nn::init::Initializer;
use crate::nn::lstm::{
    lstm_stack_backward, lstm_stack_forward, LstmLayerParams, StackCache,
};
use crate::nn::params::{Gradients, ParameterStore};
use crate::tensor::Tensor;

pub const N_CLASSES: usize = 2;

/// Input dimensions a model is built against.
#[derive(Clone, Copy, Debug)]
pub struct ModelDims {
    /// Fixed session length T.
    pub t_len: usize,
    /// Per-event dense feature width D (one-hot width + embedding dim).
    pub feat_dim: usize,
    /// Transition-field side length l.
    pub mtf_side: usize,
}

/// Spatial shape [channels, height, width] after the convolution trunk.
pub fn conv_output_shape(cfg: &ModelConfig, side: usize) -> Result<(usize, usize, usize)> {
    let (mut c, mut h, mut w) = (1usize, side, side);
    for (i, block) in cfg.conv_spec.iter().enumerate() {
        if block.kernel > h || block.kernel > w {
            return Err(Error::ShapeMismatch(format!(
                "conv block {i}: kernel {} exceeds feature map {h}x{w} (field side {side})",
                block.kernel
            )));
        }
        h = (h - block.kernel) / block.stride + 1;
        w = (w - block.kernel) / block.stride + 1;
        c = block.filters;
        if block.pool > 1 {
            if block.pool > h || block.pool > w {
                return Err(Error::ShapeMismatch(format!(
                    "conv block {i}: pool {} exceeds feature map {h}x{w}",
                    block.pool
                )));
            }
            h = (h - block.pool) / block.pool + 1;
            w = (w - block.pool) / block.pool + 1;
        }
    }
    Ok((c, h, w))
}

fn add_dense(params: &mut ParameterStore, init: &mut Initializer, name: &str, a: usize, b: usize) {
    params.insert(format!("{name}.w"), init.xavier(&[a, b], a, b));
    params.insert(format!("{name}.b"), init.zeros(&[b]));
}

fn add_lstm(params: &mut ParameterStore, init: &mut Initializer, i: usize, d: usize, u: usize) {
    params.insert(format!("lstm{i}.wx"), init.xavier(&[d, 4 * u], d, 4 * u));
    params.insert(format!("lstm{i}.wh"), init.xavier(&[u, 4 * u], u, 4 * u));
    let mut b = init.zeros(&[4 * u]);
    // forget-gate bias starts at 1 so early training does not wipe the cell
    for j in u..2 * u {
        b.data_mut()[j] = 1.0;
    }
    params.insert(format!("lstm{i}.b"), b);
}

/// Build an initialized parameter store for `cfg` against `dims`. Creation
/// order is fixed, so a given (config, seed) pair is bit-reproducible.
pub fn build_params(cfg: &ModelConfig, dims: ModelDims) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut params = ParameterStore::new(cfg.seed);
    let mut init = Initializer::new(cfg.seed);
    match cfg.kind {
        ModelKind::Rnn => {
            let mut d = dims.feat_dim;
            for (i, &u) in cfg.lstm_layers.iter().enumerate() {
                add_lstm(&mut params, &mut init, i, d, u);
                d = u;
            }
            for (i, &width) in cfg.dense_spec.iter().enumerate() {
                add_dense(&mut params, &mut init, &format!("dense{i}"), d, width);
                d = width;
            }
            add_dense(&mut params, &mut init, "out", d, N_CLASSES);
        }
        ModelKind::CnnMtf => {
            let mut c_in = 1;
            for (i, block) in cfg.conv_spec.iter().enumerate() {
                let k = block.kernel;
                let fan_in = c_in * k * k;
                let fan_out = block.filters * k * k;
                params.insert(
                    format!("conv{i}.k"),
                    init.xavier(&[block.filters, c_in, k, k], fan_in, fan_out),
                );
                params.insert(format!("conv{i}.b"), init.zeros(&[block.filters]));
                c_in = block.filters;
            }
            let (c, h, w) = conv_output_shape(cfg, dims.mtf_side)?;
            let mut d = c * h * w;
            for (i, &width) in cfg.dense_spec.iter().enumerate() {
                add_dense(&mut params, &mut init, &format!("dense{i}"), d, width);
                d = width;
            }
            add_dense(&mut params, &mut init, "out", d, N_CLASSES);
        }
        ModelKind::Fused => {
            let mut d = dims.feat_dim;
            for (i, &u) in cfg.lstm_layers.iter().enumerate() {
                add_lstm(&mut params, &mut init, i, d, u);
                d = u;
            }
            let rnn_width = d;
            let mut c_in = 1;
            for (i, block) in cfg.conv_spec.iter().enumerate() {
                let k = block.kernel;
                let fan_in = c_in * k * k;
                let fan_out = block.filters * k * k;
                params.insert(
                    format!("conv{i}.k"),
                    init.xavier(&[block.filters, c_in, k, k], fan_in, fan_out),
                );
                params.insert(format!("conv{i}.b"), init.zeros(&[block.filters]));
                c_in = block.filters;
            }
            let (c, h, w) = conv_output_shape(cfg, dims.mtf_side)?;
            let mut cd = c * h * w;
            for (i, &width) in cfg.dense_spec.iter().enumerate() {
                add_dense(&mut params, &mut init, &format!("cnn_dense{i}"), cd, width);
                cd = width;
            }
            let mut fd = rnn_width + cd;
            for (i, &width) in cfg.fuse_spec.iter().enumerate() {
                add_dense(&mut params, &mut init, &format!("fuse{i}"), fd, width);
                fd = width;
            }
            add_dense(&mut params, &mut init, "out", fd, N_CLASSES);
        }
        ModelKind::Mlp => {
            let mut d = dims.feat_dim;
            for (i, &width) in cfg.dense_spec.iter().enumerate() {
                add_dense(&mut params, &mut init, &format!("dense{i}"), d, width);
                d = width;
            }
            add_dense(&mut params, &mut init, "out", d, N_CLASSES);
        }
    }
    Ok(params)
}

/// One model batch: the variants correspond to model kinds.
pub enum BatchInput<'a> {
    /// T slices, each [n, D] (rnn).
    Steps(&'a [Tensor]),
    /// [n, 1, l, l] transition fields (cnn_mtf).
    Fields(&'a Tensor),
    /// Steps and fields from the same sessions in the same order (fused).
    Both(&'a [Tensor], &'a Tensor),
    /// [n, D] aggregated features (mlp).
    Features(&'a Tensor),
}

/// Inputs and tanh outputs of each hidden layer of a dense head, plus the
/// input of the final linear layer when the head owns one.
struct HeadCache {
    inputs: Vec<Tensor>,
    activations: Vec<Tensor>,
}

/// Run hidden layers `{prefix}{i}` (tanh) and, when `with_out`, the shared
/// `out` linear layer.
fn head_forward(
    params: &ParameterStore,
    prefix: &str,
    n_hidden: usize,
    with_out: bool,
    x: &Tensor,
) -> Result<(Tensor, HeadCache)> {
    let mut cache = HeadCache { inputs: Vec::new(), activations: Vec::new() };
    let mut current = x.clone();
    for i in 0..n_hidden {
        let w = params.get(&format!("{prefix}{i}.w"));
        let b = params.get(&format!("{prefix}{i}.b"));
        let y = tanh_forward(&dense_forward(&current, w, b)?);
        cache.inputs.push(current);
        cache.activations.push(y.clone());
        current = y;
    }
    if with_out {
        let y = dense_forward(&current, params.get("out.w"), params.get("out.b"))?;
        cache.inputs.push(current);
        current = y;
    }
    Ok((current, cache))
}

/// Backward through [`head_forward`]; returns the gradient on the head input.
fn head_backward(
    params: &ParameterStore,
    prefix: &str,
    with_out: bool,
    cache: &HeadCache,
    d_out: &Tensor,
    grads: &mut Gradients,
) -> Result<Tensor> {
    let n_hidden = cache.activations.len();
    let mut d = d_out.clone();
    if with_out {
        let x = &cache.inputs[n_hidden];
        let (dx, dw, db) = dense_backward(x, params.get("out.w"), &d)?;
        grads.accumulate("out.w", dw);
        grads.accumulate("out.b", db);
        d = dx;
    }
    for i in (0..n_hidden).rev() {
        let d_pre = tanh_backward(&cache.activations[i], &d);
        let w = params.get(&format!("{prefix}{i}.w"));
        let (dx, dw, db) = dense_backward(&cache.inputs[i], w, &d_pre)?;
        grads.accumulate(format!("{prefix}{i}.w").as_str(), dw);
        grads.accumulate(format!("{prefix}{i}.b").as_str(), db);
        d = dx;
    }
    Ok(d)
}

/// Per-block inputs and tanh outputs of the convolution trunk.
struct ConvCache {
    block_inputs: Vec<Tensor>,
    block_tanh: Vec<Tensor>,
    flat_shape: Vec<usize>,
}

fn conv_trunk_forward(
    params: &ParameterStore,
    cfg: &ModelConfig,
    fields: &Tensor,
) -> Result<(Tensor, ConvCache)> {
    let mut cache = ConvCache {
        block_inputs: Vec::new(),
        block_tanh: Vec::new(),
        flat_shape: Vec::new(),
    };
    let mut current = fields.clone();
    for (i, block) in cfg.conv_spec.iter().enumerate() {
        let k = params.get(&format!("conv{i}.k"));
        let b = params.get(&format!("conv{i}.b"));
        let conv = conv2d_forward(&current, k, b, block.stride)?;
        let act = tanh_forward(&conv);
        cache.block_inputs.push(current);
        cache.block_tanh.push(act.clone());
        current = if block.pool > 1 {
            avg_pool2d(&act, block.pool, block.pool)?
        } else {
            act
        };
    }
    cache.flat_shape = current.shape().to_vec();
    let n = current.shape()[0];
    let volume = current.len() / n;
    let flat = current.reshape(&[n, volume])?;
    Ok((flat, cache))
}

fn conv_trunk_backward(
    params: &ParameterStore,
    cfg: &ModelConfig,
    cache: &ConvCache,
    d_flat: &Tensor,
    grads: &mut Gradients,
) -> Result<()> {
    let mut d = d_flat.reshape(&cache.flat_shape)?;
    for (i, block) in cfg.conv_spec.iter().enumerate().rev() {
        let act = &cache.block_tanh[i];
        let d_act = if block.pool > 1 {
            avg_pool2d_backward(act.shape(), block.pool, block.pool, &d)
        } else {
            d
        };
        let d_conv = tanh_backward(act, &d_act);
        let k = params.get(&format!("conv{i}.k"));
        let (dx, dk, db) = conv2d_backward(&cache.block_inputs[i], k, block.stride, &d_conv)?;
        grads.accumulate(format!("conv{i}.k").as_str(), dk);
        grads.accumulate(format!("conv{i}.b").as_str(), db);
        d = dx;
    }
    Ok(())
}

fn lstm_layers<'a>(params: &'a ParameterStore, cfg: &ModelConfig) -> Vec<LstmLayerParams<'a>> {
    (0..cfg.lstm_layers.len())
        .map(|i| LstmLayerParams {
            wx: params.get(&format!("lstm{i}.wx")),
            wh: params.get(&format!("lstm{i}.wh")),
            b: params.get(&format!("lstm{i}.b")),
        })
        .collect()
}

fn hstack(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let (wa, wb) = (a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[n, wa + wb]);
    for r in 0..n {
        let row = out.row_mut(r);
        row[..wa].copy_from_slice(a.row(r));
        row[wa..].copy_from_slice(b.row(r));
    }
    out
}

fn hsplit(x: &Tensor, wa: usize) -> (Tensor, Tensor) {
    let n = x.shape()[0];
    let wb = x.shape()[1] - wa;
    let mut a = Tensor::zeros(&[n, wa]);
    let mut b = Tensor::zeros(&[n, wb]);
    for r in 0..n {
        let row = x.row(r);
        a.row_mut(r).copy_from_slice(&row[..wa]);
        b.row_mut(r).copy_from_slice(&row[wa..]);
    }
    (a, b)
}

enum Cache {
    Rnn { stack: StackCache, head: HeadCache },
    Cnn { conv: ConvCache, head: HeadCache },
    Fused {
        stack: StackCache,
        conv: ConvCache,
        cnn_head: HeadCache,
        fuse_head: HeadCache,
        rnn_width: usize,
    },
    Mlp { head: HeadCache },
}

/// Logits plus the intermediate activations needed by [`backward`].
pub struct ForwardPass {
    pub logits: Tensor,
    cache: Cache,
}

pub fn forward(
    params: &ParameterStore,
    cfg: &ModelConfig,
    input: &BatchInput,
) -> Result<ForwardPass> {
    match (cfg.kind, input) {
        (ModelKind::Rnn, BatchInput::Steps(steps)) => {
            let layers = lstm_layers(params, cfg);
            let (h_top, stack) = lstm_stack_forward(steps, &layers)?;
            let (logits, head) = head_forward(params, "dense", cfg.dense_spec.len(), true, &h_top)?;
            Ok(ForwardPass { logits, cache: Cache::Rnn { stack, head } })
        }
        (ModelKind::CnnMtf, BatchInput::Fields(fields)) => {
            let (flat, conv) = conv_trunk_forward(params, cfg, fields)?;
            let (logits, head) = head_forward(params, "dense", cfg.dense_spec.len(), true, &flat)?;
            Ok(ForwardPass { logits, cache: Cache::Cnn { conv, head } })
        }
        (ModelKind::Fused, BatchInput::Both(steps, fields)) => {
            if steps[0].shape()[0] != fields.shape()[0] {
                return Err(Error::ShapeMismatch(format!(
                    "fused batch: {} sequence rows vs {} transition fields",
                    steps[0].shape()[0],
                    fields.shape()[0]
                )));
            }
            let layers = lstm_layers(params, cfg);
            let (h_top, stack) = lstm_stack_forward(steps, &layers)?;
            let rnn_width = h_top.shape()[1];
            let (flat, conv) = conv_trunk_forward(params, cfg, fields)?;
            let (feat, cnn_head) =
                head_forward(params, "cnn_dense", cfg.dense_spec.len(), false, &flat)?;
            let joined = hstack(&h_top, &feat);
            let (logits, fuse_head) =
                head_forward(params, "fuse", cfg.fuse_spec.len(), true, &joined)?;
            Ok(ForwardPass {
                logits,
                cache: Cache::Fused { stack, conv, cnn_head, fuse_head, rnn_width },
            })
        }
        (ModelKind::Mlp, BatchInput::Features(features)) => {
            let (logits, head) =
                head_forward(params, "dense", cfg.dense_spec.len(), true, features)?;
            Ok(ForwardPass { logits, cache: Cache::Mlp { head } })
        }
        _ => Err(Error::ShapeMismatch(format!(
            "batch input does not match model kind {}",
            cfg.kind.as_str()
        ))),
    }
}

fn accumulate_lstm(
    cfg: &ModelConfig,
    grads: &mut Gradients,
    per_layer: Vec<crate::nn::lstm::LstmLayerGrads>,
) {
    for (i, g) in per_layer.into_iter().enumerate() {
        debug_assert!(i < cfg.lstm_layers.len());
        grads.accumulate(format!("lstm{i}.wx").as_str(), g.dwx);
        grads.accumulate(format!("lstm{i}.wh").as_str(), g.dwh);
        grads.accumulate(format!("lstm{i}.b").as_str(), g.db);
    }
}

/// Backward from a gradient on the logits; returns gradients for every
/// parameter the forward pass touched.
pub fn backward(
    params: &ParameterStore,
    cfg: &ModelConfig,
    pass: &ForwardPass,
    d_logits: &Tensor,
) -> Result<Gradients> {
    let mut grads = Gradients::new();
    match &pass.cache {
        Cache::Rnn { stack, head } => {
            let d_h = head_backward(params, "dense", true, head, d_logits, &mut grads)?;
            let layers = lstm_layers(params, cfg);
            let (per_layer, _) = lstm_stack_backward(&layers, stack, &d_h)?;
            accumulate_lstm(cfg, &mut grads, per_layer);
        }
        Cache::Cnn { conv, head } => {
            let d_flat = head_backward(params, "dense", true, head, d_logits, &mut grads)?;
            conv_trunk_backward(params, cfg, conv, &d_flat, &mut grads)?;
        }
        Cache::Fused { stack, conv, cnn_head, fuse_head, rnn_width } => {
            let d_joined = head_backward(params, "fuse", true, fuse_head, d_logits, &mut grads)?;
            let (d_h, d_feat) = hsplit(&d_joined, *rnn_width);
            let d_flat = head_backward(params, "cnn_dense", false, cnn_head, &d_feat, &mut grads)?;
            conv_trunk_backward(params, cfg, conv, &d_flat, &mut grads)?;
            let layers = lstm_layers(params, cfg);
            let (per_layer, _) = lstm_stack_backward(&layers, stack, &d_h)?;
            accumulate_lstm(cfg, &mut grads, per_layer);
        }
        Cache::Mlp { head } => {
            head_backward(params, "dense", true, head, d_logits, &mut grads)?;
        }
    }
    // parameters untouched by this kind's graph do not exist in the store,
    // so every store entry must have received a gradient
    for name in params.names() {
        if grads.get(name).is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
    }
    Ok(grads)
}

/// P(fraud) per row from two-class logits, computed with the same
/// stabilization as the training loss.
pub fn fraud_probabilities(logits: &Tensor) -> Vec<f64> {
    (0..logits.shape()[0])
        .map(|r| {
            let row = logits.row(r);
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect()
}
