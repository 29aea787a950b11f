//! Fully connected layer and tanh activation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// y = x W + bias, bias broadcast over rows. x is [n,a], W [a,b], bias [b].
pub fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2
        || w.shape().len() != 2
        || x.shape()[1] != w.shape()[0]
        || bias.shape() != [w.shape()[1]]
    {
        return Err(Error::ShapeMismatch(format!(
            "dense: x {:?} vs W {:?} / bias {:?}",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let mut y = x.matmul(w)?;
    let b = bias.data();
    let cols = w.shape()[1];
    for i in 0..y.shape()[0] {
        let row = y.row_mut(i);
        for j in 0..cols {
            row[j] += b[j];
        }
    }
    Ok(y)
}

/// Gradients of a dense layer: returns (dx, dW, dbias) given the upstream
/// gradient dy.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dx = dy.matmul_nt(w)?;
    let dw = x.matmul_tn(dy)?;
    let cols = dy.shape()[1];
    let mut db = Tensor::zeros(&[cols]);
    for i in 0..dy.shape()[0] {
        let row = dy.row(i);
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((dx, dw, db))
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_vec(x.shape(), data).expect("same volume")
}

/// Backward through tanh given the forward *output* y = tanh(x).
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(y, g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same volume")
}
