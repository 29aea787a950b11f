//! Valid (no-padding) 2-D convolution and average pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn out_extent(input: usize, window: usize, stride: usize) -> usize {
    (input - window) / stride + 1
}

/// Cross-correlation with bias. x is [n,c,h,w], kernel [f,c,kh,kw],
/// bias [f]; output is [n,f,oh,ow] with oh = floor((h-kh)/stride)+1.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    assert!(stride >= 1);
    let [n, c, h, w] = x.shape() else {
        return Err(Error::ShapeMismatch(format!("conv input {:?}", x.shape())));
    };
    let [f, kc, kh, kw] = kernel.shape() else {
        return Err(Error::ShapeMismatch(format!("conv kernel {:?}", kernel.shape())));
    };
    let (n, c, h, w) = (*n, *c, *h, *w);
    let (f, kc, kh, kw) = (*f, *kc, *kh, *kw);
    if kc != c || bias.shape() != [f] {
        return Err(Error::ShapeMismatch(format!(
            "conv: input {:?} vs kernel {:?} / bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    if kh > h || kw > w {
        return Err(Error::ShapeMismatch(format!(
            "conv kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let (oh, ow) = (out_extent(h, kh, stride), out_extent(w, kw, stride));
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    let xd = x.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for b in 0..n {
        for fi in 0..f {
            let bias_v = bias.data()[fi];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias_v;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            let xrow = ((b * c + ci) * h + iy) * w + ox * stride;
                            let krow = ((fi * c + ci) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc += xd[xrow + kx] * kd[krow + kx];
                            }
                        }
                    }
                    od[((b * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of conv2d: (dx, dkernel, dbias) given upstream dy.
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    stride: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[f]);
    let xd = x.data();
    let kd = kernel.data();
    let gyd = dy.data();
    let dxd = dx.data_mut();
    for b in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gyd[((b * f + fi) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    db.data_mut()[fi] += g;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            let xrow = ((b * c + ci) * h + iy) * w + ox * stride;
                            let krow = ((fi * c + ci) * kh + ky) * kw;
                            for kx in 0..kw {
                                dk.data_mut()[krow + kx] += g * xd[xrow + kx];
                                dxd[xrow + kx] += g * kd[krow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dk, db))
}

/// Mean over each p x p window. x is [n,c,h,w].
pub fn avg_pool2d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    assert!(stride >= 1 && window >= 1);
    let [n, c, h, w] = x.shape() else {
        return Err(Error::ShapeMismatch(format!("pool input {:?}", x.shape())));
    };
    let (n, c, h, w) = (*n, *c, *h, *w);
    if window > h || window > w {
        return Err(Error::ShapeMismatch(format!(
            "pool window {window} larger than input {h}x{w}"
        )));
    }
    let (oh, ow) = (out_extent(h, window, stride), out_extent(w, window, stride));
    let inv = 1.0 / (window * window) as f64;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..window {
                        let iy = oy * stride + ky;
                        let row = ((b * c + ci) * h + iy) * w + ox * stride;
                        for kx in 0..window {
                            acc += xd[row + kx];
                        }
                    }
                    od[((b * c + ci) * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Backward through average pooling: each window cell receives
/// 1/(window^2) of the window's upstream gradient.
pub fn avg_pool2d_backward(
    x_shape: &[usize],
    window: usize,
    stride: usize,
    dy: &Tensor,
) -> Tensor {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let inv = 1.0 / (window * window) as f64;
    let mut dx = Tensor::zeros(x_shape);
    let gyd = dy.data();
    let dxd = dx.data_mut();
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gyd[((b * c + ci) * oh + oy) * ow + ox] * inv;
                    for ky in 0..window {
                        let iy = oy * stride + ky;
                        let row = ((b * c + ci) * h + iy) * w + ox * stride;
                        for kx in 0..window {
                            dxd[row + kx] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &k, &b, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn sum_kernel_on_2x2() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &k, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &k, &b, 1).is_err());
    }

    /// Six-loop reference convolution, written independently of the
    /// flattened-index implementation above.
    fn naive_conv(x: &Tensor, k: &Tensor, bias: &Tensor, stride: usize) -> Vec<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let get_x = |b: usize, ci: usize, y: usize, xx: usize| {
            x.data()[((b * c + ci) * h + y) * w + xx]
        };
        let get_k = |fi: usize, ci: usize, y: usize, xx: usize| {
            k.data()[((fi * c + ci) * kh + y) * kw + xx]
        };
        let mut out = Vec::new();
        for b in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.data()[fi];
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    acc += get_x(b, ci, oy * stride + ky, ox * stride + kx)
                                        * get_k(fi, ci, ky, kx);
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn random_conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let (n, c, h, w, f, kh, kw) = (2, 2, 5, 6, 3, 2, 3);
            let stride = rng.random_range(1..3);
            let x = Tensor::from_vec(
                &[n, c, h, w],
                (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let k = Tensor::from_vec(
                &[f, c, kh, kw],
                (0..f * c * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let b = Tensor::from_vec(&[f], (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = conv2d_forward(&x, &k, &b, stride).unwrap();
            let expect = naive_conv(&x, &k, &b, stride);
            assert_eq!(y.len(), expect.len());
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_pool_is_channel_mean() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
        let y = avg_pool2d(&x, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[2.5, 25.0]);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::scalar_fill(&[1, 1, 4, 4], 3.25);
        let y = avg_pool2d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| (v - 3.25).abs() < 1e-15));
    }

    #[test]
    fn random_pool_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, c, h, w) = (2, 3, 5, 5);
        let x = Tensor::from_vec(
            &[n, c, h, w],
            (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let y = avg_pool2d(&x, 2, 2).unwrap();
        // naive recompute
        for b in 0..n {
            for ci in 0..c {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut acc = 0.0;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                acc += x.data()
                                    [((b * c + ci) * h + oy * 2 + ky) * w + ox * 2 + kx];
                            }
                        }
                        let got = y.data()[((b * c + ci) * 2 + oy) * 2 + ox];
                        assert!((got - acc / 4.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_backward_distributes_evenly() {
        let dy = Tensor::from_vec(&[1, 1, 1, 1], vec![4.0]).unwrap();
        let dx = avg_pool2d_backward(&[1, 1, 2, 2], 2, 1, &dy);
        assert_eq!(dx.data(), &[1.0; 4]);
    }
}
