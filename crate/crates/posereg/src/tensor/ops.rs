//! Differentiable operations. Each op evaluates eagerly and registers a
//! backward rule that accumulates into its parents' grad buffers.

use super::Tensor;
use crate::error::{invalid, Result};

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return invalid(format!("add: shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    let values: Vec<f64> = a.with_values(|av| b.with_values(|bv| {
        av.iter().zip(bv).map(|(x, y)| x + y).collect()
    }));
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape(),
        values,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.add_to_grad(g);
            }
            if pb.requires_grad() {
                pb.add_to_grad(g);
            }
        }),
    ))
}

/// Multiply every element by a constant.
pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let values: Vec<f64> = a.with_values(|av| av.iter().map(|x| x * c).collect());
    let pa = a.clone();
    Tensor::from_op(
        a.shape(),
        values,
        vec![a.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                pa.add_to_grad(&d);
            }
        }),
    )
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.with_values(|av| av.iter().sum());
    let pa = a.clone();
    let n = a.len();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.add_to_grad(&vec![g[0]; n]);
            }
        }),
    )
}

/// Weighted sum of scalar tensors: sum_i w_i * t_i.
pub fn weighted_sum(terms: &[(f64, Tensor)]) -> Result<Tensor> {
    if terms.is_empty() {
        return invalid("weighted_sum: empty term list");
    }
    for (_, t) in terms {
        if t.len() != 1 {
            return invalid("weighted_sum: all terms must be scalars");
        }
    }
    let value: f64 = terms.iter().map(|(w, t)| w * t.item()).sum();
    let saved: Vec<(f64, Tensor)> = terms.to_vec();
    let parents: Vec<Tensor> = terms.iter().map(|(_, t)| t.clone()).collect();
    Ok(Tensor::from_op(
        vec![1],
        vec![value],
        parents,
        Box::new(move |g| {
            for (w, t) in &saved {
                if t.requires_grad() {
                    t.add_to_grad(&[g[0] * w]);
                }
            }
        }),
    ))
}

/// Contiguous 1-D slice `[start, start+len)` of a flat tensor.
pub fn slice(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let n = a.len();
    if start + len > n {
        return invalid(format!("slice: [{start}, {}) out of range for length {n}", start + len));
    }
    let values: Vec<f64> = a.with_values(|av| av[start..start + len].to_vec());
    let pa = a.clone();
    Ok(Tensor::from_op(
        vec![len],
        values,
        vec![a.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let mut d = vec![0.0; n];
                d[start..start + len].copy_from_slice(g);
                pa.add_to_grad(&d);
            }
        }),
    ))
}

/// Elementwise max(0, x). The subgradient at exactly 0 is 0.
pub fn relu(a: &Tensor) -> Tensor {
    let values: Vec<f64> = a.with_values(|av| av.iter().map(|&x| x.max(0.0)).collect());
    let pa = a.clone();
    Tensor::from_op(
        a.shape(),
        values,
        vec![a.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let d: Vec<f64> = pa.with_values(|av| {
                    av.iter().zip(g).map(|(&x, &gy)| if x > 0.0 { gy } else { 0.0 }).collect()
                });
                pa.add_to_grad(&d);
            }
        }),
    )
}

/// W·x + b for a flat input of length N, weights [M,N], bias [M].
pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    let wshape = weights.shape();
    if wshape.len() != 2 || wshape[1] != n {
        return invalid(format!(
            "linear: weights shape {:?} incompatible with input length {n}",
            wshape
        ));
    }
    let m = wshape[0];
    if bias.len() != m {
        return invalid(format!("linear: bias length {} != output dim {m}", bias.len()));
    }
    let values: Vec<f64> = input.with_values(|x| {
        weights.with_values(|w| {
            bias.with_values(|b| {
                (0..m)
                    .map(|i| {
                        let row = &w[i * n..(i + 1) * n];
                        b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                    })
                    .collect()
            })
        })
    });
    let (pi, pw, pb) = (input.clone(), weights.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![m],
        values,
        vec![input.clone(), weights.clone(), bias.clone()],
        Box::new(move |g| {
            if pi.requires_grad() {
                let d: Vec<f64> = pw.with_values(|w| {
                    (0..n)
                        .map(|j| (0..m).map(|i| g[i] * w[i * n + j]).sum())
                        .collect()
                });
                pi.add_to_grad(&d);
            }
            if pw.requires_grad() {
                let d: Vec<f64> = pi.with_values(|x| {
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] = g[i] * x[j];
                        }
                    }
                    d
                });
                pw.add_to_grad(&d);
            }
            if pb.requires_grad() {
                pb.add_to_grad(g);
            }
        }),
    ))
}

fn conv_out_dim(size: usize, k: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - k) / stride + 1
}

/// Build the im2col matrix: rows are kernel positions (ci, ky, kx), columns
/// are output positions (y, x). Padding reads as zero.
fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let rows = c_in * kh * kw;
    let cols = oh * ow;
    let mut out = vec![0.0; rows * cols];
    for ci in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let row = &mut out[r * cols..(r + 1) * cols];
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < padding || iy >= h + padding {
                        continue;
                    }
                    let iy = iy - padding;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < padding || ix >= w + padding {
                            continue;
                        }
                        row[oy * ow + ox] = x[(ci * h + iy) * w + ix - padding];
                    }
                }
            }
        }
    }
    out
}

/// Scatter a [rows x cols] im2col gradient back onto the input layout.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let cols = oh * ow;
    let mut dx = vec![0.0; c_in * h * w];
    for ci in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let row = &dcols[r * cols..(r + 1) * cols];
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < padding || iy >= h + padding {
                        continue;
                    }
                    let iy = iy - padding;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < padding || ix >= w + padding {
                            continue;
                        }
                        dx[(ci * h + iy) * w + ix - padding] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
    dx
}

/// out[m,n] (+)= a[m,k] * b[k,n]
fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// 2-D cross-correlation over a [C_in,H,W] input with [C_out,C_in,kH,kW]
/// kernels, zero padding.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ishape = input.shape();
    let kshape = kernels.shape();
    if ishape.len() != 3 {
        return invalid(format!("conv2d: input must be [C,H,W], got {:?}", ishape));
    }
    if kshape.len() != 4 {
        return invalid(format!("conv2d: kernels must be [Co,Ci,kH,kW], got {:?}", kshape));
    }
    if stride == 0 {
        return invalid("conv2d: stride must be positive");
    }
    let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (c_out, kc, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kc != c_in {
        return invalid(format!("conv2d: kernel channel dim {kc} != input channels {c_in}"));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return invalid(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        ));
    }
    if bias.len() != c_out {
        return invalid(format!("conv2d: bias length {} != output channels {c_out}", bias.len()));
    }
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let krows = c_in * kh * kw;
    let ocols = oh * ow;

    let cols = input.with_values(|x| im2col(x, c_in, h, w, kh, kw, stride, padding, oh, ow));
    let mut values = vec![0.0; c_out * ocols];
    kernels.with_values(|kv| matmul_acc(kv, &cols, c_out, krows, ocols, &mut values));
    bias.with_values(|b| {
        for o in 0..c_out {
            let row = &mut values[o * ocols..(o + 1) * ocols];
            row.iter_mut().for_each(|v| *v += b[o]);
        }
    });

    let (pi, pk, pb) = (input.clone(), kernels.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![c_out, oh, ow],
        values,
        vec![input.clone(), kernels.clone(), bias.clone()],
        Box::new(move |g| {
            // g has layout [C_out, oh*ow]; cols are recomputed from the input
            // rather than cached across the forward pass.
            if pk.requires_grad() || pi.requires_grad() {
                let cols =
                    pi.with_values(|x| im2col(x, c_in, h, w, kh, kw, stride, padding, oh, ow));
                if pk.requires_grad() {
                    // dW[o,r] = sum_c g[o,c] * cols[r,c]
                    let mut dk = vec![0.0; c_out * krows];
                    for o in 0..c_out {
                        for r in 0..krows {
                            let grow = &g[o * ocols..(o + 1) * ocols];
                            let crow = &cols[r * ocols..(r + 1) * ocols];
                            dk[o * krows + r] =
                                grow.iter().zip(crow).map(|(a, b)| a * b).sum();
                        }
                    }
                    pk.add_to_grad(&dk);
                }
                if pi.requires_grad() {
                    // dcols = W^T · g
                    let mut dcols = vec![0.0; krows * ocols];
                    pk.with_values(|kv| {
                        for o in 0..c_out {
                            let grow = &g[o * ocols..(o + 1) * ocols];
                            for r in 0..krows {
                                let kvv = kv[o * krows + r];
                                if kvv == 0.0 {
                                    continue;
                                }
                                let drow = &mut dcols[r * ocols..(r + 1) * ocols];
                                for c in 0..ocols {
                                    drow[c] += kvv * grow[c];
                                }
                            }
                        }
                    });
                    let dx = col2im(&dcols, c_in, h, w, kh, kw, stride, padding, oh, ow);
                    pi.add_to_grad(&dx);
                }
            }
            if pb.requires_grad() {
                let db: Vec<f64> = (0..c_out)
                    .map(|o| g[o * ocols..(o + 1) * ocols].iter().sum())
                    .collect();
                pb.add_to_grad(&db);
            }
        }),
    ))
}

/// Per-window max over a [C,H,W] input. Gradient flows to the first
/// (row-major) maximal element of each window.
pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let ishape = input.shape();
    if ishape.len() != 3 {
        return invalid(format!("max_pool2d: input must be [C,H,W], got {:?}", ishape));
    }
    if window == 0 || stride == 0 {
        return invalid("max_pool2d: window and stride must be positive");
    }
    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
    if window > h || window > w {
        return invalid(format!("max_pool2d: window {window} exceeds input {h}x{w}"));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut values = vec![0.0; c * oh * ow];
    let mut argmax = vec![0usize; c * oh * ow];
    input.with_values(|x| {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (ci * h + oy * stride + ky) * w + ox * stride + kx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (ci * oh + oy) * ow + ox;
                    values[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    });
    let pi = input.clone();
    let in_len = input.len();
    Ok(Tensor::from_op(
        vec![c, oh, ow],
        values,
        vec![input.clone()],
        Box::new(move |g| {
            if pi.requires_grad() {
                let mut d = vec![0.0; in_len];
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g[o];
                }
                pi.add_to_grad(&d);
            }
        }),
    ))
}

/// Per-channel mean over the spatial dimensions of a [C,H,W] input.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let ishape = input.shape();
    if ishape.len() != 3 {
        return invalid(format!("global_avg_pool: input must be [C,H,W], got {:?}", ishape));
    }
    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
    if h == 0 || w == 0 {
        return invalid("global_avg_pool: empty spatial dimensions");
    }
    let area = (h * w) as f64;
    let values: Vec<f64> = input.with_values(|x| {
        (0..c)
            .map(|ci| x[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / area)
            .collect()
    });
    let pi = input.clone();
    Ok(Tensor::from_op(
        vec![c],
        values,
        vec![input.clone()],
        Box::new(move |g| {
            if pi.requires_grad() {
                let mut d = vec![0.0; c * h * w];
                for ci in 0..c {
                    let gv = g[ci] / area;
                    d[ci * h * w..(ci + 1) * h * w].iter_mut().for_each(|v| *v = gv);
                }
                pi.add_to_grad(&d);
            }
        }),
    ))
}

/// Euclidean norm of a - b, as a scalar. At a == b the gradient is zero.
pub fn l2_norm_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.len() != b.len() {
        return invalid(format!("l2_norm_diff: lengths {} vs {}", a.len(), b.len()));
    }
    let diff: Vec<f64> =
        a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x - y).collect()));
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![1],
        vec![norm],
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if norm == 0.0 {
                return;
            }
            let d: Vec<f64> = diff.iter().map(|dv| g[0] * dv / norm).collect();
            if pa.requires_grad() {
                pa.add_to_grad(&d);
            }
            if pb.requires_grad() {
                let neg: Vec<f64> = d.iter().map(|x| -x).collect();
                pb.add_to_grad(&neg);
            }
        }),
    ))
}

/// Softmax cross-entropy of a logit vector against a class index.
pub fn softmax_cross_entropy(logits: &Tensor, class: usize) -> Result<Tensor> {
    let n = logits.len();
    if class >= n {
        return invalid(format!("softmax_cross_entropy: class {class} out of range {n}"));
    }
    let (loss, softmax) = logits.with_values(|z| {
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        (-(p[class].max(1e-300)).ln(), p)
    });
    let pl = logits.clone();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |g| {
            if pl.requires_grad() {
                let d: Vec<f64> = softmax
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| g[0] * (p - if i == class { 1.0 } else { 0.0 }))
                    .collect();
                pl.add_to_grad(&d);
            }
        }),
    ))
}
