//! Independent reference implementations used by the test suites: naive
//! loop-nest versions of the layer ops and a central finite-difference
//! gradient checker. Nothing here shares code with the graph ops.

#![doc(hidden)]

use crate::geometry::Quaternion;
use crate::tensor::{backward, Tensor};

/// Row-major 3x3 rotation matrix of a unit quaternion (scalar-first).
pub fn quat_to_rotation_matrix(q: &Quaternion) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Relative rotation angle in degrees via arccos((tr(R1ᵀR2) − 1) / 2).
pub fn rotation_angle_deg_via_trace(q1: &Quaternion, q2: &Quaternion) -> f64 {
    let r1 = quat_to_rotation_matrix(q1);
    let r2 = quat_to_rotation_matrix(q2);
    let mut trace = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            // (R1ᵀ R2)[i][i] summed over i.
            trace += r1[k][i] * r2[k][i];
        }
    }
    (((trace - 1.0) / 2.0).clamp(-1.0, 1.0)).acos().to_degrees()
}

/// Direct 6-loop cross-correlation, no im2col.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: &[f64],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            let ki = ((o * c_in + ci) * kh + ky) * kw + kx;
                            acc += x[xi] * k[ki];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Direct per-window maximum.
pub fn naive_max_pool2d(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (ci * oh + oy) * ow + ox;
                for ky in 0..window {
                    for kx in 0..window {
                        let v = x[(ci * h + oy * stride + ky) * w + ox * stride + kx];
                        if v > out[o] {
                            out[o] = v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Double-loop matrix-vector product W·x + b.
pub fn naive_linear(x: &[f64], w: &[f64], b: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = b.to_vec();
    for i in 0..m {
        for j in 0..n {
            out[i] += w[i * n + j] * x[j];
        }
    }
    out
}

/// Result of one finite-difference comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Check reverse-mode gradients of `f` against central finite differences
/// at every element of every leaf. `f` must rebuild the graph from the
/// leaves' current values on each call.
pub fn finite_diff_check(
    f: &dyn Fn(&[Tensor]) -> Tensor,
    leaves: &[Tensor],
    eps: f64,
) -> GradCheck {
    for leaf in leaves {
        leaf.zero_grad();
    }
    let objective = f(leaves);
    backward(&objective).expect("backward failed in gradient check");
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad()).collect();

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let base = leaf.values();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            leaf.set_values(&plus);
            let fp = f(leaves).item();
            let mut minus = base.clone();
            minus[i] -= eps;
            leaf.set_values(&minus);
            let fm = f(leaves).item();
            leaf.set_values(&base);

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[li][i];
            let abs = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / denom);
        }
    }
    GradCheck { max_rel_err: max_rel, max_abs_err: max_abs }
}
