//! Layer kernels: forward evaluation and the matching backward rules.
//!
//! Each function is a pure tensor-in/tensor-out computation; the graph
//! module wires them into a DAG and drives reverse-mode differentiation.
//! Gradients here are exact (up to float rounding) and are checked
//! against central finite differences in the test suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp floor for `log` inside the cross-entropy loss.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;
/// Tolerance for the "rows are probabilities" precondition of cross-entropy.
pub const ROW_SUM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor) -> Tensor {
    let values = x.values().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), values).expect("shape preserved")
}

/// Subgradient at exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let values = x
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), values).expect("shape preserved")
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (outer, axis_len, inner)
}

/// Max-subtracted softmax along `axis`; every slice sums to one.
pub fn softmax_forward(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Dimension(format!(
            "softmax axis {} out of range for shape {:?}",
            axis,
            x.shape()
        )));
    }
    let (outer, axis_len, inner) = axis_strides(x.shape(), axis);
    let xs = x.values();
    let mut out = vec![0.0; xs.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(xs[base + a * inner]);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = (xs[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[base + a * inner] /= sum;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// dL/dx_i = y_i * (g_i - sum_j g_j y_j) within each slice.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Tensor {
    let (outer, axis_len, inner) = axis_strides(y.shape(), axis);
    let ys = y.values();
    let gs = grad_out.values();
    let mut out = vec![0.0; ys.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut dot = 0.0;
            for a in 0..axis_len {
                let idx = base + a * inner;
                dot += gs[idx] * ys[idx];
            }
            for a in 0..axis_len {
                let idx = base + a * inner;
                out[idx] = ys[idx] * (gs[idx] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("shape preserved")
}

// ---------------------------------------------------------------------------
// Dense (xW + b)
// ---------------------------------------------------------------------------

pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(Error::Dimension(format!(
            "dense expects x (batch, d_in), W (d_in, d_out), b (d_out); got x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (batch, d_in) = (x.shape()[0], x.shape()[1]);
    let (w_in, d_out) = (w.shape()[0], w.shape()[1]);
    if d_in != w_in || b.shape()[0] != d_out {
        return Err(Error::Dimension(format!(
            "dense shape mismatch: x {:?} vs W {:?} (b {:?})",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let xs = x.values();
    let ws = w.values();
    let bs = b.values();
    let mut out = vec![0.0; batch * d_out];
    for row in 0..batch {
        let y = &mut out[row * d_out..(row + 1) * d_out];
        y.copy_from_slice(bs);
        for i in 0..d_in {
            let xv = xs[row * d_in + i];
            if xv == 0.0 {
                continue;
            }
            let wrow = &ws[i * d_out..(i + 1) * d_out];
            for (o, wv) in wrow.iter().enumerate() {
                y[o] += xv * wv;
            }
        }
    }
    Tensor::new(vec![batch, d_out], out)
}

/// Returns (dx, dW, db).
pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    let xs = x.values();
    let ws = w.values();
    let gs = grad_out.values();

    let mut dx = vec![0.0; batch * d_in];
    let mut dw = vec![0.0; d_in * d_out];
    let mut db = vec![0.0; d_out];

    for row in 0..batch {
        let g = &gs[row * d_out..(row + 1) * d_out];
        for (o, gv) in g.iter().enumerate() {
            db[o] += gv;
        }
        for i in 0..d_in {
            let wrow = &ws[i * d_out..(i + 1) * d_out];
            let mut acc = 0.0;
            for (o, gv) in g.iter().enumerate() {
                acc += gv * wrow[o];
            }
            dx[row * d_in + i] = acc;

            let xv = xs[row * d_in + i];
            if xv != 0.0 {
                let dwrow = &mut dw[i * d_out..(i + 1) * d_out];
                for (o, gv) in g.iter().enumerate() {
                    dwrow[o] += xv * gv;
                }
            }
        }
    }
    (
        Tensor::new(vec![batch, d_in], dx).expect("shape"),
        Tensor::new(vec![d_in, d_out], dw).expect("shape"),
        Tensor::new(vec![d_out], db).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// Conv2d (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

pub fn conv2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv2d_forward(x: &Tensor, k: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects x (B, C_in, H, W) and K (C_out, C_in, kH, kW); got {:?} and {:?}",
            x.shape(),
            k.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input has {c_in}, kernel expects {kc}"
        )));
    }
    let oh = conv2d_output_size(h, kh, stride, padding)?;
    let ow = conv2d_output_size(w, kw, stride, padding)?;

    let xs = x.values();
    let ks = k.values();
    let mut out = vec![0.0; b * c_out * oh * ow];

    for bi in 0..b {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        let xbase = ((bi * c_in + ci) * h) * w;
                        let kbase = ((co * c_in + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let krow = kbase + ky * kw;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += xs[xrow + ix as usize] * ks[krow + kx];
                            }
                        }
                    }
                    out[((bi * c_out + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, c_out, oh, ow], out)
}

/// Returns (dx, dK).
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor) {
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);

    let xs = x.values();
    let ks = k.values();
    let gs = grad_out.values();
    let mut dx = vec![0.0; xs.len()];
    let mut dk = vec![0.0; ks.len()];

    for bi in 0..b {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gs[((bi * c_out + co) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c_in {
                        let xbase = ((bi * c_in + ci) * h) * w;
                        let kbase = ((co * c_in + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let krow = kbase + ky * kw;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dx[xrow + ix as usize] += g * ks[krow + kx];
                                dk[krow + kx] += g * xs[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("shape"),
        Tensor::new(k.shape().to_vec(), dk).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// MaxPool2d
// ---------------------------------------------------------------------------

/// Returns the pooled tensor and, per output element, the flat input index
/// of the maximum (first such index in row-major order on ties).
pub fn maxpool2d_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::Dimension(format!(
            "maxpool2d expects (B, C, H, W); got {:?}",
            x.shape()
        )));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Config(
            "maxpool2d window and stride must be positive".into(),
        ));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "pool window {window} exceeds spatial extent {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;

    let xs = x.values();
    let mut out = vec![0.0; b * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];

    for bi in 0..b {
        for ci in 0..c {
            let base = ((bi * c + ci) * h) * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wy in 0..window {
                        let row = base + (oy * stride + wy) * w + ox * stride;
                        for wx in 0..window {
                            let idx = row + wx;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((bi * c + ci) * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let dxs = dx.values_mut();
    for (g, &idx) in grad_out.values().iter().zip(argmax) {
        dxs[idx] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// Flatten
// ---------------------------------------------------------------------------

/// (batch, rest...) -> (batch, product(rest)); values untouched.
pub fn flatten_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 1 {
        return Err(Error::Dimension(
            "flatten needs a leading batch dimension".into(),
        ));
    }
    let batch = x.shape()[0];
    let rest: usize = x.shape()[1..].iter().product();
    x.reshape(&[batch, rest])
}

pub fn flatten_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    grad_out.reshape(input_shape).expect("element count equal")
}

// ---------------------------------------------------------------------------
// Dropout (inverted)
// ---------------------------------------------------------------------------

/// Train mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); eval mode is the identity. Returns the mask
/// used (None in eval mode or when rate is zero).
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (Tensor, Option<Vec<bool>>) {
    if !train || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut mask = vec![false; x.len()];
    let mut out = vec![0.0; x.len()];
    for (i, &v) in x.values().iter().enumerate() {
        if rng.random::<f64>() >= rate {
            mask[i] = true;
            out[i] = v * scale;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), out).expect("shape"),
        Some(mask),
    )
}

pub fn dropout_backward(grad_out: &Tensor, rate: f64, mask: Option<&[bool]>) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(mask) => {
            let scale = 1.0 / (1.0 - rate);
            let values = grad_out
                .values()
                .iter()
                .zip(mask)
                .map(|(&g, &keep)| if keep { g * scale } else { 0.0 })
                .collect();
            Tensor::new(grad_out.shape().to_vec(), values).expect("shape")
        }
    }
}

// ---------------------------------------------------------------------------
// Concatenate
// ---------------------------------------------------------------------------

pub fn concat_forward(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Config("concatenate needs at least one part".into()));
    }
    let first = parts[0];
    if axis >= first.rank() {
        return Err(Error::Dimension(format!(
            "concat axis {} out of range for shape {:?}",
            axis,
            first.shape()
        )));
    }
    for (i, p) in parts.iter().enumerate().skip(1) {
        if p.rank() != first.rank() {
            return Err(Error::Dimension(format!(
                "concat part {i} has rank {} but part 0 has rank {}",
                p.rank(),
                first.rank()
            )));
        }
        for d in 0..first.rank() {
            if d != axis && p.shape()[d] != first.shape()[d] {
                return Err(Error::Dimension(format!(
                    "concat part {i} extent {} differs from {} on axis {d}",
                    p.shape()[d],
                    first.shape()[d]
                )));
            }
        }
    }

    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();

    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis = out_shape[axis];

    let mut out = vec![0.0; outer * total_axis * inner];
    let mut offset = 0usize;
    for p in parts {
        let p_axis = p.shape()[axis];
        let ps = p.values();
        for o in 0..outer {
            let src = o * p_axis * inner;
            let dst = (o * total_axis + offset) * inner;
            out[dst..dst + p_axis * inner].copy_from_slice(&ps[src..src + p_axis * inner]);
        }
        offset += p_axis;
    }
    Tensor::new(out_shape, out)
}

/// Split the upstream gradient back into the original part shapes.
pub fn concat_backward(part_shapes: &[Vec<usize>], grad_out: &Tensor, axis: usize) -> Vec<Tensor> {
    let outer: usize = part_shapes[0][..axis].iter().product();
    let inner: usize = part_shapes[0][axis + 1..].iter().product();
    let total_axis: usize = part_shapes.iter().map(|s| s[axis]).sum();
    let gs = grad_out.values();

    let mut grads = Vec::with_capacity(part_shapes.len());
    let mut offset = 0usize;
    for shape in part_shapes {
        let p_axis = shape[axis];
        let mut part = vec![0.0; outer * p_axis * inner];
        for o in 0..outer {
            let src = (o * total_axis + offset) * inner;
            let dst = o * p_axis * inner;
            part[dst..dst + p_axis * inner].copy_from_slice(&gs[src..src + p_axis * inner]);
        }
        grads.push(Tensor::new(shape.clone(), part).expect("shape"));
        offset += p_axis;
    }
    grads
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

/// -(1/batch) * sum over samples and classes of t * log(max(p, eps)).
///
/// `predicted` rows must already be probability distributions; a row whose
/// sum strays beyond [`ROW_SUM_TOL`] is a contract violation.
pub fn cross_entropy_forward(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    cross_entropy_forward_with_tol(predicted, target, ROW_SUM_TOL)
}

/// As [`cross_entropy_forward`] with an explicit row-sum tolerance (the f32
/// computation mode rounds softmax outputs, so its rows sum to one only
/// within f32 precision).
pub fn cross_entropy_forward_with_tol(
    predicted: &Tensor,
    target: &Tensor,
    row_sum_tol: f64,
) -> Result<Tensor> {
    if predicted.rank() != 2 || target.shape() != predicted.shape() {
        return Err(Error::Dimension(format!(
            "cross_entropy expects matching (batch, k) tensors; got {:?} and {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    let (batch, k) = (predicted.shape()[0], predicted.shape()[1]);
    if batch == 0 {
        return Err(Error::Dimension("cross_entropy on empty batch".into()));
    }
    let ps = predicted.values();
    let ts = target.values();
    let mut total = 0.0;
    for row in 0..batch {
        let slice = &ps[row * k..(row + 1) * k];
        let sum: f64 = slice.iter().sum();
        if (sum - 1.0).abs() > row_sum_tol {
            return Err(Error::Contract(format!(
                "cross_entropy row {row} sums to {sum}, expected 1"
            )));
        }
        for c in 0..k {
            let t = ts[row * k + c];
            if t != 0.0 {
                total -= t * slice[c].max(CROSS_ENTROPY_EPS).ln();
            }
        }
    }
    Ok(Tensor::scalar(total / batch as f64))
}

/// Gradient w.r.t. `predicted`; zero where the clamp was active.
pub fn cross_entropy_backward(predicted: &Tensor, target: &Tensor, grad_out: f64) -> Tensor {
    let (batch, k) = (predicted.shape()[0], predicted.shape()[1]);
    let ps = predicted.values();
    let ts = target.values();
    let scale = grad_out / batch as f64;
    let mut out = vec![0.0; ps.len()];
    for i in 0..batch * k {
        if ts[i] != 0.0 && ps[i] > CROSS_ENTROPY_EPS {
            out[i] = -scale * ts[i] / ps[i];
        }
    }
    Tensor::new(predicted.shape().to_vec(), out).expect("shape")
}
