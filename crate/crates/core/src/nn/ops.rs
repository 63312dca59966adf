//! Pooling, activation, channel plumbing and the MSE loss, each with its
//! backward rule.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn pool_output(len: usize, k: usize, s: usize, axis: &str) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(Error::dim(axis, "pool kernel and stride must be >= 1"));
    }
    if len < k {
        return Err(Error::dim(axis, format!("size {len} is smaller than pool kernel {k}")));
    }
    if k == s && !len.is_multiple_of(s) {
        return Err(Error::dim(axis, format!("size {len} is not divisible by pool stride {s}")));
    }
    Ok((len - k) / s + 1)
}

/// Flat input index of each output element's winning tap. Ties go to the
/// first maximal element in row-major window order.
fn pool_argmax(x: &Tensor, k: usize, s: usize) -> Result<(Vec<usize>, [usize; 4])> {
    let [n, c, h, w] = x.dims4()?;
    let oh = pool_output(h, k, s, "height")?;
    let ow = pool_output(w, k, s, "width")?;
    let data = x.data();
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * s * w + ox * s;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * s + ky) * w + ox * s + kx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                arg.push(best);
            }
        }
    }
    Ok((arg, [n, c, oh, ow]))
}

pub fn maxpool2d(x: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    let (arg, shape) = pool_argmax(x, k, s)?;
    let data = x.data();
    Tensor::new(&shape, arg.iter().map(|&i| data[i]).collect())
}

pub fn maxpool2d_backward(x: &Tensor, k: usize, s: usize, dy: &Tensor) -> Result<Tensor> {
    let (arg, shape) = pool_argmax(x, k, s)?;
    if dy.shape() != shape {
        return Err(Error::dim(
            "output gradient",
            format!("expected shape {shape:?}, got {:?}", dy.shape()),
        ));
    }
    let mut dx = vec![0.0; x.numel()];
    for (&i, &g) in arg.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Tensor::new(x.shape(), dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the input was strictly positive; zero at and below 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    ensure_same_shape(x, dy, "output gradient")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

fn ensure_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::dim(
            what,
            format!("shapes disagree: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add_elementwise(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape(a, b, "addend")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Stacks `(N, C_i, H, W)` tensors along the channel axis in argument order.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::dim("channels", "concat needs at least one input"))?;
    let [n, _, h, w] = first.dims4()?;
    let mut channels = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let [xn, xc, xh, xw] = x.dims4()?;
        for (axis, got, want) in [("batch", xn, n), ("height", xh, h), ("width", xw, w)] {
            if got != want {
                return Err(Error::dim(
                    axis,
                    format!("concat input {i} has {got}, input 0 has {want}"),
                ));
            }
        }
        channels.push(xc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (x, &c) in xs.iter().zip(&channels) {
            out.extend_from_slice(&x.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Tensor::new(&[n, total, h, w], out)
}

/// Channels `[start, start + len)` of an `(N, C, H, W)` tensor.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(Error::dim(
            "channels",
            format!("slice {start}..{} out of range for {c} channels", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let from = (b * c + start) * plane;
        out.extend_from_slice(&x.data()[from..from + len * plane]);
    }
    Tensor::new(&[n, len, h, w], out)
}

/// Splits a gradient of a channel concat back into per-input pieces.
pub(crate) fn split_channels(dy: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let mut start = 0;
    let mut parts = Vec::with_capacity(channels.len());
    for &c in channels {
        parts.push(slice_channels(dy, start, c)?);
        start += c;
    }
    Ok(parts)
}

/// Scatters a gradient of `slice_channels` into a zero tensor of `shape`.
pub(crate) fn unslice_channels(dy: &Tensor, shape: &[usize], start: usize) -> Result<Tensor> {
    let [n, c, h, w] = [shape[0], shape[1], shape[2], shape[3]];
    let [_, len, _, _] = dy.dims4()?;
    let plane = h * w;
    let mut out = vec![0.0; n * c * plane];
    for b in 0..n {
        let to = (b * c + start) * plane;
        out[to..to + len * plane].copy_from_slice(&dy.data()[b * len * plane..(b + 1) * len * plane]);
    }
    Tensor::new(shape, out)
}

/// Mean of squared differences over every element.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f32> {
    ensure_same_shape(pred, target, "loss target")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = (p - t) as f64;
            d * d
        })
        .sum();
    Ok((sum / pred.numel() as f64) as f32)
}

/// `d mse / d pred = 2 (pred - target) / numel`, scaled by `dloss`.
pub fn mse_loss_backward(pred: &Tensor, target: &Tensor, dloss: f32) -> Result<Tensor> {
    ensure_same_shape(pred, target, "loss target")?;
    let scale = 2.0 * dloss / pred.numel() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Tensor::new(pred.shape(), data)
}
