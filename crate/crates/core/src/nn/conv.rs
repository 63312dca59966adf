//! 2-D convolution and transposed convolution over `(N, C, H, W)` tensors,
//! lowered to GEMM through im2col / col2im.

use rayon::prelude::*;

use super::gemm::{gemm, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Geometry of a square-kernel convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, dilation 1.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
            dilation: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("dilation", self.dilation),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::dim(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// `floor((x + 2P - D(K-1) - 1) / S) + 1`, or `None` when the kernel does
    /// not fit inside the padded input.
    pub fn conv_output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.span() {
            return None;
        }
        Some((padded - self.span()) / self.stride + 1)
    }

    /// `(x - 1)S - 2P + D(K-1) + 1`, or `None` when padding eats the whole output.
    pub fn transposed_output_size(&self, input: usize) -> Option<usize> {
        let full = (input - 1) * self.stride + self.span();
        full.checked_sub(2 * self.padding).filter(|&v| v > 0)
    }

    /// Weight element count plus bias count.
    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
    }

    fn col_rows(&self, channels: usize) -> usize {
        channels * self.kernel * self.kernel
    }
}

/// Geometry of one im2col lowering: a `(channels, h, w)` image read by the
/// kernel into an `(oh, ow)` grid of output positions.
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Lowering {
    fn new(spec: &ConvSpec, channels: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Self {
        Self {
            channels,
            h,
            w,
            oh,
            ow,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            dilation: spec.dilation,
        }
    }

    fn cols_len(&self) -> usize {
        self.channels * self.kernel * self.kernel * self.oh * self.ow
    }

    /// Source index along one axis for output position `o` and kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Columns laid out as `(C*K*K, OH*OW)`.
    fn im2col(&self, image: &[f32], cols: &mut [f32]) {
        let plane = self.oh * self.ow;
        let mut row = 0;
        for c in 0..self.channels {
            let src = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, ki, self.h) {
                            None => out_row.fill(0.0),
                            Some(iy) => {
                                let src_row = &src[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row.iter_mut().enumerate() {
                                    *v = self.source(ox, kj, self.w).map_or(0.0, |ix| src_row[ix]);
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-add columns back into the image.
    fn col2im(&self, cols: &[f32], image: &mut [f32]) {
        let plane = self.oh * self.ow;
        let mut row = 0;
        for c in 0..self.channels {
            let dst = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ki, self.h) else {
                            continue;
                        };
                        let dst_row = &mut dst[iy * self.w..(iy + 1) * self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = self.source(ox, kj, self.w) {
                                dst_row[ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Gradients of a convolution-type layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_axis(axis: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(axis, format!("expected {want}, got {got}")));
    }
    Ok(())
}

fn check_bias(b: &Tensor, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(Error::dim(
            "bias",
            format!("expected shape [{channels}], got {:?}", b.shape()),
        ));
    }
    Ok(())
}

fn conv_geometry(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<([usize; 4], usize, usize)> {
    spec.validate()?;
    let [_, c, h, wd] = x.dims4()?;
    check_axis("input channels", c, spec.in_channels)?;
    let expected = [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
    if w.shape() != expected {
        return Err(Error::dim(
            "weight",
            format!("expected shape {expected:?}, got {:?}", w.shape()),
        ));
    }
    check_bias(b, spec.out_channels)?;
    let oh = spec
        .conv_output_size(h)
        .ok_or_else(|| Error::dim("height", format!("kernel span exceeds padded height {h}")))?;
    let ow = spec
        .conv_output_size(wd)
        .ok_or_else(|| Error::dim("width", format!("kernel span exceeds padded width {wd}")))?;
    Ok((x.dims4()?, oh, ow))
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &bv) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn bias_grad_into(dy: &[f32], plane: usize, db: &mut [f32]) {
    for (chunk, g) in dy.chunks(plane).zip(db.iter_mut()) {
        *g += chunk.iter().sum::<f32>();
    }
}

/// Sums per-image partial gradients in batch order so the result does not
/// depend on how many worker threads produced them.
fn reduce_in_order(parts: Vec<(Vec<f32>, Vec<f32>)>, wlen: usize, blen: usize) -> (Vec<f32>, Vec<f32>) {
    let mut dw = vec![0.0; wlen];
    let mut db = vec![0.0; blen];
    for (pw, pb) in parts {
        dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    (dw, db)
}

/// Cross-correlation of `x (N, Ci, H, W)` with `w (Co, Ci, K, K)` plus bias.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let ([n, ci, h, wd], oh, ow) = conv_geometry(x, w, b, spec)?;
    let co = spec.out_channels;
    let lower = Lowering::new(spec, ci, (h, wd), (oh, ow));
    let krows = spec.col_rows(ci);
    let in_len = ci * h * wd;
    let out_len = co * oh * ow;
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(dst, src)| {
            let mut cols = vec![0.0; lower.cols_len()];
            lower.im2col(src, &mut cols);
            gemm(
                Mat::new(w.data(), co, krows),
                Mat::new(&cols, krows, oh * ow),
                0.0,
                dst,
            );
            add_bias(dst, b.data(), oh * ow);
        });
    Tensor::new(&[n, co, oh, ow], out)
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, spec: &ConvSpec, dy: &Tensor) -> Result<ConvGrads> {
    let bias_shape = Tensor::zeros(&[spec.out_channels]);
    let ([n, ci, h, wd], oh, ow) = conv_geometry(x, w, &bias_shape, spec)?;
    let co = spec.out_channels;
    if dy.shape() != [n, co, oh, ow] {
        return Err(Error::dim(
            "output gradient",
            format!("expected shape {:?}, got {:?}", [n, co, oh, ow], dy.shape()),
        ));
    }
    let lower = Lowering::new(spec, ci, (h, wd), (oh, ow));
    let krows = spec.col_rows(ci);
    let plane = oh * ow;
    let in_len = ci * h * wd;
    let mut dx = vec![0.0; n * in_len];
    let parts: Vec<(Vec<f32>, Vec<f32>)> = dx
        .par_chunks_mut(in_len)
        .zip(x.data().par_chunks(in_len))
        .zip(dy.data().par_chunks(co * plane))
        .map(|((dxi, xi), dyi)| {
            let mut cols = vec![0.0; lower.cols_len()];
            lower.im2col(xi, &mut cols);
            let mut dw = vec![0.0; w.numel()];
            gemm(Mat::new(dyi, co, plane), Mat::new(&cols, krows, plane).t(), 0.0, &mut dw);
            let mut db = vec![0.0; co];
            bias_grad_into(dyi, plane, &mut db);
            gemm(Mat::new(w.data(), co, krows).t(), Mat::new(dyi, co, plane), 0.0, &mut cols);
            lower.col2im(&cols, dxi);
            (dw, db)
        })
        .collect();
    let (dw, db) = reduce_in_order(parts, w.numel(), co);
    Ok(ConvGrads {
        input: Tensor::new(x.shape(), dx)?,
        weight: Tensor::new(w.shape(), dw)?,
        bias: Tensor::new(&[co], db)?,
    })
}

fn transposed_geometry(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<([usize; 4], usize, usize)> {
    spec.validate()?;
    let [_, c, h, wd] = x.dims4()?;
    check_axis("input channels", c, spec.in_channels)?;
    let expected = [spec.in_channels, spec.out_channels, spec.kernel, spec.kernel];
    if w.shape() != expected {
        return Err(Error::dim(
            "weight",
            format!("expected shape {expected:?}, got {:?}", w.shape()),
        ));
    }
    check_bias(b, spec.out_channels)?;
    let oh = spec
        .transposed_output_size(h)
        .ok_or_else(|| Error::dim("height", "padding removes the whole output"))?;
    let ow = spec
        .transposed_output_size(wd)
        .ok_or_else(|| Error::dim("width", "padding removes the whole output"))?;
    Ok((x.dims4()?, oh, ow))
}

/// Fractionally strided convolution of `x (N, Ci, H, W)` with
/// `w (Ci, Co, K, K)`; output is `(H-1)S - 2P + D(K-1) + 1` on each side.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let ([n, ci, h, wd], oh, ow) = transposed_geometry(x, w, b, spec)?;
    let co = spec.out_channels;
    // The output grid plays the role of a conv input that lowers onto (h, wd).
    let lower = Lowering::new(spec, co, (oh, ow), (h, wd));
    let krows = spec.col_rows(co);
    let in_len = ci * h * wd;
    let out_len = co * oh * ow;
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(dst, src)| {
            let mut cols = vec![0.0; lower.cols_len()];
            gemm(
                Mat::new(w.data(), ci, krows).t(),
                Mat::new(src, ci, h * wd),
                0.0,
                &mut cols,
            );
            lower.col2im(&cols, dst);
            add_bias(dst, b.data(), oh * ow);
        });
    Tensor::new(&[n, co, oh, ow], out)
}

/// Gradients of [`conv_transpose2d`] given the upstream gradient `dy`.
pub fn conv_transpose2d_backward(x: &Tensor, w: &Tensor, spec: &ConvSpec, dy: &Tensor) -> Result<ConvGrads> {
    let bias_shape = Tensor::zeros(&[spec.out_channels]);
    let ([n, ci, h, wd], oh, ow) = transposed_geometry(x, w, &bias_shape, spec)?;
    let co = spec.out_channels;
    if dy.shape() != [n, co, oh, ow] {
        return Err(Error::dim(
            "output gradient",
            format!("expected shape {:?}, got {:?}", [n, co, oh, ow], dy.shape()),
        ));
    }
    let lower = Lowering::new(spec, co, (oh, ow), (h, wd));
    let krows = spec.col_rows(co);
    let plane = h * wd;
    let in_len = ci * plane;
    let out_len = co * oh * ow;
    let mut dx = vec![0.0; n * in_len];
    let parts: Vec<(Vec<f32>, Vec<f32>)> = dx
        .par_chunks_mut(in_len)
        .zip(x.data().par_chunks(in_len))
        .zip(dy.data().par_chunks(out_len))
        .map(|((dxi, xi), dyi)| {
            let mut cols = vec![0.0; lower.cols_len()];
            lower.im2col(dyi, &mut cols);
            gemm(Mat::new(w.data(), ci, krows), Mat::new(&cols, krows, plane), 0.0, dxi);
            let mut dw = vec![0.0; w.numel()];
            gemm(Mat::new(xi, ci, plane), Mat::new(&cols, krows, plane).t(), 0.0, &mut dw);
            let mut db = vec![0.0; co];
            bias_grad_into(dyi, oh * ow, &mut db);
            (dw, db)
        })
        .collect();
    let (dw, db) = reduce_in_order(parts, w.numel(), co);
    Ok(ConvGrads {
        input: Tensor::new(x.shape(), dx)?,
        weight: Tensor::new(w.shape(), dw)?,
        bias: Tensor::new(&[co], db)?,
    })
}
