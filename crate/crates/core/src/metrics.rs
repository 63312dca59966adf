//! Reconstruction quality metrics and per-image evaluation records.
//!
//! CSIM ("color-tone similarity") is computed here as the structural
//! similarity index of the CIELAB chroma planes: SSIM on A and on B (each
//! shifted to `[0, 255]`), averaged. Lightness never enters it. The
//! definition lives entirely in [`csim`] so it can be swapped.

use std::path::Path;

use crate::codec::{decode_to_inputs, encode, relative_size_bound, GridSpec};
use crate::color::{denormalize_lab, lab_to_rgb, rgb_to_lab, Rgb8Image};
use crate::error::{Error, Result};
use crate::model::CrayonModel;
use crate::nn::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn same_dims(a: &Rgb8Image, b: &Rgb8Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Domain(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)` over all RGB samples; `+inf` for identical images.
pub fn psnr(a: &Rgb8Image, b: &Rgb8Image) -> Result<f64> {
    same_dims(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of two planes with values on a 0..255 scale.
pub fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let (mx, _, _) = filter_valid(x, w, h, &taps);
    let (my, _, _) = filter_valid(y, w, h, &taps);
    let (exx, _, _) = filter_valid(&prod(x, x), w, h, &taps);
    let (eyy, _, _) = filter_valid(&prod(y, y), w, h, &taps);
    let (exy, _, _) = filter_valid(&prod(x, y), w, h, &taps);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// A and B planes shifted onto the 0..255 scale.
pub fn chroma_planes(img: &Rgb8Image) -> [Vec<f64>; 2] {
    let lab = rgb_to_lab(img);
    [
        lab.a.iter().map(|&v| v as f64 + 128.0).collect(),
        lab.b.iter().map(|&v| v as f64 + 128.0).collect(),
    ]
}

/// Chroma-plane structural similarity, clamped to `[0, 1]`.
pub fn csim(a: &Rgb8Image, b: &Rgb8Image) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    let [aa, ab] = chroma_planes(a);
    let [ba, bb] = chroma_planes(b);
    let s = (ssim_plane(&aa, &ba, w, h)? + ssim_plane(&ab, &bb, w, h)?) / 2.0;
    Ok(s.clamp(0.0, 1.0))
}

/// Anything that predicts `(1, 3, H, W)` normalized LAB from decoded inputs.
pub trait Colorizer {
    /// `l` is `(1, 1, H, W)`, `hints` is `(1, 2, H, W)`; `id` names the image.
    fn colorize(&self, id: &str, l: &Tensor, hints: &Tensor) -> Result<Tensor>;
}

impl Colorizer for CrayonModel {
    fn colorize(&self, _id: &str, l: &Tensor, hints: &Tensor) -> Result<Tensor> {
        self.forward(l, hints)
    }
}

/// One image evaluated at one grid spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image: String,
    pub n: usize,
    pub psnr: f64,
    pub csim: f64,
    pub compressed_bytes: usize,
    pub raw_bytes: usize,
    pub relative_size: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub n: usize,
    pub records: Vec<EvalRecord>,
    pub mean_psnr: f64,
    pub mean_csim: f64,
    pub mean_relative_size: f64,
    pub bound: f64,
}

/// Reconstructs an RGB image from a colorizer's normalized output.
pub fn render_output(out: &Tensor) -> Result<Rgb8Image> {
    Ok(lab_to_rgb(&denormalize_lab(out)?))
}

/// Runs encode -> decode -> colorize -> RGB on one image and scores it.
pub fn evaluate_image(model: &dyn Colorizer, id: &str, img: &Rgb8Image, spec: GridSpec) -> Result<(EvalRecord, Rgb8Image)> {
    let file = encode(img, spec);
    let (l, hints) = decode_to_inputs(&file)?;
    let (h, w) = (img.height(), img.width());
    let l = l.reshape(&[1, 1, h, w])?;
    let ab = hints.ab.reshape(&[1, 2, h, w])?;
    let recon = render_output(&model.colorize(id, &l, &ab)?)?;
    let compressed_bytes = file.encoded_len();
    let raw_bytes = file.raw_rgb_len();
    let record = EvalRecord {
        image: id.to_string(),
        n: spec.n(),
        psnr: psnr(img, &recon)?,
        csim: csim(img, &recon)?,
        compressed_bytes,
        raw_bytes,
        relative_size: compressed_bytes as f64 / raw_bytes as f64,
        bound: relative_size_bound(spec.n())?,
    };
    Ok((record, recon))
}

pub fn evaluate_model(model: &dyn Colorizer, images: &[(String, Rgb8Image)], spec: GridSpec) -> Result<EvalSummary> {
    if images.is_empty() {
        return Err(Error::Domain("evaluation needs at least one test image".into()));
    }
    let records = images
        .iter()
        .map(|(id, img)| evaluate_image(model, id, img, spec).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
    Ok(EvalSummary {
        n: spec.n(),
        mean_psnr: mean(|r| r.psnr),
        mean_csim: mean(|r| r.csim),
        mean_relative_size: mean(|r| r.relative_size),
        bound: relative_size_bound(spec.n())?,
        records,
    })
}

pub const EVAL_CSV_HEADER: [&str; 7] = ["image", "psnr_db", "csim", "bytes", "raw_bytes", "relative_size", "bound"];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `eval_n{n}.csv`-style rows.
pub fn write_eval_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EVAL_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.image.clone(),
            r.psnr.to_string(),
            r.csim.to_string(),
            r.compressed_bytes.to_string(),
            r.raw_bytes.to_string(),
            r.relative_size.to_string(),
            r.bound.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_CSV_HEADER: [&str; 5] = ["n", "mean_psnr", "mean_csim", "mean_relative_size", "bound"];

/// One row per grid spacing, in the order given.
pub fn write_summary_csv(path: &Path, summaries: &[EvalSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_CSV_HEADER).map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.n.to_string(),
            s.mean_psnr.to_string(),
            s.mean_csim.to_string(),
            s.mean_relative_size.to_string(),
            s.bound.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
