//! Grayscale-plus-color-grid codec.
//!
//! An image is stored as its 8-bit quantized lightness plane plus the
//! offset-128 chroma of every `n`-th pixel along both axes. Decoding yields
//! either network inputs (normalized L and sparse chroma hints) or, through
//! [`naive_fill_decode`], a nearest-sample reconstruction.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! 0..4   magic "CGC1"
//! 4      version (1; 2 adds a grid phase)
//! 5..9   width  u32
//! 9..13  height u32
//! 13..15 n      u16
//! [v2 only] phase_row u16, phase_col u16
//! W*H bytes of quantized L, row-major
//! one (a_q, b_q) byte pair per grid position, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::color::{lab_to_rgb, rgb_to_lab, LabImage, Rgb8Image, AB_SCALE};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"CGC1";
/// Phase (0, 0) files.
pub const VERSION: u8 = 1;
/// Files carrying an explicit grid phase.
pub const VERSION_PHASED: u8 = 2;
pub const HEADER_LEN: usize = 15;
pub const HEADER_LEN_PHASED: usize = 19;

/// Chroma byte for a = 0 / b = 0.
const AB_OFFSET: f32 = 128.0;

/// Spacing and offset of the color grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
    phase_row: usize,
    phase_col: usize,
}

impl GridSpec {
    /// Corner-anchored grid with spacing `n`.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_phase(n, 0, 0)
    }

    pub fn with_phase(n: usize, phase_row: usize, phase_col: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("grid spacing n must be >= 1".into()));
        }
        if n > u16::MAX as usize {
            return Err(Error::Domain(format!("grid spacing {n} does not fit in 16 bits")));
        }
        if phase_row >= n || phase_col >= n {
            return Err(Error::Domain(format!(
                "grid phase ({phase_row}, {phase_col}) must be below n = {n}"
            )));
        }
        Ok(Self { n, phase_row, phase_col })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phase(&self) -> (usize, usize) {
        (self.phase_row, self.phase_col)
    }

    fn rows(&self, height: usize) -> impl Iterator<Item = usize> {
        (self.phase_row..height).step_by(self.n)
    }

    fn cols(&self, width: usize) -> impl Iterator<Item = usize> + Clone {
        (self.phase_col..width).step_by(self.n)
    }

    /// Number of grid positions in a `width x height` image.
    pub fn sample_count(&self, width: usize, height: usize) -> usize {
        let along = |len: usize, phase: usize| if len > phase { (len - phase).div_ceil(self.n) } else { 0 };
        along(width, self.phase_col) * along(height, self.phase_row)
    }

    pub fn is_grid_position(&self, row: usize, col: usize) -> bool {
        row % self.n == self.phase_row && col % self.n == self.phase_col
    }
}

/// All `(row, col)` positions carrying chroma, in row-major order.
pub fn grid_positions(spec: &GridSpec, width: usize, height: usize) -> Vec<(usize, usize)> {
    let cols = spec.cols(width);
    spec.rows(height)
        .flat_map(|r| cols.clone().map(move |c| (r, c)))
        .collect()
}

/// Upper bound on compressed size relative to raw 3-byte RGB: `1/3 + 1/n^2`.
pub fn relative_size_bound(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("relative size bound is undefined for n = 0".into()));
    }
    let n = n as f64;
    Ok(1.0 / 3.0 + 1.0 / (n * n))
}

/// Decoded representation of a compressed image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgcFile {
    pub width: usize,
    pub height: usize,
    pub spec: GridSpec,
    /// One byte per pixel, `round(L * 255 / 100)`.
    pub l_plane_q: Vec<u8>,
    /// `(a + 128, b + 128)` per grid position, row-major.
    pub ab_samples: Vec<[u8; 2]>,
}

/// Sparse chroma hints at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HintPlanes {
    /// `(2, H, W)` normalized chroma, zero off-grid.
    pub ab: Tensor,
    /// Row-major, `true` at grid positions.
    pub mask: Vec<bool>,
}

impl HintPlanes {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn quantize_l(l: f32) -> u8 {
    (l * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8
}

fn dequantize_l(q: u8) -> f32 {
    q as f32 * 100.0 / 255.0
}

fn quantize_ab(v: f32) -> u8 {
    (v.round() + AB_OFFSET).clamp(0.0, 255.0) as u8
}

fn dequantize_ab(q: u8) -> f32 {
    q as f32 - AB_OFFSET
}

/// Encodes an LAB image; chroma off the grid is discarded.
pub fn encode_lab(lab: &LabImage, spec: GridSpec) -> CgcFile {
    let (w, h) = (lab.width(), lab.height());
    let ab_samples = grid_positions(&spec, w, h)
        .into_iter()
        .map(|(r, c)| {
            let i = r * w + c;
            [quantize_ab(lab.a[i]), quantize_ab(lab.b[i])]
        })
        .collect();
    CgcFile {
        width: w,
        height: h,
        spec,
        l_plane_q: lab.l.iter().map(|&v| quantize_l(v)).collect(),
        ab_samples,
    }
}

pub fn encode(img: &Rgb8Image, spec: GridSpec) -> CgcFile {
    encode_lab(&rgb_to_lab(img), spec)
}

impl CgcFile {
    /// Checks the length invariants against the header fields.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Decode(format!("empty image {}x{}", self.width, self.height)));
        }
        if self.l_plane_q.len() != self.width * self.height {
            return Err(Error::Decode(format!(
                "L plane has {} bytes, width x height = {}",
                self.l_plane_q.len(),
                self.width * self.height
            )));
        }
        let expected = self.spec.sample_count(self.width, self.height);
        if self.ab_samples.len() != expected {
            return Err(Error::Decode(format!(
                "{} chroma samples, grid of spacing {} needs {expected}",
                self.ab_samples.len(),
                self.spec.n()
            )));
        }
        Ok(())
    }

    pub fn header_len(&self) -> usize {
        if self.spec.phase() == (0, 0) {
            HEADER_LEN
        } else {
            HEADER_LEN_PHASED
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.l_plane_q.len() + 2 * self.ab_samples.len()
    }

    pub fn raw_rgb_len(&self) -> usize {
        3 * self.width * self.height
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend(MAGIC);
        let phased = self.spec.phase() != (0, 0);
        out.push(if phased { VERSION_PHASED } else { VERSION });
        out.extend((self.width as u32).to_le_bytes());
        out.extend((self.height as u32).to_le_bytes());
        out.extend((self.spec.n() as u16).to_le_bytes());
        if phased {
            let (pr, pc) = self.spec.phase();
            out.extend((pr as u16).to_le_bytes());
            out.extend((pc as u16).to_le_bytes());
        }
        out.extend(&self.l_plane_q);
        for s in &self.ab_samples {
            out.extend(s);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Decode(format!("{} bytes is shorter than the header", buf.len())));
        }
        if &buf[..4] != MAGIC {
            return Err(Error::Decode(format!("bad magic {:02x?}", &buf[..4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([buf[i], buf[i + 1]]) as usize;
        let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes")) as usize;
        let version = buf[4];
        let width = u32_at(5);
        let height = u32_at(9);
        let n = u16_at(13);
        let (spec, header) = match version {
            VERSION => (GridSpec::new(n), HEADER_LEN),
            VERSION_PHASED => {
                if buf.len() < HEADER_LEN_PHASED {
                    return Err(Error::Decode("truncated phase fields".into()));
                }
                (GridSpec::with_phase(n, u16_at(15), u16_at(17)), HEADER_LEN_PHASED)
            }
            v => return Err(Error::Decode(format!("unsupported version {v}"))),
        };
        let spec = spec.map_err(|e| Error::Decode(e.to_string()))?;
        let pixels = width
            .checked_mul(height)
            .ok_or_else(|| Error::Decode("image dimensions overflow".into()))?;
        let samples = spec.sample_count(width, height);
        let expected = header + pixels + 2 * samples;
        if buf.len() != expected {
            return Err(Error::Decode(format!(
                "{width}x{height} with n = {n} needs {expected} bytes, got {}",
                buf.len()
            )));
        }
        let body = &buf[header..];
        let file = CgcFile {
            width,
            height,
            spec,
            l_plane_q: body[..pixels].to_vec(),
            ab_samples: body[pixels..].chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        };
        file.validate()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Dequantized LAB image: full L, grid chroma, zero chroma elsewhere.
    pub fn reconstruct_lab(&self) -> Result<LabImage> {
        self.validate()?;
        let (w, h) = (self.width, self.height);
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        for ((r, c), s) in grid_positions(&self.spec, w, h).into_iter().zip(&self.ab_samples) {
            a[r * w + c] = dequantize_ab(s[0]);
            b[r * w + c] = dequantize_ab(s[1]);
        }
        let l = self.l_plane_q.iter().map(|&q| dequantize_l(q)).collect();
        LabImage::new(w, h, l, a, b)
    }
}

/// Network inputs: `(1, H, W)` normalized lightness and the chroma hints.
pub fn decode_to_inputs(file: &CgcFile) -> Result<(Tensor, HintPlanes)> {
    file.validate()?;
    let (w, h) = (file.width, file.height);
    let l = Tensor::new(&[1, h, w], file.l_plane_q.iter().map(|&q| q as f32 / 255.0).collect())?;
    let mut ab = vec![0.0; 2 * w * h];
    let mut mask = vec![false; w * h];
    for ((r, c), s) in grid_positions(&file.spec, w, h).into_iter().zip(&file.ab_samples) {
        let i = r * w + c;
        ab[i] = dequantize_ab(s[0]) / AB_SCALE;
        ab[w * h + i] = dequantize_ab(s[1]) / AB_SCALE;
        mask[i] = true;
    }
    Ok((
        l,
        HintPlanes {
            ab: Tensor::new(&[2, h, w], ab)?,
            mask,
        },
    ))
}

/// Grid coordinate nearest to `x` along one axis; ties go to the smaller one.
fn nearest_on_axis(x: usize, phase: usize, n: usize, len: usize) -> usize {
    if x <= phase {
        return phase;
    }
    let last = phase + (len - 1 - phase) / n * n;
    let below = (phase + (x - phase) / n * n).min(last);
    let above = below + n;
    if above > last || x - below <= above - x {
        below
    } else {
        above
    }
}

/// Non-learned baseline: every pixel takes the chroma of its nearest grid
/// sample (Euclidean distance, ties to the smaller row, then column).
pub fn naive_fill_decode(file: &CgcFile) -> Result<Rgb8Image> {
    file.validate()?;
    if file.ab_samples.is_empty() {
        return Err(Error::Decode("no chroma samples to fill from".into()));
    }
    let (w, h) = (file.width, file.height);
    let n = file.spec.n();
    let (pr, pc) = file.spec.phase();
    // Non-empty samples imply pc < w.
    let grid_cols = (w - pc).div_ceil(n);
    let mut lab = file.reconstruct_lab()?;
    let samples: Vec<[f32; 2]> = file
        .ab_samples
        .iter()
        .map(|s| [dequantize_ab(s[0]), dequantize_ab(s[1])])
        .collect();
    for r in 0..h {
        let gr = (nearest_on_axis(r, pr, n, h) - pr) / n;
        for c in 0..w {
            let gc = (nearest_on_axis(c, pc, n, w) - pc) / n;
            let s = samples[gr * grid_cols + gc];
            lab.a[r * w + c] = s[0];
            lab.b[r * w + c] = s[1];
        }
    }
    Ok(lab_to_rgb(&lab))
}
