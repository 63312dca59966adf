//! sRGB <-> CIELAB conversion (D65 white, 2-degree observer) and the channel
//! scaling used at the network boundary.
//!
//! Lightness is stored in `[0, 100]`, chroma in `[-128, 127]`. Out-of-range
//! results are clamped in both directions, so every function here is total on
//! valid images.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Scale of the lightness channel at the network boundary.
pub const L_SCALE: f32 = 100.0;
/// Scale of both chroma channels at the network boundary.
pub const AB_SCALE: f32 = 128.0;

pub const AB_MIN: f32 = -128.0;
pub const AB_MAX: f32 = 127.0;

/// Linear sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const DELTA: f64 = 6.0 / 29.0;

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Rgb8Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Rgb8Image({}x{})", self.width, self.height)
    }
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("image", format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::dim(
                "image data",
                format!("{width}x{height} RGB needs {} bytes, got {}", width * height * 3, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Planar CIELAB image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl LabImage {
    /// Builds an image from planes, clamping values into the valid ranges.
    pub fn new(width: usize, height: usize, mut l: Vec<f32>, mut a: Vec<f32>, mut b: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(Error::dim("image", format!("empty image {width}x{height}")));
        }
        for (name, plane) in [("L plane", &l), ("A plane", &a), ("B plane", &b)] {
            if plane.len() != n {
                return Err(Error::dim(name, format!("expected {n} values, got {}", plane.len())));
            }
        }
        l.iter_mut().for_each(|v| *v = v.clamp(0.0, 100.0));
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v = v.clamp(AB_MIN, AB_MAX));
        Ok(Self { width, height, l, a, b })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Reference white: XYZ of linear (1, 1, 1), so every gray maps to a = b = 0.
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn xyz_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_XYZ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|v| v / det))
}

/// One pixel to unclamped `(L, a, b)`.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_decode(c as f64 / 255.0));
    let xyz = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let wp = white();
    let [fx, fy, fz] = [lab_f(xyz[0] / wp[0]), lab_f(xyz[1] / wp[1]), lab_f(xyz[2] / wp[2])];
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// One `(L, a, b)` triple to clamped 8-bit RGB.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white();
    let xyz = [wp[0] * lab_f_inv(fx), wp[1] * lab_f_inv(fy), wp[2] * lab_f_inv(fz)];
    let m = xyz_to_rgb_matrix();
    let lin = m.map(|row| row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    lin.map(|c| (srgb_encode(c.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn rgb_to_lab(img: &Rgb8Image) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [lv, av, bv] = rgb_pixel_to_lab([px[0], px[1], px[2]]);
        l.push(lv as f32);
        a.push(av as f32);
        b.push(bv as f32);
    }
    LabImage::new(img.width, img.height, l, a, b).expect("planes sized from a valid image")
}

pub fn lab_to_rgb(img: &LabImage) -> Rgb8Image {
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        data.extend(lab_pixel_to_rgb([img.l[i] as f64, img.a[i] as f64, img.b[i] as f64]));
    }
    Rgb8Image::new(img.width, img.height, data).expect("buffer sized from a valid image")
}

/// `(3, H, W)` tensor of `L/100`, `a/128`, `b/128`.
pub fn normalize_lab(img: &LabImage) -> Tensor {
    let mut data = Vec::with_capacity(3 * img.l.len());
    data.extend(img.l.iter().map(|v| v / L_SCALE));
    data.extend(img.a.iter().map(|v| v / AB_SCALE));
    data.extend(img.b.iter().map(|v| v / AB_SCALE));
    Tensor::new(&[3, img.height, img.width], data).expect("planes sized from a valid image")
}

/// Inverse of [`normalize_lab`]. Accepts `(3, H, W)` or `(1, 3, H, W)`;
/// values are clamped into the LAB ranges.
pub fn denormalize_lab(t: &Tensor) -> Result<LabImage> {
    let (h, w) = match t.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        other => {
            return Err(Error::dim(
                "channels",
                format!("expected a (3, H, W) tensor, got shape {other:?}"),
            ))
        }
    };
    let plane = h * w;
    let d = t.data();
    LabImage::new(
        w,
        h,
        d[..plane].iter().map(|v| v * L_SCALE).collect(),
        d[plane..2 * plane].iter().map(|v| v * AB_SCALE).collect(),
        d[2 * plane..].iter().map(|v| v * AB_SCALE).collect(),
    )
}
