//! Smooth synthetic color images: a two-color linear gradient with soft
//! Gaussian color blobs on top.

use crayon_core::color::Rgb8Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_: i32| rng.gen_range(40.0..215.0))
}

pub fn synthetic_image(seed: u64, width: usize, height: usize) -> Rgb8Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f64; 3], f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                color(&mut rng),
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.12..0.25) * width.min(height) as f64,
            )
        })
        .collect();
    let diag = ((width * width + height * height) as f64).sqrt();
    let mut img = Rgb8Image::filled(width, height, [0, 0, 0]).unwrap();
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64 - width as f64 / 2.0, r as f64 - height as f64 / 2.0);
            let t = ((x * dx + y * dy) / diag + 0.5).clamp(0.0, 1.0);
            let mut px: [f64; 3] = std::array::from_fn(|k| c0[k] * (1.0 - t) + c1[k] * t);
            for (bc, bx, by, s) in &blobs {
                let d2 = (c as f64 - bx).powi(2) + (r as f64 - by).powi(2);
                let w = (-d2 / (2.0 * s * s)).exp();
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - w) + bc[k] * w;
                }
            }
            img.set_pixel(r, c, px.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}
