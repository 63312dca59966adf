//! Direct, unoptimized reference implementations of the quality metrics.

// Index loops mirror the windowed formulas term by term.
#![allow(clippy::needless_range_loop)]

use crayon_core::color::{rgb_to_lab, Rgb8Image};

pub fn psnr_oracle(a: &Rgb8Image, b: &Rgb8Image) -> f64 {
    let mut sse = 0.0f64;
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (pa, pb) = (a.pixel(r, c), b.pixel(r, c));
            for k in 0..3 {
                let d = pa[k] as f64 - pb[k] as f64;
                sse += d * d;
            }
        }
    }
    let mse = sse / (3 * a.width() * a.height()) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// SSIM of one plane, window by window, with two-pass weighted moments.
pub fn ssim_oracle(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    const SIZE: usize = 11;
    let sigma = 1.5f64;
    let mut g = [[0.0f64; SIZE]; SIZE];
    let mut total = 0.0;
    for (u, row) in g.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *cell = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            total += *cell;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut sum = 0.0;
    let mut count = 0;
    for top in 0..=h - SIZE {
        for left in 0..=w - SIZE {
            let at = |p: &[f64], u: usize, v: usize| p[(top + u) * w + left + v];
            let (mut mx, mut my) = (0.0, 0.0);
            for u in 0..SIZE {
                for v in 0..SIZE {
                    let wt = g[u][v] / total;
                    mx += wt * at(x, u, v);
                    my += wt * at(y, u, v);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..SIZE {
                for v in 0..SIZE {
                    let wt = g[u][v] / total;
                    let (dx, dy) = (at(x, u, v) - mx, at(y, u, v) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn csim_oracle(a: &Rgb8Image, b: &Rgb8Image) -> f64 {
    let (la, lb) = (rgb_to_lab(a), rgb_to_lab(b));
    let shift = |p: &[f32]| p.iter().map(|&v| v as f64 + 128.0).collect::<Vec<_>>();
    let (w, h) = (a.width(), a.height());
    let sa = ssim_oracle(&shift(&la.a), &shift(&lb.a), w, h);
    let sb = ssim_oracle(&shift(&la.b), &shift(&lb.b), w, h);
    ((sa + sb) / 2.0).clamp(0.0, 1.0)
}

pub fn random_image(seed: u64, w: usize, h: usize) -> Rgb8Image {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Rgb8Image::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

/// `base` with bounded uniform noise added to every sample.
pub fn perturbed(base: &Rgb8Image, seed: u64, amplitude: i32) -> Rgb8Image {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = base
        .data()
        .iter()
        .map(|&v| (v as i32 + rng.gen_range(-amplitude..=amplitude)).clamp(0, 255) as u8)
        .collect();
    Rgb8Image::new(base.width(), base.height(), data).unwrap()
}
