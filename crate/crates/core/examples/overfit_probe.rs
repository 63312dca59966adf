use std::time::Instant;

use crayon_core::codec::GridSpec;
use crayon_core::dataset::sample_from_image;
use crayon_core::model::build_crayon;
use crayon_core::training::{train_model, validate, TrainConfig};

#[path = "../tests/common/synth.rs"]
mod synth;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let spec = GridSpec::new(n).unwrap();
    let samples: Vec<_> = (0..8)
        .map(|i| sample_from_image(synth::synthetic_image(100 + i, 64, 64), spec, format!("s{i}").into()).unwrap())
        .collect();
    let dir = std::env::temp_dir().join("overfit_probe");
    let cfg = TrainConfig {
        epochs: steps,
        lr,
        crop: 64,
        seed: 1,
        ..TrainConfig::new(n, &dir)
    };
    // Optional `layer:factor,...` rescaling of initial weights.
    let mut model = build_crayon(cfg.seed).unwrap();
    for item in args.next().unwrap_or_default().split(',').filter(|s| !s.is_empty()) {
        let (layer, factor) = item.split_once(':').unwrap();
        let p = model.params_mut().get_mut(&layer.parse().unwrap()).unwrap();
        let f: f32 = factor.parse().unwrap();
        p.weight.value.data_mut().iter_mut().for_each(|w| *w *= f);
    }
    let t0 = Instant::now();
    let (reports, model) = train_model(&cfg, model, &samples, &samples[..1]).unwrap();
    let (p, l) = validate(&model, &samples).unwrap();
    println!(
        "initial {} final_epoch {} after psnr {p:.2} loss {l:.6} ratio {:.4} in {:?}",
        reports[0].train_loss,
        reports.last().unwrap().train_loss,
        l / reports[0].train_loss,
        t0.elapsed()
    );
}
