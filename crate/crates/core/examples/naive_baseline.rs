use crayon_core::codec::{encode, naive_fill_decode, GridSpec};
use crayon_core::metrics::psnr;

#[path = "../tests/common/synth.rs"]
mod synth;

fn main() {
    for n in [6, 40, 100] {
        let spec = GridSpec::new(n).unwrap();
        let ps: Vec<f64> = (0..8)
            .map(|i| {
                let img = synth::synthetic_image(100 + i, 64, 64);
                psnr(&img, &naive_fill_decode(&encode(&img, spec)).unwrap()).unwrap()
            })
            .collect();
        println!("n={n} mean {:.2} {:?}", ps.iter().sum::<f64>() / 8.0, ps.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>());
    }
}
