//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.
//!
//! `CRAYON_ACCEPTANCE=1,2,7` restricts the run to the listed criteria.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use common::gradcheck;
use common::oracles::{csim_oracle, perturbed, psnr_oracle, random_image};
use common::synth::synthetic_image;
use crayon_core::codec::{encode, relative_size_bound, CgcFile, GridSpec};
use crayon_core::color::{normalize_lab, rgb_to_lab, Rgb8Image};
use crayon_core::dataset::{build_manifest, save_rgb};
use crayon_core::metrics::{csim, evaluate_model, psnr, write_summary_csv, Colorizer};
use crayon_core::model::{build_crayon, crayon_layers, CrayonModel, Source};
use crayon_core::nn::{concat_channels, slice_channels, Tensor};
use crayon_core::training::{reconstruct, train, validate, TrainConfig, TrainOutcome};
use crayon_core::{Error, Result};

const SWEEP_N: [usize; 8] = [6, 15, 20, 40, 50, 60, 80, 100];

const BOUND_TOLERANCE: f64 = 1e-12;
const SIZE_SLACK_BYTES: f64 = 64.0;
const IMAGES_PER_N: usize = 20;

const OVERFIT_IMAGES: usize = 8;
const OVERFIT_CROP: usize = 64;
const OVERFIT_N: usize = 6;
const OVERFIT_STEPS: usize = 200;
const OVERFIT_BATCH: usize = 8;
const OVERFIT_LR: f64 = 3e-4;
const OVERFIT_SEED: u64 = 1;
const MSE_RATIO_MAX: f64 = 0.1;
const PSNR_MIN_DB: f64 = 30.0;

const HINT_WINS_MIN: usize = 7;

const PSNR_ORACLE_TOL: f64 = 1e-6;
const CSIM_ORACLE_TOL: f64 = 1e-5;
const METRIC_PAIRS: usize = 5;

const L_STEP: f64 = 100.0 / 255.0;
const AB_TOL: f64 = 0.5;

const TREND_N: [usize; 3] = [6, 40, 100];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Training runs shared between criteria, keyed by (n, run label).
struct Runs {
    data_root: tempfile::TempDir,
    out_root: tempfile::TempDir,
    done: HashMap<(usize, &'static str), (TrainOutcome, PathBuf)>,
}

impl Runs {
    fn new() -> Self {
        let data_root = tempfile::tempdir().expect("tempdir");
        for (split, seeds) in [("train", 100..100 + OVERFIT_IMAGES as u64), ("val", 200..202)] {
            let dir = data_root.path().join(split);
            fs::create_dir_all(&dir).expect("mkdir");
            for s in seeds {
                let img = synthetic_image(s, OVERFIT_CROP, OVERFIT_CROP);
                save_rgb(&dir.join(format!("img{s}.png")), &img).expect("write png");
            }
        }
        Runs {
            data_root,
            out_root: tempfile::tempdir().expect("tempdir"),
            done: HashMap::new(),
        }
    }

    fn get(&mut self, n: usize, label: &'static str) -> Result<&(TrainOutcome, PathBuf)> {
        if !self.done.contains_key(&(n, label)) {
            let out_dir = self.out_root.path().join(format!("{label}_n{n}"));
            let cfg = TrainConfig {
                n,
                epochs: OVERFIT_STEPS * OVERFIT_BATCH / OVERFIT_IMAGES,
                lr: OVERFIT_LR,
                batch_size: OVERFIT_BATCH,
                crop: OVERFIT_CROP,
                seed: OVERFIT_SEED,
                checkpoint_dir: out_dir,
            };
            let manifest = build_manifest(self.data_root.path(), 0, OVERFIT_SEED)?;
            let t0 = Instant::now();
            let outcome = train(&cfg, &manifest)?;
            eprintln!("  trained n={n} ({label}) in {:.0?}", t0.elapsed());
            self.done.insert((n, label), (outcome, cfg.epoch_csv_path()));
        }
        Ok(&self.done[&(n, label)])
    }
}

/// Returns each image's true chroma.
struct Oracle(HashMap<String, Tensor>);

impl Colorizer for Oracle {
    fn colorize(&self, id: &str, l: &Tensor, _hints: &Tensor) -> Result<Tensor> {
        concat_channels(&[l, &self.0[id]])
    }
}

fn criterion_1() -> Result<Outcome> {
    let mut worst = 0f64;
    for n in SWEEP_N {
        let expected = 1.0 / 3.0 + 1.0 / (n * n) as f64;
        worst = worst.max((relative_size_bound(n)? - expected).abs());
    }
    let images: Vec<(String, Rgb8Image)> = (0..2).map(|i| (format!("t{i}"), synthetic_image(i, 32, 32))).collect();
    let oracle = Oracle(
        images
            .iter()
            .map(|(id, img)| {
                let lab = normalize_lab(&rgb_to_lab(img)).reshape(&[1, 3, 32, 32])?;
                Ok((id.clone(), slice_channels(&lab, 1, 2)?))
            })
            .collect::<Result<_>>()?,
    );
    let summaries = SWEEP_N
        .iter()
        .map(|&n| evaluate_model(&oracle, &images, GridSpec::new(n)?))
        .collect::<Result<Vec<_>>>()?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("summary.csv");
    write_summary_csv(&path, &summaries)?;
    let text = fs::read_to_string(&path)?;
    let mut csv_worst = 0f64;
    let mut rows = 0;
    for (line, n) in text.lines().skip(1).zip(SWEEP_N) {
        let cols: Vec<&str> = line.split(',').collect();
        let bound: f64 = cols[4].parse().map_err(|_| Error::Decode(line.into()))?;
        csv_worst = csv_worst.max((bound - (1.0 / 3.0 + 1.0 / (n * n) as f64)).abs());
        rows += (cols[0] == n.to_string()) as usize;
    }
    Ok(outcome(
        worst <= BOUND_TOLERANCE && csv_worst <= BOUND_TOLERANCE && rows == SWEEP_N.len(),
        format!("max |bound - (1/3 + 1/n^2)| = {worst:e}, summary CSV max error {csv_worst:e}, {rows}/8 rows"),
    ))
}

fn criterion_2() -> Result<Outcome> {
    let sizes = [(320, 320), (64, 64), (100, 75), (33, 17), (256, 192)];
    let mut worst_margin = f64::INFINITY;
    let mut checked = 0;
    for n in SWEEP_N {
        for i in 0..IMAGES_PER_N {
            let (w, h) = sizes[i % sizes.len()];
            let img = if i % 2 == 0 {
                synthetic_image(i as u64, w, h)
            } else {
                random_image(i as u64, w, h)
            };
            let bytes = encode(&img, GridSpec::new(n)?).to_bytes().len() as f64;
            let limit = relative_size_bound(n)? * (3 * w * h) as f64 + SIZE_SLACK_BYTES;
            worst_margin = worst_margin.min(limit - bytes);
            checked += 1;
        }
    }
    Ok(outcome(
        worst_margin >= 0.0,
        format!("{checked} encodes, smallest margin under the limit {worst_margin:.1} bytes"),
    ))
}

/// (count, side, channels) runs of the declared per-layer output sizes at a
/// 320x320 input (row 51 emits 5 channels, row 77 carries 256).
const DECLARED_OUTPUTS: &[(usize, usize, usize)] = &[
    (1, 320, 1),
    (1, 320, 2),
    (4, 320, 64),
    (1, 160, 64),
    (4, 160, 128),
    (1, 80, 128),
    (4, 80, 256),
    (1, 40, 256),
    (18, 40, 512),
    (2, 80, 256),
    (1, 80, 512),
    (2, 80, 256),
    (2, 160, 128),
    (1, 160, 256),
    (2, 160, 128),
    (2, 320, 128),
    (1, 320, 192),
    (2, 320, 128),
    (1, 320, 2),
    (1, 320, 5),
    (24, 320, 64),
    (2, 320, 256),
    (1, 320, 2),
    (1, 320, 3),
];

fn expect_construction_failure(mutate: impl FnOnce(&mut Vec<crayon_core::model::LayerSpec>), at: usize) -> bool {
    let mut layers = crayon_layers();
    mutate(&mut layers);
    matches!(CrayonModel::from_layers(layers, 0), Err(Error::Construction { layer, .. }) if layer == at)
}

fn criterion_3() -> Result<Outcome> {
    let expected: Vec<(usize, usize)> = DECLARED_OUTPUTS
        .iter()
        .flat_map(|&(k, x, c)| std::iter::repeat_n((x, c), k))
        .collect();
    let model = build_crayon(0)?;
    let img = synthetic_image(7, 320, 320);
    let lab = normalize_lab(&rgb_to_lab(&img));
    let l = Tensor::new(&[1, 1, 320, 320], lab.data()[..320 * 320].to_vec())?;
    let ab = Tensor::zeros(&[1, 2, 320, 320]);
    let (_, shapes) = model.forward_shapes(&l, &ab)?;
    let mismatches: Vec<usize> = (0..expected.len().max(shapes.len()))
        .filter(|&i| {
            let got = shapes.get(i).map(|s| (s[2], s[1]));
            let side_ok = shapes.get(i).is_some_and(|s| s[2] == s[3]);
            got != expected.get(i).copied() || !side_ok
        })
        .collect();
    let mutations = [
        expect_construction_failure(|l| l[42].data_from = Source::Concat(vec![15, 41]), 42),
        expect_construction_failure(|l| l[51].c_out = 3, 51),
        expect_construction_failure(|l| l[60].data_from = Source::Sum(vec![54, 50]), 60),
        expect_construction_failure(|l| l[77].c_out = 64, 77),
        expect_construction_failure(|l| l[16].x_out = 80, 16),
    ];
    let rejected = mutations.iter().filter(|&&m| m).count();
    Ok(outcome(
        expected.len() == 80 && mismatches.is_empty() && rejected == mutations.len(),
        format!(
            "{} layers checked, mismatches at {mismatches:?}; {rejected}/{} rewirings rejected at the altered layer",
            shapes.len(),
            mutations.len()
        ),
    ))
}

fn criterion_4() -> Result<Outcome> {
    let checks = gradcheck::all_checks(1000);
    let worst = checks.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).expect("checks ran");
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    Ok(outcome(
        failed.is_empty(),
        format!(
            "{} checks ({} cases per primitive), worst {:.2e} ({}); failed: {failed:?}",
            checks.len(),
            gradcheck::CASES,
            worst.rel_err,
            worst.name
        ),
    ))
}

fn criterion_5(runs: &mut Runs) -> Result<Outcome> {
    let (run, _) = runs.get(OVERFIT_N, "overfit")?;
    let initial = run.reports[0].train_loss;
    let (mean_psnr, final_loss) = validate(&run.final_model, &run.train_samples)?;
    let ratio = final_loss / initial;
    Ok(outcome(
        run.train_samples.len() == OVERFIT_IMAGES && ratio <= MSE_RATIO_MAX && mean_psnr >= PSNR_MIN_DB,
        format!(
            "initial MSE {initial:.5}, final {final_loss:.6} (ratio {ratio:.5} <= {MSE_RATIO_MAX}), mean PSNR {mean_psnr:.2} dB (>= {PSNR_MIN_DB})"
        ),
    ))
}

fn criterion_6(runs: &mut Runs) -> Result<Outcome> {
    let (run, _) = runs.get(OVERFIT_N, "overfit")?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in &run.train_samples {
        let zero = Tensor::zeros(s.hints.ab.shape());
        let with = psnr(&s.rgb, &reconstruct(&run.final_model, s, None)?.1)?;
        let without = psnr(&s.rgb, &reconstruct(&run.final_model, s, Some(&zero))?.1)?;
        wins += (with > without) as usize;
        pairs.push(format!("{with:.1}/{without:.1}"));
    }
    Ok(outcome(
        wins >= HINT_WINS_MIN,
        format!("true hints beat zero hints on {wins}/{} images (PSNR true/zero: {})", run.train_samples.len(), pairs.join(" ")),
    ))
}

fn criterion_7() -> Result<Outcome> {
    let mut psnr_err = 0f64;
    let mut csim_err = 0f64;
    for seed in 0..METRIC_PAIRS as u64 {
        let a = random_image(seed, 16, 16);
        let b = perturbed(&a, seed + 50, 25);
        psnr_err = psnr_err.max((psnr(&a, &b)? - psnr_oracle(&a, &b)).abs());
        let a = random_image(seed + 10, 32, 32);
        let b = perturbed(&a, seed + 60, 40);
        csim_err = csim_err.max((csim(&a, &b)? - csim_oracle(&a, &b)).abs());
    }
    Ok(outcome(
        psnr_err <= PSNR_ORACLE_TOL && csim_err <= CSIM_ORACLE_TOL,
        format!("{METRIC_PAIRS} pairs: max PSNR error {psnr_err:.2e} dB, max CSIM error {csim_err:.2e}"),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let sizes = [(37, 23), (64, 64), (20, 41), (1, 1), (45, 60)];
    let mut l_worst = 0f64;
    let mut ab_worst = 0f64;
    let mut cases = 0;
    for n in [1, 3, 20] {
        for (i, &(w, h)) in sizes.iter().enumerate() {
            let img = if i % 2 == 0 {
                random_image(i as u64 + 31 * n as u64, w, h)
            } else {
                synthetic_image(i as u64, w, h)
            };
            let original = rgb_to_lab(&img);
            let file = CgcFile::from_bytes(&encode(&img, GridSpec::new(n)?).to_bytes())?;
            let decoded = file.reconstruct_lab()?;
            for p in 0..w * h {
                l_worst = l_worst.max((decoded.l[p] as f64 - original.l[p] as f64).abs());
                if (p / w) % n == 0 && (p % w) % n == 0 {
                    ab_worst = ab_worst.max((decoded.a[p] as f64 - original.a[p] as f64).abs());
                    ab_worst = ab_worst.max((decoded.b[p] as f64 - original.b[p] as f64).abs());
                }
            }
            cases += 1;
        }
    }
    Ok(outcome(
        l_worst <= L_STEP && ab_worst <= AB_TOL,
        format!("{cases} images: max L error {l_worst:.4} (step {L_STEP:.4}), max grid AB error {ab_worst:.4}"),
    ))
}

fn criterion_9(runs: &mut Runs) -> Result<Outcome> {
    let mut means = Vec::new();
    for n in TREND_N {
        let label = if n == OVERFIT_N { "overfit" } else { "trend" };
        let (run, _) = runs.get(n, label)?;
        means.push((n, validate(&run.final_model, &run.train_samples)?.0));
    }
    let first = means[0].1;
    let last = means[means.len() - 1].1;
    let listing: Vec<String> = means.iter().map(|(n, p)| format!("n={n}: {p:.2} dB")).collect();
    Ok(outcome(first > last, listing.join(", ")))
}

fn criterion_10(runs: &mut Runs) -> Result<Outcome> {
    let first = fs::read(&runs.get(OVERFIT_N, "overfit")?.1)?;
    let second = fs::read(&runs.get(OVERFIT_N, "repeat")?.1)?;
    Ok(outcome(
        first == second && !first.is_empty(),
        format!("epoch CSVs of two seeded runs: {} and {} bytes, identical: {}", first.len(), second.len(), first == second),
    ))
}

fn selected() -> Option<Vec<usize>> {
    std::env::var("CRAYON_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() {
    // Bit-identical training is promised for single-threaded runs.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let only = selected();
    let mut runs = Runs::new();
    type Criterion<'a> = (usize, &'static str, Box<dyn FnMut(&mut Runs) -> Result<Outcome> + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "size bound formula", Box::new(|_| criterion_1())),
        (2, "compressed size within bound", Box::new(|_| criterion_2())),
        (3, "architecture audit", Box::new(|_| criterion_3())),
        (4, "finite-difference gradients", Box::new(|_| criterion_4())),
        (5, "overfit smoke", Box::new(criterion_5)),
        (6, "hint advantage", Box::new(criterion_6)),
        (7, "metric oracles", Box::new(|_| criterion_7())),
        (8, "codec round trip", Box::new(|_| criterion_8())),
        (9, "quality falls with grid spacing", Box::new(criterion_9)),
        (10, "training determinism", Box::new(criterion_10)),
    ];
    let mut failures = 0;
    for (id, name, mut run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut runs)));
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failures += (!pass) as usize;
        println!(
            "criterion {id:>2} [{}] {name}: {detail} ({:.1?})",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
