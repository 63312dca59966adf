use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crayon_core::codec::{self, decode_to_inputs, naive_fill_decode, relative_size_bound, CgcFile, GridSpec};
use crayon_core::color::{normalize_lab, rgb_to_lab, Rgb8Image};
use crayon_core::dataset::{build_manifest, load_rgb, resize_center_crop, save_rgb, SplitManifest};
use crayon_core::metrics::{evaluate_model, render_output, write_eval_csv, write_summary_csv, Colorizer, EvalSummary};
use crayon_core::model::{load_checkpoint, CrayonModel};
use crayon_core::nn::{concat_channels, slice_channels, Tensor};
use crayon_core::training::{self, TrainConfig};

use crate::{chart, DecodeArgs, EncodeArgs, EvalArgs, SweepArgs, TrainArgs, TrainingFlags};

/// Bad invocation; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn parse_phase(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| usage(format!("--phase expects `row,col`, got {s:?}")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad phase component {v:?}")));
    Ok((parse(r)?, parse(c)?))
}

/// Saves next to the destination first so a failure never leaves a partial
/// image at `path`.
fn save_image_atomic(path: &Path, img: &Rgb8Image) -> Result<()> {
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png");
    let tmp = path.with_file_name(format!(".{}.partial.{ext}", name.to_string_lossy()));
    save_rgb(&tmp, img)?;
    fs::rename(&tmp, path).with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let n = a.n as usize;
    let spec = match &a.phase {
        None => GridSpec::new(n),
        Some(p) => {
            let (r, c) = parse_phase(p)?;
            GridSpec::with_phase(n, r, c)
        }
    }
    .map_err(usage)?;
    let img = load_rgb(&a.input)?;
    let bound = relative_size_bound(n)?;
    if bound > 1.0 {
        log::warn!("n = {n}: size bound {bound:.4} exceeds 1, so the file is larger than raw RGB");
    }
    let file = codec::encode(&img, spec);
    file.write(&a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    let bytes = file.encoded_len();
    println!(
        "{}: {}x{}, n = {n}, {bytes} bytes, relative size {:.6} (bound {bound:.6})",
        a.output.display(),
        img.width(),
        img.height(),
        bytes as f64 / file.raw_rgb_len() as f64
    );
    Ok(())
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let file = CgcFile::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let img = match &a.model {
        Some(path) => {
            let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            colorize_file(&model, &file)?
        }
        None => naive_fill_decode(&file)?,
    };
    save_image_atomic(&a.output, &img)?;
    println!("{}: {}x{}", a.output.display(), img.width(), img.height());
    Ok(())
}

fn colorize_file(model: &CrayonModel, file: &CgcFile) -> Result<Rgb8Image> {
    let (l, hints) = decode_to_inputs(file)?;
    let (h, w) = (file.height, file.width);
    let out = model.forward(&l.reshape(&[1, 1, h, w])?, &hints.ab.reshape(&[1, 2, h, w])?)?;
    Ok(render_output(&out)?)
}

fn train_config(flags: &TrainingFlags, n: usize, out: &Path) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        n,
        epochs: flags.epochs as usize,
        lr: flags.lr,
        batch_size: flags.batch as usize,
        crop: flags.crop,
        seed: flags.seed,
        checkpoint_dir: out.to_path_buf(),
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn manifest_for(data: &Path, test_count: usize, seed: u64) -> Result<SplitManifest> {
    build_manifest(data, test_count, seed).with_context(|| format!("reading dataset {}", data.display()))
}

fn run_training(cfg: &TrainConfig, manifest: &SplitManifest) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.checkpoint_dir)?;
    manifest.save(&cfg.checkpoint_dir.join("manifest.tsv"))?;
    let outcome = training::train(cfg, manifest)?;
    let best = outcome.reports.iter().map(|r| r.val_psnr).fold(f64::NEG_INFINITY, f64::max);
    println!(
        "n = {}: {} epochs, best validation PSNR {best:.3} dB, checkpoint {}",
        cfg.n,
        outcome.reports.len(),
        outcome.checkpoint.display()
    );
    Ok(outcome.checkpoint)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(&a.flags, a.n as usize, &a.out)?;
    let manifest = manifest_for(&a.flags.data, a.flags.test_count, a.flags.seed)?;
    run_training(&cfg, &manifest)?;
    Ok(())
}

/// Test-split images cropped to `crop`; unusable files are skipped.
fn load_test_images(data: &Path, paths: &[PathBuf], crop: usize) -> Result<Vec<(String, Rgb8Image)>> {
    let mut out = Vec::new();
    for p in paths {
        match load_rgb(p).and_then(|img| resize_center_crop(&img, crop)) {
            Ok(img) => {
                let id = p.strip_prefix(data).unwrap_or(p).display().to_string();
                out.push((id, img));
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if out.is_empty() {
        bail!("no usable test images (the test split has {} entries)", paths.len());
    }
    Ok(out)
}

fn evaluate_to_csv(model: &dyn Colorizer, images: &[(String, Rgb8Image)], n: usize, out: &Path) -> Result<EvalSummary> {
    let summary = evaluate_model(model, images, GridSpec::new(n)?)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("eval_n{n}.csv"));
    write_eval_csv(&path, &summary.records)?;
    println!(
        "n = {n}: mean PSNR {:.3} dB, mean CSIM {:.4}, mean relative size {:.6} (bound {:.6}) -> {}",
        summary.mean_psnr,
        summary.mean_csim,
        summary.mean_relative_size,
        summary.bound,
        path.display()
    );
    Ok(summary)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.crop == 0 || !a.crop.is_multiple_of(8) {
        return Err(usage(format!("--crop {} must be a positive multiple of 8", a.crop)));
    }
    let manifest = manifest_for(&a.data, a.test_count, a.seed)?;
    let images = load_test_images(&a.data, &manifest.test_paths, a.crop)?;
    let model = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    evaluate_to_csv(&model, &images, a.n as usize, &a.out)?;
    Ok(())
}

/// Answers with each test image's true chroma; an upper-bound harness check.
struct TrueChroma(HashMap<String, Tensor>);

impl TrueChroma {
    fn new(images: &[(String, Rgb8Image)]) -> Result<Self> {
        let mut map = HashMap::new();
        for (id, img) in images {
            let lab = normalize_lab(&rgb_to_lab(img)).reshape(&[1, 3, img.height(), img.width()])?;
            map.insert(id.clone(), slice_channels(&lab, 1, 2)?);
        }
        Ok(TrueChroma(map))
    }
}

impl Colorizer for TrueChroma {
    fn colorize(&self, id: &str, l: &Tensor, _hints: &Tensor) -> crayon_core::Result<Tensor> {
        let ab = self
            .0
            .get(id)
            .ok_or_else(|| crayon_core::Error::Domain(format!("no reference chroma for {id}")))?;
        concat_channels(&[l, ab])
    }
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    if a.n_values.is_empty() || a.n_values.contains(&0) {
        return Err(usage("--n-values must list grid spacings of at least 1"));
    }
    let flags = &a.flags;
    let configs = a
        .n_values
        .iter()
        .map(|&n| train_config(flags, n as usize, &a.out))
        .collect::<Result<Vec<_>>>()?;
    let manifest = manifest_for(&flags.data, flags.test_count, flags.seed)?;
    let images = load_test_images(&flags.data, &manifest.test_paths, flags.crop)?;
    let oracle = if a.oracle { Some(TrueChroma::new(&images)?) } else { None };
    let models_dir = a.models.clone().unwrap_or_else(|| a.out.clone());

    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for cfg in &configs {
        let n = cfg.n;
        let result = (|| -> Result<EvalSummary> {
            if let Some(o) = &oracle {
                return evaluate_to_csv(o, &images, n, &a.out);
            }
            let ckpt = if a.eval_only {
                models_dir.join(format!("crayon_n{n}_best.ckpt"))
            } else {
                run_training(cfg, &manifest)?
            };
            let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            evaluate_to_csv(&model, &images, n, &a.out)
        })();
        match result {
            Ok(s) => summaries.push(s),
            Err(e) => {
                log::error!("n = {n} failed: {e:#}");
                failed.push(n);
            }
        }
    }
    fs::create_dir_all(&a.out)?;
    let summary_path = a.out.join("summary.csv");
    write_summary_csv(&summary_path, &summaries)?;
    println!("{} ({} rows)", summary_path.display(), summaries.len());
    if a.svg {
        let svg_path = a.out.join("summary.svg");
        fs::write(&svg_path, chart::summary_svg(&summaries))?;
        println!("{}", svg_path.display());
    }
    if !failed.is_empty() {
        bail!("{} of {} grid spacings failed: {failed:?}", failed.len(), configs.len());
    }
    Ok(())
}
