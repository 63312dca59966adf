//! Per-n training loop with best-validation checkpointing.

use std::fs;
use std::path::PathBuf;

use crate::codec::GridSpec;
use crate::color::Rgb8Image;
use crate::dataset::{assemble_batch, epoch_order, load_samples, Sample, SplitManifest, DEFAULT_CROP};
use crate::error::{Error, Result};
use crate::metrics::{psnr, render_output};
use crate::model::{build_crayon, save_checkpoint, CrayonModel, SIZE_MULTIPLE};
use crate::nn::{mse_loss, slice_channels, AdamConfig, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(n: usize, checkpoint_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            n,
            epochs: 30,
            lr: 1e-4,
            batch_size: 8,
            crop: DEFAULT_CROP,
            seed: 0,
            checkpoint_dir: checkpoint_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.n)?;
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Domain(format!(
                "crop {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.crop
            )));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint_dir.join(format!("crayon_n{}_best.ckpt", self.n))
    }

    pub fn epoch_csv_path(&self) -> PathBuf {
        self.checkpoint_dir.join(format!("epochs_n{}.csv", self.n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
    pub canonical: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub reports: Vec<EpochReport>,
    /// Parameters after the last step, which may differ from the checkpoint.
    pub final_model: CrayonModel,
    pub train_samples: Vec<Sample>,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_psnr,canonical";

pub fn epoch_csv_line(r: &EpochReport) -> String {
    format!("{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_psnr, r.canonical)
}

/// AB-only MSE; the L channel is a passthrough and carries no gradient.
pub fn ab_loss(output: &Tensor, target_ab: &Tensor) -> Result<f64> {
    Ok(mse_loss(&slice_channels(output, 1, 2)?, target_ab)? as f64)
}

/// One forward/backward/ADAM update on `samples[indices]`; returns the
/// loss before the update.
pub fn train_step(model: &mut CrayonModel, samples: &[Sample], indices: &[usize], lr: f64, adam: &AdamConfig) -> Result<f64> {
    let batch = assemble_batch(samples, indices)?;
    let (loss, mut grads) = {
        let mut tape = Tape::new();
        let l = tape.input(batch.l);
        let ab = tape.input(batch.hints);
        let out = model.record(&mut tape, l, ab)?;
        let pred = tape.slice_channels(out, 1, 2)?;
        let target = tape.input(batch.target_ab);
        let loss = tape.mse(pred, target)?;
        let value = tape.value(loss)?.data()[0] as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        (value, tape.backward(loss)?)
    };
    model.load_gradients(&mut grads)?;
    model.adam_step(lr, adam)?;
    Ok(loss)
}

/// Model output rendered to RGB for one sample, using `hints` in place of
/// the sample's own when given.
pub fn reconstruct(model: &CrayonModel, sample: &Sample, hints: Option<&Tensor>) -> Result<(Tensor, Rgb8Image)> {
    let (h, w) = (sample.height(), sample.width());
    let l = sample.l.clone().reshape(&[1, 1, h, w])?;
    let ab = hints.unwrap_or(&sample.hints.ab).clone().reshape(&[1, 2, h, w])?;
    let out = model.forward(&l, &ab)?;
    let rgb = render_output(&out)?;
    Ok((out, rgb))
}

/// Mean PSNR against each sample's cropped RGB and mean AB loss.
pub fn validate(model: &CrayonModel, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Domain("validation needs at least one sample".into()));
    }
    let mut psnr_sum = 0.0;
    let mut loss_sum = 0.0;
    for s in samples {
        let (out, rgb) = reconstruct(model, s, None)?;
        let target = s.target_ab.clone().reshape(&[1, 2, s.height(), s.width()])?;
        loss_sum += ab_loss(&out, &target)?;
        psnr_sum += psnr(&s.rgb, &rgb)?;
    }
    let k = samples.len() as f64;
    Ok((psnr_sum / k, loss_sum / k))
}

fn param_stats(model: &CrayonModel) -> String {
    let mut max_abs = 0f32;
    let mut non_finite = Vec::new();
    for (i, p) in model.params() {
        for (name, t) in [("weight", &p.weight.value), ("bias", &p.bias.value)] {
            if !t.is_finite() {
                non_finite.push(format!("layer{i}.{name}"));
            }
            max_abs = t.data().iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
    }
    format!("max |param| {max_abs}, non-finite tensors: {non_finite:?}")
}

/// Trains from the manifest's train split, validating on its val split
/// after each epoch. The checkpoint is rewritten only when validation PSNR
/// strictly improves.
pub fn train(config: &TrainConfig, manifest: &SplitManifest) -> Result<TrainOutcome> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Domain("manifest has no training images".into()));
    }
    let spec = GridSpec::new(config.n)?;
    let train_set = load_samples(&manifest.train_paths, config.crop, spec).samples;
    let val_set = load_samples(&manifest.val_paths, config.crop, spec).samples;
    if train_set.is_empty() {
        return Err(Error::Ingestion {
            detail: "no usable training images".into(),
            paths: manifest.train_paths.clone(),
        });
    }
    let val_set = if val_set.is_empty() {
        log::warn!("no usable validation images; validating on the training set");
        train_set.clone()
    } else {
        val_set
    };
    train_on_samples(config, &train_set, &val_set).map(|(reports, final_model)| TrainOutcome {
        checkpoint: config.checkpoint_path(),
        reports,
        final_model,
        train_samples: train_set,
    })
}

/// The loop behind [`train`], for callers that already hold samples.
pub fn train_on_samples(config: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<(Vec<EpochReport>, CrayonModel)> {
    config.validate()?;
    train_model(config, build_crayon(config.seed)?, train_set, val_set)
}

/// Like [`train_on_samples`], starting from `model` instead of a fresh one.
pub fn train_model(
    config: &TrainConfig,
    mut model: CrayonModel,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<(Vec<EpochReport>, CrayonModel)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Domain("training and validation sets must be non-empty".into()));
    }
    fs::create_dir_all(&config.checkpoint_dir)?;
    let ckpt = config.checkpoint_path();
    let csv_path = config.epoch_csv_path();
    let mut csv = format!("{EPOCH_CSV_HEADER}\n");
    fs::write(&csv_path, &csv)?;

    let adam = AdamConfig::default();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=config.epochs {
        let order = epoch_order(train_set.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let loss = train_step(&mut model, train_set, chunk, config.lr, &adam)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    name: "training loss".into(),
                    detail: format!("epoch {epoch}, batch {}: loss {loss}; {}", b + 1, param_stats(&model)),
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        let (val_psnr, val_loss) = validate(&model, val_set)?;
        let canonical = val_psnr > best;
        if canonical {
            best = val_psnr;
            save_checkpoint(&model, &ckpt)?;
        }
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_psnr,
            canonical,
        };
        log::info!("{}", epoch_csv_line(&report));
        csv.push_str(&epoch_csv_line(&report));
        csv.push('\n');
        fs::write(&csv_path, &csv)?;
        reports.push(report);
    }
    Ok((reports, model))
}
