//! Directory ingestion, train/val/test splits and sample loading.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use walkdir::WalkDir;

use crate::codec::{decode_to_inputs, encode, GridSpec, HintPlanes};
use crate::color::{normalize_lab, rgb_to_lab, Rgb8Image};
use crate::error::{Error, Result};
use crate::model::SIZE_MULTIPLE;
use crate::nn::Tensor;

pub const DEFAULT_CROP: usize = 320;
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn load_rgb(path: &Path) -> Result<Rgb8Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Rgb8Image::new(w as usize, h as usize, img.into_raw())
}

/// Format follows the extension (PNG or JPEG).
pub fn save_rgb(path: &Path, img: &Rgb8Image) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::dim("image", "buffer does not match dimensions"))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Resizes the shortest side to `crop` (bilinear) and takes the centered
/// `crop x crop` window.
pub fn resize_center_crop(img: &Rgb8Image, crop: usize) -> Result<Rgb8Image> {
    if crop == 0 || img.width() == 0 || img.height() == 0 {
        return Err(Error::Domain(format!(
            "cannot crop a {}x{} image to {crop}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let buf = image::RgbImage::from_raw(w as u32, h as u32, img.data().to_vec()).expect("validated buffer");
    let short = w.min(h);
    let (nw, nh) = if w == short {
        (crop, (h * crop).div_ceil(short).max(crop))
    } else {
        ((w * crop).div_ceil(short).max(crop), crop)
    };
    let resized = if (nw, nh) == (w, h) {
        buf
    } else {
        imageops::resize(&buf, nw as u32, nh as u32, FilterType::Triangle)
    };
    let (x0, y0) = ((nw - crop) / 2, (nh - crop) / 2);
    let cropped = imageops::crop_imm(&resized, x0 as u32, y0 as u32, crop as u32, crop as u32).to_image();
    Rgb8Image::new(crop, crop, cropped.into_raw())
}

/// One training triple plus the cropped RGB it came from.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Quantized lightness as the decoder sees it, `(1, H, W)`.
    pub l: Tensor,
    pub hints: HintPlanes,
    /// Normalized A and B of the cropped image, `(2, H, W)`.
    pub target_ab: Tensor,
    pub rgb: Rgb8Image,
    pub source_path: PathBuf,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }
}

/// Builds a sample from an already-cropped image. Inputs go through the
/// codec so training sees exactly what decoding produces.
pub fn sample_from_image(rgb: Rgb8Image, spec: GridSpec, source_path: PathBuf) -> Result<Sample> {
    let (w, h) = (rgb.width(), rgb.height());
    if w % SIZE_MULTIPLE != 0 || h % SIZE_MULTIPLE != 0 {
        return Err(Error::dim(
            "spatial",
            format!("{w}x{h} is not divisible by {SIZE_MULTIPLE}"),
        ));
    }
    let (l, hints) = decode_to_inputs(&encode(&rgb, spec))?;
    let lab = normalize_lab(&rgb_to_lab(&rgb));
    let target_ab = Tensor::new(&[2, h, w], lab.data()[h * w..].to_vec())?;
    Ok(Sample {
        l,
        hints,
        target_ab,
        rgb,
        source_path,
    })
}

pub fn load_sample(path: &Path, crop: usize, spec: GridSpec) -> Result<Sample> {
    if !crop.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::Domain(format!("crop {crop} is not a multiple of {SIZE_MULTIPLE}")));
    }
    let rgb = resize_center_crop(&load_rgb(path)?, crop)?;
    sample_from_image(rgb, spec, path.to_path_buf())
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<Sample>,
    /// Files that could not be used, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Loads files in parallel; output order follows `paths`. Unusable files
/// are logged and skipped.
pub fn load_samples(paths: &[PathBuf], crop: usize, spec: GridSpec) -> LoadReport {
    let results: Vec<_> = paths.par_iter().map(|p| (p, load_sample(p, crop, spec))).collect();
    let mut report = LoadReport::default();
    for (p, r) in results {
        match r {
            Ok(s) => report.samples.push(s),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                report.skipped.push((p.clone(), e.to_string()));
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train_paths: Vec<PathBuf>,
    pub val_paths: Vec<PathBuf>,
    pub test_paths: Vec<PathBuf>,
    pub seed: u64,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn scan(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion {
            detail: "missing image directory".into(),
            paths: vec![dir.to_path_buf()],
        });
    }
    let mut found = Vec::new();
    let mut bad = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        match entry {
            Ok(e) if e.file_type().is_file() && is_image(e.path()) => found.push(e.into_path()),
            Ok(_) => {}
            Err(e) => bad.push(e.path().map_or_else(|| dir.to_path_buf(), Path::to_path_buf)),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion {
            detail: "unreadable entries".into(),
            paths: bad,
        });
    }
    found.sort();
    Ok(found)
}

/// Scans `<root>/train` and `<root>/val`, then moves `test_count` randomly
/// chosen validation images into the test split.
pub fn build_manifest(root: &Path, test_count: usize, seed: u64) -> Result<SplitManifest> {
    let train_paths = scan(&root.join("train"))?;
    let val_all = scan(&root.join("val"))?;
    if test_count > val_all.len() {
        return Err(Error::Domain(format!(
            "test split of {test_count} requested but only {} validation images exist",
            val_all.len()
        )));
    }
    let mut idx: Vec<usize> = (0..val_all.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; val_all.len()];
    for &i in &idx[..test_count] {
        is_test[i] = true;
    }
    let (test, val): (Vec<_>, Vec<_>) = val_all.into_iter().zip(is_test).partition(|(_, t)| *t);
    Ok(SplitManifest {
        train_paths,
        val_paths: val.into_iter().map(|(p, _)| p).collect(),
        test_paths: test.into_iter().map(|(p, _)| p).collect(),
        seed,
    })
}

impl SplitManifest {
    pub fn is_empty(&self) -> bool {
        self.train_paths.is_empty()
    }

    /// One `split<TAB>path` line per image, preceded by a `#seed` line.
    pub fn to_text(&self) -> String {
        let mut out = format!("#seed\t{}\n", self.seed);
        for (split, paths) in [("train", &self.train_paths), ("val", &self.val_paths), ("test", &self.test_paths)] {
            for p in paths {
                out.push_str(&format!("{split}\t{}\n", p.display()));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = SplitManifest {
            train_paths: Vec::new(),
            val_paths: Vec::new(),
            test_paths: Vec::new(),
            seed: 0,
        };
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Decode(format!("manifest line {}: {line:?}", no + 1));
            let (key, value) = line.split_once('\t').ok_or_else(bad)?;
            match key {
                "#seed" => m.seed = value.parse().map_err(|_| bad())?,
                "train" => m.train_paths.push(value.into()),
                "val" => m.val_paths.push(value.into()),
                "test" => m.test_paths.push(value.into()),
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Sample visiting order for one epoch; depends only on `(len, seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    idx.shuffle(&mut rng);
    idx
}

/// Stacked `(B, C, H, W)` tensors for one optimizer step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub l: Tensor,
    pub hints: Tensor,
    pub target_ab: Tensor,
}

pub fn assemble_batch(samples: &[Sample], indices: &[usize]) -> Result<Batch> {
    let first = indices
        .first()
        .map(|&i| &samples[i])
        .ok_or_else(|| Error::Domain("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut l = Vec::with_capacity(indices.len() * h * w);
    let mut hints = Vec::with_capacity(indices.len() * 2 * h * w);
    let mut target = Vec::with_capacity(indices.len() * 2 * h * w);
    for &i in indices {
        let s = &samples[i];
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::dim(
                "spatial",
                format!("batch mixes {h}x{w} with {}x{} ({})", s.height(), s.width(), s.source_path.display()),
            ));
        }
        l.extend_from_slice(s.l.data());
        hints.extend_from_slice(s.hints.ab.data());
        target.extend_from_slice(s.target_ab.data());
    }
    let b = indices.len();
    Ok(Batch {
        l: Tensor::new(&[b, 1, h, w], l)?,
        hints: Tensor::new(&[b, 2, h, w], hints)?,
        target_ab: Tensor::new(&[b, 2, h, w], target)?,
    })
}
