//! Dataset layout, train/test split, limited-label selection, folds, and
//! image/mask decoding.
//!
//! A dataset root holds `images/<name>.png` and optionally
//! `masks/<name>.png`. Records are paired by file stem.

pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use synth::{generate_synthetic, ShapeFamily, SynthSpec};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.7;

// Distinct ChaCha streams so split, label and fold permutations stay
// independent under one seed.
const SPLIT_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;
const FOLD_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub split: Split,
    pub labeled: bool,
    pub fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
    pub train_frac: Option<f64>,
    pub labeled_fraction: Option<f64>,
    pub folds_k: Option<usize>,
    pub seed: Option<u64>,
}

fn permutation(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

impl DatasetManifest {
    fn indices(&self, f: impl Fn(&Record) -> bool) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| f(&self.records[i])).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(|r| r.split == Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(|r| r.split == Split::Test)
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.indices(|r| r.labeled)
    }

    /// Labeled records in fold `f`.
    pub fn fold_indices(&self, f: usize) -> Vec<usize> {
        self.indices(|r| r.labeled && r.fold == Some(f))
    }

    /// Labeled records outside fold `f`.
    pub fn fold_train_indices(&self, f: usize) -> Vec<usize> {
        self.indices(|r| r.labeled && r.fold != Some(f))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_file() && is_png(&p) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p);
            }
        }
    }
    Ok(out)
}

/// Scans `root` and pairs images with masks by name. Every record starts in
/// the training split, unlabeled and without a fold.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let img_dir = root.join("images");
    if !img_dir.is_dir() {
        return Err(Error::Data(format!(
            "dataset root {} has no images/ directory",
            root.display()
        )));
    }
    let images = png_stems(&img_dir)?;
    if images.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", img_dir.display())));
    }
    let mask_dir = root.join("masks");
    let masks = if mask_dir.is_dir() {
        png_stems(&mask_dir)?
    } else {
        BTreeMap::new()
    };
    for stem in masks.keys().filter(|s| !images.contains_key(*s)) {
        log::warn!("mask `{stem}` has no matching image; ignored");
    }
    let records = images
        .into_iter()
        .map(|(name, image)| Record {
            mask: masks.get(&name).cloned(),
            name,
            image,
            split: Split::Train,
            labeled: false,
            fold: None,
        })
        .collect();
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        records,
        train_frac: None,
        labeled_fraction: None,
        folds_k: None,
        seed: None,
    })
}

/// Seeded shuffle into `round(train_frac * n)` training and the remaining
/// test records. Clears any label and fold assignment.
pub fn split(manifest: &DatasetManifest, train_frac: f64, seed: u64) -> Result<DatasetManifest> {
    let n = manifest.records.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 records to split, got {n}")));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac must be in (0,1), got {train_frac}")));
    }
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut out = manifest.clone();
    for (rank, &i) in permutation(n, seed, SPLIT_STREAM).iter().enumerate() {
        let r = &mut out.records[i];
        r.split = if rank < n_train { Split::Train } else { Split::Test };
        r.labeled = false;
        r.fold = None;
    }
    out.train_frac = Some(train_frac);
    out.labeled_fraction = None;
    out.folds_k = None;
    out.seed = Some(seed);
    Ok(out)
}

/// Marks `ceil(fraction * |train|)` training records as labeled. Only
/// records with a mask qualify. One seeded permutation is shared by every
/// fraction, so smaller fractions select subsets of larger ones.
pub fn limit_labels(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction must be in (0,1], got {fraction}")));
    }
    let train = manifest.train_indices();
    let candidates: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| manifest.records[i].mask.is_some())
        .collect();
    // The tolerance keeps e.g. 0.1 * 70 from rounding up to 8.
    let want = (fraction * train.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let k = want.min(candidates.len());
    if k == 0 {
        return Err(Error::Data(format!(
            "fraction {fraction} of {} training records ({} with masks) selects no labels",
            train.len(),
            candidates.len()
        )));
    }
    if k < want {
        log::warn!("only {} training records have masks; labeling {k} instead of {want}", candidates.len());
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.labeled = false;
        r.fold = None;
    }
    for &p in &permutation(candidates.len(), seed, LABEL_STREAM)[..k] {
        out.records[candidates[p]].labeled = true;
    }
    out.labeled_fraction = Some(fraction);
    out.folds_k = None;
    Ok(out)
}

/// Partitions the labeled records into `k` folds of near-equal size.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    let labeled = manifest.labeled_indices();
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2 for a validation fold, got {k}")));
    }
    if k > labeled.len() {
        return Err(Error::Data(format!(
            "cannot make {k} folds from {} labeled records",
            labeled.len()
        )));
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.fold = None;
    }
    for (rank, &p) in permutation(labeled.len(), seed, FOLD_STREAM).iter().enumerate() {
        out.records[labeled[p]].fold = Some(rank % k);
    }
    out.folds_k = Some(k);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decoding

/// Decodes an image to `s x s x channels` values in `[0,1]`, resizing
/// bilinearly when needed.
pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Vec<f32>> {
    let img = image::open(path)?;
    let resize = |im: DynamicImage| {
        if im.width() as usize == size && im.height() as usize == size {
            im
        } else {
            im.resize_exact(size as u32, size as u32, FilterType::Triangle)
        }
    };
    let raw = match channels {
        1 => resize(DynamicImage::ImageLuma8(img.to_luma8())).into_luma8().into_raw(),
        3 => resize(DynamicImage::ImageRgb8(img.to_rgb8())).into_rgb8().into_raw(),
        c => return Err(Error::Config(format!("channels must be 1 or 3, got {c}"))),
    };
    Ok(raw.into_iter().map(|v| v as f32 / 255.0).collect())
}

/// Decodes a single-channel mask to `s x s` values in {0,1}. Stored values
/// must be 0 (background) or 1/255 (foreground); resizing is nearest
/// neighbour so the result stays binary.
pub fn load_mask(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path)?.to_luma8();
    if let Some(v) = img.as_raw().iter().find(|&&v| !matches!(v, 0 | 1 | 255)) {
        return Err(Error::Data(format!(
            "mask {} has non-binary value {v}",
            path.display()
        )));
    }
    let (w, h) = img.dimensions();
    let bin = GrayImage::from_raw(w, h, img.into_raw().into_iter().map(|v| if v > 0 { 255 } else { 0 }).collect())
        .expect("same dimensions");
    let bin = if w as usize == size && h as usize == size {
        bin
    } else {
        image::imageops::resize(&bin, size as u32, size as u32, FilterType::Nearest)
    };
    Ok(bin
        .into_raw()
        .into_iter()
        .map(|v| if v >= 128 { 1.0 } else { 0.0 })
        .collect())
}

/// Every record of a manifest decoded once at a fixed size.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub size: usize,
    pub channels: usize,
    images: Vec<Vec<f32>>,
    masks: Vec<Option<Vec<f32>>>,
}

impl LoadedDataset {
    pub fn load(manifest: &DatasetManifest, size: usize, channels: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.records.len());
        let mut masks = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            images.push(load_image(&r.image, size, channels)?);
            masks.push(r.mask.as_deref().map(|m| load_mask(m, size)).transpose()?);
        }
        Ok(LoadedDataset {
            size,
            channels,
            images,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images of the given records as `(n,s,s,c)`.
    pub fn images(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let data = idx.iter().flat_map(|&i| self.images[i].iter().copied()).collect();
        Tensor::from_vec(Shape::new(idx.len(), self.size, self.size, self.channels), data)
    }

    /// Masks of the given records as `(n,s,s,1)`; every record needs a mask.
    pub fn masks(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(idx.len() * self.size * self.size);
        for &i in idx {
            let m = self.masks[i]
                .as_ref()
                .ok_or_else(|| Error::Data(format!("record {i} has no mask")))?;
            data.extend_from_slice(m);
        }
        Tensor::from_vec(Shape::new(idx.len(), self.size, self.size, 1), data)
    }
}
