//! Experiment grid: seeds x variants x {BT, scratch} x label fractions x
//! folds, each cell being (optional pre-training) -> transfer -> fine-tune ->
//! test evaluation. Finished cells are appended to `runs.jsonl` under a
//! content-derived run key, so an interrupted grid resumes where it stopped.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::Checkpoint;
use super::train::{evaluate, finetune, transfer_encoder, Aggregation, EvalMetrics, FinetuneData, FinetuneOutcome};
use super::TrainConfig;
use crate::data::{limit_labels, load_dataset, make_folds, split, DatasetManifest, LoadedDataset, DEFAULT_TRAIN_FRAC};
use crate::error::{Error, Result};
use crate::models::{build_encoder, build_model, ModelArchConfig, Variant, DEFAULT_BASE_CHANNELS, DEFAULT_INPUT_SIZE};
use crate::selfsup::{pretrain, BTConfig, PretrainOutcome};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const CSV_HEADER: &str = "variant,bt,fraction,fold,seed,precision,dc,miou,epochs,wall_s";

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_train_frac() -> f64 {
    DEFAULT_TRAIN_FRAC
}
fn default_input_size() -> usize {
    DEFAULT_INPUT_SIZE
}
fn default_channels() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub base_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            base_channels: DEFAULT_BASE_CHANNELS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub lambda: f64,
    pub crop_scale: [f64; 2],
    pub rotation_degrees: [f64; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub projection_blocks: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let bt = BTConfig::default();
        PretrainSection {
            lambda: bt.lambda,
            crop_scale: bt.crop_scale,
            rotation_degrees: bt.rotation_degrees,
            epochs: bt.epochs,
            batch_size: bt.batch_size,
            learning_rate: TrainConfig::default().learning_rate,
            projection_blocks: bt.projection_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        FinetuneSection {
            learning_rate: t.learning_rate,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            early_stop_patience: t.early_stop_patience,
            min_delta: t.min_delta,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Pool confusion counts over all test images instead of averaging
    /// per-image metrics.
    pub pooled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub variants: Vec<Variant>,
    pub bt: Vec<bool>,
    pub fractions: Vec<f64>,
    pub folds_k: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    /// Parses a JSON config. A relative `dataset.root` is resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.root.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.root = dir.join(&cfg.dataset.root);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.variants.is_empty() || self.bt.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return bad("variants, bt, fractions and seeds must all be non-empty");
        }
        if self.folds_k < 2 {
            return bad("folds_k must be >= 2");
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("fraction {f} outside (0,1]")));
        }
        for &v in &self.variants {
            self.arch(v, 0).validate()?;
        }
        self.bt_config(0).validate()?;
        self.pretrain_train_config(0).validate()?;
        self.finetune_config(0, 0).validate()
    }

    pub fn arch(&self, variant: Variant, seed: u64) -> ModelArchConfig {
        ModelArchConfig::new(variant, self.dataset.input_size, self.dataset.channels, seed)
            .with_base_channels(self.model.base_channels)
    }

    pub fn bt_config(&self, seed: u64) -> BTConfig {
        let p = &self.pretrain;
        BTConfig {
            lambda: p.lambda,
            crop_scale: p.crop_scale,
            rotation_degrees: p.rotation_degrees,
            batch_size: p.batch_size,
            epochs: p.epochs,
            projection_blocks: p.projection_blocks,
            seed,
        }
    }

    /// Optimiser settings for pre-training: its own learning rate, epochs and
    /// batch size; plateau and early-stop rules shared with fine-tuning.
    pub fn pretrain_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain.learning_rate,
            max_epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            seed,
            ..self.finetune_config(seed, 0)
        }
    }

    pub fn finetune_config(&self, seed: u64, fold: usize) -> TrainConfig {
        let f = &self.finetune;
        TrainConfig {
            learning_rate: f.learning_rate,
            plateau_factor: f.plateau_factor,
            plateau_patience: f.plateau_patience,
            early_stop_patience: f.early_stop_patience,
            min_delta: f.min_delta,
            max_epochs: f.max_epochs,
            batch_size: f.batch_size,
            seed: seed.wrapping_mul(1000).wrapping_add(fold as u64),
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        if self.evaluation.pooled {
            Aggregation::Pooled
        } else {
            Aggregation::PerImage
        }
    }

    /// Hash of every setting that influences a single run. The grid lists
    /// (variants, bt, fractions, seeds) are excluded: a cell's identity is
    /// carried by its own coordinates, so extending the grid keeps earlier
    /// cells resumable.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            for k in ["variants", "bt", "fractions", "seeds"] {
                m.remove(k);
            }
        }
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Identity of one grid cell.
pub fn run_key(variant: Variant, bt: bool, fraction: f64, fold: usize, seed: u64, digest: &str) -> String {
    let id = serde_json::json!([variant, bt, fraction, fold, seed, digest]);
    hex(&Sha256::digest(id.to_string().as_bytes()))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_key: String,
    pub variant: Variant,
    pub bt: bool,
    pub fraction: f64,
    pub fold: usize,
    pub seed: u64,
    /// `"ok"` or `"error: <message>"`.
    pub status: String,
    pub precision: Option<f64>,
    pub dc: Option<f64>,
    pub miou: Option<f64>,
    pub epochs: Option<usize>,
    pub wall_s: f64,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.variant,
            self.bt,
            self.fraction,
            self.fold,
            self.seed,
            opt(self.precision),
            opt(self.dc),
            opt(self.miou),
            self.epochs.map(|e| e.to_string()).unwrap_or_default(),
            self.wall_s
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

/// Fold and seed aggregate of one (variant, bt, fraction) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub bt: bool,
    pub fraction: f64,
    pub runs: usize,
    pub failed: usize,
    pub precision: Option<MeanStd>,
    pub dc: Option<MeanStd>,
    pub miou: Option<MeanStd>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl MetricsReport {
    /// Builds aggregates over the rows, grouped in first-seen order.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut groups: Vec<((Variant, bool, f64), Vec<&ReportRow>)> = Vec::new();
        for r in &rows {
            let key = (r.variant, r.bt, r.fraction);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        let aggregates = groups
            .into_iter()
            .map(|((variant, bt, fraction), g)| {
                let ok: Vec<&&ReportRow> = g.iter().filter(|r| r.is_ok()).collect();
                let stat = |f: fn(&ReportRow) -> Option<f64>| {
                    let xs: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                    (!xs.is_empty()).then(|| MeanStd::of(&xs))
                };
                AggregateRow {
                    variant,
                    bt,
                    fraction,
                    runs: ok.len(),
                    failed: g.len() - ok.len(),
                    precision: stat(|r| r.precision),
                    dc: stat(|r| r.dc),
                    miou: stat(|r| r.miou),
                }
            })
            .collect();
        MetricsReport { rows, aggregates }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(REPORT_CSV), self.to_csv())?;
        std::fs::write(dir.join(REPORT_JSON), self.to_json()?)?;
        Ok(())
    }

    /// Reads `report.json` from an experiment directory, or rebuilds the
    /// report from `runs.jsonl` when the grid did not finish.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json = dir.join(REPORT_JSON);
        if json.is_file() {
            return Ok(serde_json::from_str(&std::fs::read_to_string(json)?)?);
        }
        let runs = read_runs(&dir.join(RUNS_FILE))?;
        if runs.is_empty() {
            return Err(Error::Data(format!("no report or runs found in {}", dir.display())));
        }
        Ok(Self::from_rows(runs))
    }
}

fn read_runs(path: &Path) -> Result<Vec<ReportRow>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted write is skipped.
        match serde_json::from_str(line) {
            Ok(r) => rows.push(r),
            Err(e) => log::warn!("{}:{}: skipping unreadable run record: {e}", path.display(), i + 1),
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Running

/// A config with its dataset decoded once.
pub struct ExperimentContext {
    pub cfg: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub data: LoadedDataset,
}

impl ExperimentContext {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let manifest = load_dataset(&cfg.dataset.root)?;
        let data = LoadedDataset::load(&manifest, cfg.dataset.input_size, cfg.dataset.channels)?;
        Ok(ExperimentContext { cfg, manifest, data })
    }

    pub fn split(&self, seed: u64) -> Result<DatasetManifest> {
        split(&self.manifest, self.cfg.dataset.train_frac, seed)
    }

    /// Split, labeled subset and folds for one (seed, fraction).
    pub fn folds(&self, seed: u64, fraction: f64) -> Result<DatasetManifest> {
        let m = limit_labels(&self.split(seed)?, fraction, seed)?;
        make_folds(&m, self.cfg.folds_k, seed)
    }

    /// Barlow Twins pre-training on every training-split image (masks
    /// ignored).
    pub fn pretrain(&self, variant: Variant, seed: u64) -> Result<PretrainOutcome> {
        let m = self.split(seed)?;
        let images = self.data.images(&m.train_indices())?;
        let mut encoder = build_encoder::<f32>(&self.cfg.arch(variant, seed))?;
        pretrain(
            &mut encoder,
            &images,
            &self.cfg.bt_config(seed),
            &self.cfg.pretrain_train_config(seed),
        )
    }

    /// Fine-tunes one grid cell on the labeled records outside `fold`,
    /// validating on `fold`, and evaluates on the test split.
    pub fn run_cell(
        &self,
        variant: Variant,
        encoder: Option<&Checkpoint>,
        fraction: f64,
        fold: usize,
        seed: u64,
    ) -> Result<(FinetuneOutcome, EvalMetrics)> {
        let m = self.folds(seed, fraction)?;
        let mut model = build_model::<f32>(&self.cfg.arch(variant, seed))?;
        if let Some(ck) = encoder {
            transfer_encoder(ck, &mut model)?;
        }
        let (tr, va) = (m.fold_train_indices(fold), m.fold_indices(fold));
        let data = FinetuneData {
            train_x: self.data.images(&tr)?,
            train_y: self.data.masks(&tr)?,
            val_x: self.data.images(&va)?,
            val_y: self.data.masks(&va)?,
        };
        let outcome = finetune(&mut model, &data, &self.cfg.finetune_config(seed, fold))?;
        let test: Vec<usize> = m
            .test_indices()
            .into_iter()
            .filter(|&i| m.records[i].mask.is_some())
            .collect();
        if test.is_empty() {
            return Err(Error::Data("no test records with masks".into()));
        }
        let metrics = evaluate(
            &model,
            &self.data.images(&test)?,
            &self.data.masks(&test)?,
            self.cfg.aggregation(),
        )?;
        Ok((outcome, metrics))
    }
}

fn append_run(path: &Path, row: &ReportRow) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(row)?)?;
    f.sync_data()?;
    Ok(())
}

/// Runs (or resumes) the full grid and writes `report.csv` and
/// `report.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<MetricsReport> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let ctx = ExperimentContext::new(cfg.clone())?;
    let digest = cfg.digest();
    let runs_path = out.join(RUNS_FILE);
    let mut done: HashMap<String, ReportRow> = read_runs(&runs_path)?
        .into_iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.run_key.clone(), r))
        .collect();
    let mut pretrained: HashMap<(Variant, u64), std::result::Result<Checkpoint, String>> = HashMap::new();
    let mut rows = Vec::new();

    for &seed in &cfg.seeds {
        for &variant in &cfg.variants {
            for &bt in &cfg.bt {
                for &fraction in &cfg.fractions {
                    for fold in 0..cfg.folds_k {
                        let key = run_key(variant, bt, fraction, fold, seed, &digest);
                        if let Some(r) = done.remove(&key) {
                            log::info!("skipping finished run {variant} bt={bt} f={fraction} fold={fold} seed={seed}");
                            rows.push(r);
                            continue;
                        }
                        let start = Instant::now();
                        let encoder = if bt {
                            let ck = pretrained.entry((variant, seed)).or_insert_with(|| {
                                cached_pretrain(&ctx, out, &digest, variant, seed).map_err(|e| e.to_string())
                            });
                            match ck {
                                Ok(c) => Ok(Some(c.clone())),
                                Err(e) => Err(Error::Training(format!("pre-training failed: {e}"))),
                            }
                        } else {
                            Ok(None)
                        };
                        log::info!("run {variant} bt={bt} f={fraction} fold={fold} seed={seed}");
                        let result = encoder.and_then(|enc| ctx.run_cell(variant, enc.as_ref(), fraction, fold, seed));
                        let wall_s = start.elapsed().as_secs_f64();
                        let row = match result {
                            Ok((o, m)) => ReportRow {
                                run_key: key,
                                variant,
                                bt,
                                fraction,
                                fold,
                                seed,
                                status: "ok".into(),
                                precision: Some(m.precision),
                                dc: Some(m.dc),
                                miou: Some(m.miou),
                                epochs: Some(o.epochs_run()),
                                wall_s,
                            },
                            Err(e) => {
                                log::error!("run {variant} bt={bt} f={fraction} fold={fold} seed={seed} failed: {e}");
                                ReportRow {
                                    run_key: key,
                                    variant,
                                    bt,
                                    fraction,
                                    fold,
                                    seed,
                                    status: format!("error: {e}"),
                                    precision: None,
                                    dc: None,
                                    miou: None,
                                    epochs: None,
                                    wall_s,
                                }
                            }
                        };
                        append_run(&runs_path, &row)?;
                        rows.push(row);
                    }
                }
            }
        }
    }
    let report = MetricsReport::from_rows(rows);
    report.write(out)?;
    Ok(report)
}

/// Pre-trains once per (variant, seed) and keeps the encoder checkpoint on
/// disk so resumed grids skip the work.
fn cached_pretrain(
    ctx: &ExperimentContext,
    out: &Path,
    digest: &str,
    variant: Variant,
    seed: u64,
) -> Result<Checkpoint> {
    let path = out
        .join("pretrain")
        .join(format!("{variant}_seed{seed}_{}.ckpt", &digest[..12]));
    if path.is_file() {
        match Checkpoint::load(&path) {
            Ok(ck) => return Ok(ck),
            Err(e) => log::warn!("ignoring unreadable {}: {e}", path.display()),
        }
    }
    log::info!("pre-training {variant} seed={seed}");
    let outcome = ctx.pretrain(variant, seed)?;
    outcome.checkpoint.save(&path)?;
    Ok(outcome.checkpoint)
}
