//! End-to-end pipeline on small synthetic data: pre-training, transfer,
//! fine-tuning bookkeeping and experiment resume.

use std::path::Path;

use btunet::autodiff::Graph;
use btunet::data::{generate_synthetic, DatasetManifest, LoadedDataset, SynthSpec};
use btunet::harness::experiment::{ReportRow, RUNS_FILE};
use btunet::harness::train::{predict, FinetuneData};
use btunet::harness::{
    finetune, run_experiment, transfer_encoder, Checkpoint, ExperimentConfig, MetricsReport, TrainConfig,
};
use btunet::losses::{combined_loss, MaskPair};
use btunet::models::{build_encoder, build_model, ModelArchConfig, Variant};
use btunet::selfsup::{augment_pair, cross_correlation, pretrain, BTConfig, EmbeddingBatch, ProjectionHead};
use btunet::Tensor;

fn dataset(dir: &Path, count: usize, size: usize) -> (DatasetManifest, LoadedDataset) {
    let m = generate_synthetic(&SynthSpec::new(count, size, 3), dir).unwrap();
    let loaded = LoadedDataset::load(&m, size, 1).unwrap();
    (m, loaded)
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn pretrained_encoder_transfers_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (m, data) = dataset(dir.path(), 6, 16);
    let idx: Vec<usize> = (0..m.records.len()).collect();
    let images = data.images(&idx).unwrap();
    let bt = BTConfig {
        epochs: 2,
        batch_size: 3,
        ..BTConfig::default()
    };
    for variant in Variant::ALL {
        let arch = ModelArchConfig::new(variant, 16, 1, 5).with_base_channels(4);
        let mut enc = build_encoder::<f32>(&arch).unwrap();
        let before = enc.params.clone();
        let out = pretrain(&mut enc, &images, &bt, &TrainConfig::default()).unwrap();
        assert_eq!(out.step_losses.len(), 4, "{variant}");
        assert_ne!(before, enc.params, "{variant}: pre-training changed nothing");
        assert!(out.checkpoint.params.names().all(|n| n.starts_with("encoder/")));

        let path = dir.path().join(format!("{variant}.ckpt"));
        out.checkpoint.save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut model = build_model::<f32>(&ModelArchConfig { seed: 99, ..arch }).unwrap();
        transfer_encoder(&ck, &mut model).unwrap();
        let a = enc.forward(&images, false).unwrap();
        let b = model.encode(&images, false).unwrap();
        assert_eq!(bits(&a), bits(&b), "{variant}");
    }
}

#[test]
fn transfer_rejects_other_architecture() {
    let arch = ModelArchConfig::new(Variant::Unet, 16, 1, 0).with_base_channels(4);
    let enc = build_encoder::<f32>(&arch).unwrap();
    let ck = Checkpoint::new(btunet::harness::Phase::Pretrain, 0, arch, enc.params);
    let mut other = build_model::<f32>(&ModelArchConfig::new(Variant::IUnet, 16, 1, 0).with_base_channels(4)).unwrap();
    let e = transfer_encoder(&ck, &mut other).unwrap_err().to_string();
    assert!(e.contains("encoder/"), "{e}");
}

#[test]
fn identical_views_give_unit_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = dataset(dir.path(), 8, 16);
    let images = data.images(&(0..8).collect::<Vec<_>>()).unwrap();
    let cfg = BTConfig {
        crop_scale: [1.0, 1.0],
        rotation_degrees: [0.0, 0.0],
        ..BTConfig::default()
    };
    let pair = augment_pair(&images, &cfg, 4).unwrap();
    assert_eq!(pair.view_a, images);
    let arch = ModelArchConfig::new(Variant::Unet, 16, 1, 1).with_base_channels(4);
    let enc = build_encoder::<f32>(&arch).unwrap();
    let head = ProjectionHead::new(&arch, 2);
    let mut params = enc.params.clone();
    params.extend(head.init(2).unwrap()).unwrap();
    let embed = |x: &Tensor<f32>| {
        let mut g = Graph::new(&params, true);
        let xv = g.input(x.clone());
        let f = enc.forward_graph(&mut g, xv).unwrap().bottleneck;
        let z = head.forward(&mut g, f).unwrap();
        EmbeddingBatch::from_tensor(g.value(z)).unwrap()
    };
    let c = cross_correlation(&embed(&pair.view_a), &embed(&pair.view_b)).unwrap();
    for i in 0..c.d() {
        assert!((c.get(i, i) - 1.0).abs() < 1e-6, "C[{i}][{i}] = {}", c.get(i, i));
    }
}

#[test]
fn finetune_restores_best_validation_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (_, d) = dataset(dir.path(), 14, 16);
    let train: Vec<usize> = (0..10).collect();
    let val: Vec<usize> = (10..14).collect();
    let data = FinetuneData {
        train_x: d.images(&train).unwrap(),
        train_y: d.masks(&train).unwrap(),
        val_x: d.images(&val).unwrap(),
        val_y: d.masks(&val).unwrap(),
    };
    let cfg = TrainConfig {
        learning_rate: 3e-2,
        max_epochs: 8,
        plateau_patience: 2,
        early_stop_patience: 4,
        batch_size: 4,
        seed: 6,
        ..TrainConfig::default()
    };
    let arch = ModelArchConfig::new(Variant::AUnet, 16, 1, 2).with_base_channels(4);
    let mut model = build_model::<f32>(&arch).unwrap();
    let out = finetune(&mut model, &data, &cfg).unwrap();

    assert!(!out.log.is_empty() && out.log.len() <= 8);
    for w in out.log.windows(2) {
        assert!(w[1].best_val_loss <= w[0].best_val_loss);
        assert!(w[1].lr <= w[0].lr);
    }
    let best = out.log.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.log[out.best_epoch - 1].val_loss, out.best_val_loss);
    assert!(out.best_val_loss <= best + cfg.min_delta);

    let p = predict(&model, &data.val_x, 4).unwrap();
    let restored = combined_loss(&MaskPair::from_tensors(&data.val_y, &p).unwrap()).value;
    assert_eq!(restored, out.best_val_loss);
    assert_eq!(out.checkpoint.params, model.params);

    let mut again = build_model::<f32>(&arch).unwrap();
    let repeat = finetune(&mut again, &data, &cfg).unwrap();
    assert_eq!(repeat.checkpoint.to_bytes().unwrap(), out.checkpoint.to_bytes().unwrap());
}

fn tiny_config(dir: &Path, seeds: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "dataset": {{"root": "data", "input_size": 16}},
  "model": {{"base_channels": 4}},
  "variants": ["UNET"],
  "bt": [false, true],
  "fractions": [0.5],
  "folds_k": 2,
  "seeds": {seeds},
  "pretrain": {{"epochs": 1, "batch_size": 4}},
  "finetune": {{"max_epochs": 2, "batch_size": 4}}
}}"#
    );
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn read_rows(path: &Path) -> Vec<ReportRow> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn experiment_resumes_and_retries_failures() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&SynthSpec::new(24, 16, 8), dir.path().join("data")).unwrap();
    let out = dir.path().join("out");

    let first = run_experiment(&tiny_config(dir.path(), "[1]"), &out).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert!(first.rows.iter().all(|r| r.is_ok()), "{:?}", first.rows);
    assert!(std::fs::read_dir(out.join("pretrain")).unwrap().count() == 1);
    assert_eq!(MetricsReport::load(&out).unwrap(), first);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "variant,bt,fraction,fold,seed,precision,dc,miou,epochs,wall_s");
    assert_eq!(csv.lines().count(), 5);

    // Mark one finished run as failed; the rerun must redo exactly that one.
    let runs = out.join(RUNS_FILE);
    let mut rows = read_rows(&runs);
    rows[2].status = "error: injected".into();
    rows[2].dc = None;
    let lines: Vec<String> = rows.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    std::fs::write(&runs, lines.join("\n") + "\n").unwrap();

    let second = run_experiment(&tiny_config(dir.path(), "[1, 2]"), &out).unwrap();
    assert_eq!(second.rows.len(), 8);
    assert!(second.rows.iter().all(|r| r.is_ok()));
    for (i, (a, b)) in first.rows.iter().zip(&second.rows).enumerate() {
        if i == 2 {
            assert_eq!((a.dc, a.miou, a.precision), (b.dc, b.miou, b.precision));
        } else {
            assert_eq!(a, b, "finished run {i} was recomputed");
        }
    }
    assert_eq!(read_rows(&runs).len(), 4 + 1 + 4);
    assert_eq!(std::fs::read_dir(out.join("pretrain")).unwrap().count(), 2);
}
