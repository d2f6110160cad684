//! Encoder transfer, supervised fine-tuning and test-set evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Phase};
use super::optim::Adam;
use super::schedule::PlateauTracker;
use super::TrainConfig;
use crate::autodiff::{apply_stat_updates, Graph};
use crate::blocks::BN_MOMENTUM;
use crate::error::{Error, Result};
use crate::kernels::sigmoid;
use crate::losses::{combined_loss, combined_loss_node, MaskPair};
use crate::metrics::{self, ConfusionCounts, ThresholdSweep, DEFAULT_THRESHOLD};
use crate::models::{build_model, diff_names_shapes, SegmentationModel, ENCODER_PREFIX};
use crate::tensor::{Real, Tensor};

/// Overwrites every `encoder/` tensor of `model` with the checkpoint's.
/// Decoder and head tensors are left untouched.
pub fn transfer_encoder(ckpt: &Checkpoint, model: &mut SegmentationModel<f32>) -> Result<()> {
    let expected = model.encoder_params();
    let mismatched = diff_names_shapes(&expected, &ckpt.params.subset(ENCODER_PREFIX));
    if !mismatched.is_empty() {
        return Err(Error::Transfer(format!(
            "checkpoint encoder does not fit the model; first mismatch: {}; all: {}",
            mismatched[0],
            mismatched.join(", ")
        )));
    }
    if !ckpt.arch.same_architecture(&model.arch) {
        return Err(Error::Transfer(format!(
            "checkpoint architecture {:?} differs from model {:?}",
            ckpt.arch, model.arch
        )));
    }
    for (name, _) in expected.iter() {
        let src = ckpt.params.require(name)?;
        *model.params.get_mut(name).expect("name checked") = src.clone();
    }
    Ok(())
}

/// Rebuilds a full model from a checkpoint holding every model tensor.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<SegmentationModel<f32>> {
    let mut model = build_model::<f32>(&ckpt.arch)?;
    let mismatched = diff_names_shapes(&model.params, &ckpt.params);
    if !mismatched.is_empty() {
        return Err(Error::Checkpoint(format!(
            "checkpoint does not hold a complete {} model: {}",
            ckpt.arch.variant,
            mismatched.join(", ")
        )));
    }
    model.params = ckpt.params.clone();
    Ok(model)
}

/// Images `(n,s,s,c)` and masks `(n,s,s,1)` for training and validation.
#[derive(Clone, Debug)]
pub struct FinetuneData {
    pub train_x: Tensor<f32>,
    pub train_y: Tensor<f32>,
    pub val_x: Tensor<f32>,
    pub val_y: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl FinetuneOutcome {
    pub fn epochs_run(&self) -> usize {
        self.log.len()
    }
}

/// Sigmoid probabilities for `x`, computed in inference mode in chunks.
pub fn predict(model: &SegmentationModel<f32>, x: &Tensor<f32>, batch: usize) -> Result<Tensor<f32>> {
    let n = x.shape().n();
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let logits = model.forward(&x.select_batch(chunk)?, false)?;
        parts.push(logits.map(sigmoid));
    }
    let out = Tensor::stack(&parts)?;
    out.check_finite("predictions")?;
    Ok(out)
}

fn validation_loss(model: &SegmentationModel<f32>, data: &FinetuneData, batch: usize) -> Result<f64> {
    let p = predict(model, &data.val_x, batch)?;
    Ok(combined_loss(&MaskPair::from_tensors(&data.val_y, &p)?).value)
}

fn check_pair(x: &Tensor<f32>, y: &Tensor<f32>, what: &str) -> Result<()> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs.n() != ys.n() || xs.h() != ys.h() || xs.w() != ys.w() || ys.c() != 1 {
        return Err(Error::Shape(format!("{what}: images {xs} do not match masks {ys}")));
    }
    Ok(())
}

/// Minimises the combined loss on the training pairs. The validation loss
/// drives plateau decay and early stopping; the best-validation weights are
/// restored into `model` before returning.
pub fn finetune(
    model: &mut SegmentationModel<f32>,
    data: &FinetuneData,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    check_pair(&data.train_x, &data.train_y, "training set")?;
    check_pair(&data.val_x, &data.val_y, "validation set")?;
    let n = data.train_x.shape().n();
    if n < 2 {
        return Err(Error::Data(format!(
            "fine-tuning needs at least 2 labeled training images, got {n}"
        )));
    }
    if data.val_x.shape().n() == 0 {
        return Err(Error::Data("empty validation set".into()));
    }
    let batch = cfg.batch_size.min(n);
    let mut adam = Adam::new();
    let mut tracker = PlateauTracker::new(cfg);
    let mut best = model.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order.chunks(batch) {
            // Batch statistics are undefined for a single sample.
            if idx.len() < 2 {
                continue;
            }
            let x = data.train_x.select_batch(idx)?;
            let y = data.train_y.select_batch(idx)?;
            let (loss, grads, stats) = {
                let mut g = Graph::new(&model.params, true);
                let xv = g.input(x);
                let logits = model.forward_graph(&mut g, xv)?;
                let l = combined_loss_node(&mut g, logits, &y)?;
                (g.value(l).data()[0].to_f64(), g.param_grads(l)?, g.take_stat_updates())
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!("training loss became {loss} at epoch {epoch}")));
            }
            adam.step(&mut model.params, &grads, tracker.lr())?;
            apply_stat_updates(&mut model.params, &stats, BN_MOMENTUM)?;
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let train_loss = sum / count.max(1) as f64;
        let val_loss = validation_loss(model, data, batch)?;
        let obs = tracker.observe(val_loss);
        if obs.improved {
            best = model.params.clone();
        }
        log::info!(
            "finetune epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {:.1e}",
            obs.lr
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: tracker.best(),
            lr: obs.lr,
        });
        if obs.stop {
            break;
        }
    }
    model.params = best;
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint::new(Phase::Finetune, cfg.seed, model.arch, model.params.clone()),
        log,
        best_epoch: tracker.best_epoch(),
        best_val_loss: tracker.best(),
    })
}

/// How metrics are combined over test images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Metrics per image, then averaged.
    #[default]
    PerImage,
    /// Confusion counts summed over all images, then one ratio.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub dc: f64,
    pub miou: f64,
    pub images: usize,
}

/// Precision and dice at 0.5 plus threshold-swept mean IoU for masks
/// `(n,s,s,1)` and probabilities of the same shape.
pub fn evaluate_predictions<T: Real>(
    masks: &Tensor<T>,
    probs: &Tensor<T>,
    mode: Aggregation,
) -> Result<EvalMetrics> {
    if masks.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "masks {} vs predictions {}",
            masks.shape(),
            probs.shape()
        )));
    }
    let n = masks.shape().n();
    if n == 0 || masks.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let sweep = ThresholdSweep::default();
    let per = masks.len() / n;
    let mut sums = (0.0, 0.0, 0.0);
    let mut pooled = ConfusionCounts::default();
    let mut pooled_sweep = vec![ConfusionCounts::default(); sweep.thresholds().len()];
    for i in 0..n {
        let y = &masks.data()[i * per..(i + 1) * per];
        let p = &probs.data()[i * per..(i + 1) * per];
        let cc = metrics::confusion(y, &metrics::binarize(p, DEFAULT_THRESHOLD))?;
        let sc = metrics::sweep_counts(y, p, &sweep)?;
        sums.0 += metrics::precision(&cc);
        sums.1 += metrics::dice_coefficient(&cc);
        sums.2 += metrics::mean_iou_from_counts(&sc);
        pooled += cc;
        for (acc, c) in pooled_sweep.iter_mut().zip(sc) {
            *acc += c;
        }
    }
    Ok(match mode {
        Aggregation::PerImage => EvalMetrics {
            precision: sums.0 / n as f64,
            dc: sums.1 / n as f64,
            miou: sums.2 / n as f64,
            images: n,
        },
        Aggregation::Pooled => EvalMetrics {
            precision: metrics::precision(&pooled),
            dc: metrics::dice_coefficient(&pooled),
            miou: metrics::mean_iou_from_counts(&pooled_sweep),
            images: n,
        },
    })
}

/// Runs the model on test images and scores it against their masks.
pub fn evaluate(
    model: &SegmentationModel<f32>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    mode: Aggregation,
) -> Result<EvalMetrics> {
    check_pair(x, y, "test set")?;
    if x.shape().n() == 0 {
        return Err(Error::Data("empty test set".into()));
    }
    let p = predict(model, x, 8)?;
    evaluate_predictions(y, &p, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_encoder, ModelArchConfig, Variant};
    use crate::tensor::Shape;

    fn masks() -> Tensor<f64> {
        let mut d = vec![0.0; 2 * 4 * 4];
        for (i, v) in d.iter_mut().enumerate() {
            if i % 3 == 0 {
                *v = 1.0;
            }
        }
        Tensor::from_vec(Shape::new(2, 4, 4, 1), d).unwrap()
    }

    #[test]
    fn oracle_predictions_score_one() {
        let y = masks();
        for mode in [Aggregation::PerImage, Aggregation::Pooled] {
            let m = evaluate_predictions(&y, &y, mode).unwrap();
            assert_eq!((m.precision, m.dc, m.miou), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn zero_predictor_scores_zero_dice() {
        let y = masks();
        let p = Tensor::zeros(y.shape());
        let m = evaluate_predictions(&y, &p, Aggregation::PerImage).unwrap();
        assert_eq!(m.dc, 0.0);
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn per_image_differs_from_pooled() {
        // Image 0 perfect with 1 positive pixel, image 1 misses 15 of 16.
        let mut y = vec![0.0; 32];
        y[0] = 1.0;
        for v in &mut y[16..] {
            *v = 1.0;
        }
        let mut p = vec![0.0; 32];
        p[0] = 1.0;
        p[16] = 1.0;
        let y = Tensor::from_vec(Shape::new(2, 4, 4, 1), y).unwrap();
        let p = Tensor::from_vec(Shape::new(2, 4, 4, 1), p).unwrap();
        let a = evaluate_predictions(&y, &p, Aggregation::PerImage).unwrap();
        let b = evaluate_predictions(&y, &p, Aggregation::Pooled).unwrap();
        assert!((a.dc - (1.0 + 2.0 / 17.0) / 2.0).abs() < 1e-12);
        assert!((b.dc - 4.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_keeps_decoder_and_rejects_mismatch() {
        let arch = ModelArchConfig::new(Variant::AUnet, 16, 1, 1).with_base_channels(4);
        let mut model = build_model::<f32>(&arch).unwrap();
        let before = model.params.clone();
        let mut donor = build_encoder::<f32>(&ModelArchConfig { seed: 99, ..arch }).unwrap();
        donor.params.get_mut("encoder/stage0/conv1/bn/gamma").unwrap().data_mut()[0] = 3.0;
        let ck = Checkpoint::new(Phase::Pretrain, 99, donor.arch, donor.params.clone());
        transfer_encoder(&ck, &mut model).unwrap();
        for (name, e) in before.iter() {
            let now = model.params.get(name).unwrap();
            if name.starts_with(ENCODER_PREFIX) {
                assert_eq!(now, donor.params.get(name).unwrap());
            } else {
                assert_eq!(now, &e.tensor);
            }
        }

        let other = ModelArchConfig::new(Variant::IUnet, 16, 1, 1).with_base_channels(4);
        let wrong = build_encoder::<f32>(&other).unwrap();
        let ck = Checkpoint::new(Phase::Pretrain, 1, other, wrong.params);
        let err = transfer_encoder(&ck, &mut model).unwrap_err().to_string();
        assert!(err.contains("encoder/"), "{err}");
    }
}
