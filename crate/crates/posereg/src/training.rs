//! End-to-end training loop: seeded shuffling, random-crop augmentation,
//! mean subtraction, batched loss minimization with SGD + momentum,
//! checkpointing, and the landmark-classification pretext for transfer.
//!
//! Every stochastic choice is keyed by (seed, epoch, sample index), never by
//! consumption order, so interrupting at a checkpoint and resuming replays
//! the uninterrupted run bit-for-bit.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::datagen::{compute_scene_mean, crop, rescale_shortest_side, subtract_mean, CropMode, CropSpec, Image, PoseSample};
use crate::error::{Error, Result};
use crate::geometry::{position_error_m, quat_angular_error_deg};
use crate::model::{build_model, estimate_beta, total_loss, Model, ModelConfig, BETA_MAX_DEFAULT, BETA_MIN_DEFAULT};
use crate::tensor::ops::{linear, relu, softmax_cross_entropy, weighted_sum};
use crate::tensor::{backward, sgd_momentum_step, lr_schedule, OptimizerState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSetting {
    Fixed(f64),
    /// Warm-up at the model's provisional beta for 10% of the epochs, set
    /// beta from the end-of-warm-up error ratio, then restart.
    Auto,
}

impl BetaSetting {
    pub fn parse(s: &str) -> Result<BetaSetting> {
        if s == "auto" {
            return Ok(BetaSetting::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 => Ok(BetaSetting::Fixed(v)),
            _ => Err(Error::Config(format!("beta must be a positive number or 'auto', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub seed: u64,
    pub crop: CropSpec,
    pub eval_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: small batches and a learning rate sized for a
    /// from-scratch trunk on small images.
    pub fn desk_default(crop_side: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 100,
            base_lr: 2e-3,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_period: 80,
            seed: 0,
            crop: CropSpec {
                rescale_side: crop_side + crop_side / 8,
                crop_side,
                mode: CropMode::Random,
                dense_count: 128,
            },
            eval_every: 10,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::Config(format!(
                "batch_size {} outside 1..={train_len}",
                self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        // optimizer field ranges checked by OptimizerState::new
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub median_val_position_error_m: f64,
    pub median_val_orientation_error_deg: f64,
    pub learning_rate: f64,
    /// Cumulative seconds since training started. Not part of the
    /// deterministic output contract; serialized separately.
    pub wall_clock_s: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    /// Per-scene mean image at the rescale size.
    pub mean: Image,
}

/// splitmix64-style mixing so RNG streams for different (epoch, index) pairs
/// are independent of each other and of consumption order.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(epoch as u64)))
}

fn crop_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(epoch as u64) ^ mix(0x5eed ^ index as u64)))
}

/// Rescale every image to the spec's rescale side.
pub fn rescaled_images(samples: &[PoseSample], spec: &CropSpec) -> Result<Vec<Image>> {
    samples.iter().map(|s| rescale_shortest_side(&s.image, spec.rescale_side)).collect()
}

/// Per-scene mean over the rescaled training images.
pub fn scene_mean(samples: &[PoseSample], spec: &CropSpec) -> Result<Image> {
    compute_scene_mean(&rescaled_images(samples, spec)?)
}

/// Crop a rescaled image per the spec and subtract the offset-aligned mean.
/// Returns one image per crop (1 for center/random, dense_count for dense).
pub fn preprocess(
    rescaled: &Image,
    mean: &Image,
    spec: &CropSpec,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Image>> {
    crop(rescaled, spec, rng)?
        .into_iter()
        .map(|c| subtract_mean(&c.image, mean, c.offset_y, c.offset_x))
        .collect()
}

fn center_spec(spec: &CropSpec) -> CropSpec {
    CropSpec { mode: CropMode::Center, ..spec.clone() }
}

/// Per-frame validation statistics on center crops, in test mode. Vectors
/// for metrics the head does not predict stay empty (partial heads).
pub struct ValStats {
    pub position_errors_m: Vec<f64>,
    pub orientation_errors_deg: Vec<f64>,
    /// ‖q̂ − q‖ with raw (unnormalized) q̂, as it appears in the loss;
    /// feeds the beta estimate.
    pub quat_diff_norms: Vec<f64>,
}

pub fn validation_stats(
    model: &Model,
    val_set: &[PoseSample],
    mean: &Image,
    spec: &CropSpec,
) -> Result<ValStats> {
    let cspec = center_spec(spec);
    let mut stats = ValStats {
        position_errors_m: Vec::with_capacity(val_set.len()),
        orientation_errors_deg: Vec::with_capacity(val_set.len()),
        quat_diff_norms: Vec::with_capacity(val_set.len()),
    };
    for sample in val_set {
        let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
        let input = preprocess(&rescaled, mean, &cspec, None)?.remove(0);
        let output = model.forward(&input.to_tensor(false), false)?.remove(0);
        let raw = output.raw.values();
        let t = sample.pose.to_vector();
        match model.config.head_kind {
            crate::model::HeadKind::Full => {
                let pred = output.to_pose()?;
                stats
                    .position_errors_m
                    .push(position_error_m(pred.position, sample.pose.position));
                stats
                    .orientation_errors_deg
                    .push(quat_angular_error_deg(&pred.orientation, &sample.pose.orientation));
                let dot: f64 = raw[3..7].iter().zip(&t[3..7]).map(|(a, b)| a * b).sum();
                let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                let qn = raw[3..7]
                    .iter()
                    .zip(&t[3..7])
                    .map(|(a, b)| (a - sign * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                stats.quat_diff_norms.push(qn);
            }
            crate::model::HeadKind::PositionOnly => {
                stats
                    .position_errors_m
                    .push(position_error_m([raw[0], raw[1], raw[2]], sample.pose.position));
            }
            crate::model::HeadKind::OrientationOnly => {
                let q = crate::geometry::quat_normalize(&crate::geometry::Quaternion::new(
                    raw[0], raw[1], raw[2], raw[3],
                ))?;
                stats
                    .orientation_errors_deg
                    .push(quat_angular_error_deg(&q, &sample.pose.orientation));
            }
        }
    }
    Ok(stats)
}

/// Median, or NaN for a metric the model's head does not predict.
fn median_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        median(values)
    }
}

/// Median as the average of the two middle order statistics.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train from epoch 0 with a fresh optimizer.
pub fn train(
    model: &Model,
    train_set: &[PoseSample],
    val_set: &[PoseSample],
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut state = OptimizerState::new(
        &model.parameters(),
        config.momentum,
        config.base_lr,
        config.decay_factor,
        config.decay_period,
    )?;
    train_from(model, train_set, val_set, config, &mut state, 0, checkpoint_path)
}

/// Continue training from `start_epoch` with an existing optimizer state,
/// e.g. after [`Checkpoint::apply`]. Epochs already completed are replayed
/// neither here nor in the log.
pub fn train_from(
    model: &Model,
    train_set: &[PoseSample],
    val_set: &[PoseSample],
    config: &TrainConfig,
    state: &mut OptimizerState,
    start_epoch: usize,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    config.validate(train_set.len())?;
    if model.config.input_size != config.crop.crop_side {
        return Err(Error::Config(format!(
            "model input size {} != crop side {}",
            model.config.input_size, config.crop.crop_side
        )));
    }
    if config.crop.mode != CropMode::Random {
        return Err(Error::Config("training requires random-mode crops".into()));
    }

    let rescaled = rescaled_images(train_set, &config.crop)?;
    let mean = compute_scene_mean(&rescaled)?;
    let params = model.parameters();
    let start = Instant::now();
    let mut log = Vec::new();

    for epoch in start_epoch..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng(config.seed, epoch));

        let mut loss_sum = 0.0;
        let mut batch_count = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let mut terms: Vec<(f64, Tensor)> = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut rng = crop_rng(config.seed, epoch, i);
                let input = preprocess(&rescaled[i], &mean, &config.crop, Some(&mut rng))?.remove(0);
                let outputs = model.forward(&input.to_tensor(false), true)?;
                terms.push((weight, total_loss(&outputs, &train_set[i].pose, &model.config)?));
            }
            let batch_loss = weighted_sum(&terms)?;
            let loss = batch_loss.item();
            if !loss.is_finite() || loss > 1e6 {
                return Err(Error::Divergence { epoch, batch: batch_idx, loss });
            }
            backward(&batch_loss)?;
            sgd_momentum_step(&params, state, epoch)?;
            loss_sum += loss;
            batch_count += 1;
        }

        let is_eval_point = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
        if is_eval_point {
            let stats = validation_stats(model, val_set, &mean, &config.crop)?;
            log.push(TrainLogRow {
                epoch,
                mean_train_loss: loss_sum / batch_count as f64,
                median_val_position_error_m: median_or_nan(&stats.position_errors_m),
                median_val_orientation_error_deg: median_or_nan(&stats.orientation_errors_deg),
                learning_rate: lr_schedule(state, epoch),
                wall_clock_s: start.elapsed().as_secs_f64(),
            });
            if let Some(path) = checkpoint_path {
                Checkpoint::from_model(model, Some(state), (epoch + 1) as u64)?.save(path)?;
            }
        }
    }

    let checkpoint = Checkpoint::from_model(model, Some(state), config.epochs as u64)?;
    if let Some(path) = checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome { checkpoint, log, mean })
}

/// Auto-beta protocol: train a throwaway model for 10% of the epochs at the
/// provisional beta from `model_config`, estimate beta from the end-of-warm-up
/// validation error ratio, then rebuild with the same seed and train fully.
/// Returns the final model, its outcome, and the estimated beta.
pub fn train_auto_beta(
    model_config: &ModelConfig,
    build_seed: u64,
    train_set: &[PoseSample],
    val_set: &[PoseSample],
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<(Model, TrainOutcome, f64)> {
    let warm_epochs = (config.epochs / 10).max(1);
    let warm_model = build_model(model_config, build_seed)?;
    let warm_config = TrainConfig { epochs: warm_epochs, ..config.clone() };
    let warm = train(&warm_model, train_set, val_set, &warm_config, None)?;
    let stats = validation_stats(&warm_model, val_set, &warm.mean, &config.crop)?;
    let beta = estimate_beta(
        median(&stats.position_errors_m),
        median(&stats.quat_diff_norms),
        BETA_MIN_DEFAULT,
        BETA_MAX_DEFAULT,
    )?;

    let final_config = ModelConfig { beta, ..model_config.clone() };
    let model = build_model(&final_config, build_seed)?;
    let outcome = train(&model, train_set, val_set, config, checkpoint_path)?;
    Ok((model, outcome, beta))
}

/// Temporary classification head trained on the landmark pretext; the trunk
/// it was trained with keeps its weights, the head is discarded for pose
/// training.
pub struct PretrainedClassifier {
    feature_weights: Tensor,
    feature_bias: Tensor,
    class_weights: Tensor,
    class_bias: Tensor,
    pub num_classes: usize,
    pub mean: Image,
}

impl PretrainedClassifier {
    fn logits(&self, model: &Model, input: &Tensor) -> Result<Tensor> {
        let trunk = model.trunk_forward(input)?;
        let feature = relu(&linear(&trunk, &self.feature_weights, &self.feature_bias)?);
        linear(&feature, &self.class_weights, &self.class_bias)
    }
}

/// Train trunk + temporary softmax classifier on (image, class) pairs;
/// classes are dominant-landmark ids remapped to 0..num_classes. The model's
/// trunk is updated in place and can warm-start [`train`].
pub fn pretrain_classifier(
    model: &Model,
    dataset: &[(Image, usize)],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<PretrainedClassifier> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty pretext dataset".into()));
    }
    let mut seen = vec![false; num_classes];
    for (_, class) in dataset {
        if *class >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside 0..{num_classes}"
            )));
        }
        seen[*class] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegeneratePretext(
            "fewer than two distinct classes present".into(),
        ));
    }
    config.validate(dataset.len())?;
    if model.config.input_size != config.crop.crop_side {
        return Err(Error::Config(format!(
            "model input size {} != crop side {}",
            model.config.input_size, config.crop.crop_side
        )));
    }

    let trunk_dim = model.trunk_out_dim();
    let feature_dim = model.config.feature_dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0xc1a55));
    let head = PretrainedClassifier {
        feature_weights: uniform_tensor(&mut init_rng, vec![feature_dim, trunk_dim], trunk_dim),
        feature_bias: Tensor::zeros(vec![feature_dim], true),
        class_weights: uniform_tensor(&mut init_rng, vec![num_classes, feature_dim], feature_dim),
        class_bias: Tensor::zeros(vec![num_classes], true),
        num_classes,
        mean: Image::new(1, 1),
    };

    let rescaled: Vec<Image> = dataset
        .iter()
        .map(|(img, _)| rescale_shortest_side(img, config.crop.rescale_side))
        .collect::<Result<_>>()?;
    let mean = compute_scene_mean(&rescaled)?;

    let mut params: Vec<Tensor> = model.trunk_parameters().into_iter().map(|(_, t)| t).collect();
    params.extend([
        head.feature_weights.clone(),
        head.feature_bias.clone(),
        head.class_weights.clone(),
        head.class_bias.clone(),
    ]);
    let mut state = OptimizerState::new(
        &params,
        config.momentum,
        config.base_lr,
        config.decay_factor,
        config.decay_period,
    )?;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng(config.seed, epoch));
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let mut terms: Vec<(f64, Tensor)> = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut rng = crop_rng(config.seed, epoch, i);
                let input = preprocess(&rescaled[i], &mean, &config.crop, Some(&mut rng))?.remove(0);
                let logits = head.logits(model, &input.to_tensor(false))?;
                terms.push((weight, softmax_cross_entropy(&logits, dataset[i].1)?));
            }
            let batch_loss = weighted_sum(&terms)?;
            let loss = batch_loss.item();
            if !loss.is_finite() || loss > 1e6 {
                return Err(Error::Divergence { epoch, batch: batch_idx, loss });
            }
            backward(&batch_loss)?;
            sgd_momentum_step(&params, &mut state, epoch)?;
        }
    }

    Ok(PretrainedClassifier { mean, ..head })
}

/// Center-crop argmax accuracy of the pretext classifier.
pub fn classifier_accuracy(
    model: &Model,
    clf: &PretrainedClassifier,
    dataset: &[(Image, usize)],
    spec: &CropSpec,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty pretext dataset".into()));
    }
    let cspec = center_spec(spec);
    let mut correct = 0usize;
    for (img, class) in dataset {
        let rescaled = rescale_shortest_side(img, cspec.rescale_side)?;
        let input = preprocess(&rescaled, &clf.mean, &cspec, None)?.remove(0);
        let logits = clf.logits(model, &input.to_tensor(false))?;
        let v = logits.values();
        let pred = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == *class {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    use rand::Rng;
    let bound = (3.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values, true).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, render_view, sample_trajectory};

    fn tiny_scene_samples(n: usize, seed: u64) -> (crate::datagen::SceneSpec, Vec<PoseSample>) {
        let scene = generate_scene(seed, [10.0, 10.0, 2.0]).unwrap();
        let poses = sample_trajectory(&scene, 1.0, n, seed.wrapping_add(1)).unwrap();
        let samples: Vec<PoseSample> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = render_view(&scene, p).unwrap();
                s.frame_id = format!("frame{i:04}");
                s
            })
            .collect();
        (scene, samples)
    }

    fn tiny_model_config(input_size: usize) -> ModelConfig {
        ModelConfig {
            input_size,
            trunk: vec![
                crate::model::LayerSpec::Conv { out_channels: 6, kernel: 5, stride: 2, padding: 2 },
                crate::model::LayerSpec::Relu,
                crate::model::LayerSpec::MaxPool { window: 2, stride: 2 },
                crate::model::LayerSpec::Conv { out_channels: 12, kernel: 3, stride: 1, padding: 1 },
                crate::model::LayerSpec::Relu,
                crate::model::LayerSpec::GlobalAvgPool,
            ],
            feature_dim: 16,
            num_heads: 1,
            aux_head_weights: vec![1.0],
            beta: 10.0,
            position_extent: [10.0, 10.0, 2.0],
            head_kind: crate::model::HeadKind::Full,
        }
    }

    fn tiny_train_config(n: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: n.min(4),
            epochs,
            base_lr: 1e-2,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_period: 1000,
            seed: 7,
            crop: CropSpec {
                rescale_side: 36,
                crop_side: 32,
                mode: CropMode::Random,
                dense_count: 16,
            },
            eval_every: 5,
        }
    }

    #[test]
    fn zero_epochs_checkpoint_equals_initialization() {
        let (_, samples) = tiny_scene_samples(4, 3);
        let model = build_model(&tiny_model_config(32), 5).unwrap();
        let before = Checkpoint::from_model(&model, None, 0).unwrap();
        let config = TrainConfig { epochs: 0, ..tiny_train_config(4, 0) };
        let out = train(&model, &samples, &samples, &config, None).unwrap();
        assert!(out.log.is_empty());
        for (a, b) in out.checkpoint.params.iter().zip(&before.params) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn identical_seeds_give_bit_identical_checkpoints_and_logs() {
        let (_, samples) = tiny_scene_samples(6, 4);
        let config = tiny_train_config(6, 4);
        let run = || {
            let model = build_model(&tiny_model_config(32), 5).unwrap();
            train(&model, &samples, &samples, &config, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            // every column except wall-clock is part of the contract
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.mean_train_loss.to_bits(), y.mean_train_loss.to_bits());
            assert_eq!(
                x.median_val_position_error_m.to_bits(),
                y.median_val_position_error_m.to_bits()
            );
            assert_eq!(
                x.median_val_orientation_error_deg.to_bits(),
                y.median_val_orientation_error_deg.to_bits()
            );
            assert_eq!(x.learning_rate.to_bits(), y.learning_rate.to_bits());
        }
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn overfits_two_samples() {
        // Two well-separated square views: crop == rescale == render size so
        // the inputs are fixed and the labels carry no crop-induced noise.
        let mut scene = generate_scene(9, [10.0, 10.0, 2.0]).unwrap();
        scene.intrinsics = crate::datagen::Intrinsics::centered(32, 32, 30.0);
        let poses = sample_trajectory(&scene, 4.0, 2, 10).unwrap();
        let samples: Vec<PoseSample> =
            poses.iter().map(|p| render_view(&scene, p).unwrap()).collect();

        let mut mc = tiny_model_config(32);
        // wide enough that the 2-point fit converges within 200 epochs
        if let crate::model::LayerSpec::Conv { out_channels, .. } = &mut mc.trunk[0] {
            *out_channels = 16;
        }
        if let crate::model::LayerSpec::Conv { out_channels, .. } = &mut mc.trunk[3] {
            *out_channels = 32;
        }
        mc.feature_dim = 128;
        mc.beta = 3.0;
        let config = TrainConfig {
            batch_size: 2,
            epochs: 200,
            // the L2-norm loss has constant-magnitude gradients, so landing
            // near zero needs a decaying step size
            base_lr: 3e-2,
            momentum: 0.9,
            decay_factor: 0.25,
            decay_period: 55,
            seed: 7,
            crop: CropSpec { rescale_side: 32, crop_side: 32, mode: CropMode::Random, dense_count: 16 },
            eval_every: 200,
        };

        let model = build_model(&mc, 5).unwrap();
        let fixed_loss = |mean: &Image| {
            let spec = CropSpec { mode: CropMode::Center, ..config.crop.clone() };
            samples
                .iter()
                .map(|s| {
                    let r = rescale_shortest_side(&s.image, 32).unwrap();
                    let input = preprocess(&r, mean, &spec, None).unwrap().remove(0);
                    let outputs = model.forward(&input.to_tensor(false), true).unwrap();
                    total_loss(&outputs, &s.pose, &mc).unwrap().item()
                })
                .sum::<f64>()
                / samples.len() as f64
        };
        let mean = scene_mean(&samples, &config.crop).unwrap();
        let initial = fixed_loss(&mean);
        let out = train(&model, &samples, &samples, &config, None).unwrap();
        let last = fixed_loss(&out.mean);
        assert!(
            last < 0.01 * initial,
            "loss {last} not < 1% of initial {initial}"
        );
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let (_, samples) = tiny_scene_samples(6, 11);
        let config = tiny_train_config(6, 6);
        let model_a = build_model(&tiny_model_config(32), 5).unwrap();
        let full = train(&model_a, &samples, &samples, &config, None).unwrap();

        // interrupted run: 3 epochs, checkpoint, fresh process state, resume
        let model_b = build_model(&tiny_model_config(32), 5).unwrap();
        let half_config = TrainConfig { epochs: 3, ..config.clone() };
        let half = train(&model_b, &samples, &samples, &half_config, None).unwrap();

        let model_c = build_model(&tiny_model_config(32), 999).unwrap();
        let mut state = OptimizerState::new(
            &model_c.parameters(),
            config.momentum,
            config.base_lr,
            config.decay_factor,
            config.decay_period,
        )
        .unwrap();
        half.checkpoint.apply(&model_c, Some(&mut state)).unwrap();
        let resumed = train_from(
            &model_c,
            &samples,
            &samples,
            &config,
            &mut state,
            half.checkpoint.epochs_completed as usize,
            None,
        )
        .unwrap();
        assert_eq!(resumed.checkpoint.params, full.checkpoint.params);
    }

    #[test]
    fn divergent_lr_reports_epoch_and_batch() {
        let (_, samples) = tiny_scene_samples(4, 13);
        let mut config = tiny_train_config(4, 50);
        config.base_lr = 1e6;
        let model = build_model(&tiny_model_config(32), 5).unwrap();
        match train(&model, &samples, &samples, &config, None) {
            Err(Error::Divergence { loss, .. }) => assert!(!loss.is_finite() || loss > 1e6),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn batch_size_larger_than_dataset_rejected() {
        let (_, samples) = tiny_scene_samples(3, 15);
        let mut config = tiny_train_config(3, 1);
        config.batch_size = 10;
        let model = build_model(&tiny_model_config(32), 5).unwrap();
        assert!(train(&model, &samples, &samples, &config, None).is_err());
    }

    #[test]
    fn beta_setting_parsing() {
        assert_eq!(BetaSetting::parse("auto").unwrap(), BetaSetting::Auto);
        assert_eq!(BetaSetting::parse("250").unwrap(), BetaSetting::Fixed(250.0));
        assert!(BetaSetting::parse("-1").is_err());
        assert!(BetaSetting::parse("soon").is_err());
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn pretrain_rejects_single_class() {
        let (_, samples) = tiny_scene_samples(4, 17);
        let dataset: Vec<(Image, usize)> =
            samples.iter().map(|s| (s.image.clone(), 0usize)).collect();
        let model = build_model(&tiny_model_config(32), 5).unwrap();
        let config = tiny_train_config(4, 1);
        match pretrain_classifier(&model, &dataset, 3, &config) {
            Err(Error::DegeneratePretext(_)) => {}
            other => panic!("expected degenerate pretext, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn pretrain_updates_trunk_and_leaves_pose_param_count_unchanged() {
        let (_, samples) = tiny_scene_samples(6, 19);
        let classes: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let dataset: Vec<(Image, usize)> = samples
            .iter()
            .zip(&classes)
            .map(|(s, &c)| (s.image.clone(), c))
            .collect();
        let model = build_model(&tiny_model_config(32), 5).unwrap();
        let count_before = model.parameter_count();
        let before = model.trunk_parameters()[0].1.values();
        let config = tiny_train_config(6, 3);
        let clf = pretrain_classifier(&model, &dataset, 3, &config).unwrap();
        assert_ne!(model.trunk_parameters()[0].1.values(), before);
        assert_eq!(model.parameter_count(), count_before);
        let acc = classifier_accuracy(&model, &clf, &dataset, &config.crop).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
