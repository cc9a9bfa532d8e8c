//! Measurement and experiment protocols: median/cumulative error reports,
//! dense-crop evaluation, the nearest-neighbour feature baseline, the beta
//! and spacing sweeps, joint-vs-separate regression, saliency maps, and the
//! efficiency report.
//!
//! Wall-clock measurements never enter the deterministic report files; they
//! live in separate timing files so identical seeds give byte-identical
//! primary outputs.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::datagen::{
    render_view, rescale_shortest_side, sample_trajectory, write_pgm, CropMode, CropSpec, Image,
    PoseSample, SceneSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{average_pose_vectors, position_error_m, quat_angular_error_deg, Pose};
use crate::model::{build_model, head_loss, pose_loss, HeadKind, Model, ModelConfig};
use crate::tensor::backward;
use crate::training::{median, preprocess, train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub position_error_m: f64,
    pub orientation_error_deg: f64,
}

pub const PERCENTILES: [f64; 5] = [50.0, 75.0, 90.0, 95.0, 99.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Sorted by frame_id so assembly order never shows in the output.
    pub records: Vec<FrameRecord>,
    pub median_position_error_m: f64,
    pub median_orientation_error_deg: f64,
    /// (error, fraction of frames with error ≤) pairs, fractions ending at 1.
    pub cumulative_position: Vec<(f64, f64)>,
    pub cumulative_orientation: Vec<(f64, f64)>,
    /// (percentile, position error, orientation error), includes the 95th.
    pub percentiles: Vec<(f64, f64, f64)>,
    pub model_size_bytes: usize,
    /// Measured, not deterministic; written to the timing file only.
    pub inference_ms_per_frame: f64,
    pub forwards_per_frame: usize,
}

/// p-th percentile by linear interpolation between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn cumulative(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &e)| (e, (i + 1) as f64 / n)).collect()
}

fn assemble_report(
    mut records: Vec<FrameRecord>,
    model_size_bytes: usize,
    inference_ms_per_frame: f64,
    forwards_per_frame: usize,
) -> ExperimentReport {
    records.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let mut pos: Vec<f64> = records.iter().map(|r| r.position_error_m).collect();
    let mut ori: Vec<f64> = records.iter().map(|r| r.orientation_error_deg).collect();
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ori.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ExperimentReport {
        median_position_error_m: median(&pos),
        median_orientation_error_deg: median(&ori),
        cumulative_position: cumulative(&pos),
        cumulative_orientation: cumulative(&ori),
        percentiles: PERCENTILES
            .iter()
            .map(|&p| (p, percentile(&pos, p), percentile(&ori, p)))
            .collect(),
        records,
        model_size_bytes,
        inference_ms_per_frame,
        forwards_per_frame,
    }
}

/// Predict one pose per frame: a single center crop, or `dense_count` crops
/// whose raw 7-vectors are averaged (quaternions sign-aligned) before
/// normalization.
pub fn evaluate(
    model: &Model,
    test_set: &[PoseSample],
    mean: &Image,
    spec: &CropSpec,
    mode: CropMode,
) -> Result<ExperimentReport> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if mode == CropMode::Random {
        return Err(Error::InvalidArgument("evaluation uses center or dense crops".into()));
    }
    let eval_spec = CropSpec { mode, ..spec.clone() };
    let mut records = Vec::with_capacity(test_set.len());
    let mut elapsed = 0.0f64;
    let mut forwards = 0usize;
    for sample in test_set {
        let rescaled = rescale_shortest_side(&sample.image, eval_spec.rescale_side)?;
        let inputs = preprocess(&rescaled, mean, &eval_spec, None)?;
        let start = Instant::now();
        let mut vectors: Vec<[f64; 7]> = Vec::with_capacity(inputs.len());
        for input in &inputs {
            let output = model.forward(&input.to_tensor(false), false)?.remove(0);
            let v = output.raw.values();
            vectors.push([v[0], v[1], v[2], v[3], v[4], v[5], v[6]]);
            forwards += 1;
        }
        elapsed += start.elapsed().as_secs_f64();
        let pred = average_pose_vectors(&vectors)?;
        records.push(FrameRecord {
            frame_id: sample.frame_id.clone(),
            position_error_m: position_error_m(pred.position, sample.pose.position),
            orientation_error_deg: quat_angular_error_deg(&pred.orientation, &sample.pose.orientation),
        });
    }
    debug_assert_eq!(forwards % test_set.len(), 0);
    Ok(assemble_report(
        records,
        model.parameter_count() * 8,
        elapsed * 1000.0 / test_set.len() as f64,
        forwards / test_set.len(),
    ))
}

#[derive(Debug, Clone)]
pub struct FeatureIndex {
    pub entries: Vec<(String, Vec<f64>, Pose)>,
    pub feature_dim: usize,
}

/// Localization features of every training frame, from center crops.
pub fn build_feature_index(
    model: &Model,
    train_set: &[PoseSample],
    mean: &Image,
    spec: &CropSpec,
) -> Result<FeatureIndex> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set for feature index".into()));
    }
    let cspec = CropSpec { mode: CropMode::Center, ..spec.clone() };
    let mut entries = Vec::with_capacity(train_set.len());
    for sample in train_set {
        let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
        let input = preprocess(&rescaled, mean, &cspec, None)?.remove(0);
        let output = model.forward(&input.to_tensor(false), false)?.remove(0);
        entries.push((sample.frame_id.clone(), output.feature.values(), sample.pose.clone()));
    }
    Ok(FeatureIndex { feature_dim: model.config.feature_dim, entries })
}

/// Retrieval baseline: each test frame gets the pose of the training frame
/// with the smallest Euclidean feature distance.
pub fn nn_baseline(
    index: &FeatureIndex,
    model: &Model,
    test_set: &[PoseSample],
    mean: &Image,
    spec: &CropSpec,
) -> Result<ExperimentReport> {
    if index.entries.is_empty() {
        return Err(Error::InvalidArgument("empty feature index".into()));
    }
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let cspec = CropSpec { mode: CropMode::Center, ..spec.clone() };
    let mut records = Vec::with_capacity(test_set.len());
    let mut elapsed = 0.0f64;
    for sample in test_set {
        let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
        let input = preprocess(&rescaled, mean, &cspec, None)?.remove(0);
        let start = Instant::now();
        let feature = model.forward(&input.to_tensor(false), false)?.remove(0).feature.values();
        let nearest = index
            .entries
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.1.iter().zip(&feature).map(|(x, y)| (x - y).powi(2)).sum();
                let db: f64 = b.1.iter().zip(&feature).map(|(x, y)| (x - y).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .expect("non-empty index");
        elapsed += start.elapsed().as_secs_f64();
        records.push(FrameRecord {
            frame_id: sample.frame_id.clone(),
            position_error_m: position_error_m(nearest.2.position, sample.pose.position),
            orientation_error_deg: quat_angular_error_deg(&nearest.2.orientation, &sample.pose.orientation),
        });
    }
    Ok(assemble_report(
        records,
        model.parameter_count() * 8,
        elapsed * 1000.0 / test_set.len() as f64,
        1,
    ))
}

/// Constant predictor: the componentwise average pose of the training set,
/// evaluated on the test set. The floor any learned model must beat.
pub fn mean_pose_baseline(train_set: &[PoseSample], test_set: &[PoseSample]) -> Result<ExperimentReport> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidArgument("empty set in mean-pose baseline".into()));
    }
    let vectors: Vec<[f64; 7]> = train_set.iter().map(|s| s.pose.to_vector()).collect();
    let mean_pose = average_pose_vectors(&vectors)?;
    let records = test_set
        .iter()
        .map(|s| FrameRecord {
            frame_id: s.frame_id.clone(),
            position_error_m: position_error_m(mean_pose.position, s.pose.position),
            orientation_error_deg: quat_angular_error_deg(&mean_pose.orientation, &s.pose.orientation),
        })
        .collect();
    Ok(assemble_report(records, 7 * 8, 0.0, 0))
}

#[derive(Debug, Clone)]
pub enum SweepResult {
    Ok { median_position_error_m: f64, median_orientation_error_deg: f64 },
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct BetaSweep {
    pub rows: Vec<(f64, SweepResult)>,
    pub selected_beta: f64,
}

/// Scalarization used to pick beta: position median normalized by the scene
/// diagonal plus orientation median normalized by 180°.
pub fn beta_scalarization(median_pos_m: f64, median_orient_deg: f64, extent: [f64; 3]) -> f64 {
    let diagonal = (extent[0] * extent[0] + extent[1] * extent[1] + extent[2] * extent[2]).sqrt();
    median_pos_m / diagonal + median_orient_deg / 180.0
}

/// Train one model per beta (same seed and data order), evaluate each on
/// center crops, and select the beta minimizing the scalarization. Diverged
/// runs are recorded, not dropped.
pub fn beta_sweep(
    model_config: &ModelConfig,
    build_seed: u64,
    train_set: &[PoseSample],
    test_set: &[PoseSample],
    betas: &[f64],
    config: &TrainConfig,
) -> Result<BetaSweep> {
    if betas.len() < 3 {
        return Err(Error::InvalidArgument("beta sweep needs at least 3 values".into()));
    }
    let (lo, hi) = betas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    if lo <= 0.0 || hi / lo < 100.0 {
        return Err(Error::InvalidArgument(
            "beta sweep must span at least two orders of magnitude".into(),
        ));
    }
    let mut rows = Vec::with_capacity(betas.len());
    let mut best: Option<(f64, f64)> = None;
    for &beta in betas {
        let mc = ModelConfig { beta, ..model_config.clone() };
        let model = build_model(&mc, build_seed)?;
        match train(&model, train_set, test_set, config, None) {
            Ok(out) => {
                let report = evaluate(&model, test_set, &out.mean, &config.crop, CropMode::Center)?;
                let score = beta_scalarization(
                    report.median_position_error_m,
                    report.median_orientation_error_deg,
                    mc.position_extent,
                );
                if best.map(|(_, s)| score < s).unwrap_or(true) {
                    best = Some((beta, score));
                }
                rows.push((
                    beta,
                    SweepResult::Ok {
                        median_position_error_m: report.median_position_error_m,
                        median_orientation_error_deg: report.median_orientation_error_deg,
                    },
                ));
            }
            Err(e @ Error::Divergence { .. }) => {
                rows.push((beta, SweepResult::Diverged(e.to_string())));
            }
            Err(e) => return Err(e),
        }
    }
    let selected_beta = best
        .map(|(b, _)| b)
        .ok_or_else(|| Error::DegenerateEstimate("every beta run diverged".into()))?;
    Ok(BetaSweep { rows, selected_beta })
}

#[derive(Debug, Clone)]
pub struct SpacingRow {
    pub spacing_m: f64,
    pub train_count: usize,
    pub result: SweepResult,
}

/// Subsample one base trajectory at each spacing (every k-th pose of the
/// finest trajectory), train, and evaluate on a fixed test set.
pub fn spacing_sweep(
    scene: &SceneSpec,
    model_config: &ModelConfig,
    build_seed: u64,
    trajectory_seed: u64,
    base_count: usize,
    spacings: &[f64],
    test_set: &[PoseSample],
    config: &TrainConfig,
) -> Result<Vec<SpacingRow>> {
    if spacings.is_empty() {
        return Err(Error::InvalidArgument("empty spacing list".into()));
    }
    if spacings.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("spacings must be strictly increasing".into()));
    }
    let base = spacings[0];
    let poses = sample_trajectory(scene, base, base_count, trajectory_seed)?;
    let samples: Vec<PoseSample> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = render_view(scene, p)?;
            s.frame_id = format!("sweep{i:05}");
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(spacings.len());
    for &spacing in spacings {
        let stride = (spacing / base).round().max(1.0) as usize;
        let subset: Vec<PoseSample> = samples.iter().step_by(stride).cloned().collect();
        if subset.len() < config.batch_size {
            return Err(Error::Config(format!(
                "spacing {spacing} yields {} frames, fewer than batch_size {}",
                subset.len(),
                config.batch_size
            )));
        }
        let model = build_model(model_config, build_seed)?;
        let result = match train(&model, &subset, test_set, config, None) {
            Ok(out) => {
                let report = evaluate(&model, test_set, &out.mean, &config.crop, CropMode::Center)?;
                SweepResult::Ok {
                    median_position_error_m: report.median_position_error_m,
                    median_orientation_error_deg: report.median_orientation_error_deg,
                }
            }
            Err(e @ Error::Divergence { .. }) => SweepResult::Diverged(e.to_string()),
            Err(e) => return Err(e),
        };
        rows.push(SpacingRow { spacing_m: spacing, train_count: subset.len(), result });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct HeadComparisonRow {
    pub kind: HeadKind,
    pub median_position_error_m: Option<f64>,
    pub median_orientation_error_deg: Option<f64>,
}

/// Train joint, position-only, and orientation-only models with the same
/// seed and data order; report each model's relevant medians.
pub fn joint_vs_separate(
    model_config: &ModelConfig,
    build_seed: u64,
    train_set: &[PoseSample],
    test_set: &[PoseSample],
    config: &TrainConfig,
) -> Result<Vec<HeadComparisonRow>> {
    let mut rows = Vec::with_capacity(3);
    for kind in [HeadKind::Full, HeadKind::PositionOnly, HeadKind::OrientationOnly] {
        let mc = ModelConfig { head_kind: kind, ..model_config.clone() };
        let model = build_model(&mc, build_seed)?;
        let out = train(&model, train_set, test_set, config, None)?.mean;
        let cspec = CropSpec { mode: CropMode::Center, ..config.crop.clone() };
        let mut pos_errors = Vec::new();
        let mut ori_errors = Vec::new();
        for sample in test_set {
            let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
            let input = preprocess(&rescaled, &out, &cspec, None)?.remove(0);
            let raw = model.forward(&input.to_tensor(false), false)?.remove(0).raw.values();
            match kind {
                HeadKind::Full => {
                    let pred = Pose::from_vector(&raw)?;
                    pos_errors.push(position_error_m(pred.position, sample.pose.position));
                    ori_errors
                        .push(quat_angular_error_deg(&pred.orientation, &sample.pose.orientation));
                }
                HeadKind::PositionOnly => {
                    pos_errors.push(position_error_m(
                        [raw[0], raw[1], raw[2]],
                        sample.pose.position,
                    ));
                }
                HeadKind::OrientationOnly => {
                    let q = crate::geometry::quat_normalize(&crate::geometry::Quaternion::new(
                        raw[0], raw[1], raw[2], raw[3],
                    ))?;
                    ori_errors.push(quat_angular_error_deg(&q, &sample.pose.orientation));
                }
            }
        }
        rows.push(HeadComparisonRow {
            kind,
            median_position_error_m: (!pos_errors.is_empty()).then(|| median(&pos_errors)),
            median_orientation_error_deg: (!ori_errors.is_empty()).then(|| median(&ori_errors)),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// crop_side × crop_side values in [0,1] after min-max normalization.
    pub values: Vec<f64>,
    pub side: usize,
    pub offset_y: usize,
    pub offset_x: usize,
    pub rescale_side: usize,
    /// True when the raw gradient map was constant (e.g. all-zero weights);
    /// the normalized map is then all zeros.
    pub degenerate: bool,
}

/// |d loss / d pixel| on the center crop, max over color channels, min-max
/// normalized to [0,1].
pub fn saliency_map(
    model: &Model,
    sample: &PoseSample,
    mean: &Image,
    spec: &CropSpec,
) -> Result<SaliencyMap> {
    let cspec = CropSpec { mode: CropMode::Center, ..spec.clone() };
    let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
    let crops = crate::datagen::crop(&rescaled, &cspec, None)?;
    let c = crops.into_iter().next().expect("center crop");
    let input_img = crate::datagen::subtract_mean(&c.image, mean, c.offset_y, c.offset_x)?;
    let input = input_img.to_tensor(true);
    let output = model.forward(&input, false)?.remove(0);
    let loss = match model.config.head_kind {
        HeadKind::Full => pose_loss(&output, &sample.pose, model.config.beta)?,
        kind => head_loss(kind, &output, &sample.pose, model.config.beta)?,
    };
    backward(&loss)?;
    let grad = input.grad();
    let side = cspec.crop_side;
    let mut values = vec![0.0f64; side * side];
    for ch in 0..3 {
        for (i, v) in values.iter_mut().enumerate() {
            *v = v.max(grad[ch * side * side + i].abs());
        }
    }
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let degenerate = max - min <= 0.0;
    if degenerate {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
    }
    Ok(SaliencyMap {
        values,
        side,
        offset_y: c.offset_y,
        offset_x: c.offset_x,
        rescale_side: cspec.rescale_side,
        degenerate,
    })
}

/// Mean saliency over landmark pixels vs. background pixels, mapping each
/// crop pixel back to the render-resolution landmark mask.
pub fn saliency_mask_means(map: &SaliencyMap, sample: &PoseSample) -> Result<(f64, f64)> {
    let (rh, rw) = (sample.image.height, sample.image.width);
    if sample.landmark_mask.len() != rh * rw {
        return Err(Error::InvalidArgument("landmark mask does not match image".into()));
    }
    // the rescale step kept aspect: shortest side == rescale_side
    let scale = if rh <= rw {
        rh as f64 / map.rescale_side as f64
    } else {
        rw as f64 / map.rescale_side as f64
    };
    let (mut fg_sum, mut fg_n, mut bg_sum, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..map.side {
        for x in 0..map.side {
            let ry = (((map.offset_y + y) as f64 + 0.5) * scale) as usize;
            let rx = (((map.offset_x + x) as f64 + 0.5) * scale) as usize;
            let (ry, rx) = (ry.min(rh - 1), rx.min(rw - 1));
            let v = map.values[y * map.side + x];
            if sample.landmark_mask[ry * rw + rx] {
                fg_sum += v;
                fg_n += 1;
            } else {
                bg_sum += v;
                bg_n += 1;
            }
        }
    }
    if fg_n == 0 || bg_n == 0 {
        return Err(Error::InvalidArgument(
            "saliency statistic needs both landmark and background pixels".into(),
        ));
    }
    Ok((fg_sum / fg_n as f64, bg_sum / bg_n as f64))
}

pub fn write_saliency_pgm(map: &SaliencyMap, path: &Path) -> Result<()> {
    write_pgm(&map.values, map.side, map.side, path)
}

#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub parameter_bytes: usize,
    pub center_ms_per_frame: f64,
    pub dense_ms_per_frame: f64,
    pub inference_count: usize,
}

/// Median wall-clock over ≥100 center-crop inferences, plus one dense pass.
pub fn efficiency_report(
    model: &Model,
    sample: &PoseSample,
    mean: &Image,
    spec: &CropSpec,
) -> Result<EfficiencyReport> {
    let cspec = CropSpec { mode: CropMode::Center, ..spec.clone() };
    let rescaled = rescale_shortest_side(&sample.image, cspec.rescale_side)?;
    let input = preprocess(&rescaled, mean, &cspec, None)?.remove(0).to_tensor(false);
    let runs = 100usize;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let _ = model.forward(&input, false)?;
        times.push(start.elapsed().as_secs_f64() * 1000.0);
    }
    let center_ms = median(&times);

    let dspec = CropSpec { mode: CropMode::Dense, ..spec.clone() };
    let dense_inputs = preprocess(&rescaled, mean, &dspec, None)?;
    let start = Instant::now();
    for di in &dense_inputs {
        let _ = model.forward(&di.to_tensor(false), false)?;
    }
    let dense_ms = start.elapsed().as_secs_f64() * 1000.0;

    Ok(EfficiencyReport {
        parameter_bytes: model.parameter_count() * 8,
        center_ms_per_frame: center_ms,
        dense_ms_per_frame: dense_ms,
        inference_count: runs + dense_inputs.len(),
    })
}

/// Deterministic report files: per-frame records, summary key-values, and
/// the two cumulative histograms. Timing goes to `<stem>_timing.csv` only.
pub fn write_report_files(dir: &Path, stem: &str, report: &ExperimentReport) -> Result<()> {
    let mut frames = std::fs::File::create(dir.join(format!("{stem}_frames.csv")))?;
    writeln!(frames, "frame_id,position_error_m,orientation_error_deg")?;
    for r in &report.records {
        writeln!(frames, "{},{:e},{:e}", r.frame_id, r.position_error_m, r.orientation_error_deg)?;
    }

    let mut summary = std::fs::File::create(dir.join(format!("{stem}_summary.csv")))?;
    writeln!(summary, "key,value")?;
    writeln!(summary, "frames,{}", report.records.len())?;
    writeln!(summary, "median_position_error_m,{:e}", report.median_position_error_m)?;
    writeln!(summary, "median_orientation_error_deg,{:e}", report.median_orientation_error_deg)?;
    for (p, pos, ori) in &report.percentiles {
        writeln!(summary, "p{p:.0}_position_error_m,{pos:e}")?;
        writeln!(summary, "p{p:.0}_orientation_error_deg,{ori:e}")?;
    }
    writeln!(summary, "model_size_bytes,{}", report.model_size_bytes)?;
    writeln!(summary, "forwards_per_frame,{}", report.forwards_per_frame)?;

    for (name, data) in [
        ("cum_position", &report.cumulative_position),
        ("cum_orientation", &report.cumulative_orientation),
    ] {
        let mut f = std::fs::File::create(dir.join(format!("{stem}_{name}.csv")))?;
        writeln!(f, "error,fraction")?;
        for (e, frac) in data {
            writeln!(f, "{e:e},{frac:e}")?;
        }
    }

    let mut timing = std::fs::File::create(dir.join(format!("{stem}_timing.csv")))?;
    writeln!(timing, "key,value")?;
    writeln!(timing, "inference_ms_per_frame,{:.6}", report.inference_ms_per_frame)?;
    Ok(())
}

/// Summary key-value file reader (for `report` round-trips).
pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "key,value" {
                return Err(Error::Format { line: 1, msg: format!("bad summary header '{line}'") });
            }
            continue;
        }
        let (k, v) = line.split_once(',').ok_or(Error::Format {
            line: idx + 1,
            msg: format!("expected 'key,value', got '{line}'"),
        })?;
        rows.push((k.to_string(), v.to_string()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_scene;
    use crate::model::LayerSpec;
    use crate::training::scene_mean;

    fn fixture() -> (Vec<PoseSample>, Vec<PoseSample>, Model, Image, CropSpec) {
        let mut scene = generate_scene(21, [10.0, 10.0, 2.0]).unwrap();
        scene.intrinsics = crate::datagen::Intrinsics::centered(32, 32, 30.0);
        let train_poses = sample_trajectory(&scene, 1.5, 8, 1).unwrap();
        let test_poses = sample_trajectory(&scene, 1.5, 4, 2).unwrap();
        let render = |poses: &[Pose], tag: &str| -> Vec<PoseSample> {
            poses
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut s = render_view(&scene, p).unwrap();
                    s.frame_id = format!("{tag}{i:03}");
                    s
                })
                .collect()
        };
        let train_set = render(&train_poses, "train");
        let test_set = render(&test_poses, "test");
        let mc = tiny_config();
        let model = build_model(&mc, 3).unwrap();
        let spec = CropSpec { rescale_side: 32, crop_side: 28, mode: CropMode::Center, dense_count: 8 };
        let mean = scene_mean(&train_set, &spec).unwrap();
        (train_set, test_set, model, mean, spec)
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: 28,
            trunk: vec![
                LayerSpec::Conv { out_channels: 6, kernel: 5, stride: 2, padding: 2 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 12, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
            feature_dim: 16,
            num_heads: 1,
            aux_head_weights: vec![1.0],
            beta: 5.0,
            position_extent: [10.0, 10.0, 2.0],
            head_kind: HeadKind::Full,
        }
    }

    #[test]
    fn center_mode_is_one_forward_dense_is_dense_count() {
        let (_, test_set, model, mean, spec) = fixture();
        let center = evaluate(&model, &test_set, &mean, &spec, CropMode::Center).unwrap();
        assert_eq!(center.forwards_per_frame, 1);
        let dense = evaluate(&model, &test_set, &mean, &spec, CropMode::Dense).unwrap();
        assert_eq!(dense.forwards_per_frame, spec.dense_count);
    }

    #[test]
    fn self_consistency_against_own_predictions() {
        // evaluate a model against its own center-crop predictions as
        // ground truth: all errors 0
        let (_, test_set, model, mean, spec) = fixture();
        let cspec = CropSpec { mode: CropMode::Center, ..spec.clone() };
        let relabeled: Vec<PoseSample> = test_set
            .iter()
            .map(|s| {
                let rescaled = rescale_shortest_side(&s.image, cspec.rescale_side).unwrap();
                let input = preprocess(&rescaled, &mean, &cspec, None).unwrap().remove(0);
                let pred =
                    model.forward(&input.to_tensor(false), false).unwrap().remove(0).to_pose().unwrap();
                PoseSample { pose: pred, ..s.clone() }
            })
            .collect();
        let report = evaluate(&model, &relabeled, &mean, &spec, CropMode::Center).unwrap();
        for r in &report.records {
            assert!(r.position_error_m < 1e-9, "{}", r.position_error_m);
            // arccos near 1 is ill-conditioned: identical quaternions can
            // still read as ~1e-6 degrees
            assert!(r.orientation_error_deg < 1e-4, "{}", r.orientation_error_deg);
        }
    }

    #[test]
    fn report_invariants_hold() {
        let (_, test_set, model, mean, spec) = fixture();
        let report = evaluate(&model, &test_set, &mean, &spec, CropMode::Center).unwrap();
        // medians recomputed from per-frame records match
        let pos: Vec<f64> = report.records.iter().map(|r| r.position_error_m).collect();
        assert_eq!(median(&pos), report.median_position_error_m);
        // cumulative fractions non-decreasing, ending at 1
        let fr: Vec<f64> = report.cumulative_position.iter().map(|(_, f)| *f).collect();
        assert!(fr.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*fr.last().unwrap(), 1.0);
        // 95th percentile present
        assert!(report.percentiles.iter().any(|(p, _, _)| *p == 95.0));
        // records sorted by frame_id
        let ids: Vec<&str> = report.records.iter().map(|r| r.frame_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn nn_on_training_set_is_all_zero() {
        let (train_set, _, model, mean, spec) = fixture();
        let index = build_feature_index(&model, &train_set, &mean, &spec).unwrap();
        let report = nn_baseline(&index, &model, &train_set, &mean, &spec).unwrap();
        assert_eq!(report.median_position_error_m, 0.0);
        assert_eq!(report.median_orientation_error_deg, 0.0);
    }

    #[test]
    fn empty_index_rejected() {
        let (_, test_set, model, mean, spec) = fixture();
        let index = FeatureIndex { entries: vec![], feature_dim: 16 };
        assert!(nn_baseline(&index, &model, &test_set, &mean, &spec).is_err());
    }

    #[test]
    fn beta_sweep_validates_span() {
        let (train_set, test_set, _, _, _) = fixture();
        let config = crate::training::TrainConfig {
            batch_size: 4,
            epochs: 1,
            base_lr: 1e-3,
            momentum: 0.9,
            decay_factor: 0.5,
            decay_period: 10,
            seed: 1,
            crop: CropSpec { rescale_side: 32, crop_side: 28, mode: CropMode::Random, dense_count: 8 },
            eval_every: 1,
        };
        let mc = tiny_config();
        assert!(beta_sweep(&mc, 3, &train_set, &test_set, &[1.0, 10.0], &config).is_err());
        assert!(beta_sweep(&mc, 3, &train_set, &test_set, &[1.0, 5.0, 10.0], &config).is_err());
        let sweep =
            beta_sweep(&mc, 3, &train_set, &test_set, &[1.0, 10.0, 100.0], &config).unwrap();
        assert_eq!(sweep.rows.len(), 3);
        assert!([1.0, 10.0, 100.0].contains(&sweep.selected_beta));
    }

    #[test]
    fn saliency_shape_normalization_and_degenerate_flag() {
        let (_, test_set, model, mean, spec) = fixture();
        let map = saliency_map(&model, &test_set[0], &mean, &spec).unwrap();
        assert_eq!(map.values.len(), 28 * 28);
        assert!(!map.degenerate);
        let max = map.values.iter().cloned().fold(0.0f64, f64::max);
        let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(max, 1.0);
        assert_eq!(min, 0.0);

        // zeroing the whole model makes the gradient flat: degenerate map
        for (_, p) in model.named_parameters() {
            p.set_values(&vec![0.0; p.len()]);
        }
        let flat = saliency_map(&model, &test_set[0], &mean, &spec).unwrap();
        assert!(flat.degenerate);
        assert!(flat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn efficiency_report_bytes_match_checkpoint_payload() {
        let (_, test_set, model, mean, spec) = fixture();
        let report = efficiency_report(&model, &test_set[0], &mean, &spec).unwrap();
        let ckpt = crate::checkpoint::Checkpoint::from_model(&model, None, 0).unwrap();
        assert_eq!(report.parameter_bytes, ckpt.parameter_bytes());
        assert!(report.inference_count >= 100);
        assert!(report.center_ms_per_frame > 0.0);
    }

    #[test]
    fn report_files_roundtrip_medians() {
        let (_, test_set, model, mean, spec) = fixture();
        let report = evaluate(&model, &test_set, &mean, &spec, CropMode::Center).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report_files(dir.path(), "eval", &report).unwrap();
        let summary = read_summary(&dir.path().join("eval_summary.csv")).unwrap();
        let med = summary
            .iter()
            .find(|(k, _)| k == "median_position_error_m")
            .map(|(_, v)| v.parse::<f64>().unwrap())
            .unwrap();
        assert_eq!(med, report.median_position_error_m);
        // timing lives in its own file, not the summary
        assert!(summary.iter().all(|(k, _)| !k.contains("ms")));
        assert!(dir.path().join("eval_timing.csv").exists());
    }

    #[test]
    fn percentile_interpolation() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&sorted, 50.0), 3.0);
        assert_eq!(percentile(&sorted, 95.0), 4.8);
        assert_eq!(percentile(&sorted, 100.0), 5.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
    }
}
