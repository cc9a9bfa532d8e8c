//! The pose-regression network: a configurable convolutional trunk, a
//! penultimate localization feature layer, affine regressor heads, and the
//! joint position/orientation loss with scale factor beta.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::tensor::ops::{
    conv2d, global_avg_pool, l2_norm_diff, linear, max_pool2d, relu, slice, weighted_sum,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    GlobalAvgPool,
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                write!(f, "conv:{out_channels}:{kernel}:{stride}:{padding}")
            }
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool { window, stride } => write!(f, "pool:{window}:{stride}"),
            LayerSpec::GlobalAvgPool => write!(f, "gap"),
        }
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<LayerSpec> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad layer spec '{s}'")))
        };
        match parts[0] {
            "conv" if parts.len() == 5 => Ok(LayerSpec::Conv {
                out_channels: num(1)?,
                kernel: num(2)?,
                stride: num(3)?,
                padding: num(4)?,
            }),
            "relu" if parts.len() == 1 => Ok(LayerSpec::Relu),
            "pool" if parts.len() == 3 => {
                Ok(LayerSpec::MaxPool { window: num(1)?, stride: num(2)? })
            }
            "gap" if parts.len() == 1 => Ok(LayerSpec::GlobalAvgPool),
            _ => Err(Error::Config(format!("unknown layer spec '{s}'"))),
        }
    }
}

/// What the regressor heads output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// 7-D pose vector: 3 position + 4 quaternion components.
    Full,
    /// 3-D position only.
    PositionOnly,
    /// 4-D quaternion only.
    OrientationOnly,
}

impl HeadKind {
    pub fn out_dim(&self) -> usize {
        match self {
            HeadKind::Full => 7,
            HeadKind::PositionOnly => 3,
            HeadKind::OrientationOnly => 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Full => "full",
            HeadKind::PositionOnly => "position",
            HeadKind::OrientationOnly => "orientation",
        }
    }

    pub fn parse(s: &str) -> Result<HeadKind> {
        match s {
            "full" => Ok(HeadKind::Full),
            "position" => Ok(HeadKind::PositionOnly),
            "orientation" => Ok(HeadKind::OrientationOnly),
            _ => Err(Error::Config(format!("unknown head kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub trunk: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub num_heads: usize,
    pub aux_head_weights: Vec<f64>,
    pub beta: f64,
    pub position_extent: [f64; 3],
    pub head_kind: HeadKind,
}

impl ModelConfig {
    /// Smallest trunk that exercises every layer op and trains in minutes.
    pub fn desk_default(input_size: usize, feature_dim: usize, beta: f64, extent: [f64; 3]) -> ModelConfig {
        ModelConfig {
            input_size,
            trunk: vec![
                LayerSpec::Conv { out_channels: 16, kernel: 7, stride: 2, padding: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 3, stride: 2 },
                LayerSpec::Conv { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 3, stride: 2 },
                LayerSpec::Conv { out_channels: 64, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
            feature_dim,
            num_heads: 1,
            aux_head_weights: vec![1.0],
            beta,
            position_extent: extent,
            head_kind: HeadKind::Full,
        }
    }

    /// Shape of the activation after each trunk layer, starting from
    /// [3, input_size, input_size]. Errors name the offending layer.
    pub fn trunk_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = vec![3usize, self.input_size, self.input_size];
        let mut shapes = Vec::with_capacity(self.trunk.len());
        for (i, layer) in self.trunk.iter().enumerate() {
            let bad = |msg: String| Error::Config(format!("trunk layer {i} ({layer}): {msg}"));
            match layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    if shape.len() != 3 {
                        return Err(bad("needs a [C,H,W] input".into()));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if *stride == 0 || *kernel == 0 {
                        return Err(bad("kernel and stride must be positive".into()));
                    }
                    if *kernel > h + 2 * padding || *kernel > w + 2 * padding {
                        return Err(bad(format!("kernel {kernel} exceeds padded input {h}x{w}")));
                    }
                    shape = vec![
                        *out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ];
                }
                LayerSpec::Relu => {}
                LayerSpec::MaxPool { window, stride } => {
                    if shape.len() != 3 {
                        return Err(bad("needs a [C,H,W] input".into()));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if *window == 0 || *stride == 0 {
                        return Err(bad("window and stride must be positive".into()));
                    }
                    if *window > h || *window > w {
                        return Err(bad(format!("window {window} exceeds input {h}x{w}")));
                    }
                    shape = vec![shape[0], (h - window) / stride + 1, (w - window) / stride + 1];
                }
                LayerSpec::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(bad("needs a [C,H,W] input".into()));
                    }
                    shape = vec![shape[0]];
                }
            }
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.num_heads > 3 {
            return Err(Error::Config(format!("num_heads {} outside 1..=3", self.num_heads)));
        }
        if self.aux_head_weights.len() != self.num_heads {
            return Err(Error::Config(format!(
                "{} aux head weights for {} heads",
                self.aux_head_weights.len(),
                self.num_heads
            )));
        }
        let last = *self.aux_head_weights.last().unwrap();
        if self.aux_head_weights.iter().any(|&w| w > last) {
            return Err(Error::Config("final head weight must be the largest".into()));
        }
        if self.feature_dim < 8 {
            return Err(Error::Config(format!("feature_dim {} < 8", self.feature_dim)));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config(format!("beta {} must be positive", self.beta)));
        }
        if self.position_extent.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("position_extent must be strictly positive".into()));
        }
        self.trunk_shapes().map(|_| ())
    }

    /// Trunk layer index after which each head taps the activation. The
    /// final head always taps the last layer; auxiliary heads tap evenly
    /// spaced earlier layers.
    fn head_taps(&self) -> Vec<usize> {
        let n = self.trunk.len();
        (1..=self.num_heads)
            .map(|h| (n * h).div_ceil(self.num_heads) - 1)
            .collect()
    }

    /// Canonical plain-text key-value form.
    pub fn to_text(&self) -> String {
        let trunk: Vec<String> = self.trunk.iter().map(|l| l.to_string()).collect();
        let weights: Vec<String> = self.aux_head_weights.iter().map(|w| format!("{w:.12e}")).collect();
        format!(
            "# posereg model config v1\n\
             input_size = {}\n\
             trunk = {}\n\
             feature_dim = {}\n\
             num_heads = {}\n\
             aux_head_weights = {}\n\
             beta = {:.12e}\n\
             position_extent = {:.12e} {:.12e} {:.12e}\n\
             head_kind = {}\n",
            self.input_size,
            trunk.join(","),
            self.feature_dim,
            self.num_heads,
            weights.join(" "),
            self.beta,
            self.position_extent[0],
            self.position_extent[1],
            self.position_extent[2],
            self.head_kind.as_str(),
        )
    }

    pub fn from_text(text: &str) -> Result<ModelConfig> {
        let kv = crate::config::parse_key_values(text)?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k).map(|s| s.as_str()).ok_or_else(|| Error::Config(format!("missing key '{k}'")))
        };
        let trunk: Vec<LayerSpec> = get("trunk")?
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?;
        let weights: Vec<f64> = get("aux_head_weights")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad weight '{s}'"))))
            .collect::<Result<_>>()?;
        let extent: Vec<f64> = get("position_extent")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad extent '{s}'"))))
            .collect::<Result<_>>()?;
        if extent.len() != 3 {
            return Err(Error::Config("position_extent needs 3 values".into()));
        }
        let parse_num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Config(format!("bad number for '{k}'")))
        };
        let config = ModelConfig {
            input_size: parse_num("input_size")? as usize,
            trunk,
            feature_dim: parse_num("feature_dim")? as usize,
            num_heads: parse_num("num_heads")? as usize,
            aux_head_weights: weights,
            beta: parse_num("beta")?,
            position_extent: [extent[0], extent[1], extent[2]],
            head_kind: HeadKind::parse(get("head_kind")?)?,
        };
        config.validate()?;
        Ok(config)
    }

    /// FNV-1a 64-bit digest of the canonical text form.
    pub fn digest(&self) -> u64 {
        crate::config::fnv1a64(self.to_text().as_bytes())
    }
}

struct HeadParams {
    tap: usize,
    feature_weights: Tensor,
    feature_bias: Tensor,
    head_weights: Tensor,
    head_bias: Tensor,
}

pub struct Model {
    pub config: ModelConfig,
    conv_params: Vec<(Tensor, Tensor)>,
    heads: Vec<HeadParams>,
}

/// Raw regressor output plus the localization feature it was computed from.
pub struct PoseOutput {
    pub raw: Tensor,
    pub feature: Tensor,
}

impl PoseOutput {
    /// Test-time pose: quaternion part normalized to unit length. Only
    /// meaningful for full 7-D heads.
    pub fn to_pose(&self) -> Result<Pose> {
        let v = self.raw.values();
        Pose::from_vector(&v)
    }
}

// Zero-mean uniform with standard deviation 1/sqrt(fan_in), i.e. bounds
// ±sqrt(3/fan_in).
fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values, true).unwrap()
}

// Biases start at zero so initial activations are input-driven, not
// bias-dominated.
fn zero_bias(len: usize) -> Tensor {
    Tensor::zeros(vec![len], true)
}

/// Rescale the position rows of a final regressor so row d has norm
/// base_scale · extent_d. Orientation rows are untouched.
pub fn init_position_rows(weights: &Tensor, extent: [f64; 3], base_scale: f64) -> Result<()> {
    if extent.iter().any(|&e| e <= 0.0) {
        return Err(Error::Config(format!("position extent must be positive, got {extent:?}")));
    }
    let shape = weights.shape();
    if shape.len() != 2 || shape[0] < 3 {
        return Err(Error::Config(format!(
            "init_position_rows expects [>=3, feature_dim] weights, got {shape:?}"
        )));
    }
    let cols = shape[1];
    weights.update_values(|vals| {
        for d in 0..3 {
            let row = &mut vals[d * cols..(d + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let target = base_scale * extent[d];
                row.iter_mut().for_each(|v| *v *= target / norm);
            }
        }
    });
    Ok(())
}

/// Construct a model with deterministic seeded initialization.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let shapes = config.trunk_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut conv_params = Vec::new();
    let mut in_channels = 3usize;
    for layer in &config.trunk {
        if let LayerSpec::Conv { out_channels, kernel, .. } = layer {
            let fan_in = in_channels * kernel * kernel;
            let kernels =
                uniform_init(&mut rng, vec![*out_channels, in_channels, *kernel, *kernel], fan_in);
            let bias = zero_bias(*out_channels);
            conv_params.push((kernels, bias));
            in_channels = *out_channels;
        }
    }

    let base_scale = 1.0 / (config.feature_dim as f64).sqrt();
    let mut heads = Vec::new();
    for &tap in &config.head_taps() {
        let tap_dim = shapes[tap][0];
        let feature_weights = uniform_init(&mut rng, vec![config.feature_dim, tap_dim], tap_dim);
        let feature_bias = zero_bias(config.feature_dim);
        let head_weights = uniform_init(
            &mut rng,
            vec![config.head_kind.out_dim(), config.feature_dim],
            config.feature_dim,
        );
        let head_bias = zero_bias(config.head_kind.out_dim());
        if config.head_kind != HeadKind::OrientationOnly {
            init_position_rows(&head_weights, config.position_extent, base_scale)?;
        }
        heads.push(HeadParams { tap, feature_weights, feature_bias, head_weights, head_bias });
    }

    Ok(Model { config: config.clone(), conv_params, heads })
}

impl Model {
    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Stable (name, tensor) listing used by checkpoints.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.conv_params.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), k.clone()));
            out.push((format!("conv{i}.bias"), b.clone()));
        }
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("head{h}.feature.weights"), head.feature_weights.clone()));
            out.push((format!("head{h}.feature.bias"), head.feature_bias.clone()));
            out.push((format!("head{h}.regressor.weights"), head.head_weights.clone()));
            out.push((format!("head{h}.regressor.bias"), head.head_bias.clone()));
        }
        out
    }

    /// Convolutional trunk parameters only (shared representation).
    pub fn trunk_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.conv_params.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), k.clone()));
            out.push((format!("conv{i}.bias"), b.clone()));
        }
        out
    }

    /// Copy trunk weights from another model with an identical trunk spec.
    pub fn load_trunk_from(&mut self, other: &Model) -> Result<()> {
        if self.conv_params.len() != other.conv_params.len() {
            return Err(Error::Config("trunk layer count mismatch in transfer".into()));
        }
        for ((k, b), (ok, ob)) in self.conv_params.iter().zip(&other.conv_params) {
            if k.shape() != ok.shape() {
                return Err(Error::Config("trunk kernel shape mismatch in transfer".into()));
            }
            k.set_values(&ok.values());
            b.set_values(&ob.values());
        }
        Ok(())
    }

    /// One [`PoseOutput`] per head in train mode; only the final head
    /// otherwise.
    pub fn forward(&self, image: &Tensor, train_mode: bool) -> Result<Vec<PoseOutput>> {
        let s = self.config.input_size;
        if image.shape() != vec![3, s, s] {
            return Err(Error::InvalidArgument(format!(
                "input shape {:?}, model expects [3, {s}, {s}]",
                image.shape()
            )));
        }
        let mut activations = Vec::with_capacity(self.config.trunk.len());
        let mut x = image.clone();
        let mut conv_idx = 0;
        for layer in &self.config.trunk {
            x = match layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (k, b) = &self.conv_params[conv_idx];
                    conv_idx += 1;
                    conv2d(&x, k, b, *stride, *padding)?
                }
                LayerSpec::Relu => relu(&x),
                LayerSpec::MaxPool { window, stride } => max_pool2d(&x, *window, *stride)?,
                LayerSpec::GlobalAvgPool => global_avg_pool(&x)?,
            };
            activations.push(x.clone());
        }

        let heads: Vec<&HeadParams> = if train_mode {
            self.heads.iter().collect()
        } else {
            vec![self.heads.last().expect("model has at least one head")]
        };
        let mut outputs = Vec::with_capacity(heads.len());
        for head in heads {
            let tapped = &activations[head.tap];
            let flat = if tapped.shape().len() == 3 {
                global_avg_pool(tapped)?
            } else {
                tapped.clone()
            };
            let feature = relu(&linear(&flat, &head.feature_weights, &head.feature_bias)?);
            let raw = linear(&feature, &head.head_weights, &head.head_bias)?;
            outputs.push(PoseOutput { raw, feature });
        }
        Ok(outputs)
    }

    /// Trunk output only (flattened via global average pooling if the last
    /// trunk layer is spatial). Used by the pretext classifier.
    pub fn trunk_forward(&self, image: &Tensor) -> Result<Tensor> {
        let s = self.config.input_size;
        if image.shape() != vec![3, s, s] {
            return Err(Error::InvalidArgument(format!(
                "input shape {:?}, model expects [3, {s}, {s}]",
                image.shape()
            )));
        }
        let mut x = image.clone();
        let mut conv_idx = 0;
        for layer in &self.config.trunk {
            x = match layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (k, b) = &self.conv_params[conv_idx];
                    conv_idx += 1;
                    conv2d(&x, k, b, *stride, *padding)?
                }
                LayerSpec::Relu => relu(&x),
                LayerSpec::MaxPool { window, stride } => max_pool2d(&x, *window, *stride)?,
                LayerSpec::GlobalAvgPool => global_avg_pool(&x)?,
            };
        }
        if x.shape().len() == 3 {
            x = global_avg_pool(&x)?;
        }
        Ok(x)
    }

    /// Channel count of the trunk output after flattening.
    pub fn trunk_out_dim(&self) -> usize {
        let shapes = self.config.trunk_shapes().expect("validated at build time");
        shapes.last().expect("non-empty trunk")[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Layer shapes and parameter totals, for the size/efficiency report.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input: [3, {0}, {0}]\n", self.config.input_size));
        if let Ok(shapes) = self.config.trunk_shapes() {
            for (layer, shape) in self.config.trunk.iter().zip(shapes) {
                out.push_str(&format!("{layer} -> {shape:?}\n"));
            }
        }
        for (h, head) in self.heads.iter().enumerate() {
            out.push_str(&format!(
                "head {h}: tap {} -> feature [{}] -> pose [{}]\n",
                head.tap,
                self.config.feature_dim,
                self.config.head_kind.out_dim()
            ));
        }
        let count = self.parameter_count();
        out.push_str(&format!("parameters: {count} ({} bytes as f64)\n", count * 8));
        out
    }
}

/// Joint pose loss for one head output: position norm plus beta times the
/// quaternion-difference norm. The target quaternion is flipped into the
/// prediction's hemisphere, and the prediction is NOT normalized here.
pub fn pose_loss(output: &PoseOutput, target: &Pose, beta: f64) -> Result<Tensor> {
    head_loss(HeadKind::Full, output, target, beta)
}

pub fn head_loss(kind: HeadKind, output: &PoseOutput, target: &Pose, beta: f64) -> Result<Tensor> {
    let expected = kind.out_dim();
    if output.raw.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "head output has {} components, expected {expected}",
            output.raw.len()
        )));
    }
    let tv = target.to_vector();
    match kind {
        HeadKind::Full => {
            let pos = slice(&output.raw, 0, 3)?;
            let quat = slice(&output.raw, 3, 4)?;
            let target_pos = Tensor::new(vec![3], tv[..3].to_vec(), false)?;
            let tq = aligned_target_quat(&quat.values(), &tv[3..]);
            let target_quat = Tensor::new(vec![4], tq, false)?;
            let pos_term = l2_norm_diff(&pos, &target_pos)?;
            let quat_term = l2_norm_diff(&quat, &target_quat)?;
            weighted_sum(&[(1.0, pos_term), (beta, quat_term)])
        }
        HeadKind::PositionOnly => {
            let target_pos = Tensor::new(vec![3], tv[..3].to_vec(), false)?;
            l2_norm_diff(&output.raw, &target_pos)
        }
        HeadKind::OrientationOnly => {
            let tq = aligned_target_quat(&output.raw.values(), &tv[3..]);
            let target_quat = Tensor::new(vec![4], tq, false)?;
            l2_norm_diff(&output.raw, &target_quat)
        }
    }
}

fn aligned_target_quat(predicted: &[f64], target: &[f64]) -> Vec<f64> {
    let dot: f64 = predicted.iter().zip(target).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        target.iter().map(|v| -v).collect()
    } else {
        target.to_vec()
    }
}

/// Sum of per-head losses weighted by the auxiliary head weights.
pub fn total_loss(outputs: &[PoseOutput], target: &Pose, config: &ModelConfig) -> Result<Tensor> {
    if outputs.len() != config.num_heads {
        return Err(Error::InvalidArgument(format!(
            "{} outputs for {} heads",
            outputs.len(),
            config.num_heads
        )));
    }
    let terms: Vec<(f64, Tensor)> = outputs
        .iter()
        .zip(&config.aux_head_weights)
        .map(|(o, &w)| head_loss(config.head_kind, o, target, config.beta).map(|l| (w, l)))
        .collect::<Result<_>>()?;
    weighted_sum(&terms)
}

pub const BETA_MIN_DEFAULT: f64 = 1.0;
pub const BETA_MAX_DEFAULT: f64 = 1e4;

/// Beta as the ratio of expected position error to expected
/// quaternion-difference norm at the end of (a short proxy for) training.
pub fn estimate_beta(
    median_position_error_m: f64,
    median_quat_diff_norm: f64,
    beta_min: f64,
    beta_max: f64,
) -> Result<f64> {
    if median_quat_diff_norm <= 0.0 {
        return Err(Error::DegenerateEstimate(format!(
            "orientation error {median_quat_diff_norm} must be positive"
        )));
    }
    if median_position_error_m <= 0.0 {
        return Err(Error::DegenerateEstimate(format!(
            "position error {median_position_error_m} must be positive"
        )));
    }
    Ok((median_position_error_m / median_quat_diff_norm).clamp(beta_min, beta_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: 8,
            trunk: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 6, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
            feature_dim: 8,
            num_heads: 1,
            aux_head_weights: vec![1.0],
            beta: 10.0,
            position_extent: [10.0, 10.0, 2.0],
            head_kind: HeadKind::Full,
        }
    }

    fn image(size: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![3, size, size], values, false).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let config = tiny_config();
        let a = build_model(&config, 42).unwrap();
        let b = build_model(&config, 42).unwrap();
        for ((_, x), (_, y)) in a.named_parameters().iter().zip(b.named_parameters()) {
            assert_eq!(x.values(), y.values());
        }
        let c = build_model(&config, 43).unwrap();
        assert_ne!(a.parameters()[0].values(), c.parameters()[0].values());
    }

    #[test]
    fn three_heads_produce_three_outputs_in_train_mode() {
        let mut config = tiny_config();
        config.num_heads = 3;
        config.aux_head_weights = vec![0.3, 0.3, 1.0];
        let model = build_model(&config, 1).unwrap();
        let img = image(8, 0);
        let train = model.forward(&img, true).unwrap();
        assert_eq!(train.len(), 3);
        for o in &train {
            assert_eq!(o.raw.len(), 7);
            assert_eq!(o.feature.len(), config.feature_dim);
        }
        let test = model.forward(&img, false).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].raw.values(), train[2].raw.values());
    }

    #[test]
    fn invalid_chain_is_config_error_naming_layer() {
        let mut config = tiny_config();
        config.trunk.insert(3, LayerSpec::MaxPool { window: 100, stride: 1 });
        let err = build_model(&config, 1).err().expect("invalid chain must fail");
        assert!(err.to_string().contains("layer 3"), "{err}");
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let model = build_model(&tiny_config(), 1).unwrap();
        assert!(model.forward(&image(9, 0), false).is_err());
    }

    #[test]
    fn position_row_norms_follow_extent() {
        let config = tiny_config();
        let model = build_model(&config, 7).unwrap();
        let w = &model.heads[0].head_weights;
        let cols = config.feature_dim;
        let row_norm = |d: usize| {
            w.values()[d * cols..(d + 1) * cols]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        // extent (10, 10, 2): rows 0 and 1 share a norm, row 2 is 1/5 of it
        assert!((row_norm(0) / row_norm(1) - 1.0).abs() < 1e-9);
        assert!((row_norm(0) / row_norm(2) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn position_row_ratio_for_asymmetric_extent() {
        let w = Tensor::new(
            vec![7, 4],
            (0..28).map(|i| (i as f64 * 0.37).sin() + 0.1).collect(),
            true,
        )
        .unwrap();
        let before_row3: Vec<f64> = w.values()[12..16].to_vec();
        init_position_rows(&w, [140.0, 40.0, 10.0], 0.5).unwrap();
        let norms: Vec<f64> = (0..3)
            .map(|d| w.values()[d * 4..(d + 1) * 4].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        assert!((norms[0] / norms[1] - 3.5).abs() < 1e-9);
        assert!((norms[0] - 0.5 * 140.0).abs() < 1e-9);
        // orientation rows untouched
        assert_eq!(w.values()[12..16].to_vec(), before_row3);
        // doubling base_scale doubles every position row norm
        init_position_rows(&w, [140.0, 40.0, 10.0], 1.0).unwrap();
        let norms2: Vec<f64> = (0..3)
            .map(|d| w.values()[d * 4..(d + 1) * 4].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        for (a, b) in norms.iter().zip(&norms2) {
            assert!((b / a - 2.0).abs() < 1e-9);
        }
        assert!(init_position_rows(&w, [0.0, 1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn pose_loss_zero_at_exact_prediction() {
        let target = Pose::new([1.0, 2.0, 3.0], Quaternion::new(0.5, 0.5, 0.5, 0.5)).unwrap();
        let raw = Tensor::new(vec![7], target.to_vector().to_vec(), false).unwrap();
        let out = PoseOutput { raw, feature: Tensor::zeros(vec![8], false) };
        assert_eq!(pose_loss(&out, &target, 500.0).unwrap().item(), 0.0);
    }

    #[test]
    fn pose_loss_hand_case_and_beta_zero_limit() {
        // position error 5, quaternion-difference norm 0.1, beta 500 -> 55
        let target = Pose::new([0.0, 0.0, 0.0], Quaternion::IDENTITY).unwrap();
        let raw = Tensor::new(vec![7], vec![3.0, 4.0, 0.0, 1.1, 0.0, 0.0, 0.0], false).unwrap();
        let out = PoseOutput { raw, feature: Tensor::zeros(vec![8], false) };
        let loss = pose_loss(&out, &target, 500.0).unwrap().item();
        assert!((loss - 55.0).abs() < 1e-9, "loss = {loss}");
        // beta = 0 would be rejected by config validation, but the loss
        // itself degrades to the pure position term.
        let loss0 = pose_loss(&out, &target, 0.0).unwrap().item();
        assert!((loss0 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_invariant_to_target_sign() {
        let raw = Tensor::new(vec![7], vec![0.1, 0.2, 0.3, 0.9, 0.1, 0.0, 0.0], false).unwrap();
        let out = PoseOutput { raw, feature: Tensor::zeros(vec![8], false) };
        let q = Quaternion::new(0.8, 0.6, 0.0, 0.0);
        let t1 = Pose { position: [0.0; 3], orientation: crate::geometry::quat_normalize(&q).unwrap() };
        let t2 = Pose { position: [0.0; 3], orientation: t1.orientation.negate() };
        let l1 = pose_loss(&out, &t1, 123.0).unwrap().item();
        let l2 = pose_loss(&out, &t2, 123.0).unwrap().item();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights_heads() {
        let mut config = tiny_config();
        config.num_heads = 3;
        config.aux_head_weights = vec![0.3, 0.3, 1.0];
        let target = Pose::new([0.0, 0.0, 0.0], Quaternion::IDENTITY).unwrap();
        // Each head: position error 10, exact orientation -> head loss 10.
        let make = || PoseOutput {
            raw: Tensor::new(vec![7], vec![10.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], false).unwrap(),
            feature: Tensor::zeros(vec![8], false),
        };
        let outputs = vec![make(), make(), make()];
        let loss = total_loss(&outputs, &target, &config).unwrap().item();
        assert!((loss - 16.0).abs() < 1e-9);

        config.num_heads = 1;
        config.aux_head_weights = vec![1.0];
        let one = vec![make()];
        let single = total_loss(&one, &target, &config).unwrap().item();
        let direct = pose_loss(&one[0], &target, config.beta).unwrap().item();
        assert_eq!(single, direct);
    }

    #[test]
    fn estimate_beta_cases() {
        assert_eq!(estimate_beta(2.0, 0.004, BETA_MIN_DEFAULT, BETA_MAX_DEFAULT).unwrap(), 500.0);
        assert_eq!(estimate_beta(0.5, 0.002, BETA_MIN_DEFAULT, BETA_MAX_DEFAULT).unwrap(), 250.0);
        assert_eq!(estimate_beta(0.3, 0.3, BETA_MIN_DEFAULT, BETA_MAX_DEFAULT).unwrap(), 1.0);
        assert!(estimate_beta(1.0, 0.0, BETA_MIN_DEFAULT, BETA_MAX_DEFAULT).is_err());
    }

    #[test]
    fn config_text_roundtrip_and_digest() {
        let config = ModelConfig::desk_default(64, 256, 500.0, [10.0, 10.0, 2.0]);
        let text = config.to_text();
        let back = ModelConfig::from_text(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.digest(), config.digest());
        let other = ModelConfig::desk_default(64, 128, 500.0, [10.0, 10.0, 2.0]);
        assert_ne!(other.digest(), config.digest());
    }

    #[test]
    fn gradcheck_pose_loss_through_tiny_model() {
        let config = tiny_config();
        let model = build_model(&config, 3).unwrap();
        let img = image(8, 5);
        let target = Pose::new([0.5, -0.25, 1.0], Quaternion::new(0.9, 0.1, 0.2, -0.3)).unwrap();
        let params = model.parameters();
        let res = crate::oracle::finite_diff_check(
            &|_leaves: &[Tensor]| {
                let outputs = model.forward(&img, true).unwrap();
                total_loss(&outputs, &target, &config).unwrap()
            },
            &params,
            1e-6,
        );
        assert!(res.max_rel_err < 1e-4, "rel err {}", res.max_rel_err);
    }
}
