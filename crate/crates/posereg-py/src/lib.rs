//! Python bindings for posereg: scene generation, pose geometry, and
//! desk-scale training/evaluation. Images cross the boundary as flat
//! channel-major `[3 * height * width]` float lists.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use posereg::checkpoint::Checkpoint;
use posereg::datagen::{
    generate_scene, interpolation_split, read_scene_spec, render_view, sample_trajectory,
    write_scene_spec, CropMode, CropSpec, Image, Intrinsics, PoseSample, SceneSpec,
};
use posereg::evaluation::{evaluate, mean_pose_baseline};
use posereg::geometry::{self, average_pose_vectors, Pose, Quaternion};
use posereg::model::{build_model, Model, ModelConfig};
use posereg::training::{preprocess, train, TrainConfig};

fn py_err(e: posereg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn quat(q: [f64; 4]) -> Quaternion {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

/// A 6-DOF camera pose: position in meters plus a scalar-first unit
/// quaternion.
#[pyclass(name = "Pose", from_py_object)]
#[derive(Clone)]
struct PyPose {
    inner: Pose,
}

#[pymethods]
impl PyPose {
    #[new]
    fn new(position: [f64; 3], orientation: [f64; 4]) -> PyResult<Self> {
        Ok(PyPose { inner: Pose::new(position, quat(orientation)).map_err(py_err)? })
    }

    #[getter]
    fn position(&self) -> [f64; 3] {
        self.inner.position
    }

    /// Scalar-first [w, x, y, z].
    #[getter]
    fn orientation(&self) -> [f64; 4] {
        self.inner.orientation.as_array()
    }

    fn to_vector(&self) -> [f64; 7] {
        self.inner.to_vector()
    }

    fn __repr__(&self) -> String {
        let p = self.inner.position;
        let q = self.inner.orientation;
        format!(
            "Pose(position=[{:.3}, {:.3}, {:.3}], orientation=[{:.3}, {:.3}, {:.3}, {:.3}])",
            p[0], p[1], p[2], q.w, q.x, q.y, q.z
        )
    }
}

/// Angular distance in degrees between two unit quaternions, sign-invariant.
#[pyfunction]
fn quat_angular_error_deg(q1: [f64; 4], q2: [f64; 4]) -> f64 {
    geometry::quat_angular_error_deg(&quat(q1), &quat(q2))
}

/// Normalize to unit length and flip into the w >= 0 hemisphere.
#[pyfunction]
fn quat_canonicalize(q: [f64; 4]) -> PyResult<[f64; 4]> {
    let n = geometry::quat_normalize(&quat(q)).map_err(py_err)?;
    Ok(geometry::quat_canonicalize(&n).as_array())
}

#[pyfunction]
fn position_error_m(p1: [f64; 3], p2: [f64; 3]) -> f64 {
    geometry::position_error_m(p1, p2)
}

/// Component-wise mean position with hemisphere-aligned quaternion mean.
#[pyfunction]
fn average_poses(poses: Vec<PyPose>) -> PyResult<PyPose> {
    let vectors: Vec<[f64; 7]> = poses.iter().map(|p| p.inner.to_vector()).collect();
    Ok(PyPose { inner: average_pose_vectors(&vectors).map_err(py_err)? })
}

fn render_set(scene: &SceneSpec, poses: &[PyPose], tag: &str) -> PyResult<Vec<PoseSample>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = render_view(scene, &p.inner).map_err(py_err)?;
            s.frame_id = format!("{tag}{i:05}");
            Ok(s)
        })
        .collect()
}

/// A synthetic desk-scale scene: colored landmark spheres in a box,
/// rendered through a pinhole camera.
#[pyclass(name = "Scene")]
struct PyScene {
    inner: SceneSpec,
}

#[pymethods]
impl PyScene {
    /// Deterministically generate a scene from a seed.
    #[staticmethod]
    #[pyo3(signature = (seed, extent=[10.0, 10.0, 2.0], resolution=(64, 64), focal_px=60.0))]
    fn generate(
        seed: u64,
        extent: [f64; 3],
        resolution: (usize, usize),
        focal_px: f64,
    ) -> PyResult<Self> {
        let mut scene = generate_scene(seed, extent).map_err(py_err)?;
        scene.intrinsics = Intrinsics::centered(resolution.0, resolution.1, focal_px);
        Ok(PyScene { inner: scene })
    }

    #[getter]
    fn extent(&self) -> [f64; 3] {
        self.inner.extent
    }

    #[getter]
    fn landmark_count(&self) -> usize {
        self.inner.landmarks.len()
    }

    /// (width, height) of rendered views.
    #[getter]
    fn resolution(&self) -> (usize, usize) {
        (self.inner.intrinsics.width, self.inner.intrinsics.height)
    }

    /// Seeded random walk of `count` poses with ~`spacing` meters between
    /// consecutive positions.
    fn sample_trajectory(&self, spacing: f64, count: usize, seed: u64) -> PyResult<Vec<PyPose>> {
        Ok(sample_trajectory(&self.inner, spacing, count, seed)
            .map_err(py_err)?
            .into_iter()
            .map(|inner| PyPose { inner })
            .collect())
    }

    /// Test poses midway between consecutive trajectory poses, offset
    /// sideways by `offset_frac` of the local step length.
    fn interpolation_split(&self, poses: Vec<PyPose>, offset_frac: f64) -> PyResult<Vec<PyPose>> {
        let inner: Vec<Pose> = poses.iter().map(|p| p.inner.clone()).collect();
        Ok(interpolation_split(&self.inner, &inner, offset_frac)
            .map_err(py_err)?
            .into_iter()
            .map(|inner| PyPose { inner })
            .collect())
    }

    /// Render one view; returns (width, height, pixels) with pixels
    /// channel-major in [0, 1].
    fn render(&self, pose: &PyPose) -> PyResult<(usize, usize, Vec<f64>)> {
        let s = render_view(&self.inner, &pose.inner).map_err(py_err)?;
        Ok((s.image.width, s.image.height, s.image.data))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_scene_spec(&path, &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyScene { inner: read_scene_spec(&path).map_err(py_err)? })
    }
}

/// Median position/orientation errors of the constant mean-pose predictor.
#[pyfunction]
fn baseline(
    scene: &PyScene,
    train_poses: Vec<PyPose>,
    test_poses: Vec<PyPose>,
) -> PyResult<HashMap<String, f64>> {
    let train_set = render_set(&scene.inner, &train_poses, "train")?;
    let test_set = render_set(&scene.inner, &test_poses, "test")?;
    let report = mean_pose_baseline(&train_set, &test_set).map_err(py_err)?;
    Ok(HashMap::from([
        ("median_position_error_m".into(), report.median_position_error_m),
        ("median_orientation_error_deg".into(), report.median_orientation_error_deg),
    ]))
}

/// A pose-regression convnet plus the preprocessing state (crop spec and
/// per-scene mean image) needed to run it.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    model: Model,
    crop: CropSpec,
    mean: Option<Image>,
}

impl PyModel {
    fn mean_image(&self) -> PyResult<&Image> {
        self.mean
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no scene mean; train() first"))
    }
}

#[pymethods]
impl PyModel {
    /// Desk-scale default architecture for `crop_side`-pixel inputs.
    #[staticmethod]
    #[pyo3(signature = (crop_side=64, feature_dim=128, beta=500.0, extent=[10.0, 10.0, 2.0], build_seed=7))]
    fn desk(
        crop_side: usize,
        feature_dim: usize,
        beta: f64,
        extent: [f64; 3],
        build_seed: u64,
    ) -> PyResult<Self> {
        let mc = ModelConfig::desk_default(crop_side, feature_dim, beta, extent);
        let model = build_model(&mc, build_seed).map_err(py_err)?;
        let crop = CropSpec::new(crop_side + 8, crop_side, CropMode::Random, 128).map_err(py_err)?;
        Ok(PyModel { model, crop, mean: None })
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.model.config.beta
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.parameters().iter().map(|p| p.len()).sum()
    }

    /// Train on rendered views of `train_poses`, validating on
    /// `test_poses`. Returns the log as (epoch, train_loss, val_pos_m,
    /// val_ori_deg) tuples.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (scene, train_poses, test_poses, epochs=100, batch_size=16,
                        lr=2e-3, momentum=0.9, decay_factor=0.5, decay_period=50,
                        seed=1, eval_every=10))]
    fn train(
        &mut self,
        scene: &PyScene,
        train_poses: Vec<PyPose>,
        test_poses: Vec<PyPose>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        momentum: f64,
        decay_factor: f64,
        decay_period: usize,
        seed: u64,
        eval_every: usize,
    ) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let train_set = render_set(&scene.inner, &train_poses, "train")?;
        let test_set = render_set(&scene.inner, &test_poses, "test")?;
        let tc = TrainConfig {
            batch_size,
            epochs,
            base_lr: lr,
            momentum,
            decay_factor,
            decay_period,
            seed,
            crop: self.crop.clone(),
            eval_every,
        };
        let out = train(&self.model, &train_set, &test_set, &tc, None).map_err(py_err)?;
        self.mean = Some(out.mean);
        Ok(out
            .log
            .into_iter()
            .map(|r| {
                (
                    r.epoch,
                    r.mean_train_loss,
                    r.median_val_position_error_m,
                    r.median_val_orientation_error_deg,
                )
            })
            .collect())
    }

    /// Median errors over rendered views of `poses`; `mode` is "center"
    /// or "dense" (128-crop averaging).
    #[pyo3(signature = (scene, poses, mode="center"))]
    fn evaluate(
        &self,
        scene: &PyScene,
        poses: Vec<PyPose>,
        mode: &str,
    ) -> PyResult<HashMap<String, f64>> {
        let crop_mode = match mode {
            "center" => CropMode::Center,
            "dense" => CropMode::Dense,
            other => return Err(PyValueError::new_err(format!("unknown eval mode '{other}'"))),
        };
        let set = render_set(&scene.inner, &poses, "eval")?;
        let report =
            evaluate(&self.model, &set, self.mean_image()?, &self.crop, crop_mode).map_err(py_err)?;
        Ok(HashMap::from([
            ("frames".into(), report.records.len() as f64),
            ("median_position_error_m".into(), report.median_position_error_m),
            ("median_orientation_error_deg".into(), report.median_orientation_error_deg),
        ]))
    }

    /// Predict the pose of one rendered view (center crop, test mode).
    fn predict(&self, scene: &PyScene, pose: &PyPose) -> PyResult<PyPose> {
        let sample = render_view(&scene.inner, &pose.inner).map_err(py_err)?;
        let rescaled = posereg::datagen::rescale_shortest_side(&sample.image, self.crop.rescale_side)
            .map_err(py_err)?;
        let center = CropSpec { mode: CropMode::Center, ..self.crop.clone() };
        let input = preprocess(&rescaled, self.mean_image()?, &center, None)
            .map_err(py_err)?
            .remove(0);
        let outputs = self.model.forward(&input.to_tensor(false), false).map_err(py_err)?;
        let out = outputs.last().ok_or_else(|| PyValueError::new_err("model has no head"))?;
        Ok(PyPose { inner: out.to_pose().map_err(py_err)? })
    }

    /// Write model_config.txt, model.ckpt, and preproc.txt into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("model_config.txt"), self.model.config.to_text())?;
        Checkpoint::from_model(&self.model, None, 0)
            .map_err(py_err)?
            .save(&dir.join("model.ckpt"))
            .map_err(py_err)?;
        let mut f = std::fs::File::create(dir.join("preproc.txt"))?;
        writeln!(f, "rescale_side {}", self.crop.rescale_side)?;
        if let Some(mean) = &self.mean {
            writeln!(f, "mean {} {}", mean.height, mean.width)?;
            for v in &mean.data {
                writeln!(f, "{v:e}")?;
            }
        }
        Ok(())
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let mc = ModelConfig::from_text(&std::fs::read_to_string(dir.join("model_config.txt"))?)
            .map_err(py_err)?;
        let model = build_model(&mc, 0).map_err(py_err)?;
        Checkpoint::load(&dir.join("model.ckpt"))
            .map_err(py_err)?
            .apply(&model, None)
            .map_err(py_err)?;

        let text = std::fs::read_to_string(dir.join("preproc.txt"))?;
        let mut lines = text.lines();
        let parse = |s: Option<&str>, tag: &str| -> PyResult<Vec<f64>> {
            let line = s.ok_or_else(|| PyValueError::new_err("truncated preproc.txt"))?;
            let rest = line
                .strip_prefix(tag)
                .ok_or_else(|| PyValueError::new_err(format!("expected '{tag}' line")))?;
            rest.split_whitespace()
                .map(|t| t.parse().map_err(|_| PyValueError::new_err("bad preproc number")))
                .collect()
        };
        let rescale = parse(lines.next(), "rescale_side")?[0] as usize;
        let crop =
            CropSpec::new(rescale, mc.input_size, CropMode::Random, 128).map_err(py_err)?;
        let mean = match lines.next() {
            Some(line) => {
                let dims = parse(Some(line), "mean")?;
                let (h, w) = (dims[0] as usize, dims[1] as usize);
                let data: Vec<f64> = lines
                    .map(|l| l.parse().map_err(|_| PyValueError::new_err("bad mean value")))
                    .collect::<PyResult<_>>()?;
                if data.len() != 3 * h * w {
                    return Err(PyValueError::new_err("mean size mismatch"));
                }
                Some(Image { height: h, width: w, data })
            }
            None => None,
        };
        Ok(PyModel { model, crop, mean })
    }
}

#[pymodule]
fn posereg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(quat_angular_error_deg, m)?)?;
    m.add_function(wrap_pyfunction!(quat_canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(position_error_m, m)?)?;
    m.add_function(wrap_pyfunction!(average_poses, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    Ok(())
}
