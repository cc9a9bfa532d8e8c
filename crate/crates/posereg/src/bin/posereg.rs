//! Batch front end: dataset generation, training, evaluation, experiment
//! sweeps, and artifact export. One command per process; every output
//! directory gets exactly one run manifest, written before any other
//! artifact and finalized (end timestamp) on success.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use posereg::checkpoint::Checkpoint;
use posereg::config::ConfigMap;
use posereg::datagen::{
    generate_scene, interpolation_split, read_label_file, read_ppm, read_scene_spec, render_view,
    sample_trajectory, write_label_file, write_ppm, write_scene_spec, CropMode, CropSpec, Image,
    Intrinsics, PoseSample, SceneSpec, DEFAULT_FOCAL_PX, DEFAULT_RENDER_HEIGHT,
    DEFAULT_RENDER_WIDTH,
};
use posereg::error::{Error, Result};
use posereg::evaluation::{
    beta_sweep, build_feature_index, evaluate, joint_vs_separate, nn_baseline, read_summary,
    saliency_map, saliency_mask_means, spacing_sweep, write_report_files, write_saliency_pgm,
    SweepResult,
};
use posereg::geometry::Pose;
use posereg::model::{build_model, Model, ModelConfig};
use posereg::tensor::OptimizerState;
use posereg::training::{
    classifier_accuracy, pretrain_classifier, scene_mean, train, train_auto_beta, train_from,
    BetaSetting, TrainConfig, TrainOutcome,
};

const OUT_ROOT_ENV: &str = "POSEREG_OUT";

#[derive(Parser)]
#[command(
    name = "posereg",
    version,
    about = "6-DOF camera pose regression: synthetic data, training, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: scene spec, images, train/test labels.
    GenData(GenDataArgs),
    /// Train a pose regressor on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a trained model (center or dense crops).
    Eval(EvalArgs),
    /// Nearest-neighbour feature retrieval baseline.
    Nn(NnArgs),
    /// Gradient saliency maps for test frames.
    Saliency(SaliencyArgs),
    /// Train one model per beta and select by scalarized error.
    SweepBeta(SweepBetaArgs),
    /// Train at several trajectory spacings on one scene.
    SweepSpacing(SweepSpacingArgs),
    /// Joint vs position-only vs orientation-only regression.
    CompareHeads(CompareHeadsArgs),
    /// Landmark-classification pretext; saves a warm-start trunk.
    Pretrain(PretrainArgs),
    /// Reprint the summary of an existing evaluation directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (default: <out root>/<command>; the out root is
    /// "posereg_runs" unless the POSEREG_OUT environment variable is set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl OutArgs {
    fn resolve(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "posereg_runs".into());
            Path::new(&root).join(command)
        })
    }
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum SplitKind {
    /// Test frames from an independent walking path.
    Walk,
    /// Test frames interpolated between consecutive training poses.
    Interp,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Master seed; scene and trajectory seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene extent in meters: X Y Z.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [10.0, 10.0, 2.0])]
    extent: Vec<f64>,
    /// Trajectory step length in meters.
    #[arg(long, default_value_t = 0.5)]
    spacing: f64,
    #[arg(long, default_value_t = 200)]
    train_count: usize,
    #[arg(long, default_value_t = 50)]
    test_count: usize,
    /// Render resolution: width height.
    #[arg(long, num_args = 2, value_names = ["W", "H"],
          default_values_t = [DEFAULT_RENDER_WIDTH, DEFAULT_RENDER_HEIGHT])]
    resolution: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_FOCAL_PX)]
    focal_px: f64,
    #[arg(long, value_enum, default_value_t = SplitKind::Walk)]
    split: SplitKind,
}

/// Training configuration flags shared by every training-backed command.
/// Precedence: built-in defaults < --config file < flags.
#[derive(Args)]
struct TrainFlags {
    /// Plain-text key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_period: Option<usize>,
    /// Seed for shuffling and crop jitter.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for weight initialization.
    #[arg(long)]
    build_seed: Option<u64>,
    /// Model input (crop) side in pixels.
    #[arg(long)]
    crop: Option<usize>,
    /// Rescale the shortest image side to this before cropping.
    #[arg(long)]
    rescale: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Loss balance: a positive number, or 'auto' for the warm-up estimate.
    #[arg(long)]
    beta: Option<String>,
}

struct ResolvedTrain {
    train: TrainConfig,
    feature_dim: usize,
    beta: BetaSetting,
    build_seed: u64,
}

impl ResolvedTrain {
    fn beta_text(&self) -> String {
        match self.beta {
            BetaSetting::Auto => "auto".into(),
            BetaSetting::Fixed(b) => format!("{b}"),
        }
    }

    /// Provisional model beta; the auto path replaces it after warm-up.
    fn provisional_beta(&self) -> f64 {
        match self.beta {
            BetaSetting::Fixed(b) => b,
            BetaSetting::Auto => 500.0,
        }
    }

    fn model_config(&self, extent: [f64; 3]) -> ModelConfig {
        ModelConfig::desk_default(
            self.train.crop.crop_side,
            self.feature_dim,
            self.provisional_beta(),
            extent,
        )
    }

    /// Key-value rows, echoed verbatim into the manifest and config file.
    fn rows(&self) -> Vec<(String, String)> {
        let t = &self.train;
        [
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("base_lr", format!("{:e}", t.base_lr)),
            ("momentum", format!("{:e}", t.momentum)),
            ("decay_factor", format!("{:e}", t.decay_factor)),
            ("decay_period", t.decay_period.to_string()),
            ("seed", t.seed.to_string()),
            ("build_seed", self.build_seed.to_string()),
            ("crop_side", t.crop.crop_side.to_string()),
            ("rescale_side", t.crop.rescale_side.to_string()),
            ("dense_count", t.crop.dense_count.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("beta", self.beta_text()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl TrainFlags {
    fn resolve(&self) -> Result<ResolvedTrain> {
        let mut cfg = match &self.config {
            Some(path) => ConfigMap::from_text(&std::fs::read_to_string(path)?)?,
            None => ConfigMap::empty(),
        };
        macro_rules! override_with {
            ($key:literal, $flag:expr) => {
                if let Some(v) = &$flag {
                    cfg.set($key, v.to_string());
                }
            };
        }
        override_with!("epochs", self.epochs);
        override_with!("batch_size", self.batch_size);
        override_with!("base_lr", self.lr);
        override_with!("momentum", self.momentum);
        override_with!("decay_factor", self.decay_factor);
        override_with!("decay_period", self.decay_period);
        override_with!("seed", self.seed);
        override_with!("build_seed", self.build_seed);
        override_with!("crop_side", self.crop);
        override_with!("rescale_side", self.rescale);
        override_with!("feature_dim", self.feature_dim);
        override_with!("eval_every", self.eval_every);
        override_with!("beta", self.beta);

        let crop_side = cfg.get_usize("crop_side", 64)?;
        let mut train = TrainConfig::desk_default(crop_side);
        train.batch_size = cfg.get_usize("batch_size", train.batch_size)?;
        train.epochs = cfg.get_usize("epochs", train.epochs)?;
        train.base_lr = cfg.get_f64("base_lr", train.base_lr)?;
        train.momentum = cfg.get_f64("momentum", train.momentum)?;
        train.decay_factor = cfg.get_f64("decay_factor", train.decay_factor)?;
        train.decay_period = cfg.get_usize("decay_period", train.decay_period)?;
        train.seed = cfg.get_u64("seed", train.seed)?;
        train.crop.rescale_side = cfg.get_usize("rescale_side", train.crop.rescale_side)?;
        train.crop.dense_count = cfg.get_usize("dense_count", train.crop.dense_count)?;
        train.eval_every = cfg.get_usize("eval_every", train.eval_every)?;
        Ok(ResolvedTrain {
            train,
            feature_dim: cfg.get_usize("feature_dim", 128)?,
            beta: BetaSetting::parse(cfg.get_str("beta", "500"))?,
            build_seed: cfg.get_u64("build_seed", 7)?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    flags: TrainFlags,
    /// Warm-start the trunk from a pretrain output directory.
    #[arg(long)]
    init_trunk: Option<PathBuf>,
    /// Resume from a checkpoint written by an interrupted run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum EvalCropMode {
    Center,
    Dense,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum EvalSplit {
    Test,
    Train,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training output directory (model config + checkpoint).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, value_enum, default_value_t = EvalCropMode::Center)]
    mode: EvalCropMode,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    split: EvalSplit,
}

#[derive(Args)]
struct NnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    split: EvalSplit,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    /// Number of frames (in frame_id order) to map.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    split: EvalSplit,
}

#[derive(Args)]
struct SweepBetaArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
    betas: Vec<f64>,
}

#[derive(Args)]
struct SweepSpacingArgs {
    /// Dataset directory; provides the scene and the fixed test split.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    spacings: Vec<f64>,
    /// Frame count of the finest-spacing trajectory.
    #[arg(long, default_value_t = 200)]
    base_count: usize,
    #[arg(long, default_value_t = 3)]
    trajectory_seed: u64,
}

#[derive(Args)]
struct CompareHeadsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation output directory.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "eval")]
    stem: String,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Nn(a) => cmd_nn(a),
        Command::Saliency(a) => cmd_saliency(a),
        Command::SweepBeta(a) => cmd_sweep_beta(a),
        Command::SweepSpacing(a) => cmd_sweep_spacing(a),
        Command::CompareHeads(a) => cmd_compare_heads(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Report(a) => cmd_report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Refuse a non-empty output directory unless --force, then create it.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(Error::Config(format!(
            "output directory '{}' is not empty (pass --force to reuse it)",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Write the run manifest. Called once before any other artifact (no end
/// timestamp yet) and again on success with `finished` set.
fn write_manifest(
    dir: &Path,
    command: &str,
    rows: &[(String, String)],
    started: u64,
    finished: Option<u64>,
) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("manifest.txt"))?;
    writeln!(f, "# posereg run manifest v1")?;
    writeln!(f, "command = {command}")?;
    writeln!(f, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "started_utc = {started}")?;
    writeln!(
        f,
        "finished_utc = {}",
        finished.map(|t| t.to_string()).unwrap_or_else(|| "pending".into())
    )?;
    for (k, v) in rows {
        writeln!(f, "{k} = {v}")?;
    }
    Ok(())
}

/// Run `body` inside the manifest write/finalize bracket.
fn with_manifest<T>(
    dir: &Path,
    command: &str,
    rows: Vec<(String, String)>,
    body: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let started = unix_now();
    write_manifest(dir, command, &rows, started, None)?;
    let value = body()?;
    write_manifest(dir, command, &rows, started, Some(unix_now()))?;
    Ok(value)
}

fn path_row(key: &str, path: &Path) -> (String, String) {
    (key.to_string(), path.display().to_string())
}

struct Dataset {
    scene: SceneSpec,
    train: Vec<PoseSample>,
    test: Vec<PoseSample>,
}

impl Dataset {
    fn split(&self, split: EvalSplit) -> &[PoseSample] {
        match split {
            EvalSplit::Test => &self.test,
            EvalSplit::Train => &self.train,
        }
    }
}

fn read_labels(dir: &Path, name: &str) -> Result<Vec<(String, Pose)>> {
    let (labels, _skipped) = read_label_file(&dir.join(name))?;
    Ok(labels)
}

/// Load a split from its label file plus stored images. Landmark masks are
/// not persisted; commands that need them re-render via [`render_split`].
fn load_split(dir: &Path, name: &str) -> Result<Vec<PoseSample>> {
    read_labels(dir, name)?
        .into_iter()
        .map(|(frame_id, pose)| {
            let image = read_ppm(&dir.join("images").join(format!("{frame_id}.ppm")))?;
            Ok(PoseSample { image, pose, frame_id, landmark_mask: Vec::new(), dominant_landmark: None })
        })
        .collect()
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.exists() {
        return Err(Error::Config(format!("dataset path '{}' does not exist", dir.display())));
    }
    Ok(Dataset {
        scene: read_scene_spec(&dir.join("scene.txt"))?,
        train: load_split(dir, "train_labels.txt")?,
        test: load_split(dir, "test_labels.txt")?,
    })
}

/// Re-render a split from the scene spec, recovering the landmark masks and
/// dominant-landmark ids that image files do not carry.
fn render_split(scene: &SceneSpec, labels: &[(String, Pose)]) -> Result<Vec<PoseSample>> {
    labels
        .iter()
        .map(|(frame_id, pose)| {
            let mut s = render_view(scene, pose)?;
            s.frame_id = frame_id.clone();
            Ok(s)
        })
        .collect()
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    if args.spacing <= 0.0 {
        return Err(Error::Config(format!("--spacing must be positive, got {}", args.spacing)));
    }
    if args.train_count < 2 || args.test_count == 0 {
        return Err(Error::Config("need at least 2 train and 1 test frames".into()));
    }
    let out = args.out.resolve("gen-data");
    prepare_out_dir(&out, args.out.force)?;

    let extent = [args.extent[0], args.extent[1], args.extent[2]];
    let mut scene = generate_scene(args.seed, extent)?;
    scene.intrinsics = Intrinsics::centered(args.resolution[0], args.resolution[1], args.focal_px);

    let rows = vec![
        ("seed".into(), args.seed.to_string()),
        ("extent".into(), format!("{:e} {:e} {:e}", extent[0], extent[1], extent[2])),
        ("spacing".into(), format!("{:e}", args.spacing)),
        ("train_count".into(), args.train_count.to_string()),
        ("test_count".into(), args.test_count.to_string()),
        ("resolution".into(), format!("{} {}", args.resolution[0], args.resolution[1])),
        ("focal_px".into(), format!("{:e}", args.focal_px)),
        (
            "split".into(),
            match args.split {
                SplitKind::Walk => "walk".to_string(),
                SplitKind::Interp => "interp".to_string(),
            },
        ),
        path_row("output", &out),
    ];
    with_manifest(&out, "gen-data", rows, || {
        let train_poses =
            sample_trajectory(&scene, args.spacing, args.train_count, args.seed.wrapping_add(1))?;
        let test_poses = match args.split {
            SplitKind::Walk => sample_trajectory(
                &scene,
                args.spacing,
                args.test_count,
                args.seed.wrapping_add(2),
            )?,
            SplitKind::Interp => {
                let all = interpolation_split(&scene, &train_poses, 0.35)?;
                all.into_iter().take(args.test_count).collect()
            }
        };

        write_scene_spec(&out.join("scene.txt"), &scene)?;
        let images = out.join("images");
        std::fs::create_dir_all(&images)?;
        let write_set = |poses: &[Pose], tag: &str, file: &str| -> Result<()> {
            let mut labels = Vec::with_capacity(poses.len());
            for (i, pose) in poses.iter().enumerate() {
                let frame_id = format!("{tag}{i:05}");
                let sample = render_view(&scene, pose)?;
                write_ppm(&sample.image, &images.join(format!("{frame_id}.ppm")))?;
                labels.push((frame_id, pose.clone()));
            }
            write_label_file(&out.join(file), &labels)
        };
        write_set(&train_poses, "train", "train_labels.txt")?;
        write_set(&test_poses, "test", "test_labels.txt")?;
        println!(
            "wrote {} train and {} test frames to {}",
            train_poses.len(),
            test_poses.len(),
            out.display()
        );
        Ok(())
    })
}

fn write_train_config(dir: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("train_config.txt"))?;
    writeln!(f, "# posereg train config v1")?;
    for (k, v) in rows {
        writeln!(f, "{k} = {v}")?;
    }
    Ok(())
}

/// Deterministic log columns go to train_log.csv; wall-clock to a separate
/// timing file so identical seeds give byte-identical primary outputs.
fn write_train_log(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut log = std::fs::File::create(dir.join("train_log.csv"))?;
    writeln!(
        log,
        "epoch,mean_train_loss,median_val_position_error_m,median_val_orientation_error_deg,learning_rate"
    )?;
    let mut timing = std::fs::File::create(dir.join("train_timing.csv"))?;
    writeln!(timing, "epoch,wall_clock_s")?;
    for r in &outcome.log {
        writeln!(
            log,
            "{},{:e},{:e},{:e},{:e}",
            r.epoch,
            r.mean_train_loss,
            r.median_val_position_error_m,
            r.median_val_orientation_error_deg,
            r.learning_rate
        )?;
        writeln!(timing, "{},{:.6}", r.epoch, r.wall_clock_s)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let resolved = args.flags.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let out = args.out.resolve("train");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = resolved.rows();
    rows.push(path_row("data", &args.data));
    rows.push(path_row("output", &out));
    if let Some(p) = &args.init_trunk {
        rows.push(path_row("init_trunk", p));
    }
    if let Some(p) = &args.resume {
        rows.push(path_row("resume", p));
    }

    with_manifest(&out, "train", rows, || {
        let ckpt_path = out.join("model.ckpt");
        let tc = &resolved.train;
        let (model, outcome) = match (&resolved.beta, &args.resume) {
            (BetaSetting::Auto, Some(_)) => {
                return Err(Error::Config("--beta auto cannot be combined with --resume".into()))
            }
            (BetaSetting::Auto, None) => {
                if args.init_trunk.is_some() {
                    return Err(Error::Config(
                        "--beta auto cannot be combined with --init-trunk".into(),
                    ));
                }
                let mc = resolved.model_config(dataset.scene.extent);
                let (model, outcome, beta) = train_auto_beta(
                    &mc,
                    resolved.build_seed,
                    &dataset.train,
                    &dataset.test,
                    tc,
                    Some(&ckpt_path),
                )?;
                println!("estimated beta = {beta:e}");
                (model, outcome)
            }
            (BetaSetting::Fixed(_), resume) => {
                let mut model = build_model(
                    &resolved.model_config(dataset.scene.extent),
                    resolved.build_seed,
                )?;
                if let Some(trunk_dir) = &args.init_trunk {
                    let (donor, _) = load_trained_model(trunk_dir, "pretrain.ckpt")?;
                    model.load_trunk_from(&donor)?;
                }
                let outcome = match resume {
                    None => train(&model, &dataset.train, &dataset.test, tc, Some(&ckpt_path))?,
                    Some(path) => {
                        let ckpt = Checkpoint::load(path)?;
                        let mut state = OptimizerState::new(
                            &model.parameters(),
                            tc.momentum,
                            tc.base_lr,
                            tc.decay_factor,
                            tc.decay_period,
                        )?;
                        ckpt.apply(&model, Some(&mut state))?;
                        let start_epoch = ckpt.epochs_completed as usize;
                        train_from(
                            &model,
                            &dataset.train,
                            &dataset.test,
                            tc,
                            &mut state,
                            start_epoch,
                            Some(&ckpt_path),
                        )?
                    }
                };
                (model, outcome)
            }
        };

        std::fs::write(out.join("model_config.txt"), model.config.to_text())?;
        write_train_config(&out, &resolved.rows())?;
        write_ppm(&outcome.mean, &out.join("mean.ppm"))?;
        write_train_log(&out, &outcome)?;
        if let Some(last) = outcome.log.last() {
            println!(
                "epoch {}: median position error {:.4} m, median orientation error {:.4} deg",
                last.epoch, last.median_val_position_error_m, last.median_val_orientation_error_deg
            );
        }
        println!("{}", model.describe());
        Ok(())
    })
}

/// Rebuild a trained model from a training (or pretrain) output directory:
/// model_config.txt + the named checkpoint, digest-verified, plus the crop
/// spec the run trained with.
fn load_trained_model(dir: &Path, ckpt_name: &str) -> Result<(Model, CropSpec)> {
    if !dir.exists() {
        return Err(Error::Config(format!("model path '{}' does not exist", dir.display())));
    }
    let mc = ModelConfig::from_text(&std::fs::read_to_string(dir.join("model_config.txt"))?)?;
    let tc = ConfigMap::from_text(&std::fs::read_to_string(dir.join("train_config.txt"))?)?;
    let build_seed = tc.get_u64("build_seed", 7)?;
    let model = build_model(&mc, build_seed)?;
    let ckpt = Checkpoint::load(&dir.join(ckpt_name))?;
    ckpt.apply(&model, None)?;
    let spec = CropSpec::new(
        tc.get_usize("rescale_side", mc.input_size + mc.input_size / 8)?,
        mc.input_size,
        CropMode::Center,
        tc.get_usize("dense_count", 128)?,
    )?;
    Ok((model, spec))
}

fn eval_rows(args_data: &Path, args_model: &Path, out: &Path) -> Vec<(String, String)> {
    vec![path_row("data", args_data), path_row("model", args_model), path_row("output", out)]
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let (model, spec) = load_trained_model(&args.model, "model.ckpt")?;
    let out = args.out.resolve("eval");
    prepare_out_dir(&out, args.out.force)?;

    let mode = match args.mode {
        EvalCropMode::Center => CropMode::Center,
        EvalCropMode::Dense => CropMode::Dense,
    };
    let mut rows = eval_rows(&args.data, &args.model, &out);
    rows.push((
        "mode".into(),
        if mode == CropMode::Dense { "dense".into() } else { "center".into() },
    ));
    with_manifest(&out, "eval", rows, || {
        // The mean is a pure function of the training split, recomputed here
        // rather than read back from the 8-bit mean.ppm preview.
        let mean = scene_mean(&dataset.train, &spec)?;
        let report = evaluate(&model, dataset.split(args.split), &mean, &spec, mode)?;
        write_report_files(&out, "eval", &report)?;
        println!(
            "median position error {:.4} m, median orientation error {:.4} deg ({} forwards/frame)",
            report.median_position_error_m,
            report.median_orientation_error_deg,
            report.forwards_per_frame
        );
        Ok(())
    })
}

fn cmd_nn(args: NnArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let (model, spec) = load_trained_model(&args.model, "model.ckpt")?;
    let out = args.out.resolve("nn");
    prepare_out_dir(&out, args.out.force)?;

    with_manifest(&out, "nn", eval_rows(&args.data, &args.model, &out), || {
        let mean = scene_mean(&dataset.train, &spec)?;
        let index = build_feature_index(&model, &dataset.train, &mean, &spec)?;
        let report = nn_baseline(&index, &model, dataset.split(args.split), &mean, &spec)?;
        write_report_files(&out, "nn", &report)?;
        println!(
            "nn baseline: median position error {:.4} m, median orientation error {:.4} deg",
            report.median_position_error_m, report.median_orientation_error_deg
        );
        Ok(())
    })
}

fn cmd_saliency(args: SaliencyArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let scene = read_scene_spec(&args.data.join("scene.txt"))?;
    let train_set = load_split(&args.data, "train_labels.txt")?;
    let label_file = match args.split {
        EvalSplit::Test => "test_labels.txt",
        EvalSplit::Train => "train_labels.txt",
    };
    let labels = read_labels(&args.data, label_file)?;
    let samples = render_split(&scene, &labels[..args.count.min(labels.len())])?;
    let (model, spec) = load_trained_model(&args.model, "model.ckpt")?;
    let out = args.out.resolve("saliency");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = eval_rows(&args.data, &args.model, &out);
    rows.push(("count".into(), args.count.to_string()));
    with_manifest(&out, "saliency", rows, || {
        let mean = scene_mean(&train_set, &spec)?;
        let mut stats = std::fs::File::create(out.join("saliency_stats.csv"))?;
        writeln!(stats, "frame_id,landmark_mean,background_mean,degenerate")?;
        for sample in &samples {
            let map = saliency_map(&model, sample, &mean, &spec)?;
            write_saliency_pgm(&map, &out.join(format!("saliency_{}.pgm", sample.frame_id)))?;
            let (fg, bg) = saliency_mask_means(&map, sample)?;
            writeln!(stats, "{},{:e},{:e},{}", sample.frame_id, fg, bg, map.degenerate)?;
        }
        println!("wrote {} saliency maps to {}", samples.len(), out.display());
        Ok(())
    })
}

fn sweep_result_cells(result: &SweepResult) -> (String, String, String) {
    match result {
        SweepResult::Ok { median_position_error_m, median_orientation_error_deg } => (
            "ok".into(),
            format!("{median_position_error_m:e}"),
            format!("{median_orientation_error_deg:e}"),
        ),
        SweepResult::Diverged(msg) => ("diverged".into(), String::new(), msg.clone()),
    }
}

fn cmd_sweep_beta(args: SweepBetaArgs) -> Result<()> {
    let resolved = args.flags.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let out = args.out.resolve("sweep-beta");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = resolved.rows();
    rows.push((
        "betas".into(),
        args.betas.iter().map(|b| format!("{b:e}")).collect::<Vec<_>>().join(" "),
    ));
    rows.push(path_row("data", &args.data));
    rows.push(path_row("output", &out));
    with_manifest(&out, "sweep-beta", rows, || {
        let mc = resolved.model_config(dataset.scene.extent);
        let sweep = beta_sweep(
            &mc,
            resolved.build_seed,
            &dataset.train,
            &dataset.test,
            &args.betas,
            &resolved.train,
        )?;
        let mut f = std::fs::File::create(out.join("beta_sweep.csv"))?;
        writeln!(f, "beta,status,median_position_error_m,median_orientation_error_deg")?;
        for (beta, result) in &sweep.rows {
            let (status, pos, ori) = sweep_result_cells(result);
            writeln!(f, "{beta:e},{status},{pos},{ori}")?;
        }
        let mut s = std::fs::File::create(out.join("beta_selected.csv"))?;
        writeln!(s, "key,value")?;
        writeln!(s, "selected_beta,{:e}", sweep.selected_beta)?;
        println!("selected beta = {:e}", sweep.selected_beta);
        Ok(())
    })
}

fn cmd_sweep_spacing(args: SweepSpacingArgs) -> Result<()> {
    let resolved = args.flags.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let out = args.out.resolve("sweep-spacing");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = resolved.rows();
    rows.push((
        "spacings".into(),
        args.spacings.iter().map(|s| format!("{s:e}")).collect::<Vec<_>>().join(" "),
    ));
    rows.push(("base_count".into(), args.base_count.to_string()));
    rows.push(("trajectory_seed".into(), args.trajectory_seed.to_string()));
    rows.push(path_row("data", &args.data));
    rows.push(path_row("output", &out));
    with_manifest(&out, "sweep-spacing", rows, || {
        let mc = resolved.model_config(dataset.scene.extent);
        let table = spacing_sweep(
            &dataset.scene,
            &mc,
            resolved.build_seed,
            args.trajectory_seed,
            args.base_count,
            &args.spacings,
            &dataset.test,
            &resolved.train,
        )?;
        let mut f = std::fs::File::create(out.join("spacing_sweep.csv"))?;
        writeln!(
            f,
            "spacing_m,train_count,status,median_position_error_m,median_orientation_error_deg"
        )?;
        for row in &table {
            let (status, pos, ori) = sweep_result_cells(&row.result);
            writeln!(f, "{:e},{},{status},{pos},{ori}", row.spacing_m, row.train_count)?;
        }
        println!("swept {} spacings", table.len());
        Ok(())
    })
}

fn cmd_compare_heads(args: CompareHeadsArgs) -> Result<()> {
    let resolved = args.flags.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let out = args.out.resolve("compare-heads");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = resolved.rows();
    rows.push(path_row("data", &args.data));
    rows.push(path_row("output", &out));
    with_manifest(&out, "compare-heads", rows, || {
        let mc = resolved.model_config(dataset.scene.extent);
        let table = joint_vs_separate(
            &mc,
            resolved.build_seed,
            &dataset.train,
            &dataset.test,
            &resolved.train,
        )?;
        let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut f = std::fs::File::create(out.join("compare_heads.csv"))?;
        writeln!(f, "head,median_position_error_m,median_orientation_error_deg")?;
        for row in &table {
            writeln!(
                f,
                "{},{},{}",
                row.kind.as_str(),
                cell(row.median_position_error_m),
                cell(row.median_orientation_error_deg)
            )?;
        }
        println!("compared {} head variants", table.len());
        Ok(())
    })
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let resolved = args.flags.resolve()?;
    let scene = read_scene_spec(&args.data.join("scene.txt"))?;
    let labels = read_labels(&args.data, "train_labels.txt")?;
    // Re-render for the dominant-landmark side channel.
    let samples = render_split(&scene, &labels)?;
    let num_classes = scene.landmarks.len();
    let pretext: Vec<(Image, usize)> = samples
        .iter()
        .filter_map(|s| s.dominant_landmark.map(|c| (s.image.clone(), c)))
        .collect();
    let out = args.out.resolve("pretrain");
    prepare_out_dir(&out, args.out.force)?;

    let mut rows = resolved.rows();
    rows.push(("num_classes".into(), num_classes.to_string()));
    rows.push(path_row("data", &args.data));
    rows.push(path_row("output", &out));
    with_manifest(&out, "pretrain", rows, || {
        let model = build_model(&resolved.model_config(scene.extent), resolved.build_seed)?;
        let clf = pretrain_classifier(&model, &pretext, num_classes, &resolved.train)?;
        let accuracy = classifier_accuracy(&model, &clf, &pretext, &resolved.train.crop)?;

        std::fs::write(out.join("model_config.txt"), model.config.to_text())?;
        write_train_config(&out, &resolved.rows())?;
        Checkpoint::from_model(&model, None, resolved.train.epochs as u64)?
            .save(&out.join("pretrain.ckpt"))?;
        let mut f = std::fs::File::create(out.join("pretrain_stats.csv"))?;
        writeln!(f, "key,value")?;
        writeln!(f, "pretext_frames,{}", pretext.len())?;
        writeln!(f, "num_classes,{num_classes}")?;
        writeln!(f, "train_accuracy,{accuracy:e}")?;
        println!("pretext accuracy {accuracy:.3} on {} frames", pretext.len());
        Ok(())
    })
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let path = args.dir.join(format!("{}_summary.csv", args.stem));
    if !path.exists() {
        return Err(Error::Config(format!("no summary file at '{}'", path.display())));
    }
    for (k, v) in read_summary(&path)? {
        println!("{k},{v}");
    }
    Ok(())
}
