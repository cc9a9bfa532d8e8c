//! Deterministic synthetic scene generation and pinhole rendering.
//!
//! A scene is a set of colored spherical landmarks inside a box extent,
//! viewed by a pinhole camera. Rendering is a pure function of
//! (scene, pose), so ground-truth pose labels are exact by construction
//! and datasets are regenerable from (seed, extent) alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use crate::error::{Error, Result};
use crate::geometry::{quat_from_rotation_matrix, Pose, Quaternion};
use crate::oracle::quat_to_rotation_matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub position: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Principal point at the image center so a 180° roll maps the pixel
    /// grid onto itself.
    pub fn centered(width: usize, height: usize, focal_px: f64) -> Intrinsics {
        Intrinsics {
            focal_px,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub extent: [f64; 3],
    pub landmarks: Vec<Landmark>,
    pub intrinsics: Intrinsics,
}

impl SceneSpec {
    pub fn center(&self) -> [f64; 3] {
        [self.extent[0] / 2.0, self.extent[1] / 2.0, self.extent[2] / 2.0]
    }
}

/// One dataset record. The landmark mask and dominant landmark id are
/// synthetic-only side channels used by the saliency statistics and the
/// classification pretext task.
#[derive(Debug, Clone)]
pub struct PoseSample {
    pub image: Image,
    pub pose: Pose,
    pub frame_id: String,
    pub landmark_mask: Vec<bool>,
    pub dominant_landmark: Option<usize>,
}

pub const DEFAULT_RENDER_WIDTH: usize = 96;
pub const DEFAULT_RENDER_HEIGHT: usize = 72;
pub const DEFAULT_FOCAL_PX: f64 = 60.0;
const MIN_LANDMARKS: usize = 10;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, t],
    }
}

/// Deterministic landmark layout with distinguishable colors and sizes.
pub fn generate_scene(seed: u64, extent: [f64; 3]) -> Result<SceneSpec> {
    if extent.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidArgument(format!("extent must be positive, got {extent:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = MIN_LANDMARKS + (rng.gen_range(0..3) as usize);
    let min_xy = extent[0].min(extent[1]);
    let mut landmarks: Vec<Landmark> = Vec::with_capacity(n);
    for id in 0..n {
        // Rejection-sample a position that keeps spheres disjoint.
        let mut placed = None;
        for _ in 0..200 {
            let radius = rng.gen_range(0.035..0.075) * min_xy;
            let pos = [
                rng.gen_range(0.15..0.85) * extent[0],
                rng.gen_range(0.15..0.85) * extent[1],
                rng.gen_range(0.15..0.60) * extent[2],
            ];
            let ok = landmarks.iter().all(|l| {
                let d = (0..3).map(|k| (l.position[k] - pos[k]).powi(2)).sum::<f64>().sqrt();
                d > l.radius + radius + 0.02 * min_xy
            });
            if ok {
                placed = Some((pos, radius));
                break;
            }
        }
        let (position, radius) = placed.ok_or_else(|| {
            Error::Internal("could not place landmarks without overlap".into())
        })?;
        let hue = id as f64 / n as f64 + rng.gen_range(-0.02..0.02);
        let color = hsv_to_rgb(hue, rng.gen_range(0.7..0.95), rng.gen_range(0.7..1.0));
        landmarks.push(Landmark { id, position, radius, color });
    }
    Ok(SceneSpec {
        seed,
        extent,
        landmarks,
        intrinsics: Intrinsics::centered(
            DEFAULT_RENDER_WIDTH,
            DEFAULT_RENDER_HEIGHT,
            DEFAULT_FOCAL_PX,
        ),
    })
}

/// World point to pixel coordinates and depth, if in front of the camera.
/// Camera frame: +X right, +Y down, +Z forward; `pose.orientation` is the
/// camera-to-world rotation.
pub fn project_point(
    intrinsics: &Intrinsics,
    pose: &Pose,
    point: [f64; 3],
) -> Option<(f64, f64, f64)> {
    let r = quat_to_rotation_matrix(&pose.orientation);
    let d = [
        point[0] - pose.position[0],
        point[1] - pose.position[1],
        point[2] - pose.position[2],
    ];
    // camera coords: R^T (X - t)
    let xc = r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2];
    let yc = r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2];
    let zc = r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2];
    if zc <= 1e-6 {
        return None;
    }
    Some((
        intrinsics.focal_px * xc / zc + intrinsics.cx,
        intrinsics.focal_px * yc / zc + intrinsics.cy,
        zc,
    ))
}

const SKY_COLOR: [f64; 3] = [0.35, 0.45, 0.60];
const GROUND_COLOR: [f64; 3] = [0.22, 0.18, 0.14];

/// Render the scene from a camera pose: shaded horizon background, then
/// landmarks painted far-to-near. Deterministic.
pub fn render_view(scene: &SceneSpec, pose: &Pose) -> Result<PoseSample> {
    for l in &scene.landmarks {
        let d = (0..3)
            .map(|k| (l.position[k] - pose.position[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        if d <= l.radius {
            return Err(Error::DegenerateView { landmark_id: l.id });
        }
    }
    let intr = &scene.intrinsics;
    let (h, w) = (intr.height, intr.width);
    let mut image = Image::new(h, w);
    let r = quat_to_rotation_matrix(&pose.orientation);

    // Background: blend sky/ground by the world-up component of each ray.
    for y in 0..h {
        for x in 0..w {
            let rx = (x as f64 - intr.cx) / intr.focal_px;
            let ry = (y as f64 - intr.cy) / intr.focal_px;
            // world direction of the pixel ray (unnormalized): R · [rx, ry, 1]
            let up = r[2][0] * rx + r[2][1] * ry + r[2][2];
            let nrm = (rx * rx + ry * ry + 1.0).sqrt();
            let u = (up / nrm).clamp(-1.0, 1.0);
            let blend = 0.5 + 0.5 * (u * 4.0).tanh();
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                let sky = SKY_COLOR[c] * (0.75 + 0.25 * u.max(0.0));
                let ground = GROUND_COLOR[c] * (0.75 + 0.25 * (-u).max(0.0));
                rgb[c] = blend * sky + (1.0 - blend) * ground;
            }
            image.set_pixel(y, x, rgb);
        }
    }

    // Painter's ordering: far landmarks first, nearer ones overwrite.
    let mut order: Vec<(f64, &Landmark)> = Vec::new();
    for l in &scene.landmarks {
        if let Some((_, _, depth)) = project_point(intr, pose, l.position) {
            order.push((depth, l));
        }
    }
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (depth, l) in &order {
        let (u, v, _) = project_point(intr, pose, l.position).unwrap();
        let pr = intr.focal_px * l.radius / depth;
        if pr <= 0.0 {
            continue;
        }
        let y0 = (v - pr).floor().max(0.0) as usize;
        let y1 = (v + pr).ceil().min(h as f64 - 1.0) as usize;
        let x0 = (u - pr).floor().max(0.0) as usize;
        let x1 = (u + pr).ceil().min(w as f64 - 1.0) as usize;
        if y0 > y1 || x0 > x1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dy = y as f64 - v;
                let dx = x as f64 - u;
                let d2 = (dx * dx + dy * dy) / (pr * pr);
                if d2 > 1.0 {
                    continue;
                }
                // Simple radial shading so the disc has internal gradient.
                let shade = 1.0 - 0.45 * d2;
                image.set_pixel(y, x, [
                    l.color[0] * shade,
                    l.color[1] * shade,
                    l.color[2] * shade,
                ]);
                owner[y * w + x] = Some(l.id);
            }
        }
    }

    let landmark_mask: Vec<bool> = owner.iter().map(|o| o.is_some()).collect();
    let mut counts: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for o in owner.iter().flatten() {
        *counts.entry(*o).or_insert(0) += 1;
    }
    let dominant_landmark = counts
        .into_iter()
        .max_by_key(|&(id, c)| (c, std::cmp::Reverse(id)))
        .map(|(id, _)| id);

    Ok(PoseSample {
        image,
        pose: *pose,
        frame_id: String::new(),
        landmark_mask,
        dominant_landmark,
    })
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Camera-to-world orientation looking from `eye` toward `target`, world up
/// +Z, camera +Y pointing down.
pub fn look_at_orientation(eye: [f64; 3], target: [f64; 3]) -> Quaternion {
    let forward = normalize3([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
    let up = [0.0, 0.0, 1.0];
    let right = normalize3(cross3(forward, up));
    let down = cross3(forward, right);
    // columns are the camera axes in world coordinates
    let r = [
        [right[0], down[0], forward[0]],
        [right[1], down[1], forward[1]],
        [right[2], down[2], forward[2]],
    ];
    quat_from_rotation_matrix(&r)
}

fn too_close_to_landmarks(scene: &SceneSpec, p: [f64; 3]) -> bool {
    scene.landmarks.iter().any(|l| {
        let d = (0..3).map(|k| (l.position[k] - p[k]).powi(2)).sum::<f64>().sqrt();
        d < l.radius + 0.2
    })
}

/// Walking-path pose sequence: steps of ~`spacing` meters with bounded
/// heading jitter, bouncing off the extent margins, each pose oriented
/// toward the landmark field with bounded jitter.
pub fn sample_trajectory(
    scene: &SceneSpec,
    spacing: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Pose>> {
    if spacing <= 0.0 {
        return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65_6374_6f72);
    let ext = scene.extent;
    let lo = [0.05 * ext[0], 0.05 * ext[1]];
    let hi = [0.95 * ext[0], 0.95 * ext[1]];
    let z_lo = 0.55 * ext[2];
    let z_hi = 0.85 * ext[2];

    let mut pos = loop {
        let p = [
            rng.gen_range(lo[0]..hi[0]),
            rng.gen_range(lo[1]..hi[1]),
            rng.gen_range(z_lo..z_hi),
        ];
        if !too_close_to_landmarks(scene, p) {
            break p;
        }
    };
    let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let center = scene.center();
    let mut poses = Vec::with_capacity(count);

    for _ in 0..count {
        let target = [
            center[0] + rng.gen_range(-0.12..0.12) * ext[0],
            center[1] + rng.gen_range(-0.12..0.12) * ext[1],
            center[2] * (1.0 + rng.gen_range(-0.2..0.2)),
        ];
        let mut q = look_at_orientation(pos, target);
        // bounded roll jitter about the view axis
        let roll = Quaternion::from_axis_angle(q.rotate([0.0, 0.0, 1.0]), rng.gen_range(-0.05..0.05));
        q = roll.multiply(&q);
        poses.push(Pose::new(pos, q)?);

        // Take the next step; retry headings until inside bounds and clear
        // of landmark volumes.
        let step = spacing * rng.gen_range(0.85..1.15);
        let dz = rng.gen_range(-0.05..0.05) * ext[2];
        let mut accepted = false;
        for attempt in 0..64 {
            let h = heading
                + rng.gen_range(-0.5..0.5)
                + if attempt > 0 { rng.gen_range(0.0..std::f64::consts::TAU) } else { 0.0 };
            let horiz = (step * step - dz * dz).max(0.0).sqrt();
            let next = [
                pos[0] + horiz * h.cos(),
                pos[1] + horiz * h.sin(),
                (pos[2] + dz).clamp(z_lo, z_hi),
            ];
            if next[0] > lo[0]
                && next[0] < hi[0]
                && next[1] > lo[1]
                && next[1] < hi[1]
                && !too_close_to_landmarks(scene, next)
            {
                pos = next;
                heading = h;
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Internal("trajectory walk got stuck".into()));
        }
    }
    Ok(poses)
}

/// Test poses spatially between consecutive training poses: midpoints on a
/// parallel path offset laterally by `offset_frac` of the local spacing.
pub fn interpolation_split(scene: &SceneSpec, train: &[Pose], offset_frac: f64) -> Result<Vec<Pose>> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument("interpolation split needs >= 2 training poses".into()));
    }
    let mut out = Vec::with_capacity(train.len() - 1);
    for pair in train.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let step = [
            b.position[0] - a.position[0],
            b.position[1] - a.position[1],
            b.position[2] - a.position[2],
        ];
        let len = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
        // lateral = horizontal perpendicular to the step direction
        let lateral = normalize3(cross3(step, [0.0, 0.0, 1.0]));
        let mut mid = [
            (a.position[0] + b.position[0]) / 2.0 + offset_frac * len * lateral[0],
            (a.position[1] + b.position[1]) / 2.0 + offset_frac * len * lateral[1],
            (a.position[2] + b.position[2]) / 2.0,
        ];
        for k in 0..2 {
            mid[k] = mid[k].clamp(0.02 * scene.extent[k], 0.98 * scene.extent[k]);
        }
        let avg = crate::geometry::average_pose_vectors(&[a.to_vector(), b.to_vector()])?;
        let mut pose = Pose::new(mid, avg.orientation)?;
        // nudge upward until clear of landmark volumes (largest radii can
        // exceed a single step)
        while too_close_to_landmarks(scene, pose.position)
            && pose.position[2] < 0.95 * scene.extent[2]
        {
            pose.position[2] = (pose.position[2] + 0.3).min(0.95 * scene.extent[2]);
        }
        out.push(pose);
    }
    Ok(out)
}
