//! Quaternion and pose arithmetic.
//!
//! Conventions, used everywhere in this crate: quaternions are scalar-first
//! (w, x, y, z); a [`Pose`] orientation is the camera-to-world rotation;
//! positions are meters in the scene's global frame. Canonical form resolves
//! the q ≡ −q double cover: w ≥ 0, ties broken by the first nonzero
//! component being ≥ 0.

use crate::error::{Error, Result};

pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quaternion {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() < UNIT_NORM_TOL
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn negate(&self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn conjugate(&self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product self * other.
    pub fn multiply(&self, o: &Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotation of `angle_rad` about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Quaternion {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = ((angle_rad / 2.0).sin(), (angle_rad / 2.0).cos());
        Quaternion::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotate a 3-vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = self.multiply(&p).multiply(&self.conjugate());
        [r.x, r.y, r.z]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// q / ‖q‖. Fails on near-zero norm.
pub fn quat_normalize(q: &Quaternion) -> Result<Quaternion> {
    let n = q.norm();
    if n <= 1e-12 {
        return Err(Error::DegenerateOrientation { norm: n });
    }
    Ok(Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n))
}

/// Pick the canonical representative of {q, −q}: w > 0, or on w == 0 the
/// first nonzero of (x, y, z) positive. Idempotent.
pub fn quat_canonicalize(q: &Quaternion) -> Quaternion {
    let comps = [q.w, q.x, q.y, q.z];
    for c in comps {
        if c > 0.0 {
            return *q;
        }
        if c < 0.0 {
            return q.negate();
        }
    }
    *q
}

/// Geodesic rotation angle between two unit quaternions, in degrees.
/// Double-cover safe; range [0, 180].
pub fn quat_angular_error_deg(q1: &Quaternion, q2: &Quaternion) -> f64 {
    let d = q1.dot(q2).abs().min(1.0);
    2.0 * d.acos().to_degrees()
}

pub fn position_error_m(p1: [f64; 3], p2: [f64; 3]) -> f64 {
    let dx = p1[0] - p2[0];
    let dy = p1[1] - p2[1];
    let dz = p1[2] - p2[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Quaternion from a row-major rotation matrix (Shepperd's method).
/// Internal: the public orientation API is quaternion-only.
pub(crate) fn quat_from_rotation_matrix(r: &[[f64; 3]; 3]) -> Quaternion {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (r[2][1] - r[1][2]) / s,
            (r[0][2] - r[2][0]) / s,
            (r[1][0] - r[0][1]) / s,
        )
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        Quaternion::new(
            (r[2][1] - r[1][2]) / s,
            0.25 * s,
            (r[0][1] + r[1][0]) / s,
            (r[0][2] + r[2][0]) / s,
        )
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        Quaternion::new(
            (r[0][2] - r[2][0]) / s,
            (r[0][1] + r[1][0]) / s,
            0.25 * s,
            (r[1][2] + r[2][1]) / s,
        )
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        Quaternion::new(
            (r[1][0] - r[0][1]) / s,
            (r[0][2] + r[2][0]) / s,
            (r[1][2] + r[2][1]) / s,
            0.25 * s,
        )
    };
    quat_canonicalize(&q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: Quaternion,
}

impl Pose {
    /// Normalizes and canonicalizes the orientation.
    pub fn new(position: [f64; 3], orientation: Quaternion) -> Result<Pose> {
        let q = quat_canonicalize(&quat_normalize(&orientation)?);
        Ok(Pose { position, orientation: q })
    }

    /// The 7-vector [x, y, z, w, p, q, r]: position then quaternion.
    pub fn to_vector(&self) -> [f64; 7] {
        let q = self.orientation;
        [self.position[0], self.position[1], self.position[2], q.w, q.x, q.y, q.z]
    }

    pub fn from_vector(v: &[f64]) -> Result<Pose> {
        if v.len() != 7 {
            return Err(Error::InvalidArgument(format!(
                "pose vector must have 7 components, got {}",
                v.len()
            )));
        }
        Pose::new([v[0], v[1], v[2]], Quaternion::new(v[3], v[4], v[5], v[6]))
    }
}

/// Mean of raw 7-vector pose outputs: positions averaged arithmetically,
/// quaternion parts sign-aligned to the first element before the
/// componentwise mean, then normalized and canonicalized.
pub fn average_pose_vectors(poses: &[[f64; 7]]) -> Result<Pose> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("average_pose_vectors: empty input".into()));
    }
    let mut pos = [0.0; 3];
    let mut quat = [0.0; 4];
    let first = Quaternion::new(poses[0][3], poses[0][4], poses[0][5], poses[0][6]);
    let reference = quat_canonicalize(&first);
    for p in poses {
        for d in 0..3 {
            pos[d] += p[d];
        }
        let q = Quaternion::new(p[3], p[4], p[5], p[6]);
        let q = if q.dot(&reference) < 0.0 { q.negate() } else { q };
        quat[0] += q.w;
        quat[1] += q.x;
        quat[2] += q.y;
        quat[3] += q.z;
    }
    let n = poses.len() as f64;
    pos.iter_mut().for_each(|v| *v /= n);
    quat.iter_mut().for_each(|v| *v /= n);
    let mean_q = Quaternion::new(quat[0], quat[1], quat[2], quat[3]);
    if mean_q.norm() < 1e-9 {
        return Err(Error::DegenerateAverage { norm: mean_q.norm() });
    }
    Pose::new(pos, mean_q)
}

/// Serialize a pose as 7 whitespace-separated fields: X Y Z W P Q R.
pub fn pose_to_fields(pose: &Pose) -> String {
    pose.to_vector()
        .iter()
        .map(|v| format!("{v:.12e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse 7 whitespace-separated decimal fields into a pose.
pub fn pose_from_fields(fields: &[&str]) -> Result<Pose> {
    if fields.len() != 7 {
        return Err(Error::InvalidArgument(format!(
            "pose needs 7 fields, got {}",
            fields.len()
        )));
    }
    let mut v = [0.0; 7];
    for (i, f) in fields.iter().enumerate() {
        v[i] = f
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("unparseable pose field '{f}'")))?;
        if !v[i].is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite pose field '{f}'")));
        }
    }
    Pose::from_vector(&v)
}
