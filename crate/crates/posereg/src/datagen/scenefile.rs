//! Scene spec serialization: plain-text key-value lines plus a landmark
//! table, so a dataset is regenerable from (seed, extent) and auditable.

use std::io::Write;
use std::path::Path;

use super::scene::{Intrinsics, Landmark, SceneSpec};
use crate::error::{Error, Result};

pub fn write_scene_spec(path: &Path, scene: &SceneSpec) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# posereg scene v1")?;
    writeln!(f, "seed = {}", scene.seed)?;
    writeln!(f, "extent = {:.12e} {:.12e} {:.12e}", scene.extent[0], scene.extent[1], scene.extent[2])?;
    let i = &scene.intrinsics;
    writeln!(f, "resolution = {} {}", i.width, i.height)?;
    writeln!(f, "focal_px = {:.12e}", i.focal_px)?;
    writeln!(f, "principal_point = {:.12e} {:.12e}", i.cx, i.cy)?;
    writeln!(f, "# landmark = id x y z radius r g b")?;
    for l in &scene.landmarks {
        writeln!(
            f,
            "landmark = {} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e}",
            l.id, l.position[0], l.position[1], l.position[2], l.radius, l.color[0], l.color[1], l.color[2]
        )?;
    }
    Ok(())
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut seed = None;
    let mut extent = None;
    let mut resolution = None;
    let mut focal = None;
    let mut principal = None;
    let mut landmarks = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Format {
            line: idx + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        let nums: Vec<f64> = value
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format { line: idx + 1, msg: e.to_string() })?;
        let want = |n: usize| -> Result<()> {
            if nums.len() != n {
                return Err(Error::Format {
                    line: idx + 1,
                    msg: format!("'{key}' expects {n} values, got {}", nums.len()),
                });
            }
            Ok(())
        };
        match key {
            "seed" => {
                want(1)?;
                seed = Some(nums[0] as u64);
            }
            "extent" => {
                want(3)?;
                extent = Some([nums[0], nums[1], nums[2]]);
            }
            "resolution" => {
                want(2)?;
                resolution = Some((nums[0] as usize, nums[1] as usize));
            }
            "focal_px" => {
                want(1)?;
                focal = Some(nums[0]);
            }
            "principal_point" => {
                want(2)?;
                principal = Some((nums[0], nums[1]));
            }
            "landmark" => {
                want(8)?;
                landmarks.push(Landmark {
                    id: nums[0] as usize,
                    position: [nums[1], nums[2], nums[3]],
                    radius: nums[4],
                    color: [nums[5], nums[6], nums[7]],
                });
            }
            other => {
                return Err(Error::Format { line: idx + 1, msg: format!("unknown key '{other}'") })
            }
        }
    }

    let missing = |what: &str| Error::Format { line: 0, msg: format!("missing '{what}'") };
    let (width, height) = resolution.ok_or_else(|| missing("resolution"))?;
    let (cx, cy) = principal.ok_or_else(|| missing("principal_point"))?;
    Ok(SceneSpec {
        seed: seed.ok_or_else(|| missing("seed"))?,
        extent: extent.ok_or_else(|| missing("extent"))?,
        landmarks,
        intrinsics: Intrinsics {
            focal_px: focal.ok_or_else(|| missing("focal_px"))?,
            cx,
            cy,
            width,
            height,
        },
    })
}
