//! Image preprocessing: rescale so the shortest side hits a target,
//! random/center/dense cropping, per-scene mean image, and the optional
//! blur/brightness robustness knobs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Random,
    Center,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    pub rescale_side: usize,
    pub crop_side: usize,
    pub mode: CropMode,
    pub dense_count: usize,
}

impl CropSpec {
    pub fn new(rescale_side: usize, crop_side: usize, mode: CropMode, dense_count: usize) -> Result<CropSpec> {
        if crop_side > rescale_side {
            return invalid(format!("crop_side {crop_side} exceeds rescale_side {rescale_side}"));
        }
        if dense_count == 0 {
            return invalid("dense_count must be positive");
        }
        Ok(CropSpec { rescale_side, crop_side, mode, dense_count })
    }
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec { rescale_side: 256, crop_side: 224, mode: CropMode::Center, dense_count: 128 }
    }
}

/// Bilinear resize preserving aspect ratio so min(H', W') == target; the
/// other side is rounded to nearest.
pub fn rescale_shortest_side(image: &Image, target: usize) -> Result<Image> {
    let (h, w) = (image.height, image.width);
    if h == 0 || w == 0 || target == 0 {
        return invalid("rescale: empty image or zero target");
    }
    let (nh, nw) = if h <= w {
        (target, ((w as f64 * target as f64 / h as f64).round() as usize).max(1))
    } else {
        (((h as f64 * target as f64 / w as f64).round() as usize).max(1), target)
    };
    if (nh, nw) == (h, w) {
        return Ok(image.clone());
    }
    let mut out = Image::new(nh, nw);
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v = image.get(c, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + image.get(c, y0, x1) * (1.0 - wy) * wx
                    + image.get(c, y1, x0) * wy * (1.0 - wx)
                    + image.get(c, y1, x1) * wy * wx;
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Crop {
    pub offset_y: usize,
    pub offset_x: usize,
    pub image: Image,
}

fn extract(image: &Image, oy: usize, ox: usize, side: usize) -> Image {
    let mut out = Image::new(side, side);
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                out.set(c, y, x, image.get(c, oy + y, ox + x));
            }
        }
    }
    out
}

/// Evenly spaced integer offsets covering [0, max] inclusive of both ends.
fn grid_axis(max: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![max / 2];
    }
    (0..n)
        .map(|i| ((i as f64) * (max as f64) / ((n - 1) as f64)).round() as usize)
        .collect()
}

/// Dense grid layout: the factor pair r·s == count whose aspect r/s is
/// closest to the valid offset rectangle's aspect.
pub fn dense_grid_shape(max_y: usize, max_x: usize, count: usize) -> (usize, usize) {
    let target = if max_x == 0 && max_y == 0 {
        1.0
    } else if max_x == 0 {
        count as f64
    } else if max_y == 0 {
        1.0 / count as f64
    } else {
        max_y as f64 / max_x as f64
    };
    let mut best = (1, count);
    let mut best_err = f64::INFINITY;
    for r in 1..=count {
        if count % r != 0 {
            continue;
        }
        let s = count / r;
        let err = (r as f64 / s as f64 - target).abs();
        if err < best_err {
            best_err = err;
            best = (r, s);
        }
    }
    best
}

/// Crop per the spec mode: center → one crop at the centered offset;
/// random → one crop with a seeded uniform offset; dense → `dense_count`
/// crops on an integer grid spanning the valid offset rectangle.
pub fn crop(image: &Image, spec: &CropSpec, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Crop>> {
    let c = spec.crop_side;
    let (h, w) = (image.height, image.width);
    if c > h || c > w {
        return invalid(format!("crop side {c} exceeds image {h}x{w}"));
    }
    let (my, mx) = (h - c, w - c);
    let offsets: Vec<(usize, usize)> = match spec.mode {
        CropMode::Center => vec![(my / 2, mx / 2)],
        CropMode::Random => {
            let rng = rng.ok_or_else(|| {
                crate::error::Error::InvalidArgument("random crop requires an rng".into())
            })?;
            vec![(rng.gen_range(0..=my), rng.gen_range(0..=mx))]
        }
        CropMode::Dense => {
            let (r, s) = dense_grid_shape(my, mx, spec.dense_count);
            let ys = grid_axis(my, r);
            let xs = grid_axis(mx, s);
            ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
        }
    };
    Ok(offsets
        .into_iter()
        .map(|(oy, ox)| Crop { offset_y: oy, offset_x: ox, image: extract(image, oy, ox, c) })
        .collect())
}

/// Elementwise mean of same-shape images.
pub fn compute_scene_mean(images: &[Image]) -> Result<Image> {
    let first = match images.first() {
        Some(f) => f,
        None => return invalid("compute_scene_mean: empty image stream"),
    };
    let mut acc = Image::new(first.height, first.width);
    for img in images {
        if img.height != first.height || img.width != first.width {
            return invalid("compute_scene_mean: images have differing shapes");
        }
        for (a, v) in acc.data.iter_mut().zip(&img.data) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    acc.data.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// Subtract the offset-aligned slice of the scene mean from a crop.
pub fn subtract_mean(crop: &Image, mean: &Image, offset_y: usize, offset_x: usize) -> Result<Image> {
    if offset_y + crop.height > mean.height || offset_x + crop.width > mean.width {
        return invalid("subtract_mean: crop offset outside mean image");
    }
    let mut out = crop.clone();
    for c in 0..3 {
        for y in 0..crop.height {
            for x in 0..crop.width {
                let m = mean.get(c, offset_y + y, offset_x + x);
                out.set(c, y, x, crop.get(c, y, x) - m);
            }
        }
    }
    Ok(out)
}

/// Separable Gaussian blur; qualitative robustness knob only.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let (h, w) = (image.height as isize, image.width as isize);
    let mut tmp = image.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += kv * image.get(c, y as usize, xx as usize);
                }
                tmp.set(c, y as usize, x as usize, acc / ksum);
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp.get(c, yy as usize, x as usize);
                }
                out.set(c, y as usize, x as usize, acc / ksum);
            }
        }
    }
    out
}

/// Brightness scaling, clamped to [0,1]; qualitative robustness knob only.
pub fn scale_brightness(image: &Image, factor: f64) -> Image {
    let mut out = image.clone();
    out.data.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
    out
}
