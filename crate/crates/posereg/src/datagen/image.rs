//! In-memory RGB image, values in [0,1], channel-major (CHW) layout, plus
//! binary portable pixmap / graymap I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// 3 * height * width values, channel-major.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Image {
        Image { height, width, data: vec![0.0; 3 * height * width] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != 3 * height * width {
            return invalid(format!(
                "image data length {} != 3*{height}*{width}",
                data.len()
            ));
        }
        Ok(Image { height, width, data })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.set(c, y, x, *v);
        }
    }

    /// View as a [3, H, W] tensor; `requires_grad` enables saliency maps.
    pub fn to_tensor(&self, requires_grad: bool) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(
            vec![3, self.height, self.width],
            self.data.clone(),
            requires_grad,
        )
        .expect("image data length matches its shape")
    }
}

/// Write as binary PPM (P6), 8-bit, values mapped linearly from [0,1].
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(3 * image.height * image.width + 32);
    bytes.extend_from_slice(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes());
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..3 {
                bytes.push((image.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Write a single-channel map as binary PGM (P5).
pub fn write_pgm(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    if values.len() != height * width {
        return invalid("write_pgm: value count does not match dimensions");
    }
    let mut bytes = Vec::with_capacity(height * width + 32);
    bytes.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    for v in values {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let err = |msg: &str| Error::Format { line: 0, msg: format!("{}: {msg}", path.display()) };

    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // then a single whitespace byte before the pixel data.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        tokens.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| err("bad header"))?.to_string());
    }
    pos += 1; // single whitespace after maxval
    if tokens[0] != "P6" {
        return Err(err("not a binary PPM (P6)"));
    }
    let width: usize = tokens[1].parse().map_err(|_| err("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| err("bad height"))?;
    let maxval: f64 = tokens[3].parse().map_err(|_| err("bad maxval"))?;
    if raw.len() < pos + 3 * width * height {
        return Err(err("truncated pixel data"));
    }
    let mut img = Image::new(height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let b = raw[pos + (y * width + x) * 3 + c];
                img.set(c, y, x, b as f64 / maxval);
            }
        }
    }
    Ok(img)
}
