//! Linear RGB float images and PPM (P6) encoding.

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::blend::Rgb;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major pixels.
    pub data: Vec<Rgb>,
}

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("not a binary PPM (P6) image")]
    BadHeader,
    #[error("only 8-bit PPM is supported (maxval {0})")]
    MaxVal(u32),
    #[error("pixel data truncated")]
    Truncated,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![color; width as usize * height as usize],
        }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.data[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.index(x, y);
        self.data[i] = color;
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest per-channel absolute difference; `None` on size mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> Option<f64> {
        if !self.same_size(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// 8-bit interleaved RGB, values clamped to `[0, 1]` and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|p| p.map(quantize))
            .collect()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_ppm())?;
        f.flush()
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, PpmError> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PpmError::BadHeader);
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| PpmError::BadHeader)?);
        }
        if fields[0] != "P6" {
            return Err(PpmError::BadHeader);
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|_| PpmError::BadHeader);
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(PpmError::MaxVal(maxval));
        }
        let body = bytes.get(pos + 1..).ok_or(PpmError::Truncated)?;
        let n = width as usize * height as usize;
        if body.len() < 3 * n {
            return Err(PpmError::Truncated);
        }
        let data = body[..3 * n]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0))
            .collect();
        Ok(Self { width, height, data })
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
