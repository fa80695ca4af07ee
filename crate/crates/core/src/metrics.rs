//! Image-quality and pipeline-efficiency measurements.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::blend::PixelTrace;
use crate::image::Image;
use crate::raster::SortStats;
use crate::scene::KernelKind;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall(u32, u32),
    #[error("need at least two frames")]
    TooFewFrames,
}

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let n = a.data.len() * 3;
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)))
        .sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio for unit-range images; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Filters `plane` (`width` x `height`) with the separable window over all
/// valid positions.
fn filter_valid(plane: &[f64], width: usize, height: usize, window: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let mut horizontal = vec![0.0; ow * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            horizontal[y * ow + x] = window.iter().zip(&row[x..]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = window
                .iter()
                .enumerate()
                .map(|(k, w)| w * horizontal[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity (11x11 Gaussian window, sigma 1.5, unit data
/// range), averaged over valid window positions and then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.width, a.height));
    }
    let window = gaussian_window();
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, w, h, &window);
        let mu_y = filter_valid(&y, w, h, &window);
        let e_xx = filter_valid(&xx, w, h, &window);
        let e_yy = filter_valid(&yy, w, h, &window);
        let e_xy = filter_valid(&xy, w, h, &window);
        let n = mu_x.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let (mx, my) = (mu_x[i], mu_y[i]);
                let vx = e_xx[i] - mx * mx;
                let vy = e_yy[i] - my * my;
                let cxy = e_xy[i] - mx * my;
                ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
            })
            .sum();
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Mean absolute per-channel difference between each pair of consecutive frames.
pub fn popping_delta(frames: &[Image]) -> Result<Vec<f64>, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::TooFewFrames);
    }
    frames
        .windows(2)
        .map(|pair| frame_delta(&pair[0], &pair[1]))
        .collect()
}

pub fn frame_delta(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let n = a.data.len() * 3;
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok(sum / n as f64)
}

/// `1 - sum(n_rendered) / sum(n_valid)` over all pixels; zero when nothing is valid.
pub fn termination_ratio<'a, I>(traces: I) -> f64
where
    I: IntoIterator<Item = &'a PixelTrace>,
{
    let (rendered, valid) = traces
        .into_iter()
        .fold((0u64, 0u64), |(r, v), t| (r + t.n_rendered as u64, v + t.n_valid as u64));
    if valid == 0 {
        0.0
    } else {
        1.0 - rendered as f64 / valid as f64
    }
}

/// PSNR value that serializes an infinite result as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decibels(pub f64);

impl Serialize for Decibels {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Decibels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Decibels(v)),
            Raw::Text(t) if t == "inf" => Ok(Decibels(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value `{t}`"))),
        }
    }
}

/// Per-stage wall-clock breakdown in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub cull_ms: f64,
    pub decode_ms: f64,
    pub project_ms: f64,
    pub bin_ms: f64,
    pub sort_ms: f64,
    pub blend_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.cull_ms + self.decode_ms + self.project_ms + self.bin_ms + self.sort_ms + self.blend_ms
    }
}

/// Blending workload summary of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub total_valid: u64,
    pub total_rendered: u64,
    pub mean_rendered_per_pixel: f64,
    pub max_rendered_per_pixel: u32,
}

impl TraceSummary {
    pub fn from_traces(traces: &[PixelTrace]) -> Self {
        let total_valid = traces.iter().map(|t| t.n_valid as u64).sum();
        let total_rendered: u64 = traces.iter().map(|t| t.n_rendered as u64).sum();
        Self {
            total_valid,
            total_rendered,
            mean_rendered_per_pixel: if traces.is_empty() {
                0.0
            } else {
                total_rendered as f64 / traces.len() as f64
            },
            max_rendered_per_pixel: traces.iter().map(|t| t.n_rendered).max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub kernel: KernelKind,
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    /// Against the oracle render of the same view, when one was computed.
    pub psnr: Option<Decibels>,
    pub ssim: Option<f64>,
    /// Versus the previous frame of the same sequence.
    pub popping_delta: Option<f64>,
    pub et_ratio: f64,
    pub sort_stats: SortStats,
    pub trace: TraceSummary,
    pub render_ms: f64,
    pub stages: StageTimings,
}
