//! Per-pixel compositing kernels.
//!
//! Every kernel walks its inputs in a fixed order (traversal order, then slot
//! order inside a cell) so renders are bitwise reproducible.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::projection::{project_gaussian, ProjectionError, Splat2D};
use crate::scene::{Camera, Gaussian3D, RenderConfig};

/// Upper bound on any single alpha.
pub const ALPHA_CLAMP: f64 = 0.99;

pub type Rgb = [f64; 3];

/// A projected Gaussian with the attributes blending needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadedSplat {
    pub splat: Splat2D,
    pub opacity: f64,
    pub color: Rgb,
}

impl ShadedSplat {
    pub fn new(splat: Splat2D, g: &Gaussian3D) -> Self {
        Self {
            splat,
            opacity: g.opacity,
            color: [g.color.x, g.color.y, g.color.z],
        }
    }
}

/// Per-pixel work counters: `n_valid` alphas passed `alpha_min`,
/// `n_rendered` of them were blended before termination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelTrace {
    pub n_valid: u32,
    pub n_rendered: u32,
    pub final_t: f64,
}

impl Default for PixelTrace {
    fn default() -> Self {
        Self {
            n_valid: 0,
            n_rendered: 0,
            final_t: 1.0,
        }
    }
}

/// Kernel alpha without the bounding-box test: `min(opacity * G, 0.99)`,
/// zeroed below `alpha_min`.
pub fn kernel_alpha(splat: &Splat2D, opacity: f64, pixel: [f64; 2], alpha_min: f64) -> f64 {
    let alpha = (opacity * splat.kernel(pixel)).min(ALPHA_CLAMP);
    if alpha < alpha_min {
        0.0
    } else {
        alpha
    }
}

/// [`kernel_alpha`] plus the false-positive skip: pixels outside the splat
/// box get zero.
pub fn eval_alpha(splat: &Splat2D, opacity: f64, pixel: [f64; 2], alpha_min: f64) -> f64 {
    if !splat.covers(pixel) {
        return 0.0;
    }
    kernel_alpha(splat, opacity, pixel, alpha_min)
}

fn add_scaled(acc: &mut Rgb, color: &Rgb, scale: f64) {
    for (a, c) in acc.iter_mut().zip(color) {
        *a += scale * c;
    }
}

/// Front-to-back alpha compositing of depth-sorted splats.
pub fn blend_alpha_reference<'a, I>(entries: I, pixel: [f64; 2], config: &RenderConfig) -> (Rgb, PixelTrace)
where
    I: IntoIterator<Item = &'a ShadedSplat>,
{
    let mut color = [0.0; 3];
    let mut t = 1.0;
    let mut trace = PixelTrace::default();
    let mut terminated = false;
    for s in entries {
        let alpha = eval_alpha(&s.splat, s.opacity, pixel, config.alpha_min);
        if alpha <= 0.0 {
            continue;
        }
        trace.n_valid += 1;
        if terminated {
            continue;
        }
        add_scaled(&mut color, &s.color, t * alpha);
        t *= 1.0 - alpha;
        trace.n_rendered += 1;
        terminated = t < config.et_epsilon;
    }
    add_scaled(&mut color, &config.background, t);
    trace.final_t = t;
    (color, trace)
}

/// Linear-correction weighted sum: weight `max(0, 1 - depth / tau)` with unit
/// per-primitive weight, normalized together with the background term.
pub fn blend_lcwsr<'a, I>(entries: I, pixel: [f64; 2], config: &RenderConfig) -> (Rgb, PixelTrace)
where
    I: IntoIterator<Item = &'a ShadedSplat>,
{
    let w_b = config.lc_background_weight;
    let mut num = [0.0; 3];
    add_scaled(&mut num, &config.background, w_b);
    let mut den = w_b;
    let mut coverage = 1.0;
    let mut trace = PixelTrace::default();
    for s in entries {
        let alpha = eval_alpha(&s.splat, s.opacity, pixel, config.alpha_min);
        if alpha <= 0.0 {
            continue;
        }
        trace.n_valid += 1;
        trace.n_rendered += 1;
        let weight = alpha * lc_weight(s.splat.depth, config.lc_tau);
        add_scaled(&mut num, &s.color, weight);
        den += weight;
        coverage *= 1.0 - alpha;
    }
    trace.final_t = coverage;
    if den < config.denom_floor {
        return (config.background, trace);
    }
    (num.map(|n| n / den), trace)
}

pub fn lc_weight(depth: f64, tau: f64) -> f64 {
    (1.0 - depth / tau).max(0.0)
}

/// Cell-level physical weighted sum with early termination.
///
/// `cells` yields `(blend_weight, slots)` front to back. Each cell is weighted
/// by `v * T`, and `T` is multiplied by `prod_k (1 - v * alpha_k)` after the
/// cell; traversal stops blending once `T < et_epsilon`.
pub fn blend_duplex<'a, I>(cells: I, pixel: [f64; 2], config: &RenderConfig) -> (Rgb, PixelTrace)
where
    I: IntoIterator<Item = (f64, &'a [ShadedSplat])>,
{
    let mut num = [0.0; 3];
    let mut den = 0.0;
    let mut t = 1.0;
    let mut trace = PixelTrace::default();
    let mut terminated = false;
    for (v, slots) in cells {
        if terminated {
            trace.n_valid += slots
                .iter()
                .filter(|s| eval_alpha(&s.splat, s.opacity, pixel, config.alpha_min) > 0.0)
                .count() as u32;
            continue;
        }
        let mut cell_num = [0.0; 3];
        let mut cell_den = 0.0;
        let mut cell_t = 1.0;
        for s in slots {
            let alpha = eval_alpha(&s.splat, s.opacity, pixel, config.alpha_min);
            if alpha <= 0.0 {
                continue;
            }
            trace.n_valid += 1;
            trace.n_rendered += 1;
            add_scaled(&mut cell_num, &s.color, alpha);
            cell_den += alpha;
            cell_t *= 1.0 - v * alpha;
        }
        let w = v * t;
        add_scaled(&mut num, &cell_num, w);
        den += w * cell_den;
        t *= cell_t;
        terminated = t < config.et_epsilon;
    }
    trace.final_t = t;
    if den < config.denom_floor {
        return (config.background, trace);
    }
    (num.map(|n| n / den), trace)
}

/// A Gaussian prepared for exact per-pixel ordering.
#[derive(Clone, Debug)]
pub struct OracleGaussian {
    pub shaded: ShadedSplat,
    center_cam: Vector3<f64>,
    precision_cam: Matrix3<f64>,
}

/// Projects every Gaussian; those outside the depth range are dropped.
pub fn prepare_oracle(
    gaussians: &[Gaussian3D],
    cam: &Camera,
    det_floor: f64,
) -> Result<Vec<OracleGaussian>, ProjectionError> {
    let w = cam.rotation();
    let mut out = Vec::with_capacity(gaussians.len());
    for g in gaussians {
        let Some(splat) = project_gaussian(g, cam, det_floor)? else {
            continue;
        };
        let r = w * g.rotation.to_rotation_matrix().into_inner();
        let inv_sq = g.scale.map(|s| 1.0 / (s * s));
        out.push(OracleGaussian {
            shaded: ShadedSplat::new(splat, g),
            center_cam: cam.world_to_camera(&g.center),
            precision_cam: r * Matrix3::from_diagonal(&inv_sq) * r.transpose(),
        });
    }
    Ok(out)
}

impl OracleGaussian {
    /// View-space z of the density maximum along the ray through `pixel`.
    pub fn ray_depth(&self, cam: &Camera, pixel: [f64; 2]) -> f64 {
        let d = Vector3::new(
            (pixel[0] - cam.principal_point[0]) / cam.focal[0],
            (pixel[1] - cam.principal_point[1]) / cam.focal[1],
            1.0,
        );
        let ad = self.precision_cam * d;
        ad.dot(&self.center_cam) / ad.dot(&d)
    }
}

/// Exact composite: every Gaussian, no tiles, no box skip, sorted by its
/// ray depth at this pixel, no early termination.
pub fn oracle_pixel(gaussians: &[OracleGaussian], pixel: [f64; 2], cam: &Camera, config: &RenderConfig) -> Rgb {
    let mut hits: Vec<(f64, usize, f64)> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let alpha = kernel_alpha(&g.shaded.splat, g.shaded.opacity, pixel, config.alpha_min);
            (alpha > 0.0).then(|| (g.ray_depth(cam, pixel), i, alpha))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for (_, i, alpha) in hits {
        add_scaled(&mut color, &gaussians[i].shaded.color, t * alpha);
        t *= 1.0 - alpha;
    }
    add_scaled(&mut color, &config.background, t);
    color
}
