//! Screen-space projection of Gaussians and cells.
//!
//! Gaussians use the local-affine (EWA) approximation: the 3D covariance is
//! rotated into the camera frame and pushed through the perspective Jacobian
//! at the Gaussian center. Cells are bounded by an ellipsoid whose
//! perspective outline is computed exactly.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Camera, CellProxy, Gaussian3D};

/// Screen-space low-pass added to the projected covariance diagonal (px^2).
pub const LOW_PASS: f64 = 0.3;

/// Splat footprint cutoff in standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;

/// Semi-axes of a cell's bounding ellipsoid in units of its structure scales.
///
/// A slot with offset `o` and clamped ratio `r <= 1 - |o|` reaches at most
/// `|o| + 3 r <= 3` structure scales at its 3-sigma surface, so `3` is the
/// smallest factor that bounds every emitted footprint of an aligned slot.
pub const CELL_BOUND_FACTOR: f64 = 3.0;

/// Extra pixel margin on cell bounds covering the low-pass dilation.
pub fn cell_pixel_margin() -> f64 {
    SIGMA_CUTOFF * LOW_PASS.sqrt()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("projected covariance is singular (det {det:e})")]
    SingularCovariance { det: f64 },
}

/// Half-open integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    /// Pixels whose centers fall inside the continuous box, clipped to the image.
    pub fn from_bounds(lo: [f64; 2], hi: [f64; 2], width: u32, height: u32) -> Self {
        let (x0, x1) = pixel_span(lo[0], hi[0], width);
        let (y0, y1) = pixel_span(lo[1], hi[1], height);
        Self { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
        }
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// True when every pixel of `other` is also in `self`.
    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.is_empty()
            || (other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1)
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x0 < other.x1
            && other.x0 < self.x1
            && self.y0 < other.y1
            && other.y0 < self.y1
    }
}

/// Indices `i` in `[0, size)` with `lo <= i + 0.5 <= hi`, as a half-open range.
fn pixel_span(lo: f64, hi: f64, size: u32) -> (u32, u32) {
    let first = (lo - 0.5).ceil().clamp(0.0, size as f64);
    let last = ((hi - 0.5).floor() + 1.0).clamp(0.0, size as f64);
    if !(first < last) {
        return (0, 0);
    }
    (first as u32, last as u32)
}

/// A projected Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Upper triangle `(a, b, c)` of the inverse dilated 2D covariance.
    pub conic: [f64; 3],
    /// View-space z of the center.
    pub depth: f64,
    /// `3 sqrt(lambda_max)` of the dilated covariance, in pixels.
    pub radius: f64,
    /// Half-widths of the axis-aligned 3-sigma box around `mean2d`.
    pub half_extent: [f64; 2],
    pub aabb: PixelRect,
}

impl Splat2D {
    /// Continuous box test used by the false-positive skip.
    pub fn covers(&self, pixel: [f64; 2]) -> bool {
        (pixel[0] - self.mean2d[0]).abs() <= self.half_extent[0]
            && (pixel[1] - self.mean2d[1]).abs() <= self.half_extent[1]
    }

    /// Unnormalized Gaussian kernel at `pixel`; equals 1 at `mean2d`.
    pub fn kernel(&self, pixel: [f64; 2]) -> f64 {
        let dx = pixel[0] - self.mean2d[0];
        let dy = pixel[1] - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        power.min(0.0).exp()
    }
}

/// Projected cell bound.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSplat {
    pub cell_index: usize,
    /// View-space z of the cell center, floored at the near plane.
    pub depth: f64,
    pub aabb: PixelRect,
}

/// `R diag(s)^2 R^T`.
pub fn build_covariance(scale: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Camera-space center and the undilated screen-space covariance, or `None`
/// outside the open depth interval `(near, far)`.
pub fn projected_covariance(g: &Gaussian3D, cam: &Camera) -> Option<(Vector3<f64>, Matrix2<f64>)> {
    let t = cam.world_to_camera(&g.center);
    if !(t.z > cam.near && t.z < cam.far) {
        return None;
    }
    let [fx, fy] = cam.focal;
    let inv_z = 1.0 / t.z;
    let jacobian = Matrix2x3::new(
        fx * inv_z,
        0.0,
        -fx * t.x * inv_z * inv_z,
        0.0,
        fy * inv_z,
        -fy * t.y * inv_z * inv_z,
    );
    let w = cam.rotation();
    let cov_cam = w * build_covariance(&g.scale, &g.rotation) * w.transpose();
    let cov2d = jacobian * cov_cam * jacobian.transpose();
    Some((t, cov2d))
}

pub fn project_gaussian(g: &Gaussian3D, cam: &Camera, det_floor: f64) -> Result<Option<Splat2D>, ProjectionError> {
    let Some((t, cov2d)) = projected_covariance(g, cam) else {
        return Ok(None);
    };
    let a = cov2d[(0, 0)] + LOW_PASS;
    let b = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    let c = cov2d[(1, 1)] + LOW_PASS;
    let det = a * c - b * b;
    if !(det > det_floor) || !det.is_finite() {
        return Err(ProjectionError::SingularCovariance { det });
    }
    let inv_det = 1.0 / det;
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let mean2d = cam.project_camera_point(&t);
    let half_extent = [SIGMA_CUTOFF * a.sqrt(), SIGMA_CUTOFF * c.sqrt()];
    let aabb = PixelRect::from_bounds(
        [mean2d[0] - half_extent[0], mean2d[1] - half_extent[1]],
        [mean2d[0] + half_extent[0], mean2d[1] + half_extent[1]],
        cam.width,
        cam.height,
    );
    Ok(Some(Splat2D {
        mean2d,
        conic: [c * inv_det, -b * inv_det, a * inv_det],
        depth: t.z,
        radius: SIGMA_CUTOFF * lambda_max.sqrt(),
        half_extent,
        aabb,
    }))
}

/// World-space covariance-like shape matrix `M` of the cell's bounding
/// ellipsoid `{x : (x - c)^T M^-1 (x - c) <= 1}`, with semi-axes
/// `CELL_BOUND_FACTOR * S` along the cell orientation.
pub fn cell_bound_shape(cell: &CellProxy) -> Matrix3<f64> {
    let r = cell.orientation().to_rotation_matrix().into_inner();
    let half = cell.scales_f64() * CELL_BOUND_FACTOR;
    r * Matrix3::from_diagonal(&half.component_mul(&half)) * r.transpose()
}

/// Screen bounds of the cell's bounding ellipsoid.
///
/// The silhouette is exact under perspective: an image line `l` touches the
/// ellipsoid's outline iff `l^T C l = 0` with the dual conic
/// `C = K (M - c c^T) K^T` (camera-frame center `c`, shape `M`). Vertical and
/// horizontal tangents give the box.
pub fn project_cell(cell_index: usize, cell: &CellProxy, cam: &Camera) -> Option<CellSplat> {
    let c = cam.world_to_camera(&cell.center_f64());
    let w = cam.rotation();
    let m = w * cell_bound_shape(cell) * w.transpose();
    let z_half = m[(2, 2)].sqrt();
    if c.z + z_half <= cam.near || c.z - z_half >= cam.far {
        return None;
    }
    let aabb = if c.z - z_half <= cam.near {
        // Crossing the near plane: keep the whole image.
        PixelRect::full(cam.width, cam.height)
    } else {
        let k = Matrix3::new(
            cam.focal[0],
            0.0,
            cam.principal_point[0],
            0.0,
            cam.focal[1],
            cam.principal_point[1],
            0.0,
            0.0,
            1.0,
        );
        let dual = k * (m - c * c.transpose()) * k.transpose();
        let tangents = |axis: usize| {
            let (a, b, d) = (dual[(2, 2)], dual[(axis, 2)], dual[(axis, axis)]);
            let disc = (b * b - a * d).max(0.0).sqrt();
            let (u0, u1) = ((b + disc) / a, (b - disc) / a);
            (u0.min(u1), u0.max(u1))
        };
        let (x0, x1) = tangents(0);
        let (y0, y1) = tangents(1);
        let margin = cell_pixel_margin();
        PixelRect::from_bounds([x0 - margin, y0 - margin], [x1 + margin, y1 + margin], cam.width, cam.height)
    };
    if aabb.is_empty() {
        return None;
    }
    Some(CellSplat {
        cell_index,
        depth: c.z.max(cam.near),
        aabb,
    })
}

/// Cells whose conservative bound reaches the view, in input order.
pub fn frustum_cull(cells: &[CellProxy], cam: &Camera) -> Vec<CellSplat> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| project_cell(i, c, cam))
        .collect()
}
