//! Domain types shared by every pipeline stage.
//!
//! Persisted types ([`CellProxy`], [`SlotAttributes`]) store `f32` fields so
//! they survive the binary scene container bit-for-bit. Everything derived
//! from them ([`Gaussian3D`], projections, blending) runs in `f64`.
//!
//! Quaternions are always `(w, x, y, z)`.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on unit-norm and bound checks.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// One of the K Gaussians emitted by a cell, in cell-normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotAttributes {
    /// Center offset in cell units; every component in `[-1, 1]`.
    pub pos_offset: [f32; 3],
    /// Scale relative to the cell structure scales, in `(0, 1]`.
    pub scale_ratio: [f32; 3],
    /// World-frame rotation `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
}

impl SlotAttributes {
    pub fn offset_norm(&self) -> f64 {
        to_vec3(self.pos_offset).norm()
    }
}

/// Ellipsoidal proxy that owns K constrained Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellProxy {
    pub center: [f32; 3],
    pub structure_scales: [f32; 3],
    /// Cell orientation `(w, x, y, z)`.
    pub quaternion: [f32; 4],
    pub slots: Vec<SlotAttributes>,
    /// Per-cell weight used by the duplex blend, in `(0, 1]`.
    pub blend_weight: f32,
}

impl CellProxy {
    pub fn center_f64(&self) -> Vector3<f64> {
        to_vec3(self.center)
    }

    pub fn scales_f64(&self) -> Vector3<f64> {
        to_vec3(self.structure_scales)
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        unit_quaternion(self.quaternion)
    }
}

/// A scene is a flat list of cells that all carry the same slot count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub slots_per_cell: usize,
    pub cells: Vec<CellProxy>,
}

impl Scene {
    pub fn new(slots_per_cell: usize, cells: Vec<CellProxy>) -> Self {
        Self {
            slots_per_cell,
            cells,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        validate_scene(&self.cells, self.slots_per_cell)
    }

    pub fn gaussian_count(&self) -> usize {
        self.cells.len() * self.slots_per_cell
    }

    /// Mean of the cell centers, or the origin for an empty scene.
    pub fn centroid(&self) -> Vector3<f64> {
        if self.cells.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> = self.cells.iter().map(CellProxy::center_f64).sum();
        sum / self.cells.len() as f64
    }
}

/// A decoded anisotropic Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

pub fn to_vec3(v: [f32; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

pub fn to_f32x3(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Normalizes a stored `(w, x, y, z)` quaternion.
pub fn unit_quaternion(q: [f32; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(
        q[0] as f64,
        q[1] as f64,
        q[2] as f64,
        q[3] as f64,
    ))
}

pub fn quaternion_to_wxyz(q: &UnitQuaternion<f64>) -> [f32; 4] {
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn quaternion_norm(q: [f32; 4]) -> f64 {
    q.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

fn is_unit(q: [f32; 4]) -> bool {
    (quaternion_norm(q) - 1.0).abs() <= UNIT_TOLERANCE
}

fn in_unit_interval(x: f32) -> bool {
    (0.0..=1.0).contains(&x)
}

/// The validity rule a cell or slot broke.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    SlotCount,
    CenterFinite,
    StructureScalePositive,
    CellQuaternionUnit,
    BlendWeightRange,
    OffsetRange,
    ScaleRatioRange,
    ScaleRatioBound,
    SlotRotationUnit,
    OpacityRange,
    ColorRange,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Rule::SlotCount => "slot count differs from the scene's K",
            Rule::CenterFinite => "cell center must be finite",
            Rule::StructureScalePositive => "structure scales must be finite and > 0",
            Rule::CellQuaternionUnit => "cell quaternion must be unit length",
            Rule::BlendWeightRange => "blend weight must lie in (0, 1]",
            Rule::OffsetRange => "offset components must lie in [-1, 1]",
            Rule::ScaleRatioRange => "scale ratio components must lie in (0, 1]",
            Rule::ScaleRatioBound => "max scale ratio exceeds 1 - |offset|",
            Rule::SlotRotationUnit => "slot rotation must be unit length",
            Rule::OpacityRange => "opacity must lie in [0, 1]",
            Rule::ColorRange => "color components must lie in [0, 1]",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene contains no cells")]
    EmptyScene,
    #[error("slot count K must be at least 1")]
    ZeroSlots,
    #[error("cell {cell_index}{}: {rule}", slot_suffix(*.slot_index))]
    ViolatedInvariant {
        cell_index: usize,
        slot_index: Option<usize>,
        rule: Rule,
    },
}

fn slot_suffix(slot: Option<usize>) -> String {
    slot.map(|s| format!(" slot {s}")).unwrap_or_default()
}

fn check_slot(slot: &SlotAttributes) -> Option<Rule> {
    if !slot.pos_offset.iter().all(|&o| (-1.0..=1.0).contains(&o)) {
        return Some(Rule::OffsetRange);
    }
    if !slot.scale_ratio.iter().all(|&r| r > 0.0 && r <= 1.0) {
        return Some(Rule::ScaleRatioRange);
    }
    let bound = (1.0 - slot.offset_norm()).max(0.0);
    let max_ratio = slot.scale_ratio.iter().fold(0.0f64, |m, &r| m.max(r as f64));
    if max_ratio > bound + UNIT_TOLERANCE {
        return Some(Rule::ScaleRatioBound);
    }
    if !is_unit(slot.rotation) {
        return Some(Rule::SlotRotationUnit);
    }
    if !in_unit_interval(slot.opacity) {
        return Some(Rule::OpacityRange);
    }
    if !slot.color.iter().all(|&c| in_unit_interval(c)) {
        return Some(Rule::ColorRange);
    }
    None
}

fn check_cell(cell: &CellProxy, k: usize) -> Option<(Option<usize>, Rule)> {
    if cell.slots.len() != k {
        return Some((None, Rule::SlotCount));
    }
    if !cell.center.iter().all(|c| c.is_finite()) {
        return Some((None, Rule::CenterFinite));
    }
    if !cell.structure_scales.iter().all(|&s| s.is_finite() && s > 0.0) {
        return Some((None, Rule::StructureScalePositive));
    }
    if !is_unit(cell.quaternion) {
        return Some((None, Rule::CellQuaternionUnit));
    }
    if !(cell.blend_weight > 0.0 && cell.blend_weight <= 1.0) {
        return Some((None, Rule::BlendWeightRange));
    }
    cell.slots
        .iter()
        .enumerate()
        .find_map(|(i, slot)| check_slot(slot).map(|rule| (Some(i), rule)))
}

/// Checks every cell and slot rule, reporting the first violation in
/// cell-then-slot order.
pub fn validate_scene(cells: &[CellProxy], k: usize) -> Result<(), SceneError> {
    if k == 0 {
        return Err(SceneError::ZeroSlots);
    }
    if cells.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    for (cell_index, cell) in cells.iter().enumerate() {
        if let Some((slot_index, rule)) = check_cell(cell, k) {
            return Err(SceneError::ViolatedInvariant {
                cell_index,
                slot_index,
                rule,
            });
        }
    }
    Ok(())
}

/// Compositing kernel selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Tile-sorted front-to-back alpha blending over decoded Gaussians.
    #[serde(rename = "alpharef")]
    AlphaRef,
    /// Sort-free linear-correction weighted sum.
    #[serde(rename = "lcwsr")]
    LcWsr,
    /// Cell-sorted physical weighted sum with early termination.
    #[serde(rename = "duplex")]
    DuplexWsr,
    /// Brute-force per-pixel ray-depth composite.
    #[serde(rename = "oracle")]
    Oracle,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::AlphaRef,
        KernelKind::LcWsr,
        KernelKind::DuplexWsr,
        KernelKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::AlphaRef => "alpharef",
            KernelKind::LcWsr => "lcwsr",
            KernelKind::DuplexWsr => "duplex",
            KernelKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown kernel `{s}` (expected alpharef, lcwsr, duplex or oracle)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub kernel: KernelKind,
    pub tile_size: u32,
    /// Early-termination threshold on transmittance.
    pub et_epsilon: f64,
    /// Alphas below this neither blend nor count as valid.
    pub alpha_min: f64,
    pub background: [f64; 3],
    /// Depth at which the linear-correction weight reaches zero.
    pub lc_tau: f64,
    /// Background weight of the linear-correction weighted sum.
    pub lc_background_weight: f64,
    /// Duplex pixels whose weighted alpha mass falls below this show the background.
    pub denom_floor: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::DuplexWsr,
            tile_size: 16,
            et_epsilon: 1e-4,
            alpha_min: 1.0 / 255.0,
            background: [0.0; 3],
            lc_tau: 100.0,
            lc_background_weight: 0.01,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tile size {0} is not one of 8, 16, 32")]
    TileSize(u32),
    #[error("et_epsilon {0} must lie in [0, 1)")]
    Epsilon(f64),
    #[error("alpha_min {0} must be >= 0")]
    AlphaMin(f64),
    #[error("lc_tau {0} must be > 0")]
    Tau(f64),
    #[error("lc_background_weight {0} must be >= 0")]
    BackgroundWeight(f64),
    #[error("denom_floor {0} must be > 0")]
    DenomFloor(f64),
    #[error("background components must lie in [0, 1]")]
    Background,
}

impl RenderConfig {
    pub fn with_kernel(kernel: KernelKind) -> Self {
        Self {
            kernel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if ![8, 16, 32].contains(&self.tile_size) {
            return Err(ConfigError::TileSize(self.tile_size));
        }
        if !(self.et_epsilon >= 0.0 && self.et_epsilon < 1.0) {
            return Err(ConfigError::Epsilon(self.et_epsilon));
        }
        if !(self.alpha_min >= 0.0) {
            return Err(ConfigError::AlphaMin(self.alpha_min));
        }
        if !(self.lc_tau > 0.0) {
            return Err(ConfigError::Tau(self.lc_tau));
        }
        if !(self.lc_background_weight >= 0.0) {
            return Err(ConfigError::BackgroundWeight(self.lc_background_weight));
        }
        if !(self.denom_floor > 0.0) {
            return Err(ConfigError::DenomFloor(self.denom_floor));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(ConfigError::Background);
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera rotation is not orthonormal")]
    NotOrthonormal,
    #[error("camera resolution must be positive")]
    Resolution,
    #[error("focal lengths must be finite and positive")]
    Focal,
    #[error("clip planes must satisfy 0 < near < far")]
    ClipPlanes,
}

/// Pinhole camera, OpenCV convention: +z forward, +x right, +y down.
///
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; its center is `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraFile", try_from = "CameraFile")]
pub struct Camera {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: [f64; 2],
        principal_point: [f64; 2],
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if !gram.iter().all(|e| e.abs() <= UNIT_TOLERANCE) || !(rotation.determinant() > 0.0) {
            return Err(CameraError::NotOrthonormal);
        }
        if width == 0 || height == 0 {
            return Err(CameraError::Resolution);
        }
        if !focal.iter().all(|f| f.is_finite() && *f > 0.0) {
            return Err(CameraError::Focal);
        }
        if !(near > 0.0 && near < far) {
            return Err(CameraError::ClipPlanes);
        }
        Ok(Self {
            rotation,
            translation,
            focal,
            principal_point,
            width,
            height,
            near,
            far,
        })
    }

    /// Camera at `eye` looking at `target`, world +y up, vertical field of
    /// view `fov_y` in radians, principal point at the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        width: u32,
        height: u32,
        fov_y: f64,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let mut up = Vector3::y();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::z();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self::new(
            rotation,
            translation,
            [f, f],
            [0.5 * width as f64, 0.5 * height as f64],
            width,
            height,
            DEFAULT_NEAR,
            DEFAULT_FAR,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates of a camera-space point with `z > 0`.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> [f64; 2] {
        [
            self.focal[0] * p.x / p.z + self.principal_point[0],
            self.focal[1] * p.y / p.z + self.principal_point[1],
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 1000.0;

/// Row-major on-disk camera layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    focal: [f64; 2],
    principal_point: [f64; 2],
    width: u32,
    height: u32,
    near: f64,
    far: f64,
}

impl From<Camera> for CameraFile {
    fn from(c: Camera) -> Self {
        let r = &c.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            focal: c.focal,
            principal_point: c.principal_point,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}

impl TryFrom<CameraFile> for Camera {
    type Error = CameraError;

    fn try_from(f: CameraFile) -> Result<Self, Self::Error> {
        let r = f.rotation;
        Camera::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(f.translation),
            f.focal,
            f.principal_point,
            f.width,
            f.height,
            f.near,
            f.far,
        )
    }
}
