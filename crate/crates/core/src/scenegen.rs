//! Deterministic synthetic scenes and camera paths.
//!
//! Randomness comes from [`SplitMix64`], a counter-based generator whose
//! algorithm is fixed here so fixtures are reproducible on any platform.
//! Every cell draws from its own stream (`SplitMix64::stream(seed, index)`),
//! so cell `i` does not depend on how many cells precede it.

use std::f64::consts::{PI, TAU};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::image::Image;
use crate::scene::{quaternion_to_wxyz, to_f32x3, to_vec3, Camera, CameraError, CellProxy, Scene, SlotAttributes};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64: the state advances by a fixed odd constant and each output is
/// a bijective mix of the state.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream `index` derived from `seed`.
    pub fn stream(seed: u64, index: u64) -> Self {
        Self::new(mix64(seed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniformly distributed rotation (Shoemake), canonicalized to `w >= 0`.
    pub fn unit_quaternion(&mut self) -> UnitQuaternion<f64> {
        let (u1, u2, u3) = (self.next_f64(), self.next_f64(), self.next_f64());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let q = Quaternion::new(
            a * (TAU * u2).sin(),
            a * (TAU * u2).cos(),
            b * (TAU * u3).sin(),
            b * (TAU * u3).cos(),
        );
        let q = if q.w < 0.0 { -q } else { q };
        UnitQuaternion::from_quaternion(q)
    }

    /// Uniform point in the ball of the given radius.
    pub fn in_ball(&mut self, radius: f64) -> Vector3<f64> {
        let z = self.uniform(-1.0, 1.0);
        let phi = self.uniform(0.0, TAU);
        let r = radius * self.next_f64().cbrt();
        let s = (1.0 - z * z).sqrt();
        Vector3::new(s * phi.cos(), s * phi.sin(), z) * r
    }
}

/// Largest offset norm drawn by [`gen_random_cells`].
pub const RANDOM_OFFSET_MAX: f64 = 0.8;
/// Range of structure scales drawn by [`gen_random_cells`].
pub const RANDOM_SCALE_RANGE: (f64, f64) = (0.05, 0.15);

/// Scale ratios `fraction * (1 - |offset|)`, measured on the stored `f32` offset.
fn bounded_ratio(offset: [f32; 3], fractions: Vector3<f64>) -> [f32; 3] {
    let bound = 1.0 - to_vec3(offset).norm();
    to_f32x3(&(fractions * bound))
}

/// `n` cells with random centers in the cube `[-extent/2, extent/2]^3`.
///
/// Slot rotations equal the cell orientation, so the cell quaternion is also
/// the opacity-weighted slot aggregate.
pub fn gen_random_cells(seed: u64, n: usize, k: usize, extent: f64) -> Scene {
    let (smin, smax) = RANDOM_SCALE_RANGE;
    let cells = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::stream(seed, i as u64);
            let center = Vector3::from_fn(|_, _| rng.uniform(-0.5, 0.5) * extent);
            let scales = Vector3::from_fn(|_, _| rng.uniform(smin, smax));
            let q = quaternion_to_wxyz(&rng.unit_quaternion());
            let slots = (0..k)
                .map(|_| {
                    let pos_offset = to_f32x3(&rng.in_ball(RANDOM_OFFSET_MAX));
                    let fractions = Vector3::from_fn(|_, _| rng.uniform(0.2, 1.0));
                    SlotAttributes {
                        pos_offset,
                        scale_ratio: bounded_ratio(pos_offset, fractions),
                        rotation: q,
                        opacity: rng.next_f64() as f32,
                        color: [rng.next_f64() as f32, rng.next_f64() as f32, rng.next_f64() as f32],
                    }
                })
                .collect();
            CellProxy {
                center: to_f32x3(&center),
                structure_scales: to_f32x3(&scales),
                quaternion: q,
                slots,
                blend_weight: 1.0,
            }
        })
        .collect();
    Scene::new(k, cells)
}

/// Opaque-wall fixture: a near-opaque front wall with distinct-colored planes behind it.
#[derive(Clone, Debug)]
pub struct OpaqueWall {
    pub scene: Scene,
    pub wall_color: [f64; 3],
    pub rear_colors: Vec<[f64; 3]>,
    /// The wall fills `[-h, h]^2` in the plane `z = wall_z`.
    pub wall_half_extent: f64,
    pub wall_z: f64,
    /// Number of cells (and thus `K`-slot groups) belonging to the wall.
    pub wall_cells: usize,
}

pub const WALL_OPACITY: f32 = 0.95;
pub const WALL_HALF_EXTENT: f64 = 1.0;
pub const WALL_SPACING: f64 = 0.2;
pub const LAYER_GAP: f64 = 0.5;
const REAR_HALF_EXTENT: f64 = 1.6;
const REAR_PALETTE: [[f64; 3]; 5] = [
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
];

/// Wall of `layers - 1` rear planes behind a red front wall of opacity 0.95.
pub fn gen_opaque_wall(seed: u64, layers: usize, k: usize) -> OpaqueWall {
    gen_wall(seed, layers, k, WALL_OPACITY)
}

/// [`gen_opaque_wall`] with an explicit front-wall opacity.
pub fn gen_wall(seed: u64, layers: usize, k: usize, front_opacity: f32) -> OpaqueWall {
    assert!(layers >= 2, "a wall fixture needs a front layer and at least one rear layer");
    assert!(k >= 1);
    let wall_color = [1.0, 0.0, 0.0];
    let rear_colors: Vec<[f64; 3]> = (0..layers - 1).map(|i| REAR_PALETTE[i % REAR_PALETTE.len()]).collect();
    let mut cells = Vec::new();
    let mut stream = 0u64;
    let mut plane = |z: f64, half: f64, color: [f64; 3], opacity: f32, cells: &mut Vec<CellProxy>| {
        let steps = (2.0 * half / WALL_SPACING).round() as i64;
        for iy in 0..=steps {
            for ix in 0..=steps {
                let mut rng = SplitMix64::stream(seed, stream);
                stream += 1;
                let center = Vector3::new(
                    -half + ix as f64 * WALL_SPACING,
                    -half + iy as f64 * WALL_SPACING,
                    z,
                );
                let slots = (0..k)
                    .map(|_| {
                        let r = 0.2 * rng.next_f64().sqrt();
                        let phi = rng.uniform(0.0, TAU);
                        let pos_offset = to_f32x3(&Vector3::new(r * phi.cos(), r * phi.sin(), 0.0));
                        SlotAttributes {
                            pos_offset,
                            scale_ratio: bounded_ratio(pos_offset, Vector3::new(1.0, 1.0, 0.5)),
                            rotation: [1.0, 0.0, 0.0, 0.0],
                            opacity,
                            color: color.map(|c| c as f32),
                        }
                    })
                    .collect();
                cells.push(CellProxy {
                    center: to_f32x3(&center),
                    structure_scales: [WALL_SPACING as f32, WALL_SPACING as f32, 0.02],
                    quaternion: [1.0, 0.0, 0.0, 0.0],
                    slots,
                    blend_weight: 1.0,
                });
            }
        }
    };
    plane(0.0, WALL_HALF_EXTENT, wall_color, front_opacity, &mut cells);
    let wall_cells = cells.len();
    for (i, color) in rear_colors.iter().enumerate() {
        plane(LAYER_GAP * (i + 1) as f64, REAR_HALF_EXTENT, *color, WALL_OPACITY, &mut cells);
    }
    OpaqueWall {
        scene: Scene::new(k, cells),
        wall_color,
        rear_colors,
        wall_half_extent: WALL_HALF_EXTENT,
        wall_z: 0.0,
        wall_cells,
    }
}

impl OpaqueWall {
    /// Camera on the -z axis facing the wall.
    pub fn front_camera(&self, width: u32, height: u32) -> Result<Camera, CameraError> {
        Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), width, height, 45f64.to_radians())
    }

    /// Row-major mask of pixels whose center ray hits the wall at least
    /// `margin` inside its border.
    pub fn wall_mask(&self, cam: &Camera, margin: f64) -> Vec<bool> {
        let origin = cam.position();
        let inv = cam.rotation().transpose();
        let limit = self.wall_half_extent - margin;
        let mut mask = Vec::with_capacity(cam.pixel_count());
        for y in 0..cam.height {
            for x in 0..cam.width {
                let d = Vector3::new(
                    (x as f64 + 0.5 - cam.principal_point[0]) / cam.focal[0],
                    (y as f64 + 0.5 - cam.principal_point[1]) / cam.focal[1],
                    1.0,
                );
                let dir = inv * d;
                let t = (self.wall_z - origin.z) / dir.z;
                let hit = origin + dir * t;
                mask.push(t > 0.0 && hit.x.abs() <= limit && hit.y.abs() <= limit);
            }
        }
        mask
    }

    /// Mean rear-color contamination over the masked pixels: for each pixel,
    /// the largest projection of its color onto any rear-layer color.
    /// Zero for an empty mask.
    pub fn leakage(&self, image: &Image, mask: &[bool]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (c, _) in image.data.iter().zip(mask).filter(|(_, m)| **m) {
            let leak = self
                .rear_colors
                .iter()
                .map(|r| {
                    let rr: f64 = r.iter().map(|v| v * v).sum();
                    let cr: f64 = c.iter().zip(r).map(|(a, b)| a * b).sum();
                    cr / rr
                })
                .fold(0.0, f64::max);
            sum += leak;
            count += 1;
        }
        if count == 0 { 0.0 } else { sum / count as f64 }
    }
}

/// Two interpenetrating elongated (2:1:1) Gaussians in one cell, tilted
/// +-45 degrees about the vertical axis. Their center-depth order flips
/// whenever an orbit around the vertical axis crosses the z axis.
pub fn gen_popping_pair(seed: u64) -> Scene {
    let mut rng = SplitMix64::new(seed);
    let offset = 0.15 + 0.05 * rng.next_f64();
    let tilt = PI / 4.0 + rng.uniform(-0.05, 0.05);
    let ratio = bounded_ratio([offset as f32, 0.0, 0.0], Vector3::new(1.0, 0.5, 0.5));
    let slot = |sign: f64, color: [f32; 3]| {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), sign * tilt);
        SlotAttributes {
            pos_offset: [(sign * offset) as f32, 0.0, 0.0],
            scale_ratio: ratio,
            rotation: quaternion_to_wxyz(&q),
            opacity: 0.95,
            color,
        }
    };
    let slots = vec![slot(1.0, [1.0, 0.0, 0.0]), slot(-1.0, [0.0, 1.0, 0.0])];
    let cell = CellProxy {
        center: [0.0; 3],
        structure_scales: [1.0, 1.0, 1.0],
        quaternion: [1.0, 0.0, 0.0, 0.0],
        slots,
        blend_weight: 1.0,
    };
    Scene::new(2, vec![cell])
}

pub const ORBIT_FOV_Y_DEG: f64 = 50.0;

pub const POPPING_ORBIT_RADIUS: f64 = 4.0;
pub const POPPING_FOV_Y_DEG: f64 = 20.0;

/// Orbit around [`gen_popping_pair`] framed so the pair fills the view.
///
/// The duplex composite has no background term, so the outline of a lone
/// cell is a hard edge whose motion would swamp the ordering signal the
/// fixture is built to expose.
pub fn popping_orbit(n_frames: usize, width: u32, height: u32) -> Result<Vec<Camera>, CameraError> {
    gen_orbit_with(
        Vector3::zeros(),
        POPPING_ORBIT_RADIUS,
        0.0,
        n_frames,
        width,
        height,
        POPPING_FOV_Y_DEG.to_radians(),
    )
}

/// `n_frames` cameras on a horizontal circle around `center`, azimuth
/// `2 pi i / n_frames` measured from +z toward +x, all looking at `center`.
pub fn gen_orbit(
    center: Vector3<f64>,
    radius: f64,
    n_frames: usize,
    width: u32,
    height: u32,
) -> Result<Vec<Camera>, CameraError> {
    gen_orbit_with(center, radius, 0.0, n_frames, width, height, ORBIT_FOV_Y_DEG.to_radians())
}

/// [`gen_orbit`] with an elevation angle (radians, positive above the
/// horizontal) and field of view.
pub fn gen_orbit_with(
    center: Vector3<f64>,
    radius: f64,
    elevation: f64,
    n_frames: usize,
    width: u32,
    height: u32,
    fov_y: f64,
) -> Result<Vec<Camera>, CameraError> {
    (0..n_frames)
        .map(|i| {
            let azimuth = TAU * i as f64 / n_frames as f64;
            let eye = center
                + radius
                    * Vector3::new(
                        azimuth.sin() * elevation.cos(),
                        elevation.sin(),
                        azimuth.cos() * elevation.cos(),
                    );
            Camera::look_at(eye, center, width, height, fov_y)
        })
        .collect()
}
