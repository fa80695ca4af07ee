//! Expands cells into their constrained Gaussians and runs the geometric
//! maintenance passes (orientation aggregation, recentering, offset reset).

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

use crate::scene::{quaternion_to_wxyz, to_f32x3, to_vec3, unit_quaternion, CellProxy, Gaussian3D, Scene};

/// Smallest scale ratio kept when recentering has to pull an offset back
/// inside the unit ball.
pub const MIN_SCALE_RATIO: f64 = 1e-3;

/// Norm below which an opacity-weighted quaternion sum counts as cancelled.
pub const DEGENERATE_SUM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("opacity-weighted quaternion sum vanishes (norm {norm:e})")]
    DegenerateSum { norm: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedCell {
    pub cell_index: usize,
    pub gaussians: Vec<Gaussian3D>,
}

/// Scale ratio after the containment clamp: `min(ratio, 1 - |offset|)`.
pub fn effective_scale_ratio(pos_offset: [f32; 3], scale_ratio: [f32; 3]) -> Vector3<f64> {
    let bound = (1.0 - to_vec3(pos_offset).norm()).max(0.0);
    to_vec3(scale_ratio).map(|r| r.min(bound))
}

/// Decodes one cell. Centers are `x + R(Q) (offset * S)`, scales are the
/// clamped ratio times `S`; rotation, opacity and color pass through.
pub fn decode_cell(cell_index: usize, cell: &CellProxy) -> DecodedCell {
    let center = cell.center_f64();
    let scales = cell.scales_f64();
    let orientation = cell.orientation();
    let gaussians = cell
        .slots
        .iter()
        .map(|slot| {
            let local = to_vec3(slot.pos_offset).component_mul(&scales);
            Gaussian3D {
                center: center + orientation * local,
                scale: effective_scale_ratio(slot.pos_offset, slot.scale_ratio).component_mul(&scales),
                rotation: unit_quaternion(slot.rotation),
                opacity: slot.opacity as f64,
                color: to_vec3(slot.color),
            }
        })
        .collect();
    DecodedCell {
        cell_index,
        gaussians,
    }
}

pub fn decode_scene(scene: &Scene) -> Vec<DecodedCell> {
    scene
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| decode_cell(i, c))
        .collect()
}

/// Normalized opacity-weighted sum of the slot quaternions, sign-fixed to `w >= 0`.
pub fn aggregate_quaternion(cell: &CellProxy) -> Result<UnitQuaternion<f64>, DecodeError> {
    let sum: Vector4<f64> = cell
        .slots
        .iter()
        .map(|s| {
            let q = s.rotation;
            Vector4::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64) * s.opacity as f64
        })
        .sum();
    let norm = sum.norm();
    if !(norm >= DEGENERATE_SUM) {
        return Err(DecodeError::DegenerateSum { norm });
    }
    let sign = if sum[0] < 0.0 { -1.0 } else { 1.0 };
    let q = sum * (sign / norm);
    Ok(UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3])))
}

/// Moves the cell center to the mean of its decoded Gaussian centers and
/// re-expresses the offsets against it.
pub fn recenter_cell(cell: &CellProxy) -> CellProxy {
    refit(cell, cell.quaternion)
}

/// Geometric correction pass: adopt the aggregated slot orientation, then
/// recenter. Decoded centers are preserved unless re-clamping fires.
pub fn realign_cell(cell: &CellProxy) -> Result<CellProxy, DecodeError> {
    let q = aggregate_quaternion(cell)?;
    Ok(refit(cell, quaternion_to_wxyz(&q)))
}

pub fn reset_offsets(cell: &CellProxy) -> CellProxy {
    let mut out = cell.clone();
    for slot in &mut out.slots {
        slot.pos_offset = [0.0; 3];
    }
    out
}

fn refit(cell: &CellProxy, quaternion: [f32; 4]) -> CellProxy {
    let decoded = decode_cell(0, cell);
    let k = decoded.gaussians.len().max(1) as f64;
    let mean = decoded.gaussians.iter().map(|g| g.center).sum::<Vector3<f64>>() / k;
    // Offsets are taken against the stored (rounded) center so that a
    // fixed point stays bit-identical.
    let new_center = to_f32x3(&mean);
    let center = to_vec3(new_center);
    let scales = cell.scales_f64();
    let inverse = unit_quaternion(quaternion).inverse();

    let slots = cell
        .slots
        .iter()
        .zip(&decoded.gaussians)
        .map(|(slot, g)| {
            let ratio = effective_scale_ratio(slot.pos_offset, slot.scale_ratio);
            let mut offset = (inverse * (g.center - center)).component_div(&scales);
            offset.apply(|o| *o = o.clamp(-1.0, 1.0));
            let limit = 1.0 - MIN_SCALE_RATIO;
            let norm = offset.norm();
            if norm > limit {
                offset *= limit / norm;
            }
            let offset = to_f32x3(&offset);
            let bound = 1.0 - to_vec3(offset).norm();
            let ratio = ratio.map(|r| r.min(bound).max(MIN_SCALE_RATIO.min(bound)));
            let mut out = slot.clone();
            out.pos_offset = offset;
            out.scale_ratio = to_f32x3(&ratio);
            out
        })
        .collect();

    CellProxy {
        center: new_center,
        structure_scales: cell.structure_scales,
        quaternion,
        slots,
        blend_weight: cell.blend_weight,
    }
}

/// Normalized position of `p` inside the cell ellipsoid; `<= 1` means inside.
pub fn cell_local_radius(cell: &CellProxy, p: &Vector3<f64>) -> f64 {
    let local = cell.orientation().inverse() * (p - cell.center_f64());
    local.component_div(&cell.scales_f64()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::{valid_cell, valid_slot};
    use crate::scene::SlotAttributes;

    fn close(a: &Vector3<f64>, b: [f64; 3], tol: f64) -> bool {
        (a - Vector3::from(b)).amax() <= tol
    }

    #[test]
    fn offset_scaled_by_structure() {
        let mut cell = valid_cell(1);
        cell.structure_scales = [2.0, 1.0, 1.0];
        cell.slots[0].pos_offset = [0.5, 0.0, 0.0];
        let d = decode_cell(0, &cell);
        assert!(close(&d.gaussians[0].center, [1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn scale_clamped_by_offset_norm() {
        let r = effective_scale_ratio([0.3, 0.4, 0.0], [0.8, 0.8, 0.8]);
        assert!(close(&r, [0.5, 0.5, 0.5], 1e-7));
        let r = effective_scale_ratio([0.3, 0.4, 0.0], [0.2, 0.8, 0.4]);
        assert!(close(&r, [0.2, 0.5, 0.4], 1e-7));
    }

    #[test]
    fn identity_decode() {
        let mut cell = valid_cell(1);
        cell.center = [1.0, -2.0, 3.0];
        cell.structure_scales = [3.0, 2.0, 1.0];
        cell.slots[0].pos_offset = [0.0; 3];
        cell.slots[0].scale_ratio = [1.0; 3];
        let g = &decode_cell(4, &cell).gaussians[0];
        assert!(close(&g.scale, [3.0, 2.0, 1.0], 0.0));
        assert!(close(&g.center, [1.0, -2.0, 3.0], 0.0));
    }

    #[test]
    fn rotated_cell_rotates_offsets() {
        let mut cell = valid_cell(1);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        cell.quaternion = [h, 0.0, 0.0, h]; // 90 degrees about z
        cell.structure_scales = [2.0, 1.0, 1.0];
        cell.slots[0].pos_offset = [0.5, 0.0, 0.0];
        let g = &decode_cell(0, &cell).gaussians[0];
        assert!(close(&g.center, [0.0, 1.0, 0.0], 1e-6));
    }

    fn slot_with(rotation: [f32; 4], opacity: f32) -> SlotAttributes {
        SlotAttributes {
            rotation,
            opacity,
            ..valid_slot()
        }
    }

    #[test]
    fn aggregate_examples() {
        let mut cell = valid_cell(2);
        cell.slots = vec![slot_with([1.0, 0.0, 0.0, 0.0], 0.5), slot_with([1.0, 0.0, 0.0, 0.0], 0.3)];
        let q = aggregate_quaternion(&cell).unwrap();
        assert_eq!([q.w, q.i, q.j, q.k], [1.0, 0.0, 0.0, 0.0]);

        cell.slots = vec![slot_with([1.0, 0.0, 0.0, 0.0], 0.6), slot_with([0.0, 1.0, 0.0, 0.0], 0.8)];
        let q = aggregate_quaternion(&cell).unwrap();
        assert!((q.w - 0.6).abs() < 1e-7 && (q.i - 0.8).abs() < 1e-7);

        cell.slots = vec![slot_with([1.0, 0.0, 0.0, 0.0], 0.5), slot_with([-1.0, 0.0, 0.0, 0.0], 0.5)];
        assert!(matches!(aggregate_quaternion(&cell), Err(DecodeError::DegenerateSum { .. })));

        cell.slots = vec![slot_with([1.0, 0.0, 0.0, 0.0], 0.0), slot_with([0.0, 1.0, 0.0, 0.0], 0.0)];
        assert!(aggregate_quaternion(&cell).is_err());
    }

    #[test]
    fn aggregate_canonicalizes_sign() {
        let mut cell = valid_cell(1);
        cell.slots = vec![slot_with([-0.6, 0.8, 0.0, 0.0], 1.0)];
        let q = aggregate_quaternion(&cell).unwrap();
        assert!(q.w > 0.0 && q.i < 0.0);
    }

    #[test]
    fn recenter_to_mean() {
        let mut cell = valid_cell(2);
        cell.center = [0.4, 0.0, 0.0];
        cell.structure_scales = [2.0, 2.0, 2.0];
        cell.slots[0].pos_offset = [0.3, 0.0, 0.0];
        cell.slots[1].pos_offset = [-0.7, 0.0, 0.0];
        cell.slots[0].scale_ratio = [0.2; 3];
        cell.slots[1].scale_ratio = [0.2; 3];
        let out = recenter_cell(&cell);
        assert!(out.center.iter().all(|c| c.abs() < 1e-6));
        let before = decode_cell(0, &cell);
        let after = decode_cell(0, &out);
        for (a, b) in before.gaussians.iter().zip(&after.gaussians) {
            assert!((a.center - b.center).amax() < 1e-6);
            assert!((a.scale - b.scale).amax() < 1e-6);
        }
    }

    #[test]
    fn recenter_zero_offsets_is_fixed_point() {
        let mut cell = valid_cell(3);
        cell.center = [0.1, 0.7, -3.3];
        for s in &mut cell.slots {
            s.pos_offset = [0.0; 3];
        }
        assert_eq!(recenter_cell(&cell), cell);
    }

    #[test]
    fn recenter_single_slot() {
        let mut cell = valid_cell(1);
        cell.center = [1.0, 1.0, 0.0];
        cell.structure_scales = [2.0, 2.0, 2.0];
        cell.slots[0].pos_offset = [0.5, 0.0, 0.0];
        let out = recenter_cell(&cell);
        assert_eq!(out.center, [2.0, 1.0, 0.0]);
        assert_eq!(out.slots[0].pos_offset, [0.0; 3]);
    }

    #[test]
    fn recenter_reclamps_escaping_offsets() {
        // Asymmetric slots: after recentering one offset would exceed the unit ball.
        let mut cell = valid_cell(3);
        cell.structure_scales = [0.5, 1.0, 1.0];
        for (slot, x) in cell.slots.iter_mut().zip([0.9, 0.9, -0.9]) {
            slot.pos_offset = [x, 0.0, 0.0];
            slot.scale_ratio = [0.05; 3];
        }
        let out = recenter_cell(&cell);
        assert!((out.center[0] - 0.15).abs() < 1e-6);
        crate::scene::validate_scene(std::slice::from_ref(&out), 3).unwrap();
        assert!(out.slots[2].pos_offset[0] >= -1.0);
    }

    #[test]
    fn reset_examples() {
        let mut cell = valid_cell(2);
        cell.slots[0].pos_offset = [0.5, 0.0, 0.0];
        cell.slots[1].pos_offset = [0.0, 0.2, 0.0];
        let out = reset_offsets(&cell);
        assert!(out.slots.iter().all(|s| s.pos_offset == [0.0; 3]));
        assert_eq!(reset_offsets(&out), out);
        let d = decode_cell(0, &out);
        assert!(d.gaussians.iter().all(|g| g.center == out.center_f64()));
        assert_eq!(out.slots[0].scale_ratio, cell.slots[0].scale_ratio);
    }

    #[test]
    fn realign_preserves_centers() {
        let mut cell = valid_cell(2);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        cell.slots[0].rotation = [h, 0.0, 0.0, h];
        cell.slots[1].rotation = [h, 0.0, 0.0, h];
        cell.slots[0].pos_offset = [0.1, 0.2, 0.0];
        cell.slots[1].pos_offset = [-0.2, 0.1, 0.1];
        let out = realign_cell(&cell).unwrap();
        assert!((out.quaternion[0] - h).abs() < 1e-6 && (out.quaternion[3] - h).abs() < 1e-6);
        let a = decode_cell(0, &cell);
        let b = decode_cell(0, &out);
        for (x, y) in a.gaussians.iter().zip(&b.gaussians) {
            assert!((x.center - y.center).amax() < 1e-6);
        }
    }
}
