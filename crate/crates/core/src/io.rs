//! Scene files: a little-endian binary container and a JSON variant.
//!
//! Binary layout (all integers `u32` LE, all reals `f32` LE):
//!
//! ```text
//! 0   8  magic  b"DPLXSCN\0"
//! 8   4  version (1)
//! 12  4  reserved (0)
//! 16  4  K, slots per cell
//! 20  4  N, cell count
//! 24  ..  N cell records
//! ```
//!
//! Each cell record is `center[3] scales[3] quaternion[4] blend_weight`
//! followed by `K` slot records of `offset[3] scale_ratio[3] rotation[4]
//! opacity color[3]`. Quaternions are stored `(w, x, y, z)`.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scene::{CellProxy, Scene, SlotAttributes};

pub const MAGIC: [u8; 8] = *b"DPLXSCN\0";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
const CELL_FLOATS: usize = 11;
const SLOT_FLOATS: usize = 14;

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a scene file (bad magic)")]
    BadMagic,
    #[error("unsupported scene file version {0}")]
    UnsupportedVersion(u32),
    #[error("scene file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("scene file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid scene JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn encoded_len(scene: &Scene) -> usize {
    HEADER_BYTES + 8 + scene.cells.len() * 4 * (CELL_FLOATS + scene.slots_per_cell * SLOT_FLOATS)
}

pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(scene));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(scene.slots_per_cell as u32).to_le_bytes());
    out.extend_from_slice(&(scene.cells.len() as u32).to_le_bytes());
    let mut put = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for cell in &scene.cells {
        put(&cell.center);
        put(&cell.structure_scales);
        put(&cell.quaternion);
        put(&[cell.blend_weight]);
        for s in &cell.slots {
            put(&s.pos_offset);
            put(&s.scale_ratio);
            put(&s.rotation);
            put(&[s.opacity]);
            put(&s.color);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| f32::from_bits(self.u32()))
    }
}

/// Decodes the binary container. Structural checks only; run
/// [`Scene::validate`] for the model invariants.
pub fn decode_scene(bytes: &[u8]) -> Result<Scene, SceneFileError> {
    if bytes.len() < HEADER_BYTES + 8 {
        if bytes.len() >= 8 && bytes[..8] != MAGIC {
            return Err(SceneFileError::BadMagic);
        }
        return Err(SceneFileError::Truncated {
            expected: HEADER_BYTES + 8,
            found: bytes.len(),
        });
    }
    if bytes[..8] != MAGIC {
        return Err(SceneFileError::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let version = cur.u32();
    if version != VERSION {
        return Err(SceneFileError::UnsupportedVersion(version));
    }
    let _reserved = cur.u32();
    let k = cur.u32() as usize;
    let n = cur.u32() as usize;
    let expected = (CELL_FLOATS + k * SLOT_FLOATS)
        .checked_mul(4 * n)
        .and_then(|b| b.checked_add(HEADER_BYTES + 8))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(SceneFileError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(SceneFileError::TrailingBytes(bytes.len() - expected));
    }
    let cells = (0..n)
        .map(|_| {
            let center = cur.f32s();
            let structure_scales = cur.f32s();
            let quaternion = cur.f32s();
            let [blend_weight] = cur.f32s();
            let slots = (0..k)
                .map(|_| {
                    let pos_offset = cur.f32s();
                    let scale_ratio = cur.f32s();
                    let rotation = cur.f32s();
                    let [opacity] = cur.f32s();
                    let color = cur.f32s();
                    SlotAttributes {
                        pos_offset,
                        scale_ratio,
                        rotation,
                        opacity,
                        color,
                    }
                })
                .collect();
            CellProxy {
                center,
                structure_scales,
                quaternion,
                slots,
                blend_weight,
            }
        })
        .collect();
    Ok(Scene::new(k, cells))
}

pub fn write_scene_binary(scene: &Scene, mut w: impl Write) -> io::Result<()> {
    w.write_all(&encode_scene(scene))
}

pub fn read_scene_binary(mut r: impl Read) -> Result<Scene, SceneFileError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_scene(&bytes)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Loads a scene, choosing JSON for `.json` paths and binary otherwise.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneFileError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if is_json(path) {
        Ok(serde_json::from_slice(&bytes)?)
    } else {
        decode_scene(&bytes)
    }
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneFileError> {
    let path = path.as_ref();
    let bytes = if is_json(path) {
        serde_json::to_vec_pretty(scene)?
    } else {
        encode_scene(scene)
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
