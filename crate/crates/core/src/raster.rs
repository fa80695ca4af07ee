//! Tile binning, sort-key packing and the instrumented radix sort.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::PixelRect;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub width: u32,
    pub height: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Self {
        Self {
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
            width,
            height,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    pub fn tile_rect(&self, tile_id: u32) -> PixelRect {
        let tx = tile_id % self.tiles_x;
        let ty = tile_id / self.tiles_x;
        PixelRect {
            x0: tx * self.tile_size,
            y0: ty * self.tile_size,
            x1: ((tx + 1) * self.tile_size).min(self.width),
            y1: ((ty + 1) * self.tile_size).min(self.height),
        }
    }

    /// Inclusive tile-coordinate ranges touched by a non-empty rect.
    pub fn tile_span(&self, rect: &PixelRect) -> Option<([u32; 2], [u32; 2])> {
        if rect.is_empty() {
            return None;
        }
        let ts = self.tile_size;
        Some(([rect.x0 / ts, (rect.x1 - 1) / ts], [rect.y0 / ts, (rect.y1 - 1) / ts]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinEntry {
    pub tile_id: u32,
    pub primitive: u32,
    pub depth: f64,
}

/// One entry per (tile, primitive) overlap, primitives in input order and
/// tiles in row-major order within each primitive.
pub fn bin_splats<I>(splats: I, grid: &TileGrid) -> Vec<BinEntry>
where
    I: IntoIterator<Item = (PixelRect, f64)>,
{
    let mut out = Vec::new();
    for (index, (rect, depth)) in splats.into_iter().enumerate() {
        let Some(([tx0, tx1], [ty0, ty1])) = grid.tile_span(&rect) else {
            continue;
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                out.push(BinEntry {
                    tile_id: ty * grid.tiles_x + tx,
                    primitive: index as u32,
                    depth,
                });
            }
        }
    }
    out
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KeyError {
    #[error("depth {0} is not finite")]
    NonFiniteDepth(f64),
    #[error("depth {0} is not positive")]
    NonPositiveDepth(f64),
}

/// Tile id in the high word, the `f32` bit pattern of the depth in the low word.
///
/// For positive floats the IEEE bit pattern is monotone, so unsigned key order
/// is (tile, depth) lexicographic order.
pub fn pack_key(tile_id: u32, depth: f64) -> Result<u64, KeyError> {
    if !depth.is_finite() {
        return Err(KeyError::NonFiniteDepth(depth));
    }
    if depth <= 0.0 {
        return Err(KeyError::NonPositiveDepth(depth));
    }
    // Tiny positive depths would round to +0 in f32; keep them strictly positive.
    let d = (depth as f32).max(f32::MIN_POSITIVE);
    Ok((tile_id as u64) << 32 | d.to_bits() as u64)
}

pub fn key_tile(key: u64) -> u32 {
    (key >> 32) as u32
}

pub const RADIX_BITS: u32 = 8;
pub const RADIX_BUCKETS: usize = 1 << RADIX_BITS;
pub const RADIX_PASSES: u32 = u64::BITS / RADIX_BITS;
pub const SORT_BUFFERS: u64 = 2;

/// Sort instrumentation. `entries` is the sorting length; memory counts the
/// key/payload double buffer plus one reused histogram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortStats {
    pub entries: u64,
    pub key_bytes: u64,
    pub payload_bytes: u64,
    pub passes: u32,
    pub buffer_count: u64,
    pub histogram_bytes: u64,
    pub memory_bytes: u64,
}

impl SortStats {
    pub fn for_entries(entries: u64) -> Self {
        let key_bytes = std::mem::size_of::<u64>() as u64;
        let payload_bytes = std::mem::size_of::<u32>() as u64;
        let histogram_bytes = (RADIX_BUCKETS * std::mem::size_of::<u32>()) as u64;
        Self {
            entries,
            key_bytes,
            payload_bytes,
            passes: RADIX_PASSES,
            buffer_count: SORT_BUFFERS,
            histogram_bytes,
            memory_bytes: entries * (key_bytes + payload_bytes) * SORT_BUFFERS + histogram_bytes,
        }
    }
}

/// Stable LSD radix sort over 8-bit digits (8 passes, 256 buckets).
pub fn radix_sort(keys: Vec<u64>, payloads: Vec<u32>) -> (Vec<u64>, Vec<u32>, SortStats) {
    assert_eq!(keys.len(), payloads.len(), "keys and payloads must pair up");
    let n = keys.len();
    let stats = SortStats::for_entries(n as u64);
    let mut keys = keys;
    let mut vals = payloads;
    let mut keys_tmp = vec![0u64; n];
    let mut vals_tmp = vec![0u32; n];
    let mut histogram = [0u32; RADIX_BUCKETS];

    for pass in 0..RADIX_PASSES {
        let shift = pass * RADIX_BITS;
        histogram.fill(0);
        for &k in &keys {
            histogram[(k >> shift) as usize & (RADIX_BUCKETS - 1)] += 1;
        }
        let mut offset = 0u32;
        for slot in histogram.iter_mut() {
            let count = *slot;
            *slot = offset;
            offset += count;
        }
        for (&k, &v) in keys.iter().zip(&vals) {
            let bucket = (k >> shift) as usize & (RADIX_BUCKETS - 1);
            let dst = histogram[bucket] as usize;
            keys_tmp[dst] = k;
            vals_tmp[dst] = v;
            histogram[bucket] += 1;
        }
        std::mem::swap(&mut keys, &mut keys_tmp);
        std::mem::swap(&mut vals, &mut vals_tmp);
    }
    (keys, vals, stats)
}

/// Depth-ordered primitive list of one tile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWorkload {
    pub tile_id: u32,
    pub entries: Vec<u32>,
}

/// Packs, sorts and splits binned entries into per-tile workloads (non-empty
/// tiles only, ascending tile id).
pub fn sort_into_workloads(bins: &[BinEntry]) -> Result<(Vec<TileWorkload>, SortStats), KeyError> {
    let keys = bins
        .iter()
        .map(|b| pack_key(b.tile_id, b.depth))
        .collect::<Result<Vec<_>, _>>()?;
    let payloads = bins.iter().map(|b| b.primitive).collect();
    let (keys, vals, stats) = radix_sort(keys, payloads);
    let mut workloads: Vec<TileWorkload> = Vec::new();
    for (key, primitive) in keys.into_iter().zip(vals) {
        let tile_id = key_tile(key);
        match workloads.last_mut() {
            Some(w) if w.tile_id == tile_id => w.entries.push(primitive),
            _ => workloads.push(TileWorkload {
                tile_id,
                entries: vec![primitive],
            }),
        }
    }
    Ok((workloads, stats))
}
