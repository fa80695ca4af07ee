//! CPU reference renderer for cell-proxy Gaussian splatting.
//!
//! Scenes are made of ellipsoidal *cells*, each emitting `K` Gaussians whose
//! centers and extents are constrained to the cell. Three tiled compositing
//! kernels are provided, plus a brute-force oracle:
//!
//! - [`KernelKind::AlphaRef`]: Gaussian-level tile sort, front-to-back alpha blending.
//! - [`KernelKind::LcWsr`]: sort-free weighted sum with a linear depth weight.
//! - [`KernelKind::DuplexWsr`]: cell-level tile sort, physical weighted sum
//!   inside each cell, cell-level transmittance with early termination.
//! - [`KernelKind::Oracle`]: every Gaussian, per-pixel exact ray ordering.
//!
//! ```
//! use duplex_core::prelude::*;
//! use nalgebra::Vector3;
//!
//! let scene = gen_random_cells(1, 20, 4, 2.0);
//! let cam = gen_orbit(Vector3::zeros(), 5.0, 1, 32, 32).unwrap().remove(0);
//! let out = render_frame(&scene, &cam, &RenderConfig::default(), Execution::Sequential).unwrap();
//! assert_eq!(out.image.data.len(), 32 * 32);
//! ```

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blend;
pub mod decoder;
pub mod image;
pub mod io;
pub mod metrics;
pub mod projection;
pub mod raster;
pub mod render;
pub mod scene;
pub mod scenegen;

pub mod prelude {
    pub use crate::blend::{PixelTrace, ShadedSplat};
    pub use crate::image::Image;
    pub use crate::metrics::{popping_delta, psnr, ssim, termination_ratio, FrameReport};
    pub use crate::raster::{SortStats, TileWorkload};
    pub use crate::render::{build_tile_workloads, render_frame, Execution, RenderOutput};
    pub use crate::scene::{Camera, CellProxy, KernelKind, RenderConfig, Scene, SlotAttributes};
    pub use crate::scenegen::{gen_opaque_wall, gen_orbit, gen_popping_pair, gen_random_cells};
}
