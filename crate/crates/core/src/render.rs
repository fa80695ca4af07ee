//! Frame orchestration: cull, decode, project, bin, sort, blend.
//!
//! Data-parallel stages go through [`Execution`]. With the `parallel` feature
//! they run on the current rayon pool; without it, or with
//! [`Execution::Sequential`], they run inline. Results are collected in input
//! order either way, so both paths produce identical images.

use std::ops::Range;
use std::time::Instant;

use thiserror::Error;

use crate::blend::{
    blend_alpha_reference, blend_duplex, blend_lcwsr, oracle_pixel, prepare_oracle, PixelTrace, Rgb, ShadedSplat,
};
use crate::decoder::{decode_cell, DecodedCell};
use crate::image::Image;
use crate::projection::{project_cell, project_gaussian, CellSplat, ProjectionError};
use crate::raster::{bin_splats, sort_into_workloads, KeyError, SortStats, TileGrid, TileWorkload};
use crate::metrics::StageTimings;
use crate::scene::{Camera, ConfigError, KernelKind, RenderConfig, Scene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Key(#[from] KeyError),
}

pub(crate) fn map_items<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

fn map_range<U, F>(exec: Execution, range: Range<usize>, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return range.into_par_iter().map(f).collect();
    }
    let _ = exec;
    range.map(f).collect()
}

/// A visible cell and its projected slots (`FramePlan::splats[slots]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedCell {
    pub bound: CellSplat,
    pub blend_weight: f64,
    pub slots: Range<usize>,
}

/// Everything the blend stage needs for one view.
#[derive(Clone, Debug)]
pub struct FramePlan {
    pub kernel: KernelKind,
    pub grid: TileGrid,
    /// Workload entries index `cells` for the duplex kernel and `splats`
    /// for the Gaussian-level kernels.
    pub workloads: Vec<TileWorkload>,
    pub stats: SortStats,
    pub cells: Vec<PlannedCell>,
    pub splats: Vec<ShadedSplat>,
    pub timings: StageTimings,
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs every stage up to and including the sort.
///
/// The duplex kernel bins and sorts cells; the other tiled kernels bin and
/// sort every projected Gaussian of the visible cells.
pub fn plan_frame(scene: &Scene, cam: &Camera, config: &RenderConfig, exec: Execution) -> Result<FramePlan, RenderError> {
    config.validate()?;
    let mut timings = StageTimings::default();
    let grid = TileGrid::new(cam.width, cam.height, config.tile_size);

    let start = Instant::now();
    let indexed: Vec<usize> = (0..scene.cells.len()).collect();
    let visible: Vec<CellSplat> = map_items(exec, &indexed, |&i| project_cell(i, &scene.cells[i], cam))
        .into_iter()
        .flatten()
        .collect();
    timings.cull_ms = millis(start);

    let start = Instant::now();
    let decoded: Vec<DecodedCell> = map_items(exec, &visible, |s| decode_cell(s.cell_index, &scene.cells[s.cell_index]));
    timings.decode_ms = millis(start);

    let start = Instant::now();
    let projected: Vec<Result<Vec<ShadedSplat>, ProjectionError>> = map_items(exec, &decoded, |d| {
        let mut out = Vec::with_capacity(d.gaussians.len());
        for g in &d.gaussians {
            if let Some(splat) = project_gaussian(g, cam, config.denom_floor)? {
                out.push(ShadedSplat::new(splat, g));
            }
        }
        Ok(out)
    });
    let mut splats = Vec::new();
    let mut cells = Vec::with_capacity(visible.len());
    for (bound, group) in visible.into_iter().zip(projected) {
        let group = group?;
        let begin = splats.len();
        splats.extend(group);
        let blend_weight = scene.cells[bound.cell_index].blend_weight as f64;
        cells.push(PlannedCell {
            bound,
            blend_weight,
            slots: begin..splats.len(),
        });
    }
    timings.project_ms = millis(start);

    let start = Instant::now();
    let bins = if config.kernel == KernelKind::DuplexWsr {
        bin_splats(cells.iter().map(|c| (c.bound.aabb, c.bound.depth)), &grid)
    } else {
        bin_splats(splats.iter().map(|s| (s.splat.aabb, s.splat.depth)), &grid)
    };
    timings.bin_ms = millis(start);

    let start = Instant::now();
    let (workloads, stats) = sort_into_workloads(&bins)?;
    timings.sort_ms = millis(start);

    Ok(FramePlan {
        kernel: config.kernel,
        grid,
        workloads,
        stats,
        cells,
        splats,
        timings,
    })
}

/// Tile workloads and sort statistics for one view.
pub fn build_tile_workloads(
    scene: &Scene,
    cam: &Camera,
    config: &RenderConfig,
) -> Result<(Vec<TileWorkload>, SortStats), RenderError> {
    let plan = plan_frame(scene, cam, config, Execution::Sequential)?;
    Ok((plan.workloads, plan.stats))
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub kernel: KernelKind,
    pub image: Image,
    /// Row-major, one per pixel.
    pub traces: Vec<PixelTrace>,
    pub stats: SortStats,
    pub timings: StageTimings,
}

impl FramePlan {
    fn shade_pixel(&self, entries: &[u32], pixel: [f64; 2], config: &RenderConfig) -> (Rgb, PixelTrace) {
        match self.kernel {
            KernelKind::DuplexWsr => blend_duplex(
                entries.iter().map(|&i| {
                    let c = &self.cells[i as usize];
                    (c.blend_weight, &self.splats[c.slots.clone()])
                }),
                pixel,
                config,
            ),
            KernelKind::AlphaRef => {
                blend_alpha_reference(entries.iter().map(|&i| &self.splats[i as usize]), pixel, config)
            }
            KernelKind::LcWsr => blend_lcwsr(entries.iter().map(|&i| &self.splats[i as usize]), pixel, config),
            KernelKind::Oracle => unreachable!("the oracle is not tiled"),
        }
    }

    /// Blends every tile and assembles the image.
    pub fn blend(&self, config: &RenderConfig, exec: Execution) -> (Image, Vec<PixelTrace>) {
        let mut tile_to_workload = vec![None; self.grid.tile_count()];
        for (i, w) in self.workloads.iter().enumerate() {
            tile_to_workload[w.tile_id as usize] = Some(i);
        }
        let (width, height) = (self.grid.width, self.grid.height);
        let tiles = map_range(exec, 0..self.grid.tile_count(), |tile| {
            let rect = self.grid.tile_rect(tile as u32);
            let entries: &[u32] = tile_to_workload[tile].map_or(&[], |i| &self.workloads[i].entries);
            let mut out = Vec::with_capacity(rect.area() as usize);
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let pixel = [x as f64 + 0.5, y as f64 + 0.5];
                    out.push(if entries.is_empty() {
                        (config.background, PixelTrace::default())
                    } else {
                        self.shade_pixel(entries, pixel, config)
                    });
                }
            }
            (rect, out)
        });
        let mut image = Image::filled(width, height, config.background);
        let mut traces = vec![PixelTrace::default(); image.data.len()];
        for (rect, pixels) in tiles {
            let mut it = pixels.into_iter();
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let (c, t) = it.next().expect("tile pixel count");
                    let i = image.index(x, y);
                    image.data[i] = c;
                    traces[i] = t;
                }
            }
        }
        (image, traces)
    }
}

/// Renders one view with the configured kernel.
pub fn render_frame(scene: &Scene, cam: &Camera, config: &RenderConfig, exec: Execution) -> Result<RenderOutput, RenderError> {
    if config.kernel == KernelKind::Oracle {
        return render_oracle(scene, cam, config, exec);
    }
    let plan = plan_frame(scene, cam, config, exec)?;
    let start = Instant::now();
    let (image, traces) = plan.blend(config, exec);
    let mut timings = plan.timings;
    timings.blend_ms = millis(start);
    Ok(RenderOutput {
        kernel: config.kernel,
        image,
        traces,
        stats: plan.stats,
        timings,
    })
}

/// Brute-force ground truth: every decoded Gaussian of every cell, sorted per
/// pixel by ray depth.
pub fn render_oracle(scene: &Scene, cam: &Camera, config: &RenderConfig, exec: Execution) -> Result<RenderOutput, RenderError> {
    config.validate()?;
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let gaussians: Vec<_> = scene
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| decode_cell(i, c).gaussians)
        .collect();
    timings.decode_ms = millis(start);

    let start = Instant::now();
    let prepared = prepare_oracle(&gaussians, cam, config.denom_floor)?;
    timings.project_ms = millis(start);

    let start = Instant::now();
    let rows = map_range(exec, 0..cam.height as usize, |y| {
        (0..cam.width)
            .map(|x| oracle_pixel(&prepared, [x as f64 + 0.5, y as f64 + 0.5], cam, config))
            .collect::<Vec<_>>()
    });
    timings.blend_ms = millis(start);
    let image = Image {
        width: cam.width,
        height: cam.height,
        data: rows.into_iter().flatten().collect(),
    };
    Ok(RenderOutput {
        kernel: KernelKind::Oracle,
        traces: vec![PixelTrace::default(); image.data.len()],
        image,
        stats: SortStats::for_entries(0),
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{gen_orbit, gen_random_cells};
    use nalgebra::Vector3;

    #[test]
    fn empty_scene_has_no_workloads() {
        let scene = Scene::new(3, Vec::new());
        let cam = gen_orbit(Vector3::zeros(), 5.0, 1, 32, 32).unwrap().remove(0);
        for kernel in [KernelKind::AlphaRef, KernelKind::DuplexWsr] {
            let (w, stats) = build_tile_workloads(&scene, &cam, &RenderConfig::with_kernel(kernel)).unwrap();
            assert!(w.is_empty());
            assert_eq!(stats.entries, 0);
        }
        let out = render_frame(&scene, &cam, &RenderConfig::default(), Execution::Sequential).unwrap();
        assert!(out.image.data.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let scene = gen_random_cells(1, 40, 4, 2.0);
        let cam = gen_orbit(Vector3::zeros(), 5.0, 3, 48, 40).unwrap().remove(1);
        for kernel in KernelKind::ALL {
            let config = RenderConfig::with_kernel(kernel);
            let a = render_frame(&scene, &cam, &config, Execution::Sequential).unwrap();
            let b = render_frame(&scene, &cam, &config, Execution::Parallel).unwrap();
            assert_eq!(a.image, b.image, "{kernel}");
            assert_eq!(a.traces, b.traces);
            assert_eq!(a.stats, b.stats);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let scene = gen_random_cells(1, 2, 1, 1.0);
        let cam = gen_orbit(Vector3::zeros(), 5.0, 1, 16, 16).unwrap().remove(0);
        let config = RenderConfig {
            tile_size: 7,
            ..RenderConfig::default()
        };
        assert!(matches!(
            render_frame(&scene, &cam, &config, Execution::Sequential),
            Err(RenderError::Config(_))
        ));
    }
}
