use std::path::Path;
use std::time::Instant;

use anyhow::anyhow;
use duplex_core::image::Image;
use duplex_core::io::save_scene;
use duplex_core::metrics::{
    frame_delta, psnr, ssim, termination_ratio, Decibels, FrameReport, StageTimings, TraceSummary,
};
use duplex_core::raster::SortStats;
use duplex_core::render::{render_frame, Execution, RenderOutput};
use duplex_core::scene::{Camera, KernelKind, RenderConfig};
use serde::Serialize;

use crate::source::{self, LoadedScene, SceneSpec};
use crate::{BenchArgs, Common, CompareArgs, Failure, GenerateArgs, ImageFormat, Reference, RenderArgs};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(anyhow!("cannot write `{}`: {e}", path.display()))
}

fn write_image(image: &Image, path: &Path) -> Result<(), Failure> {
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        image::save_buffer(path, &image.to_rgb8(), image.width, image.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| io_err(path, e))
    } else {
        image.write_ppm(path).map_err(|e| io_err(path, e))
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Render(e.into()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Render(e.into()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Io(anyhow!("cannot write to stdout: {e}"))),
        _ => Ok(()),
    }
}

fn render_one(scene: &LoadedScene, cam: &Camera, config: &RenderConfig, exec: Execution) -> Result<RenderOutput, Failure> {
    render_frame(&scene.scene, cam, config, exec).map_err(|e| Failure::Render(e.into()))
}

fn camera_error(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("invalid camera: {e}"))
}

fn frame_report(
    common: &Common,
    frame: usize,
    out: &RenderOutput,
    render_ms: f64,
    reference: Option<&Image>,
    previous: Option<&Image>,
) -> FrameReport {
    let (render_ms, stages) = if common.no_timings {
        (0.0, StageTimings::default())
    } else {
        (render_ms, out.timings)
    };
    FrameReport {
        kernel: out.kernel,
        frame,
        width: out.image.width,
        height: out.image.height,
        psnr: reference.map(|r| Decibels(psnr(&out.image, r).expect("same view size"))),
        ssim: reference.and_then(|r| ssim(&out.image, r).ok()),
        popping_delta: previous.map(|p| frame_delta(p, &out.image).expect("same view size")),
        et_ratio: termination_ratio(&out.traces),
        sort_stats: out.stats,
        trace: TraceSummary::from_traces(&out.traces),
        render_ms,
        stages,
    }
}

pub fn render(args: RenderArgs) -> Result<(), Failure> {
    let common = &args.common;
    let config = common.render_config(args.kernel)?;
    if common.print_config {
        return print_json(&config);
    }
    let scene = source::load(&common.scene, common.seed)?;
    let cam = match &args.camera {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Io(anyhow!("cannot read camera `{}`: {e}", path.display())))?;
            serde_json::from_str::<Camera>(&text).map_err(camera_error)?
        }
        None => {
            if args.frame >= args.frames.max(1) {
                return Err(Failure::Usage(anyhow!("--frame {} is outside the {}-frame path", args.frame, args.frames)));
            }
            let views = scene
                .views(args.frames.max(1), common.width, common.height, common.orbit_radius)
                .map_err(camera_error)?;
            views[args.frame].clone()
        }
    };
    let exec = common.execution();
    let (out, ms) = common.with_pool(|| {
        let start = Instant::now();
        let out = render_one(&scene, &cam, &config, exec);
        (out, start.elapsed().as_secs_f64() * 1e3)
    })?;
    let out = out?;
    write_image(&out.image, &args.out)?;
    if let Some(path) = &args.report {
        write_json(&frame_report(common, args.frame, &out, ms, None, None), path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct KernelSummary {
    kernel: KernelKind,
    /// Mean over frames; `"inf"` when every frame matches the reference exactly.
    mean_psnr: Option<Decibels>,
    min_psnr: Option<Decibels>,
    mean_ssim: Option<f64>,
    popping_delta: Vec<f64>,
    max_popping_delta: f64,
    /// Aggregated over all pixels of all frames.
    et_ratio: f64,
    sort_entries: Vec<u64>,
    sort_memory_bytes: Vec<u64>,
    /// Mean rear-color leakage in the wall region (wall fixtures only).
    mean_leakage: Option<f64>,
    mean_render_ms: f64,
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    scene: String,
    seed: u64,
    frames: usize,
    width: u32,
    height: u32,
    reference: Option<KernelKind>,
    config: RenderConfig,
    kernels: Vec<KernelSummary>,
}

struct Accumulator {
    kernel: KernelKind,
    psnr: Vec<f64>,
    ssim: Vec<f64>,
    popping: Vec<f64>,
    valid: u64,
    rendered: u64,
    sort_entries: Vec<u64>,
    sort_memory: Vec<u64>,
    leakage: Vec<f64>,
    render_ms: f64,
    previous: Option<Image>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn compare(args: CompareArgs) -> Result<(), Failure> {
    let common = &args.common;
    let base = common.render_config(None)?;
    if common.print_config {
        return print_json(&base);
    }
    let mut kernels = Vec::new();
    for k in &args.kernels {
        if !kernels.contains(k) {
            kernels.push(*k);
        }
    }
    if kernels.len() < 2 {
        return Err(Failure::Usage(anyhow!("compare needs at least two distinct kernels")));
    }
    if args.frames == 0 {
        return Err(Failure::Usage(anyhow!("--frames must be at least 1")));
    }
    let scene = source::load(&common.scene, common.seed)?;
    let views = scene
        .views(args.frames, common.width, common.height, common.orbit_radius)
        .map_err(camera_error)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let ext = match args.format {
        ImageFormat::Ppm => "ppm",
        ImageFormat::Png => "png",
    };
    let exec = common.execution();
    let mut acc: Vec<Accumulator> = kernels
        .iter()
        .map(|&kernel| Accumulator {
            kernel,
            psnr: Vec::new(),
            ssim: Vec::new(),
            popping: Vec::new(),
            valid: 0,
            rendered: 0,
            sort_entries: Vec::new(),
            sort_memory: Vec::new(),
            leakage: Vec::new(),
            render_ms: 0.0,
            previous: None,
        })
        .collect();

    common.with_pool(|| -> Result<(), Failure> {
        for (frame, cam) in views.iter().enumerate() {
            let reference = match args.reference {
                Reference::Oracle if !kernels.contains(&KernelKind::Oracle) => Some(
                    render_one(&scene, cam, &RenderConfig { kernel: KernelKind::Oracle, ..base.clone() }, exec)?.image,
                ),
                _ => None,
            };
            let mut oracle_image = reference;
            let mut outputs = Vec::with_capacity(kernels.len());
            for &kernel in &kernels {
                let start = Instant::now();
                let out = render_one(&scene, cam, &RenderConfig { kernel, ..base.clone() }, exec)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                if kernel == KernelKind::Oracle && args.reference == Reference::Oracle {
                    oracle_image = Some(out.image.clone());
                }
                outputs.push((out, ms));
            }
            let mask = scene.wall.as_ref().map(|w| w.wall_mask(cam, 0.1));
            for (a, (out, ms)) in acc.iter_mut().zip(outputs) {
                let report = frame_report(common, frame, &out, ms, oracle_image.as_ref(), a.previous.as_ref());
                let stem = format!("{}_{frame:03}", a.kernel);
                write_image(&out.image, &args.out_dir.join(format!("{stem}.{ext}")))?;
                write_json(&report, &args.out_dir.join(format!("{stem}.json")))?;
                if let Some(p) = report.psnr {
                    a.psnr.push(p.0);
                }
                a.ssim.extend(report.ssim);
                a.popping.extend(report.popping_delta);
                a.valid += report.trace.total_valid;
                a.rendered += report.trace.total_rendered;
                a.sort_entries.push(report.sort_stats.entries);
                a.sort_memory.push(report.sort_stats.memory_bytes);
                a.render_ms += report.render_ms;
                if let (Some(wall), Some(mask)) = (&scene.wall, &mask) {
                    a.leakage.push(wall.leakage(&out.image, mask));
                }
                a.previous = Some(out.image);
            }
        }
        Ok(())
    })??;

    let summary = CompareSummary {
        scene: common.scene.to_string(),
        seed: common.seed,
        frames: args.frames,
        width: common.width,
        height: common.height,
        reference: (args.reference == Reference::Oracle).then_some(KernelKind::Oracle),
        config: base,
        kernels: acc
            .into_iter()
            .map(|a| KernelSummary {
                kernel: a.kernel,
                mean_psnr: mean(&a.psnr).map(Decibels),
                min_psnr: a.psnr.iter().copied().reduce(f64::min).map(Decibels),
                mean_ssim: mean(&a.ssim),
                max_popping_delta: a.popping.iter().copied().fold(0.0, f64::max),
                popping_delta: a.popping,
                et_ratio: if a.valid == 0 {
                    0.0
                } else {
                    1.0 - a.rendered as f64 / a.valid as f64
                },
                sort_entries: a.sort_entries,
                sort_memory_bytes: a.sort_memory,
                mean_leakage: mean(&a.leakage),
                mean_render_ms: a.render_ms / args.frames as f64,
            })
            .collect(),
    };
    write_json(&summary, &args.out_dir.join("summary.json"))
}

#[derive(Debug, Serialize)]
struct BenchReport {
    scene: String,
    kernel: KernelKind,
    frames: usize,
    repeats: usize,
    width: u32,
    height: u32,
    threads: usize,
    /// Median wall-clock time of one frame render.
    median_frame_ms: f64,
    fps: f64,
    /// Stage breakdown of the median sample.
    stages: StageTimings,
    stage_sum_ms: f64,
    sort_stats: Vec<SortStats>,
}

pub fn bench(args: BenchArgs) -> Result<(), Failure> {
    let common = &args.common;
    let config = common.render_config(args.kernel)?;
    if common.print_config {
        return print_json(&config);
    }
    if args.repeats == 0 || args.frames == 0 {
        return Err(Failure::Usage(anyhow!("--repeats and --frames must be at least 1")));
    }
    let scene = source::load(&common.scene, common.seed)?;
    let views = scene
        .views(args.frames, common.width, common.height, common.orbit_radius)
        .map_err(camera_error)?;
    let exec = common.execution();
    let (mut samples, sort_stats, threads) = common.with_pool(|| -> Result<_, Failure> {
        let mut samples = Vec::with_capacity(args.frames * args.repeats);
        let mut stats = Vec::with_capacity(args.frames);
        for cam in &views {
            for r in 0..args.repeats {
                let start = Instant::now();
                let out = render_one(&scene, cam, &config, exec)?;
                samples.push((start.elapsed().as_secs_f64() * 1e3, out.timings));
                if r == 0 {
                    stats.push(out.stats);
                }
            }
        }
        Ok((samples, stats, rayon::current_num_threads()))
    })??;
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (median_ms, stages) = samples[samples.len() / 2];
    let (median_ms, stages) = if common.no_timings {
        (0.0, StageTimings::default())
    } else {
        (median_ms, stages)
    };
    let report = BenchReport {
        scene: common.scene.to_string(),
        kernel: config.kernel,
        frames: args.frames,
        repeats: args.repeats,
        width: common.width,
        height: common.height,
        threads: if exec == Execution::Sequential { 1 } else { threads },
        median_frame_ms: median_ms,
        fps: if median_ms > 0.0 { 1e3 / median_ms } else { 0.0 },
        stage_sum_ms: stages.total_ms(),
        stages,
        sort_stats,
    };
    match &args.report {
        Some(path) => write_json(&report, path),
        None => print_json(&report),
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    if matches!(args.scene, SceneSpec::File(_)) {
        return Err(Failure::Usage(anyhow!("generate needs a `gen:` scene spec")));
    }
    let scene = source::load(&args.scene, args.seed)?;
    save_scene(&scene.scene, &args.out).map_err(|e| io_err(&args.out, e))
}
