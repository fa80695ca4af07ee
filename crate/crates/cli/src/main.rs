//! `duplex`: render, compare, benchmark and generate cell-proxy splatting scenes.

mod commands;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use duplex_core::render::Execution;
use duplex_core::scene::{KernelKind, RenderConfig};

use source::SceneSpec;

#[derive(Parser, Debug)]
#[command(name = "duplex", version, about = "CPU reference renderer for cell-proxy Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one view to an image and optional JSON report.
    Render(RenderArgs),
    /// Render a camera path under several kernels and summarize metrics.
    Compare(CompareArgs),
    /// Time repeated renders of a camera path.
    Bench(BenchArgs),
    /// Write a generated scene to a scene file.
    Generate(GenerateArgs),
}

/// Options shared by every rendering command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scene file (binary or `.json`), or `gen:random[:N[:K[:EXTENT]]]`,
    /// `gen:wall[:LAYERS[:K]]`, `gen:popping`.
    #[arg(long, default_value = "gen:random")]
    pub scene: SceneSpec,
    /// Seed for generated scenes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON render config; command-line flags take precedence over it.
    #[arg(long, env = "DUPLEX_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tile_size: Option<u32>,
    /// Early-termination threshold on transmittance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Linear-correction depth scale.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
    /// Camera distance for the scene's default path.
    #[arg(long)]
    pub orbit_radius: Option<f64>,
    /// Worker threads; 1 runs every stage sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print the effective render config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Write zero timings so reports are byte-reproducible.
    #[arg(long)]
    pub no_timings: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// Kernel; defaults to the config's kernel.
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    /// Index into the scene's default camera path.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Number of frames in the default camera path.
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    /// Camera JSON file; overrides the default path.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Output image; `.png` writes PNG, anything else binary PPM.
    #[arg(long, default_value = "render.ppm")]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Ppm,
    Png,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Score every frame against the brute-force oracle.
    Oracle,
    /// Skip PSNR/SSIM.
    None,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated kernels, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kernels: Vec<KernelKind>,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value = "compare")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormat::Ppm)]
    pub format: ImageFormat,
    #[arg(long, value_enum, default_value_t = Reference::Oracle)]
    pub reference: Reference,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// A `gen:` scene spec.
    #[arg(long)]
    pub scene: SceneSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination; `.json` writes JSON, anything else the binary container.
    #[arg(long)]
    pub out: PathBuf,
}

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flag values or combinations (exit 2).
    Usage(anyhow::Error),
    /// Unreadable or invariant-violating scene (exit 2).
    InvalidScene(anyhow::Error),
    /// File system failure (exit 3).
    Io(anyhow::Error),
    /// Anything else (exit 1).
    Render(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::InvalidScene(_) => 2,
            Failure::Io(_) => 3,
            Failure::Render(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::InvalidScene(e) | Failure::Io(e) | Failure::Render(e) => e,
        }
    }
}

impl Common {
    /// Built-in defaults, then the config file, then flags.
    pub fn render_config(&self, kernel: Option<KernelKind>) -> Result<RenderConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Io(anyhow::anyhow!("cannot read config `{}`: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Failure::Usage(anyhow::anyhow!("invalid config `{}`: {e}", path.display())))?
            }
            None => RenderConfig::default(),
        };
        if let Some(k) = kernel {
            config.kernel = k;
        }
        if let Some(v) = self.tile_size {
            config.tile_size = v;
        }
        if let Some(v) = self.epsilon {
            config.et_epsilon = v;
        }
        if let Some(v) = self.tau {
            config.lc_tau = v;
        }
        if let Some(v) = self.alpha_min {
            config.alpha_min = v;
        }
        config.validate().map_err(|e| Failure::Usage(e.into()))?;
        Ok(config)
    }

    pub fn execution(&self) -> Execution {
        if self.threads == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// Runs `f` on a pool capped at `--threads`, or the global pool.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
        match self.threads {
            Some(0) => Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1"))),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Failure::Render(e.into()))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(args) => commands::render(args),
        Command::Compare(args) => commands::compare(args),
        Command::Bench(args) => commands::bench(args),
        Command::Generate(args) => commands::generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
