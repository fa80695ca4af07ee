//! Scene selection (`--scene`) and the camera path rendered for each scene.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use duplex_core::io::{load_scene, SceneFileError};
use duplex_core::scene::{Camera, CameraError, Scene};
use duplex_core::scenegen::{
    gen_opaque_wall, gen_orbit, gen_popping_pair, gen_random_cells, popping_orbit, OpaqueWall, POPPING_FOV_Y_DEG,
};
use nalgebra::Vector3;

use crate::Failure;

/// Parsed `--scene` argument.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneSpec {
    Random { cells: usize, slots: usize, extent: f64 },
    Wall { layers: usize, slots: usize },
    Popping,
    File(PathBuf),
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneSpec::Random { cells, slots, extent } => write!(f, "gen:random:{cells}:{slots}:{extent}"),
            SceneSpec::Wall { layers, slots } => write!(f, "gen:wall:{layers}:{slots}"),
            SceneSpec::Popping => f.write_str("gen:popping"),
            SceneSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl std::str::FromStr for SceneSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("gen:") else {
            return Ok(SceneSpec::File(PathBuf::from(s)));
        };
        let mut parts = rest.split(':');
        let kind = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        fn arg<T: std::str::FromStr>(args: &[&str], i: usize, default: T, name: &str) -> Result<T, String> {
            args.get(i)
                .map(|v| v.parse().map_err(|_| format!("invalid {name} `{v}`")))
                .unwrap_or(Ok(default))
        }
        let spec = match kind {
            "random" => SceneSpec::Random {
                cells: arg(&args, 0, 50, "cell count")?,
                slots: arg(&args, 1, 5, "slot count")?,
                extent: arg(&args, 2, 2.0, "extent")?,
            },
            "wall" => SceneSpec::Wall {
                layers: arg(&args, 0, 2, "layer count")?,
                slots: arg(&args, 1, 4, "slot count")?,
            },
            "popping" => SceneSpec::Popping,
            _ => return Err(format!("unknown generator `{kind}` (expected random, wall or popping)")),
        };
        let max_args = match spec {
            SceneSpec::Random { .. } => 3,
            SceneSpec::Wall { .. } => 2,
            _ => 0,
        };
        if args.len() > max_args {
            return Err(format!("too many generator arguments in `{s}`"));
        }
        match spec {
            SceneSpec::Random { cells: 0, .. } => Err("random scenes need at least one cell".into()),
            SceneSpec::Random { slots: 0, .. } | SceneSpec::Wall { slots: 0, .. } => {
                Err("slot count must be positive".into())
            }
            SceneSpec::Wall { layers, .. } if layers < 2 => Err("a wall needs at least 2 layers".into()),
            SceneSpec::Random { extent, .. } if !(extent >= 0.0 && extent.is_finite()) => {
                Err("extent must be finite and non-negative".into())
            }
            spec => Ok(spec),
        }
    }
}

/// A loaded scene plus what is needed to choose its default views.
pub struct LoadedScene {
    pub spec: SceneSpec,
    pub scene: Scene,
    pub wall: Option<OpaqueWall>,
}

pub fn load(spec: &SceneSpec, seed: u64) -> Result<LoadedScene, Failure> {
    let (scene, wall) = match spec {
        SceneSpec::Random { cells, slots, extent } => (gen_random_cells(seed, *cells, *slots, *extent), None),
        SceneSpec::Wall { layers, slots } => {
            let wall = gen_opaque_wall(seed, *layers, *slots);
            (wall.scene.clone(), Some(wall))
        }
        SceneSpec::Popping => (gen_popping_pair(seed), None),
        SceneSpec::File(path) => {
            let scene = load_scene(path).map_err(|e| match e {
                SceneFileError::Io(io) => Failure::Io(anyhow::anyhow!("cannot read scene `{}`: {io}", path.display())),
                other => Failure::InvalidScene(anyhow::anyhow!("`{}`: {other}", path.display())),
            })?;
            (scene, None)
        }
    };
    scene
        .validate()
        .map_err(|e| Failure::InvalidScene(anyhow::anyhow!("invalid scene {spec}: {e}")))?;
    Ok(LoadedScene {
        spec: spec.clone(),
        scene,
        wall,
    })
}

/// Half-angle of the sweep in front of a wall fixture.
const WALL_SWEEP: f64 = PI / 12.0;
const WALL_DISTANCE: f64 = 4.0;

impl LoadedScene {
    /// Default orbit radius: far enough that the whole scene fits the view.
    pub fn default_radius(&self) -> f64 {
        let c = self.scene.centroid();
        let reach = self
            .scene
            .cells
            .iter()
            .map(|cell| (cell.center_f64() - c).norm() + 3.0 * cell.scales_f64().max())
            .fold(0.0, f64::max);
        (2.5 * reach).max(1.0)
    }

    /// The camera path used by every command.
    ///
    /// - wall fixtures: a horizontal sweep of +-15 degrees in front of the wall;
    /// - the popping pair: its framed orbit;
    /// - anything else: a horizontal orbit around the scene centroid.
    pub fn views(&self, frames: usize, width: u32, height: u32, radius: Option<f64>) -> Result<Vec<Camera>, CameraError> {
        match (&self.spec, &self.wall) {
            (_, Some(_)) => {
                let r = radius.unwrap_or(WALL_DISTANCE);
                (0..frames)
                    .map(|i| {
                        let phi = if frames > 1 {
                            -WALL_SWEEP + 2.0 * WALL_SWEEP * i as f64 / (frames - 1) as f64
                        } else {
                            0.0
                        };
                        let eye = Vector3::new(r * phi.sin(), 0.0, -r * phi.cos());
                        Camera::look_at(eye, Vector3::zeros(), width, height, 45f64.to_radians())
                    })
                    .collect()
            }
            (SceneSpec::Popping, _) => match radius {
                None => popping_orbit(frames, width, height),
                Some(r) => duplex_core::scenegen::gen_orbit_with(
                    Vector3::zeros(),
                    r,
                    0.0,
                    frames,
                    width,
                    height,
                    POPPING_FOV_Y_DEG.to_radians(),
                ),
            },
            _ => gen_orbit(
                self.scene.centroid(),
                radius.unwrap_or_else(|| self.default_radius()),
                frames,
                width,
                height,
            ),
        }
    }
}
