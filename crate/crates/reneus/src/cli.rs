//! Command line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use reneus_core::camera::Camera;
use reneus_core::forge::{sample_cameras, SceneSpec};
use reneus_core::math::{Ray, Vec3};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset;
use crate::error::{Error, Result};
use crate::obj;
use crate::pipeline::{self, Interior};

#[derive(Debug, Parser)]
#[command(name = "reneus", version, about = "Reconstruct opaque objects sealed in transparent boxes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `train.iterations=500`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with the oracle renderer.
    Forge {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the neural fields to a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        dataset: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render images from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the scene and camera poses from this dataset instead of the config.
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Comma separated view indices; all views when omitted.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
    },
    /// Extract a mesh from a checkpoint's SDF.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
    },
    /// Chamfer distance between a mesh and the scene's analytic object.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
    },
    /// Print the ray tree of a single pixel or ray.
    TraceDebug {
        #[command(flatten)]
        common: Common,
        /// Explicit ray `ox,oy,oz,dx,dy,dz`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ray: Option<Vec<f64>>,
        /// View index used with `--pixel`.
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Pixel `x,y` of `--view`.
        #[arg(long, value_delimiter = ',')]
        pixel: Option<Vec<u32>>,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = InteriorKind::Analytic)]
        interior: InteriorKind,
        /// Checkpoint for `--interior neural`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InteriorKind {
    Empty,
    Analytic,
    Neural,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Forge { common }
            | Command::Train { common, .. }
            | Command::Render { common, .. }
            | Command::Extract { common, .. }
            | Command::Eval { common, .. }
            | Command::TraceDebug { common, .. } => common,
        }
    }
}

fn scene_from(cfg: &RunConfig, dataset: Option<&Path>) -> Result<(SceneSpec, Option<Vec<Camera>>)> {
    match dataset {
        Some(d) => {
            let m = dataset::read_manifest(d)?;
            let scene = m.scene();
            let cams = m
                .views
                .iter()
                .map(|v| Camera::from_matrix(scene.intrinsics, v.camera_to_world))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(d.join(dataset::MANIFEST), e.to_string()))?;
            Ok((scene, Some(cams)))
        }
        None => Ok((cfg.scene, None)),
    }
}

fn cameras_of(scene: &SceneSpec, cams: Option<Vec<Camera>>) -> Result<Vec<Camera>> {
    match cams {
        Some(c) => Ok(c),
        None => Ok(sample_cameras(scene.num_views, scene.camera_radius, scene.intrinsics, scene.seed)?),
    }
}

/// Runs one invocation and returns the text to print on success.
pub fn execute(cmd: &Command, cfg: &RunConfig) -> Result<String> {
    let out = &cmd.common().out;
    match cmd {
        Command::Forge { .. } => {
            cfg.write_snapshot(out)?;
            let data = pipeline::forge(cfg, out)?;
            Ok(format!("wrote {} views to {}\n", data.views.len(), out.display()))
        }
        Command::Train { dataset: d, resume, .. } => {
            let (data, _) = dataset::read_dataset(d)?;
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            cfg.write_snapshot(out)?;
            let o = pipeline::train(cfg, &data, out, resume)?;
            let mut s = format!("checkpoint {}\n", o.checkpoint_path.display());
            if let Some(m) = o.last {
                s += &format!("final total loss {} s {}\n", m.total, m.sharpness);
            }
            Ok(s)
        }
        Command::Render {
            checkpoint,
            dataset: d,
            views,
            ..
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (scene, cams) = scene_from(cfg, d.as_deref())?;
            let cams = cameras_of(&scene, cams)?;
            let picked: Vec<(usize, Camera)> = if views.is_empty() {
                cams.into_iter().enumerate().collect()
            } else {
                views
                    .iter()
                    .map(|&i| {
                        cams.get(i)
                            .map(|c| (i, *c))
                            .ok_or_else(|| Error::Config(format!("view {i} does not exist")))
                    })
                    .collect::<Result<_>>()?
            };
            cfg.write_snapshot(out)?;
            let paths = pipeline::render_views(&ck, &scene, &picked, &out.join("renders"))?;
            Ok(format!("rendered {} views\n", paths.len()))
        }
        Command::Extract {
            checkpoint, dataset: d, ..
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (scene, _) = scene_from(cfg, d.as_deref())?;
            cfg.write_snapshot(out)?;
            let mesh = pipeline::extract(&ck, &scene, &cfg.extract)?;
            let path = out.join("mesh.obj");
            obj::write(&mesh, &path)?;
            Ok(format!(
                "{} vertices, {} triangles -> {}\n",
                mesh.vertices.len(),
                mesh.triangles.len(),
                path.display()
            ))
        }
        Command::Eval { mesh, dataset: d, .. } => {
            let pred = obj::read(mesh)?;
            let (scene, _) = scene_from(cfg, d.as_deref())?;
            cfg.write_snapshot(out)?;
            let report = pipeline::evaluate(&pred, &scene, &cfg.eval)?;
            let text = pipeline::chamfer_report_text(&report);
            let path = out.join("chamfer.txt");
            fs::write(&path, &text).map_err(Error::io(&path))?;
            Ok(text)
        }
        Command::TraceDebug {
            ray,
            view,
            pixel,
            dataset: d,
            interior,
            checkpoint,
            ..
        } => {
            let (scene, cams) = scene_from(cfg, d.as_deref())?;
            let ray = match (ray, pixel) {
                (Some(r), _) => {
                    if r.len() != 6 {
                        return Err(Error::Config("--ray takes six comma separated numbers".into()));
                    }
                    let dir = Vec3::new(r[3], r[4], r[5])
                        .try_normalize()
                        .ok_or_else(|| Error::Config("ray direction is zero".into()))?;
                    Ray::new(Vec3::new(r[0], r[1], r[2]), dir)
                }
                (None, Some(p)) => {
                    if p.len() != 2 {
                        return Err(Error::Config("--pixel takes x,y".into()));
                    }
                    let cams = cameras_of(&scene, cams)?;
                    let cam = cams
                        .get(*view)
                        .ok_or_else(|| Error::Config(format!("view {view} does not exist")))?;
                    let k = cam.intrinsics;
                    if p[0] >= k.width || p[1] >= k.height {
                        return Err(Error::Config(format!("pixel {},{} outside the image", p[0], p[1])));
                    }
                    cam.pixel_ray(p[0], p[1])
                }
                (None, None) => return Err(Error::Config("trace-debug needs --ray or --pixel".into())),
            };
            let ck = match (interior, checkpoint) {
                (InteriorKind::Neural, Some(c)) => Some(Checkpoint::load(c)?),
                (InteriorKind::Neural, None) => {
                    return Err(Error::Config("--interior neural requires --checkpoint".into()))
                }
                _ => None,
            };
            let interior = match interior {
                InteriorKind::Empty => Interior::Empty,
                InteriorKind::Analytic => Interior::Analytic,
                InteriorKind::Neural => Interior::Neural(ck.as_ref().unwrap()),
            };
            cfg.write_snapshot(out)?;
            let dump = pipeline::trace_debug(&scene, &cfg.oracle, &ray, interior)?;
            let path = out.join("trace.txt");
            fs::write(&path, &dump).map_err(Error::io(&path))?;
            Ok(dump)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = cli.command.common();
    let cfg = match RunConfig::load(common.config.as_deref(), &common.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.thread_count()).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 3;
        }
    };
    match pool.install(|| execute(&cli.command, &cfg)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
