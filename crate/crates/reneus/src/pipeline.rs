//! End-to-end operations behind the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use reneus_core::camera::Camera;
use reneus_core::error::Error as CoreError;
use reneus_core::forge::{generate, AnalyticInterior, Dataset, SceneSpec};
use reneus_core::geometry::OrientedBox;
use reneus_core::math::{Ray, Real, Rgb, Vec3};
use reneus_core::mesh::{self, ChamferReport, TriangleMesh};
use reneus_core::nn::{SdfField, SignedDistance};
use reneus_core::render::{accumulate_bottom_up, EmptyInterior, InternalRadiance, PixelColor, RayTree, TraceConfig};
use reneus_core::rng;
use reneus_core::train::{Model, Precision, SceneGeometry, StepMetrics, Trainer};
use reneus_core::volume::{NeuralRadiance, SamplingConfig};

use crate::checkpoint::Checkpoint;
use crate::config::{EvalConfig, ExtractConfig, RunConfig};
use crate::dataset;
use crate::error::{Error, Result};

pub const METRICS: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "iteration,L_color,L_trans,L_reg,total,s,wall_time_ms";

/// Renders every view of the configured scene and writes the dataset.
pub fn forge(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let data = generate(&cfg.scene, &cfg.oracle)?;
    dataset::write_dataset(&data, out)?;
    Ok(data)
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("ckpt_{iteration:08}.bin"))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub last: Option<StepMetrics>,
}

/// Trains on `data`, writing metrics, checkpoints and validation renders
/// below `out`. A non-finite loss saves the failing state and aborts.
pub fn train(cfg: &RunConfig, data: &Dataset, out: &Path, resume: Option<Checkpoint>) -> Result<TrainOutcome> {
    match cfg.train.precision {
        Precision::F32 => train_with::<f32>(cfg, data, out, resume),
        Precision::F64 => train_with::<f64>(cfg, data, out, resume),
    }
}

fn metrics_row(m: &StepMetrics, wall_ms: u128) -> String {
    let c = &m.components;
    format!(
        "{},{},{},{},{},{},{}\n",
        m.iteration, c.color, c.trans, c.reg, m.total, m.sharpness, wall_ms
    )
}

fn train_with<R: Real>(cfg: &RunConfig, data: &Dataset, out: &Path, resume: Option<Checkpoint>) -> Result<TrainOutcome> {
    let tc = cfg.train;
    if cfg.schedule.validate_every > 0 && cfg.schedule.validation_view >= data.views.len() {
        return Err(Error::Config(format!(
            "schedule.validation_view {} but the dataset has {} views",
            cfg.schedule.validation_view,
            data.views.len()
        )));
    }
    let resumed = resume.is_some();
    let mut trainer = match resume {
        Some(ck) => {
            let model = Model::<R>::from_params(&tc, &ck.state.params)?;
            Trainer::with_state(tc, data, model, ck.state)?
        }
        None => {
            let t = Trainer::<R>::new(tc, data)?;
            if let Some(r) = &t.init_report {
                log::info!(
                    "geometric init: {} steps, surface error {:.4}, eikonal {:.4}",
                    r.steps,
                    r.max_surface_error,
                    r.mean_eikonal_error
                );
            }
            t
        }
    };
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let metrics_path = out.join(METRICS);
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&metrics_path)
        .map_err(Error::io(&metrics_path))?;
    if !resumed || metrics.metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(metrics, "{METRICS_HEADER}").map_err(Error::io(&metrics_path))?;
    }
    let snapshot = |t: &Trainer<R>| Checkpoint {
        config: tc,
        state: t.state.clone(),
    };
    let sched = cfg.schedule;
    let start = Instant::now();
    let mut last = None;
    let mut saved_at = None;
    while trainer.state.iteration < tc.iterations {
        let m = match trainer.step() {
            Ok(m) => m,
            Err(e @ (CoreError::NonFiniteLoss(_) | CoreError::NonFinite { .. })) => {
                let path = out.join("checkpoints").join(format!("failed_{:08}.bin", trainer.state.iteration));
                snapshot(&trainer).save(&path)?;
                return Err(Error::Diverged {
                    iteration: trainer.state.iteration,
                    checkpoint: path,
                    source: e,
                });
            }
            Err(e) => return Err(e.into()),
        };
        metrics
            .write_all(metrics_row(&m, start.elapsed().as_millis()).as_bytes())
            .map_err(Error::io(&metrics_path))?;
        let it = m.iteration;
        if sched.log_every > 0 && it % sched.log_every == 0 {
            log::info!(
                "iter {it}: total {:.5} color {:.5} trans {:.5} reg {:.5} s {:.2}",
                m.total,
                m.components.color,
                m.components.trans,
                m.components.reg,
                m.sharpness
            );
        }
        if sched.checkpoint_every > 0 && it % sched.checkpoint_every == 0 {
            snapshot(&trainer).save(&checkpoint_path(out, it))?;
            saved_at = Some(it);
        }
        if sched.validate_every > 0 && it % sched.validate_every == 0 {
            let view = &data.views[sched.validation_view];
            let geom = SceneGeometry::from_dataset(data, &tc.trace);
            let img = render_image(&trainer.model, &geom, &view.camera, &tc.sampling, tc.seed)?;
            let k = view.camera.intrinsics;
            let path = out.join("validation").join(format!("iter_{it:08}.png"));
            fs::create_dir_all(path.parent().unwrap()).map_err(Error::io(out))?;
            fs::write(&path, dataset::encode_rgb(k.width, k.height, &img)).map_err(Error::io(&path))?;
        }
        last = Some(m);
    }
    let it = trainer.state.iteration;
    let checkpoint = snapshot(&trainer);
    let path = checkpoint_path(out, it);
    if saved_at != Some(it) {
        checkpoint.save(&path)?;
    }
    metrics.flush().map_err(Error::io(&metrics_path))?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path: path,
        last,
    })
}

/// Neural rendering of one view through the scene geometry. Samples are
/// placed without jitter.
pub fn render_image<R: Real>(
    model: &Model<R>,
    geom: &SceneGeometry,
    camera: &Camera,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<[u8; 3]>> {
    let k = camera.intrinsics;
    let sampling = SamplingConfig {
        jitter: false,
        ..*sampling
    };
    let trace = geom.effective_trace();
    let rows: Vec<Result<Vec<[u8; 3]>>> = (0..k.height)
        .into_par_iter()
        .map(|py| {
            (0..k.width)
                .map(|px| {
                    let tree = geom.trace_ray(&camera.pixel_ray(px, py))?;
                    let source = NeuralRadiance {
                        sdf: &model.sdf,
                        appearance: &model.appearance,
                        sampling,
                        stream: rng::stream_seed(seed, &[px as u64, py as u64]),
                    };
                    let linear = reneus_core::render::shade_tree(&tree, &source, &trace)?;
                    Ok(PixelColor::from_linear(linear).to_u8())
                })
                .collect::<std::result::Result<Vec<_>, CoreError>>()
                .map_err(Error::from)
        })
        .collect();
    let mut img = Vec::with_capacity(k.pixel_count());
    for r in rows {
        img.extend(r?);
    }
    Ok(img)
}

/// Loads a checkpoint and renders each camera into `out/view_XXXX.png`.
pub fn render_views(ck: &Checkpoint, scene: &SceneSpec, cameras: &[(usize, Camera)], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let geom = geometry_of(scene, &ck.config.trace);
    let mut paths = Vec::new();
    for (i, cam) in cameras {
        let img = with_model(ck, |m| render_image(m, &geom, cam, &ck.config.sampling, ck.config.seed), |m| {
            render_image(m, &geom, cam, &ck.config.sampling, ck.config.seed)
        })?;
        let k = cam.intrinsics;
        let path = out.join(format!("view_{i:04}.png"));
        fs::write(&path, dataset::encode_rgb(k.width, k.height, &img)).map_err(Error::io(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

fn geometry_of(scene: &SceneSpec, trace: &TraceConfig) -> SceneGeometry {
    SceneGeometry {
        bx: scene.bx,
        with_box: scene.with_box,
        trace: TraceConfig {
            ambient: scene.ambient,
            ..*trace
        },
    }
}

/// Runs `f32_fn` or `f64_fn` on the checkpoint's model in its precision.
fn with_model<T>(
    ck: &Checkpoint,
    f32_fn: impl FnOnce(&Model<f32>) -> Result<T>,
    f64_fn: impl FnOnce(&Model<f64>) -> Result<T>,
) -> Result<T> {
    match ck.config.precision {
        Precision::F32 => f32_fn(&Model::from_params(&ck.config, &ck.state.params)?),
        Precision::F64 => f64_fn(&Model::from_params(&ck.config, &ck.state.params)?),
    }
}

/// Axis-aligned bounds of the box interior.
pub fn box_bounds(bx: &OrientedBox) -> (Vec3, Vec3) {
    let c = bx.corners();
    let lo = c.iter().fold(Vec3::splat(f64::INFINITY), |a, p| Vec3::new(a.x.min(p.x), a.y.min(p.y), a.z.min(p.z)));
    let hi = c.iter().fold(Vec3::splat(f64::NEG_INFINITY), |a, p| Vec3::new(a.x.max(p.x), a.y.max(p.y), a.z.max(p.z)));
    (lo, hi)
}

const FIELD_CHUNK: usize = 2048;

/// Zero level set of a learned SDF over `bounds`.
pub fn extract_sdf<R: Real>(sdf: &SdfField<R>, bounds: (Vec3, Vec3), cfg: &ExtractConfig) -> Result<TriangleMesh> {
    let field = |pts: &[Vec3]| -> Vec<f64> {
        pts.par_chunks(FIELD_CHUNK)
            .map(|c| sdf.forward(c).into_iter().map(|v| v.as_f64()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .concat()
    };
    let m = mesh::marching_cubes(field, bounds, cfg.resolution)?;
    Ok(if cfg.largest_component {
        mesh::largest_component(&m)
    } else {
        m
    })
}

pub fn extract(ck: &Checkpoint, scene: &SceneSpec, cfg: &ExtractConfig) -> Result<TriangleMesh> {
    let bounds = box_bounds(&scene.bx);
    with_model(ck, |m| extract_sdf(&m.sdf, bounds, cfg), |m| extract_sdf(&m.sdf, bounds, cfg))
}

/// The analytic object meshed over its padded bounds.
pub fn ground_truth_mesh(scene: &SceneSpec, resolution: usize) -> Result<TriangleMesh> {
    let obj = scene
        .object
        .ok_or_else(|| Error::Config("scene has no object to evaluate against".into()))?;
    let (lo, hi) = match obj.bounds() {
        Some((lo, hi)) => {
            let pad = (hi - lo) * 0.05 + Vec3::splat(1e-3);
            (lo - pad, hi + pad)
        }
        None => box_bounds(&scene.bx),
    };
    let field = |pts: &[Vec3]| pts.par_iter().map(|&p| obj.distance(p)).collect::<Vec<f64>>();
    Ok(mesh::marching_cubes(field, (lo, hi), resolution)?)
}

pub fn evaluate(pred: &TriangleMesh, scene: &SceneSpec, cfg: &EvalConfig) -> Result<ChamferReport> {
    let gt = ground_truth_mesh(scene, cfg.gt_resolution)?;
    Ok(mesh::chamfer_l1(pred, &gt, cfg.seed)?)
}

/// `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let decimals = (5 - x.abs().log10().floor() as i64).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn chamfer_report_text(r: &ChamferReport) -> String {
    format!(
        "score_x100 = {}\nn_samples_pred = {}\nn_samples_gt = {}\n",
        sig6(r.score_x100),
        r.n_samples_pred,
        r.n_samples_gt
    )
}

/// What fills the box in a debug trace.
pub enum Interior<'a> {
    Empty,
    Analytic,
    Neural(&'a Checkpoint),
}

struct Recording<'a, S: ?Sized> {
    inner: &'a S,
    seen: std::cell::RefCell<Vec<Option<(Rgb, f64)>>>,
}

impl<S: InternalRadiance + ?Sized> InternalRadiance for Recording<'_, S> {
    fn segment_radiance(&self, tree: &RayTree, index: usize) -> reneus_core::error::Result<(Rgb, f64)> {
        let r = self.inner.segment_radiance(tree, index)?;
        self.seen.borrow_mut()[index] = Some(r);
        Ok(r)
    }
}

fn fmt_rgb(c: Rgb) -> String {
    format!("{:.9} {:.9} {:.9}", c[0], c[1], c[2])
}

/// Text dump of the ray tree of `ray`: per node the medium, extent,
/// Fresnel weights, segment color and transmittance, and accumulated
/// radiance, followed by the pixel color.
pub fn trace_debug(scene: &SceneSpec, trace: &TraceConfig, ray: &Ray, interior: Interior<'_>) -> Result<String> {
    let geom = geometry_of(scene, trace);
    let tree = geom.trace_ray(ray)?;
    let cfg = geom.effective_trace();
    let analytic = AnalyticInterior {
        object: scene.object.as_ref(),
        radiance: scene.object_radiance(),
    };
    let run = |source: &dyn InternalRadiance| -> Result<(Vec<[f64; 3]>, Vec<Option<(Rgb, f64)>>)> {
        let rec = Recording {
            inner: source,
            seen: std::cell::RefCell::new(vec![None; tree.len()]),
        };
        let values = accumulate_bottom_up(
            &tree,
            &cfg,
            |idx, _| {
                let (c, t) = rec.segment_radiance(&tree, idx)?;
                Ok((c.0, t))
            },
            |v| v,
        )?;
        Ok((values, rec.seen.into_inner()))
    };
    let (values, seen) = match interior {
        Interior::Empty => run(&EmptyInterior)?,
        Interior::Analytic => run(&analytic)?,
        Interior::Neural(ck) => {
            let sampling = SamplingConfig {
                jitter: false,
                ..ck.config.sampling
            };
            with_model(
                ck,
                |m| {
                    run(&NeuralRadiance {
                        sdf: &m.sdf,
                        appearance: &m.appearance,
                        sampling,
                        stream: ck.config.seed,
                    })
                },
                |m| {
                    run(&NeuralRadiance {
                        sdf: &m.sdf,
                        appearance: &m.appearance,
                        sampling,
                        stream: ck.config.seed,
                    })
                },
            )?
        }
    };
    let mut s = String::new();
    writeln!(s, "ray origin {:?} direction {:?}", ray.origin.to_array(), ray.direction.to_array()).unwrap();
    writeln!(s, "nodes {}", tree.len()).unwrap();
    for (i, n) in tree.nodes.iter().enumerate() {
        let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
        let end = n.t_end.map_or("inf".to_string(), |t| format!("{t:.9}"));
        writeln!(
            s,
            "node {i} parent {parent} medium {:?} events_before {} t [{:.9}, {end}]",
            n.medium, n.events_before, n.t_start
        )
        .unwrap();
        if n.event.is_some() {
            writeln!(s, "  R {:.9} T_re {:.9}", n.reflectance, n.transmittance).unwrap();
        }
        if let Some(t) = n.terminal {
            writeln!(s, "  terminal {t:?}").unwrap();
        }
        if let Some((c, tl)) = seen[i] {
            writeln!(s, "  segment color {} T_l {tl:.9}", fmt_rgb(c)).unwrap();
        }
        writeln!(s, "  radiance {}", fmt_rgb(Rgb(values[i]))).unwrap();
    }
    let px = PixelColor::from_linear(Rgb(values[0]));
    writeln!(s, "root linear color {}", fmt_rgb(px.linear)).unwrap();
    writeln!(s, "root intensity {}", fmt_rgb(px.intensity)).unwrap();
    let q = px.to_u8();
    writeln!(s, "root 8-bit {} {} {}", q[0], q[1], q[2]).unwrap();
    Ok(s)
}

/// Reads `root linear color` back out of a [`trace_debug`] dump.
pub fn parse_root_linear(dump: &str) -> Option<[f64; 3]> {
    let line = dump.lines().find(|l| l.starts_with("root linear color "))?;
    let v: Vec<f64> = line["root linear color ".len()..]
        .split_whitespace()
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    (v.len() == 3).then(|| [v[0], v[1], v[2]])
}


#[cfg(test)]
mod tests {
    use super::*;
    use reneus_core::nn::AnalyticSdf;

    #[test]
    fn ground_truth_covers_the_whole_object() {
        let scene = SceneSpec {
            object: Some(AnalyticSdf::sphere(Vec3::new(0.1, -0.05, 0.0), 0.3)),
            ..SceneSpec::default()
        };
        let gt = ground_truth_mesh(&scene, 48).unwrap();
        let (lo, hi) = gt.vertices.iter().fold((Vec3::splat(9.0), Vec3::splat(-9.0)), |(lo, hi), v| {
            (
                Vec3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z)),
                Vec3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z)),
            )
        });
        let expect_lo = Vec3::new(-0.2, -0.35, -0.3);
        let expect_hi = Vec3::new(0.4, 0.25, 0.3);
        assert!((lo - expect_lo).length() < 0.01, "{lo:?}");
        assert!((hi - expect_hi).length() < 0.01, "{hi:?}");
    }
}
