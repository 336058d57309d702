//! Optimization of the neural fields against posed, masked images.
//!
//! A step draws a batch of masked pixels, traces their ray trees through the
//! box, places samples on every internal segment, and evaluates both networks
//! on all samples at once. The per-pixel compositing, accumulation, gamma and
//! loss are recorded on a scalar [`Tape`]; its adjoints for the SDF values,
//! the colors and `ln s` are then pushed through the networks' backward
//! passes, together with the Eikonal and normal terms that act on `∇g`.
//!
//! Work is split into fixed chunks of rays whose gradients are summed in
//! chunk order, so the result does not depend on how chunks are scheduled.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::forge::{Dataset, View};
use crate::geometry::OrientedBox;
use crate::loss::{total_loss, LossComponents, LossWeights};
use crate::math::{Real, Rgb, Vec3};
use crate::nn::{
    init_geometric, Adam, AppearanceConfig, AppearanceField, AppearanceQuery, GeometricInit, GeometricInitReport,
    LearningRate, PositionalEncoding, SdfConfig, SdfField, MIN_SHARPNESS,
};
use crate::render::{accumulate, trace, trace_open, RayTree, TraceConfig, GAMMA};
use crate::rng;
use crate::volume::{place_batch, SampleSet, SamplingConfig, Segment, ALPHA_MAX, PHI_FLOOR};

/// Lower bound applied to linear radiance before gamma, where the curve's
/// slope is unbounded.
const LINEAR_FLOOR: f64 = 1e-8;

/// Stream tags.
const STREAM_INIT_SDF: u64 = 1;
const STREAM_INIT_APPEARANCE: u64 = 2;
const STREAM_INIT_SHAPE: u64 = 3;
const STREAM_BATCH: u64 = 4;
const STREAM_SEGMENT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rays_per_batch: usize,
    pub sampling: SamplingConfig,
    pub iterations: u64,
    pub learning_rate: LearningRate,
    pub seed: u64,
    pub sparsity_loss_enabled: bool,
    pub loss: LossWeights,
    pub trace: TraceConfig,
    pub precision: Precision,
    pub encoding: PositionalEncoding,
    pub sdf: SdfConfig,
    pub appearance: AppearanceConfig,
    pub init: GeometricInit,
    /// Rays per unit of work in the deterministic gradient reduction.
    pub chunk_rays: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_batch: 1024,
            sampling: SamplingConfig::default(),
            iterations: 20_000,
            learning_rate: LearningRate::default(),
            seed: 0,
            sparsity_loss_enabled: true,
            loss: LossWeights::default(),
            trace: TraceConfig::default(),
            precision: Precision::F64,
            encoding: PositionalEncoding::default(),
            sdf: SdfConfig::default(),
            appearance: AppearanceConfig::default(),
            init: GeometricInit::default(),
            chunk_rays: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.iterations == 0 || self.chunk_rays == 0 {
            return Err(Error::InvalidArgument("batch size, iterations and chunk size must be positive"));
        }
        if self.sdf.hidden_layers == 0 || self.sdf.width == 0 || self.appearance.width == 0 {
            return Err(Error::InvalidArgument("networks need at least one hidden unit"));
        }
        if !(self.learning_rate.base >= 0.0 && self.learning_rate.sharpness_factor >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be non-negative"));
        }
        if !(self.sdf.initial_sharpness > MIN_SHARPNESS) {
            return Err(Error::InvalidArgument("initial sharpness must exceed its floor"));
        }
        self.sampling.validate()?;
        self.loss.validate()?;
        self.trace.validate()
    }
}

/// Both networks plus the sharpness, in precision `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub sdf: SdfField<R>,
    pub appearance: AppearanceField<R>,
}

impl<R: Real> Model<R> {
    /// Freshly initialized networks, with the SDF shaped into a sphere.
    pub fn new(cfg: &TrainConfig) -> Result<(Self, GeometricInitReport)> {
        let mut sdf = SdfField::new(cfg.sdf, cfg.encoding.position(), &mut rng::stream(cfg.seed, &[STREAM_INIT_SDF]));
        let appearance = AppearanceField::new(
            cfg.appearance,
            cfg.encoding.position(),
            cfg.encoding.direction(),
            &mut rng::stream(cfg.seed, &[STREAM_INIT_APPEARANCE]),
        );
        let report = init_geometric(&mut sdf, &cfg.init, rng::stream_seed(cfg.seed, &[STREAM_INIT_SHAPE]))?;
        Ok((Self { sdf, appearance }, report))
    }

    /// Networks shaped by `cfg` holding `params`, skipping initialization.
    pub fn from_params(cfg: &TrainConfig, params: &[f64]) -> Result<Self> {
        let sdf = SdfField::new(cfg.sdf, cfg.encoding.position(), &mut rng::stream(cfg.seed, &[STREAM_INIT_SDF]));
        let appearance = AppearanceField::new(
            cfg.appearance,
            cfg.encoding.position(),
            cfg.encoding.direction(),
            &mut rng::stream(cfg.seed, &[STREAM_INIT_APPEARANCE]),
        );
        let mut m = Self { sdf, appearance };
        m.load(params)?;
        Ok(m)
    }

    /// Parameters laid out as `[sdf, appearance, ln s]`.
    pub fn param_count(&self) -> usize {
        self.sdf.param_count() + self.appearance.param_count() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.sdf.mlp.params.iter().map(|v| v.as_f64()).collect();
        p.extend(self.appearance.mlp.params.iter().map(|v| v.as_f64()));
        p.push(self.sdf.log_sharpness);
        p
    }

    pub fn load(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape("parameter vector length does not match the model"));
        }
        let ns = self.sdf.param_count();
        let (a, rest) = params.split_at(ns);
        for (d, &s) in self.sdf.mlp.params.iter_mut().zip(a) {
            *d = R::from_f64(s);
        }
        for (d, &s) in self.appearance.mlp.params.iter_mut().zip(rest) {
            *d = R::from_f64(s);
        }
        self.sdf.log_sharpness = params[params.len() - 1];
        Ok(())
    }
}

/// A supervised pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRef {
    pub view: u32,
    pub px: u32,
    pub py: u32,
}

/// Union of all masked pixels of all views.
#[derive(Debug, Clone)]
pub struct PixelPool {
    pub pixels: Vec<PixelRef>,
}

impl PixelPool {
    pub fn new(views: &[View]) -> Self {
        let mut pixels = Vec::new();
        for (v, view) in views.iter().enumerate() {
            let w = view.camera.intrinsics.width;
            for (i, &m) in view.mask.iter().enumerate() {
                if m {
                    pixels.push(PixelRef {
                        view: v as u32,
                        px: i as u32 % w,
                        py: i as u32 / w,
                    });
                }
            }
        }
        Self { pixels }
    }

    /// Uniform draw with replacement, seeded by `(seed, iteration)`.
    pub fn sample(&self, n: usize, seed: u64, iteration: u64) -> Result<Vec<PixelRef>> {
        if self.pixels.is_empty() || n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut r = rng::stream(seed, &[STREAM_BATCH, iteration]);
        Ok((0..n).map(|_| self.pixels[r.random_range(0..self.pixels.len())]).collect())
    }
}

/// Geometry the trainer needs from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct SceneGeometry {
    pub bx: OrientedBox,
    pub with_box: bool,
    pub trace: TraceConfig,
}

impl SceneGeometry {
    pub fn from_dataset(data: &Dataset, trace: &TraceConfig) -> Self {
        Self {
            bx: data.scene.bx,
            with_box: data.scene.with_box,
            trace: TraceConfig {
                ambient: data.scene.ambient,
                ..*trace
            },
        }
    }

    pub fn trace_ray(&self, ray: &crate::math::Ray) -> Result<RayTree> {
        if self.with_box {
            trace(ray, &self.bx, &self.trace)
        } else {
            trace_open(ray, &self.bx, &self.trace)
        }
    }

    /// Trace settings matching [`Self::trace_ray`].
    pub fn effective_trace(&self) -> TraceConfig {
        if self.with_box {
            self.trace
        } else {
            TraceConfig {
                single_refraction: true,
                depth: self.trace.depth.max(1),
                ..self.trace
            }
        }
    }
}

/// Ray tree and sample placement of one batch pixel.
#[derive(Debug, Clone)]
pub struct PixelPlan {
    pub pixel: PixelRef,
    /// Ground-truth intensity in `[0, 1]`.
    pub target: Rgb,
    pub tree: RayTree,
    /// Internal node index and its samples.
    pub segments: Vec<(usize, SampleSet)>,
}

/// Traces the batch and places samples with the current SDF.
pub fn plan_batch<R: Real>(
    sdf: &SdfField<R>,
    views: &[View],
    geom: &SceneGeometry,
    pixels: &[PixelRef],
    sampling: &SamplingConfig,
    seed: u64,
    iteration: u64,
) -> Result<Vec<PixelPlan>> {
    let mut plans = Vec::with_capacity(pixels.len());
    let mut segments = Vec::new();
    let mut streams = Vec::new();
    for (b, p) in pixels.iter().enumerate() {
        let view = views
            .get(p.view as usize)
            .ok_or(Error::InvalidArgument("pixel refers to a missing view"))?;
        let ray = view.camera.pixel_ray(p.px, p.py);
        let tree = geom.trace_ray(&ray)?;
        if geom.with_box && !tree.hits_box() {
            return Err(Error::InvalidArgument("supervised pixel misses the box"));
        }
        for (idx, _) in tree.internal_nodes() {
            segments.push(Segment::of_node(&tree, idx)?);
            streams.push(rng::stream_seed(seed, &[STREAM_SEGMENT, iteration, b as u64, idx as u64]));
        }
        let rgb = view.pixel(p.px, p.py);
        plans.push(PixelPlan {
            pixel: *p,
            target: Rgb(rgb.map(|c| c as f64 / 255.0)),
            tree,
            segments: Vec::new(),
        });
    }
    let sets = place_batch(sdf, &segments, &streams, sampling)?;
    let mut it = sets.into_iter();
    for plan in &mut plans {
        let idxs: Vec<usize> = plan.tree.internal_nodes().map(|(i, _)| i).collect();
        for idx in idxs {
            plan.segments.push((idx, it.next().expect("one sample set per segment")));
        }
    }
    Ok(plans)
}

/// Loss value and gradient over `[sdf, appearance, ln s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub components: LossComponents,
    pub total: f64,
    pub gradient: Vec<f64>,
}

struct ChunkResult {
    color: f64,
    trans: f64,
    reg: f64,
    gradient: Vec<f64>,
}

/// Differentiable scalar from a constant.
fn lift<'t>(tape: &'t Tape) -> impl Fn(f64) -> Var<'t> + 't {
    move |v| tape.constant(v)
}

fn evaluate_chunk<R: Real>(
    model: &Model<R>,
    plans: &[PixelPlan],
    trace_cfg: &TraceConfig,
    weights: &LossWeights,
    sparsity: bool,
    batch: usize,
    total_samples: usize,
) -> Result<ChunkResult> {
    let mut points = Vec::new();
    let mut queries_dir = Vec::new();
    for plan in plans {
        for (_, set) in &plan.segments {
            for p in set.positions() {
                points.push(p);
                queries_dir.push(set.segment.ray.direction);
            }
        }
    }
    let sdf = &model.sdf;
    let field = sdf.forward_with_gradient(&points);
    let grads: Vec<Vec3> = field
        .gradients
        .iter()
        .map(|g| Vec3::new(g[0].as_f64(), g[1].as_f64(), g[2].as_f64()))
        .collect();
    let norms: Vec<f64> = grads.iter().map(|g| g.length()).collect();
    let normals: Vec<Vec3> = grads
        .iter()
        .zip(&norms)
        .map(|(g, &n)| if n > 0.0 { *g / n } else { Vec3::Z })
        .collect();
    let queries: Vec<AppearanceQuery> = points
        .iter()
        .zip(&queries_dir)
        .zip(&normals)
        .map(|((&position, &direction), &normal)| AppearanceQuery {
            position,
            direction,
            normal,
        })
        .collect();
    let (colors, app_cache) = model.appearance.forward(&queries);

    let n_pts = points.len();
    let mut d_values = vec![0.0f64; n_pts];
    let mut d_colors = vec![[0.0f64; 3]; n_pts];
    let mut d_log_s = 0.0;
    let mut color_sum = 0.0;
    let mut trans_sum = 0.0;
    let lambda_trans = if sparsity { weights.lambda_trans } else { 0.0 };
    let inv_batch = 1.0 / batch as f64;

    let mut offset = 0;
    for plan in plans {
        let tape = Tape::with_capacity(64 + 24 * n_pts / plans.len().max(1));
        let log_s = tape.var(sdf.log_sharpness);
        let s = log_s.exp();
        // Leaves of this pixel: (first point index, value vars, color vars).
        let mut leaves: Vec<(usize, Vec<Var<'_>>, Vec<[Var<'_>; 3]>)> = Vec::with_capacity(plan.segments.len());
        let mut seg_start = offset;
        for (_, set) in &plan.segments {
            let n = set.len();
            let g: Vec<Var<'_>> = (0..n).map(|i| tape.var(field.values[seg_start + i].as_f64())).collect();
            let c: Vec<[Var<'_>; 3]> = (0..n)
                .map(|i| colors[seg_start + i].map(|v| tape.var(v.as_f64())))
                .collect();
            leaves.push((seg_start, g, c));
            seg_start += n;
        }
        let mut seg_trans: Vec<Var<'_>> = Vec::with_capacity(plan.segments.len());
        let linear = accumulate(
            &plan.tree,
            trace_cfg,
            |idx, _node| {
                let k = plan
                    .segments
                    .iter()
                    .position(|(i, _)| *i == idx)
                    .ok_or(Error::MalformedTree { node: idx, reason: "internal node without samples" })?;
                let (_, g, c) = &leaves[k];
                let zero = tape.constant(0.0);
                let mut col = [zero; 3];
                let mut trans = tape.constant(1.0);
                if g.len() >= 2 {
                    let phi: Vec<Var<'_>> = g.iter().map(|&gi| (s * gi).sigmoid()).collect();
                    for i in 0..g.len() - 1 {
                        let alpha = ((phi[i] - phi[i + 1]) / phi[i].max_const(PHI_FLOOR)).clamp(0.0, ALPHA_MAX);
                        let w = alpha * trans;
                        for ch in 0..3 {
                            col[ch] = col[ch] + w * c[i][ch];
                        }
                        trans = trans * (1.0 - alpha);
                    }
                }
                seg_trans.push(trans);
                Ok((col, trans))
            },
            lift(&tape),
        )?;
        let mut color_loss = tape.constant(0.0);
        for ch in 0..3 {
            let intensity = linear[ch].max_const(LINEAR_FLOOR).powf(1.0 / GAMMA);
            color_loss = color_loss + (intensity - plan.target[ch]).abs();
        }
        let mut trans_loss = tape.constant(0.0);
        for &t in &seg_trans {
            trans_loss = trans_loss + (1.0 - t).abs();
        }
        let objective = (color_loss + trans_loss * lambda_trans) * inv_batch;
        let adj = tape.gradients(objective)?;
        color_sum += color_loss.value();
        trans_sum += trans_loss.value();
        d_log_s += adj.wrt(log_s);
        for (start, g, c) in &leaves {
            for (i, gv) in g.iter().enumerate() {
                d_values[start + i] += adj.wrt(*gv);
                for ch in 0..3 {
                    d_colors[start + i][ch] += adj.wrt(c[i][ch]);
                }
            }
        }
        offset = seg_start;
    }

    let ns = sdf.param_count();
    let na = model.appearance.param_count();
    let mut grad_app = vec![R::zero(); na];
    let d_colors_r: Vec<[R; 3]> = d_colors.iter().map(|c| c.map(R::from_f64)).collect();
    let d_normals = model.appearance.backward(&app_cache, &d_colors_r, &mut grad_app);

    let mut reg_sum = 0.0;
    let reg_scale = weights.lambda_reg / total_samples.max(1) as f64;
    let mut d_grads = Vec::with_capacity(n_pts);
    for i in 0..n_pts {
        let norm = norms[i];
        reg_sum += (norm - 1.0).powi(2);
        let mut d = Vec3::ZERO;
        if norm > 0.0 {
            let n = normals[i];
            d += n * (2.0 * (norm - 1.0) * reg_scale);
            let dn = Vec3::new(d_normals[i][0].as_f64(), d_normals[i][1].as_f64(), d_normals[i][2].as_f64());
            d += (dn - n * n.dot(dn)) / norm;
        }
        d_grads.push([R::from_f64(d.x), R::from_f64(d.y), R::from_f64(d.z)]);
    }
    let d_values_r: Vec<R> = d_values.iter().map(|&v| R::from_f64(v)).collect();
    let mut grad_sdf = vec![R::zero(); ns];
    if n_pts > 0 {
        sdf.backward(&field.cache, &d_values_r, &d_grads, &mut grad_sdf);
    }

    let mut gradient = Vec::with_capacity(ns + na + 1);
    gradient.extend(grad_sdf.iter().map(|g| g.as_f64()));
    gradient.extend(grad_app.iter().map(|g| g.as_f64()));
    gradient.push(d_log_s);
    Ok(ChunkResult {
        color: color_sum,
        trans: trans_sum,
        reg: reg_sum,
        gradient,
    })
}

/// Total loss and its exact gradient for a planned batch.
pub fn evaluate<R: Real>(
    model: &Model<R>,
    plans: &[PixelPlan],
    trace_cfg: &TraceConfig,
    weights: &LossWeights,
    sparsity: bool,
    chunk_rays: usize,
) -> Result<Objective> {
    if plans.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = plans.len();
    let total_samples: usize = plans.iter().flat_map(|p| p.segments.iter()).map(|(_, s)| s.len()).sum();
    let chunks: Vec<&[PixelPlan]> = plans.chunks(chunk_rays.max(1)).collect();
    let run = |c: &&[PixelPlan]| evaluate_chunk(model, c, trace_cfg, weights, sparsity, batch, total_samples);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ChunkResult>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ChunkResult>> = chunks.iter().map(run).collect();

    let mut gradient = vec![0.0; model.param_count()];
    let (mut color, mut trans, mut reg) = (0.0, 0.0, 0.0);
    for r in results {
        let r = r?;
        color += r.color;
        trans += r.trans;
        reg += r.reg;
        for (g, v) in gradient.iter_mut().zip(&r.gradient) {
            *g += v;
        }
    }
    let components = LossComponents {
        color: color / batch as f64,
        trans: trans / batch as f64,
        reg: if total_samples > 0 { reg / total_samples as f64 } else { 0.0 },
    };
    let total = total_loss(components, weights, sparsity)?;
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "parameter gradient", node: i });
    }
    Ok(Objective {
        components,
        total,
        gradient,
    })
}

/// Optimizer state; together with the configuration it fully determines the
/// rest of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub adam: Adam,
    /// Number of completed steps.
    pub iteration: u64,
}

/// Values reported after each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub iteration: u64,
    pub components: LossComponents,
    pub total: f64,
    pub sharpness: f64,
    pub learning_rate: f64,
}

/// Model, data and optimizer state of one run.
pub struct Trainer<'d, R> {
    pub config: TrainConfig,
    pub model: Model<R>,
    pub state: TrainState,
    pub views: &'d [View],
    pub geometry: SceneGeometry,
    pub pool: PixelPool,
    pub init_report: Option<GeometricInitReport>,
}

impl<'d, R: Real> Trainer<'d, R> {
    pub fn new(config: TrainConfig, data: &'d Dataset) -> Result<Self> {
        config.validate()?;
        let (model, report) = Model::new(&config)?;
        let params = model.params();
        let state = TrainState {
            adam: Adam::new(params.len()),
            params,
            iteration: 0,
        };
        let mut t = Self::with_state(config, data, model, state)?;
        t.init_report = Some(report);
        Ok(t)
    }

    /// Resumes from a saved state.
    pub fn with_state(config: TrainConfig, data: &'d Dataset, mut model: Model<R>, state: TrainState) -> Result<Self> {
        config.validate()?;
        model.load(&state.params)?;
        let pool = PixelPool::new(&data.views);
        if pool.pixels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            geometry: SceneGeometry::from_dataset(data, &config.trace),
            config,
            model,
            state,
            views: &data.views,
            pool,
            init_report: None,
        })
    }

    /// Plans and evaluates the batch of the current iteration.
    pub fn objective(&self) -> Result<(Vec<PixelPlan>, Objective)> {
        let cfg = &self.config;
        let pixels = self.pool.sample(cfg.rays_per_batch, cfg.seed, self.state.iteration)?;
        let plans = plan_batch(
            &self.model.sdf,
            self.views,
            &self.geometry,
            &pixels,
            &cfg.sampling,
            cfg.seed,
            self.state.iteration,
        )?;
        let obj = evaluate(
            &self.model,
            &plans,
            &self.geometry.effective_trace(),
            &cfg.loss,
            cfg.sparsity_loss_enabled,
            cfg.chunk_rays,
        )?;
        Ok((plans, obj))
    }

    /// One optimizer update. On error the state is left untouched.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let (_, obj) = self.objective()?;
        let lr = self.config.learning_rate.at(self.state.iteration, self.config.iterations);
        let mut params = self.state.params.clone();
        let mut adam = self.state.adam.clone();
        adam.update(&mut params, &obj.gradient, lr);
        let last = params.len() - 1;
        let prev = self.state.params[last];
        params[last] = prev + self.config.learning_rate.sharpness_factor * (params[last] - prev);
        params[last] = params[last].max(MIN_SHARPNESS.ln());
        self.model.load(&params)?;
        let s = self.model.sdf.sharpness();
        assert!(s >= MIN_SHARPNESS && s.is_finite(), "sharpness left its admissible range: {s}");
        self.state.params = params;
        self.state.adam = adam;
        self.state.iteration += 1;
        Ok(StepMetrics {
            iteration: self.state.iteration,
            components: obj.components,
            total: obj.total,
            sharpness: s,
            learning_rate: lr,
        })
    }
}
