//! Hybrid renderer: recursive ray tracing through the glass box, combined
//! with volume-rendered radiance of the internal segments.
//!
//! A camera ray is expanded into a [`RayTree`]. Every box crossing spawns a
//! reflected and a refracted child and consumes one unit of the recursion
//! budget. Colors are then accumulated from the leaves back to the root:
//!
//! * escaping external leaves see the ambient radiance,
//! * a node ending at an interface mixes its children as `R·C_r + T·C_t`,
//! * an internal segment adds its own emission and attenuates what lies
//!   behind it: `Ĉ + T_ℓ·C_downstream`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul};

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::math::{Ray, Rgb};
use crate::optics::{interface_event, InterfaceEvent};

/// Exponent of the display gamma.
pub const GAMMA: f64 = 2.2;

/// Origins closer than this to a face count as lying on it.
const SURFACE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Maximum number of interface events along any root-to-leaf path.
    pub depth: u32,
    /// Linear radiance of the surrounding air.
    pub ambient: Rgb,
    /// Radiance assigned to rays cut off by the recursion budget.
    pub truncation_radiance: Rgb,
    /// Refract once on entry and ignore all reflections.
    pub single_refraction: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            ambient: Rgb::splat(0.8),
            truncation_radiance: Rgb::BLACK,
            single_refraction: false,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ambient.0.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidArgument("ambient components must lie in [0, 1]"));
        }
        if self.truncation_radiance.0.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("truncation radiance must be non-negative"));
        }
        Ok(())
    }

    /// Recursion budget actually used by [`trace`].
    pub fn effective_depth(&self) -> u32 {
        if self.single_refraction {
            self.depth.min(1)
        } else {
            self.depth
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Medium {
    Internal,
    External,
}

/// How a node without an interface event ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    /// External ray leaving the scene; sees ambient light.
    Escape,
    /// Recursion budget exhausted; sees the truncation radiance.
    Truncated,
    /// Single-refraction mode: the internal ray leaves the box unbent.
    PassThrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceNode {
    pub ray: Ray,
    pub medium: Medium,
    pub t_start: f64,
    /// `None` for escaping rays.
    pub t_end: Option<f64>,
    /// Interface crossed at `t_end`, if it was traced.
    pub event: Option<InterfaceEvent>,
    /// Weight of the reflected child (0 in single-refraction mode).
    pub reflectance: f64,
    /// Weight of the refracted child (1 in single-refraction mode).
    pub transmittance: f64,
    pub reflected: Option<usize>,
    pub refracted: Option<usize>,
    pub terminal: Option<Terminal>,
    /// Interface events on the path from the root to the start of this node.
    pub events_before: u32,
    pub parent: Option<usize>,
}

impl TraceNode {
    pub fn is_internal(&self) -> bool {
        self.medium == Medium::Internal
    }

    /// Length of the node's parametric extent, `None` when open.
    pub fn length(&self) -> Option<f64> {
        self.t_end.map(|e| e - self.t_start)
    }
}

/// All sub-rays generated from one camera ray. Children always have larger
/// indices than their parent; index 0 is the camera ray.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RayTree {
    pub nodes: Vec<TraceNode>,
}

impl RayTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TraceNode {
        &self.nodes[0]
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = (usize, &TraceNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_internal())
    }

    /// Whether the camera ray reaches the box at all.
    pub fn hits_box(&self) -> bool {
        self.nodes.len() > 1 || self.nodes.first().is_some_and(|n| n.t_end.is_some())
    }
}

struct Tracer<'a> {
    bx: &'a OrientedBox,
    cfg: &'a TraceConfig,
    budget: u32,
    nodes: Vec<TraceNode>,
}

impl Tracer<'_> {
    fn push(&mut self, ray: Ray, medium: Medium, events_before: u32, parent: Option<usize>) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(TraceNode {
            ray,
            medium,
            t_start: 0.0,
            t_end: None,
            event: None,
            reflectance: 0.0,
            transmittance: 0.0,
            reflected: None,
            refracted: None,
            terminal: None,
            events_before,
            parent,
        });
        idx
    }

    fn spawn(&mut self, ray: Ray, medium: Medium, events_before: u32, parent: Option<usize>) -> Result<usize> {
        let idx = self.push(ray, medium, events_before, parent);
        match medium {
            Medium::External => self.extend_external(idx)?,
            Medium::Internal => self.extend_internal(idx)?,
        }
        Ok(idx)
    }

    fn extend_external(&mut self, idx: usize) -> Result<()> {
        let node = &self.nodes[idx];
        let ray = node.ray;
        let events = node.events_before;
        // The box is convex: a ray leaving its surface never comes back.
        let hit = match self.bx.intersect(&ray) {
            Some(h) if h.t_enter > SURFACE_EPS => h,
            _ => {
                self.nodes[idx].terminal = Some(Terminal::Escape);
                return Ok(());
            }
        };
        self.nodes[idx].t_end = Some(hit.t_enter);
        if events >= self.budget {
            self.nodes[idx].terminal = Some(Terminal::Truncated);
            return Ok(());
        }
        let ev = interface_event(ray.direction, hit.normal_enter, 1.0, self.bx.ior, true)?;
        let point = ray.at(hit.t_enter);
        let (r, t) = if self.cfg.single_refraction {
            (0.0, 1.0)
        } else {
            (ev.reflectance, ev.transmittance)
        };
        {
            let n = &mut self.nodes[idx];
            n.event = Some(ev);
            n.reflectance = r;
            n.transmittance = t;
        }
        if !self.cfg.single_refraction {
            let child = self.spawn(Ray::new(point, ev.reflected), Medium::External, events + 1, Some(idx))?;
            self.nodes[idx].reflected = Some(child);
        }
        if let Some(dir) = ev.refracted {
            let child = self.spawn(Ray::new(point, dir), Medium::Internal, events + 1, Some(idx))?;
            self.nodes[idx].refracted = Some(child);
        }
        Ok(())
    }

    fn extend_internal(&mut self, idx: usize) -> Result<()> {
        let node = &self.nodes[idx];
        let ray = node.ray;
        let events = node.events_before;
        let (t_exit, normal_exit) = match self.bx.intersect(&ray) {
            Some(h) => (h.t_exit.max(0.0), h.normal_exit),
            // Starts on an edge and points straight out of an adjacent face.
            None => match self.bx.leaving_normal(ray.origin, ray.direction) {
                Some(n) => (0.0, n),
                None => {
                    return Err(Error::MalformedTree {
                        node: idx,
                        reason: "internal ray does not lie in the box",
                    })
                }
            },
        };
        self.nodes[idx].t_end = Some(t_exit);
        if self.cfg.single_refraction {
            self.nodes[idx].terminal = Some(Terminal::PassThrough);
            return Ok(());
        }
        if events >= self.budget {
            self.nodes[idx].terminal = Some(Terminal::Truncated);
            return Ok(());
        }
        let ev = interface_event(ray.direction, -normal_exit, 1.0, self.bx.ior, false)?;
        let point = ray.at(t_exit);
        {
            let n = &mut self.nodes[idx];
            n.event = Some(ev);
            n.reflectance = ev.reflectance;
            n.transmittance = ev.transmittance;
        }
        let child = self.spawn(Ray::new(point, ev.reflected), Medium::Internal, events + 1, Some(idx))?;
        self.nodes[idx].reflected = Some(child);
        if let Some(dir) = ev.refracted {
            let child = self.spawn(Ray::new(point, dir), Medium::External, events + 1, Some(idx))?;
            self.nodes[idx].refracted = Some(child);
        }
        Ok(())
    }
}

/// Expands a camera ray into its tree of reflected and refracted sub-rays.
pub fn trace(camera_ray: &Ray, bx: &OrientedBox, cfg: &TraceConfig) -> Result<RayTree> {
    let mut tracer = Tracer {
        bx,
        cfg,
        budget: cfg.effective_depth(),
        nodes: Vec::with_capacity(8),
    };
    tracer.spawn(*camera_ray, Medium::External, 0, None)?;
    Ok(RayTree { nodes: tracer.nodes })
}

/// Tree of a ray crossing the box volume as if it were made of air: one
/// unbent internal segment between the entry and exit points. Used to bound
/// the neural field in scenes without glass.
pub fn trace_open(camera_ray: &Ray, bx: &OrientedBox, cfg: &TraceConfig) -> Result<RayTree> {
    let air = OrientedBox { ior: 1.0, ..*bx };
    let cfg = TraceConfig {
        single_refraction: true,
        depth: cfg.depth.max(1),
        ..*cfg
    };
    trace(camera_ray, &air, &cfg)
}

/// Tree consisting of the camera ray only, used when there is no box.
pub fn trace_without_box(camera_ray: &Ray) -> RayTree {
    RayTree {
        nodes: vec![TraceNode {
            ray: *camera_ray,
            medium: Medium::External,
            t_start: 0.0,
            t_end: None,
            event: None,
            reflectance: 0.0,
            transmittance: 0.0,
            reflected: None,
            refracted: None,
            terminal: Some(Terminal::Escape),
            events_before: 0,
            parent: None,
        }],
    }
}

/// Scalar type that colors are accumulated in: `f64` for plain rendering,
/// tape variables for training.
pub trait Accumulate: Copy + Add<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self> {}

impl<T> Accumulate for T where T: Copy + Add<Output = T> + Mul<Output = T> + Mul<f64, Output = T> {}

fn leaf_radiance(term: Terminal, cfg: &TraceConfig) -> Rgb {
    match term {
        Terminal::Escape | Terminal::PassThrough => cfg.ambient,
        Terminal::Truncated => cfg.truncation_radiance,
    }
}

fn mix<T: Accumulate>(
    idx: usize,
    node: &TraceNode,
    reflected: Option<[T; 3]>,
    refracted: Option<[T; 3]>,
) -> Result<[T; 3]> {
    let weigh = |c: Option<[T; 3]>, w: f64, what: &'static str| -> Result<Option<[T; 3]>> {
        match c {
            Some(c) => Ok(Some([c[0] * w, c[1] * w, c[2] * w])),
            None if w > 0.0 => Err(Error::MalformedTree { node: idx, reason: what }),
            None => Ok(None),
        }
    };
    let r = weigh(reflected, node.reflectance, "missing reflected child")?;
    let t = weigh(refracted, node.transmittance, "missing refracted child")?;
    match (r, t) {
        (Some(a), Some(b)) => Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2]]),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::MalformedTree {
            node: idx,
            reason: "interface event without children",
        }),
    }
}

fn finish<T: Accumulate>(node: &TraceNode, down: [T; 3], emission: Option<([T; 3], T)>) -> [T; 3] {
    match (node.medium, emission) {
        (Medium::Internal, Some((c, tl))) => [c[0] + tl * down[0], c[1] + tl * down[1], c[2] + tl * down[2]],
        _ => down,
    }
}

/// Recursive reverse-order accumulation of a ray tree.
///
/// `internal` returns the emitted color `Ĉ` and transmittance `T_ℓ` of an
/// internal segment; `lift` turns constants into the accumulation type.
pub fn accumulate<T, F, L>(tree: &RayTree, cfg: &TraceConfig, mut internal: F, lift: L) -> Result<[T; 3]>
where
    T: Accumulate,
    F: FnMut(usize, &TraceNode) -> Result<([T; 3], T)>,
    L: Fn(f64) -> T,
{
    fn visit<T, F, L>(tree: &RayTree, idx: usize, cfg: &TraceConfig, internal: &mut F, lift: &L) -> Result<[T; 3]>
    where
        T: Accumulate,
        F: FnMut(usize, &TraceNode) -> Result<([T; 3], T)>,
        L: Fn(f64) -> T,
    {
        let node = &tree.nodes[idx];
        let down = if let Some(term) = node.terminal {
            let c = leaf_radiance(term, cfg);
            [lift(c[0]), lift(c[1]), lift(c[2])]
        } else if node.event.is_some() {
            let r = node
                .reflected
                .map(|c| visit(tree, c, cfg, internal, lift))
                .transpose()?;
            let t = node
                .refracted
                .map(|c| visit(tree, c, cfg, internal, lift))
                .transpose()?;
            mix(idx, node, r, t)?
        } else {
            return Err(Error::MalformedTree {
                node: idx,
                reason: "node has neither terminal nor event",
            });
        };
        let emission = if node.is_internal() {
            Some(internal(idx, node)?)
        } else {
            None
        };
        Ok(finish(node, down, emission))
    }

    if tree.is_empty() {
        return Err(Error::MalformedTree { node: 0, reason: "empty tree" });
    }
    visit(tree, 0, cfg, &mut internal, &lift)
}

/// Same result as [`accumulate`], evaluated as one bottom-up sweep over the
/// node list. Returns the value of every node.
pub fn accumulate_bottom_up<T, F, L>(
    tree: &RayTree,
    cfg: &TraceConfig,
    mut internal: F,
    lift: L,
) -> Result<Vec<[T; 3]>>
where
    T: Accumulate,
    F: FnMut(usize, &TraceNode) -> Result<([T; 3], T)>,
    L: Fn(f64) -> T,
{
    if tree.is_empty() {
        return Err(Error::MalformedTree { node: 0, reason: "empty tree" });
    }
    let mut values: Vec<Option<[T; 3]>> = vec![None; tree.len()];
    for idx in (0..tree.len()).rev() {
        let node = &tree.nodes[idx];
        let child = |c: Option<usize>| -> Result<Option<[T; 3]>> {
            match c {
                None => Ok(None),
                Some(c) if c <= idx || c >= values.len() => Err(Error::MalformedTree {
                    node: idx,
                    reason: "child index out of order",
                }),
                Some(c) => Ok(values[c]),
            }
        };
        let down = if let Some(term) = node.terminal {
            let c = leaf_radiance(term, cfg);
            [lift(c[0]), lift(c[1]), lift(c[2])]
        } else if node.event.is_some() {
            mix(idx, node, child(node.reflected)?, child(node.refracted)?)?
        } else {
            return Err(Error::MalformedTree {
                node: idx,
                reason: "node has neither terminal nor event",
            });
        };
        let emission = if node.is_internal() {
            Some(internal(idx, node)?)
        } else {
            None
        };
        values[idx] = Some(finish(node, down, emission));
    }
    Ok(values.into_iter().map(|v| v.expect("every node visited")).collect())
}

/// Per-channel `C^(1/2.2)`.
pub fn gamma_correct(linear: Rgb) -> Result<Rgb> {
    for &c in &linear.0 {
        if c < 0.0 || c.is_nan() {
            return Err(Error::NegativeRadiance(c));
        }
    }
    Ok(linear.map(|c| c.powf(1.0 / GAMMA)))
}

/// Linear radiance and its gamma-corrected intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelColor {
    pub linear: Rgb,
    pub intensity: Rgb,
}

impl PixelColor {
    /// Clamps negative components to zero and applies gamma once.
    pub fn from_linear(linear: Rgb) -> Self {
        let clamped = linear.map(|c| c.max(0.0));
        let intensity = gamma_correct(clamped).expect("clamped radiance is non-negative");
        Self { linear, intensity }
    }

    /// `round(255·intensity)` per channel, saturated to `[0, 255]`.
    pub fn to_u8(&self) -> [u8; 3] {
        quantize(self.intensity)
    }
}

pub fn quantize(intensity: Rgb) -> [u8; 3] {
    let q = |v: f64| (255.0 * v).round().clamp(0.0, 255.0) as u8;
    [q(intensity[0]), q(intensity[1]), q(intensity[2])]
}

/// Source of volume-rendered radiance for internal segments.
pub trait InternalRadiance {
    /// Emitted color and segment transmittance of internal node `index`.
    fn segment_radiance(&self, tree: &RayTree, index: usize) -> Result<(Rgb, f64)>;
}

/// Radiance of an internal segment of empty glass.
pub struct EmptyInterior;

impl InternalRadiance for EmptyInterior {
    fn segment_radiance(&self, _tree: &RayTree, _index: usize) -> Result<(Rgb, f64)> {
        Ok((Rgb::BLACK, 1.0))
    }
}

/// Linear color of a traced tree using `f64` accumulation.
pub fn shade_tree<S: InternalRadiance + ?Sized>(tree: &RayTree, source: &S, cfg: &TraceConfig) -> Result<Rgb> {
    let c = accumulate(
        tree,
        cfg,
        |idx, _| {
            let (c, t) = source.segment_radiance(tree, idx)?;
            Ok((c.0, t))
        },
        |v| v,
    )?;
    Ok(Rgb(c))
}

/// Camera ray through the pixel center, traced, accumulated and gamma
/// corrected.
pub fn render_pixel<S: InternalRadiance + ?Sized>(
    camera: &Camera,
    px: u32,
    py: u32,
    source: &S,
    bx: &OrientedBox,
    cfg: &TraceConfig,
) -> Result<PixelColor> {
    let k = &camera.intrinsics;
    if px >= k.width || py >= k.height {
        return Err(Error::InvalidArgument("pixel outside the image"));
    }
    let tree = trace(&camera.pixel_ray(px, py), bx, cfg)?;
    Ok(PixelColor::from_linear(shade_tree(&tree, source, cfg)?))
}
