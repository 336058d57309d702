//! Synthetic scenes: analytic opaque objects in (or without) a glass box,
//! camera sampling on a sphere, and the oracle renderer that produces the
//! training images and masks.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, EPS_GEO};
use crate::math::{Mat3, Ray, Rgb, Vec3};
use crate::nn::{AnalyticSdf, Primitive, SignedDistance};
use crate::render::{shade_tree, trace, InternalRadiance, PixelColor, RayTree, TraceConfig};
use crate::rng;
use crate::volume::Segment;

/// Iteration cap of the oracle's sphere tracer.
pub const SPHERE_TRACE_STEPS: usize = 64;
/// Distance below which the sphere tracer reports a hit.
pub const SPHERE_TRACE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Opaque object; `None` leaves the box empty.
    pub object: Option<AnalyticSdf>,
    #[serde(rename = "box")]
    pub bx: OrientedBox,
    pub with_box: bool,
    pub ambient: Rgb,
    pub intrinsics: Intrinsics,
    pub num_views: usize,
    pub camera_radius: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object: Some(AnalyticSdf::sphere(Vec3::ZERO, 0.4).with_albedo(Rgb::splat(0.6))),
            bx: OrientedBox {
                center: Vec3::ZERO,
                rotation: Mat3::IDENTITY,
                half_extents: Vec3::splat(0.5),
                ior: 1.45,
            },
            with_box: true,
            ambient: Rgb::splat(0.8),
            intrinsics: Intrinsics::centered(260.0, 96, 96),
            num_views: 20,
            camera_radius: 5.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Checks the box, the scene normalization and object containment.
    pub fn validate(&self) -> Result<()> {
        self.bx.validate()?;
        if self.bx.center.length() + self.bx.bounding_radius() > 1.0 + EPS_GEO {
            return Err(Error::InvalidArgument("box must lie within the unit sphere"));
        }
        if self.num_views == 0 {
            return Err(Error::InvalidArgument("num_views must be at least 1"));
        }
        if !(self.camera_radius > self.bx.center.length() + self.bx.bounding_radius()) {
            return Err(Error::InvalidArgument("cameras must lie outside the box"));
        }
        let k = &self.intrinsics;
        if k.width == 0 || k.height == 0 || !(k.focal > 0.0) {
            return Err(Error::InvalidArgument("invalid camera intrinsics"));
        }
        if self.ambient.0.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("ambient radiance must be non-negative"));
        }
        if let Some(obj) = &self.object {
            if let Some(a) = obj.albedo {
                if a.0.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                    return Err(Error::InvalidArgument("albedo must lie in [0, 1]"));
                }
            }
            if !object_inside_box(obj, &self.bx) {
                return Err(Error::ObjectEscapesBox);
            }
        }
        Ok(())
    }

    /// Analytic radiance of the object, `albedo ⊙ ambient`.
    pub fn object_radiance(&self) -> Rgb {
        let albedo = self.object.and_then(|o| o.albedo).unwrap_or(Rgb::splat(1.0));
        albedo * self.ambient
    }
}

/// Whether the object lies inside the box. Spheres are tested exactly,
/// other shapes through their axis-aligned bounds.
pub fn object_inside_box(obj: &AnalyticSdf, bx: &OrientedBox) -> bool {
    match obj.shape {
        Primitive::Sphere { center, radius } => {
            let c = bx.to_local(center).abs();
            let h = bx.half_extents;
            c.x + radius <= h.x && c.y + radius <= h.y && c.z + radius <= h.z
        }
        Primitive::Plane { .. } => false,
        _ => match obj.bounds() {
            Some((lo, hi)) => (0..8).all(|i| {
                let p = Vec3::new(
                    if i & 1 == 0 { lo.x } else { hi.x },
                    if i & 2 == 0 { lo.y } else { hi.y },
                    if i & 4 == 0 { lo.z } else { hi.z },
                );
                bx.contains(p)
            }),
            None => false,
        },
    }
}

/// `n` cameras placed uniformly on a sphere around the origin, looking at it
/// with `+z` up. Positions too close to the poles are redrawn.
pub fn sample_cameras(n: usize, radius: f64, intrinsics: Intrinsics, seed: u64) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::InvalidArgument("at least one camera is required"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument("camera radius must be positive"));
    }
    let mut r = rng::stream(seed, &[0xca3e]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Vec3::new(
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
        );
        let Some(u) = v.try_normalize() else { continue };
        if u.z.abs() > 0.999 {
            continue;
        }
        out.push(Camera::look_at(intrinsics, u * radius, Vec3::ZERO, Vec3::Z)?);
    }
    Ok(out)
}

/// First parameter in `[t0, t1]` where the ray meets the zero level set.
pub fn sphere_trace<S: SignedDistance + ?Sized>(sdf: &S, ray: &Ray, t0: f64, t1: f64) -> Option<f64> {
    let mut t = t0;
    for _ in 0..SPHERE_TRACE_STEPS {
        if t > t1 {
            return None;
        }
        let d = sdf.distance(ray.at(t));
        if d < SPHERE_TRACE_TOLERANCE {
            return Some(t);
        }
        t += d;
    }
    None
}

/// Internal radiance of an analytic opaque object: a segment that hits the
/// object emits `albedo ⊙ ambient` and blocks everything behind it.
pub struct AnalyticInterior<'a> {
    pub object: Option<&'a AnalyticSdf>,
    pub radiance: Rgb,
}

impl InternalRadiance for AnalyticInterior<'_> {
    fn segment_radiance(&self, tree: &RayTree, index: usize) -> Result<(Rgb, f64)> {
        let Some(obj) = self.object else {
            return Ok((Rgb::BLACK, 1.0));
        };
        let seg = Segment::of_node(tree, index)?;
        match sphere_trace(obj, &seg.ray, seg.t_start, seg.t_end) {
            Some(_) => Ok((self.radiance, 0.0)),
            None => Ok((Rgb::BLACK, 1.0)),
        }
    }
}

/// Rendered pixel and its mask bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePixel {
    pub color: PixelColor,
    pub mask: bool,
}

/// Oracle color of one camera ray.
pub fn oracle_pixel(scene: &SceneSpec, ray: &Ray, cfg: &TraceConfig) -> Result<OraclePixel> {
    let cfg = TraceConfig {
        ambient: scene.ambient,
        ..*cfg
    };
    if !scene.with_box {
        let far = scene.camera_radius + scene.bx.bounding_radius() + scene.bx.center.length();
        let hit = scene
            .object
            .as_ref()
            .and_then(|o| sphere_trace(o, ray, 0.0, far))
            .is_some();
        let linear = if hit { scene.object_radiance() } else { scene.ambient };
        return Ok(OraclePixel {
            color: PixelColor::from_linear(linear),
            mask: hit,
        });
    }
    let tree = trace(ray, &scene.bx, &cfg)?;
    let interior = AnalyticInterior {
        object: scene.object.as_ref(),
        radiance: scene.object_radiance(),
    };
    let linear = shade_tree(&tree, &interior, &cfg)?;
    Ok(OraclePixel {
        color: PixelColor::from_linear(linear),
        mask: scene.bx.intersect(ray).is_some(),
    })
}

/// One rendered view: 8-bit RGB and a mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Vec<[u8; 3]>,
    pub mask: Vec<bool>,
}

impl View {
    pub fn pixel(&self, px: u32, py: u32) -> [u8; 3] {
        self.image[py as usize * self.camera.intrinsics.width as usize + px as usize]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Renders a full view with the oracle.
pub fn oracle_render(scene: &SceneSpec, camera: &Camera, cfg: &TraceConfig) -> Result<View> {
    let k = camera.intrinsics;
    let mut image = Vec::with_capacity(k.pixel_count());
    let mut mask = Vec::with_capacity(k.pixel_count());
    for py in 0..k.height {
        for px in 0..k.width {
            let p = oracle_pixel(scene, &camera.pixel_ray(px, py), cfg)?;
            image.push(p.color.to_u8());
            mask.push(p.mask);
        }
    }
    Ok(View {
        camera: *camera,
        image,
        mask,
    })
}

/// Scene description plus its rendered views.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: SceneSpec,
    pub trace: TraceConfig,
    pub views: Vec<View>,
}

/// Samples the cameras of `scene` and renders every view.
pub fn generate(scene: &SceneSpec, cfg: &TraceConfig) -> Result<Dataset> {
    scene.validate()?;
    cfg.validate()?;
    let cameras = sample_cameras(scene.num_views, scene.camera_radius, scene.intrinsics, scene.seed)?;
    #[cfg(feature = "parallel")]
    let views = {
        use rayon::prelude::*;
        cameras
            .par_iter()
            .map(|c| oracle_render(scene, c, cfg))
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let views = cameras
        .iter()
        .map(|c| oracle_render(scene, c, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scene: *scene,
        trace: *cfg,
        views,
    })
}
