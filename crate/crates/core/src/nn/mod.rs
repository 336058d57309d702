//! Neural fields: positional encoding, the SIREN signed distance network,
//! the appearance network, their batched backward passes, and analytic
//! signed distance oracles.

mod adam;
mod analytic;
mod appearance;
mod encoding;
mod mlp;
mod sdf;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adam::{Adam, LearningRate};
pub use analytic::{AnalyticSdf, Primitive, SignedDistance};
pub use appearance::{AppearanceCache, AppearanceConfig, AppearanceField, AppearanceQuery};
pub use encoding::{Encoder, PositionalEncoding};
pub use mlp::{LayerShape, Mlp};
pub use sdf::{SdfBatch, SdfCache, SdfConfig, SdfField, MIN_SHARPNESS};

pub use crate::math::Real;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rng;

/// Fitting schedule that shapes a fresh network into a sphere distance field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometricInit {
    pub radius: f64,
    pub max_steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for GeometricInit {
    fn default() -> Self {
        Self {
            radius: 0.5,
            max_steps: 3000,
            batch: 256,
            learning_rate: 1e-3,
        }
    }
}

/// Post-initialization statistics on fresh random probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricInitReport {
    pub steps: usize,
    /// `max |g(r·u)|` over unit directions `u`.
    pub max_surface_error: f64,
    pub value_at_center: f64,
    /// `min g(0.95·u)`.
    pub min_outer_value: f64,
    /// Mean `|‖∇g‖ − 1|` at interior points.
    pub mean_eikonal_error: f64,
}

impl GeometricInitReport {
    pub fn passed(&self) -> bool {
        self.max_surface_error < 0.15
            && self.value_at_center < 0.0
            && self.min_outer_value > 0.0
            && self.mean_eikonal_error < 0.5
    }
}

fn unit_direction(r: &mut rng::Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(r),
            StandardNormal.sample(r),
            StandardNormal.sample(r),
        );
        if let Some(u) = v.try_normalize() {
            return u;
        }
    }
}

fn ball_point(r: &mut rng::Rng, radius: f64) -> Vec3 {
    unit_direction(r) * (radius * r.random::<f64>().cbrt())
}

/// Measures the initialization gates on 1000 probes drawn from `seed`.
pub fn geometric_init_report<R: Real>(field: &SdfField<R>, radius: f64, seed: u64) -> GeometricInitReport {
    let mut r = rng::stream(seed, &[0x6a7e]);
    let dirs: Vec<Vec3> = (0..1000).map(|_| unit_direction(&mut r)).collect();
    let on: Vec<Vec3> = dirs.iter().map(|&u| u * radius).collect();
    let outer: Vec<Vec3> = dirs.iter().map(|&u| u * 0.95).collect();
    let interior: Vec<Vec3> = (0..1000).map(|_| ball_point(&mut r, 0.95)).collect();
    let max_abs = |v: Vec<R>| v.iter().fold(0.0f64, |m, x| m.max(x.as_f64().abs()));
    let eik = field.forward_with_gradient(&interior);
    let mean_eikonal_error = eik
        .gradients
        .iter()
        .map(|g| {
            let n = (g[0].as_f64().powi(2) + g[1].as_f64().powi(2) + g[2].as_f64().powi(2)).sqrt();
            (n - 1.0).abs()
        })
        .sum::<f64>()
        / interior.len() as f64;
    GeometricInitReport {
        steps: 0,
        max_surface_error: max_abs(field.forward(&on)),
        value_at_center: field.forward(&[Vec3::ZERO])[0].as_f64(),
        min_outer_value: field
            .forward(&outer)
            .iter()
            .fold(f64::INFINITY, |m, x| m.min(x.as_f64())),
        mean_eikonal_error,
    }
}

/// Fits `field` to the sphere distance `‖x‖ − radius` (values and
/// gradients) until the initialization gates hold or `max_steps` is reached.
pub fn init_geometric<R: Real>(field: &mut SdfField<R>, init: &GeometricInit, seed: u64) -> Result<GeometricInitReport> {
    if !(init.radius > 0.0 && init.radius < 1.0) {
        return Err(Error::InvalidArgument("initial sphere radius must lie in (0, 1)"));
    }
    if init.batch == 0 {
        return Err(Error::InvalidArgument("initialization batch must be positive"));
    }
    let radius = init.radius;
    let mut master: Vec<f64> = field.mlp.params.iter().map(|p| p.as_f64()).collect();
    let mut adam = Adam::new(master.len());
    let mut grad = vec![R::zero(); master.len()];
    let mut grad64 = vec![0.0; master.len()];
    let mut report = geometric_init_report(field, radius, seed);
    let mut step = 0;
    while step < init.max_steps {
        if step % 100 == 0 && step > 0 {
            report = geometric_init_report(field, radius, seed);
            // A margin on the gates leaves room for the probe draw.
            if report.passed() && report.max_surface_error < 0.05 && report.mean_eikonal_error < 0.2 {
                break;
            }
        }
        let mut r = rng::stream(seed, &[0x1417, step as u64]);
        let xs: Vec<Vec3> = (0..init.batch)
            .map(|i| {
                if i % 2 == 0 {
                    ball_point(&mut r, 1.0)
                } else {
                    unit_direction(&mut r) * (radius + 0.1 * (2.0 * r.random::<f64>() - 1.0))
                }
            })
            .collect();
        let batch = field.forward_with_gradient(&xs);
        let inv = 1.0 / xs.len() as f64;
        let mut d_values = Vec::with_capacity(xs.len());
        let mut d_grads = Vec::with_capacity(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            let target_n = x.try_normalize().unwrap_or(Vec3::Z);
            let dv = 2.0 * (batch.values[i].as_f64() - (x.length() - radius)) * inv;
            d_values.push(R::from_f64(dv));
            let g = batch.gradients[i];
            d_grads.push([0, 1, 2].map(|k| R::from_f64(0.5 * 2.0 * (g[k].as_f64() - target_n[k]) * inv)));
        }
        grad.iter_mut().for_each(|g| *g = R::zero());
        field.backward(&batch.cache, &d_values, &d_grads, &mut grad);
        for (g64, g) in grad64.iter_mut().zip(&grad) {
            *g64 = g.as_f64();
        }
        adam.update(&mut master, &grad64, init.learning_rate);
        for (p, &m) in field.mlp.params.iter_mut().zip(&master) {
            *p = R::from_f64(m);
        }
        step += 1;
    }
    if step == init.max_steps {
        report = geometric_init_report(field, radius, seed);
    }
    report.steps = step;
    Ok(report)
}

#[cfg(test)]
mod tests;
