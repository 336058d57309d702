#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::math::{Rgb, Vec3};

/// Scalar field with a known spatial gradient.
pub trait SignedDistance {
    fn distance(&self, x: Vec3) -> f64;
    fn gradient(&self, x: Vec3) -> Vec3;

    fn eval(&self, x: Vec3) -> (f64, Vec3) {
        (self.distance(x), self.gradient(x))
    }
}

/// Exact signed distance primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    /// Box of half extents `half_extents` whose edges are rounded by `radius`.
    RoundedBox { center: Vec3, half_extents: Vec3, radius: f64 },
    /// Torus around the z axis.
    Torus { center: Vec3, major_radius: f64, minor_radius: f64 },
    /// `x·normal − offset`.
    Plane { normal: Vec3, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSdf {
    pub shape: Primitive,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub albedo: Option<Rgb>,
}

impl AnalyticSdf {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self {
            shape: Primitive::Sphere { center, radius },
            albedo: None,
        }
    }

    pub fn rounded_box(center: Vec3, half_extents: Vec3, radius: f64) -> Self {
        Self {
            shape: Primitive::RoundedBox {
                center,
                half_extents,
                radius,
            },
            albedo: None,
        }
    }

    pub fn torus(center: Vec3, major_radius: f64, minor_radius: f64) -> Self {
        Self {
            shape: Primitive::Torus {
                center,
                major_radius,
                minor_radius,
            },
            albedo: None,
        }
    }

    pub fn plane(normal: Vec3, offset: f64) -> Self {
        Self {
            shape: Primitive::Plane {
                normal: normal.normalize(),
                offset,
            },
            albedo: None,
        }
    }

    pub fn with_albedo(mut self, albedo: Rgb) -> Self {
        self.albedo = Some(albedo);
        self
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for unbounded shapes.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let (c, e) = match self.shape {
            Primitive::Sphere { center, radius } => (center, Vec3::splat(radius)),
            Primitive::RoundedBox { center, half_extents, .. } => (center, half_extents),
            Primitive::Torus {
                center,
                major_radius,
                minor_radius,
            } => (
                center,
                Vec3::new(major_radius + minor_radius, major_radius + minor_radius, minor_radius),
            ),
            Primitive::Plane { .. } => return None,
        };
        Some((c - e, c + e))
    }
}

impl SignedDistance for AnalyticSdf {
    fn distance(&self, x: Vec3) -> f64 {
        match self.shape {
            Primitive::Sphere { center, radius } => (x - center).length() - radius,
            Primitive::RoundedBox {
                center,
                half_extents,
                radius,
            } => {
                let q = (x - center).abs() - (half_extents - Vec3::splat(radius));
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).length();
                outside + q.max_elem().min(0.0) - radius
            }
            Primitive::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let p = x - center;
                let qx = p.x.hypot(p.y) - major_radius;
                qx.hypot(p.z) - minor_radius
            }
            Primitive::Plane { normal, offset } => x.dot(normal) - offset,
        }
    }

    fn gradient(&self, x: Vec3) -> Vec3 {
        match self.shape {
            Primitive::Sphere { center, .. } => (x - center).try_normalize().unwrap_or(Vec3::Z),
            Primitive::RoundedBox {
                center,
                half_extents,
                radius,
            } => {
                let p = x - center;
                let q = p.abs() - (half_extents - Vec3::splat(radius));
                let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                if let Some(dir) = outside.try_normalize() {
                    Vec3::new(sign(p.x) * dir.x, sign(p.y) * dir.y, sign(p.z) * dir.z)
                } else {
                    let k = if q.x >= q.y && q.x >= q.z {
                        0
                    } else if q.y >= q.z {
                        1
                    } else {
                        2
                    };
                    let mut g = [0.0; 3];
                    g[k] = sign(p[k]);
                    Vec3::from_array(g)
                }
            }
            Primitive::Torus { center, major_radius, .. } => {
                let p = x - center;
                let rxy = p.x.hypot(p.y);
                let (ux, uy) = if rxy > 0.0 { (p.x / rxy, p.y / rxy) } else { (1.0, 0.0) };
                let q = Vec3::new(rxy - major_radius, p.z, 0.0);
                match q.try_normalize() {
                    Some(d) => Vec3::new(ux * d.x, uy * d.x, d.y),
                    None => Vec3::Z,
                }
            }
            Primitive::Plane { normal, .. } => normal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn fd_gradient(f: &AnalyticSdf, x: Vec3) -> Vec3 {
        let h = 1e-6;
        let d = |e: Vec3| (f.distance(x + e * h) - f.distance(x - e * h)) / (2.0 * h);
        Vec3::new(d(Vec3::X), d(Vec3::Y), d(Vec3::Z))
    }

    #[test]
    fn sphere_example() {
        let s = AnalyticSdf::sphere(Vec3::ZERO, 0.4);
        let (v, g) = s.eval(Vec3::new(0.4, 0.0, 0.0));
        assert_eq!(v, 0.0);
        assert_eq!(g, Vec3::X);
    }

    #[test]
    fn unit_gradients_away_from_medial_axes() {
        let shapes = [
            AnalyticSdf::sphere(Vec3::new(0.1, 0.0, -0.1), 0.4),
            AnalyticSdf::rounded_box(Vec3::ZERO, Vec3::new(0.4, 0.3, 0.2), 0.05),
            AnalyticSdf::torus(Vec3::ZERO, 0.35, 0.12),
            AnalyticSdf::plane(Vec3::new(1.0, 2.0, 2.0), 0.1),
        ];
        let mut r = rng::stream(3, &[]);
        for s in &shapes {
            let mut checked = 0;
            while checked < 200 {
                let x = Vec3::new(
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                );
                let g = s.gradient(x);
                let fd = fd_gradient(s, x);
                // Finite differences disagree with the exact gradient only
                // within h of a medial-axis kink; skip those points.
                if (fd - g).length() > 1e-4 {
                    continue;
                }
                assert!((g.length() - 1.0).abs() < 1e-6, "{s:?} at {x:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn rounded_box_distances() {
        let b = AnalyticSdf::rounded_box(Vec3::ZERO, Vec3::splat(0.5), 0.1);
        assert!((b.distance(Vec3::new(0.7, 0.0, 0.0)) - 0.2).abs() < 1e-12);
        assert!((b.distance(Vec3::ZERO) + 0.5).abs() < 1e-12);
        let corner = Vec3::splat(0.4) + Vec3::splat(1.0).normalize() * 0.1;
        assert!(b.distance(corner).abs() < 1e-12);
    }

    #[test]
    fn torus_distances() {
        let t = AnalyticSdf::torus(Vec3::ZERO, 0.3, 0.1);
        assert!((t.distance(Vec3::new(0.3, 0.0, 0.0)) + 0.1).abs() < 1e-12);
        assert!((t.distance(Vec3::new(0.0, 0.5, 0.0)) - 0.1).abs() < 1e-12);
        assert!((t.distance(Vec3::ZERO) - 0.2).abs() < 1e-12);
    }
}
