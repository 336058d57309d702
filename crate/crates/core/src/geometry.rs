//! The transparent container: an oriented box and exact ray/box queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Ray, Vec3};

/// Geometric tolerance, in scene units.
pub const EPS_GEO: f64 = 1e-6;

/// Box with arbitrary pose. `rotation` maps local coordinates to world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rotation: Mat3,
    pub half_extents: Vec3,
    pub ior: f64,
}

/// Parametric interval over which a ray lies inside a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitInterval {
    pub t_enter: f64,
    pub t_exit: f64,
    /// Outward normal of the face crossed at `t_enter`.
    pub normal_enter: Vec3,
    /// Outward normal of the face crossed at `t_exit`.
    pub normal_exit: Vec3,
}

impl OrientedBox {
    pub fn new(center: Vec3, rotation: Mat3, half_extents: Vec3, ior: f64) -> Result<Self> {
        let b = Self {
            center,
            rotation,
            half_extents,
            ior,
        };
        b.validate()?;
        Ok(b)
    }

    /// Axis-aligned box centered at `center`.
    pub fn axis_aligned(center: Vec3, half_extents: Vec3, ior: f64) -> Result<Self> {
        Self::new(center, Mat3::IDENTITY, half_extents, ior)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::InvalidArgument("box center must be finite"));
        }
        if self.rotation.orthonormality_error() > 1e-9 {
            return Err(Error::InvalidArgument("box rotation is not orthonormal"));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("box rotation must have determinant +1"));
        }
        let h = self.half_extents;
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument("box half extents must be positive"));
        }
        if !(self.ior > 1.0 && self.ior < 3.0) {
            return Err(Error::InvalidArgument("box refractive index must lie in (1, 3)"));
        }
        Ok(())
    }

    #[inline]
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    #[inline]
    pub fn dir_to_local(&self, d: Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }

    #[inline]
    pub fn to_world(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.center
    }

    /// Radius of the sphere around the center that encloses the box.
    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.length()
    }

    /// The eight corners in world coordinates.
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.to_world(Vec3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    /// Closed containment test in the local frame, with tolerance [`EPS_GEO`].
    pub fn contains(&self, p: Vec3) -> bool {
        let l = self.to_local(p).abs();
        let h = self.half_extents;
        l.x <= h.x + EPS_GEO && l.y <= h.y + EPS_GEO && l.z <= h.z + EPS_GEO
    }

    /// Unsigned distance from `p` to the box boundary.
    pub fn distance_to_surface(&self, p: Vec3) -> f64 {
        let l = self.to_local(p).abs();
        let q = l - self.half_extents;
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).length();
        let inside = q.max_elem().min(0.0);
        outside + inside.abs()
    }

    /// Outward normal of the face through which a ray at surface point `p`
    /// with direction `d` leaves immediately, e.g. when `p` lies on an edge.
    /// Among the faces through `p` that `d` points out of, the one `d` is
    /// most aligned with wins.
    pub fn leaving_normal(&self, p: Vec3, d: Vec3) -> Option<Vec3> {
        let l = self.to_local(p);
        let ld = self.dir_to_local(d);
        let h = self.half_extents;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..3 {
            if (l[i].abs() - h[i]).abs() > EPS_GEO {
                continue;
            }
            let out = if l[i] >= 0.0 { ld[i] } else { -ld[i] };
            if out > 0.0 && best.is_none_or(|(_, b)| out > b) {
                best = Some((i, out));
            }
        }
        best.map(|(axis, _)| {
            let mut local = [0.0; 3];
            local[axis] = if l[axis] >= 0.0 { 1.0 } else { -1.0 };
            self.rotation * Vec3::from_array(local)
        })
    }

    /// Outward unit normal of the face containing `p`.
    ///
    /// Edge and corner ties go to the axis with the largest local-coordinate
    /// magnitude, then to the lowest axis index.
    pub fn surface_normal(&self, p: Vec3) -> Result<Vec3> {
        let l = self.to_local(p);
        let h = self.half_extents;
        let within = (0..3).all(|i| l[i].abs() <= h[i] + EPS_GEO);
        let mut best: Option<usize> = None;
        if within {
            for i in 0..3 {
                if (l[i].abs() - h[i]).abs() <= EPS_GEO {
                    match best {
                        Some(b) if l[b].abs() >= l[i].abs() => {}
                        _ => best = Some(i),
                    }
                }
            }
        }
        match best {
            Some(axis) => {
                let mut local = [0.0; 3];
                local[axis] = if l[axis] >= 0.0 { 1.0 } else { -1.0 };
                Ok(self.rotation * Vec3::from_array(local))
            }
            None => Err(Error::NotOnSurface {
                distance: self.distance_to_surface(p),
            }),
        }
    }

    /// Slab-method intersection in the box frame.
    ///
    /// Returns `None` when the line misses the box or the box lies entirely
    /// behind the origin (`t_exit <= 0`). `t_enter` is negative when the origin
    /// is inside.
    pub fn intersect(&self, ray: &Ray) -> Option<HitInterval> {
        let o = self.to_local(ray.origin);
        let d = self.dir_to_local(ray.direction);
        let h = self.half_extents;

        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut enter_axis = 0usize;
        let mut exit_axis = 0usize;
        let mut enter_sign = 1.0;
        let mut exit_sign = 1.0;

        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                // Parallel to this slab: inside it or a miss, no division.
                if o[i].abs() > h[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let t_lo = (-h[i] - o[i]) * inv;
            let t_hi = (h[i] - o[i]) * inv;
            let (near, far) = if t_lo <= t_hi { (t_lo, t_hi) } else { (t_hi, t_lo) };
            if near > t_enter {
                t_enter = near;
                enter_axis = i;
                enter_sign = if d[i] > 0.0 { -1.0 } else { 1.0 };
            }
            if far < t_exit {
                t_exit = far;
                exit_axis = i;
                exit_sign = if d[i] > 0.0 { 1.0 } else { -1.0 };
            }
        }

        if !(t_enter <= t_exit) || t_exit <= 0.0 || !t_enter.is_finite() {
            return None;
        }

        let axis_normal = |axis: usize, sign: f64| {
            let mut n = [0.0; 3];
            n[axis] = sign;
            self.rotation * Vec3::from_array(n)
        };
        Some(HitInterval {
            t_enter,
            t_exit,
            normal_enter: axis_normal(enter_axis, enter_sign),
            normal_exit: axis_normal(exit_axis, exit_sign),
        })
    }
}

/// Free-function form of [`OrientedBox::intersect`].
pub fn intersect_ray_box(ray: &Ray, b: &OrientedBox) -> Option<HitInterval> {
    b.intersect(ray)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn unit_box() -> OrientedBox {
        OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(1.0), 1.45).unwrap()
    }

    #[test]
    fn hit_from_outside() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = unit_box().intersect(&ray).unwrap();
        assert_eq!(hit.t_enter, 4.0);
        assert_eq!(hit.t_exit, 6.0);
        assert_eq!(hit.normal_enter, Vec3::Z);
        assert_eq!(hit.normal_exit, -Vec3::Z);
    }

    #[test]
    fn parallel_ray_outside_slab_misses() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::Y);
        assert!(unit_box().intersect(&ray).is_none());
    }

    #[test]
    fn origin_inside() {
        let ray = Ray::new(Vec3::ZERO, Vec3::X);
        let hit = unit_box().intersect(&ray).unwrap();
        assert_eq!(hit.t_enter, -1.0);
        assert_eq!(hit.t_exit, 1.0);
        assert_eq!(hit.normal_exit, Vec3::X);
    }

    #[test]
    fn box_behind_origin_is_a_miss() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::Z);
        assert!(unit_box().intersect(&ray).is_none());
    }

    #[test]
    fn normals() {
        let b = unit_box();
        assert_eq!(b.surface_normal(Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec3::Z);
        // edge: x wins the tie by axis order
        assert_eq!(b.surface_normal(Vec3::new(1.0, 1.0, 0.0)).unwrap(), Vec3::X);
        assert_eq!(b.surface_normal(Vec3::new(0.3, -1.0, 0.2)).unwrap(), -Vec3::Y);
        assert!(matches!(
            b.surface_normal(Vec3::new(0.0, 0.0, 0.5)),
            Err(Error::NotOnSurface { .. })
        ));
        assert!(b.surface_normal(Vec3::new(0.0, 0.0, 1.1)).is_err());
    }

    #[test]
    fn rotated_normal() {
        let rot = Mat3::rotation(Vec3::Z, FRAC_PI_2);
        let b = OrientedBox::new(Vec3::ZERO, rot, Vec3::new(1.0, 0.5, 0.5), 1.45).unwrap();
        // local +x face maps to world +y
        let p = b.to_world(Vec3::new(1.0, 0.1, 0.0));
        let n = b.surface_normal(p).unwrap();
        assert!((n - Vec3::Y).length() < 1e-12);
    }

    #[test]
    fn leaving_an_edge() {
        let b = OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(0.5), 1.45).unwrap();
        let edge = Vec3::new(-0.5, 0.2, 0.5);
        let d = Vec3::new(-0.6, 0.0, 0.8);
        assert!(b.intersect(&Ray::new(edge, d)).is_none());
        assert_eq!(b.leaving_normal(edge, d), Some(Vec3::Z));
        assert_eq!(b.leaving_normal(edge, Vec3::new(-0.8, 0.0, 0.6)), Some(-Vec3::X));
        assert_eq!(b.leaving_normal(edge, Vec3::new(0.6, 0.0, -0.8)), None);
        assert_eq!(b.leaving_normal(Vec3::ZERO, Vec3::X), None);
    }

    #[test]
    fn containment() {
        let b = unit_box();
        assert!(b.contains(Vec3::ZERO));
        assert!(b.contains(Vec3::new(0.0, 0.0, 1.0)));
        assert!(!b.contains(Vec3::new(0.0, 0.0, 1.0001)));
        let rot = Mat3::rotation(Vec3::new(1.0, 1.0, 0.0), 0.6);
        let rb = OrientedBox::new(Vec3::new(0.1, 0.2, 0.3), rot, Vec3::new(0.5, 0.3, 0.2), 1.5)
            .unwrap();
        let p = rb.center + rot * (rb.half_extents * 0.999);
        assert!(rb.contains(p));
        let q = rb.center + rot * (rb.half_extents * 1.01);
        assert!(!rb.contains(q));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(OrientedBox::axis_aligned(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0), 1.45).is_err());
        assert!(OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(1.0), 0.9).is_err());
        let reflect = Mat3::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        assert!(OrientedBox::new(Vec3::ZERO, reflect, Vec3::splat(1.0), 1.45).is_err());
    }
}
