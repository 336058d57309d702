//! Interface optics: mirror reflection, Snell refraction and unpolarized
//! Fresnel reflectance.
//!
//! Normals passed to these functions face the incident side, i.e.
//! `incident · normal < 0`. Transmittance is the intensity complement
//! `1 - R`; no solid-angle radiance scaling is applied.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// One reflection/refraction event at a dielectric interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceEvent {
    pub incident: Vec3,
    pub normal: Vec3,
    pub n1: f64,
    pub n2: f64,
    pub reflected: Vec3,
    /// `None` under total internal reflection.
    pub refracted: Option<Vec3>,
    pub reflectance: f64,
    pub transmittance: f64,
}

impl InterfaceEvent {
    #[inline]
    pub fn is_total_internal_reflection(&self) -> bool {
        self.refracted.is_none()
    }
}

fn check_unit(v: Vec3) -> Result<()> {
    if v.is_unit() {
        Ok(())
    } else {
        Err(Error::NotUnit { norm: v.length() })
    }
}

fn check_facing(incident: Vec3, normal: Vec3) -> Result<f64> {
    check_unit(incident)?;
    check_unit(normal)?;
    let cos_i = -incident.dot(normal);
    if cos_i <= 0.0 {
        return Err(Error::InvalidArgument("normal must face the incident side"));
    }
    Ok(cos_i.min(1.0))
}

/// Mirror direction `i - 2(i·n)n`.
pub fn reflect(incident: Vec3, normal: Vec3) -> Result<Vec3> {
    check_facing(incident, normal)?;
    Ok(reflect_unchecked(incident, normal))
}

#[inline]
pub(crate) fn reflect_unchecked(incident: Vec3, normal: Vec3) -> Vec3 {
    (incident - normal * (2.0 * incident.dot(normal))).normalize()
}

/// Snell refraction from index `n1` into `n2`; `None` on total internal
/// reflection.
pub fn refract(incident: Vec3, normal: Vec3, n1: f64, n2: f64) -> Result<Option<Vec3>> {
    let cos_i = check_facing(incident, normal)?;
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::InvalidArgument("refractive indices must be positive"));
    }
    Ok(refract_with_cos(incident, normal, cos_i, n1 / n2))
}

fn refract_with_cos(incident: Vec3, normal: Vec3, cos_i: f64, eta: f64) -> Option<Vec3> {
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return None;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Some((incident * eta + normal * (eta * cos_i - cos_t)).normalize())
}

/// Average of the s- and p-polarized Fresnel reflectances.
///
/// Returns exactly `1.0` beyond the critical angle.
pub fn fresnel_unpolarized(cos_i: f64, n1: f64, n2: f64) -> Result<f64> {
    if !(cos_i > 0.0 && cos_i <= 1.0) {
        return Err(Error::CosineOutOfRange(cos_i));
    }
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::InvalidArgument("refractive indices must be positive"));
    }
    let sin_t = n1 / n2 * (1.0 - cos_i * cos_i).max(0.0).sqrt();
    if sin_t >= 1.0 {
        return Ok(1.0);
    }
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t);
    let rp = (n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i);
    Ok((0.5 * (rs * rs + rp * rp)).clamp(0.0, 1.0))
}

/// Reflection, refraction and Fresnel split at a box face.
///
/// `normal` faces the incident side. With `entering` the ray travels from
/// `n_outside` into `n_inside`, otherwise the reverse.
pub fn interface_event(
    incident: Vec3,
    normal: Vec3,
    n_outside: f64,
    n_inside: f64,
    entering: bool,
) -> Result<InterfaceEvent> {
    let cos_i = check_facing(incident, normal)?;
    let (n1, n2) = if entering {
        (n_outside, n_inside)
    } else {
        (n_inside, n_outside)
    };
    let reflected = reflect_unchecked(incident, normal);
    let refracted = refract_with_cos(incident, normal, cos_i, n1 / n2);
    let reflectance = if refracted.is_none() {
        1.0
    } else {
        fresnel_unpolarized(cos_i, n1, n2)?
    };
    Ok(InterfaceEvent {
        incident,
        normal,
        n1,
        n2,
        reflected,
        refracted,
        reflectance,
        transmittance: 1.0 - reflectance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_at(theta_deg: f64) -> Vec3 {
        let t = theta_deg.to_radians();
        Vec3::new(t.sin(), 0.0, -t.cos())
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(-Vec3::Z, Vec3::Z).unwrap(), Vec3::Z);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let r = reflect(Vec3::new(h, 0.0, -h), Vec3::Z).unwrap();
        assert!((r - Vec3::new(h, 0.0, h)).length() < 1e-15);
        let g = Vec3::new(1.0, 0.0, -1e-6).normalize();
        let r = reflect(g, Vec3::Z).unwrap();
        assert!(r.z > 0.0 && (r.x - g.x).abs() < 1e-15);
        assert!(matches!(reflect(Vec3::new(0.0, 0.0, -2.0), Vec3::Z), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn snell_thirty_degrees() {
        let t = refract(dir_at(30.0), Vec3::Z, 1.0, 1.45).unwrap().unwrap();
        let theta_t = t.x.atan2(-t.z).to_degrees();
        let expected = (0.5f64 / 1.45).asin().to_degrees();
        assert!((theta_t - expected).abs() < 1e-9);
        assert!((theta_t - 20.171).abs() < 1e-3);
    }

    #[test]
    fn total_internal_reflection_at_fifty_degrees() {
        assert!(refract(dir_at(50.0), Vec3::Z, 1.45, 1.0).unwrap().is_none());
        let ev = interface_event(dir_at(50.0), Vec3::Z, 1.0, 1.45, false).unwrap();
        assert_eq!(ev.reflectance, 1.0);
        assert_eq!(ev.transmittance, 0.0);
        assert!(ev.is_total_internal_reflection());
    }

    #[test]
    fn normal_incidence_passes_straight() {
        for (n1, n2) in [(1.0, 1.45), (1.45, 1.0), (1.2, 2.5)] {
            let t = refract(-Vec3::Z, Vec3::Z, n1, n2).unwrap().unwrap();
            assert!((t + Vec3::Z).length() < 1e-15);
        }
    }

    #[test]
    fn fresnel_examples() {
        let r = fresnel_unpolarized(1.0, 1.0, 1.45).unwrap();
        let closed = ((1.0f64 - 1.45) / (1.0 + 1.45)).powi(2);
        assert!((r - closed).abs() < 1e-15);
        assert!((r - 0.033736).abs() < 1e-6);
        assert!(fresnel_unpolarized(1e-9, 1.0, 1.45).unwrap() > 0.9999);
        let c50 = 50f64.to_radians().cos();
        assert_eq!(fresnel_unpolarized(c50, 1.45, 1.0).unwrap(), 1.0);
        assert!(fresnel_unpolarized(0.0, 1.0, 1.45).is_err());
        assert!(fresnel_unpolarized(1.5, 1.0, 1.45).is_err());
    }

    #[test]
    fn entering_event_at_normal_incidence() {
        let ev = interface_event(-Vec3::Z, Vec3::Z, 1.0, 1.45, true).unwrap();
        assert!((ev.reflectance - 0.033736).abs() < 1e-6);
        assert!((ev.transmittance - 0.966264).abs() < 1e-6);
        assert!(ev.refracted.is_some());
    }

    #[test]
    fn forty_five_degree_event_matches_sp_average() {
        // independent evaluation of the s/p amplitude formulas
        let (n1, n2) = (1.0f64, 1.45f64);
        let ti = core::f64::consts::FRAC_PI_4;
        let tt = (n1 / n2 * ti.sin()).asin();
        let rs = ((ti - tt).sin() / (ti + tt).sin()).powi(2);
        let rp = ((ti - tt).tan() / (ti + tt).tan()).powi(2);
        let expected = 0.5 * (rs + rp);
        let ev = interface_event(dir_at(45.0), Vec3::Z, n1, n2, true).unwrap();
        assert!((ev.reflectance - expected).abs() < 1e-12);
        assert!((ev.reflectance - 0.043323).abs() < 1e-6);
    }
}
