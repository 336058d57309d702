use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Frequency encoding of positions and view directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositionalEncoding {
    pub num_freqs_position: usize,
    pub num_freqs_direction: usize,
    pub include_raw_input: bool,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        Self {
            num_freqs_position: 6,
            num_freqs_direction: 4,
            include_raw_input: true,
        }
    }
}

impl PositionalEncoding {
    pub fn position(&self) -> Encoder {
        Encoder {
            num_freqs: self.num_freqs_position,
            include_raw: self.include_raw_input,
        }
    }

    pub fn direction(&self) -> Encoder {
        Encoder {
            num_freqs: self.num_freqs_direction,
            include_raw: self.include_raw_input,
        }
    }
}

/// `x ↦ [x, sin(2^k π x), cos(2^k π x)]_{k < L}`, applied per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub num_freqs: usize,
    pub include_raw: bool,
}

impl Encoder {
    pub fn dim(&self) -> usize {
        (if self.include_raw { 3 } else { 0 }) + 6 * self.num_freqs
    }

    /// Writes the encoding of `x` into `out[..self.dim()]`.
    pub fn encode_into(&self, x: Vec3, out: &mut [f64]) {
        let mut o = 0;
        if self.include_raw {
            out[..3].copy_from_slice(&x.to_array());
            o = 3;
        }
        let mut freq = PI;
        for _ in 0..self.num_freqs {
            for c in 0..3 {
                out[o + c] = (freq * x[c]).sin();
                out[o + 3 + c] = (freq * x[c]).cos();
            }
            o += 6;
            freq *= 2.0;
        }
    }

    pub fn encode(&self, x: Vec3) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.dim()];
        self.encode_into(x, &mut v);
        v
    }

    /// Encoding plus its derivative along each input axis: `jac` holds three
    /// consecutive rows of length `dim()`, row `k` being `∂ encode(x) / ∂ x_k`.
    pub fn encode_with_jacobian(&self, x: Vec3, out: &mut [f64], jac: &mut [f64]) {
        let d = self.dim();
        jac[..3 * d].iter_mut().for_each(|v| *v = 0.0);
        let mut o = 0;
        if self.include_raw {
            out[..3].copy_from_slice(&x.to_array());
            for k in 0..3 {
                jac[k * d + k] = 1.0;
            }
            o = 3;
        }
        let mut freq = PI;
        for _ in 0..self.num_freqs {
            for c in 0..3 {
                let (s, co) = (freq * x[c]).sin_cos();
                out[o + c] = s;
                out[o + 3 + c] = co;
                jac[c * d + o + c] = freq * co;
                jac[c * d + o + 3 + c] = -freq * s;
            }
            o += 6;
            freq *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        let e = PositionalEncoding::default();
        assert_eq!(e.position().dim(), 39);
        assert_eq!(e.direction().dim(), 27);
        let bare = Encoder { num_freqs: 3, include_raw: false };
        assert_eq!(bare.dim(), 18);
    }

    #[test]
    fn zero_input() {
        let v = PositionalEncoding::default().position().encode(Vec3::ZERO);
        for k in 0..6 {
            let base = 3 + 6 * k;
            assert_eq!(&v[base..base + 3], &[0.0; 3]);
            assert_eq!(&v[base + 3..base + 6], &[1.0; 3]);
        }
        assert_eq!(&v[..3], &[0.0; 3]);
    }

    #[test]
    fn no_frequencies_is_identity() {
        let e = Encoder { num_freqs: 0, include_raw: true };
        let x = Vec3::new(0.3, -0.2, 0.9);
        assert_eq!(e.encode(x), x.to_array().to_vec());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let e = PositionalEncoding::default().position();
        let x = Vec3::new(0.13, -0.27, 0.41);
        let d = e.dim();
        let mut out = alloc::vec![0.0; d];
        let mut jac = alloc::vec![0.0; 3 * d];
        e.encode_with_jacobian(x, &mut out, &mut jac);
        assert_eq!(out, e.encode(x));
        let h = 1e-6;
        for (k, jac) in jac.chunks(d).enumerate() {
            let mut dx = [0.0; 3];
            dx[k] = h;
            let dx = Vec3::from_array(dx);
            let p = e.encode(x + dx);
            let m = e.encode(x - dx);
            for i in 0..d {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - jac[i]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k} i={i}");
            }
        }
    }
}
