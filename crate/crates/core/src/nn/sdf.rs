use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoding::Encoder;
use super::mlp::Mlp;
use crate::math::{Real, Vec3};
use crate::rng::Rng;

/// Lower bound of the sharpness `s` of the logistic density.
pub const MIN_SHARPNESS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdfConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Frequency factor of the sine activations.
    pub omega0: f64,
    /// Hidden layer whose input is concatenated with the encoded position.
    pub skip_layer: Option<usize>,
    pub initial_sharpness: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 64,
            omega0: 30.0,
            skip_layer: None,
            initial_sharpness: 20.0,
        }
    }
}

impl SdfConfig {
    /// Eight 256-wide layers with a skip connection into the fifth.
    pub fn paper_scale() -> Self {
        Self {
            hidden_layers: 8,
            width: 256,
            skip_layer: Some(4),
            ..Self::default()
        }
    }
}

/// SIREN signed distance network `x ↦ g(x)` with a trainable sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfField<R> {
    pub config: SdfConfig,
    pub encoder: Encoder,
    pub mlp: Mlp<R>,
    /// `ln s`; keeping the logarithm keeps `s` positive.
    pub log_sharpness: f64,
}

/// Activations retained by [`SdfField::forward_with_gradient`].
///
/// Rows are stacked as `[values; ∂/∂x; ∂/∂y; ∂/∂z]`, each block `n` rows.
#[derive(Debug, Clone)]
pub struct SdfCache<R> {
    pub n: usize,
    inputs: Vec<Vec<R>>,
    pre: Vec<Vec<R>>,
}

/// Result of a batched evaluation with spatial gradients.
#[derive(Debug, Clone)]
pub struct SdfBatch<R> {
    pub values: Vec<R>,
    pub gradients: Vec<[R; 3]>,
    pub cache: SdfCache<R>,
}

impl<R: Real> SdfField<R> {
    /// SIREN-initialized network (not yet shaped into a sphere; see
    /// [`super::init_geometric`]).
    pub fn new(config: SdfConfig, encoder: Encoder, rng: &mut Rng) -> Self {
        let d0 = encoder.dim();
        let mut dims = Vec::with_capacity(config.hidden_layers + 1);
        let mut prev = d0;
        for l in 0..config.hidden_layers {
            let fan_in = if config.skip_layer == Some(l) && l > 0 { prev + d0 } else { prev };
            dims.push((fan_in, config.width));
            prev = config.width;
        }
        dims.push((prev, 1));
        let mut mlp = Mlp::zeros(&dims);
        let omega = config.omega0;
        for (i, l) in mlp.layers.clone().iter().enumerate() {
            let fi = l.fan_in as f64;
            let bound = if i == 0 { 1.0 / fi } else { (6.0 / fi).sqrt() / omega };
            let bias_bound = 1.0 / fi.sqrt();
            let raw = if encoder.include_raw { 3 } else { 0 };
            for (j, p) in mlp.params[l.weights()].iter_mut().enumerate() {
                // Features of frequency 2^k start 2^k times weaker so the
                // initial field is smooth.
                let col = j % l.fan_in;
                let scale = if i == 0 && col >= raw {
                    0.5f64.powi(((col - raw) / 6) as i32)
                } else {
                    1.0
                };
                *p = R::from_f64(rng.random_range(-bound..bound) * scale);
            }
            let bias_bound = if i + 1 == dims.len() { 0.0 } else { bias_bound };
            for p in &mut mlp.params[l.bias()] {
                *p = if bias_bound > 0.0 {
                    R::from_f64(rng.random_range(-bias_bound..bias_bound))
                } else {
                    R::zero()
                };
            }
        }
        Self {
            config,
            encoder,
            mlp,
            log_sharpness: config.initial_sharpness.ln(),
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.log_sharpness.exp()
    }

    /// Keeps `s` above [`MIN_SHARPNESS`].
    pub fn clamp_sharpness(&mut self) {
        self.log_sharpness = self.log_sharpness.max(MIN_SHARPNESS.ln());
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn hidden(&self) -> usize {
        self.mlp.layers.len() - 1
    }

    fn skip_at(&self, l: usize) -> bool {
        l > 0 && self.config.skip_layer == Some(l)
    }

    /// Concatenates `[a | a0] / √2` row by row.
    fn concat_skip(a: &[R], wa: usize, a0: &[R], w0: usize, rows: usize) -> Vec<R> {
        let scale = R::from_f64(core::f64::consts::FRAC_1_SQRT_2);
        let mut out = Vec::with_capacity(rows * (wa + w0));
        for r in 0..rows {
            out.extend(a[r * wa..(r + 1) * wa].iter().map(|&v| v * scale));
            out.extend(a0[r * w0..(r + 1) * w0].iter().map(|&v| v * scale));
        }
        out
    }

    /// Values only, for sampling and mesh extraction.
    pub fn forward(&self, xs: &[Vec3]) -> Vec<R> {
        let n = xs.len();
        if n == 0 {
            return Vec::new();
        }
        let d0 = self.encoder.dim();
        let mut enc = vec![0.0f64; d0];
        let mut a0 = Vec::with_capacity(n * d0);
        for &x in xs {
            self.encoder.encode_into(x, &mut enc);
            a0.extend(enc.iter().map(|&v| R::from_f64(v)));
        }
        let omega = R::from_f64(self.config.omega0);
        let mut a = a0.clone();
        let mut width = d0;
        for l in 0..self.hidden() {
            if self.skip_at(l) {
                a = Self::concat_skip(&a, width, &a0, d0, n);
            }
            let fo = self.mlp.layers[l].fan_out;
            let mut z = vec![R::zero(); n * fo];
            self.mlp.linear_forward(l, &a, n, &mut z, n);
            for v in &mut z {
                *v = (omega * *v).sin();
            }
            a = z;
            width = fo;
        }
        let _ = width;
        let mut out = vec![R::zero(); n];
        self.mlp.linear_forward(self.hidden(), &a, n, &mut out, n);
        out
    }

    /// Values and exact spatial gradients, keeping what the backward pass
    /// needs. Gradients are propagated as three tangent streams through
    /// every layer alongside the values.
    pub fn forward_with_gradient(&self, xs: &[Vec3]) -> SdfBatch<R> {
        let n = xs.len();
        let d0 = self.encoder.dim();
        let rows = 4 * n;
        let mut a0 = vec![R::zero(); rows * d0];
        let mut enc = vec![0.0f64; d0];
        let mut jac = vec![0.0f64; 3 * d0];
        for (i, &x) in xs.iter().enumerate() {
            self.encoder.encode_with_jacobian(x, &mut enc, &mut jac);
            for (dst, &v) in a0[i * d0..(i + 1) * d0].iter_mut().zip(&enc) {
                *dst = R::from_f64(v);
            }
            for k in 0..3 {
                let row = (k + 1) * n + i;
                for (dst, &v) in a0[row * d0..(row + 1) * d0].iter_mut().zip(&jac[k * d0..(k + 1) * d0]) {
                    *dst = R::from_f64(v);
                }
            }
        }

        let omega = R::from_f64(self.config.omega0);
        let hidden = self.hidden();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        let mut a = a0.clone();
        let mut width = d0;
        for l in 0..hidden {
            if self.skip_at(l) {
                a = Self::concat_skip(&a, width, &a0, d0, rows);
            }
            let fo = self.mlp.layers[l].fan_out;
            let mut z = vec![R::zero(); rows * fo];
            self.mlp.linear_forward(l, &a, rows, &mut z, n);
            let mut next = vec![R::zero(); rows * fo];
            let (val_next, tan_next) = next.split_at_mut(n * fo);
            let (z_val, z_tan) = z.split_at(n * fo);
            for (j, (&zv, out)) in z_val.iter().zip(val_next.iter_mut()).enumerate() {
                let (s, c) = (omega * zv).sin_cos();
                *out = s;
                let dc = omega * c;
                for k in 0..3 {
                    let idx = k * n * fo + j;
                    tan_next[idx] = dc * z_tan[idx];
                }
            }
            inputs.push(a);
            pre.push(z);
            a = next;
            width = fo;
        }
        let mut out = vec![R::zero(); rows];
        self.mlp.linear_forward(hidden, &a, rows, &mut out, n);
        inputs.push(a);

        let values = out[..n].to_vec();
        let gradients = (0..n).map(|i| [out[n + i], out[2 * n + i], out[3 * n + i]]).collect();
        SdfBatch {
            values,
            gradients,
            cache: SdfCache { n, inputs, pre },
        }
    }

    /// Reverse pass through [`Self::forward_with_gradient`].
    ///
    /// `d_values[i]` and `d_gradients[i]` are the loss adjoints of `g(x_i)`
    /// and `∇g(x_i)`; parameter gradients are added into `grad`.
    pub fn backward(&self, cache: &SdfCache<R>, d_values: &[R], d_gradients: &[[R; 3]], grad: &mut [R]) {
        let n = cache.n;
        assert_eq!(d_values.len(), n);
        assert_eq!(d_gradients.len(), n);
        assert_eq!(grad.len(), self.param_count());
        if n == 0 {
            return;
        }
        let rows = 4 * n;
        let hidden = self.hidden();
        let d0 = self.encoder.dim();
        let omega = R::from_f64(self.config.omega0);
        let omega2 = omega * omega;

        let mut d_out = vec![R::zero(); rows];
        d_out[..n].copy_from_slice(d_values);
        for (i, g) in d_gradients.iter().enumerate() {
            for k in 0..3 {
                d_out[(k + 1) * n + i] = g[k];
            }
        }
        let fi = self.mlp.layers[hidden].fan_in;
        let mut d_a = vec![R::zero(); rows * fi];
        self.mlp
            .linear_backward(hidden, &cache.inputs[hidden], &d_out, rows, n, grad, Some(&mut d_a));

        for l in (0..hidden).rev() {
            let fo = self.mlp.layers[l].fan_out;
            let z = &cache.pre[l];
            let mut d_z = vec![R::zero(); rows * fo];
            {
                let (dz_val, dz_tan) = d_z.split_at_mut(n * fo);
                let (da_val, da_tan) = d_a.split_at(n * fo);
                let (z_val, z_tan) = z.split_at(n * fo);
                for j in 0..n * fo {
                    let (s, c) = (omega * z_val[j]).sin_cos();
                    let dc = omega * c;
                    let mut acc = da_val[j] * dc;
                    for k in 0..3 {
                        let idx = k * n * fo + j;
                        acc -= da_tan[idx] * omega2 * s * z_tan[idx];
                        dz_tan[idx] = da_tan[idx] * dc;
                    }
                    dz_val[j] = acc;
                }
            }
            let fi = self.mlp.layers[l].fan_in;
            if l == 0 {
                self.mlp.linear_backward(l, &cache.inputs[l], &d_z, rows, n, grad, None);
                break;
            }
            let mut d_in = vec![R::zero(); rows * fi];
            self.mlp
                .linear_backward(l, &cache.inputs[l], &d_z, rows, n, grad, Some(&mut d_in));
            if self.skip_at(l) {
                let wa = fi - d0;
                let scale = R::from_f64(core::f64::consts::FRAC_1_SQRT_2);
                let mut trimmed = Vec::with_capacity(rows * wa);
                for r in 0..rows {
                    trimmed.extend(d_in[r * fi..r * fi + wa].iter().map(|&v| v * scale));
                }
                d_a = trimmed;
            } else {
                d_a = d_in;
            }
        }
    }

    /// Single-point value and gradient in `f64`.
    pub fn eval(&self, x: Vec3) -> (f64, Vec3) {
        let b = self.forward_with_gradient(&[x]);
        let g = b.gradients[0];
        (b.values[0].as_f64(), Vec3::new(g[0].as_f64(), g[1].as_f64(), g[2].as_f64()))
    }

    /// Parameter vector converted to another precision.
    pub fn cast<S: Real>(&self) -> SdfField<S> {
        SdfField {
            config: self.config,
            encoder: self.encoder,
            mlp: Mlp {
                layers: self.mlp.layers.clone(),
                params: self.mlp.params.iter().map(|p| S::from_f64(p.as_f64())).collect(),
            },
            log_sharpness: self.log_sharpness,
        }
    }
}
