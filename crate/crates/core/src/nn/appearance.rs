use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoding::Encoder;
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::math::{Real, Rgb, Vec3};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppearanceConfig {
    pub hidden_layers: usize,
    pub width: usize,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            width: 64,
        }
    }
}

/// View-dependent color network `(x, v, n) ↦ c` in linear radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceField<R> {
    pub config: AppearanceConfig,
    pub position_encoder: Encoder,
    pub direction_encoder: Encoder,
    pub mlp: Mlp<R>,
}

/// One query of the appearance network.
#[derive(Debug, Clone, Copy)]
pub struct AppearanceQuery {
    pub position: Vec3,
    pub direction: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone)]
pub struct AppearanceCache<R> {
    pub n: usize,
    inputs: Vec<Vec<R>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<R>>,
    /// Sigmoid outputs.
    out: Vec<R>,
}

impl<R: Real> AppearanceField<R> {
    pub fn new(config: AppearanceConfig, position_encoder: Encoder, direction_encoder: Encoder, rng: &mut Rng) -> Self {
        let d0 = position_encoder.dim() + direction_encoder.dim() + 3;
        let mut dims = Vec::with_capacity(config.hidden_layers + 1);
        let mut prev = d0;
        for _ in 0..config.hidden_layers {
            dims.push((prev, config.width));
            prev = config.width;
        }
        dims.push((prev, 3));
        let mut mlp = Mlp::zeros(&dims);
        let last = mlp.layers.len() - 1;
        for (i, l) in mlp.layers.clone().iter().enumerate() {
            // He initialization for ReLU layers, Glorot for the output layer.
            let fi = l.fan_in as f64;
            let bound = if i == last {
                (6.0 / (fi + l.fan_out as f64)).sqrt()
            } else {
                (6.0 / fi).sqrt()
            };
            for p in &mut mlp.params[l.weights()] {
                *p = R::from_f64(rng.random_range(-bound..bound));
            }
        }
        Self {
            config,
            position_encoder,
            direction_encoder,
            mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.position_encoder.dim() + self.direction_encoder.dim() + 3
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn encode(&self, queries: &[AppearanceQuery]) -> Vec<R> {
        let dx = self.position_encoder.dim();
        let dv = self.direction_encoder.dim();
        let d0 = dx + dv + 3;
        let mut buf = vec![0.0f64; d0];
        let mut a = Vec::with_capacity(queries.len() * d0);
        for q in queries {
            self.position_encoder.encode_into(q.position, &mut buf[..dx]);
            self.direction_encoder.encode_into(q.direction, &mut buf[dx..dx + dv]);
            buf[dx + dv..].copy_from_slice(&q.normal.to_array());
            a.extend(buf.iter().map(|&v| R::from_f64(v)));
        }
        a
    }

    /// Batched colors, keeping activations for [`Self::backward`]. Inputs are
    /// not validated; see [`Self::eval`].
    pub fn forward(&self, queries: &[AppearanceQuery]) -> (Vec<[R; 3]>, AppearanceCache<R>) {
        let n = queries.len();
        let mut a = self.encode(queries);
        let hidden = self.mlp.layers.len() - 1;
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let fo = self.mlp.layers[l].fan_out;
            let mut z = vec![R::zero(); n * fo];
            self.mlp.linear_forward(l, &a, n, &mut z, n);
            let next: Vec<R> = z.iter().map(|&v| v.max(R::zero())).collect();
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let mut out = vec![R::zero(); n * 3];
        self.mlp.linear_forward(hidden, &a, n, &mut out, n);
        inputs.push(a);
        for v in &mut out {
            *v = R::one() / (R::one() + (-*v).exp());
        }
        let colors = out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        (colors, AppearanceCache { n, inputs, pre, out })
    }

    /// Accumulates parameter gradients for color adjoints `d_colors` and
    /// returns the adjoint of each query's normal input.
    pub fn backward(&self, cache: &AppearanceCache<R>, d_colors: &[[R; 3]], grad: &mut [R]) -> Vec<[R; 3]> {
        let n = cache.n;
        assert_eq!(d_colors.len(), n);
        assert_eq!(grad.len(), self.param_count());
        let hidden = self.mlp.layers.len() - 1;
        let mut d_z: Vec<R> = d_colors
            .iter()
            .flatten()
            .zip(&cache.out)
            .map(|(&d, &y)| d * y * (R::one() - y))
            .collect();
        for l in (0..=hidden).rev() {
            let fi = self.mlp.layers[l].fan_in;
            let mut d_in = vec![R::zero(); n * fi];
            self.mlp
                .linear_backward(l, &cache.inputs[l], &d_z, n, n, grad, Some(&mut d_in));
            if l == 0 {
                let off = fi - 3;
                return d_in.chunks_exact(fi).map(|r| [r[off], r[off + 1], r[off + 2]]).collect();
            }
            for (d, &z) in d_in.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= R::zero() {
                    *d = R::zero();
                }
            }
            d_z = d_in;
        }
        unreachable!("the loop returns at the input layer")
    }

    /// Checked single evaluation in `f64`.
    pub fn eval(&self, position: Vec3, direction: Vec3, normal: Vec3) -> Result<Rgb> {
        for v in [direction, normal] {
            if !v.is_unit() {
                return Err(Error::NotUnit { norm: v.length() });
            }
        }
        let (c, _) = self.forward(&[AppearanceQuery {
            position,
            direction,
            normal,
        }]);
        Ok(Rgb(c[0].map(|v| v.as_f64())))
    }

    pub fn cast<S: Real>(&self) -> AppearanceField<S> {
        AppearanceField {
            config: self.config,
            position_encoder: self.position_encoder,
            direction_encoder: self.direction_encoder,
            mlp: Mlp {
                layers: self.mlp.layers.clone(),
                params: self.mlp.params.iter().map(|p| S::from_f64(p.as_f64())).collect(),
            },
        }
    }
}
