use alloc::vec;
use alloc::vec::Vec;

use crate::math::Real;

/// Shape and parameter offset of one fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Start of the row-major `fan_out × fan_in` weight block; the bias
    /// follows it.
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> core::ops::Range<usize> {
        let b = self.offset + self.fan_in * self.fan_out;
        b..b + self.fan_out
    }

    pub fn param_count(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }
}

/// Stack of dense layers whose parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R> {
    pub layers: Vec<LayerShape>,
    pub params: Vec<R>,
}

impl<R: Real> Mlp<R> {
    /// Zero-initialized network with the given `(fan_in, fan_out)` layers.
    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        let mut offset = 0;
        let layers: Vec<LayerShape> = dims
            .iter()
            .map(|&(fan_in, fan_out)| {
                let l = LayerShape {
                    fan_in,
                    fan_out,
                    offset,
                };
                offset += l.param_count();
                l
            })
            .collect();
        Self {
            layers,
            params: vec![R::zero(); offset],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `out[rows × fan_out] = input[rows × fan_in] · Wᵀ`, plus the bias on the
    /// first `bias_rows` rows.
    pub fn linear_forward(&self, layer: usize, input: &[R], rows: usize, out: &mut [R], bias_rows: usize) {
        let l = self.layers[layer];
        let w = &self.params[l.weights()];
        let b = &self.params[l.bias()];
        let (fi, fo) = (l.fan_in, l.fan_out);
        debug_assert_eq!(input.len(), rows * fi);
        debug_assert_eq!(out.len(), rows * fo);
        R::gemm(rows, fi, fo, R::one(), input, fi as isize, 1, w, 1, fi as isize, R::zero(), out);
        for row in out.chunks_exact_mut(fo).take(bias_rows) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
    }

    /// Accumulates `∂L/∂W = d_outᵀ·input` and `∂L/∂b = Σ d_out[..bias_rows]`
    /// into `grad`, and optionally writes `d_in = d_out·W`.
    #[allow(clippy::too_many_arguments)]
    pub fn linear_backward(
        &self,
        layer: usize,
        input: &[R],
        d_out: &[R],
        rows: usize,
        bias_rows: usize,
        grad: &mut [R],
        d_in: Option<&mut [R]>,
    ) {
        let l = self.layers[layer];
        let (fi, fo) = (l.fan_in, l.fan_out);
        debug_assert_eq!(d_out.len(), rows * fo);
        {
            let gw = &mut grad[l.weights()];
            R::gemm(fo, rows, fi, R::one(), d_out, 1, fo as isize, input, fi as isize, 1, R::one(), gw);
        }
        {
            let gb = &mut grad[l.bias()];
            for row in d_out.chunks_exact(fo).take(bias_rows) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        if let Some(d_in) = d_in {
            let w = &self.params[l.weights()];
            R::gemm(rows, fo, fi, R::one(), d_out, fo as isize, 1, w, fi as isize, 1, R::zero(), d_in);
        }
    }
}
