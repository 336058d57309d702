//! Volume rendering of internal ray segments with the logistic opaque
//! density: sampling, discrete alpha, weights, emitted color and segment
//! transmittance.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::math::{Ray, Real, Rgb, Vec3};
use crate::nn::{AppearanceField, AppearanceQuery, SdfField};
use crate::render::{InternalRadiance, RayTree};
use crate::rng;

/// Floor of the logistic CDF in the alpha denominator.
pub const PHI_FLOOR: f64 = 1e-7;
/// Upper clamp of alpha, so no interval is perfectly opaque.
pub const ALPHA_MAX: f64 = 1.0 - 1e-7;
/// Probability floor added to every coarse bin before fine sampling.
pub const WEIGHT_FLOOR: f64 = 1e-4;
/// Segments shorter than this collapse to a single midpoint sample.
pub const MIN_SEGMENT: f64 = 1e-9;

/// Parametric extent `[t_start, t_end]` of a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub ray: Ray,
    pub t_start: f64,
    pub t_end: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Extent of internal node `index` of a tree.
    pub fn of_node(tree: &RayTree, index: usize) -> Result<Self> {
        let node = tree
            .nodes
            .get(index)
            .ok_or(Error::MalformedTree { node: index, reason: "node index out of range" })?;
        let t_end = node.t_end.ok_or(Error::MalformedTree {
            node: index,
            reason: "internal segment without an end",
        })?;
        Ok(Self {
            ray: node.ray,
            t_start: node.t_start,
            t_end,
        })
    }
}

/// Sorted sample parameters along a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub segment: Segment,
    pub t: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.t.iter().map(|&t| self.segment.ray.at(t)).collect()
    }
}

/// Number and placement of samples per internal segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub coarse: usize,
    pub fine: usize,
    pub jitter: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            coarse: 64,
            fine: 64,
            jitter: true,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse < 2 {
            return Err(Error::InvalidArgument("at least two coarse samples are required"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.coarse + self.fine
    }
}

/// One sample per equal sub-interval, at its midpoint or jittered uniformly.
pub fn sample_stratified(segment: Segment, n: usize, jitter: bool, rng: &mut rng::Rng) -> Result<SampleSet> {
    if !(segment.t_start.is_finite() && segment.t_end.is_finite()) || segment.t_end < segment.t_start {
        return Err(Error::InvalidArgument("segment must satisfy t_start <= t_end"));
    }
    if segment.length() < MIN_SEGMENT {
        return Ok(SampleSet {
            segment,
            t: vec![0.5 * (segment.t_start + segment.t_end)],
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("stratified sampling needs n >= 2"));
    }
    let step = segment.length() / n as f64;
    let t = (0..n)
        .map(|i| {
            let u = if jitter { rng.random::<f64>() } else { 0.5 };
            (segment.t_start + (i as f64 + u) * step).min(segment.t_end)
        })
        .collect();
    Ok(SampleSet { segment, t })
}

/// Logistic CDF `Φ_s(x) = 1 / (1 + e^{−s·x})`.
pub fn logistic_cdf(x: f64, s: f64) -> f64 {
    sigmoid(s * x)
}

/// Discrete opacity of the interval between consecutive samples with SDF
/// values `g_i` and `g_next`.
pub fn opaque_alpha(g_i: f64, g_next: f64, s: f64) -> f64 {
    let a = logistic_cdf(g_i, s);
    let b = logistic_cdf(g_next, s);
    alpha_from_cdf(a, b)
}

/// `max((Φ_i − Φ_{i+1}) / Φ_i, 0)` with the floor and clamp applied.
pub fn alpha_from_cdf(phi_i: f64, phi_next: f64) -> f64 {
    ((phi_i - phi_next) / phi_i.max(PHI_FLOOR)).clamp(0.0, ALPHA_MAX)
}

/// Opacities of the `n − 1` intervals of a sample set.
pub fn segment_alphas(values: &[f64], s: f64) -> Vec<f64> {
    values.windows(2).map(|w| opaque_alpha(w[0], w[1], s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Rgb,
    pub transmittance: f64,
    pub weights: Vec<f64>,
}

/// Front-to-back compositing: `w_i = α_i·Π_{j<i}(1 − α_j)`, `Ĉ = Σ w_i·c_i`,
/// `T_ℓ = Π(1 − α_i)`.
pub fn composite(alphas: &[f64], colors: &[Rgb]) -> Result<RenderOutput> {
    if alphas.len() != colors.len() {
        return Err(Error::Shape("one color per interval"));
    }
    let mut trans = 1.0;
    let mut color = Rgb::BLACK;
    let mut weights = Vec::with_capacity(alphas.len());
    for (&a, &c) in alphas.iter().zip(colors) {
        let w = a * trans;
        color = color + c * w;
        weights.push(w);
        trans *= 1.0 - a;
    }
    Ok(RenderOutput {
        color,
        transmittance: trans,
        weights,
    })
}

/// Interval opacities from SDF values, composited with the color of each
/// interval's near sample.
pub fn render_segment(values: &[f64], colors: &[Rgb], s: f64) -> Result<RenderOutput> {
    if values.len() != colors.len() {
        return Err(Error::Shape("one color per sample"));
    }
    if values.len() < 2 {
        return Ok(RenderOutput {
            color: Rgb::BLACK,
            transmittance: 1.0,
            weights: Vec::new(),
        });
    }
    composite(&segment_alphas(values, s), &colors[..colors.len() - 1])
}

/// Draws `n_fine` parameters from the piecewise-constant density of the
/// coarse interval weights (each bin floored by [`WEIGHT_FLOOR`]) and merges
/// them with the coarse samples. All-zero weights fall back to stratified
/// sampling.
pub fn sample_hierarchical(
    coarse: &SampleSet,
    weights: &[f64],
    n_fine: usize,
    jitter: bool,
    rng: &mut rng::Rng,
) -> Result<SampleSet> {
    let mut t = coarse.t.clone();
    if n_fine == 0 || coarse.len() < 2 {
        return Ok(SampleSet { segment: coarse.segment, t });
    }
    if weights.len() + 1 != coarse.len() {
        return Err(Error::Shape("one weight per coarse interval"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("coarse weights must be finite and non-negative"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        let extra = sample_stratified(coarse.segment, n_fine.max(2), jitter, rng)?;
        t.extend(extra.t.into_iter().take(n_fine));
    } else {
        let mut cdf = Vec::with_capacity(weights.len() + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for &w in weights {
            acc += w + WEIGHT_FLOOR;
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        let mut bin = 0;
        for j in 0..n_fine {
            let off = if jitter { rng.random::<f64>() } else { 0.5 };
            let u = (j as f64 + off) / n_fine as f64;
            while bin + 1 < weights.len() && cdf[bin + 1] <= u {
                bin += 1;
            }
            let span = cdf[bin + 1] - cdf[bin];
            let frac = if span > 0.0 { ((u - cdf[bin]) / span).clamp(0.0, 1.0) } else { 0.5 };
            t.push(coarse.t[bin] + frac * (coarse.t[bin + 1] - coarse.t[bin]));
        }
    }
    t.sort_by(f64::total_cmp);
    Ok(SampleSet { segment: coarse.segment, t })
}

/// Coarse-then-fine sample placement for one segment given SDF values at the
/// coarse samples.
pub fn place_samples(
    coarse: &SampleSet,
    coarse_values: &[f64],
    s: f64,
    cfg: &SamplingConfig,
    rng: &mut rng::Rng,
) -> Result<SampleSet> {
    if coarse.len() < 2 {
        return Ok(coarse.clone());
    }
    let alphas = segment_alphas(coarse_values, s);
    let mut trans = 1.0;
    let weights: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect();
    sample_hierarchical(coarse, &weights, cfg.fine, cfg.jitter, rng)
}

/// Purpose tags of the random streams drawn per segment.
pub const STREAM_COARSE: u64 = 0;
pub const STREAM_FINE: u64 = 1;

/// Full sample placement for a batch of segments: coarse stratified samples
/// evaluated in one network pass, then fine samples per segment. `streams`
/// gives each segment's random stream.
pub fn place_batch<R: Real>(
    sdf: &SdfField<R>,
    segments: &[Segment],
    streams: &[u64],
    cfg: &SamplingConfig,
) -> Result<Vec<SampleSet>> {
    cfg.validate()?;
    if segments.len() != streams.len() {
        return Err(Error::Shape("one stream per segment"));
    }
    let coarse: Vec<SampleSet> = segments
        .iter()
        .zip(streams)
        .map(|(&seg, &st)| sample_stratified(seg, cfg.coarse, cfg.jitter, &mut rng::stream(st, &[STREAM_COARSE])))
        .collect::<Result<_>>()?;
    let points: Vec<Vec3> = coarse.iter().flat_map(|c| c.positions()).collect();
    let values: Vec<f64> = sdf.forward(&points).into_iter().map(|v| v.as_f64()).collect();
    let s = sdf.sharpness();
    let mut off = 0;
    coarse
        .iter()
        .zip(streams)
        .map(|(c, &st)| {
            let v = &values[off..off + c.len()];
            off += c.len();
            place_samples(c, v, s, cfg, &mut rng::stream(st, &[STREAM_FINE]))
        })
        .collect()
}

/// Neural radiance of internal segments in `f64`, for rendering trained
/// fields.
pub struct NeuralRadiance<'a, R> {
    pub sdf: &'a SdfField<R>,
    pub appearance: &'a AppearanceField<R>,
    pub sampling: SamplingConfig,
    /// Stream of the current pixel; segments derive their own from it.
    pub stream: u64,
}

impl<R: Real> NeuralRadiance<'_, R> {
    pub fn render(&self, segment: Segment, stream: u64) -> Result<RenderOutput> {
        let sets = place_batch(self.sdf, &[segment], &[stream], &self.sampling)?;
        let set = &sets[0];
        let pts = set.positions();
        let batch = self.sdf.forward_with_gradient(&pts);
        let dir = segment.ray.direction;
        let queries: Vec<AppearanceQuery> = pts
            .iter()
            .zip(&batch.gradients)
            .map(|(&p, g)| {
                let g = Vec3::new(g[0].as_f64(), g[1].as_f64(), g[2].as_f64());
                AppearanceQuery {
                    position: p,
                    direction: dir,
                    normal: g.try_normalize().unwrap_or(Vec3::Z),
                }
            })
            .collect();
        let (colors, _) = self.appearance.forward(&queries);
        let colors: Vec<Rgb> = colors.iter().map(|c| Rgb(c.map(|v| v.as_f64()))).collect();
        let values: Vec<f64> = batch.values.iter().map(|v| v.as_f64()).collect();
        render_segment(&values, &colors, self.sdf.sharpness())
    }
}

impl<R: Real> InternalRadiance for NeuralRadiance<'_, R> {
    fn segment_radiance(&self, tree: &RayTree, index: usize) -> Result<(Rgb, f64)> {
        let seg = Segment::of_node(tree, index)?;
        let out = self.render(seg, rng::stream_seed(self.stream, &[index as u64]))?;
        Ok((out.color, out.transmittance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AnalyticSdf, SignedDistance};

    fn seg(t0: f64, t1: f64) -> Segment {
        Segment {
            ray: Ray::new(Vec3::ZERO, Vec3::X),
            t_start: t0,
            t_end: t1,
        }
    }

    #[test]
    fn stratified_midpoints() {
        let s = sample_stratified(seg(0.0, 1.0), 4, false, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn stratified_jitter_is_seeded() {
        let a = sample_stratified(seg(0.0, 1.0), 16, true, &mut rng::stream(5, &[1])).unwrap();
        let b = sample_stratified(seg(0.0, 1.0), 16, true, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_gap_bound() {
        let s = sample_stratified(seg(0.5, 2.5), 64, true, &mut rng::stream(3, &[])).unwrap();
        let max_gap = s.t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(max_gap <= 2.0 * (2.0 / 64.0));
        assert!(s.t.iter().all(|&t| (0.5..=2.5).contains(&t)));
    }

    #[test]
    fn degenerate_segment_is_one_midpoint() {
        let s = sample_stratified(seg(1.0, 1.0 + 1e-12), 8, true, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(s.t.len(), 1);
        assert!((s.t[0] - (1.0 + 0.5e-12)).abs() < 1e-15);
    }

    #[test]
    fn alpha_examples() {
        // Φ = 0.8 and 0.4 correspond to logits ln 4 and ln(2/3).
        let s = 10.0;
        let a = opaque_alpha(4.0f64.ln() / s, (2.0f64 / 3.0).ln() / s, s);
        assert!((a - 0.5).abs() < 1e-12);
        assert!((alpha_from_cdf(0.8, 0.4) - 0.5).abs() < 1e-15);
        assert_eq!(opaque_alpha(0.3, 0.3, 50.0), 0.0);
        assert_eq!(opaque_alpha(-0.1, 0.2, 50.0), 0.0);
        assert!(opaque_alpha(0.5, -0.5, 1e4) <= ALPHA_MAX);
    }

    #[test]
    fn composite_examples() {
        let out = composite(&[0.0, 0.0], &[Rgb::splat(0.3), Rgb::splat(0.9)]).unwrap();
        assert_eq!(out.color, Rgb::BLACK);
        assert_eq!(out.transmittance, 1.0);

        let c = Rgb([0.2, 0.4, 0.6]);
        let out = composite(&[1.0], &[c]).unwrap();
        assert_eq!(out.color, c);
        assert_eq!(out.transmittance, 0.0);

        let (c1, c2) = (Rgb([1.0, 0.0, 0.5]), Rgb([0.0, 1.0, 0.5]));
        let out = composite(&[0.5, 0.5], &[c1, c2]).unwrap();
        assert!(out.color.max_abs_diff(c1 * 0.5 + c2 * 0.25) < 1e-15);
        assert_eq!(out.transmittance, 0.25);
    }

    fn plane_values(plane: &AnalyticSdf, set: &SampleSet) -> Vec<f64> {
        set.positions().iter().map(|&p| plane.distance(p)).collect()
    }

    #[test]
    fn weight_peaks_at_the_crossing() {
        // The ray travels along +x; the plane faces the ray origin.
        let plane = AnalyticSdf::plane(-Vec3::X, -0.737);
        let set = sample_stratified(seg(0.0, 2.0), 512, false, &mut rng::stream(0, &[])).unwrap();
        let values = plane_values(&plane, &set);
        let out = render_segment(&values, &vec![Rgb::splat(1.0); 512], 200.0).unwrap();
        let (imax, _) = out
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &w)| if w > b.1 { (i, w) } else { b });
        let spacing = 2.0 / 512.0;
        let t_peak = 0.5 * (set.t[imax] + set.t[imax + 1]);
        assert!((t_peak - 0.737).abs() <= spacing, "{t_peak}");
    }

    #[test]
    fn first_crossing_occludes_the_second() {
        let set = sample_stratified(seg(0.0, 2.0), 512, false, &mut rng::stream(0, &[])).unwrap();
        // Two parallel walls of thickness 0.2 at x = 0.5 and x = 1.3.
        let values: Vec<f64> = set
            .positions()
            .iter()
            .map(|p| {
                let a = (p.x - 0.6).abs() - 0.1;
                let b = (p.x - 1.4).abs() - 0.1;
                a.min(b)
            })
            .collect();
        let out = render_segment(&values, &vec![Rgb::splat(1.0); 512], 200.0).unwrap();
        let total: f64 = out.weights.iter().sum();
        let first: f64 = out
            .weights
            .iter()
            .zip(&set.t)
            .filter(|(_, &t)| t < 1.0)
            .map(|(w, _)| w)
            .sum();
        assert!(first / total >= 0.95);
    }

    #[test]
    fn hierarchical_concentrates_on_heavy_bin() {
        let coarse = sample_stratified(seg(0.0, 1.0), 16, false, &mut rng::stream(0, &[])).unwrap();
        let mut w = vec![0.0; 15];
        w[6] = 0.9;
        let fine = sample_hierarchical(&coarse, &w, 64, true, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(fine.len(), 80);
        let (lo, hi) = (coarse.t[6], coarse.t[7]);
        let n_in = fine.t.iter().filter(|&&t| t > lo && t < hi).count();
        assert!(n_in >= (0.9 * 64.0) as usize);
        assert!(fine.t.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn hierarchical_zero_weights_fall_back() {
        let coarse = sample_stratified(seg(0.0, 1.0), 8, false, &mut rng::stream(0, &[])).unwrap();
        let fine = sample_hierarchical(&coarse, &[0.0; 7], 8, false, &mut rng::stream(1, &[])).unwrap();
        let mut expect = coarse.t.clone();
        expect.extend(sample_stratified(seg(0.0, 1.0), 8, false, &mut rng::stream(1, &[])).unwrap().t);
        expect.sort_by(f64::total_cmp);
        assert_eq!(fine.t, expect);
    }

    #[test]
    fn transmittance_is_exp_of_log_sum() {
        let mut r = rng::stream(9, &[]);
        let alphas: Vec<f64> = (0..100).map(|_| r.random::<f64>() * 0.2).collect();
        let out = composite(&alphas, &vec![Rgb::splat(0.5); 100]).unwrap();
        let log_sum: f64 = alphas.iter().map(|a| (1.0 - a).ln()).sum();
        assert!((out.transmittance - log_sum.exp()).abs() < 1e-6);
        let mass: f64 = out.weights.iter().sum();
        assert!((mass + out.transmittance - 1.0).abs() < 1e-6);
    }
}
