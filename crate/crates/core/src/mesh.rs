//! Zero level set extraction, connected-component filtering and the
//! Chamfer distance used for evaluation.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rng;

mod tables;

use tables::{EDGE_TABLE, TRI_TABLE};

/// Triangles with area at or below this are dropped after extraction.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Lower bound on the number of surface samples per mesh.
pub const MIN_CHAMFER_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self { vertices, triangles };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(Error::InvalidArgument("triangle index out of range"));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex"));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + offset).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Drops triangles with area at or below `min_area`, then unreferenced
    /// vertices.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.triangles.len()).map(|t| self.triangle_area(t) > min_area).collect();
        let mut k = keep.iter();
        self.triangles.retain(|_| *k.next().unwrap());
        self.compact();
    }

    /// Removes vertices no triangle refers to, preserving order.
    pub fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        for &i in self.triangles.iter().flatten() {
            remap[i as usize] = 0;
        }
        let mut next = 0u32;
        let mut vertices = Vec::new();
        for (i, r) in remap.iter_mut().enumerate() {
            if *r == 0 {
                *r = next;
                next += 1;
                vertices.push(self.vertices[i]);
            }
        }
        for t in self.triangles.iter_mut() {
            for i in t.iter_mut() {
                *i = remap[*i as usize];
            }
        }
        self.vertices = vertices;
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Endpoint corners of each cube edge, lower grid point first.
const EDGE_CORNERS: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

const NONE: u32 = u32::MAX;

/// Per-slab vertex caches indexed by the lower grid point of each edge.
struct EdgeCache {
    np: usize,
    x_lo: Vec<u32>,
    y_lo: Vec<u32>,
    x_hi: Vec<u32>,
    y_hi: Vec<u32>,
    z: Vec<u32>,
}

impl EdgeCache {
    fn new(np: usize) -> Self {
        let len = np * np;
        Self {
            np,
            x_lo: vec![NONE; len],
            y_lo: vec![NONE; len],
            x_hi: vec![NONE; len],
            y_hi: vec![NONE; len],
            z: vec![NONE; len],
        }
    }

    fn slot(&mut self, edge: usize, i: usize, j: usize) -> &mut u32 {
        let [a, _] = EDGE_CORNERS[edge];
        let [di, dj, dk] = CORNERS[a];
        let idx = (j + dj) * self.np + i + di;
        match (edge, dk) {
            (8..=11, _) => &mut self.z[idx],
            (0 | 2 | 4 | 6, 0) => &mut self.x_lo[idx],
            (0 | 2 | 4 | 6, _) => &mut self.x_hi[idx],
            (_, 0) => &mut self.y_lo[idx],
            _ => &mut self.y_hi[idx],
        }
    }

    fn advance(&mut self) {
        core::mem::swap(&mut self.x_lo, &mut self.x_hi);
        core::mem::swap(&mut self.y_lo, &mut self.y_hi);
        self.x_hi.fill(NONE);
        self.y_hi.fill(NONE);
        self.z.fill(NONE);
    }
}

/// Extracts the zero level set of a scalar field sampled on a regular grid of
/// `resolution³` cells spanning `bounds`. The field is queried one z plane at
/// a time and must return one value per point. Negative values are inside;
/// triangles are wound counter-clockwise seen from outside.
pub fn marching_cubes<F>(mut field: F, bounds: (Vec3, Vec3), resolution: usize) -> Result<TriangleMesh>
where
    F: FnMut(&[Vec3]) -> Vec<f64>,
{
    if resolution < 8 {
        return Err(Error::InvalidArgument("marching cubes resolution must be at least 8"));
    }
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && hi.x > lo.x && hi.y > lo.y && hi.z > lo.z) {
        return Err(Error::InvalidArgument("marching cubes bounds are empty"));
    }
    let n = resolution;
    let np = n + 1;
    let ext = hi - lo;
    let coord = |a: f64, b: f64, i: usize| a + b * (i as f64 / n as f64);
    let point = |i: usize, j: usize, k: usize| Vec3::new(coord(lo.x, ext.x, i), coord(lo.y, ext.y, j), coord(lo.z, ext.z, k));

    let mut plane = |k: usize| -> Result<Vec<f64>> {
        let pts: Vec<Vec3> = (0..np * np).map(|idx| point(idx % np, idx / np, k)).collect();
        let vals = field(&pts);
        if vals.len() != pts.len() {
            return Err(Error::Shape("field returned the wrong number of values"));
        }
        if let Some(idx) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField(idx % np, idx / np, k));
        }
        Ok(vals)
    };

    let mut mesh = TriangleMesh::default();
    let mut cache = EdgeCache::new(np);
    let mut below = plane(0)?;
    for k in 0..n {
        let above = plane(k + 1)?;
        for j in 0..n {
            for i in 0..n {
                let mut v = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let idx = (j + off[1]) * np + i + off[0];
                    v[c] = if off[2] == 0 { below[idx] } else { above[idx] };
                    if v[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut ids = [NONE; 12];
                for (e, id) in ids.iter_mut().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let slot = cache.slot(e, i, j);
                    if *slot == NONE {
                        let [a, b] = EDGE_CORNERS[e];
                        let pa = point(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = point(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let t = v[a] / (v[a] - v[b]);
                        *slot = mesh.vertices.len() as u32;
                        mesh.vertices.push(pa + (pb - pa) * t);
                    }
                    *id = *slot;
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    mesh.triangles.push([ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]]);
                }
            }
        }
        below = above;
        cache.advance();
    }
    mesh.remove_degenerate(DEGENERATE_AREA);
    Ok(mesh)
}

/// [`marching_cubes`] for a field evaluated one point at a time.
pub fn marching_cubes_pointwise<F>(field: F, bounds: (Vec3, Vec3), resolution: usize) -> Result<TriangleMesh>
where
    F: Fn(Vec3) -> f64,
{
    marching_cubes(|pts: &[Vec3]| pts.iter().map(|&p| field(p)).collect(), bounds, resolution)
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Keeps the connected component (triangles sharing vertices) with the most
/// vertices. Ties go to the one with more triangles, then to the one holding
/// the lowest vertex index.
pub fn largest_component(mesh: &TriangleMesh) -> TriangleMesh {
    if mesh.is_empty() {
        return TriangleMesh::default();
    }
    let n = mesh.vertices.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    for &[a, b, c] in &mesh.triangles {
        for (x, y) in [(a, b), (b, c)] {
            let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
            if rx != ry {
                let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
                parent[hi as usize] = lo;
            }
        }
    }
    let mut verts = vec![0usize; n];
    let mut tris = vec![0usize; n];
    let mut referenced = vec![false; n];
    for &i in mesh.triangles.iter().flatten() {
        referenced[i as usize] = true;
    }
    for i in 0..n {
        if referenced[i] {
            let r = find(&mut parent, i as u32);
            verts[r as usize] += 1;
        }
    }
    for t in &mesh.triangles {
        tris[find(&mut parent, t[0]) as usize] += 1;
    }
    // Roots are the minimum vertex index of their component, so scanning in
    // index order and keeping strict improvements resolves the final tie.
    let mut best = None::<usize>;
    for r in 0..n {
        if parent[r] as usize != r || tris[r] == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => (verts[r], tris[r]).cmp(&(verts[b], tris[b])) == Ordering::Greater,
        };
        if better {
            best = Some(r);
        }
    }
    let root = best.unwrap() as u32;
    let triangles = mesh.triangles.iter().copied().filter(|t| find(&mut parent, t[0]) == root).collect();
    let mut out = TriangleMesh {
        vertices: mesh.vertices.clone(),
        triangles,
    };
    out.compact();
    out
}

/// Draws `n` points uniformly over the surface area: triangles are chosen
/// with probability proportional to area and points are uniform inside them.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = rng::stream(seed, &[0x5afe]);
    let last = cumulative.len() - 1;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= u).min(last);
            let [a, b, c] = mesh.corners(t);
            let r1 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect())
}

#[inline]
fn axis(p: Vec3, a: u8) -> f64 {
    match a {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

#[inline]
fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

/// Static kd-tree over a point set. Queries return the same nearest distance
/// as an exhaustive scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    index: Vec<u32>,
    split: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut split = vec![0u8; points.len()];
        Self::build(points, &mut order, &mut split);
        Self {
            points: order.iter().map(|&i| points[i as usize]).collect(),
            index: order,
            split,
        }
    }

    fn build(points: &[Vec3], order: &mut [u32], split: &mut [u8]) {
        if order.len() <= 1 {
            return;
        }
        let (mut lo, mut hi) = (Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY));
        for &i in order.iter() {
            let p = points[i as usize];
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let ext = hi - lo;
        let a = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&i, &j| {
            axis(points[i as usize], a).total_cmp(&axis(points[j as usize], a)).then(i.cmp(&j))
        });
        split[mid] = a;
        let (left, right) = order.split_at_mut(mid);
        let (sl, sr) = split.split_at_mut(mid);
        Self::build(points, left, sl);
        Self::build(points, &mut right[1..], &mut sr[1..]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the construction slice) and squared distance of the
    /// nearest point.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (0usize, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        Some((self.index[best.0] as usize, best.1))
    }

    fn search(&self, q: Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        let d = dist2(q, p);
        if d < best.1 {
            *best = (mid, d);
        }
        let a = self.split[mid];
        let diff = axis(q, a) - axis(p, a);
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if diff * diff < best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// Mean Euclidean distance from each point of `from` to its nearest point in
/// `to`.
pub fn mean_nearest_distance(from: &[Vec3], to: &KdTree) -> f64 {
    let query = |q: &Vec3| to.nearest(*q).map_or(f64::INFINITY, |(_, d)| d.sqrt());
    #[cfg(feature = "parallel")]
    let dists: Vec<f64> = {
        use rayon::prelude::*;
        from.par_iter().map(query).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let dists: Vec<f64> = from.iter().map(query).collect();
    dists.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric mean of the two directional mean nearest distances.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    0.5 * (mean_nearest_distance(a, &tb) + mean_nearest_distance(b, &ta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Chamfer distance in scene units, multiplied by 100.
    pub score_x100: f64,
    pub n_samples_pred: usize,
    pub n_samples_gt: usize,
}

/// Samples per mesh for a ground truth with `num_vertices` vertices.
pub fn chamfer_sample_count(num_vertices: usize) -> usize {
    MIN_CHAMFER_SAMPLES.max((num_vertices as f64 * 0.2).ceil() as usize)
}

/// Chamfer distance between surface samples of a reconstruction and the
/// ground truth, reported ×100. Both meshes are sampled with the same seed.
pub fn chamfer_l1(pred: &TriangleMesh, gt: &TriangleMesh, seed: u64) -> Result<ChamferReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let n = chamfer_sample_count(gt.vertices.len());
    let ps = sample_surface(pred, n, seed)?;
    let gs = sample_surface(gt, n, seed)?;
    Ok(ChamferReport {
        score_x100: 100.0 * chamfer_distance(&ps, &gs),
        n_samples_pred: n,
        n_samples_gt: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AnalyticSdf, SignedDistance};
    use alloc::vec;

    const CUBE: (Vec3, Vec3) = (Vec3::splat(-1.0), Vec3::splat(1.0));

    fn sphere(r: f64, res: usize) -> TriangleMesh {
        marching_cubes_pointwise(|p| p.length() - r, CUBE, res).unwrap()
    }

    #[test]
    fn sphere_vertices_lie_near_the_surface() {
        let m = sphere(0.4, 64);
        assert!(m.triangles.len() > 1000);
        let diag = 2.0 * 3f64.sqrt() / 64.0;
        for v in &m.vertices {
            assert!((v.length() - 0.4).abs() < diag);
        }
        m.validate().unwrap();
        let area = m.area();
        let exact = 4.0 * core::f64::consts::PI * 0.16;
        assert!((area - exact).abs() / exact < 0.02, "area {area}");
    }

    #[test]
    fn triangles_face_outward() {
        let m = sphere(0.4, 32);
        for t in 0..m.triangles.len() {
            let [a, b, c] = m.corners(t);
            let n = (b - a).cross(c - a);
            assert!(n.dot((a + b + c) * (1.0 / 3.0)) > 0.0);
        }
    }

    #[test]
    fn watertight_sphere_has_euler_characteristic_two() {
        let m = sphere(0.37, 24);
        let mut edges: Vec<(u32, u32)> = m
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        assert_eq!(before, 2 * edges.len());
        let chi = m.vertices.len() as i64 - edges.len() as i64 + m.triangles.len() as i64;
        assert_eq!(chi, 2);
    }

    #[test]
    fn constant_field_is_empty() {
        let m = marching_cubes_pointwise(|_| 1.0, CUBE, 16).unwrap();
        assert!(m.is_empty() && m.vertices.is_empty());
    }

    #[test]
    fn plane_is_flat() {
        let m = marching_cubes_pointwise(|p| p.z, CUBE, 64).unwrap();
        assert!(!m.is_empty());
        assert!(m.vertices.iter().all(|v| v.z.abs() < 1e-6));
        let m = marching_cubes_pointwise(|p| p.z - 0.013, CUBE, 16).unwrap();
        assert!(m.vertices.iter().all(|v| (v.z - 0.013).abs() < 1e-12));
        assert!((m.area() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let err = marching_cubes_pointwise(|p| if p.x > 0.5 && p.y < -0.5 { f64::NAN } else { p.z }, CUBE, 8).unwrap_err();
        assert_eq!(err, Error::NonFiniteField(7, 0, 0));
        assert!(marching_cubes_pointwise(|p| p.z, CUBE, 7).is_err());
    }

    #[test]
    fn analytic_torus_extracts() {
        let t = AnalyticSdf::torus(Vec3::ZERO, 0.4, 0.1);
        let m = marching_cubes_pointwise(|p| t.distance(p), CUBE, 64).unwrap();
        let diag = 2.0 * 3f64.sqrt() / 64.0;
        assert!(m.vertices.iter().all(|&v| t.distance(v).abs() < diag));
        assert_eq!(largest_component(&m).triangles.len(), m.triangles.len());
    }

    fn two_spheres() -> TriangleMesh {
        marching_cubes_pointwise(
            |p| (p - Vec3::new(-0.4, 0.0, 0.0)).length().min((p - Vec3::new(0.5, 0.0, 0.0)).length() + 0.2) - 0.3,
            CUBE,
            32,
        )
        .unwrap()
    }

    #[test]
    fn keeps_the_biggest_component() {
        let m = two_spheres();
        let big = largest_component(&m);
        assert!(big.vertices.iter().all(|v| v.x < 0.0));
        assert!(big.vertices.len() < m.vertices.len());
        big.validate().unwrap();
        assert_eq!(largest_component(&big), big);
        assert!(largest_component(&TriangleMesh::default()).is_empty());
    }

    #[test]
    fn component_ties_prefer_more_triangles_then_lower_index() {
        let v = |x: f64, y: f64| Vec3::new(x, y, 0.0);
        // Component A: 4 vertices, 2 triangles. Component B: 4 vertices, 4 triangles.
        let vertices = vec![
            v(0.0, 0.0),
            v(1.0, 0.0),
            v(1.0, 1.0),
            v(0.0, 1.0),
            v(5.0, 0.0),
            v(6.0, 0.0),
            v(6.0, 1.0),
            v(5.0, 1.0),
        ];
        let triangles = vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7], [4, 5, 7], [5, 6, 7]];
        let m = TriangleMesh::new(vertices.clone(), triangles).unwrap();
        let out = largest_component(&m);
        assert_eq!(out.triangles.len(), 4);
        assert_eq!(out.vertices[0], v(5.0, 0.0));

        let m = TriangleMesh::new(vertices, vec![[4, 5, 6], [0, 1, 2]]).unwrap();
        let out = largest_component(&m);
        assert_eq!(out.vertices[0], v(0.0, 0.0));
    }

    #[test]
    fn samples_lie_on_triangles() {
        let m = sphere(0.3, 16);
        let pts = sample_surface(&m, 2000, 9).unwrap();
        assert_eq!(pts, sample_surface(&m, 2000, 9).unwrap());
        assert_ne!(pts, sample_surface(&m, 2000, 10).unwrap());
        for p in pts {
            let on = (0..m.triangles.len()).any(|t| {
                let [a, b, c] = m.corners(t);
                let n = (b - a).cross(c - a).normalize();
                let plane = (p - a).dot(n).abs() < 1e-9;
                let inside = [(a, b), (b, c), (c, a)].iter().all(|&(u, w)| (w - u).cross(p - u).dot(n) >= -1e-12);
                plane && inside
            });
            assert!(on);
        }
        assert_eq!(sample_surface(&TriangleMesh::default(), 5, 0), Err(Error::EmptyMesh));
    }

    #[test]
    fn single_triangle_centroid() {
        let m = TriangleMesh::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)], vec![[0, 1, 2]]).unwrap();
        let n = 10_000;
        let pts = sample_surface(&m, n, 3).unwrap();
        let mean = pts.iter().fold(Vec3::ZERO, |s, &p| s + p) * (1.0 / n as f64);
        // Uniform on a triangle: Var(x) = (a²+b²+c²−ab−ac−bc)/18 per coordinate.
        let var = |a: f64, b: f64, c: f64| (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0;
        let sx = (var(0.0, 1.0, 0.0) / n as f64).sqrt();
        let sy = (var(0.0, 0.0, 2.0) / n as f64).sqrt();
        assert!((mean.x - 1.0 / 3.0).abs() < 3.0 * sx);
        assert!((mean.y - 2.0 / 3.0).abs() < 3.0 * sy);
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut r = rng::stream(1, &[]);
        let cloud: Vec<Vec3> = (0..2000).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
        // A lattice forces many exact ties along split planes.
        let lattice: Vec<Vec3> = (0..1000).map(|i| Vec3::new((i % 10) as f64, ((i / 10) % 10) as f64, (i / 100) as f64) * 0.1).collect();
        for pts in [cloud, lattice] {
            let tree = KdTree::new(&pts);
            for _ in 0..500 {
                let q = Vec3::new(r.random::<f64>() * 1.2 - 0.1, r.random(), r.random());
                let brute = pts.iter().map(|&p| dist2(q, p)).fold(f64::INFINITY, f64::min);
                let (i, d) = tree.nearest(q).unwrap();
                assert_eq!(d, brute);
                assert_eq!(dist2(q, pts[i]), d);
            }
        }
    }

    #[test]
    fn chamfer_of_identical_meshes_is_zero() {
        let m = sphere(0.4, 16);
        let r = chamfer_l1(&m, &m, 4).unwrap();
        assert_eq!(r.score_x100, 0.0);
        assert_eq!(r.n_samples_pred, 10_000);
        assert_eq!(chamfer_sample_count(60_000), 12_000);
        assert_eq!(chamfer_sample_count(50_001), 10_001);
    }

    #[test]
    fn concentric_spheres_score_ten() {
        let a = sphere(0.4, 64);
        let b = sphere(0.5, 64);
        let s = chamfer_l1(&a, &b, 0).unwrap().score_x100;
        assert!((s - 10.0).abs() < 0.5, "{s}");
    }

    #[test]
    fn translation_increases_score() {
        let gt = sphere(0.4, 32);
        let pred = sphere(0.41, 32);
        let base = chamfer_l1(&pred, &gt, 1).unwrap().score_x100;
        let moved = chamfer_l1(&pred.translated(Vec3::new(0.1, 0.0, 0.0)), &gt, 1).unwrap().score_x100;
        assert!(moved > base);
    }

    #[test]
    fn chamfer_is_nearly_symmetric() {
        let a = sphere(0.4, 32);
        let b = marching_cubes_pointwise(|p| (p - Vec3::new(0.05, 0.0, 0.0)).length() - 0.4, CUBE, 32).unwrap();
        let ab = chamfer_l1(&a, &b, 2).unwrap().score_x100;
        let ba = chamfer_l1(&b, &a, 2).unwrap().score_x100;
        assert!((ab - ba).abs() / ab < 0.02);
        assert_eq!(chamfer_l1(&a, &TriangleMesh::default(), 0), Err(Error::EmptyMesh));
    }
}
