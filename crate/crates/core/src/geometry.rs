//! Geometric primitives in `R^d` (1 ≤ d ≤ 8): points, segments, simplices
//! and axis-aligned cells, with L1/L2 distances, extreme distances between
//! primitives, measures, and simplex/segment clipping against boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmdError, Result};

pub const MAX_DIM: usize = 8;

/// Sample count used when clipping simplices against boxes by Monte Carlo
/// (dimension 4 and above).
pub const MC_SAMPLES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    #[default]
    L2,
}

impl Metric {
    #[inline]
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Metric::L1 => v.iter().map(|x| x.abs()).sum(),
            Metric::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    #[inline]
    pub fn dist(self, p: &[f64], q: &[f64]) -> f64 {
        debug_assert_eq!(p.len(), q.len());
        match self {
            Metric::L1 => p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum(),
            Metric::L2 => p
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = EmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            other => Err(EmdError::Parse(format!("unknown metric '{other}'"))),
        }
    }
}

/// A point (or vector) in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let d = coords.len();
        if d == 0 || d > MAX_DIM {
            return Err(EmdError::UnsupportedDimension(d));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(EmdError::NonFinite(format!("{coords:?}")));
        }
        Ok(Point(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Point(vec![0.0; d])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Point) -> Vec<f64> {
        self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()
    }

    pub fn scaled(&self, f: f64) -> Point {
        Point(self.0.iter().map(|c| c * f).collect())
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

/// Distance between two points; errors on dimension mismatch.
pub fn dist(p: &Point, q: &Point, metric: Metric) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(EmdError::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(metric.dist(&p.0, &q.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Segment { a, b }
    }

    /// Euclidean length, the mass carried by a unit-density segment.
    pub fn length(&self) -> f64 {
        Metric::L2.dist(&self.a.0, &self.b.0)
    }

    pub fn at(&self, t: f64) -> Point {
        self.a.lerp(&self.b, t)
    }

    pub fn midpoint(&self) -> Point {
        self.at(0.5)
    }

    pub fn sub_segment(&self, t0: f64, t1: f64) -> Segment {
        Segment::new(self.at(t0), self.at(t1))
    }

    pub fn reversed(&self) -> Segment {
        Segment::new(self.b.clone(), self.a.clone())
    }

    pub fn direction(&self) -> Vec<f64> {
        self.b.sub(&self.a)
    }
}

/// A k-simplex given by its `k + 1` vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Simplex {
    pub vertices: Vec<Point>,
}

impl Simplex {
    pub fn new(vertices: Vec<Point>) -> Self {
        Simplex { vertices }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn ambient_dim(&self) -> usize {
        self.vertices.first().map_or(0, Point::dim)
    }

    pub fn bbox(&self) -> BoxCell {
        bbox_of(self.vertices.iter())
    }

    pub fn centroid(&self) -> Point {
        let d = self.ambient_dim();
        let k = self.vertices.len() as f64;
        let mut c = vec![0.0; d];
        for v in &self.vertices {
            for (ci, vi) in c.iter_mut().zip(&v.0) {
                *ci += vi / k;
            }
        }
        Point(c)
    }

    pub fn longest_edge(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                best = best.max(Metric::L2.dist(&self.vertices[i].0, &self.vertices[j].0));
            }
        }
        best
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCell {
    pub lo: Point,
    pub hi: Point,
}

impl BoxCell {
    pub fn new(lo: Point, hi: Point) -> Self {
        BoxCell { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn center(&self) -> Point {
        self.lo.lerp(&self.hi, 0.5)
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .0
            .iter()
            .zip(&self.hi.0)
            .map(|(l, h)| (h - l).max(0.0))
            .product()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi.0[axis] - self.lo.0[axis]
    }

    pub fn max_side(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).fold(0.0, f64::max)
    }

    pub fn diameter(&self, metric: Metric) -> f64 {
        metric.dist(&self.lo.0, &self.hi.0)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.0.iter().zip(&self.hi.0))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn intersects(&self, other: &BoxCell) -> bool {
        (0..self.dim()).all(|i| self.lo.0[i] <= other.hi.0[i] && other.lo.0[i] <= self.hi.0[i])
    }

    pub fn expanded(&self, margin: f64) -> BoxCell {
        BoxCell::new(
            Point(self.lo.0.iter().map(|x| x - margin).collect()),
            Point(self.hi.0.iter().map(|x| x + margin).collect()),
        )
    }

    /// The `2^d` equal children obtained by halving every axis, in binary
    /// order of the axis bits (bit i set = upper half along axis i).
    pub fn children(&self) -> Vec<BoxCell> {
        let d = self.dim();
        let mid = self.center();
        (0..1usize << d)
            .map(|mask| {
                let mut lo = Vec::with_capacity(d);
                let mut hi = Vec::with_capacity(d);
                for i in 0..d {
                    if mask >> i & 1 == 1 {
                        lo.push(mid.0[i]);
                        hi.push(self.hi.0[i]);
                    } else {
                        lo.push(self.lo.0[i]);
                        hi.push(mid.0[i]);
                    }
                }
                BoxCell::new(Point(lo), Point(hi))
            })
            .collect()
    }
}

pub fn bbox_of<'a>(mut pts: impl Iterator<Item = &'a Point>) -> BoxCell {
    let first = pts.next().expect("bbox of empty point set");
    let mut lo = first.0.clone();
    let mut hi = first.0.clone();
    for p in pts {
        for i in 0..lo.len() {
            lo[i] = lo[i].min(p.0[i]);
            hi[i] = hi[i].max(p.0[i]);
        }
    }
    BoxCell::new(Point(lo), Point(hi))
}

// ---------------------------------------------------------------------------
// Extreme distances
// ---------------------------------------------------------------------------

/// Minimum over `t ∈ [lo, hi]` of `‖w + t·e‖` under `metric`, returning
/// `(t*, value)`.
pub fn min_affine_norm(w: &[f64], e: &[f64], lo: f64, hi: f64, metric: Metric) -> (f64, f64) {
    let eval = |t: f64| {
        let v: Vec<f64> = w.iter().zip(e).map(|(a, b)| a + t * b).collect();
        metric.norm(&v)
    };
    match metric {
        Metric::L2 => {
            let ee: f64 = e.iter().map(|x| x * x).sum();
            let t = if ee > 0.0 {
                let we: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
                (-we / ee).clamp(lo, hi)
            } else {
                lo
            };
            (t, eval(t))
        }
        Metric::L1 => {
            // convex piecewise linear: the minimum sits at a breakpoint or an end
            let mut best = (lo, eval(lo));
            let mut consider = |t: f64| {
                if t >= lo && t <= hi {
                    let v = eval(t);
                    if v < best.1 {
                        best = (t, v);
                    }
                }
            };
            consider(hi);
            for (wi, ei) in w.iter().zip(e) {
                if *ei != 0.0 {
                    consider(-wi / ei);
                }
            }
            best
        }
    }
}

/// `(dmin, dmax)` between point `p` and segment `s`.
pub fn point_segment_extremes(p: &Point, s: &Segment, metric: Metric) -> (f64, f64) {
    let w = s.a.sub(p);
    let e = s.direction();
    let (_, dmin) = min_affine_norm(&w, &e, 0.0, 1.0, metric);
    let dmax = metric.dist(&p.0, &s.a.0).max(metric.dist(&p.0, &s.b.0));
    (dmin.min(dmax), dmax)
}

/// `(dmin, dmax)` between point `p` and the solid box `c`.
pub fn point_box_extremes(p: &Point, c: &BoxCell, metric: Metric) -> (f64, f64) {
    point_box_extremes_raw(&p.0, c, metric)
}

#[inline]
pub fn point_box_extremes_raw(p: &[f64], c: &BoxCell, metric: Metric) -> (f64, f64) {
    let mut near = [0.0; MAX_DIM];
    let mut far = [0.0; MAX_DIM];
    let d = p.len();
    for i in 0..d {
        let (l, h) = (c.lo.0[i], c.hi.0[i]);
        let x = p[i];
        near[i] = if x < l {
            l - x
        } else if x > h {
            x - h
        } else {
            0.0
        };
        far[i] = (x - l).abs().max((h - x).abs());
    }
    (metric.norm(&near[..d]), metric.norm(&far[..d]))
}

/// `(dmin, dmax)` between two solid boxes.
#[inline]
pub fn box_box_extremes(a: &BoxCell, b: &BoxCell, metric: Metric) -> (f64, f64) {
    let mut near = [0.0; MAX_DIM];
    let mut far = [0.0; MAX_DIM];
    let d = a.dim();
    for i in 0..d {
        let (al, ah, bl, bh) = (a.lo.0[i], a.hi.0[i], b.lo.0[i], b.hi.0[i]);
        near[i] = (bl - ah).max(al - bh).max(0.0);
        far[i] = (bh - al).abs().max((ah - bl).abs());
    }
    (metric.norm(&near[..d]), metric.norm(&far[..d]))
}

/// `(dmin, dmax)` over the product `u × v` of two segments.
pub fn segment_segment_extremes(u: &Segment, v: &Segment, metric: Metric) -> (f64, f64) {
    let dmax = [(&u.a, &v.a), (&u.a, &v.b), (&u.b, &v.a), (&u.b, &v.b)]
        .iter()
        .map(|(p, q)| metric.dist(&p.0, &q.0))
        .fold(0.0, f64::max);
    let dmin = segment_segment_min(u, v, metric);
    (dmin.min(dmax), dmax)
}

fn segment_segment_min(u: &Segment, v: &Segment, metric: Metric) -> f64 {
    // f(s, t) = ‖(u.a - v.a) + s·du - t·dv‖ on the unit square, convex.
    let w = u.a.sub(&v.a);
    let du = u.direction();
    let dv = v.direction();
    let eval = |s: f64, t: f64| {
        let r: Vec<f64> = (0..w.len()).map(|i| w[i] + s * du[i] - t * dv[i]).collect();
        metric.norm(&r)
    };
    // Edges of the square: minimizing along each edge is a 1-D problem.
    let mut best = f64::INFINITY;
    for &t in &[0.0, 1.0] {
        let ww: Vec<f64> = (0..w.len()).map(|i| w[i] - t * dv[i]).collect();
        best = best.min(min_affine_norm(&ww, &du, 0.0, 1.0, metric).1);
    }
    for &s in &[0.0, 1.0] {
        let ww: Vec<f64> = (0..w.len()).map(|i| w[i] + s * du[i]).collect();
        let neg: Vec<f64> = dv.iter().map(|x| -x).collect();
        best = best.min(min_affine_norm(&ww, &neg, 0.0, 1.0, metric).1);
    }
    // Interior critical points.
    match metric {
        Metric::L2 => {
            let a: f64 = du.iter().map(|x| x * x).sum();
            let b: f64 = du.iter().zip(&dv).map(|(x, y)| x * y).sum();
            let c: f64 = dv.iter().map(|x| x * x).sum();
            let dd: f64 = du.iter().zip(&w).map(|(x, y)| x * y).sum();
            let e: f64 = dv.iter().zip(&w).map(|(x, y)| x * y).sum();
            let den = a * c - b * b;
            if den > 1e-14 * a * c {
                let s = (b * e - c * dd) / den;
                let t = (a * e - b * dd) / den;
                if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
                    best = best.min(eval(s, t));
                }
            }
        }
        Metric::L1 => {
            // vertices of the arrangement of lines w_i + s·du_i - t·dv_i = 0
            let n = w.len();
            for i in 0..n {
                for j in i + 1..n {
                    let det = du[i] * (-dv[j]) - du[j] * (-dv[i]);
                    if det.abs() > 1e-300 {
                        let s = ((-w[i]) * (-dv[j]) - (-w[j]) * (-dv[i])) / det;
                        let t = (du[i] * (-w[j]) - du[j] * (-w[i])) / det;
                        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
                            best = best.min(eval(s, t));
                        }
                    }
                }
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        det *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    det
}

/// k-dimensional measure of a simplex (Gram determinant), without the
/// degeneracy check.
pub fn simplex_measure_raw(s: &Simplex) -> f64 {
    let k = s.intrinsic_dim();
    if k == 0 {
        return 0.0;
    }
    let v0 = &s.vertices[0];
    let edges: Vec<Vec<f64>> = s.vertices[1..].iter().map(|v| v.sub(v0)).collect();
    let d = edges[0].len();
    let factorial: f64 = (1..=k).map(|i| i as f64).product();
    if k == d {
        return determinant(edges).abs() / factorial;
    }
    let gram: Vec<Vec<f64>> = edges
        .iter()
        .map(|a| {
            edges
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    determinant(gram).max(0.0).sqrt() / factorial
}

/// k-dimensional measure of a non-degenerate simplex.
pub fn simplex_measure(s: &Simplex) -> Result<f64> {
    let m = simplex_measure_raw(s);
    let k = s.intrinsic_dim() as i32;
    let scale = s.longest_edge().powi(k);
    if !(m > 1e-12 * scale) || m <= 0.0 {
        return Err(EmdError::DegenerateSimplex(m));
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Clipping
// ---------------------------------------------------------------------------

/// Length of `s ∩ c` (Liang–Barsky slab clipping).
pub fn clip_segment_box(s: &Segment, c: &BoxCell) -> f64 {
    match clip_segment_params(s, c) {
        Some((t0, t1)) => (t1 - t0) * s.length(),
        None => 0.0,
    }
}

/// Parameter interval `[t0, t1]` of `s` inside `c`, if non-empty.
pub fn clip_segment_params(s: &Segment, c: &BoxCell) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..s.a.dim() {
        let a = s.a.0[i];
        let da = s.b.0[i] - a;
        let (l, h) = (c.lo.0[i], c.hi.0[i]);
        if da == 0.0 {
            if a < l || a > h {
                return None;
            }
        } else {
            let (mut ta, mut tb) = ((l - a) / da, (h - a) / da);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    (t1 > t0).then_some((t0, t1))
}

/// Measure of `s ∩ c` for a full-dimensional simplex. Exact for d ≤ 3;
/// Monte Carlo with [`MC_SAMPLES`] samples and seed 0 above.
pub fn clip_simplex_box(s: &Simplex, c: &BoxCell) -> f64 {
    if s.ambient_dim() <= 3 {
        clip_simplex_region(s, c)
            .map(|parts| parts.iter().map(simplex_measure_raw).sum())
            .unwrap_or(0.0)
    } else {
        clip_simplex_box_mc(s, c, MC_SAMPLES, 0).0
    }
}

/// Triangulation of `s ∩ c` into simplices of the same dimension (d ≤ 3).
/// Returns `None` for higher dimensions.
pub fn clip_simplex_region(s: &Simplex, c: &BoxCell) -> Option<Vec<Simplex>> {
    let d = s.ambient_dim();
    if s.intrinsic_dim() != d {
        return None;
    }
    let sb = s.bbox();
    if !sb.intersects(c) {
        return Some(Vec::new());
    }
    if s.vertices.iter().all(|v| c.contains(&v.0)) {
        return Some(vec![s.clone()]);
    }
    match d {
        1 => {
            let lo = sb.lo.0[0].max(c.lo.0[0]);
            let hi = sb.hi.0[0].min(c.hi.0[0]);
            Some(if hi > lo {
                vec![Simplex::new(vec![Point(vec![lo]), Point(vec![hi])])]
            } else {
                Vec::new()
            })
        }
        2 => Some(clip_triangle(s, c)),
        3 => Some(clip_tetrahedron(s, c)),
        _ => None,
    }
}

type V2 = [f64; 2];

fn clip_polygon_halfplane(poly: &[V2], axis: usize, bound: f64, keep_below: bool) -> Vec<V2> {
    let inside = |p: &V2| {
        if keep_below {
            p[axis] <= bound
        } else {
            p[axis] >= bound
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        let (ci, pi) = (inside(&cur), inside(&prev));
        if ci != pi {
            let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
            let mut x = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
            x[axis] = bound;
            out.push(x);
        }
        if ci {
            out.push(cur);
        }
    }
    out
}

/// Sutherland–Hodgman clip of a triangle against a box, fanned into triangles.
fn clip_triangle(s: &Simplex, c: &BoxCell) -> Vec<Simplex> {
    let mut poly: Vec<V2> = s.vertices.iter().map(|v| [v.0[0], v.0[1]]).collect();
    for axis in 0..2 {
        poly = clip_polygon_halfplane(&poly, axis, c.lo.0[axis], false);
        if poly.len() < 3 {
            return Vec::new();
        }
        poly = clip_polygon_halfplane(&poly, axis, c.hi.0[axis], true);
        if poly.len() < 3 {
            return Vec::new();
        }
    }
    let mut out = Vec::with_capacity(poly.len() - 2);
    for i in 1..poly.len() - 1 {
        let t = Simplex::new(vec![
            Point(poly[0].to_vec()),
            Point(poly[i].to_vec()),
            Point(poly[i + 1].to_vec()),
        ]);
        if simplex_measure_raw(&t) > 0.0 {
            out.push(t);
        }
    }
    out
}

type V3 = [f64; 3];

fn sub3(a: &V3, b: &V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: &V3, b: &V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn clip_face(face: &[V3], axis: usize, bound: f64, keep_below: bool, cut: &mut Vec<V3>) -> Vec<V3> {
    let inside = |p: &V3| {
        if keep_below {
            p[axis] <= bound
        } else {
            p[axis] >= bound
        }
    };
    let mut out = Vec::with_capacity(face.len() + 2);
    for i in 0..face.len() {
        let cur = face[i];
        let prev = face[(i + face.len() - 1) % face.len()];
        let (ci, pi) = (inside(&cur), inside(&prev));
        if ci != pi {
            let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
            let mut x = [
                prev[0] + t * (cur[0] - prev[0]),
                prev[1] + t * (cur[1] - prev[1]),
                prev[2] + t * (cur[2] - prev[2]),
            ];
            x[axis] = bound;
            out.push(x);
            cut.push(x);
        }
        if ci {
            out.push(cur);
            if cur[axis] == bound {
                cut.push(cur);
            }
        }
    }
    out
}

/// Orders coplanar points on the plane `x[axis] = const` by angle around
/// their centroid, dropping near-duplicates.
fn order_cap(points: &mut Vec<V3>, axis: usize) -> Vec<V3> {
    let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[i]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[j]).sum::<f64>() / n;
    points.sort_by(|a, b| {
        let ta = (a[j] - cy).atan2(a[i] - cx);
        let tb = (b[j] - cy).atan2(b[i] - cx);
        ta.total_cmp(&tb)
    });
    let scale = points
        .iter()
        .map(|p| (p[i] - cx).abs().max((p[j] - cy).abs()))
        .fold(0.0, f64::max);
    let eps = 1e-13 * scale.max(1e-300);
    let mut out: Vec<V3> = Vec::with_capacity(points.len());
    for p in points.iter() {
        if out
            .last()
            .map_or(true, |q: &V3| (p[i] - q[i]).abs() > eps || (p[j] - q[j]).abs() > eps)
        {
            out.push(*p);
        }
    }
    if out.len() > 1 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[i] - l[i]).abs() <= eps && (f[j] - l[j]).abs() <= eps {
            out.pop();
        }
    }
    out
}

/// Clips a tetrahedron against a box as a face-list polytope, then
/// triangulates from the vertex centroid.
fn clip_tetrahedron(s: &Simplex, c: &BoxCell) -> Vec<Simplex> {
    let v: Vec<V3> = s.vertices.iter().map(|p| [p.0[0], p.0[1], p.0[2]]).collect();
    let mut faces: Vec<Vec<V3>> = vec![
        vec![v[0], v[1], v[2]],
        vec![v[0], v[1], v[3]],
        vec![v[0], v[2], v[3]],
        vec![v[1], v[2], v[3]],
    ];
    for axis in 0..3 {
        for &(bound, keep_below) in &[(c.lo.0[axis], false), (c.hi.0[axis], true)] {
            let outside = |p: &V3| {
                if keep_below {
                    p[axis] > bound
                } else {
                    p[axis] < bound
                }
            };
            if !faces.iter().flatten().any(outside) {
                continue;
            }
            if faces.iter().flatten().all(|p| outside(p) || p[axis] == bound) {
                return Vec::new();
            }
            let mut cut = Vec::new();
            let mut next = Vec::with_capacity(faces.len() + 1);
            for f in &faces {
                let clipped = clip_face(f, axis, bound, keep_below, &mut cut);
                if clipped.len() >= 3 {
                    next.push(clipped);
                }
            }
            if cut.len() >= 3 {
                let cap = order_cap(&mut cut, axis);
                if cap.len() >= 3 {
                    next.push(cap);
                }
            }
            faces = next;
            if faces.len() < 4 {
                return Vec::new();
            }
        }
    }
    let (mut cx, mut n) = ([0.0; 3], 0.0);
    for f in &faces {
        for p in f {
            for k in 0..3 {
                cx[k] += p[k];
            }
            n += 1.0;
        }
    }
    let centre = [cx[0] / n, cx[1] / n, cx[2] / n];
    let mut out = Vec::new();
    for f in &faces {
        for i in 1..f.len() - 1 {
            let (a, b, cc) = (f[0], f[i], f[i + 1]);
            let vol = {
                let n = cross3(&sub3(&b, &a), &sub3(&cc, &a));
                let h = sub3(&centre, &a);
                (n[0] * h[0] + n[1] * h[1] + n[2] * h[2]).abs() / 6.0
            };
            if vol > 0.0 {
                out.push(Simplex::new(vec![
                    Point(centre.to_vec()),
                    Point(a.to_vec()),
                    Point(b.to_vec()),
                    Point(cc.to_vec()),
                ]));
            }
        }
    }
    out
}

/// Barycentric inside-test helper for a full-dimensional simplex.
pub struct SimplexLocator {
    origin: Vec<f64>,
    inv: Vec<Vec<f64>>,
}

impl SimplexLocator {
    pub fn new(s: &Simplex) -> Option<Self> {
        let d = s.ambient_dim();
        if s.intrinsic_dim() != d {
            return None;
        }
        let origin = s.vertices[0].0.clone();
        // columns are edge vectors; invert by Gauss-Jordan
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|r| {
                let mut row: Vec<f64> = (1..=d).map(|c| s.vertices[c].0[r] - origin[r]).collect();
                row.extend((0..d).map(|c| if c == r { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..d {
            let piv = (col..d).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[piv][col].abs() < 1e-300 {
                return None;
            }
            a.swap(piv, col);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            for r in 0..d {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for k in 0..2 * d {
                            a[r][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        let inv = a.into_iter().map(|row| row[d..].to_vec()).collect();
        Some(SimplexLocator { origin, inv })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let d = self.origin.len();
        let mut sum = 0.0;
        for r in 0..d {
            let l: f64 = (0..d).map(|c| self.inv[r][c] * (p[c] - self.origin[c])).sum();
            if l < 0.0 {
                return false;
            }
            sum += l;
        }
        sum <= 1.0
    }
}

/// Monte Carlo estimate of `measure(s ∩ c)` with its standard error, using a
/// fixed-seed ChaCha stream.
pub fn clip_simplex_box_mc(s: &Simplex, c: &BoxCell, samples: usize, seed: u64) -> (f64, f64) {
    if !s.bbox().intersects(c) {
        return (0.0, 0.0);
    }
    let Some(loc) = SimplexLocator::new(s) else {
        return (0.0, 0.0);
    };
    let d = c.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..samples {
        for i in 0..d {
            p[i] = rng.gen_range(c.lo.0[i]..=c.hi.0[i]);
        }
        if loc.contains(&p) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    let vol = c.volume();
    let se = vol * (frac * (1.0 - frac) / samples as f64).sqrt();
    (vol * frac, se)
}
