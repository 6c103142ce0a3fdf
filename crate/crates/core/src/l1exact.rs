//! Exact points→segments transport under L1 in the plane.
//!
//! Segments are cut at every point's x and y coordinate, so each piece sees
//! every point from one of the four corners of its bounding box. The cost is
//! then a convex quadratic in the per-quadrant masses, minimized by
//! pairwise Frank–Wolfe with transportation subproblems.

use serde::{Deserialize, Serialize};

use crate::discretize::{Carrier, Piece, Side};
use crate::error::{EmdError, Result};
use crate::flowsolve::{solve_with_costs, verify_flow};
use crate::geometry::{point_segment_extremes, Metric, Point, Segment};
use crate::lift::{Assignment, TransportPlan};
use crate::prematch::Coupling;
use crate::scene::{WeightedPoint, IMBALANCE_TOL};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const MAX_ITERATIONS: usize = 200_000;

/// How a segment's mass is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    #[default]
    Euclidean,
    /// Mass equals the L1 length; the program then has rational
    /// coefficients for lattice input.
    L1,
}

/// `Q1`: |slope| ≤ 1, `Q2`: steeper.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlopeClass {
    Q1,
    Q2,
}

/// Position of a point relative to a subsegment's bounding box. In the
/// frame where the subsegment rises from its left endpoint `A` to its right
/// endpoint `B`: `X1` is below-left (corner `A`), `X2` above-left, `X3`
/// above-right (corner `B`), `X4` below-right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    X1,
    X2,
    X3,
    X4,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::X1, Quadrant::X2, Quadrant::X3, Quadrant::X4];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Subsegment {
    pub segment: usize,
    /// Parameter range on the parent segment.
    pub t0: f64,
    pub t1: f64,
    pub geom: Segment,
    pub class: SlopeClass,
    /// The parent parameter at the left endpoint `A` is `t0` (else `t1`).
    pub a_at_t0: bool,
    /// y is negated in the canonical frame (falling segment).
    pub flipped: bool,
    pub width: f64,
    pub height: f64,
    /// Change in x (resp. y) per unit of mass moved along the subsegment.
    pub w: f64,
    pub h: f64,
    pub mass: f64,
    pub quadrants: Vec<Quadrant>,
}

impl L1Subsegment {
    /// Quadrant filled after `q` from the same end, for the two corner
    /// quadrants.
    fn follower(&self, q: Quadrant) -> Quadrant {
        match (self.class, q) {
            (SlopeClass::Q1, Quadrant::X1) => Quadrant::X2,
            (SlopeClass::Q1, _) => Quadrant::X4,
            (SlopeClass::Q2, Quadrant::X1) => Quadrant::X4,
            (SlopeClass::Q2, _) => Quadrant::X2,
        }
    }

    /// `(w+h, |w−h|, offset)` of the quadratic cost.
    fn coefficients(&self) -> (f64, f64, f64) {
        let off = match self.class {
            SlopeClass::Q1 => self.height,
            SlopeClass::Q2 => self.width,
        };
        (self.w + self.h, (self.w - self.h).abs(), off)
    }

    /// Quadrants from `A` to `B` in the order an optimal plan fills them.
    pub fn fill_order(&self) -> [Quadrant; 4] {
        match self.class {
            SlopeClass::Q1 => [Quadrant::X1, Quadrant::X2, Quadrant::X4, Quadrant::X3],
            SlopeClass::Q2 => [Quadrant::X1, Quadrant::X4, Quadrant::X2, Quadrant::X3],
        }
    }

    /// Parent-segment parameter at mass position `s` measured from `A`.
    fn param_at(&self, s: f64) -> f64 {
        let f = (s / self.mass).clamp(0.0, 1.0);
        if self.a_at_t0 {
            self.t0 + (self.t1 - self.t0) * f
        } else {
            self.t1 - (self.t1 - self.t0) * f
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Program {
    pub points: Vec<WeightedPoint>,
    pub segments: Vec<Segment>,
    pub subsegments: Vec<L1Subsegment>,
    /// `dist[i·k + j]`: L1 distance from point `i` to the corner of
    /// subsegment `j` facing it.
    pub dist: Vec<f64>,
    pub mode: LengthMode,
}

fn l1_len(s: &Segment) -> f64 {
    Metric::L1.dist(&s.a.0, &s.b.0)
}

fn seg_len(s: &Segment, mode: LengthMode) -> f64 {
    match mode {
        LengthMode::Euclidean => s.length(),
        LengthMode::L1 => l1_len(s),
    }
}

fn cut_params(s: &Segment, points: &[WeightedPoint]) -> Vec<f64> {
    let mut ts = vec![0.0, 1.0];
    for axis in 0..2 {
        let (a, b) = (s.a.0[axis], s.b.0[axis]);
        if a == b {
            continue;
        }
        for p in points {
            let t = (p.pos.0[axis] - a) / (b - a);
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|x, y| x.total_cmp(y));
    ts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15);
    ts
}

fn classify(sub: &Segment, p: &Point) -> (bool, bool, Quadrant, [f64; 2]) {
    // canonical frame: A is the left endpoint, the segment rises
    let (a, b) = if (sub.a.0[0], sub.a.0[1]) <= (sub.b.0[0], sub.b.0[1]) { (&sub.a, &sub.b) } else { (&sub.b, &sub.a) };
    let flipped = b.0[1] < a.0[1];
    let sy = if flipped { -1.0 } else { 1.0 };
    let (x0, x1) = (a.0[0], b.0[0]);
    let (y0, y1) = (sy * a.0[1], sy * b.0[1]);
    let (px, py) = (p.0[0], sy * p.0[1]);
    // strips are empty, so the midlines decide; ties go left/down
    let left = px <= 0.5 * (x0 + x1);
    let low = py <= 0.5 * (y0 + y1);
    let (q, corner) = match (left, low) {
        (true, true) => (Quadrant::X1, [x0, y0]),
        (true, false) => (Quadrant::X2, [x0, y1]),
        (false, false) => (Quadrant::X3, [x1, y1]),
        (false, true) => (Quadrant::X4, [x1, y0]),
    };
    (std::ptr::eq(a, &sub.a), flipped, q, [corner[0], sy * corner[1]])
}

/// Splits the segments at the points' coordinates and sets up the quadratic
/// program. Point masses are scaled to the segments' total (within the
/// imbalance tolerance unless `rebalance`).
pub fn build_l1_program(
    metric: Metric,
    points: &[WeightedPoint],
    segments: &[Segment],
    mode: LengthMode,
    rebalance: bool,
) -> Result<L1Program> {
    if metric != Metric::L1 {
        return Err(EmdError::Precondition("the exact solver needs the L1 metric".into()));
    }
    if points.is_empty() || segments.is_empty() {
        return Err(EmdError::InvalidScene("both sides need at least one item".into()));
    }
    for p in points {
        if p.pos.dim() != 2 {
            return Err(EmdError::UnsupportedDimension(p.pos.dim()));
        }
    }
    for (j, s) in segments.iter().enumerate() {
        if s.a.dim() != 2 || s.b.dim() != 2 {
            return Err(EmdError::UnsupportedDimension(s.a.dim().max(s.b.dim())));
        }
        if !(seg_len(s, mode) > 0.0) {
            return Err(EmdError::DegenerateObject { side: 'S', index: j });
        }
    }
    let mp: f64 = points.iter().map(|p| p.mass).sum();
    let ms: f64 = segments.iter().map(|s| seg_len(s, mode)).sum();
    let rel = (mp - ms).abs() / mp.max(ms);
    if rel > IMBALANCE_TOL && !rebalance {
        return Err(EmdError::UnbalancedMass { p: mp, s: ms, rel });
    }
    let points: Vec<WeightedPoint> =
        points.iter().map(|p| WeightedPoint { pos: p.pos.clone(), mass: p.mass * ms / mp }).collect();

    let mut subsegments = Vec::new();
    for (j, s) in segments.iter().enumerate() {
        let ts = cut_params(s, &points);
        for win in ts.windows(2) {
            let (t0, t1) = (win[0], win[1]);
            let geom = s.sub_segment(t0, t1);
            let width = (geom.b.0[0] - geom.a.0[0]).abs();
            let height = (geom.b.0[1] - geom.a.0[1]).abs();
            let mass = seg_len(&geom, mode);
            if mass <= 0.0 {
                continue;
            }
            let (a_at_t0, flipped, _, _) = classify(&geom, &points[0].pos);
            subsegments.push(L1Subsegment {
                segment: j,
                t0,
                t1,
                class: if height <= width { SlopeClass::Q1 } else { SlopeClass::Q2 },
                a_at_t0,
                flipped,
                width,
                height,
                w: width / mass,
                h: height / mass,
                mass,
                quadrants: Vec::with_capacity(points.len()),
                geom,
            });
        }
    }
    let k = subsegments.len();
    let mut dist = vec![0.0; points.len() * k];
    for (j, sub) in subsegments.iter_mut().enumerate() {
        for (i, p) in points.iter().enumerate() {
            let (_, _, q, corner) = classify(&sub.geom, &p.pos);
            sub.quadrants.push(q);
            dist[i * k + j] = Metric::L1.dist(&p.pos.0, &corner);
        }
    }
    Ok(L1Program { points, segments: segments.to_vec(), subsegments, dist, mode })
}

impl L1Program {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn k(&self) -> usize {
        self.subsegments.len()
    }

    /// Per-quadrant masses `x[j][q]`.
    fn quadrant_mass(&self, u: &[f64]) -> Vec<[f64; 4]> {
        let k = self.k();
        let mut x = vec![[0.0; 4]; k];
        for (j, sub) in self.subsegments.iter().enumerate() {
            for i in 0..self.n() {
                x[j][sub.quadrants[i].index()] += u[i * k + j];
            }
        }
        x
    }

    /// Σ d·u plus the corner-to-segment cost of every subsegment.
    pub fn objective(&self, u: &[f64]) -> f64 {
        let lin: f64 = self.dist.iter().zip(u).map(|(d, x)| d * x).sum();
        let x = self.quadrant_mass(u);
        let quad: f64 = self
            .subsegments
            .iter()
            .zip(&x)
            .map(|(sub, xj)| {
                let (a, dd, off) = sub.coefficients();
                [Quadrant::X1, Quadrant::X3]
                    .into_iter()
                    .map(|c| {
                        let (xc, xf) = (xj[c.index()], xj[sub.follower(c).index()]);
                        0.5 * a * xc * xc + xf * (dd * (xc + 0.5 * xf) + off)
                    })
                    .sum::<f64>()
            })
            .sum();
        lin + quad
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let k = self.k();
        let x = self.quadrant_mass(u);
        let mut per = vec![[0.0; 4]; k];
        for (j, sub) in self.subsegments.iter().enumerate() {
            let (a, dd, off) = sub.coefficients();
            for c in [Quadrant::X1, Quadrant::X3] {
                let f = sub.follower(c);
                let (xc, xf) = (x[j][c.index()], x[j][f.index()]);
                per[j][c.index()] = a * xc + dd * xf;
                per[j][f.index()] = dd * (xc + xf) + off;
            }
        }
        let mut g = self.dist.clone();
        for (j, sub) in self.subsegments.iter().enumerate() {
            for i in 0..self.n() {
                g[i * k + j] += per[j][sub.quadrants[i].index()];
            }
        }
        g
    }

    /// `dᵀ H d` for a direction `d`.
    fn curvature(&self, d: &[f64]) -> f64 {
        let x = self.quadrant_mass(d);
        self.subsegments
            .iter()
            .zip(&x)
            .map(|(sub, xj)| {
                let (a, dd, _) = sub.coefficients();
                [Quadrant::X1, Quadrant::X3]
                    .into_iter()
                    .map(|c| {
                        let (xc, xf) = (xj[c.index()], xj[sub.follower(c).index()]);
                        a * xc * xc + 2.0 * dd * xc * xf + dd * xf * xf
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Lays out the mass of subsegment `j` from `A` to `B` with the
    /// quadrants in `order`, each quadrant's share split over its points in
    /// index order. Returns `(point, t0, t1, mass)` on the parent segment.
    pub fn layout(&self, u: &[f64], j: usize, order: [Quadrant; 4]) -> Vec<(usize, f64, f64, f64)> {
        let k = self.k();
        let sub = &self.subsegments[j];
        let mut out = Vec::new();
        let mut s = 0.0;
        for q in order {
            for i in 0..self.n() {
                let m = u[i * k + j];
                if sub.quadrants[i] != q || m <= 0.0 {
                    continue;
                }
                let (ta, tb) = (sub.param_at(s), sub.param_at(s + m));
                out.push((i, ta.min(tb), ta.max(tb), m));
                s += m;
            }
        }
        out
    }

    /// Exact cost of `u` with the given quadrant order on every subsegment,
    /// computed from the geometry (L1 distance is affine along each part).
    pub fn layout_cost(&self, u: &[f64], order: impl Fn(&L1Subsegment) -> [Quadrant; 4]) -> f64 {
        (0..self.k())
            .map(|j| {
                let sub = &self.subsegments[j];
                self.layout(u, j, order(sub))
                    .into_iter()
                    .map(|(i, ta, tb, m)| {
                        let mid = self.segments[sub.segment].at(0.5 * (ta + tb));
                        m * Metric::L1.dist(&self.points[i].pos.0, &mid.0)
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Solution {
    pub plan: TransportPlan,
    pub objective: f64,
    /// Frank–Wolfe duality gap: `objective − gap ≤ OPT ≤ objective`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Worst optimality violation over the linear subproblems.
    pub certificate_violation: f64,
    /// Mass from point `i` to subsegment `j` at `u[i·k + j]`.
    pub u: Vec<f64>,
}

type Vertex = Vec<(usize, f64)>;

/// Minimizes the program to relative duality gap `tol`. Without
/// convergence the best iterate is returned with `converged = false`.
pub fn solve_l1_program(prog: &L1Program, tol: f64) -> Result<L1Solution> {
    solve_l1_program_with(prog, tol, MAX_ITERATIONS)
}

pub fn solve_l1_program_with(prog: &L1Program, tol: f64, max_iter: usize) -> Result<L1Solution> {
    let (n, k) = (prog.n(), prog.k());
    let supply: Vec<f64> = prog.points.iter().map(|p| p.mass).collect();
    let demand: Vec<f64> = prog.subsegments.iter().map(|s| s.mass).collect();
    let mut violation = 0.0f64;
    let mut lmo = |g: &[f64]| -> Result<Vertex> {
        let cost = |i: usize, j: usize| g[i * k + j];
        let flow = solve_with_costs(&supply, &demand, cost)?;
        violation = violation.max(verify_flow(&supply, &demand, cost, &flow));
        let mut v: Vertex = flow.entries.iter().filter(|e| e.mass > 0.0).map(|e| (e.i * k + e.j, e.mass)).collect();
        v.sort_by_key(|e| e.0);
        Ok(v)
    };
    let dense = |v: &Vertex| {
        let mut out = vec![0.0; n * k];
        for &(idx, m) in v {
            out[idx] += m;
        }
        out
    };
    let dot = |g: &[f64], v: &Vertex| v.iter().map(|&(idx, m)| g[idx] * m).sum::<f64>();

    let first = lmo(&prog.dist)?;
    let mut u = dense(&first);
    let mut active: Vec<(Vertex, f64)> = vec![(first, 1.0)];
    let mut gap = f64::INFINITY;
    let mut obj = prog.objective(&u);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let g = prog.gradient(&u);
        let v = lmo(&g)?;
        let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        gap = (gu - dot(&g, &v)).max(0.0);
        if gap <= tol * obj.abs() + 1e-15 {
            converged = true;
            break;
        }
        // pairwise step: move weight from the worst active vertex to v
        let (ai, _) = active
            .iter()
            .enumerate()
            .map(|(idx, (a, _))| (idx, dot(&g, a)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let mut dir = dense(&v);
        for &(idx, m) in &active[ai].0 {
            dir[idx] -= m;
        }
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // v is no better than the away vertex: only the gap is left
            converged = gap <= tol * obj.abs() + 1e-15;
            break;
        }
        let wmax = active[ai].1;
        let curv = prog.curvature(&dir);
        let step = if curv > 0.0 { (-slope / curv).min(wmax) } else { wmax };
        for (x, d) in u.iter_mut().zip(&dir) {
            *x = (*x + step * d).max(0.0);
        }
        match active.iter().position(|(a, _)| *a == v) {
            Some(p) => active[p].1 += step,
            None => active.push((v, step)),
        }
        active[ai].1 -= step;
        if step >= wmax {
            active.remove(ai);
        }
        obj = prog.objective(&u);
    }
    if !converged {
        log::warn!("frank-wolfe stopped after {iterations} iterations with gap {gap:e}");
    }
    let plan = build_plan(prog, &u, obj, gap);
    Ok(L1Solution { plan, objective: obj, gap, iterations, converged, certificate_violation: violation, u })
}

fn build_plan(prog: &L1Program, u: &[f64], objective: f64, gap: f64) -> TransportPlan {
    let mut assignments = Vec::new();
    for (j, sub) in prog.subsegments.iter().enumerate() {
        let parent = &prog.segments[sub.segment];
        for (i, ta, tb, m) in prog.layout(u, j, sub.fill_order()) {
            let p = &prog.points[i].pos;
            let geom = parent.sub_segment(ta, tb);
            let (dmin, dmax) = point_segment_extremes(p, &geom, Metric::L1);
            let cost = m * Metric::L1.dist(&p.0, &geom.midpoint().0);
            assignments.push(Assignment {
                source: Piece::new(Side::P, i, Carrier::Point(p.clone()), prog.points[i].mass),
                target: Piece::new(Side::S, sub.segment, Carrier::SubSegment { geom, t0: ta, t1: tb }, m),
                mass: m,
                dmin,
                dmax,
                cost_quadrature: cost,
                coupling: Coupling::Product,
                matched: false,
            });
        }
    }
    let upper = assignments.iter().map(|a| a.mass * a.dmax).sum();
    TransportPlan {
        cost_estimate: assignments.iter().map(|a| a.cost_quadrature).sum(),
        assignments,
        matched_mass: 0.0,
        cost_upper: upper,
        cost_lower: (objective - gap).max(0.0),
        scale_factor: 1.0,
        mass_scale: 1.0,
    }
}

/// Largest mismatch between what the plan moves and the object masses,
/// relative to the total mass.
pub fn plan_mass_violation(prog: &L1Program, plan: &TransportPlan) -> f64 {
    let mut from = vec![0.0; prog.n()];
    let mut to = vec![0.0; prog.segments.len()];
    for a in &plan.assignments {
        from[a.source.object] += a.mass;
        to[a.target.object] += a.mass;
    }
    let total: f64 = prog.points.iter().map(|p| p.mass).sum();
    let want_s: Vec<f64> = (0..prog.segments.len())
        .map(|j| prog.subsegments.iter().filter(|s| s.segment == j).map(|s| s.mass).sum())
        .collect();
    let vp = from.iter().zip(&prog.points).map(|(f, p)| (f - p.mass).abs()).fold(0.0, f64::max);
    let vs = to.iter().zip(&want_s).map(|(f, w)| (f - w).abs()).fold(0.0, f64::max);
    vp.max(vs) / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn wp(x: f64, y: f64, m: f64) -> WeightedPoint {
        WeightedPoint::new(vec![x, y], m)
    }

    fn seg(a: [f64; 2], b: [f64; 2]) -> Segment {
        Segment::new(Point(a.to_vec()), Point(b.to_vec()))
    }

    fn solve(points: &[WeightedPoint], segs: &[Segment]) -> (L1Program, L1Solution) {
        let prog = build_l1_program(Metric::L1, points, segs, LengthMode::Euclidean, false).unwrap();
        let sol = solve_l1_program(&prog, 1e-9).unwrap();
        (prog, sol)
    }

    #[test]
    fn vertical_segment_closed_form() {
        let (_, sol) = solve(&[wp(0., 0., 1.)], &[seg([1., 0.], [1., 1.])]);
        assert_abs_diff_eq!(sol.objective, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.plan.cost_estimate, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn point_at_midpoint() {
        let (prog, sol) = solve(&[wp(0.5, 0., 1.)], &[seg([0., 0.], [1., 0.])]);
        assert_eq!(prog.k(), 2);
        assert_abs_diff_eq!(sol.objective, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn horizontal_segment_one_or_two_pieces() {
        let prog = build_l1_program(Metric::L1, &[wp(3., 1., 2.)], &[seg([0., 0.], [2., 0.])], LengthMode::Euclidean, false)
            .unwrap();
        assert_eq!(prog.k(), 1);
        assert_eq!(prog.subsegments[0].h, 0.0);
    }

    #[test]
    fn diagonal_cut_count() {
        let s = seg([0., 0.], [1., 1.]);
        let half = 0.5 * s.length();
        let pts = [wp(0.3, 0.6, half), wp(0.7, 0.2, half)];
        let prog = build_l1_program(Metric::L1, &pts, &[s], LengthMode::Euclidean, false).unwrap();
        assert!(prog.k() <= 5);
    }

    #[test]
    fn objective_matches_geometric_layout() {
        let pts = [wp(-1., 2., 0.7), wp(2.5, 0.3, 0.9), wp(0.4, -0.8, 0.6)];
        let segs = [seg([0., 0.], [2., 0.7]), seg([1., -1.], [0.6, 1.5])];
        let total: f64 = segs.iter().map(|s| s.length()).sum();
        let pts: Vec<_> = pts.iter().map(|p| wp(p.pos.0[0], p.pos.0[1], p.mass * total / 2.2)).collect();
        let (prog, sol) = solve(&pts, &segs);
        let geo = prog.layout_cost(&sol.u, |s| s.fill_order());
        assert_abs_diff_eq!(geo, sol.objective, epsilon = 1e-9);
        assert!(sol.converged);
        assert!(plan_mass_violation(&prog, &sol.plan) <= 1e-12);
    }

    #[test]
    fn l1_length_removes_square_roots() {
        let prog = build_l1_program(Metric::L1, &[wp(0., 0., 2.)], &[seg([1., 0.], [2., 1.])], LengthMode::L1, false)
            .unwrap();
        for s in &prog.subsegments {
            assert_abs_diff_eq!(s.w + s.h, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_l2() {
        assert!(build_l1_program(Metric::L2, &[wp(0., 0., 1.)], &[seg([0., 0.], [1., 0.])], LengthMode::Euclidean, false)
            .is_err());
    }
}
