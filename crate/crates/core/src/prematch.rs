//! Greedy pre-matching of nearby mass between two continuous sides. Matched
//! mass moves at most `κ`; what is left has a guaranteed clearance and goes
//! through the adaptive subdivision.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{Carrier, CellCtx, CellUnit, GridKey, Part, Piece, SegUnit, Side};
use crate::geometry::{
    box_box_extremes, min_affine_norm, segment_segment_extremes, simplex_measure_raw, BoxCell, Metric, Segment,
    Simplex,
};

/// Shortest match worth recording (and shortest remainder worth keeping).
pub const MIN_MATCH: f64 = 1e-13;

/// How mass of a pair is coupled inside the two pieces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Product of the two uniform densities.
    Product,
    /// Point `x(t)` of the source goes to `y(t)` of the target (or
    /// `y(1 - t)` when flipped).
    Aligned { flipped: bool },
    /// Every point stays where it is.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchPair {
    pub p: Piece,
    pub s: Piece,
    pub mass: f64,
    /// Largest distance any mass of this pair travels.
    pub bound: f64,
    pub coupling: Coupling,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Residual {
    Segments(Vec<SegUnit>),
    Cells(Vec<CellUnit>),
}

impl Residual {
    pub fn mass(&self) -> f64 {
        match self {
            Residual::Segments(v) => v.iter().map(|u| u.mass).sum(),
            Residual::Cells(v) => v.iter().flat_map(|u| &u.parts).map(|p| p.mass).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Residual::Segments(v) => v.is_empty(),
            Residual::Cells(v) => v.is_empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyMatch {
    pub pairs: Vec<MatchPair>,
    pub total_matched_mass: f64,
    pub residual_p: Residual,
    pub residual_s: Residual,
    /// Global bound on the distance matched mass travels.
    pub kappa: f64,
    /// Guaranteed distance between residual P and residual S mass.
    pub clearance: f64,
}

impl GreedyMatch {
    /// Σ mass · bound over the pairs.
    pub fn cost_bound(&self) -> f64 {
        self.pairs.iter().map(|p| p.mass * p.bound).sum()
    }

    pub fn max_bound(&self) -> f64 {
        self.pairs.iter().map(|p| p.bound).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Segments
// ---------------------------------------------------------------------------

const GOLDEN_ITERS: usize = 120;
const BISECT_ITERS: usize = 80;

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the endpoints of the bracket can beat its midpoint for flat functions
    [mid, lo, hi].into_iter().min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap()
}

/// Last point of `[inside, outside]` (scanning from `inside`) where `ok`
/// holds; `ok(inside)` must hold.
fn bisect_edge(inside: f64, outside: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if ok(outside) {
        return outside;
    }
    let (mut a, mut b) = (inside, outside);
    for _ in 0..BISECT_ITERS {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if ok(m) {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

/// Largest equal-length pieces `p[a, a+ℓ]` and `s[b, b+ℓ]` (arc length,
/// same orientation) whose corresponding points are within `kappa`.
/// Because distance is convex along the correspondence, only the two
/// endpoint pairs need checking. Returns `(a, b, ℓ)`.
fn best_oriented(p: &Segment, s: &Segment, kappa: f64, metric: Metric) -> Option<(f64, f64, f64)> {
    let (lp, ls) = (p.length(), s.length());
    let u: Vec<f64> = p.direction().iter().map(|x| x / lp).collect();
    let v: Vec<f64> = s.direction().iter().map(|x| x / ls).collect();
    let w = p.a.sub(&s.a);
    let e: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    let d = w.len();
    // offset c = a - b; for fixed c the start point runs along w + c·u + t·e
    let base = |c: f64| -> Vec<f64> { (0..d).map(|i| w[i] + c * u[i]).collect() };
    let t_range = |c: f64| (0f64.max(-c), ls.min(lp - c));
    let gap = |c: f64| {
        let (lo, hi) = t_range(c);
        if lo > hi {
            return f64::INFINITY;
        }
        min_affine_norm(&base(c), &e, lo, hi, metric).1
    };
    let c_best = golden_min(-ls, lp, gap);
    if gap(c_best) > kappa {
        return None;
    }
    let feasible = |c: f64| gap(c) <= kappa;
    let c_lo = bisect_edge(c_best, -ls, feasible);
    let c_hi = bisect_edge(c_best, lp, feasible);
    let slice = |c: f64| -> Option<(f64, f64)> {
        let (lo, hi) = t_range(c);
        if lo > hi {
            return None;
        }
        let b0 = base(c);
        let (t_star, val) = min_affine_norm(&b0, &e, lo, hi, metric);
        if val > kappa {
            return None;
        }
        let ok = |t: f64| {
            let x: Vec<f64> = (0..d).map(|i| b0[i] + t * e[i]).collect();
            metric.norm(&x) <= kappa
        };
        Some((bisect_edge(t_star, lo, ok), bisect_edge(t_star, hi, ok)))
    };
    let length = |c: f64| slice(c).map_or(-1.0, |(a, b)| b - a);
    let c = golden_min(c_lo, c_hi, |c| -length(c));
    let (t0, t1) = slice(c)?;
    let len = t1 - t0;
    if len <= MIN_MATCH {
        return None;
    }
    Some((t0 + c, t0, len))
}

#[derive(Clone, Debug)]
struct SegMatch {
    a: f64,
    len_p: f64,
    /// Start on `s` in its own orientation, and length.
    b: f64,
    len_s: f64,
    flipped: bool,
}

fn best_match(p: &Segment, s: &Segment, kappa: f64, density: [f64; 2], metric: Metric) -> Option<SegMatch> {
    if segment_segment_extremes(p, s, metric).0 > kappa {
        return None;
    }
    let fwd = best_oriented(p, s, kappa, metric);
    let rev = best_oriented(p, &s.reversed(), kappa, metric);
    let ls = s.length();
    let pick = match (fwd, rev) {
        (Some(f), Some(r)) => {
            if r.2 > f.2 {
                (r, true)
            } else {
                (f, false)
            }
        }
        (Some(f), None) => (f, false),
        (None, Some(r)) => (r, true),
        (None, None) => return None,
    };
    let ((a, b, len), flipped) = pick;
    // equal mass on both sides
    let mut len_p = len;
    let mut len_s = len * density[0] / density[1];
    if len_s > len {
        len_s = len;
        len_p = len * density[1] / density[0];
    }
    let b_own = if flipped { ls - b - len_s } else { b };
    Some(SegMatch { a, len_p, b: b_own, len_s, flipped })
}

fn sub_unit(u: &SegUnit, x0: f64, x1: f64, density: f64) -> SegUnit {
    let l = u.geom.length();
    let (f0, f1) = (x0 / l, x1 / l);
    let t0 = u.t0 + (u.t1 - u.t0) * f0;
    let t1 = u.t0 + (u.t1 - u.t0) * f1;
    let geom = Segment::new(u.geom.at(f0), u.geom.at(f1));
    SegUnit { object: u.object, geom, t0, t1, mass: density * (x1 - x0) }
}

fn remainders(u: &SegUnit, x0: f64, x1: f64, density: f64) -> Vec<SegUnit> {
    let l = u.geom.length();
    let mut out = Vec::new();
    if x0 > MIN_MATCH {
        out.push(sub_unit(u, 0.0, x0, density));
    }
    if l - x1 > MIN_MATCH {
        out.push(sub_unit(u, x1, l, density));
    }
    out
}

/// Greedy matching of equal-mass sub-pieces within distance `kappa`. P
/// fragments are scanned in object order, each against S fragments in
/// object order; every match consumes the matched parts and the scan
/// restarts until no pair can be matched.
pub fn greedy_match_segments(
    ps: &[Segment],
    ss: &[Segment],
    density: [f64; 2],
    kappa: f64,
    metric: Metric,
) -> GreedyMatch {
    let unit = |(j, s): (usize, &Segment), rho: f64| SegUnit {
        object: j,
        geom: s.clone(),
        t0: 0.0,
        t1: 1.0,
        mass: rho * s.length(),
    };
    let mut rp: Vec<SegUnit> = ps.iter().enumerate().map(|x| unit(x, density[0])).collect();
    let mut rs: Vec<SegUnit> = ss.iter().enumerate().map(|x| unit(x, density[1])).collect();
    let mut pairs = Vec::new();
    'scan: loop {
        for i in 0..rp.len() {
            for j in 0..rs.len() {
                let Some(m) = best_match(&rp[i].geom, &rs[j].geom, kappa, density, metric) else {
                    continue;
                };
                let pu = sub_unit(&rp[i], m.a, m.a + m.len_p, density[0]);
                let su = sub_unit(&rs[j], m.b, m.b + m.len_s, density[1]);
                let (sa, sb) = if m.flipped { (&su.geom.b, &su.geom.a) } else { (&su.geom.a, &su.geom.b) };
                let bound = metric.dist(&pu.geom.a.0, &sa.0).max(metric.dist(&pu.geom.b.0, &sb.0));
                let mass = pu.mass.min(su.mass);
                let rem_p = remainders(&rp[i], m.a, m.a + m.len_p, density[0]);
                let rem_s = remainders(&rs[j], m.b, m.b + m.len_s, density[1]);
                pairs.push(MatchPair {
                    p: Piece::new(Side::P, pu.object, Carrier::SubSegment { geom: pu.geom, t0: pu.t0, t1: pu.t1 }, mass),
                    s: Piece::new(Side::S, su.object, Carrier::SubSegment { geom: su.geom, t0: su.t0, t1: su.t1 }, mass),
                    mass,
                    bound,
                    coupling: Coupling::Aligned { flipped: m.flipped },
                });
                rp.splice(i..i + 1, rem_p);
                rs.splice(j..j + 1, rem_s);
                continue 'scan;
            }
        }
        break;
    }
    let total = pairs.iter().map(|p| p.mass).sum();
    GreedyMatch {
        pairs,
        total_matched_mass: total,
        residual_p: Residual::Segments(rp),
        residual_s: Residual::Segments(rs),
        kappa,
        clearance: kappa,
    }
}

// ---------------------------------------------------------------------------
// Grid matching for triangles and simplices
// ---------------------------------------------------------------------------

/// Fine-cell size used by the grid matcher.
pub fn grid_cell_size(delta: f64, nm: f64, d: usize) -> f64 {
    if d == 2 {
        delta / (2.0 * nm.sqrt())
    } else {
        delta / (4.0 * nm.powf(1.0 / d as f64))
    }
}

#[derive(Clone, Debug, Default)]
struct FineCell {
    parts: [Vec<Part>; 2],
    mass: [f64; 2],
    rem: [f64; 2],
}

impl FineCell {
    fn full(&self, side: usize, vol: f64, density: f64) -> Option<usize> {
        if self.parts[side].len() != 1 {
            return None;
        }
        let p = &self.parts[side][0];
        let m = p.region.as_ref()?.iter().map(simplex_measure_raw).sum::<f64>();
        ((m - vol).abs() <= 1e-12 * vol && (p.mass - density * vol).abs() <= 1e-9 * p.mass).then_some(p.object)
    }
}

/// Splits a cell-to-cell transfer of `mass` over the object parts of both
/// cells in proportion to what each part still holds.
fn part_pairs(
    a: &CellUnitView,
    b: &CellUnitView,
    mass: f64,
    bound: f64,
    coupling: Coupling,
    out: &mut Vec<MatchPair>,
) {
    for pa in a.parts {
        for pb in b.parts {
            let m = mass * (pa.mass / a.mass_total) * (pb.mass / b.mass_total);
            if m > 0.0 {
                out.push(MatchPair {
                    p: Piece::new(Side::P, pa.object, Carrier::Cell { cell: a.bx.clone(), region: pa.region.clone() }, m),
                    s: Piece::new(Side::S, pb.object, Carrier::Cell { cell: b.bx.clone(), region: pb.region.clone() }, m),
                    mass: m,
                    bound,
                    coupling,
                });
            }
        }
    }
}

struct CellUnitView<'a> {
    bx: &'a BoxCell,
    parts: &'a [Part],
    mass_total: f64,
}

fn identical(a: &Simplex, b: &Simplex) -> bool {
    let mut va: Vec<&Vec<f64>> = a.vertices.iter().map(|v| &v.0).collect();
    let mut vb: Vec<&Vec<f64>> = b.vertices.iter().map(|v| &v.0).collect();
    let cmp = |x: &&Vec<f64>, y: &&Vec<f64>| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal);
    va.sort_by(cmp);
    vb.sort_by(cmp);
    va == vb
}

/// Grid matching: identical objects first (distance 0), then cells fully
/// covered by one object on each side (distance 0), then as much as possible
/// inside each fine cell, then with each of the `3^d - 1` neighbours in
/// lexicographic offset order. Residual cells of the two sides end up
/// non-adjacent, hence at least one cell apart.
pub fn greedy_match_grid(
    ps: &[Simplex],
    ss: &[Simplex],
    density: [f64; 2],
    cell: f64,
    longest_edge: f64,
    metric: Metric,
    seed: u64,
) -> GreedyMatch {
    let d = ps[0].ambient_dim();
    let mut pairs = Vec::new();

    // identical objects
    let mut used_s = vec![false; ss.len()];
    let mut whole_p = vec![false; ps.len()];
    let mut whole_s = vec![false; ss.len()];
    for (i, p) in ps.iter().enumerate() {
        for (j, s) in ss.iter().enumerate() {
            if used_s[j] || !identical(p, s) {
                continue;
            }
            let (mp, ms) = (density[0] * simplex_measure_raw(p), density[1] * simplex_measure_raw(s));
            if (mp - ms).abs() > 1e-12 * mp {
                continue;
            }
            used_s[j] = true;
            whole_p[i] = true;
            whole_s[j] = true;
            let m = mp.min(ms);
            let exact = d <= 3;
            pairs.push(MatchPair {
                p: Piece::new(Side::P, i, Carrier::Cell { cell: p.bbox(), region: exact.then(|| vec![p.clone()]) }, m),
                s: Piece::new(Side::S, j, Carrier::Cell { cell: s.bbox(), region: exact.then(|| vec![s.clone()]) }, m),
                mass: m,
                bound: 0.0,
                coupling: Coupling::Identity,
            });
            break;
        }
    }
    let masses_p: Vec<f64> =
        ps.iter().zip(&whole_p).map(|(s, w)| if *w { 0.0 } else { density[0] * simplex_measure_raw(s) }).collect();
    let masses_s: Vec<f64> =
        ss.iter().zip(&whole_s).map(|(s, w)| if *w { 0.0 } else { density[1] * simplex_measure_raw(s) }).collect();
    let ctx_p = CellCtx { objects: ps, base: cell, seed };
    let ctx_s = CellCtx { objects: ss, base: cell, seed: seed ^ 0x5151 };

    // both sides descend from a coarse grid; cells near the other side are
    // refined to the fine level and become matching candidates
    let live_box = |objs: &[Simplex], masses: &[f64]| {
        let idx: Vec<usize> = (0..objs.len()).filter(|&k| masses[k] > 0.0).collect();
        (!idx.is_empty()).then(|| crate::geometry::bbox_of(idx.iter().flat_map(|&k| objs[k].vertices.iter())))
    };
    let zone_p = live_box(ss, &masses_s).map(|b| b.expanded(2.0 * cell));
    let zone_s = live_box(ps, &masses_p).map(|b| b.expanded(2.0 * cell));
    let (far_p, near_p) = descend(&ctx_p, &masses_p, zone_p.as_ref(), longest_edge);
    let (far_s, near_s) = descend(&ctx_s, &masses_s, zone_s.as_ref(), longest_edge);
    let mut fine: BTreeMap<GridKey, FineCell> = BTreeMap::new();
    for (side, near) in [(0usize, near_p), (1, near_s)] {
        for u in near {
            let fc = fine.entry(u.key).or_default();
            let m: f64 = u.parts.iter().map(|p| p.mass).sum();
            fc.mass[side] += m;
            fc.rem[side] += m;
            fc.parts[side].extend(u.parts);
        }
    }

    let vol = cell.powi(d as i32);
    let keys: Vec<GridKey> = fine.keys().cloned().collect();

    // fully covered on both sides: zero-distance identity
    for key in &keys {
        let fc = fine.get_mut(key).unwrap();
        let (Some(_), Some(_)) = (fc.full(0, vol, density[0]), fc.full(1, vol, density[1])) else {
            continue;
        };
        let m = fc.rem[0].min(fc.rem[1]);
        let bx = key.bx(cell);
        let a = CellUnitView { bx: &bx, parts: &fc.parts[0], mass_total: fc.mass[0] };
        let b = CellUnitView { bx: &bx, parts: &fc.parts[1], mass_total: fc.mass[1] };
        part_pairs(&a, &b, m, 0.0, Coupling::Identity, &mut pairs);
        fc.rem[0] -= m;
        fc.rem[1] -= m;
    }

    // inside each cell
    for key in &keys {
        let fc = fine.get_mut(key).unwrap();
        let m = fc.rem[0].min(fc.rem[1]);
        if m <= 0.0 {
            continue;
        }
        let bx = key.bx(cell);
        let bound = bx.diameter(metric);
        let a = CellUnitView { bx: &bx, parts: &fc.parts[0], mass_total: fc.mass[0] };
        let b = CellUnitView { bx: &bx, parts: &fc.parts[1], mass_total: fc.mass[1] };
        part_pairs(&a, &b, m, bound, Coupling::Product, &mut pairs);
        fc.rem[0] -= m;
        fc.rem[1] -= m;
    }

    // with neighbours
    let offsets: Vec<Vec<i64>> = {
        let mut v = Vec::new();
        let total = 3usize.pow(d as u32);
        for code in 0..total {
            let mut c = code;
            let mut off = vec![0i64; d];
            for slot in off.iter_mut().rev() {
                *slot = (c % 3) as i64 - 1;
                c /= 3;
            }
            if off.iter().any(|&x| x != 0) {
                v.push(off);
            }
        }
        v
    };
    for key in &keys {
        if fine[key].rem[0] <= 0.0 {
            continue;
        }
        for off in &offsets {
            let nk = GridKey { level: 0, idx: key.idx.iter().zip(off).map(|(a, b)| a + b).collect() };
            let Some(nrem) = fine.get(&nk).map(|f| f.rem[1]) else {
                continue;
            };
            let here = fine[key].rem[0];
            if here <= 0.0 {
                break;
            }
            let m = here.min(nrem);
            if m <= 0.0 {
                continue;
            }
            let (bx, nbx) = (key.bx(cell), nk.bx(cell));
            let bound = box_box_extremes(&bx, &nbx, metric).1;
            {
                let fa = &fine[key];
                let fb = &fine[&nk];
                let a = CellUnitView { bx: &bx, parts: &fa.parts[0], mass_total: fa.mass[0] };
                let b = CellUnitView { bx: &nbx, parts: &fb.parts[1], mass_total: fb.mass[1] };
                part_pairs(&a, &b, m, bound, Coupling::Product, &mut pairs);
            }
            fine.get_mut(key).unwrap().rem[0] -= m;
            fine.get_mut(&nk).unwrap().rem[1] -= m;
        }
    }

    // what is left: untouched coarse cells plus the scaled fine cells
    let mut rp = far_p;
    let mut rs = far_s;
    for (key, fc) in fine {
        let FineCell { parts, mass, rem } = fc;
        let bx = key.bx(cell);
        for ((side, parts), out) in [(0usize, &parts[0]), (1, &parts[1])].into_iter().zip([&mut rp, &mut rs]) {
            if mass[side] <= 0.0 {
                continue;
            }
            let f = (rem[side] / mass[side]).max(0.0);
            if f <= 1e-12 {
                continue;
            }
            let parts = parts.iter().map(|p| Part { mass: p.mass * f, ..p.clone() }).collect();
            out.push(CellUnit { key: key.clone(), bx: bx.clone(), parts });
        }
    }
    let total = pairs.iter().map(|p| p.mass).sum();
    let kappa = pairs.iter().map(|p| p.bound).fold(0.0, f64::max);
    GreedyMatch {
        pairs,
        total_matched_mass: total,
        residual_p: Residual::Cells(rp),
        residual_s: Residual::Cells(rs),
        kappa,
        clearance: cell,
    }
}

/// Coarsest level whose cells have side at least `longest_edge`.
pub fn coarse_level(base: f64, longest_edge: f64) -> i32 {
    let mut top = 0i32;
    while base * 2f64.powi(top) < longest_edge {
        top += 1;
    }
    -top
}

/// Splits one side's cells from the coarse grid down to the fine level
/// wherever they meet `zone`. Returns `(cells away from the zone, fine
/// cells in it)`.
fn descend(ctx: &CellCtx, masses: &[f64], zone: Option<&BoxCell>, longest_edge: f64) -> (Vec<CellUnit>, Vec<CellUnit>) {
    if masses.iter().all(|&m| m <= 0.0) {
        return (Vec::new(), Vec::new());
    }
    let roots: Vec<CellUnit> = ctx
        .initial_cells(masses, coarse_level(ctx.base, longest_edge))
        .into_iter()
        .map(|mut u| {
            u.parts.retain(|p| masses[p.object] > 0.0);
            u
        })
        .filter(|u| !u.parts.is_empty())
        .collect();
    let per: Vec<(Vec<CellUnit>, Vec<CellUnit>)> = roots
        .into_par_iter()
        .map(|root| {
            let (mut far, mut near) = (Vec::new(), Vec::new());
            let mut stack = vec![root];
            while let Some(u) = stack.pop() {
                if !zone.is_some_and(|z| z.intersects(&u.bx)) {
                    far.push(u);
                } else if u.key.level >= 0 {
                    near.push(u);
                } else {
                    let mut kids = ctx.split(&u);
                    kids.reverse();
                    stack.extend(kids);
                }
            }
            (far, near)
        })
        .collect();
    let mut far = Vec::new();
    let mut near = Vec::new();
    for (f, n) in per {
        far.extend(f);
        near.extend(n);
    }
    (far, near)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use approx::assert_abs_diff_eq;

    fn seg(a: [f64; 2], b: [f64; 2]) -> Segment {
        Segment::new(Point(a.to_vec()), Point(b.to_vec()))
    }

    fn check_pairs(g: &GreedyMatch, kappa: f64, metric: Metric) {
        for pr in &g.pairs {
            assert!(pr.bound <= kappa * (1.0 + 1e-12), "bound {} > {kappa}", pr.bound);
            if let (Carrier::SubSegment { geom: a, .. }, Carrier::SubSegment { geom: b, .. }) = (&pr.p.carrier, &pr.s.carrier) {
                let b = if matches!(pr.coupling, Coupling::Aligned { flipped: true }) { b.reversed() } else { b.clone() };
                for k in 0..=100 {
                    let t = k as f64 / 100.0;
                    assert!(metric.dist(&a.at(t).0, &b.at(t).0) <= kappa + 1e-12);
                }
            }
        }
    }

    #[test]
    fn parallel_at_twice_kappa_unmatched() {
        let g = greedy_match_segments(&[seg([0., 0.], [1., 0.])], &[seg([0., 0.2], [1., 0.2])], [1.0, 1.0], 0.1, Metric::L2);
        assert!(g.pairs.is_empty());
        assert_abs_diff_eq!(g.residual_p.mass(), 1.0);
        assert_abs_diff_eq!(g.residual_s.mass(), 1.0);
    }

    #[test]
    fn identical_segments_fully_matched() {
        let s = seg([0., 0.], [1., 0.5]);
        let g = greedy_match_segments(&[s.clone()], &[s], [1.0, 1.0], 0.01, Metric::L2);
        assert!(g.residual_p.is_empty() && g.residual_s.is_empty());
        assert_abs_diff_eq!(g.total_matched_mass, 1.25f64.sqrt(), epsilon = 1e-9);
        assert!(g.cost_bound() <= 1e-9);
    }

    #[test]
    fn tightness_instance_greedy_choice() {
        let p = [seg([0., 2.], [1., 2.]), seg([0., 0.], [1., 0.])];
        let s = [seg([0., 1.], [1., 1.]), seg([0., 3.], [1., 3.])];
        let g = greedy_match_segments(&p, &s, [1.0, 1.0], 1.0, Metric::L2);
        assert_eq!(g.pairs.len(), 1);
        assert_eq!((g.pairs[0].p.object, g.pairs[0].s.object), (0, 0));
        assert_abs_diff_eq!(g.total_matched_mass, 1.0, epsilon = 1e-9);
        check_pairs(&g, 1.0, Metric::L2);
    }

    #[test]
    fn crossing_and_skew_segments() {
        let p = [seg([0., 0.], [1., 1.])];
        let s = [seg([0., 1.], [1., 0.])];
        let kappa = 0.1;
        let g = greedy_match_segments(&p, &s, [1.0, 1.0], kappa, Metric::L2);
        assert!(!g.pairs.is_empty());
        check_pairs(&g, kappa, Metric::L2);
        // residual clearance
        let (Residual::Segments(a), Residual::Segments(b)) = (&g.residual_p, &g.residual_s) else { panic!() };
        for x in a {
            for y in b {
                assert!(segment_segment_extremes(&x.geom, &y.geom, Metric::L2).0 >= kappa * (1.0 - 1e-9));
            }
        }
        let rp: f64 = g.residual_p.mass() + g.total_matched_mass;
        assert_abs_diff_eq!(rp, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn crossing_match_is_maximal_length() {
        // an X crossing at right angles: a match of length ℓ centred on the
        // crossing has endpoint distance ℓ/√2 (same orientation), so the
        // best length is √2·κ
        let p = [seg([-1., -1.], [1., 1.])];
        let s = [seg([-1., 1.], [1., -1.])];
        let kappa = 0.05;
        let g = greedy_match_segments(&p, &s, [1.0, 1.0], kappa, Metric::L2);
        let first = &g.pairs[0];
        let len = match &first.p.carrier {
            Carrier::SubSegment { geom, .. } => geom.length(),
            _ => unreachable!(),
        };
        assert_abs_diff_eq!(len, 2f64.sqrt() * kappa, epsilon = 1e-7);
    }

    fn tri(off: [f64; 2], a: f64) -> Simplex {
        Simplex::new(vec![
            Point(vec![off[0], off[1]]),
            Point(vec![off[0] + a, off[1]]),
            Point(vec![off[0], off[1] + a]),
        ])
    }

    #[test]
    fn identical_triangles_matched_at_zero() {
        let t = tri([0.1, 0.2], 2f64.sqrt());
        let g = greedy_match_grid(&[t.clone()], &[t], [1.0, 1.0], 0.05, 2f64.sqrt(), Metric::L2, 0);
        assert!(g.residual_p.is_empty() && g.residual_s.is_empty());
        assert_abs_diff_eq!(g.total_matched_mass, 1.0, epsilon = 1e-12);
        assert_eq!(g.cost_bound(), 0.0);
    }

    #[test]
    fn separated_triangles_unmatched() {
        let a = tri([0., 0.], 1.0);
        let b = tri([5., 5.], 1.0);
        let g = greedy_match_grid(&[a], &[b], [1.0, 1.0], 0.05, 1.0, Metric::L2, 0);
        assert!(g.pairs.is_empty());
        assert_abs_diff_eq!(g.residual_p.mass(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.residual_s.mass(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn offset_copies_conserve_and_clear() {
        let c = 0.1;
        let a = tri([0.0, 0.0], 1.0);
        let b = tri([0.5 * c, 0.0], 1.0);
        let g = greedy_match_grid(&[a], &[b], [1.0, 1.0], c, 1.0, Metric::L2, 0);
        assert_abs_diff_eq!(g.total_matched_mass + g.residual_p.mass(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(g.total_matched_mass + g.residual_s.mass(), 0.5, epsilon = 1e-9);
        let (Residual::Cells(rp), Residual::Cells(rs)) = (&g.residual_p, &g.residual_s) else { panic!() };
        for x in rp {
            for y in rs {
                assert!(box_box_extremes(&x.bx, &y.bx, Metric::L2).0 >= c * (1.0 - 1e-9));
            }
        }
        for pr in &g.pairs {
            assert!(pr.bound <= box_box_extremes(&BoxCell::new(Point(vec![0., 0.]), Point(vec![c, c])), &BoxCell::new(Point(vec![c, c]), Point(vec![2. * c, 2. * c])), Metric::L2).1 + 1e-12);
        }
    }
}
