//! Adaptive subdivision of continuous mass into pieces whose distance ratio
//! to every opposite-side entity is at most `1 + δ` (or which lie within the
//! near-distance cutoff of an opposite point).

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EmdError, Result};
use crate::geometry::{
    box_box_extremes, clip_simplex_box_mc, clip_simplex_region, point_box_extremes_raw, point_segment_extremes,
    segment_segment_extremes, simplex_measure_raw, BoxCell, Metric, Point, Segment, Simplex,
};

/// Pieces shorter (or cells smaller) than this abort the subdivision.
pub const FLOOR: f64 = 1e-12;
/// Children lighter than this fraction of their parent are dropped (the
/// siblings absorb their mass).
const SLIVER: f64 = 1e-12;
/// Samples per Monte Carlo clip (dimension 4 and above).
pub const MC_CLIP_SAMPLES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    P,
    S,
}

impl Side {
    pub fn tag(self) -> char {
        match self {
            Side::P => 'P',
            Side::S => 'S',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Point(Point),
    /// Part `[t0, t1]` of the parent segment; `geom` is that sub-segment.
    SubSegment { geom: Segment, t0: f64, t1: f64 },
    /// A grid cell clipped to one object; `region` triangulates the clipped
    /// part when it is known exactly (dimension ≤ 3).
    Cell {
        cell: BoxCell,
        #[serde(skip)]
        region: Option<Vec<Simplex>>,
    },
}

impl Carrier {
    pub fn diameter(&self, metric: Metric) -> f64 {
        match self {
            Carrier::Point(_) => 0.0,
            Carrier::SubSegment { geom, .. } => metric.dist(&geom.a.0, &geom.b.0),
            Carrier::Cell { cell, .. } => cell.diameter(metric),
        }
    }

    pub fn bbox(&self) -> BoxCell {
        match self {
            Carrier::Point(p) => BoxCell::new(p.clone(), p.clone()),
            Carrier::SubSegment { geom, .. } => crate::geometry::bbox_of([&geom.a, &geom.b].into_iter()),
            Carrier::Cell { cell, .. } => cell.clone(),
        }
    }
}

/// `(dmin, dmax)` between two carriers (cells are treated as solid boxes).
pub fn carrier_extremes(a: &Carrier, b: &Carrier, metric: Metric) -> (f64, f64) {
    use Carrier::*;
    match (a, b) {
        (Point(p), Point(q)) => {
            let d = metric.dist(&p.0, &q.0);
            (d, d)
        }
        (Point(p), SubSegment { geom, .. }) | (SubSegment { geom, .. }, Point(p)) => point_segment_extremes(p, geom, metric),
        (Point(p), Cell { cell, .. }) | (Cell { cell, .. }, Point(p)) => point_box_extremes_raw(&p.0, cell, metric),
        (SubSegment { geom: u, .. }, SubSegment { geom: v, .. }) => segment_segment_extremes(u, v, metric),
        _ => box_box_extremes(&a.bbox(), &b.bbox(), metric),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub side: Side,
    pub object: usize,
    pub carrier: Carrier,
    /// Mass carried by the piece.
    pub measure: f64,
    pub rep: Point,
}

/// Representative point of a piece: the point itself, a subsegment's
/// midpoint or a cell's center.
pub fn choose_representative(c: &Carrier) -> Point {
    match c {
        Carrier::Point(p) => p.clone(),
        Carrier::SubSegment { geom, .. } => geom.midpoint(),
        Carrier::Cell { cell, .. } => cell.center(),
    }
}

impl Piece {
    pub fn new(side: Side, object: usize, carrier: Carrier, measure: f64) -> Self {
        let rep = choose_representative(&carrier);
        Piece { side, object, carrier, measure, rep }
    }
}

/// Pieces of one side, grouped into flow nodes. Pieces of one node share
/// their carrier geometry (a grid cell crossed by several objects).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Discretization {
    pub pieces: Vec<Piece>,
    pub nodes: Vec<Range<usize>>,
}

impl Discretization {
    /// One node per piece.
    pub fn singletons(pieces: Vec<Piece>) -> Self {
        let nodes = (0..pieces.len()).map(|i| i..i + 1).collect();
        Discretization { pieces, nodes }
    }

    pub fn node_mass(&self, k: usize) -> f64 {
        self.pieces[self.nodes[k].clone()].iter().map(|p| p.measure).sum()
    }

    pub fn node_carrier(&self, k: usize) -> &Carrier {
        &self.pieces[self.nodes[k].start].carrier
    }

    pub fn node_rep(&self, k: usize) -> &Point {
        &self.pieces[self.nodes[k].start].rep
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.measure).sum()
    }

    pub fn append(&mut self, other: Discretization) {
        let off = self.pieces.len();
        self.pieces.extend(other.pieces);
        self.nodes.extend(other.nodes.into_iter().map(|r| r.start + off..r.end + off));
    }

    pub fn report(&self, cutoff: f64, ratio: f64, metric: Metric) -> SubdivisionReport {
        SubdivisionReport {
            piece_count: self.pieces.len(),
            node_count: self.nodes.len(),
            min_piece_size: self
                .pieces
                .iter()
                .map(|p| p.carrier.diameter(metric))
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min),
            cutoff,
            ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdivisionReport {
    pub piece_count: usize,
    pub node_count: usize,
    pub min_piece_size: f64,
    pub cutoff: f64,
    pub ratio: f64,
}

/// Stopping rule: a pair is fine when the piece lies within `cutoff` of the
/// opposite entity or the distance ratio is at most `ratio`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub ratio: f64,
    pub cutoff: f64,
}

impl Rule {
    pub fn new(delta: f64, cutoff: f64) -> Self {
        Rule { ratio: 1.0 + delta, cutoff }
    }

    #[inline]
    pub fn ok(&self, dmin: f64, dmax: f64) -> bool {
        dmax <= self.cutoff || dmax <= self.ratio * dmin
    }
}

// ---------------------------------------------------------------------------
// Segments against points
// ---------------------------------------------------------------------------

/// Halves every segment until each subsegment satisfies `rule` against every
/// point. `masses[j]` is the mass of segment `j`.
pub fn subdivide_segments_vs_points(
    points: &[Point],
    segs: &[Segment],
    masses: &[f64],
    side: Side,
    rule: Rule,
    metric: Metric,
) -> Result<Discretization> {
    let per: Vec<Result<Vec<Piece>>> = segs
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let mut out = Vec::new();
            let mut stack = vec![(0.0f64, 1.0f64)];
            while let Some((t0, t1)) = stack.pop() {
                let geom = s.sub_segment(t0, t1);
                let fine = points.iter().all(|p| {
                    let (lo, hi) = point_segment_extremes(p, &geom, metric);
                    rule.ok(lo, hi)
                });
                if fine {
                    out.push(Piece::new(side, j, Carrier::SubSegment { geom, t0, t1 }, masses[j] * (t1 - t0)));
                } else {
                    if geom.length() < FLOOR {
                        return Err(EmdError::SubdivisionFloor(geom.length()));
                    }
                    let tm = 0.5 * (t0 + t1);
                    stack.push((tm, t1));
                    stack.push((t0, tm));
                }
            }
            Ok(out)
        })
        .collect();
    let mut pieces = Vec::new();
    for r in per {
        pieces.extend(r?);
    }
    Ok(Discretization::singletons(pieces))
}

// ---------------------------------------------------------------------------
// Grid cells
// ---------------------------------------------------------------------------

/// Cell of a dyadic grid: side `base · 2^-level`, lower corner `idx · side`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridKey {
    pub level: i32,
    pub idx: Vec<i64>,
}

impl GridKey {
    pub fn side(&self, base: f64) -> f64 {
        base * 2f64.powi(-self.level)
    }

    pub fn bx(&self, base: f64) -> BoxCell {
        let h = self.side(base);
        BoxCell::new(
            Point(self.idx.iter().map(|&i| i as f64 * h).collect()),
            Point(self.idx.iter().map(|&i| (i + 1) as f64 * h).collect()),
        )
    }

    /// Children in binary axis order (bit `i` set = upper half along axis `i`).
    pub fn children(&self) -> Vec<GridKey> {
        let d = self.idx.len();
        (0..1usize << d)
            .map(|mask| GridKey {
                level: self.level + 1,
                idx: (0..d).map(|i| 2 * self.idx[i] + (mask >> i & 1) as i64).collect(),
            })
            .collect()
    }

    /// Ancestor at a coarser `level`.
    pub fn ancestor(&self, level: i32) -> GridKey {
        let shift = self.level - level;
        debug_assert!(shift >= 0);
        GridKey { level, idx: self.idx.iter().map(|&i| i >> shift).collect() }
    }

    /// Keys of the level-`level` cells meeting the box `b`.
    pub fn covering(b: &BoxCell, base: f64, level: i32) -> Vec<GridKey> {
        let h = base * 2f64.powi(-level);
        let d = b.dim();
        let lo: Vec<i64> = (0..d).map(|i| (b.lo.0[i] / h).floor() as i64).collect();
        let hi: Vec<i64> = (0..d).map(|i| (b.hi.0[i] / h).floor() as i64).collect();
        let mut out = Vec::new();
        let mut cur = lo.clone();
        loop {
            out.push(GridKey { level, idx: cur.clone() });
            let mut axis = 0;
            loop {
                if axis == d {
                    return out;
                }
                cur[axis] += 1;
                if cur[axis] <= hi[axis] {
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

/// The part of one object inside a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub object: usize,
    pub region: Option<Vec<Simplex>>,
    pub mass: f64,
}

/// A grid cell with the parts of the objects it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct CellUnit {
    pub key: GridKey,
    pub bx: BoxCell,
    pub parts: Vec<Part>,
}

/// Context for splitting cells: objects, grid base and Monte Carlo seed.
pub struct CellCtx<'a> {
    pub objects: &'a [Simplex],
    pub base: f64,
    pub seed: u64,
}

impl CellCtx<'_> {
    fn weight(&self, part: &Part, child: &GridKey, bx: &BoxCell) -> (Option<Vec<Simplex>>, f64) {
        match &part.region {
            Some(_) => {
                // object ∩ child box equals (object ∩ parent box) ∩ child box;
                // clipping the object keeps the fragment count bounded
                let sub = clip_simplex_region(&self.objects[part.object], bx).unwrap_or_default();
                let w = sub.iter().map(simplex_measure_raw).sum();
                (Some(sub), w)
            }
            None => {
                let mut h = self.seed ^ (child.level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                for &i in &child.idx {
                    h = h.rotate_left(17) ^ (i as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                }
                h ^= part.object as u64;
                (None, clip_simplex_box_mc(&self.objects[part.object], bx, MC_CLIP_SAMPLES, h).0)
            }
        }
    }

    /// Part of `object` in cell `bx`, with its clipped measure.
    fn initial(&self, object: usize, key: &GridKey, bx: &BoxCell) -> (Option<Vec<Simplex>>, f64) {
        let s = &self.objects[object];
        let exact = s.ambient_dim() <= 3 && s.intrinsic_dim() == s.ambient_dim();
        let whole = Part { object, region: exact.then(|| vec![s.clone()]), mass: 0.0 };
        self.weight(&whole, key, bx)
    }

    /// Splits into the `2^d` children; per-object masses are distributed in
    /// proportion to the clipped measure, so they sum exactly to the parent.
    pub fn split(&self, u: &CellUnit) -> Vec<CellUnit> {
        let keys = u.key.children();
        let boxes: Vec<BoxCell> = keys.iter().map(|k| k.bx(self.base)).collect();
        let mut kids: Vec<CellUnit> = keys
            .iter()
            .zip(&boxes)
            .map(|(k, b)| CellUnit { key: k.clone(), bx: b.clone(), parts: Vec::new() })
            .collect();
        for part in &u.parts {
            let ws: Vec<(Option<Vec<Simplex>>, f64)> =
                keys.iter().zip(&boxes).map(|(k, b)| self.weight(part, k, b)).collect();
            let total: f64 = ws.iter().map(|w| w.1).sum();
            let keep: Vec<bool> = ws.iter().map(|w| w.1 > SLIVER * total).collect();
            let kept: f64 = ws.iter().zip(&keep).filter(|(_, k)| **k).map(|(w, _)| w.1).sum();
            if !(kept > 0.0) {
                // invisible to the clipper (a Monte Carlo miss): keep it whole
                // in the child nearest the object's centroid
                let c = self.objects[part.object].centroid();
                let k = (0..kids.len())
                    .min_by(|&a, &b| {
                        let da = point_box_extremes_raw(&c.0, &kids[a].bx, Metric::L2).0;
                        let db = point_box_extremes_raw(&c.0, &kids[b].bx, Metric::L2).0;
                        da.total_cmp(&db)
                    })
                    .unwrap();
                kids[k].parts.push(part.clone());
                continue;
            }
            for ((kid, (region, w)), k) in kids.iter_mut().zip(ws).zip(keep) {
                if k {
                    kid.parts.push(Part { object: part.object, region, mass: part.mass * w / kept });
                }
            }
        }
        kids.retain(|k| !k.parts.is_empty());
        kids
    }

    /// Grid cells of level `level` meeting the objects, each carrying the
    /// clipped parts (masses proportional to clipped measure, summing to the
    /// object masses).
    pub fn initial_cells(&self, masses: &[f64], level: i32) -> Vec<CellUnit> {
        let mut cells: BTreeMap<GridKey, Vec<Part>> = BTreeMap::new();
        for (j, s) in self.objects.iter().enumerate() {
            let keys = GridKey::covering(&s.bbox(), self.base, level);
            let ws: Vec<(GridKey, Option<Vec<Simplex>>, f64)> = keys
                .into_par_iter()
                .map(|k| {
                    let b = k.bx(self.base);
                    let (r, w) = self.initial(j, &k, &b);
                    (k, r, w)
                })
                .collect();
            let total: f64 = ws.iter().map(|w| w.2).sum();
            let kept: f64 = ws.iter().filter(|w| w.2 > SLIVER * total).map(|w| w.2).sum();
            for (k, region, w) in ws {
                if w > SLIVER * total {
                    cells.entry(k).or_default().push(Part { object: j, region, mass: masses[j] * w / kept });
                }
            }
        }
        cells
            .into_iter()
            .map(|(key, parts)| {
                let bx = key.bx(self.base);
                CellUnit { key, bx, parts }
            })
            .collect()
    }
}

/// Cell units to pieces (one node per cell, one piece per object part).
pub fn cell_pieces(units: Vec<CellUnit>, side: Side) -> Discretization {
    let mut out = Discretization::default();
    for u in units {
        let start = out.pieces.len();
        for part in u.parts {
            out.pieces.push(Piece::new(
                side,
                part.object,
                Carrier::Cell { cell: u.bx.clone(), region: part.region },
                part.mass,
            ));
        }
        out.nodes.push(start..out.pieces.len());
    }
    out
}

/// Grid cells of size `base` (Δ) meeting the objects, recursively split into
/// `2^d` children until each satisfies `rule` against every point.
pub fn build_cells_vs_points(
    points: &[Point],
    ctx: &CellCtx,
    masses: &[f64],
    side: Side,
    rule: Rule,
    metric: Metric,
) -> Result<Discretization> {
    let roots = ctx.initial_cells(masses, 0);
    let per: Vec<Result<Vec<CellUnit>>> = roots
        .into_par_iter()
        .map(|root| {
            let mut out = Vec::new();
            let mut stack = vec![root];
            while let Some(u) = stack.pop() {
                let fine = points.iter().all(|p| {
                    let (lo, hi) = point_box_extremes_raw(&p.0, &u.bx, metric);
                    rule.ok(lo, hi)
                });
                if fine {
                    out.push(u);
                } else {
                    if u.bx.max_side() < FLOOR {
                        return Err(EmdError::SubdivisionFloor(u.bx.max_side()));
                    }
                    let mut kids = ctx.split(&u);
                    kids.reverse();
                    stack.extend(kids);
                }
            }
            Ok(out)
        })
        .collect();
    let mut units = Vec::new();
    for r in per {
        units.extend(r?);
    }
    Ok(cell_pieces(units, side))
}

// ---------------------------------------------------------------------------
// Continuous against continuous
// ---------------------------------------------------------------------------

/// A residual segment fragment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegUnit {
    pub object: usize,
    pub geom: Segment,
    pub t0: f64,
    pub t1: f64,
    pub mass: f64,
}

impl SegUnit {
    fn halves(&self) -> [SegUnit; 2] {
        let tm = 0.5 * (self.t0 + self.t1);
        let mid = self.geom.midpoint();
        [
            SegUnit { object: self.object, geom: Segment::new(self.geom.a.clone(), mid.clone()), t0: self.t0, t1: tm, mass: 0.5 * self.mass },
            SegUnit { object: self.object, geom: Segment::new(mid, self.geom.b.clone()), t0: tm, t1: self.t1, mass: 0.5 * self.mass },
        ]
    }
}

/// Something that can be refined pairwise against the opposite side.
pub trait Unit: Sized + Send + Sync {
    fn diam(&self, metric: Metric) -> f64;
    fn extremes(&self, other: &Self, metric: Metric) -> (f64, f64);
    /// Lower bound on the distance between the masses of two units, or
    /// `None` when it cannot be told apart from the unit extents.
    fn mass_gap(&self, other: &Self, metric: Metric) -> Option<f64> {
        Some(self.extremes(other, metric).0)
    }
}

impl Unit for SegUnit {
    fn diam(&self, metric: Metric) -> f64 {
        metric.dist(&self.geom.a.0, &self.geom.b.0)
    }

    fn extremes(&self, other: &Self, metric: Metric) -> (f64, f64) {
        segment_segment_extremes(&self.geom, &other.geom, metric)
    }
}

impl Unit for CellUnit {
    fn diam(&self, metric: Metric) -> f64 {
        self.bx.diameter(metric)
    }

    fn extremes(&self, other: &Self, metric: Metric) -> (f64, f64) {
        box_box_extremes(&self.bx, &other.bx, metric)
    }

    fn mass_gap(&self, other: &Self, metric: Metric) -> Option<f64> {
        let (a, b) = (self.mass_box()?, other.mass_box()?);
        Some(box_box_extremes(&a, &b, metric).0)
    }
}

impl CellUnit {
    /// Bounding box of the clipped regions, when all parts have one.
    pub fn mass_box(&self) -> Option<BoxCell> {
        let mut verts = Vec::new();
        for p in &self.parts {
            for s in p.region.as_ref()? {
                verts.extend(s.vertices.iter());
            }
        }
        (!verts.is_empty()).then(|| crate::geometry::bbox_of(verts.into_iter()))
    }
}

pub type SplitFn<'a, U> = dyn Fn(&U) -> Vec<U> + Sync + 'a;

fn refine_pass<U: Unit>(mine: Vec<U>, theirs: &[U], rule: Rule, metric: Metric, split: &SplitFn<U>) -> Result<(Vec<U>, bool)> {
    let their_diam: Vec<f64> = theirs.iter().map(|u| u.diam(metric)).collect();
    let res: Vec<Result<Vec<U>>> = mine
        .into_par_iter()
        .map(|q| {
            let dq = q.diam(metric);
            let bad = theirs.iter().zip(&their_diam).any(|(r, &dr)| {
                dq >= dr && {
                    let (lo, hi) = q.extremes(r, metric);
                    !rule.ok(lo, hi)
                }
            });
            if !bad {
                return Ok(vec![q]);
            }
            if dq < FLOOR {
                return Err(EmdError::SubdivisionFloor(dq));
            }
            Ok(split(&q))
        })
        .collect();
    let mut out = Vec::new();
    let mut changed = false;
    for r in res {
        let v = r?;
        changed |= v.len() != 1;
        out.extend(v);
    }
    Ok((out, changed))
}

/// Smallest distance between the masses of any unit of `p` and any unit of
/// `s`; pairs whose gap cannot be bounded are skipped.
pub fn min_gap<U: Unit>(p: &[U], s: &[U], metric: Metric) -> f64 {
    p.par_iter()
        .map(|q| s.iter().filter_map(|r| q.mass_gap(r, metric)).fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min)
}

/// Pairwise refinement: while some pair violates `rule`, the larger piece of
/// the pair is split (side P first, then side S). Requires every pair to be
/// at least `clearance` apart.
pub fn refine_pairwise<U: Unit>(
    p: Vec<U>,
    s: Vec<U>,
    rule: Rule,
    clearance: f64,
    metric: Metric,
    split_p: &SplitFn<U>,
    split_s: &SplitFn<U>,
) -> Result<(Vec<U>, Vec<U>)> {
    let worst = min_gap(&p, &s, metric);
    if worst < clearance * (1.0 - 1e-9) {
        return Err(EmdError::Precondition(format!(
            "residual pieces are {worst:e} apart, below the required clearance {clearance:e}"
        )));
    }
    let (mut p, mut s) = (p, s);
    loop {
        let (np, cp) = refine_pass(p, &s, rule, metric, split_p)?;
        p = np;
        let (ns, cs) = refine_pass(s, &p, rule, metric, split_s)?;
        s = ns;
        if !cp && !cs {
            return Ok((p, s));
        }
    }
}

/// Segment units to pieces (one node each).
pub fn seg_pieces(units: Vec<SegUnit>, side: Side) -> Discretization {
    Discretization::singletons(
        units
            .into_iter()
            .map(|u| Piece::new(side, u.object, Carrier::SubSegment { geom: u.geom, t0: u.t0, t1: u.t1 }, u.mass))
            .collect(),
    )
}

/// Residual segments against residual segments.
pub fn subdivide_segments_vs_segments(
    ps: Vec<SegUnit>,
    ss: Vec<SegUnit>,
    rule: Rule,
    clearance: f64,
    metric: Metric,
) -> Result<(Discretization, Discretization)> {
    let halve = |u: &SegUnit| u.halves().to_vec();
    let (p, s) = refine_pairwise(ps, ss, rule, clearance, metric, &halve, &halve)?;
    Ok((seg_pieces(p, Side::P), seg_pieces(s, Side::S)))
}

/// Residual cells against residual cells.
pub fn build_cells_vs_cells(
    ps: Vec<CellUnit>,
    ss: Vec<CellUnit>,
    ctx_p: &CellCtx,
    ctx_s: &CellCtx,
    rule: Rule,
    clearance: f64,
    metric: Metric,
) -> Result<(Discretization, Discretization)> {
    let split_p = |u: &CellUnit| ctx_p.split(u);
    let split_s = |u: &CellUnit| ctx_s.split(u);
    let (p, s) = refine_pairwise(ps, ss, rule, clearance, metric, &split_p, &split_s)?;
    Ok((cell_pieces(p, Side::P), cell_pieces(s, Side::S)))
}
