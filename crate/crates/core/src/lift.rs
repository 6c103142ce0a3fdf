//! Turns a discrete flow between pieces (plus pre-matched pairs) into a
//! piece-granular transport plan with certified cost bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{carrier_extremes, Carrier, Discretization, Piece, Side};
use crate::error::{EmdError, Result};
use crate::flowsolve::DiscreteFlow;
use crate::geometry::{min_affine_norm, BoxCell, Metric, Point, Segment, Simplex};
use crate::prematch::{Coupling, GreedyMatch};
use crate::quadrature::{
    aligned_mean, box_nodes, point_nodes_mean, point_segment_mean, product_mean, product_order, region_nodes,
    segment_nodes, simplex_rule, Nodes,
};
use crate::scene::MassScene;

/// Mass moved from a source piece to a target piece, spread uniformly over
/// both (coupled as given).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub source: Piece,
    pub target: Piece,
    pub mass: f64,
    pub dmin: f64,
    pub dmax: f64,
    pub cost_quadrature: f64,
    pub coupling: Coupling,
    /// Came from the greedy pre-matching.
    #[serde(default)]
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub assignments: Vec<Assignment>,
    pub matched_mass: f64,
    /// Σ mass · dmax.
    pub cost_upper: f64,
    /// Σ quadrature estimates.
    pub cost_estimate: f64,
    /// Closest-distance flow cost plus Σ mass · dmin over matched pairs.
    pub cost_lower: f64,
    /// Input coordinates = plan coordinates × `scale_factor`.
    pub scale_factor: f64,
    /// Input masses = plan masses × `mass_scale`.
    pub mass_scale: f64,
}

fn carrier_nodes(c: &Carrier, order: usize) -> Nodes {
    match c {
        Carrier::Point(p) => vec![(p.0.clone(), 1.0)],
        Carrier::SubSegment { geom, .. } => segment_nodes(geom, order, &[]),
        Carrier::Cell { region: Some(r), .. } if !r.is_empty() => region_nodes(r, order),
        Carrier::Cell { cell, .. } => box_nodes(cell, order),
    }
}

fn node_count(c: &Carrier, order: usize) -> usize {
    match c {
        Carrier::Point(_) => 1,
        Carrier::SubSegment { .. } => order,
        Carrier::Cell { region: Some(r), .. } if !r.is_empty() => r.len() * simplex_rule(r[0].intrinsic_dim(), order).len(),
        Carrier::Cell { cell, .. } => order.pow(cell.dim() as u32),
    }
}

fn oriented(v: &Segment, coupling: Coupling) -> Segment {
    match coupling {
        Coupling::Aligned { flipped: true } => v.reversed(),
        _ => v.clone(),
    }
}

/// Mean distance between two uniformly spread carriers under `coupling`.
pub fn mean_distance(a: &Carrier, b: &Carrier, coupling: Coupling, metric: Metric, order: usize) -> f64 {
    use Carrier::*;
    match (a, b, coupling) {
        (_, _, Coupling::Identity) => 0.0,
        (SubSegment { geom: u, .. }, SubSegment { geom: v, .. }, Coupling::Aligned { .. }) => {
            aligned_mean(u, &oriented(v, coupling), metric, order)
        }
        (Point(p), Point(q), _) => metric.dist(&p.0, &q.0),
        (Point(p), SubSegment { geom, .. }, _) | (SubSegment { geom, .. }, Point(p), _) => {
            point_segment_mean(&p.0, geom, metric, order)
        }
        (Point(p), c, _) | (c, Point(p), _) => point_nodes_mean(&p.0, &carrier_nodes(c, order), metric),
        _ => {
            let o = product_order(order, |o| node_count(a, o), |o| node_count(b, o));
            product_mean(&carrier_nodes(a, o), &carrier_nodes(b, o), metric)
        }
    }
}

/// `(dmin, dmax)` over the support of the coupling.
pub fn coupling_extremes(a: &Carrier, b: &Carrier, coupling: Coupling, metric: Metric) -> (f64, f64) {
    match (a, b, coupling) {
        (_, _, Coupling::Identity) => (0.0, 0.0),
        (Carrier::SubSegment { geom: u, .. }, Carrier::SubSegment { geom: v, .. }, Coupling::Aligned { .. }) => {
            let v = oriented(v, coupling);
            let w = u.a.sub(&v.a);
            let e: Vec<f64> = u.direction().iter().zip(v.direction()).map(|(x, y)| x - y).collect();
            let lo = min_affine_norm(&w, &e, 0.0, 1.0, metric).1;
            let hi = metric.dist(&u.a.0, &v.a.0).max(metric.dist(&u.b.0, &v.b.0));
            (lo, hi)
        }
        _ => carrier_extremes(a, b, metric),
    }
}

fn make_assignment(source: Piece, target: Piece, mass: f64, coupling: Coupling, matched: bool, metric: Metric, order: usize) -> Assignment {
    let (dmin, dmax) = coupling_extremes(&source.carrier, &target.carrier, coupling, metric);
    // the true mean lies in [dmin, dmax]; keep rounding from leaving it
    let mean = mean_distance(&source.carrier, &target.carrier, coupling, metric, order).clamp(dmin, dmax);
    Assignment { source, target, mass, dmin, dmax, cost_quadrature: mass * mean, coupling, matched }
}

/// Builds the plan: every flow entry between nodes is split over the node
/// pieces in proportion to their masses; matched pairs are appended.
/// `lower_cost` is the closest-distance flow cost of the residual.
pub fn assemble_plan(
    flow: &DiscreteFlow,
    p: &Discretization,
    s: &Discretization,
    matched: Option<&GreedyMatch>,
    lower_cost: f64,
    metric: Metric,
    order: usize,
) -> Result<TransportPlan> {
    for e in &flow.entries {
        if e.i >= p.nodes.len() || e.j >= s.nodes.len() {
            return Err(EmdError::PlanMismatch(format!(
                "flow entry ({}, {}) outside {}×{} nodes",
                e.i,
                e.j,
                p.nodes.len(),
                s.nodes.len()
            )));
        }
    }
    let mut jobs: Vec<(Piece, Piece, f64, Coupling, bool)> = Vec::new();
    for e in &flow.entries {
        if e.mass <= 0.0 {
            continue;
        }
        let (mi, mj) = (p.node_mass(e.i), s.node_mass(e.j));
        for a in &p.pieces[p.nodes[e.i].clone()] {
            for b in &s.pieces[s.nodes[e.j].clone()] {
                let m = e.mass * (a.measure / mi) * (b.measure / mj);
                if m > 0.0 {
                    jobs.push((a.clone(), b.clone(), m, Coupling::Product, false));
                }
            }
        }
    }
    let mut matched_mass = 0.0;
    if let Some(g) = matched {
        for pr in &g.pairs {
            matched_mass += pr.mass;
            jobs.push((pr.p.clone(), pr.s.clone(), pr.mass, pr.coupling, true));
        }
    }
    let assignments: Vec<Assignment> = jobs
        .into_par_iter()
        .map(|(a, b, m, c, flag)| make_assignment(a, b, m, c, flag, metric, order))
        .collect();
    let cost_upper = assignments.iter().map(|a| a.mass * a.dmax).sum();
    let cost_estimate = assignments.iter().map(|a| a.cost_quadrature).sum();
    let cost_lower = lower_cost + assignments.iter().filter(|a| a.matched).map(|a| a.mass * a.dmin).sum::<f64>();
    Ok(TransportPlan {
        assignments,
        matched_mass,
        cost_upper,
        cost_estimate,
        cost_lower,
        scale_factor: 1.0,
        mass_scale: 1.0,
    })
}

/// Recomputes Σ mass · mean distance with a quadrature of the given order.
pub fn plan_cost_quadrature(plan: &TransportPlan, metric: Metric, order: usize) -> f64 {
    let order = order.max(1);
    let parts: Vec<f64> = plan
        .assignments
        .par_iter()
        .map(|a| a.mass * mean_distance(&a.source.carrier, &a.target.carrier, a.coupling, metric, order))
        .collect();
    parts.iter().sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Largest |moved − object mass|, relative to the side's total mass.
    pub max_violation: f64,
    /// `(side, object)` where it occurs.
    pub worst: Option<(char, usize)>,
    pub assignments: usize,
    /// Assignments with non-positive or non-finite mass.
    pub bad_masses: usize,
}

impl ValidationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.bad_masses == 0 && self.max_violation <= tol
    }
}

/// Checks that every object of both sides ships exactly its mass.
pub fn validate_plan(plan: &TransportPlan, scene: &MassScene) -> ValidationReport {
    let sizes = [scene.p.len(), scene.s.len()];
    let mut moved = [vec![0.0; sizes[0]], vec![0.0; sizes[1]]];
    let mut bad = 0;
    let mut stray = 0.0f64;
    for a in &plan.assignments {
        if !(a.mass.is_finite() && a.mass > 0.0) {
            bad += 1;
            continue;
        }
        for piece in [&a.source, &a.target] {
            let k = if piece.side == Side::P { 0 } else { 1 };
            match moved[k].get_mut(piece.object) {
                Some(slot) => *slot += a.mass,
                None => stray += a.mass,
            }
        }
    }
    let mut worst = None;
    let mut max_violation = 0.0;
    for (k, tag) in [(0usize, 'P'), (1, 'S')] {
        let total = scene.total_mass(tag);
        for (i, m) in moved[k].iter().enumerate() {
            let v = (m - scene.object_mass(tag, i)).abs() / total;
            if v > max_violation {
                max_violation = v;
                worst = Some((tag, i));
            }
        }
    }
    if stray > 0.0 {
        max_violation = f64::max(max_violation, stray);
        worst = None;
    }
    ValidationReport { max_violation, worst, assignments: plan.assignments.len(), bad_masses: bad }
}

fn scale_point(p: &Point, f: f64) -> Point {
    p.scaled(f)
}

fn scale_carrier(c: &Carrier, f: f64) -> Carrier {
    match c {
        Carrier::Point(p) => Carrier::Point(scale_point(p, f)),
        Carrier::SubSegment { geom, t0, t1 } => Carrier::SubSegment {
            geom: Segment::new(scale_point(&geom.a, f), scale_point(&geom.b, f)),
            t0: *t0,
            t1: *t1,
        },
        Carrier::Cell { cell, region } => Carrier::Cell {
            cell: BoxCell::new(scale_point(&cell.lo, f), scale_point(&cell.hi, f)),
            region: region.as_ref().map(|r| {
                r.iter()
                    .map(|s| Simplex::new(s.vertices.iter().map(|v| scale_point(v, f)).collect()))
                    .collect()
            }),
        },
    }
}

fn scale_piece(p: &Piece, f: f64, m: f64) -> Piece {
    Piece {
        side: p.side,
        object: p.object,
        carrier: scale_carrier(&p.carrier, f),
        measure: p.measure * m,
        rep: scale_point(&p.rep, f),
    }
}

impl TransportPlan {
    /// The same plan in input coordinates and masses.
    pub fn to_input_units(&self) -> TransportPlan {
        let (f, m) = (self.scale_factor, self.mass_scale);
        TransportPlan {
            assignments: self
                .assignments
                .iter()
                .map(|a| Assignment {
                    source: scale_piece(&a.source, f, m),
                    target: scale_piece(&a.target, f, m),
                    mass: a.mass * m,
                    dmin: a.dmin * f,
                    dmax: a.dmax * f,
                    cost_quadrature: a.cost_quadrature * f * m,
                    coupling: a.coupling,
                    matched: a.matched,
                })
                .collect(),
            matched_mass: self.matched_mass * m,
            cost_upper: self.cost_upper * f * m,
            cost_estimate: self.cost_estimate * f * m,
            cost_lower: self.cost_lower * f * m,
            scale_factor: 1.0,
            mass_scale: 1.0,
        }
    }

    /// Deterministic JSON text.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<TransportPlan> {
        Ok(serde_json::from_str(text)?)
    }

    /// Number of distinct pieces appearing in the plan.
    pub fn piece_count(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.assignments {
            for p in [&a.source, &a.target] {
                seen.insert(serde_json::to_string(p).expect("piece serializes"));
            }
        }
        seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsolve::FlowEntry;
    use crate::scene::{MassSide, WeightedPoint};
    use approx::assert_abs_diff_eq;

    fn pt(c: &[f64]) -> Point {
        Point(c.to_vec())
    }

    fn point_piece(x: &[f64], m: f64) -> Piece {
        Piece::new(Side::P, 0, Carrier::Point(pt(x)), m)
    }

    fn seg_piece(a: &[f64], b: &[f64], m: f64) -> Piece {
        Piece::new(Side::S, 0, Carrier::SubSegment { geom: Segment::new(pt(a), pt(b)), t0: 0.0, t1: 1.0 }, m)
    }

    fn single(p: Piece, s: Piece) -> TransportPlan {
        let flow = DiscreteFlow {
            entries: vec![FlowEntry { i: 0, j: 0, mass: 1.0 }],
            cost: 0.0,
            pi: vec![0.0],
            sigma: vec![0.0],
            pivots: 0,
        };
        let pd = Discretization::singletons(vec![p]);
        let sd = Discretization::singletons(vec![s]);
        assemble_plan(&flow, &pd, &sd, None, 0.0, Metric::L2, 8).unwrap()
    }

    fn scene() -> MassScene {
        MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 0.0], 1.0)]),
            MassSide::Segments(vec![Segment::new(pt(&[0.0, 0.0]), pt(&[1.0, 0.0]))]),
            false,
        )
        .unwrap()
    }

    #[test]
    fn point_to_whole_segment() {
        let plan = single(point_piece(&[0.0, 0.0], 1.0), seg_piece(&[0.0, 0.0], &[1.0, 0.0], 1.0));
        assert_eq!(plan.assignments.len(), 1);
        assert_abs_diff_eq!(plan.cost_estimate, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(plan.cost_upper, 1.0, epsilon = 1e-12);
        let r = validate_plan(&plan, &scene());
        assert!(r.passes(1e-9), "{r:?}");
    }

    #[test]
    fn offset_point_closed_form() {
        let plan = single(point_piece(&[0.0, 1.0], 1.0), seg_piece(&[-0.5, 0.0], &[0.5, 0.0], 1.0));
        let exact = 2.0 * (0.25 * 1.25f64.sqrt() + 0.5 * 0.5f64.asinh());
        assert_abs_diff_eq!(plan_cost_quadrature(&plan, Metric::L2, 8), exact, epsilon = 1e-9);
    }

    #[test]
    fn zero_length_transport() {
        let s = Segment::new(pt(&[0.0, 0.0]), pt(&[1.0, 1.0]));
        let c = Carrier::SubSegment { geom: s, t0: 0.0, t1: 1.0 };
        assert_eq!(mean_distance(&c, &c, Coupling::Aligned { flipped: false }, Metric::L2, 8), 0.0);
        assert_eq!(mean_distance(&c, &c, Coupling::Identity, Metric::L1, 8), 0.0);
    }

    #[test]
    fn injected_fault_reported() {
        let mut plan = single(point_piece(&[0.0, 0.0], 1.0), seg_piece(&[0.0, 0.0], &[1.0, 0.0], 1.0));
        plan.assignments[0].mass += 1e-3;
        let r = validate_plan(&plan, &scene());
        assert_abs_diff_eq!(r.max_violation, 1e-3, epsilon = 1e-12);
        assert!(r.worst.is_some());
    }

    #[test]
    fn product_mean_of_unit_squares_within_bracket() {
        let a = Carrier::Cell { cell: BoxCell::new(pt(&[0.0, 0.0]), pt(&[1.0, 1.0])), region: None };
        let b = Carrier::Cell { cell: BoxCell::new(pt(&[3.0, 0.0]), pt(&[4.0, 1.0])), region: None };
        let (lo, hi) = coupling_extremes(&a, &b, Coupling::Product, Metric::L2);
        let m = mean_distance(&a, &b, Coupling::Product, Metric::L2, 8);
        assert!(lo <= m && m <= hi);
        // the x-offset averages to 3 and the norm is convex
        assert!(m >= 3.0);
    }

    #[test]
    fn plan_round_trips_and_rescales() {
        let mut plan = single(point_piece(&[0.0, 0.0], 1.0), seg_piece(&[0.0, 0.0], &[1.0, 0.0], 1.0));
        let back = TransportPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        plan.scale_factor = 2.0;
        plan.mass_scale = 3.0;
        let big = plan.to_input_units();
        assert_abs_diff_eq!(big.cost_estimate, 3.0, epsilon = 1e-9);
        assert_eq!(big.assignments[0].target.carrier.bbox().hi.0, vec![2.0, 0.0]);
    }
}
