//! End-to-end drivers: scene → (pre-matching) → subdivision → flow → plan.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discretize::{
    build_cells_vs_cells, build_cells_vs_points, subdivide_segments_vs_points, subdivide_segments_vs_segments, Carrier,
    CellCtx, Discretization, Piece, Rule, Side,
};
use crate::error::{EmdError, Result};
use crate::flowsolve::{solve_with_costs, verify_flow, DiscreteFlow};
use crate::geometry::{Metric, Point, Segment, Simplex};
use crate::lift::{assemble_plan, validate_plan, TransportPlan, ValidationReport};
use crate::prematch::{grid_cell_size, greedy_match_grid, greedy_match_segments, GreedyMatch, Residual};
use crate::quadrature::DEFAULT_ORDER;
use crate::scene::{Kind, MassScene, MassSide};

/// Drift allowed between stages, relative to the unit total mass.
pub const STAGE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    PointsSegments,
    PointsTriangles,
    PointsSimplices,
    SegmentsSegments,
    TrianglesTriangles,
    SimplicesSimplices,
}

impl PairKind {
    pub fn of(p: Kind, s: Kind) -> Result<PairKind> {
        use Kind::*;
        Ok(match (p, s) {
            (Points, Segments) | (Segments, Points) => PairKind::PointsSegments,
            (Points, Triangles) | (Triangles, Points) => PairKind::PointsTriangles,
            (Points, Simplices) | (Simplices, Points) => PairKind::PointsSimplices,
            (Segments, Segments) => PairKind::SegmentsSegments,
            (Triangles, Triangles) => PairKind::TrianglesTriangles,
            (Simplices, Simplices) => PairKind::SimplicesSimplices,
            _ => return Err(EmdError::UnsupportedPair(format!("{p} × {s}"))),
        })
    }

    /// `C` in `δ = ε / C`.
    pub fn constant(self) -> f64 {
        match self {
            PairKind::PointsSegments => 17.0,
            PairKind::PointsTriangles => 9.0,
            PairKind::PointsSimplices => 21.0,
            _ => 3.0,
        }
    }

    /// Largest admissible δ and its printed form.
    pub fn cap(self) -> (f64, &'static str) {
        match self {
            PairKind::PointsSegments => (0.25, "1/4"),
            PairKind::PointsTriangles => (1.0 / (2.0 * PI), "1/(2π)"),
            PairKind::PointsSimplices => (0.2, "1/5"),
            _ => (1.0, "1"),
        }
    }

    pub fn has_points(self) -> bool {
        matches!(self, PairKind::PointsSegments | PairKind::PointsTriangles | PairKind::PointsSimplices)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    /// Quadrature order per axis for the cost estimate.
    pub order: usize,
    /// Seed for Monte Carlo clipping.
    pub seed: u64,
    /// Replaces the greedy matching distance `δ/(nm)` (normalized units);
    /// segments only.
    pub kappa: Option<f64>,
}

impl PipelineConfig {
    pub fn new(epsilon: f64) -> Self {
        PipelineConfig { epsilon, order: DEFAULT_ORDER, seed: 0, kappa: None }
    }
}

/// δ for a pair kind, clamped to the kind's cap. Returns `(δ, clamped)`.
pub fn delta_for(kind: PairKind, epsilon: f64) -> (f64, bool) {
    let raw = epsilon / kind.constant();
    let (cap, _) = kind.cap();
    if raw > cap {
        (cap, true)
    } else {
        (raw, false)
    }
}

/// What the run promises, in normalized units (unit total mass).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub pair_kind: PairKind,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_clamped: bool,
    pub constant: f64,
    /// Constant that applies with an approximate inner solver.
    pub approximate_solver_constant: Option<f64>,
    pub n: usize,
    pub m: usize,
    /// Stopping distance of the subdivision (0 when only the ratio rule is
    /// used).
    pub cutoff: f64,
    /// Largest distance any pre-matched mass travels.
    pub kappa: Option<f64>,
    /// Distance between residual P and S mass after pre-matching.
    pub clearance: Option<f64>,
    /// `cost_upper ≤ factor · OPT + additive`.
    pub factor: f64,
    pub additive: f64,
    /// The closed-form additive term stated for this pair kind.
    pub stated_additive: f64,
    /// `cost_upper ≤ (1+δ)² · cost_lower + sandwich_additive` (points pairs).
    pub sandwich_additive: Option<f64>,
}

impl Guarantee {
    pub fn bound(&self, opt: f64) -> f64 {
        self.factor * opt + self.additive
    }

    pub fn sandwich_holds(&self, plan: &TransportPlan) -> bool {
        match self.sandwich_additive {
            Some(a) => {
                let hi = (1.0 + self.delta).powi(2) * plan.cost_lower + a;
                plan.cost_lower <= plan.cost_upper * (1.0 + 1e-12) + 1e-15 && plan.cost_upper <= hi * (1.0 + 1e-12) + 1e-15
            }
            None => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub pieces: (usize, usize),
    pub nodes: (usize, usize),
    pub matched_mass: f64,
    pub matched_pairs: usize,
    /// Part of the plan coming from the subdivided residual.
    pub residual_cost_upper: f64,
    pub residual_cost_estimate: f64,
    pub matched_cost_estimate: f64,
    pub pivots: usize,
    /// Worst violation of the optimality conditions of the flows.
    pub certificate_violation: f64,
    pub validation: ValidationReport,
    pub sandwich_ok: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Plan in normalized units; see [`TransportPlan::to_input_units`].
    pub plan: TransportPlan,
    pub guarantee: Guarantee,
    pub stats: RunStats,
    /// The normalized scene the plan refers to.
    pub scene: MassScene,
    pub warnings: Vec<String>,
}

fn check_stage(stage: &str, got: f64, want: f64) -> Result<()> {
    let drift = (got - want).abs();
    if drift > STAGE_TOL {
        return Err(EmdError::MassDrift { stage: stage.to_string(), drift });
    }
    Ok(())
}

fn object_masses(side: &MassSide, density: f64) -> Vec<f64> {
    (0..side.len()).map(|i| density * side.measure(i)).collect()
}

fn point_pieces(side: &MassSide, tag: Side) -> (Vec<Point>, Discretization) {
    let pts = side.points().expect("points side");
    let pieces = pts
        .iter()
        .enumerate()
        .map(|(i, w)| Piece::new(tag, i, Carrier::Point(w.pos.clone()), w.mass))
        .collect();
    (pts.iter().map(|w| w.pos.clone()).collect(), Discretization::singletons(pieces))
}

struct Solved {
    flow: DiscreteFlow,
    lower: f64,
    pivots: usize,
    violation: f64,
}

/// Optimal flow on representative distances, plus the closest-distance
/// optimum used as the lower bound.
fn solve_pair(p: &Discretization, s: &Discretization, metric: Metric) -> Result<Solved> {
    let supply: Vec<f64> = (0..p.nodes.len()).map(|k| p.node_mass(k)).collect();
    let demand: Vec<f64> = (0..s.nodes.len()).map(|k| s.node_mass(k)).collect();
    let rep = |i: usize, j: usize| metric.dist(&p.node_rep(i).0, &s.node_rep(j).0);
    let near = |i: usize, j: usize| crate::discretize::carrier_extremes(p.node_carrier(i), s.node_carrier(j), metric).0;
    let flow = solve_with_costs(&supply, &demand, rep)?;
    let low = solve_with_costs(&supply, &demand, near)?;
    let violation = verify_flow(&supply, &demand, rep, &flow).max(verify_flow(&supply, &demand, near, &low));
    Ok(Solved { pivots: flow.pivots + low.pivots, lower: low.cost, flow, violation })
}

/// Runs the pipeline matching the scene's pair kind.
pub fn run(scene: &MassScene, cfg: &PipelineConfig) -> Result<RunOutput> {
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) {
        return Err(EmdError::InvalidScene(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    let start = Instant::now();
    let scene = scene.normalize();
    let kind = PairKind::of(scene.p.kind(), scene.s.kind())?;
    let metric = scene.metric;
    let (n, m) = (scene.p.len(), scene.s.len());
    let nm = (n * m) as f64;
    let (delta, clamped) = delta_for(kind, cfg.epsilon);
    let mut warnings = Vec::new();
    if clamped {
        let msg = format!("delta clamped to {}", kind.cap().1);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let d = scene.dimension;
    log::info!("{kind:?}: n={n} m={m} δ={delta:e}");

    let mut guarantee = Guarantee {
        pair_kind: kind,
        epsilon: cfg.epsilon,
        delta,
        delta_clamped: clamped,
        constant: kind.constant(),
        approximate_solver_constant: (kind == PairKind::PointsSegments).then_some(25.0),
        n,
        m,
        cutoff: 0.0,
        kappa: None,
        clearance: None,
        factor: 1.0 + kind.constant() * delta,
        additive: 0.0,
        stated_additive: 0.0,
        sandwich_additive: None,
    };

    let (pd, sd, matched) = if kind.has_points() {
        let points_on_p = scene.p.kind() == Kind::Points;
        let (pts_side, obj_side, obj_tag, rho) = if points_on_p {
            (&scene.p, &scene.s, Side::S, scene.density[1])
        } else {
            (&scene.s, &scene.p, Side::P, scene.density[0])
        };
        let pt_tag = if points_on_p { Side::P } else { Side::S };
        let (pts, pt_disc) = point_pieces(pts_side, pt_tag);
        let masses = object_masses(obj_side, rho);
        let obj_disc = match kind {
            PairKind::PointsSegments => {
                let cutoff = delta / nm;
                guarantee.cutoff = cutoff;
                guarantee.sandwich_additive = Some(4.0 * delta.powi(2) / nm + 2.0 * delta.powi(3) / nm);
                let segs = obj_side.segments().expect("segments");
                subdivide_segments_vs_points(&pts, segs, &masses, obj_tag, Rule::new(delta, cutoff), metric)?
            }
            _ => {
                let cutoff = delta / nm.powf(1.0 / d as f64);
                guarantee.cutoff = cutoff;
                guarantee.sandwich_additive = Some(if kind == PairKind::PointsTriangles {
                    2.0 * PI * delta.powi(3) / nm.sqrt() + PI * delta.powi(4) / nm.sqrt()
                } else {
                    (2.0 * delta + delta * delta) * (2.0 * (delta + delta * delta)).powi(d as i32) / nm.powf(1.0 / d as f64)
                });
                let objs = obj_side.simplices().expect("simplices");
                let ctx = CellCtx { objects: objs, base: scene.longest_edge, seed: cfg.seed };
                build_cells_vs_points(&pts, &ctx, &masses, obj_tag, Rule::new(delta, cutoff), metric)?
            }
        };
        check_stage("subdivision", obj_disc.total_mass(), 1.0)?;
        check_stage("point masses", pt_disc.total_mass(), 1.0)?;
        if points_on_p {
            (pt_disc, obj_disc, None)
        } else {
            (obj_disc, pt_disc, None)
        }
    } else {
        let rule = Rule::new(delta, 0.0);
        let (g, pd, sd) = match kind {
            PairKind::SegmentsSegments => {
                let kappa = cfg.kappa.unwrap_or(delta / nm);
                let ps: &[Segment] = scene.p.segments().expect("segments");
                let ss: &[Segment] = scene.s.segments().expect("segments");
                let g = greedy_match_segments(ps, ss, scene.density, kappa, metric);
                guarantee.stated_additive = 5.0 * delta / nm;
                let (pd, sd) = match (&g.residual_p, &g.residual_s) {
                    (Residual::Segments(a), Residual::Segments(b)) if !a.is_empty() && !b.is_empty() => {
                        subdivide_segments_vs_segments(a.clone(), b.clone(), rule, g.clearance, metric)?
                    }
                    _ => (Discretization::default(), Discretization::default()),
                };
                (g, pd, sd)
            }
            _ => {
                let ps: &[Simplex] = scene.p.simplices().expect("simplices");
                let ss: &[Simplex] = scene.s.simplices().expect("simplices");
                let cell = grid_cell_size(delta, nm, d);
                let g = greedy_match_grid(ps, ss, scene.density, cell, scene.longest_edge, metric, cfg.seed);
                // neighbours touch diagonally: 2 cells along every axis
                let reach = metric.norm(&vec![2.0 * cell; d]);
                guarantee.stated_additive = (2.0 + 3.0 * delta) * reach;
                let ctx_p = CellCtx { objects: ps, base: cell, seed: cfg.seed };
                let ctx_s = CellCtx { objects: ss, base: cell, seed: cfg.seed ^ 0x5151 };
                let (pd, sd) = match (&g.residual_p, &g.residual_s) {
                    (Residual::Cells(a), Residual::Cells(b)) if !a.is_empty() && !b.is_empty() => {
                        build_cells_vs_cells(a.clone(), b.clone(), &ctx_p, &ctx_s, rule, g.clearance, metric)?
                    }
                    _ => (Discretization::default(), Discretization::default()),
                };
                (g, pd, sd)
            }
        };
        check_stage("pre-matching (P)", g.total_matched_mass + g.residual_p.mass(), 1.0)?;
        check_stage("pre-matching (S)", g.total_matched_mass + g.residual_s.mass(), 1.0)?;
        check_stage("subdivision (P)", g.total_matched_mass + pd.total_mass(), 1.0)?;
        check_stage("subdivision (S)", g.total_matched_mass + sd.total_mass(), 1.0)?;
        let kappa = match kind {
            PairKind::SegmentsSegments => cfg.kappa.unwrap_or(delta / nm),
            _ => metric.norm(&vec![2.0 * grid_cell_size(delta, nm, d); d]),
        };
        guarantee.kappa = Some(kappa.max(g.max_bound()));
        guarantee.clearance = Some(g.clearance);
        guarantee.additive = (2.0 + 3.0 * delta) * kappa.max(g.max_bound());
        (pd, sd, Some(g))
    };

    let (plan, solved) = if pd.pieces.is_empty() || sd.pieces.is_empty() {
        let flow = DiscreteFlow { entries: Vec::new(), cost: 0.0, pi: Vec::new(), sigma: Vec::new(), pivots: 0 };
        let plan = assemble_plan(&flow, &pd, &sd, matched.as_ref(), 0.0, metric, cfg.order)?;
        (plan, Solved { flow, lower: 0.0, pivots: 0, violation: 0.0 })
    } else {
        let solved = solve_pair(&pd, &sd, metric)?;
        let plan = assemble_plan(&solved.flow, &pd, &sd, matched.as_ref(), solved.lower, metric, cfg.order)?;
        (plan, solved)
    };
    let mut plan = plan;
    plan.scale_factor = scene.scale_factor;
    plan.mass_scale = scene.mass_scale;
    check_stage("lifting", plan.assignments.iter().map(|a| a.mass).sum::<f64>(), 1.0)?;

    let validation = validate_plan(&plan, &scene);
    let residual: Vec<_> = plan.assignments.iter().filter(|a| !a.matched).collect();
    let stats = RunStats {
        pieces: (pd.pieces.len(), sd.pieces.len()),
        nodes: (pd.nodes.len(), sd.nodes.len()),
        matched_mass: plan.matched_mass,
        matched_pairs: matched.as_ref().map_or(0, |g: &GreedyMatch| g.pairs.len()),
        residual_cost_upper: residual.iter().map(|a| a.mass * a.dmax).sum(),
        residual_cost_estimate: residual.iter().map(|a| a.cost_quadrature).sum(),
        matched_cost_estimate: plan.assignments.iter().filter(|a| a.matched).map(|a| a.cost_quadrature).sum(),
        pivots: solved.pivots,
        certificate_violation: solved.violation,
        validation,
        sandwich_ok: guarantee.sandwich_holds(&plan),
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "pieces {:?}, cost bracket [{:e}, {:e}], estimate {:e}",
        stats.pieces,
        plan.cost_lower,
        plan.cost_upper,
        plan.cost_estimate
    );
    Ok(RunOutput { plan, guarantee, stats, scene, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::WeightedPoint;
    use approx::assert_abs_diff_eq;

    fn seg(a: [f64; 2], b: [f64; 2]) -> Segment {
        Segment::new(Point(a.to_vec()), Point(b.to_vec()))
    }

    #[test]
    fn delta_mapping_and_caps() {
        assert_abs_diff_eq!(delta_for(PairKind::PointsSegments, 0.17).0, 0.01);
        assert_eq!(delta_for(PairKind::PointsSegments, 9.0), (0.25, true));
        assert_eq!(delta_for(PairKind::PointsTriangles, 9.0), (1.0 / (2.0 * PI), true));
        assert_eq!(delta_for(PairKind::PointsSimplices, 21.0), (0.2, true));
        assert_abs_diff_eq!(delta_for(PairKind::SegmentsSegments, 0.3).0, 0.1);
    }

    #[test]
    fn point_to_segment_bracket() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 0.0], 1.0)]),
            MassSide::Segments(vec![seg([0., 0.], [1., 0.])]),
            false,
        )
        .unwrap();
        let out = run(&sc, &PipelineConfig::new(0.2)).unwrap();
        let plan = &out.plan;
        assert!(plan.cost_lower <= plan.cost_estimate && plan.cost_estimate <= plan.cost_upper);
        assert!(plan.cost_upper <= 1.2 * 0.5 + 1e-9);
        assert_abs_diff_eq!(plan.cost_estimate, 0.5, epsilon = 1e-6);
        assert!(out.stats.validation.passes(1e-9));
        assert!(out.stats.sandwich_ok);
    }

    #[test]
    fn identical_segments_cost_only_additive() {
        let s = vec![seg([0., 0.], [1., 0.3]), seg([2., 2.], [2.5, 1.0])];
        let sc = MassScene::new(Metric::L2, 2, MassSide::Segments(s.clone()), MassSide::Segments(s), false).unwrap();
        let out = run(&sc, &PipelineConfig::new(0.25)).unwrap();
        assert!(out.plan.cost_upper <= out.guarantee.additive);
        assert!(out.plan.cost_upper <= 1e-9);
        assert!(out.stats.validation.passes(1e-9));
    }

    #[test]
    fn tightness_scene_with_forced_kappa() {
        // listed so that index-order greedy pairs y=2 with y=1
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Segments(vec![seg([0., 2.], [1., 2.]), seg([0., 0.], [1., 0.])]),
            MassSide::Segments(vec![seg([0., 1.], [1., 1.]), seg([0., 3.], [1., 3.])]),
            false,
        )
        .unwrap();
        let mut cfg = PipelineConfig::new(1e-3);
        // κ = 1 in input units; coordinates are halved by normalization
        cfg.kappa = Some(0.5);
        let out = run(&sc, &cfg).unwrap();
        let input = out.plan.to_input_units();
        let scale = out.scene.scale_factor * out.scene.mass_scale;
        assert_abs_diff_eq!(out.stats.residual_cost_estimate * scale, 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(input.cost_estimate, 4.0, epsilon = 1e-6);
        assert!(out.stats.validation.passes(1e-9));
    }

    #[test]
    fn triangles_vs_points_sandwich() {
        let tri = Simplex::new(vec![Point(vec![0., 0.]), Point(vec![1., 0.]), Point(vec![0., 1.])]);
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![1.0, 1.0], 0.3), WeightedPoint::new(vec![-0.5, 0.2], 0.7)]),
            MassSide::Simplices { kind: Kind::Triangles, items: vec![tri] },
            true,
        )
        .unwrap();
        let out = run(&sc, &PipelineConfig::new(0.5)).unwrap();
        assert!(out.stats.sandwich_ok, "{:?} {:?}", out.plan.cost_lower, out.plan.cost_upper);
        assert!(out.stats.validation.passes(1e-9));
        let p = &out.plan;
        assert!(p.cost_lower <= p.cost_estimate && p.cost_estimate <= p.cost_upper);
    }

    #[test]
    fn separated_triangles_pair() {
        let a = Simplex::new(vec![Point(vec![0., 0.]), Point(vec![1., 0.]), Point(vec![0., 1.])]);
        let b = Simplex::new(vec![Point(vec![3., 0.]), Point(vec![4., 0.]), Point(vec![3., 1.])]);
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Simplices { kind: Kind::Triangles, items: vec![a] },
            MassSide::Simplices { kind: Kind::Triangles, items: vec![b] },
            false,
        )
        .unwrap();
        let out = run(&sc, &PipelineConfig::new(0.5)).unwrap();
        // a pure translation by 3 (normalized: 3·√2)
        let exact = 3.0 * 2f64.sqrt();
        assert!(out.plan.cost_lower <= exact + 1e-9);
        assert!(out.plan.cost_upper <= out.guarantee.bound(exact));
        assert!(out.stats.validation.passes(1e-9));
    }

    #[test]
    fn unsupported_pair_rejected() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 0.0], 1.0)]),
            MassSide::Points(vec![WeightedPoint::new(vec![1.0, 0.0], 1.0)]),
            false,
        )
        .unwrap();
        assert!(matches!(run(&sc, &PipelineConfig::new(0.2)), Err(EmdError::UnsupportedPair(_))));
    }
}
