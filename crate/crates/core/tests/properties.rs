mod common;

use emd_core::flowsolve::solve_with_matrix;
use emd_core::geometry::{Metric, Point, Segment};
use emd_core::l1exact::{build_l1_program, solve_l1_program, LengthMode, Quadrant};
use emd_core::lift::validate_plan;
use emd_core::oracle::oracle_emd;
use emd_core::pipeline::{run, PipelineConfig};
use emd_core::prematch::{greedy_match_segments, Residual};
use emd_core::scene::{MassScene, MassSide};
use proptest::prelude::*;
use rand::Rng;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn point_seg_dist(p: &[f64], s: &Segment) -> f64 {
    let (a, b) = (&s.a.0, &s.b.0);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn orient(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Euclidean distance between two planar segments.
fn seg_seg_dist(x: &Segment, y: &Segment) -> f64 {
    let (o1, o2) = (orient(&x.a.0, &x.b.0, &y.a.0), orient(&x.a.0, &x.b.0, &y.b.0));
    let (o3, o4) = (orient(&y.a.0, &y.b.0, &x.a.0), orient(&y.a.0, &y.b.0, &x.b.0));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return 0.0;
    }
    point_seg_dist(&x.a.0, y)
        .min(point_seg_dist(&x.b.0, y))
        .min(point_seg_dist(&y.a.0, x))
        .min(point_seg_dist(&y.b.0, x))
}

fn mirror(sc: &MassScene) -> MassScene {
    let flip = |p: &Point| Point(p.0.iter().enumerate().map(|(i, v)| if i == 0 { -v } else { *v }).collect());
    let side = |s: &MassSide| match s {
        MassSide::Points(v) => MassSide::Points(
            v.iter().map(|w| emd_core::scene::WeightedPoint { pos: flip(&w.pos), mass: w.mass }).collect(),
        ),
        MassSide::Segments(v) => MassSide::Segments(v.iter().map(|s| Segment::new(flip(&s.a), flip(&s.b))).collect()),
        MassSide::Simplices { .. } => unreachable!(),
    };
    MassScene::new(sc.metric, sc.dimension, side(&sc.p), side(&sc.s), false).unwrap()
}

fn permutations(v: [Quadrant; 4]) -> Vec<[Quadrant; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let idx = [a, b, c, d];
                    let mut seen = [false; 4];
                    idx.iter().for_each(|&i| seen[i] = true);
                    if seen.iter().all(|x| *x) {
                        out.push(idx.map(|i| v[i]));
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn flow_matches_enumeration(
        n in 1usize..=4,
        m in 1usize..=4,
        raw in prop::collection::vec(0.05f64..1.0, 8),
        cost in prop::collection::vec(0.0f64..10.0, 16),
    ) {
        let supply = raw[..n].to_vec();
        let total: f64 = supply.iter().sum();
        let rd: f64 = raw[4..4 + m].iter().sum();
        let demand: Vec<f64> = raw[4..4 + m].iter().map(|x| x * total / rd).collect();
        let c: Vec<Vec<f64>> = (0..n).map(|i| cost[4 * i..4 * i + m].to_vec()).collect();
        let flat: Vec<f64> = c.iter().flatten().cloned().collect();
        let got = solve_with_matrix(&supply, &demand, &flat).unwrap();
        prop_assert!((got.cost - common::enumerate_transport(&supply, &demand, &c)).abs() <= 1e-9);
        for i in 0..n {
            let out: f64 = got.entries.iter().filter(|e| e.i == i).map(|e| e.mass).sum();
            prop_assert!((out - supply[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn halving_epsilon_never_raises_upper_cost(seed in 0u64..10_000, k in 0usize..3) {
        let eps = [0.4, 0.2, 0.1][k];
        let sc = common::points_segments(seed, Metric::L2);
        let coarse = run(&sc, &PipelineConfig::new(eps)).unwrap();
        let fine = run(&sc, &PipelineConfig::new(eps / 2.0)).unwrap();
        prop_assert!(fine.plan.cost_upper <= coarse.plan.cost_upper + 1e-7);
    }

    #[test]
    fn plans_are_feasible_and_sandwiched(seed in 0u64..10_000, metric in prop_oneof![Just(Metric::L1), Just(Metric::L2)]) {
        let sc = common::points_segments(seed, metric);
        let out = run(&sc, &PipelineConfig::new(0.3)).unwrap();
        prop_assert!(validate_plan(&out.plan, &out.scene).max_violation <= 1e-9);
        prop_assert!(out.guarantee.sandwich_holds(&out.plan));
        prop_assert!(out.plan.cost_lower <= out.plan.cost_estimate + 1e-12);
        prop_assert!(out.plan.cost_estimate <= out.plan.cost_upper + 1e-12);
    }

    #[test]
    fn mirrored_scene_splits_identically(seed in 0u64..10_000) {
        let sc = common::points_segments(seed, Metric::L2);
        let a = run(&sc, &PipelineConfig::new(0.3)).unwrap();
        let b = run(&mirror(&sc), &PipelineConfig::new(0.3)).unwrap();
        prop_assert_eq!(a.stats.pieces, b.stats.pieces);
        prop_assert!((a.plan.cost_upper - b.plan.cost_upper).abs() <= 1e-12 * a.plan.cost_upper.max(1.0));
    }

    #[test]
    fn greedy_residual_keeps_clearance(seed in 0u64..10_000, kappa in 0.01f64..0.2) {
        let mut r = common::rng(seed);
        let (n, m) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let ps: Vec<Segment> = (0..n).map(|_| common::random_segment(&mut r, 2)).collect();
        let ss: Vec<Segment> = (0..m).map(|_| common::random_segment(&mut r, 2)).collect();
        let g = greedy_match_segments(&ps, &ss, [1.0, 1.0], kappa, Metric::L2);
        let (Residual::Segments(a), Residual::Segments(b)) = (&g.residual_p, &g.residual_s) else { unreachable!() };
        for x in a {
            for y in b {
                prop_assert!(seg_seg_dist(&x.geom, &y.geom) >= kappa * (1.0 - 1e-9));
            }
        }
        for pr in &g.pairs {
            prop_assert!(pr.bound <= kappa * (1.0 + 1e-12));
        }
        let lp: f64 = ps.iter().map(|s| s.length()).sum();
        prop_assert!((g.total_matched_mass + g.residual_p.mass() - lp).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(cfg(24))]

    #[test]
    fn l1_solution_is_consistent_and_optimal_in_layout(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (n, m) = (r.gen_range(1..=3), r.gen_range(1..=2));
        let pts = common::random_points(&mut r, n, 2);
        let segs: Vec<Segment> = (0..m).map(|_| common::random_segment(&mut r, 2)).collect();
        let prog = build_l1_program(Metric::L1, &pts, &segs, LengthMode::Euclidean, true).unwrap();

        // no point strictly inside a subsegment's x or y strip
        for sub in &prog.subsegments {
            let g = &sub.geom;
            for p in &prog.points {
                for axis in 0..2 {
                    let (lo, hi) = (g.a.0[axis].min(g.b.0[axis]), g.a.0[axis].max(g.b.0[axis]));
                    let v = p.pos.0[axis];
                    prop_assert!(!(v > lo + 1e-12 && v < hi - 1e-12));
                }
            }
        }

        let sol = solve_l1_program(&prog, 1e-9).unwrap();
        let layout = prog.layout_cost(&sol.u, |s| s.fill_order());
        prop_assert!((sol.objective - layout).abs() <= 1e-9 * sol.objective.max(1.0));
        for order in permutations([Quadrant::X1, Quadrant::X2, Quadrant::X3, Quadrant::X4]) {
            prop_assert!(prog.layout_cost(&sol.u, |_| order) >= layout - 1e-9 * layout.max(1.0));
        }

        let sc = MassScene::new(Metric::L1, 2, MassSide::Points(pts), MassSide::Segments(segs), true).unwrap();
        let o = oracle_emd(&sc, 1000).unwrap();
        prop_assert!(sol.objective - sol.gap <= o.cost + o.error_bound);
    }
}
