//! Reference EMD by brute force: both sides are cut into small equal pieces,
//! each replaced by its centroid, and the resulting transportation problem is
//! solved exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::GridKey;
use crate::error::{EmdError, Result};
use crate::flowsolve::solve_with_costs;
use crate::geometry::{clip_simplex_box_mc, clip_simplex_region, simplex_measure_raw, Metric, Simplex};
use crate::scene::{MassScene, MassSide};

/// Largest number of discrete nodes (both sides together).
pub const NODE_GUARD: usize = 50_000;

/// Monte Carlo samples per cell when clipping cannot be done exactly.
pub const ORACLE_MC_SAMPLES: usize = 4_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub cost: f64,
    pub resolution: usize,
    /// The true EMD lies within `cost ± error_bound`.
    pub error_bound: f64,
    pub nodes: (usize, usize),
}

type Atoms = Vec<(Vec<f64>, f64)>;

fn region_centroid(region: &[Simplex]) -> (Vec<f64>, f64) {
    if region.is_empty() {
        return (Vec::new(), 0.0);
    }
    let d = region[0].ambient_dim();
    let mut c = vec![0.0; d];
    let mut total = 0.0;
    for s in region {
        let m = simplex_measure_raw(s);
        let g = s.centroid();
        for i in 0..d {
            c[i] += m * g.0[i];
        }
        total += m;
    }
    if total > 0.0 {
        for x in &mut c {
            *x /= total;
        }
    }
    (c, total)
}

/// Atoms of one side plus the largest piece diameter.
fn atoms(side: &MassSide, density: f64, resolution: usize, metric: Metric, seed: u64) -> Result<(Atoms, f64)> {
    let h = 1.0 / resolution as f64;
    match side {
        MassSide::Points(v) => Ok((v.iter().map(|p| (p.pos.0.clone(), p.mass)).collect(), 0.0)),
        MassSide::Segments(v) => {
            let count: usize = v.iter().map(|s| (s.length() * resolution as f64).ceil().max(1.0) as usize).sum();
            if count > NODE_GUARD {
                return Err(EmdError::NodeGuard { nodes: count, limit: NODE_GUARD });
            }
            let mut out = Vec::with_capacity(count);
            let mut diam = 0.0f64;
            for s in v {
                let k = (s.length() * resolution as f64).ceil().max(1.0) as usize;
                let piece = s.sub_segment(0.0, 1.0 / k as f64);
                diam = diam.max(metric.dist(&piece.a.0, &piece.b.0));
                let m = density * s.length() / k as f64;
                for i in 0..k {
                    out.push((s.at((i as f64 + 0.5) / k as f64).0, m));
                }
            }
            Ok((out, diam))
        }
        MassSide::Simplices { items, .. } => {
            let d = items[0].ambient_dim();
            let mut estimate = 0usize;
            for s in items {
                let b = s.bbox();
                let per: f64 = (0..d).map(|i| ((b.hi.0[i] - b.lo.0[i]) / h).floor() + 1.0).product();
                estimate = estimate.saturating_add(per as usize);
            }
            if estimate > 20 * NODE_GUARD {
                return Err(EmdError::NodeGuard { nodes: estimate, limit: NODE_GUARD });
            }
            let exact = d <= 3;
            let mut out = Vec::new();
            for (j, s) in items.iter().enumerate() {
                let keys = GridKey::covering(&s.bbox(), h, 0);
                let got: Vec<(Vec<f64>, f64)> = keys
                    .into_par_iter()
                    .enumerate()
                    .filter_map(|(k, key)| {
                        let bx = key.bx(h);
                        if exact {
                            let region = clip_simplex_region(s, &bx)?;
                            let (c, m) = region_centroid(&region);
                            (m > 0.0).then_some((c, density * m))
                        } else {
                            let tag = seed ^ ((j as u64) << 40) ^ k as u64;
                            let (m, _) = clip_simplex_box_mc(s, &bx, ORACLE_MC_SAMPLES, tag);
                            (m > 0.0).then(|| (bx.center().0, density * m))
                        }
                    })
                    .collect();
                out.extend(got);
                if out.len() > NODE_GUARD {
                    return Err(EmdError::NodeGuard { nodes: out.len(), limit: NODE_GUARD });
                }
            }
            let diam = GridKey { level: 0, idx: vec![0; d] }.bx(h).diameter(metric);
            Ok((out, diam))
        }
    }
}

/// Brute-force EMD of `scene` with pieces of size about `1/resolution`.
pub fn oracle_emd(scene: &MassScene, resolution: usize) -> Result<OracleResult> {
    oracle_emd_seeded(scene, resolution, 0)
}

pub fn oracle_emd_seeded(scene: &MassScene, resolution: usize, seed: u64) -> Result<OracleResult> {
    if resolution == 0 {
        return Err(EmdError::InvalidScene("resolution must be at least 1".into()));
    }
    let metric = scene.metric;
    let (mut a, da) = atoms(&scene.p, scene.density[0], resolution, metric, seed)?;
    let (mut b, db) = atoms(&scene.s, scene.density[1], resolution, metric, seed ^ 0xA5A5)?;
    let nodes = a.len() + b.len();
    if nodes > NODE_GUARD {
        return Err(EmdError::NodeGuard { nodes, limit: NODE_GUARD });
    }
    // Monte Carlo clipping leaves the sides slightly unequal
    for side in [&mut a, &mut b] {
        let t: f64 = side.iter().map(|x| x.1).sum();
        for x in side.iter_mut() {
            x.1 /= t;
        }
    }
    let total = scene.total_mass('P');
    let supply: Vec<f64> = a.iter().map(|x| x.1 * total).collect();
    let demand: Vec<f64> = b.iter().map(|x| x.1 * total).collect();
    let flow = solve_with_costs(&supply, &demand, |i, j| metric.dist(&a[i].0, &b[j].0))?;
    Ok(OracleResult {
        cost: flow.cost,
        resolution,
        error_bound: total * 2.0 * da.max(db),
        nodes: (a.len(), b.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Segment};
    use crate::scene::WeightedPoint;
    use approx::assert_abs_diff_eq;

    fn seg(a: [f64; 2], b: [f64; 2]) -> Segment {
        Segment::new(Point(a.to_vec()), Point(b.to_vec()))
    }

    #[test]
    fn point_to_unit_segment() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 0.0], 1.0)]),
            MassSide::Segments(vec![seg([0., 0.], [1., 0.])]),
            false,
        )
        .unwrap();
        let r = oracle_emd(&sc, 1000).unwrap();
        assert!((r.cost - 0.5).abs() <= 0.002);
        assert!((r.cost - 0.5).abs() <= r.error_bound);
    }

    #[test]
    fn tightness_instance_optimum() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Segments(vec![seg([0., 0.], [1., 0.]), seg([0., 2.], [1., 2.])]),
            MassSide::Segments(vec![seg([0., 1.], [1., 1.]), seg([0., 3.], [1., 3.])]),
            false,
        )
        .unwrap();
        let r = oracle_emd(&sc, 200).unwrap();
        assert!((r.cost - 2.0).abs() <= r.error_bound, "{r:?}");
    }

    #[test]
    fn identical_triangles_near_zero_and_shrinking_bound() {
        let t = Simplex::new(vec![Point(vec![0., 0.]), Point(vec![1., 0.]), Point(vec![0., 2.])]);
        let side = || MassSide::Simplices { kind: crate::scene::Kind::Triangles, items: vec![t.clone()] };
        let sc = MassScene::new(Metric::L2, 2, side(), side(), false).unwrap();
        let r1 = oracle_emd(&sc, 10).unwrap();
        let r2 = oracle_emd(&sc, 20).unwrap();
        assert!(r1.cost <= r1.error_bound);
        assert!(r2.error_bound < r1.error_bound);
        assert_abs_diff_eq!(r2.cost, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn brackets_overlap() {
        let sc = MassScene::new(
            Metric::L1,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.3, 0.7], 0.4), WeightedPoint::new(vec![1.0, -1.0], 0.6)]),
            MassSide::Segments(vec![seg([0., 0.], [0.6, 0.8])]),
            false,
        )
        .unwrap();
        let a = oracle_emd(&sc, 50).unwrap();
        let b = oracle_emd(&sc, 100).unwrap();
        assert!((a.cost - b.cost).abs() <= a.error_bound + b.error_bound);
    }

    #[test]
    fn guard_trips() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 0.0], 1.0)]),
            MassSide::Segments(vec![seg([0., 0.], [1., 0.])]),
            false,
        )
        .unwrap();
        assert!(matches!(oracle_emd(&sc, 100_000), Err(EmdError::NodeGuard { .. })));
    }
}
