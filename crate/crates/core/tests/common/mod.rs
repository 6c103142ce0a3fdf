#![allow(dead_code)]

use emd_core::geometry::{simplex_measure_raw, Metric, Point, Segment, Simplex};
use emd_core::scene::{Kind, MassScene, MassSide, WeightedPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_point(r: &mut ChaCha8Rng, d: usize) -> Point {
    Point((0..d).map(|_| r.gen::<f64>()).collect())
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<WeightedPoint> {
    (0..n).map(|_| WeightedPoint { pos: unit_point(r, d), mass: r.gen_range(0.2..1.0) }).collect()
}

pub fn random_segment(r: &mut ChaCha8Rng, d: usize) -> Segment {
    loop {
        let s = Segment::new(unit_point(r, d), unit_point(r, d));
        if s.length() >= 0.1 {
            return s;
        }
    }
}

pub fn random_simplex(r: &mut ChaCha8Rng, d: usize, offset: &[f64], min_measure: f64) -> Simplex {
    loop {
        let s = Simplex::new(
            (0..=d)
                .map(|_| Point((0..d).map(|i| offset[i] + r.gen::<f64>()).collect()))
                .collect(),
        );
        if simplex_measure_raw(&s) >= min_measure {
            return s;
        }
    }
}

/// Scales every object about its own centroid so that the side measures
/// `target` in total.
pub fn rescale_segments(v: &mut [Segment], target: f64) {
    let f = target / v.iter().map(|s| s.length()).sum::<f64>();
    for s in v {
        let c = s.midpoint();
        *s = Segment::new(scale_about(&s.a, &c, f), scale_about(&s.b, &c, f));
    }
}

pub fn rescale_simplices(v: &mut [Simplex], target: f64) {
    let k = v[0].intrinsic_dim() as f64;
    let f = (target / v.iter().map(simplex_measure_raw).sum::<f64>()).powf(1.0 / k);
    for s in v {
        let c = s.centroid();
        *s = Simplex::new(s.vertices.iter().map(|p| scale_about(p, &c, f)).collect());
    }
}

fn scale_about(p: &Point, c: &Point, f: f64) -> Point {
    Point(p.0.iter().zip(&c.0).map(|(x, y)| y + f * (x - y)).collect())
}

/// Builds, rebalances (point sides follow the object side) and normalizes.
pub fn scene(metric: Metric, d: usize, p: MassSide, s: MassSide) -> MassScene {
    MassScene::new(metric, d, p, s, true).expect("valid scene").normalize()
}

pub fn points_segments(seed: u64, metric: Metric) -> MassScene {
    let mut r = rng(seed);
    let n = r.gen_range(1..=4);
    let m = r.gen_range(1..=4);
    let pts = random_points(&mut r, n, 2);
    let segs = (0..m).map(|_| random_segment(&mut r, 2)).collect();
    scene(metric, 2, MassSide::Points(pts), MassSide::Segments(segs))
}

pub fn points_triangles(seed: u64) -> MassScene {
    let mut r = rng(seed);
    let n = r.gen_range(1..=4);
    let m = r.gen_range(1..=3);
    let pts = random_points(&mut r, n, 2);
    let tris = (0..m).map(|_| random_simplex(&mut r, 2, &[0.0, 0.0], 0.02)).collect();
    scene(Metric::L2, 2, MassSide::Points(pts), MassSide::Simplices { kind: Kind::Triangles, items: tris })
}

pub fn segments_segments(seed: u64) -> MassScene {
    let mut r = rng(seed);
    let n = r.gen_range(1..=3);
    let m = r.gen_range(1..=3);
    let ps: Vec<Segment> = (0..n).map(|_| random_segment(&mut r, 2)).collect();
    let mut ss: Vec<Segment> = (0..m).map(|_| random_segment(&mut r, 2)).collect();
    rescale_segments(&mut ss, ps.iter().map(|s| s.length()).sum());
    scene(Metric::L2, 2, MassSide::Segments(ps), MassSide::Segments(ss))
}

/// Two groups of tetrahedra, the S group shifted by 1.5 along x.
pub fn separated_tetrahedra(seed: u64) -> MassScene {
    let mut r = rng(seed);
    let n = r.gen_range(1..=2);
    let m = r.gen_range(1..=2);
    let ps: Vec<Simplex> = (0..n).map(|_| random_simplex(&mut r, 3, &[0.0, 0.0, 0.0], 0.01)).collect();
    let mut ss: Vec<Simplex> = (0..m).map(|_| random_simplex(&mut r, 3, &[1.5, 0.0, 0.0], 0.01)).collect();
    rescale_simplices(&mut ss, ps.iter().map(simplex_measure_raw).sum());
    scene(
        Metric::L2,
        3,
        MassSide::Simplices { kind: Kind::Simplices, items: ps },
        MassSide::Simplices { kind: Kind::Simplices, items: ss },
    )
}

/// Points against tetrahedra in 3D.
pub fn points_tetrahedra(seed: u64) -> MassScene {
    let mut r = rng(seed);
    let n = r.gen_range(1..=2);
    let m = r.gen_range(1..=2);
    let pts: Vec<WeightedPoint> = (0..n)
        .map(|_| WeightedPoint { pos: unit_point(&mut r, 3), mass: r.gen_range(0.2..1.0) })
        .collect();
    let ss: Vec<Simplex> = (0..m).map(|_| random_simplex(&mut r, 3, &[0.0, 0.0, 0.0], 0.01)).collect();
    scene(Metric::L2, 3, MassSide::Points(pts), MassSide::Simplices { kind: Kind::Simplices, items: ss })
}

fn seg(a: [f64; 2], b: [f64; 2]) -> Segment {
    Segment::new(Point(a.to_vec()), Point(b.to_vec()))
}

/// Two unit horizontals against two, listed so that index-order greedy
/// matching pairs y=2 with y=1.
pub fn tightness_scene() -> MassScene {
    MassScene::new(
        Metric::L2,
        2,
        MassSide::Segments(vec![seg([0., 2.], [1., 2.]), seg([0., 0.], [1., 0.])]),
        MassSide::Segments(vec![seg([0., 1.], [1., 1.]), seg([0., 3.], [1., 3.])]),
        false,
    )
    .expect("valid scene")
}

/// Minimum cost over all basic feasible solutions (spanning trees of the
/// bipartite graph), by exhaustive enumeration.
pub fn enumerate_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(k);
    choose(&cells, k, 0, &mut pick, &mut |set| {
        if let Some(flow) = tree_flow(supply, demand, set) {
            if flow.iter().all(|&(_, _, x)| x >= -1e-12) {
                let c: f64 = flow.iter().map(|&(i, j, x)| x * cost[i][j]).sum();
                best = best.min(c);
            }
        }
    });
    best
}

fn choose(cells: &[(usize, usize)], k: usize, from: usize, pick: &mut Vec<(usize, usize)>, f: &mut dyn FnMut(&[(usize, usize)])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for idx in from..cells.len() {
        if cells.len() - idx < k - pick.len() {
            break;
        }
        pick.push(cells[idx]);
        choose(cells, k, idx + 1, pick, f);
        pick.pop();
    }
}

/// Flow on a spanning tree by repeatedly settling leaves; `None` when the
/// cells do not form a spanning tree.
fn tree_flow(supply: &[f64], demand: &[f64], set: &[(usize, usize)]) -> Option<Vec<(usize, usize, f64)>> {
    let n = supply.len();
    let mut rest: Vec<f64> = supply.iter().chain(demand).cloned().collect();
    let mut alive: Vec<bool> = vec![true; set.len()];
    let mut out = Vec::new();
    for _ in 0..set.len() {
        let mut deg = vec![0usize; rest.len()];
        for (e, &(i, j)) in set.iter().enumerate() {
            if alive[e] {
                deg[i] += 1;
                deg[n + j] += 1;
            }
        }
        let (e, leaf) = set.iter().enumerate().filter(|(e, _)| alive[*e]).find_map(|(e, &(i, j))| {
            if deg[i] == 1 {
                Some((e, i))
            } else if deg[n + j] == 1 {
                Some((e, n + j))
            } else {
                None
            }
        })?;
        let (i, j) = set[e];
        let x = rest[leaf];
        rest[i] -= x;
        rest[n + j] -= x;
        alive[e] = false;
        out.push((i, j, x));
    }
    rest.iter().all(|r| r.abs() <= 1e-9).then_some(out)
}
