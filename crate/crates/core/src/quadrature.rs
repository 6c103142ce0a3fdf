//! Gauss–Legendre rules on intervals, boxes and simplices, and mean-distance
//! integrals between uniformly spread carriers.

use crate::geometry::{simplex_measure_raw, BoxCell, Metric, Segment, Simplex};

pub const DEFAULT_ORDER: usize = 8;

/// Budget on the number of node pairs evaluated by a product rule; the
/// per-side order is lowered until the product fits.
pub const PRODUCT_BUDGET: usize = 16_384;

/// Gauss–Legendre nodes and weights on `[0, 1]` (weights sum to 1).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

/// Weighted nodes of a probability rule: `(coords, weight)`, weights sum to 1.
pub type Nodes = Vec<(Vec<f64>, f64)>;

/// Uniform rule on a segment, with the interval additionally split at the
/// given parameters in `(0, 1)`.
pub fn segment_nodes(s: &Segment, order: usize, splits: &[f64]) -> Nodes {
    let (gx, gw) = gauss_legendre(order);
    let mut cuts: Vec<f64> = std::iter::once(0.0)
        .chain(splits.iter().copied().filter(|t| *t > 0.0 && *t < 1.0))
        .chain(std::iter::once(1.0))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::with_capacity(order * (cuts.len() - 1));
    for win in cuts.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        for (x, w) in gx.iter().zip(&gw) {
            out.push((s.at(t0 + (t1 - t0) * x).0, w * (t1 - t0)));
        }
    }
    out
}

/// Tensor-product uniform rule on a box.
pub fn box_nodes(c: &BoxCell, order: usize) -> Nodes {
    let (gx, gw) = gauss_legendre(order);
    let d = c.dim();
    let total = order.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let mut p = Vec::with_capacity(d);
        let mut w = 1.0;
        for (axis, &k) in idx.iter().enumerate() {
            p.push(c.lo.0[axis] + c.side(axis) * gx[k]);
            w *= gw[k];
        }
        out.push((p, w));
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < order {
                break;
            }
            *slot = 0;
        }
    }
    out
}

/// Barycentric nodes of a probability rule on the standard k-simplex, via the
/// collapsed (Duffy) map of the unit cube.
pub fn simplex_rule(k: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    let (gx, gw) = gauss_legendre(order);
    let factorial: f64 = (1..=k).map(|i| i as f64).product();
    let total = order.pow(k as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; k];
    for _ in 0..total {
        let mut lam = vec![0.0; k + 1];
        let mut rest = 1.0;
        let mut w = factorial;
        for (i, &j) in idx.iter().enumerate() {
            let xi = gx[j];
            lam[i + 1] = rest * xi;
            w *= gw[j];
            rest *= 1.0 - xi;
        }
        lam[0] = rest;
        // Jacobian of the collapsed map: Π_i (1 - ξ_i)^{k-1-i}
        let mut jac = 1.0;
        for (i, &j) in idx.iter().enumerate() {
            jac *= (1.0 - gx[j]).powi((k - 1 - i) as i32);
        }
        out.push((lam, w * jac));
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < order {
                break;
            }
            *slot = 0;
        }
    }
    out
}

/// Uniform rule over a union of disjoint simplices (weights ∝ measure).
pub fn region_nodes(region: &[Simplex], order: usize) -> Nodes {
    let measures: Vec<f64> = region.iter().map(simplex_measure_raw).collect();
    let total: f64 = measures.iter().sum();
    if region.is_empty() || total <= 0.0 {
        return Vec::new();
    }
    let k = region[0].intrinsic_dim();
    let rule = simplex_rule(k, order);
    let mut out = Vec::with_capacity(rule.len() * region.len());
    for (s, m) in region.iter().zip(&measures) {
        if *m <= 0.0 {
            continue;
        }
        let d = s.ambient_dim();
        for (lam, w) in &rule {
            let mut p = vec![0.0; d];
            for (l, v) in lam.iter().zip(&s.vertices) {
                for (pi, vi) in p.iter_mut().zip(&v.0) {
                    *pi += l * vi;
                }
            }
            out.push((p, w * m / total));
        }
    }
    out
}

/// Parameters in `(0, 1)` where `t ↦ ‖w + t·e‖` loses smoothness or reaches
/// its minimum.
pub fn affine_norm_kinks(w: &[f64], e: &[f64], metric: Metric) -> Vec<f64> {
    match metric {
        Metric::L2 => {
            let ee: f64 = e.iter().map(|x| x * x).sum();
            if ee > 0.0 {
                let we: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
                vec![-we / ee]
            } else {
                Vec::new()
            }
        }
        Metric::L1 => w
            .iter()
            .zip(e)
            .filter(|(_, ei)| **ei != 0.0)
            .map(|(wi, ei)| -wi / ei)
            .collect(),
    }
}

/// `∫₀¹ ‖w + t·e‖ dt`, split at the kinks so each panel is smooth.
pub fn mean_affine_norm(w: &[f64], e: &[f64], metric: Metric, order: usize) -> f64 {
    let mut cuts: Vec<f64> = affine_norm_kinks(w, e, metric)
        .into_iter()
        .filter(|t| *t > 0.0 && *t < 1.0)
        .collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (gx, gw) = gauss_legendre(order);
    let mut v = vec![0.0; w.len()];
    let mut sum = 0.0;
    for win in cuts.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        for (x, wt) in gx.iter().zip(&gw) {
            let t = t0 + (t1 - t0) * x;
            for i in 0..w.len() {
                v[i] = w[i] + t * e[i];
            }
            sum += wt * (t1 - t0) * metric.norm(&v);
        }
    }
    sum
}

/// Mean distance from a point to a uniformly weighted segment.
pub fn point_segment_mean(p: &[f64], s: &Segment, metric: Metric, order: usize) -> f64 {
    let w: Vec<f64> = s.a.0.iter().zip(p).map(|(a, q)| a - q).collect();
    mean_affine_norm(&w, &s.direction(), metric, order)
}

/// Mean distance between `u(t)` and `v(t)` under the affine coupling that
/// sends `u(t)` to `v(t)`.
pub fn aligned_mean(u: &Segment, v: &Segment, metric: Metric, order: usize) -> f64 {
    let w = u.a.sub(&v.a);
    let du = u.direction();
    let dv = v.direction();
    let e: Vec<f64> = du.iter().zip(&dv).map(|(a, b)| a - b).collect();
    mean_affine_norm(&w, &e, metric, order)
}

/// Mean distance from a point to a node set.
pub fn point_nodes_mean(p: &[f64], nodes: &Nodes, metric: Metric) -> f64 {
    nodes.iter().map(|(q, w)| w * metric.dist(p, q)).sum()
}

/// Mean distance under the product coupling of two node sets.
pub fn product_mean(a: &Nodes, b: &Nodes, metric: Metric) -> f64 {
    a.iter()
        .map(|(p, wa)| wa * point_nodes_mean(p, b, metric))
        .sum()
}

/// Largest order `≤ order` whose per-side node counts, given as functions
/// of the order, keep the product within [`PRODUCT_BUDGET`].
pub fn product_order(order: usize, count_a: impl Fn(usize) -> usize, count_b: impl Fn(usize) -> usize) -> usize {
    let mut o = order;
    while o > 1 && count_a(o).saturating_mul(count_b(o)) > PRODUCT_BUDGET {
        o -= 1;
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use approx::assert_abs_diff_eq;

    fn p(c: &[f64]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert_abs_diff_eq!(q, 1.0 / (deg as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn simplex_rule_moments() {
        // ∫ over the standard triangle of λ1^a λ2^b, normalized by area:
        // 2 · a! b! / (a + b + 2)!
        let rule = simplex_rule(2, 6);
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        let f = |n: u32| (1..=n).map(|i| i as f64).product::<f64>();
        for a in 0..4u32 {
            for b in 0..4u32 {
                let q: f64 = rule
                    .iter()
                    .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                    .sum();
                let exact = 2.0 * f(a) * f(b) / f(a + b + 2);
                assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
            }
        }
        let rule3 = simplex_rule(3, 5);
        let total: f64 = rule3.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        let q: f64 = rule3.iter().map(|(l, w)| w * l[3]).sum();
        assert_abs_diff_eq!(q, 0.25, epsilon = 1e-13);
    }

    #[test]
    fn point_to_segment_closed_forms() {
        let s = Segment::new(p(&[0., 0.]), p(&[1., 0.]));
        assert_abs_diff_eq!(point_segment_mean(&[0., 0.], &s, Metric::L2, 8), 0.5, epsilon = 1e-9);
        let s = Segment::new(p(&[-0.5, 0.]), p(&[0.5, 0.]));
        let exact = 2.0 * (0.25 * 1.25f64.sqrt() + 0.5 * 0.5f64.asinh());
        assert_abs_diff_eq!(point_segment_mean(&[0., 1.], &s, Metric::L2, 8), exact, epsilon = 1e-9);
        let s = Segment::new(p(&[1., 0.]), p(&[1., 1.]));
        assert_abs_diff_eq!(point_segment_mean(&[0., 0.], &s, Metric::L1, 8), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_length_transport() {
        let s = Segment::new(p(&[0., 0.]), p(&[1., 2.]));
        assert_abs_diff_eq!(aligned_mean(&s, &s, Metric::L2, 8), 0.0);
    }

    #[test]
    fn box_and_region_rules_agree_on_a_square() {
        let c = BoxCell::new(p(&[0., 0.]), p(&[1., 1.]));
        let region = vec![
            Simplex::new(vec![p(&[0., 0.]), p(&[1., 0.]), p(&[1., 1.])]),
            Simplex::new(vec![p(&[0., 0.]), p(&[1., 1.]), p(&[0., 1.])]),
        ];
        let q = [3.0, -1.0];
        let a = point_nodes_mean(&q, &box_nodes(&c, 8), Metric::L2);
        let b = point_nodes_mean(&q, &region_nodes(&region, 8), Metric::L2);
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn refinement_converges() {
        let s = Segment::new(p(&[0., 0.]), p(&[1., 0.]));
        let t = Segment::new(p(&[0., 0.5]), p(&[1., 0.7]));
        let lo = product_mean(&segment_nodes(&s, 4, &[]), &segment_nodes(&t, 4, &[]), Metric::L2);
        let hi = product_mean(&segment_nodes(&s, 8, &[]), &segment_nodes(&t, 8, &[]), Metric::L2);
        let (dmin, dmax) = crate::geometry::segment_segment_extremes(&s, &t, Metric::L2);
        assert!((lo - hi).abs() < dmax - dmin);
        assert!(hi >= dmin && hi <= dmax);
    }
}
