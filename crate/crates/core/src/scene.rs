//! Mass distributions: weighted point sets and uniform-density objects, with
//! JSON ingestion, validation and normalization to unit total mass.

use serde::{Deserialize, Serialize};

use crate::error::{EmdError, Result};
use crate::geometry::{bbox_of, simplex_measure, BoxCell, Metric, Point, Segment, Simplex, MAX_DIM};

/// Relative imbalance accepted without `--rebalance`.
pub const IMBALANCE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Points,
    Segments,
    Triangles,
    Simplices,
}

impl Kind {
    pub fn is_points(self) -> bool {
        self == Kind::Points
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Kind::Points => "points",
            Kind::Segments => "segments",
            Kind::Triangles => "triangles",
            Kind::Simplices => "simplices",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub pos: Point,
    pub mass: f64,
}

impl WeightedPoint {
    pub fn new(pos: Vec<f64>, mass: f64) -> Self {
        WeightedPoint { pos: Point(pos), mass }
    }
}

/// One side of a scene. Object sides carry mass `density × measure`; the
/// density is 1 except for the tiny correction that balances two object
/// sides within the accepted tolerance.
#[derive(Clone, Debug, PartialEq)]
pub enum MassSide {
    Points(Vec<WeightedPoint>),
    Segments(Vec<Segment>),
    /// Triangles in the plane, or full-dimensional simplices (`d + 1` vertices).
    Simplices { kind: Kind, items: Vec<Simplex> },
}

impl MassSide {
    pub fn kind(&self) -> Kind {
        match self {
            MassSide::Points(_) => Kind::Points,
            MassSide::Segments(_) => Kind::Segments,
            MassSide::Simplices { kind, .. } => *kind,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MassSide::Points(v) => v.len(),
            MassSide::Segments(v) => v.len(),
            MassSide::Simplices { items, .. } => items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Geometric measure of object `i` (its weight for points).
    pub fn measure(&self, i: usize) -> f64 {
        match self {
            MassSide::Points(v) => v[i].mass,
            MassSide::Segments(v) => v[i].length(),
            MassSide::Simplices { items, .. } => simplex_measure(&items[i]).unwrap_or(0.0),
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.len()).map(|i| self.measure(i)).sum()
    }

    /// Intrinsic dimension of the objects (0 for points).
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            MassSide::Points(_) => 0,
            MassSide::Segments(_) => 1,
            MassSide::Simplices { items, .. } => items.first().map_or(0, Simplex::intrinsic_dim),
        }
    }

    pub fn longest_edge(&self) -> f64 {
        match self {
            MassSide::Points(_) => 0.0,
            MassSide::Segments(v) => v.iter().map(Segment::length).fold(0.0, f64::max),
            MassSide::Simplices { items, .. } => items.iter().map(Simplex::longest_edge).fold(0.0, f64::max),
        }
    }

    pub fn vertices(&self) -> Vec<&Point> {
        match self {
            MassSide::Points(v) => v.iter().map(|p| &p.pos).collect(),
            MassSide::Segments(v) => v.iter().flat_map(|s| [&s.a, &s.b]).collect(),
            MassSide::Simplices { items, .. } => items.iter().flat_map(|s| s.vertices.iter()).collect(),
        }
    }

    pub fn bbox(&self) -> BoxCell {
        bbox_of(self.vertices().into_iter())
    }

    pub fn points(&self) -> Option<&[WeightedPoint]> {
        match self {
            MassSide::Points(v) => Some(v),
            _ => None,
        }
    }

    pub fn segments(&self) -> Option<&[Segment]> {
        match self {
            MassSide::Segments(v) => Some(v),
            _ => None,
        }
    }

    pub fn simplices(&self) -> Option<&[Simplex]> {
        match self {
            MassSide::Simplices { items, .. } => Some(items),
            _ => None,
        }
    }

    fn scaled(&self, coord: f64, weight: f64) -> MassSide {
        match self {
            MassSide::Points(v) => MassSide::Points(
                v.iter()
                    .map(|p| WeightedPoint { pos: p.pos.scaled(coord), mass: p.mass * weight })
                    .collect(),
            ),
            MassSide::Segments(v) => MassSide::Segments(
                v.iter()
                    .map(|s| Segment::new(s.a.scaled(coord), s.b.scaled(coord)))
                    .collect(),
            ),
            MassSide::Simplices { kind, items } => MassSide::Simplices {
                kind: *kind,
                items: items
                    .iter()
                    .map(|s| Simplex::new(s.vertices.iter().map(|v| v.scaled(coord)).collect()))
                    .collect(),
            },
        }
    }
}

/// Two mass distributions of equal total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct MassScene {
    pub metric: Metric,
    pub dimension: usize,
    pub p: MassSide,
    pub s: MassSide,
    /// Mass per unit measure on each side (1 for object sides unless a tiny
    /// imbalance was absorbed; unused for points).
    pub density: [f64; 2],
    /// Coordinate scale removed by normalization: input coordinates =
    /// normalized coordinates × `scale_factor`.
    pub scale_factor: f64,
    /// Total mass removed by normalization.
    pub mass_scale: f64,
    /// Longest object edge (Δ) in current coordinates.
    pub longest_edge: f64,
}

impl MassScene {
    /// Validates and assembles a scene. Masses are checked for balance; with
    /// `rebalance`, a points side is rescaled to match the other side.
    pub fn new(metric: Metric, dimension: usize, p: MassSide, s: MassSide, rebalance: bool) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(EmdError::UnsupportedDimension(dimension));
        }
        validate_side(&p, 'P', dimension)?;
        validate_side(&s, 'S', dimension)?;
        let (mut p, mut s) = (p, s);
        let mp = p.total_measure();
        let ms = s.total_measure();
        let rel = (mp - ms).abs() / mp.max(ms);
        let mut density = [1.0, 1.0];
        if rel > IMBALANCE_TOL {
            if !rebalance {
                return Err(EmdError::UnbalancedMass { p: mp, s: ms, rel });
            }
            if s.kind().is_points() {
                s = s.scaled(1.0, mp / ms);
            } else if p.kind().is_points() {
                p = p.scaled(1.0, ms / mp);
            } else {
                return Err(EmdError::InvalidScene(format!(
                    "unbalanced mass ({mp} vs {ms}) cannot be rebalanced: both sides are geometric objects"
                )));
            }
        } else if !p.kind().is_points() && !s.kind().is_points() {
            density[1] = mp / ms;
        } else if s.kind().is_points() {
            s = s.scaled(1.0, p.total_measure() / s.total_measure());
        } else {
            p = p.scaled(1.0, s.total_measure() / p.total_measure());
        }
        let longest_edge = p.longest_edge().max(s.longest_edge());
        Ok(MassScene { metric, dimension, p, s, density, scale_factor: 1.0, mass_scale: 1.0, longest_edge })
    }

    pub fn side(&self, which: char) -> &MassSide {
        if which == 'P' {
            &self.p
        } else {
            &self.s
        }
    }

    /// Mass of object `i` on side `which` (`'P'` or `'S'`).
    pub fn object_mass(&self, which: char, i: usize) -> f64 {
        let (side, rho) = if which == 'P' { (&self.p, self.density[0]) } else { (&self.s, self.density[1]) };
        if side.kind().is_points() {
            side.measure(i)
        } else {
            rho * side.measure(i)
        }
    }

    pub fn total_mass(&self, which: char) -> f64 {
        (0..self.side(which).len()).map(|i| self.object_mass(which, i)).sum()
    }

    /// Intrinsic dimension used for coordinate scaling: that of the object
    /// side(s), 0 for two point sets.
    pub fn mass_dim(&self) -> usize {
        self.p.intrinsic_dim().max(self.s.intrinsic_dim())
    }

    /// Rescales coordinates (for objects) and weights (for points) so both
    /// sides carry total mass 1. Idempotent.
    pub fn normalize(&self) -> MassScene {
        let total = self.total_mass('P');
        let k = self.mass_dim();
        let f = if k == 0 { 1.0 } else { total.powf(1.0 / k as f64) };
        let w = 1.0 / total;
        let mut out = self.clone();
        out.p = self.p.scaled(1.0 / f, w);
        out.s = self.s.scaled(1.0 / f, w);
        if k > 0 {
            // densities are unchanged by coordinate scaling; renormalize so
            // object masses sum to exactly 1 on each side
            for (idx, side) in [(0usize, &out.p), (1, &out.s)] {
                if !side.kind().is_points() {
                    out.density[idx] = 1.0 / side.total_measure();
                }
            }
        }
        out.scale_factor = self.scale_factor * f;
        out.mass_scale = self.mass_scale * total;
        out.longest_edge = out.p.longest_edge().max(out.s.longest_edge());
        out
    }

    /// Converts a cost computed on this (normalized) scene into input units
    /// with the original masses.
    pub fn cost_in_input_units(&self, cost: f64) -> f64 {
        cost * self.scale_factor * self.mass_scale
    }

    pub fn bbox(&self) -> BoxCell {
        bbox_of(self.p.vertices().into_iter().chain(self.s.vertices()))
    }
}

fn validate_side(side: &MassSide, name: char, d: usize) -> Result<()> {
    if side.is_empty() {
        return Err(EmdError::InvalidScene(format!("side {name} has no items")));
    }
    let check = |p: &Point| -> Result<()> {
        if p.dim() != d {
            return Err(EmdError::DimensionMismatch { expected: d, got: p.dim() });
        }
        if p.0.iter().any(|c| !c.is_finite()) {
            return Err(EmdError::NonFinite(format!("side {name}: {:?}", p.0)));
        }
        Ok(())
    };
    match side {
        MassSide::Points(v) => {
            for (i, wp) in v.iter().enumerate() {
                check(&wp.pos)?;
                if !(wp.mass.is_finite() && wp.mass > 0.0) {
                    return Err(EmdError::InvalidScene(format!(
                        "side {name}: point {i} has non-positive or non-finite mass {}",
                        wp.mass
                    )));
                }
            }
        }
        MassSide::Segments(v) => {
            for (i, s) in v.iter().enumerate() {
                check(&s.a)?;
                check(&s.b)?;
                let scale = s.a.0.iter().chain(&s.b.0).fold(1.0f64, |m, c| m.max(c.abs()));
                if !(s.length() > 1e-12 * scale) {
                    return Err(EmdError::DegenerateObject { side: name, index: i });
                }
            }
        }
        MassSide::Simplices { kind, items } => {
            let want = if *kind == Kind::Triangles { 3 } else { d + 1 };
            if *kind == Kind::Triangles && d != 2 {
                return Err(EmdError::InvalidScene(format!(
                    "side {name}: triangles require dimension 2 (got {d}); use kind \"simplices\""
                )));
            }
            for (i, s) in items.iter().enumerate() {
                if s.vertices.len() != want {
                    return Err(EmdError::InvalidScene(format!(
                        "side {name}: item {i} has {} vertices, kind {kind} needs {want}",
                        s.vertices.len()
                    )));
                }
                for v in &s.vertices {
                    check(v)?;
                }
                if simplex_measure(s).is_err() {
                    return Err(EmdError::DegenerateObject { side: name, index: i });
                }
            }
        }
    }
    if !(side.total_measure() > 0.0) {
        return Err(EmdError::InvalidScene(format!("side {name} has zero total mass")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    metric: Metric,
    dimension: usize,
    #[serde(rename = "P")]
    p: RawSide,
    #[serde(rename = "S")]
    s: RawSide,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSide {
    kind: Kind,
    items: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    pos: Vec<f64>,
    mass: f64,
}

fn parse_side(raw: RawSide, name: char) -> Result<MassSide> {
    let field = |i: usize, e: serde_json::Error| EmdError::Parse(format!("{name}.items[{i}]: {e}"));
    Ok(match raw.kind {
        Kind::Points => MassSide::Points(
            raw.items
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let rp: RawPoint = serde_json::from_value(v).map_err(|e| field(i, e))?;
                    Ok(WeightedPoint::new(rp.pos, rp.mass))
                })
                .collect::<Result<_>>()?,
        ),
        kind => {
            let verts: Vec<Vec<Vec<f64>>> = raw
                .items
                .into_iter()
                .enumerate()
                .map(|(i, v)| serde_json::from_value(v).map_err(|e| field(i, e)))
                .collect::<Result<_>>()?;
            if kind == Kind::Segments {
                MassSide::Segments(
                    verts
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| {
                            if v.len() != 2 {
                                return Err(EmdError::Parse(format!(
                                    "{name}.items[{i}]: a segment needs 2 vertices, got {}",
                                    v.len()
                                )));
                            }
                            let mut it = v.into_iter();
                            Ok(Segment::new(Point(it.next().unwrap()), Point(it.next().unwrap())))
                        })
                        .collect::<Result<_>>()?,
                )
            } else {
                MassSide::Simplices {
                    kind,
                    items: verts
                        .into_iter()
                        .map(|v| Simplex::new(v.into_iter().map(Point).collect()))
                        .collect(),
                }
            }
        }
    })
}

/// Parses a scene file without validation: `(metric, dimension, P, S)`.
pub fn load_sides(text: &str) -> Result<(Metric, usize, MassSide, MassSide)> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| EmdError::Parse(e.to_string()))?;
    let p = parse_side(raw.p, 'P')?;
    let s = parse_side(raw.s, 'S')?;
    Ok((raw.metric, raw.dimension, p, s))
}

/// Parses and validates a scene file (not normalized).
pub fn load_scene(text: &str, rebalance: bool) -> Result<MassScene> {
    let (metric, dimension, p, s) = load_sides(text)?;
    MassScene::new(metric, dimension, p, s, rebalance)
}

fn side_to_raw(side: &MassSide) -> RawSide {
    let items = match side {
        MassSide::Points(v) => v
            .iter()
            .map(|p| serde_json::json!({"pos": p.pos.0, "mass": p.mass}))
            .collect(),
        MassSide::Segments(v) => v.iter().map(|s| serde_json::json!([s.a.0, s.b.0])).collect(),
        MassSide::Simplices { items, .. } => items
            .iter()
            .map(|s| serde_json::json!(s.vertices.iter().map(|v| &v.0).collect::<Vec<_>>()))
            .collect(),
    };
    RawSide { kind: side.kind(), items }
}

/// Serializes a scene in the file format read by [`load_scene`].
pub fn scene_to_json(scene: &MassScene) -> String {
    let raw = RawScene {
        metric: scene.metric,
        dimension: scene.dimension,
        p: side_to_raw(&scene.p),
        s: side_to_raw(&scene.s),
    };
    serde_json::to_string_pretty(&raw).expect("scene serialization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_point_sets() {
        let text = r#"{"metric":"l2","dimension":2,
            "P":{"kind":"points","items":[{"pos":[0,0],"mass":1},{"pos":[1,0],"mass":1}]},
            "S":{"kind":"points","items":[{"pos":[0,0],"mass":1},{"pos":[1,0],"mass":1}]}}"#;
        let sc = load_scene(text, false).unwrap();
        assert_eq!(sc.p, sc.s);
        let n = sc.normalize();
        assert_abs_diff_eq!(n.total_mass('P'), 1.0, epsilon = 1e-12);
        assert_eq!(n.scale_factor, 1.0);
    }

    #[test]
    fn degenerate_segment_rejected() {
        let text = r#"{"metric":"l2","dimension":2,
            "P":{"kind":"segments","items":[[[0,0],[1,0]],[[2,2],[2,2]]]},
            "S":{"kind":"segments","items":[[[0,1],[2,1]]]}}"#;
        let err = load_scene(text, false).unwrap_err().to_string();
        assert!(err.contains("degenerate object at index 1"), "{err}");
    }

    #[test]
    fn unbalanced_segments_rejected_even_with_rebalance() {
        let text = r#"{"metric":"l2","dimension":2,
            "P":{"kind":"segments","items":[[[0,0],[2,0]]]},
            "S":{"kind":"segments","items":[[[0,1],[3,1]]]}}"#;
        let err = load_scene(text, false).unwrap_err().to_string();
        assert!(err.contains("unbalanced mass"), "{err}");
        assert!(load_scene(text, true).is_err());
    }

    #[test]
    fn rebalance_rescales_points() {
        let text = r#"{"metric":"l2","dimension":2,
            "P":{"kind":"points","items":[{"pos":[0,0],"mass":1}]},
            "S":{"kind":"segments","items":[[[0,1],[3,1]]]}}"#;
        assert!(load_scene(text, false).is_err());
        let sc = load_scene(text, true).unwrap();
        assert_abs_diff_eq!(sc.total_mass('P'), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn malformed_scene_names_field() {
        let text = r#"{"metric":"l2","dimension":2,"P":{"kind":"points","items":[{"pos":[0,0]}]},
            "S":{"kind":"points","items":[{"pos":[0,0],"mass":1}]}}"#;
        let err = load_scene(text, false).unwrap_err().to_string();
        assert!(err.contains("mass"), "{err}");
        let err = load_scene(r#"{"dimension":2}"#, false).unwrap_err().to_string();
        assert!(err.contains("metric"), "{err}");
    }

    #[test]
    fn normalize_examples() {
        let seg = |y: f64| Segment::new(Point(vec![0.0, y]), Point(vec![4.0, y]));
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Segments(vec![seg(0.0)]),
            MassSide::Segments(vec![seg(1.0)]),
            false,
        )
        .unwrap()
        .normalize();
        assert_abs_diff_eq!(sc.scale_factor, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.p.segments().unwrap()[0].length(), 1.0, epsilon = 1e-12);

        let tri = |x: f64| {
            Simplex::new(vec![
                Point(vec![x, 0.0]),
                Point(vec![x + 4.0, 0.0]),
                Point(vec![x, 2.0]),
            ])
        };
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Simplices { kind: Kind::Triangles, items: vec![tri(0.0)] },
            MassSide::Simplices { kind: Kind::Triangles, items: vec![tri(5.0)] },
            false,
        )
        .unwrap()
        .normalize();
        assert_abs_diff_eq!(sc.scale_factor, 2.0, epsilon = 1e-12);

        // cube corner simplices of total volume 8 → scale 1/2
        let tet = Simplex::new(vec![
            Point(vec![0., 0., 0.]),
            Point(vec![48f64.cbrt(), 0., 0.]),
            Point(vec![0., 48f64.cbrt(), 0.]),
            Point(vec![0., 0., 48f64.cbrt()]),
        ]);
        let sc = MassScene::new(
            Metric::L2,
            3,
            MassSide::Points(vec![WeightedPoint::new(vec![5., 5., 5.], 8.0)]),
            MassSide::Simplices { kind: Kind::Simplices, items: vec![tet] },
            false,
        )
        .unwrap()
        .normalize();
        assert_abs_diff_eq!(sc.scale_factor, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.total_mass('S'), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.total_mass('P'), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let text = r#"{"metric":"l1","dimension":2,
            "P":{"kind":"points","items":[{"pos":[0,0],"mass":2},{"pos":[1,3],"mass":1.5}]},
            "S":{"kind":"segments","items":[[[0,1],[3,1]],[[0,0],[0,0.5]]]}}"#;
        let a = load_scene(text, false).unwrap().normalize();
        let b = a.normalize();
        assert_abs_diff_eq!(a.scale_factor, b.scale_factor, epsilon = 1e-12);
        let (pa, pb) = (a.p.points().unwrap(), b.p.points().unwrap());
        for (x, y) in pa.iter().zip(pb) {
            assert_abs_diff_eq!(x.mass, y.mass, epsilon = 1e-12);
            for (u, v) in x.pos.0.iter().zip(&y.pos.0) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_json() {
        let text = r#"{"metric":"l2","dimension":2,
            "P":{"kind":"points","items":[{"pos":[0,0],"mass":1}]},
            "S":{"kind":"triangles","items":[[[0,0],[1,0],[0,2]]]}}"#;
        let a = load_scene(text, false).unwrap();
        let b = load_scene(&scene_to_json(&a), false).unwrap();
        assert_eq!(a, b);
    }
}
