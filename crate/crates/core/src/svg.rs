//! SVG rendering of planar scenes and plans.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::discretize::{Carrier, Piece};
use crate::error::{EmdError, Result};
use crate::geometry::{bbox_of, BoxCell, Point};
use crate::lift::TransportPlan;
use crate::scene::{MassScene, MassSide};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;

struct Frame {
    lo: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(b: &BoxCell) -> Frame {
        let w = (b.hi.0[0] - b.lo.0[0]).max(1e-12);
        let h = (b.hi.0[1] - b.lo.0[1]).max(1e-12);
        let scale = (SIZE - 2.0 * MARGIN) / w.max(h);
        Frame { lo: [b.lo.0[0], b.lo.0[1]], scale, height: h * scale + 2.0 * MARGIN }
    }

    fn xy(&self, p: &[f64]) -> (f64, f64) {
        // y grows upwards in the scene, downwards in SVG
        (MARGIN + (p[0] - self.lo[0]) * self.scale, self.height - MARGIN - (p[1] - self.lo[1]) * self.scale)
    }
}

fn poly(out: &mut String, f: &Frame, pts: &[&Point], class: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = f.xy(&p.0);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(out, r#"<polygon class="{class}" points="{}"/>"#, coords.join(" "));
}

fn line(out: &mut String, f: &Frame, a: &[f64], b: &[f64], class: &str) {
    let (x1, y1) = f.xy(a);
    let (x2, y2) = f.xy(b);
    let _ = writeln!(out, r#"<line class="{class}" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}"/>"#);
}

fn draw_piece(out: &mut String, f: &Frame, p: &Piece) {
    let side = p.side.tag();
    let _ = writeln!(out, r#"<g class="piece side-{side}" data-object="{}">"#, p.object);
    match &p.carrier {
        Carrier::Point(q) => {
            let (x, y) = f.xy(&q.0);
            let _ = writeln!(out, r#"<circle class="piece-point" cx="{x:.3}" cy="{y:.3}" r="3"/>"#);
        }
        Carrier::SubSegment { geom, .. } => line(out, f, &geom.a.0, &geom.b.0, "piece-segment"),
        Carrier::Cell { region: Some(r), .. } if !r.is_empty() => {
            for s in r {
                poly(out, f, &s.vertices.iter().collect::<Vec<_>>(), "piece-cell");
            }
        }
        Carrier::Cell { cell, .. } => {
            let (x0, y1) = f.xy(&cell.lo.0);
            let (x1, y0) = f.xy(&cell.hi.0);
            let _ = writeln!(
                out,
                r#"<rect class="piece-cell" x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}"/>"#,
                x1 - x0,
                y1 - y0
            );
        }
    }
    out.push_str("</g>\n");
}

fn draw_side(out: &mut String, f: &Frame, side: &MassSide, tag: char) {
    match side {
        MassSide::Points(v) => {
            for w in v {
                let (x, y) = f.xy(&w.pos.0);
                let _ = writeln!(out, r#"<circle class="object side-{tag}" cx="{x:.3}" cy="{y:.3}" r="5"/>"#);
            }
        }
        MassSide::Segments(v) => {
            for s in v {
                line(out, f, &s.a.0, &s.b.0, &format!("object side-{tag}"));
            }
        }
        MassSide::Simplices { items, .. } => {
            for s in items {
                poly(out, f, &s.vertices.iter().collect::<Vec<_>>(), &format!("object side-{tag}"));
            }
        }
    }
}

/// Renders a 2D scene and a plan in the same coordinates (input units).
/// Every distinct plan piece is one `<g class="piece ...">`, every
/// assignment one `<path class="assignment">` with width proportional to
/// its mass.
pub fn render_svg(scene: &MassScene, plan: &TransportPlan) -> Result<String> {
    if scene.dimension != 2 {
        return Err(EmdError::Precondition(format!("SVG output needs a planar scene, got dimension {}", scene.dimension)));
    }
    let plan = plan.to_input_units();
    let mut verts: Vec<Point> = scene.p.vertices().into_iter().chain(scene.s.vertices()).cloned().collect();
    for a in &plan.assignments {
        verts.push(a.source.rep.clone());
        verts.push(a.target.rep.clone());
    }
    let frame = Frame::new(&bbox_of(verts.iter()));
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE:.0}" height="{:.0}" viewBox="0 0 {SIZE:.0} {:.3}">"#,
        frame.height, frame.height
    );
    out.push_str(
        "<style>.side-P{stroke:#1f5fa8;fill:#1f5fa8;fill-opacity:0.15}.side-S{stroke:#b2401d;fill:#b2401d;fill-opacity:0.15}\
         .object{stroke-width:2}.assignment{fill:none;stroke:#333;stroke-opacity:0.5}</style>\n",
    );
    out.push_str("<g class=\"objects\">\n");
    draw_side(&mut out, &frame, &scene.p, 'P');
    draw_side(&mut out, &frame, &scene.s, 'S');
    out.push_str("</g>\n<g class=\"pieces\">\n");
    let mut seen = BTreeMap::new();
    for a in &plan.assignments {
        for p in [&a.source, &a.target] {
            let key = serde_json::to_string(p)?;
            if !seen.contains_key(&key) {
                draw_piece(&mut out, &frame, p);
                seen.insert(key, ());
            }
        }
    }
    out.push_str("</g>\n<g class=\"assignments\">\n");
    let heaviest = plan.assignments.iter().map(|a| a.mass).fold(0.0, f64::max).max(1e-300);
    for a in &plan.assignments {
        let (x1, y1) = frame.xy(&a.source.rep.0);
        let (x2, y2) = frame.xy(&a.target.rep.0);
        // bend the arc sideways by a fifth of its length
        let (mx, my) = (0.5 * (x1 + x2) - 0.2 * (y2 - y1), 0.5 * (y1 + y2) + 0.2 * (x2 - x1));
        let width = 0.3 + 4.0 * a.mass / heaviest;
        let _ = writeln!(
            out,
            r#"<path class="assignment" d="M {x1:.3} {y1:.3} Q {mx:.3} {my:.3} {x2:.3} {y2:.3}" stroke-width="{width:.3}"/>"#
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Metric, Segment};
    use crate::pipeline::{run, PipelineConfig};
    use crate::scene::WeightedPoint;

    #[test]
    fn counts_match_plan() {
        let sc = MassScene::new(
            Metric::L2,
            2,
            MassSide::Points(vec![WeightedPoint::new(vec![0.0, 1.0], 0.5), WeightedPoint::new(vec![2.0, 0.0], 1.5)]),
            MassSide::Segments(vec![Segment::new(Point(vec![0., 0.]), Point(vec![2., 0.]))]),
            false,
        )
        .unwrap();
        let out = run(&sc, &PipelineConfig::new(0.5)).unwrap();
        let svg = render_svg(&sc, &out.plan).unwrap();
        assert_eq!(svg.matches(r#"<g class="piece "#).count(), out.plan.piece_count());
        assert_eq!(svg.matches(r#"class="assignment""#).count(), out.plan.assignments.len());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
