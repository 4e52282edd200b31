//! Minimal self-contained SVG plots.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::stats::Spread;
use crate::SimplicialMesh;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str, comment: &str) -> Self {
        let mut out = String::new();
        for line in comment.lines() {
            let _ = writeln!(out, "<!-- {} -->", line.replace("--", "- -"));
        }
        let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">");
        let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
            W / 2.0,
            escape(title)
        );
        Canvas { out }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{}</text>",
            escape(s)
        );
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str) {
        let _ = writeln!(
            self.out,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{stroke}\"/>",
            a.0, a.1, b.0, b.1
        );
    }

    /// Frame with y ticks; returns the data-to-pixel map for y.
    fn axes(&mut self, xlabel: &str, ylabel: &str, (y0, y1): (f64, f64)) -> impl Fn(f64) -> f64 {
        let (l, r, t, b) = (PAD, W - PAD / 2.0, PAD, H - PAD);
        self.line((l, b), (r, b), "black");
        self.line((l, b), (l, t), "black");
        self.text((l + r) / 2.0, H - 14.0, "middle", xlabel);
        let _ = writeln!(
            self.out,
            "<text x=\"14\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(ylabel)
        );
        let span = if y1 > y0 { y1 - y0 } else { 1.0 };
        let ymap = move |y: f64| b - (y - y0) / span * (b - t);
        for k in 0..=4 {
            let v = y0 + span * k as f64 / 4.0;
            let py = ymap(v);
            self.line((l - 4.0, py), (l, py), "black");
            self.text(l - 6.0, py + 4.0, "end", &format_tick(v));
        }
        ymap
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Padded `(min, max)` of finite values.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// A plotted point: x, y and a fill colour.
pub struct Point2 {
    pub x: f64,
    pub y: f64,
    pub color: &'static str,
}

/// Scatter plot with a colour legend.
pub fn scatter(title: &str, comment: &str, xlabel: &str, ylabel: &str, points: &[Point2], legend: &[(&str, &'static str)]) -> String {
    let mut c = Canvas::new(title, comment);
    let ymap = c.axes(xlabel, ylabel, range(points.iter().map(|p| p.y)));
    let (x0, x1) = range(points.iter().map(|p| p.x));
    let (l, r) = (PAD, W - PAD / 2.0);
    let xmap = |x: f64| l + (x - x0) / (x1 - x0) * (r - l);
    for k in 0..=4 {
        let v = x0 + (x1 - x0) * k as f64 / 4.0;
        c.text(xmap(v), H - PAD + 16.0, "middle", &format!("{v:.1}"));
    }
    for p in points {
        let _ = writeln!(
            c.out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            xmap(p.x),
            ymap(p.y),
            p.color
        );
    }
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let _ = writeln!(c.out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\"/>", W - 120.0, y);
        c.text(W - 110.0, y + 4.0, "start", name);
    }
    c.finish()
}

/// Box-and-whisker plot, one box per group (whiskers at min and max).
pub fn box_plot(title: &str, comment: &str, ylabel: &str, groups: &[(&str, Spread)]) -> String {
    let mut c = Canvas::new(title, comment);
    let ymap = c.axes("", ylabel, range(groups.iter().flat_map(|(_, s)| [s.min, s.max])));
    let (l, r) = (PAD, W - PAD / 2.0);
    let slot = (r - l) / groups.len().max(1) as f64;
    for (i, (name, s)) in groups.iter().enumerate() {
        let cx = l + slot * (i as f64 + 0.5);
        let half = slot * 0.2;
        c.line((cx, ymap(s.min)), (cx, ymap(s.q1)), "black");
        c.line((cx, ymap(s.q3)), (cx, ymap(s.max)), "black");
        c.line((cx - half / 2.0, ymap(s.min)), (cx + half / 2.0, ymap(s.min)), "black");
        c.line((cx - half / 2.0, ymap(s.max)), (cx + half / 2.0, ymap(s.max)), "black");
        let _ = writeln!(
            c.out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            cx - half,
            ymap(s.q3),
            2.0 * half,
            (ymap(s.q1) - ymap(s.q3)).max(0.5)
        );
        c.line((cx - half, ymap(s.median)), (cx + half, ymap(s.median)), "#d62728");
        c.text(cx, H - PAD + 16.0, "middle", name);
    }
    c.finish()
}

/// Viridis-like ramp for `t` in [0, 1].
fn ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Node marker on a mesh map.
pub struct Marker {
    pub node: usize,
    pub color: &'static str,
    pub label: &'static str,
}

/// Cylindrical projection about the mesh's principal axis: azimuth on x,
/// axial height on y. Triangles straddling the azimuth seam are dropped.
fn project(mesh: &SimplicialMesh) -> Vec<(f64, f64)> {
    let c = mesh.centroid();
    let axis = mesh.principal_axis();
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - axis * axis.dot(&helper)).normalize();
    let e2 = axis.cross(&e1);
    mesh.vertices()
        .iter()
        .map(|p| {
            let d = p - c;
            (d.dot(&e2).atan2(d.dot(&e1)), d.dot(&axis))
        })
        .collect()
}

/// Per-node field painted on the flattened mesh, with markers on top.
pub fn mesh_map(title: &str, comment: &str, mesh: &SimplicialMesh, values: &[f64], markers: &[Marker]) -> String {
    let mut c = Canvas::new(title, comment);
    let uv = project(mesh);
    let (v0, v1) = values.iter().filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let vspan = if v1 > v0 { v1 - v0 } else { 1.0 };
    let (z0, z1) = range(uv.iter().map(|p| p.1));
    let (l, r, t, b) = (PAD, W - 90.0, PAD, H - PAD);
    let px = |u: f64| l + (u + std::f64::consts::PI) / std::f64::consts::TAU * (r - l);
    let py = |z: f64| b - (z - z0) / (z1 - z0) * (b - t);
    for e in mesh.elements() {
        let us: Vec<f64> = e.iter().map(|&i| uv[i].0).collect();
        let spread = us.iter().copied().fold(f64::NEG_INFINITY, f64::max) - us.iter().copied().fold(f64::INFINITY, f64::min);
        if spread > std::f64::consts::PI {
            continue;
        }
        let mean = e.iter().map(|&i| values[i]).sum::<f64>() / e.len() as f64;
        let color = ramp((mean - v0) / vspan);
        let pts: Vec<String> = e.iter().map(|&i| format!("{:.1},{:.1}", px(uv[i].0), py(uv[i].1))).collect();
        let _ = writeln!(c.out, "<polygon points=\"{}\" fill=\"{color}\" stroke=\"{color}\"/>", pts.join(" "));
    }
    for m in markers {
        let (u, z) = uv[m.node];
        let _ = writeln!(
            c.out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"><title>{}</title></circle>",
            px(u),
            py(z),
            m.color,
            m.label
        );
    }
    c.text((l + r) / 2.0, H - 18.0, "middle", "azimuth about principal axis");
    c.text(l - 6.0, (t + b) / 2.0, "end", "axial");
    // colour bar
    for k in 0..20 {
        let y = b - (b - t) * (k as f64 + 1.0) / 20.0;
        let _ = writeln!(
            c.out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"14\" height=\"{:.1}\" fill=\"{}\"/>",
            W - 70.0,
            y,
            (b - t) / 20.0 + 0.5,
            ramp((k as f64 + 0.5) / 20.0)
        );
    }
    c.text(W - 50.0, t + 4.0, "start", &format_tick(v1));
    c.text(W - 50.0, b, "start", &format_tick(v0));
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_geometry, GeometryParams};

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(f64::NAN), "#440154");
    }

    #[test]
    fn plots_are_well_formed_and_carry_the_comment() {
        let pts = [Point2 { x: 0.0, y: 1.0, color: "red" }, Point2 { x: 2.0, y: 3.0, color: "blue" }];
        let s = scatter("t <1>", "config_hash=ab, seed=3", "x", "y", &pts, &[("HF", "red")]);
        assert!(s.starts_with("<!-- config_hash=ab, seed=3 -->\n<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t &lt;1&gt;"));
        assert_eq!(s.matches("<circle").count(), 3);

        let sp = Spread::of(&[1.0, 2.0, 3.0]).unwrap();
        let b = box_plot("b", "c", "cost", &[("SF", sp), ("MF", sp)]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn mesh_map_draws_most_triangles() {
        let mesh = generate_synthetic_geometry(&GeometryParams::ellipsoid([1.0, 1.0, 2.0], 3)).unwrap();
        let values: Vec<f64> = mesh.vertices().iter().map(|p| p.z).collect();
        let s = mesh_map("m", "c", &mesh, &values, &[Marker { node: 0, color: "red", label: "truth" }]);
        let drawn = s.matches("<polygon").count();
        assert!(drawn > mesh.num_elements() * 9 / 10 && drawn < mesh.num_elements());
    }
}
