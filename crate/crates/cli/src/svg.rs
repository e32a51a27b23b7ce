use std::fmt::Write;

use nalgebra::Vector3;
use sphereswim::geometry::{self, Position, State, SwimmerModel};
use sphereswim::dynamics::Trajectory;

use crate::config::PlotConfig;

pub const SNAPSHOTS: usize = 10;

const PANEL: f64 = 160.0;
const MARGIN: f64 = 12.0;

/// Pose with its displacement from `origin` magnified.
fn magnified(origin: &Position, p: &Position, gain: f64, angle_gain: f64) -> Position {
    match (origin, p) {
        (Position::Line { c: c0 }, Position::Line { c }) => Position::Line { c: c0 + gain * (c - c0) },
        (Position::Planar { c: c0, theta: t0 }, Position::Planar { c, theta }) => Position::Planar {
            c: c0 + (c - c0) * gain,
            theta: t0 + angle_gain * (theta - t0),
        },
        (Position::Spatial { c: c0, .. }, Position::Spatial { c, rotation }) => Position::Spatial {
            c: c0 + (c - c0) * gain,
            rotation: *rotation,
        },
        _ => p.clone(),
    }
}

fn extent(points: &[Vector3<f64>]) -> f64 {
    let mut r: f64 = 0.0;
    for a in points {
        for b in points {
            r = r.max((a.xy() - b.xy()).norm());
        }
    }
    r
}

/// Ten snapshots of the swimmer at equally spaced times and the path of its centre, both
/// projected on the x–y plane.
pub fn trajectory_svg(model: &SwimmerModel, traj: &Trajectory, plot: &PlotConfig) -> String {
    let origin = traj.states[0].position.clone();
    let centres: Vec<Vector3<f64>> = traj.states.iter().map(|s| s.position.center()).collect();
    let body = geometry::centers(model, &traj.states[0]).map(|c| c.centers).unwrap_or_default();
    let size = (extent(&body) + 2.0 * model.radius).max(f64::MIN_POSITIVE);
    let travel = extent(&centres);
    let gain = plot
        .path_gain
        .unwrap_or(if travel > 0.0 { (0.5 * size / travel).max(1.0) } else { 1.0 });
    let scale = (PANEL - 2.0 * MARGIN) / (1.6 * size);

    let last = *traj.times.last().unwrap_or(&0.0);
    let picks: Vec<usize> = (0..SNAPSHOTS)
        .map(|k| {
            let t = last * k as f64 / (SNAPSHOTS - 1) as f64;
            traj.times.iter().position(|&s| s >= t - 1e-12 * last.max(1.0)).unwrap_or(traj.times.len() - 1)
        })
        .collect();

    let width = PANEL * SNAPSHOTS as f64;
    let height = 2.0 * PANEL + 40.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{} swimmer, centre displacement x{gain:.3}, rotation x{:.3}</text>"#,
        model.kind.label(),
        plot.angle_gain
    );

    let c0 = origin.center();
    for (panel, &k) in picks.iter().enumerate() {
        let s = &traj.states[k];
        let shown = State::new(s.shape.clone(), magnified(&origin, &s.position, gain, plot.angle_gain));
        let cx = PANEL * (panel as f64 + 0.5);
        let cy = 30.0 + PANEL * 0.5;
        let map = |p: &Vector3<f64>| (cx + scale * (p.x - c0.x), cy - scale * (p.y - c0.y));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">t = {:.3}</text>"#,
            cx,
            30.0 + PANEL - 4.0,
            traj.times[k]
        );
        let (ox, oy) = map(&c0);
        let _ = writeln!(
            out,
            r##"<path d="M{:.2},{:.2}h8M{:.2},{:.2}v8" stroke="#999" stroke-width="0.5" transform="translate(-4,-4)"/>"##,
            ox, oy + 4.0, ox + 4.0, oy
        );
        if let Ok(cfg) = geometry::centers(model, &shown) {
            let (hx, hy) = map(&shown.position.center());
            for b in &cfg.centers {
                let (bx, by) = map(b);
                let _ = writeln!(out, r##"<line x1="{hx:.2}" y1="{hy:.2}" x2="{bx:.2}" y2="{by:.2}" stroke="#555" stroke-width="1"/>"##);
            }
            for (i, b) in cfg.centers.iter().enumerate() {
                let (bx, by) = map(b);
                let _ = writeln!(
                    out,
                    r##"<circle cx="{bx:.2}" cy="{by:.2}" r="{:.2}" fill="{}" stroke="black" stroke-width="0.5"/>"##,
                    scale * model.radius,
                    ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"][i % 4]
                );
            }
        }
    }

    // Centre path, scaled to fill the lower band.
    let band = 30.0 + PANEL + 20.0;
    let lo_x = centres.iter().map(|c| c.x).fold(f64::INFINITY, f64::min);
    let hi_x = centres.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max);
    let lo_y = centres.iter().map(|c| c.y).fold(f64::INFINITY, f64::min);
    let hi_y = centres.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(f64::MIN_POSITIVE);
    let path_scale = (PANEL - 2.0 * MARGIN) / span;
    let mid_x = 0.5 * (lo_x + hi_x);
    let mid_y = 0.5 * (lo_y + hi_y);
    let to_svg = |c: &Vector3<f64>| (width * 0.5 + path_scale * (c.x - mid_x), band + PANEL * 0.5 - path_scale * (c.y - mid_y));
    let mut d = String::new();
    for (i, c) in centres.iter().enumerate() {
        let (x, y) = to_svg(c);
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { "L" });
    }
    let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>"##);
    for &k in &picks {
        let (x, y) = to_svg(&centres[k]);
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#d62728"/>"##);
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{:.2}" font-family="sans-serif" font-size="12">centre path, width {:.3e}</text>"#,
        band + 12.0,
        span
    );
    out.push_str("</svg>\n");
    out
}
