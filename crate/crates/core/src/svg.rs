//! Minimal SVG writers: scene frames and line charts.

use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::agent::{Agent, VIRTUAL_LEVEL};
use crate::env::{EnvConfig, WorldState, N_JOINTS};

const ARM: &str = "#1f4e9c";
const TOOL: &str = "#2e8b3a";
const BALL: &str = "#c0392b";

fn polyline(out: &mut String, pts: &[Vector2<f64>], color: &str, width: f64, opacity: f64) {
    let coords: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", p.x, -p.y)).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}" stroke-linecap="round" stroke-linejoin="round"/>"#,
        coords.join(" ")
    );
}

fn circle(out: &mut String, p: Vector2<f64>, r: f64, color: &str, opacity: f64) {
    let _ = writeln!(
        out,
        r#"<circle cx="{:.1}" cy="{:.1}" r="{r}" fill="{color}" fill-opacity="{opacity}"/>"#,
        p.x, -p.y
    );
}

/// One frame of a trial: the real arm, tool and ball, and the agent's
/// three believed kinematic pathways drawn translucent.
pub fn scene(env: &EnvConfig, world: &WorldState, agent: &Agent, step: usize) -> String {
    let half = env.half();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="650" height="650">"#,
        -half, -half, 2.0 * half, 2.0 * half
    );
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="white" stroke="#999"/>"##,
        -half, -half, 2.0 * half, 2.0 * half
    );

    let scale = agent.config.length_scale;
    let levels = &agent.hierarchy.levels;
    let base = Vector2::zeros();
    let belief = |level: usize, slot: usize| {
        let p = levels[level].pose(slot);
        Vector2::new(p[0], p[1]) * scale
    };
    for (slot, virtual_slot, color) in [(0, None, ARM), (1, Some(0), TOOL), (2, Some(1), BALL)] {
        let mut pts = vec![base];
        pts.extend((0..N_JOINTS).map(|l| belief(l, slot)));
        if let Some(v) = virtual_slot {
            pts.push(belief(VIRTUAL_LEVEL, v));
        }
        polyline(&mut out, &pts, color, 8.0, 0.3);
    }

    let mut arm = vec![base];
    arm.extend(world.limb_poses(env).iter().map(|p| Vector2::new(p[0], p[1])));
    polyline(&mut out, &arm, ARM, 10.0, 1.0);
    polyline(&mut out, &[world.tool_origin, world.tool_tip(env)], TOOL, 8.0, 1.0);
    circle(&mut out, world.ball_pos, 18.0, BALL, 1.0);
    circle(&mut out, base, 12.0, "#333", 1.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="36" font-family="monospace">{step}</text>"#,
        -half + 20.0,
        half - 20.0
    );
    out.push_str("</svg>\n");
    out
}

/// Line chart of several series sharing an x axis.
pub fn line_chart(title: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(x.iter().filter(finite).copied());
    let (y0, y1) = bounds(series.iter().flat_map(|(_, ys)| ys.iter().filter(finite).copied()));
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        out,
        r##"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="#333"/>"##,
        H - PAD,
        W - PAD
    );
    for (v, anchor) in [(y0, H - PAD), (y1, PAD)] {
        let _ = writeln!(out, r#"<text x="{}" y="{anchor}" text-anchor="end">{}</text>"#, PAD - 4.0, tick(v));
    }
    for (v, at) in [(x0, PAD), (x1, W - PAD)] {
        let _ = writeln!(out, r#"<text x="{at}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, tick(v));
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (xv, yv) in x.iter().zip(ys.iter()) {
            if !(xv.is_finite() && yv.is_finite()) {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.1},{:.1} ", if pen_up { "M" } else { "L" }, sx(*xv), sy(*yv));
            pen_up = false;
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#,
            W - PAD - 120.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
