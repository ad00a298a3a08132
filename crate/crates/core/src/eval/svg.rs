//! Plain SVG renderings of atoms, tiled trajectories and event timelines.

use std::fmt::Write as _;

use crate::diff::Tensor;
use crate::legality::Event;
use crate::primdict::EffectiveDict;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];
const UNOWNED: &str = "#c0c0c0";
const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 120.0;
const PAD: f64 = 10.0;

fn color(j: usize) -> &'static str {
    PALETTE[j % PALETTE.len()]
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>",
        coords.join(" ")
    );
}

/// One panel per effective atom: every channel over `s = 0..K`, with a
/// dashed line at the integer width `w̄`.
pub fn atoms_svg(dict: &EffectiveDict) -> String {
    let (m, c, k) = (dict.n_atoms(), dict.channels(), dict.max_width());
    let cols = m.clamp(1, 4);
    let rows = m.div_ceil(cols).max(1);
    let mut out = header(cols as f64 * PANEL_W, rows as f64 * PANEL_H);
    let (lo, hi) = bounds(dict.masked.data().iter().copied());
    for j in 0..m {
        let ox = (j % cols) as f64 * PANEL_W;
        let oy = (j / cols) as f64 * PANEL_H;
        let sx = |s: f64| ox + PAD + s / (k.max(2) - 1) as f64 * (PANEL_W - 2.0 * PAD);
        let sy = |v: f64| oy + PANEL_H - PAD - (v - lo) / (hi - lo) * (PANEL_H - 3.0 * PAD);
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">atom {j} w={} ({:.2})</text>",
            ox + PAD,
            oy + PAD + 4.0,
            dict.widths[j],
            dict.soft_widths[j]
        );
        for ci in 0..c {
            let pts: Vec<(f64, f64)> = (0..k).map(|s| (sx(s as f64), sy(dict.masked.at3(j, ci, s)))).collect();
            polyline(&mut out, &pts, color(ci), 1.5);
        }
        let bx = sx(dict.widths[j] as f64 - 0.5);
        let _ = writeln!(
            out,
            "<line x1=\"{bx:.2}\" y1=\"{:.2}\" x2=\"{bx:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>",
            oy + 2.0 * PAD,
            oy + PANEL_H - PAD
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Owner of each timestep of an `[M, L]` gate, if any.
pub fn owners(gate: &Tensor) -> Vec<Option<usize>> {
    let (m, l) = gate.dims2();
    (0..l).map(|t| (0..m).find(|&j| gate.at2(j, t) > 0.5)).collect()
}

/// Each channel of a `[C, L]` trajectory over time, every segment colored
/// by the atom owning its left timestep.
pub fn tiled_svg(x: &Tensor, gate: &Tensor) -> String {
    let (c, l) = x.dims2();
    let own = owners(gate);
    let width = 2.0 * PANEL_W;
    let height = PANEL_H * c as f64;
    let mut out = header(width, height);
    for ci in 0..c {
        let oy = ci as f64 * PANEL_H;
        let (lo, hi) = bounds(x.row(ci).iter().copied());
        let sx = |t: usize| PAD + t as f64 / (l.max(2) - 1) as f64 * (width - 2.0 * PAD);
        let sy = |v: f64| oy + PANEL_H - PAD - (v - lo) / (hi - lo) * (PANEL_H - 2.0 * PAD);
        for t in 0..l.saturating_sub(1) {
            let stroke = own[t].map_or(UNOWNED, color);
            polyline(&mut out, &[(sx(t), sy(x.at2(ci, t))), (sx(t + 1), sy(x.at2(ci, t + 1)))], stroke, 2.0);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// One lane per atom with a bar per event over its interval, opacity set
/// by the event probability.
pub fn timeline_svg(events: &[Event], m: usize, l: usize) -> String {
    let lane = 18.0;
    let width = 2.0 * PANEL_W;
    let height = 2.0 * PAD + lane * m.max(1) as f64;
    let unit = (width - 2.0 * PAD - 40.0) / l.max(1) as f64;
    let mut out = header(width, height);
    for j in 0..m {
        let _ = writeln!(
            out,
            "<text x=\"{PAD}\" y=\"{:.1}\" font-size=\"11\">{j}</text>",
            PAD + lane * (j as f64 + 0.7)
        );
    }
    for e in events {
        let (a, b) = e.interval();
        let b = b.min(l);
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"{:.3}\" stroke=\"black\" stroke-width=\"0.5\"/>",
            PAD + 40.0 + a as f64 * unit,
            PAD + lane * e.atom as f64 + 2.0,
            (b.saturating_sub(a)) as f64 * unit,
            lane - 4.0,
            color(e.atom),
            e.prob.clamp(0.05, 1.0)
        );
    }
    out.push_str("</svg>\n");
    out
}
