//! Sweep CSV to SVG: one series per model, hidden size on an evenly spaced
//! categorical x axis, median metric over seeds with min/max whiskers.

use std::collections::BTreeMap;
use std::fmt::Write;

use ssmsel::training::SweepRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Point {
    pub hidden: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Per model (in first-seen order), one point per hidden size with at
/// least one finite metric.
pub fn summarize(rows: &[SweepRow], best: bool) -> Vec<(String, Vec<Point>)> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.model) {
            order.push(r.model.clone());
        }
        let m = if best { r.best_metric } else { r.final_metric };
        let e = cells.entry((r.model.clone(), r.hidden)).or_default();
        if m.is_finite() {
            e.push(m);
        }
    }
    order
        .into_iter()
        .map(|model| {
            let pts = cells
                .iter_mut()
                .filter(|((m, _), v)| *m == model && !v.is_empty())
                .map(|((_, h), v)| {
                    v.sort_by(f64::total_cmp);
                    let n = v.len();
                    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
                    Point { hidden: *h, median, min: v[0], max: v[n - 1] }
                })
                .collect();
            (model, pts)
        })
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render(rows: &[SweepRow], best: bool, title: &str) -> String {
    let series = summarize(rows, best);
    let mut xs: Vec<usize> = rows.iter().map(|r| r.hidden).collect();
    xs.sort_unstable();
    xs.dedup();
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|(_, p)| p.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.min), hi.max(p.max)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x_of = |h: usize| {
        let i = xs.iter().position(|x| *x == h).unwrap_or(0);
        if xs.len() == 1 {
            LEFT + pw / 2.0
        } else {
            LEFT + pw * i as f64 / (xs.len() - 1) as f64
        }
    };
    let y_of = |v: f64| TOP + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(title));
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#, TOP + ph);
    for &h in &xs {
        let x = x_of(h);
        let _ = writeln!(s, r#"<line class="xtick" x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{h}</text>"#, TOP + ph + 20.0);
    }
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">hidden dimension</text>"#, LEFT + pw / 2.0, H - 15.0);
    let label = if best { "best metric" } else { "final metric" };
    let _ = writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{label}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0);

    for (k, (model, pts)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let _ = writeln!(s, r#"<g class="series" data-model="{}" stroke="{c}" fill="{c}">"#, esc(model));
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x_of(p.hidden), y_of(p.median))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke-width="2" points="{}"/>"#, path.join(" "));
        }
        for p in pts {
            let x = x_of(p.hidden);
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}"/>"#, y_of(p.min), y_of(p.max));
            for v in [p.min, p.max] {
                let _ = writeln!(s, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/>"#, x - 4.0, y_of(v), x + 4.0, y_of(v));
            }
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3.5"/>"#, y_of(p.median));
        }
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" stroke="none">{}</text>"#, lx + 26.0, ly + 4.0, esc(model));
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
