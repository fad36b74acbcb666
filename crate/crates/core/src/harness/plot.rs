//! Minimal SVG charts for experiment reports. Output depends only on the
//! report contents, so re-rendering gives identical bytes.

use std::fmt::Write;

use super::report::Cell;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear data-to-pixel mapping for the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(out, r#"<text x="{}" y="22" font-size="13">{}</text>"#, MARGIN_LEFT, escape(title)).unwrap();
        Self { out }
    }

    fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str) {
        let (l, r) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (t, b) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
        writeln!(
            self.out,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        )
        .unwrap();
        for i in 0..=4 {
            let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
            let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
            writeln!(
                self.out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                f.px(x),
                b + 14.0,
                tick(x)
            )
            .unwrap();
            writeln!(
                self.out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                l - 4.0,
                f.py(y) + 4.0,
                tick(y)
            )
            .unwrap();
        }
        if f.y0 < 0.0 && f.y1 > 0.0 {
            writeln!(
                self.out,
                r##"<line x1="{l}" x2="{r}" y1="{0:.1}" y2="{0:.1}" stroke="#bbb" stroke-dasharray="3 3"/>"##,
                f.py(0.0)
            )
            .unwrap();
        }
        writeln!(
            self.out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            b + 34.0,
            escape(x_label)
        )
        .unwrap();
        writeln!(
            self.out,
            r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
            (t + b) / 2.0,
            escape(y_label)
        )
        .unwrap();
    }

    fn polyline(&mut self, f: &Frame, points: &[(f64, f64)], color: &str, width: f64) {
        let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        writeln!(
            self.out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, color: &str, opacity: f64) {
        writeln!(self.out, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="{r:.1}" fill="{color}" fill-opacity="{opacity}"/>"#)
            .unwrap();
    }

    fn text(&mut self, x: f64, y: f64, s: &str) {
        writeln!(self.out, r#"<text x="{x:.1}" y="{y:.1}">{}</text>"#, escape(s)).unwrap();
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        let x = WIDTH - MARGIN_RIGHT + 12.0;
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN_TOP + 8.0 + 16.0 * i as f64;
            writeln!(self.out, r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, y - 8.0).unwrap();
            self.text(x + 14.0, y + 1.0, label);
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Smoothed SNR against reference slice index for each nominated query.
pub(super) fn snr_curves(cell: &Cell) -> String {
    let curves: Vec<(String, Vec<(f64, f64)>)> = cell
        .curves
        .iter()
        .map(|s| {
            let first = cell.reference_first_index;
            let pts = s.smoothed.iter().enumerate().map(|(i, &v)| ((first + i as i64) as f64, v)).collect();
            (format!("{} #{}", s.reference_subject, s.query_index), pts)
        })
        .collect();
    let all = curves.iter().flat_map(|(_, p)| p.iter().copied());
    let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut svg = Svg::new(&format!("SNR by reference slice: {}", cell.label()));
    svg.axes(&frame, "reference slice index", "smoothed SNR");
    let mut legend = Vec::new();
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.polyline(&frame, pts, color, 1.5);
        legend.push((label.clone(), color));
    }
    svg.legend(&legend);
    svg.finish()
}

/// Robustness ratio against query slice index, one line per degradation.
pub(super) fn robustness_curves(cells: &[&Cell]) -> String {
    let lines: Vec<(String, Vec<(f64, f64)>)> = cells
        .iter()
        .map(|c| {
            let pts = c.self_snr.iter().filter_map(|r| r.robustness.map(|v| (r.query_index as f64, v))).collect();
            (c.degradation.clone(), pts)
        })
        .collect();
    let all = lines.iter().flat_map(|(_, p)| p.iter().copied());
    let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1).chain([0.0, 1.0]));
    let first = cells[0];
    let mut svg = Svg::new(&format!("Robustness: {} / {} / {}", first.method, first.preproc, first.plane));
    svg.axes(&frame, "query slice index", "R = degraded self-SNR / clean self-SNR");
    let mut legend = Vec::new();
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.polyline(&frame, pts, color, 1.2);
        legend.push((label.clone(), color));
    }
    svg.legend(&legend);
    svg.finish()
}

/// Index error against smoothed peak SNR for every query, annotated with
/// `A_d` and `C`.
pub(super) fn accuracy_scatter(cell: &Cell, d: u32) -> String {
    let pts: Vec<(f64, f64)> = cell.outcomes.iter().map(|o| (o.distance() as f64, o.peak_snr)).collect();
    let frame = Frame::new(pts.iter().map(|p| p.0).chain([0.0]), pts.iter().map(|p| p.1));
    let mut svg = Svg::new(&format!("Localization error: {}", cell.label()));
    svg.axes(&frame, "|expected - chosen| (slices)", "smoothed SNR at chosen slice");
    for &(x, y) in &pts {
        let color = if x <= d as f64 { PALETTE[2] } else { PALETTE[1] };
        svg.circle(frame.px(x), frame.py(y), 3.0, color, 0.6);
    }
    let a = cell.summary.accuracy.get(&d).copied().unwrap_or(0.0);
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    svg.text(x, MARGIN_TOP + 10.0, &format!("A_{d} = {:.1}%", a * 100.0));
    svg.text(x, MARGIN_TOP + 26.0, &format!("C = {}", cell.summary.cumulative_distance));
    svg.text(x, MARGIN_TOP + 42.0, &format!("n = {}", cell.summary.n));
    svg.finish()
}

/// One row per query subject, one bar per query slice: green when the
/// chosen slice is within `d` of the expected one.
pub(super) fn correctness_strips(cell: &Cell, d: u32) -> String {
    let mut subjects: Vec<&str> = Vec::new();
    for o in &cell.outcomes {
        if !subjects.contains(&o.query_subject.as_str()) {
            subjects.push(&o.query_subject);
        }
    }
    let lo = cell.outcomes.iter().map(|o| o.query_index).min().unwrap_or(0);
    let hi = cell.outcomes.iter().map(|o| o.query_index).max().unwrap_or(0);
    let span = (hi - lo + 1) as f64;
    let row_h = 18.0;
    let height = MARGIN_TOP + row_h * subjects.len() as f64 + MARGIN_BOTTOM;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{MARGIN_LEFT}" y="22" font-size="13">{}</text>"#,
        escape(&format!("Correct within {d}: {}", cell.label()))
    )
    .unwrap();
    for (row, subject) in subjects.iter().enumerate() {
        let y = MARGIN_TOP + row_h * row as f64;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 4.0,
            y + 12.0,
            escape(subject)
        )
        .unwrap();
        for o in cell.outcomes.iter().filter(|o| o.query_subject == *subject) {
            let x = MARGIN_LEFT + (o.query_index - lo) as f64 / span * plot_w;
            let color = if o.distance() <= d as u64 { PALETTE[2] } else { PALETTE[1] };
            writeln!(
                out,
                r#"<rect x="{x:.2}" y="{:.1}" width="{:.2}" height="{}" fill="{color}"/>"#,
                y + 2.0,
                plot_w / span,
                row_h - 4.0
            )
            .unwrap();
        }
    }
    let b = MARGIN_TOP + row_h * subjects.len() as f64;
    writeln!(out, r#"<text x="{MARGIN_LEFT}" y="{:.1}">{lo}</text>"#, b + 14.0).unwrap();
    writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi}</text>"#, WIDTH - MARGIN_RIGHT, b + 14.0)
        .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">query slice index</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        b + 30.0
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Cumulative distance against accuracy per cell; bubble area follows the
/// cell's mean smoothed SNR.
pub(super) fn bubble_chart(cells: &[&Cell], d: u32) -> String {
    let pts: Vec<(f64, f64, f64)> = cells
        .iter()
        .map(|c| {
            let a = c.summary.accuracy.get(&d).copied().unwrap_or(0.0) * 100.0;
            (a, c.summary.cumulative_distance as f64, c.summary.mean_snr.unwrap_or(0.0).max(0.0))
        })
        .collect();
    let frame = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let max_snr = pts.iter().map(|p| p.2).fold(0.0, f64::max);
    let mut svg = Svg::new(&format!("Cumulative distance against A_{d}; bubble size = mean SNR"));
    svg.axes(&frame, &format!("A_{d} (%)"), "cumulative distance C");
    let mut legend = Vec::new();
    for (i, (c, &(a, dist, snr))) in cells.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let r = if max_snr > 0.0 { 4.0 + 16.0 * (snr / max_snr).sqrt() } else { 4.0 };
        svg.circle(frame.px(a), frame.py(dist), r, color, 0.45);
        let mut label = format!("{} {}", c.method, c.preproc);
        if c.degradation != "none" {
            label.push(' ');
            label.push_str(&c.degradation);
        }
        if c.restricted {
            label.push_str(" (same side)");
        }
        legend.push((label, color));
    }
    svg.legend(&legend);
    svg.finish()
}
