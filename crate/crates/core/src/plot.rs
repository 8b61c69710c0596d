//! Minimal SVG rendering for SOP traces, detection scores, and
//! spectrograms. Output is deterministic (no timestamps, fixed formatting)
//! so plots from identical data are byte-identical.

use crate::spectral::Spectrogram;
use crate::{Error, Result};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One named line on a plot.
#[derive(Debug, Clone)]
pub struct Trace {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A vertical marker line with a label (event instants, thresholds crossed).
#[derive(Debug, Clone)]
pub struct Marker {
    pub x: f64,
    pub label: String,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn axis_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) || n < 2 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a line plot with legend and optional vertical markers.
pub fn render_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    traces: &[Trace],
    markers: &[Marker],
) -> Result<String> {
    if traces.is_empty() || traces.iter().all(|t| t.x.is_empty()) {
        return Err(Error::Format("nothing to plot".into()));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for t in traces {
        if t.x.len() != t.y.len() {
            return Err(Error::Format(format!(
                "trace {}: x/y length mismatch",
                t.label
            )));
        }
        for (&x, &y) in t.x.iter().zip(&t.y) {
            if x.is_finite() && y.is_finite() {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !x_min.is_finite() || !y_min.is_finite() {
        return Err(Error::Format("no finite points to plot".into()));
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
        y_min -= 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * ph;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    // axes and grid
    for x in axis_ticks(x_min, x_max, 6) {
        let px = sx(x);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(px),
            fmt(MARGIN_T),
            fmt(px),
            fmt(MARGIN_T + ph)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            fmt(px),
            fmt(MARGIN_T + ph + 16.0),
            format_tick(x)
        ));
    }
    for y in axis_ticks(y_min, y_max, 6) {
        let py = sy(y);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(MARGIN_L),
            fmt(py),
            fmt(MARGIN_L + pw),
            fmt(py)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            fmt(MARGIN_L - 6.0),
            fmt(py + 4.0),
            format_tick(y)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(pw),
        fmt(ph)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));
    // traces, decimated to at most ~4 points per pixel
    for (i, t) in traces.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let step = (t.x.len() / (4 * pw as usize)).max(1);
        let mut d = String::new();
        let mut pen_down = false;
        for k in (0..t.x.len()).step_by(step) {
            let (x, y) = (t.x[k], t.y[k]);
            if !x.is_finite() || !y.is_finite() {
                pen_down = false;
                continue;
            }
            d.push_str(if pen_down { "L" } else { "M" });
            d.push_str(&fmt(sx(x)));
            d.push(' ');
            d.push_str(&fmt(sy(y)));
            pen_down = true;
        }
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            fmt(MARGIN_L + pw - 150.0),
            fmt(MARGIN_T + 16.0 + 16.0 * i as f64),
            escape(&t.label)
        ));
    }
    for m in markers {
        if !m.x.is_finite() || m.x < x_min || m.x > x_max {
            continue;
        }
        let px = sx(m.x);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#c00\" \
             stroke-dasharray=\"4 3\"/>\n",
            fmt(px),
            fmt(MARGIN_T),
            fmt(px),
            fmt(MARGIN_T + ph)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#c00\">{}</text>\n",
            fmt(px + 3.0),
            fmt(MARGIN_T + 12.0),
            escape(&m.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders a spectrogram heatmap, downsampled to at most `max_cols` by
/// `max_rows` cells (cells are averaged in linear power).
pub fn render_spectrogram(
    title: &str,
    spec: &Spectrogram,
    max_cols: usize,
    max_rows: usize,
) -> Result<String> {
    if spec.magnitude_db.is_empty() {
        return Err(Error::Format("empty spectrogram".into()));
    }
    let nframes = spec.magnitude_db.len();
    let nbins = spec.freq_bins_hz.len();
    let cols = nframes.min(max_cols.max(1));
    let rows = nbins.min(max_rows.max(1));
    // average frames/bins into the reduced grid (linear power)
    let mut grid = vec![vec![0.0f64; cols]; rows];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..rows {
        let b0 = r * nbins / rows;
        let b1 = ((r + 1) * nbins / rows).max(b0 + 1);
        for c in 0..cols {
            let f0 = c * nframes / cols;
            let f1 = ((c + 1) * nframes / cols).max(f0 + 1);
            let mut acc = 0.0;
            let mut n = 0usize;
            for frame in &spec.magnitude_db[f0..f1] {
                for &db in &frame[b0..b1] {
                    acc += 10f64.powf(db / 10.0);
                    n += 1;
                }
            }
            let db = 10.0 * (acc / n as f64).log10();
            grid[r][c] = db;
            lo = lo.min(db);
            hi = hi.max(db);
        }
    }
    if hi == lo {
        hi = lo + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let cw = pw / cols as f64;
    let chh = ph / rows as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    for (r, row) in grid.iter().enumerate() {
        for (c, &db) in row.iter().enumerate() {
            let u = (db - lo) / (hi - lo);
            // dark blue -> yellow
            let red = (255.0 * u) as u8;
            let green = (220.0 * u) as u8;
            let blue = (180.0 * (1.0 - u) + 40.0) as u8;
            // row 0 is the lowest frequency: draw from the bottom up
            let y = MARGIN_T + ph - (r + 1) as f64 * chh;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({red},{green},{blue})\"/>\n",
                fmt(MARGIN_L + c as f64 * cw),
                fmt(y),
                fmt(cw + 0.5),
                fmt(chh + 0.5)
            ));
        }
    }
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(pw),
        fmt(ph)
    ));
    let t0 = spec.frame_times_s.first().copied().unwrap_or(0.0);
    let t1 = spec.frame_times_s.last().copied().unwrap_or(1.0);
    for t in axis_ticks(t0, t1, 6) {
        let px = MARGIN_L + (t - t0) / (t1 - t0).max(1e-12) * pw;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            fmt(px),
            fmt(MARGIN_T + ph + 16.0),
            format_tick(t)
        ));
    }
    let f_hi = *spec.freq_bins_hz.last().unwrap();
    for f in axis_ticks(0.0, f_hi, 6) {
        let py = MARGIN_T + ph * (1.0 - f / f_hi.max(1e-12));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            fmt(MARGIN_L - 6.0),
            fmt(py + 4.0),
            format_tick(f)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">time (s)</text>\n",
        WIDTH / 2.0,
        HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {})\">frequency (Hz)</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}
