//! Line/step plot rendering to standalone SVG.
//!
//! Hand-rolled on purpose: output must be byte-deterministic for a given
//! input, and the plots only need mean lines, shaded bands, axes, and a
//! legend.

/// One plotted curve with an optional shaded band.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Lower and upper band edges, same length as `xs`.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    /// Render step curves (profiles) instead of straight interpolation.
    pub step: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "iteration".into(),
            y_label: "best f".into(),
            log_y: false,
            step: false,
        }
    }
}

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];
const LOG_FLOOR: f64 = 1e-12;

/// Maps data space to pixel space over the plot area.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Mapper {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Mapper {
    fn tx(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-300);
        MARGIN_L + (v - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn ty(&self, v: f64) -> f64 {
        let v = if self.log_y { v.max(LOG_FLOOR).log10() } else { v };
        let span = (self.y_max - self.y_min).max(1e-300);
        HEIGHT - MARGIN_B - (v - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn data_ranges(series: &[Series], log_y: bool) -> Mapper {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut fold_y = |v: f64| {
        let v = if log_y { v.max(LOG_FLOOR).log10() } else { v };
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    };
    for s in series {
        for &x in &s.xs {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
        }
        for &y in &s.ys {
            fold_y(y);
        }
        if let Some((lo, hi)) = &s.band {
            for &v in lo.iter().chain(hi) {
                fold_y(v);
            }
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max - x_min < 1e-12 {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    Mapper {
        x_min,
        x_max,
        y_min,
        y_max,
        log_y,
    }
}

fn c(v: f64) -> String {
    format!("{v:.3}")
}

fn polyline_points(m: &Mapper, xs: &[f64], ys: &[f64], step: bool) -> String {
    let mut pts = Vec::new();
    let mut last_y: Option<f64> = None;
    for (&x, &y) in xs.iter().zip(ys) {
        let px = m.tx(x);
        let py = m.ty(y);
        if step {
            if let Some(prev) = last_y {
                pts.push(format!("{},{}", c(px), c(prev)));
            }
            last_y = Some(py);
        }
        pts.push(format!("{},{}", c(px), c(py)));
    }
    pts.join(" ")
}

fn band_polygon(m: &Mapper, xs: &[f64], lo: &[f64], hi: &[f64]) -> String {
    let mut pts = Vec::with_capacity(2 * xs.len());
    for (&x, &y) in xs.iter().zip(hi) {
        pts.push(format!("{},{}", c(m.tx(x)), c(m.ty(y))));
    }
    for (&x, &y) in xs.iter().zip(lo).rev() {
        pts.push(format!("{},{}", c(m.tx(x)), c(m.ty(y))));
    }
    pts.join(" ")
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, log: bool) -> String {
    let v = if log { 10f64.powf(v) } else { v };
    format!("{v:.4}")
        .trim_end_matches('0')
        .trim_end_matches('.')
        .to_string()
}

/// Renders the series to a standalone SVG document.
pub fn render(series: &[Series], opts: &PlotOptions) -> String {
    let m = data_ranges(series, opts.log_y);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        c((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        esc(&opts.title)
    ));

    // Axes box.
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        c(MARGIN_L),
        c(MARGIN_T),
        c(WIDTH - MARGIN_L - MARGIN_R),
        c(HEIGHT - MARGIN_T - MARGIN_B)
    ));

    // Ticks and grid.
    for i in 0..=4 {
        let fx = m.x_min + (m.x_max - m.x_min) * i as f64 / 4.0;
        let px = m.tx(fx);
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ccc\" stroke-dasharray=\"3,4\"/>\n",
            c(px),
            c(MARGIN_T),
            c(HEIGHT - MARGIN_B)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            c(px),
            c(HEIGHT - MARGIN_B + 18.0),
            tick_label(fx, false)
        ));
        let fy = m.y_min + (m.y_max - m.y_min) * i as f64 / 4.0;
        let py = HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * i as f64 / 4.0;
        out.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ccc\" stroke-dasharray=\"3,4\"/>\n",
            c(py),
            c(MARGIN_L),
            c(WIDTH - MARGIN_R)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            c(MARGIN_L - 6.0),
            c(py + 4.0),
            tick_label(fy, opts.log_y)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        c((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        c(HEIGHT - 12.0),
        esc(&opts.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        c(HEIGHT / 2.0),
        c(HEIGHT / 2.0),
        esc(&opts.y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some((lo, hi)) = &s.band {
            out.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                band_polygon(&m, &s.xs, lo, hi),
                color
            ));
        }
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            polyline_points(&m, &s.xs, &s.ys, opts.step),
            color
        ));
        let ly = MARGIN_T + 16.0 + 20.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
            c(WIDTH - MARGIN_R + 12.0),
            c(ly),
            c(WIDTH - MARGIN_R + 40.0),
            color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            c(WIDTH - MARGIN_R + 46.0),
            c(ly + 4.0),
            esc(&s.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}
