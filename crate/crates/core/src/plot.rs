//! Static SVG line charts, written with no drawing dependencies. Output is
//! a pure function of the input data, so emitting charts never perturbs any
//! metric file and identical runs produce identical images.

use std::path::Path;

use crate::metrics::MetricsError;

pub const CHART_W: f64 = 640.0;
pub const CHART_H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] =
    ["#4878a8", "#d9822b", "#3f8f5f", "#b5483a", "#7b5ea7", "#5b5b5b"];

/// One plotted line, with an optional min-to-max shaded band behind it.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// (x, lo, hi) envelope rendered as a translucent polygon.
    pub band: Option<Vec<(f64, f64, f64)>>,
    pub dashed: bool,
    /// Fixed stroke color; palette-by-index when absent.
    pub color: Option<String>,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, band: None, dashed: false, color: None }
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Labeled horizontal guides (dashed), e.g. target values.
    pub y_guides: Vec<(String, f64)>,
}

impl Chart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            y_guides: Vec::new(),
        }
    }

    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
             viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"sans-serif\">\n"
        ));
        self.render_body(&mut out);
        out.push_str("</svg>\n");
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_svg())
            .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
    }

    fn render_body(&self, out: &mut String) {
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            CHART_W / 2.0,
            escape(&self.title)
        ));

        let finite: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        if finite.is_empty() {
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
                 fill=\"#888\">no data</text>\n",
                CHART_W / 2.0,
                CHART_H / 2.0
            ));
            return;
        }

        let (mut x_lo, mut x_hi) = min_max(finite.iter().map(|p| p.0));
        let mut ys: Vec<f64> = finite.iter().map(|p| p.1).collect();
        for s in &self.series {
            if let Some(band) = &s.band {
                for &(_, lo, hi) in band {
                    if lo.is_finite() && hi.is_finite() {
                        ys.push(lo);
                        ys.push(hi);
                    }
                }
            }
        }
        ys.extend(self.y_guides.iter().map(|g| g.1).filter(|v| v.is_finite()));
        let (mut y_lo, mut y_hi) = min_max(ys.iter().copied());
        pad_degenerate(&mut x_lo, &mut x_hi);
        pad_degenerate(&mut y_lo, &mut y_hi);

        let x_ticks = nice_ticks(x_lo, x_hi);
        let y_ticks = nice_ticks(y_lo, y_hi);
        let (x_lo, x_hi) = (x_ticks.lo.min(x_lo), x_ticks.hi.max(x_hi));
        let (y_lo, y_hi) = (y_ticks.lo.min(y_lo), y_ticks.hi.max(y_hi));

        let plot_w = CHART_W - MARGIN_L - MARGIN_R;
        let plot_h = CHART_H - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        for t in &y_ticks.values {
            let y = py(*t);
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#ddd\" stroke-width=\"1\"/>\n",
                MARGIN_L,
                MARGIN_L + plot_w
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\" \
                 fill=\"#444\">{}</text>\n",
                MARGIN_L - 6.0,
                y + 4.0,
                tick_label(*t, y_ticks.step)
            ));
        }
        for t in &x_ticks.values {
            let x = px(*t);
            out.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                 stroke=\"#ddd\" stroke-width=\"1\"/>\n",
                MARGIN_T,
                MARGIN_T + plot_h
            ));
            out.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\" \
                 fill=\"#444\">{}</text>\n",
                MARGIN_T + plot_h + 16.0,
                tick_label(*t, x_ticks.step)
            ));
        }
        out.push_str(&format!(
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
             fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            CHART_H - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" \
             transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            escape(&self.y_label)
        ));

        for (label, v) in &self.y_guides {
            if !v.is_finite() {
                continue;
            }
            let y = py(*v);
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#999\" \
                 stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n",
                MARGIN_L,
                MARGIN_L + plot_w
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\" \
                 fill=\"#777\">{}</text>\n",
                MARGIN_L + plot_w - 4.0,
                y - 4.0,
                escape(label)
            ));
        }

        for (i, s) in self.series.iter().enumerate() {
            let color = s.color.as_deref().unwrap_or(PALETTE[i % PALETTE.len()]);
            if let Some(band) = &s.band {
                let clean: Vec<&(f64, f64, f64)> = band
                    .iter()
                    .filter(|(x, lo, hi)| x.is_finite() && lo.is_finite() && hi.is_finite())
                    .collect();
                if clean.len() >= 2 {
                    let mut pts = String::new();
                    for (x, _, hi) in &clean {
                        pts.push_str(&format!("{:.2},{:.2} ", px(*x), py(*hi)));
                    }
                    for (x, lo, _) in clean.iter().rev() {
                        pts.push_str(&format!("{:.2},{:.2} ", px(*x), py(*lo)));
                    }
                    out.push_str(&format!(
                        "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" \
                         stroke=\"none\"/>\n",
                        pts.trim_end()
                    ));
                }
            }
            let clean: Vec<&(f64, f64)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect();
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            if clean.len() == 1 {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                    px(clean[0].0),
                    py(clean[0].1)
                ));
            } else if clean.len() >= 2 {
                let pts: Vec<String> = clean
                    .iter()
                    .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                    .collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.5\"{dash}/>\n",
                    pts.join(" ")
                ));
            }
        }

        let legend: Vec<(usize, &Series)> = self
            .series
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.label.is_empty())
            .collect();
        for (i, (series_idx, s)) in legend.iter().enumerate() {
            let color = s.color.as_deref().unwrap_or(PALETTE[series_idx % PALETTE.len()]);
            let y = MARGIN_T + 14.0 + 16.0 * i as f64;
            let x = MARGIN_L + plot_w - 150.0;
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            out.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" \
                 stroke-width=\"2\"{dash}/>\n",
                y - 4.0,
                x + 22.0,
                y - 4.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"11\" fill=\"#222\">{}</text>\n",
                x + 28.0,
                escape(&s.label)
            ));
        }
    }
}

/// Lays charts out in a fixed-cell grid inside one SVG document.
pub fn compose(charts: &[Chart], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = charts.len().div_ceil(cols);
    let w = CHART_W * cols.min(charts.len().max(1)) as f64;
    let h = CHART_H * rows.max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n"
    );
    for (i, chart) in charts.iter().enumerate() {
        let x = CHART_W * (i % cols) as f64;
        let y = CHART_H * (i / cols) as f64;
        out.push_str(&format!(
            "<svg x=\"{x}\" y=\"{y}\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
             viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
        ));
        chart.render_body(&mut out);
        out.push_str("</svg>\n");
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, svg: &str) -> Result<(), MetricsError> {
    std::fs::write(path, svg)
        .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi { (0.0, 1.0) } else { (lo, hi) }
}

fn pad_degenerate(lo: &mut f64, hi: &mut f64) {
    if *lo == *hi {
        let pad = if *lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        *lo -= pad;
        *hi += pad;
    }
}

struct Ticks {
    values: Vec<f64>,
    step: f64,
    lo: f64,
    hi: f64,
}

/// Rounds a span to 1/2/5 times a power of ten.
fn nice_num(x: f64, round: bool) -> f64 {
    let exp = x.log10().floor();
    let f = x / 10f64.powf(exp);
    let nf = if round {
        if f < 1.5 {
            1.0
        } else if f < 3.0 {
            2.0
        } else if f < 7.0 {
            5.0
        } else {
            10.0
        }
    } else if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nf * 10f64.powf(exp)
}

/// About five round-valued ticks spanning [lo, hi].
fn nice_ticks(lo: f64, hi: f64) -> Ticks {
    let span = nice_num(hi - lo, false);
    let step = nice_num(span / 4.0, true);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let mut values = Vec::new();
    let mut t = start;
    while t <= end + step * 0.5 {
        values.push(t);
        t += step;
    }
    Ticks { values, step, lo: start, hi: end }
}

fn tick_label(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs();
    if mag >= 1e5 || mag < 1e-3 {
        return format!("{v:e}");
    }
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}
