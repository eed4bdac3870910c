//! Static SVG line charts for report figures.
//!
//! Deterministic output: same data, same bytes. Supports multi-series
//! overlays, an optional zoom inset for tail inspection, and simple
//! panel grids.

const PALETTE: [&str; 8] = [
    "#c0392b", "#2980b9", "#27ae60", "#e67e22", "#8e44ad", "#16a085", "#7f8c8d", "#2c3e50",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }
}

/// Rectangular zoom region rendered as an inset in the top-right corner.
#[derive(Debug, Clone, Copy)]
pub struct Inset {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub inset: Option<Inset>,
}

impl LineChart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            inset: None,
        }
    }

    pub fn with_series(mut self, series: Vec<Series>) -> Self {
        self.series = series;
        self
    }

    pub fn with_inset(mut self, inset: Inset) -> Self {
        self.inset = Some(inset);
        self
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10_000.0).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn data_bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (x, y) in &s.points {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
    }
    if !x_min.is_finite() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).abs().max(1e-12);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        (x_min, x_max, y_min, y_max)
    }
}

fn polyline(
    points: &[(f64, f64)],
    map: impl Fn(f64, f64) -> (f64, f64),
    color: &str,
    width: f64,
) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| {
            let (px, py) = map(*x, *y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Render one chart to an SVG document string.
pub fn render_line_chart(chart: &LineChart) -> String {
    render_sized(chart, 640.0, 420.0)
}

fn render_sized(chart: &LineChart, w: f64, h: f64) -> String {
    let (ml, mr, mt, mb) = (64.0, 18.0, 40.0, 52.0);
    let (x0, x1) = (ml, w - mr);
    let (y0, y1) = (h - mb, mt);
    let (x_min, x_max, y_min, y_max) = data_bounds(&chart.series);
    let map = |x: f64, y: f64| {
        (
            x0 + (x - x_min) / (x_max - x_min) * (x1 - x0),
            y0 + (y - y_min) / (y_max - y_min) * (y1 - y0),
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        xml_escape(&chart.title)
    ));

    // axes and ticks
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\"/>\n"
    ));
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let (px, _) = map(fx, y_min);
        let (_, py) = map(x_min, fy);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{y0}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            fmt_num(fx)
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0}\" y2=\"{py:.1}\" stroke=\"#ddd\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{py:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            x0 - 8.0,
            fmt_num(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        h - 14.0,
        xml_escape(&chart.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(&chart.y_label)
    ));

    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&polyline(&s.points, map, color, 1.6));
        let ly = mt + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
            x0 + 8.0,
            x0 + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            x0 + 36.0,
            ly + 4.0,
            xml_escape(&s.label)
        ));
    }

    if let Some(inset) = chart.inset {
        let (iw, ih) = (0.34 * w, 0.30 * h);
        let (il, it) = (x1 - iw, y1 + 8.0);
        let imap = |x: f64, y: f64| {
            (
                il + (x - inset.x_min) / (inset.x_max - inset.x_min).max(1e-12) * iw,
                (it + ih) + (y - inset.y_min) / (inset.y_max - inset.y_min).max(1e-12) * (-ih),
            )
        };
        svg.push_str(&format!(
            "<rect x=\"{il:.1}\" y=\"{it:.1}\" width=\"{iw:.1}\" height=\"{ih:.1}\" fill=\"white\" stroke=\"#999\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">tail detail</text>\n",
            il + iw - 4.0,
            it + 12.0
        ));
        for (i, s) in chart.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let clipped: Vec<(f64, f64)> = s
                .points
                .iter()
                .copied()
                .filter(|(x, _)| *x >= inset.x_min && *x <= inset.x_max)
                .map(|(x, y)| (x, y.clamp(inset.y_min, inset.y_max)))
                .collect();
            if clipped.len() >= 2 {
                svg.push_str(&polyline(&clipped, imap, color, 1.2));
            }
        }
    }

    svg.push_str("</svg>\n");
    svg
}

/// Lay charts out in a grid, `cols` panels wide.
pub fn render_grid(charts: &[LineChart], cols: usize) -> String {
    let cols = cols.max(1);
    let (pw, ph) = (480.0, 340.0);
    let rows = charts.len().div_ceil(cols);
    let (w, h) = (pw * cols as f64, ph * rows as f64);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    for (i, chart) in charts.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let inner = render_sized(chart, pw, ph);
        let body = inner
            .lines()
            .skip(1) // drop the nested <svg ...> open tag
            .take_while(|l| !l.starts_with("</svg>"))
            .collect::<Vec<_>>()
            .join("\n");
        svg.push_str(&format!(
            "<g transform=\"translate({:.1} {:.1})\">\n{body}\n</g>\n",
            c as f64 * pw,
            r as f64 * ph
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram-based density polyline over `bins` equal cells of
/// `[lo, hi]`; integrates to ~1.
pub fn density_curve(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    let bins = bins.max(1);
    let mut counts = vec![0.0f64; bins];
    let span = (hi - lo).max(1e-12);
    for v in values {
        let mut b = ((v - lo) / span * bins as f64) as isize;
        b = b.clamp(0, bins as isize - 1);
        counts[b as usize] += 1.0;
    }
    let n = values.len().max(1) as f64;
    let cell = span / bins as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * cell, c / (n * cell)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_renders_valid_svg_with_all_series() {
        let chart = LineChart::new("Demo", "x", "y").with_series(vec![
            Series::new("a", vec![(0.0, 0.0), (1.0, 1.0)]),
            Series::new("b", vec![(0.0, 1.0), (1.0, 0.0)]),
        ]);
        let svg = render_line_chart(&chart);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let chart = LineChart::new("Demo", "x", "y")
            .with_series(vec![Series::new("a", vec![(0.0, 0.5), (2.0, -1.5)])]);
        assert_eq!(render_line_chart(&chart), render_line_chart(&chart));
    }

    #[test]
    fn inset_adds_clipped_series() {
        let chart = LineChart::new("Demo", "x", "y")
            .with_series(vec![Series::new("a", (0..20).map(|i| (i as f64, i as f64)).collect())])
            .with_inset(Inset { x_min: 15.0, x_max: 19.0, y_min: 0.0, y_max: 20.0 });
        let svg = render_line_chart(&chart);
        assert!(svg.contains("tail detail"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn density_integrates_to_one() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let curve = density_curve(&values, 0.0, 1.0, 20);
        let cell = 1.0 / 20.0;
        let integral: f64 = curve.iter().map(|(_, d)| d * cell).sum();
        assert!((integral - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_contains_all_panels() {
        let charts: Vec<LineChart> = (0..3)
            .map(|i| {
                LineChart::new(format!("P{i}"), "x", "y")
                    .with_series(vec![Series::new("s", vec![(0.0, 0.0), (1.0, 1.0)])])
            })
            .collect();
        let svg = render_grid(&charts, 2);
        assert_eq!(svg.matches("<g transform").count(), 3);
        assert!(svg.contains(">P2</text>"));
    }
}
