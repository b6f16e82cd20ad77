//! Small self-contained SVG line charts for run outputs. No drawing
//! dependencies, just string assembly: a fixed canvas, nice-number axis
//! ticks, one polyline per series, and a legend.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug)]
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw horizontal-then-vertical segments between points instead of
    /// direct lines; right for quantities that hold their value between
    /// events, like chain height.
    pub step: bool,
}

impl LineSeries {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        LineSeries { label: label.into(), points, step: false }
    }

    pub fn stepped(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        LineSeries { label: label.into(), points, step: true }
    }
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Largest of 1, 2, 5 times a power of ten that fits `span / want` steps.
fn nice_step(span: f64, want: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / want.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    for mult in [1.0, 2.0, 5.0] {
        if mult * mag >= raw {
            return mult * mag;
        }
    }
    10.0 * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1_000_000.0 {
        format!("{}M", trim_zeros(v / 1_000_000.0))
    } else if a >= 10_000.0 {
        format!("{}k", trim_zeros(v / 1_000.0))
    } else if a >= 1.0 {
        trim_zeros(v)
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn trim_zeros(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct Bounds {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Bounds {
    fn of(series: &[LineSeries]) -> Bounds {
        let mut b = Bounds { x_min: f64::MAX, x_max: f64::MIN, y_min: f64::MAX, y_max: f64::MIN };
        for s in series {
            for &(x, y) in &s.points {
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
            }
        }
        if b.x_min > b.x_max {
            return Bounds { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        }
        // Anchor at zero when the data starts near it, and never collapse
        // an axis to a point.
        if b.y_min > 0.0 {
            b.y_min = 0.0;
        }
        if b.x_min > 0.0 {
            b.x_min = 0.0;
        }
        if b.x_max == b.x_min {
            b.x_max = b.x_min + 1.0;
        }
        if b.y_max == b.y_min {
            b.y_max = b.y_min + 1.0;
        }
        b
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Render a line chart. Shaded vertical bands (x ranges) go behind the
/// data; pass stall windows there to make them visible at a glance.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
    bands: &[(f64, f64)],
) -> String {
    let b = Bounds::of(series);
    let mut out = String::with_capacity(4096);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" \
         font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));

    for &(from, to) in bands {
        let x0 = b.px(from.max(b.x_min));
        let x1 = b.px(to.min(b.x_max));
        if x1 > x0 {
            out.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{MARGIN_TOP}\" width=\"{:.1}\" height=\"{:.1}\" \
                 fill=\"#fdd\" opacity=\"0.6\"/>\n",
                x0,
                x1 - x0,
                HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
            ));
        }
    }

    let x_step = nice_step(b.x_max - b.x_min, 8);
    let y_step = nice_step(b.y_max - b.y_min, 6);
    let mut x = (b.x_min / x_step).ceil() * x_step;
    while x <= b.x_max + 1e-9 {
        let px = b.px(x);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MARGIN_TOP}\" x2=\"{px:.1}\" y2=\"{:.1}\" \
             stroke=\"#eee\"/>\n<text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_BOTTOM,
            HEIGHT - MARGIN_BOTTOM + 16.0,
            fmt_tick(x)
        ));
        x += x_step;
    }
    let mut y = (b.y_min / y_step).ceil() * y_step;
    while y <= b.y_max + 1e-9 {
        let py = b.py(y);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" \
             stroke=\"#eee\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            WIDTH - MARGIN_RIGHT,
            MARGIN_LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        ));
        y += y_step;
    }

    out.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{0:.1}\" \
         stroke=\"#333\"/>\n<line x1=\"{MARGIN_LEFT}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" \
         stroke=\"#333\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        esc(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.points.is_empty() {
            let mut path = String::new();
            let mut prev: Option<(f64, f64)> = None;
            for &(px, py) in &s.points {
                let (cx, cy) = (b.px(px), b.py(py));
                match prev {
                    None => path.push_str(&format!("M{cx:.1},{cy:.1}")),
                    Some((_, ly)) if s.step => {
                        path.push_str(&format!(" L{cx:.1},{ly:.1} L{cx:.1},{cy:.1}"))
                    }
                    Some(_) => path.push_str(&format!(" L{cx:.1},{cy:.1}")),
                }
                prev = Some((cx, cy));
            }
            out.push_str(&format!(
                "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n"
            ));
        }
        let ly = MARGIN_TOP + 6.0 + i as f64 * 18.0;
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"14\" height=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            MARGIN_LEFT + 10.0,
            ly,
            MARGIN_LEFT + 30.0,
            ly + 6.0,
            esc(&s.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Chain height against wall-clock seconds, with stall windows shaded.
pub fn height_chart_svg(
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
    stalls: &[(f64, f64)],
) -> String {
    let lines: Vec<LineSeries> = series
        .iter()
        .map(|(label, pts)| LineSeries::stepped(label.clone(), pts.clone()))
        .collect();
    line_chart_svg(title, "time (s)", "chain height", &lines, stalls)
}

/// Modeled against measured throughput across shard counts.
pub fn throughput_chart_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let lines: Vec<LineSeries> =
        series.iter().map(|(label, pts)| LineSeries::new(label.clone(), pts.clone())).collect();
    line_chart_svg(title, "shards", "transactions per second", &lines, &[])
}
