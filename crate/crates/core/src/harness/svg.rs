//! Static SVG line charts with mean +/- std bands.

/// One plotted arm: `(n, mean, std)` per grid point, already sorted by `n`.
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(usize, f64, f64)>,
}

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

/// Render series over a categorical x axis (the union of N values), with a
/// shaded band spanning mean - std .. mean + std per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut xs: Vec<usize> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_unstable();
    xs.dedup();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(_, mean, std) in &s.points {
            lo = lo.min(mean - std);
            hi = hi.max(mean + std);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 0.05 {
        let mid = 0.5 * (lo + hi);
        lo = mid - 0.05;
        hi = mid + 0.05;
    }
    // snap to a 0.05 grid with a little headroom
    lo = ((lo - 0.01) * 20.0).floor() / 20.0;
    hi = ((hi + 0.01) * 20.0).ceil() / 20.0;
    lo = lo.max(0.0);
    hi = hi.min(1.0_f64.max(hi.min(1.05)));

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_pos = |n: usize| -> f64 {
        let idx = xs.iter().position(|&v| v == n).unwrap_or(0);
        if xs.len() <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * idx as f64 / (xs.len() - 1) as f64
        }
    };
    let y_pos = |v: f64| -> f64 { TOP + plot_h * (1.0 - (v - lo) / (hi - lo)) };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{title}</text>\n",
        LEFT + plot_w / 2.0
    ));

    // y grid lines and labels every 0.05
    let mut tick = lo;
    while tick <= hi + 1e-9 {
        let y = y_pos(tick);
        out.push_str(&format!(
            "<line x1=\"{LEFT:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            LEFT + plot_w
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{tick:.2}</text>\n",
            LEFT - 8.0,
            y + 4.0
        ));
        tick += 0.05;
    }

    // x ticks
    for &n in &xs {
        let x = x_pos(n);
        out.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
             stroke=\"#999999\" stroke-width=\"1\"/>\n",
            TOP + plot_h,
            TOP + plot_h + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{n}</text>\n",
            TOP + plot_h + 20.0
        ));
    }

    // axes
    out.push_str(&format!(
        "<line x1=\"{LEFT:.1}\" y1=\"{TOP:.1}\" x2=\"{LEFT:.1}\" y2=\"{:.1}\" \
         stroke=\"black\" stroke-width=\"1\"/>\n",
        TOP + plot_h
    ));
    out.push_str(&format!(
        "<line x1=\"{LEFT:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
         stroke=\"black\" stroke-width=\"1\"/>\n",
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{x_label}</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    ));

    // bands under the lines
    for s in series {
        if s.points.len() < 2 {
            continue;
        }
        let mut d = String::new();
        for (i, &(n, mean, std)) in s.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.1},{:.1} ", x_pos(n), y_pos(mean + std)));
        }
        for &(n, mean, std) in s.points.iter().rev() {
            d.push_str(&format!("L{:.1},{:.1} ", x_pos(n), y_pos(mean - std)));
        }
        d.push('Z');
        out.push_str(&format!(
            "<path d=\"{d}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            s.color
        ));
    }

    // mean lines and point markers
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(n, mean, _)| format!("{:.1},{:.1}", x_pos(n), y_pos(mean)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            pts.join(" "),
            s.color
        ));
        for &(n, mean, _) in &s.points {
            out.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>\n",
                x_pos(n),
                y_pos(mean),
                s.color
            ));
        }
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = LEFT + plot_w - 110.0;
        out.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{}\"/>\n",
            y - 2.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            x + 18.0,
            y + 3.0,
            s.label
        ));
    }

    out.push_str("</svg>\n");
    out
}
