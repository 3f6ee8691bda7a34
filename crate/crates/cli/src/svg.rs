//! Minimal standalone SVG boxplots.

use std::fmt::Write;

const WIDTH: f64 = 420.0;
const HEIGHT: f64 = 300.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 44.0;

/// Quartiles and Tukey whiskers of one group.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// `None` for an empty group.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let fence = 1.5 * (q3 - q1);
        let (lo, hi) = (q1 - fence, q3 + fence);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
        Some(BoxStats {
            q1,
            median,
            q3,
            whisker_lo: inside.first().copied().unwrap_or(q1),
            whisker_hi: inside.last().copied().unwrap_or(q3),
            outliers: v.into_iter().filter(|x| !(lo..=hi).contains(x)).collect(),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// One panel: a box per group, labelled on the x axis, and a horizontal red
/// rule at `baseline`.
pub fn boxplot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)], baseline: f64) -> String {
    let stats: Vec<Option<BoxStats>> = groups.iter().map(|(_, v)| BoxStats::from_values(v)).collect();
    let mut lo = baseline;
    let mut hi = baseline;
    for v in groups.iter().flat_map(|(_, v)| v) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        lo -= 0.5 * hi.abs().max(1e-6);
        hi += 0.5 * hi.abs().max(1e-6);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let slot = plot_w / groups.len().max(1) as f64;
    let half = 0.3 * slot;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.1} {TOP:.1} V{:.1} H{:.1}" stroke="black" fill="none"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{yy:.1}" x2="{LEFT:.1}" y2="{yy:.1}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, yy + 4.0, tick(v));
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, ((label, _), st)) in groups.iter().zip(&stats).enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 16.0,
            escape(label)
        );
        let Some(st) = st else { continue };
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y(st.whisker_hi),
            y(st.whisker_lo)
        );
        for w in [st.whisker_lo, st.whisker_hi] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
                cx - half / 2.0,
                y(w),
                cx + half / 2.0,
                y(w)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#cfe0f3" stroke="black"/>"##,
            cx - half,
            y(st.q3),
            2.0 * half,
            (y(st.q1) - y(st.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y(st.median),
            cx + half,
            y(st.median)
        );
        for o in &st.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{:.1}" r="2" fill="none" stroke="black"/>"#, y(*o));
        }
    }
    let yb = y(baseline);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.1}" y1="{yb:.1}" x2="{:.1}" y2="{yb:.1}" stroke="red" stroke-width="1.5"/>"#,
        LEFT + plot_w
    );
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
