//! Static SVG line plot of a score series with anomaly shading.

use std::fmt::Write as _;

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

/// Score trace as SVG: labelled segments shaded, optional threshold drawn as
/// a dashed horizontal line.
pub fn score_plot_svg(scores: &[f64], labels: Option<&[u8]>, threshold: Option<f64>) -> String {
    let len = scores.len().max(2);
    let finite = scores.iter().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if let Some(th) = threshold {
        lo = lo.min(th);
        hi = hi.max(th);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |t: f64| MARGIN + t / (len - 1) as f64 * plot_w;
    let y = |v: f64| MARGIN + (1.0 - (v - lo) / (hi - lo)) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    if let Some(labels) = labels {
        let mut t = 0;
        while t < labels.len() {
            if labels[t] == 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < labels.len() && labels[t] != 0 {
                t += 1;
            }
            let x0 = x(start as f64);
            let x1 = x((t - 1) as f64).max(x0 + 1.0);
            writeln!(
                svg,
                r##"<rect class="anomaly" x="{x0:.2}" y="{MARGIN}" width="{:.2}" height="{plot_h}" fill="#f4a6a6" fill-opacity="0.5"/>"##,
                x1 - x0
            )
            .unwrap();
        }
    }

    writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black" stroke-width="1"/>"#
    )
    .unwrap();

    svg.push_str(r##"<polyline class="score" fill="none" stroke="#1f4e9c" stroke-width="1" points=""##);
    for (t, &v) in scores.iter().enumerate() {
        if v.is_finite() {
            write!(svg, "{:.2},{:.2} ", x(t as f64), y(v)).unwrap();
        }
    }
    svg.push_str("\"/>\n");

    if let Some(th) = threshold {
        let yt = y(th);
        writeln!(
            svg,
            r##"<line class="threshold" x1="{MARGIN}" y1="{yt:.2}" x2="{:.2}" y2="{yt:.2}" stroke="#c03020" stroke-dasharray="6 4"/>"##,
            MARGIN + plot_w
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="12">{hi:.4}</text>"#,
        MARGIN - 6.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="12">{lo:.4}</text>"#,
        HEIGHT - MARGIN + 16.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_contains_elements() {
        let svg = score_plot_svg(&[0.1, 0.5, 0.2, 0.9], Some(&[0, 1, 1, 0]), Some(0.5));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"anomaly\"").count(), 1);
        assert!(svg.contains("class=\"threshold\""));
    }

    #[test]
    fn flat_scores_do_not_divide_by_zero() {
        let svg = score_plot_svg(&[1.0; 5], None, None);
        assert!(!svg.contains("NaN"));
    }
}
