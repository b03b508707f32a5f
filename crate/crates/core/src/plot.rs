//! Minimal deterministic SVG charts for experiment reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{x}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        x = WIDTH / 2.0
    )
}

fn axis_frame(y_label: &str) -> String {
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let x1 = WIDTH - MARGIN_R;
    let y1 = MARGIN_T;
    format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"18\" y=\"{ym}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {ym})\">{y_label}</text>\n",
        ym = (y0 + y1) / 2.0
    )
}

fn y_ticks(out: &mut String) {
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let y = y0 - frac * (y0 - y1);
        let _ = write!(
            out,
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{x1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{pct:.0}</text>\n",
            x0 = MARGIN_L,
            x1 = WIDTH - MARGIN_R,
            tx = MARGIN_L - 8.0,
            ty = y + 4.0,
            pct = frac * 100.0
        );
    }
}

/// Success-rate-versus-alpha line chart with a dashed horizontal baseline.
pub fn line_chart_with_baseline(
    title: &str,
    points: &[(f64, f64)],
    baseline: Option<(f64, &str)>,
    path: &Path,
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("line chart points"));
    }
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let x1 = WIDTH - MARGIN_R;
    let y1 = MARGIN_T;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let xmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (xmax - xmin).max(1e-9);
    let px = |x: f64| x0 + (x - xmin) / span * (x1 - x0);
    let py = |y: f64| y0 - y.clamp(0.0, 1.0) * (y0 - y1);

    let mut svg = svg_header(title);
    svg.push_str(&axis_frame("success rate (%)"));
    y_ticks(&mut svg);

    for &(x, _) in points {
        let _ = write!(
            svg,
            "<text x=\"{tx:.1}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{x}</text>\n",
            tx = px(x),
            ty = y0 + 18.0
        );
    }

    if let Some((value, label)) = baseline {
        let y = py(value);
        let _ = write!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#888888\" \
             stroke-dasharray=\"6 4\"/>\n\
             <text x=\"{x1}\" y=\"{ty:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{label}</text>\n",
            ty = y - 6.0
        );
    }

    let path_d: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, px(x), py(y))
        })
        .collect();
    let _ = write!(
        svg,
        "<path d=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        path_d.join(" ")
    );
    for &(x, y) in points {
        let _ = write!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#1f77b4\"/>\n",
            px(x),
            py(y)
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Labeled bar chart of success rates in `[0, 1]`.
pub fn bar_chart(title: &str, bars: &[(String, f64)], path: &Path) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::EmptyInput("bar chart bars"));
    }
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let x1 = WIDTH - MARGIN_R;
    let y1 = MARGIN_T;
    let slot = (x1 - x0) / bars.len() as f64;
    let bar_w = slot * 0.6;

    let mut svg = svg_header(title);
    svg.push_str(&axis_frame("success rate (%)"));
    y_ticks(&mut svg);
    for (i, (label, value)) in bars.iter().enumerate() {
        let cx = x0 + slot * (i as f64 + 0.5);
        let top = y0 - value.clamp(0.0, 1.0) * (y0 - y1);
        let _ = write!(
            svg,
            "<rect x=\"{bx:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" \
             fill=\"#ff7f0e\"/>\n\
             <text x=\"{cx:.2}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{label}</text>\n\
             <text x=\"{cx:.2}\" y=\"{vy:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{pct:.1}</text>\n",
            bx = cx - bar_w / 2.0,
            h = y0 - top,
            ly = y0 + 18.0,
            vy = top - 5.0,
            pct = value * 100.0
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_write_deterministic_svg() {
        let dir = tempfile::tempdir().unwrap();
        let line = dir.path().join("line.svg");
        let points = vec![(0.1, 0.62), (1.0, 0.66), (4.0, 0.64)];
        line_chart_with_baseline("alpha sweep", &points, Some((0.55, "no mixing")), &line)
            .unwrap();
        let a = std::fs::read(&line).unwrap();
        line_chart_with_baseline("alpha sweep", &points, Some((0.55, "no mixing")), &line)
            .unwrap();
        assert_eq!(a, std::fs::read(&line).unwrap());
        assert!(String::from_utf8(a).unwrap().starts_with("<svg"));

        let bars = dir.path().join("bars.svg");
        bar_chart(
            "augmentations",
            &[("none".into(), 0.5), ("cutmix".into(), 0.6)],
            &bars,
        )
        .unwrap();
        assert!(bars.exists());
        assert!(bar_chart("x", &[], &bars).is_err());
    }
}
