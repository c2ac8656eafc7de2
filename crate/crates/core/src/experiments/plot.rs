//! Minimal deterministic SVG line and scatter plots.

use std::fmt::Write;

use crate::error::{Error, Result};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    /// Markers only, no connecting lines.
    pub scatter: bool,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            title: String::new(),
            x_label: "x".into(),
            y_label: "y".into(),
            width: 640,
            height: 400,
            scatter: false,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Renders the series on shared axes. Non-finite points are skipped.
pub fn emit_svg(series: &[Series], spec: &PlotSpec) -> String {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (left, right, top, bottom) = (64.0, 150.0, 32.0, 48.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite())
    };
    let (x0, x1) = range(finite().map(|p| p.0));
    let (y0, y1) = range(finite().map(|p| p.1));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"11\">",
        spec.width, spec.height, spec.width, spec.height
    );
    let _ = writeln!(
        s,
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>",
        spec.width, spec.height
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        left + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#444\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            top + ph,
            top + ph + 4.0,
            top + ph + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{left:.2}\" y2=\"{py:.2}\" stroke=\"#444\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            left - 4.0,
            left - 6.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        left + pw / 2.0,
        h - 10.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&spec.y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| (sx(x), sy(y)))
            .collect();
        if !spec.scatter && pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
        } else {
            for (x, y) in &pts {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{color}\"/>"
                );
            }
        }
        let ly = top + 12.0 + 16.0 * k as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{ly:.2}\">{}</text>",
            ly - 4.0,
            lx + 16.0,
            ly - 4.0,
            lx + 20.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Plots columns `y_cols` against `x_col` of a CSV table; `#` lines are skipped.
pub fn plot_csv(csv_text: &str, x_col: &str, y_cols: &[&str], spec: &PlotSpec) -> Result<String> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(csv_text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("no column {name:?}")))
    };
    let xi = col(x_col)?;
    let yis = y_cols
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<usize>>>()?;
    let mut series: Vec<Series> = y_cols
        .iter()
        .map(|c| Series {
            name: c.to_string(),
            points: Vec::new(),
        })
        .collect();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            let cell = rec.get(i).unwrap_or("");
            cell.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {cell:?}")))
        };
        let x = parse(xi)?;
        for (s, &yi) in series.iter_mut().zip(&yis) {
            s.points.push((x, parse(yi)?));
        }
    }
    Ok(emit_svg(&series, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_deterministic_and_skips_non_finite() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
        }];
        let a = emit_svg(&s, &PlotSpec::default());
        assert_eq!(a, emit_svg(&s, &PlotSpec::default()));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<polyline").count(), 1);
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn single_point_is_a_marker() {
        let s = vec![Series {
            name: "one".into(),
            points: vec![(0.0, 0.5)],
        }];
        let svg = emit_svg(&s, &PlotSpec::default());
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn csv_columns_are_plotted() {
        let text = "# header\nt,a,b\n0,1,2\n1,2,3\n";
        let svg = plot_csv(text, "t", &["a", "b"], &PlotSpec::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(plot_csv(text, "t", &["zz"], &PlotSpec::default()).is_err());
    }
}
