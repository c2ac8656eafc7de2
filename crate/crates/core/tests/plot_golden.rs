//! SVG output compared byte for byte with checked-in files.
//! Set `DUALGAN_BLESS=1` to rewrite them after an intended change.

use std::path::PathBuf;

use dualgan::experiments::{emit_svg, plot_csv, PlotSpec, Series};

fn check(name: &str, svg: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("DUALGAN_BLESS").is_some() {
        std::fs::write(&path, svg).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(svg, want, "{name} differs from its golden file");
}

#[test]
fn two_line_series() {
    let theta: Vec<f64> = (0..=10).map(|i| -1.0 + 0.2 * i as f64).collect();
    let series = [
        Series {
            name: "js".into(),
            points: theta
                .iter()
                .map(|&t| (t, if t.abs() < 1e-12 { 0.0 } else { 1.0 }))
                .collect(),
        },
        Series {
            name: "w1".into(),
            points: theta.iter().map(|&t| (t, t.abs())).collect(),
        },
    ];
    let spec = PlotSpec {
        title: "shifted deltas".into(),
        x_label: "theta".into(),
        y_label: "divergence".into(),
        ..PlotSpec::default()
    };
    check("lines.svg", &emit_svg(&series, &spec));
}

#[test]
fn scatter_with_gaps() {
    let series = [Series {
        name: "median".into(),
        points: vec![(1.2, -0.9), (1.8, f64::NAN), (2.4, -1.5), (3.0, -1.8)],
    }];
    let spec = PlotSpec {
        title: "log-log".into(),
        scatter: true,
        width: 480,
        height: 320,
        ..PlotSpec::default()
    };
    check("scatter.svg", &emit_svg(&series, &spec));
}

#[test]
fn csv_with_header_and_single_row() {
    let csv = "# command: dualgan train-toy\n# seed: 0\niter,estimate\n0,0.25\n";
    let svg = plot_csv(csv, "iter", &["estimate"], &PlotSpec::default()).unwrap();
    check("single_point.svg", &svg);
}
