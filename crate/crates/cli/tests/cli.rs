use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dualgan-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualgan"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn divergence_prints_value_and_writes_plan() {
    let dir = scratch("div");
    fs::write(dir.join("p.csv"), "w,x1\n0.5,0\n0.5,1\n").unwrap();
    fs::write(dir.join("q.csv"), "w,x1\n1,0.5\n").unwrap();
    let o = run(
        &dir,
        &[
            "divergence",
            "--kind",
            "w1",
            "--p",
            "p.csv",
            "--q",
            "q.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(stdout(&o).trim(), "value=0.5");
    let plan = fs::read_to_string(dir.join("o/plan.csv")).unwrap();
    assert!(plan.starts_with("# command: dualgan divergence --kind w1"));
    assert!(plan.contains("# seed: 0\n# version: dualgan "));
    assert!(plan.contains("i,j,mass\n0,0,0.5\n1,0,0.5\n"));

    let o = run(
        &dir,
        &[
            "divergence",
            "--kind",
            "js",
            "--p",
            "p.csv",
            "--q",
            "q.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(stdout(&o).trim(), "value=1.0");

    let o = run(
        &dir,
        &[
            "divergence",
            "--kind",
            "hyb-js-w1",
            "--p",
            "p.csv",
            "--q",
            "q.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(
        text.contains("fw_gap=") && text.contains("dual_lower_bound="),
        "{text}"
    );
}

#[test]
fn missing_inputs_and_bad_flags_are_usage_errors() {
    let dir = scratch("usage");
    assert_eq!(code(&run(&dir, &["divergence", "--kind", "w1"])), 2);
    assert_eq!(code(&run(&dir, &["duality-check", "--class", "bogus"])), 2);
    assert_eq!(code(&run(&dir, &["lqg-pca", "--bogus"])), 2);
    assert_eq!(
        code(&run(&dir, &["mixture-scaling", "--family", "three"])),
        2
    );
    fs::write(dir.join("bad.json"), r#"{"trials": 3, "nope": 1}"#).unwrap();
    assert_eq!(
        code(&run(&dir, &["duality-check", "--config", "bad.json"])),
        2
    );
}

#[test]
fn duality_check_reports_violations_with_status_one() {
    let dir = scratch("dual");
    let o = run(
        &dir,
        &[
            "duality-check",
            "--divergence",
            "kl",
            "--class",
            "span:1",
            "--trials",
            "4",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let csv = fs::read_to_string(dir.join("o/duality_check.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 4);

    let o = run(
        &dir,
        &[
            "duality-check",
            "--divergence",
            "kl",
            "--class",
            "all",
            "--trials",
            "4",
            "--tol",
            "1e-300",
        ],
    );
    // Ascent and closed form differ in the last bits, so a vanishing tolerance fails.
    assert_eq!(code(&o), 1, "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance violation"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = scratch("config");
    fs::write(
        dir.join("c.json"),
        r#"{"divergence": "js", "class": "zero", "trials": 2, "seed": 9}"#,
    )
    .unwrap();
    let o = run(
        &dir,
        &[
            "duality-check",
            "--config",
            "c.json",
            "--trials",
            "3",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let csv = fs::read_to_string(dir.join("o/duality_check.csv")).unwrap();
    assert!(csv.contains("# seed: 9\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn continuity_scan_is_byte_reproducible() {
    let dir = scratch("cont");
    let args = ["continuity-scan", "--points", "11", "--out", "o"];
    assert_eq!(code(&run(&dir, &args)), 0);
    let first = fs::read(dir.join("o/continuity.csv")).unwrap();
    let svg = fs::read(dir.join("o/continuity.svg")).unwrap();
    assert_eq!(code(&run(&dir, &args)), 0);
    assert_eq!(first, fs::read(dir.join("o/continuity.csv")).unwrap());
    assert_eq!(svg, fs::read(dir.join("o/continuity.svg")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.contains("theta,js,djsw1,djsw2,w1\n-1.0,1.0,"));
    assert!(String::from_utf8(svg)
        .unwrap()
        .starts_with("<!-- command: dualgan continuity-scan"));
}

#[test]
fn zero_iteration_training_plots_one_point() {
    let dir = scratch("toy");
    let o = run(
        &dir,
        &[
            "train-toy",
            "--dataset",
            "delta",
            "--loss",
            "w1gan",
            "--iterations",
            "0",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let svg = fs::read_to_string(dir.join("o/divergence_estimates.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(stdout(&o).contains("w1gan spearman=undefined"));
    assert!(dir.join("o/train_w1gan_adjusted.csv").exists());
}

#[test]
fn mixture_and_lqg_report_their_statistics() {
    let dir = scratch("misc");
    let o = run(
        &dir,
        &[
            "mixture-scaling",
            "--family",
            "single",
            "--m",
            "16,64",
            "--out",
            "o",
        ],
    );
    assert_eq!(stdout(&o).trim(), "slope=undefined");
    let csv = fs::read_to_string(dir.join("o/mixture_scaling.csv")).unwrap();
    assert!(csv.contains("m,median_err,q25,q75\n16,0.0,0.0,0.0\n"));

    let o = run(&dir, &["lqg-pca", "--min-alignment", "0.99", "--out", "o"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let o = run(&dir, &["lqg-pca", "--min-alignment", "1.5", "--out", "o"]);
    assert_eq!(code(&o), 1);
}
