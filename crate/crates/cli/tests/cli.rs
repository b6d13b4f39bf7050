use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hypershell::io::{read_csv, read_grid};
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hypershell"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn bundled(args: &[&str], name: &str, out: &Path) -> Output {
    run(args, Some(&configs().join(name)), out)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

// ---------------------------------------------------------------- surface-info

#[test]
fn paraboloid_default_reports_unit_curvature_at_the_origin() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["surface-info"], None, t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(t.path().join("surface_info.json"));
    assert_eq!(r["centre"], serde_json::json!([0.0, 0.0]));
    assert!((r["kappa_centre"].as_f64().unwrap() + 1.0).abs() < 1e-14);
    assert_eq!(r["hyperbolic"], true);
}

// κ of the graph of x³ − 3xy²: −36 r² / (1 + 9 r⁴)²
fn monkey_kappa(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    -36.0 * r2 / (1.0 + 9.0 * r2 * r2).powi(2)
}

#[test]
fn monkey_curvature_range_matches_closed_form() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["surface-info"], "monkey_info.json", t.path());
    assert_eq!(code(&o), 0);
    let r = json(t.path().join("surface_info.json"));
    let n = 16;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..n {
        for i in 0..n {
            let k = monkey_kappa(0.5 + 1.5 * i as f64 / 15.0, -0.5 + j as f64 / 15.0);
            lo = lo.min(k);
            hi = hi.max(k);
        }
    }
    assert!(hi < 0.0);
    assert!((r["kappa_min"].as_f64().unwrap() - lo).abs() < 1e-12 * lo.abs());
    assert!((r["kappa_max"].as_f64().unwrap() - hi).abs() < 1e-12 * hi.abs());
    let (head, rows) = read_csv(std::fs::File::open(t.path().join("samples.csv")).unwrap()).unwrap();
    assert_eq!(head[2], "kappa");
    assert_eq!(rows.len(), n * n);
    for row in &rows {
        assert!((row[2] - monkey_kappa(row[0], row[1])).abs() < 1e-12);
        // κ = k1 k2
        assert!((row[3] * row[4] - row[2]).abs() < 1e-10);
    }
}

#[test]
fn plane_is_not_hyperbolic() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["surface-info"], "plane_info.json", t.path());
    assert_eq!(code(&o), 3);
    assert!(o.stdout.is_empty());
    assert_eq!(json(t.path().join("surface_info.json"))["hyperbolic"], false);
}

#[test]
fn expression_surface_agrees_with_the_builtin_saddle() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&bundled(&["surface-info"], "expression_saddle.json", t.path().join("e").as_path())), 0);
    assert_eq!(code(&bundled(&["surface-info"], "monkey_info.json", t.path().join("m").as_path())), 0);
    let e = json(t.path().join("e/surface_info.json"));
    let m = json(t.path().join("m/surface_info.json"));
    for key in ["kappa_min", "kappa_max", "kappa_centre"] {
        let (a, b) = (e[key].as_f64().unwrap(), m[key].as_f64().unwrap());
        assert!((a - b).abs() < 1e-6 * b.abs(), "{key}: {a} vs {b}");
    }
}

#[test]
fn invalid_configs_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    for text in [
        r#"{"surface": {"kind": "hyperbolic_paraboloid"}, "colour": 3}"#,
        r#"{"surface": {"kind": "torus"}}"#,
        r#"{"surface": {"kind": "expression", "z": "u*w", "domain": [[-1, -1], [1, 1]]}}"#,
        r#"{"surface": {"kind": "hyperbolic_paraboloid", "domain": [[1, 1], [-1, -1]]}}"#,
        "not json",
    ] {
        let p = write_config(t.path(), text);
        let o = run(&["surface-info"], Some(&p), &t.path().join("o"));
        assert_eq!(code(&o), 2, "{text}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["surface-info"], Some(&t.path().join("missing.json")), &t.path().join("o"));
    assert_eq!(code(&o), 2);
}

// ---------------------------------------------------------------- solve-strain

#[test]
fn manufactured_paraboloid_run_meets_its_tolerance() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["solve-strain"], "paraboloid_manufactured.json", t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(t.path().join("summary.json"));
    let tol = s["tol"].as_f64().unwrap();
    for k in ["W1", "W2", "w"] {
        assert!(s["max_error"][k].as_f64().unwrap() <= tol);
    }
    assert_eq!(s["pass"], true);
    let (head, rows) = read_csv(std::fs::File::open(t.path().join("error_table.csv")).unwrap()).unwrap();
    assert_eq!(head, ["grid", "step", "err_W1", "err_W2", "err_w", "strain_residual"]);
    assert_eq!(rows[0][0], 65.0);
}

#[test]
fn dumps_and_csv_carry_the_same_solution() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&bundled(&["solve-strain"], "paraboloid_manufactured.json", t.path())), 0);
    let g = read_grid(std::fs::File::open(t.path().join("displacement.gpf")).unwrap()).unwrap();
    assert_eq!(g.header.channels, ["W1", "W2", "w"]);
    assert_eq!((g.header.nx, g.header.ny), (65, 129));
    let (_, rows) = read_csv(std::fs::File::open(t.path().join("displacement.csv")).unwrap()).unwrap();
    let finite = g.data.chunks(3).filter(|c| c[0].is_finite()).count();
    assert_eq!(finite, rows.len());
    for row in rows.iter().step_by(37) {
        let i = ((row[0] - g.header.x0) / g.header.dx).round() as usize;
        let j = ((row[1] - g.header.y0) / g.header.dy).round() as usize;
        for c in 0..3 {
            assert_eq!(g.at(i, j, c).to_bits(), row[2 + c].to_bits());
        }
    }
    let chart = read_grid(std::fs::File::open(t.path().join("chart.gpf")).unwrap()).unwrap();
    assert_eq!(chart.header.channels.len(), 12);
    // on z = uv the asymptotic chart is the parameter chart itself
    let u1 = chart.channel("u1").unwrap();
    let lat = chart.header.lattice();
    for k in (0..u1.len()).step_by(101) {
        assert!((u1[k] - lat.x(k % lat.nx)).abs() < 1e-12);
    }
}

#[test]
fn zero_data_gives_zero_dumps() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&bundled(&["solve-strain"], "paraboloid_zero.json", t.path())), 0);
    for name in ["displacement.gpf", "strain.gpf"] {
        let g = read_grid(std::fs::File::open(t.path().join(name)).unwrap()).unwrap();
        let vals: Vec<f64> = g.data.iter().cloned().filter(|v| v.is_finite()).collect();
        assert!(!vals.is_empty());
        assert!(vals.iter().all(|v| *v == 0.0), "{name}");
    }
}

#[test]
fn folded_chart_exits_with_four_and_a_diagnostic() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["solve-strain"], "folded_chart.json", t.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(t.path().join("diagnostic.json"));
    assert_eq!(d["stage"], "chart");
    assert!(d["error"].as_str().unwrap().contains("folds"));
    assert!(!t.path().join("displacement.csv").exists());
}

#[test]
fn monkey_saddle_run_passes() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["solve-strain"], "monkey_manufactured.json", t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tight_tolerance_fails_with_four() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["solve-strain", "--tol", "1e-12", "--grid", "17"], "paraboloid_manufactured.json", t.path());
    assert_eq!(code(&o), 4);
    assert_eq!(json(t.path().join("summary.json"))["pass"], false);
}

#[test]
fn runs_are_byte_identical_and_seeded() {
    let t = tempfile::tempdir().unwrap();
    let dirs = ["a", "b", "c"].map(|d| t.path().join(d));
    for (d, seed) in dirs.iter().zip(["12", "12", "13"]) {
        assert_eq!(code(&bundled(&["solve-strain", "--grid", "33", "--seed", seed], "paraboloid_manufactured.json", d)), 0);
    }
    for name in ["displacement.csv", "displacement.gpf", "strain.csv", "chart.gpf", "summary.json", "error_table.csv"] {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        assert_eq!(a, std::fs::read(dirs[1].join(name)).unwrap(), "{name}");
    }
    assert_ne!(std::fs::read(dirs[0].join("displacement.csv")).unwrap(), std::fs::read(dirs[2].join("displacement.csv")).unwrap());
}

// ---------------------------------------------------------------- korn-scale

#[test]
fn synthetic_power_law_recovers_the_exponent() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["korn-scale"], "synthetic_korn.json", t.path());
    assert_eq!(code(&o), 0);
    let s = json(t.path().join("scaling.json"));
    assert!((s["fit"]["slope"].as_f64().unwrap() + 4.0 / 3.0).abs() < 1e-6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("-1.3333"));
    let (head, rows) = read_csv(std::fs::File::open(t.path().join("records.csv")).unwrap()).unwrap();
    assert_eq!(&head[..4], ["h", "lambda_max", "log_h", "log_lambda"]);
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[2] == r[0].ln() && r[3] == r[1].ln()));
}

#[test]
fn single_thickness_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&bundled(&["korn-scale"], "single_h_korn.json", t.path())), 2);
}

#[test]
fn unsaturated_basis_exits_with_five() {
    let t = tempfile::tempdir().unwrap();
    let p = write_config(t.path(), r#"{"thicknesses": [0.2, 0.15, 0.12, 0.1], "modes": [2, 2, 2, 2], "max_modes": 3, "max_change": 1e-9}"#);
    let o = run(&["korn-scale"], Some(&p), &t.path().join("o"));
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.path().join("o/records.csv").exists());
}

#[test]
fn monkey_saddle_korn_slope_lies_in_the_band() {
    let t = tempfile::tempdir().unwrap();
    let o = bundled(&["korn-scale"], "monkey_korn.json", t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(t.path().join("scaling.json"));
    let slope = s["fit"]["slope"].as_f64().unwrap();
    assert!((-1.55..=-1.10).contains(&slope), "{slope}");
    for r in s["records"].as_array().unwrap() {
        assert!(r["saturation"].as_f64().unwrap() <= 0.02);
    }
}

// ---------------------------------------------------------------- appendix-verify, region-selftest

#[test]
fn appendix_defaults_pass() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["appendix-verify"], None, t.path());
    assert_eq!(code(&o), 0);
    let r = json(t.path().join("appendix.json"));
    let checks = r["checks"].as_array().unwrap();
    let get = |n: &str| checks.iter().find(|c| c["name"] == n).unwrap()["value"].as_f64().unwrap();
    assert!((get("x2_eta_limit_at_minus_one") + 1.375).abs() <= 1e-3);
    assert!((get("zeta1_jump_at_minus_one") - 2.0 / 10f64.sqrt()).abs() <= 1e-3);
    assert!(get("eta_limit_at_plus_one").abs() <= 1e-3);
}

#[test]
fn appendix_failure_exits_with_six() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["appendix-verify", "--tol", "1e-14"], None, t.path());
    assert_eq!(code(&o), 6);
    assert_eq!(json(t.path().join("appendix.json"))["pass"], false);
}

#[test]
fn selftest_passes_and_reports_its_failures() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["region-selftest"], None, &t.path().join("a"))), 0);
    let r = json(t.path().join("a/selftest.json"));
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let o = run(&["region-selftest", "--grid", "17", "--tol", "1e-9"], None, &t.path().join("b"));
    assert_eq!(code(&o), 4);
}
