//! End-to-end runs of the binary on the bundled configurations.

mod common;

use std::fs;

use common::{case, config, json, read_dir, run};

#[test]
fn lambda_of_constant_source() {
    let (stdout, files) = case("lambda_constant_f", &["lambda", config("constant_f").to_str().unwrap()], 0);
    assert!(stdout.starts_with("lambda:"));
    let c = json(&files, "lambda.json")["constant"].as_f64().unwrap();
    assert!((c + 2.0).abs() < 1e-8, "{c}");
    assert!(files.contains_key("corrector.csv") && files.contains_key("corrector.bin"));
}

#[test]
fn counterexample_exits_with_diagnostics() {
    let (_, files) = case("mu_counterexample_1d", &["mu", config("counterexample_1d").to_str().unwrap()], 1);
    let d = json(&files, "diagnostics.json");
    assert_eq!(d["uniqueness_flag"], "suspect-nonunique");
    assert!(d["r_drift"].as_f64().unwrap() > 1e-2);
}

#[test]
fn drift_toward_boundary_is_unique() {
    let (_, files) = case("mu_drift_toward_1d", &["mu", config("drift_toward_1d").to_str().unwrap()], 0);
    let r = json(&files, "mu.json");
    assert_eq!(r["uniqueness_flag"], "unique-consistent");
    assert!((r["mu"].as_f64().unwrap() + 0.4).abs() < 1e-4);
    assert!(!files.contains_key("diagnostics.json"));
}

#[test]
fn cosine_slope_scan_rows() {
    let (_, files) = case("bavg_cosine", &["bavg", config("cosine_slope_scan").to_str().unwrap()], 0);
    let csv = String::from_utf8(files["bavg.csv"].clone()).unwrap();
    let mut seen = (0, 0);
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        if v[0] == 0.0 {
            assert!((v[2] - 1.0).abs() < 1e-12, "{line}");
            seen.0 += 1;
        }
        if (v[0] - 0.2).abs() < 1e-15 {
            assert!(v[2].abs() < 1e-10, "{line}");
            seen.1 += 1;
        }
    }
    assert!(seen.0 > 0 && seen.1 > 0);
}

#[test]
fn single_cell_problem() {
    let (_, files) = case(
        "cell_layered_2d",
        &["cell", config("layered_2d").to_str().unwrap(), "--override", "problem.p=[1.0, 0.0]", "--override", "problem.m=[[1.0, 0.0], [0.0, 0.0]]"],
        0,
    );
    let r = json(&files, "cell.json");
    assert!(r["cell_constant"].as_f64().unwrap().abs() < 1e-6);
    // F̄(e1⊗e1, e1) = -ā11 - f̄ with ā11 the harmonic mean sqrt(3).
    assert!((r["f_bar"].as_f64().unwrap() + 3f64.sqrt() + 1.0).abs() < 5e-3);
}

#[test]
fn effective_data_of_layered_medium() {
    let (_, files) = case("effective_layered_2d", &["effective", config("layered_2d").to_str().unwrap()], 0);
    let r = json(&files, "effective.json");
    let a = &r["interior"]["a_bar"];
    assert!((a[0][0].as_f64().unwrap() / 3f64.sqrt() - 1.0).abs() < 1e-3);
    assert!((a[1][1].as_f64().unwrap() / 2.0 - 1.0).abs() < 1e-3);
}

#[test]
fn homogenization_study() {
    let (_, files) = case("homogenize_divergence_1d", &["homogenize", config("divergence_1d").to_str().unwrap()], 0);
    let csv = String::from_utf8(files["homogenize.csv"].clone()).unwrap();
    assert!(csv.starts_with("# reference"));
    let e: Vec<f64> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(e.len(), 4);
    assert!(e.windows(2).all(|w| w[1] <= w[0]) && e[3] < 0.5 * e[0], "{e:?}");
    assert!(files.contains_key("homogenize.dat") && files.contains_key("homogenize.json"));
}

#[test]
fn monte_carlo_run() {
    let (_, files) = case("mc_reflected_bm", &["mc", config("reflected_bm").to_str().unwrap(), "--override", "numerics.paths=2000"], 0);
    let r = json(&files, "mc.json");
    assert!((r["estimate"]["mu_hat"].as_f64().unwrap() + 0.7).abs() < 1e-9);
    assert!(files.contains_key("mc_growth.csv"));
}

#[test]
fn seed_flag_changes_paths() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("reflected_bm");
    let args = |s: &'static str| vec!["mc", cfg.to_str().unwrap(), "--override", "numerics.paths=500", "--seed", s];
    assert_eq!(run(&args("5"), a.path()).0, 0);
    assert_eq!(run(&args("6"), b.path()).0, 0);
    assert_ne!(fs::read(a.path().join("mc_growth.csv")).unwrap(), fs::read(b.path().join("mc_growth.csv")).unwrap());
}

#[test]
fn audit_of_corpus_problem() {
    let (stdout, files) = case("audit_oscillating_2d", &["audit", config("oscillating_boundary_2d").to_str().unwrap()], 0);
    assert!(stdout.contains("all"), "{stdout}");
    let r = json(&files, "audit.json");
    assert!(r["entries"].as_array().unwrap().iter().all(|e| e["passed"] == true));
}

#[test]
fn audit_leaves_other_outputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["lambda", config("constant_f").to_str().unwrap()], dir.path()).0, 0);
    let before = read_dir(dir.path());
    assert_eq!(run(&["audit", config("constant_f").to_str().unwrap()], dir.path()).0, 0);
    let after = read_dir(dir.path());
    for (k, v) in &before {
        assert_eq!(&after[k], v);
    }
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("constant_f");
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["lambda", c, "--override", "problem.f=\"1 +\""], dir.path()).0, 2);
    assert_eq!(run(&["lambda", c, "--override", "numerics.deltas=[1e-3, 1e-2]"], dir.path()).0, 2);
    assert_eq!(run(&["lambda", "/nonexistent.cfg"], dir.path()).0, 2);
    // Monte Carlo needs a seed.
    assert_eq!(run(&["mc", c], dir.path()).0, 2);
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}
