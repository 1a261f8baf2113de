use std::path::Path;
use std::process::{Command, Output};

use ascertain_core::report::Report;

fn ascertain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ascertain")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(out: &Output) -> Report {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    Report::parse(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

fn report_file(path: &Path) -> Report {
    Report::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn parameter(r: &Report, name: &str) -> f64 {
    let (_, rows) = r.table("parameters").unwrap();
    rows.iter().find(|row| row[0] == name).unwrap()[1].parse().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn free_fit_on_the_bundled_data() {
    let r = report(&ascertain(&["fit", "--fixture", "nvdrs"]));
    assert_eq!(r.get("fit", "variant"), Some("incomplete-free-theta"));
    let expected = [
        ("alpha_DC", -0.100),
        ("alpha_LE", 0.059),
        ("alpha_CME", -0.961),
        ("alpha_DC:LE", 0.831),
        ("alpha_DC:CME", 1.062),
        ("alpha_LE:CME", 2.225),
        ("theta", -0.020),
        ("gamma_exposed", 626.0),
        ("gamma_unexposed", 506.0),
    ];
    for (name, value) in expected {
        let tol = if name.starts_with("gamma") { 1.0 } else { 0.002 };
        assert!((parameter(&r, name) - value).abs() <= tol, "{name}");
    }
    assert_eq!(r.get("fit", "converged"), Some("true"));
}

#[test]
fn null_fit_on_the_bundled_data() {
    let r = report(&ascertain(&["fit", "--fixture", "nvdrs", "--variant", "incomplete-null-theta"]));
    assert!((parameter(&r, "alpha_DC") + 0.110).abs() <= 0.002);
    assert!((parameter(&r, "alpha_CME") + 0.972).abs() <= 0.002);
    assert_eq!(parameter(&r, "theta"), 0.0);
    assert!((parameter(&r, "gamma_exposed") - 625.0).abs() <= 1.0);
    assert!((parameter(&r, "gamma_unexposed") - 508.0).abs() <= 1.0);
}

#[test]
fn bad_membership_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "exposure,a,b,c\nE,1,0,1\nU,0,1,10x\n").unwrap();
    let out = ascertain(&["fit", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let out = ascertain(&["fit", "--input", "/nonexistent/cases.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_group_label_is_a_validation_error() {
    let out = ascertain(&["fit", "--fixture", "nvdrs", "--exposed", "X"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn complete_variant_on_incomplete_tables_is_rejected() {
    let out = ascertain(&["fit", "--fixture", "nvdrs", "--variant", "complete-free-theta"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn loglinear_selection_and_completion() {
    let dir = tempfile::tempdir().unwrap();
    let completed = dir.path().join("completed.csv");
    let r = report(&ascertain(&["loglinear", "--fixture", "nvdrs", "--completed", completed.to_str().unwrap()]));
    assert_eq!(r.get("completed", "missing_exposed"), Some("85"));
    assert_eq!(r.get("completed", "missing_unexposed"), Some("63"));
    assert_eq!(r.get("completed", "total_exposed"), Some("593"));
    assert_eq!(r.get("completed", "total_unexposed"), Some("476"));
    assert!(!r.get("selection", "selected").unwrap().contains("DC:LE"));

    // the completed tables feed straight back into a complete-data fit
    let fit = report(&ascertain(&["fit", "--input", completed.to_str().unwrap(), "--lists", "DC,LE,CME"]));
    assert_eq!(fit.get("fit", "variant"), Some("complete-free-theta"));
}

#[test]
fn loglinear_with_the_saturated_model() {
    let r = report(&ascertain(&["loglinear", "--fixture", "nvdrs", "--exclude-saturated", "false"]));
    assert_eq!(r.get("completed", "missing_exposed"), Some("126"));
    assert_eq!(r.get("completed", "missing_unexposed"), Some("84"));
}

#[test]
fn loglinear_without_admissible_model_is_numerical() {
    let out = ascertain(&["loglinear", "--fixture", "nvdrs", "--lower-p", "0.99"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn test_reports_decisions_and_draws() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("test.txt");
    let out = ascertain(&[
        "test", "--fixture", "nvdrs", "--delta", "0.05,0.25", "--seed", "1", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = report_file(&out_path);
    assert_eq!(r.get("bootstrap", "replicates"), Some("1500"));
    let (header, rows) = r.table("decisions").unwrap();
    assert_eq!(header, ["delta", "reject_h0", "reject_plus", "reject_minus"]);
    assert_eq!(rows[0][1..], ["false", "false", "false"]);
    assert_eq!(rows[1][1..], ["false", "true", "true"]);
    let draws = std::fs::read_to_string(dir.path().join("test.txt.draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 1501);
    assert_eq!(draws.lines().next(), Some("draw,theta_hat"));
}

#[test]
fn test_output_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        let out = ascertain(&[
            "--threads", threads, "test", "--fixture", "nvdrs", "--bootstrap", "10", "--seed", "7", "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (std::fs::read(&path).unwrap(), std::fs::read(dir.path().join(format!("{name}.draws.csv"))).unwrap())
    };
    let a = run("a.txt", "1");
    let b = run("b.txt", "1");
    let c = run("c.txt", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn test_rejects_bad_alpha() {
    assert_eq!(code(&ascertain(&["test", "--fixture", "nvdrs", "--alpha", "0.7"])), 2);
    assert_eq!(code(&ascertain(&["test", "--fixture", "nvdrs", "--delta=-0.1"])), 2);
}

#[test]
fn simulate_rejects_zero_replicates() {
    assert_eq!(code(&ascertain(&["simulate", "--preset", "bias", "--replicates", "0"])), 2);
}

#[test]
fn simulate_bias_preset() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bias.csv");
    let r = report(&ascertain(&[
        "simulate", "--preset", "bias", "--replicates", "5", "--csv", csv.to_str().unwrap(),
    ]));
    let (header, rows) = r.table("results").unwrap();
    assert_eq!(header[..2], ["lists", "theta"]);
    assert_eq!(rows.len(), 15);
    assert_eq!(r.get("config", "theta_applies_to"), Some("unexposed"));
    assert!(r.section("note").is_some());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 16);
}

#[test]
fn simulate_estimator_preset() {
    let r = report(&ascertain(&["simulate", "--preset", "estimators", "--replicates", "3"]));
    let (_, rows) = r.table("results").unwrap();
    // two shifts with nine parameters each
    assert_eq!(rows.len(), 18);
}

#[test]
fn simulate_config_needs_a_study() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.toml");
    std::fs::write(
        &path,
        "gamma_exposed = 500.0\ngamma_unexposed = 500.0\nalpha = 0.5\nlists = [3]\nthetas = [0.0]\nreplicates = 2\n",
    )
    .unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(code(&ascertain(&["simulate", "--config", p])), 2);
    let r = report(&ascertain(&["simulate", "--config", p, "--study", "bias"]));
    assert_eq!(r.table("results").unwrap().1.len(), 1);
}

#[test]
fn probabilities_at_zero_parameters_are_uniform() {
    let r = report(&ascertain(&["probs", "--strengths", "0,0,0", "--interactions", "0,0,0", "--theta", "0"]));
    let (_, rows) = r.table("cell_probabilities").unwrap();
    assert_eq!(rows.len(), 8);
    for row in rows {
        for v in &row[1..] {
            assert!((v.parse::<f64>().unwrap() - 0.125).abs() < 1e-12);
        }
    }
}

#[test]
fn probabilities_from_a_fit_report() {
    let dir = tempfile::tempdir().unwrap();
    let fit_path = dir.path().join("fit.txt");
    assert_eq!(code(&ascertain(&["fit", "--fixture", "nvdrs", "--out", fit_path.to_str().unwrap()])), 0);
    let fit = report_file(&fit_path);
    let r = report(&ascertain(&["probs", "--from-report", fit_path.to_str().unwrap(), "--delta", "0.1"]));
    let (_, rows) = r.table("cell_probabilities").unwrap();
    let missing = rows.iter().find(|row| row[0] == "000").unwrap();
    let p0: f64 = missing[1].parse().unwrap();
    let reported = fit.get_f64("fit", "miss_probability_exposed").unwrap();
    assert!((p0 - reported).abs() < 1e-12);
    let sum: f64 = rows.iter().map(|row| row[4].parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn probabilities_need_interactions_for_the_dynamic_model() {
    assert_eq!(code(&ascertain(&["probs", "--strengths", "0,0,0", "--theta", "0"])), 2);
    let r = report(&ascertain(&["probs", "--strengths", "0,0,0", "--theta", "0", "--model", "independent"]));
    assert_eq!(r.get("config", "model"), Some("independent"));
}
