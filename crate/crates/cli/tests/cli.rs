//! End-to-end checks of the binary: exit codes, outputs and replays.

use std::path::Path;
use std::process::{Command, Output};

use tempered_hermite::kernels::HermiteParams;
use tempered_hermite::moments::cov_hermite;
use tempered_hermite::quadrature::QuadratureSpec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tempered-hermite"));
    c.env_remove("TEMPERED_HERMITE_THREADS");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no '{key}' line in:\n{text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn cov_matches_library_to_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cov", "--t", "1", "--s", "1", "--k", "2", "--H", "0.75", "--lambda", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = HermiteParams::from_hurst(2, 0.75, 1.0).unwrap();
    let lib = cov_hermite(1.0, 1.0, &p, &QuadratureSpec::default()).unwrap();
    assert_eq!(field(&stdout(&o), "value"), lib);
}

#[test]
fn cov_at_zero_time_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cov", "--t", "0", "--s", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(field(&stdout(&o), "value"), 0.0);
}

#[test]
fn cov_writes_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cov", "--t", "0.5", "--s", "1", "--out", "c.csv"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,s,k,H,lambda,beta,normalized,value,error");
    assert_eq!(lines.next().unwrap().split(',').count(), 9);
    assert!(dir.path().join("c.csv.manifest").exists());
}

#[test]
fn invalid_hurst_exits_2_naming_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cov", "--H", "0.4"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("(1/2, 1)"), "{}", stderr(&o));
}

#[test]
fn cumulant_order_two_equals_variance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cumulants", "--m-max", "2", "--oracle-cells", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "2");
    let c2: f64 = row[1].parse().unwrap();
    let p = HermiteParams::from_hurst(2, 0.75, 1.0).unwrap();
    let var = cov_hermite(1.0, 1.0, &p, &QuadratureSpec::default()).unwrap();
    assert!((c2 - var).abs() < 1e-6 * var, "{c2} vs {var}");
}

#[test]
fn cumulant_order_five_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cumulants", "--m-max", "5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_zero_reps_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["simulate", "--reps", "0", "--out", "s"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_tail_bound_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tail.toml"),
        "[grid]\nmax_left_extent = 0.5\ntail_fraction = 1e-12\n",
    )
    .unwrap();
    let o = run_in(dir.path(), &["--config", "tail.toml", "simulate", "--reps", "10", "--out", "s"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn simulate_variance_within_se_of_discrete_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["simulate", "--reps", "4000", "--seed", "11", "--n-right", "128", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split('\t').map(|x| x.parse().unwrap()).collect();
        let (sample, se, discrete) = (v[1], v[2], v[3]);
        assert!((sample - discrete).abs() < 4.0 * se, "{line}");
    }
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4001);
    assert_eq!(csv.lines().next().unwrap(), "0,0.25,0.5,0.75,1");
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--reps", "50", "--seed", "3", "--n-right", "64", "--binary", "true"];
    let mut a = args.to_vec();
    a.extend(["--out", "a"]);
    let mut b = args.to_vec();
    b.extend(["--out", "b"]);
    assert_eq!(code(&run_in(dir.path(), &a)), 0);
    assert_eq!(code(&run_in(dir.path(), &b)), 0);
    for ext in ["csv", "bin"] {
        let x = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let y = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(x, y, "{ext}");
    }
}

#[test]
fn verify_unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify", "--suite", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_lemma_int_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify", "--suite", "lemma-int", "--out", "v.txt"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = std::fs::read_to_string(dir.path().join("v.txt")).unwrap();
    assert!(text.starts_with("PASS criterion 1"));
}

#[test]
fn verify_scaling_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify", "--suite", "scaling"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn verify_failure_exits_1() {
    // the small-argument clause at nu = 0.125 is not attainable at 1%
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify", "--suite", "specfun"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL criterion  2"));
}

#[test]
fn regress_kappa_violation_names_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["regress", "--kappa", "0.5", "--out", "r"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("H1/2"), "{}", stderr(&o));
}

#[test]
fn regress_single_seed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["regress", "--seeds", "1", "--ns", "256", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[3], "0");
        assert_eq!(cols[5], "1");
    }
}

#[test]
fn regress_default_medians_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["regress", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("monotone\ttrue"));
    let manifest = std::fs::read_to_string(dir.path().join("r.manifest")).unwrap();
    assert!(manifest.contains("l_R"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[params]\nH = 0.8\n[cov]\nt = 0.5\ns = 0.5\n").unwrap();
    let file = run_in(dir.path(), &["--config", "c.toml", "cov"]);
    let flag = run_in(dir.path(), &["--config", "c.toml", "cov", "--H", "0.75", "--t", "1", "--s", "1"]);
    let p8 = HermiteParams::from_hurst(2, 0.8, 1.0).unwrap();
    let p75 = HermiteParams::from_hurst(2, 0.75, 1.0).unwrap();
    let spec = QuadratureSpec::default();
    assert_eq!(field(&stdout(&file), "value"), cov_hermite(0.5, 0.5, &p8, &spec).unwrap());
    assert_eq!(field(&stdout(&flag), "value"), cov_hermite(1.0, 1.0, &p75, &spec).unwrap());
}

#[test]
fn unknown_config_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[bogus]\nx = 1\n").unwrap();
    let o = run_in(dir.path(), &["--config", "c.toml", "cov"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_thread_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(dir.path())
        .env("TEMPERED_HERMITE_THREADS", "many")
        .args(["cov"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_detects_tampered_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["simulate", "--reps", "20", "--n-right", "32", "--out", "s"]);
    assert_eq!(code(&o), 0);
    let ok = run_in(dir.path(), &["replay", "--manifest", "s.manifest"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let text = std::fs::read_to_string(dir.path().join("s.manifest")).unwrap();
    let mut manifest: toml::Table = toml::from_str(&text).unwrap();
    // the job table carries the seed that drives the replay
    manifest["job"]["seed"] = toml::Value::Integer(2);
    let tampered = toml::to_string(&manifest).unwrap();
    std::fs::write(dir.path().join("t.manifest"), tampered).unwrap();
    let bad = run_in(dir.path(), &["replay", "--manifest", "t.manifest"]);
    assert_eq!(code(&bad), 1, "{}", stdout(&bad));
}
