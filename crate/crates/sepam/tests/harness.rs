use sepam::error::Error;
use sepam::harness::*;
use std::path::{Path, PathBuf};
use std::process::Command;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(text: &str, out: &Path) -> ScenarioConfig {
    let mut c = ScenarioConfig::from_toml(text).unwrap();
    c.output = out.to_path_buf();
    c
}

const COMPARISON: &str = r#"
scenario = "comparison_suite"
seed = 3
output = "unused"

[params]
d = 1
l = 6
rhos = [0.3, 0.5, 0.7]
t = 1.0
"#;

const SWEEP: &str = r#"
scenario = "kappa_sweep"
output = "unused"

[params]
d = 1
l = 6
rho = 0.5
kappas = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
p_list = [1, 2]
sector = 3
"#;

#[test]
fn schema_errors() {
    let empty_grid = r#"
scenario = "intermittency_kappa0"
output = "x"
[params]
d = 1
l = 8
rho = 0.5
p_list = [1, 2]
t_grid = []
"#;
    assert!(matches!(
        ScenarioConfig::from_toml(empty_grid),
        Err(Error::Schema(_))
    ));
    let unknown = "scenario = \"nope\"\noutput = \"x\"\n[params]\n";
    assert!(matches!(
        ScenarioConfig::from_toml(unknown),
        Err(Error::Schema(_))
    ));
    let missing = "scenario = \"exact_vs_mc\"\noutput = \"x\"\ntrials = 100\n[params]\nd = 1\n";
    assert!(matches!(
        ScenarioConfig::from_toml(missing),
        Err(Error::Schema(_))
    ));
    let few = "scenario = \"exact_vs_mc\"\noutput = \"x\"\ntrials = 1\n[params]\nd = 1\nl = 4\nrho = 0.5\nkappa = 1.0\np = 1\nt = 1.0\n";
    assert!(matches!(
        ScenarioConfig::from_toml(few),
        Err(Error::Schema(_))
    ));
    let stray = "scenario = \"comparison_suite\"\noutput = \"x\"\ncolour = 1\n[params]\n";
    assert!(ScenarioConfig::from_toml(stray).is_err());
}

#[test]
fn shipped_configs_validate() {
    let mut seen = vec![];
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let c = ScenarioConfig::load(&path).unwrap();
        assert!(SCENARIOS.contains(&c.scenario.as_str()));
        seen.push(c.scenario);
    }
    seen.sort();
    let mut all: Vec<String> = SCENARIOS.iter().map(|s| s.to_string()).collect();
    all.sort();
    assert_eq!(seen, all);
}

#[test]
fn config_round_trip() {
    let c = ScenarioConfig::from_toml(SWEEP).unwrap();
    let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(c, back);
    assert_eq!(c.seed, 1);
    assert_eq!(c.thresholds.sigma, 3.0);
}

#[test]
fn comparison_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&config(COMPARISON, dir.path())).unwrap();
    assert!(r.pass, "{:?}", r.checks);
    assert!(!r.tables.is_empty());
}

#[test]
fn kappa_sweep_passes_and_emits_figures() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&config(SWEEP, dir.path())).unwrap();
    assert!(r.pass, "{:?}", r.checks);
    let t = r.table("lambda_p").unwrap();
    assert_eq!(t.columns, ["kappa", "p", "lambda", "ci", "residual"]);
    assert_eq!(t.rows.len(), 18);
    let files = emit_figures_data(&r, &dir.path().join("fig")).unwrap();
    assert_eq!(files.len(), 2);
    let rows = parse_figure(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(rows.len(), 9);
    let p1: Vec<&Vec<f64>> = t.rows.iter().filter(|r| r[1] == 1.0).collect();
    for (a, b) in rows.iter().zip(p1) {
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[2]);
        // d = 1 is recurrent: no asymptote
        assert!(a[3].is_nan());
    }
    // λ₁ decreasing in κ on the sector
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1] + 1e-9));
}

#[test]
fn asymptote_values() {
    let g4 = sepam::lattice::green_srw(4).unwrap();
    assert!((asymptote(4, 0.5, 1.0) - (0.5 + 0.25 * g4 / 8.0)).abs() < 1e-15);
    assert!(asymptote(4, 0.5, 0.0).is_nan());
    assert!(asymptote(2, 0.5, 1.0).is_nan());
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&config(COMPARISON, dir.path())).unwrap();
    let files = emit_figures_data(&r, dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text, format!("{FIGURE_HEADER}\n"));
    assert!(parse_figure(&text).unwrap().is_empty());
    assert!(parse_figure("a\tb\n").is_err());
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
scenario = "exact_vs_mc"
seed = 5
trials = 2000
output = "unused"
[params]
d = 1
l = 6
rho = 0.5
kappa = 0.5
p = 1
t = 1.0
"#;
    let c = config(text, dir.path());
    let a = run_scenario(&c).unwrap();
    let b = run_scenario(&c).unwrap();
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.checks, b.checks);
    let json = Report::from_json(&a.to_json()).unwrap();
    assert_eq!(json.tables, a.tables);
}

#[test]
fn writes_stay_in_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let r = run_scenario(&config(COMPARISON, &out)).unwrap();
    let path = r.write().unwrap();
    assert_eq!(path, out.join("report.json"));
    let listed: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(listed, vec![std::ffi::OsString::from("nested")]);
}

#[test]
fn cli_run_validate_and_figures() {
    let bin = env!("CARGO_BIN_EXE_sepam");
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("kappa_sweep.toml");
    let v = Command::new(bin)
        .args(["validate"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(v.status.success());
    let out = dir.path().join("sweep");
    let r = Command::new(bin)
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = out.join("report.json");
    assert!(report.exists());
    let f = Command::new(bin)
        .arg("figures")
        .arg(&report)
        .arg("--out")
        .arg(dir.path().join("fig"))
        .output()
        .unwrap();
    assert!(f.status.success());
    assert!(dir.path().join("fig/kappa_sweep_p1.tsv").exists());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "scenario = \"nope\"\noutput = \"x\"\n[params]\n").unwrap();
    let e = Command::new(bin)
        .arg("validate")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(e.status.code(), Some(2));
}
