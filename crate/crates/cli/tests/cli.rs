use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[init.net]
m = 20
[init.collocation]
interior = [300, 300]
interface = 60
boundary = 80
[correction.net]
m_p = 40
[correction.collocation]
interior = [300, 300]
interface = 60
boundary = 80
[metrics]
grid = { nx = 21, ny = 21 }
iteration_grid = { nx = 11, ny = 11 }
trace_samples = 20
"#;

fn qlips(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlips"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("QLIPS_OUT")
        .output()
        .unwrap()
}

fn small_config(dir: &Path, example: &str, extra: &str) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, format!("example = \"{example}\"\n{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn error_record(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("error.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_reports_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "ex1", "");
    let out = tmp.path().join("out");
    let o = qlips(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("relative L2"));
    for f in ["report.json", "residual_history.csv", "errors_table.csv", "heatmap_init.csv", "heatmap_corrected.csv", "interface_trace.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["example"], "ex1");
    assert_eq!(report["config"]["init"]["net"]["m"], 20);
    let history = std::fs::read_to_string(out.join("residual_history.csv")).unwrap();
    assert!(history.starts_with("stage,iteration,residual_norm,relative_change,rank,l2_error"));
    assert!(history.lines().any(|l| l.starts_with("correction,")));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "ex1", "");
    let out = tmp.path().join("out");
    let o = qlips(&["run", "--config", &cfg, "--example", "ex6", "--seed", "5", "--mp", "30", "--no-correction", "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["example"], "ex6");
    assert_eq!(report["config"]["seed"], 5);
    assert_eq!(report["config"]["correction"]["net"]["m_p"], 30);
    assert!(report["correction"].is_null());
    assert!(!out.join("heatmap_corrected.csv").exists());
}

#[test]
fn output_root_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "ex1", "");
    let env_out = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_qlips"))
        .args(["run", "--config", &cfg, "--no-correction"])
        .current_dir(tmp.path())
        .env("RUST_LOG", "warn")
        .env("QLIPS_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_out.join("report.json").is_file());
    assert!(!tmp.path().join("qlips_out").exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qlips(&["run", "--example", "ex9", "--out", "bad"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&tmp.path().join("bad"));
    assert_eq!(rec["error"], "config");
    assert_eq!(rec["exit_code"], 2);

    let cfg = small_config(tmp.path(), "ex1", "[init]\nbogus = 1\n");
    let o = qlips(&["run", "--config", &cfg, "--out", "bad2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&tmp.path().join("bad2"))["error"], "config");
}

#[test]
fn plain_update_divergence_exits_with_code_four() {
    // Without step halving the first full step on the gradient-dependent
    // example overshoots far beyond the divergence guard.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "ex6", "[init.solver]\nstep_halving = false\n");
    let o = qlips(&["run", "--config", &cfg, "--out", "div"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("div");
    assert_eq!(error_record(&dir)["error"], "divergence");
    assert!(dir.join("report.json").is_file());
}

#[test]
fn sweep_aggregates_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "ex1", "");
    let o = qlips(&["sweep", "--config", &cfg, "--axis", "seed", "--values", "1,2", "--jobs", "2", "--out", "sw"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(tmp.path().join("sw/sweep_seed.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows[1].starts_with("1,ok") && rows[2].starts_with("2,ok"), "{table}");
    assert!(tmp.path().join("sw/seed_1/report.json").is_file());
}
