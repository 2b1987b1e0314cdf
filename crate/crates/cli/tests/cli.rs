use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_branchflow"));
    c.env_remove("BRANCHFLOW_THREADS");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_FIELD: &str = r#"
mode = "field"
rule = "kpp"
scaling = "unit"
beta = [0.1]
n_trees = [0]
t = 0.1
x = 0.0

[f]
family = "constant"
value = 0.5
"#;

#[test]
fn psi_prints_the_kpp_nonlinearity() {
    let o = bin().args(["psi", "--config"]).arg(config("psi_kpp.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("psi = u^2 - u"), "{}", stdout(&o));
}

#[test]
fn psi_without_config_uses_flags() {
    let o = bin().args(["psi", "--rule", "power-alpha", "--alpha", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("psi = u^2"), "{}", stdout(&o));
}

#[test]
fn inadmissible_alpha_is_rejected_with_exit_1() {
    let o = bin().args(["validate-rule", "--config"]).arg(config("validate_alpha_2_5.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let all = stdout(&o) + &stderr(&o);
    assert!(all.contains("positivity"), "{all}");
}

#[test]
fn zero_trees_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, SMALL_FIELD).unwrap();
    let o = bin().arg("run").arg("--config").arg(&p).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_trees"), "{}", stderr(&o));
}

#[test]
fn converge_needs_three_betas() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    let text = SMALL_FIELD
        .replace("mode = \"field\"", "mode = \"converge-beta\"")
        .replace("beta = [0.1]", "beta = [0.2, 0.1]")
        .replace("n_trees = [0]", "n_trees = [100]")
        + "\n[oracle]\nkind = \"limit\"\n";
    std::fs::write(&p, text).unwrap();
    let o = bin().arg("converge").arg("--config").arg(&p).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bin().args(["run", "--no-such-flag"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_env_unless_flag_given() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_threads = |out: &Path| {
        let text = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        text.lines().find_map(|l| l.strip_prefix("threads = ")).unwrap().to_string()
    };

    let a = dir.path().join("env");
    let o = bin()
        .env("BRANCHFLOW_THREADS", "3")
        .arg("run")
        .arg("--config")
        .arg(config("linear_baseline.toml"))
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(manifest_threads(&a), "3");

    let b = dir.path().join("flag");
    let o = bin()
        .env("BRANCHFLOW_THREADS", "3")
        .args(["run", "--threads", "2", "--config"])
        .arg(config("linear_baseline.toml"))
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(manifest_threads(&b), "2");
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
}
