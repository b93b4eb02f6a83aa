use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
horizon = 1.0

[grid]
lo = -7.0
hi = 7.0
n = 128

[mu]
family = "gaussian"
mean = 0.0
var = 1.0

[nu]
family = "double_well"
height = 1.0
separation = 1.5

[simulation]
dt = 0.002
n_paths = 400
ladder = 10

[htransform]
n_paths = 4000
bins = 8

[lsi]
n_tests = 10

[tolerances]
tv = 0.2
"#;

fn bridgecert(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridgecert"))
        .args(args)
        .current_dir(dir)
        .env_remove("BRIDGECERT_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn list_checks_names_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bridgecert(&["list-checks"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for c in bridgecert_cli::checks::CHECKS {
        assert!(text.contains(c.id), "{}", c.id);
    }
}

#[test]
fn usage_errors_exit_64() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bridgecert(&["frobnicate"], tmp.path()).status.code(), Some(64));
    assert_eq!(bridgecert(&["run"], tmp.path()).status.code(), Some(64));
    assert_eq!(bridgecert(&["run", "missing.toml"], tmp.path()).status.code(), Some(64));
    let bad = write(tmp.path(), "bad.toml", "name = \"x\"\nhorizon = \"soon\"\n");
    assert_eq!(bridgecert(&["run", &bad], tmp.path()).status.code(), Some(64));
    let typo = write(tmp.path(), "typo.toml", &SMALL.replace("var = 1.0", "varience = 1.0"));
    assert_eq!(bridgecert(&["run", &typo], tmp.path()).status.code(), Some(64));
    assert_eq!(bridgecert(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bridgecert"))
        .arg("list-checks")
        .env("BRIDGECERT_THREADS", "many")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = Command::new(env!("CARGO_BIN_EXE_bridgecert"))
        .arg("list-checks")
        .env("BRIDGECERT_THREADS", "1")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write(tmp.path(), "small.toml", SMALL);
    let out = bridgecert(&["run", &scenario, "--out", "results"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("results/small");
    for f in ["report.json", "timings.json", "gamma.csv", "martingale.csv", "lsi_ratios.csv", "alpha_iterates.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.join("gamma.csv")).unwrap();
    assert!(csv.starts_with("t,mean,stderr,n\n"));
    assert_eq!(csv.lines().count(), 12);
    let first = std::fs::read(dir.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["scenario_sha256"], bridgecert_cli::scenario::digest(SMALL));

    let again = bridgecert(&["run", &scenario, "--out", "results"], tmp.path());
    assert_eq!(again.status.code(), Some(64));

    let forced = bridgecert(&["run", &scenario, "--out", "results", "--force"], tmp.path());
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(first, std::fs::read(dir.join("report.json")).unwrap());
}

#[test]
fn failed_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[tolerances]\n", "[tolerances]\nresidual = 0.0\n");
    let scenario = write(tmp.path(), "strict.toml", &text);
    let out = bridgecert(&["run", &scenario], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL sinkhorn.residual"));
    assert!(tmp.path().join("out/small/report.json").exists());
}

#[test]
fn solver_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{}\n[sinkhorn]\ntol = 1e-15\nmax_iter = 1\n", SMALL);
    let scenario = write(tmp.path(), "short.toml", &text);
    let out = bridgecert(&["run", &scenario], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("out/small").exists());
}

#[test]
fn table_prints_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let lattice = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/lattice.toml");
    let out = bridgecert(&["table", lattice.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 82);
    assert!(text.starts_with("T,beta_mu,alpha_nu,L,alpha_psi,"));

    let bad = write(tmp.path(), "bad.toml", "T = [1.0]\n");
    assert_eq!(bridgecert(&["table", &bad], tmp.path()).status.code(), Some(64));
    let failing = write(tmp.path(), "neg.toml", "T = [1.0]\nbeta_mu = [1.0]\nalpha_nu = [-1.0]\nL = [0.0]\n");
    assert_eq!(bridgecert(&["table", &failing], tmp.path()).status.code(), Some(2));
}

#[test]
fn bundled_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in ["gaussian_T1", "doublewell_T1", "cosine_T1"] {
        let loaded = bridgecert_cli::scenario::Scenario::load(&dir.join(format!("{name}.toml"))).unwrap();
        assert_eq!(loaded.scenario.name, name);
    }
}
