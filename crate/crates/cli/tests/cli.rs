use std::path::Path;
use std::process::{Command, Output};

fn harvest(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_harvest"));
    c.args(args).env_remove("HARVEST_OUT_DIR");
    if let Some(d) = out_env {
        c.env("HARVEST_OUT_DIR", d);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
experiment_id = "small"
scenario = "single-node"
policies = ["greedy", "TO"]
replications = 2
horizon = 5000
[sweep]
points = [0.4, 0.8]
[rate]
kind = "log"
[arrivals]
dist = "exponential"
[harvest]
dist = "exponential"
mean = 1.0
"#;

#[test]
fn list_shows_every_bundled_experiment() {
    let o = harvest(&["list"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["fig2", "fig3", "fig4", "fig7", "fig8", "orth3", "csma10"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing:\n{text}");
    }
    assert!(text.contains("WF, MWF stable for E[X]<0.70"));
    assert_eq!(text.matches("schema v1").count(), 7);
}

#[test]
fn validate_reports_named_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let o = harvest(&["validate", empty.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing scenario"), "{}", stderr(&o));

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, SMALL.replace("horizon", "horizn")).unwrap();
    let o = harvest(&["validate", typo.to_str().unwrap()], None);
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));

    let o = harvest(&["validate", "fig8"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("fig8: ok"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(harvest(&["run", cfg, "--seed", "3", "--out", a.to_str().unwrap()], None).status.success());
    // Output directory from the environment.
    assert!(harvest(&["run", cfg, "--seed", "3"], Some(&b)).status.success());
    let csv_a = std::fs::read_to_string(a.join("small.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.join("small.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], "# harvest-results schema=1");
    assert_eq!(
        lines[1],
        "experiment_id,policy,E[X],replication,mean_q,mean_delay,verdict,wasted_energy_rate,drop_rate,runtime"
    );
    assert_eq!(lines.len(), 2 + 2 * 2 * 2);
    assert!(lines[2].starts_with("small,greedy,0.4,0,"));
    assert!(lines[2].ends_with(",5000"));
    assert!(!csv_a.contains('\r'));

    let manifest = std::fs::read_to_string(a.join("small.manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"ok\""));
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("rows = 8"));
    let hash = harvest_cli::run::config_hash(SMALL);
    assert!(manifest.contains(&format!("config_sha256 = \"{hash}\"")));

    // A different seed changes the numbers.
    let c = dir.path().join("c");
    harvest(&["run", cfg, "--seed", "4", "--out", c.to_str().unwrap()], None);
    assert_ne!(csv_a, std::fs::read_to_string(c.join("small.csv")).unwrap());
}

#[test]
fn csma_writes_a_companion_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = harvest_cli::catalog::bundled_source("csma10")
        .unwrap()
        .replace("replications = 10", "replications = 1")
        .replace("points = [0.05, 0.1, 0.15, 0.17, 0.2, 0.25]", "points = [0.1]")
        .replace("target_mean_backoff = 1.55", "target_mean_backoff = 1.55\ncalibration_draws = 10000");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = harvest(
        &["run", cfg.to_str().unwrap(), "--horizon", "2000", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let comp = std::fs::read_to_string(out.join("csma10_csma.csv")).unwrap();
    let lines: Vec<&str> = comp.lines().collect();
    assert_eq!(lines[0], "# harvest-csma schema=1");
    assert!(lines[1].starts_with("experiment_id,policy,E[X],replication,loss_probability,collision_rate,airtime_0,"));
    assert!(lines[1].ends_with("airtime_9"));
    assert_eq!(lines.len(), 2 + 4);
    let main = std::fs::read_to_string(out.join("csma10.csv")).unwrap();
    assert!(main.lines().nth(2).unwrap().contains(",na,"));
}

#[test]
fn failures_leave_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    // Arrivals land off the 0.7 grid, which only shows when the MDP is built.
    let text = r#"
experiment_id = "broken"
scenario = "single-node"
policies = ["greedy", "OP"]
horizon = 1000
[sweep]
points = [0.5]
[rate]
kind = "linear"
gamma = 1.0
[arrivals]
dist = "truncated-poisson"
cap = 5
[harvest]
dist = "truncated-poisson"
cap = 5
mean = 1.0
[buffers]
data_cap = 49.0
energy_cap = 49.0
q_step = 0.7
e_step = 0.7
"#;
    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = harvest(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success());
    let csv = std::fs::read_to_string(out.join("broken.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("# FAILED:"), "{csv}");
    let manifest = std::fs::read_to_string(out.join("broken.manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"failed\""));
    assert!(manifest.contains("not a multiple of the grid step"), "{manifest}");
}

#[test]
fn mdp_solve_exports_policy_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = harvest_cli::catalog::bundled_source("fig2")
        .unwrap()
        .replace("data_cap = 50.0", "data_cap = 10.0")
        .replace("energy_cap = 50.0", "energy_cap = 10.0");
    let cfg = dir.path().join("f.toml");
    std::fs::write(&cfg, text).unwrap();
    let o = harvest(
        &["mdp-solve", cfg.to_str().unwrap(), "--arrival", "0.5", "--out", dir.path().to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("average cost"));
    let file = std::fs::File::open(dir.path().join("fig2_policy_EX0.5.csv")).unwrap();
    let table = harvest_core::mdp::read_policy_csv(std::io::BufReader::new(file)).unwrap();
    assert_eq!((table.q_levels, table.e_levels), (11, 11));

    let o = harvest(&["mdp-solve", "fig4"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no OP policy"));
}
