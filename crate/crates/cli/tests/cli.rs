use std::path::Path;
use std::process::{Command, Output};

fn refuel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refuel"))
        .args(args)
        .env_remove("REFUEL_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{"mdp": {{"kind": "covariate-shift", "seed": 2}},
            "methods": ["refuel", "lt-offline", "pmd-exact"],
            "iterations": 3, "samples": 40, "eta": 1.0, "seed": 11,
            "winrate_samples": 100, "output_dir": {:?}}}"#,
        out.to_str().unwrap()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            (
                e.path().strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn check_reports_json_and_is_reproducible() {
    let a = refuel(&["check", "--seed", "4"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = refuel(&["check", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("\"passed\": true"));
    for name in [
        "prop2_counterexample",
        "performance_difference",
        "regret_bound",
        "variance_identity",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn gen_mdp_emits_valid_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let o = refuel(&[
        "gen-mdp",
        "random",
        "--horizon",
        "3",
        "--states",
        "4",
        "--actions",
        "2",
        "--branching",
        "2",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"horizon\": 3"));
    let stdout = refuel(&[
        "gen-mdp",
        "random",
        "--horizon",
        "3",
        "--states",
        "4",
        "--actions",
        "2",
        "--branching",
        "2",
        "--seed",
        "5",
    ]);
    assert_eq!(stdout.stdout, text.as_bytes());

    let refp = dir.path().join("ref.json");
    let o = refuel(&[
        "gen-mdp",
        "covariate-shift",
        "--seed",
        "1",
        "--reference-out",
        refp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("covariate-shift"));
    assert!(std::fs::read_to_string(&refp).unwrap().contains("tabular"));

    let bad = refuel(&[
        "gen-mdp",
        "random",
        "--horizon",
        "2",
        "--states",
        "2",
        "--actions",
        "2",
        "--branching",
        "3",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg = write_config(dir.path(), &out_a);
    let o = refuel(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = files_under(&out_a);
    let o = refuel(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, files_under(&out_a));
    // the output location does not leak into the artifacts
    let o = refuel(&["run", "--config", cfg.to_str().unwrap(), "--output-dir", out_b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, files_under(&out_b));
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for f in [
        "comparison.csv",
        "mdp.json",
        "base_policy.json",
        "refuel/metrics.csv",
        "lt-offline/summary.json",
        "pmd-exact/policy.json",
    ] {
        assert!(names.contains(&f), "{f} in {names:?}");
    }
}

#[test]
fn seed_flag_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base");
    let cfg = write_config(dir.path(), &base);
    assert_eq!(refuel(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let env_dir = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_refuel"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--seed", "12"])
        .env("REFUEL_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let a = std::fs::read(base.join("refuel/metrics.csv")).unwrap();
    let b = std::fs::read(env_dir.join("refuel/metrics.csv")).unwrap();
    assert_ne!(a, b);
    // pmd-exact consumes no randomness for training
    assert_eq!(
        std::fs::read(base.join("pmd-exact/policy.json")).unwrap(),
        std::fs::read(env_dir.join("pmd-exact/policy.json")).unwrap()
    );
}

#[test]
fn compare_from_dir_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), &out);
    let o = refuel(&["compare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("method,iterations,J,KL,mean_residual,winrate_h1,winrate_h2,winrate_h3"));
    let o = refuel(&["compare", "--dir", out.to_str().unwrap()]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
    let empty = refuel(&["compare", "--dir", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(empty.status.code(), Some(3));
}

#[test]
fn exit_codes_for_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"mdp": {"kind": "covariate-shift", "seed": 0}, "methods": [], "iterations": 1, "samples": 1, "eta": 1.0, "seed": 0, "output_dir": "x"}"#).unwrap();
    assert_eq!(refuel(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(refuel(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(
        refuel(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    // an output directory beneath a regular file cannot be created
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(dir.path(), &blocker.join("sub"));
    assert_eq!(refuel(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(refuel(&["no-such-command"]).status.code(), Some(2));
}
