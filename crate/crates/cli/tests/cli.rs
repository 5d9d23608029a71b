use rwre_cli::manifest::{read_manifest, sha256};
use serde_json::Value;
use std::path::Path;
use std::process::Command;

fn rwre(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rwre")).args(args).current_dir(cwd).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SMALL_CLT: [&str; 6] = ["--set", "clt.n=[100]", "--set", "clt.samples=400", "--seed", "5"];

#[test]
fn passing_run_exits_zero_and_digests_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = rwre(&["cutoff", "--set", "cutoff.instances=4", "-o", "run"], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("PASS cutoff-inequality"));
    let m = read_manifest(&dir.path().join("run/manifest.json")).unwrap();
    assert_eq!(m.config.seed, 0);
    assert!(!m.outputs.is_empty());
    for f in &m.outputs {
        let bytes = std::fs::read(dir.path().join("run").join(&f.path)).unwrap();
        assert_eq!(sha256(&bytes), f.sha256, "{}", f.path);
        assert_eq!(bytes.len() as u64, f.bytes);
    }
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["clt", "--set", "clt.expected-diagonal=5.0", "-o", "run"];
    args.extend(SMALL_CLT);
    let (code, out, _) = rwre(&args, dir.path());
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("FAIL diagonal"));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "checks-failed");
    assert!(m["failed_checks"].as_array().unwrap().iter().any(|c| c == "diagonal"));
}

#[test]
fn bad_config_exits_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = rwre(&["phi", "--set", "phi.env-seeds=\"many\""], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("phi.env-seeds"), "{err}");
    let (code, _, err) = rwre(&["mp", "--set", "env={kind=\"uniform-srw\"}"], dir.path());
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = rwre(&["perc", "--dim", "7"], dir.path());
    assert_eq!(code, 1);
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "experiment = \"perc-stats\"\nseed = 3\n[perc]\np-open = 0.2\nsamples = 2000\ngrid = [0, 2, 4]\n",
    )
    .unwrap();
    let (code, out, err) = rwre(&["perc", "-c", "run.toml", "--set", "perc.grid=[0, 2]", "-o", "run"], dir.path());
    assert!(code == 0 || code == 2, "{out}{err}");
    let m = read_manifest(&dir.path().join("run/manifest.json")).unwrap();
    assert_eq!(m.config.seed, 3);
    let q = std::fs::read_to_string(dir.path().join("run/q.csv")).unwrap();
    assert_eq!(q.lines().count(), 3, "{q}");

    // the file names a different experiment
    let (code, _, err) = rwre(&["phi", "-c", "run.toml"], dir.path());
    assert_eq!(code, 1, "{err}");
}

#[test]
fn replay_reports_identical_and_itemizes_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["clt", "-o", "run"];
    args.extend(SMALL_CLT);
    let (code, out, err) = rwre(&args, dir.path());
    assert_eq!(code, 0, "{out}{err}");

    let (code, out, _) = rwre(&["replay", "run/manifest.json"], dir.path());
    assert_eq!(code, 0, "{out}");
    let rep: Value = serde_json::from_str(&out).unwrap();
    assert!(rep["diverged"].as_array().unwrap().is_empty());

    // a tampered seed changes the walks
    let path = dir.path().join("run/manifest.json");
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["config"]["seed"] = 6.into();
    std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    let (code, out, _) = rwre(&["replay", "run/manifest.json", "-o", "again"], dir.path());
    assert_eq!(code, 2, "{out}");
    let rep: Value = serde_json::from_str(&out).unwrap();
    let diverged: Vec<&str> = rep["diverged"].as_array().unwrap().iter().map(|d| d["path"].as_str().unwrap()).collect();
    assert!(diverged.contains(&"covariance.csv"), "{diverged:?}");

    // a manifest from another schema is refused
    m["artifact"]["schema_version"] = 999.into();
    std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    let (code, _, err) = rwre(&["replay", "run/manifest.json"], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("schema"), "{err}");
}

#[test]
fn generated_env_feeds_the_stationary_solver() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["gen-env", "--seed", "7", "--set", "gen-env.radius=8"];
    let (code, out, err) = rwre(&[&gen[..], &["-o", "a"]].concat(), dir.path());
    assert_eq!(code, 0, "{out}{err}");
    let (code, ..) = rwre(&[&gen[..], &["-o", "b"]].concat(), dir.path());
    assert_eq!(code, 0);
    let digests = |d: &str| read_manifest(&dir.path().join(d).join("manifest.json")).unwrap().outputs;
    assert_eq!(digests("a"), digests("b"));

    let (code, out, err) = rwre(&["stationary", "--set", "stationary.env-file=\"a/env.csv\"", "--set", "stationary.n=[4]", "-o", "phi"], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    let csv = std::fs::read_to_string(dir.path().join("phi/phi_N4.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 81);
    for r in rows {
        let phi: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((phi - 1.0).abs() < 1e-10, "{r}");
    }
    let m = read_manifest(&dir.path().join("phi/manifest.json")).unwrap();
    assert_eq!(m.inputs.len(), 1);
}
