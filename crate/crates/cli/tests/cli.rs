use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use geodid::export::{read_field_csv, write_field_csv};
use geodid::fda::adjusted_rand_index;
use geodid::local::{LocalStatus, SkipReason};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn geodid(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_geodid")).args(args).env_remove("GEODID_JOBS").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) {
    let (code, err) = geodid(args);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

struct Dirs(tempfile::TempDir);

impl Dirs {
    fn new() -> Self {
        Self(tempfile::tempdir().unwrap())
    }

    fn p(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).display().to_string()
    }
}

fn simulate_two_region(d: &Dirs, n: &str) -> String {
    ok(&["simulate", "--preset", "two-region", "--n-units", n, "--seed", "4", "--out", &d.s("sim")]);
    d.s("sim/panel.csv")
}

#[test]
fn simulate_is_reproducible_and_inventoried() {
    let d = Dirs::new();
    ok(&["simulate", "--seed", "9", "--out", &d.s("a")]);
    ok(&["simulate", "--seed", "9", "--out", &d.s("b")]);
    ok(&["simulate", "--seed", "10", "--out", &d.s("c")]);
    let a = digests(&d.p("a"));
    assert_eq!(a.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["panel.csv", "truth.json"]);
    assert_eq!(a, digests(&d.p("b")));
    assert_ne!(a, digests(&d.p("c")));
    for (name, sha) in &a {
        let bytes = fs::read(d.p("a").join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), sha);
    }
    let m = manifest(&d.p("a"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 9);
}

#[test]
fn missing_seed_fails_with_manifest() {
    let d = Dirs::new();
    let (code, err) = geodid(&["simulate", "--out", &d.s("x")]);
    assert_eq!(code, 2);
    assert!(err.contains("--seed"));
    let m = manifest(&d.p("x"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["exit_code"], 2);
    assert!(m["outputs"].as_array().unwrap().is_empty());
}

#[test]
fn seed_may_come_from_config() {
    let d = Dirs::new();
    fs::write(d.p("sim.toml"), "seed = 9\n").unwrap();
    ok(&["simulate", "--config", &d.s("sim.toml"), "--out", &d.s("a")]);
    ok(&["simulate", "--seed", "9", "--out", &d.s("b")]);
    assert_eq!(digests(&d.p("a")), digests(&d.p("b")));
}

#[test]
fn estimate_writes_event_study_table() {
    let d = Dirs::new();
    ok(&["simulate", "--preset", "dynamic", "--seed", "2", "--out", &d.s("sim")]);
    ok(&["estimate", "--panel", &d.s("sim/panel.csv"), "--reps", "99", "--seed", "1", "--out", &d.s("est")]);
    let csv = fs::read_to_string(d.p("est/event_study.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let mut expect: Vec<String> = (-8..=8).map(|e: i64| e.to_string()).collect();
    expect.extend(["PRE_AVG".into(), "POST_AVG".into()]);
    assert_eq!(labels, expect);
    let m = manifest(&d.p("est"));
    assert_eq!(m["results"]["adjustment"], "none");
    assert_eq!(m["seed"], 1);
}

#[test]
fn noiseless_null_panel_estimates_zero() {
    let d = Dirs::new();
    fs::write(
        d.p("cfg.toml"),
        "seed = 5\n[simulate]\nn_units = 200\nnoise_sd = 0.0\nfe_unit_sd = 0.0\nfe_time_sd = 0.0\n",
    )
    .unwrap();
    ok(&["simulate", "--config", &d.s("cfg.toml"), "--out", &d.s("sim")]);
    ok(&["estimate", "--panel", &d.s("sim/panel.csv"), "--reps", "0", "--out", &d.s("est")]);
    let csv = fs::read_to_string(d.p("est/event_study.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let att: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(att.abs() < 1e-12, "{line}");
    }
}

#[test]
fn complete_covariate_row_demands_columns() {
    let d = Dirs::new();
    ok(&["simulate", "--seed", "2", "--out", &d.s("sim")]);
    fs::write(d.p("cfg.toml"), "seed = 1\ncovariates = \"Complete\"\n").unwrap();
    let (code, err) =
        geodid(&["estimate", "--panel", &d.s("sim/panel.csv"), "--config", &d.s("cfg.toml"), "--out", &d.s("est")]);
    assert_eq!(code, 2);
    assert!(err.contains("density"), "{err}");
    assert_eq!(manifest(&d.p("est"))["status"], "failed");
}

#[test]
fn validate_reports_and_rejects() {
    let d = Dirs::new();
    ok(&["simulate", "--seed", "2", "--out", &d.s("sim")]);
    ok(&["validate", "--panel", &d.s("sim/panel.csv"), "--out", &d.s("v")]);
    assert!(d.p("v/validation.json").exists());

    // Everyone treated from period 2 on: no never-treated group.
    let mut rows = vec!["unit_id,period,outcome,treated".to_string()];
    for u in 0..4 {
        for t in 1..=3 {
            rows.push(format!("u{u},{t},0.5,{}", u8::from(t >= 2)));
        }
    }
    fs::write(d.p("bad.csv"), rows.join("\n")).unwrap();
    let (code, _) = geodid(&["validate", "--panel", &d.s("bad.csv"), "--out", &d.s("v2")]);
    assert_eq!(code, 2);
    let (code, _) = geodid(&["estimate", "--panel", &d.s("bad.csv"), "--reps", "0", "--out", &d.s("e2")]);
    assert_eq!(code, 2);
}

#[test]
fn local_output_is_independent_of_job_count() {
    let d = Dirs::new();
    let panel = simulate_two_region(&d, "300");
    for jobs in ["1", "8"] {
        ok(&[
            "local",
            "--panel",
            &panel,
            "--kernel",
            "gaussian",
            "--bandwidth",
            "auto",
            "--jobs",
            jobs,
            "--out",
            &d.s(jobs),
        ]);
    }
    assert_eq!(digests(&d.p("1")), digests(&d.p("8")));
    let m = manifest(&d.p("1"));
    assert!(m["results"]["selected_bandwidth_km"].as_f64().unwrap() > 0.0);
    assert!(digests(&d.p("1")).iter().any(|(n, _)| n == "bandwidth.json"));

    let out = Command::new(env!("CARGO_BIN_EXE_geodid"))
        .args(["local", "--panel", &panel, "--kernel", "gaussian", "--bandwidth", "auto", "--out", &d.s("env")])
        .env("GEODID_JOBS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&d.p("env"))["config"]["args"]["jobs"], 3);
    assert_eq!(digests(&d.p("env")), digests(&d.p("1")));
}

#[test]
fn linear_field_reproduces_regional_split() {
    let d = Dirs::new();
    let panel = simulate_two_region(&d, "1000");
    ok(&["local", "--panel", &panel, "--kernel", "linear", "--out", &d.s("lin")]);
    let truth: Value = serde_json::from_str(&fs::read_to_string(d.p("sim/truth.json")).unwrap()).unwrap();
    let region: std::collections::HashMap<String, String> = truth["units"]
        .as_array()
        .unwrap()
        .iter()
        .map(|u| (u["unit_id"].as_str().unwrap().into(), u["region"].as_str().unwrap().into()))
        .collect();
    let field = read_field_csv(fs::File::open(d.p("lin/field.csv")).unwrap()).unwrap();
    for (name, tau) in [("north", 0.03), ("south", 0.10)] {
        let v: Vec<f64> =
            field.entries.iter().filter(|e| region[&e.unit_id] == name).filter_map(|e| e.post_avg).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - tau).abs() < 0.01, "{name}: {mean}");
    }
    let (code, _) =
        geodid(&["local", "--panel", &panel, "--kernel", "linear", "--bandwidth", "50", "--out", &d.s("bad")]);
    assert_eq!(code, 2);
}

#[test]
fn cluster_recovers_planted_families() {
    let d = Dirs::new();
    ok(&["simulate", "--preset", "families", "--seed", "3", "--out", &d.s("fam")]);
    ok(&[
        "cluster",
        "--field",
        &d.s("fam/field.csv"),
        "--k",
        "3",
        "--select-k",
        "2:6",
        "--seed",
        "3",
        "--out",
        &d.s("c"),
    ]);
    let truth: Value = serde_json::from_str(&fs::read_to_string(d.p("fam/truth.json")).unwrap()).unwrap();
    let planted: Vec<usize> =
        truth["labels"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let labels: Vec<usize> = fs::read_to_string(d.p("c/cluster_labels.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(adjusted_rand_index(&planted, &labels) > 0.9);
    let table = fs::read_to_string(d.p("c/k_selection.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let m = manifest(&d.p("c"));
    assert_eq!(m["results"]["selected_k"], 3);
    let names: Vec<String> = digests(&d.p("c")).into_iter().map(|x| x.0).collect();
    for f in ["k_selection.csv", "cluster_labels.csv", "cluster_profiles.csv", "clusters.geojson", "clusters.json"] {
        assert!(names.iter().any(|n| n == f), "{f}");
    }
    let (code, err) = geodid(&["cluster", "--field", &d.s("fam/field.csv"), "--out", &d.s("c2")]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn all_skipped_field_is_rejected() {
    let d = Dirs::new();
    let panel = simulate_two_region(&d, "200");
    ok(&["local", "--panel", &panel, "--min-mass", "1e9", "--out", &d.s("lin")]);
    assert_eq!(manifest(&d.p("lin"))["results"]["n_ok"], 0);
    let (code, err) = geodid(&["cluster", "--field", &d.s("lin/field.csv"), "--seed", "1", "--out", &d.s("c")]);
    assert_eq!(code, 2);
    assert!(err.contains("no unit"), "{err}");
}

#[test]
fn robustness_reports_and_rejects_disjoint_fields() {
    let d = Dirs::new();
    let panel = simulate_two_region(&d, "300");
    ok(&["local", "--panel", &panel, "--out", &d.s("lin")]);
    let f = d.s("lin/field.csv");
    ok(&["robustness", "--field-a", &f, "--field-b", &f, "--out", &d.s("self")]);
    assert_eq!(manifest(&d.p("self"))["results"]["correlation"], 1.0);

    let field = read_field_csv(fs::File::open(d.p("lin/field.csv")).unwrap()).unwrap();
    let half = field.entries.len() / 2;
    let split = |keep_first: bool| {
        let mut g = field.clone();
        for (i, e) in g.entries.iter_mut().enumerate() {
            if (i < half) != keep_first {
                e.status = LocalStatus::Skipped { reason: SkipReason::InsufficientLocalMass, detail: String::new() };
            }
        }
        g
    };
    write_field_csv(&split(true), fs::File::create(d.p("a.csv")).unwrap()).unwrap();
    write_field_csv(&split(false), fs::File::create(d.p("b.csv")).unwrap()).unwrap();
    let (code, _) = geodid(&["robustness", "--field-a", &d.s("a.csv"), "--field-b", &d.s("b.csv"), "--out", &d.s("r")]);
    assert_eq!(code, 2);
    assert_eq!(manifest(&d.p("r"))["status"], "failed");
}

#[test]
fn usage_errors_exit_two() {
    let (code, _) = geodid(&["local", "--kernel", "cubic", "--panel", "x", "--out", "y"]);
    assert_eq!(code, 2);
}
