use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gainbudget::harness::{ExperimentConfig, Mode, RunSummary, ScenarioKind};
use gainbudget::trace::ClosedLoopTrace;

fn cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gainbudget"));
    for a in args {
        c.arg(a);
    }
    c.env("GAINBUDGET_WORKERS", "1");
    c.output().expect("spawn CLI")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scalar_config(dir: &Path, mode: Mode) -> PathBuf {
    let mut c = ExperimentConfig::preset(ScenarioKind::ScalarSanity, mode);
    c.seeds = vec![0, 1];
    c.steps = 30;
    let p = dir.join(format!("{}.json", mode.as_str()));
    fs::write(&p, c.to_json().unwrap()).unwrap();
    p
}

#[test]
fn malformed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"schema_version": 1, "scenario": "mountains", "unknown_field": 3}"#).unwrap();
    assert_eq!(code(&cli(&[&"run", &p])), 3);
    assert_eq!(code(&cli(&[&"gain-bound", &p])), 3);
    fs::write(&p, "not json").unwrap();
    assert_eq!(code(&cli(&[&"run", &p])), 3);
    assert_eq!(code(&cli(&[&"run", &dir.path().join("missing.json")])), 3);
}

#[test]
fn invalid_values_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::preset(ScenarioKind::ScalarSanity, Mode::OnlineAlg1);
    c.gamma_bar = -1.0;
    let p = dir.path().join("neg.json");
    fs::write(&p, c.to_json().unwrap()).unwrap();
    assert_eq!(code(&cli(&[&"run", &p])), 3);
}

#[test]
fn usage_errors_do_not_look_like_violations() {
    let o = cli(&[&"run"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&cli(&[&"--help"])), 0);
}

#[test]
fn gain_bound_reports_point_mass_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(&p, ExperimentConfig::preset(ScenarioKind::Mountains, Mode::StaticOffline).to_json().unwrap()).unwrap();
    let o = cli(&[&"gain-bound", &p]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let g = v["gamma_f"].as_f64().unwrap();
    assert!(g >= 1.0 && g.is_finite());
}

#[test]
fn run_verify_compare_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg1 = scalar_config(dir.path(), Mode::OnlineAlg1);
    let cfg0 = scalar_config(dir.path(), Mode::StaticOffline);
    for c in [&cfg1, &cfg0] {
        let o = cli(&[&"run", c, &"--out", &out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let run1 = out.join("scalar_sanity").join("online_alg1");
    let seed = run1.join("seed_1");
    for f in ["trace.csv", "switchlog.csv", "switchlog.json", "budget.json", "policies.json", "summary.json"] {
        assert!(seed.join(f).exists(), "{f}");
    }

    let o = cli(&[&"verify", &seed.join("trace.csv"), &seed.join("switchlog.json"), &seed.join("budget.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASSED"));

    // A state a million times larger cannot fit any window bound.
    let tr = ClosedLoopTrace::read_csv(fs::File::open(seed.join("trace.csv")).unwrap()).unwrap();
    let bad = dir.path().join("inflated.csv");
    tr.with_scaled_state(1e6).write_csv(fs::File::create(&bad).unwrap()).unwrap();
    let o = cli(&[&"verify", &bad, &seed.join("switchlog.json"), &seed.join("budget.json")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("VIOLATED"));

    let base = out.join("scalar_sanity").join("static_offline").join("report.json");
    let o = cli(&[&"compare", &base, &run1.join("report.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b = RunSummary::from_json(&fs::read_to_string(&base).unwrap()).unwrap();
    assert_eq!(b.seeds.len(), 2);

    let plots = dir.path().join("plots");
    let o = cli(&[&"emit-plots", &seed.join("trace.csv"), &"--config", &cfg1, &"--seed", &"1", &"--tau", &"0,10", &"--out", &plots]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(plots.join("executed.csv").exists());
    assert!(plots.join("predicted_t10.csv").exists());
}

#[test]
fn train_offline_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scalar_config(dir.path(), Mode::StaticOffline);
    let ck = dir.path().join("m0.json");
    let o = cli(&[&"train-offline", &cfg, &"--seed", &"3", &"--out", &ck]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = gainbudget::policy::GainBoundedPolicy::from_json(&fs::read_to_string(&ck).unwrap()).unwrap();
    assert!(p.certified_gain().unwrap() <= 2.0 * (1.0 + 1e-12));
}

#[test]
fn seed_override_selects_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = scalar_config(dir.path(), Mode::OnlineAlg2);
    let o = cli(&[&"run", &cfg, &"--out", &out, &"--seeds", &"5,7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("scalar_sanity").join("online_alg2");
    assert!(run.join("seed_5").is_dir() && run.join("seed_7").is_dir());
    assert!(!run.join("seed_0").exists());
}
