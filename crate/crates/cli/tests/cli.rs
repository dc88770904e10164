use std::fs;
use std::path::Path;
use std::process::Command;

fn sim(args: &[&str], config: &str, dir: &Path) -> (i32, String) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(&args[..1])
        .arg("--config")
        .arg(&cfg)
        .args(&args[1..])
        .env_remove("SIM_THREADS")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

const TINY: &str = r#"{"M":2,"K":2,"N":50,"steps":500,"seed":7,"rule":"sgd","eta":0.5}"#;

#[test]
fn run_writes_all_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, err) = sim(&["run", "--out", out.to_str().unwrap()], TINY, tmp.path());
    assert_eq!(code, 0, "{err}");
    for f in ["trajectory.csv", "summary.json", "mse.svg", "w.svg", "qr.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,mse_window,eg_analytic,w_1,w_2,Q_11,Q_12,Q_22,R_11,R_12,R_21,R_22");
    assert_eq!(lines.len() - 1, 500 / 50 + 1);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], false);
    assert_eq!(summary["steps_completed"], 500);
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let (code, err) = sim(&["run", "--out", d.to_str().unwrap()], TINY, tmp.path());
        assert_eq!(code, 0, "{err}");
    }
    for f in ["trajectory.csv", "summary.json", "mse.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let (code, err) = sim(
        &["run", "--out", out.to_str().unwrap(), "--set", "steps=100", "--set", "sample_every=25"],
        TINY,
        tmp.path(),
    );
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();

    let (code, err) = sim(&["run", "--out", o], "{}", tmp.path());
    assert_eq!(code, 2);
    assert!(err.contains("missing required keys M, K, steps, seed, rule"), "{err}");
    let (code, _) = sim(&["run", "--out", o, "--set", "bogus=1"], TINY, tmp.path());
    assert_eq!(code, 2);

    let blow_up = r#"{"M":2,"K":2,"N":50,"steps":500,"seed":7,"rule":"sgd","eta":1e6,"teacher_output_weight":1e150}"#;
    let (code, err) = sim(&["run", "--out", o], blow_up, tmp.path());
    assert_eq!(code, 3, "{err}");
    assert!(out.join("trajectory.csv").is_file());

    let file = tmp.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let (code, _) = sim(&["run", "--out", file.to_str().unwrap()], TINY, tmp.path());
    assert_eq!(code, 4);
}

#[test]
fn compare_rejects_identical_rules_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("c");
    let same = format!(r#"{{"base":{TINY},"variant":{{"rule":"sgd"}},"seeds":[1,2,3]}}"#);
    let (code, _) = sim(&["compare", "--out", o.to_str().unwrap()], &same, tmp.path());
    assert_eq!(code, 2);
    let other = format!(r#"{{"base":{TINY},"variant":{{"eta":0.1,"rule":"dropout"}},"seeds":[1,2,3]}}"#);
    let (code, _) = sim(&["compare", "--out", o.to_str().unwrap()], &other, tmp.path());
    assert_eq!(code, 2);

    let good = format!(r#"{{"base":{TINY},"variant":{{"rule":{{"dropout":{{"p":0.5}}}}}},"seeds":[1,2,3]}}"#);
    let (code, err) = sim(&["compare", "--out", o.to_str().unwrap()], &good, tmp.path());
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(o.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("compare.json")).unwrap()).unwrap();
    assert!(report["diff"]["final_mse"].is_number());
}

#[test]
fn verify_perfect_state_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("v");
    let cfg = r#"{"trials":1,"samples":2000,"seed":3,"state":"perfect"}"#;
    let (code, err) = sim(&["verify", "--out", o.to_str().unwrap()], cfg, tmp.path());
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], 1);
    assert_eq!(report["trials"][0]["pass"], true);
    let (code, _) = sim(&["verify", "--out", o.to_str().unwrap()], r#"{"trials":1,"extra":2}"#, tmp.path());
    assert_eq!(code, 2);
}

#[test]
fn sweep_full_keep_probability_matches_sgd() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("s");
    let cfg = format!(r#"{{"base":{TINY},"param":"rule.dropout.p","values":[0.5,1.0]}}"#);
    let (code, err) = sim(&["sweep", "--out", o.to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(code, 0, "{err}");
    let subdirs = fs::read_dir(&o).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(subdirs, 2);
    let index = fs::read_to_string(o.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 3);

    let sgd = tmp.path().join("sgd");
    let (code, err) = sim(&["run", "--out", sgd.to_str().unwrap()], TINY, tmp.path());
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read(o.join("p_1.0").join("trajectory.csv")).unwrap(),
        fs::read(sgd.join("trajectory.csv")).unwrap()
    );
    assert_ne!(
        fs::read(o.join("p_0.5").join("trajectory.csv")).unwrap(),
        fs::read(sgd.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_unknown_param() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("s");
    let cfg = format!(r#"{{"base":{TINY},"param":"K","values":[2]}}"#);
    let (code, _) = sim(&["sweep", "--out", o.to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(code, 2);
}
