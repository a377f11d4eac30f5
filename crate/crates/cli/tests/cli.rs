use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "[scenario]\nduration_steps = 20\n";

fn xcam(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcam"))
        .args(args)
        .env("XCAM_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .expect("spawn xcam")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(run: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_every_manifest_artifact_under_the_output_root() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let out = xcam(root.path(), &["--config", &cfg, "--seed", "4", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.path().join("run-4");
    let m = manifest(&run);
    assert_eq!(m["seed"], 4);
    assert!(m["failure"].is_null());
    let artifacts = m["artifacts"].as_object().unwrap();
    for name in [
        "scenario.json",
        "detections.jsonl",
        "assignment.jsonl",
        "masks.json",
        "transmission.json",
        "eval.json",
        "records.jsonl",
        "streams/camera_0.xcrl",
    ] {
        assert!(artifacts.contains_key(name), "missing {name}");
    }
    for entry in artifacts.values() {
        let path = run.join(entry["path"].as_str().unwrap());
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, entry["bytes"].as_u64().unwrap(), "{}", path.display());
    }
    let summary = &stdout_json(&out)["summary"];
    assert!(summary["mtta_pct"].as_f64().unwrap() > 50.0);
}

#[test]
fn double_run_yields_identical_manifest_hash_and_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let a = xcam(root.path(), &["-c", &cfg, "run", "--out", "a"]);
    let b = xcam(root.path(), &["-c", &cfg, "run", "--out", "b"]);
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    assert_eq!(
        stdout_json(&a)["manifest_hash"],
        stdout_json(&b)["manifest_hash"]
    );
    let (ma, mb) = (
        manifest(&root.path().join("a")),
        manifest(&root.path().join("b")),
    );
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let root = tempfile::tempdir().unwrap();
    let seeded = root.path().join("seeded.toml");
    std::fs::write(&seeded, format!("seed = 9\n{SMALL}")).unwrap();
    let cfg = small_config(root.path());
    let seeded = seeded.to_string_lossy();
    let from_file = xcam(root.path(), &["-c", &seeded, "run", "--out", "f"]);
    let from_flag = xcam(
        root.path(),
        &["-c", &cfg, "--seed", "9", "run", "--out", "g"],
    );
    let overridden = xcam(
        root.path(),
        &["-c", &seeded, "--seed", "10", "run", "--out", "h"],
    );
    let hash = |o: &Output| stdout_json(o)["manifest_hash"].clone();
    assert_eq!(hash(&from_file), hash(&from_flag));
    assert_ne!(hash(&from_file), hash(&overridden));
    assert_eq!(manifest(&root.path().join("h"))["seed"], 10);
}

#[test]
fn configuration_and_usage_errors_exit_one() {
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.toml");
    std::fs::write(&bad, "[assoc]\nspatial_threshold = 1.5\n").unwrap();
    let bad = bad.to_string_lossy();
    assert_eq!(code(&xcam(root.path(), &["-c", &bad, "run"])), 1);
    let unknown = root.path().join("unknown.toml");
    std::fs::write(&unknown, "[filter]\nssim = 0.3\n").unwrap();
    assert_eq!(
        code(&xcam(
            root.path(),
            &["-c", &unknown.to_string_lossy(), "run"]
        )),
        1
    );
    assert_eq!(
        code(&xcam(root.path(), &["-c", "/nonexistent.toml", "run"])),
        1
    );
    assert_eq!(code(&xcam(root.path(), &["frobnicate"])), 1);
    assert_eq!(code(&xcam(root.path(), &["sweep", "-k", "nope.key=1"])), 1);
    assert_eq!(code(&xcam(root.path(), &["sweep", "-k", "seed="])), 1);
    assert_eq!(code(&xcam(root.path(), &["--help"])), 0);
}

#[test]
fn stage_failure_exits_two_and_keeps_partial_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("empty.toml");
    std::fs::write(&cfg, "[scenario]\nidentity_count = 0\nduration_steps = 5\n").unwrap();
    let out = xcam(
        root.path(),
        &["-c", &cfg.to_string_lossy(), "run", "--out", "r"],
    );
    assert_eq!(code(&out), 2);
    let run = root.path().join("r");
    let m = manifest(&run);
    assert_eq!(m["failure"]["stage"], "eval");
    assert!(m["summary"].is_null());
    assert!(run.join("assignment.jsonl").exists());
    assert!(!run.join("eval.json").exists());
    let report = xcam(root.path(), &["report", "--run", &run.to_string_lossy()]);
    assert_eq!(code(&report), 2);
    assert!(String::from_utf8_lossy(&report.stdout).contains("FAILED"));
}

#[test]
fn single_point_sweep_matches_direct_run() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let run = xcam(root.path(), &["-c", &cfg, "run"]);
    let sweep = xcam(
        root.path(),
        &["-c", &cfg, "sweep", "-k", "assoc.spatial_threshold=0.7"],
    );
    assert_eq!(code(&sweep), 0);
    let csv = std::fs::read_to_string(root.path().join("sweep-0.csv")).unwrap();
    assert_eq!(csv, String::from_utf8_lossy(&sweep.stdout));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let field = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    let summary = &stdout_json(&run)["summary"];
    let mtta: f64 = field("mtta_pct").parse().unwrap();
    assert!((mtta - summary["mtta_pct"].as_f64().unwrap()).abs() < 1e-4);
    assert_eq!(field("global_ids"), summary["global_ids"].to_string());
    let bytes: f64 = field("total_bytes").parse().unwrap();
    assert_eq!(bytes, summary["total_bytes"].as_f64().unwrap());
}

#[test]
fn spatial_threshold_sweep_global_ids_are_monotone() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("noisy.toml");
    std::fs::write(
        &cfg,
        "[scenario]\nduration_steps = 30\nidentity_count = 5\n[percept]\nembed_noise_sigma = 0.6\ncamera_bias_sigma = 0.3\n",
    )
    .unwrap();
    let out = xcam(
        root.path(),
        &[
            "-c",
            &cfg.to_string_lossy(),
            "sweep",
            "-k",
            "assoc.spatial_threshold=0.5,0.6,0.7,0.8,0.9",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "global_ids").unwrap();
    let ids: Vec<u64> = lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ids.len(), 5);
    assert!(ids.windows(2).all(|w| w[0] <= w[1]), "{ids:?}");
    assert!(ids[0] < ids[4], "sweep never split an identity: {ids:?}");
}

#[test]
fn queries_and_eval_agree_with_the_run_summary() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let run_out = xcam(root.path(), &["-c", &cfg, "run", "--out", "q"]);
    let summary = stdout_json(&run_out)["summary"].clone();
    let run = root.path().join("q");
    let run = run.to_string_lossy();

    let distinct = stdout_json(&xcam(
        root.path(),
        &["query", "--run", &run, "distinct-count"],
    ));
    assert_eq!(distinct["value"]["count"], summary["global_ids"]);

    let records = std::fs::read_to_string(root.path().join("q/records.jsonl")).unwrap();
    let of_one = records
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap()["global_id"] == 1)
        .count();
    let appearances = stdout_json(&xcam(
        root.path(),
        &[
            "query",
            "--run",
            &run,
            "appearances",
            "--id",
            "1",
            "--limit",
            "3",
        ],
    ));
    assert_eq!(appearances["value"]["count"], of_one as u64);
    assert_eq!(
        appearances["evidence"].as_array().unwrap().len(),
        of_one.min(3)
    );
    assert!(appearances["bytes_transmitted"].as_u64().unwrap() > 0);

    let absent = stdout_json(&xcam(
        root.path(),
        &["query", "--run", &run, "first-entry", "--id", "9999"],
    ));
    assert_eq!(absent["value"], "not_found");

    let inverted = xcam(
        root.path(),
        &[
            "query",
            "--run",
            &run,
            "distinct-count",
            "--start",
            "5",
            "--end",
            "2",
        ],
    );
    assert_eq!(code(&inverted), 1);

    let eval = stdout_json(&xcam(root.path(), &["eval", "--run", &run]));
    assert_eq!(eval["mtta_pct"], summary["mtta_pct"]);

    let report = xcam(root.path(), &["report", "--run", &run]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("mtta"));
}

#[test]
fn generate_is_deterministic_and_exports_frames() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let a = xcam(
        root.path(),
        &["-c", &cfg, "generate", "--out", "a", "--frames"],
    );
    let b = xcam(root.path(), &["-c", &cfg, "generate", "--out", "b"]);
    assert_eq!(code(&a), 0);
    assert_eq!(
        stdout_json(&a)["content_hash"],
        stdout_json(&b)["content_hash"]
    );
    assert_eq!(
        std::fs::read(root.path().join("a/scenario.json")).unwrap(),
        std::fs::read(root.path().join("b/scenario.json")).unwrap()
    );
    let frames = std::fs::read_dir(root.path().join("a/frames"))
        .unwrap()
        .count();
    assert_eq!(frames, 2 * 20);
    let pgm = std::fs::read(root.path().join("a/frames/camera_0_t00000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}
