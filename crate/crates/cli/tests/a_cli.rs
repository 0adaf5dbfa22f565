use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_fieldshift");

const TINY: &str = r#"{
  "schema_version": 1,
  "seed": 3,
  "data": {"phantom": {"size": 32}, "n_train": 4, "n_test": 2},
  "mri": {"coils": 2, "acs": 4},
  "teacher": {"epochs": 2, "critic_steps": 1, "map_hidden": 4, "map_depth": 2, "critic": {"hidden": 4, "depth": 3}},
  "teacher_eval": {"critic_steps": 3},
  "student": {"hidden": 4, "depth": 2, "epochs": 2, "levels": 4},
  "baseline": {"hidden": 4, "depth": 2, "epochs": 2, "levels": 4},
  "recon": {"sampler": {"steps_per_level": 1}},
  "verify": {"duplicate_instances": 3, "distinct_instances": 2, "uniqueness_instances": 3}
}"#;

fn config_file(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.in.json");
    fs::write(&p, body).unwrap();
    p
}

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cli(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn init(dir: &Path, name: &str) -> PathBuf {
    let cfg = config_file(dir, TINY);
    let out = dir.join(name);
    ok(&out, &["--config", cfg.to_str().unwrap(), "gen-data"]);
    out
}

#[test]
fn gen_data_writes_the_requested_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = init(tmp.path(), "a");
    let b = init(tmp.path(), "b");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_x15"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["train_x05"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["test_x15"].as_array().unwrap().len(), 2);
    assert_eq!(files(&a.join("data")), files(&b.join("data")));
    assert_eq!(
        fs::read(a.join("config.json")).unwrap(),
        fs::read(b.join("config.json")).unwrap()
    );
    assert!(!a.join(".lock").exists());
}

#[test]
fn invalid_configs_exit_2_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, body) in [
        r#"{"schema_version": 1, "teacher": {"epoch": 3}}"#,
        r#"{"schema_version": 7}"#,
        r#"{"data": {"n_train": 4}}"#,
        r#"{"schema_version": 1, "verify": {"max_n_existence": 10}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = config_file(tmp.path(), body);
        let out = tmp.path().join(format!("bad{i}"));
        let o = cli(&out, &["--config", cfg.to_str().unwrap(), "gen-data"]);
        assert_eq!(
            code(&o),
            2,
            "{body}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists(), "{body} left files behind");
    }
}

#[test]
fn exhaustive_mode_refuses_n_above_the_enumeration_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_file(
        tmp.path(),
        r#"{"schema_version": 1, "verify": {"exhaustive": true, "max_n_existence": 10}}"#,
    );
    let o = cli(
        &tmp.path().join("run"),
        &["--config", cfg.to_str().unwrap(), "verify-theorem"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("N <= 6"));
}

#[test]
fn changed_seed_on_an_existing_run_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = init(tmp.path(), "run");
    assert_eq!(code(&cli(&out, &["--seed", "99", "gen-data"])), 2);
    ok(&out, &["--seed", "3", "gen-data"]);
}

#[test]
fn stages_name_their_missing_prerequisites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    for (args, needle) in [
        (&["train-teacher"][..], "data/manifest.json"),
        (&["gen-pairs"][..], "teacher/model"),
        (&["train-student"][..], "pairs.json"),
        (&["reconstruct", "--method", "meta"][..], "student/model"),
        (&["eval"][..], "data/manifest.json"),
        (&["report"][..], "report/report.json"),
    ] {
        let o = cli(&out, args);
        assert_eq!(code(&o), 3, "{args:?}");
        assert!(
            String::from_utf8_lossy(&o.stderr).contains(needle),
            "{args:?}"
        );
    }
    let out = init(tmp.path(), "data-only");
    let o = cli(&out, &["eval"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_theorem_passes_and_lists_witnesses() {
    let tmp = tempfile::tempdir().unwrap();
    let out = init(tmp.path(), "run");
    ok(&out, &["verify-theorem"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("theorem/report.json")).unwrap())
            .unwrap();
    let instances = report["instances"].as_array().unwrap();
    let mut existing = 0;
    for inst in instances {
        if let Some(pf) = inst["pushforward"].as_object() {
            if pf["exists"].as_bool().unwrap() {
                existing += 1;
                assert!(pf["witness"].is_object(), "existence without a witness");
            }
        }
    }
    assert_eq!(existing, 2);
}

#[test]
fn full_pipeline_runs_end_to_end_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = init(tmp.path(), name);
        ok(&out, &["train-teacher"]);
        assert!(out.join("teacher/metrics.json").exists());
        ok(&out, &["gen-pairs"]);
        let pairs: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("pairs.json")).unwrap()).unwrap();
        assert_eq!(pairs["x05"].as_array().unwrap().len(), 4);
        ok(&out, &["train-student"]);
        ok(&out, &["train-student", "--baseline"]);
        for m in ["meta", "score-mri-baseline", "zero-filled"] {
            ok(&out, &["reconstruct", "--method", m]);
        }
        ok(&out, &["sample-prior", "--count", "1"]);
        assert!(out.join("samples/0000/x15.npy").exists());
        let csv = ok(&out, &["eval"]);
        assert_eq!(csv.lines().count(), 7, "{csv}");
        let md = ok(&out, &["report"]);
        assert!(md.contains("| meta | r3 |"));
        for m in ["meta", "score-mri-baseline", "zero-filled"] {
            for r in ["r1", "r3"] {
                let d = out.join(format!("recon/{m}/{r}/0001"));
                for f in ["x15.npy", "x15.pgm", "diagnostics.csv", "recon.json"] {
                    assert!(d.join(f).exists(), "{}", d.join(f).display());
                }
            }
        }
        assert!(out.join("recon/meta/r1/0000/x05.npy").exists());
        reports.push((
            fs::read(out.join("report/report.csv")).unwrap(),
            fs::read(out.join("report/report.json")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn zero_filled_reconstructs_saved_acquisitions_and_images() {
    let tmp = tempfile::tempdir().unwrap();
    let out = init(tmp.path(), "run");
    ok(
        &out,
        &[
            "reconstruct",
            "--method",
            "zero-filled",
            "--acceleration",
            "3",
        ],
    );
    assert!(!out.join("recon/zero-filled/r1").exists());
    let acq = out.join("acquisitions/r3/0000");
    let mask: Vec<u8> = fs::read(acq.join("mask.npy")).unwrap();
    assert!(!mask.is_empty());
    ok(
        &out,
        &[
            "reconstruct",
            "--method",
            "zero-filled",
            "--input",
            acq.to_str().unwrap(),
        ],
    );
    let a = fs::read(out.join("recon/zero-filled/input/0000/x15.npy")).unwrap();
    let b = fs::read(out.join("recon/zero-filled/r3/0000/x15.npy")).unwrap();
    assert_eq!(a, b);
    let img = out.join("data/test/x05_0000.npy");
    ok(
        &out,
        &[
            "reconstruct",
            "--method",
            "zero-filled",
            "--image",
            img.to_str().unwrap(),
        ],
    );
    assert!(out
        .join("recon/zero-filled/input/x05_0000_r1/x15.npy")
        .exists());
}

#[test]
fn reconstruct_rejects_unknown_methods_and_mismatched_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let out = init(tmp.path(), "run");
    assert_eq!(code(&cli(&out, &["reconstruct", "--method", "magic"])), 2);

    let other = tmp.path().join("other64");
    let cfg = config_file(tmp.path(), &TINY.replace("\"size\": 32", "\"size\": 64"));
    ok(&other, &["--config", cfg.to_str().unwrap(), "gen-data"]);
    ok(&out, &["train-teacher"]);
    ok(&out, &["gen-pairs"]);
    ok(&out, &["train-student"]);
    let acq = other.join("acquisitions/r1/0000");
    ok(
        &other,
        &[
            "reconstruct",
            "--method",
            "zero-filled",
            "--acceleration",
            "1",
        ],
    );
    let o = cli(
        &out,
        &[
            "reconstruct",
            "--method",
            "meta",
            "--input",
            acq.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("geometry mismatch"));
}

/// Starts `args`, kills it once `marker` appears, then resumes and returns
/// the final contents of `log`.
fn kill_and_resume(out: &Path, args: &[&str], marker: &str, log: &str) -> Vec<u8> {
    let mut child = Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while !out.join(marker).exists() && start.elapsed() < Duration::from_secs(120) {
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    let _ = child.kill();
    child.wait().unwrap();
    assert!(out.join(marker).exists(), "no checkpoint was written");
    assert!(
        !out.join(log).exists(),
        "training finished before it was killed"
    );
    let mut resumed: Vec<&str> = vec!["--resume"];
    resumed.extend_from_slice(args);
    ok(out, &resumed);
    fs::read(out.join(log)).unwrap()
}

#[test]
fn killed_training_resumes_to_the_uninterrupted_logs() {
    let body = TINY
        .replace(
            "\"epochs\": 2, \"critic_steps\": 1",
            "\"epochs\": 6, \"critic_steps\": 1",
        )
        .replace(
            "\"depth\": 2, \"epochs\": 2, \"levels\": 4}",
            "\"depth\": 2, \"epochs\": 40, \"levels\": 4}",
        );
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_file(tmp.path(), &body);
    let prepare = |name: &str| {
        let out = tmp.path().join(name);
        ok(&out, &["--config", cfg.to_str().unwrap(), "gen-data"]);
        out
    };
    let full = prepare("full");
    ok(&full, &["train-teacher"]);
    ok(&full, &["gen-pairs"]);
    ok(&full, &["train-student"]);

    let killed = prepare("killed");
    let teacher_log = kill_and_resume(
        &killed,
        &["train-teacher"],
        "teacher/state/manifest.json",
        "teacher/log.csv",
    );
    assert_eq!(teacher_log, fs::read(full.join("teacher/log.csv")).unwrap());
    ok(&killed, &["gen-pairs"]);
    let loss = kill_and_resume(
        &killed,
        &["train-student"],
        "student/state/manifest.json",
        "student/loss.csv",
    );
    assert_eq!(loss, fs::read(full.join("student/loss.csv")).unwrap());
    assert_eq!(
        fs::read(killed.join("student/model/manifest.json")).unwrap(),
        fs::read(full.join("student/model/manifest.json")).unwrap()
    );
}

#[test]
fn a_live_lock_blocks_a_second_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = init(tmp.path(), "run");
    fs::write(out.join(".lock"), std::process::id().to_string()).unwrap();
    let o = cli(&out, &["gen-data"]);
    assert_eq!(code(&o), 1);
    // A lock naming a dead process is reclaimed.
    fs::write(out.join(".lock"), u32::MAX.to_string()).unwrap();
    ok(&out, &["gen-data"]);
}
