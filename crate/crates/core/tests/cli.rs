use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_focusrl"));
    c.env("FOCUSRL_THREADS", "1");
    c
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "focusrl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes a copy of `preset` with `patch` merged into each named section;
/// `stack` is replaced whole.
fn patched(dir: &Path, preset_name: &str, patch: Value) -> PathBuf {
    let mut cfg: Value =
        serde_json::from_str(&fs::read_to_string(preset(preset_name)).unwrap()).unwrap();
    for (section, fields) in patch.as_object().unwrap() {
        match fields {
            Value::Object(map) if section != "stack" => {
                let slot = cfg
                    .as_object_mut()
                    .unwrap()
                    .entry(section.clone())
                    .or_insert_with(|| json!({}));
                for (k, v) in map {
                    slot[k] = v.clone();
                }
            }
            other => cfg[section] = other.clone(),
        }
    }
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!("{preset_name}-{n}.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn count_pgm(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "pgm")
        })
        .count()
}

#[test]
fn gen_stack_exp1_writes_131_frames_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp1");
    ok(&[
        "gen-stack",
        "--config",
        s(&preset("exp1")),
        "--out",
        s(&out),
    ]);
    assert_eq!(count_pgm(&out), 131);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["focus_curve"].as_array().unwrap().len(), 131);

    let before = fs::read(out.join("manifest.json")).unwrap();
    let again = run(&[
        "gen-stack",
        "--config",
        s(&preset("exp1")),
        "--out",
        s(&out),
    ]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("not empty"));
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), before);
}

#[test]
fn gen_stack_exp2_writes_266_frames() {
    let dir = tempfile::tempdir().unwrap();
    // Full-size rendering of 266 heavily blurred frames is slow; the frame
    // count only depends on the focus range.
    let cfg = patched(
        dir.path(),
        "exp2",
        json!({"stack": {"generate": {"view_id": "exp2", "seed": 1, "width": 32, "height": 32,
                                      "z_min": 10.2, "z_max": 89.7, "z_star": 55.5}}}),
    );
    let out = dir.path().join("exp2");
    ok(&["gen-stack", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(count_pgm(&out), 266);
}

#[test]
fn count_reference_toy_and_determinism() {
    let a = ok(&["count"]).stdout;
    let b = ok(&["count"]).stdout;
    assert_eq!(a, b);
    let r: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(r["params"], 399_925);
    assert_eq!(r["macs"], 13_936_896);
    assert_eq!(r["params_ok"], true);
    assert_eq!(r["macs_ok"], true);

    let toy: Value =
        serde_json::from_slice(&ok(&["count", "--config", s(&preset("toy_count"))]).stdout)
            .unwrap();
    assert_eq!(
        (toy["params"].as_u64(), toy["macs"].as_u64()),
        (Some(55), Some(50))
    );

    let exp1: Value =
        serde_json::from_slice(&ok(&["count", "--config", s(&preset("exp1"))]).stdout).unwrap();
    assert_eq!(exp1, r);
}

#[test]
fn curve_and_baselines_on_tiny() {
    let curve = String::from_utf8(ok(&["curve", "--config", s(&preset("tiny"))]).stdout).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "index,position,tenengrad,normalized");
    assert_eq!(lines.len(), 22);
    let ones = lines[1..]
        .iter()
        .filter(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap() == 1.0)
        .count();
    assert_eq!(ones, 1);

    for method in ["hill-climb", "value-iteration"] {
        let r: Value = serde_json::from_slice(
            &ok(&[
                "baseline",
                "--config",
                s(&preset("tiny")),
                "--method",
                method,
            ])
            .stdout,
        )
        .unwrap();
        assert_eq!(r["accuracy"], 1.0, "{method}");
        assert_eq!(r["episodes"], 21);
    }
    let scan: Value = serde_json::from_slice(
        &ok(&[
            "baseline",
            "--config",
            s(&preset("tiny")),
            "--method",
            "scan",
        ])
        .stdout,
    )
    .unwrap();
    assert_eq!(scan["argmax_index"], 7);
}

#[test]
fn bad_config_and_unknown_stack_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let typo = patched(dir.path(), "tiny", json!({"train": {"learnign_rate": 0.1}}));
    let out = run(&["curve", "--config", s(&typo)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnign_rate"));

    let out = run(&["curve", "--config", s(&preset("tiny")), "--stack", "nope"]);
    assert!(!out.status.success());
    let out = run(&["curve", "--config", s(&dir.path().join("missing.json"))]);
    assert!(!out.status.success());
}

/// Short exp1-shaped run: no gradient steps (learn_start beyond the end),
/// two evaluations.
fn exp1_eval_rows_config(dir: &Path) -> PathBuf {
    patched(
        dir,
        "exp1",
        json!({"train": {"total_timesteps": 2000, "learn_start": 5000}}),
    )
}

#[test]
fn exp1_train_logs_an_eval_row_every_thousand_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = exp1_eval_rows_config(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(
        rows[0],
        "timestep,loss,epsilon,eval_accuracy,eval_avg_steps"
    );
    let steps: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["1000", "2000"]);
    for name in [
        "ckpt_1000",
        "ckpt_2000",
        "ckpt_final",
        "config.json",
        "eval_train.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let saved: Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["seed"], 7);

    // A checkpoint of the 64-px reference net cannot drive the 32-px tiny net.
    let bad = run(&[
        "eval",
        "--config",
        s(&preset("tiny")),
        "--ckpt",
        s(&out.join("ckpt_final")),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("architecture"));
}

fn tiny_short(dir: &Path) -> PathBuf {
    patched(
        dir,
        "tiny",
        json!({"train": {"total_timesteps": 1500, "learn_start": 500, "eval_interval": 500}}),
    )
}

#[test]
fn train_is_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_short(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b)]);
    for name in [
        "train_log.csv",
        "ckpt_500",
        "ckpt_1000",
        "ckpt_1500",
        "ckpt_final",
        "eval_train.json",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let eval = ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--ckpt",
        s(&a.join("ckpt_final")),
    ])
    .stdout;
    let from_train: Value =
        serde_json::from_slice(&fs::read(a.join("eval_train.json")).unwrap()).unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&eval).unwrap(), from_train);

    let c = dir.path().join("c");
    ok(&["train", "--config", s(&cfg), "--seed", "9", "--out", s(&c)]);
    assert_ne!(
        fs::read(a.join("ckpt_final")).unwrap(),
        fs::read(c.join("ckpt_final")).unwrap()
    );

    let refused = run(&["train", "--config", s(&cfg), "--out", s(&a)]);
    assert!(!refused.status.success());
}

#[test]
fn resume_onto_a_saved_second_view_starts_from_the_loaded_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_short(dir.path());
    let first = dir.path().join("first");
    ok(&["train", "--config", s(&cfg), "--out", s(&first)]);

    // Second view: same optics, different scene, stored on disk.
    let second_src = patched(
        dir.path(),
        "tiny",
        json!({"stack": {"generate": {"view_id": "tiny-b", "seed": 2, "z_min": 0.0, "z_max": 6.0,
                                      "z_star": 2.2, "blur_gain": 2.0}}}),
    );
    let view = dir.path().join("view_b");
    ok(&["gen-stack", "--config", s(&second_src), "--out", s(&view)]);
    let transfer = patched(
        dir.path(),
        "tiny",
        json!({"stack": {"path": "view_b"},
               "train": {"total_timesteps": 500, "learn_start": 1000, "eval_interval": 500}}),
    );
    let second = dir.path().join("second");
    ok(&[
        "train",
        "--config",
        s(&transfer),
        "--resume",
        s(&first.join("ckpt_final")),
        "--out",
        s(&second),
    ]);
    // No gradient steps happen, so the resumed weights are saved unchanged.
    let a = fs::read(first.join("ckpt_final")).unwrap();
    let b = fs::read(second.join("ckpt_500")).unwrap();
    let body = |bytes: &[u8]| {
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        bytes[16 + header_len..].to_vec()
    };
    assert_eq!(body(&a), body(&b));
}
