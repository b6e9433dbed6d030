use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use flowcond::cli::{cmd_eval, run_args, sidecar_path, EvalCommand, RunConfig};
use flowcond::curate::synthetic_records;
use flowcond::features::{
    read_manifest, resolve, store_feature_matrix, write_manifest, FeatureMatrix,
};
use flowcond::rng::{seeded, standard_normal};
use flowcond::seqmodel::load_checkpoint;
use flowcond::trainer::Mixer;
use flowcond::Error;

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synth(out: &Path, kind: &str, count: usize, frames: usize, seed: u64) {
    run_args([
        "flowcond",
        "synth",
        "--kind",
        kind,
        "--count",
        &count.to_string(),
        "-T",
        &frames.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &s(out),
    ])
    .unwrap();
}

fn train_args(manifest: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "flowcond",
        "train",
        "--manifest",
        &s(manifest),
        "--out",
        &s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(
        ["--crop-frames", "16", "--batch-frames", "64"]
            .iter()
            .map(|x| x.to_string()),
    );
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_zero_count_writes_empty_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    synth(&out, "ramp", 0, 10, 1);
    assert_eq!(names(&out), ["manifest.jsonl", "provenance.json"]);
    assert!(read_manifest(&out.join("manifest.jsonl"))
        .unwrap()
        .is_empty());
}

#[test]
fn synth_references_existing_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    synth(&out, "sinusoid", 100, 20, 2);
    let manifest = out.join("manifest.jsonl");
    let records = read_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 100);
    let on_disk: std::collections::BTreeSet<String> = names(&out).into_iter().collect();
    for r in &records {
        for p in [&r.features_path, &r.phonemes_path, &r.nv_path, &r.emo_path] {
            assert!(resolve(&manifest, p).is_file(), "{p}");
            assert!(on_disk.contains(p.as_str()));
        }
    }
    assert_eq!(on_disk.len(), 100 * 4 + 2);
}

#[test]
fn synth_refuses_non_empty_directory_without_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let args = [
        "flowcond",
        "synth",
        "--count",
        "1",
        "-T",
        "4",
        "--out",
        &s(dir.path()),
    ];
    let err = run_args(args).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let mut forced = args.to_vec();
    forced.push("--force");
    run_args(forced).unwrap();
    assert!(dir.path().join("keep.txt").exists());
}

#[test]
fn train_zero_steps_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("c"), "ramp", 3, 20, 1);
    let out = dir.path().join("run");
    run_args(train_args(
        &dir.path().join("c/manifest.jsonl"),
        &out,
        &["--steps", "0"],
    ))
    .unwrap();
    assert_eq!(
        names(&out),
        ["checkpoint-000000.fmck", "loss.log", "provenance.json"]
    );
    let log = fs::read_to_string(out.join("loss.log")).unwrap();
    assert!(log.lines().all(|l| l.starts_with('#')));
    let ck = load_checkpoint(&out.join("checkpoint-000000.fmck")).unwrap();
    assert_eq!(ck.meta.step, 0);
    assert_eq!(ck.meta.seed, Some(0));
}

#[test]
fn train_loss_log_is_reproducible_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("c"), "step", 4, 24, 5);
    let manifest = dir.path().join("c/manifest.jsonl");
    let logs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            run_args(train_args(
                &manifest,
                &out,
                &["--steps", "8", "--seed", "9", "--threads", "1"],
            ))
            .unwrap();
            fs::read_to_string(out.join("loss.log")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    let rows: Vec<Vec<f64>> = logs[0]
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r[1].is_finite() && r[2] > 0.0);
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("c"), "ramp", 3, 20, 1);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "steps = 50\nseed = 4\npeak_lr = 0.002\ncheckpoint_every = 2\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let mut args = train_args(
        &dir.path().join("c/manifest.jsonl"),
        &out,
        &["--steps", "3"],
    );
    args.extend(["--config".to_string(), s(&cfg)]);
    run_args(args).unwrap();
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config"]["steps"], 3);
    assert_eq!(prov["config"]["seed"], 4);
    assert_eq!(prov["seed"], 4);
    assert_eq!(prov["config"]["peak_lr"], 0.002);
    assert_eq!(
        names(&out),
        [
            "checkpoint-000000.fmck",
            "checkpoint-000002.fmck",
            "checkpoint-000003.fmck",
            "loss.log",
            "provenance.json"
        ]
    );
}

#[test]
fn full_preset_is_refused_at_desk() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("c"), "ramp", 1, 20, 1);
    let err = run_args(train_args(
        &dir.path().join("c/manifest.jsonl"),
        &dir.path().join("r"),
        &["--preset", "full"],
    ))
    .unwrap_err();
    assert!(err.to_string().contains("not runnable"), "{err}");
}

#[test]
fn two_manifest_mixing_honors_ratios() {
    let cfg = RunConfig {
        mixing: vec![0.5, 0.5],
        ..RunConfig::desk()
    };
    let mixer = Mixer::new(&cfg.ratios(2).unwrap()).unwrap();
    let mut rng = seeded(77);
    let n = 10_000;
    let first = (0..n).filter(|_| mixer.pick(&mut rng) == 0).count();
    // Binomial sd is 50; 3% of n is 300.
    assert!((first as i64 - 5000).abs() <= 300, "{first}");

    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("a"), "ramp", 2, 20, 1);
    synth(&dir.path().join("b"), "step", 2, 20, 2);
    let mut args = train_args(
        &dir.path().join("a/manifest.jsonl"),
        &dir.path().join("r"),
        &["--steps", "2"],
    );
    args.extend(
        [
            "--manifest",
            &s(&dir.path().join("b/manifest.jsonl")),
            "--ratios",
            "0.5,0.6",
        ]
        .map(String::from),
    );
    assert!(matches!(
        run_args(args.clone()).unwrap_err(),
        Error::Config(_)
    ));
    let last = args.len() - 1;
    args[last] = "0.5,0.5".into();
    run_args(args).unwrap();
}

#[test]
fn divergence_aborts_with_last_good_checkpoint_kept() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("c"), "ramp", 3, 20, 1);
    let out = dir.path().join("run");
    let args = train_args(
        &dir.path().join("c/manifest.jsonl"),
        &out,
        &[
            "--steps",
            "50",
            "--peak-lr",
            "1e30",
            "--warmup-steps",
            "0",
            "--checkpoint-every",
            "1",
        ],
    );
    let err = run_args(args).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("last good checkpoint"), "{err}");
    let cks: Vec<PathBuf> = names(&out)
        .iter()
        .filter(|n| n.ends_with(".fmck"))
        .map(|n| out.join(n))
        .collect();
    assert!(!cks.is_empty());
    for ck in cks {
        assert!(
            load_checkpoint(&ck).unwrap().params.all_finite(),
            "{}",
            ck.display()
        );
    }
}

struct SampleFixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    checkpoint: PathBuf,
}

fn sample_fixture() -> SampleFixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    synth(&root.join("c"), "ramp", 2, 20, 1);
    run_args(train_args(
        &root.join("c/manifest.jsonl"),
        &root.join("run"),
        &["--steps", "2"],
    ))
    .unwrap();
    SampleFixture {
        checkpoint: root.join("run/checkpoint-000002.fmck"),
        root,
        _dir: dir,
    }
}

fn sample_args(fx: &SampleFixture, out: &Path, extra: &[&str]) -> Vec<String> {
    let c = |f: &str| s(&fx.root.join("c").join(f));
    let mut v: Vec<String> = [
        "flowcond",
        "sample",
        "--checkpoint",
        &s(&fx.checkpoint),
        "--spk-features",
        &c("ramp-00000.fmat"),
        "--spk-phonemes",
        &c("ramp-00000.phn"),
        "--spk-nv",
        &c("ramp-00000.nv.fmat"),
        "--spk-emo",
        &c("ramp-00000.emo.fmat"),
        "--text-phonemes",
        &c("ramp-00001.phn"),
        "--out",
        &s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

#[test]
fn sample_requires_explicit_zero_nv_and_records_defaults() {
    let fx = sample_fixture();
    let out = fx.root.join("g.fmat");
    let err = run_args(sample_args(&fx, &out, &["--zero-emo"])).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("--zero-nv"), "{err}");
    assert!(!out.exists());

    run_args(sample_args(
        &fx,
        &out,
        &["--zero-nv", "--zero-emo", "--seed", "3"],
    ))
    .unwrap();
    let g = flowcond::features::load_feature_matrix(&out).unwrap();
    assert_eq!(g.rows(), 8);
    assert_eq!(g.cols(), 20);
    let side: serde_json::Value =
        serde_json::from_slice(&fs::read(sidecar_path(&out)).unwrap()).unwrap();
    assert_eq!(side["nfe"], 32);
    assert_eq!(side["guidance"], 1.0);
    assert_eq!(side["seed"], 3);
    assert_eq!(side["args"]["zero_nv"], true);
    assert_eq!(
        side["checkpoint_sha256"],
        flowcond::cli::sha256_file(&fx.checkpoint).unwrap()
    );

    let again = fx.root.join("g2.fmat");
    run_args(sample_args(
        &fx,
        &again,
        &["--zero-nv", "--zero-emo", "--seed", "3"],
    ))
    .unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn sample_dimension_mismatch_names_both_dims() {
    let fx = sample_fixture();
    let wrong = fx.root.join("wrong.fmat");
    store_feature_matrix(
        &FeatureMatrix::from_f64(&standard_normal(5, 20, &mut seeded(1)), 100.0),
        &wrong,
    )
    .unwrap();
    let mut args = sample_args(&fx, &fx.root.join("g.fmat"), &["--zero-nv", "--zero-emo"]);
    let i = args.iter().position(|a| a == "--spk-features").unwrap();
    args[i + 1] = s(&wrong);
    let err = run_args(args).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let msg = err.to_string();
    assert!(msg.contains('5') && msg.contains('8'), "{msg}");
}

#[test]
fn eval_identical_files_prints_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fmat");
    store_feature_matrix(
        &FeatureMatrix::from_f64(&standard_normal(16, 30, &mut seeded(2)), 50.0),
        &a,
    )
    .unwrap();
    let mut out = Vec::new();
    cmd_eval(
        &EvalCommand::EmoSim {
            a: a.clone(),
            b: a.clone(),
        },
        &mut out,
    )
    .unwrap();
    assert_eq!(String::from_utf8(out).unwrap().trim(), "1.0");

    let pairs = dir.path().join("pairs.jsonl");
    let lines: String = ["s1", "s1", "s2", "s2"]
        .iter()
        .map(|seed| format!("{{\"seed\":\"{seed}\",\"a\":\"a.fmat\",\"b\":\"a.fmat\"}}\n"))
        .collect();
    fs::write(&pairs, lines).unwrap();
    let report = dir.path().join("report.json");
    cmd_eval(
        &EvalCommand::Report {
            pairs,
            out: Some(report.clone()),
        },
        &mut Vec::new(),
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(v["report"]["mean"], 1.0);
    assert_eq!(v["report"]["std"], 0.0);
}

#[test]
fn curate_command_report_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_records(1000, &mut seeded(42));
    let input = dir.path().join("in.jsonl");
    write_manifest(&input, &records).unwrap();
    let (out, report) = (dir.path().join("out.jsonl"), dir.path().join("report.json"));
    run_args([
        "flowcond",
        "curate",
        "--in",
        &s(&input),
        "--out",
        &s(&out),
        "--report",
        &s(&report),
    ])
    .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    let kept = read_manifest(&out).unwrap();
    assert_eq!(v["report"]["input"], 1000);
    assert_eq!(v["report"]["retained"], kept.len());
    let expected = records
        .iter()
        .filter(|r| {
            let emo = match r.emotion_label.as_str() {
                "neutral" | "happy" => r.emotion_confidence >= 1.0,
                l => ["angry", "disgusted", "fearful", "sad", "surprised"].contains(&l),
            };
            emo && r.ovlr > 3.0 && !r.speaker_change
        })
        .count();
    assert_eq!(kept.len(), expected);
}

#[test]
fn binary_exit_codes_and_error_text() {
    let bin = env!("CARGO_BIN_EXE_flowcond");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let good = synthetic_records(2, &mut seeded(1));
    fs::write(
        &bad,
        format!("{}\n{}\nnot json\n", good[0].to_line(), good[1].to_line()),
    )
    .unwrap();
    let r = Command::new(bin)
        .args([
            "curate",
            "--in",
            &s(&bad),
            "--out",
            &s(&dir.path().join("o.jsonl")),
        ])
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("bad.jsonl:3:"), "{err}");

    let ok = Command::new(bin)
        .args([
            "curate",
            "--in",
            &s(&dir.path().join("missing.jsonl")),
            "--out",
            "x",
        ])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&ok.stderr).contains("io error"));

    let usage = Command::new(bin).args(["frobnicate"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let threads = Command::new(bin)
        .env("FLOWCOND_THREADS", "0")
        .args([
            "synth",
            "--count",
            "0",
            "-T",
            "3",
            "--out",
            &s(&dir.path().join("t")),
        ])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&threads.stderr).contains("--threads"));
}
