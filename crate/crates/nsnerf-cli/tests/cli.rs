//! End-to-end tests against the compiled binary: every subcommand, the
//! exit-code contract, and run-to-run determinism of all output files.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn nsnerf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsnerf"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a subcommand, asserts success, returns its stderr log.
fn ok(out: &Path, args: &[&str]) -> String {
    let o = nsnerf(out, args);
    assert!(
        o.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(out: &Path, args: &[&str]) -> i32 {
    nsnerf(out, args).status.code().expect("exit code")
}

/// Relative path -> SHA-256 of contents, for whole-tree comparison.
fn tree_hash(root: &Path) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).expect("readable file");
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                let digest: String = Sha256::digest(&bytes)
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                map.insert(rel, digest);
            }
        }
    }
    map
}

/// Tiny sphere dataset: 4 train views, 2 test views, 24x24.
fn synth_tiny(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth", "--scene", "sphere", "--views", "4", "--test-views", "2", "--res", "24",
        "--data", "d",
    ];
    args.extend_from_slice(extra);
    ok(out, &args);
}

const TRAIN_TINY: &[&str] = &[
    "train", "--data", "d/train", "--iterations", "25", "--batch-rays", "16", "--n-samples",
    "4", "--ckpt", "ck", "--metrics", "m.csv",
];

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("readable json"))
        .expect("valid json")
}

#[test]
fn synth_writes_both_splits_with_requested_counts() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    let train = json_file(&tmp.path().join("d/train/manifest.json"));
    let test = json_file(&tmp.path().join("d/test/manifest.json"));
    assert_eq!(train["frames"].as_array().unwrap().len(), 4);
    assert_eq!(test["frames"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("d/train/color/0003.png").exists());
    assert!(tmp.path().join("d/train/depth/0003.png").exists());
}

#[test]
fn depth_noise_perturbs_depth_but_not_color() {
    let clean = tempfile::tempdir().unwrap();
    let noisy = tempfile::tempdir().unwrap();
    synth_tiny(clean.path(), &[]);
    synth_tiny(noisy.path(), &["--noise", "0.05"]);
    for i in 0..4 {
        let name = format!("{i:04}.png");
        let color_a = std::fs::read(clean.path().join("d/train/color").join(&name)).unwrap();
        let color_b = std::fs::read(noisy.path().join("d/train/color").join(&name)).unwrap();
        assert_eq!(color_a, color_b, "noise must leave colors untouched");
    }
    let depth_a = std::fs::read(clean.path().join("d/train/depth/0000.png")).unwrap();
    let depth_b = std::fs::read(noisy.path().join("d/train/depth/0000.png")).unwrap();
    assert_ne!(depth_a, depth_b, "noise must perturb stored depth");
}

#[test]
fn cloud_size_is_antitone_in_tau() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    let mut sizes = Vec::new();
    for (tau, name) in [("0.01", "a.ply"), ("1.0", "b.ply")] {
        ok(tmp.path(), &["cloud", "--data", "d/train", "--tau", tau, "--ply", name]);
        let cloud = nsnerf::dataio::read_ply::<f32>(&tmp.path().join(name)).unwrap();
        sizes.push(cloud.len());
    }
    assert!(sizes[0] > 0);
    assert!(
        sizes[0] >= sizes[1],
        "looser tau must not grow the cloud: {sizes:?}"
    );
}

/// Pulls the two counters out of "zero pixels before N, after M".
fn zero_counts(log: &str) -> (usize, usize) {
    let tail = log.split("before ").nth(1).expect("log names counts");
    let (before, rest) = tail.split_once(',').expect("comma after count");
    let after = rest
        .trim_start_matches(" after ")
        .split_whitespace()
        .next()
        .expect("after count");
    (before.trim().parse().unwrap(), after.trim().parse().unwrap())
}

#[test]
fn depth_fill_reduces_zeros_and_no_fill_bypasses() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "synth", "--scene", "sphere", "--views", "6", "--test-views", "2", "--res", "48",
            "--data", "d",
        ],
    );
    ok(tmp.path(), &["cloud", "--data", "d/train", "--tau", "0.1", "--ply", "c.ply"]);
    let base = &["depth", "--cloud", "c.ply", "--data", "d/test", "--view", "0"][..];
    let filled = ok(tmp.path(), &[base, &["--png", "f.png"]].concat());
    let raw = ok(tmp.path(), &[base, &["--no-fill", "--png", "r.png"]].concat());
    let (fb, fa) = zero_counts(&filled);
    let (rb, ra) = zero_counts(&raw);
    assert_eq!(rb, ra, "--no-fill must not change any pixel");
    assert_eq!(fb, rb, "projection is identical in both runs");
    assert!(fa <= fb, "filling never creates zeros");
    assert!(tmp.path().join("f.png").exists());
    assert!(tmp.path().join("r.png").exists());
}

#[test]
fn train_eval_render_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    ok(tmp.path(), TRAIN_TINY);
    assert!(tmp.path().join("ck.bin").exists());
    assert!(tmp.path().join("ck.json").exists());
    let metrics = std::fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    assert!(metrics.starts_with("iteration,loss\n"));
    assert!(metrics.lines().count() >= 2);

    ok(
        tmp.path(),
        &[
            "eval", "--data", "d/test", "--ckpt", "ck", "--n-samples", "4", "--report",
            "r.json", "--renders", "views",
        ],
    );
    let report = json_file(&tmp.path().join("r.json"));
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["per_view_psnr"].as_array().unwrap().len(), 2);
    assert!(entries[0]["mean_psnr"].as_f64().unwrap().is_finite());
    assert!(tmp.path().join("views/view_0000.png").exists());
    assert!(tmp.path().join("views/view_0001.png").exists());

    ok(
        tmp.path(),
        &["render", "--data", "d/test", "--ckpt", "ck", "--view", "1", "--n-samples", "4",
          "--png", "v1.png"],
    );
    assert!(tmp.path().join("v1.png").exists());
}

#[test]
fn sweep_on_fixed_checkpoint_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    ok(tmp.path(), TRAIN_TINY);
    ok(
        tmp.path(),
        &[
            "sweep", "--test-data", "d/test", "--ckpt", "ck", "--axis", "alpha", "--values",
            "1,0.5,0.25,0.125", "--n-samples", "4", "--report", "sw.json",
        ],
    );
    let report = json_file(&tmp.path().join("sw.json"));
    let ids: Vec<&str> = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["config_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["alpha=1", "alpha=0.5", "alpha=0.25", "alpha=0.125"]);
}

#[test]
fn sweep_retrains_per_value_without_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    ok(
        tmp.path(),
        &[
            "sweep", "--data", "d/train", "--test-data", "d/test", "--axis", "n_samples",
            "--values", "4,8", "--iterations", "10", "--batch-rays", "8", "--report",
            "sw.json",
        ],
    );
    let report = json_file(&tmp.path().join("sw.json"));
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["config_id"], "n_samples=4");
    assert_eq!(entries[1]["config_id"], "n_samples=8");
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    let args = [
        "train", "--data", "d/train", "--iterations", "0", "--ckpt", "ck2", "--metrics",
        "m2.csv",
    ];
    assert_eq!(code(tmp.path(), &args), 2);
    assert!(!tmp.path().join("ck2.bin").exists());
    assert!(!tmp.path().join("m2.csv").exists());
}

#[test]
fn unknown_config_file_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    std::fs::write(tmp.path().join("bad.json"), r#"{"train": {"iterationz": 5}}"#).unwrap();
    let args = ["train", "--data", "d/train", "--config", "bad.json"];
    assert_eq!(code(tmp.path(), &args), 2);
}

#[test]
fn missing_dataset_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["cloud", "--data", "missing", "--ply", "c.ply"];
    assert_eq!(code(tmp.path(), &args), 3);
    assert!(!tmp.path().join("c.ply").exists());
}

#[test]
fn numeric_blowup_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    synth_tiny(tmp.path(), &[]);
    let args = [
        "train", "--data", "d/train", "--iterations", "6", "--batch-rays", "8", "--n-samples",
        "4", "--lr", "1e20", "--ckpt", "blown",
    ];
    assert_eq!(code(tmp.path(), &args), 4);
    assert!(!tmp.path().join("blown.bin").exists());
}

/// Acceptance criterion 11: equal-seed runs of the full pipeline write
/// hash-identical result files.
#[test]
fn criterion_11_equal_seed_runs_are_hash_identical() {
    let run = |root: &Path| {
        ok(
            root,
            &[
                "--seed", "11", "synth", "--scene", "sphere", "--views", "4", "--test-views",
                "2", "--res", "24", "--data", "d",
            ],
        );
        ok(root, &["cloud", "--data", "d/train", "--tau", "0.1", "--ply", "c.ply"]);
        ok(
            root,
            &[
                "--seed", "11", "train", "--data", "d/train", "--iterations", "25",
                "--batch-rays", "16", "--n-samples", "4", "--ckpt", "ck", "--metrics",
                "m.csv",
            ],
        );
        ok(
            root,
            &[
                "--seed", "11", "eval", "--data", "d/test", "--ckpt", "ck", "--cloud",
                "c.ply", "--depth-source", "cloud", "--n-samples", "4", "--report", "r.json",
                "--renders", "views",
            ],
        );
        ok(
            root,
            &[
                "--seed", "11", "sweep", "--test-data", "d/test", "--ckpt", "ck", "--axis",
                "alpha", "--values", "1,0.5", "--n-samples", "4", "--report", "sw.json",
            ],
        );
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    let (ha, hb) = (tree_hash(a.path()), tree_hash(b.path()));
    assert_eq!(
        ha.keys().collect::<Vec<_>>(),
        hb.keys().collect::<Vec<_>>(),
        "runs produced different file sets"
    );
    let diff: Vec<&String> = ha
        .iter()
        .filter(|(k, v)| hb.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    assert!(diff.is_empty(), "files differ between equal-seed runs: {diff:?}");
    println!(
        "criterion 11: equal-seed pipelines hash-identical over {} files: PASS",
        ha.len()
    );
}
