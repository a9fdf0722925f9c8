//! End-to-end runs of the `iahvae` binary on tiny configurations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iahvae::rng::NormalRng;
use iahvae::training::{load_raw, save_raw};
use tempfile::TempDir;

const TINY: &[&str] = &[
    "--set",
    "data.resolution=8",
    "--set",
    "data.count=16",
    "--set",
    "data.test_count=4",
    "--set",
    "model.layers_per_scale=1",
    "--set",
    "model.width_factor=0.0625",
    "--set",
    "train.batch_size=8",
];

fn iahvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iahvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = iahvae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(TINY);
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains the tiny model into `dir` and returns the checkpoint path.
fn train_tiny(dir: &Path, seed: &str) -> std::path::PathBuf {
    run_ok(&with_tiny(&[
        "train",
        "--out",
        p(dir),
        "--epochs",
        "2",
        "--seed",
        seed,
    ]));
    dir.join("model.iahc")
}

#[test]
fn unknown_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = iahvae(&["train", "--out", p(tmp.path()), "--set", "train.epoch=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));
}

#[test]
fn unknown_key_in_config_file_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\ntrain.epochs=2\nbogus=1\n").unwrap();
    let out = iahvae(&["train", "--out", p(tmp.path()), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_value_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = iahvae(&[
        "train",
        "--out",
        p(tmp.path()),
        "--set",
        "train.learning_rate=fast",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("none.iahc");
    let out = iahvae(&["infer", "--out", p(tmp.path()), "--checkpoint", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_and_lock_replays() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let ck_a = train_tiny(a.path(), "5");
    let ck_b = train_tiny(b.path(), "5");
    assert_eq!(fs::read(&ck_a).unwrap(), fs::read(&ck_b).unwrap());
    assert_eq!(
        fs::read(a.path().join("loss.csv")).unwrap(),
        fs::read(b.path().join("loss.csv")).unwrap()
    );

    // The lock file alone reproduces the run.
    let lock = a.path().join("config.lock");
    let text = fs::read_to_string(&lock).unwrap();
    assert!(text.contains("train.epochs=2") && text.contains("seed=5"));
    run_ok(&["train", "--config", p(&lock), "--out", p(c.path())]);
    assert_eq!(
        fs::read(&ck_a).unwrap(),
        fs::read(c.path().join("model.iahc")).unwrap()
    );

    let loss = fs::read_to_string(a.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,loss,recon,kl,grad_norm"));
}

#[test]
fn inference_modes_via_cli() {
    let tmp = TempDir::new().unwrap();
    let ck = train_tiny(&tmp.path().join("model"), "1");
    let run = |name: &str, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut args = with_tiny(&[
            "infer",
            "--checkpoint",
            p(&ck),
            "--out",
            p(&dir),
            "--set",
            "infer.images=2",
        ]);
        args.extend_from_slice(extra);
        run_ok(&args);
        dir
    };

    let hybrid0 = run("h0", &["--mode", "hybrid", "--N", "0"]);
    let amortized = run("am", &["--mode", "amortized"]);
    for i in 0..2 {
        let f = format!("recon_{i}.iaht");
        assert_eq!(
            fs::read(hybrid0.join(&f)).unwrap(),
            fs::read(amortized.join(&f)).unwrap()
        );
    }

    let it_a = run("it_a", &["--mode", "iterative", "--N", "0", "--seed", "1"]);
    let it_b = run("it_b", &["--mode", "iterative", "--N", "0", "--seed", "2"]);
    assert_ne!(
        fs::read(it_a.join("recon_0.iaht")).unwrap(),
        fs::read(it_b.join("recon_0.iaht")).unwrap()
    );

    // 8x8 has four scales, one layer each.
    let h3 = run("h3", &["--mode", "hybrid", "--N", "3"]);
    let trace = fs::read_to_string(h3.join("trace_0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 4);
    let recon = load_raw(&h3.join("recon_1.iaht")).unwrap();
    assert_eq!(recon.shape(), &[8, 8]);
    assert!(h3.join("recon_0.pgm").is_file() && h3.join("metrics.csv").is_file());
}

#[test]
fn inference_on_raw_input_file() {
    let tmp = TempDir::new().unwrap();
    let ck = train_tiny(&tmp.path().join("model"), "1");
    let stack = NormalRng::new(3, 0).normal_tensor(&[3, 8, 8]);
    let input = tmp.path().join("stack.iaht");
    save_raw(&stack, &input).unwrap();
    let dir = tmp.path().join("out");
    run_ok(&[
        "infer",
        "--checkpoint",
        p(&ck),
        "--out",
        p(&dir),
        "--input",
        p(&input),
        "--N",
        "1",
    ]);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let wrong = tmp.path().join("wrong.iaht");
    save_raw(&NormalRng::new(3, 0).normal_tensor(&[4, 4]), &wrong).unwrap();
    let out = iahvae(&[
        "infer",
        "--checkpoint",
        p(&ck),
        "--out",
        p(&dir),
        "--input",
        p(&wrong),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inverse_tasks_and_cutoff_validation() {
    let tmp = TempDir::new().unwrap();
    let ck = train_tiny(&tmp.path().join("model"), "1");
    for (name, flags) in [
        ("deblur", vec!["--task", "deblur", "--cutoff", "4"]),
        ("denoise", vec!["--task", "denoise", "--sigma", "1.0"]),
    ] {
        let dir = tmp.path().join(name);
        let mut args = with_tiny(&[
            "inverse",
            "--checkpoint",
            p(&ck),
            "--out",
            p(&dir),
            "--N",
            "2",
        ]);
        args.extend_from_slice(&["--set", "inverse.images=3"]);
        args.extend_from_slice(&flags);
        run_ok(&args);
        let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert!(summary
            .lines()
            .nth(1)
            .unwrap()
            .starts_with(&format!("{name},2,3,")));
        assert!(dir.join("hybrid.pgm").is_file() && dir.join("amortized.pgm").is_file());
    }
    for bad in ["3", "16", "0"] {
        let mut args = with_tiny(&["inverse", "--checkpoint", p(&ck), "--out", p(tmp.path())]);
        args.extend_from_slice(&["--task", "deblur", "--cutoff", bad]);
        assert_eq!(iahvae(&args).status.code(), Some(2), "cutoff {bad}");
    }
}

#[test]
fn bench_writes_one_row_per_depth() {
    let tmp = TempDir::new().unwrap();
    run_ok(&[
        "bench",
        "--out",
        p(tmp.path()),
        "--depths",
        "4,8",
        "--N",
        "1",
        "--set",
        "bench.resolution=8",
        "--set",
        "bench.warmup=0",
        "--set",
        "bench.repetitions=1",
        "--set",
        "bench.width_factor=0.0625",
    ]);
    let csv = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split(',').collect();
    let threads = header.iter().position(|&h| h == "threads").unwrap();
    for (row, depth) in lines[1..].iter().zip([4, 8]) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], depth.to_string());
        assert_eq!(cols[threads], "1");
    }
}

#[test]
fn decompose_energies_sum_to_image_energy() {
    let tmp = TempDir::new().unwrap();
    let x = NormalRng::new(8, 1).normal_tensor(&[16, 16]);
    let input = tmp.path().join("x.iaht");
    save_raw(&x, &input).unwrap();
    let dir = tmp.path().join("dec");
    run_ok(&["decompose", "--input", p(&input), "--out", p(&dir)]);
    let csv = fs::read_to_string(dir.join("energies.csv")).unwrap();
    let total: f64 = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - x.norm_sq()).abs() < 1e-9 * x.norm_sq());

    let mut sum = vec![0.0; 256];
    for k in 0..5 {
        let part = load_raw(&dir.join(format!("scale_{k}.iaht"))).unwrap();
        for (s, v) in sum.iter_mut().zip(part.data()) {
            *s += v;
        }
    }
    for (s, v) in sum.iter().zip(x.data()) {
        assert!((s - v).abs() < 1e-10);
    }
}
