use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--preset", "desk", "--channels", "8", "--attn-dim", "4", "--latent", "4", "--patches", "4",
    "--batch", "1",
];

fn a2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2c")).args(args).output().expect("spawn a2c")
}

fn ok(args: &[&str]) -> String {
    let out = a2c(args);
    assert!(
        out.status.success(),
        "a2c {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_tiny(dir: &Path, name: &str, steps: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["train", "--lambda", "1e-3", "--steps", steps, "--seed", seed];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--output", s(&path)]);
    ok(&args);
    path
}

/// Ascii PLY of `n` points on a spiral with a color ramp.
fn write_cloud(path: &Path, n: usize) {
    let mut t = format!(
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\n\
         property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    );
    for i in 0..n {
        let a = i as f32 * 0.05;
        let (x, y, z) = (a.cos() * (1.0 + a * 0.01), a.sin(), i as f32 * 0.002);
        writeln!(t, "{x} {y} {z} {} {} {}", i % 256, (i * 7) % 256, 255 - i % 256).unwrap();
    }
    std::fs::write(path, t).unwrap();
}

fn field(stdout: &str, key: &str) -> f64 {
    let mut it = stdout.split_whitespace();
    while let Some(w) = it.next() {
        if w == key {
            return it.next().unwrap().parse().unwrap();
        }
    }
    panic!("{key} missing from {stdout:?}");
}

#[test]
fn smoke_train_200_steps() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny(dir.path(), "m.a2cm", "200", "3");
    assert!(model.exists());
    let log = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
}

#[test]
fn missing_lambda_is_a_usage_error() {
    let out = a2c(&["train", "--output", "x.a2cm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--lambda"));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "a.a2cm", "5", "9");
    let b = train_tiny(dir.path(), "b.a2cm", "5", "9");
    let c = train_tiny(dir.path(), "c.a2cm", "5", "10");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn compress_decompress_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = train_tiny(d, "m.a2cm", "2", "1");
    let cloud = d.join("cloud.ply");
    write_cloud(&cloud, 3000);
    let stream = d.join("cloud.a2c");

    let printed = ok(&["compress", "--model", s(&model), "--input", s(&cloud), "--output", s(&stream)]);
    let bytes = std::fs::read(&stream).unwrap().len();
    assert_eq!(field(&printed, "bpp"), 8.0 * bytes as f64 / 3000.0);

    let rec1 = d.join("rec1.ply");
    let rec2 = d.join("rec2.ply");
    for (rec, jobs) in [(&rec1, "1"), (&rec2, "2")] {
        ok(&[
            "--jobs", jobs, "decompress", "--model", s(&model), "--input", s(&stream),
            "--geometry", s(&cloud), "--output", s(rec),
        ]);
    }
    assert_eq!(std::fs::read(&rec1).unwrap(), std::fs::read(&rec2).unwrap());
    // Positions survive bit-exactly through the float PLY round trip.
    let eval = ok(&["eval", "--input", s(&cloud), "--decoded", s(&rec1), "--stream", s(&stream)]);
    assert_eq!(field(&eval, "bpp"), field(&printed, "bpp"));

    let same = ok(&["eval", "--input", s(&cloud), "--decoded", s(&cloud)]);
    assert_eq!(field(&same, "psnr_y"), 100.0);
    assert_eq!(field(&same, "psnr_yuv"), 100.0);

    // Two fake RD points from the same stream at shifted lambdas.
    let csv = d.join("rd.csv");
    for lambda in ["1e-3", "2e-3"] {
        ok(&[
            "eval", "--input", s(&cloud), "--decoded", s(&rec1), "--stream", s(&stream),
            "--lambda", lambda, "--name", "tiny", "--output", s(&csv),
        ]);
    }
    // Equal rates are not a curve.
    let out = a2c(&["report", "--input", s(&csv), "--output", s(&d.join("r"))]);
    assert!(!out.status.success());

    let curve = d.join("curve.csv");
    std::fs::write(
        &curve,
        "name,lambda,bpp,psnr_y,psnr_yuv\nc,1,0.5,30,31\nc,2,0.25,27,28\nc,3,1.0,33,33.5\n",
    )
    .unwrap();
    let report = d.join("report");
    let first = ok(&["report", "--input", s(&curve), "--output", s(&report)]);
    assert!(first.contains("bd_br 0.0000% bd_psnr 0.0000 dB"), "{first}");
    let table = std::fs::read(report.join("c.csv")).unwrap();
    let second = ok(&["report", "--input", s(&curve), "--output", s(&report)]);
    assert_eq!(first, second);
    assert_eq!(std::fs::read(report.join("c.csv")).unwrap(), table);
    assert!(report.join("rd_y.svg").exists());
}

#[test]
fn mismatched_and_corrupt_models_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = train_tiny(d, "a.a2cm", "1", "1");
    let b = train_tiny(d, "b.a2cm", "1", "2");
    let cloud = d.join("cloud.ply");
    write_cloud(&cloud, 500);
    let stream = d.join("c.a2c");
    ok(&["compress", "--model", s(&a), "--input", s(&cloud), "--output", s(&stream)]);

    let out = a2c(&[
        "decompress", "--model", s(&b), "--input", s(&stream), "--geometry", s(&cloud),
        "--output", s(&d.join("r.ply")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model/stream mismatch"));

    let mut bytes = std::fs::read(&a).unwrap();
    bytes.truncate(bytes.len() / 2);
    let broken = d.join("broken.a2cm");
    std::fs::write(&broken, bytes).unwrap();
    let out = a2c(&["compress", "--model", s(&broken), "--input", s(&cloud), "--output", s(&stream)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && !err.contains("panicked"), "{err}");
}
