use avds::io::{self, Tensor, TensorData};
use std::path::Path;
use std::process::{Command, Output};

fn avds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avds")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = avds(args);
    assert!(
        out.status.success(),
        "{args:?}: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn flip_twice_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let values: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
    io::write_tensor(&a, &Tensor::vector(values.clone())).unwrap();
    ok(&["flip", "--in", p(&a), "--out", p(&b)]);
    ok(&["flip", "--in", p(&b), "--out", p(&c)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let once = io::read_tensor(&b).unwrap().into_real().unwrap();
    assert_eq!(once[0], values[36]);
}

#[test]
fn adapted_density_on_fourier_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let (w, pi) = (dir.path().join("w"), dir.path().join("pi"));
    let weights: Vec<f64> = (0..256).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
    io::write_tensor(&w, &Tensor::vector(weights)).unwrap();
    ok(&["density", "--spec", "dft2d/identity/16", "--weights", p(&w), "--kind", "adapted", "--out", p(&pi)]);
    let values = io::read_tensor(&pi).unwrap().into_real().unwrap();
    assert_eq!(values.len(), 256);
    assert!(values.iter().all(|v| (v - 1.0 / 256.0).abs() < 1e-12));
}

#[test]
fn pipeline_is_deterministic_and_recovers_a_sparse_image() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // dyadic square on a 16x16 grid: a handful of Haar coefficients
    let mut img = vec![0u8; 256];
    for r in 8..16 {
        for c in 0..8 {
            img[r * 16 + c] = 200;
        }
    }
    let mut pgm = b"P5\n16 16\n255\n".to_vec();
    pgm.extend(&img);
    std::fs::write(d.join("img.pgm"), &pgm).unwrap();
    let pi = d.join("pi");
    ok(&["density", "--spec", "hadamard2d/haar2d/16/4", "--kind", "coherence", "--out", p(&pi), "--png-log", p(&d.join("pi.pgm"))]);
    for name in ["m1", "m2"] {
        ok(&["mask", "--density", p(&pi), "--fraction", "0.5", "--mode", "distinct", "--seed", "5", "--out", p(&d.join(name))]);
    }
    assert_eq!(std::fs::read(d.join("m1")).unwrap(), std::fs::read(d.join("m2")).unwrap());
    ok(&[
        "reconstruct", "--spec", "hadamard2d/haar2d/16/4", "--mask", p(&d.join("m1")), "--image", p(&d.join("img.pgm")),
        "--out", p(&d.join("x")), "--out-image", p(&d.join("x.pgm")),
    ]);
    let x = match io::read_tensor(&d.join("x")).unwrap().data().clone() {
        TensorData::Complex(v) => v,
        TensorData::Real(_) => panic!("complex output expected"),
    };
    let rec = io::read_pgm(&d.join("x.pgm")).unwrap();
    assert_eq!(x.len(), 256);
    for (i, &v) in img.iter().enumerate() {
        assert!((rec.pixels[i] - v as f64 / 200.0).abs() <= 1.0 / 255.0, "pixel {i}");
    }
}

#[test]
fn block_mask_expands_to_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (pi, m) = (dir.path().join("pi"), dir.path().join("m"));
    ok(&["density", "--spec", "dft2d/tensor-haar/8", "--kind", "uniform", "--partition", "lines-v", "--out", p(&pi)]);
    ok(&[
        "mask", "--density", p(&pi), "--m", "3", "--seed", "1", "--spec", "dft2d/tensor-haar/8", "--partition", "lines-v",
        "--out", p(&m),
    ]);
    let mask = io::mask_from_tensor(io::read_tensor(&m).unwrap(), 64).unwrap();
    assert_eq!(mask.len(), 24);
}

#[test]
fn errors_print_one_class_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = avds(&["flip", "--in", p(&dir.path().join("missing")), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "error: io-error\n");
    assert!(!out.stderr.is_empty());

    std::fs::write(dir.path().join("bad"), b"not a tensor").unwrap();
    let out = avds(&["flip", "--in", p(&dir.path().join("bad")), "--out", p(&dir.path().join("o"))]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "error: format-error\n");
}

#[test]
fn experiment_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
schema_version = 1
spec = "hadamard2d/haar2d/16/4"
densities = ["adapted", "uniform"]
fraction = 0.4
trials = 2
master_seed = 3
record_timings = false
figures = "fig"

[truth]
kind = "uniform"
sparsity = 6
"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["experiment", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["experiment", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("fig/density-adapted.pgm").exists());
    assert!(dir.path().join("fig/reconstruction-uniform.pgm").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "schema_version = 1\nspec = \"dft1d/identity/8\"\nbogus = 1\n").unwrap();
    let out = avds(&["experiment", "--config", p(&cfg)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "error: config-error\n");
}
