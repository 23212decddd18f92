//! End-to-end runs of the dvfkit binary against temporary files.

use std::path::Path;
use std::process::{Command, Output};

use dvfkit::io::config::ResolvedConfig;
use dvfkit::io::mhd;
use dvfkit::pairs::Manifest;

const BIN: &str = env!("CARGO_BIN_EXE_dvfkit");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_dvf_respects_the_magnitude_cap_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-dvf",
        "--category",
        "single",
        "--stage",
        "4",
        "--class",
        "highest",
        "--seed",
        "7",
        "--dims",
        "24,24,24",
        "--out",
        "f.mhd",
    ];
    run_ok(dir.path(), &args);

    let field = mhd::read_field(dir.path().join("f.mhd")).unwrap();
    let max = (0..3)
        .map(|a| field.max_abs_component(a))
        .fold(0.0, f64::max);
    // Disk storage is f32, so equality holds only to single precision.
    assert!((max - 20.0).abs() < 1e-5, "max component {max}");

    let cfg = ResolvedConfig::read(dir.path().join("f.run.cfg")).unwrap();
    assert_eq!(cfg.get("run", "rng"), Some("splitmix64"));
    assert_eq!(cfg.get("run", "command"), Some("gen-dvf"));
    assert_eq!(cfg.get("gen-dvf", "class"), Some("highest"));

    let first = std::fs::read(dir.path().join("f.raw")).unwrap();
    run_ok(dir.path(), &args);
    let second = std::fs::read(dir.path().join("f.raw")).unwrap();
    assert_eq!(first, second, "same seed must give identical bytes");
}

#[test]
fn gen_dvf_identity_jacobian_is_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "12,12,12",
            "--out",
            "id.mhd",
            "--jac-hist",
            "hist.csv",
        ],
    );
    let hist = std::fs::read_to_string(dir.path().join("hist.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("lo,hi,count"));
    assert_eq!(lines.next(), Some("1.000000,1.000000,1728"));
    for line in lines {
        assert!(line.ends_with(",0"), "unexpected occupancy: {line}");
    }
}

#[test]
fn gen_dvf_requires_a_class_outside_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "single",
            "--stage",
            "4",
            "--out",
            "f.mhd",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error: E_PARAM:"),
        "unexpected stderr: {err}"
    );
    assert_eq!(err.trim_end().lines().count(), 1);
}

fn write_test_volume(path: &Path, n: usize) {
    let grid = dvfkit::Grid::isotropic([n, n, n]);
    let v = dvfkit::Volume::from_fn(grid, |[x, y, z]| {
        100.0 + ((x * 7 + y * 3 + z * 5) % 37) as f64
    })
    .unwrap();
    mhd::write_volume(path, &v).unwrap();
}

#[test]
fn make_pairs_skips_respiratory_without_a_mask() {
    let dir = tempfile::tempdir().unwrap();
    write_test_volume(&dir.path().join("src.mhd"), 16);
    let stdout = run_ok(
        dir.path(),
        &[
            "make-pairs",
            "--input",
            "src.mhd",
            "--stage",
            "1",
            "--seed",
            "11",
            "--out-dir",
            "pairs",
        ],
    );
    assert!(
        stdout.contains("wrote 20 of 28 pairs"),
        "stdout: {stdout}"
    );

    let written: Vec<_> = std::fs::read_dir(dir.path().join("pairs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".truth.mhd"))
        .collect();
    assert_eq!(written.len(), 20);

    let manifest_text =
        std::fs::read_to_string(dir.path().join("pairs/manifest.json")).unwrap();
    let manifest = Manifest::from_json(&manifest_text).unwrap();
    assert_eq!(manifest.recipes.len(), 28);
    assert_eq!(manifest.recipes.iter().filter(|r| r.skipped).count(), 8);
    assert_eq!(manifest.links.len(), 27);

    let cfg = ResolvedConfig::read(dir.path().join("pairs/run.cfg")).unwrap();
    assert_eq!(cfg.get("make-pairs", "stage"), Some("1"));
}

#[test]
fn deform_by_identity_preserves_the_volume() {
    let dir = tempfile::tempdir().unwrap();
    write_test_volume(&dir.path().join("v.mhd"), 10);
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "10,10,10",
            "--out",
            "id.mhd",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "deform", "--input", "v.mhd", "--field", "id.mhd", "--out", "w.mhd",
        ],
    );
    let a = std::fs::read(dir.path().join("v.raw")).unwrap();
    let b = std::fs::read(dir.path().join("w.raw")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn compose_of_identities_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "8,8,8",
            "--out",
            "id.mhd",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "compose", "--first", "id.mhd", "--second", "id.mhd", "--out", "c.mhd",
        ],
    );
    let c = mhd::read_field(dir.path().join("c.mhd")).unwrap();
    assert!(c.is_identity());
}

#[test]
fn register_identity_predictor_reports_and_writes_zero_total() {
    let dir = tempfile::tempdir().unwrap();
    write_test_volume(&dir.path().join("v.mhd"), 16);
    let stdout = run_ok(
        dir.path(),
        &[
            "register",
            "--fixed",
            "v.mhd",
            "--moving",
            "v.mhd",
            "--stages",
            "4,2,1",
            "--predictor",
            "identity",
            "--out-dir",
            "reg",
        ],
    );
    assert!(stdout.contains("stage 4 (identity)"), "stdout: {stdout}");
    assert!(stdout.contains("stage 1 (identity)"), "stdout: {stdout}");

    let total = mhd::read_field(dir.path().join("reg/total.mhd")).unwrap();
    assert!(total.is_identity());
    for f in [
        "reg/warped.mhd",
        "reg/stage4_residual.mhd",
        "reg/stage2_residual.mhd",
        "reg/stage1_residual.mhd",
        "reg/run.cfg",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn evaluate_zero_field_reports_the_initial_distance() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "16,16,16",
            "--out",
            "zero.mhd",
        ],
    );
    std::fs::write(dir.path().join("lm.txt"), "2 3 4 5 3 4\n1 1 1 1 5 1\n").unwrap();
    run_ok(
        dir.path(),
        &[
            "evaluate",
            "--field",
            "zero.mhd",
            "--landmarks",
            "lm.txt",
            "--out",
            "eval.csv",
        ],
    );
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "landmark,distance_mm");
    assert_eq!(lines[1], "0,3.000000");
    assert_eq!(lines[2], "1,4.000000");
    assert_eq!(lines[3], "summary,3.500000,0.500000");
}

#[test]
fn evaluate_index_coords_scale_with_the_grid_spacing() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "16,16,16",
            "--spacing",
            "2,2,2",
            "--out",
            "zero.mhd",
        ],
    );
    // Index offset of 3 along x is a 6 mm world error at 2 mm spacing.
    std::fs::write(dir.path().join("lm.txt"), "2 3 4 5 3 4\n").unwrap();
    run_ok(
        dir.path(),
        &[
            "evaluate",
            "--field",
            "zero.mhd",
            "--landmarks",
            "lm.txt",
            "--index-coords",
            "--out",
            "eval.csv",
        ],
    );
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(csv.contains("0,6.000000"), "csv: {csv}");
}

#[test]
fn loss_between_identical_zero_fields_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "gen-dvf",
            "--category",
            "identity",
            "--stage",
            "1",
            "--dims",
            "10,10,10",
            "--out",
            "z.mhd",
        ],
    );
    let stdout = run_ok(
        dir.path(),
        &[
            "loss",
            "--truth",
            "z.mhd",
            "--pred",
            "z.mhd",
            "--grad-out",
            "grad.mhd",
        ],
    );
    assert!(stdout.contains("huber = 0.000000"), "stdout: {stdout}");
    assert!(stdout.contains("bending = 0.000000"), "stdout: {stdout}");
    assert!(stdout.contains("total = 0.000000"), "stdout: {stdout}");
    let grad = mhd::read_field(dir.path().join("grad.mhd")).unwrap();
    assert!(grad.is_identity());
    assert!(dir.path().join("grad.run.cfg").exists());
}

#[test]
fn missing_input_fails_with_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lm.txt"), "1 1 1 2 2 2\n").unwrap();
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--field",
            "missing.mhd",
            "--landmarks",
            "lm.txt",
            "--out",
            "x.csv",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: E_IO:"), "stderr: {err}");
    assert!(err.contains("missing.mhd"), "stderr: {err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}
