use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gdn_core::PatchSet;
use tempfile::TempDir;

fn gdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdn"))
        .args(args)
        .output()
        .expect("run gdn")
}

fn ok(args: &[&str]) -> String {
    let out = gdn(args);
    assert!(
        out.status.success(),
        "gdn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .parse()
        .unwrap()
}

fn camera() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/camera.pgm")
}

#[test]
fn gen_fit_eval_pipeline_reduces_negentropy() {
    let dir = TempDir::new().unwrap();
    let (data, cfg, model) = (p(&dir, "gsm.patch"), p(&dir, "fit.toml"), p(&dir, "m.gdn"));
    ok(&[
        "gen",
        "gsm",
        "--dim",
        "2",
        "--scale",
        "lognormal:1.2",
        "--count",
        "20000",
        "--seed",
        "1",
        "--out",
        &data,
    ]);
    std::fs::write(
        &cfg,
        "tying = \"radial\"\nepochs = 5\nlearning_rate = 0.01\n",
    )
    .unwrap();
    let report = ok(&["fit", "--data", &data, "--config", &cfg, "--out", &model]);
    assert!(report.contains("# tying = \"radial\""));
    assert!(report.contains("# batch_size = 256"), "defaults are echoed");
    let eval = ok(&["eval", "--model", &model, "--data", &data]);
    assert!(value(&eval, "delta_j") >= 0.3, "{eval}");
    assert!(value(&eval, "mi") < 0.05, "{eval}");
}

#[test]
fn transform_then_invert_round_trips() {
    let dir = TempDir::new().unwrap();
    let (data, cfg, model) = (p(&dir, "x.patch"), p(&dir, "c.toml"), p(&dir, "m.gdn"));
    let (y, back) = (p(&dir, "y.patch"), p(&dir, "back.patch"));
    ok(&[
        "gen", "gsm", "--dim", "4", "--count", "3000", "--out", &data,
    ]);
    std::fs::write(&cfg, "epochs = 2\n").unwrap();
    ok(&["fit", "--data", &data, "--config", &cfg, "--out", &model]);
    ok(&["transform", "--model", &model, "--data", &data, "--out", &y]);
    ok(&["invert", "--model", &model, "--data", &y, "--out", &back]);
    let a = PatchSet::load(Path::new(&data)).unwrap();
    let b = PatchSet::load(Path::new(&back)).unwrap();
    let err = (&a.data - &b.data)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-6, "{err}");
    assert!(b.preproc.contains("gdn-inverse"));
}

#[test]
fn cascade_fit_and_eval() {
    let dir = TempDir::new().unwrap();
    let (data, cfg, model, y, back) = (
        p(&dir, "x.patch"),
        p(&dir, "c.toml"),
        p(&dir, "m.gdn"),
        p(&dir, "y.patch"),
        p(&dir, "b.patch"),
    );
    ok(&[
        "gen", "gsm", "--dim", "3", "--count", "4000", "--out", &data,
    ]);
    std::fs::write(&cfg, "epochs = 2\nstages = 2\n").unwrap();
    let report = ok(&["fit", "--data", &data, "--config", &cfg, "--out", &model]);
    assert!(
        report.lines().any(|l| l.starts_with("1\t1\t")),
        "stage 1 epochs reported"
    );
    let eval = ok(&["eval", "--model", &model, "--data", &data]);
    let total = value(&eval, "delta_j");
    let parts = value(&eval, "delta_j.stage0") + value(&eval, "delta_j.stage1");
    assert!((total - parts).abs() <= 1e-10 * total.abs());
    ok(&["transform", "--model", &model, "--data", &data, "--out", &y]);
    ok(&["invert", "--model", &model, "--data", &y, "--out", &back]);
    let a = PatchSet::load(Path::new(&data)).unwrap();
    let b = PatchSet::load(Path::new(&back)).unwrap();
    assert!((&a.data - &b.data).iter().all(|v| v.abs() < 1e-5));
}

#[test]
fn fits_are_bit_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "x.patch");
    ok(&[
        "gen",
        "ica",
        "--mixing",
        "1,0.6;0.4,1",
        "--count",
        "5000",
        "--seed",
        "4",
        "--out",
        &data,
    ]);
    let cfg = p(&dir, "c.toml");
    std::fs::write(&cfg, "epochs = 2\ntying = \"ica-mg\"\nseed = 9\n").unwrap();
    let run = |tag: &str| {
        let (m, r) = (
            p(&dir, &format!("{tag}.gdn")),
            p(&dir, &format!("{tag}.txt")),
        );
        ok(&[
            "fit", "--data", &data, "--config", &cfg, "--out", &m, "--report", &r,
        ]);
        (std::fs::read(m).unwrap(), std::fs::read(r).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn sampling_is_seeded() {
    let dir = TempDir::new().unwrap();
    let (data, model, s1, s2) = (
        p(&dir, "x.patch"),
        p(&dir, "m.gdn"),
        p(&dir, "s1"),
        p(&dir, "s2"),
    );
    let cfg = p(&dir, "c.toml");
    ok(&[
        "gen", "lp", "--dim", "2", "--p", "1.5", "--count", "3000", "--out", &data,
    ]);
    std::fs::write(&cfg, "epochs = 1\n").unwrap();
    ok(&["fit", "--data", &data, "--config", &cfg, "--out", &model]);
    ok(&[
        "sample", "--model", &model, "--count", "500", "--seed", "3", "--out", &s1,
    ]);
    ok(&[
        "sample", "--model", &model, "--count", "500", "--seed", "3", "--out", &s2,
    ]);
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    assert_eq!(PatchSet::load(Path::new(&s1)).unwrap().len(), 500);
}

#[test]
fn denoise_reports_quality_gains() {
    let dir = TempDir::new().unwrap();
    let cam = camera();
    let cam = cam.to_str().unwrap();
    let (patches, cfg, model, out) = (
        p(&dir, "n.patch"),
        p(&dir, "c.toml"),
        p(&dir, "m.gdn"),
        p(&dir, "d.pgm"),
    );
    let sigma = (50.0f64 / 255.0).to_string();
    let crop = "192,192,96,96";
    ok(&[
        "gen",
        "patches",
        "--image",
        cam,
        "--crop",
        crop,
        "--size",
        "4",
        "--stride",
        "1",
        "--noise-sigma",
        &sigma,
        "--noise-seed",
        "5",
        "--remove-mean",
        "--out",
        &patches,
    ]);
    std::fs::write(&cfg, "epochs = 3\ninit = \"zca\"\n").unwrap();
    ok(&["fit", "--data", &patches, "--config", &cfg, "--out", &model]);
    let metrics = ok(&[
        "denoise",
        "--model",
        &model,
        "--image",
        cam,
        "--crop",
        crop,
        "--sigma",
        &sigma,
        "--noise-seed",
        "5",
        "--stride",
        "2",
        "--out",
        &out,
    ]);
    assert!(
        value(&metrics, "psnr_denoised") > value(&metrics, "psnr_noisy") + 2.0,
        "{metrics}"
    );
    assert!(
        value(&metrics, "ssim_denoised") > value(&metrics, "ssim_noisy"),
        "{metrics}"
    );
    let written = gdn_core::data::image::read_gray(Path::new(&out)).unwrap();
    assert_eq!((written.width, written.height), (96, 96));
}

#[test]
fn micurve_emits_one_row_per_distance_and_variant() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "c.toml");
    std::fs::write(&cfg, "epochs = 2\nlearning_rate = 0.01\ninit = \"zca\"\n").unwrap();
    let cam = camera();
    let table = ok(&[
        "micurve",
        "--image",
        cam.to_str().unwrap(),
        "--distances",
        "1,8",
        "--max-pairs",
        "5000",
        "--config",
        &cfg,
    ]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(table.lines().next(), Some("distance\tvariant\tmi"));
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("1\traw\t"));
    assert!(rows[7].starts_with("8\tfull\t"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gdn(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn malformed_model_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let (model, data) = (p(&dir, "junk.gdn"), p(&dir, "x.patch"));
    std::fs::write(&model, b"GDNMODEL\x01\x00").unwrap();
    ok(&["gen", "gsm", "--dim", "2", "--count", "100", "--out", &data]);
    let out = gdn(&["eval", "--model", &model, "--data", &data]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error: kind=format code=3 message="),
        "{err}"
    );
}

#[test]
fn bad_config_values_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = (p(&dir, "x.patch"), p(&dir, "c.toml"));
    ok(&["gen", "gsm", "--dim", "2", "--count", "100", "--out", &data]);
    std::fs::write(&cfg, "learning_rate = -1\n").unwrap();
    let out = gdn(&[
        "fit",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        &p(&dir, "m"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=usage"));
}
