use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xrdn_core::analysis::scores::aggregate_scores;
use xrdn_core::experiment::read_eval_csv;
use xrdn_core::metrics::PSNR_CAP_DB;
use xrdn_core::nn::checkpoint::read_checkpoint_file;
use xrdn_core::nn::Params;
use xrdn_core::rng::derive_seed;
use xrdn_core::DatasetManifest;

const SMALL: [&str; 4] = ["--set", "height=32", "--set", "width=32"];

fn xrdn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrdn"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn xrdn")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = xrdn(dir, args);
    assert!(o.status.success(), "xrdn {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn small_dataset(dir: &Path, name: &str, n: usize, noise: &str) {
    let n = format!("n_pairs={n}");
    ok(dir, &with_small(&["synth", "--out", name, "--noise", noise, "--set", &n]));
}

#[test]
fn single_pair_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &with_small(&["synth", "--out", "d", "--set", "n_pairs=1"]));
    let frames = files_in(&tmp.path().join("d/frames"));
    assert_eq!(frames.len(), 2);
    assert!(frames.iter().all(|f| f.extension().is_some_and(|e| e == "dfrm")));
    let m = DatasetManifest::read_file(tmp.path().join("d/manifest.csv")).unwrap();
    assert_eq!(m.len(), 1);
    assert!(tmp.path().join("d/config.txt").is_file());
}

#[test]
fn default_config_splits_140_40_20() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "d"]);
    let m = DatasetManifest::read_file(tmp.path().join("d/manifest.csv")).unwrap();
    assert_eq!(m.len(), 200);
    let counts: Vec<usize> = [xrdn_core::Split::Train, xrdn_core::Split::Val, xrdn_core::Split::Test]
        .iter()
        .map(|s| m.count(*s))
        .collect();
    assert_eq!(counts, [140, 40, 20]);
}

#[test]
fn noise_suffix_names_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 3, "pois+g");
    let m = DatasetManifest::read_file(tmp.path().join("d/manifest.csv")).unwrap();
    assert!(m.entries().iter().all(|e| e.pair_id.ends_with("pois+g")), "{:?}", m.entries());
}

#[test]
fn renoising_matches_direct_synthesis() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "exp", 4, "exp");
    small_dataset(tmp.path(), "direct", 4, "pois");
    ok(tmp.path(), &["noise", "--data", "exp", "--noise", "pois", "--out", "renoised"]);
    let direct = DatasetManifest::read_file(tmp.path().join("direct/manifest.csv")).unwrap();
    let renoised = DatasetManifest::read_file(tmp.path().join("renoised/manifest.csv")).unwrap();
    assert_eq!(direct, renoised);
    for e in direct.entries() {
        for p in [&e.lc_path, &e.hc_path] {
            let a = std::fs::read(tmp.path().join("direct").join(p)).unwrap();
            let b = std::fs::read(tmp.path().join("renoised").join(p)).unwrap();
            assert!(a == b, "{} differs", p.display());
        }
    }
}

#[test]
fn reruns_from_emitted_config_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "a", 3, "gauss+g");
    ok(tmp.path(), &["synth", "--config", "a/config.txt", "--out", "b"]);
    for f in files_in(&tmp.path().join("a/frames")) {
        let twin = tmp.path().join("b/frames").join(f.file_name().unwrap());
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(twin).unwrap());
    }
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 10, "pois");
    let args = ["train", "--data", "d", "--out", "t", "--seed", "7", "--set", "lr=0", "--set", "epochs=1"];
    ok(tmp.path(), &[&args[..], &["--set", "depth=3", "--set", "filters=4"]].concat());
    let (spec, best) = read_checkpoint_file(tmp.path().join("t/best.dnet")).unwrap();
    let init = Params::he(&spec, derive_seed(7, 0)).unwrap();
    assert_eq!(best, init);
    let history = std::fs::read_to_string(tmp.path().join("t/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn evaluating_clean_frames_against_themselves() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 12, "pois");
    ok(tmp.path(), &["train", "--data", "d", "--out", "t", "--set", "epochs=1", "--set", "depth=3", "--set", "filters=4"]);
    // point every low-count path at its clean twin
    let manifest = tmp.path().join("d/manifest.csv");
    let text = std::fs::read_to_string(&manifest).unwrap().replace(".lc.dfrm", ".hc.dfrm");
    std::fs::write(&manifest, text).unwrap();
    ok(tmp.path(), &["eval", "--model", "t", "--data", "d", "--split", "train", "--out", "e"]);
    let metrics = files_in(&tmp.path().join("e/metrics"));
    let per_pair = metrics.iter().find(|p| !p.to_string_lossy().ends_with("psnr_hist.csv")).unwrap();
    let rows = read_eval_csv(std::fs::File::open(per_pair).unwrap()).unwrap();
    let m = DatasetManifest::read_file(&manifest).unwrap();
    assert_eq!(rows.len(), m.count(xrdn_core::Split::Train));
    for r in &rows {
        assert_eq!(r.psnr_noisy, PSNR_CAP_DB);
        assert!((r.mssim_noisy - 1.0).abs() < 1e-9, "{}", r.mssim_noisy);
    }
}

#[test]
fn cross_noise_summary_keeps_requested_rows() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "exp", 10, "exp");
    ok(tmp.path(), &["noise", "--data", "exp", "--noise", "gauss", "--out", "gauss"]);
    ok(tmp.path(), &["noise", "--data", "exp", "--noise", "pois", "--out", "pois"]);
    for (name, data) in [("tg", "gauss"), ("tp", "pois"), ("te", "exp")] {
        ok(tmp.path(), &["train", "--data", data, "--out", name, "--set", "epochs=1", "--set", "depth=3", "--set", "filters=4"]);
    }
    ok(
        tmp.path(),
        &[
            "eval", "--model", "Gaussian=tg", "--model", "Poisson=tp", "--model", "Exp.=te", "--data", "Gaussian=gauss",
            "--data", "Poisson=pois", "--data", "Exp.=exp", "--combo", "Gaussian:Gaussian", "--combo", "Poisson:Poisson",
            "--combo", "Gaussian:Exp.", "--combo", "Poisson:Exp.", "--combo", "Exp.:Exp.", "--split", "train", "--out", "e",
        ],
    );
    let mut r = csv::Reader::from_path(tmp.path().join("e/summary.csv")).unwrap();
    let labels: Vec<String> = r.records().map(|rec| rec.unwrap()[2].to_string()).collect();
    assert_eq!(
        labels,
        ["Gaussian -> Gaussian", "Poisson -> Poisson", "Gaussian -> Exp.", "Poisson -> Exp.", "Exp. -> Exp."]
    );
}

#[test]
fn report_overlay_matches_aggregate_scores() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 40, "pois");
    ok(tmp.path(), &["train", "--data", "d", "--out", "t", "--set", "epochs=1", "--set", "depth=3", "--set", "filters=4"]);
    ok(tmp.path(), &["eval", "--model", "m=t", "--data", "d=d", "--split", "train", "--out", "e", "--heatmaps", "1"]);
    ok(tmp.path(), &["report", "e", "--out", "r"]);
    let rows = read_eval_csv(std::fs::File::open(tmp.path().join("e/metrics/m__d.csv")).unwrap()).unwrap();
    let (_, den) = aggregate_scores(&rows).unwrap();
    assert!(!den.psnr_fallback, "28 rows should be enough for a histogram fit");
    let svg = std::fs::read_to_string(tmp.path().join("r/psnr_m__d.svg")).unwrap();
    let mu = den.psnr_fit.unwrap().mu;
    assert!(svg.contains(&format!("mu={mu:.2}")), "overlay label missing mu={mu:.2}");
    let summary = std::fs::read_to_string(tmp.path().join("r/psnr_m__d.summary.csv")).unwrap();
    let line = summary.lines().find(|l| l.starts_with("denoised,")).unwrap();
    let psnr: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(psnr, den.psnr);
    assert!(files_in(&tmp.path().join("r")).iter().any(|p| p.to_string_lossy().contains("delta_m__d_")));
}

#[test]
fn report_writes_one_loss_curve_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 10, "pois");
    let train = ["train", "--data", "d", "--out", "t", "--ensemble", "--set", "ensemble_seeds=3,4", "--set", "epochs=2"];
    ok(tmp.path(), &[&train[..], &["--set", "depth=3", "--set", "filters=4"]].concat());
    ok(tmp.path(), &["report", "t", "--out", "r"]);
    let svgs: Vec<_> = files_in(&tmp.path().join("r")).into_iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).collect();
    let names: Vec<String> = svgs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["loss_seed3.svg", "loss_seed4.svg"]);
}

#[test]
fn empty_history_has_nothing_to_plot() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("run")).unwrap();
    std::fs::write(tmp.path().join("run/history.csv"), "epoch,lr,train_loss,val_loss\n").unwrap();
    let o = xrdn(tmp.path(), &["report", "run", "--out", "r"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to plot"));
    assert!(!tmp.path().join("r").exists(), "failed run left an empty output directory");
}

#[test]
fn fit_writes_ratio_and_pdf_reports() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 10, "exp");
    ok(tmp.path(), &["train", "--data", "d", "--out", "t", "--set", "epochs=1", "--set", "depth=3", "--set", "filters=4"]);
    let frame = files_in(&tmp.path().join("d/frames")).into_iter().find(|p| p.to_string_lossy().ends_with(".lc.dfrm")).unwrap();
    let frame = frame.to_string_lossy().into_owned();
    ok(tmp.path(), &["fit", "--model", "t", "--pdf", &frame, "--out", "f"]);
    let report = std::fs::read_to_string(tmp.path().join("f/report.csv")).unwrap();
    let quantities: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(quantities, ["xi_a", "xi_c", "w_b"]);
    let pdf = std::fs::read_to_string(tmp.path().join("f/pdf.csv")).unwrap();
    assert_eq!(pdf.lines().count(), 5);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| xrdn(tmp.path(), args).status.code();
    assert_eq!(code(&["synth", "--out", "a", "--set", "no_such_key=1"]), Some(2));
    assert_eq!(code(&["synth", "--out", "a", "--noise", "laplace"]), Some(2));
    assert_eq!(code(&["synth", "--out", "a", "--set", "split_train=0.9"]), Some(2));
    assert_eq!(code(&["train", "--data", "missing", "--out", "b"]), Some(3));
    assert_eq!(code(&["report", "missing", "--out", "c"]), Some(3));
    std::fs::create_dir(tmp.path().join("busy")).unwrap();
    std::fs::write(tmp.path().join("busy/x"), "").unwrap();
    assert_eq!(code(&["synth", "--out", "busy"]), Some(2));
}

#[test]
fn diverging_training_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "d", 10, "pois");
    let o = xrdn(
        tmp.path(),
        &["train", "--data", "d", "--out", "t", "--set", "lr=1e12", "--set", "epochs=5", "--set", "depth=3", "--set", "filters=4"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("t/history.csv").is_file());
}
