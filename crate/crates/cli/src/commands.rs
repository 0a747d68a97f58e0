//! Subcommand implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use xrdn_core::analysis::pdf::{fit_pdf_values, write_histogram_csv, write_pdf_csv, PdfModel};
use xrdn_core::analysis::peak::{write_fits_csv, write_report_csv, PeakQuantities};
use xrdn_core::analysis::scan::{read_scan_csv, write_scan_csv};
use xrdn_core::analysis::scores::{aggregate_scores, write_psnr_histogram_csv, ScoreSummary};
use xrdn_core::analysis::{ratio_report, AxisFits, Measured};
use xrdn_core::config::RunConfig;
use xrdn_core::experiment::{
    artificial_pairs, denoise_pair, denoise_stack, evaluate, experimental_pairs, fit_peak_scans, noisy_stack,
    peak_scans, read_eval_csv, write_eval_csv,
};
use xrdn_core::io::{read_frame_file, write_frame_file};
use xrdn_core::metrics::{delta_display, delta_heatmap};
use xrdn_core::nn::checkpoint::{read_checkpoint_file, write_checkpoint_file};
use xrdn_core::nn::train::{normalize_pairs, read_history, write_history};
use xrdn_core::nn::{denoise, train_normalized, NetworkSpec, Params};
use xrdn_core::noise::{calibrate, make_artificial_pair, NoiseCalibration, NoiseModel};
use xrdn_core::rng::derive_seed;
use xrdn_core::synth::{generate_dataset, render_stack, JitterSpec, SceneSpec};
use xrdn_core::{AxisLabel, Error, FramePair, Result, Split, SplitFractions};

use crate::dataset::{self, base_id};
use crate::svg::{heatmap, Chart, Series};

// Sub-seeds derived from the run seed, one per random stream.
const STREAM_TRUTH: u64 = 0;
const STREAM_EXPERIMENTAL: u64 = 1;
const STREAM_ARTIFICIAL: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_STACK_NOISE: u64 = 4;

pub fn default_out(command: &str) -> PathBuf {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    PathBuf::from("runs").join(format!("{command}-{secs}"))
}

/// Creates `path`, refusing a directory that already has content.
pub fn fresh_dir(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        let mut it = std::fs::read_dir(&path)?;
        if it.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", path.display())));
        }
    }
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_config(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::write(dir.join("config.txt"), config.resolved().to_string())?;
    Ok(())
}

fn write_calibration(dir: &Path, cal: &NoiseCalibration) -> Result<()> {
    std::fs::write(dir.join("calibration.csv"), format!("gamma,sigma\n{},{}\n", cal.gamma, cal.sigma))?;
    Ok(())
}

pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let scene = SceneSpec::default_scene_sized(config.height, config.width);
    let jitter = config.jitter.then(JitterSpec::default);
    let gt = generate_dataset(&scene, config.n_pairs, config.exposure_ratio, jitter, derive_seed(config.seed, STREAM_TRUTH))?;
    let exp = experimental_pairs(&gt, derive_seed(config.seed, STREAM_EXPERIMENTAL))?;
    let cal = calibrate(&exp)?;
    info!("calibration: gamma {:.5}, sigma {:.4}", cal.gamma, cal.sigma);
    let pairs = if config.noise == NoiseModel::experimental_like() {
        exp
    } else {
        artificial_pairs(&gt, &config.noise, &cal, derive_seed(config.seed, STREAM_ARTIFICIAL))?
    };
    let mut fractions = config.split_fractions();
    if pairs.len() < 3 && fractions.train > 0.0 && fractions.val > 0.0 && fractions.test > 0.0 {
        warn!("{} pairs cannot fill three splits; all go to train", pairs.len());
        fractions = SplitFractions { train: 1.0, val: 0.0, test: 0.0 };
    }
    let manifest = dataset::write(out, &pairs, None, fractions, derive_seed(config.seed, STREAM_SPLIT))?;
    gt.write_peaks_csv(create(out.join("peaks.csv"))?)?;
    write_calibration(out, &cal)?;
    write_config(out, config)?;
    info!(
        "wrote {} pairs ({} train / {} val / {} test) to {}",
        manifest.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        out.display()
    );
    Ok(())
}

pub fn noise(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = dataset::load(data)?;
    let cal = calibrate(&ds.pairs)?;
    info!("calibration from {}: gamma {:.5}, sigma {:.4}", data.display(), cal.gamma, cal.sigma);
    let stream = derive_seed(config.seed, STREAM_ARTIFICIAL);
    let pairs: Vec<FramePair> = ds
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| make_artificial_pair(&p.hc, &config.noise, &cal, derive_seed(stream, i as u64), base_id(&p.pair_id)))
        .collect::<Result<_>>()?;
    dataset::write(out, &pairs, Some(&ds.splits), config.split_fractions(), 0)?;
    write_calibration(out, &cal)?;
    write_config(out, config)?;
    info!("wrote {} {} pairs to {}", pairs.len(), config.noise, out.display());
    Ok(())
}

pub fn train(config: &RunConfig, data: &Path, ensemble: bool, out: &Path) -> Result<()> {
    let ds = dataset::load(data)?;
    let train_set = normalize_pairs(&ds.split(Split::Train))?;
    let val_set = normalize_pairs(&ds.split(Split::Val))?;
    let spec = config.network();
    info!("{} train / {} val pairs, {:?}", train_set.len(), val_set.len(), spec);
    let seeds = if ensemble { config.ensemble_seeds.clone() } else { vec![config.seed] };
    for seed in seeds {
        let run_config = RunConfig { seed, ..config.clone() };
        let dir = if ensemble { out.join(format!("seed{seed}")) } else { out.to_path_buf() };
        std::fs::create_dir_all(&dir)?;
        write_config(&dir, &run_config)?;
        let tc = run_config.train_config();
        let result = train_normalized(&spec, &tc, &train_set, &val_set, None, |_, _| {});
        match result {
            Ok(r) => {
                write_history(&r.history, create(dir.join("history.csv"))?)?;
                write_checkpoint_file(&spec, &r.best, dir.join("best.dnet"))?;
                write_checkpoint_file(&spec, &r.last, dir.join("last.dnet"))?;
                info!("best validation loss at epoch {}; wrote {}", r.best_epoch, dir.display());
            }
            Err(f) => {
                write_history(&f.history, create(dir.join("history.csv"))?)?;
                if let Some(best) = &f.best {
                    write_checkpoint_file(&spec, best, dir.join("best.dnet"))?;
                }
                return Err(f.error);
            }
        }
    }
    Ok(())
}

/// A checkpoint file, or a train run directory holding `best.dnet`.
fn load_model(path: &Path) -> Result<(NetworkSpec, Params<f32>)> {
    let file = if path.is_dir() { path.join("best.dnet") } else { path.to_path_buf() };
    read_checkpoint_file(&file).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", file.display()))),
        e => e,
    })
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    name.split('.').next().unwrap_or(&name).to_string()
}

pub fn denoise_files(config: &RunConfig, model: &Path, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let (spec, params) = load_model(model)?;
    for input in inputs {
        let frame = read_frame_file(input)?;
        let out_path = out.join(format!("{}.do.dfrm", stem(input)));
        write_frame_file(&denoise(&params, &spec, &frame)?, &out_path)?;
        info!("{} -> {}", input.display(), out_path.display());
    }
    write_config(out, config)
}

/// `LABEL=PATH` or a bare path labelled by its file stem.
fn labelled(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((l, p)) if !l.is_empty() => (l.to_string(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(spec);
            let label = if p.is_dir() { p.file_name().map(|s| s.to_string_lossy().into_owned()) } else { Some(stem(&p)) };
            (label.unwrap_or_else(|| spec.to_string()), p)
        }
    }
}

fn summary_row(model: &str, data: &str, noisy: &ScoreSummary, den: &ScoreSummary) -> Vec<String> {
    vec![
        model.to_string(),
        data.to_string(),
        format!("{model} -> {data}"),
        den.n.to_string(),
        noisy.psnr.to_string(),
        den.psnr.to_string(),
        den.psnr_fallback.to_string(),
        noisy.mssim_median.to_string(),
        den.mssim_median.to_string(),
        noisy.quality_median.to_string(),
        den.quality_median.to_string(),
    ]
}

/// File-name-safe form of a label.
fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Model/data index pairs to evaluate: every combination, or the listed
/// `MODEL:DATA` label pairs in the given order.
fn select_combos(models: &[(String, PathBuf)], data: &[(String, PathBuf)], combos: &[String]) -> Result<Vec<(usize, usize)>> {
    if combos.is_empty() {
        return Ok((0..data.len()).flat_map(|d| (0..models.len()).map(move |m| (m, d))).collect());
    }
    combos
        .iter()
        .map(|c| {
            let (m, d) = c.split_once(':').ok_or_else(|| Error::Config(format!("--combo expects MODEL:DATA, got {c:?}")))?;
            let mi = models.iter().position(|(l, _)| l == m).ok_or_else(|| Error::Config(format!("no model labelled {m:?}")))?;
            let di = data.iter().position(|(l, _)| l == d).ok_or_else(|| Error::Config(format!("no data labelled {d:?}")))?;
            Ok((mi, di))
        })
        .collect()
}

pub fn eval(
    config: &RunConfig,
    models: &[String],
    data: &[String],
    combos: &[String],
    split: Split,
    heatmaps: usize,
    out: &Path,
) -> Result<()> {
    let models: Vec<(String, PathBuf)> = models.iter().map(|s| labelled(s)).collect();
    let data: Vec<(String, PathBuf)> = data.iter().map(|s| labelled(s)).collect();
    let selected = select_combos(&models, &data, combos)?;
    let loaded: Vec<(NetworkSpec, Params<f32>)> = models.iter().map(|(_, p)| load_model(p)).collect::<Result<_>>()?;
    let sets: Vec<Vec<FramePair>> = data
        .iter()
        .map(|(_, p)| {
            let pairs = dataset::load(p)?.split(split);
            if pairs.is_empty() {
                return Err(Error::NoData(format!("{} has no {split} pairs", p.display())));
            }
            Ok(pairs)
        })
        .collect::<Result<_>>()?;
    for dir in ["metrics", "heatmaps"] {
        std::fs::create_dir_all(out.join(dir))?;
    }
    let mut summary = csv_writer(out.join("summary.csv"))?;
    summary.write_record([
        "model",
        "data",
        "label",
        "n",
        "psnr_noisy",
        "psnr_denoised",
        "psnr_fallback",
        "mssim_noisy",
        "mssim_denoised",
        "quality_noisy",
        "quality_denoised",
    ])?;
    for (mi, di) in selected {
        let ((mlabel, _), (spec, params)) = (&models[mi], &loaded[mi]);
        let (dlabel, pairs) = (&data[di].0, &sets[di]);
        let combo = format!("{}__{}", slug(mlabel), slug(dlabel));
        let rows = evaluate(spec, params, pairs)?;
        write_eval_csv(&rows, create(out.join("metrics").join(format!("{combo}.csv")))?)?;
        let (noisy, den) = aggregate_scores(&rows)?;
        write_psnr_histogram_csv(&den, create(out.join("metrics").join(format!("{combo}.psnr_hist.csv")))?)?;
        summary.write_record(summary_row(mlabel, dlabel, &noisy, &den))?;
        info!(
            "{mlabel} -> {dlabel}: PSNR {:.2} -> {:.2} dB, MSSIM {:.4} -> {:.4}",
            noisy.psnr, den.psnr, noisy.mssim_median, den.mssim_median
        );
        let hdir = out.join("heatmaps").join(&combo);
        std::fs::create_dir_all(&hdir)?;
        for p in pairs.iter().take(heatmaps) {
            let (_, denoised, hc) = denoise_pair(spec, params, p)?;
            write_frame_file(&delta_heatmap(&hc, &denoised)?, hdir.join(format!("{}.dfrm", slug(&p.pair_id))))?;
        }
    }
    summary.flush()?;
    write_config(out, config)
}

fn csv_writer(path: PathBuf) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_scans(dir: &Path, prefix: &str, scans: &[xrdn_core::analysis::ScanProjection; 3]) -> Result<()> {
    for s in scans {
        write_scan_csv(s, create(dir.join(format!("scan_{prefix}_{}.csv", s.axis)))?)?;
    }
    Ok(())
}

fn show(m: Option<Measured>) -> String {
    m.map_or("n/a".to_string(), |m| format!("{:.3}({:.3})", m.value, m.error))
}

fn fits_list(f: &AxisFits) -> Vec<(AxisLabel, xrdn_core::analysis::PeakFit)> {
    vec![(AxisLabel::H, f.h), (AxisLabel::K, f.k), (AxisLabel::L, f.l)]
}

pub fn fit(config: &RunConfig, models: &[PathBuf], pdf: &[PathBuf], out: &Path) -> Result<()> {
    let scene = SceneSpec::default_scene_sized(config.height, config.width);
    let lattice = config.lattice();
    let hc = render_stack(&scene, derive_seed(config.seed, STREAM_TRUTH))?;
    let (q0, window, flank) = (config.q0(), config.window(), config.flank);
    let hc_scans = peak_scans(&hc, q0, window, flank)?;
    let hc_fits = fit_peak_scans(&hc_scans)?;
    write_scans(out, "hc", &hc_scans)?;
    write_fits_csv(&fits_list(&hc_fits), create(out.join("fits_hc.csv"))?)?;
    let hc_q = PeakQuantities::from_fits(&hc_fits, &lattice);
    info!("high-count: xi_a {}, xi_c {}, w_b {}", show(hc_q.xi_a), show(hc_q.xi_c), show(hc_q.w_b));

    // noisy stack: the experimental stand-in, or another family calibrated on it
    let stream = derive_seed(config.seed, STREAM_STACK_NOISE);
    let truth = NoiseCalibration::new(config.exposure_ratio, 1.0)?;
    let exp = noisy_stack(&hc, &NoiseModel::experimental_like(), &truth, stream)?;
    let lc = if config.noise == NoiseModel::experimental_like() {
        exp
    } else {
        let pairs: Vec<FramePair> =
            exp.into_iter().zip(&hc).map(|(l, h)| FramePair::new(l, h.clone(), "stack")).collect::<Result<_>>()?;
        noisy_stack(&hc, &config.noise, &calibrate(&pairs)?, derive_seed(stream, 1))?
    };
    let scaled: Vec<_> = lc
        .iter()
        .map(|f| f.map_values(f.data().iter().map(|&v| (v as f64 / config.exposure_ratio) as f32).collect()))
        .collect::<Result<_>>()?;
    let lc_scans = peak_scans(&scaled, q0, window, flank)?;
    write_scans(out, "lc", &lc_scans)?;
    write_fits_csv(&fits_list(&fit_peak_scans(&lc_scans)?), create(out.join("fits_lc.csv"))?)?;

    if !models.is_empty() {
        let mut runs = Vec::new();
        for (i, m) in models.iter().enumerate() {
            let (spec, params) = load_model(m)?;
            let denoised = denoise_stack(&spec, &params, &lc, config.exposure_ratio)?;
            let scans = peak_scans(&denoised, q0, window, flank)?;
            let fits = fit_peak_scans(&scans)?;
            write_scans(out, &format!("do{i}"), &scans)?;
            write_fits_csv(&fits_list(&fits), create(out.join(format!("fits_do{i}.csv")))?)?;
            runs.push(PeakQuantities::from_fits(&fits, &lattice));
        }
        let denoised = if runs.len() == 1 { runs[0] } else { PeakQuantities::ensemble_mean(&runs) };
        let report = ratio_report(hc_q, denoised);
        write_report_csv(&report, create(out.join("report.csv"))?)?;
        info!(
            "DO/HC ratios over {} model(s): xi_a {}, xi_c {}, w_b {}",
            runs.len(),
            show(report.xi_a_ratio),
            show(report.xi_c_ratio),
            show(report.w_b_ratio)
        );
    }

    if !pdf.is_empty() {
        std::fs::create_dir_all(out.join("pdf"))?;
        let mut all = Vec::new();
        for path in pdf {
            let frame = read_frame_file(path)?;
            let values: Vec<f64> = frame.live_values().map(f64::from).collect();
            let id = stem(path);
            for model in PdfModel::ALL {
                let (f, hist) = fit_pdf_values(&values, model)?;
                write_histogram_csv(&hist, &f, create(out.join("pdf").join(format!("{id}.{model}.csv")))?)?;
                info!("{id}: {model} reduced chi2 {:.3}", f.reduced_chi2);
                all.push((id.clone(), f));
            }
        }
        write_pdf_csv(&all, create(out.join("pdf.csv"))?)?;
    }
    write_config(out, config)
}

fn svg(out: &Path, name: &str, body: String) -> Result<()> {
    std::fs::write(out.join(name), body)?;
    info!("wrote {name}");
    Ok(())
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    Ok(v)
}

fn plot_history(path: &Path, label: &str, out: &Path) -> Result<()> {
    let rows = read_history(File::open(path)?)?;
    if rows.is_empty() {
        return Err(Error::NoData(format!("nothing to plot: {} has no epochs", path.display())));
    }
    let mut c = Chart::new(&format!("Loss history {label}"), "epoch", "MAE+MSSIM loss");
    c.log_y = rows.iter().all(|r| r.train_loss > 0.0 && r.val_loss > 0.0);
    c.series.push(Series::Line { name: "train".into(), points: rows.iter().map(|r| (r.epoch as f64, r.train_loss)).collect() });
    c.series.push(Series::Line { name: "validation".into(), points: rows.iter().map(|r| (r.epoch as f64, r.val_loss)).collect() });
    svg(out, &format!("loss_{label}.svg"), c.render())?;
    write_history(&rows, create(out.join(format!("loss_{label}.csv")))?)
}

fn plot_metrics(path: &Path, out: &Path) -> Result<()> {
    let rows = read_eval_csv(File::open(path)?)?;
    if rows.is_empty() {
        return Err(Error::NoData(format!("nothing to plot: {} has no rows", path.display())));
    }
    let combo = stem(path);
    let (noisy, den) = aggregate_scores(&rows)?;
    let mut c = Chart::new(&format!("PSNR {combo}"), "PSNR (dB)", "pairs");
    for (name, s) in [("noisy", &noisy), ("denoised", &den)] {
        let h = &s.psnr_histogram;
        c.series.push(Series::Bars { name: name.into(), edges: h.edges.clone(), counts: h.counts.clone() });
    }
    for (name, s) in [("noisy fit", &noisy), ("denoised fit", &den)] {
        if let Some(f) = s.psnr_fit {
            let (lo, hi) = (s.psnr_histogram.edges[0], *s.psnr_histogram.edges.last().unwrap());
            let pts = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).map(|x| (x, f.eval(x))).collect();
            c.series.push(Series::Line { name: format!("{name} mu={:.2}", f.mu), points: pts });
        }
    }
    svg(out, &format!("psnr_{combo}.svg"), c.render())?;
    write_psnr_histogram_csv(&noisy, create(out.join(format!("psnr_{combo}.noisy.csv")))?)?;
    write_psnr_histogram_csv(&den, create(out.join(format!("psnr_{combo}.denoised.csv")))?)?;
    let summary = |s: &ScoreSummary| format!("{},{},{},{},{}\n", s.n, s.psnr, s.psnr_fallback, s.mssim_median, s.quality_median);
    std::fs::write(
        out.join(format!("psnr_{combo}.summary.csv")),
        format!("set,n,psnr,psnr_fallback,mssim_median,quality_median\nnoisy,{}denoised,{}", summary(&noisy), summary(&den)),
    )?;
    Ok(())
}

fn plot_scans(run: &Path, out: &Path) -> Result<usize> {
    let mut made = 0;
    for axis in [AxisLabel::H, AxisLabel::K, AxisLabel::L] {
        let files = files_with_suffix(run, &format!("_{axis}.csv"))?
            .into_iter()
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scan_")))
            .collect::<Vec<_>>();
        if files.is_empty() {
            continue;
        }
        let mut c = Chart::new(&format!("Projected scan along {axis}"), &format!("{axis} (r.l.u.)"), "intensity (background subtracted)");
        for f in &files {
            let s = read_scan_csv(axis, File::open(f)?)?;
            let name = stem(f).trim_start_matches("scan_").trim_end_matches(&format!("_{axis}")).to_string();
            let pts = s.coords.iter().zip(&s.intensities).zip(&s.errors).map(|((&q, &v), &e)| (q, v, e)).collect();
            c.series.push(Series::Points { name, points: pts });
            std::fs::copy(f, out.join(f.file_name().unwrap()))?;
        }
        svg(out, &format!("scan_{axis}.svg"), c.render())?;
        made += 1;
    }
    Ok(made)
}

pub fn report(run: &Path, out: &Path) -> Result<()> {
    if !run.is_dir() {
        return Err(Error::NoData(format!("run directory {} does not exist", run.display())));
    }
    let mut made = 0;
    let mut histories: Vec<(String, PathBuf)> = Vec::new();
    if run.join("history.csv").is_file() {
        histories.push(("run".into(), run.join("history.csv")));
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(run)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    for d in subdirs {
        if d.join("history.csv").is_file() {
            histories.push((stem(&d), d.join("history.csv")));
        }
    }
    for (label, path) in &histories {
        plot_history(path, label, out)?;
        made += 1;
    }
    for m in files_with_suffix(&run.join("metrics"), ".csv")?.into_iter().filter(|p| !p.to_string_lossy().ends_with(".psnr_hist.csv")) {
        plot_metrics(&m, out)?;
        made += 1;
    }
    made += plot_scans(run, out)?;
    let hroot = run.join("heatmaps");
    if hroot.is_dir() {
        let mut combos: Vec<PathBuf> = std::fs::read_dir(&hroot)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        combos.sort();
        for combo in combos {
            for f in files_with_suffix(&combo, ".dfrm")? {
                let delta = read_frame_file(&f)?;
                let shown = delta_display(&delta);
                let name = format!("delta_{}_{}", stem(&combo), stem(&f));
                let body = heatmap(&format!("log10 |Delta| {}", stem(&f)), shown.height(), shown.width(), shown.data(), -5.0, 0.0);
                svg(out, &format!("{name}.svg"), body)?;
                made += 1;
            }
        }
    }
    if made == 0 {
        return Err(Error::NoData(format!("nothing to plot in {}", run.display())));
    }
    info!("{made} plots written to {}", out.display());
    Ok(())
}
