//! One handler per subcommand. Each creates its run directory, writes its
//! artifacts there and finishes with the run manifest.

use std::path::{Path, PathBuf};

use gazework::align::{
    audit_transfers, estimate_time_shift, parse_pairs, parse_points, ransac_homography, read_wav, transfer_point,
    Homography,
};
use gazework::config::RunConfig;
use gazework::data::{load_manifest, DatasetManifest};
use gazework::eval::{evaluate, evaluate_baselines, leave_one_subject_out, ErrorSummary, EvalOptions, REPORT_FILE};
use gazework::geometry::GazePoint;
use gazework::plot::{bar_chart_png, cdf_png, histogram_png};
use gazework::rng::stream;
use gazework::stats::{dataset_stats, ClassTable, StatsReport};
use gazework::training::{self, Checkpoint, EpochMetrics, METRICS_FILE};
use gazework::world::generate_dataset;
use gazework::{Error, Result};
use serde::Serialize;

use crate::run_manifest::RunManifest;
use crate::{AlignArgs, AlignCommand, Command};

pub const ERRORS_FILE: &str = "errors.json";
pub const LOSO_FILE: &str = "loso.json";
pub const STATS_FILE: &str = "stats.json";
pub const SYNC_FILE: &str = "sync.json";
pub const TRANSFER_FILE: &str = "transfer.json";

pub fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Generate { config, out } => generate(&config, &out, argv),
        Command::Train {
            manifest,
            config,
            out,
            resume,
        } => train(&manifest, config.as_deref(), resume.as_deref(), &out, argv),
        Command::Eval {
            manifest,
            checkpoint,
            report,
            config,
        } => eval(&manifest, &checkpoint, config.as_deref(), &report, argv),
        Command::Baseline {
            manifest,
            report,
            config,
        } => baseline(&manifest, config.as_deref(), &report, argv),
        Command::Loso {
            manifest,
            config,
            out,
            full,
        } => loso(&manifest, &config, full.as_deref(), &out, argv),
        Command::Align { command } => match command {
            AlignCommand::Sync { a, b, common } => sync(&a, &b, &common, argv),
            AlignCommand::Transfer {
                pairs,
                points,
                manual,
                common,
            } => transfer(&pairs, &points, manual.as_deref(), &common, argv),
        },
        Command::Stats {
            manifest,
            classes,
            report,
        } => stats(&manifest, &classes, &report, argv),
        Command::Plot { input, out } => plot(&input, &out, argv),
    }
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = read_text(path)?;
    Ok((RunConfig::parse(&text)?, text))
}

fn load_dataset(path: &Path, run: &mut RunManifest) -> Result<(DatasetManifest, PathBuf)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    run.input("manifest", path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((load_manifest(path)?, base))
}

fn generate(config: &Path, out: &Path, argv: &[String]) -> Result<()> {
    let (cfg, text) = load_config(config)?;
    let world = cfg.world()?;
    create_dir(out)?;
    let mut run = RunManifest::new("generate", argv);
    run.rng_seed = Some(world.rng_seed);
    run.config(out, &text)?;
    let manifest = generate_dataset(&world, out)?;
    let samples: usize = manifest.sessions.iter().map(|s| s.samples.len()).sum();
    println!("generated {} sessions, {samples} samples in {}", manifest.sessions.len(), out.display());
    run.finish(out)?;
    Ok(())
}

fn train(manifest: &Path, config: Option<&Path>, resume: Option<&Path>, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("train", argv);
    let (m, base) = load_dataset(manifest, &mut run)?;
    let outcome = match (config, resume) {
        (_, Some(ck_path)) => {
            let ck = Checkpoint::load(ck_path)?;
            run.input("checkpoint", ck_path)?;
            let resolved = RunConfig {
                rng_seed: Some(ck.train.rng_seed),
                train: Some(ck.train.clone()),
                ..RunConfig::default()
            };
            create_dir(out)?;
            run.rng_seed = Some(ck.train.rng_seed);
            run.config(out, &resolved.to_toml()?)?;
            training::resume(&ck, &m, &base, out)?
        }
        (Some(cfg_path), None) => {
            let (cfg, text) = load_config(cfg_path)?;
            let tc = cfg.train()?;
            create_dir(out)?;
            run.rng_seed = Some(tc.rng_seed);
            run.config(out, &text)?;
            training::train(&m, &base, &tc, out)?
        }
        (None, None) => return Err(Error::Config("train needs --config or --resume".into())),
    };
    let errors: Vec<f64> = outcome.metrics.iter().map(|e| e.train_pixel_error).collect();
    if !errors.is_empty() {
        bar_chart_png(&[&errors], &out.join("train_error.png"))?;
    }
    if let Some(last) = outcome.metrics.last() {
        println!(
            "trained {} epochs; last train error {:.3} px; best epoch {}",
            last.epoch, last.train_pixel_error, outcome.best_epoch
        );
    }
    run.finish(out)?;
    Ok(())
}

fn eval_options(config: Option<&Path>, out: &Path, run: &mut RunManifest) -> Result<EvalOptions> {
    match config {
        Some(p) => {
            let (cfg, text) = load_config(p)?;
            run.config(out, &text)?;
            Ok(cfg.eval())
        }
        None => Ok(EvalOptions::default()),
    }
}

fn print_rows(rows: &[gazework::eval::MethodRow]) {
    println!("{:<14} {:>10} {:>10} {:>8} {:>7}", "method", "mean_px", "median_px", "deg", "auc");
    for r in rows {
        println!(
            "{:<14} {:>10.2} {:>10.2} {:>8.2} {:>7.3}",
            r.method, r.mean_px, r.median_px, r.mean_deg, r.auc
        );
    }
}

fn eval(manifest: &Path, checkpoint: &Path, config: Option<&Path>, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("eval", argv);
    let (m, base) = load_dataset(manifest, &mut run)?;
    let ck = Checkpoint::load(checkpoint)?;
    run.input("checkpoint", checkpoint)?;
    create_dir(out)?;
    let opts = eval_options(config, out, &mut run)?;
    run.rng_seed = Some(opts.rng_seed);
    let report = evaluate(&m, &base, &ck, &opts)?;
    std::fs::write(out.join(REPORT_FILE), report.to_json()?).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(ERRORS_FILE), &report.dpen_errors)?;
    error_plots(&report.dpen_errors, out)?;
    print_rows(&report.methods);
    run.finish(out)?;
    Ok(())
}

fn error_plots(errors: &[f64], out: &Path) -> Result<()> {
    histogram_png(errors, 30, &out.join("error_pdf.png"))?;
    cdf_png(errors, &out.join("error_cdf.png"))
}

fn baseline(manifest: &Path, config: Option<&Path>, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("baseline", argv);
    let (m, base) = load_dataset(manifest, &mut run)?;
    create_dir(out)?;
    let opts = eval_options(config, out, &mut run)?;
    run.rng_seed = Some(opts.rng_seed);
    let report = evaluate_baselines(&m, &base, &opts)?;
    std::fs::write(out.join(REPORT_FILE), report.to_json()?).map_err(|e| Error::io(out, e))?;
    print_rows(&report.methods);
    run.finish(out)?;
    Ok(())
}

fn loso(manifest: &Path, config: &Path, full: Option<&Path>, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("loso", argv);
    let (m, base) = load_dataset(manifest, &mut run)?;
    let (cfg, text) = load_config(config)?;
    let tc = cfg.train()?;
    let full_ck = match full {
        Some(p) => {
            run.input("full_checkpoint", p)?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    create_dir(out)?;
    run.rng_seed = Some(tc.rng_seed);
    run.config(out, &text)?;
    let report = leave_one_subject_out(&m, &base, &tc, out, full_ck.as_ref())?;
    write_json(&out.join(LOSO_FILE), &report)?;
    for f in &report.folds {
        match (&f.loso, &f.skipped) {
            (Some(s), _) => println!("{}: mean {:.2} px over {} samples", f.subject, s.mean, s.count),
            (None, Some(why)) => println!("{}: skipped ({why})", f.subject),
            (None, None) => {}
        }
    }
    run.finish(out)?;
    Ok(())
}

fn align_config(common: &AlignArgs, run: &mut RunManifest) -> Result<RunConfig> {
    match &common.config {
        Some(p) => {
            let (cfg, text) = load_config(p)?;
            if let Some(out) = &common.out {
                create_dir(out)?;
                run.config(out, &text)?;
            }
            Ok(cfg)
        }
        None => Ok(RunConfig::default()),
    }
}

/// Prints `value` and, with a run directory, also writes it there.
fn emit<T: Serialize>(value: &T, file: &str, out: Option<&Path>, run: RunManifest) -> Result<()> {
    print!("{}", serde_json::to_string_pretty(value)? + "\n");
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join(file), value)?;
        run.finish(out)?;
    }
    Ok(())
}

fn sync(a: &Path, b: &Path, common: &AlignArgs, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("align sync", argv);
    let cfg = align_config(common, &mut run)?;
    run.input("a", a)?;
    run.input("b", b)?;
    let (sa, ra) = read_wav(a)?;
    let (sb, rb) = read_wav(b)?;
    let result = estimate_time_shift(&sa, ra, &sb, rb, &cfg.align().sync_options())?;
    if result.low_confidence {
        eprintln!("warning: correlation peak is ambiguous (confidence {:.2})", result.confidence);
    }
    emit(&result, SYNC_FILE, common.out.as_deref(), run)
}

#[derive(Debug, Serialize)]
struct TransferReport {
    homography: Homography,
    inlier_count: usize,
    inliers: Vec<bool>,
    transferred: Vec<GazePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<ErrorSummary>,
}

fn transfer(pairs: &Path, points: &Path, manual: Option<&Path>, common: &AlignArgs, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("align transfer", argv);
    let cfg = align_config(common, &mut run)?;
    let seed = cfg.rng_seed.unwrap_or(0);
    run.rng_seed = Some(seed);
    run.input("pairs", pairs)?;
    run.input("points", points)?;
    let pairs = parse_pairs(&read_text(pairs)?)?;
    let points = parse_points(&read_text(points)?)?;
    let ac = cfg.align();
    let fit = ransac_homography(&pairs, ac.ransac_iters, ac.inlier_px, &mut stream(seed, "ransac"))?;
    let transferred = points
        .iter()
        .map(|p| transfer_point(&fit.homography, p))
        .collect::<Result<Vec<_>>>()?;
    let audit = match manual {
        Some(p) => {
            run.input("manual", p)?;
            Some(audit_transfers(&transferred, &parse_points(&read_text(p)?)?)?)
        }
        None => None,
    };
    let report = TransferReport {
        homography: fit.homography,
        inlier_count: fit.inlier_count,
        inliers: fit.inliers,
        transferred,
        audit,
    };
    emit(&report, TRANSFER_FILE, common.out.as_deref(), run)
}

fn stats(manifest: &Path, classes: &Path, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("stats", argv);
    let (m, base) = load_dataset(manifest, &mut run)?;
    run.input("classes", classes)?;
    let table = ClassTable::parse(&read_text(classes)?)?;
    let report = dataset_stats(&m, &base, &table)?;
    create_dir(out)?;
    write_json(&out.join(STATS_FILE), &report)?;
    stats_plots(&report, out)?;
    println!("{:<16} {:>9} {:>9} {:>9}", "class", "images", "pixels", "fixations");
    for (i, name) in report.classes.iter().enumerate() {
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4}",
            name, report.image_presence[i], report.pixel_share[i], report.fixation.fractions[i]
        );
    }
    run.finish(out)?;
    Ok(())
}

fn stats_plots(report: &StatsReport, out: &Path) -> Result<()> {
    bar_chart_png(&[&report.image_presence, &report.pixel_share], &out.join("class_frequency.png"))?;
    bar_chart_png(&[&report.fixation.fractions, &report.pixel_share], &out.join("fixation_share.png"))
}

/// Accepts a training metrics log (`.jsonl`), a per-sample error list
/// (a JSON array) or a stats report.
fn plot(input: &Path, out: &Path, argv: &[String]) -> Result<()> {
    let mut run = RunManifest::new("plot", argv);
    run.input("input", input)?;
    let text = read_text(input)?;
    let is_log = input.extension().is_some_and(|e| e == "jsonl")
        || input.file_name().is_some_and(|n| n == METRICS_FILE);
    create_dir(out)?;
    if is_log {
        let metrics = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<EpochMetrics>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let errors: Vec<f64> = metrics.iter().map(|m| m.train_pixel_error).collect();
        if errors.is_empty() {
            return Err(Error::InvalidInput("metrics log is empty".into()));
        }
        bar_chart_png(&[&errors], &out.join("train_error.png"))?;
    } else if let Ok(errors) = serde_json::from_str::<Vec<f64>>(&text) {
        error_plots(&errors, out)?;
    } else {
        let report: StatsReport = serde_json::from_str(&text)
            .map_err(|_| Error::InvalidInput(format!("{} is not a metrics log, error list or stats report", input.display())))?;
        stats_plots(&report, out)?;
    }
    run.finish(out)?;
    Ok(())
}
