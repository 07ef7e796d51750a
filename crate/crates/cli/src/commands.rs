//! The six subcommands. Each is a thin orchestration layer over the core
//! library: filesystem in, filesystem out, one summary on stdout.

use std::io::BufRead;
use std::path::Path;

use cdcl_core::data::{apply_normalizer, fit_normalizer, load_csv, make_windows, write_csv, TimeSeries};
use cdcl_core::encoder::EncoderState;
use cdcl_core::eval::{best_f1_search, score_series, sweep_to_csv, threshold_sweep, ScoreSeries};
use cdcl_core::losses::Mode;
use cdcl_core::model::{finite_diff_loss_error, CheckedLoss};
use cdcl_core::synth::{generate, SynthSpec};
use cdcl_core::trainer::{train, TrainReport};
use cdcl_core::transforms::TransformBank;
use cdcl_core::{Error, Result};

use crate::checkpoint::Checkpoint;
use crate::config::{synth_spec_from_file, RunConfig};

/// Finite-difference tolerance every loss must meet, and how many seeds the
/// gradcheck verb sweeps.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 20;

pub fn cmd_generate(spec_path: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec<f64> = match spec_path {
        Some(p) => synth_spec_from_file(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let (train_series, test_series) = generate(&spec)?;
    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    write_csv(&train_path, &train_series)?;
    write_csv(&test_path, &test_series)?;
    let anomalies: usize = test_series
        .labels
        .as_ref()
        .map(|l| l.iter().map(|&v| v as usize).sum())
        .unwrap_or(0);
    println!(
        "wrote {} ({} ticks) and {} ({} ticks, {} anomalous)",
        train_path.display(),
        train_series.ticks(),
        test_path.display(),
        test_series.ticks(),
        anomalies
    );
    Ok(())
}

/// Train a model per the config; no filesystem writes. Shared by train and
/// ablate, and by the acceptance checks that need in-process runs.
pub fn fit(config: &RunConfig) -> Result<Checkpoint> {
    config.validate(false)?;
    let train_path = config.train_csv.as_ref().expect("validated");
    let raw = load_csv::<f64>(train_path, false)?;
    let (series, norm) = if config.normalize {
        let stats = fit_normalizer(&raw);
        (apply_normalizer(&stats, &raw)?, Some(stats))
    } else {
        (raw, None)
    };
    let spec = config.window_spec()?;
    let samples = make_windows(&series, &spec)?;
    let has_bias = !config.mode.strips_bias();
    let mut encoder = EncoderState::init(config.encoder_config(), series.channels(), has_bias)?;
    let mut bank = TransformBank::init(config.transform_count, config.hidden_dim, config.bank_seed())?;
    let mut lc = config.loss_config();
    let report = train(&mut encoder, &mut bank, &samples, &config.train_config(), &mut lc)?;
    Ok(Checkpoint {
        config: config.clone(),
        in_channels: series.channels(),
        report,
        encoder,
        bank,
        occ_center: lc.occ_center,
        norm,
    })
}

pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(dir) = out {
        config.out_dir = dir.to_path_buf();
    }
    let ckpt = fit(&config)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(config.out_dir.display().to_string(), e))?;
    let ckpt_path = config.out_dir.join("model.ckpt");
    let report_path = config.out_dir.join("report.txt");
    ckpt.save(&ckpt_path)?;
    std::fs::write(&report_path, training_report_text(&config, &ckpt.report))
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    let r = &ckpt.report;
    println!(
        "trained {} for {} epoch(s) in {:.1}s (best epoch {}, val loss {:.6}{})",
        config.mode,
        r.train_losses.len(),
        r.wall_seconds,
        r.best_epoch,
        r.val_losses[r.best_epoch],
        if r.stopped_early { ", stopped early" } else { "" }
    );
    println!("wrote {} and {}", ckpt_path.display(), report_path.display());
    Ok(())
}

/// Human-readable training summary; unlike the checkpoint it includes wall
/// time, so it is not byte-deterministic.
pub fn training_report_text(config: &RunConfig, report: &TrainReport<f64>) -> String {
    let mut out = String::new();
    out.push_str(&format!("mode = {}\n", config.mode));
    out.push_str(&format!("epochs_run = {}\n", report.train_losses.len()));
    out.push_str(&format!("best_epoch = {}\n", report.best_epoch));
    out.push_str(&format!("best_val_loss = {}\n", report.val_losses[report.best_epoch]));
    out.push_str(&format!("stopped_early = {}\n", report.stopped_early));
    out.push_str(&format!("wall_seconds = {:.3}\n", report.wall_seconds));
    out.push_str("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in report.train_losses.iter().zip(&report.val_losses).enumerate() {
        out.push_str(&format!("{i},{t},{v}\n"));
    }
    out
}

/// Score a series with a trained checkpoint: apply the stored normalizer,
/// then run the stride-1 scoring pass.
pub fn score_checkpoint(ckpt: &Checkpoint, data: &TimeSeries<f64>) -> Result<ScoreSeries<f64>> {
    let series = match &ckpt.norm {
        Some(stats) => apply_normalizer(stats, data)?,
        None => data.clone(),
    };
    let spec = ckpt.config.window_spec()?;
    score_series(&ckpt.encoder, &ckpt.bank, &ckpt.loss_config(), &series, &spec)
}

pub fn cmd_score(ckpt_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let has_labels = csv_has_label_column(data_path)?;
    let data = load_csv::<f64>(data_path, has_labels)?;
    let scored = score_checkpoint(&ckpt, &data)?;
    let mut text = String::from("tick,score\n");
    for (tick, score) in scored.scores.iter().enumerate() {
        text.push_str(&format!("{tick},{score}\n"));
    }
    std::fs::write(out, text).map_err(|e| Error::io(out.display().to_string(), e))?;
    println!(
        "wrote {} ({} ticks, first scored window ends at tick {})",
        out.display(),
        scored.scores.len(),
        scored.first_scored
    );
    Ok(())
}

pub fn cmd_evaluate(scores_path: &Path, data_path: &Path, adjust: bool, out_dir: &Path) -> Result<()> {
    let scores = read_scores_csv(scores_path)?;
    let data = load_csv::<f64>(data_path, true)?;
    let labels = data.labels.as_ref().expect("labeled load");
    if scores.len() != labels.len() {
        return Err(Error::invalid(
            "scores",
            format!("{} scores vs {} labeled ticks", scores.len(), labels.len()),
        ));
    }
    let (_, report) = best_f1_search(&scores, labels, adjust)?;
    let sweep = threshold_sweep(&scores, labels, adjust)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let report_path = out_dir.join("eval.txt");
    let sweep_path = out_dir.join("sweep.csv");
    let text = report.to_text();
    std::fs::write(&report_path, &text).map_err(|e| Error::io(report_path.display().to_string(), e))?;
    std::fs::write(&sweep_path, sweep_to_csv(&sweep))
        .map_err(|e| Error::io(sweep_path.display().to_string(), e))?;
    print!("{text}");
    println!("wrote {} and {}", report_path.display(), sweep_path.display());
    Ok(())
}

pub struct AblationRow {
    pub mode: Mode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub threshold: f64,
}

/// Train every requested mode on the same data and seed, score the test
/// series, and report best-F1 metrics per mode.
pub fn run_ablation(config: &RunConfig, modes: &[Mode], adjust: bool) -> Result<Vec<AblationRow>> {
    config.validate(true)?;
    let test_path = config.test_csv.as_ref().expect("validated");
    let test = load_csv::<f64>(test_path, true)?;
    let labels = test.labels.clone().expect("labeled load");
    let mut rows = Vec::new();
    for &mode in modes {
        let mut cfg = config.clone();
        cfg.mode = mode;
        let ckpt = fit(&cfg)?;
        let scored = score_checkpoint(&ckpt, &test)?;
        let (threshold, report) = best_f1_search(&scored.scores, &labels, adjust)?;
        rows.push(AblationRow {
            mode,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            roc_auc: report.roc_auc,
            threshold,
        });
    }
    Ok(rows)
}

pub fn cmd_ablate(config_path: &Path, modes: Option<&str>, seed: Option<u64>, adjust: bool) -> Result<()> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let modes: Vec<Mode> = match modes {
        Some(list) => list
            .split(',')
            .map(|m| m.trim().parse())
            .collect::<Result<_>>()?,
        None => Mode::ALL.to_vec(),
    };
    let rows = run_ablation(&config, &modes, adjust)?;
    println!("{:<8} {:>9} {:>9} {:>9} {:>9} {:>12}", "mode", "precision", "recall", "f1", "roc_auc", "threshold");
    let mut csv = String::from("mode,precision,recall,f1,roc_auc,threshold\n");
    for r in &rows {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>12.6}",
            r.mode.as_str(),
            r.precision,
            r.recall,
            r.f1,
            r.roc_auc,
            r.threshold
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mode.as_str(),
            r.precision,
            r.recall,
            r.f1,
            r.roc_auc,
            r.threshold
        ));
    }
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(config.out_dir.display().to_string(), e))?;
    let csv_path = config.out_dir.join("ablate.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Finite-difference check of every loss over `GRADCHECK_SEEDS` seeds
/// starting at `base_seed`; returns whether every loss stayed under the
/// tolerance.
pub fn cmd_gradcheck(base_seed: u64) -> Result<bool> {
    println!("{:<8} {:>12} {:>7}", "loss", "max_rel_err", "status");
    let mut all_pass = true;
    for loss in CheckedLoss::ALL.iter().copied() {
        let mut worst = 0.0f64;
        for seed in base_seed..base_seed + GRADCHECK_SEEDS {
            let err = finite_diff_loss_error::<f64>(loss, seed)?;
            worst = worst.max(err);
        }
        let pass = worst < GRADCHECK_TOLERANCE;
        all_pass &= pass;
        println!(
            "{:<8} {:>12.3e} {:>7}",
            loss.as_str(),
            worst,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(all_pass)
}

/// Does the CSV header end in a `label` column?
pub fn csv_has_label_column(path: &Path) -> Result<bool> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut header)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(header
        .trim_end()
        .rsplit(',')
        .next()
        .map(|c| c.trim() == "label")
        .unwrap_or(false))
}

/// Read a `tick,score` CSV produced by the score verb.
pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(origin.clone(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "tick,score" => {}
        other => {
            return Err(Error::Parse {
                path: origin,
                row: other.map(|(i, _)| i + 1).unwrap_or(0),
                message: "expected header `tick,score`".into(),
            })
        }
    }
    let mut scores = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.clone(),
            row: i + 1,
            message,
        };
        let (tick, score) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `tick,score`, got `{line}`")))?;
        let tick: usize = tick
            .trim()
            .parse()
            .map_err(|_| err(format!("bad tick `{tick}`")))?;
        if tick != scores.len() {
            return Err(err(format!("tick {tick} out of order, expected {}", scores.len())));
        }
        scores.push(
            score
                .trim()
                .parse()
                .map_err(|_| err(format!("bad score `{score}`")))?,
        );
    }
    if scores.is_empty() {
        return Err(Error::Parse {
            path: origin,
            row: 0,
            message: "no score rows".into(),
        });
    }
    Ok(scores)
}
