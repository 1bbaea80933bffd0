//! Subcommand bodies. Each returns its result so tests can inspect it; the
//! files it writes live under `io.out` in a fixed layout:
//! `masks/<id>.png`, `preprocessed/<id>.png`, `checkpoints/epoch-N.sten`,
//! `reports/*` and the resolved `config.toml`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use stenunet::evalkit::{evaluate, EvalConfig, EvalItem, EvalMode, Report, TimingReport};
use stenunet::postseg::{postprocess, PostConfig};
use stenunet::prefilter::{preprocess, PreConfig};
use stenunet::specio::{load_checkpoint, load_mask, save_image_png16, save_mask, BinaryMask};
use stenunet::stenunet::{
    history_table, infer, run_gradsuite, train, EpochRecord, GradRow, Model, Sample, TrainOutcome,
    GRADCHECK_TOLERANCE,
};

use crate::config::PipelineConfig;
use crate::dataset::{gt_of, load_entries, required, Entry};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn ensure_dir(path: PathBuf) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Creates `io.out` and records the resolved configuration in it.
fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let out = ensure_dir(required("io.out", &cfg.io.out)?.to_path_buf())?;
    let echo = format!("# fingerprint {}\n{}", cfg.fingerprint(), cfg.echo());
    write_file(&out.join("config.toml"), &echo)?;
    Ok(out)
}

fn entries(cfg: &PipelineConfig, need_gt: bool) -> Result<Vec<Entry>, CliError> {
    let images = required("io.images", &cfg.io.images)?;
    let ann = if need_gt {
        Some(required("io.annotations", &cfg.io.annotations)?)
    } else {
        cfg.io.annotations.as_deref()
    };
    load_entries(images, ann)
}

fn load_model(cfg: &PipelineConfig) -> Result<Model<f32>, CliError> {
    let path = required("io.checkpoint", &cfg.io.checkpoint)?;
    let ckpt = load_checkpoint(path, Some(&cfg.arch.descriptor()))?;
    Model::from_checkpoint(&cfg.arch, &ckpt).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn with_id<E: std::fmt::Display>(entry: &Entry) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", entry.path.display()))
}

/// Writes `preprocessed/<id>.png` for every image.
pub fn cmd_preprocess(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = out_dir(cfg)?;
    let dir = ensure_dir(out.join("preprocessed"))?;
    let mut written = Vec::new();
    for entry in entries(cfg, false)? {
        let img = preprocess(&entry.image, &cfg.prefilter).map_err(with_id(&entry))?;
        let path = dir.join(format!("{}.png", entry.id));
        save_image_png16(&img, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct HistoryDoc<'a> {
    fingerprint: String,
    history: &'a [EpochRecord],
}

/// Trains a fresh model on the annotated images.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome, CliError> {
    let out = out_dir(cfg)?;
    let mut samples = Vec::new();
    for entry in entries(cfg, true)? {
        let image = preprocess(&entry.image, &cfg.prefilter).map_err(with_id(&entry))?;
        let mask = gt_of(&entry)?.clone();
        samples.push(Sample { image, mask });
    }
    let mut model = Model::<f32>::build(&cfg.arch, cfg.io.seed)?;
    let mut tc = cfg.train.clone();
    tc.checkpoint_dir = Some(out.join("checkpoints"));
    let outcome = train(&mut model, &samples, &tc, &cfg.augment, &cfg.loss)?;

    let reports = out.join("reports");
    write_file(
        &reports.join("train_history.txt"),
        &format!("fingerprint {}\n{}", cfg.fingerprint(), history_table(&outcome.history)),
    )?;
    let doc = HistoryDoc {
        fingerprint: cfg.fingerprint(),
        history: &outcome.history,
    };
    write_file(
        &reports.join("train_history.json"),
        &serde_json::to_string_pretty(&doc).expect("history serializes"),
    )?;
    Ok(outcome)
}

/// Prediction for one image: the mask after thresholding (and, when
/// enabled, small-component removal) plus the wall time it took.
fn predict(model: &Model<f32>, entry: &Entry, pre: &PreConfig, post: &PostConfig) -> Result<(BinaryMask, f64), CliError> {
    let start = Instant::now();
    let inference = infer(model, &entry.image, pre).map_err(with_id(entry))?;
    let (mask, _) = postprocess(&inference.prob, post).map_err(with_id(entry))?;
    Ok((mask, start.elapsed().as_secs_f64()))
}

#[derive(Serialize)]
struct TimingDoc<'a> {
    fingerprint: String,
    ids: Vec<&'a str>,
    #[serde(flatten)]
    timing: &'a TimingReport,
}

fn timing_report(seconds: Vec<f64>, budget: f64) -> TimingReport {
    let max = seconds.iter().copied().fold(0.0, f64::max);
    TimingReport {
        mean_seconds: stenunet::evalkit::mean(seconds.iter().copied()),
        max_seconds: max,
        budget_seconds: budget,
        within_budget: !seconds.is_empty() && max < budget,
        seconds,
    }
}

/// Writes `masks/<id>.png` and `reports/timing.json`.
pub fn cmd_infer(cfg: &PipelineConfig) -> Result<TimingReport, CliError> {
    let out = out_dir(cfg)?;
    let model = load_model(cfg)?;
    let masks = ensure_dir(out.join("masks"))?;
    let all = entries(cfg, false)?;
    let mut seconds = Vec::with_capacity(all.len());
    for entry in &all {
        let (mask, s) = predict(&model, entry, &cfg.prefilter, &cfg.post)?;
        save_mask(&mask, masks.join(format!("{}.png", entry.id)))?;
        seconds.push(s);
    }
    let timing = timing_report(seconds, cfg.budget_seconds);
    let doc = TimingDoc {
        fingerprint: cfg.fingerprint(),
        ids: all.iter().map(|e| e.id.as_str()).collect(),
        timing: &timing,
    };
    write_file(
        &out.join("reports").join("timing.json"),
        &serde_json::to_string_pretty(&doc).expect("timing serializes"),
    )?;
    Ok(timing)
}

fn write_report(out: &Path, report: &Report) -> Result<(), CliError> {
    let reports = out.join("reports");
    write_file(&reports.join("eval.json"), &report.to_json())?;
    write_file(&reports.join("summary.txt"), &report.summary())
}

/// Scores existing `masks/<id>.png` against the annotations.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<Report, CliError> {
    let out = out_dir(cfg)?;
    let mut items = Vec::new();
    for entry in entries(cfg, true)? {
        let pred = load_mask(out.join("masks").join(format!("{}.png", entry.id)))?;
        items.push(EvalItem {
            id: entry.id.clone(),
            pred,
            gt: gt_of(&entry)?.clone(),
            seconds: 0.0,
        });
    }
    let report = evaluate(&items, &cfg.eval, &cfg.fingerprint())?;
    write_report(&out, &report)?;
    Ok(report)
}

/// Preprocess, infer, postprocess and evaluate, writing masks and reports.
/// Images run one at a time so each timing gets the whole worker pool.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Report, CliError> {
    let out = out_dir(cfg)?;
    let model = load_model(cfg)?;
    let masks = ensure_dir(out.join("masks"))?;
    let mut items = Vec::new();
    for entry in entries(cfg, true)? {
        let (pred, seconds) = predict(&model, &entry, &cfg.prefilter, &cfg.post)?;
        save_mask(&pred, masks.join(format!("{}.png", entry.id)))?;
        items.push(EvalItem {
            id: entry.id.clone(),
            gt: gt_of(&entry)?.clone(),
            pred,
            seconds,
        });
    }
    let report = evaluate(&items, &cfg.eval, &cfg.fingerprint())?;
    write_report(&out, &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AblationMode {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "pre")]
    Pre,
    #[serde(rename = "pre+post")]
    PrePost,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [Self::Raw, Self::Pre, Self::PrePost];

    pub fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Pre => "pre",
            Self::PrePost => "pre+post",
        }
    }

    /// The configured stages with this mode's switches applied.
    pub fn stages(self, cfg: &PipelineConfig) -> (PreConfig, PostConfig) {
        let mut pre = cfg.prefilter.clone();
        let mut post = cfg.post.clone();
        pre.enabled = self != Self::Raw;
        post.enabled = self == Self::PrePost;
        (pre, post)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub instance_f1: f64,
    pub pixel_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub fingerprint: String,
    /// The metric the table's Δ column is computed on.
    pub primary: EvalMode,
    pub rows: Vec<AblationRow>,
}

impl AblationRow {
    pub fn f1(&self, mode: EvalMode) -> f64 {
        match mode {
            EvalMode::Instance => self.instance_f1,
            EvalMode::Pixel => self.pixel_f1,
        }
    }
}

impl AblationReport {
    pub fn row(&self, mode: AblationMode) -> &AblationRow {
        self.rows.iter().find(|r| r.mode == mode).expect("every mode has a row")
    }

    /// `mode  mean F1  Δ vs raw` on the primary metric, with the other
    /// metric alongside.
    pub fn table(&self) -> String {
        let other = match self.primary {
            EvalMode::Instance => EvalMode::Pixel,
            EvalMode::Pixel => EvalMode::Instance,
        };
        let raw = self.row(AblationMode::Raw);
        let mut s = String::new();
        let _ = writeln!(s, "fingerprint {}", self.fingerprint);
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>10} {:>12} {:>10}",
            "mode",
            format!("{} F1", self.primary),
            "Δ vs raw",
            format!("{other} F1"),
            "Δ vs raw"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>12.4} {:>+10.4} {:>12.4} {:>+10.4}",
                r.mode.name(),
                r.f1(self.primary),
                r.f1(self.primary) - raw.f1(self.primary),
                r.f1(other),
                r.f1(other) - raw.f1(other)
            );
        }
        s
    }
}

/// Evaluates one checkpoint with the prefilter and postprocessing switched
/// per [`AblationMode`], scoring both pixel and instance F1.
pub fn cmd_ablate(cfg: &PipelineConfig) -> Result<AblationReport, CliError> {
    let out = out_dir(cfg)?;
    let model = load_model(cfg)?;
    let all = entries(cfg, true)?;
    let fingerprint = cfg.fingerprint();
    let mut rows = Vec::new();
    for mode in AblationMode::ALL {
        let (pre, post) = mode.stages(cfg);
        let mut items = Vec::with_capacity(all.len());
        for entry in &all {
            let (pred, seconds) = predict(&model, entry, &pre, &post)?;
            items.push(EvalItem {
                id: entry.id.clone(),
                pred,
                gt: gt_of(entry)?.clone(),
                seconds,
            });
        }
        let score = |m: EvalMode| -> Result<f64, CliError> {
            let ec = EvalConfig { mode: m, ..cfg.eval.clone() };
            Ok(evaluate(&items, &ec, &fingerprint)?.mean_f1)
        };
        rows.push(AblationRow {
            mode,
            instance_f1: score(EvalMode::Instance)?,
            pixel_f1: score(EvalMode::Pixel)?,
        });
    }
    let report = AblationReport {
        fingerprint,
        primary: cfg.eval.mode,
        rows,
    };
    let reports = out.join("reports");
    write_file(&reports.join("ablation.txt"), &report.table())?;
    write_file(
        &reports.join("ablation.json"),
        &serde_json::to_string_pretty(&report).expect("ablation serializes"),
    )?;
    Ok(report)
}

/// Finite-difference checks seeded by `io.seed`. Writes
/// `reports/gradcheck.txt` when `io.out` is set.
pub fn cmd_gradcheck(cfg: &PipelineConfig) -> Result<Vec<GradRow>, CliError> {
    let rows = run_gradsuite(cfg.io.seed);
    if cfg.io.out.is_some() {
        let out = out_dir(cfg)?;
        write_file(
            &out.join("reports").join("gradcheck.txt"),
            &format!("fingerprint {}\n{}", cfg.fingerprint(), gradcheck_table(&rows)),
        )?;
    }
    Ok(rows)
}

pub fn gradcheck_table(rows: &[GradRow]) -> String {
    let mut s = format!("{:<16} {:<28} {:>12}  result (tolerance {GRADCHECK_TOLERANCE:e})\n", "primitive", "shape", "max rel err");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:<28} {:>12.3e}  {}",
            r.primitive,
            r.shape,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    s
}
