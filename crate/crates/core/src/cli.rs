//! `lcnn` command line: synth | train | eval | infer | count.
//!
//! Pipeline settings come from an optional TOML file (`--config`) and are
//! then overridden by flags. The merged [`RunConfig`] is echoed into every
//! report.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, SubjectPatches};
use crate::error::{Error, Result};
use crate::infer::{
    check_threshold, check_window, diagnose_sequence, evaluate_predictions, predict_held_out,
    Evaluation,
};
use crate::metrics::MetricBlock;
use crate::model::{complexity_report, load_checkpoint, ModelConfig, ModelParams};
use crate::signal::{read_manifest, DiffMode, SegmentationConfig, SequenceFormat};
use crate::synth::{generate_dataset, SynthConfig};
use crate::train::{
    checkpoint_name, cross_validate, read_splits, write_cross_validation, FoldReport, NoObserver,
    RunEcho, TrainConfig, SPLITS_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "lcnn", version, about = "LSTM + 1D-CNN handwriting screening pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic spiral dataset (dwt files + manifest.csv).
    Synth(SynthArgs),
    /// Subject-level k-fold training; writes checkpoints and reports.
    Train(TrainArgs),
    /// Cross-validated metrics, threshold sweep and window sweep.
    Eval(EvalArgs),
    /// Diagnose recordings with a trained checkpoint (JSON lines).
    Infer(InferArgs),
    /// Parameter and FLOP accounting.
    Count(CountArgs),
}

/// Settings shared by every subcommand that touches the pipeline.
#[derive(Debug, Default, Args)]
pub struct PipelineFlags {
    /// TOML file with `seed`, `alpha`, `format` and `[segmentation]`,
    /// `[model]`, `[train]`, `[synth]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Voting threshold in (0, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_flag::<DiffMode>)]
    pub diff_mode: Option<DiffMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_parser = parse_flag::<SequenceFormat>)]
    pub format: Option<SequenceFormat>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subjects per class.
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub pd_tremor_amp: Option<f64>,
    #[arg(long)]
    pub hc_tremor_amp: Option<f64>,
    /// Give HC subjects the PD tremor amplitude.
    #[arg(long)]
    pub null_control: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight training patches inversely to class frequency.
    #[arg(long)]
    pub class_weighting: bool,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory written by `train`; without it a fresh cross-validation runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for eval.json and sweep CSVs; CSVs go to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `lo:hi:step` over the voting threshold.
    #[arg(long, value_parser = parse_sweep)]
    pub alpha_sweep: Option<Sweep>,
    /// Comma-separated window lengths; each retrains a full cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub window_sweep: Option<Vec<usize>>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// A `.lcnn` checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest whose recordings are diagnosed (in addition to any paths).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Recording files; format from `--format` or the file extension.
    pub paths: Vec<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn parse_flag<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Inclusive arithmetic grid `lo, lo+step, ..` up to `hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Sweep {
    /// Grid values, rounded to 12 decimals so `0.1:0.9:0.1` yields 0.3, not
    /// 0.30000000000000004.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.lo + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

pub fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err(format!("expected lo:hi:step, got {s:?}"));
    };
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?} in {s:?}"));
    let sweep = Sweep {
        lo: num(lo)?,
        hi: num(hi)?,
        step: num(step)?,
    };
    if !(sweep.step > 0.0) || !(sweep.lo <= sweep.hi) {
        return Err(format!("sweep {s:?} needs lo <= hi and step > 0"));
    }
    Ok(sweep)
}

/// Effective configuration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    pub format: SequenceFormat,
    pub segmentation: SegmentationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 0.5,
            format: SequenceFormat::Dwt,
            segmentation: SegmentationConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn table_has(value: &toml::Value, table: &str, key: &str) -> bool {
    value
        .get(table)
        .and_then(|t| t.get(key))
        .is_some()
}

impl RunConfig {
    /// Parses a TOML config. The seed lives at top level only, and a model
    /// window that is not given follows the segmentation window.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        for table in ["train", "synth"] {
            if table_has(&value, table, "seed") {
                return Err(Error::Usage(format!(
                    "config: set seed at top level, not in [{table}]"
                )));
            }
        }
        let seg_w = table_has(&value, "segmentation", "window");
        let model_w = table_has(&value, "model", "window");
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        if seg_w && !model_w {
            cfg.model.window = cfg.segmentation.window;
        } else if model_w && !seg_w {
            cfg.segmentation.window = cfg.model.window;
        }
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn sync_seed(&mut self) {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    /// File (or defaults) overridden by flags, then validated.
    pub fn resolve(flags: &PipelineFlags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(w) = flags.window {
            cfg.segmentation.window = w;
            cfg.model.window = w;
        }
        if let Some(s) = flags.stride {
            cfg.segmentation.stride = s;
        }
        if let Some(a) = flags.alpha {
            cfg.alpha = a;
        }
        if let Some(m) = flags.diff_mode {
            cfg.segmentation.diff_mode = m;
        }
        if let Some(e) = flags.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = flags.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(b) = flags.batch {
            cfg.train.batch_size = b;
        }
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(k) = flags.folds {
            cfg.train.folds = k;
        }
        if let Some(f) = flags.format {
            cfg.format = f;
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: Error| Error::Usage(e.to_string());
        if self.segmentation.window != self.model.window {
            return Err(Error::Usage(format!(
                "segmentation window {} contradicts model window {}",
                self.segmentation.window, self.model.window
            )));
        }
        self.segmentation.validate().map_err(usage)?;
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        check_threshold(self.alpha).map_err(usage)
    }

    pub fn echo(&self) -> RunEcho {
        RunEcho {
            seed: self.seed,
            segmentation: self.segmentation,
            model: self.model.clone(),
            train: self.train.clone(),
            alpha: self.alpha,
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    execute(cli.command, out)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Count(a) => count(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        run.seed = s;
    }
    run.sync_seed();
    let mut cfg = run.synth;
    if let Some(n) = a.subjects {
        cfg.n_subjects_per_class = n;
    }
    if let Some(v) = a.pd_tremor_amp {
        cfg.pd_tremor_amp = v;
    }
    if let Some(v) = a.hc_tremor_amp {
        cfg.hc_tremor_amp = v;
    }
    if a.null_control {
        if a.hc_tremor_amp.is_some() {
            return Err(Error::Usage("--null-control contradicts --hc-tremor-amp".into()));
        }
        cfg = cfg.null_control();
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let manifest = generate_dataset(&cfg, &a.out)?;
    write_file(&a.out.join("synth.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    emit(
        out,
        &format!(
            "wrote {} subjects per class to {}\n",
            cfg.n_subjects_per_class,
            manifest.display()
        ),
    )
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Vec<SubjectPatches>> {
    let rows = read_manifest(path)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("manifest {} lists no recordings", path.display())));
    }
    load_dataset(&rows, cfg.format, &cfg.segmentation)
}

fn fmt_opt(v: Option<f64>, pct: bool) -> String {
    match v {
        None => "undefined".into(),
        Some(x) if pct => format!("{:.1}", 100.0 * x),
        Some(x) => format!("{x:.3}"),
    }
}

/// Per-fold rows, then the fold mean and the pooled counts.
pub fn metrics_table(folds: &[(usize, &MetricBlock)], pooled: &MetricBlock) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>7} {:>7} {:>7} {:>7}  tp/tn/fp/fn", "fold", "acc%", "rec%", "f1%", "mcc");
    let row = |s: &mut String, name: &str, m: &MetricBlock| {
        let c = m.confusion;
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7} {:>7}  {}/{}/{}/{}",
            name,
            fmt_opt(m.accuracy, true),
            fmt_opt(m.recall, true),
            fmt_opt(m.f1, true),
            fmt_opt(m.mcc, false),
            c.tp,
            c.tn,
            c.fp,
            c.fn_
        );
    };
    for (k, m) in folds {
        row(&mut s, &k.to_string(), m);
    }
    let mean = |f: fn(&MetricBlock) -> Option<f64>| {
        let v: Vec<f64> = folds.iter().filter_map(|(_, m)| f(m)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let _ = writeln!(
        s,
        "{:<8} {:>7} {:>7} {:>7} {:>7}",
        "mean",
        fmt_opt(mean(|m| m.accuracy), true),
        fmt_opt(mean(|m| m.recall), true),
        fmt_opt(mean(|m| m.f1), true),
        fmt_opt(mean(|m| m.mcc), false)
    );
    row(&mut s, "pooled", pooled);
    s
}

fn fold_table(folds: &[FoldReport], pooled: &MetricBlock) -> String {
    let rows: Vec<(usize, &MetricBlock)> =
        folds.iter().map(|f| (f.fold, &f.evaluation.metrics)).collect();
    metrics_table(&rows, pooled)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&a.pipeline)?;
    cfg.train.class_weighting |= a.class_weighting;
    let data = load_data(&a.data, &cfg)?;
    let cv = cross_validate(&data, &cfg.segmentation, &cfg.model, &cfg.train, cfg.alpha, &mut NoObserver)?;
    write_cross_validation(&cv, &cfg.model, &a.out)?;
    emit(out, &fold_table(&cv.report.folds, &cv.report.pooled))?;
    emit(out, &format!("wrote {}\n", a.out.display()))
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: RunEcho,
    evaluation: &'a Evaluation,
    folds: Vec<FoldMetrics<'a>>,
}

#[derive(Serialize)]
struct FoldMetrics<'a> {
    fold: usize,
    metrics: &'a MetricBlock,
}

const ALPHA_HEADER: &str = "alpha,predicted_pd,tp,tn,fp,fn,accuracy,recall,f1,mcc";
const WINDOW_HEADER: &str = "window,stride,patches,accuracy,recall,f1,mcc,pooled_accuracy,pooled_mcc";

fn csv_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn alpha_row(e: &Evaluation) -> String {
    let m = &e.metrics;
    let c = m.confusion;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        e.alpha,
        e.predicted_pd(),
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        csv_num(m.accuracy),
        csv_num(m.recall),
        csv_num(m.f1),
        csv_num(m.mcc)
    )
}

/// Fold models and splits from a `train` output directory.
fn load_run(dir: &Path, cfg: &mut RunConfig, window_flag: Option<usize>) -> Result<(Vec<ModelParams>, Vec<crate::train::FoldSplit>)> {
    let splits = read_splits(&dir.join(SPLITS_FILE))?;
    let mut models = Vec::with_capacity(splits.len());
    for split in &splits {
        let (params, mcfg) = load_checkpoint(&dir.join(checkpoint_name(split.fold_index)))?;
        if let Some(w) = window_flag {
            if w != mcfg.window {
                return Err(Error::Usage(format!(
                    "--window {w} contradicts checkpoint window {}",
                    mcfg.window
                )));
            }
        }
        cfg.model = mcfg.clone();
        cfg.segmentation.window = mcfg.window;
        models.push(params);
    }
    Ok((models, splits))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&a.pipeline)?;
    if let Some(sweep) = &a.alpha_sweep {
        for v in sweep.values() {
            check_threshold(v).map_err(|e| Error::Usage(format!("--alpha-sweep: {e}")))?;
        }
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let predictions = match &a.checkpoint {
        Some(dir) => {
            let (models, splits) = load_run(dir, &mut cfg, a.pipeline.window)?;
            let data = load_data(&a.data, &cfg)?;
            predict_held_out(&data, &models, &cfg.model, &splits)?
        }
        None => {
            let data = load_data(&a.data, &cfg)?;
            cross_validate(&data, &cfg.segmentation, &cfg.model, &cfg.train, cfg.alpha, &mut NoObserver)?
                .predictions
        }
    };
    let evaluation = evaluate_predictions(&predictions, cfg.alpha)?;
    let mut fold_ids: Vec<usize> = predictions.iter().map(|p| p.fold).collect();
    fold_ids.sort_unstable();
    fold_ids.dedup();
    let mut fold_evals = Vec::new();
    for k in &fold_ids {
        let subset: Vec<_> = predictions.iter().filter(|p| p.fold == *k).cloned().collect();
        fold_evals.push((*k, evaluate_predictions(&subset, cfg.alpha)?.metrics));
    }
    let rows: Vec<(usize, &MetricBlock)> = fold_evals.iter().map(|(k, m)| (*k, m)).collect();
    emit(out, &metrics_table(&rows, &evaluation.metrics))?;

    let report = EvalReport {
        config: cfg.echo(),
        evaluation: &evaluation,
        folds: fold_evals.iter().map(|(k, m)| FoldMetrics { fold: *k, metrics: m }).collect(),
    };
    if let Some(dir) = &a.out {
        write_file(&dir.join("eval.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }

    let mut csvs: Vec<(&str, String)> = Vec::new();
    if let Some(sweep) = &a.alpha_sweep {
        let mut text = format!("{ALPHA_HEADER}\n");
        for alpha in sweep.values() {
            text += &alpha_row(&evaluate_predictions(&predictions, alpha)?);
            text.push('\n');
        }
        csvs.push(("alpha_sweep.csv", text));
    }
    if let Some(windows) = &a.window_sweep {
        csvs.push(("window_sweep.csv", window_sweep(&a.data, &cfg, windows)?));
    }
    for (name, text) in csvs {
        match &a.out {
            Some(dir) => write_file(&dir.join(name), &text)?,
            None => emit(out, &format!("# {name}\n{text}"))?,
        }
    }
    Ok(())
}

fn window_sweep(data_path: &Path, base: &RunConfig, windows: &[usize]) -> Result<String> {
    let mut text = format!("{WINDOW_HEADER}\n");
    for &w in windows {
        let mut cfg = base.clone();
        cfg.segmentation.window = w;
        cfg.model.window = w;
        cfg.validate()?;
        let data = load_data(data_path, &cfg)?;
        let patches: usize = data.iter().map(|s| s.patches.len()).sum();
        let cv = cross_validate(&data, &cfg.segmentation, &cfg.model, &cfg.train, cfg.alpha, &mut NoObserver)?;
        let m = cv.report.fold_mean;
        let p = &cv.report.pooled;
        let _ = writeln!(
            text,
            "{w},{},{patches},{},{},{},{},{},{}",
            cfg.segmentation.stride,
            csv_num(m.accuracy),
            csv_num(m.recall),
            csv_num(m.f1),
            csv_num(m.mcc),
            csv_num(p.accuracy),
            csv_num(p.mcc)
        );
    }
    Ok(text)
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&a.pipeline)?;
    let (params, mcfg) = load_checkpoint(&a.checkpoint)?;
    if let Some(w) = a.pipeline.window {
        if w != mcfg.window {
            return Err(Error::Usage(format!(
                "--window {w} contradicts checkpoint window {}",
                mcfg.window
            )));
        }
    }
    cfg.segmentation.window = mcfg.window;
    cfg.model = mcfg;
    check_window(&cfg.model, &cfg.segmentation)?;

    let mut inputs: Vec<(PathBuf, SequenceFormat)> = Vec::new();
    if let Some(manifest) = &a.data {
        for row in read_manifest(manifest)? {
            inputs.push((row.path, cfg.format));
        }
    }
    for p in &a.paths {
        let format = a.pipeline.format.unwrap_or_else(|| SequenceFormat::from_path(p));
        inputs.push((p.clone(), format));
    }
    if inputs.is_empty() {
        return Err(Error::Usage("infer needs recording paths or --data".into()));
    }

    let header = serde_json::json!({ "config": cfg.echo() });
    emit(out, &format!("{header}\n"))?;
    let mut failures = 0;
    for (path, format) in &inputs {
        match diagnose_sequence(path, *format, &params, &cfg.model, &cfg.segmentation, cfg.alpha) {
            Ok(d) => emit(out, &(d.to_json_line() + "\n"))?,
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if failures > 0 {
        return Err(Error::Data(format!("{failures} of {} recordings failed", inputs.len())));
    }
    Ok(())
}

fn count(a: CountArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = a.window {
        cfg.model.window = w;
    }
    cfg.model.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if a.json {
        let v = serde_json::json!({
            "model": cfg.model,
            "params": crate::model::count_params(&cfg.model)?,
            "flops": crate::model::count_flops(&cfg.model)?,
        });
        emit(out, &(serde_json::to_string_pretty(&v)? + "\n"))
    } else {
        emit(out, &complexity_report(&cfg.model)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid() {
        let s = parse_sweep("0.1:0.9:0.1").unwrap();
        let v = s.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[2], 0.3);
        assert_eq!(v[8], 0.9);
        assert!(parse_sweep("0.9:0.1:0.1").is_err());
        assert!(parse_sweep("0.1:0.9").is_err());
        assert!(parse_sweep("0.1:0.9:0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 4\nalpha = 0.6\n[segmentation]\nwindow = 64\nstride = 32\n[train]\nepochs = 3\n").unwrap();
        let flags = PipelineFlags {
            config: Some(path.clone()),
            stride: Some(16),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.segmentation.window, cfg.model.window), (64, 64));
        assert_eq!(cfg.segmentation.stride, 16);
        assert_eq!((cfg.seed, cfg.train.seed, cfg.alpha, cfg.train.epochs), (4, 4, 0.6, 3));
    }

    #[test]
    fn contradictions_are_usage_errors() {
        let bad = "[segmentation]\nwindow = 64\n[model]\nwindow = 128\n";
        let cfg = RunConfig::from_toml(bad).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nseed = 3\n"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1\n"), Err(Error::Usage(_))));
        let flags = PipelineFlags {
            alpha: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(RunConfig::resolve(&flags), Err(Error::Usage(_))));
    }

    #[test]
    fn unknown_flag_rejected() {
        let mut sink = Vec::new();
        let err = run(["lcnn", "count", "--bogus"], &mut sink).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn count_prints_reference() {
        let mut sink = Vec::new();
        run(["lcnn", "count"], &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        assert!(text.contains("68608") && text.contains("paper: 83.89K"), "{text}");
        assert!(text.contains("paper: 590.21K"));
    }
}
