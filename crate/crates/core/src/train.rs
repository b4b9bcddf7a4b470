//! Loss, optimizers, subject-level stratified folds and the per-fold
//! training loop.
//!
//! Every random choice (initialization, per-epoch shuffles, dropout masks,
//! fold assignment) comes from an explicit [`Rng`] derived from the run
//! seed, so a fold replays bit for bit.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{subject_labels, SubjectPatches};
use crate::error::{Error, Result};
use crate::infer::{evaluate_predictions, predict_patches, Evaluation, SubjectPredictions};
use crate::metrics::MetricBlock;
use crate::model::{
    batch_loss, forward, init_params, model_backward_weighted, save_checkpoint, ModelConfig,
    ModelParams, Mode,
};
use crate::numkit::{Matrix, Rng};
use crate::signal::{Label, SegmentationConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Usage(format!("unknown optimizer {other:?}, expected adam or sgd"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub folds: usize,
    /// Weight each training patch by `N / (2 * N_class)`.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            folds: 5,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Param("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Param(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.folds < 2 {
            return Err(Error::Param(format!("need at least 2 folds, got {}", self.folds)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Param(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Param("eps must be positive".into()));
        }
        Ok(())
    }
}

/// `-ln p(target)`, with `p` clamped to at least `1e-12`.
pub fn cross_entropy(probs: &[f64], target: Label) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.len() != 2 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("not a two-class distribution: {probs:?}")));
    }
    Ok(-probs[target.index()].max(1e-12).ln())
}

/// Adam (bias-corrected moments) or plain SGD over every parameter tensor.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        params.check_same_shape(grads)?;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.tensors_mut())
                    .zip(self.v.tensors_mut());
                for (((p, g), m), v) in tensors {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice());
                    for (((pv, &gv), mv), vv) in it {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

impl ModelParams {
    fn check_same_shape(&self, other: &ModelParams) -> Result<()> {
        for (a, b) in self.tensors().iter().zip(other.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "gradient tensor {:?} does not match parameter {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(())
    }
}

/// One optimizer update.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut Optimizer,
) -> Result<()> {
    state.step(params, grads)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

/// Stratified subject-level folds. Subjects of each class are sorted by id,
/// shuffled with the seed, and dealt round-robin; the PD deal continues
/// where the HC deal stopped so fold sizes stay within one subject.
pub fn make_subject_folds(
    subjects: &[(String, Label)],
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Param(format!("need at least 2 folds, got {folds}")));
    }
    let mut seen = BTreeSet::new();
    for (id, _) in subjects {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("subject {id} appears twice")));
        }
    }
    let mut rng = Rng::with_stream(seed, 0xF01D);
    let mut test: Vec<BTreeSet<String>> = vec![BTreeSet::new(); folds];
    let mut next = 0;
    for class in Label::ALL {
        let mut ids: Vec<&String> = subjects
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(id, _)| id)
            .collect();
        if ids.len() < folds {
            return Err(Error::Data(format!(
                "class {class} has {} subjects, need at least {folds} for {folds}-fold splits",
                ids.len()
            )));
        }
        ids.sort();
        rng.shuffle(&mut ids);
        for id in ids {
            test[next].insert(id.clone());
            next = (next + 1) % folds;
        }
    }
    let all: BTreeSet<String> = subjects.iter().map(|(id, _)| id.clone()).collect();
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(k, test_subjects)| FoldSplit {
            fold_index: k,
            train_subjects: all.difference(&test_subjects).cloned().collect(),
            test_subjects,
        })
        .collect())
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Called before each optimizer step with the subject of every patch in
    /// the minibatch.
    fn on_gradient_step(&mut self, _fold: usize, _subjects: &[&str]) {}

    fn on_epoch(&mut self, _fold: usize, _epoch: usize, _mean_loss: f64) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub train_patches: usize,
    pub epoch_losses: Vec<f64>,
    pub evaluation: Evaluation,
}

/// Result of training one fold.
pub struct FoldOutcome {
    pub params: ModelParams,
    pub report: FoldReport,
    pub predictions: Vec<SubjectPredictions>,
    pub seconds: f64,
}

/// Trains on the split's training subjects, then votes on its test subjects.
pub fn train_model(
    data: &[SubjectPatches],
    split: &FoldSplit,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    alpha: f64,
    observer: &mut dyn TrainObserver,
) -> Result<FoldOutcome> {
    let started = Instant::now();
    mcfg.validate()?;
    tcfg.validate()?;
    if split.train_subjects.is_empty() || split.test_subjects.is_empty() {
        return Err(Error::Data(format!(
            "fold {} needs non-empty train and test subject sets",
            split.fold_index
        )));
    }
    if let Some(id) = split.train_subjects.intersection(&split.test_subjects).next() {
        return Err(Error::Protocol(format!(
            "subject {id} is in both train and test sets of fold {}",
            split.fold_index
        )));
    }
    for id in split.train_subjects.iter().chain(&split.test_subjects) {
        if !data.iter().any(|s| &s.subject_id == id) {
            return Err(Error::Protocol(format!("subject {id} in fold {} has no data", split.fold_index)));
        }
    }

    let train: Vec<(&Matrix, Label, &str)> = data
        .iter()
        .filter(|s| split.train_subjects.contains(&s.subject_id))
        .flat_map(|s| {
            s.patches
                .iter()
                .map(move |p| (&p.values, s.label, s.subject_id.as_str()))
        })
        .collect();
    for class in Label::ALL {
        if !train.iter().any(|(_, l, _)| *l == class) {
            return Err(Error::Data(format!(
                "fold {} has no {class} training patches",
                split.fold_index
            )));
        }
    }
    let class_weight = |l: Label| {
        if !tcfg.class_weighting {
            return 1.0;
        }
        let n = train.iter().filter(|(_, c, _)| *c == l).count();
        train.len() as f64 / (2.0 * n as f64)
    };
    let weights_by_class = [class_weight(Label::Hc), class_weight(Label::Pd)];

    let mut rng = Rng::with_stream(tcfg.seed, split.fold_index as u64 + 1);
    let mut params = init_params(mcfg, &mut rng)?;
    let mut opt = Optimizer::new(tcfg, &params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let inputs: Vec<&Matrix> = batch.iter().map(|&i| train[i].0).collect();
            let targets: Vec<Label> = batch.iter().map(|&i| train[i].1).collect();
            let subjects: Vec<&str> = batch.iter().map(|&i| train[i].2).collect();
            if let Some(s) = subjects.iter().find(|s| split.test_subjects.contains(**s)) {
                return Err(Error::Protocol(format!("test subject {s} reached a gradient step")));
            }
            let out = forward(&params, mcfg, &inputs, Mode::Training(&mut rng))?;
            loss_sum += batch_loss(&out.probs, &targets) * batch.len() as f64;
            let weights: Option<Vec<f64>> = tcfg
                .class_weighting
                .then(|| targets.iter().map(|t| weights_by_class[t.index()]).collect());
            let cache = out.cache.as_ref().expect("training pass keeps its cache");
            let grads = model_backward_weighted(cache, &targets, weights.as_deref(), &params, mcfg)?;
            observer.on_gradient_step(split.fold_index, &subjects);
            opt.step(&mut params, &grads)?;
        }
        let mean = loss_sum / train.len() as f64;
        observer.on_epoch(split.fold_index, epoch, mean);
        epoch_losses.push(mean);
    }

    let mut predictions = Vec::with_capacity(split.test_subjects.len());
    for s in data.iter().filter(|s| split.test_subjects.contains(&s.subject_id)) {
        let preds = predict_patches(&s.patches, &params, mcfg)?;
        predictions.push(SubjectPredictions {
            subject_id: s.subject_id.clone(),
            label: s.label,
            fold: split.fold_index,
            patch_labels: preds.into_iter().map(|p| p.label).collect(),
        });
    }
    let evaluation = evaluate_predictions(&predictions, alpha)?;
    Ok(FoldOutcome {
        report: FoldReport {
            fold: split.fold_index,
            train_subjects: split.train_subjects.iter().cloned().collect(),
            test_subjects: split.test_subjects.iter().cloned().collect(),
            train_patches: train.len(),
            epoch_losses,
            evaluation,
        },
        params,
        predictions,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Effective configuration echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub seed: u64,
    pub segmentation: SegmentationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub alpha: f64,
}

/// Mean of the per-fold values that are defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
}

fn mean_defined(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Deterministic training report. Wall-clock times live in [`RunTimings`]
/// so that a replay with the same seed reproduces this report byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub config: RunEcho,
    pub folds: Vec<FoldReport>,
    /// Sequence-level metrics from the confusion counts pooled over folds.
    pub pooled: MetricBlock,
    pub fold_mean: MeanMetrics,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTimings {
    pub seed: u64,
    pub fold_seconds: Vec<f64>,
    pub total_seconds: f64,
}

pub struct CrossValidation {
    pub report: TrainReport,
    pub splits: Vec<FoldSplit>,
    pub models: Vec<ModelParams>,
    pub predictions: Vec<SubjectPredictions>,
    pub timings: RunTimings,
}

/// Subject-level k-fold cross-validation over `data`.
pub fn cross_validate(
    data: &[SubjectPatches],
    seg: &SegmentationConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    alpha: f64,
    observer: &mut dyn TrainObserver,
) -> Result<CrossValidation> {
    let started = Instant::now();
    if seg.window != mcfg.window {
        return Err(Error::Usage(format!(
            "segmentation window {} differs from model window {}",
            seg.window, mcfg.window
        )));
    }
    crate::infer::check_threshold(alpha)?;
    let splits = make_subject_folds(&subject_labels(data), tcfg.folds, tcfg.seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    let mut models = Vec::with_capacity(splits.len());
    let mut predictions = Vec::new();
    let mut fold_seconds = Vec::with_capacity(splits.len());
    for split in &splits {
        let outcome = train_model(data, split, mcfg, tcfg, alpha, observer)?;
        fold_seconds.push(outcome.seconds);
        folds.push(outcome.report);
        models.push(outcome.params);
        predictions.extend(outcome.predictions);
    }
    predictions.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let pooled = evaluate_predictions(&predictions, alpha)?.metrics;
    let fold_mean = MeanMetrics {
        accuracy: mean_defined(folds.iter().map(|f| f.evaluation.metrics.accuracy)),
        recall: mean_defined(folds.iter().map(|f| f.evaluation.metrics.recall)),
        f1: mean_defined(folds.iter().map(|f| f.evaluation.metrics.f1)),
        mcc: mean_defined(folds.iter().map(|f| f.evaluation.metrics.mcc)),
    };
    Ok(CrossValidation {
        report: TrainReport {
            config: RunEcho {
                seed: tcfg.seed,
                segmentation: *seg,
                model: mcfg.clone(),
                train: tcfg.clone(),
                alpha,
            },
            folds,
            pooled,
            fold_mean,
        },
        splits,
        models,
        predictions,
        timings: RunTimings {
            seed: tcfg.seed,
            fold_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

pub fn checkpoint_name(fold: usize) -> String {
    format!("fold{fold}.lcnn")
}

pub const REPORT_FILE: &str = "report.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const TIMING_FILE: &str = "timing.json";

/// Writes `fold{k}.lcnn`, `report.json`, `splits.json` and `timing.json`.
pub fn write_cross_validation(cv: &CrossValidation, mcfg: &ModelConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (split, params) in cv.splits.iter().zip(&cv.models) {
        save_checkpoint(params, mcfg, &out_dir.join(checkpoint_name(split.fold_index)))?;
    }
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(REPORT_FILE, cv.report.to_json()?)?;
    write(SPLITS_FILE, serde_json::to_string_pretty(&cv.splits)? + "\n")?;
    write(TIMING_FILE, serde_json::to_string_pretty(&cv.timings)? + "\n")?;
    Ok(())
}

pub fn read_splits(path: &Path) -> Result<Vec<FoldSplit>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
