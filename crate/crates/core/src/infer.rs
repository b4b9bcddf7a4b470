//! Sequence-level diagnosis by thresholded patch voting.
//!
//! The voting rule counts the patches predicted PD: with `N` patches of
//! which `c` are predicted PD, `r = c / N` and the sequence is diagnosed PD
//! iff `r >= alpha` (ties go to PD). Scoring a sequence against a known
//! label by counting *correct* patches is the same decision at
//! `alpha = 0.5` for binary labels, but counting PD votes needs no label and
//! so also works for new recordings.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::dataset::SubjectPatches;
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricBlock};
use crate::model::{forward, ModelConfig, ModelParams, Mode};
use crate::numkit::Matrix;
use crate::signal::{load_sequence, preprocess, Label, Patch, SegmentationConfig, SequenceFormat};
use crate::train::FoldSplit;

/// Patches per inference batch.
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PatchPrediction {
    pub label: Label,
    /// `[p(HC), p(PD)]`.
    pub probs: [f64; 2],
}

/// Inference-mode class predictions for a list of `w x 5` inputs.
pub fn predict_inputs(
    inputs: &[&Matrix],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<PatchPrediction>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        let probs = forward(params, cfg, chunk, Mode::Inference)?.probs;
        for r in 0..probs.rows() {
            let p = [probs[(r, 0)], probs[(r, 1)]];
            // argmax, first index on ties
            let label = if p[1] > p[0] { Label::Pd } else { Label::Hc };
            out.push(PatchPrediction { label, probs: p });
        }
    }
    Ok(out)
}

pub fn predict_patches(
    patches: &[Patch],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<PatchPrediction>> {
    if let Some(p) = patches.iter().find(|p| p.window() != cfg.window) {
        return Err(Error::Shape(format!(
            "patch from {} has width {}, model expects {}",
            p.subject_id,
            p.window(),
            cfg.window
        )));
    }
    let inputs: Vec<&Matrix> = patches.iter().map(|p| &p.values).collect();
    predict_inputs(&inputs, params, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoteResult {
    pub subject_id: String,
    pub n_patches: usize,
    /// Share of patches predicted PD.
    pub pd_fraction: f64,
    pub threshold: f64,
    pub predicted: Label,
}

pub fn check_threshold(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Param(format!("voting threshold must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub fn majority_vote(subject_id: &str, labels: &[Label], alpha: f64) -> Result<VoteResult> {
    check_threshold(alpha)?;
    if labels.is_empty() {
        return Err(Error::Data(format!("no patch predictions to vote on for {subject_id}")));
    }
    let pd = labels.iter().filter(|&&l| l == Label::Pd).count();
    let r = pd as f64 / labels.len() as f64;
    Ok(VoteResult {
        subject_id: subject_id.to_string(),
        n_patches: labels.len(),
        pd_fraction: r,
        threshold: alpha,
        predicted: if r >= alpha { Label::Pd } else { Label::Hc },
    })
}

/// Wall-clock seconds per diagnosis stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub loading: f64,
    pub processing: f64,
    pub model: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnosis {
    pub vote: VoteResult,
    pub sequence_length: usize,
    pub timings: StageTimings,
}

impl Diagnosis {
    /// One JSON object: subject_id, predicted, r, n_patches and stage timings
    /// in seconds to 6 decimal places.
    pub fn to_json_line(&self) -> String {
        let t = &self.timings;
        format!(
            "{{\"subject_id\":{},\"predicted\":\"{}\",\"r\":{},\"n_patches\":{},\"length\":{},\
             \"timings\":{{\"loading\":{:.6},\"processing\":{:.6},\"model\":{:.6},\"total\":{:.6}}}}}",
            serde_json::Value::String(self.vote.subject_id.clone()),
            self.vote.predicted,
            self.vote.pd_fraction,
            self.vote.n_patches,
            self.sequence_length,
            t.loading,
            t.processing,
            t.model,
            t.total
        )
    }
}

/// Errors unless the configured window matches the one the checkpoint was
/// trained with.
pub fn check_window(cfg: &ModelConfig, seg: &SegmentationConfig) -> Result<()> {
    if cfg.window != seg.window {
        return Err(Error::Shape(format!(
            "checkpoint was built for window {}, configured window is {}",
            cfg.window, seg.window
        )));
    }
    Ok(())
}

/// load -> preprocess -> predict -> vote, timing each stage.
pub fn diagnose_sequence(
    path: &Path,
    format: SequenceFormat,
    params: &ModelParams,
    cfg: &ModelConfig,
    seg: &SegmentationConfig,
    alpha: f64,
) -> Result<Diagnosis> {
    check_window(cfg, seg)?;
    check_threshold(alpha)?;
    let start = Instant::now();
    let seq = load_sequence(path, format).map_err(|e| e.in_stage("loading"))?;
    let loaded = Instant::now();
    let patches = preprocess(&seq, seg).map_err(|e| e.in_stage("processing"))?;
    let processed = Instant::now();
    let preds = predict_patches(&patches, params, cfg).map_err(|e| e.in_stage("model"))?;
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let vote = majority_vote(&seq.subject_id, &labels, alpha).map_err(|e| e.in_stage("model"))?;
    let done = Instant::now();
    Ok(Diagnosis {
        vote,
        sequence_length: seq.len(),
        timings: StageTimings {
            loading: (loaded - start).as_secs_f64(),
            processing: (processed - loaded).as_secs_f64(),
            model: (done - processed).as_secs_f64(),
            total: (done - start).as_secs_f64(),
        },
    })
}

/// Patch-level predictions of one held-out subject, made by the model of
/// the fold that excluded it.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPredictions {
    pub subject_id: String,
    pub label: Label,
    pub fold: usize,
    pub patch_labels: Vec<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubjectOutcome {
    pub fold: usize,
    pub label: Label,
    pub vote: VoteResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub alpha: f64,
    pub metrics: MetricBlock,
    pub subjects: Vec<SubjectOutcome>,
}

impl Evaluation {
    pub fn confusion(&self) -> ConfusionMatrix {
        self.metrics.confusion
    }

    pub fn predicted_pd(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.vote.predicted == Label::Pd)
            .count()
    }
}

/// Runs every subject through the model of the fold whose test set holds it.
pub fn predict_held_out(
    data: &[SubjectPatches],
    models: &[ModelParams],
    cfg: &ModelConfig,
    splits: &[FoldSplit],
) -> Result<Vec<SubjectPredictions>> {
    if models.len() != splits.len() {
        return Err(Error::Protocol(format!(
            "{} fold models for {} splits",
            models.len(),
            splits.len()
        )));
    }
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    for s in splits {
        for id in &s.test_subjects {
            if let Some(prev) = fold_of.insert(id.as_str(), s.fold_index) {
                return Err(Error::Protocol(format!(
                    "subject {id} is in the test sets of folds {prev} and {}",
                    s.fold_index
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(data.len());
    for subject in data {
        let fold = *fold_of.get(subject.subject_id.as_str()).ok_or_else(|| {
            Error::Protocol(format!("subject {} is in no test fold", subject.subject_id))
        })?;
        let model_idx = splits
            .iter()
            .position(|s| s.fold_index == fold)
            .expect("fold index came from splits");
        let preds = predict_patches(&subject.patches, &models[model_idx], cfg)?;
        out.push(SubjectPredictions {
            subject_id: subject.subject_id.clone(),
            label: subject.label,
            fold,
            patch_labels: preds.into_iter().map(|p| p.label).collect(),
        });
    }
    Ok(out)
}

/// Votes each subject at `alpha` and accumulates sequence-level counts.
pub fn evaluate_predictions(preds: &[SubjectPredictions], alpha: f64) -> Result<Evaluation> {
    let mut cm = ConfusionMatrix::default();
    let mut subjects = Vec::with_capacity(preds.len());
    for p in preds {
        let vote = majority_vote(&p.subject_id, &p.patch_labels, alpha)?;
        cm.record(p.label, vote.predicted);
        subjects.push(SubjectOutcome {
            fold: p.fold,
            label: p.label,
            vote,
        });
    }
    Ok(Evaluation {
        alpha,
        metrics: MetricBlock::from_confusion(&cm),
        subjects,
    })
}

/// Cross-validated sequence-level evaluation.
pub fn evaluate_dataset(
    data: &[SubjectPatches],
    models: &[ModelParams],
    cfg: &ModelConfig,
    splits: &[FoldSplit],
    alpha: f64,
) -> Result<Evaluation> {
    check_threshold(alpha)?;
    let preds = predict_held_out(data, models, cfg, splits)?;
    evaluate_predictions(&preds, alpha)
}
