//! Pen-recording ingestion and the preprocessing chain that turns a raw
//! recording into fixed-width model patches:
//!
//! 1. per-sequence, per-channel min-max normalization of x, y, azimuth,
//!    altitude and pressure;
//! 2. first-order forward difference of the selected channels, with a
//!    trailing zero so every channel keeps length `L`;
//! 3. sliding-window segmentation into `w`-point patches at stride `s`.
//!
//! Timestamps and button status are read and validated but never reach the
//! model.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Number of model input channels.
pub const FEATURES: usize = 5;

/// Feature column order inside [`ChannelSet`] and [`Patch`].
pub const FEATURE_NAMES: [&str; FEATURES] = ["x", "y", "azimuth", "altitude", "pressure"];

const RANGE_GUARD: f64 = 1e-12;

/// Diagnostic class. Index 0 is HC, index 1 is PD (the positive class).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "PD")]
    Pd,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hc, Label::Pd];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Hc => 0,
            Label::Pd => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Hc),
            1 => Some(Label::Pd),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Hc => Label::Pd,
            Label::Pd => Label::Hc,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hc => "HC",
            Label::Pd => "PD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PD" | "pd" => Ok(Label::Pd),
            "HC" | "hc" => Ok(Label::Hc),
            other => Err(Error::Data(format!("unknown label {other:?}, expected PD or HC"))),
        }
    }
}

/// One subject's recording of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub subject_id: String,
    /// Unknown for formats that do not carry a diagnosis (svc) until a
    /// manifest supplies one.
    pub label: Option<Label>,
    pub task: String,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub altitude: Vec<f64>,
    pub pressure: Vec<f64>,
    pub button: Option<Vec<u8>>,
}

impl RawSequence {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// The five model channels in [`FEATURE_NAMES`] order.
    pub fn channels(&self) -> [&[f64]; FEATURES] {
        [&self.x, &self.y, &self.azimuth, &self.altitude, &self.pressure]
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; FEATURES] {
        [
            &mut self.x,
            &mut self.y,
            &mut self.azimuth,
            &mut self.altitude,
            &mut self.pressure,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 2 {
            return Err(Error::Data(format!(
                "sequence {} has {n} points, need at least 2",
                self.subject_id
            )));
        }
        for (name, ch) in FEATURE_NAMES.iter().zip(self.channels()) {
            if ch.len() != n {
                return Err(Error::Data(format!(
                    "sequence {}: channel {name} has {} points, timestamps have {n}",
                    self.subject_id,
                    ch.len()
                )));
            }
        }
        if let Some(b) = &self.button {
            if b.len() != n {
                return Err(Error::Data(format!(
                    "sequence {}: button status has {} points, expected {n}",
                    self.subject_id,
                    b.len()
                )));
            }
        }
        if let Some(i) = self.t.windows(2).position(|w| !(w[1] >= w[0])) {
            return Err(Error::Data(format!(
                "sequence {}: timestamps decrease at point {}",
                self.subject_id,
                i + 1
            )));
        }
        Ok(())
    }
}

/// Which channels receive the forward difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffMode {
    /// x and y together.
    #[default]
    Geometric,
    None,
    Azimuth,
    Altitude,
    Pressure,
}

impl DiffMode {
    pub const ALL: [DiffMode; 5] = [
        DiffMode::Geometric,
        DiffMode::None,
        DiffMode::Azimuth,
        DiffMode::Altitude,
        DiffMode::Pressure,
    ];

    /// Mask over [`FEATURE_NAMES`].
    pub fn selected(self) -> [bool; FEATURES] {
        match self {
            DiffMode::Geometric => [true, true, false, false, false],
            DiffMode::None => [false; FEATURES],
            DiffMode::Azimuth => [false, false, true, false, false],
            DiffMode::Altitude => [false, false, false, true, false],
            DiffMode::Pressure => [false, false, false, false, true],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiffMode::Geometric => "geometric",
            DiffMode::None => "none",
            DiffMode::Azimuth => "azimuth",
            DiffMode::Altitude => "altitude",
            DiffMode::Pressure => "pressure",
        }
    }
}

impl fmt::Display for DiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DiffMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown diff mode {s:?}")))
    }
}

/// Preprocessed, model-ready channels of one sequence: `L x 5`, row = time.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub subject_id: String,
    pub label: Option<Label>,
    pub features: Matrix,
}

impl ChannelSet {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Fixed-width window of a [`ChannelSet`]; `values` is `w x 5`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub offset: usize,
    pub values: Matrix,
    pub subject_id: String,
    pub label: Option<Label>,
}

impl Patch {
    pub fn window(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub window: usize,
    pub stride: usize,
    pub diff_mode: DiffMode,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            window: 128,
            stride: 64,
            diff_mode: DiffMode::Geometric,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Param(format!("window size must be >= 2, got {}", self.window)));
        }
        if self.stride < 1 {
            return Err(Error::Param("stride size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rescales each model channel to `[0, 1]` over this sequence. A channel
/// whose range is below `1e-12` becomes all zeros.
pub fn min_max_normalize(seq: &RawSequence) -> Result<RawSequence> {
    seq.validate()?;
    let mut out = seq.clone();
    for (name, ch) in FEATURE_NAMES.iter().zip(out.channels_mut()) {
        if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "sequence {}: non-finite {name} value at point {i}",
                seq.subject_id
            )));
        }
        let (lo, hi) = ch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range < RANGE_GUARD {
            ch.iter_mut().for_each(|v| *v = 0.0);
        } else {
            ch.iter_mut().for_each(|v| *v = (*v - lo) / range);
        }
    }
    Ok(out)
}

/// Forward difference `c[i+1] - c[i]` on the channels chosen by `mode`, with
/// the last slot zero-padded. Other channels pass through unchanged.
pub fn forward_difference(seq: &RawSequence, mode: DiffMode) -> Result<ChannelSet> {
    seq.validate()?;
    let n = seq.len();
    let mask = mode.selected();
    let mut features = Matrix::zeros(n, FEATURES);
    for (j, ch) in seq.channels().into_iter().enumerate() {
        for i in 0..n {
            features[(i, j)] = if !mask[j] {
                ch[i]
            } else if i + 1 < n {
                ch[i + 1] - ch[i]
            } else {
                0.0
            };
        }
    }
    Ok(ChannelSet {
        subject_id: seq.subject_id.clone(),
        label: seq.label,
        features,
    })
}

/// Patch start offsets for a sequence of length `len`.
pub fn patch_offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len < window {
        return vec![0];
    }
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Cuts a channel set into `w`-point patches at stride `s`. A sequence
/// shorter than `w` yields one patch, zero-padded on the right.
pub fn segment(ch: &ChannelSet, cfg: &SegmentationConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    let n = ch.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "sequence {} has {n} points, need at least 2",
            ch.subject_id
        )));
    }
    let w = cfg.window;
    let src = ch.features.as_slice();
    let patches = patch_offsets(n, w, cfg.stride)
        .into_iter()
        .map(|offset| {
            let mut values = Matrix::zeros(w, FEATURES);
            let take = w.min(n - offset);
            values.as_mut_slice()[..take * FEATURES]
                .copy_from_slice(&src[offset * FEATURES..(offset + take) * FEATURES]);
            Patch {
                offset,
                values,
                subject_id: ch.subject_id.clone(),
                label: ch.label,
            }
        })
        .collect();
    Ok(patches)
}

/// normalize -> difference -> segment.
pub fn preprocess(seq: &RawSequence, cfg: &SegmentationConfig) -> Result<Vec<Patch>> {
    let normalized = min_max_normalize(seq)?;
    let channels = forward_difference(&normalized, cfg.diff_mode)?;
    segment(&channels, cfg)
}

/// On-disk recording formats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFormat {
    /// Point count, then `y x timestamp button azimuth altitude pressure`.
    Svc,
    /// Native text format with identity header.
    #[default]
    Dwt,
}

impl SequenceFormat {
    /// Guess from the file extension, defaulting to dwt.
    pub fn from_path(path: &Path) -> SequenceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("svc") => SequenceFormat::Svc,
            _ => SequenceFormat::Dwt,
        }
    }
}

impl FromStr for SequenceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svc" => Ok(SequenceFormat::Svc),
            "dwt" => Ok(SequenceFormat::Dwt),
            other => Err(Error::Usage(format!("unknown format {other:?}, expected svc or dwt"))),
        }
    }
}

pub fn load_sequence(path: &Path, format: SequenceFormat) -> Result<RawSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        SequenceFormat::Svc => {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("unknown")
                .to_string();
            parse_svc(&text, &stem)
        }
        SequenceFormat::Dwt => parse_dwt(&text),
    }
}

fn parse_real(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} value {tok:?}"),
    })
}

/// Parses an svc body. Svc files carry no identity, so the caller supplies
/// `subject_id`; the label stays unknown.
pub fn parse_svc(text: &str, subject_id: &str) -> Result<RawSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let count: usize = header.trim().parse().map_err(|_| Error::Parse {
        line: hl + 1,
        msg: format!("expected point count, got {:?}", header.trim()),
    })?;
    let mut seq = RawSequence {
        subject_id: subject_id.to_string(),
        label: None,
        task: "unknown".into(),
        t: Vec::with_capacity(count),
        x: Vec::with_capacity(count),
        y: Vec::with_capacity(count),
        azimuth: Vec::with_capacity(count),
        altitude: Vec::with_capacity(count),
        pressure: Vec::with_capacity(count),
        button: Some(Vec::with_capacity(count)),
    };
    let mut last_line = hl + 1;
    for (idx, line) in lines {
        let ln = idx + 1;
        last_line = ln;
        if seq.t.len() == count {
            return Err(Error::Parse {
                line: ln,
                msg: format!("header declares {count} points but more records follow"),
            });
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected 7 fields, found {}", toks.len()),
            });
        }
        seq.y.push(parse_real(toks[0], ln, "y")?);
        seq.x.push(parse_real(toks[1], ln, "x")?);
        seq.t.push(parse_real(toks[2], ln, "timestamp")?);
        let button = parse_real(toks[3], ln, "button")?;
        if button != 0.0 && button != 1.0 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("button status must be 0 or 1, got {button}"),
            });
        }
        if let Some(b) = seq.button.as_mut() {
            b.push(button as u8);
        }
        seq.azimuth.push(parse_real(toks[4], ln, "azimuth")?);
        seq.altitude.push(parse_real(toks[5], ln, "altitude")?);
        seq.pressure.push(parse_real(toks[6], ln, "pressure")?);
    }
    if seq.t.len() != count {
        return Err(Error::Parse {
            line: last_line,
            msg: format!("header declares {count} points, found {}", seq.t.len()),
        });
    }
    seq.validate()?;
    Ok(seq)
}

const DWT_MAGIC: &str = "DWT1";
const DWT_COLUMNS: &str = "t x y azimuth altitude pressure";

pub fn parse_dwt(text: &str) -> Result<RawSequence> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let head: Vec<&str> = first.split_whitespace().collect();
    if head.len() != 4 || head[0] != DWT_MAGIC {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected \"{DWT_MAGIC} <subject_id> <PD|HC> <task>\", got {first:?}"),
        });
    }
    let label: Label = head[2].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad label {:?}", head[2]),
    })?;
    match lines.next() {
        Some((_, cols)) if cols.split_whitespace().collect::<Vec<_>>().join(" ") == DWT_COLUMNS => {}
        Some((_, cols)) => {
            return Err(Error::Parse {
                line: 2,
                msg: format!("expected column header {DWT_COLUMNS:?}, got {cols:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 2,
                msg: "missing column header".into(),
            })
        }
    }
    let mut seq = RawSequence {
        subject_id: head[1].to_string(),
        label: Some(label),
        task: head[3].to_string(),
        t: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        azimuth: Vec::new(),
        altitude: Vec::new(),
        pressure: Vec::new(),
        button: None,
    };
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0; 6];
        let mut n = 0;
        for tok in line.split_whitespace() {
            if n == 6 {
                return Err(Error::Parse {
                    line: ln,
                    msg: "more than 6 fields".into(),
                });
            }
            vals[n] = parse_real(tok, ln, "record")?;
            n += 1;
        }
        if n != 6 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected 6 fields, found {n}"),
            });
        }
        seq.t.push(vals[0]);
        seq.x.push(vals[1]);
        seq.y.push(vals[2]);
        seq.azimuth.push(vals[3]);
        seq.altitude.push(vals[4]);
        seq.pressure.push(vals[5]);
    }
    seq.validate()?;
    Ok(seq)
}

/// Serializes in dwt format. Reals use the shortest representation that
/// parses back to the same bits, so a load reproduces the sequence exactly.
pub fn format_dwt(seq: &RawSequence) -> Result<String> {
    seq.validate()?;
    let label = seq.label.ok_or_else(|| {
        Error::Data(format!("sequence {} has no label; dwt requires one", seq.subject_id))
    })?;
    for (what, s) in [("subject_id", &seq.subject_id), ("task", &seq.task)] {
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(Error::Data(format!("{what} {s:?} must be a non-empty token")));
        }
    }
    let mut out = String::with_capacity(seq.len() * 64);
    out.push_str(&format!("{DWT_MAGIC} {} {label} {}\n{DWT_COLUMNS}\n", seq.subject_id, seq.task));
    for i in 0..seq.len() {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            seq.t[i], seq.x[i], seq.y[i], seq.azimuth[i], seq.altitude[i], seq.pressure[i]
        ));
    }
    Ok(out)
}

pub fn write_sequence(seq: &RawSequence, path: &Path) -> Result<()> {
    let text = format_dwt(seq)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One row of the dataset manifest (`subject_id,label,task,path`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub label: Label,
    pub task: String,
    pub path: PathBuf,
}

/// Reads a manifest. Relative paths are resolved against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "label", "task", "path"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("manifest header must be subject_id,label,task,path, got {headers:?}"),
        });
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for rec in reader.deserialize::<ManifestRow>() {
        let mut row = rec?;
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("manifest {} has no rows", path.display())));
    }
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads the file named by a manifest row; the manifest's identity and label
/// are authoritative.
pub fn load_manifest_entry(row: &ManifestRow, format: SequenceFormat) -> Result<RawSequence> {
    let mut seq = load_sequence(&row.path, format)?;
    if let Some(label) = seq.label {
        if label != row.label {
            return Err(Error::Data(format!(
                "{}: file says {label}, manifest says {}",
                row.path.display(),
                row.label
            )));
        }
    }
    seq.subject_id = row.subject_id.clone();
    seq.label = Some(row.label);
    seq.task = row.task.clone();
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from(x: Vec<f64>) -> RawSequence {
        let n = x.len();
        RawSequence {
            subject_id: "s1".into(),
            label: Some(Label::Pd),
            task: "spiral".into(),
            t: (0..n).map(|i| i as f64 * 0.005).collect(),
            y: x.iter().map(|v| v * 2.0).collect(),
            azimuth: vec![1.0; n],
            altitude: (0..n).map(|i| i as f64).collect(),
            pressure: x.iter().map(|v| -v).collect(),
            x,
            button: None,
        }
    }

    #[test]
    fn normalize_definition_and_constant_channel() {
        let s = min_max_normalize(&seq_from(vec![2.0, 4.0, 6.0])).unwrap();
        assert_eq!(s.x, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.azimuth, vec![0.0, 0.0, 0.0]);
        assert_eq!(s.pressure, vec![1.0, 0.5, 0.0]);
        // timestamps untouched
        assert_eq!(s.t, vec![0.0, 0.005, 0.01]);
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let err = min_max_normalize(&seq_from(vec![1.0, f64::NAN, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn difference_geometric() {
        let mut s = seq_from(vec![0.2, 0.5, 0.9]);
        s.azimuth = vec![0.3, 0.3, 0.3];
        let ch = forward_difference(&s, DiffMode::Geometric).unwrap();
        let x = ch.features.column(0);
        let want = [0.3, 0.4, 0.0];
        for (a, b) in x.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{x:?}");
        }
        assert_eq!(ch.features.column(2), vec![0.3, 0.3, 0.3]);
        let ch = forward_difference(&s, DiffMode::Azimuth).unwrap();
        assert_eq!(ch.features.column(2), vec![0.0, 0.0, 0.0]);
        assert_eq!(ch.features.column(0), s.x);
    }

    #[test]
    fn difference_none_is_identity() {
        let s = seq_from(vec![0.1, 0.7, 0.3, 0.9]);
        let ch = forward_difference(&s, DiffMode::None).unwrap();
        for (j, c) in s.channels().into_iter().enumerate() {
            assert_eq!(ch.features.column(j), c.to_vec());
        }
    }

    #[test]
    fn segment_exact_fit_and_short() {
        let cfg = SegmentationConfig {
            window: 128,
            stride: 17,
            diff_mode: DiffMode::Geometric,
        };
        let ch = ChannelSet {
            subject_id: "a".into(),
            label: None,
            features: Matrix::filled(128, FEATURES, 0.25),
        };
        let p = segment(&ch, &cfg).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].values, ch.features);

        let ch = ChannelSet {
            features: Matrix::filled(100, FEATURES, 1.0),
            ..ch
        };
        let p = segment(&ch, &cfg).unwrap();
        assert_eq!(p.len(), 1);
        for r in 0..128 {
            let expect = if r < 100 { 1.0 } else { 0.0 };
            assert!(p[0].values.row(r).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn segment_offsets_500() {
        let cfg = SegmentationConfig::default();
        let ch = ChannelSet {
            subject_id: "a".into(),
            label: Some(Label::Hc),
            features: Matrix::from_fn(500, FEATURES, |r, c| (r * FEATURES + c) as f64),
        };
        let p = segment(&ch, &cfg).unwrap();
        let offs: Vec<usize> = p.iter().map(|p| p.offset).collect();
        assert_eq!(offs, vec![0, 64, 128, 192, 256, 320]);
        assert_eq!(p[2].values.row(0), ch.features.row(128));
        assert!(p.iter().all(|p| p.subject_id == "a" && p.label == Some(Label::Hc)));
    }

    #[test]
    fn segment_rejects_tiny_sequence() {
        let ch = ChannelSet {
            subject_id: "a".into(),
            label: None,
            features: Matrix::zeros(1, FEATURES),
        };
        assert!(segment(&ch, &SegmentationConfig::default()).is_err());
        let bad = SegmentationConfig {
            window: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn svc_three_lines() {
        let body = "3\n\
                    10 20 0.000 1 1.5 0.7 300\n\
                    11 21 0.005 1 1.6 0.8 310\n\
                    12 23 0.010 0 1.7 0.9 0\n";
        let s = parse_svc(body, "u01").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.y, vec![10.0, 11.0, 12.0]);
        assert_eq!(s.x, vec![20.0, 21.0, 23.0]);
        assert_eq!(s.t, vec![0.0, 0.005, 0.01]);
        assert_eq!(s.button, Some(vec![1, 1, 0]));
        assert_eq!(s.azimuth, vec![1.5, 1.6, 1.7]);
        assert_eq!(s.altitude, vec![0.7, 0.8, 0.9]);
        assert_eq!(s.pressure, vec![300.0, 310.0, 0.0]);
        assert_eq!(s.subject_id, "u01");
        assert_eq!(s.label, None);
    }

    #[test]
    fn svc_count_mismatch() {
        let short = "4\n1 2 0 1 0 0 0\n1 2 1 1 0 0 0\n";
        assert!(matches!(parse_svc(short, "a"), Err(Error::Parse { .. })));
        let long = "1\n1 2 0 1 0 0 0\n1 2 1 1 0 0 0\n";
        assert!(matches!(parse_svc(long, "a"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn svc_bad_field_reports_line() {
        let body = "2\n1 2 0 1 0 0 0\n1 2 x 1 0 0 0\n";
        match parse_svc(body, "a") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_short_is_data_error() {
        let body = "1\n1 2 0 1 0 0 0\n";
        assert!(matches!(parse_svc(body, "a"), Err(Error::Data(_))));
    }

    #[test]
    fn dwt_round_trip() {
        let mut s = seq_from(vec![0.1, 1.0 / 3.0, 2.5e-7, 12345.678901234]);
        s.task = "spiral".into();
        let text = format_dwt(&s).unwrap();
        assert_eq!(parse_dwt(&text).unwrap(), s);
    }

    #[test]
    fn dwt_rejects_bad_header() {
        assert!(parse_dwt("DWT2 a PD spiral\nt x y azimuth altitude pressure\n").is_err());
        assert!(parse_dwt("DWT1 a XX spiral\nt x y azimuth altitude pressure\n").is_err());
        assert!(parse_dwt("DWT1 a PD spiral\nt y x azimuth altitude pressure\n").is_err());
    }

    #[test]
    fn pipeline_differencing_sees_unit_range() {
        let raw = seq_from(vec![100.0, 250.0, 175.0, 400.0, 90.0]);
        let normalized = min_max_normalize(&raw).unwrap();
        for ch in normalized.channels() {
            assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let cfg = SegmentationConfig {
            window: 4,
            stride: 1,
            diff_mode: DiffMode::Geometric,
        };
        let patches = preprocess(&raw, &cfg).unwrap();
        assert_eq!(patches.len(), 2);
        // differences of [0,1]-valued inputs are bounded by 1 in magnitude
        for p in &patches {
            assert!(p.values.as_slice().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn label_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
    }
}
