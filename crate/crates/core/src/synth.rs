//! Synthetic spiral recordings: smooth Archimedean spirals for HC subjects,
//! spirals with a radial 4-6 Hz tremor for PD subjects.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::signal::{write_manifest, write_sequence, Label, ManifestRow, RawSequence};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TASK: &str = "spiral";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects_per_class: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Seconds.
    pub duration: f64,
    /// mm per turn.
    pub pitch: f64,
    /// Pen speed along the curve, mm/s.
    pub speed: f64,
    /// Hz; each subject draws its tremor frequency uniformly from this range.
    pub tremor_freq: (f64, f64),
    /// Radial tremor amplitude in mm.
    pub pd_tremor_amp: f64,
    pub hc_tremor_amp: f64,
    /// Pressure ripple per mm of tremor, so pressure variance follows the
    /// class tremor amplitude.
    pub pressure_tremor_gain: f64,
    /// Pen tilt oscillation per mm of tremor, degrees (azimuth; altitude
    /// gets half).
    pub tilt_tremor_gain: f64,
    /// Gaussian jitter on x and y, mm.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects_per_class: 15,
            sample_rate: 200.0,
            duration: 20.0,
            pitch: 3.0,
            speed: 10.0,
            tremor_freq: (4.0, 6.0),
            pd_tremor_amp: 0.4,
            hc_tremor_amp: 0.0,
            pressure_tremor_gain: 0.05,
            tilt_tremor_gain: 10.0,
            noise_sd: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate),
            ("duration", self.duration),
            ("pitch", self.pitch),
            ("speed", self.speed),
            ("tremor_freq low", self.tremor_freq.0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subjects_per_class == 0 {
            return Err(Error::Param("need at least one subject per class".into()));
        }
        if !(self.tremor_freq.0 <= self.tremor_freq.1) || !self.tremor_freq.1.is_finite() {
            return Err(Error::Param(format!("bad tremor frequency range {:?}", self.tremor_freq)));
        }
        let non_negative = [
            ("pd_tremor_amp", self.pd_tremor_amp),
            ("hc_tremor_amp", self.hc_tremor_amp),
            ("pressure_tremor_gain", self.pressure_tremor_gain),
            ("tilt_tremor_gain", self.tilt_tremor_gain),
            ("noise_sd", self.noise_sd),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.len() < 2 {
            return Err(Error::Param("duration * sample_rate gives fewer than 2 points".into()));
        }
        Ok(())
    }

    /// Points per sequence.
    pub fn len(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn tremor_amp(&self, label: Label) -> f64 {
        match label {
            Label::Pd => self.pd_tremor_amp,
            Label::Hc => self.hc_tremor_amp,
        }
    }

    /// Both classes share one tremor amplitude, so nothing separates them.
    pub fn null_control(&self) -> Self {
        Self {
            hc_tremor_amp: self.pd_tremor_amp,
            ..self.clone()
        }
    }
}

/// One spiral recording. Angle follows `theta(t) = sqrt(theta0^2 + 2 v t / b)`,
/// which keeps the pen speed close to `v` on `r = b theta`.
pub fn generate_spiral_sequence(
    label: Label,
    subject_id: &str,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Result<RawSequence> {
    cfg.validate()?;
    let n = cfg.len();
    let b = cfg.pitch / std::f64::consts::TAU;
    let tau = std::f64::consts::TAU;

    let theta0 = rng.uniform_one(1.0, 2.0);
    let rotation = rng.uniform_one(0.0, tau);
    let speed = cfg.speed * rng.uniform_one(0.9, 1.1);
    let (cx, cy) = (rng.uniform_one(80.0, 120.0), rng.uniform_one(80.0, 120.0));
    let amp = cfg.tremor_amp(label);
    let freq = if cfg.tremor_freq.0 < cfg.tremor_freq.1 {
        rng.uniform_one(cfg.tremor_freq.0, cfg.tremor_freq.1)
    } else {
        cfg.tremor_freq.0
    };
    let phase = rng.uniform_one(0.0, tau);
    let az_base = rng.uniform_one(40.0, 60.0);
    let az_phase = rng.uniform_one(0.0, tau);
    let alt_base = rng.uniform_one(50.0, 65.0);
    let alt_phase = rng.uniform_one(0.0, tau);
    let peak = rng.uniform_one(0.6, 0.9);
    let ripple = cfg.pressure_tremor_gain * amp;
    let tilt = cfg.tilt_tremor_gain * amp;

    let mut seq = RawSequence {
        subject_id: subject_id.to_string(),
        label: Some(label),
        task: TASK.to_string(),
        t: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        azimuth: Vec::with_capacity(n),
        altitude: Vec::with_capacity(n),
        pressure: Vec::with_capacity(n),
        button: None,
    };
    for i in 0..n {
        let t = i as f64 / cfg.sample_rate;
        let frac = t / cfg.duration;
        let theta = (theta0 * theta0 + 2.0 * speed * t / b).sqrt();
        let tremor = amp * (tau * freq * t + phase).sin();
        let r = b * theta + tremor;
        let angle = theta + rotation;
        seq.t.push(t);
        seq.x.push(cx + r * angle.cos() + cfg.noise_sd * rng.normal());
        seq.y.push(cy + r * angle.sin() + cfg.noise_sd * rng.normal());
        let wave = (tau * freq * t + phase).sin();
        seq.azimuth.push(az_base + 8.0 * (tau * 0.05 * t + az_phase).sin() + tilt * wave);
        seq.altitude.push(alt_base + 4.0 * (tau * 0.03 * t + alt_phase).sin() + 0.5 * tilt * wave);
        let bump = peak * (std::f64::consts::PI * frac).sin().powf(0.3);
        let wobble = ripple * (tau * freq * t + phase + 0.5).sin();
        seq.pressure.push((bump + wobble + 0.005 * rng.normal()).max(0.0));
    }
    Ok(seq)
}

/// `PD001`.., `HC001`.. with subject `k` of class `c` drawn from its own
/// child stream, so one subject's data never depends on another's.
pub fn subject_ids(cfg: &SynthConfig) -> Vec<(String, Label)> {
    Label::ALL
        .iter()
        .rev()
        .flat_map(|&l| (1..=cfg.n_subjects_per_class).map(move |k| (format!("{l}{k:03}"), l)))
        .collect()
}

/// Writes one `.dwt` file per subject plus `manifest.csv` (relative paths)
/// into `out_dir`, returning the manifest path.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for (stream, (id, label)) in subject_ids(cfg).into_iter().enumerate() {
        let mut rng = Rng::with_stream(cfg.seed, stream as u64);
        let seq = generate_spiral_sequence(label, &id, cfg, &mut rng)?;
        let file = format!("{id}.dwt");
        write_sequence(&seq, &out_dir.join(&file))?;
        rows.push(ManifestRow {
            subject_id: id,
            label,
            task: TASK.to_string(),
            path: PathBuf::from(file),
        });
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&rows, &manifest)?;
    Ok(manifest)
}
