//! Closed-form parameter and FLOP accounting for a [`ModelConfig`].

use std::fmt;

use serde::Serialize;

use crate::error::Result;

use super::ModelConfig;

/// Published reference totals for the default architecture, in thousands.
pub const REFERENCE_PARAMS_K: f64 = 83.89;
pub const REFERENCE_FLOPS_K: f64 = 590.21;

const DELTA_NOTE: &str = "pooling window/stride (2/2 here) and the output-head width \
(2 logits here) are not published, so the reference totals are not derivable from the \
stated layers; the layer formulas above are exact for this configuration";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub lstm: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub dense: usize,
    pub total: usize,
}

/// `lstm = 4(h(d+h)+h)`, `conv = out*in*k + out`, `dense = classes*F + classes`.
pub fn count_params(cfg: &ModelConfig) -> Result<ParamReport> {
    let g = cfg.geometry()?;
    let (d, h) = (cfg.input_dim, cfg.lstm_hidden);
    let lstm = 4 * (h * (d + h) + h);
    let conv1 = cfg.conv1_filters * g.conv_in * cfg.kernel + cfg.conv1_filters;
    let conv2 = cfg.conv2_filters * cfg.conv1_filters * cfg.kernel + cfg.conv2_filters;
    let dense = cfg.num_classes * g.flattened + cfg.num_classes;
    Ok(ParamReport {
        lstm,
        conv1,
        conv2,
        dense,
        total: lstm + conv1 + conv2 + dense,
    })
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameters (closed form)")?;
        for (name, v) in [
            ("lstm", self.lstm),
            ("conv1", self.conv1),
            ("conv2", self.conv2),
            ("dense", self.dense),
        ] {
            writeln!(f, "  {name:<6} {v:>9}")?;
        }
        let k = self.total as f64 / 1000.0;
        writeln!(f, "  {:<6} {:>9}  ({k:.2}K)", "total", self.total)?;
        writeln!(
            f,
            "  paper: {REFERENCE_PARAMS_K:.2}K  delta: {:+.2}K",
            k - REFERENCE_PARAMS_K
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerFlops {
    pub layer: &'static str,
    pub macs: u64,
    /// Non-MAC elementwise work (activations, gate products, bias adds,
    /// pooling compares, softmax), one FLOP each.
    pub elementwise: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub convention: &'static str,
    pub layers: Vec<LayerFlops>,
    pub total_macs: u64,
    /// `2 * total_macs`.
    pub headline_flops: u64,
    /// Headline plus elementwise work.
    pub extended_flops: u64,
    pub lstm_step_macs: u64,
    pub lstm_step_flops: u64,
}

const CONVENTION: &str = "per patch, MAC = 2 FLOPs; headline excludes activations and \
pooling; extended adds elementwise ops at 1 FLOP each; LSTM unrolled over all w steps";

/// FLOPs for one patch under [`CONVENTION`].
pub fn count_flops(cfg: &ModelConfig) -> Result<FlopReport> {
    let g = cfg.geometry()?;
    let (w, d, h) = (cfg.window as u64, cfg.input_dim as u64, cfg.lstm_hidden as u64);
    let k = cfg.kernel as u64;
    let (o1, o2) = (cfg.conv1_filters as u64, cfg.conv2_filters as u64);
    let pk = cfg.pool_kernel as u64;
    let classes = cfg.num_classes as u64;

    let lstm_step_macs = 4 * h * (d + h);
    // bias 4h, activations 4h, c = f*c + i*g (3h), tanh(c) h, o*tanh(c) h
    let lstm_step_elem = 4 * h + 4 * h + 3 * h + h + h;
    let conv1_macs = g.conv1_len as u64 * o1 * g.conv_in as u64 * k;
    let conv2_macs = g.conv2_len as u64 * o2 * o1 * k;
    let dense_macs = g.flattened as u64 * classes;

    let layers = vec![
        LayerFlops {
            layer: "lstm",
            macs: w * lstm_step_macs,
            elementwise: w * lstm_step_elem,
        },
        LayerFlops {
            layer: "conv1",
            macs: conv1_macs,
            elementwise: 2 * g.conv1_len as u64 * o1,
        },
        LayerFlops {
            layer: "pool1",
            macs: 0,
            elementwise: g.pool1_len as u64 * o1 * (pk - 1),
        },
        LayerFlops {
            layer: "conv2",
            macs: conv2_macs,
            elementwise: 2 * g.conv2_len as u64 * o2,
        },
        LayerFlops {
            layer: "pool2",
            macs: 0,
            elementwise: g.pool2_len as u64 * o2 * (pk - 1),
        },
        LayerFlops {
            layer: "dense",
            macs: dense_macs,
            // bias adds, then exp / sum / divide for softmax
            elementwise: classes + 3 * classes,
        },
    ];
    let total_macs: u64 = layers.iter().map(|l| l.macs).sum();
    let elem: u64 = layers.iter().map(|l| l.elementwise).sum();
    Ok(FlopReport {
        convention: CONVENTION,
        total_macs,
        headline_flops: 2 * total_macs,
        extended_flops: 2 * total_macs + elem,
        lstm_step_macs,
        lstm_step_flops: 2 * lstm_step_macs + lstm_step_elem,
        layers,
    })
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "flops ({})", self.convention)?;
        for l in &self.layers {
            writeln!(
                f,
                "  {:<6} macs {:>10}  flops {:>10}  elementwise {:>8}",
                l.layer,
                l.macs,
                2 * l.macs,
                l.elementwise
            )?;
        }
        let kf = |v: u64| v as f64 / 1000.0;
        writeln!(
            f,
            "  headline {:.2}K FLOPs ({} MACs)",
            kf(self.headline_flops),
            self.total_macs
        )?;
        writeln!(f, "  extended {:.2}K FLOPs", kf(self.extended_flops))?;
        writeln!(
            f,
            "  lstm per timestep {} MACs, {:.2}K FLOPs",
            self.lstm_step_macs,
            kf(self.lstm_step_flops)
        )?;
        writeln!(f, "  paper: {REFERENCE_FLOPS_K:.2}K")
    }
}

/// Combined human-readable report with the delta explanation.
pub fn complexity_report(cfg: &ModelConfig) -> Result<String> {
    let p = count_params(cfg)?;
    let fl = count_flops(cfg)?;
    Ok(format!("{p}{fl}note: {DELTA_NOTE}\n"))
}
