//! The hybrid LSTM + 1D-CNN patch classifier.
//!
//! ```text
//! patch (w x 5)
//!   -> LSTM, h units, hidden state at every step       (w x h)
//!   -> concat [input | hidden]                         (w x (5+h))
//!   -> conv1d(16, k=3, s=2) + ReLU -> maxpool(2, 2)
//!   -> conv1d(32, k=3, s=2) + ReLU -> maxpool(2, 2)
//!   -> flatten -> dropout(0.5, training only) -> dense(2) -> softmax
//! ```
//!
//! Class index 0 is HC, 1 is PD. LSTM gate blocks are ordered `i, f, g, o`.
//! Dropout is inverted (kept units scaled by `1/(1-p)`) so inference needs
//! no rescaling.

pub mod checkpoint;
pub mod complexity;
pub mod layers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gemm, Matrix, Rng};
use crate::signal::{Label, Patch, FEATURES};

use self::layers::{
    conv1d_backward, conv1d_forward, conv_out_len, lstm_backward_batch, lstm_forward_batch,
    maxpool1d_backward, maxpool1d_forward, softmax_rows, LstmTrace,
};

pub use self::checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, serialized_scalar_count,
};
pub use self::complexity::{
    complexity_report, count_flops, count_params, FlopReport, LayerFlops, ParamReport,
    REFERENCE_FLOPS_K, REFERENCE_PARAMS_K,
};
pub use self::layers::{concat_skip, conv1d_forward as conv1d, lstm_forward, maxpool1d_forward as maxpool1d};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub window: usize,
    pub lstm_hidden: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub conv_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
    /// Concatenate the raw input with the LSTM features before the conv
    /// stack. When off, conv1 sees the LSTM features alone.
    pub concat: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: FEATURES,
            window: 128,
            lstm_hidden: 128,
            conv1_filters: 16,
            conv2_filters: 32,
            kernel: 3,
            conv_stride: 2,
            pool_kernel: 2,
            pool_stride: 2,
            dropout_p: 0.5,
            num_classes: 2,
            concat: true,
        }
    }
}

/// Derived tensor lengths through the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub conv_in: usize,
    pub conv1_len: usize,
    pub pool1_len: usize,
    pub conv2_len: usize,
    pub pool2_len: usize,
    pub flattened: usize,
}

impl ModelConfig {
    pub fn with_window(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub fn conv_in_channels(&self) -> usize {
        if self.concat {
            self.input_dim + self.lstm_hidden
        } else {
            self.lstm_hidden
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let dims = [
            ("input_dim", self.input_dim),
            ("window", self.window),
            ("lstm_hidden", self.lstm_hidden),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("kernel", self.kernel),
            ("conv_stride", self.conv_stride),
            ("pool_kernel", self.pool_kernel),
            ("pool_stride", self.pool_stride),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("model dimension {name} must be positive")));
        }
        if self.num_classes != 2 {
            return Err(Error::Param(format!(
                "num_classes must be 2 (HC/PD), got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Param(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        let stage = |name: &str, len: Option<usize>| {
            len.ok_or_else(|| {
                Error::Param(format!("window {} too short: {name} length < 1", self.window))
            })
        };
        let conv1_len = stage("conv1", conv_out_len(self.window, self.kernel, self.conv_stride))?;
        let pool1_len = stage("pool1", conv_out_len(conv1_len, self.pool_kernel, self.pool_stride))?;
        let conv2_len = stage("conv2", conv_out_len(pool1_len, self.kernel, self.conv_stride))?;
        let pool2_len = stage("pool2", conv_out_len(conv2_len, self.pool_kernel, self.pool_stride))?;
        Ok(Geometry {
            conv_in: self.conv_in_channels(),
            conv1_len,
            pool1_len,
            conv2_len,
            pool2_len,
            flattened: pool2_len * self.conv2_filters,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().map(|_| ())
    }
}

/// LSTM weights: `w` is `4h x d`, `u` is `4h x h`, `b` is `1 x 4h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(1, 4 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.cols()
    }
}

/// Conv weights stored `out x (k * in)`: column `j * in + c` is tap `j` of
/// input channel `c`. Logically `out x k x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Matrix,
    pub bias: Matrix,
    pub in_channels: usize,
    pub kernel_size: usize,
}

impl ConvParams {
    pub fn zeros(out: usize, input: usize, kernel_size: usize) -> Self {
        Self {
            kernel: Matrix::zeros(out, kernel_size * input),
            bias: Matrix::zeros(1, out),
            in_channels: input,
            kernel_size,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.rows()
    }

    /// Weight of output channel `o`, input channel `c`, tap `j`.
    pub fn weight(&self, o: usize, c: usize, j: usize) -> f64 {
        self.kernel[(o, j * self.in_channels + c)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Matrix,
}

/// All trainable tensors. Also used, with identical shapes, for gradients
/// and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub lstm: LstmParams,
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub dense: DenseParams,
}

/// Name and logical dimensions of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub dims: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let g = cfg.geometry()?;
        Ok(Self {
            lstm: LstmParams::zeros(cfg.input_dim, cfg.lstm_hidden),
            conv1: ConvParams::zeros(cfg.conv1_filters, g.conv_in, cfg.kernel),
            conv2: ConvParams::zeros(cfg.conv2_filters, cfg.conv1_filters, cfg.kernel),
            dense: DenseParams {
                w: Matrix::zeros(cfg.num_classes, g.flattened),
                b: Matrix::zeros(1, cfg.num_classes),
            },
        })
    }

    /// Tensor table in declaration (and checkpoint) order.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let conv_dims = |c: &ConvParams| vec![c.out_channels(), c.kernel_size, c.in_channels];
        vec![
            TensorInfo { name: "lstm.w", dims: vec![self.lstm.w.rows(), self.lstm.w.cols()] },
            TensorInfo { name: "lstm.u", dims: vec![self.lstm.u.rows(), self.lstm.u.cols()] },
            TensorInfo { name: "lstm.b", dims: vec![self.lstm.b.cols()] },
            TensorInfo { name: "conv1.kernel", dims: conv_dims(&self.conv1) },
            TensorInfo { name: "conv1.bias", dims: vec![self.conv1.bias.cols()] },
            TensorInfo { name: "conv2.kernel", dims: conv_dims(&self.conv2) },
            TensorInfo { name: "conv2.bias", dims: vec![self.conv2.bias.cols()] },
            TensorInfo { name: "dense.w", dims: vec![self.dense.w.rows(), self.dense.w.cols()] },
            TensorInfo { name: "dense.b", dims: vec![self.dense.b.cols()] },
        ]
    }

    pub fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.lstm.w,
            &self.lstm.u,
            &self.lstm.b,
            &self.conv1.kernel,
            &self.conv1.bias,
            &self.conv2.kernel,
            &self.conv2.bias,
            &self.dense.w,
            &self.dense.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.lstm.w,
            &mut self.lstm.u,
            &mut self.lstm.b,
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.dense.w,
            &mut self.dense.b,
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Checks that every tensor matches the shapes `cfg` implies.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelParams::zeros(cfg)?.layout();
        let have = self.layout();
        for (w, h) in want.iter().zip(&have) {
            if w != h {
                return Err(Error::Shape(format!(
                    "parameter {} has dims {:?}, config implies {:?}",
                    h.name, h.dims, w.dims
                )));
            }
        }
        Ok(())
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, LSTM forget-gate bias 1.
///
/// Fan-in: `d` for the LSTM input weights, `h` for the recurrent weights,
/// `in * k` for convolutions and the flattened width for the dense layer.
/// Tensors are drawn in declaration order from one stream.
pub fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(cfg)?;
    let fill = |m: &mut Matrix, fan_in: usize, rng: &mut Rng| {
        let a = 1.0 / (fan_in as f64).sqrt();
        for v in m.as_mut_slice() {
            *v = rng.uniform_one(-a, a);
        }
    };
    let h = cfg.lstm_hidden;
    fill(&mut p.lstm.w, cfg.input_dim, rng);
    fill(&mut p.lstm.u, h, rng);
    p.lstm.b.as_mut_slice()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    let fan1 = p.conv1.in_channels * p.conv1.kernel_size;
    fill(&mut p.conv1.kernel, fan1, rng);
    let fan2 = p.conv2.in_channels * p.conv2.kernel_size;
    fill(&mut p.conv2.kernel, fan2, rng);
    let flat = p.dense.w.cols();
    fill(&mut p.dense.w, flat, rng);
    Ok(p)
}

/// Inference or training (dropout drawn from the given generator).
pub enum Mode<'a> {
    Inference,
    Training(&'a mut Rng),
}

struct SampleTrace {
    cat: Matrix,
    conv1: Matrix,
    pool1: Matrix,
    pool1_arg: Vec<usize>,
    conv2: Matrix,
    pool2_arg: Vec<usize>,
}

/// Everything the backward pass needs from a training-mode forward pass.
pub struct ForwardCache {
    x: Matrix,
    lstm: LstmTrace,
    samples: Vec<SampleTrace>,
    /// Post-dropout flattened features, `batch x F`.
    dropped: Matrix,
    /// Per-element dropout multiplier: 0 or `1/(1-p)`.
    mask: Matrix,
    probs: Matrix,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.samples.len()
    }

    pub fn dropout_mask(&self) -> &Matrix {
        &self.mask
    }
}

pub struct ForwardOutput {
    /// `batch x 2` class probabilities.
    pub probs: Matrix,
    pub cache: Option<ForwardCache>,
}

impl ForwardOutput {
    /// Backward pass from this output's cache.
    pub fn backward(
        &self,
        params: &ModelParams,
        cfg: &ModelConfig,
        targets: &[Label],
    ) -> Result<ModelParams> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Usage("backward needs the cache of a training-mode forward pass".into())
        })?;
        model_backward(cache, targets, params, cfg)
    }
}

/// Forward pass over a batch of `w x 5` inputs. A cache is kept only in
/// training mode.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &[&Matrix],
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let g = cfg.geometry()?;
    let batch = inputs.len();
    let (w, d) = (cfg.window, cfg.input_dim);
    if batch == 0 {
        return Ok(ForwardOutput {
            probs: Matrix::zeros(0, cfg.num_classes),
            cache: None,
        });
    }
    for (i, m) in inputs.iter().enumerate() {
        if m.shape() != (w, d) {
            return Err(Error::Shape(format!(
                "input {i} is {}x{}, model expects {w}x{d}",
                m.rows(),
                m.cols()
            )));
        }
    }
    let mut x = Matrix::zeros(w * batch, d);
    for t in 0..w {
        for (b, m) in inputs.iter().enumerate() {
            x.row_mut(t * batch + b).copy_from_slice(m.row(t));
        }
    }
    let lstm = lstm_forward_batch(&params.lstm, &x, w, batch)?;

    let training = matches!(mode, Mode::Training(_));
    let mut flat = Matrix::zeros(batch, g.flattened);
    let mut samples = Vec::with_capacity(if training { batch } else { 0 });
    for b in 0..batch {
        let mut cat = Matrix::zeros(w, g.conv_in);
        for t in 0..w {
            let row = cat.row_mut(t);
            let hrow = lstm.hidden.row(t * batch + b);
            if cfg.concat {
                row[..d].copy_from_slice(inputs[b].row(t));
                row[d..].copy_from_slice(hrow);
            } else {
                row.copy_from_slice(hrow);
            }
        }
        let conv1 = conv1d_forward(&cat, &params.conv1, cfg.conv_stride)?;
        let (pool1, pool1_arg) = maxpool1d_forward(&conv1, cfg.pool_kernel, cfg.pool_stride)?;
        let conv2 = conv1d_forward(&pool1, &params.conv2, cfg.conv_stride)?;
        let (pool2, pool2_arg) = maxpool1d_forward(&conv2, cfg.pool_kernel, cfg.pool_stride)?;
        flat.row_mut(b).copy_from_slice(pool2.as_slice());
        if training {
            samples.push(SampleTrace {
                cat,
                conv1,
                pool1,
                pool1_arg,
                conv2,
                pool2_arg,
            });
        }
    }

    let mut mask = Matrix::filled(batch, g.flattened, 1.0);
    if let Mode::Training(rng) = mode {
        if cfg.dropout_p > 0.0 {
            let keep = 1.0 / (1.0 - cfg.dropout_p);
            for (m, v) in mask.as_mut_slice().iter_mut().zip(flat.as_mut_slice()) {
                *m = if rng.next_f64() < cfg.dropout_p { 0.0 } else { keep };
                *v *= *m;
            }
        }
    }

    let mut logits = Matrix::zeros(batch, cfg.num_classes);
    gemm(1.0, flat.view(), params.dense.w.t(), 0.0, logits.view_mut())?;
    for r in 0..batch {
        for (l, b) in logits.row_mut(r).iter_mut().zip(params.dense.b.as_slice()) {
            *l += b;
        }
    }
    let probs = softmax_rows(&logits);
    let cache = training.then(|| ForwardCache {
        x,
        lstm,
        samples,
        dropped: flat,
        mask,
        probs: probs.clone(),
    });
    Ok(ForwardOutput { probs, cache })
}

/// Single-patch forward pass.
pub fn model_forward(
    patch: &Patch,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    forward(params, cfg, &[&patch.values], mode)
}

/// Exact gradients of the mean cross-entropy over the cached batch.
pub fn model_backward(
    cache: &ForwardCache,
    targets: &[Label],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ModelParams> {
    model_backward_weighted(cache, targets, None, params, cfg)
}

/// Gradients of `sum_b weight_b * CE_b / batch`; `None` means unit weights.
pub fn model_backward_weighted(
    cache: &ForwardCache,
    targets: &[Label],
    weights: Option<&[f64]>,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ModelParams> {
    let batch = cache.batch();
    if targets.len() != batch || weights.is_some_and(|w| w.len() != batch) {
        return Err(Error::Shape(format!(
            "{} targets / {} weights for a batch of {batch}",
            targets.len(),
            weights.map_or(batch, |w| w.len())
        )));
    }
    let g = cfg.geometry()?;
    let (w, d, h) = (cfg.window, cfg.input_dim, cfg.lstm_hidden);
    let mut grads = params.zeros_like();

    // softmax + cross-entropy: dL/dlogits = (p - onehot) / batch
    let mut d_logits = cache.probs.clone();
    for (b, t) in targets.iter().enumerate() {
        d_logits[(b, t.index())] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    for b in 0..batch {
        let scale = inv * weights.map_or(1.0, |w| w[b]);
        d_logits.row_mut(b).iter_mut().for_each(|v| *v *= scale);
    }

    gemm(1.0, d_logits.t(), cache.dropped.view(), 0.0, grads.dense.w.view_mut())?;
    for r in 0..batch {
        for (acc, v) in grads.dense.b.as_mut_slice().iter_mut().zip(d_logits.row(r)) {
            *acc += v;
        }
    }
    let mut d_flat = Matrix::zeros(batch, g.flattened);
    gemm(1.0, d_logits.view(), params.dense.w.view(), 0.0, d_flat.view_mut())?;
    for (v, m) in d_flat.as_mut_slice().iter_mut().zip(cache.mask.as_slice()) {
        *v *= m;
    }

    let mut d_hidden = Matrix::zeros(w * batch, h);
    for (b, s) in cache.samples.iter().enumerate() {
        let d_pool2 = Matrix::from_vec(g.pool2_len, cfg.conv2_filters, d_flat.row(b).to_vec())?;
        let d_conv2 = maxpool1d_backward(&d_pool2, &s.pool2_arg, g.conv2_len);
        let d_pool1 = conv1d_backward(
            &s.pool1,
            &params.conv2,
            cfg.conv_stride,
            &s.conv2,
            &d_conv2,
            &mut grads.conv2,
            true,
        )?
        .expect("requested input gradient");
        let d_conv1 = maxpool1d_backward(&d_pool1, &s.pool1_arg, g.conv1_len);
        let d_cat = conv1d_backward(
            &s.cat,
            &params.conv1,
            cfg.conv_stride,
            &s.conv1,
            &d_conv1,
            &mut grads.conv1,
            true,
        )?
        .expect("requested input gradient");
        let skip = if cfg.concat { d } else { 0 };
        for t in 0..w {
            d_hidden
                .row_mut(t * batch + b)
                .copy_from_slice(&d_cat.row(t)[skip..]);
        }
    }
    grads.lstm = lstm_backward_batch(&params.lstm, &cache.x, &cache.lstm, &d_hidden)?;
    Ok(grads)
}

/// Mean cross-entropy of a batch of probabilities.
pub fn batch_loss(probs: &Matrix, targets: &[Label]) -> f64 {
    let n = targets.len().max(1) as f64;
    targets
        .iter()
        .enumerate()
        .map(|(b, t)| -probs[(b, t.index())].max(1e-12).ln())
        .sum::<f64>()
        / n
}
