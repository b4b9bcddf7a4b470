#![allow(dead_code)]

use lcnn::model::{batch_loss, forward, init_params, ModelConfig, ModelParams, Mode};
use lcnn::numkit::{Matrix, Rng};
use lcnn::signal::Label;

/// Draws a small random architecture whose layer lengths are all valid.
pub fn random_tiny_config(rng: &mut Rng) -> ModelConfig {
    loop {
        let cfg = ModelConfig {
            input_dim: 5,
            window: 4 + rng.below(13),
            lstm_hidden: 2 + rng.below(7),
            conv1_filters: 1 + rng.below(4),
            conv2_filters: 1 + rng.below(4),
            kernel: 1 + rng.below(3),
            conv_stride: 1 + rng.below(2),
            pool_kernel: 1 + rng.below(2),
            pool_stride: 1 + rng.below(2),
            dropout_p: if rng.below(2) == 0 { 0.0 } else { 0.5 },
            num_classes: 2,
            concat: rng.below(4) != 0,
        };
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

pub fn random_inputs(rng: &mut Rng, cfg: &ModelConfig, batch: usize) -> Vec<Matrix> {
    (0..batch)
        .map(|_| {
            let n = cfg.window * cfg.input_dim;
            Matrix::from_vec(cfg.window, cfg.input_dim, rng.uniform(-1.0, 1.0, n).unwrap()).unwrap()
        })
        .collect()
}

/// Loss with the dropout mask pinned by `mask_seed`.
fn loss_at(p: &ModelParams, cfg: &ModelConfig, xs: &[&Matrix], targets: &[Label], mask_seed: u64) -> f64 {
    let out = forward(p, cfg, xs, Mode::Training(&mut Rng::new(mask_seed))).unwrap();
    batch_loss(&out.probs, targets)
}

/// Central finite differences (independent of the backward pass) compared
/// with the analytic gradient. Returns the worst relative error, using
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(seed: u64, eps: f64) -> (f64, ModelConfig) {
    let mut rng = Rng::new(seed);
    let cfg = random_tiny_config(&mut rng);
    let mut params = init_params(&cfg, &mut rng).unwrap();
    // move biases off zero so every path is exercised
    for t in params.tensors_mut() {
        for v in t.as_mut_slice() {
            if *v == 0.0 {
                *v = rng.uniform_one(-0.3, 0.3);
            }
        }
    }
    let batch = 1 + rng.below(3);
    let xs = random_inputs(&mut rng, &cfg, batch);
    let refs: Vec<&Matrix> = xs.iter().collect();
    let targets: Vec<Label> = (0..batch).map(|_| Label::from_index(rng.below(2)).unwrap()).collect();
    let mask_seed = rng.next_u64();

    let out = forward(&params, &cfg, &refs, Mode::Training(&mut Rng::new(mask_seed))).unwrap();
    let grads = out.backward(&params, &cfg, &targets).unwrap();

    let mut worst = 0.0f64;
    for ti in 0..9 {
        let n = params.tensors()[ti].len();
        for i in 0..n {
            let orig = params.tensors()[ti].as_slice()[i];
            params.tensors_mut()[ti].as_mut_slice()[i] = orig + eps;
            let up = loss_at(&params, &cfg, &refs, &targets, mask_seed);
            params.tensors_mut()[ti].as_mut_slice()[i] = orig - eps;
            let down = loss_at(&params, &cfg, &refs, &targets, mask_seed);
            params.tensors_mut()[ti].as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti].as_slice()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    (worst, cfg)
}
