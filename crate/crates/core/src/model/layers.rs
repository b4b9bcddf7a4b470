//! Layer kernels: batched LSTM with BPTT, valid 1D convolution + ReLU,
//! 1D max pooling and the skip concatenation.
//!
//! Sequences are laid out time-major in batched buffers: row `t * batch + b`
//! holds timestep `t` of sample `b`. Per-sample tensors are `length x
//! channels`, row = position.

use crate::error::{Error, Result};
use crate::numkit::{gemm, MatMut, MatRef, Matrix};

use super::{ConvParams, LstmParams};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activated gates, cell states and hidden states of a batched LSTM pass.
#[derive(Clone, Debug)]
pub(crate) struct LstmTrace {
    pub steps: usize,
    pub batch: usize,
    /// `(steps*batch) x 4h`, post-activation, gate blocks `[i | f | g | o]`.
    pub gates: Matrix,
    pub cells: Matrix,
    pub hidden: Matrix,
}

fn rows_of(m: &Matrix, start: usize, count: usize) -> MatRef<'_> {
    let c = m.cols();
    MatRef {
        data: &m.as_slice()[start * c..(start + count) * c],
        rows: count,
        cols: c,
        row_stride: c,
        col_stride: 1,
    }
}

fn rows_of_mut(m: &mut Matrix, start: usize, count: usize) -> MatMut<'_> {
    let c = m.cols();
    MatMut {
        data: &mut m.as_mut_slice()[start * c..(start + count) * c],
        rows: count,
        cols: c,
        row_stride: c,
        col_stride: 1,
    }
}

/// Runs the LSTM recursion from `h0 = c0 = 0` over a time-major batch.
pub(crate) fn lstm_forward_batch(
    p: &LstmParams,
    x: &Matrix,
    steps: usize,
    batch: usize,
) -> Result<LstmTrace> {
    let h = p.hidden_size();
    let d = p.input_size();
    if x.rows() != steps * batch || x.cols() != d {
        return Err(Error::Shape(format!(
            "lstm input is {}x{}, expected {}x{d}",
            x.rows(),
            x.cols(),
            steps * batch
        )));
    }
    let n = steps * batch;
    let mut gates = Matrix::zeros(n, 4 * h);
    gemm(1.0, x.view(), p.w.t(), 0.0, gates.view_mut())?;
    let bias = p.b.as_slice();
    for r in 0..n {
        for (g, b) in gates.row_mut(r).iter_mut().zip(bias) {
            *g += b;
        }
    }
    let mut cells = Matrix::zeros(n, h);
    let mut hidden = Matrix::zeros(n, h);
    for t in 0..steps {
        if t > 0 {
            let (prev, _) = hidden.as_slice().split_at(t * batch * h);
            let prev = MatRef::new(&prev[(t - 1) * batch * h..], batch, h, h, 1)?;
            gemm(1.0, prev, p.u.t(), 1.0, rows_of_mut(&mut gates, t * batch, batch))?;
        }
        let (c_done, c_rest) = cells.as_mut_slice().split_at_mut(t * batch * h);
        let h_now = &mut hidden.as_mut_slice()[t * batch * h..(t + 1) * batch * h];
        for b in 0..batch {
            let g = gates.row_mut(t * batch + b);
            for v in &mut g[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut g[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut g[3 * h..] {
                *v = sigmoid(*v);
            }
            let c_now = &mut c_rest[b * h..(b + 1) * h];
            let hb = &mut h_now[b * h..(b + 1) * h];
            for j in 0..h {
                let c_prev = if t > 0 {
                    c_done[((t - 1) * batch + b) * h + j]
                } else {
                    0.0
                };
                let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
                c_now[j] = c;
                hb[j] = g[3 * h + j] * c.tanh();
            }
        }
    }
    Ok(LstmTrace {
        steps,
        batch,
        gates,
        cells,
        hidden,
    })
}

/// Backpropagation through time. `d_hidden` is the loss gradient w.r.t.
/// every emitted hidden state (same layout as `trace.hidden`).
pub(crate) fn lstm_backward_batch(
    p: &LstmParams,
    x: &Matrix,
    trace: &LstmTrace,
    d_hidden: &Matrix,
) -> Result<LstmParams> {
    let h = p.hidden_size();
    let (steps, batch) = (trace.steps, trace.batch);
    if d_hidden.shape() != trace.hidden.shape() {
        return Err(Error::Shape("lstm hidden gradient shape mismatch".into()));
    }
    let n = steps * batch;
    let mut d_pre = Matrix::zeros(n, 4 * h);
    let mut dh_next = Matrix::zeros(batch, h);
    let mut dc_next = Matrix::zeros(batch, h);
    let cells = trace.cells.as_slice();
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = t * batch + b;
            let g = trace.gates.row(r);
            let dh_out = d_hidden.row(r);
            let dhn = dh_next.row(b);
            let dcn = dc_next.row_mut(b);
            let da = d_pre.row_mut(r);
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c = cells[r * h + j];
                let c_prev = if t > 0 { cells[(r - batch) * h + j] } else { 0.0 };
                let tc = c.tanh();
                let dh = dh_out[j] + dhn[j];
                let dc = dcn[j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * gg * i * (1.0 - i);
                da[h + j] = dc * c_prev * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - gg * gg);
                da[3 * h + j] = dh * tc * o * (1.0 - o);
                dcn[j] = dc * f;
            }
        }
        if t > 0 {
            gemm(1.0, rows_of(&d_pre, t * batch, batch), p.u.view(), 0.0, dh_next.view_mut())?;
        }
    }
    let mut grads = LstmParams::zeros(p.input_size(), h);
    gemm(1.0, d_pre.t(), x.view(), 0.0, grads.w.view_mut())?;
    if steps > 1 {
        let da_tail = rows_of(&d_pre, batch, n - batch);
        let h_head = rows_of(&trace.hidden, 0, n - batch);
        gemm(1.0, da_tail.t(), h_head, 0.0, grads.u.view_mut())?;
    }
    let db = grads.b.as_mut_slice();
    for r in 0..n {
        for (acc, v) in db.iter_mut().zip(d_pre.row(r)) {
            *acc += v;
        }
    }
    Ok(grads)
}

/// Single-sequence LSTM: `w x d` in, `w x h` hidden states out.
pub fn lstm_forward(x: &Matrix, p: &LstmParams) -> Result<Matrix> {
    if x.cols() != p.input_size() {
        return Err(Error::Shape(format!(
            "lstm expects {} input features, got {}",
            p.input_size(),
            x.cols()
        )));
    }
    Ok(lstm_forward_batch(p, x, x.rows(), 1)?.hidden)
}

/// Feature-wise concatenation: input features first, then LSTM features.
pub fn concat_skip(x: &Matrix, hseq: &Matrix) -> Result<Matrix> {
    if x.rows() != hseq.rows() {
        return Err(Error::Shape(format!(
            "concat: input has {} steps, lstm output has {}",
            x.rows(),
            hseq.rows()
        )));
    }
    let (dx, dh) = (x.cols(), hseq.cols());
    let mut out = Matrix::zeros(x.rows(), dx + dh);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        row[..dx].copy_from_slice(x.row(r));
        row[dx..].copy_from_slice(hseq.row(r));
    }
    Ok(out)
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && kernel > 0 && stride > 0).then(|| (len - kernel) / stride + 1)
}

/// im2col view of `x` (`L x C`): row `t` is the flattened window
/// `x[t*stride .. t*stride + k]`, ordered `[tap][channel]`. No copy.
fn windows_view(x: &Matrix, kernel: usize, stride: usize, out_len: usize) -> Result<MatRef<'_>> {
    let c = x.cols();
    MatRef::new(x.as_slice(), out_len, kernel * c, stride * c, 1)
}

/// Valid cross-correlation followed by ReLU. Output is `L' x out_ch` with
/// `L' = (L - k) / stride + 1`.
pub fn conv1d_forward(x: &Matrix, p: &ConvParams, stride: usize) -> Result<Matrix> {
    let k = p.kernel_size;
    if x.cols() != p.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            p.in_channels,
            x.cols()
        )));
    }
    let out_len = conv_out_len(x.rows(), k, stride).ok_or_else(|| {
        Error::Shape(format!("conv input length {} shorter than kernel {k}", x.rows()))
    })?;
    let mut out = Matrix::zeros(out_len, p.out_channels());
    gemm(1.0, windows_view(x, k, stride, out_len)?, p.kernel.t(), 0.0, out.view_mut())?;
    let bias = p.bias.as_slice();
    for t in 0..out_len {
        for (v, b) in out.row_mut(t).iter_mut().zip(bias) {
            *v = (*v + b).max(0.0);
        }
    }
    Ok(out)
}

/// Gradient of a conv+ReLU layer. `out` is the post-ReLU forward output and
/// `d_out` the gradient w.r.t. it; parameter gradients accumulate into
/// `grads`. Returns the gradient w.r.t. `x` when `want_dx`.
pub(crate) fn conv1d_backward(
    x: &Matrix,
    p: &ConvParams,
    stride: usize,
    out: &Matrix,
    d_out: &Matrix,
    grads: &mut ConvParams,
    want_dx: bool,
) -> Result<Option<Matrix>> {
    let k = p.kernel_size;
    let out_len = out.rows();
    let mut d_pre = d_out.clone();
    for (d, &o) in d_pre.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    let cols = windows_view(x, k, stride, out_len)?;
    gemm(1.0, d_pre.t(), cols, 1.0, grads.kernel.view_mut())?;
    let db = grads.bias.as_mut_slice();
    for t in 0..out_len {
        for (acc, v) in db.iter_mut().zip(d_pre.row(t)) {
            *acc += v;
        }
    }
    if !want_dx {
        return Ok(None);
    }
    let c = x.cols();
    let mut d_cols = Matrix::zeros(out_len, k * c);
    gemm(1.0, d_pre.view(), p.kernel.view(), 0.0, d_cols.view_mut())?;
    let mut dx = Matrix::zeros(x.rows(), c);
    let dxs = dx.as_mut_slice();
    for t in 0..out_len {
        let start = t * stride * c;
        for (acc, v) in dxs[start..start + k * c].iter_mut().zip(d_cols.row(t)) {
            *acc += v;
        }
    }
    Ok(Some(dx))
}

/// Channel-wise max over windows of `kernel` rows at `stride`. Returns the
/// pooled matrix and, per output element, the source row that won (first
/// occurrence on ties).
pub fn maxpool1d_forward(x: &Matrix, kernel: usize, stride: usize) -> Result<(Matrix, Vec<usize>)> {
    let out_len = conv_out_len(x.rows(), kernel, stride).ok_or_else(|| {
        Error::Shape(format!("pool input length {} shorter than window {kernel}", x.rows()))
    })?;
    let c = x.cols();
    let mut out = Matrix::zeros(out_len, c);
    let mut arg = vec![0usize; out_len * c];
    for t in 0..out_len {
        let base = t * stride;
        let orow = out.row_mut(t);
        orow.copy_from_slice(x.row(base));
        let arow = &mut arg[t * c..(t + 1) * c];
        arow.iter_mut().for_each(|a| *a = base);
        for r in base + 1..base + kernel {
            for (j, &v) in x.row(r).iter().enumerate() {
                if v > orow[j] {
                    orow[j] = v;
                    arow[j] = r;
                }
            }
        }
    }
    Ok((out, arg))
}

pub(crate) fn maxpool1d_backward(d_out: &Matrix, argmax: &[usize], in_len: usize) -> Matrix {
    let c = d_out.cols();
    let mut dx = Matrix::zeros(in_len, c);
    for t in 0..d_out.rows() {
        for (j, &g) in d_out.row(t).iter().enumerate() {
            dx[(argmax[t * c + j], j)] += g;
        }
    }
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, rng.uniform(-1.0, 1.0, r * c).unwrap()).unwrap()
    }

    fn conv_params(rng: &mut Rng, out: usize, inp: usize, k: usize) -> ConvParams {
        let mut p = ConvParams::zeros(out, inp, k);
        p.kernel = random(rng, out, k * inp);
        p.bias = random(rng, 1, out);
        p
    }

    /// Direct definition: out[t][o] = relu(b[o] + sum_c sum_j w[o][c][j] x[t*s+j][c]).
    fn naive_conv(x: &Matrix, p: &ConvParams, stride: usize) -> Matrix {
        let k = p.kernel_size;
        let c_in = p.in_channels;
        let out_len = (x.rows() - k) / stride + 1;
        let mut out = Matrix::zeros(out_len, p.out_channels());
        for t in 0..out_len {
            for o in 0..p.out_channels() {
                let mut s = p.bias[(0, o)];
                for c in 0..c_in {
                    for j in 0..k {
                        s += p.weight(o, c, j) * x[(t * stride + j, c)];
                    }
                }
                out[(t, o)] = s.max(0.0);
            }
        }
        out
    }

    fn naive_pool(x: &Matrix, k: usize, s: usize) -> Matrix {
        let out_len = (x.rows() - k) / s + 1;
        Matrix::from_fn(out_len, x.cols(), |t, c| {
            (0..k).map(|j| x[(t * s + j, c)]).fold(f64::NEG_INFINITY, f64::max)
        })
    }

    #[test]
    fn conv_length_formula() {
        let mut rng = Rng::new(1);
        let p = conv_params(&mut rng, 16, 133, 3);
        let x = random(&mut rng, 128, 133);
        assert_eq!(conv1d_forward(&x, &p, 2).unwrap().rows(), 63);
    }

    #[test]
    fn conv_delta_kernel_copies_interior() {
        let mut p = ConvParams::zeros(1, 1, 3);
        p.kernel = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let x = Matrix::from_vec(6, 1, vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = conv1d_forward(&x, &p, 1).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = Rng::new(2);
        for &(len, c, o, k, s) in &[(20, 3, 4, 3, 2), (9, 1, 2, 2, 1), (31, 16, 32, 3, 2), (7, 5, 3, 7, 3)] {
            let p = conv_params(&mut rng, o, c, k);
            let x = random(&mut rng, len, c);
            let a = conv1d_forward(&x, &p, s).unwrap();
            let b = naive_conv(&x, &p, s);
            let diff = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
            assert!(diff < 1e-12, "diff {diff}");
        }
    }

    #[test]
    fn conv_rejects_short_input() {
        let p = ConvParams::zeros(2, 1, 3);
        assert!(matches!(conv1d_forward(&Matrix::zeros(2, 1), &p, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_definition() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        let (y, arg) = maxpool1d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 3]);
        let c = Matrix::filled(9, 3, 0.7);
        let (y, _) = maxpool1d_forward(&c, 2, 2).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.7));
        assert!(maxpool1d_forward(&Matrix::zeros(1, 2), 2, 2).is_err());
    }

    #[test]
    fn pool_matches_nested_loops() {
        let mut rng = Rng::new(3);
        for &(len, c, k, s) in &[(63, 16, 2, 2), (15, 32, 2, 2), (10, 3, 3, 1)] {
            let x = random(&mut rng, len, c);
            assert_eq!(maxpool1d_forward(&x, k, s).unwrap().0, naive_pool(&x, k, s));
        }
    }

    #[test]
    fn lstm_zero_weights_zero_output() {
        let p = LstmParams::zeros(5, 4);
        let h = lstm_forward(&Matrix::zeros(7, 5), &p).unwrap();
        assert_eq!(h, Matrix::zeros(7, 4));
    }

    #[test]
    fn lstm_single_step_scalar() {
        let (wi, wf, wg, wo) = (0.3, -0.2, 0.8, 0.5);
        let mut p = LstmParams::zeros(1, 1);
        p.w = Matrix::from_vec(4, 1, vec![wi, wf, wg, wo]).unwrap();
        let h = lstm_forward(&Matrix::filled(1, 1, 1.0), &p).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expect = s(wo) * (s(wi) * wg.tanh()).tanh();
        assert!((h[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn lstm_batch_matches_single_sequences() {
        let mut rng = Rng::new(4);
        let mut p = LstmParams::zeros(3, 5);
        p.w = random(&mut rng, 20, 3);
        p.u = random(&mut rng, 20, 5);
        p.b = random(&mut rng, 1, 20);
        let seqs: Vec<Matrix> = (0..3).map(|_| random(&mut rng, 6, 3)).collect();
        let mut stacked = Matrix::zeros(18, 3);
        for t in 0..6 {
            for (b, s) in seqs.iter().enumerate() {
                stacked.row_mut(t * 3 + b).copy_from_slice(s.row(t));
            }
        }
        let trace = lstm_forward_batch(&p, &stacked, 6, 3).unwrap();
        for (b, s) in seqs.iter().enumerate() {
            let single = lstm_forward(s, &p).unwrap();
            for t in 0..6 {
                assert_eq!(single.row(t), trace.hidden.row(t * 3 + b));
            }
        }
    }

    #[test]
    fn concat_layout() {
        let x = Matrix::filled(3, 5, 2.0);
        let z = Matrix::zeros(3, 4);
        let c = concat_skip(&x, &z).unwrap();
        assert_eq!(c.cols(), 9);
        for r in 0..3 {
            assert_eq!(&c.row(r)[..5], x.row(r));
            assert!(c.row(r)[5..].iter().all(|&v| v == 0.0));
        }
        assert!(concat_skip(&x, &Matrix::zeros(2, 4)).is_err());
        assert_eq!(concat_skip(&Matrix::zeros(128, 5), &Matrix::zeros(128, 128)).unwrap().cols(), 133);
    }
}
