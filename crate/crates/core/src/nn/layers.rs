//! Layer implementations: embedding, 1-D convolution with global max pooling,
//! dense, batch/layer normalization, dropout and elementwise activations.
//!
//! All layers operate on batches stored row-major, one sample per row.
//! Sequence activations are laid out time-major within a row: position `t`,
//! channel `c` lives at column `t * channels + c`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Tensor2D, TokenMatrix};

/// Clamp keeping sigmoid outputs inside the open interval (0, 1).
pub const SIGMOID_EPS: f64 = 1e-7;

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Sigmoid,
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed in terms of the activation *output*.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // For x <= 0, elu(x) = e^x - 1, so elu'(x) = e^x = y + 1.
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn apply(self, x: &Tensor2D) -> Tensor2D {
        x.mapv(|v| self.apply_scalar(v))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// Applies an activation to a plain vector. Total on finite inputs.
pub fn activate_vec(kind: Activation, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| kind.apply_scalar(x)).collect()
}

/// Token-id lookup table. Input is a `B x N` id matrix, output `B x (N*H)`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor2D,
    pub seq_len: usize,
}

impl Embedding {
    pub fn new<R: Rng>(vocab_rows: usize, emb_dim: usize, seq_len: usize, rng: &mut R) -> Self {
        let mut table = Array2::zeros((vocab_rows, emb_dim));
        for w in table.iter_mut() {
            *w = rng.gen_range(-0.05..0.05);
        }
        Embedding { table, seq_len }
    }

    pub fn vocab_rows(&self) -> usize {
        self.table.nrows()
    }

    pub fn emb_dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn forward(&self, ids: &TokenMatrix) -> Result<Tensor2D> {
        if ids.ncols() != self.seq_len {
            return Err(Error::dimension("embedding", self.seq_len, ids.ncols()));
        }
        let h = self.emb_dim();
        let mut out = Array2::zeros((ids.nrows(), self.seq_len * h));
        for (b, row) in ids.rows().into_iter().enumerate() {
            let out_row = out.row_mut(b).into_slice().expect("contiguous row");
            for (t, &id) in row.iter().enumerate() {
                let id = id as usize;
                if id >= self.vocab_rows() {
                    return Err(Error::TokenRange {
                        id: id as u32,
                        vocab_size: self.vocab_rows(),
                    });
                }
                let src = self.table.row(id);
                let src = src.as_slice().expect("contiguous table row");
                out_row[t * h..(t + 1) * h].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Scatter-add of output gradients into table rows. Rows never indexed
    /// by the batch receive zero gradient.
    pub fn backward(&self, ids: &TokenMatrix, d_out: &Tensor2D, d_table: &mut [f64]) {
        let h = self.emb_dim();
        for (b, row) in ids.rows().into_iter().enumerate() {
            let g_row = d_out.row(b);
            let g_row = g_row.as_slice().expect("contiguous row");
            for (t, &id) in row.iter().enumerate() {
                let base = id as usize * h;
                for (j, &g) in g_row[t * h..(t + 1) * h].iter().enumerate() {
                    d_table[base + j] += g;
                }
            }
        }
    }
}

/// Valid (no padding) 1-D cross-correlation over the sequence axis followed
/// by global max pooling over time, one pooled value per output channel.
///
/// Weights are stored `out_channels x (kernel_width * in_channels)`, one
/// flattened kernel per row.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
}

/// Per-sample argmax positions recorded by the pooling step.
pub type PoolArgmax = Array2<u32>;

impl Conv1d {
    pub fn new<R: Rng>(
        kernel_width: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (kernel_width * in_channels) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let mut weights = Array2::zeros((out_channels, kernel_width * in_channels));
        for w in weights.iter_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        Conv1d {
            kernel_width,
            in_channels,
            out_channels,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    fn seq_len_of(&self, cols: usize) -> Result<usize> {
        if cols % self.in_channels != 0 {
            return Err(Error::dimension(
                "conv1d",
                format!("multiple of {} columns", self.in_channels),
                cols,
            ));
        }
        let n = cols / self.in_channels;
        if n < self.kernel_width {
            return Err(Error::dimension(
                "conv1d",
                format!("sequence length >= kernel width {}", self.kernel_width),
                n,
            ));
        }
        Ok(n)
    }

    /// Forward pass; returns pooled activations `B x out_channels` and the
    /// argmax time index used by each pooled value.
    pub fn forward(&self, input: &Tensor2D) -> Result<(Tensor2D, PoolArgmax)> {
        let batch = input.nrows();
        let n = self.seq_len_of(input.ncols())?;
        let t_out = n - self.kernel_width + 1;
        let k_in = self.kernel_width * self.in_channels;

        let mut pooled = Array2::zeros((batch, self.out_channels));
        let mut argmax: PoolArgmax = Array2::zeros((batch, self.out_channels));

        // Process the batch in chunks: im2col + one GEMM per chunk.
        const CHUNK: usize = 64;
        let mut windows = Array2::<f64>::zeros((CHUNK * t_out, k_in));
        let mut conv = Array2::<f64>::zeros((CHUNK * t_out, self.out_channels));
        let mut start = 0;
        while start < batch {
            let rows = CHUNK.min(batch - start);
            for b in 0..rows {
                let in_row = input.row(start + b);
                let in_row = in_row.as_slice().expect("contiguous row");
                for t in 0..t_out {
                    let dst = windows.row_mut(b * t_out + t);
                    let dst = dst.into_slice().expect("contiguous row");
                    let lo = t * self.in_channels;
                    dst.copy_from_slice(&in_row[lo..lo + k_in]);
                }
            }
            {
                let w_view = windows.slice(ndarray::s![..rows * t_out, ..]);
                let mut c_view = conv.slice_mut(ndarray::s![..rows * t_out, ..]);
                general_mat_mul(1.0, &w_view, &self.weights.t(), 0.0, &mut c_view);
            }
            for b in 0..rows {
                for c in 0..self.out_channels {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_t = 0usize;
                    for t in 0..t_out {
                        let v = conv[(b * t_out + t, c)];
                        if v > best {
                            best = v;
                            best_t = t;
                        }
                    }
                    pooled[(start + b, c)] = best + self.bias[c];
                    argmax[(start + b, c)] = best_t as u32;
                }
            }
            start += rows;
        }
        Ok((pooled, argmax))
    }

    /// Backward through pooling and convolution. Gradients flow only through
    /// each channel's argmax window, so this is sparse and cheap.
    pub fn backward(
        &self,
        input: &Tensor2D,
        argmax: &PoolArgmax,
        d_pooled_col: &Tensor2D,
        pooled_col_offset: usize,
        d_weights: &mut [f64],
        d_bias: &mut [f64],
        d_input: &mut Tensor2D,
    ) {
        let k_in = self.kernel_width * self.in_channels;
        for b in 0..input.nrows() {
            let in_row = input.row(b);
            let in_row = in_row.as_slice().expect("contiguous row");
            let mut d_in_row = d_input.row_mut(b);
            let d_in_row = d_in_row.as_slice_mut().expect("contiguous row");
            for c in 0..self.out_channels {
                let g = d_pooled_col[(b, pooled_col_offset + c)];
                if g == 0.0 {
                    continue;
                }
                d_bias[c] += g;
                let t = argmax[(b, c)] as usize;
                let lo = t * self.in_channels;
                let window = &in_row[lo..lo + k_in];
                let w_row = self.weights.row(c);
                let w_row = w_row.as_slice().expect("contiguous row");
                let dw = &mut d_weights[c * k_in..(c + 1) * k_in];
                for j in 0..k_in {
                    dw[j] += g * window[j];
                    d_in_row[lo + j] += g * w_row[j];
                }
            }
        }
    }
}

/// Dense layer `y = x W + b`, weights stored `in_dim x out_dim`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let mut weights = Array2::zeros((in_dim, out_dim));
        for w in weights.iter_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        Linear {
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, input: &Tensor2D) -> Result<Tensor2D> {
        if input.ncols() != self.in_dim() {
            return Err(Error::dimension("linear", self.in_dim(), input.ncols()));
        }
        let mut out = Array2::zeros((input.nrows(), self.out_dim()));
        general_mat_mul(1.0, input, &self.weights, 0.0, &mut out);
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        input: &Tensor2D,
        d_out: &Tensor2D,
        d_weights: &mut [f64],
        d_bias: &mut [f64],
    ) -> Tensor2D {
        {
            let mut dw = ndarray::ArrayViewMut2::from_shape(
                (self.in_dim(), self.out_dim()),
                d_weights,
            )
            .expect("gradient slice shape");
            general_mat_mul(1.0, &input.t(), d_out, 1.0, &mut dw);
        }
        for (c, g) in d_bias.iter_mut().enumerate() {
            *g += d_out.column(c).sum();
        }
        let mut d_in = Array2::zeros((input.nrows(), self.in_dim()));
        general_mat_mul(1.0, d_out, &self.weights.t(), 0.0, &mut d_in);
        d_in
    }
}

/// Per-feature batch normalization with running statistics for eval mode.
///
/// Running stats start at (0, 1): eval-mode output is well defined for a
/// freshly initialized network, but only meaningful after training batches
/// have been observed.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub batches_seen: u64,
}

pub struct BatchNormCache {
    pub x_hat: Tensor2D,
    pub inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
            batches_seen: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check_dim(&self, input: &Tensor2D) -> Result<()> {
        if input.ncols() != self.dim() {
            return Err(Error::dimension("batchnorm", self.dim(), input.ncols()));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, input: &Tensor2D) -> Result<(Tensor2D, BatchNormCache)> {
        self.check_dim(input)?;
        let batch = input.nrows() as f64;
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for (f, m) in mean.iter_mut().enumerate() {
            *m = input.column(f).sum() / batch;
        }
        for (f, v) in var.iter_mut().enumerate() {
            let m = mean[f];
            *v = input.column(f).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / batch;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = input.clone();
        for mut row in x_hat.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[f]) * inv_std[f];
            }
        }
        let mut out = x_hat.clone();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma[f] + self.beta[f];
            }
        }
        // Unbiased variance for the running estimate, as is conventional.
        let unbias = if input.nrows() > 1 {
            batch / (batch - 1.0)
        } else {
            1.0
        };
        for f in 0..dim {
            self.running_mean[f] =
                (1.0 - self.momentum) * self.running_mean[f] + self.momentum * mean[f];
            self.running_var[f] =
                (1.0 - self.momentum) * self.running_var[f] + self.momentum * var[f] * unbias;
        }
        self.batches_seen += 1;
        Ok((out, BatchNormCache { x_hat, inv_std }))
    }

    /// Eval output is a pure function of the input and running statistics.
    pub fn forward_eval(&self, input: &Tensor2D) -> Result<Tensor2D> {
        self.check_dim(input)?;
        let mut out = input.clone();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                let inv = 1.0 / (self.running_var[f] + self.eps).sqrt();
                *v = (*v - self.running_mean[f]) * inv * self.gamma[f] + self.beta[f];
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache,
        d_out: &Tensor2D,
        d_gamma: &mut [f64],
        d_beta: &mut [f64],
    ) -> Tensor2D {
        let batch = d_out.nrows() as f64;
        let dim = self.dim();
        let mut sum_dy = vec![0.0; dim];
        let mut sum_dy_xhat = vec![0.0; dim];
        for b in 0..d_out.nrows() {
            for f in 0..dim {
                let dy = d_out[(b, f)];
                sum_dy[f] += dy;
                sum_dy_xhat[f] += dy * cache.x_hat[(b, f)];
            }
        }
        for f in 0..dim {
            d_gamma[f] += sum_dy_xhat[f];
            d_beta[f] += sum_dy[f];
        }
        let mut d_in = Array2::zeros(d_out.dim());
        for b in 0..d_out.nrows() {
            for f in 0..dim {
                let dy = d_out[(b, f)];
                d_in[(b, f)] = self.gamma[f] * cache.inv_std[f] / batch
                    * (batch * dy - sum_dy[f] - cache.x_hat[(b, f)] * sum_dy_xhat[f]);
            }
        }
        d_in
    }
}

/// Per-sample layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

pub struct LayerNormCache {
    pub x_hat: Tensor2D,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, input: &Tensor2D) -> Result<(Tensor2D, LayerNormCache)> {
        if input.ncols() != self.dim() {
            return Err(Error::dimension("layernorm", self.dim(), input.ncols()));
        }
        let dim = self.dim() as f64;
        let mut x_hat = input.clone();
        let mut inv_std = Vec::with_capacity(input.nrows());
        for mut row in x_hat.rows_mut() {
            let mean = row.sum() / dim;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / dim;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let mut out = x_hat.clone();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma[f] + self.beta[f];
            }
        }
        Ok((out, LayerNormCache { x_hat, inv_std }))
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        d_out: &Tensor2D,
        d_gamma: &mut [f64],
        d_beta: &mut [f64],
    ) -> Tensor2D {
        let dim = self.dim();
        let dim_f = dim as f64;
        let mut d_in = Array2::zeros(d_out.dim());
        for b in 0..d_out.nrows() {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for f in 0..dim {
                let dy = d_out[(b, f)];
                let xh = cache.x_hat[(b, f)];
                let dxh = dy * self.gamma[f];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh;
                d_gamma[f] += dy * xh;
                d_beta[f] += dy;
            }
            for f in 0..dim {
                let dxh = d_out[(b, f)] * self.gamma[f];
                let xh = cache.x_hat[(b, f)];
                d_in[(b, f)] =
                    cache.inv_std[b] / dim_f * (dim_f * dxh - sum_dxhat - xh * sum_dxhat_xhat);
            }
        }
        d_in
    }
}

/// Inverted dropout: kept units are scaled by 1/(1-p) at train time so the
/// eval pass is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Input(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn forward_train<R: Rng>(&self, input: &Tensor2D, rng: &mut R) -> (Tensor2D, Tensor2D) {
        if self.rate == 0.0 {
            let mask = Array2::ones(input.dim());
            return (input.clone(), mask);
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = Array2::from_shape_fn(input.dim(), |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                0.0
            }
        });
        (input * &mask, mask)
    }

    pub fn backward(&self, mask: &Tensor2D, d_out: &Tensor2D) -> Tensor2D {
        d_out * mask
    }
}

/// Mean binary cross-entropy with probability clamping.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dimension("bce_loss", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::Input("bce_loss on empty vectors".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / pred.len() as f64)
}

/// Gradient of mean BCE with respect to the pre-sigmoid logits.
pub fn bce_grad_logits(scores: &[f64], target: &[f64]) -> Array1<f64> {
    let n = scores.len() as f64;
    Array1::from_iter(
        scores
            .iter()
            .zip(target)
            .map(|(&p, &y)| (p - y) / n),
    )
}

/// Column-stack two matrices (used by the fusion assembly and conv banks).
pub fn hstack(parts: &[&Tensor2D]) -> Tensor2D {
    let rows = parts[0].nrows();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for p in parts {
        out.slice_mut(ndarray::s![.., at..at + p.ncols()]).assign(p);
        at += p.ncols();
    }
    out
}

/// Sum along axis 0 helper kept for conv bias gradients.
pub fn column_sums(m: &Tensor2D) -> Vec<f64> {
    m.sum_axis(Axis(0)).to_vec()
}
