use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

/// Per-channel statistics of one training-phase batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the value folded into running statistics.
    pub var_unbiased: Vec<f64>,
}

fn layout(t: &Tensor) -> (usize, usize, usize) {
    let n = t.dim(0);
    let c = t.dim(1);
    (n, c, t.numel() / (n * c).max(1))
}

/// Normalizes groups of `d` contiguous values; shared by layer norm.
fn normalize_rows(src: &[f64], d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = src.len() / d;
    let mut out = vec![0.0; src.len()];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let x = &src[r * d..(r + 1) * d];
        let mean = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv[r] = is;
        for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(x) {
            *o = (v - mean) * is;
        }
    }
    (out, inv)
}

impl Tensor {
    /// Training-phase batch normalization of `[N, C, ...]` without affine
    /// parameters: each channel is standardized with its batch mean and
    /// biased variance (`eps` added under the root).
    pub fn batch_norm_train(&self, eps: f64) -> Result<(Tensor, BatchStats)> {
        if self.rank() < 2 {
            return Err(shape_err("batch_norm", format!("need [N, C, ...], got {:?}", self.shape())));
        }
        let (n, c, s) = layout(self);
        let m = n * s;
        if m <= 1 {
            return Err(arg_err("batch_norm", format!("{m} value(s) per channel; training phase needs more than one")));
        }
        let x = self.data();
        let at = move |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut out = vec![0.0; x.len()];
        let mut mean = vec![0.0; c];
        let mut var_unbiased = vec![0.0; c];
        let mut inv = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                sum += x[at(b, ch, 0)..at(b, ch, 0) + s].iter().sum::<f64>();
            }
            let mu = sum / m as f64;
            let mut ss = 0.0;
            for b in 0..n {
                ss += x[at(b, ch, 0)..at(b, ch, 0) + s].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            let var = ss / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            for b in 0..n {
                for i in 0..s {
                    out[at(b, ch, i)] = (x[at(b, ch, i)] - mu) * is;
                }
            }
            mean[ch] = mu;
            var_unbiased[ch] = ss / (m - 1) as f64;
            inv[ch] = is;
        }
        let y = Tensor::from_op("batch_norm", out, self.shape().to_vec(), vec![self.clone()], move |g, xhat| {
            let mut gx = vec![0.0; g.len()];
            for ch in 0..c {
                let (mut sg, mut sgx) = (0.0, 0.0);
                for b in 0..n {
                    for i in 0..s {
                        let k = at(b, ch, i);
                        sg += g[k];
                        sgx += g[k] * xhat[k];
                    }
                }
                let mf = m as f64;
                for b in 0..n {
                    for i in 0..s {
                        let k = at(b, ch, i);
                        gx[k] = inv[ch] / mf * (mf * g[k] - sg - xhat[k] * sgx);
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok((y, BatchStats { mean, var_unbiased }))
    }

    /// Inference-phase batch normalization with fixed statistics.
    pub fn batch_norm_eval(&self, mean: &[f64], var: &[f64], eps: f64) -> Result<Tensor> {
        if self.rank() < 2 || mean.len() != self.dim(1) || var.len() != self.dim(1) {
            return Err(shape_err(
                "batch_norm",
                format!("{} statistics for input {:?}", mean.len(), self.shape()),
            ));
        }
        let (_, c, s) = layout(self);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let ch = (k / s) % c;
                (v - mean[ch]) * inv[ch]
            })
            .collect();
        Ok(Tensor::from_op("batch_norm_eval", out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().enumerate().map(|(k, gv)| gv * inv[(k / s) % c]).collect())]
        }))
    }

    /// Standardizes over the last axis (no affine parameters).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if d == 0 {
            return Err(shape_err("layer_norm", "empty last axis"));
        }
        let (out, inv) = normalize_rows(self.data(), d, eps);
        Ok(Tensor::from_op("layer_norm", out, self.shape().to_vec(), vec![self.clone()], move |g, xhat| {
            let mut gx = vec![0.0; g.len()];
            let df = d as f64;
            for (r, is) in inv.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let sg: f64 = gr.iter().sum();
                let sgx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    gx[r * d + k] = is / df * (df * gr[k] - sg - xr[k] * sgx);
                }
            }
            vec![Some(gx)]
        }))
    }
}
