use super::Tensor;
use crate::error::{shape_err, Result};

/// (outer, extent, inner) split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], Vec::new(), vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err("sum_axis", format!("axis {axis} for shape {:?}", self.shape())));
        }
        let (outer, d, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..d {
                let row = &src[(o * d + k) * inner..(o * d + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op("sum_axis", out, shape, vec![self.clone()], move |g, _| {
            let mut gi = vec![0.0; outer * d * inner];
            for o in 0..outer {
                for k in 0..d {
                    gi[(o * d + k) * inner..(o * d + k + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let d = self.shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / d as f64))
    }

    /// Softmax along `axis`, evaluated with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {:?}", self.shape())));
        }
        self.check_finite("softmax")?;
        let (outer, d, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * d + k) * inner + i;
                let m = (0..d).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..d {
                    let e = (src[at(k)] - m).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..d {
                    out[at(k)] /= z;
                }
            }
        }
        Ok(Tensor::from_op("softmax", out, self.shape().to_vec(), vec![self.clone()], move |g, y| {
            let mut gi = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * d + k) * inner + i;
                    let dot: f64 = (0..d).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..d {
                        gi[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gi)]
        }))
    }
}
