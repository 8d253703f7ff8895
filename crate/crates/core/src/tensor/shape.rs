use super::{numel, strides, Tensor};
use crate::error::{shape_err, Result};

/// Visits every element of `shape` in row-major order together with its
/// offset under `src_strides`.
fn strided_for_each(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let r = shape.len();
    if numel(shape) == 0 {
        return;
    }
    if r == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    let inner = shape[r - 1];
    let is = src_strides[r - 1];
    let mut o = 0;
    loop {
        for k in 0..inner {
            f(o + k, off + k * is);
        }
        o += inner;
        let mut d = r - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= src_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err(
                "permute",
                format!("{perm:?} is not a permutation of rank {r}"),
            ));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.dim(p)).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = self.data();
        let mut out = vec![0.0; self.numel()];
        strided_for_each(&out_shape, &src_strides, |o, s| out[o] = src[s]);
        let n = self.numel();
        let shape = out_shape.clone();
        Ok(Tensor::from_op("permute", out, out_shape, vec![self.clone()], move |g, _| {
            let mut gi = vec![0.0; n];
            strided_for_each(&shape, &src_strides, |o, s| gi[s] = g[o]);
            vec![Some(gi)]
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn cat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| shape_err("cat", "empty input list"))?;
        let r = first.rank();
        if axis >= r {
            return Err(shape_err("cat", format!("axis {axis} out of range for rank {r}")));
        }
        for t in tensors {
            let ok = t.rank() == r
                && (0..r).all(|d| d == axis || t.dim(d) == first.dim(d));
            if !ok {
                return Err(shape_err(
                    "cat",
                    format!("{:?} incompatible with {:?} along axis {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.dim(axis) * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.dim(axis)).sum();
        Ok(Tensor::from_op("cat", out, shape, tensors.to_vec(), move |g, _| {
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gi, &w) in grads.iter_mut().zip(&widths) {
                    gi.extend_from_slice(&g[pos..pos + w]);
                    pos += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.dim(axis) {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let d = self.dim(axis);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op("narrow", out, shape, vec![self.clone()], move |g, _| {
            let mut gi = vec![0.0; n];
            for o in 0..outer {
                let base = (o * d + start) * inner;
                gi[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gi)]
        }))
    }

    /// Splits `[N, C, H, W]` into `N` tensors of shape `[1, C, H, W]`.
    pub fn unbind_batch(&self) -> Result<Vec<Tensor>> {
        (0..self.dim(0)).map(|n| self.narrow(0, n, 1)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradient_check, random_leaf, GradCheckOptions};

    #[test]
    fn permute_transposes() {
        let a = Tensor::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let t = a.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(a.permute(&[0, 0]).is_err());
    }

    #[test]
    fn cat_and_narrow_roundtrip() {
        let a = Tensor::new((0..8).map(f64::from).collect(), &[2, 2, 2]).unwrap();
        let b = Tensor::new((10..14).map(f64::from).collect(), &[2, 1, 2]).unwrap();
        let c = Tensor::cat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
        assert!(Tensor::cat(&[a, Tensor::zeros(&[3, 1, 2])], 1).is_err());
    }

    #[test]
    fn shape_op_gradients() {
        let opts = GradCheckOptions::default();
        for (shape, seed) in [(vec![2, 3, 4], 1u64), (vec![3, 2, 2], 2), (vec![1, 4, 3], 3)] {
            let x = random_leaf(&shape, seed);
            let y = random_leaf(&shape, seed + 7);
            let w = crate::tensor::gradcheck::random_tensor(&[shape[2], shape[1], shape[0] * 2], seed + 9);
            let r = gradient_check(
                |xs| {
                    let c = Tensor::cat(&[xs[0].clone(), xs[1].clone()], 0)?;
                    let p = c.permute(&[2, 1, 0])?;
                    let n = p.narrow(0, 1, shape[2] - 1)?;
                    let m = n.mul(&w.narrow(0, 1, shape[2] - 1)?)?;
                    Ok(m.reshape(&[m.numel()])?.square().sum())
                },
                &[x, y],
                &opts,
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
