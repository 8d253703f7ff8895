use super::Tensor;
use crate::error::{shape_err, Result};

/// Strided view of a matrix: (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct Layout(pub isize, pub isize);

impl Layout {
    pub(crate) fn row_major(cols: usize) -> Self {
        Layout(cols as isize, 1)
    }

    pub(crate) fn transposed(cols_of_stored: usize) -> Self {
        Layout(1, cols_of_stored as isize)
    }

    fn max_offset(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * self.0 as usize + (cols - 1) * self.1 as usize
    }
}

/// `c[m, n] = a[m, k] · b[k, n] (+ c if accumulate)`, with `c` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    assert!(la.max_offset(m, k) < a.len(), "gemm lhs out of bounds");
    assert!(lb.max_offset(k, n) < b.len(), "gemm rhs out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every address dgemm reads from `a`
    // and `b`, and `c` holds the full m×n row-major block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.0,
            la.1,
            b.as_ptr(),
            lb.0,
            lb.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.dim(1) != rhs.dim(0) {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), rhs.dim(1));
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), Layout::row_major(k), rhs.data(), Layout::row_major(n), &mut out, false);
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op("matmul", out, vec![m, n], vec![self.clone(), rhs.clone()], move |g, _| {
            let ga = a.is_tracked().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, Layout::row_major(n), b.data(), Layout::transposed(n), &mut ga, false);
                ga
            });
            let gb = b.is_tracked().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a.data(), Layout::transposed(k), g, Layout::row_major(n), &mut gb, false);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Affine map over the last axis: `x[..., in] · wᵀ + b` with
    /// `w: [out, in]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let r = self.rank();
        if r == 0 || weight.rank() != 2 || weight.dim(1) != self.dim(r - 1) {
            return Err(shape_err(
                "linear",
                format!("input {:?} with weight {:?}", self.shape(), weight.shape()),
            ));
        }
        let (din, dout) = (weight.dim(1), weight.dim(0));
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(shape_err("linear", format!("bias {:?} for {dout} outputs", b.shape())));
            }
        }
        let rows = self.numel() / din.max(1);
        let mut out = vec![0.0; rows * dout];
        gemm(rows, din, dout, self.data(), Layout::row_major(din), weight.data(), Layout::transposed(din), &mut out, false);
        if let Some(b) = bias {
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(b.data()).for_each(|(o, bi)| *o += bi);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[r - 1] = dout;
        let (x, w) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op("linear", out, shape, parents, move |g, _| {
            let gx = x.is_tracked().then(|| {
                let mut gx = vec![0.0; rows * din];
                gemm(rows, dout, din, g, Layout::row_major(dout), w.data(), Layout::row_major(din), &mut gx, false);
                gx
            });
            let gw = w.is_tracked().then(|| {
                let mut gw = vec![0.0; dout * din];
                gemm(dout, rows, din, g, Layout::transposed(dout), x.data(), Layout::row_major(din), &mut gw, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![0.0; dout];
                for row in g.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::gradcheck::{gradient_check, random_leaf, random_tensor, GradCheckOptions};

    #[test]
    fn matmul_matches_naive() {
        let a = random_tensor(&[3, 4], 1);
        let b = random_tensor(&[4, 5], 2);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|p| a.data()[i * 4 + p] * b.data()[p * 5 + j]).sum();
                assert!((c.data()[i * 5 + j] - want).abs() < 1e-12);
            }
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn linear_gradients() {
        let opts = GradCheckOptions::default();
        for (xs, din, dout) in [(vec![2, 3, 4], 4, 5), (vec![6, 3], 3, 2)] {
            for seed in 0..3 {
                let x = random_leaf(&xs, seed);
                let w = random_leaf(&[dout, din], seed + 1);
                let b = random_leaf(&[dout], seed + 2);
                let r = gradient_check(
                    |t| Ok(t[0].linear(&t[1], Some(&t[2]))?.square().sum()),
                    &[x.clone(), w.clone(), b],
                    &opts,
                )
                .unwrap();
                assert!(r.passed, "{r:?}");
                let m = random_leaf(&[din, dout], seed + 3);
                let x2 = random_leaf(&[4, din], seed + 4);
                let r = gradient_check(|t| Ok(t[0].matmul(&t[1])?.tanh().sum()), &[x2, m], &opts).unwrap();
                assert!(r.passed, "{r:?}");
            }
        }
    }
}
