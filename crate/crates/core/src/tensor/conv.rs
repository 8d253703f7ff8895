use super::linalg::{gemm, Layout};
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            dilation: 1,
        }
    }

    /// Stride 1 with padding that preserves extent for an odd `k`.
    pub fn same(k: usize) -> Self {
        Self::new(1, k / 2)
    }

    pub fn dilated(dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation,
            dilation,
        }
    }
}

/// Geometry linking an image of `c × h × w` to a column matrix of
/// `(c·kh·kw) × (oh·ow)`.
#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    opts: ConvOptions,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let ConvOptions {
            stride,
            padding,
            dilation,
        } = self.opts;
        let p = self.cols();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for oy in 0..self.oh {
                        let y = (oy * stride + i * dilation) as isize - padding as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let img_row = (c * self.h + y as usize) * self.w;
                        let col_row = row * p + oy * self.ow;
                        for ox in 0..self.ow {
                            let x = (ox * stride + j * dilation) as isize - padding as isize;
                            if x >= 0 && x < self.w as isize {
                                f(col_row + ox, img_row + x as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        col.fill(0.0);
        self.for_each_tap(|ci, ii| col[ci] = img[ii]);
    }

    fn col2im_add(&self, col: &[f64], img: &mut [f64]) {
        self.for_each_tap(|ci, ii| img[ii] += col[ci]);
    }
}

fn out_extent(n: usize, k: usize, o: ConvOptions) -> Option<usize> {
    let span = o.dilation * (k - 1) + 1;
    (n + 2 * o.padding).checked_sub(span).map(|v| v / o.stride + 1)
}

impl Tensor {
    /// 2-D cross-correlation of `[N, C, H, W]` with `[F, C, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, opts: ConvOptions) -> Result<Tensor> {
        self.expect_rank("conv2d", 4)?;
        weight.expect_rank("conv2d", 4)?;
        if opts.stride == 0 || opts.dilation == 0 {
            return Err(arg_err("conv2d", "stride and dilation must be at least 1"));
        }
        let [n, c, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let [f, wc, kh, kw] = [weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3)];
        if wc != c {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels but weight {:?} expects {wc}", weight.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [f] {
                return Err(shape_err("conv2d", format!("bias {:?} for {f} filters", b.shape())));
            }
        }
        let (oh, ow) = match (out_extent(h, kh, opts), out_extent(w, kw, opts)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("kernel {kh}x{kw} does not fit {h}x{w} with {opts:?}"),
                ))
            }
        };
        let geo = Geometry { c, h, w, kh, kw, oh, ow, opts };
        let (rows, p) = (geo.rows(), geo.cols());
        let pointwise = kh == 1 && kw == 1 && opts == ConvOptions::default();
        let mut out = vec![0.0; n * f * p];
        let mut col = vec![0.0; if pointwise { 0 } else { rows * p }];
        let x = self.data();
        for s in 0..n {
            let img = &x[s * c * h * w..(s + 1) * c * h * w];
            let src: &[f64] = if pointwise {
                img
            } else {
                geo.im2col(img, &mut col);
                &col
            };
            gemm(f, rows, p, weight.data(), Layout::row_major(rows), src, Layout::row_major(p), &mut out[s * f * p..(s + 1) * f * p], false);
        }
        if let Some(b) = bias {
            for plane in out.chunks_mut(p).enumerate() {
                let bv = b.data()[plane.0 % f];
                plane.1.iter_mut().for_each(|v| *v += bv);
            }
        }
        let (xt, wt) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op("conv2d", out, vec![n, f, oh, ow], parents, move |g, _| {
            let x = xt.data();
            let mut gx = xt.is_tracked().then(|| vec![0.0; n * c * h * w]);
            let mut gw = wt.is_tracked().then(|| vec![0.0; f * rows]);
            let mut col = vec![0.0; rows * p];
            for s in 0..n {
                let gs = &g[s * f * p..(s + 1) * f * p];
                if let Some(gw) = gw.as_mut() {
                    let img = &x[s * c * h * w..(s + 1) * c * h * w];
                    let src: &[f64] = if pointwise {
                        img
                    } else {
                        geo.im2col(img, &mut col);
                        &col
                    };
                    gemm(f, p, rows, gs, Layout::row_major(p), src, Layout::transposed(p), gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[s * c * h * w..(s + 1) * c * h * w];
                    if pointwise {
                        gemm(rows, f, p, wt.data(), Layout::transposed(rows), gs, Layout::row_major(p), dst, true);
                    } else {
                        gemm(rows, f, p, wt.data(), Layout::transposed(rows), gs, Layout::row_major(p), &mut col, false);
                        geo.col2im_add(&col, dst);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![0.0; f];
                for (i, plane) in g.chunks(p).enumerate() {
                    gb[i % f] += plane.iter().sum::<f64>();
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Transposed convolution of `[N, Cin, H, W]` with `[Cin, Cout, kh, kw]`:
    /// the adjoint of `conv2d` with the same options, producing
    /// `(H-1)·stride - 2·padding + dilation·(kh-1) + 1 + output_padding` rows.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        opts: ConvOptions,
        output_padding: usize,
    ) -> Result<Tensor> {
        self.expect_rank("conv_transpose2d", 4)?;
        weight.expect_rank("conv_transpose2d", 4)?;
        if opts.stride == 0 || opts.dilation == 0 || output_padding >= opts.stride.max(opts.dilation) {
            return Err(arg_err("conv_transpose2d", format!("invalid options {opts:?}, output_padding {output_padding}")));
        }
        let [n, cin, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let [wc, cout, kh, kw] = [weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3)];
        if wc != cin {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input has {cin} channels but weight {:?} expects {wc}", weight.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(shape_err("conv_transpose2d", format!("bias {:?} for {cout} outputs", b.shape())));
            }
        }
        let full = |len: usize, k: usize| {
            ((len - 1) * opts.stride + opts.dilation * (k - 1) + 1 + output_padding).checked_sub(2 * opts.padding)
        };
        let (oh, ow) = match (full(h, kh), full(w, kw)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(shape_err("conv_transpose2d", "padding exceeds output extent")),
        };
        // The forward pass scatters through the geometry of a conv that maps
        // the output image back onto the input grid.
        let geo = Geometry { c: cout, h: oh, w: ow, kh, kw, oh: h, ow: w, opts };
        let (rows, p) = (geo.rows(), geo.cols());
        let x = self.data();
        let mut out = vec![0.0; n * cout * oh * ow];
        let mut col = vec![0.0; rows * p];
        for s in 0..n {
            gemm(rows, cin, p, weight.data(), Layout::transposed(rows), &x[s * cin * p..(s + 1) * cin * p], Layout::row_major(p), &mut col, false);
            geo.col2im_add(&col, &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow]);
        }
        let plane = oh * ow;
        if let Some(b) = bias {
            for (i, pl) in out.chunks_mut(plane).enumerate() {
                let bv = b.data()[i % cout];
                pl.iter_mut().for_each(|v| *v += bv);
            }
        }
        let (xt, wt) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op("conv_transpose2d", out, vec![n, cout, oh, ow], parents, move |g, _| {
            let x = xt.data();
            let mut gx = xt.is_tracked().then(|| vec![0.0; n * cin * p]);
            let mut gw = wt.is_tracked().then(|| vec![0.0; cin * rows]);
            let mut col = vec![0.0; rows * p];
            for s in 0..n {
                geo.im2col(&g[s * cout * plane..(s + 1) * cout * plane], &mut col);
                if let Some(gx) = gx.as_mut() {
                    gemm(cin, rows, p, wt.data(), Layout::row_major(rows), &col, Layout::row_major(p), &mut gx[s * cin * p..(s + 1) * cin * p], false);
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(cin, p, rows, &x[s * cin * p..(s + 1) * cin * p], Layout::row_major(p), &col, Layout::transposed(p), gw, true);
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![0.0; cout];
                for (i, pl) in g.chunks(plane).enumerate() {
                    gb[i % cout] += pl.iter().sum::<f64>();
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradient_check, random_leaf, random_tensor, GradCheckOptions};

    /// Direct six-nested-loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, o: ConvOptions) -> Vec<f64> {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [f, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * o.padding - o.dilation * (kh - 1) - 1) / o.stride + 1;
        let ow = (wd + 2 * o.padding - o.dilation * (kw - 1) - 1) / o.stride + 1;
        let mut out = vec![0.0; n * f * oh * ow];
        for s in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[fi]);
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let y = (oy * o.stride + i * o.dilation) as isize - o.padding as isize;
                                    let xx = (ox * o.stride + j * o.dilation) as isize - o.padding as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                        acc += x.data()[((s * c + ci) * h + y as usize) * wd + xx as usize]
                                            * w.data()[((fi * c + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out[((s * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_scaling() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::new(vec![2.0], &[1, 1, 1, 1]).unwrap();
        let y = x.conv2d(&w, None, ConvOptions::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn centered_one_hot_is_identity() {
        let x = random_tensor(&[2, 3, 5, 4], 9);
        let mut wd = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            wd[(c * 3 + c) * 9 + 4] = 1.0;
        }
        let w = Tensor::new(wd, &[3, 3, 3, 3]).unwrap();
        let zero = Tensor::zeros(&[3]);
        let y = x.conv2d(&w, Some(&zero), ConvOptions::same(3)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_naive_oracle() {
        let x = random_tensor(&[2, 3, 5, 5], 1);
        let w = random_tensor(&[4, 3, 3, 3], 2);
        let b = random_tensor(&[4], 3);
        for o in [ConvOptions::default(), ConvOptions::same(3), ConvOptions::new(2, 1), ConvOptions::dilated(2)] {
            let y = x.conv2d(&w, Some(&b), o).unwrap();
            let want = naive_conv(&x, &w, Some(&b), o);
            assert_eq!(y.numel(), want.len());
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{o:?}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = x.conv2d(&w, None, ConvOptions::same(3)).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)>
        for (o, op) in [(ConvOptions::new(2, 1), 1), (ConvOptions::same(3), 0), (ConvOptions::dilated(2), 0)] {
            let x = random_tensor(&[2, 3, 6, 6], 4);
            let w = random_tensor(&[4, 3, 3, 3], 5);
            let cx = x.conv2d(&w, None, o).unwrap();
            let y = random_tensor(cx.shape(), 6);
            let ty = y.conv_transpose2d(&w, None, o, op).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_gradients() {
        let opts = GradCheckOptions::default();
        let cases = [
            ([1, 2, 6, 6], [3, 2, 3, 3], ConvOptions::same(3)),
            ([2, 3, 5, 4], [2, 3, 3, 3], ConvOptions::new(2, 1)),
            ([2, 2, 7, 7], [2, 2, 3, 3], ConvOptions::dilated(2)),
            ([2, 3, 4, 4], [2, 3, 1, 1], ConvOptions::default()),
        ];
        for (xs, ws, o) in cases {
            for seed in 0..3 {
                let x = random_leaf(&xs, seed);
                let w = random_leaf(&ws, seed + 1);
                let b = random_leaf(&[ws[0]], seed + 2);
                let r = gradient_check(|t| Ok(t[0].conv2d(&t[1], Some(&t[2]), o)?.square().mean()), &[x, w, b], &opts).unwrap();
                assert!(r.passed, "{o:?}: {r:?}");
            }
        }
    }

    #[test]
    fn harness_self_test_on_mean_conv() {
        let x = random_leaf(&[1, 2, 6, 6], 11);
        let w = random_leaf(&[2, 2, 3, 3], 12);
        let opts = GradCheckOptions { tol: 1e-6, ..Default::default() };
        let r = gradient_check(|t| Ok(t[0].conv2d(&t[1], None, ConvOptions::same(3))?.mean()), &[x, w], &opts).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn transpose_gradients() {
        let opts = GradCheckOptions::default();
        for (xs, ws, o, op) in [
            ([1, 2, 3, 3], [2, 3, 3, 3], ConvOptions::new(2, 1), 1),
            ([2, 3, 4, 3], [3, 2, 3, 3], ConvOptions::same(3), 0),
        ] {
            for seed in 0..3 {
                let x = random_leaf(&xs, seed);
                let w = random_leaf(&ws, seed + 1);
                let b = random_leaf(&[ws[1]], seed + 2);
                let r = gradient_check(|t| Ok(t[0].conv_transpose2d(&t[1], Some(&t[2]), o, op)?.square().mean()), &[x, w, b], &opts).unwrap();
                assert!(r.passed, "{r:?}");
            }
        }
    }
}
