//! Spatial resampling: pooling, resizing and bilinear grid sampling on
//! `[N, C, H, W]` tensors.

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Half-pixel-centred linear interpolation taps for resizing `n_in` to `n_out`.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Source index for nearest-neighbour resampling (cell centre rule).
pub(crate) fn nearest_index(o: usize, n_in: usize, n_out: usize) -> usize {
    (((o as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
}

impl Tensor {
    fn nchw(&self, op: &'static str) -> Result<[usize; 4]> {
        self.expect_rank(op, 4)?;
        Ok([self.dim(0), self.dim(1), self.dim(2), self.dim(3)])
    }

    /// Average pooling with kernel 2, stride 2, padding 0.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("avg_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("avg_pool2", format!("{h}x{w} too small to pool")));
        }
        let x = self.data();
        let planes = n * c;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let b = p * h * w + 2 * oy * w + 2 * ox;
                    out[(p * oh + oy) * ow + ox] = 0.25 * (x[b] + x[b + 1] + x[b + w] + x[b + w + 1]);
                }
            }
        }
        Ok(Tensor::from_op("avg_pool2", out, vec![n, c, oh, ow], vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = 0.25 * g[(p * oh + oy) * ow + ox];
                        let b = p * h * w + 2 * oy * w + 2 * ox;
                        gx[b] += v;
                        gx[b + 1] += v;
                        gx[b + w] += v;
                        gx[b + w + 1] += v;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear resize to `oh × ow` with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("resize_bilinear")?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(shape_err("resize_bilinear", format!("{h}x{w} -> {oh}x{ow}")));
        }
        let ty = linear_taps(h, oh);
        let tx = linear_taps(w, ow);
        let x = self.data();
        let planes = n * c;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    out[(p * oh + oy) * ow + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        Ok(Tensor::from_op("resize_bilinear", out, vec![n, c, oh, ow], vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let gv = g[(p * oh + oy) * ow + ox];
                        dst[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                        dst[y0 * w + x1] += gv * (1.0 - wy) * wx;
                        dst[y1 * w + x0] += gv * wy * (1.0 - wx);
                        dst[y1 * w + x1] += gv * wy * wx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear ×2 upsampling.
    pub fn upsample2(&self) -> Result<Tensor> {
        let [_, _, h, w] = self.nchw("upsample2")?;
        self.resize_bilinear(2 * h, 2 * w)
    }

    /// Nearest-neighbour resize to `oh × ow`; output cell `o` reads input
    /// `floor((o + 0.5) · in / out)`.
    pub fn resize_nearest(&self, oh: usize, ow: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("resize_nearest")?;
        if oh == 0 || ow == 0 {
            return Err(shape_err("resize_nearest", format!("{h}x{w} -> {oh}x{ow}")));
        }
        let iy: Vec<usize> = (0..oh).map(|o| nearest_index(o, h, oh)).collect();
        let ix: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
        let planes = n * c;
        let x = self.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for &y in &iy {
                for &xx in &ix {
                    out.push(x[p * h * w + y * w + xx]);
                }
            }
        }
        Ok(Tensor::from_op("resize_nearest", out, vec![n, c, oh, ow], vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; planes * h * w];
            let mut k = 0;
            for p in 0..planes {
                for &y in &iy {
                    for &xx in &ix {
                        gx[p * h * w + y * w + xx] += g[k];
                        k += 1;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Samples `[N, C, H, W]` at `[N, P, 2]` pixel coordinates `(x, y)` by
    /// bilinear interpolation, returning `[N, C, P]`. Taps outside the image
    /// read zero. Gradients reach both the image and the coordinates.
    pub fn grid_sample_bilinear(&self, coords: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("grid_sample_bilinear")?;
        coords.expect_rank("grid_sample_bilinear", 3)?;
        if coords.dim(0) != n || coords.dim(2) != 2 {
            return Err(shape_err(
                "grid_sample_bilinear",
                format!("coords {:?} for input {:?}", coords.shape(), self.shape()),
            ));
        }
        if !coords.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("grid_sample_bilinear coordinates"));
        }
        let p = coords.dim(1);
        let taps = Taps::new(coords.data(), h, w);
        let x = self.data();
        let mut out = vec![0.0; n * c * p];
        for b in 0..n {
            for ch in 0..c {
                let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for q in 0..p {
                    out[(b * c + ch) * p + q] = taps.at(b * p + q).interpolate(plane);
                }
            }
        }
        let (img, crd) = (self.clone(), coords.clone());
        Ok(Tensor::from_op("grid_sample_bilinear", out, vec![n, c, p], vec![self.clone(), coords.clone()], move |g, _| {
            let x = img.data();
            let mut gx = img.is_tracked().then(|| vec![0.0; n * c * h * w]);
            let mut gc = crd.is_tracked().then(|| vec![0.0; n * p * 2]);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * h * w;
                    let plane = &x[off..off + h * w];
                    for q in 0..p {
                        let gv = g[(b * c + ch) * p + q];
                        if gv == 0.0 {
                            continue;
                        }
                        let t = taps.at(b * p + q);
                        if let Some(gx) = gx.as_mut() {
                            t.scatter(gv, &mut gx[off..off + h * w]);
                        }
                        if let Some(gc) = gc.as_mut() {
                            let (dx, dy) = t.coord_grad(plane);
                            gc[(b * p + q) * 2] += gv * dx;
                            gc[(b * p + q) * 2 + 1] += gv * dy;
                        }
                    }
                }
            }
            vec![gx, gc]
        }))
    }
}

/// Precomputed bilinear taps for a list of sample points.
struct Taps {
    x0: Vec<isize>,
    y0: Vec<isize>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    h: usize,
    w: usize,
}

struct Tap<'a> {
    taps: &'a Taps,
    i: usize,
}

impl Taps {
    fn new(coords: &[f64], h: usize, w: usize) -> Self {
        let m = coords.len() / 2;
        let mut t = Taps {
            x0: Vec::with_capacity(m),
            y0: Vec::with_capacity(m),
            wx: Vec::with_capacity(m),
            wy: Vec::with_capacity(m),
            h,
            w,
        };
        for pt in coords.chunks_exact(2) {
            let (fx, fy) = (pt[0].floor(), pt[1].floor());
            // Far-away points read nothing; saturate to avoid overflow.
            t.x0.push(fx.clamp(-2.0, w as f64 + 1.0) as isize);
            t.y0.push(fy.clamp(-2.0, h as f64 + 1.0) as isize);
            t.wx.push(pt[0] - fx);
            t.wy.push(pt[1] - fy);
        }
        t
    }

    fn at(&self, i: usize) -> Tap<'_> {
        Tap { taps: self, i }
    }
}

impl Tap<'_> {
    #[inline]
    fn index(&self, dy: isize, dx: isize) -> Option<usize> {
        let t = self.taps;
        let (y, x) = (t.y0[self.i] + dy, t.x0[self.i] + dx);
        (y >= 0 && x >= 0 && (y as usize) < t.h && (x as usize) < t.w).then(|| y as usize * t.w + x as usize)
    }

    #[inline]
    fn value(&self, plane: &[f64], dy: isize, dx: isize) -> f64 {
        self.index(dy, dx).map_or(0.0, |k| plane[k])
    }

    #[inline]
    fn interpolate(&self, plane: &[f64]) -> f64 {
        let (wx, wy) = (self.taps.wx[self.i], self.taps.wy[self.i]);
        let top = self.value(plane, 0, 0) * (1.0 - wx) + self.value(plane, 0, 1) * wx;
        let bot = self.value(plane, 1, 0) * (1.0 - wx) + self.value(plane, 1, 1) * wx;
        top * (1.0 - wy) + bot * wy
    }

    #[inline]
    fn scatter(&self, gv: f64, dst: &mut [f64]) {
        let (wx, wy) = (self.taps.wx[self.i], self.taps.wy[self.i]);
        for (dy, dx, wt) in [
            (0, 0, (1.0 - wy) * (1.0 - wx)),
            (0, 1, (1.0 - wy) * wx),
            (1, 0, wy * (1.0 - wx)),
            (1, 1, wy * wx),
        ] {
            if let Some(k) = self.index(dy, dx) {
                dst[k] += gv * wt;
            }
        }
    }

    #[inline]
    fn coord_grad(&self, plane: &[f64]) -> (f64, f64) {
        let (wx, wy) = (self.taps.wx[self.i], self.taps.wy[self.i]);
        let v00 = self.value(plane, 0, 0);
        let v01 = self.value(plane, 0, 1);
        let v10 = self.value(plane, 1, 0);
        let v11 = self.value(plane, 1, 1);
        let dx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10);
        let dy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01);
        (dx, dy)
    }
}
