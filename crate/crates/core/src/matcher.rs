//! Correlation cost volumes, intra- and cross-scale aggregation, soft
//! winner-take-all regression and two-stage disparity refinement.
//!
//! Every disparity map is `[N, 1, h, w]` in the pixel units of its own
//! resolution.

use crate::error::{arg_err, shape_err, Result};
use crate::mga::{Pyramid, PYRAMID_STRIDES};
use crate::nn::{Conv2d, ConvModule, Ctx, Init, ParamStore, LEAKY_SLOPE};
use crate::tensor::{ConvOptions, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherConfig {
    /// Largest disparity at full resolution, in pixels.
    pub d_max: usize,
    /// Softmax temperature of the disparity regression.
    pub temperature: f64,
    pub refine_width: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            d_max: 48,
            temperature: 1.0,
            refine_width: 32,
        }
    }
}

/// Candidate count at a level of the given stride.
pub fn candidates(d_max: usize, stride: usize) -> usize {
    d_max.div_ceil(stride)
}

/// `C(d, y, x) = ⟨L(:, y, x), R(:, y, x − d)⟩ / C` for `d < count`, zero
/// where `x − d` leaves the image. Returns `[N, count, H, W]`.
pub fn correlation(left: &Tensor, right: &Tensor, count: usize) -> Result<Tensor> {
    if left.rank() != 4 || left.shape() != right.shape() {
        return Err(shape_err("correlation", format!("{:?} vs {:?}", left.shape(), right.shape())));
    }
    let [n, c, h, w] = [left.shape()[0], left.shape()[1], left.shape()[2], left.shape()[3]];
    if count == 0 || count > w {
        return Err(arg_err("correlation", format!("{count} candidates for width {w}")));
    }
    let inv = 1.0 / c as f64;
    let (l, r) = (left.data(), right.data());
    let plane = h * w;
    let mut out = vec![0.0; n * count * plane];
    for b in 0..n {
        for d in 0..count {
            let dst = &mut out[(b * count + d) * plane..(b * count + d + 1) * plane];
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for y in 0..h {
                    let lr = &l[base + y * w..base + (y + 1) * w];
                    let rr = &r[base + y * w..base + (y + 1) * w];
                    for x in d..w {
                        dst[y * w + x] += lr[x] * rr[x - d];
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
    }
    let (lt, rt) = (left.clone(), right.clone());
    Ok(Tensor::from_op("correlation", out, vec![n, count, h, w], vec![left.clone(), right.clone()], move |g, _| {
        let (l, r) = (lt.data(), rt.data());
        let mut gl = vec![0.0; l.len()];
        let mut gr = vec![0.0; r.len()];
        for b in 0..n {
            for d in 0..count {
                let gp = &g[(b * count + d) * plane..(b * count + d + 1) * plane];
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for y in 0..h {
                        for x in d..w {
                            let gv = gp[y * w + x] * inv;
                            gl[base + y * w + x] += gv * r[base + y * w + x - d];
                            gr[base + y * w + x - d] += gv * l[base + y * w + x];
                        }
                    }
                }
            }
        }
        vec![Some(gl), Some(gr)]
    }))
}

/// One cost volume per pyramid level.
pub fn build_cost_volume(left: &Pyramid, right: &Pyramid, d_max: usize) -> Result<Vec<Tensor>> {
    if d_max == 0 {
        return Err(arg_err("build_cost_volume", "d_max must be at least 1"));
    }
    (0..3)
        .map(|l| correlation(&left[l], &right[l], candidates(d_max, PYRAMID_STRIDES[l])))
        .collect()
}

/// 3×3 deformable convolution whose per-tap offsets come from a sibling
/// convolution.
pub struct DeformConv {
    pub weight: crate::nn::ParamId,
    pub bias: crate::nn::ParamId,
    pub offset: Conv2d,
}

impl DeformConv {
    /// Starts as the identity map: centre-tap kernel, zero offsets.
    pub fn identity(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels * 9];
        for c in 0..channels {
            w[(c * channels + c) * 9 + 4] = 1.0;
        }
        let weight = store.param(format!("{name}.weight"), Tensor::new(w, &[channels, channels, 3, 3]).expect("kernel"));
        let bias = store.param(format!("{name}.bias"), Tensor::zeros(&[channels]));
        let offset = Conv2d::zeros(store, &format!("{name}.offset"), channels, 18, 3, ConvOptions::same(3));
        Self { weight, bias, offset }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let off = self.offset.forward(cx, x)?;
        deform_conv3x3(x, &off, &cx.p(self.weight), &cx.p(self.bias))
    }
}

/// Deformable 3×3 convolution with stride 1 and padding 1: tap `(i, j)` of
/// output pixel `(y, x)` reads `x + j − 1 + off[2t]`, `y + i − 1 + off[2t+1]`
/// with `t = 3i + j`, bilinearly with zero outside.
pub fn deform_conv3x3(x: &Tensor, offsets: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = match x.shape() {
        &[n, c, h, w] => [n, c, h, w],
        s => return Err(shape_err("deform_conv", format!("input {s:?}"))),
    };
    if offsets.shape() != [n, 18, h, w] || weight.rank() != 4 || weight.shape()[1..] != [c, 3, 3] {
        return Err(shape_err(
            "deform_conv",
            format!("input {:?}, offsets {:?}, weight {:?}", x.shape(), offsets.shape(), weight.shape()),
        ));
    }
    let f = weight.shape()[0];
    let hw = h * w;
    let mut grid = Vec::with_capacity(hw * 2);
    for y in 0..h {
        for xx in 0..w {
            grid.push(xx as f64);
            grid.push(y as f64);
        }
    }
    let grid = Tensor::new(grid, &[1, hw, 2])?;
    let off = offsets.reshape(&[n, 9, 2, hw])?.permute(&[0, 1, 3, 2])?;
    let mut taps = Vec::with_capacity(9);
    for t in 0..9 {
        let shift = Tensor::new(vec![(t % 3) as f64 - 1.0, (t / 3) as f64 - 1.0], &[1, 1, 2])?;
        let coords = off.narrow(1, t, 1)?.reshape(&[n, hw, 2])?.add(&grid)?.add(&shift)?;
        taps.push(x.grid_sample_bilinear(&coords)?.reshape(&[n, c, 1, hw])?);
    }
    let cols = Tensor::cat(&taps, 2)?.reshape(&[n, c * 9, hw])?;
    let wm = weight.reshape(&[f, c * 9])?;
    let outs = cols
        .unbind_batch()?
        .iter()
        .map(|col| wm.matmul(&col.reshape(&[c * 9, hw])?))
        .collect::<Result<Vec<_>>>()?;
    let stacked = Tensor::cat(&outs, 0)?.reshape(&[n, f, h, w])?;
    stacked.add(&bias.reshape(&[1, f, 1, 1])?)
}

/// Resampling branch from level `k` into level `l`.
enum Branch {
    Identity,
    Down(Vec<Conv2d>),
    Up(Conv2d),
}

/// Cross-scale aggregation: each level sums every level resampled to it.
pub struct Csa {
    branches: Vec<Vec<Branch>>,
}

impl Csa {
    /// `channels[l]` is the candidate count of level `l`, finest first.
    /// The last convolution of every non-identity branch starts at zero.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: &[usize]) -> Self {
        let branches = (0..channels.len())
            .map(|l| {
                (0..channels.len())
                    .map(|k| {
                        let pre = format!("{name}.{k}to{l}");
                        if k == l {
                            Branch::Identity
                        } else if k < l {
                            let steps = l - k;
                            let s2 = ConvOptions::new(2, 1);
                            let mut convs: Vec<Conv2d> = (0..steps - 1)
                                .map(|i| Conv2d::new(store, init, &format!("{pre}.{i}"), channels[k], channels[k], 3, s2))
                                .collect();
                            convs.push(Conv2d::zeros(store, &format!("{pre}.{}", steps - 1), channels[k], channels[l], 3, s2));
                            Branch::Down(convs)
                        } else {
                            Branch::Up(Conv2d::zeros(store, &pre, channels[k], channels[l], 1, ConvOptions::default()))
                        }
                    })
                    .collect()
            })
            .collect();
        Self { branches }
    }

    pub fn forward(&self, cx: &Ctx, volumes: &[Tensor]) -> Result<Vec<Tensor>> {
        if volumes.len() != self.branches.len() {
            return Err(shape_err("csa_aggregate", format!("{} levels, expected {}", volumes.len(), self.branches.len())));
        }
        self.branches
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let (h, w) = (volumes[l].shape()[2], volumes[l].shape()[3]);
                let mut acc: Option<Tensor> = None;
                for (k, br) in row.iter().enumerate() {
                    let term = match br {
                        Branch::Identity => volumes[k].clone(),
                        Branch::Down(convs) => {
                            let mut y = volumes[k].clone();
                            for (i, conv) in convs.iter().enumerate() {
                                y = conv.forward(cx, &y)?;
                                if i + 1 < convs.len() {
                                    y = y.leaky_relu(LEAKY_SLOPE);
                                }
                            }
                            y
                        }
                        Branch::Up(conv) => conv.forward(cx, &volumes[k].resize_bilinear(h, w)?)?,
                    };
                    if term.shape()[2..] != [h, w] {
                        return Err(shape_err("csa_aggregate", format!("level {k} resampled to {:?}, need {h}x{w}", term.shape())));
                    }
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a.add(&term)?,
                    });
                }
                Ok(acc.expect("non-empty"))
            })
            .collect()
    }
}

/// Soft winner-take-all over the candidate axis of `[N, D, H, W]`:
/// `Σ_d d · softmax(C / T)`, returned as `[N, 1, H, W]`.
pub fn soft_wta(volume: &Tensor, temperature: f64) -> Result<Tensor> {
    if volume.rank() != 4 {
        return Err(shape_err("estimate_disparity", format!("{:?}", volume.shape())));
    }
    let d = volume.shape()[1];
    let p = volume.scale(1.0 / temperature).softmax(1)?;
    let idx = Tensor::new((0..d).map(|v| v as f64).collect(), &[1, d, 1, 1])?;
    p.mul(&idx)?.sum_axis(1)
}

/// Index of the largest cost per pixel (first on ties), `[N, 1, H, W]`.
pub fn hard_wta(volume: &Tensor) -> Result<Tensor> {
    let [n, d, h, w] = match volume.shape() {
        &[n, d, h, w] => [n, d, h, w],
        s => return Err(shape_err("hard_wta", format!("{s:?}"))),
    };
    let v = volume.data();
    let hw = h * w;
    let mut out = vec![0.0; n * hw];
    for b in 0..n {
        for k in 0..hw {
            let mut best = 0;
            for c in 1..d {
                if v[(b * d + c) * hw + k] > v[(b * d + best) * hw + k] {
                    best = c;
                }
            }
            out[b * hw + k] = best as f64;
        }
    }
    Tensor::new(out, &[n, 1, h, w])
}

/// Samples `image` `[N, C, H, W]` at `(x − d(x, y), y)`.
pub fn warp_by_disparity(image: &Tensor, disparity: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = match image.shape() {
        &[n, c, h, w] => [n, c, h, w],
        s => return Err(shape_err("warp", format!("image {s:?}"))),
    };
    if disparity.shape() != [n, 1, h, w] {
        return Err(shape_err("warp", format!("disparity {:?} for image {:?}", disparity.shape(), image.shape())));
    }
    let mut grid = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            grid.push(x as f64);
            grid.push(y as f64);
        }
    }
    let grid = Tensor::new(grid, &[1, h * w, 2])?;
    let dx = disparity.reshape(&[n, h * w, 1])?;
    let shift = Tensor::cat(&[dx.clone(), dx.scale(0.0)], 2)?;
    let coords = grid.sub(&shift)?;
    image.grid_sample_bilinear(&coords)?.reshape(&[n, c, h, w])
}

/// Dilated residual refinement at one resolution.
pub struct Refine {
    convs: Vec<ConvModule>,
    head: Conv2d,
}

pub const REFINE_DILATIONS: [usize; 5] = [1, 2, 4, 8, 1];

impl Refine {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, width: usize) -> Self {
        let convs = REFINE_DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| ConvModule::new(store, init, &format!("{name}.conv{i}"), if i == 0 { 3 } else { width }, width, ConvOptions::dilated(d)))
            .collect();
        let head = Conv2d::zeros(store, &format!("{name}.head"), width, 1, 3, ConvOptions::same(3));
        Self { convs, head }
    }

    /// Upsamples `coarse` to the frames' extent (scaling its values by the
    /// resolution ratio), then adds a residual predicted from the left
    /// frame, the left-minus-warped-right error and the disparity. The
    /// result is clamped to `[0, d_limit]`.
    pub fn forward(&self, cx: &Ctx, coarse: &Tensor, left: &Tensor, right: &Tensor, d_limit: f64) -> Result<Tensor> {
        let (h, w) = (left.shape()[2], left.shape()[3]);
        let ratio = w as f64 / coarse.shape()[3] as f64;
        let up = coarse.resize_bilinear(h, w)?.scale(ratio);
        let warped = warp_by_disparity(right, &up)?;
        let mut y = Tensor::cat(&[left.clone(), left.sub(&warped)?, up.clone()], 1)?;
        for c in &self.convs {
            y = c.forward(cx, &y)?;
        }
        Ok(up.add(&self.head.forward(cx, &y)?)?.clamp(0.0, d_limit))
    }
}

pub struct Matcher {
    pub cfg: MatcherConfig,
    pub isa: Vec<DeformConv>,
    pub csa: Csa,
    pub refine: [Refine; 2],
}

/// Disparity maps ordered full, 1/2, 1/3, 1/6, 1/12.
pub type Scales = [Tensor; 5];

pub const OUTPUT_FACTORS: [usize; 5] = [1, 2, 3, 6, 12];

impl Matcher {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: MatcherConfig) -> Self {
        let ch: Vec<usize> = PYRAMID_STRIDES.iter().map(|&s| candidates(cfg.d_max, s)).collect();
        Self {
            isa: ch.iter().enumerate().map(|(l, &c)| DeformConv::identity(store, &format!("{name}.isa{l}"), c)).collect(),
            csa: Csa::new(store, init, &format!("{name}.csa"), &ch),
            refine: [
                Refine::new(store, init, &format!("{name}.refine_half"), cfg.refine_width),
                Refine::new(store, init, &format!("{name}.refine_full"), cfg.refine_width),
            ],
            cfg,
        }
    }

    /// Aggregated volumes of the three pyramid levels.
    pub fn aggregate(&self, cx: &Ctx, left: &Pyramid, right: &Pyramid) -> Result<Vec<Tensor>> {
        let raw = build_cost_volume(left, right, self.cfg.d_max)?;
        let isa = raw.iter().zip(&self.isa).map(|(v, m)| m.forward(cx, v)).collect::<Result<Vec<_>>>()?;
        self.csa.forward(cx, &isa)
    }

    /// `left_frame`/`right_frame` are `[N, 1, H, W]` at full resolution.
    pub fn forward(&self, cx: &Ctx, left: &Pyramid, right: &Pyramid, left_frame: &Tensor, right_frame: &Tensor) -> Result<Scales> {
        let vols = self.aggregate(cx, left, right)?;
        let coarse = vols.iter().map(|v| soft_wta(v, self.cfg.temperature)).collect::<Result<Vec<_>>>()?;
        let (h, w) = (left_frame.shape()[2], left_frame.shape()[3]);
        let (lh, rh) = (left_frame.resize_bilinear(h / 2, w / 2)?, right_frame.resize_bilinear(h / 2, w / 2)?);
        let d_max = self.cfg.d_max as f64;
        let half = self.refine[0].forward(cx, &coarse[0], &lh, &rh, d_max / 2.0)?;
        let full = self.refine[1].forward(cx, &half, left_frame, right_frame, d_max)?;
        Ok([full, half, coarse[0].clone(), coarse[1].clone(), coarse[2].clone()])
    }
}
