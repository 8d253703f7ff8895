//! Census transform, disparity-guided warping, the census left-right
//! consistency loss, smooth-L1 disparity loss and the weighted total.

use crate::error::{arg_err, shape_err, Result};
use crate::matcher::warp_by_disparity;
use crate::tensor::Tensor;

/// How the sign of an intensity difference enters the census code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignMode {
    /// Exact `sgn`, zero gradient.
    Hard,
    /// `tanh(s·Δ)` in value and gradient.
    Soft(f64),
    /// Exact `sgn` forward, gradient of `tanh(s·Δ)` backward.
    StraightThrough(f64),
}

pub const SOFT_SIGN_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Smooth-L1 weights ordered full, 1/2, 1/3, 1/6, 1/12.
    pub lambda_l: [f64; 5],
    pub lambda_census: f64,
    pub epsilon: f64,
    pub k: usize,
    pub sign: SignMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l: [1.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0],
            lambda_census: 0.1,
            epsilon: 1e-3,
            k: 1,
            sign: SignMode::StraightThrough(SOFT_SIGN_SCALE),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l.iter().chain([&self.lambda_census]).any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(arg_err("loss_weights", "weights must be finite and non-negative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(arg_err("loss_weights", "epsilon must be positive"));
        }
        if self.k < 1 {
            return Err(arg_err("loss_weights", "census radius must be at least 1"));
        }
        Ok(())
    }
}

/// Dense ground-truth disparity `[N, 1, H, W]` with a 0/1 validity mask.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub disp: Tensor,
    pub valid: Tensor,
}

impl GroundTruth {
    pub fn new(disp: Tensor, valid: Tensor) -> Result<Self> {
        if disp.rank() != 4 || disp.shape()[1] != 1 || disp.shape() != valid.shape() {
            return Err(shape_err("ground_truth", format!("disparity {:?}, mask {:?}", disp.shape(), valid.shape())));
        }
        Ok(Self {
            disp: disp.detach(),
            valid: valid.detach(),
        })
    }

    /// Every pixel valid.
    pub fn dense(disp: Tensor) -> Result<Self> {
        let valid = Tensor::ones(disp.shape());
        Self::new(disp, valid)
    }

    /// Zero marks an invalid pixel.
    pub fn from_sparse(disp: Tensor) -> Result<Self> {
        let valid = Tensor::new(disp.data().iter().map(|&d| f64::from(u8::from(d > 0.0))).collect(), disp.shape())?;
        Self::new(disp, valid)
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.disp.shape()[2], self.disp.shape()[3])
    }

    pub fn num_valid(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v > 0.0).count()
    }

    /// Nearest cell-centre resampling to `h×w`; values are divided by the
    /// width ratio so they stay in the target resolution's pixels.
    pub fn downsample(&self, h: usize, w: usize) -> Result<Self> {
        let (_, w0) = self.extent();
        let disp = self.disp.resize_nearest(h, w)?.scale(w as f64 / w0 as f64);
        Self::new(disp, self.valid.resize_nearest(h, w)?)
    }
}

/// A mean over masked pixels; `empty` is set when no pixel counted and the
/// value is then 0.
#[derive(Debug, Clone)]
pub struct MaskedMean {
    pub value: Tensor,
    pub empty: bool,
}

fn masked_mean(x: &Tensor, mask: &Tensor) -> Result<MaskedMean> {
    let count: f64 = mask.data().iter().sum();
    if count == 0.0 {
        return Ok(MaskedMean {
            value: Tensor::scalar(0.0),
            empty: true,
        });
    }
    Ok(MaskedMean {
        value: x.mul(mask)?.sum().scale(1.0 / count),
        empty: false,
    })
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sign(delta: &Tensor, mode: SignMode) -> Tensor {
    match mode {
        SignMode::Hard => delta.straight_through(sgn, |_| 0.0),
        SignMode::Soft(s) => delta.scale(s).tanh(),
        SignMode::StraightThrough(s) => delta.straight_through(sgn, move |x| {
            let t = (s * x).tanh();
            s * (1.0 - t * t)
        }),
    }
}

fn pad_zero(x: &Tensor, k: usize) -> Result<Tensor> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let side = Tensor::zeros(&[n, c, h, k]);
    let row = Tensor::cat(&[side.clone(), x.clone(), side], 3)?;
    let cap = Tensor::zeros(&[n, c, k, w + 2 * k]);
    Tensor::cat(&[cap.clone(), row, cap], 2)
}

/// `Σ_{i,j ∈ [−k, k]} sgn(I(x+i, y+j) − I(x, y)) · 2^(|i|+|j|)` per channel of
/// `[N, C, H, W]`. Neighbours outside the frame count as equal.
pub fn census_transform(frame: &Tensor, k: usize, mode: SignMode) -> Result<Tensor> {
    if frame.rank() != 4 {
        return Err(shape_err("census_transform", format!("{:?}", frame.shape())));
    }
    if k < 1 {
        return Err(arg_err("census_transform", "k must be at least 1"));
    }
    let (h, w) = (frame.shape()[2], frame.shape()[3]);
    let padded = pad_zero(frame, k)?;
    let ki = k as isize;
    let mut acc: Option<Tensor> = None;
    for j in -ki..=ki {
        for i in -ki..=ki {
            if i == 0 && j == 0 {
                continue;
            }
            let mut mask = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (ny, nx) = (y as isize + j, x as isize + i);
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                        mask[y * w + x] = 1.0;
                    }
                }
            }
            let mask = Tensor::new(mask, &[1, 1, h, w])?;
            let nb = padded.narrow(2, (ki + j) as usize, h)?.narrow(3, (ki + i) as usize, w)?;
            let delta = nb.sub(frame)?.mul(&mask)?;
            let term = sign(&delta, mode).scale(2f64.powi((i.abs() + j.abs()) as i32));
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
    }
    Ok(acc.expect("window has neighbours"))
}

/// Scalar extreme of `x` with its gradient routed to the first extremal
/// element.
fn extreme(x: &Tensor, max: bool) -> Tensor {
    let d = x.data();
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        if (max && v > d[best]) || (!max && v < d[best]) {
            best = i;
        }
    }
    let n = d.len();
    Tensor::from_op(if max { "max" } else { "min" }, vec![d[best]], vec![], vec![x.clone()], move |g, _| {
        let mut gx = vec![0.0; n];
        gx[best] = g[0];
        vec![Some(gx)]
    })
}

/// Min-max normalization of each batch item to `[0, 255]`; constant frames
/// map to zero.
pub fn normalize_frames(x: &Tensor) -> Result<Tensor> {
    let items = x
        .unbind_batch()?
        .into_iter()
        .map(|f| {
            let (lo, hi) = (extreme(&f, false), extreme(&f, true));
            let range = hi.sub(&lo)?;
            let shifted = f.sub(&lo)?;
            if range.item() > 0.0 {
                Ok(shifted.div(&range)?.scale(255.0))
            } else {
                Ok(shifted.scale(0.0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::cat(&items, 0)
}

/// `Î_left(x, y) = I_right(x − d(x, y), y)` with a 0/1 mask that is zero
/// where `x − d < 0` or, if given, where `valid` is zero.
pub fn warp_right_to_left(right: &Tensor, disp: &Tensor, valid: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let warped = warp_by_disparity(right, disp)?;
    let (h, w) = (disp.shape()[2], disp.shape()[3]);
    let mask: Vec<f64> = disp
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let x = (i % w) as f64;
            let ok = x - d >= 0.0 && valid.is_none_or(|v| v.data()[i] > 0.0);
            f64::from(u8::from(ok))
        })
        .collect();
    let _ = h;
    Ok((warped, Tensor::new(mask, disp.shape())?))
}

/// Charbonnier distance between the census codes of the left frame and
/// the right frame warped by ground truth, averaged over valid pixels
/// whose whole census window warps inside the image.
pub fn census_loss(left: &Tensor, right: &Tensor, gt: &GroundTruth, w: &LossWeights) -> Result<MaskedMean> {
    if left.shape() != right.shape() || left.shape() != gt.disp.shape() {
        return Err(shape_err(
            "census_loss",
            format!("left {:?}, right {:?}, gt {:?}", left.shape(), right.shape(), gt.disp.shape()),
        ));
    }
    let (ln, rn) = (normalize_frames(left)?, normalize_frames(right)?);
    let (warped, _) = warp_right_to_left(&rn, &gt.disp, None)?;
    let width = left.shape()[3];
    let k = w.k as f64;
    let mask: Vec<f64> = gt
        .disp
        .data()
        .iter()
        .zip(gt.valid.data())
        .enumerate()
        .map(|(i, (&d, &v))| f64::from(u8::from(v > 0.0 && (i % width) as f64 - d - k >= 0.0)))
        .collect();
    let mask = Tensor::new(mask, left.shape())?;
    let diff = census_transform(&ln, w.k, w.sign)?.sub(&census_transform(&warped, w.k, w.sign)?)?;
    masked_mean(&charbonnier(&diff, w.epsilon), &mask)
}

/// Elementwise `sqrt(x² + ε²)`, exact at `x = 0`.
pub fn charbonnier(x: &Tensor, eps: f64) -> Tensor {
    let data = x.data().iter().map(|v| v.hypot(eps)).collect();
    let xs = x.to_vec();
    Tensor::from_op("charbonnier", data, x.shape().to_vec(), vec![x.clone()], move |g, out| {
        vec![Some(g.iter().zip(&xs).zip(out).map(|((g, x), o)| g * x / o).collect())]
    })
}

/// Elementwise `0.5x²` for `|x| < 1`, else `|x| − 0.5`.
pub fn smooth_l1_elementwise(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 }).collect();
    let xs = x.to_vec();
    Tensor::from_op("smooth_l1", data, x.shape().to_vec(), vec![x.clone()], move |g, _| {
        let gx = g
            .iter()
            .zip(&xs)
            .map(|(&g, &v)| g * if v.abs() < 1.0 { v } else { sgn(v) })
            .collect();
        vec![Some(gx)]
    })
}

/// Mean smooth-L1 of `pred − gt` over valid pixels.
pub fn smooth_l1(pred: &Tensor, gt: &GroundTruth) -> Result<MaskedMean> {
    if pred.shape() != gt.disp.shape() {
        return Err(shape_err("smooth_l1", format!("prediction {:?}, ground truth {:?}", pred.shape(), gt.disp.shape())));
    }
    masked_mean(&smooth_l1_elementwise(&pred.sub(&gt.disp)?), &gt.valid)
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    /// `Σ λ_l · smooth_l1_l`.
    pub weighted_l1: f64,
    /// Unweighted census term, 0 when disabled.
    pub census: f64,
    /// Scales (and the census term) that had no valid pixels.
    pub empty_terms: usize,
}

/// `Σ_l λ_l · smooth_l1(d_l, gt_l) + λ · census_loss`. Predictions are
/// ordered full, 1/2, 1/3, 1/6, 1/12; the ground truth is at full
/// resolution. The census term is skipped when `λ = 0`.
pub fn total_loss(preds: &[Tensor], gt: &GroundTruth, left: &Tensor, right: &Tensor, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    if preds.len() != 5 {
        return Err(arg_err("total_loss", format!("expected 5 prediction scales, got {}", preds.len())));
    }
    let mut total: Option<Tensor> = None;
    let mut empty_terms = 0;
    let mut weighted_l1 = 0.0;
    for (pred, &lambda) in preds.iter().zip(&w.lambda_l) {
        let (h, wd) = (pred.shape()[2], pred.shape()[3]);
        let g = if (h, wd) == gt.extent() { gt.clone() } else { gt.downsample(h, wd)? };
        let term = smooth_l1(pred, &g)?;
        empty_terms += usize::from(term.empty);
        let weighted = term.value.scale(lambda);
        weighted_l1 += weighted.item();
        total = Some(match total {
            None => weighted,
            Some(t) => t.add(&weighted)?,
        });
    }
    let mut total = total.expect("five scales");
    let mut census = 0.0;
    if w.lambda_census > 0.0 {
        let c = census_loss(left, right, gt, w)?;
        empty_terms += usize::from(c.empty);
        census = c.value.item();
        total = total.add(&c.value.scale(w.lambda_census))?;
    }
    Ok(LossBreakdown {
        total,
        weighted_l1,
        census,
        empty_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradient_check, random_leaf, random_tensor, GradCheckOptions};
    use proptest::prelude::*;

    fn frame(h: usize, w: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(v, &[1, 1, h, w]).unwrap()
    }

    fn census_oracle(img: &[f64], h: usize, w: usize, k: isize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let c = img[(y * w as isize + x) as usize];
                let mut s = 0.0;
                for j in -k..=k {
                    for i in -k..=k {
                        let (nx, ny) = (x + i, y + j);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let v = img[(ny * w as isize + nx) as usize];
                        let sg = if v > c { 1.0 } else if v < c { -1.0 } else { 0.0 };
                        s += sg * f64::from(1u32 << (i.abs() + j.abs()));
                    }
                }
                out[(y * w as isize + x) as usize] = s;
            }
        }
        out
    }

    #[test]
    fn census_cases() {
        let c = census_transform(&Tensor::full(&[1, 1, 4, 5], 3.0), 1, SignMode::Hard).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));

        let mut peak = vec![0.0; 9];
        peak[4] = 5.0;
        assert_eq!(census_transform(&frame(3, 3, peak), 1, SignMode::Hard).unwrap().data()[4], -24.0);

        let mut one = vec![1.0; 9];
        one[8] = 2.0;
        assert_eq!(census_transform(&frame(3, 3, one), 1, SignMode::Hard).unwrap().data()[4], 4.0);

        for (seed, k) in [(1, 1), (2, 2), (3, 3)] {
            let f = random_tensor(&[1, 1, 6, 7], seed);
            let got = census_transform(&f, k, SignMode::Hard).unwrap();
            assert_eq!(got.data(), census_oracle(f.data(), 6, 7, k as isize));
        }
    }

    proptest! {
        #[test]
        fn census_is_invariant_to_monotone_remaps(
            vals in prop::collection::vec(0u8..8, 30),
            a in 0.1f64..5.0,
            b in -10.0f64..10.0,
        ) {
            let f: Vec<f64> = vals.iter().map(|&v| f64::from(v)).collect();
            let g: Vec<f64> = f.iter().map(|&v| (a * v + b).exp() + v * v * v).collect();
            let c1 = census_transform(&frame(5, 6, f), 1, SignMode::Hard).unwrap();
            let c2 = census_transform(&frame(5, 6, g), 1, SignMode::Hard).unwrap();
            prop_assert_eq!(c1.data(), c2.data());
        }

        #[test]
        fn census_loss_at_least_epsilon(seed in 0u64..1000, d in 0.0f64..3.0) {
            let l = random_tensor(&[1, 1, 5, 8], seed);
            let r = random_tensor(&[1, 1, 5, 8], seed + 1);
            let gt = GroundTruth::dense(Tensor::full(&[1, 1, 5, 8], d)).unwrap();
            let w = LossWeights { sign: SignMode::Hard, ..LossWeights::default() };
            let v = census_loss(&l, &r, &gt, &w).unwrap().value.item();
            prop_assert!(v >= w.epsilon);
        }

        #[test]
        fn total_loss_non_negative_and_deterministic(seed in 0u64..500) {
            let preds: Vec<Tensor> = [(12, 24), (6, 12), (4, 8), (2, 4), (1, 2)]
                .iter()
                .enumerate()
                .map(|(i, &(h, w))| random_tensor(&[1, 1, h, w], seed + i as u64).abs())
                .collect();
            let gt = GroundTruth::dense(random_tensor(&[1, 1, 12, 24], seed + 9).abs()).unwrap();
            let l = random_tensor(&[1, 1, 12, 24], seed + 10);
            let r = random_tensor(&[1, 1, 12, 24], seed + 11);
            let w = LossWeights::default();
            let a = total_loss(&preds, &gt, &l, &r, &w).unwrap().total.item();
            let b = total_loss(&preds, &gt, &l, &r, &w).unwrap().total.item();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn warp_cases() {
        let right = frame(2, 3, vec![10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
        let (same, mask) = warp_right_to_left(&right, &Tensor::zeros(&[1, 1, 2, 3]), None).unwrap();
        assert_eq!(same.data(), right.data());
        assert!(mask.data().iter().all(|&m| m == 1.0));

        let (shifted, mask) = warp_right_to_left(&right, &Tensor::ones(&[1, 1, 2, 3]), None).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(&shifted.data()[1..3], &[10.0, 20.0]);

        let r = frame(1, 2, vec![0.0, 2.0]);
        let (half, _) = warp_right_to_left(&r, &frame(1, 2, vec![0.0, 0.5]), None).unwrap();
        assert_eq!(half.data()[1], 1.0);

        let valid = frame(1, 2, vec![1.0, 0.0]);
        let (_, mask) = warp_right_to_left(&r, &Tensor::zeros(&[1, 1, 1, 2]), Some(&valid)).unwrap();
        assert_eq!(mask.data(), &[1.0, 0.0]);
    }

    fn textured(h: usize, w: usize, seed: u64) -> Vec<f64> {
        random_tensor(&[h * w], seed).to_vec()
    }

    fn shifted_pair(h: usize, w: usize, d: usize, seed: u64) -> (Tensor, Tensor) {
        // left(x) = right(x − d)
        let scene = textured(h, w + d, seed);
        let mut l = vec![0.0; h * w];
        let mut r = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                l[y * w + x] = scene[y * (w + d) + x];
                r[y * w + x] = scene[y * (w + d) + x + d];
            }
        }
        (frame(h, w, l), frame(h, w, r))
    }

    #[test]
    fn census_loss_consistency() {
        let w = LossWeights { sign: SignMode::Hard, ..LossWeights::default() };
        let l = random_tensor(&[1, 1, 6, 9], 3);
        let gt0 = GroundTruth::dense(Tensor::zeros(&[1, 1, 6, 9])).unwrap();
        let c = census_loss(&l, &l, &gt0, &w).unwrap();
        assert!((c.value.item() - w.epsilon).abs() <= 1e-15);

        let (l, r) = shifted_pair(10, 20, 3, 5);
        let gt = GroundTruth::dense(Tensor::full(&[1, 1, 10, 20], 3.0)).unwrap();
        let c = census_loss(&l, &r, &gt, &w).unwrap();
        assert!(!c.empty);
        assert!((c.value.item() - w.epsilon).abs() < 1e-9);

        let off = GroundTruth::dense(Tensor::full(&[1, 1, 10, 20], 5.0)).unwrap();
        assert!(census_loss(&l, &r, &off, &w).unwrap().value.item() > c.value.item());
    }

    #[test]
    fn census_loss_empty_mask() {
        let l = random_tensor(&[1, 1, 3, 4], 1);
        let gt = GroundTruth::new(Tensor::zeros(&[1, 1, 3, 4]), Tensor::zeros(&[1, 1, 3, 4])).unwrap();
        let c = census_loss(&l, &l, &gt, &LossWeights::default()).unwrap();
        assert!(c.empty);
        assert_eq!(c.value.item(), 0.0);
    }

    #[test]
    fn smooth_l1_cases() {
        let gt = GroundTruth::dense(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        for (x, want) in [(0.5, 0.125), (-2.0, 1.5), (1.0, 0.5)] {
            assert_eq!(smooth_l1(&frame(1, 1, vec![x]), &gt).unwrap().value.item(), want);
        }
        let none = GroundTruth::new(Tensor::zeros(&[1, 1, 1, 1]), Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        assert!(smooth_l1(&frame(1, 1, vec![3.0]), &none).unwrap().empty);

        let f = |x: f64| smooth_l1_elementwise(&Tensor::scalar(x)).item();
        for x0 in [1.0, -1.0] {
            let h = 1e-7;
            let left = (f(x0) - f(x0 - h)) / h;
            let right = (f(x0 + h) - f(x0)) / h;
            assert!((left - right).abs() < 1e-6, "{left} {right}");
        }
    }

    fn perfect_setup() -> (Vec<Tensor>, GroundTruth, Tensor, Tensor) {
        let (l, r) = shifted_pair(12, 24, 2, 7);
        let gt = GroundTruth::dense(Tensor::full(&[1, 1, 12, 24], 2.0)).unwrap();
        let preds = [(12, 24), (6, 12), (4, 8), (2, 4), (1, 2)]
            .iter()
            .map(|&(h, w)| Tensor::full(&[1, 1, h, w], 2.0 * w as f64 / 24.0))
            .collect();
        (preds, gt, l, r)
    }

    #[test]
    fn total_loss_cases() {
        let (preds, gt, l, r) = perfect_setup();
        let w = LossWeights { sign: SignMode::Hard, ..LossWeights::default() };
        let t = total_loss(&preds, &gt, &l, &r, &w).unwrap();
        assert!((t.total.item() - w.lambda_census * w.epsilon).abs() < 1e-12, "{t:?}");

        let noisy: Vec<Tensor> = preds.iter().enumerate().map(|(i, p)| p.add(&random_tensor(p.shape(), i as u64)).unwrap()).collect();
        let w0 = LossWeights { lambda_census: 0.0, ..w.clone() };
        let t = total_loss(&noisy, &gt, &l, &r, &w0).unwrap();
        let mut want = 0.0;
        for (p, lam) in noisy.iter().zip(w.lambda_l) {
            let g = gt.downsample(p.shape()[2], p.shape()[3]).unwrap();
            want += lam * smooth_l1(p, &g).unwrap().value.item();
        }
        assert!((t.total.item() - want).abs() < 1e-12);
        assert_eq!(t.census, 0.0);

        assert!(total_loss(&noisy[..4], &gt, &l, &r, &w).is_err());
    }

    #[test]
    fn total_loss_gradients() {
        // a gentle slope keeps finite differences of the soft sign accurate
        let w = LossWeights { sign: SignMode::Soft(0.05), ..LossWeights::default() };
        let gt = GroundTruth::dense(Tensor::full(&[1, 1, 12, 24], 2.0)).unwrap();
        for seed in 0..3 {
            let preds: Vec<Tensor> = [(12, 24), (6, 12), (4, 8), (2, 4), (1, 2)]
                .iter()
                .enumerate()
                .map(|(i, &(h, w))| random_leaf(&[1, 1, h, w], seed * 10 + i as u64))
                .collect();
            // unrelated frames keep census differences away from the
            // Charbonnier minimum, where curvature is 1/ε
            let mut inputs = preds;
            inputs.push(random_leaf(&[1, 1, 12, 24], seed + 100));
            inputs.push(random_leaf(&[1, 1, 12, 24], seed + 200));
            let rep = gradient_check(
                |t| Ok(total_loss(&t[..5], &gt, &t[5], &t[6], &w)?.total),
                &inputs,
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn straight_through_matches_hard_value() {
        let f = random_tensor(&[1, 1, 5, 5], 4);
        let h = census_transform(&f, 1, SignMode::Hard).unwrap();
        let s = census_transform(&f, 1, SignMode::StraightThrough(10.0)).unwrap();
        assert_eq!(h.data(), s.data());
        let leaf = f.requires_grad();
        census_transform(&leaf, 1, SignMode::StraightThrough(10.0)).unwrap().sum().backward().unwrap();
        assert!(leaf.grad().unwrap().iter().any(|&g| g != 0.0));
    }
}
