//! Disparity error metrics and frame-similarity scores.

use std::fmt::Write as _;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::losses::{warp_right_to_left, GroundTruth};
use crate::tensor::Tensor;

pub const MAX_I: f64 = 255.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 2.55 * 2.55;
pub const SSIM_C2: f64 = 7.65 * 7.65;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage of valid pixels with error above 1 px.
    pub pe1: f64,
    /// Percentage of valid pixels with error above 2 px.
    pub pe2: f64,
    pub n_valid: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// Errors of `pred` against `gt` over pixels where `valid` holds.
pub fn disparity_metrics(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<MetricReport> {
    if pred.len() != gt.len() || gt.len() != valid.len() {
        return Err(shape_err("disparity_metrics", format!("{} / {} / {} pixels", pred.len(), gt.len(), valid.len())));
    }
    let (mut abs, mut sq, mut over1, mut over2, mut n) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for ((&p, &g), &v) in pred.iter().zip(gt).zip(valid) {
        if !v {
            continue;
        }
        let e = (p - g).abs();
        abs += e;
        sq += e * e;
        over1 += usize::from(e > 1.0);
        over2 += usize::from(e > 2.0);
        n += 1;
    }
    if n == 0 {
        return Err(arg_err("disparity_metrics", "no valid pixels"));
    }
    let nf = n as f64;
    Ok(MetricReport {
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        pe1: 100.0 * over1 as f64 / nf,
        pe2: 100.0 * over2 as f64 / nf,
        n_valid: n,
        psnr: None,
        ssim: None,
    })
}

/// Metrics of a predicted `[N, 1, H, W]` map against ground truth.
pub fn evaluate(pred: &Tensor, gt: &GroundTruth) -> Result<MetricReport> {
    if pred.shape() != gt.disp.shape() {
        return Err(shape_err("evaluate", format!("prediction {:?}, ground truth {:?}", pred.shape(), gt.disp.shape())));
    }
    let valid: Vec<bool> = gt.valid.data().iter().map(|&v| v > 0.0).collect();
    disparity_metrics(pred.data(), gt.disp.data(), &valid)
}

/// `10·log10(255² / MSE)`; infinite when the frames are identical.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(shape_err("psnr", format!("{} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_I * MAX_I / mse).log10()
    }
}

fn patch_ssim(a: &[f64], b: &[f64], w: usize, y0: usize, x0: usize) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            sa += a[y * w + x];
            sb += b[y * w + x];
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            let (da, db) = (a[y * w + x] - ma, b[y * w + x] - mb);
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Mean local SSIM over every full 7×7 patch of two `h×w` frames. With a
/// mask, only patches lying entirely on masked-in pixels count.
pub fn ssim_masked(a: &[f64], b: &[f64], h: usize, w: usize, mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w || mask.is_some_and(|m| m.len() != h * w) {
        return Err(shape_err("ssim", format!("{} / {} values for {h}x{w}", a.len(), b.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(arg_err("ssim", format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            if let Some(m) = mask {
                let inside = (y0..y0 + SSIM_WINDOW).all(|y| (x0..x0 + SSIM_WINDOW).all(|x| m[y * w + x]));
                if !inside {
                    continue;
                }
            }
            sum += patch_ssim(a, b, w, y0, x0);
            count += 1;
        }
    }
    if count == 0 {
        return Err(arg_err("ssim", "no complete patch inside the mask"));
    }
    Ok(sum / count as f64)
}

pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    ssim_masked(a, b, h, w, None)
}

/// Maps both frames to `[0, 255]` with one min-max taken over the pair.
pub fn normalize_pair(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let s = if hi > lo { MAX_I / (hi - lo) } else { 0.0 };
    let f = |v: &[f64]| v.iter().map(|&x| (x - lo) * s).collect();
    (f(a), f(b))
}

/// PSNR and SSIM between the left frame and the right frame warped by
/// ground truth, both `[1, 1, H, W]`. Pixels whose warp leaves the image or
/// lacks ground truth are excluded (SSIM keeps patches free of them).
pub fn lr_consistency(left: &Tensor, right: &Tensor, gt: &GroundTruth) -> Result<(f64, f64)> {
    if left.shape() != right.shape() || left.shape() != gt.disp.shape() || left.shape()[0] != 1 {
        return Err(shape_err("lr_consistency", format!("left {:?}, right {:?}, gt {:?}", left.shape(), right.shape(), gt.disp.shape())));
    }
    let (h, w) = gt.extent();
    let (warped, mask) = warp_right_to_left(right, &gt.disp, Some(&gt.valid))?;
    let mask: Vec<bool> = mask.data().iter().map(|&m| m > 0.0).collect();
    let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect() };
    let (lv, wv) = (pick(left.data()), pick(warped.data()));
    if lv.is_empty() {
        return Err(arg_err("lr_consistency", "no valid pixels"));
    }
    // normalization statistics come from the counted pixels only
    let lo = lv.iter().chain(&wv).copied().fold(f64::INFINITY, f64::min);
    let hi = lv.iter().chain(&wv).copied().fold(f64::NEG_INFINITY, f64::max);
    let s = if hi > lo { MAX_I / (hi - lo) } else { 0.0 };
    let norm = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| ((x - lo) * s).clamp(0.0, MAX_I)).collect() };
    let p = psnr(&norm(&lv), &norm(&wv))?;
    let q = ssim_masked(&norm(left.data()), &norm(warped.data()), h, w, Some(&mask))?;
    Ok((p, q))
}

const KEYS: [&str; 7] = ["mae", "rmse", "pe1", "pe2", "n_valid", "psnr", "ssim"];

impl MetricReport {
    /// One `key=value` line per metric in a fixed order; absent optional
    /// metrics are omitted.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mae={}", self.mae);
        let _ = writeln!(s, "rmse={}", self.rmse);
        let _ = writeln!(s, "pe1={}", self.pe1);
        let _ = writeln!(s, "pe2={}", self.pe2);
        let _ = writeln!(s, "n_valid={}", self.n_valid);
        if let Some(p) = self.psnr {
            let _ = writeln!(s, "psnr={p}");
        }
        if let Some(q) = self.ssim {
            let _ = writeln!(s, "ssim={q}");
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = MetricReport {
            mae: f64::NAN,
            rmse: f64::NAN,
            pe1: f64::NAN,
            pe2: f64::NAN,
            n_valid: 0,
            psnr: None,
            ssim: None,
        };
        let mut seen = [false; 5];
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |detail: String| Error::Config { line: i + 1, detail };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let slot = KEYS.iter().position(|&x| x == k).ok_or_else(|| bad(format!("unknown metric `{k}`")))?;
            if slot == 4 {
                r.n_valid = v.parse().map_err(|_| bad(format!("bad count `{v}`")))?;
            } else {
                let f: f64 = v.parse().map_err(|_| bad(format!("bad number `{v}`")))?;
                match slot {
                    0 => r.mae = f,
                    1 => r.rmse = f,
                    2 => r.pe1 = f,
                    3 => r.pe2 = f,
                    5 => r.psnr = Some(f),
                    _ => r.ssim = Some(f),
                }
            }
            if slot < 5 {
                seen[slot] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Config {
                line: 0,
                detail: format!("missing metric `{}`", KEYS[missing]),
            });
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disparity_cases() {
        let r = disparity_metrics(&[1.0, 2.0], &[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!((r.mae, r.rmse, r.pe1, r.pe2), (0.0, 0.0, 0.0, 0.0));

        let r = disparity_metrics(&[3.0, 4.0], &[0.0, 0.0], &[true, true]).unwrap();
        assert_eq!(r.mae, 3.5);
        assert!((r.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((r.rmse - 3.5355).abs() < 1e-4);
        assert_eq!((r.pe1, r.pe2), (100.0, 100.0));

        let r = disparity_metrics(&[0.5, 1.5, 3.0, 9.0], &[0.0; 4], &[true, true, true, false]).unwrap();
        assert!((r.pe1 - 66.67).abs() < 0.01);
        assert!((r.pe2 - 33.33).abs() < 0.01);
        assert_eq!(r.n_valid, 3);

        assert!(disparity_metrics(&[1.0], &[1.0], &[false]).is_err());
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
            let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
            let mut valid: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
            valid[0] = true;
            // oracle: collect the valid errors first, then reduce
            let errs: Vec<f64> = (0..n).filter(|&i| valid[i]).map(|i| pred[i] - gt[i]).collect();
            let m = errs.len() as f64;
            let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / m;
            let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
            let pe = |d: f64| errs.iter().filter(|e| e.abs() > d).count() as f64 * 100.0 / m;
            let r = disparity_metrics(&pred, &gt, &valid).unwrap();
            assert!((r.mae - mae).abs() < 1e-9);
            assert!((r.rmse - rmse).abs() < 1e-9);
            assert!((r.pe1 - pe(1.0)).abs() < 1e-9);
            assert!((r.pe2 - pe(2.0)).abs() < 1e-9);
            assert!(r.mae <= r.rmse + 1e-12);
            assert!(0.0 <= r.pe2 && r.pe2 <= r.pe1 && r.pe1 <= 100.0);
        }
    }

    #[test]
    fn psnr_cases() {
        assert_eq!(psnr(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&[255.0], &[0.0]).unwrap(), 0.0);
        assert!((psnr(&[1.0, 5.0], &[0.0, 4.0]).unwrap() - 48.131).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let p = psnr_from_mse(i as f64 * 0.37);
            assert!(p < prev);
            prev = p;
        }
    }

    fn random_frame(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..255.0)).collect()
    }

    #[test]
    fn ssim_cases() {
        let a = random_frame(1, 100);
        assert!((ssim(&a, &a, 10, 10).unwrap() - 1.0).abs() < 1e-12);
        let s = ssim(&[255.0; 49], &[0.0; 49], 7, 7).unwrap();
        assert!((s - SSIM_C1 / (255.0 * 255.0 + SSIM_C1)).abs() < 1e-15);
        assert!((s - 1.0000e-4).abs() < 1e-8);
        let b = random_frame(2, 100);
        assert_eq!(ssim(&a, &b, 10, 10).unwrap(), ssim(&b, &a, 10, 10).unwrap());
        assert!(ssim(&a[..36], &b[..36], 6, 6).is_err());

        // a single differing pixel lowers every patch that contains it
        let mut c = a.clone();
        c[55] += 10.0;
        assert!(ssim(&a, &c, 10, 10).unwrap() < 1.0);
    }

    proptest! {
        #[test]
        fn ssim_in_range(seed in 0u64..10_000) {
            let a = random_frame(seed, 81);
            let b = random_frame(seed + 1, 81);
            let s = ssim(&a, &b, 9, 9).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn report_roundtrip() {
        let r = MetricReport {
            mae: 0.1,
            rmse: 1.0 / 3.0,
            pe1: 12.5,
            pe2: 0.0,
            n_valid: 42,
            psnr: Some(f64::INFINITY),
            ssim: Some(0.875),
        };
        let text = r.to_kv();
        assert!(text.contains("psnr=inf\n"));
        assert_eq!(text.lines().next(), Some("mae=0.1"));
        assert_eq!(MetricReport::from_kv(&text).unwrap(), r);
        assert!(MetricReport::from_kv("mae=1\n").is_err());
        assert!(MetricReport::from_kv("bogus=1\n").is_err());
    }

    #[test]
    fn lr_consistency_of_matching_frames() {
        let (h, w) = (10, 16);
        let scene = random_frame(5, h * (w + 2));
        let mut l = vec![0.0; h * w];
        let mut r = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                l[y * w + x] = scene[y * (w + 2) + x];
                r[y * w + x] = scene[y * (w + 2) + x + 2];
            }
        }
        let lt = Tensor::new(l, &[1, 1, h, w]).unwrap();
        let rt = Tensor::new(r, &[1, 1, h, w]).unwrap();
        let gt = GroundTruth::dense(Tensor::full(&[1, 1, h, w], 2.0)).unwrap();
        let (p, s) = lr_consistency(&lt, &rt, &gt).unwrap();
        assert_eq!(p, f64::INFINITY);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
