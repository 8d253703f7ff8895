//! The complete stereo network: event aggregation, guided feature
//! encoding and matching, with switches for the ablated variants.

use crate::eaa::{uniform_aggregate, EaaConfig, EaaModel};
use crate::error::{arg_err, shape_err, Result};
use crate::events::{build_mes, build_motion_confidence, default_tau, EventStream};
use crate::io::DisparityImage;
use crate::losses::GroundTruth;
use crate::matcher::{Matcher, MatcherConfig, Scales, OUTPUT_FACTORS};
use crate::mga::{MgaConfig, MgaModel, Pyramid};
use crate::nn::{Ctx, Init, ParamStore};
use crate::tensor::Tensor;

/// Input extents must be multiples of this; inputs are zero-padded up to it.
pub const EXTENT_MULTIPLE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub eaa: bool,
    pub mga: bool,
    pub census: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            eaa: true,
            mga: true,
            census: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub eaa: EaaConfig,
    pub mga: MgaConfig,
    pub matcher: MatcherConfig,
    /// Events in the densest stacking window.
    pub n_e: usize,
    /// Decay constant of the motion confidence in µs; `None` picks a third
    /// of the stacking window's time span.
    pub tau: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            eaa: EaaConfig::default(),
            mga: MgaConfig::default(),
            matcher: MatcherConfig::default(),
            n_e: 1 << 15,
            tau: None,
        }
    }
}

impl ModelConfig {
    /// Small widths that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            eaa: EaaConfig {
                l_channels: 4,
                widths: [4, 8, 12, 16],
                spade_hidden: 8,
            },
            mga: MgaConfig {
                c_e: 16,
                heads: 2,
                points: 2,
                layers: 1,
                ffn_hidden: 32,
            },
            matcher: MatcherConfig {
                d_max: 24,
                temperature: 1.0,
                refine_width: 4,
            },
            n_e: 1 << 14,
            tau: None,
        }
    }
}

/// Network inputs for one stereo pair, zero-padded to [`EXTENT_MULTIPLE`].
#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, L, Hp, Wp]` event stacks.
    pub mes_left: Tensor,
    pub mes_right: Tensor,
    /// `[1, 1, Hp, Wp]` motion confidence.
    pub m_left: Tensor,
    pub m_right: Tensor,
    /// Ground truth, invalid in the padding.
    pub gt: Option<GroundTruth>,
    /// Extent before padding.
    pub height: usize,
    pub width: usize,
}

pub fn padded_extent(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(EXTENT_MULTIPLE) * EXTENT_MULTIPLE, w.div_ceil(EXTENT_MULTIPLE) * EXTENT_MULTIPLE)
}

/// Zero-pads `[N, C, H, W]` at the bottom and right.
pub fn pad_to(x: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if hp < h || wp < w {
        return Err(shape_err("pad", format!("{h}x{w} exceeds {hp}x{wp}")));
    }
    let mut y = x.clone();
    if wp > w {
        y = Tensor::cat(&[y, Tensor::zeros(&[n, c, h, wp - w])], 3)?;
    }
    if hp > h {
        y = Tensor::cat(&[y, Tensor::zeros(&[n, c, hp - h, wp])], 2)?;
    }
    Ok(y)
}

/// Top-left `h×w` window of `[N, C, H, W]`.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    x.narrow(2, 0, h)?.narrow(3, 0, w)
}

fn view_inputs(stream: &EventStream, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let (h, w) = (stream.height(), stream.width());
    let (hp, wp) = padded_extent(h, w);
    let l = cfg.eaa.l_channels;
    let mes = build_mes(stream, cfg.n_e, l)?;
    let tau = cfg.tau.unwrap_or_else(|| default_tau(stream, cfg.n_e));
    let m = build_motion_confidence(stream, tau)?;
    Ok((
        pad_to(&mes.data.reshape(&[1, l, h, w])?, hp, wp)?,
        pad_to(&m.data.reshape(&[1, 1, h, w])?, hp, wp)?,
    ))
}

impl Sample {
    pub fn new(left: &EventStream, right: &EventStream, gt: Option<&DisparityImage>, cfg: &ModelConfig) -> Result<Self> {
        let (h, w) = (left.height(), left.width());
        if (right.height(), right.width()) != (h, w) {
            return Err(shape_err("sample", format!("left {w}x{h}, right {}x{}", right.width(), right.height())));
        }
        let (hp, wp) = padded_extent(h, w);
        let (mes_left, m_left) = view_inputs(left, cfg)?;
        let (mes_right, m_right) = view_inputs(right, cfg)?;
        let gt = match gt {
            None => None,
            Some(g) => {
                if (g.height, g.width) != (h, w) {
                    return Err(shape_err("sample", format!("ground truth {}x{} for {w}x{h} events", g.width, g.height)));
                }
                let raw = g.to_ground_truth()?;
                Some(GroundTruth::new(pad_to(&raw.disp, hp, wp)?, pad_to(&raw.valid, hp, wp)?)?)
            }
        };
        Ok(Self {
            mes_left,
            mes_right,
            m_left,
            m_right,
            gt,
            height: h,
            width: w,
        })
    }
}

/// A batch of samples stacked along the batch axis.
#[derive(Debug, Clone)]
pub struct Batch {
    pub mes_left: Tensor,
    pub mes_right: Tensor,
    pub m_left: Tensor,
    pub m_right: Tensor,
    pub gt: Option<GroundTruth>,
}

impl Batch {
    pub fn stack(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(arg_err("batch", "no samples"));
        }
        let cat = |f: &dyn Fn(&Sample) -> Tensor| Tensor::cat(&samples.iter().map(|s| f(s)).collect::<Vec<_>>(), 0);
        let gt = if samples.iter().all(|s| s.gt.is_some()) {
            Some(GroundTruth::new(
                cat(&|s| s.gt.as_ref().unwrap().disp.clone())?,
                cat(&|s| s.gt.as_ref().unwrap().valid.clone())?,
            )?)
        } else {
            None
        };
        Ok(Self {
            mes_left: cat(&|s| s.mes_left.clone())?,
            mes_right: cat(&|s| s.mes_right.clone())?,
            m_left: cat(&|s| s.m_left.clone())?,
            m_right: cat(&|s| s.m_right.clone())?,
            gt,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Disparity at full, 1/2, 1/3, 1/6 and 1/12 resolution of the padded
    /// input, each in its own pixel units.
    pub scales: Scales,
    /// Aggregated event frames `[N, 1, Hp, Wp]`.
    pub left_frame: Tensor,
    pub right_frame: Tensor,
    /// Channel weights of the left view `[N, L, Hp, Wp]`.
    pub left_weights: Tensor,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub ablation: Ablation,
    pub eaa: EaaModel,
    pub mga: MgaModel,
    pub matcher: Matcher,
}

fn split(x: &Tensor, n: usize) -> Result<(Tensor, Tensor)> {
    Ok((x.narrow(0, 0, n)?, x.narrow(0, n, n)?))
}

impl Model {
    /// Registers every parameter, including those of disabled modules, so
    /// checkpoints share one layout across ablations.
    pub fn new(store: &mut ParamStore, seed: u64, cfg: ModelConfig, ablation: Ablation) -> Self {
        let mut init = Init::new(seed);
        let eaa = EaaModel::new(store, &mut init, "eaa", cfg.eaa.clone());
        let mga = MgaModel::new(store, &mut init, "mga", cfg.mga.clone());
        let matcher = Matcher::new(store, &mut init, "matcher", cfg.matcher.clone());
        Self {
            cfg,
            ablation,
            eaa,
            mga,
            matcher,
        }
    }

    /// Both views share weights and run as one batch of `2N`.
    pub fn forward(&self, cx: &Ctx, batch: &Batch) -> Result<Prediction> {
        let n = batch.mes_left.shape()[0];
        let mes = Tensor::cat(&[batch.mes_left.clone(), batch.mes_right.clone()], 0)?;
        let m = Tensor::cat(&[batch.m_left.clone(), batch.m_right.clone()], 0)?;
        let agg = if self.ablation.eaa {
            self.eaa.forward(cx, &mes, &m)?
        } else {
            uniform_aggregate(&mes)?
        };
        let pyr: Pyramid = if self.ablation.mga {
            self.mga.forward(cx, &agg.frame, &m)?
        } else {
            self.mga.extractor.forward(cx, &agg.frame)?
        };
        let mut lp = Vec::with_capacity(3);
        let mut rp = Vec::with_capacity(3);
        for p in &pyr {
            let (l, r) = split(p, n)?;
            lp.push(l);
            rp.push(r);
        }
        let (lf, rf) = split(&agg.frame, n)?;
        let lp: Pyramid = [lp[0].clone(), lp[1].clone(), lp[2].clone()];
        let rp: Pyramid = [rp[0].clone(), rp[1].clone(), rp[2].clone()];
        let scales = self.matcher.forward(cx, &lp, &rp, &lf, &rf)?;
        Ok(Prediction {
            scales,
            left_weights: agg.weights.narrow(0, 0, n)?,
            left_frame: lf,
            right_frame: rf,
        })
    }
}

/// Extent of output scale `factor` for an unpadded `h×w` input, rounded up.
pub fn scale_extent(h: usize, w: usize, factor: usize) -> (usize, usize) {
    (h.div_ceil(factor), w.div_ceil(factor))
}

/// Crops each scale of one batch item to the unpadded input's footprint.
pub fn crop_scales(pred: &Prediction, item: usize, h: usize, w: usize) -> Result<Vec<Tensor>> {
    pred.scales
        .iter()
        .zip(OUTPUT_FACTORS)
        .map(|(s, f)| {
            let (sh, sw) = scale_extent(h, w, f);
            crop(&s.narrow(0, item, 1)?, sh, sw)
        })
        .collect()
}
