//! Edge-aware aggregation: an encoder over the event stack, a decoder whose
//! normalization is modulated by motion confidence, and a softmax head that
//! blends the stack channels into one frame.

use crate::error::{shape_err, Result};
use crate::nn::{BatchNorm, Conv2d, ConvModule, Ctx, Init, ParamStore};
use crate::tensor::{ConvOptions, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EaaConfig {
    /// Stack channels L.
    pub l_channels: usize,
    /// Widths of F1/F2, F3, F4 and D1.
    pub widths: [usize; 4],
    /// Width of the shared SPADE trunk.
    pub spade_hidden: usize,
}

impl Default for EaaConfig {
    fn default() -> Self {
        Self {
            l_channels: 4,
            widths: [32, 64, 96, 128],
            spade_hidden: 32,
        }
    }
}

/// Encoder features F1, F2 (full), F3 (1/2), F4 (1/4) and D1 (1/8).
#[derive(Debug)]
pub struct Encoded {
    pub f1: Tensor,
    pub f2: Tensor,
    pub f3: Tensor,
    pub f4: Tensor,
    pub d1: Tensor,
}

/// Average pooling followed by three conv modules.
pub struct Down {
    convs: [ConvModule; 3],
}

impl Down {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, cout: usize) -> Self {
        let s = ConvOptions::same(3);
        Self {
            convs: [
                ConvModule::new(store, init, &format!("{name}.0"), cin, cout, s),
                ConvModule::new(store, init, &format!("{name}.1"), cout, cout, s),
                ConvModule::new(store, init, &format!("{name}.2"), cout, cout, s),
            ],
        }
    }

    fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let mut y = x.avg_pool2()?;
        for c in &self.convs {
            y = c.forward(cx, &y)?;
        }
        Ok(y)
    }
}

/// Normalization without affine parameters whose scale and shift are
/// predicted per pixel from a conditioning map.
pub struct Spade {
    pub bn: BatchNorm,
    pub trunk: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl Spade {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize, hidden: usize) -> Self {
        let s = ConvOptions::same(3);
        Self {
            bn: BatchNorm::new(store, &format!("{name}.bn"), channels, false),
            trunk: Conv2d::new(store, init, &format!("{name}.trunk"), 1, hidden, 3, s),
            gamma: Conv2d::zeros(store, &format!("{name}.gamma"), hidden, channels, 3, s),
            beta: Conv2d::zeros(store, &format!("{name}.beta"), hidden, channels, 3, s),
        }
    }

    /// `bn(d) ⊙ (1 + γ(M')) + β(M')` with `M' = relu(trunk(m))`.
    pub fn forward(&self, cx: &Ctx, d: &Tensor, m: &Tensor) -> Result<Tensor> {
        if d.rank() != 4 || m.rank() != 4 || d.shape()[2..] != m.shape()[2..] || d.shape()[0] != m.shape()[0] {
            return Err(shape_err("spade", format!("features {:?} with condition {:?}", d.shape(), m.shape())));
        }
        let mp = self.trunk.forward(cx, m)?.relu();
        let gamma = self.gamma.forward(cx, &mp)?.add_scalar(1.0);
        let beta = self.beta.forward(cx, &mp)?;
        self.bn.forward(cx, d)?.mul(&gamma)?.add(&beta)
    }
}

/// One decoder stage: upsample, modulate, convolve, fuse with the skip.
pub struct SpadeUp {
    pub spade: Spade,
    pub pre: ConvModule,
    pub fuse: [ConvModule; 2],
}

impl SpadeUp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_prev: usize,
        c_skip: usize,
        c_out: usize,
        hidden: usize,
    ) -> Self {
        let s = ConvOptions::same(3);
        Self {
            spade: Spade::new(store, init, &format!("{name}.spade"), c_prev, hidden),
            pre: ConvModule::new(store, init, &format!("{name}.pre"), c_prev, c_out, s),
            fuse: [
                ConvModule::new(store, init, &format!("{name}.fuse0"), c_out + c_skip, c_out, s),
                ConvModule::new(store, init, &format!("{name}.fuse1"), c_out, c_out, s),
            ],
        }
    }

    /// `m` is the full-resolution confidence map `[N, 1, H, W]`.
    pub fn forward(&self, cx: &Ctx, d_prev: &Tensor, m: &Tensor, skip: &Tensor) -> Result<Tensor> {
        if d_prev.rank() != 4 || skip.rank() != 4 || skip.shape()[2] != 2 * d_prev.shape()[2] || skip.shape()[3] != 2 * d_prev.shape()[3] {
            return Err(shape_err(
                "spade_up",
                format!("skip {:?} must be twice the extent of {:?}", skip.shape(), d_prev.shape()),
            ));
        }
        let up = d_prev.upsample2()?;
        let (h, w) = (up.shape()[2], up.shape()[3]);
        let m_down = m.resize_nearest(h, w)?;
        let hat = self.spade.forward(cx, &up, &m_down)?;
        let pre = self.pre.forward(cx, &hat)?;
        let cat = Tensor::cat(&[skip.clone(), pre], 1)?;
        let y = self.fuse[0].forward(cx, &cat)?;
        self.fuse[1].forward(cx, &y)
    }
}

pub struct EaaModel {
    pub cfg: EaaConfig,
    pub conv1: ConvModule,
    pub conv2: ConvModule,
    pub down: [Down; 3],
    pub up: [SpadeUp; 3],
    pub head: Conv2d,
}

/// Aggregated frame `[N, 1, H, W]` and blend weights `[N, L, H, W]`.
#[derive(Debug)]
pub struct Aggregated {
    pub frame: Tensor,
    pub weights: Tensor,
}

impl EaaModel {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: EaaConfig) -> Self {
        let [c0, c1, c2, c3] = cfg.widths;
        let (l, hid) = (cfg.l_channels, cfg.spade_hidden);
        let s = ConvOptions::same(3);
        Self {
            conv1: ConvModule::new(store, init, &format!("{name}.conv1"), l, c0, s),
            conv2: ConvModule::new(store, init, &format!("{name}.conv2"), c0, c0, s),
            down: [
                Down::new(store, init, &format!("{name}.down1"), c0, c1),
                Down::new(store, init, &format!("{name}.down2"), c1, c2),
                Down::new(store, init, &format!("{name}.down3"), c2, c3),
            ],
            up: [
                SpadeUp::new(store, init, &format!("{name}.up1"), c3, c2, c2, hid),
                SpadeUp::new(store, init, &format!("{name}.up2"), c2, c1, c1, hid),
                SpadeUp::new(store, init, &format!("{name}.up3"), c1, c0, c0, hid),
            ],
            head: Conv2d::new(store, init, &format!("{name}.head"), c0, l, 3, s),
            cfg,
        }
    }

    /// `mes` is `[N, L, H, W]` with `H` and `W` divisible by 8.
    pub fn encode(&self, cx: &Ctx, mes: &Tensor) -> Result<Encoded> {
        check_extent("eaa_encode", mes, 8)?;
        if mes.shape()[1] != self.cfg.l_channels {
            return Err(shape_err(
                "eaa_encode",
                format!("{} input channels, model expects {}", mes.shape()[1], self.cfg.l_channels),
            ));
        }
        let f1 = self.conv1.forward(cx, mes)?;
        let f2 = self.conv2.forward(cx, &f1)?;
        let f3 = self.down[0].forward(cx, &f2)?;
        let f4 = self.down[1].forward(cx, &f3)?;
        let d1 = self.down[2].forward(cx, &f4)?;
        Ok(Encoded { f1, f2, f3, f4, d1 })
    }

    /// Decoder output D4 at full resolution.
    pub fn decode(&self, cx: &Ctx, e: &Encoded, m: &Tensor) -> Result<Tensor> {
        let d2 = self.up[0].forward(cx, &e.d1, m, &e.f4)?;
        let d3 = self.up[1].forward(cx, &d2, m, &e.f3)?;
        self.up[2].forward(cx, &d3, m, &e.f2)
    }

    pub fn aggregate(&self, cx: &Ctx, d4: &Tensor, mes: &Tensor) -> Result<Aggregated> {
        let logits = self.head.forward(cx, d4)?;
        aggregate_with_logits(&logits, mes)
    }

    /// Full module: `mes` `[N, L, H, W]`, `m` `[N, 1, H, W]`.
    pub fn forward(&self, cx: &Ctx, mes: &Tensor, m: &Tensor) -> Result<Aggregated> {
        let e = self.encode(cx, mes)?;
        let d4 = self.decode(cx, &e, m)?;
        self.aggregate(cx, &d4, mes)
    }
}

/// Softmax over the channel axis of `logits`, then a per-pixel weighted sum
/// of the stack channels.
pub fn aggregate_with_logits(logits: &Tensor, mes: &Tensor) -> Result<Aggregated> {
    if logits.shape() != mes.shape() {
        return Err(shape_err(
            "eaa_aggregate",
            format!("weights {:?} for stack {:?}", logits.shape(), mes.shape()),
        ));
    }
    let weights = logits.softmax(1)?;
    let frame = weights.mul(mes)?.sum_axis(1)?;
    Ok(Aggregated { frame, weights })
}

/// Equal-weight blend used when the learned aggregation is disabled.
pub fn uniform_aggregate(mes: &Tensor) -> Result<Aggregated> {
    aggregate_with_logits(&Tensor::zeros(mes.shape()), mes)
}

pub(crate) fn check_extent(op: &'static str, x: &Tensor, factor: usize) -> Result<()> {
    if x.rank() != 4 {
        return Err(shape_err(op, format!("expected [N, C, H, W], got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
        let ph = h.div_ceil(factor).max(1) * factor;
        let pw = w.div_ceil(factor).max(1) * factor;
        return Err(shape_err(
            op,
            format!("extent {h}x{w} must be divisible by {factor}; pad to {ph}x{pw}"),
        ));
    }
    Ok(())
}
