//! Motion-guided attention: a three-level feature pyramid, its
//! confidence-modulated copy, and a stack of multi-scale deformable
//! attention layers over the six resulting scales.

use std::f64::consts::PI;

use crate::eaa::check_extent;
use crate::error::{shape_err, Result};
use crate::nn::{ConvModule, Ctx, Init, LayerNorm, Linear, ParamId, ParamStore};
use crate::tensor::{ConvOptions, Tensor};

/// Three maps `[N, C, h, w]` at strides 3, 6 and 12.
pub type Pyramid = [Tensor; 3];

pub const PYRAMID_STRIDES: [usize; 3] = [3, 6, 12];

#[derive(Debug, Clone, PartialEq)]
pub struct MgaConfig {
    /// Embedding width C_e.
    pub c_e: usize,
    pub heads: usize,
    pub points: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
}

impl Default for MgaConfig {
    fn default() -> Self {
        Self {
            c_e: 64,
            heads: 4,
            points: 4,
            layers: 2,
            ffn_hidden: 128,
        }
    }
}

/// `x + b(a(x))`.
struct Residual {
    a: ConvModule,
    b: ConvModule,
}

impl Residual {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Self {
        let s = ConvOptions::same(3);
        Self {
            a: ConvModule::new(store, init, &format!("{name}.a"), c, c, s),
            b: ConvModule::new(store, init, &format!("{name}.b"), c, c, s),
        }
    }

    fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let y = self.b.forward(cx, &self.a.forward(cx, x)?)?;
        x.add(&y)
    }
}

/// Strided conv stack producing the pyramid from a one-channel frame.
pub struct PyramidExtractor {
    stem: ConvModule,
    down: [ConvModule; 2],
    res: [Residual; 3],
}

impl PyramidExtractor {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_e: usize) -> Self {
        Self {
            stem: ConvModule::new(store, init, &format!("{name}.stem"), 1, c_e, ConvOptions::new(3, 0)),
            down: [
                ConvModule::new(store, init, &format!("{name}.down1"), c_e, c_e, ConvOptions::new(2, 1)),
                ConvModule::new(store, init, &format!("{name}.down2"), c_e, c_e, ConvOptions::new(2, 1)),
            ],
            res: [
                Residual::new(store, init, &format!("{name}.res1"), c_e),
                Residual::new(store, init, &format!("{name}.res2"), c_e),
                Residual::new(store, init, &format!("{name}.res3"), c_e),
            ],
        }
    }

    /// `frame` is `[N, 1, H, W]` with `H` and `W` divisible by 12.
    pub fn forward(&self, cx: &Ctx, frame: &Tensor) -> Result<Pyramid> {
        check_extent("extract_pyramid", frame, 12)?;
        let l1 = self.res[0].forward(cx, &self.stem.forward(cx, frame)?)?;
        let l2 = self.res[1].forward(cx, &self.down[0].forward(cx, &l1)?)?;
        let l3 = self.res[2].forward(cx, &self.down[1].forward(cx, &l2)?)?;
        Ok([l1, l2, l3])
    }
}

/// Multiplies each level by the confidence map `[N, 1, H, W]` resampled
/// to that level by nearest neighbour.
pub fn modulate_features(pyr: &Pyramid, m: &Tensor) -> Result<Pyramid> {
    let f = |t: &Tensor| -> Result<Tensor> {
        let ml = m.resize_nearest(t.shape()[2], t.shape()[3])?;
        t.mul(&ml)
    };
    Ok([f(&pyr[0])?, f(&pyr[1])?, f(&pyr[2])?])
}

/// Spatial extents of the scales concatenated along the token axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelLayout {
    pub extents: Vec<(usize, usize)>,
}

impl LevelLayout {
    pub fn num_tokens(&self) -> usize {
        self.extents.iter().map(|(h, w)| h * w).sum()
    }

    pub fn starts(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.extents.len());
        let mut acc = 0;
        for (h, w) in &self.extents {
            s.push(acc);
            acc += h * w;
        }
        s
    }

    /// Normalized cell centres `(x, y)` of every token, `[T * 2]`.
    pub fn reference_points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.num_tokens());
        for &(h, w) in &self.extents {
            for y in 0..h {
                for x in 0..w {
                    out.push((x as f64 + 0.5) / w as f64);
                    out.push((y as f64 + 0.5) / h as f64);
                }
            }
        }
        out
    }
}

/// Multi-scale deformable attention.
pub struct DeformAttn {
    pub value: Linear,
    pub offset: Linear,
    pub attn: Linear,
    pub out: Linear,
    pub heads: usize,
    pub points: usize,
    pub levels: usize,
}

/// Attention output `[N, T, C]` and normalized weights `[N, T, M, L·K]`.
#[derive(Debug)]
pub struct AttnOutput {
    pub out: Tensor,
    pub weights: Tensor,
}

impl DeformAttn {
    /// Offsets and attention logits start from zero weights; the offset bias
    /// spreads the points of each head along a distinct direction.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize, levels: usize, points: usize) -> Self {
        assert!(c % heads == 0, "width {c} not divisible by {heads} heads");
        let n_off = heads * levels * points * 2;
        let offset = Linear::zeros(store, &format!("{name}.offset"), c, n_off);
        let mut bias = Vec::with_capacity(n_off);
        for m in 0..heads {
            let theta = 2.0 * PI * m as f64 / heads as f64;
            let (s, co) = theta.sin_cos();
            let norm = co.abs().max(s.abs());
            for _ in 0..levels {
                for k in 0..points {
                    bias.push(co / norm * (k + 1) as f64);
                    bias.push(s / norm * (k + 1) as f64);
                }
            }
        }
        store.set(offset.bias, Tensor::new(bias, &[n_off]).expect("offset bias"));
        Self {
            value: Linear::new(store, init, &format!("{name}.value"), c, c),
            offset,
            attn: Linear::zeros(store, &format!("{name}.attn"), c, heads * levels * points),
            out: Linear::zeros(store, &format!("{name}.out"), c, c),
            heads,
            points,
            levels,
        }
    }

    /// `x` is `[N, T, C]` with tokens laid out by `layout`; every token
    /// queries all levels around its own reference point.
    pub fn forward(&self, cx: &Ctx, x: &Tensor, layout: &LevelLayout) -> Result<AttnOutput> {
        if x.rank() != 3 || x.shape()[1] != layout.num_tokens() || layout.extents.len() != self.levels {
            return Err(shape_err(
                "deformable_attention",
                format!("tokens {:?} for {} levels {:?}", x.shape(), self.levels, layout.extents),
            ));
        }
        let (n, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (mh, lv, kp) = (self.heads, self.levels, self.points);
        let dh = c / mh;
        let value = self.value.forward(cx, x)?;
        let offsets = self.offset.forward(cx, x)?;
        let weights = self
            .attn
            .forward(cx, x)?
            .reshape(&[n, t, mh, lv * kp])?
            .softmax(3)?;
        let flat_w = weights.reshape(&[n, t, mh * lv * kp])?;

        let starts = layout.starts();
        let refs = layout.reference_points();
        // value maps per level: [N, C, h, w]
        let maps = layout
            .extents
            .iter()
            .zip(&starts)
            .map(|(&(h, w), &s)| value.narrow(1, s, h * w)?.reshape(&[n, h, w, c])?.permute(&[0, 3, 1, 2]))
            .collect::<Result<Vec<_>>>()?;
        // reference point of every query in each level's pixel frame
        let bases = layout
            .extents
            .iter()
            .map(|&(h, w)| {
                let d: Vec<f64> = refs
                    .chunks_exact(2)
                    .flat_map(|p| [p[0] * w as f64 - 0.5, p[1] * h as f64 - 0.5])
                    .collect();
                Tensor::new(d, &[1, t, 2])
            })
            .collect::<Result<Vec<_>>>()?;

        let mut heads_out = Vec::with_capacity(mh);
        for m in 0..mh {
            let mut acc: Option<Tensor> = None;
            for l in 0..lv {
                let map = maps[l].narrow(1, m * dh, dh)?;
                for k in 0..kp {
                    let j = (m * lv + l) * kp + k;
                    let coords = offsets.narrow(2, 2 * j, 2)?.add(&bases[l])?;
                    let s = map.grid_sample_bilinear(&coords)?;
                    let a = flat_w.narrow(2, j, 1)?.reshape(&[n, 1, t])?;
                    let term = s.mul(&a)?;
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => prev.add(&term)?,
                    });
                }
            }
            heads_out.push(acc.expect("at least one sample"));
        }
        let merged = Tensor::cat(&heads_out, 1)?.permute(&[0, 2, 1])?;
        Ok(AttnOutput {
            out: self.out.forward(cx, &merged)?,
            weights,
        })
    }
}

/// Post-norm encoder layer: `s = LN(attn(X) + X)`, `Y = LN(FFN(s))`.
pub struct EncoderLayer {
    pub attn: DeformAttn,
    pub ln1: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &MgaConfig, levels: usize) -> Self {
        Self {
            attn: DeformAttn::new(store, init, &format!("{name}.attn"), cfg.c_e, cfg.heads, levels, cfg.points),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.c_e),
            ffn1: Linear::new(store, init, &format!("{name}.ffn1"), cfg.c_e, cfg.ffn_hidden),
            ffn2: Linear::new(store, init, &format!("{name}.ffn2"), cfg.ffn_hidden, cfg.c_e),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.c_e),
        }
    }

    pub fn self_attn(&self, cx: &Ctx, x: &Tensor, layout: &LevelLayout) -> Result<Tensor> {
        let a = self.attn.forward(cx, x, layout)?.out;
        self.ln1.forward(cx, &a.add(x)?)
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor, layout: &LevelLayout) -> Result<Tensor> {
        let s = self.self_attn(cx, x, layout)?;
        let f = self.ffn2.forward(cx, &self.ffn1.forward(cx, &s)?.relu())?;
        self.ln2.forward(cx, &f)
    }
}

/// Fixed 2D sine encoding of normalized token centres, `[1, T, C]`.
pub fn positional_encoding(layout: &LevelLayout, c: usize) -> Result<Tensor> {
    if c % 4 != 0 {
        return Err(shape_err("positional_encoding", format!("width {c} not divisible by 4")));
    }
    let half = c / 2;
    let freqs: Vec<f64> = (0..half).map(|i| 10000f64.powf((2 * (i / 2)) as f64 / half as f64)).collect();
    let refs = layout.reference_points();
    let mut out = Vec::with_capacity(refs.len() / 2 * c);
    for p in refs.chunks_exact(2) {
        for &coord in &[p[1], p[0]] {
            for (i, f) in freqs.iter().enumerate() {
                let v = coord * 2.0 * PI / f;
                out.push(if i % 2 == 0 { v.sin() } else { v.cos() });
            }
        }
    }
    Tensor::new(out, &[1, layout.num_tokens(), c])
}

/// Flattens `[N, C, h, w]` maps into one `[N, T, C]` token set.
pub fn flatten_levels(maps: &[Tensor]) -> Result<(Tensor, LevelLayout)> {
    let mut tokens = Vec::with_capacity(maps.len());
    let mut extents = Vec::with_capacity(maps.len());
    for m in maps {
        if m.rank() != 4 {
            return Err(shape_err("flatten_levels", format!("level {:?}", m.shape())));
        }
        let [n, c, h, w] = [m.shape()[0], m.shape()[1], m.shape()[2], m.shape()[3]];
        tokens.push(m.reshape(&[n, c, h * w])?.permute(&[0, 2, 1])?);
        extents.push((h, w));
    }
    Ok((Tensor::cat(&tokens, 1)?, LevelLayout { extents }))
}

/// Splits tokens of the levels `first..` back into `[N, C, h, w]` maps.
pub fn unflatten_levels(x: &Tensor, layout: &LevelLayout, first: usize) -> Result<Vec<Tensor>> {
    let (n, c) = (x.shape()[0], x.shape()[2]);
    let starts = layout.starts();
    (first..layout.extents.len())
        .map(|l| {
            let (h, w) = layout.extents[l];
            x.narrow(1, starts[l], h * w)?.permute(&[0, 2, 1])?.reshape(&[n, c, h, w])
        })
        .collect()
}

pub struct MgaModel {
    pub cfg: MgaConfig,
    pub extractor: PyramidExtractor,
    pub scale_embed: ParamId,
    pub layers: Vec<EncoderLayer>,
}

pub const MGA_SCALES: usize = 6;

impl MgaModel {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: MgaConfig) -> Self {
        let extractor = PyramidExtractor::new(store, init, &format!("{name}.extract"), cfg.c_e);
        let scale_embed = store.param(format!("{name}.scale_embed"), init.normal(&[MGA_SCALES, cfg.c_e], 0.1));
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, init, &format!("{name}.layer{i}"), &cfg, MGA_SCALES))
            .collect();
        Self {
            cfg,
            extractor,
            scale_embed,
            layers,
        }
    }

    /// Encodes the six-scale token set `[F^f_1..3, F^m_1..3]` and returns the
    /// tokens of the last three scales as a pyramid.
    pub fn encode(&self, cx: &Ctx, f: &Pyramid, fm: &Pyramid) -> Result<Pyramid> {
        for l in 0..3 {
            if f[l].shape() != fm[l].shape() {
                return Err(shape_err(
                    "mga_encode",
                    format!("level {l}: {:?} vs {:?}", f[l].shape(), fm[l].shape()),
                ));
            }
        }
        let maps: Vec<Tensor> = f.iter().chain(fm.iter()).cloned().collect();
        let (x, layout) = flatten_levels(&maps)?;
        let c = self.cfg.c_e;
        let pos = positional_encoding(&layout, c)?;
        let emb = cx.p(self.scale_embed);
        let mut rows = Vec::with_capacity(MGA_SCALES);
        for (l, (h, w)) in layout.extents.iter().enumerate() {
            let e = emb.narrow(0, l, 1)?;
            rows.push(e.add(&Tensor::zeros(&[h * w, c]))?);
        }
        let scale = Tensor::cat(&rows, 0)?.reshape(&[1, layout.num_tokens(), c])?;
        let mut y = x.add(&pos)?.add(&scale)?;
        for layer in &self.layers {
            y = layer.forward(cx, &y, &layout)?;
        }
        let out = unflatten_levels(&y, &layout, 3)?;
        Ok([out[0].clone(), out[1].clone(), out[2].clone()])
    }

    /// Frame `[N, 1, H, W]` and confidence `[N, 1, H, W]` to the enhanced
    /// pyramid.
    pub fn forward(&self, cx: &Ctx, frame: &Tensor, m: &Tensor) -> Result<Pyramid> {
        let f = self.extractor.forward(cx, frame)?;
        let fm = modulate_features(&f, m)?;
        self.encode(cx, &f, &fm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check_with_params, Phase};
    use crate::tensor::gradcheck::{random_leaf, random_tensor, GradCheckOptions};

    fn cfg() -> MgaConfig {
        MgaConfig {
            c_e: 4,
            heads: 2,
            points: 2,
            layers: 1,
            ffn_hidden: 6,
        }
    }

    #[test]
    fn pyramid_extents() {
        let mut store = ParamStore::new();
        let ex = PyramidExtractor::new(&mut store, &mut Init::new(0), "p", 4);
        let cx = Ctx::new(&store, Phase::Train);
        let p = ex.forward(&cx, &random_tensor(&[1, 1, 36, 48], 1)).unwrap();
        assert_eq!(p[0].shape(), &[1, 4, 12, 16]);
        assert_eq!(p[1].shape(), &[1, 4, 6, 8]);
        assert_eq!(p[2].shape(), &[1, 4, 3, 4]);
        let zero = ex.forward(&cx, &Tensor::zeros(&[2, 1, 24, 24])).unwrap();
        assert!(zero.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        let err = ex.forward(&cx, &random_tensor(&[1, 1, 30, 48], 1)).unwrap_err();
        assert!(err.to_string().contains("pad to 36x48"), "{err}");
    }

    #[test]
    fn pyramid_gradients() {
        let mut store = ParamStore::new();
        let ex = PyramidExtractor::new(&mut store, &mut Init::new(0), "p", 2);
        let ids = store.ids_with_prefix("p.stem");
        for (seed, shape) in [(0, [2, 1, 24, 12]), (1, [1, 1, 24, 24]), (2, [2, 1, 12, 24])] {
            let x = random_leaf(&shape, seed);
            let r = gradient_check_with_params(
                &store,
                &ids,
                &[x],
                |t| {
                    let p = ex.forward(&Ctx::new(&store, Phase::Train), &t[0])?;
                    Ok(p[0].square().mean().add(&p[2].sum())?)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn modulation_cases() {
        let pyr = [random_tensor(&[1, 2, 4, 4], 1), random_tensor(&[1, 2, 2, 2], 2), random_tensor(&[1, 2, 1, 1], 3)];
        let ones = modulate_features(&pyr, &Tensor::ones(&[1, 1, 12, 12])).unwrap();
        let zeros = modulate_features(&pyr, &Tensor::zeros(&[1, 1, 12, 12])).unwrap();
        for l in 0..3 {
            assert_eq!(ones[l].data(), pyr[l].data());
            assert!(zeros[l].data().iter().all(|&v| v == 0.0));
        }
        // finest level: cell (1, 2) reads full-resolution pixel (4, 7)
        let mut m = vec![1.0; 144];
        m[4 * 12 + 7] = 0.5;
        let half = modulate_features(&pyr, &Tensor::new(m, &[1, 1, 12, 12]).unwrap()).unwrap();
        for (k, (a, b)) in half[0].data().iter().zip(pyr[0].data()).enumerate() {
            let want = if k % 16 == 4 + 2 { 0.5 * b } else { *b };
            assert_eq!(*a, want);
        }
    }

    fn layout() -> LevelLayout {
        LevelLayout {
            extents: vec![(3, 4), (2, 2), (1, 2)],
        }
    }

    /// Bilinear read of a `[h, w]` plane with zero outside.
    fn sample(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - (y - y0)), (1.0, y - y0)] {
            for (dx, wx) in [(0.0, 1.0 - (x - x0)), (1.0, x - x0)] {
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                    acc += wy * wx * plane[yy as usize * w + xx as usize];
                }
            }
        }
        acc
    }

    fn identity(store: &ParamStore, lin: &Linear, c: usize) {
        let eye: Vec<f64> = (0..c * c).map(|k| if k / c == k % c { 1.0 } else { 0.0 }).collect();
        store.set(lin.weight, Tensor::new(eye, &[c, c]).unwrap());
    }

    #[test]
    fn uniform_weights_average_reference_samples() {
        let lay = layout();
        let c = 3;
        let mut store = ParamStore::new();
        let att = DeformAttn::new(&mut store, &mut Init::new(1), "a", c, 1, 3, 2);
        store.set(att.offset.bias, Tensor::zeros(&[12]));
        identity(&store, &att.value, c);
        identity(&store, &att.out, c);
        let t = lay.num_tokens();
        let x = random_tensor(&[1, t, c], 4);
        let out = att.forward(&Ctx::new(&store, Phase::Eval), &x, &lay).unwrap().out;
        let refs = lay.reference_points();
        let starts = lay.starts();
        for q in 0..t {
            for ch in 0..c {
                let mut acc = 0.0;
                for (l, &(h, w)) in lay.extents.iter().enumerate() {
                    let plane: Vec<f64> = (0..h * w).map(|i| x.data()[(starts[l] + i) * c + ch]).collect();
                    let v = sample(&plane, h, w, refs[2 * q] * w as f64 - 0.5, refs[2 * q + 1] * h as f64 - 0.5);
                    acc += 2.0 * v;
                }
                let want = acc / 6.0;
                assert!((out.data()[q * c + ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_self_sampling() {
        let lay = LevelLayout { extents: vec![(3, 5)] };
        let c = 2;
        let mut store = ParamStore::new();
        let att = DeformAttn::new(&mut store, &mut Init::new(1), "a", c, 1, 1, 1);
        store.set(att.offset.bias, Tensor::zeros(&[2]));
        let wm = random_tensor(&[c, c], 9);
        store.set(att.out.weight, wm.clone());
        let x = random_tensor(&[1, 15, c], 4);
        let cx = Ctx::new(&store, Phase::Eval);
        let out = att.forward(&cx, &x, &lay).unwrap().out;
        let v = att.value.forward(&cx, &x).unwrap();
        let want = v.linear(&wm, None).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_normalized() {
        let lay = layout();
        let mut store = ParamStore::new();
        let att = DeformAttn::new(&mut store, &mut Init::new(1), "a", 4, 2, 3, 2);
        store.set(att.attn.weight, random_tensor(&[12, 4], 3).scale(4.0));
        let x = random_tensor(&[2, lay.num_tokens(), 4], 4);
        let w = att.forward(&Ctx::new(&store, Phase::Eval), &x, &lay).unwrap().weights;
        for row in w.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert!(att.forward(&Ctx::new(&store, Phase::Eval), &random_tensor(&[1, 5, 4], 1), &lay).is_err());
    }

    #[test]
    fn zero_output_projection_reduces_to_normalization() {
        let lay = layout();
        let mut store = ParamStore::new();
        let layer = EncoderLayer::new(&mut store, &mut Init::new(2), "l", &cfg(), 3);
        let cx = Ctx::new(&store, Phase::Eval);
        let x = random_tensor(&[1, lay.num_tokens(), 4], 5);
        let s = layer.self_attn(&cx, &x, &lay).unwrap();
        assert_eq!(s.data(), x.layer_norm(crate::nn::NORM_EPS).unwrap().data());
    }

    fn random_pyramids(n: usize, seed: u64) -> (Pyramid, Pyramid) {
        let lv = |s| [random_tensor(&[n, 4, 4, 4], s), random_tensor(&[n, 4, 2, 2], s + 1), random_tensor(&[n, 4, 1, 1], s + 2)];
        (lv(seed), lv(seed + 10))
    }

    #[test]
    fn encode_preserves_extents_and_is_deterministic() {
        let mut store = ParamStore::new();
        let model = MgaModel::new(&mut store, &mut Init::new(3), "mga", cfg());
        let (f, fm) = random_pyramids(2, 1);
        let cx = Ctx::new(&store, Phase::Eval);
        let a = model.encode(&cx, &f, &fm).unwrap();
        let b = model.encode(&cx, &f, &fm).unwrap();
        for l in 0..3 {
            assert_eq!(a[l].shape(), f[l].shape());
            assert_eq!(a[l].data(), b[l].data());
        }
        let bad = [f[0].clone(), f[1].clone(), random_tensor(&[2, 4, 1, 2], 0)];
        assert!(model.encode(&cx, &bad, &fm).is_err());
    }

    #[test]
    fn shared_weights_swap_views() {
        let mut store = ParamStore::new();
        let model = MgaModel::new(&mut store, &mut Init::new(3), "mga", cfg());
        let left = random_tensor(&[2, 1, 24, 24], 1);
        let right = random_tensor(&[2, 1, 24, 24], 2);
        let ml = random_tensor(&[2, 1, 24, 24], 3).abs();
        let mr = random_tensor(&[2, 1, 24, 24], 4).abs();
        let cx = Ctx::new(&store, Phase::Eval);
        let a = (model.forward(&cx, &left, &ml).unwrap(), model.forward(&cx, &right, &mr).unwrap());
        let b = (model.forward(&cx, &right, &mr).unwrap(), model.forward(&cx, &left, &ml).unwrap());
        for l in 0..3 {
            assert_eq!(a.0[l].data(), b.1[l].data());
            assert_eq!(a.1[l].data(), b.0[l].data());
        }
    }

    #[test]
    fn reference_points_are_constant_cell_centres() {
        let lay = layout();
        let r = lay.reference_points();
        assert_eq!(&r[..4], &[0.125, 1.0 / 6.0, 0.375, 1.0 / 6.0]);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r), bits(&lay.reference_points()));
    }

    #[test]
    fn encode_gradients() {
        let mut store = ParamStore::new();
        let model = MgaModel::new(&mut store, &mut Init::new(3), "mga", cfg());
        // move away from the zero-initialized start so every path carries gradient
        for id in store.ids_with_prefix("mga.layer0.attn") {
            let shape = store.get(id).shape().to_vec();
            let cur = store.get(id);
            store.set(id, cur.add(&random_tensor(&shape, id_seed(&store, id)).scale(0.3)).unwrap());
        }
        let mut ids = store.ids_with_prefix("mga.layer0.attn");
        ids.push(model.scale_embed);
        for seed in 0..3 {
            let (f, fm) = random_pyramids(1, seed * 7);
            let wt = random_tensor(&[1, 4, 4, 4], seed + 50);
            let inputs = [f[0].requires_grad(), f[1].requires_grad(), f[2].requires_grad(), fm[0].requires_grad()];
            let r = gradient_check_with_params(
                &store,
                &ids,
                &inputs,
                |t| {
                    let f = [t[0].clone(), t[1].clone(), t[2].clone()];
                    let fm = [t[3].clone(), fm[1].clone(), fm[2].clone()];
                    let y = model.encode(&Ctx::new(&store, Phase::Train), &f, &fm)?;
                    Ok(y[0].mul(&wt)?.sum().add(&y[2].sum())?)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    fn id_seed(store: &ParamStore, id: ParamId) -> u64 {
        store.name(id).bytes().map(u64::from).sum()
    }
}
