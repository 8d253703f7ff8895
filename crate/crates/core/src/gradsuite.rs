//! Finite-difference gradient checks over every differentiable primitive
//! and every composite module, each at several seeds and shapes.

use crate::eaa::{EaaConfig, EaaModel};
use crate::error::Result;
use crate::losses::{census_loss, census_transform, charbonnier, normalize_frames, smooth_l1, smooth_l1_elementwise, total_loss, warp_right_to_left, GroundTruth, LossWeights, SignMode};
use crate::matcher::{correlation, deform_conv3x3, soft_wta, Csa, Matcher, MatcherConfig, Refine};
use crate::mga::{MgaConfig, MgaModel};
use crate::nn::{gradient_check_with_params, Ctx, Init, ParamId, ParamStore, Phase};
use crate::pipeline::{Ablation, Batch, Model, ModelConfig, Sample};
use crate::synth::{synth_scene, SceneConfig, SceneSpec};
use crate::tensor::gradcheck::{gradient_check, random_tensor, GradCheckOptions, GradReport};
use crate::tensor::{ConvOptions, Tensor};

pub const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub shape: usize,
    pub report: GradReport,
}

type Case = (&'static str, Box<dyn Fn(u64, usize) -> Result<GradReport>>);

fn opts() -> GradCheckOptions {
    GradCheckOptions::default()
}

/// Uniform in `±[0.1, 1.1)`: clear of the kinks of piecewise ops.
fn off_zero(shape: &[usize], seed: u64) -> Tensor {
    let t = random_tensor(shape, seed);
    let d = t.data().iter().map(|&v| v + 0.1 * if v < 0.0 { -1.0 } else { 1.0 }).collect();
    Tensor::new(d, shape).expect("shape")
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, seed).abs().add_scalar(0.5)
}

fn leaf(t: Tensor) -> Tensor {
    t.detach().requires_grad()
}

fn rnd(shape: &[usize], seed: u64) -> Tensor {
    leaf(random_tensor(shape, seed))
}

/// Weighted sum so every output element gets a distinct adjoint.
fn probe(y: &Tensor, seed: u64) -> Result<Tensor> {
    Ok(y.mul(&random_tensor(y.shape(), seed ^ 0xABCD))?.sum())
}

fn unary(f: fn(&Tensor) -> Tensor, gen: fn(&[usize], u64) -> Tensor) -> Box<dyn Fn(u64, usize) -> Result<GradReport>> {
    Box::new(move |seed, shape| {
        let s: &[usize] = if shape == 0 { &[3, 4] } else { &[2, 3, 2] };
        gradient_check(|t| probe(&f(&t[0]), seed), &[leaf(gen(s, seed))], &opts())
    })
}

fn binary(f: fn(&Tensor, &Tensor) -> Result<Tensor>, rhs_positive: bool) -> Box<dyn Fn(u64, usize) -> Result<GradReport>> {
    Box::new(move |seed, shape| {
        let (a, b): (&[usize], &[usize]) = if shape == 0 { (&[3, 4], &[3, 4]) } else { (&[2, 3, 4], &[3, 1]) };
        let rhs = if rhs_positive { positive(b, seed + 7) } else { random_tensor(b, seed + 7) };
        gradient_check(|t| probe(&f(&t[0], &t[1])?, seed), &[rnd(a, seed), leaf(rhs)], &opts())
    })
}

fn primitive_cases() -> Vec<Case> {
    let mut v: Vec<Case> = vec![
        ("add", binary(|a, b| a.add(b), false)),
        ("sub", binary(|a, b| a.sub(b), false)),
        ("mul", binary(|a, b| a.mul(b), false)),
        ("div", binary(|a, b| a.div(b), true)),
        ("neg", unary(|x| x.neg(), random_tensor)),
        ("scale", unary(|x| x.scale(-2.5), random_tensor)),
        ("add_scalar", unary(|x| x.add_scalar(0.3), random_tensor)),
        ("exp", unary(|x| x.exp(), random_tensor)),
        ("ln", unary(|x| x.ln(), positive)),
        ("sqrt", unary(|x| x.sqrt(), positive)),
        ("square", unary(|x| x.square(), random_tensor)),
        ("abs", unary(|x| x.abs(), off_zero)),
        ("tanh", unary(|x| x.tanh(), random_tensor)),
        ("relu", unary(|x| x.relu(), off_zero)),
        ("leaky_relu", unary(|x| x.leaky_relu(0.1), off_zero)),
        ("clamp", unary(|x| x.clamp(-0.05, 0.05).add(&x.clamp(-1.5, 1.5)).unwrap(), off_zero)),
        ("sum", unary(|x| x.sum().scale(1.3), random_tensor)),
        ("mean", unary(|x| x.mean().square(), random_tensor)),
    ];
    v.push((
        "sum_axis",
        Box::new(|seed, shape| {
            let (s, ax): (&[usize], usize) = if shape == 0 { (&[3, 4], 1) } else { (&[2, 3, 4], 0) };
            gradient_check(|t| probe(&t[0].sum_axis(ax)?, seed), &[rnd(s, seed)], &opts())
        }),
    ));
    v.push((
        "mean_axis",
        Box::new(|seed, shape| {
            let (s, ax): (&[usize], usize) = if shape == 0 { (&[3, 4], 0) } else { (&[2, 3, 4], 2) };
            gradient_check(|t| probe(&t[0].mean_axis(ax)?, seed), &[rnd(s, seed)], &opts())
        }),
    ));
    v.push((
        "softmax",
        Box::new(|seed, shape| {
            let (s, ax): (&[usize], usize) = if shape == 0 { (&[3, 5], 1) } else { (&[2, 4, 3], 1) };
            gradient_check(|t| probe(&t[0].softmax(ax)?, seed), &[rnd(s, seed)], &opts())
        }),
    ));
    v.push((
        "matmul",
        Box::new(|seed, shape| {
            let (a, b): (&[usize], &[usize]) = if shape == 0 { (&[3, 4], &[4, 2]) } else { (&[1, 5], &[5, 3]) };
            gradient_check(|t| probe(&t[0].matmul(&t[1])?, seed), &[rnd(a, seed), rnd(b, seed + 1)], &opts())
        }),
    ));
    v.push((
        "linear",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[2, 3, 4] } else { &[5, 4] };
            gradient_check(
                |t| probe(&t[0].linear(&t[1], Some(&t[2]))?, seed),
                &[rnd(x, seed), rnd(&[3, 4], seed + 1), rnd(&[3], seed + 2)],
                &opts(),
            )
        }),
    ));
    v.push((
        "conv2d",
        Box::new(|seed, shape| {
            let (x, w, o): (&[usize], &[usize], ConvOptions) = if shape == 0 {
                (&[1, 2, 5, 6], &[3, 2, 3, 3], ConvOptions::same(3))
            } else {
                (&[2, 3, 7, 7], &[2, 3, 3, 3], ConvOptions { stride: 2, padding: 2, dilation: 2 })
            };
            gradient_check(
                |t| probe(&t[0].conv2d(&t[1], Some(&t[2]), o)?, seed),
                &[rnd(x, seed), rnd(w, seed + 1), rnd(&[w[0]], seed + 2)],
                &opts(),
            )
        }),
    ));
    v.push((
        "conv_transpose2d",
        Box::new(|seed, shape| {
            let (x, w, o, op): (&[usize], &[usize], ConvOptions, usize) = if shape == 0 {
                (&[1, 2, 3, 4], &[2, 3, 3, 3], ConvOptions::new(2, 1), 1)
            } else {
                (&[2, 1, 4, 3], &[1, 2, 2, 2], ConvOptions::new(1, 0), 0)
            };
            gradient_check(
                |t| probe(&t[0].conv_transpose2d(&t[1], Some(&t[2]), o, op)?, seed),
                &[rnd(x, seed), rnd(w, seed + 1), rnd(&[w[1]], seed + 2)],
                &opts(),
            )
        }),
    ));
    v.push((
        "batch_norm_train",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[2, 3, 2, 2] } else { &[3, 2, 3, 1] };
            gradient_check(|t| probe(&t[0].batch_norm_train(1e-5)?.0, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "batch_norm_eval",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[2, 3, 2, 2] } else { &[1, 2, 3, 3] };
            let c = x[1];
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
            let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
            gradient_check(|t| probe(&t[0].batch_norm_eval(&mean, &var, 1e-5)?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "layer_norm",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[3, 4] } else { &[2, 2, 5] };
            gradient_check(|t| probe(&t[0].layer_norm(1e-5)?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "avg_pool2",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[1, 2, 4, 6] } else { &[2, 1, 2, 2] };
            gradient_check(|t| probe(&t[0].avg_pool2()?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "resize_bilinear",
        Box::new(|seed, shape| {
            let (x, o): (&[usize], (usize, usize)) = if shape == 0 { (&[1, 2, 3, 4], (5, 7)) } else { (&[2, 1, 6, 6], (4, 3)) };
            gradient_check(|t| probe(&t[0].resize_bilinear(o.0, o.1)?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "upsample2",
        Box::new(|seed, shape| {
            let x: &[usize] = if shape == 0 { &[1, 2, 3, 4] } else { &[2, 1, 2, 2] };
            gradient_check(|t| probe(&t[0].upsample2()?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "resize_nearest",
        Box::new(|seed, shape| {
            let (x, o): (&[usize], (usize, usize)) = if shape == 0 { (&[1, 2, 6, 6], (3, 2)) } else { (&[1, 1, 2, 3], (4, 6)) };
            gradient_check(|t| probe(&t[0].resize_nearest(o.0, o.1)?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "grid_sample_bilinear",
        Box::new(|seed, shape| {
            let (x, p): (&[usize], usize) = if shape == 0 { (&[1, 2, 4, 5], 6) } else { (&[2, 1, 3, 3], 4) };
            // fractional coordinates, some outside the image
            let c = random_tensor(&[x[0], p, 2], seed + 3);
            let span = [x[3] as f64, x[2] as f64];
            let coords: Vec<f64> = c.data().iter().enumerate().map(|(i, &v)| 0.5 * (v + 1.0) * (span[i % 2] + 1.0) - 1.0 + 0.013).collect();
            let coords = leaf(Tensor::new(coords, c.shape())?);
            gradient_check(|t| probe(&t[0].grid_sample_bilinear(&t[1])?, seed), &[rnd(x, seed), coords], &opts())
        }),
    ));
    v.push((
        "reshape_permute",
        Box::new(|seed, shape| {
            let (x, r, p): (&[usize], &[usize], &[usize]) = if shape == 0 { (&[2, 6], &[3, 4], &[1, 0]) } else { (&[2, 3, 4], &[4, 3, 2], &[2, 0, 1]) };
            gradient_check(|t| probe(&t[0].reshape(r)?.permute(p)?, seed), &[rnd(x, seed)], &opts())
        }),
    ));
    v.push((
        "cat_narrow",
        Box::new(|seed, shape| {
            let (a, b, ax): (&[usize], &[usize], usize) = if shape == 0 { (&[2, 3], &[2, 2], 1) } else { (&[1, 2, 3], &[2, 2, 3], 0) };
            gradient_check(
                |t| {
                    let c = Tensor::cat(&[t[0].clone(), t[1].clone()], ax)?;
                    probe(&c.narrow(ax, 1, 2)?, seed)
                },
                &[rnd(a, seed), rnd(b, seed + 1)],
                &opts(),
            )
        }),
    ));
    v
}

fn custom_cases() -> Vec<Case> {
    vec![
        (
            "correlation",
            Box::new(|seed, shape| {
                let (s, d): (&[usize], usize) = if shape == 0 { (&[1, 3, 3, 6], 4) } else { (&[2, 2, 2, 5], 5) };
                gradient_check(|t| probe(&correlation(&t[0], &t[1], d)?, seed), &[rnd(s, seed), rnd(s, seed + 1)], &opts())
            }),
        ),
        (
            "deform_conv3x3",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[1, 2, 3, 4] } else { &[2, 1, 4, 3] };
                let off = leaf(random_tensor(&[s[0], 18, s[2], s[3]], seed + 1).scale(0.7).add_scalar(0.011));
                gradient_check(
                    |t| probe(&deform_conv3x3(&t[0], &t[1], &t[2], &t[3])?, seed),
                    &[rnd(s, seed), off, rnd(&[2, s[1], 3, 3], seed + 2), rnd(&[2], seed + 3)],
                    &opts(),
                )
            }),
        ),
        (
            "soft_wta",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[1, 5, 2, 3] } else { &[2, 3, 3, 2] };
                gradient_check(|t| probe(&soft_wta(&t[0], 1.0)?, seed), &[rnd(s, seed)], &opts())
            }),
        ),
        (
            "charbonnier",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[3, 4] } else { &[2, 5] };
                gradient_check(|t| probe(&charbonnier(&t[0], 0.3), seed), &[rnd(s, seed)], &opts())
            }),
        ),
        (
            "smooth_l1",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[3, 4] } else { &[2, 5] };
                let x = random_tensor(s, seed).scale(2.5);
                let x: Vec<f64> = x.data().iter().map(|&v| if (v.abs() - 1.0).abs() < 0.05 { v * 1.2 } else { v }).collect();
                gradient_check(|t| probe(&smooth_l1_elementwise(&t[0]), seed), &[leaf(Tensor::new(x, s)?)], &opts())
            }),
        ),
        (
            "census_transform_soft",
            Box::new(|seed, shape| {
                let (s, k): (&[usize], usize) = if shape == 0 { (&[1, 1, 4, 5], 1) } else { (&[2, 1, 5, 5], 2) };
                gradient_check(|t| probe(&census_transform(&t[0], k, SignMode::Soft(1.0))?, seed), &[rnd(s, seed)], &opts())
            }),
        ),
        (
            "normalize_frames",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[1, 1, 3, 4] } else { &[2, 1, 2, 3] };
                gradient_check(|t| probe(&normalize_frames(&t[0])?, seed), &[rnd(s, seed)], &opts())
            }),
        ),
        (
            "warp_right_to_left",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[1, 1, 3, 5] } else { &[2, 2, 2, 4] };
                let d = leaf(random_tensor(&[s[0], 1, s[2], s[3]], seed + 1).abs().scale(2.0).add_scalar(0.013));
                gradient_check(|t| probe(&warp_right_to_left(&t[0], &t[1], None)?.0, seed), &[rnd(s, seed), d], &opts())
            }),
        ),
    ]
}

/// Gives every trainable entry of `store` a random value so zero-started
/// branches carry gradient.
fn randomize(store: &ParamStore, seed: u64, std: f64) {
    for (k, id) in store.trainable_ids().into_iter().enumerate() {
        let s = store.get(id).shape().to_vec();
        store.set(id, random_tensor(&s, seed * 1000 + k as u64).scale(std));
    }
}

fn pick(store: &ParamStore, names: &[&str]) -> Vec<ParamId> {
    names.iter().map(|n| store.id(n).unwrap_or_else(|| panic!("no parameter `{n}`"))).collect()
}

/// Soft census sign and a Charbonnier ε wide enough that finite differences
/// stay inside its quadratic bowl.
fn smooth_weights() -> LossWeights {
    LossWeights {
        epsilon: 0.05,
        sign: SignMode::Soft(0.05),
        ..LossWeights::default()
    }
}

fn tiny_eaa() -> EaaConfig {
    EaaConfig {
        l_channels: 2,
        widths: [2, 2, 3, 2],
        spade_hidden: 2,
    }
}

fn tiny_mga() -> MgaConfig {
    MgaConfig {
        c_e: 4,
        heads: 2,
        points: 2,
        layers: 1,
        ffn_hidden: 4,
    }
}

fn module_cases() -> Vec<Case> {
    vec![
        (
            "eaa_module",
            Box::new(|seed, shape| {
                let mut store = ParamStore::new();
                let m = EaaModel::new(&mut store, &mut Init::new(seed), "eaa", tiny_eaa());
                randomize(&store, seed, 0.5);
                let (h, w) = if shape == 0 { (8, 8) } else { (8, 16) };
                let ids = pick(&store, &["eaa.head.weight", "eaa.up1.spade.gamma.weight", "eaa.down1.0.conv.weight"]);
                let mes = rnd(&[1, 2, h, w], seed);
                let mc = rnd(&[1, 1, h, w], seed + 1);
                gradient_check_with_params(
                    &store,
                    &ids,
                    &[mes, mc],
                    |t| probe(&m.forward(&Ctx::new(&store, Phase::Eval), &t[0], &t[1])?.frame, seed),
                    &opts(),
                )
            }),
        ),
        (
            "mga_module",
            Box::new(|seed, shape| {
                let mut store = ParamStore::new();
                let m = MgaModel::new(&mut store, &mut Init::new(seed), "mga", tiny_mga());
                randomize(&store, seed, 0.3);
                let (h, w) = if shape == 0 { (12, 12) } else { (12, 24) };
                let ids = pick(&store, &["mga.layer0.attn.offset.weight", "mga.layer0.attn.out.weight", "mga.scale_embed"]);
                let frame = rnd(&[1, 1, h, w], seed);
                let mc = leaf(random_tensor(&[1, 1, h, w], seed + 1).abs());
                gradient_check_with_params(
                    &store,
                    &ids,
                    &[frame, mc],
                    |t| {
                        let p = m.forward(&Ctx::new(&store, Phase::Eval), &t[0], &t[1])?;
                        Ok(probe(&p[0], seed)?.add(&probe(&p[2], seed + 1)?)?)
                    },
                    &opts(),
                )
            }),
        ),
        (
            "isa_csa",
            Box::new(|seed, shape| {
                let mut store = ParamStore::new();
                let ch = if shape == 0 { [3, 2, 1] } else { [2, 2, 2] };
                let csa = Csa::new(&mut store, &mut Init::new(seed), "csa", &ch);
                randomize(&store, seed, 0.5);
                let vols = [rnd(&[1, ch[0], 4, 8], seed), rnd(&[1, ch[1], 2, 4], seed + 1), rnd(&[1, ch[2], 1, 2], seed + 2)];
                let ids = store.trainable_ids();
                gradient_check_with_params(
                    &store,
                    &ids,
                    &vols,
                    |t| {
                        let o = csa.forward(&Ctx::new(&store, Phase::Eval), &t[..3])?;
                        Ok(probe(&o[0], seed)?.add(&probe(&o[1], seed + 1)?)?.add(&probe(&o[2], seed + 2)?)?)
                    },
                    &opts(),
                )
            }),
        ),
        (
            "refinement",
            Box::new(|seed, shape| {
                let mut store = ParamStore::new();
                let r = Refine::new(&mut store, &mut Init::new(seed), "r", 2);
                randomize(&store, seed, 0.4);
                let (h, w) = if shape == 0 { (4, 6) } else { (6, 4) };
                let coarse = leaf(random_tensor(&[1, 1, h / 2, w / 2], seed).abs().add_scalar(0.2));
                let ids = pick(&store, &["r.head.weight", "r.conv0.conv.weight"]);
                gradient_check_with_params(
                    &store,
                    &ids,
                    &[coarse, rnd(&[1, 1, h, w], seed + 1), rnd(&[1, 1, h, w], seed + 2)],
                    |t| probe(&r.forward(&Ctx::new(&store, Phase::Eval), &t[0], &t[1], &t[2], 100.0)?, seed),
                    &opts(),
                )
            }),
        ),
        (
            "matcher",
            Box::new(|seed, shape| {
                let mut store = ParamStore::new();
                let cfg = MatcherConfig {
                    d_max: if shape == 0 { 12 } else { 24 },
                    temperature: 1.0,
                    refine_width: 2,
                };
                let m = Matcher::new(&mut store, &mut Init::new(seed), "m", cfg);
                randomize(&store, seed, 0.3);
                let ids = pick(&store, &["m.refine_full.head.weight", "m.isa0.weight"]);
                let l = [rnd(&[1, 2, 4, 8], seed), rnd(&[1, 2, 2, 4], seed + 1), rnd(&[1, 2, 1, 2], seed + 2)];
                let r = [random_tensor(&[1, 2, 4, 8], seed + 3), random_tensor(&[1, 2, 2, 4], seed + 4), random_tensor(&[1, 2, 1, 2], seed + 5)];
                let lf = random_tensor(&[1, 1, 12, 24], seed + 6);
                let rf = random_tensor(&[1, 1, 12, 24], seed + 7);
                gradient_check_with_params(
                    &store,
                    &ids,
                    &l,
                    |t| {
                        let o = m.forward(&Ctx::new(&store, Phase::Eval), &[t[0].clone(), t[1].clone(), t[2].clone()], &r, &lf, &rf)?;
                        let mut acc = probe(&o[0], seed)?;
                        for d in &o[1..] {
                            acc = acc.add(&probe(d, seed + 1)?)?;
                        }
                        Ok(acc)
                    },
                    &opts(),
                )
            }),
        ),
        (
            "census_loss",
            Box::new(|seed, shape| {
                let (h, w) = if shape == 0 { (4, 8) } else { (5, 6) };
                let gt = GroundTruth::dense(Tensor::full(&[1, 1, h, w], 1.5))?;
                let lw = smooth_weights();
                gradient_check(
                    |t| Ok(census_loss(&t[0], &t[1], &gt, &lw)?.value),
                    &[rnd(&[1, 1, h, w], seed), rnd(&[1, 1, h, w], seed + 1)],
                    &opts(),
                )
            }),
        ),
        (
            "smooth_l1_loss",
            Box::new(|seed, shape| {
                let s: &[usize] = if shape == 0 { &[1, 1, 3, 4] } else { &[2, 1, 2, 2] };
                let gt = GroundTruth::dense(random_tensor(s, seed + 1).scale(3.0))?;
                let pred = leaf(random_tensor(s, seed).scale(3.0).add_scalar(0.037));
                gradient_check(|t| Ok(smooth_l1(&t[0], &gt)?.value), &[pred], &opts())
            }),
        ),
        (
            "total_loss",
            Box::new(|seed, shape| {
                let (h, w) = if shape == 0 { (12, 24) } else { (24, 12) };
                let gt = GroundTruth::dense(random_tensor(&[1, 1, h, w], seed + 50).abs().scale(3.0))?;
                let lw = smooth_weights();
                let mut inputs: Vec<Tensor> = [1, 2, 3, 6, 12].iter().enumerate().map(|(i, &f)| rnd(&[1, 1, h / f, w / f], seed * 10 + i as u64)).collect();
                inputs.push(rnd(&[1, 1, h, w], seed + 100));
                inputs.push(rnd(&[1, 1, h, w], seed + 200));
                gradient_check(|t| Ok(total_loss(&t[..5], &gt, &t[5], &t[6], &lw)?.total), &inputs, &opts())
            }),
        ),
        (
            "pipeline",
            Box::new(|seed, shape| {
                let cfg = ModelConfig {
                    eaa: tiny_eaa(),
                    mga: tiny_mga(),
                    matcher: MatcherConfig {
                        d_max: 12,
                        temperature: 1.0,
                        refine_width: 2,
                    },
                    n_e: 256,
                    tau: None,
                };
                let (w, h) = if shape == 0 { (36, 24) } else { (24, 24) };
                let spec = SceneSpec::random(
                    &SceneConfig {
                        width: w,
                        height: h,
                        d_max: 12.0,
                        duration_us: 10_000,
                        foreground_layers: 1,
                        ..SceneConfig::default()
                    },
                    seed,
                );
                let pair = synth_scene(&spec)?;
                let sample = Sample::new(&pair.left, &pair.right, Some(&pair.gt), &cfg)?;
                let batch = Batch::stack(&[&sample])?;
                let gt = batch.gt.clone().expect("ground truth");
                let mut store = ParamStore::new();
                let model = Model::new(&mut store, seed, cfg, Ablation::default());
                let lw = smooth_weights();
                let ids = pick(
                    &store,
                    &["eaa.head.weight", "eaa.conv1.conv.weight", "mga.layer0.ffn2.weight", "matcher.isa0.weight", "matcher.refine_full.conv0.conv.weight"],
                );
                gradient_check_with_params(
                    &store,
                    &ids,
                    &[],
                    |_| {
                        let p = model.forward(&Ctx::new(&store, Phase::Eval), &batch)?;
                        Ok(total_loss(&p.scales, &gt, &p.left_frame, &p.right_frame, &lw)?.total)
                    },
                    // thousands of leaky-ReLU and bilinear kinks: a wide step straddles one
                    &GradCheckOptions { step: 1e-7, ..opts() },
                )
            }),
        ),
    ]
}

pub fn case_names() -> Vec<&'static str> {
    primitive_cases().into_iter().chain(custom_cases()).chain(module_cases()).map(|c| c.0).collect()
}

/// Runs every case at every seed and at both shapes. `filter` keeps cases
/// whose name contains it.
pub fn run_suite(filter: Option<&str>, mut on_result: impl FnMut(&CaseResult)) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, case) in primitive_cases().into_iter().chain(custom_cases()).chain(module_cases()) {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        for shape in 0..2 {
            for seed in SEEDS {
                let r = CaseResult {
                    name: name.to_string(),
                    seed,
                    shape,
                    report: case(seed, shape)?,
                };
                on_result(&r);
                out.push(r);
            }
        }
    }
    Ok(out)
}
