//! Named parameters and the layer building blocks shared by every network
//! stage.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::gradcheck::{gradient_check, GradCheckOptions, GradReport};
use crate::tensor::{ConvOptions, Tensor};

/// Variance floor added under normalization square roots.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Negative slope of every leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

struct Entry {
    name: String,
    value: RefCell<Tensor>,
    trainable: bool,
}

/// Owns every parameter and buffer of a model under unique dotted names.
///
/// Trainable entries are tracked leaves, so a forward pass that reads them
/// records gradients into them.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        let value = if trainable { value.requires_grad() } else { value.detach() };
        self.entries.push(Entry {
            name,
            value: RefCell::new(value),
            trainable,
        });
        ParamId(id)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    pub fn get(&self, id: ParamId) -> Tensor {
        self.entries[id.0].value.borrow().clone()
    }

    /// Replaces a value, keeping its shape and trainability.
    pub fn set(&self, id: ParamId, value: Tensor) {
        let e = &self.entries[id.0];
        assert_eq!(
            e.value.borrow().shape(),
            value.shape(),
            "shape change for `{}`",
            e.name
        );
        let value = if e.trainable { value.detach().requires_grad() } else { value.detach() };
        *e.value.borrow_mut() = value;
    }

    /// Substitutes an arbitrary tensor (e.g. a gradient-check leaf) without
    /// touching its tracking state.
    pub fn substitute(&self, id: ParamId, value: Tensor) {
        *self.entries[id.0].value.borrow_mut() = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Trainable ids whose names start with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.trainable_ids()
            .into_iter()
            .filter(|&id| self.name(id).starts_with(prefix))
            .collect()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable_ids().iter().map(|&id| self.get(id).numel()).sum()
    }

    pub fn zero_grad(&self) {
        for e in &self.entries {
            e.value.borrow().zero_grad();
        }
    }

    /// `(name, shape, values)` of every entry, in registration order.
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.entries
            .iter()
            .map(|e| {
                let t = e.value.borrow();
                (e.name.clone(), t.shape().to_vec(), t.to_vec())
            })
            .collect()
    }

    /// Loads values by name. Every entry of the store must be present.
    pub fn import(&self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let by_name: HashMap<&str, &(String, Vec<usize>, Vec<f64>)> =
            entries.iter().map(|e| (e.0.as_str(), e)).collect();
        for (i, e) in self.entries.iter().enumerate() {
            let (_, shape, data) = by_name
                .get(e.name.as_str())
                .ok_or_else(|| Error::UnknownParameter(e.name.clone()))?;
            if shape.as_slice() != e.value.borrow().shape() {
                return Err(Error::Format(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    e.name,
                    shape,
                    e.value.borrow().shape()
                )));
            }
            self.set(ParamId(i), Tensor::new(data.clone(), shape)?);
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash over names and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in &self.entries {
            feed(e.name.as_bytes());
            for v in e.value.borrow().data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Gradient-checks `f` with respect to `inputs` followed by the parameters
/// `ids`. Inside `f`, `t[..inputs.len()]` are the inputs and the parameters
/// are already bound in `store`. Parameter values are restored afterwards.
pub fn gradient_check_with_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    inputs: &[Tensor],
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    let originals: Vec<Tensor> = ids.iter().map(|&id| store.get(id)).collect();
    let mut all = inputs.to_vec();
    all.extend(originals.iter().cloned());
    let n_in = inputs.len();
    let report = gradient_check(
        |t| {
            for (&id, v) in ids.iter().zip(&t[n_in..]) {
                store.substitute(id, v.clone());
            }
            f(t)
        },
        &all,
        opts,
    );
    for (&id, v) in ids.iter().zip(originals) {
        store.substitute(id, v);
    }
    report
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights scaled by fan-in.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.normal(shape, std)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(data, shape).expect("consistent shape")
    }
}

/// Everything a forward pass reads besides its inputs.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub store: &'a ParamStore,
    pub phase: Phase,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, phase: Phase) -> Self {
        Self { store, phase }
    }

    pub fn p(&self, id: ParamId) -> Tensor {
        self.store.get(id)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: ConvOptions,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        opts: ConvOptions,
    ) -> Self {
        let w = init.kaiming(&[cout, cin, k, k], cin * k * k);
        Self::with_weight(store, name, w, true, opts)
    }

    /// Zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, opts: ConvOptions) -> Self {
        Self::with_weight(store, name, Tensor::zeros(&[cout, cin, k, k]), true, opts)
    }

    pub fn with_weight(store: &mut ParamStore, name: &str, weight: Tensor, bias: bool, opts: ConvOptions) -> Self {
        let cout = weight.shape()[0];
        let weight = store.param(format!("{name}.weight"), weight);
        let bias = bias.then(|| store.param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, opts }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let b = self.bias.map(|id| cx.p(id));
        x.conv2d(&cx.p(self.weight), b.as_ref(), self.opts)
    }
}

/// Batch normalization over `[N, C, ...]` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub affine: Option<(ParamId, ParamId)>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, affine: bool) -> Self {
        let running_mean = store.buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let running_var = store.buffer(format!("{name}.running_var"), Tensor::ones(&[channels]));
        let affine = affine.then(|| {
            (
                store.param(format!("{name}.gamma"), Tensor::ones(&[channels])),
                store.param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            )
        });
        Self {
            running_mean,
            running_var,
            affine,
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let y = match cx.phase {
            Phase::Train => {
                let (y, stats) = x.batch_norm_train(NORM_EPS)?;
                let blend = |id: ParamId, batch: &[f64]| {
                    let old = cx.p(id);
                    let new = old
                        .data()
                        .iter()
                        .zip(batch)
                        .map(|(o, b)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * b)
                        .collect();
                    cx.store.set(id, Tensor::new(new, old.shape()).expect("same shape"));
                };
                blend(self.running_mean, &stats.mean);
                blend(self.running_var, &stats.var_unbiased);
                y
            }
            Phase::Eval => {
                let m = cx.p(self.running_mean);
                let v = cx.p(self.running_var);
                x.batch_norm_eval(m.data(), v.data(), NORM_EPS)?
            }
        };
        match self.affine {
            None => Ok(y),
            Some((g, b)) => {
                let c = x.shape()[1];
                let mut bshape = vec![1; x.rank()];
                bshape[1] = c;
                let gamma = cx.p(g).reshape(&bshape)?;
                let beta = cx.p(b).reshape(&bshape)?;
                y.mul(&gamma)?.add(&beta)
            }
        }
    }
}

/// Convolution → batch normalization → leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvModule {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvModule {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        opts: ConvOptions,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, init, &format!("{name}.conv"), cin, cout, 3, opts),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout, true),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(cx, x)?;
        Ok(self.bn.forward(cx, &y)?.leaky_relu(LEAKY_SLOPE))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, din: usize, dout: usize) -> Self {
        let w = init.normal(&[dout, din], (1.0 / din.max(1) as f64).sqrt());
        Self::with_weight(store, name, w)
    }

    pub fn zeros(store: &mut ParamStore, name: &str, din: usize, dout: usize) -> Self {
        Self::with_weight(store, name, Tensor::zeros(&[dout, din]))
    }

    pub fn with_weight(store: &mut ParamStore, name: &str, weight: Tensor) -> Self {
        let dout = weight.shape()[0];
        Self {
            weight: store.param(format!("{name}.weight"), weight),
            bias: store.param(format!("{name}.bias"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        x.linear(&cx.p(self.weight), Some(&cx.p(self.bias)))
    }
}

/// Layer normalization over the last axis with affine parameters.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.param(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.param(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(NORM_EPS)?.mul(&cx.p(self.gamma))?.add(&cx.p(self.beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;

    #[test]
    fn affine_identity_matches_plain_batch_norm() {
        let mut store = ParamStore::new();
        let plain = BatchNorm::new(&mut store, "a", 3, false);
        let affine = BatchNorm::new(&mut store, "b", 3, true);
        let cx = Ctx::new(&store, Phase::Train);
        let x = random_tensor(&[2, 3, 4, 4], 1);
        let y0 = plain.forward(&cx, &x).unwrap();
        let y1 = affine.forward(&cx, &x).unwrap();
        assert_eq!(y0.data(), y1.data());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, false);
        let x = Tensor::new(vec![1.0, 3.0, 5.0, 7.0], &[2, 1, 1, 2]).unwrap();
        bn.forward(&Ctx::new(&store, Phase::Train), &x).unwrap();
        let m = store.get(bn.running_mean).item();
        let v = store.get(bn.running_var).item();
        assert!((m - 0.4).abs() < 1e-15);
        // unbiased variance of {1,3,5,7} is 20/3
        assert!((v - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let y = bn.forward(&Ctx::new(&store, Phase::Eval), &x).unwrap();
        assert!(((y.data()[0]) - (1.0 - m) / (v + NORM_EPS).sqrt()).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.param("x", Tensor::zeros(&[1]));
        store.param("x", Tensor::zeros(&[1]));
    }

    #[test]
    fn export_import_roundtrip() {
        let mut store = ParamStore::new();
        let mut init = Init::new(3);
        Conv2d::new(&mut store, &mut init, "c", 2, 3, 3, ConvOptions::same(3));
        let snapshot = store.export();
        let before = store.checksum();
        for id in store.trainable_ids() {
            let t = store.get(id);
            store.set(id, t.add_scalar(1.0));
        }
        assert_ne!(store.checksum(), before);
        store.import(&snapshot).unwrap();
        assert_eq!(store.checksum(), before);
    }
}
