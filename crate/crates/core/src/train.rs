//! Training configuration, Adam, the learning-rate schedule and the
//! reproducible training loop.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Entry};
use crate::eaa::EaaConfig;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossWeights, SignMode, SOFT_SIGN_SCALE};
use crate::matcher::MatcherConfig;
use crate::metrics::{disparity_metrics, MetricReport};
use crate::mga::MgaConfig;
use crate::nn::{Ctx, ParamId, ParamStore, Phase};
use crate::pipeline::{crop, Ablation, Batch, Model, ModelConfig, Prediction, Sample};
use crate::synth::{synth_scene, SceneConfig, SceneSpec, SyntheticPair};
use crate::tensor::{no_grad, Tensor};

pub const CSV_HEADER: &str = "iter,lr,loss_total,loss_l1,loss_census";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Shrink weights directly rather than adding `wd·p` to the gradient.
    pub decoupled_decay: bool,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the
    /// final one.
    pub checkpoint_every: usize,
    pub loss: LossWeights,
    pub model: ModelConfig,
    pub ablation: Ablation,
    /// Synthetic dataset used by the command-line tool.
    pub scenes: usize,
    pub scene_width: usize,
    pub scene_height: usize,
    pub data_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-3,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            decoupled_decay: true,
            warmup_epochs: 3,
            epochs: 1000,
            batch_size: 2,
            seed: 0,
            checkpoint_every: 0,
            loss: LossWeights::default(),
            model: ModelConfig::desk(),
            ablation: Ablation::default(),
            scenes: 4,
            scene_width: 96,
            scene_height: 64,
            data_seed: 0,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn sign_name(s: SignMode) -> (&'static str, f64) {
    match s {
        SignMode::Hard => ("hard", SOFT_SIGN_SCALE),
        SignMode::Soft(k) => ("soft", k),
        SignMode::StraightThrough(k) => ("ste", k),
    }
}

impl TrainConfig {
    /// Flat `key=value` lines covering every field.
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let (sign, scale) = sign_name(self.loss.sign);
        let tau = m.tau.map_or_else(|| "auto".to_string(), |t| t.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("lr_base", self.lr_base.to_string()),
            ("beta1", self.betas.0.to_string()),
            ("beta2", self.betas.1.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("decoupled_decay", self.decoupled_decay.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("lambda_l", list(&self.loss.lambda_l)),
            ("lambda_census", self.loss.lambda_census.to_string()),
            ("epsilon", self.loss.epsilon.to_string()),
            ("census_k", self.loss.k.to_string()),
            ("census_sign", sign.to_string()),
            ("soft_sign_scale", scale.to_string()),
            ("l_channels", m.eaa.l_channels.to_string()),
            ("eaa_widths", list(&m.eaa.widths)),
            ("spade_hidden", m.eaa.spade_hidden.to_string()),
            ("c_e", m.mga.c_e.to_string()),
            ("heads", m.mga.heads.to_string()),
            ("points", m.mga.points.to_string()),
            ("mga_layers", m.mga.layers.to_string()),
            ("ffn_hidden", m.mga.ffn_hidden.to_string()),
            ("d_max", m.matcher.d_max.to_string()),
            ("temperature", m.matcher.temperature.to_string()),
            ("refine_width", m.matcher.refine_width.to_string()),
            ("n_e", m.n_e.to_string()),
            ("tau", tau),
            ("use_eaa", self.ablation.eaa.to_string()),
            ("use_mga", self.ablation.mga.to_string()),
            ("use_census", self.ablation.census.to_string()),
            ("scenes", self.scenes.to_string()),
            ("scene_width", self.scene_width.to_string()),
            ("scene_height", self.scene_height.to_string()),
            ("data_seed", self.data_seed.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut sign = "ste".to_string();
        let mut scale = SOFT_SIGN_SCALE;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::Config { line: i + 1, detail };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("`{k}`: `{v}` is not a number")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("`{k}`: `{v}` is not a non-negative integer")));
            let flag = |v: &str| v.parse::<bool>().map_err(|_| bad(format!("`{k}`: `{v}` is not true or false")));
            let m = &mut c.model;
            match k {
                "lr_base" => c.lr_base = num(v)?,
                "beta1" => c.betas.0 = num(v)?,
                "beta2" => c.betas.1 = num(v)?,
                "adam_eps" => c.adam_eps = num(v)?,
                "weight_decay" => c.weight_decay = num(v)?,
                "decoupled_decay" => c.decoupled_decay = flag(v)?,
                "warmup_epochs" => c.warmup_epochs = int(v)?,
                "epochs" => c.epochs = int(v)?,
                "batch_size" => c.batch_size = int(v)?,
                "seed" => c.seed = v.parse().map_err(|_| bad(format!("`seed`: `{v}` is not an integer")))?,
                "checkpoint_every" => c.checkpoint_every = int(v)?,
                "lambda_l" => {
                    let vals = v.split(',').map(|x| num(x.trim())).collect::<Result<Vec<_>>>()?;
                    c.loss.lambda_l = vals.try_into().map_err(|_| bad("`lambda_l` needs five values".into()))?;
                }
                "lambda_census" => c.loss.lambda_census = num(v)?,
                "epsilon" => c.loss.epsilon = num(v)?,
                "census_k" => c.loss.k = int(v)?,
                "census_sign" => sign = v.to_string(),
                "soft_sign_scale" => scale = num(v)?,
                "l_channels" => m.eaa.l_channels = int(v)?,
                "eaa_widths" => {
                    let vals = v.split(',').map(|x| int(x.trim())).collect::<Result<Vec<_>>>()?;
                    m.eaa.widths = vals.try_into().map_err(|_| bad("`eaa_widths` needs four values".into()))?;
                }
                "spade_hidden" => m.eaa.spade_hidden = int(v)?,
                "c_e" => m.mga.c_e = int(v)?,
                "heads" => m.mga.heads = int(v)?,
                "points" => m.mga.points = int(v)?,
                "mga_layers" => m.mga.layers = int(v)?,
                "ffn_hidden" => m.mga.ffn_hidden = int(v)?,
                "d_max" => m.matcher.d_max = int(v)?,
                "temperature" => m.matcher.temperature = num(v)?,
                "refine_width" => m.matcher.refine_width = int(v)?,
                "n_e" => m.n_e = int(v)?,
                "tau" => m.tau = if v == "auto" { None } else { Some(num(v)?) },
                "use_eaa" => c.ablation.eaa = flag(v)?,
                "use_mga" => c.ablation.mga = flag(v)?,
                "use_census" => c.ablation.census = flag(v)?,
                "scenes" => c.scenes = int(v)?,
                "scene_width" => c.scene_width = int(v)?,
                "scene_height" => c.scene_height = int(v)?,
                "data_seed" => c.data_seed = v.parse().map_err(|_| bad(format!("`data_seed`: `{v}` is not an integer")))?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        c.loss.sign = match sign.as_str() {
            "hard" => SignMode::Hard,
            "soft" => SignMode::Soft(scale),
            "ste" => SignMode::StraightThrough(scale),
            other => {
                return Err(Error::Config {
                    line: 0,
                    detail: format!("census_sign must be hard, soft or ste, got `{other}`"),
                })
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: &str| {
            Err(Error::Config {
                line: 0,
                detail: detail.to_string(),
            })
        };
        let m = &self.model;
        if !(self.lr_base > 0.0) || !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("lr_base and adam_eps must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return fail("betas must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.warmup_epochs > self.epochs {
            return fail("epochs and batch_size must be positive and warmup_epochs at most epochs");
        }
        if m.eaa.l_channels == 0 || m.eaa.widths.contains(&0) || m.eaa.spade_hidden == 0 {
            return fail("EAA sizes must be positive");
        }
        if m.mga.c_e == 0 || m.mga.c_e % 4 != 0 || m.mga.heads == 0 || m.mga.c_e % m.mga.heads != 0 {
            return fail("c_e must be a positive multiple of 4 and of heads");
        }
        if m.mga.points == 0 || m.mga.ffn_hidden == 0 || m.matcher.refine_width == 0 {
            return fail("points, ffn_hidden and refine_width must be positive");
        }
        if m.matcher.d_max == 0 || !(m.matcher.temperature > 0.0) || m.n_e == 0 {
            return fail("d_max, temperature and n_e must be positive");
        }
        if m.tau.is_some_and(|t| !(t > 0.0)) {
            return fail("tau must be positive");
        }
        if self.scenes == 0 || self.scene_width == 0 || self.scene_height == 0 {
            return fail("scenes and scene extents must be positive");
        }
        self.loss.validate()
    }

    /// Loss weights after the census switch.
    pub fn effective_loss(&self) -> LossWeights {
        let mut w = self.loss.clone();
        if !self.ablation.census {
            w.lambda_census = 0.0;
        }
        w
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone()
    }
}

/// Convenience constructors for nested configs in tests and tools.
pub fn model_config(eaa: EaaConfig, mga: MgaConfig, matcher: MatcherConfig, n_e: usize) -> ModelConfig {
    ModelConfig {
        eaa,
        mga,
        matcher,
        n_e,
        tau: None,
    }
}

/// Linear warmup to `lr_base` over `warmup_epochs / epochs` of training,
/// then cosine decay to zero.
pub fn lr_schedule(epoch_fraction: f64, cfg: &TrainConfig) -> f64 {
    let f = epoch_fraction.clamp(0.0, 1.0);
    let warm = cfg.warmup_epochs as f64 / cfg.epochs as f64;
    if f < warm {
        cfg.lr_base * f / warm
    } else if warm >= 1.0 {
        cfg.lr_base
    } else {
        let s = (f - warm) / (1.0 - warm);
        cfg.lr_base * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub ids: Vec<ParamId>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    /// Parameter tensors left untouched because of a non-finite gradient.
    pub skipped: u64,
}

pub struct AdamHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let ids = store.trainable_ids();
        let zeros: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            ids,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            skipped: 0,
        }
    }

    /// One update from the gradients currently held by the parameters.
    /// Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &ParamStore, h: &AdamHyper) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = h.betas;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (k, &id) in self.ids.iter().enumerate() {
            let p = store.get(id);
            let Some(g) = p.grad() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                self.skipped += 1;
                continue;
            }
            let shrink = if h.decoupled { 1.0 - h.lr * h.weight_decay } else { 1.0 };
            let mut data = p.to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..data.len() {
                let gi = if h.decoupled { g[i] } else { g[i] + h.weight_decay * data[i] };
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let (mh, vh) = (m[i] / c1, v[i] / c2);
                data[i] = data[i] * shrink - h.lr * mh / (vh.sqrt() + h.eps);
            }
            store.set(id, Tensor::new(data, p.shape()).expect("same shape"));
        }
    }

    fn export(&self, store: &ParamStore) -> Vec<Entry> {
        let mut out = Vec::new();
        for (k, &id) in self.ids.iter().enumerate() {
            let shape = store.get(id).shape().to_vec();
            out.push((format!("optim.m.{}", store.name(id)), shape.clone(), self.m[k].clone()));
            out.push((format!("optim.v.{}", store.name(id)), shape, self.v[k].clone()));
        }
        out.push(("optim.step".into(), vec![], vec![self.step as f64]));
        out.push(("optim.skipped".into(), vec![], vec![self.skipped as f64]));
        out
    }

    fn import(&mut self, store: &ParamStore, entries: &[Entry]) -> Result<()> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|e| e.0 == name)
                .map(|e| e.2.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
        };
        for (k, &id) in self.ids.iter().enumerate() {
            let n = store.get(id).numel();
            let (m, v) = (find(&format!("optim.m.{}", store.name(id)))?, find(&format!("optim.v.{}", store.name(id)))?);
            if m.len() != n || v.len() != n {
                return Err(Error::Format(format!("optimizer state of `{}` has the wrong size", store.name(id))));
            }
            self.m[k] = m;
            self.v[k] = v;
        }
        self.step = find("optim.step")?[0] as u64;
        self.skipped = find("optim.skipped")?[0] as u64;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_l1: f64,
    pub loss_census: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.iter, self.lr, self.loss_total, self.loss_l1, self.loss_census)
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub model: Model,
    pub adam: Adam,
    /// Completed iterations.
    pub iter: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, cfg.seed, cfg.model_config(), cfg.ablation);
        let adam = Adam::new(&store);
        Ok(Self {
            cfg,
            store,
            model,
            adam,
            iter: 0,
        })
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    pub fn total_iters(&self, n: usize) -> usize {
        self.cfg.epochs * self.batches_per_epoch(n)
    }

    /// Sample indices of iteration `iter`; each epoch is a fresh
    /// permutation seeded by `(seed, epoch)`.
    pub fn batch_indices(&self, iter: usize, n: usize) -> Vec<usize> {
        let bpe = self.batches_per_epoch(n);
        let (epoch, pos) = (iter / bpe, iter % bpe);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64);
        order.shuffle(&mut rng);
        let start = pos * self.cfg.batch_size;
        order[start..(start + self.cfg.batch_size).min(n)].to_vec()
    }

    pub fn loss(&self, pred: &Prediction, batch: &Batch) -> Result<LossBreakdown> {
        let gt = batch
            .gt
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument {
                op: "train",
                detail: "training samples need ground truth".into(),
            })?;
        total_loss(&pred.scales, gt, &pred.left_frame, &pred.right_frame, &self.cfg.effective_loss())
    }

    /// Runs one iteration. A non-finite loss leaves the parameters
    /// untouched and returns [`Error::Diverged`].
    pub fn step(&mut self, data: &[Sample]) -> Result<LogRow> {
        let n = data.len();
        let total = self.total_iters(n);
        let idx = self.batch_indices(self.iter, n);
        let batch = Batch::stack(&idx.iter().map(|&i| &data[i]).collect::<Vec<_>>())?;
        let lr = lr_schedule((self.iter + 1) as f64 / total as f64, &self.cfg);
        self.store.zero_grad();
        let pred = self.model.forward(&Ctx::new(&self.store, Phase::Train), &batch)?;
        let loss = self.loss(&pred, &batch)?;
        let value = loss.total.item();
        if !value.is_finite() {
            return Err(Error::Diverged { iter: self.iter, loss: value });
        }
        loss.total.backward()?;
        drop(pred);
        self.adam.step(
            &self.store,
            &AdamHyper {
                lr,
                betas: self.cfg.betas,
                eps: self.cfg.adam_eps,
                weight_decay: self.cfg.weight_decay,
                decoupled: self.cfg.decoupled_decay,
            },
        );
        let row = LogRow {
            iter: self.iter,
            lr,
            loss_total: value,
            loss_l1: loss.weighted_l1,
            loss_census: loss.census,
        };
        self.iter += 1;
        Ok(row)
    }

    pub fn checkpoint_entries(&self) -> Vec<Entry> {
        let mut e = self.store.export();
        e.extend(self.adam.export(&self.store));
        e.push(("train.iter".into(), vec![], vec![self.iter as f64]));
        e
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.checkpoint_entries())
    }

    /// Restores parameters, buffers, optimizer state and the iteration
    /// counter. Model entries must match the configuration exactly.
    pub fn restore(&mut self, entries: &[Entry]) -> Result<()> {
        let model: Vec<Entry> = entries.iter().filter(|e| !e.0.starts_with("optim.") && !e.0.starts_with("train.")).cloned().collect();
        self.store.import(&model)?;
        self.adam.import(&self.store, entries)?;
        self.iter = entries
            .iter()
            .find(|e| e.0 == "train.iter")
            .map(|e| e.2[0] as usize)
            .ok_or_else(|| Error::Format("checkpoint lacks `train.iter`".into()))?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.restore(&checkpoint::load(path)?)
    }
}

/// Loads inference weights; optimizer entries are ignored.
pub fn load_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let entries = checkpoint::load(path)?;
    let model: Vec<Entry> = entries.into_iter().filter(|e| !e.0.starts_with("optim.") && !e.0.starts_with("train.")).collect();
    store.import(&model)
}

pub struct RunOptions<'a> {
    /// Receives `loss.csv`, `config.txt` and checkpoints.
    pub out_dir: Option<&'a Path>,
    pub resume: Option<&'a Path>,
    /// Stop after this many completed iterations instead of the full
    /// schedule.
    pub stop_at: Option<usize>,
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<LogRow>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_name(iter: usize) -> String {
    format!("ckpt_{iter:06}.evck")
}

/// Trains on `data`, logging every iteration. Resuming appends to the
/// existing log.
pub fn run_training(cfg: TrainConfig, data: &[Sample], opts: &RunOptions) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidArgument {
            op: "run_training",
            detail: "dataset is empty".into(),
        });
    }
    let mut trainer = Trainer::new(cfg)?;
    if let Some(p) = opts.resume {
        trainer.load(p)?;
    }
    let total = trainer.total_iters(data.len());
    let end = opts.stop_at.map_or(total, |s| s.min(total));
    let mut csv = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), trainer.cfg.to_kv())?;
            let path = dir.join("loss.csv");
            let f = if opts.resume.is_some() && path.exists() {
                fs::OpenOptions::new().append(true).open(path)?
            } else {
                let mut f = fs::File::create(path)?;
                writeln!(f, "{CSV_HEADER}")?;
                f
            };
            Some(f)
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut final_checkpoint = None;
    while trainer.iter < end {
        let row = match trainer.step(data) {
            Ok(r) => r,
            Err(e @ Error::Diverged { .. }) => {
                if let Some(dir) = opts.out_dir {
                    trainer.save(&dir.join("last_good.evck"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", row.csv())?;
        }
        log.push(row);
        if let Some(dir) = opts.out_dir {
            let every = trainer.cfg.checkpoint_every;
            if (every > 0 && trainer.iter % every == 0) || trainer.iter == end {
                let p = dir.join(checkpoint_name(trainer.iter));
                trainer.save(&p)?;
                final_checkpoint = Some(p);
            }
        }
    }
    Ok(TrainOutcome {
        trainer,
        log,
        final_checkpoint,
    })
}

/// Scene generator settings implied by the dataset keys of `cfg`.
pub fn scene_config(cfg: &TrainConfig) -> SceneConfig {
    SceneConfig {
        width: cfg.scene_width,
        height: cfg.scene_height,
        d_max: cfg.model.matcher.d_max as f64,
        ..SceneConfig::default()
    }
}

/// Seed of scene `i` of the synthetic suite.
pub fn scene_seed(data_seed: u64, i: usize) -> u64 {
    data_seed * 1000 + i as u64
}

/// Renders the `cfg.scenes` synthetic scenes of the training suite.
pub fn synthetic_scenes(cfg: &TrainConfig) -> Result<Vec<SyntheticPair>> {
    let sc = scene_config(cfg);
    (0..cfg.scenes).map(|i| synth_scene(&SceneSpec::random(&sc, scene_seed(cfg.data_seed, i)))).collect()
}

/// Converts scene pairs into network-ready samples.
pub fn samples(pairs: &[SyntheticPair], model: &ModelConfig) -> Result<Vec<Sample>> {
    pairs.iter().map(|p| Sample::new(&p.left, &p.right, Some(&p.gt), model)).collect()
}

/// Runs the model in evaluation mode on one sample.
pub fn predict(model: &Model, store: &ParamStore, sample: &Sample) -> Result<Prediction> {
    no_grad(|| model.forward(&Ctx::new(store, Phase::Eval), &Batch::stack(&[sample])?))
}

/// Full-resolution metrics pooled over every valid pixel of `data`.
pub fn evaluate_dataset(model: &Model, store: &ParamStore, data: &[Sample]) -> Result<MetricReport> {
    let (mut pred, mut gt, mut valid) = (Vec::new(), Vec::new(), Vec::new());
    for s in data {
        let g = s.gt.as_ref().ok_or_else(|| Error::InvalidArgument {
            op: "evaluate",
            detail: "sample has no ground truth".into(),
        })?;
        let p = predict(model, store, s)?;
        pred.extend_from_slice(crop(&p.scales[0], s.height, s.width)?.data());
        gt.extend_from_slice(crop(&g.disp, s.height, s.width)?.data());
        valid.extend(crop(&g.valid, s.height, s.width)?.data().iter().map(|&v| v > 0.0));
    }
    disparity_metrics(&pred, &gt, &valid)
}
