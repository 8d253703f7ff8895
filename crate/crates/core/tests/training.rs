use evstereo::losses::total_loss;
use evstereo::nn::{Ctx, Phase};
use evstereo::pipeline::{Batch, Sample};
use evstereo::train::{lr_schedule, run_training, samples, synthetic_scenes, AdamHyper, RunOptions, TrainConfig, Trainer};

const TINY: &str = "scene_width=48
scene_height=24
eaa_widths=2,2,3,2
l_channels=2
spade_hidden=2
c_e=4
ffn_hidden=4
d_max=12
refine_width=2
n_e=512
batch_size=1
";

fn config(extra: &str) -> TrainConfig {
    TrainConfig::from_kv(&format!("{TINY}{extra}")).unwrap()
}

fn data(cfg: &TrainConfig) -> Vec<Sample> {
    samples(&synthetic_scenes(cfg).unwrap(), &cfg.model).unwrap()
}

fn no_output() -> RunOptions<'static> {
    RunOptions {
        out_dir: None,
        resume: None,
        stop_at: None,
    }
}

#[test]
fn single_sample_loss_decreases_per_window() {
    let cfg = config("scenes=1\nepochs=200\n");
    let d = data(&cfg);
    let out = run_training(cfg, &d, &no_output()).unwrap();
    assert_eq!(out.log.len(), 200);
    let means: Vec<f64> = out.log.chunks(50).map(|w| w.iter().map(|r| r.loss_total).sum::<f64>() / w.len() as f64).collect();
    for pair in means.windows(2) {
        assert!(pair[1] < pair[0], "window means {means:?}");
    }
}

/// Census computed on gradient-blocked frames adds to the logged value only;
/// parameters must match a run with the term switched off.
#[test]
fn unused_census_term_leaves_parameters_unchanged() {
    let off = config("scenes=2\nepochs=5\nuse_census=false\n");
    let d = data(&off);
    let mut a = Trainer::new(off.clone()).unwrap();
    for _ in 0..10 {
        a.step(&d).unwrap();
    }

    let mut b = Trainer::new(off).unwrap();
    let with_census = config("scenes=2\nepochs=5\n").effective_loss();
    assert!(with_census.lambda_census > 0.0);
    let total = b.total_iters(d.len());
    for it in 0..10 {
        let idx = b.batch_indices(it, d.len());
        let batch = Batch::stack(&idx.iter().map(|&i| &d[i]).collect::<Vec<_>>()).unwrap();
        b.store.zero_grad();
        let pred = b.model.forward(&Ctx::new(&b.store, Phase::Train), &batch).unwrap();
        let gt = batch.gt.as_ref().unwrap();
        let loss = total_loss(&pred.scales, gt, &pred.left_frame.detach(), &pred.right_frame.detach(), &with_census).unwrap();
        assert!(loss.census > 0.0);
        loss.total.backward().unwrap();
        let cfg = &b.cfg;
        let h = AdamHyper {
            lr: lr_schedule((it + 1) as f64 / total as f64, cfg),
            betas: cfg.betas,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            decoupled: cfg.decoupled_decay,
        };
        b.adam.step(&b.store, &h);
    }
    assert_eq!(a.store.export(), b.store.export());
}

#[test]
fn resume_reproduces_trace() {
    let cfg = config("scenes=2\nepochs=4\ncheckpoint_every=3\n");
    let d = data(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let whole = run_training(
        cfg.clone(),
        &d,
        &RunOptions {
            out_dir: Some(&full),
            ..no_output()
        },
    )
    .unwrap();
    run_training(
        cfg.clone(),
        &d,
        &RunOptions {
            out_dir: Some(&part),
            stop_at: Some(3),
            ..no_output()
        },
    )
    .unwrap();
    let ckpt = part.join("ckpt_000003.evck");
    let rest = run_training(
        cfg,
        &d,
        &RunOptions {
            out_dir: Some(&part),
            resume: Some(&ckpt),
            stop_at: None,
        },
    )
    .unwrap();
    assert_eq!(rest.log.len(), 5);
    assert_eq!(std::fs::read(full.join("loss.csv")).unwrap(), std::fs::read(part.join("loss.csv")).unwrap());
    assert_eq!(whole.trainer.store.export(), rest.trainer.store.export());
    assert_eq!(std::fs::read(full.join("ckpt_000008.evck")).unwrap(), std::fs::read(part.join("ckpt_000008.evck")).unwrap());
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(run_training(config("scenes=1\n"), &[], &no_output()).is_err());
}
