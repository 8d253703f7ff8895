//! Overfits a handful of synthetic scenes and reports progress.
//!
//! Usage: `cargo run --release -p evstereo --example overfit [iters|0] [key=value ...]`

use std::time::Instant;

use evstereo::train::{evaluate_dataset, samples, synthetic_scenes, TrainConfig, Trainer};

fn main() -> evstereo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: usize = args.first().and_then(|a| a.parse().ok()).unwrap_or(0);
    let overrides = args.iter().skip(1).cloned().collect::<Vec<_>>().join("\n");
    let cfg = TrainConfig::from_kv(&overrides)?;
    let t0 = Instant::now();
    let pairs = synthetic_scenes(&cfg)?;
    for (i, p) in pairs.iter().enumerate() {
        println!("scene {i}: {} / {} events", p.left.len(), p.right.len());
    }
    let data = samples(&pairs, &cfg.model)?;
    println!("data ready in {:.1}s", t0.elapsed().as_secs_f64());
    let mut t = Trainer::new(cfg)?;
    println!("{} trainable values, {} iterations scheduled", t.store.num_trainable_values(), t.total_iters(data.len()));
    let r = evaluate_dataset(&t.model, &t.store, &data)?;
    println!("init mae={:.3} rmse={:.3} 2pe={:.1}", r.mae, r.rmse, r.pe2);
    let iters = if iters == 0 { t.total_iters(data.len()) } else { iters };
    let t0 = Instant::now();
    let mut acc = 0.0;
    for i in 0..iters {
        let row = t.step(&data)?;
        acc += row.loss_total;
        if (i + 1) % 50 == 0 {
            let r = evaluate_dataset(&t.model, &t.store, &data)?;
            println!(
                "iter {:5} lr {:.2e} loss {:.4} census {:.3} | mae {:.3} rmse {:.3} 1pe {:.1} 2pe {:.1} | {:.2}s/iter",
                i + 1,
                row.lr,
                acc / 50.0,
                row.loss_census,
                r.mae,
                r.rmse,
                r.pe1,
                r.pe2,
                t0.elapsed().as_secs_f64() / (i + 1) as f64
            );
            acc = 0.0;
        }
    }
    Ok(())
}
