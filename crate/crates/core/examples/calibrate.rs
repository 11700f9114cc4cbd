//! Scans noise level and UNKNOWN quantile for an experiment config and
//! prints baseline and fully tuned fidelity per victim.
//!
//! cargo run --release -p compdef-core --example calibrate -- configs/sweep.json 0.03,0.05,0.08 0.95,0.99

use std::path::PathBuf;

use compdef::harness::{build_corpus_db, load_victims, run_cell, ExperimentConfig};
use compdef::perfsim::total_latency;

fn list(arg: Option<String>, default: &[f64]) -> Vec<f64> {
    match arg {
        Some(s) => s.split(',').map(|x| x.parse().expect("number")).collect(),
        None => default.to_vec(),
    }
}

fn main() -> compdef::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "configs/sweep.json".into()));
    let sigmas = list(args.next(), &[0.05]);
    let quantiles = list(args.next(), &[0.99]);
    let base = ExperimentConfig::load(&path)?;
    let d = base.device_profile()?;
    let victims = load_victims(&base)?;
    let top = *base.trial_grid.last().unwrap_or(&0);

    for &sigma in &sigmas {
        for &q in &quantiles {
            let mut cfg = base.clone();
            cfg.noise_sigma = sigma;
            cfg.corpus.tau_quantile = q;
            let (db, corpus) = build_corpus_db(&cfg, &d, &victims)?;
            println!(
                "sigma {sigma} quantile {q}: {} corpus graphs, tau {:.3}",
                corpus.len(),
                db.unknown_threshold
            );
            for g in &victims {
                let mut line = format!("  {:24}", g.name());
                for trials in [0, top] {
                    let (mut f, mut unk, mut lat) = (0.0, 0.0, 0.0);
                    for &seed in &cfg.seeds {
                        let a = run_cell(g, trials, seed, &cfg, &d, &db)?;
                        f += a.score.value;
                        unk += a.prediction.unknown_fraction();
                        lat += total_latency(&a.trace) as f64;
                    }
                    let n = cfg.seeds.len() as f64;
                    line += &format!(
                        " | t{trials}: fidelity {:.3} unknown {:.2} latency {:.0} ns",
                        f / n,
                        unk / n,
                        lat / n
                    );
                }
                println!("{line}");
            }
        }
    }
    Ok(())
}
