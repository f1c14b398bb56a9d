//! Long-tailed synthetic benchmark: trains the full method and two ablations
//! over several seeds and prints balanced accuracy on a balanced held-out draw.
//!
//! Usage: `cargo run --release --example benchmark -- [config.toml] [separation] [within] [modes]`

use std::time::Instant;

use subtail::data_io::{generate_synthetic, parse_config, sample_balanced, SyntheticSpec};
use subtail::reweighting::ReweightMode;
use subtail::trainer::{evaluate, train, TrainConfig, Variant};

fn main() -> subtail::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = match args.first() {
        Some(path) if !path.is_empty() => {
            parse_config(&std::fs::read_to_string(path).expect("config file"))?
        }
        _ => TrainConfig::default(),
    };
    let arg = |i: usize, default: f64| args.get(i).map_or(default, |s| s.parse().expect("number"));
    let variants = [
        ("full", Variant::full()),
        (
            "no-reweighting",
            Variant {
                mode: ReweightMode::None,
                ..Variant::full()
            },
        ),
        (
            "static",
            Variant {
                dynamic: false,
                ..Variant::full()
            },
        ),
    ];
    let mut sums = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            classes: 10,
            dim: 32,
            n_max: 2000,
            imbalance_ratio: 65.78,
            separation: arg(1, 1.0),
            within_spread: arg(2, 1.0),
            modes: arg(3, 1.0) as usize,
            seed,
        };
        let train_set = generate_synthetic(&spec)?;
        let test_set = sample_balanced(&spec, 200, "eval")?;
        let rows: Vec<usize> = (0..test_set.len()).collect();
        for (i, (name, v)) in variants.iter().enumerate() {
            let started = Instant::now();
            let config = TrainConfig {
                seed,
                ..v.apply(&base)
            };
            let outcome = train(&train_set, &config)?;
            let m = evaluate(&outcome.model, &test_set, &rows)?;
            sums[i] += m.balanced_accuracy;
            println!(
                "seed {seed} {name:>15}: BA {:.4}  F1 {:.4}  ({:.1}s)  recall {:?}",
                m.balanced_accuracy,
                m.balanced_f1,
                started.elapsed().as_secs_f64(),
                m.recall
                    .iter()
                    .map(|r| (r * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()
            );
        }
    }
    for (i, (name, _)) in variants.iter().enumerate() {
        println!("mean {name:>15}: {:.4}", sums[i] / seeds as f64);
    }
    Ok(())
}
