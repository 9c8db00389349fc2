//! Dev harness: sweep chosen variants over seeds with dotted-path config
//! overrides from argv, printing mean kappa per variant and the margins
//! of the full pipeline over each alternative.
//!
//! Usage: calibrate [KEY=VALUE]...

use scope_core::orchestrator::{run_experiment_matrix, ScopeConfig, Variant};

fn main() {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect();
    let cfg = ScopeConfig::from_toml("", &overrides).expect("config");
    let variants = [
        Variant::Full,
        Variant::NaiveSelfTrain,
        Variant::EtfOff,
        Variant::SinkhornOff,
        Variant::ConfidenceWeightsOff,
        Variant::PrototypeConditioningOff,
        Variant::FrozenHead,
    ];
    let seeds = [1u64, 2, 3, 4, 5];
    let t0 = std::time::Instant::now();
    let report = run_experiment_matrix(&cfg, &variants, &seeds).expect("matrix");
    let full = report
        .aggregates
        .iter()
        .find(|a| a.variant == "full")
        .map(|a| a.kappa_mean)
        .unwrap();
    for a in &report.aggregates {
        println!(
            "{:28} kappa {:.4} +- {:.4}   margin {:+.4}",
            a.variant,
            a.kappa_mean,
            a.kappa_std,
            full - a.kappa_mean
        );
    }
    for f in &report.failures {
        println!("FAILURE: {f}");
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
