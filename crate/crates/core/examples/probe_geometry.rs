//! Dev harness: learned geometry with and without the head penalty.
//! Prints head-gram off-diagonal range and pairwise cosines of class-mean
//! embeddings on labeled and unlabeled data.

use scope_core::cosine_similarity;
use scope_core::numeric::RngStream;
use scope_core::orchestrator::{run_stage1, ScopeConfig};
use scope_core::synthdata::generate_cohort;

fn main() {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let base = ScopeConfig::from_toml("", &overrides).expect("config");
    for etf_off in [false, true] {
        let mut cfg = base.clone();
        cfg.ablations.etf_off = etf_off;
        cfg.data.generate.seed = RngStream::new(1).substream("cohort").seed();
        let cohort = generate_cohort(&cfg.data.generate).unwrap();
        let art = run_stage1(&cfg, &cohort, 1).unwrap();
        let k = cohort.classes();
        // Head gram off-diagonals (normalized columns).
        let w = art.tpn.head_matrix();
        let mut head_min = f64::INFINITY;
        let mut head_max = f64::NEG_INFINITY;
        for a in 0..k {
            for b in (a + 1)..k {
                let c = cosine_similarity(&w.column(a), &w.column(b)).unwrap();
                head_min = head_min.min(c);
                head_max = head_max.max(c);
            }
        }
        // Class-mean embedding cosines on the unlabeled split (true labels,
        // diagnostic only).
        let truths = cohort.unlabeled_eval_labels();
        let dim = art.tpn.embed_dim();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &t) in cohort.unlabeled().iter().zip(truths) {
            let z = art.tpn.encode(&s.features).unwrap();
            counts[t] += 1;
            for (a, b) in sums[t].iter_mut().zip(&z) {
                *a += b;
            }
        }
        let mut empin = f64::INFINITY;
        let mut empax = f64::NEG_INFINITY;
        let mut mean_cos = 0.0;
        let mut pairs = 0.0;
        for a in 0..k {
            for b in (a + 1)..k {
                if counts[a] == 0 || counts[b] == 0 {
                    continue;
                }
                let c = cosine_similarity(&sums[a], &sums[b]).unwrap();
                empin = empin.min(c);
                empax = empax.max(c);
                mean_cos += c;
                pairs += 1.0;
            }
        }
        println!(
            "etf_off={etf_off}: head cos [{head_min:+.3}, {head_max:+.3}]  embed-mean cos [{empin:+.3}, {empax:+.3}] mean {:+.3}",
            mean_cos / pairs
        );
    }
}
