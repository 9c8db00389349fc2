//! Dev harness: stage-1 quality with and without the head-geometry
//! penalty, across seeds. Reports prior accuracy on the unlabeled split,
//! agreement accuracy, selected coverage/accuracy, and per-class selected
//! counts, using the evaluation-only labels.
//!
//! Usage: probe_stage1 [KEY=VALUE]...

use scope_core::orchestrator::{run_stage1, ScopeConfig};
use scope_core::synthdata::generate_cohort;
use scope_core::numeric::RngStream;
use scope_core::tpn::prior_predict;

fn main() {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let base = ScopeConfig::from_toml("", &overrides).expect("config");

    for etf_off in [false, true] {
        let mut prior_acc = 0.0;
        let mut agree_acc = 0.0;
        let mut agree_rate = 0.0;
        let mut sel_cov = 0.0;
        let mut sel_acc = 0.0;
        let mut wsel_acc = 0.0;
        let mut rare_sel = 0.0;
        let seeds = [1u64, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.ablations.etf_off = etf_off;
            cfg.data.generate.seed = RngStream::new(seed).substream("cohort").seed();
            let cohort = generate_cohort(&cfg.data.generate).expect("cohort");
            let art = run_stage1(&cfg, &cohort, seed).expect("stage1");
            let truths = cohort.unlabeled_eval_labels();
            let feats: Vec<Vec<f64>> = cohort
                .unlabeled()
                .iter()
                .map(|s| s.features.clone())
                .collect();
            let (_, prior_labels) = prior_predict(&art.tpn, &feats).unwrap();
            let n = truths.len() as f64;
            prior_acc += prior_labels
                .iter()
                .zip(truths)
                .filter(|(p, t)| *p == *t)
                .count() as f64
                / n;
            let agree: Vec<_> = art.manifest.iter().filter(|r| r.agree).collect();
            agree_rate += agree.len() as f64 / n;
            agree_acc += agree
                .iter()
                .filter(|r| r.label_prior == truths[r.index])
                .count() as f64
                / agree.len().max(1) as f64;
            let sel: Vec<_> = art.manifest.iter().filter(|r| r.selected).collect();
            sel_cov += sel.len() as f64 / n;
            sel_acc += sel
                .iter()
                .filter(|r| r.label_prior == truths[r.index])
                .count() as f64
                / sel.len().max(1) as f64;
            // Confidence-weighted accuracy of the selected set: above the
            // plain rate when weights correlate with correctness.
            let wsum: f64 = sel.iter().map(|r| r.confidence).sum();
            let wacc: f64 = sel
                .iter()
                .filter(|r| r.label_prior == truths[r.index])
                .map(|r| r.confidence)
                .sum::<f64>()
                / wsum.max(1e-12);
            wsel_acc += wacc;
            // Selected count of the rarest class (by true label).
            let k = cohort.classes();
            let rare = k - 1;
            rare_sel += sel.iter().filter(|r| r.label_prior == rare).count() as f64;
        }
        let m = seeds.len() as f64;
        println!(
            "etf_off={etf_off}: prior {:.4}  agree_rate {:.4} agree_acc {:.4}  sel_cov {:.4} sel_acc {:.4} wsel_acc {:.4} rare_sel {:.1}",
            prior_acc / m,
            agree_rate / m,
            agree_acc / m,
            sel_cov / m,
            sel_acc / m,
            wsel_acc / m,
            rare_sel / m
        );
    }
}
