//! Built-in invariant suite: gradient checks against finite differences,
//! balanced-assignment marginals and the permutation oracle, the belief
//! combination oracle, confidence bounds, and RNG reproducibility. Each
//! check prints one pass/fail line.

use scope_core::fusion::{
    bba_from_logits, ds_combine, ds_combine_bruteforce, entropy_confidence, Bba,
};
use scope_core::numeric::{finite_diff_grad, max_relative_error, softmax, Matrix, RngStream};
use scope_core::proadapter::{
    adapted_forward, backward_from_cache, forward_from_lower, AdapterConfig, AdapterStack,
    BackboneConfig, FrozenBackbone,
};
use scope_core::prototypes::sinkhorn_assign;
use scope_core::tpn::{etf_loss_and_grad, EncoderKind, TpnArch, TpnNet};

fn report(name: &str, ok: bool, detail: String) -> bool {
    if ok {
        println!("[PASS] {name}: {detail}");
    } else {
        println!("[FAIL] {name}: {detail}");
    }
    ok
}

fn check_rng() -> bool {
    let mut a = RngStream::new(99);
    let mut b = RngStream::new(99);
    let same = (0..10_000).all(|_| a.next_u64() == b.next_u64());
    report("rng reproducibility", same, "10000 identical draws".into())
}

fn check_softmax() -> bool {
    let mut rng = RngStream::new(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let v = rng.normal_vec(6);
        let shifted: Vec<f64> = v.iter().map(|x| x + 13.5).collect();
        let a = softmax(&v).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    report(
        "softmax shift invariance",
        worst < 1e-12,
        format!("max deviation {worst:.2e}"),
    )
}

fn check_etf_gradient() -> bool {
    let mut rng = RngStream::new(2);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (d, k) = (6, 4);
        let data: Vec<f64> = (0..d * k).map(|_| rng.normal()).collect();
        let w = Matrix::from_vec(d, k, data.clone()).unwrap();
        let (_, grad) = etf_loss_and_grad(&w).unwrap();
        let fd = finite_diff_grad(
            |p| {
                etf_loss_and_grad(&Matrix::from_vec(d, k, p.to_vec()).unwrap())
                    .unwrap()
                    .0
            },
            &data,
            1e-5,
        )
        .unwrap();
        worst = worst.max(max_relative_error(grad.data(), &fd));
    }
    report(
        "head geometry gradient",
        worst < 1e-4,
        format!("max rel err {worst:.2e}"),
    )
}

fn check_tpn_gradient() -> bool {
    let arch = TpnArch {
        encoder: EncoderKind::Conv,
        temporal_filters: 2,
        temporal_kernel: 3,
        depth_multiplier: 2,
        separable_kernel: 3,
        pointwise_filters: 3,
        pool1: 2,
        pool2: 2,
        ..TpnArch::default()
    };
    let net = TpnNet::new(arch, 3, 8, 3).unwrap();
    let mut rng = RngStream::new(3);
    let params = net.init_params(&mut rng);
    let batch_data: Vec<(Vec<f64>, usize)> = (0..3)
        .map(|i| ((0..net.feature_dim()).map(|_| rng.normal()).collect(), i))
        .collect();
    let batch: Vec<(&[f64], usize)> = batch_data.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
    let (_, _, grad) = net.loss_and_grad(&params, &batch, 0.1, 0.0).unwrap();
    let fd = finite_diff_grad(
        |p| {
            let (ce, etf, _) = net.loss_and_grad(p, &batch, 0.1, 0.0).unwrap();
            ce + 0.1 * etf
        },
        &params,
        1e-5,
    )
    .unwrap();
    let err = max_relative_error(&grad, &fd);
    report(
        "task-prior network gradient",
        err < 1e-4,
        format!("max rel err {err:.2e}"),
    )
}

fn check_sinkhorn() -> bool {
    let mut rng = RngStream::new(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let b = 2 + rng.below(40);
        let m = 1 + rng.below(5);
        let data: Vec<f64> = (0..b * m).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let s = Matrix::from_vec(b, m, data).unwrap();
        let q = sinkhorn_assign(&s, 0.3, 50).unwrap();
        for i in 0..b {
            worst = worst.max((q.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let target = b as f64 / m as f64;
        for c in 0..m {
            worst = worst.max((q.column(c).iter().sum::<f64>() - target).abs() / target);
        }
    }
    report(
        "balanced assignment marginals",
        worst < 1e-6,
        format!("max marginal err {worst:.2e}"),
    )
}

fn check_sinkhorn_permutation() -> bool {
    let mut rng = RngStream::new(5);
    let mut ok = true;
    for _ in 0..5 {
        let data: Vec<f64> = (0..9).map(|_| rng.uniform()).collect();
        let s = Matrix::from_vec(3, 3, data).unwrap();
        let q = sinkhorn_assign(&s, 1e-3, 500).unwrap();
        // brute force over all 6 permutations of 3 items
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = perms
            .iter()
            .max_by(|a, b| {
                let sa: f64 = a.iter().enumerate().map(|(i, &j)| s.get(i, j)).sum();
                let sb: f64 = b.iter().enumerate().map(|(i, &j)| s.get(i, j)).sum();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        for (i, &j) in best.iter().enumerate() {
            let arg = (0..3)
                .max_by(|&a, &b| q.get(i, a).partial_cmp(&q.get(i, b)).unwrap())
                .unwrap();
            ok &= arg == j;
        }
    }
    report(
        "low-temperature assignment vs permutation oracle",
        ok,
        "row argmax matches on 5 random 3x3 instances".into(),
    )
}

fn check_belief_combination() -> bool {
    let mut rng = RngStream::new(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = 2 + rng.below(5);
        let a = bba_from_logits(&rng.normal_vec(k)).unwrap();
        let b = bba_from_logits(&rng.normal_vec(k)).unwrap();
        let c = bba_from_logits(&rng.normal_vec(k)).unwrap();
        let closed = ds_combine(&a, &b).unwrap();
        let brute = ds_combine_bruteforce(&a, &b).unwrap();
        for (x, y) in closed.masses().iter().zip(brute.masses()) {
            worst = worst.max((x - y).abs());
        }
        let ab_c = ds_combine(&ds_combine(&a, &b).unwrap(), &c).unwrap();
        let a_bc = ds_combine(&a, &ds_combine(&b, &c).unwrap()).unwrap();
        for (x, y) in ab_c.masses().iter().zip(a_bc.masses()) {
            worst = worst.max((x - y).abs());
        }
    }
    report(
        "belief combination oracle + associativity",
        worst < 1e-12,
        format!("max abs diff {worst:.2e}"),
    )
}

fn check_confidence() -> bool {
    let k = 5;
    let uniform = Bba::new(vec![1.0 / k as f64; k]).unwrap();
    let onehot = Bba::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let g0 = entropy_confidence(&uniform, k).unwrap();
    let g1 = entropy_confidence(&onehot, k).unwrap();
    let mut rng = RngStream::new(7);
    let mut in_range = true;
    for _ in 0..1000 {
        let b = bba_from_logits(&rng.normal_vec(k)).unwrap();
        let g = entropy_confidence(&b, k).unwrap();
        in_range &= (0.0..=1.0).contains(&g);
    }
    report(
        "confidence bounds",
        g0 == 0.0 && g1 == 1.0 && in_range,
        format!("uniform {g0}, one-hot {g1}, range ok {in_range}"),
    )
}

fn check_adapter_gradient() -> bool {
    let bb = FrozenBackbone::new(
        BackboneConfig {
            width: 6,
            hidden: 10,
            layers: 4,
            seed: 3,
        },
        3,
        5,
    )
    .unwrap();
    let mut rng = RngStream::new(8);
    let mut stack = AdapterStack::new(
        AdapterConfig {
            depth: 2,
            ..AdapterConfig::default()
        },
        &bb,
        3,
        &mut rng,
    )
    .unwrap();
    let n = stack.param_count();
    let noise: Vec<f64> = (0..n).map(|_| 0.5 * rng.normal()).collect();
    stack.set_params(noise).unwrap();
    let x = rng.normal_vec(bb.feature_dim());
    let cond = softmax(&rng.normal_vec(3)).unwrap();
    let lower = bb.forward_to(&x, bb.depth() - 2).unwrap();
    let label = 2usize;
    let params = stack.params().to_vec();
    let cache = forward_from_lower(&bb, &stack, &params, &lower, &cond).unwrap();
    let p = softmax(&cache.logits).unwrap();
    let mut dlogits = p.clone();
    dlogits[label] -= 1.0;
    let mut grad = vec![0.0; params.len()];
    backward_from_cache(&bb, &stack, &params, &cache, &cond, &dlogits, &mut grad);
    let fd = finite_diff_grad(
        |pr| {
            let c = forward_from_lower(&bb, &stack, pr, &lower, &cond).unwrap();
            -softmax(&c.logits).unwrap()[label].ln()
        },
        &params,
        1e-5,
    )
    .unwrap();
    let err = max_relative_error(&grad, &fd);
    report(
        "adapter gradient",
        err < 1e-4,
        format!("max rel err {err:.2e}"),
    )
}

fn check_identity_at_init() -> bool {
    let bb = FrozenBackbone::new(
        BackboneConfig {
            width: 6,
            hidden: 10,
            layers: 4,
            seed: 3,
        },
        3,
        5,
    )
    .unwrap();
    let mut rng = RngStream::new(9);
    let stack = AdapterStack::new(AdapterConfig::default(), &bb, 3, &mut rng).unwrap();
    let digest_before = bb.digest();
    let mut worst = 0.0f64;
    // Zero-initialized adapters must reproduce the bare pooled-head path.
    let mut head_only = AdapterStack::new(
        AdapterConfig {
            depth: 0,
            ..AdapterConfig::default()
        },
        &bb,
        3,
        &mut RngStream::new(9),
    )
    .unwrap();
    let head_len = 6 * 3 + 3;
    let mut p = head_only.params().to_vec();
    let off = p.len() - head_len;
    p[off..].copy_from_slice(&stack.params()[stack.params().len() - head_len..]);
    head_only.set_params(p).unwrap();
    let mut data_rng = RngStream::new(10);
    for _ in 0..5 {
        let x = data_rng.normal_vec(bb.feature_dim());
        let cond = vec![1.0 / 3.0; 3];
        let a = adapted_forward(&bb, &stack, &x, &cond).unwrap();
        let b = adapted_forward(&bb, &head_only, &x, &cond).unwrap();
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    let frozen = bb.digest() == digest_before;
    report(
        "identity at init + frozen digest",
        worst < 1e-6 && frozen,
        format!("max logit gap {worst:.2e}, digest unchanged {frozen}"),
    )
}

/// Run every check; returns true when all pass.
pub fn run_all() -> bool {
    let checks = [
        check_rng(),
        check_softmax(),
        check_etf_gradient(),
        check_tpn_gradient(),
        check_sinkhorn(),
        check_sinkhorn_permutation(),
        check_belief_combination(),
        check_confidence(),
        check_adapter_gradient(),
        check_identity_at_init(),
    ];
    let passed = checks.iter().filter(|c| **c).count();
    println!("{passed}/{} checks passed", checks.len());
    passed == checks.len()
}
