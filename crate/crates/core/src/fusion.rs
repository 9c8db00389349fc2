//! Confidence-aware fusion of the task-prior and prototype predictions
//! into pseudo-labels.
//!
//! Both predictors emit class scores over singleton hypotheses, so their
//! softmax-normalized outputs are belief mass assignments and the
//! combination rule collapses to an elementwise product renormalized by
//! the non-conflicting mass. Confidence is one minus the normalized
//! entropy of the fused masses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::softmax;

/// Guard on the combination denominator. Below this the sources are in
/// total conflict and the combination is undefined.
pub const CONFLICT_EPS: f64 = 1e-12;

/// Belief masses over K singleton hypotheses: nonnegative, sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Bba(Vec<f64>);

impl Bba {
    pub fn new(masses: Vec<f64>) -> Result<Bba> {
        if masses.is_empty() {
            return Err(Error::EmptyInput("Bba"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::NonFinite("Bba masses"));
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "Bba masses sum to {sum}, expected 1"
            )));
        }
        Ok(Bba(masses))
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.0)
    }
}

/// Index of the maximum, ties broken toward the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Normalize class logits to belief masses (softmax).
pub fn bba_from_logits(logits: &[f64]) -> Result<Bba> {
    Ok(Bba(softmax(logits)?))
}

/// Singleton-only combination: elementwise product renormalized by the
/// total non-conflicting mass. Errors on total conflict.
pub fn ds_combine(m1: &Bba, m2: &Bba) -> Result<Bba> {
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch {
            context: "ds_combine",
            expected: m1.len(),
            got: m2.len(),
        });
    }
    let products: Vec<f64> = m1
        .masses()
        .iter()
        .zip(m2.masses())
        .map(|(a, b)| a * b)
        .collect();
    let denom: f64 = products.iter().sum();
    if denom < CONFLICT_EPS {
        return Err(Error::TotalConflict);
    }
    Ok(Bba(products.into_iter().map(|p| p / denom).collect()))
}

/// Independent oracle: the general combination rule evaluated by
/// enumerating all focal-set pairs. With singleton-only masses the focal
/// sets are the K singletons; intersections are the singleton itself when
/// the pair matches and empty otherwise, and the empty-intersection mass
/// is the conflict that renormalizes the rest.
pub fn ds_combine_bruteforce(m1: &Bba, m2: &Bba) -> Result<Bba> {
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch {
            context: "ds_combine_bruteforce",
            expected: m1.len(),
            got: m2.len(),
        });
    }
    let k = m1.len();
    let mut combined = vec![0.0; k];
    let mut conflict = 0.0;
    for (i, &a) in m1.masses().iter().enumerate() {
        for (j, &b) in m2.masses().iter().enumerate() {
            if i == j {
                combined[i] += a * b;
            } else {
                conflict += a * b;
            }
        }
    }
    let denom = 1.0 - conflict;
    if denom < CONFLICT_EPS {
        return Err(Error::TotalConflict);
    }
    Ok(Bba(combined.into_iter().map(|p| p / denom).collect()))
}

/// Entropy-based confidence: 1 - H(m)/ln K, computed in the equivalent
/// divergence-from-uniform form sum_c m_c ln(m_c K) / ln K so the uniform
/// distribution maps to exactly 0 and one-hot masses to exactly 1. The
/// 0 ln 0 terms are treated as 0. Clamped to [0, 1] to absorb rounding.
pub fn entropy_confidence(m: &Bba, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidConfig(
            "entropy confidence needs K >= 2".into(),
        ));
    }
    if m.len() != k {
        return Err(Error::DimensionMismatch {
            context: "entropy_confidence",
            expected: k,
            got: m.len(),
        });
    }
    let kf = k as f64;
    let gain: f64 = m
        .masses()
        .iter()
        .map(|&p| if p > 0.0 { p * (p * kf).ln() } else { 0.0 })
        .sum();
    Ok((gain / kf.ln()).clamp(0.0, 1.0))
}

/// Per-sample fusion outcome for one unlabeled sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoRecord {
    /// Index of the sample within the unlabeled split.
    pub index: usize,
    /// Task-prior argmax label.
    #[serde(rename = "y_prior")]
    pub label_prior: usize,
    /// Prototype argmax label.
    #[serde(rename = "y_proto")]
    pub label_proto: usize,
    pub agree: bool,
    /// Entropy confidence of the fused masses in [0, 1].
    #[serde(rename = "gamma")]
    pub confidence: f64,
    pub selected: bool,
    pub fused_masses: Vec<f64>,
}

/// Build the pseudo-label manifest from aligned prior logits and prototype
/// class scores. A sample is selected when both predictors agree and the
/// fused confidence strictly exceeds `threshold`. Prototype scores are
/// divided by `proto_temperature` before normalization; prior logits are
/// used as-is. Samples whose sources totally conflict are kept with zero
/// confidence and never selected.
pub fn build_pseudo_manifest(
    prior_logits: &[Vec<f64>],
    proto_scores: &[Vec<f64>],
    proto_labels: &[usize],
    threshold: f64,
    proto_temperature: f64,
) -> Result<Vec<PseudoRecord>> {
    if prior_logits.len() != proto_scores.len() || prior_logits.len() != proto_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "build_pseudo_manifest",
            expected: prior_logits.len(),
            got: proto_scores.len().min(proto_labels.len()),
        });
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "confidence threshold {threshold} outside [0, 1)"
        )));
    }
    if proto_temperature <= 0.0 {
        return Err(Error::InvalidConfig(
            "prototype temperature must be positive".into(),
        ));
    }
    let mut records = Vec::with_capacity(prior_logits.len());
    for (index, (s, w)) in prior_logits.iter().zip(proto_scores).enumerate() {
        let k = s.len();
        if w.len() != k {
            return Err(Error::DimensionMismatch {
                context: "build_pseudo_manifest logits",
                expected: k,
                got: w.len(),
            });
        }
        let label_prior = argmax_lowest(s);
        let label_proto = proto_labels[index];
        let agree = label_prior == label_proto;
        let m1 = bba_from_logits(s)?;
        let scaled: Vec<f64> = w.iter().map(|x| x / proto_temperature).collect();
        let m2 = bba_from_logits(&scaled)?;
        let (fused_masses, confidence) = match ds_combine(&m1, &m2) {
            Ok(fused) => {
                let c = entropy_confidence(&fused, k)?;
                (fused.masses().to_vec(), c)
            }
            Err(Error::TotalConflict) => (vec![0.0; k], 0.0),
            Err(e) => return Err(e),
        };
        let selected = agree && confidence > threshold;
        records.push(PseudoRecord {
            index,
            label_prior,
            label_proto,
            agree,
            confidence,
            selected,
            fused_masses,
        });
    }
    Ok(records)
}

/// Serialize a manifest as JSON lines.
pub fn manifest_to_jsonl(records: &[PseudoRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse a JSON-lines manifest.
pub fn manifest_from_jsonl(text: &str) -> Result<Vec<PseudoRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    fn random_bba(rng: &mut RngStream, k: usize) -> Bba {
        let mut v: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-6).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        Bba::new(v).unwrap()
    }

    #[test]
    fn bba_from_logits_cases() {
        let b = bba_from_logits(&[0.0, 0.0, 0.0]).unwrap();
        for m in b.masses() {
            assert!((m - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = bba_from_logits(&[3.0f64.ln(), 0.0]).unwrap();
        assert!((b.masses()[0] - 0.75).abs() < 1e-12);
        assert!((b.masses()[1] - 0.25).abs() < 1e-12);
        let b = bba_from_logits(&[500.0, 0.0]).unwrap();
        assert!(b.masses()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn combine_hand_value() {
        let m1 = Bba::new(vec![0.7, 0.3]).unwrap();
        let m2 = Bba::new(vec![0.6, 0.4]).unwrap();
        let f = ds_combine(&m1, &m2).unwrap();
        assert!((f.masses()[0] - 7.0 / 9.0).abs() < 1e-12);
        assert!((f.masses()[1] - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn combine_uniform_fixed_point_and_absorbing() {
        let u = Bba::new(vec![0.25; 4]).unwrap();
        let f = ds_combine(&u, &u).unwrap();
        for m in f.masses() {
            assert!((m - 0.25).abs() < 1e-15);
        }
        let onehot = Bba::new(vec![0.0, 1.0, 0.0]).unwrap();
        let other = Bba::new(vec![0.2, 0.5, 0.3]).unwrap();
        let f = ds_combine(&onehot, &other).unwrap();
        assert_eq!(f.masses(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn combine_total_conflict_errors() {
        let a = Bba::new(vec![1.0, 0.0]).unwrap();
        let b = Bba::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(ds_combine(&a, &b), Err(Error::TotalConflict)));
        assert!(matches!(
            ds_combine_bruteforce(&a, &b),
            Err(Error::TotalConflict)
        ));
    }

    #[test]
    fn bruteforce_oracle_agrees() {
        let mut rng = RngStream::new(11);
        for _ in 0..1000 {
            let k = 2 + rng.below(5);
            let a = random_bba(&mut rng, k);
            let b = random_bba(&mut rng, k);
            let closed = ds_combine(&a, &b).unwrap();
            let brute = ds_combine_bruteforce(&a, &b).unwrap();
            for (x, y) in closed.masses().iter().zip(brute.masses()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bruteforce_degenerate_frame() {
        let a = Bba::new(vec![1.0]).unwrap();
        let f = ds_combine_bruteforce(&a, &a).unwrap();
        assert_eq!(f.masses(), &[1.0]);
    }

    #[test]
    fn confidence_bounds() {
        let k = 5;
        let uniform = Bba::new(vec![1.0 / k as f64; k]).unwrap();
        assert_eq!(entropy_confidence(&uniform, k).unwrap(), 0.0);
        let onehot = Bba::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(entropy_confidence(&onehot, k).unwrap(), 1.0);
    }

    #[test]
    fn confidence_hand_value() {
        // H([0.9, 0.1]) = 0.32508 nats; normalized entropy H/ln 2 =
        // 0.46899, so the confidence is its complement.
        let m = Bba::new(vec![0.9, 0.1]).unwrap();
        let g = entropy_confidence(&m, 2).unwrap();
        assert!((g - 0.5310051).abs() < 1e-5);
        assert!(((1.0 - g) - 0.46899).abs() < 1e-5);
    }

    #[test]
    fn confidence_needs_k_at_least_two() {
        let m = Bba::new(vec![1.0]).unwrap();
        assert!(entropy_confidence(&m, 1).is_err());
    }

    #[test]
    fn confidence_decreases_toward_uniform() {
        // Mixture path from one-hot to uniform; confidence must strictly
        // decrease along it.
        let k = 4;
        let onehot = vec![1.0, 0.0, 0.0, 0.0];
        let uniform = vec![0.25; 4];
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let mix: Vec<f64> = onehot
                .iter()
                .zip(&uniform)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let g = entropy_confidence(&Bba::new(mix).unwrap(), k).unwrap();
            assert!(g < prev || (step == 0 && g <= prev));
            prev = g;
        }
    }

    #[test]
    fn manifest_selection_rules() {
        // Disagreeing predictions are never selected, no matter how
        // confident the fused masses are.
        let prior = vec![vec![10.0, 0.0], vec![10.0, 0.0]];
        let proto = vec![vec![0.0, 10.0], vec![10.0, 0.0]];
        let proto_labels = vec![1, 0];
        let recs = build_pseudo_manifest(&prior, &proto, &proto_labels, 0.5, 1.0).unwrap();
        assert!(!recs[0].agree);
        assert!(!recs[0].selected);
        assert!(recs[1].agree);
        assert!(recs[1].selected);
        assert!(recs[1].confidence > 0.5);
    }

    #[test]
    fn manifest_coverage_monotone_in_threshold() {
        let mut rng = RngStream::new(5);
        let n = 200;
        let k = 3;
        let mut prior = Vec::new();
        let mut proto = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let s: Vec<f64> = (0..k).map(|_| 4.0 * rng.normal()).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            labels.push(argmax_lowest(&w));
            prior.push(s);
            proto.push(w);
        }
        let mut prev_cov = f64::INFINITY;
        for step in 0..20 {
            let rho = step as f64 * 0.05;
            let recs = build_pseudo_manifest(&prior, &proto, &labels, rho, 1.0).unwrap();
            let cov = recs.iter().filter(|r| r.selected).count() as f64 / n as f64;
            assert!(cov <= prev_cov);
            prev_cov = cov;
        }
    }

    #[test]
    fn manifest_jsonl_roundtrip() {
        let prior = vec![vec![1.0, 2.0, 0.0]];
        let proto = vec![vec![0.1, 0.9, 0.0]];
        let recs = build_pseudo_manifest(&prior, &proto, &[1], 0.5, 1.0).unwrap();
        let text = manifest_to_jsonl(&recs).unwrap();
        let back = manifest_from_jsonl(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].label_prior, recs[0].label_prior);
        assert_eq!(back[0].confidence, recs[0].confidence);
    }

    #[test]
    fn misaligned_lengths_error() {
        let prior = vec![vec![1.0, 2.0]];
        let proto: Vec<Vec<f64>> = vec![];
        assert!(build_pseudo_manifest(&prior, &proto, &[], 0.5, 1.0).is_err());
    }
}
