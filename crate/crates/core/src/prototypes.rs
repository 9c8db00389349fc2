//! Balanced prototype bank over frozen task-prior embeddings.
//!
//! Prototypes are unit vectors, M per class, initialized by per-class
//! k-means (k-means++ seeding, multiple restarts) on unlabeled embeddings
//! grouped by predicted prior labels, then refined on labeled embeddings
//! against balanced soft assignments produced by log-domain
//! Sinkhorn-Knopp iteration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::fusion::argmax_lowest;
use crate::numeric::{cosine_similarity, dot, log_sum_exp, normalize_in_place, softmax, Matrix, RngStream};

pub const PROTO_MAGIC: &[u8; 8] = b"SCOPEPRO";
pub const PROTO_VERSION: u16 = 1;

/// K x M unit-norm prototype vectors with the assignment temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    classes: usize,
    per_class: usize,
    dim: usize,
    epsilon: f64,
    /// (K*M) x dim, row k*M+m.
    protos: Vec<f64>,
}

impl PrototypeBank {
    pub fn from_rows(
        classes: usize,
        per_class: usize,
        dim: usize,
        epsilon: f64,
        protos: Vec<f64>,
    ) -> Result<PrototypeBank> {
        if protos.len() != classes * per_class * dim {
            return Err(Error::DimensionMismatch {
                context: "PrototypeBank::from_rows",
                expected: classes * per_class * dim,
                got: protos.len(),
            });
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidConfig("prototype epsilon must be positive".into()));
        }
        let mut bank = PrototypeBank {
            classes,
            per_class,
            dim,
            epsilon,
            protos,
        };
        bank.renormalize()?;
        Ok(bank)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn prototype(&self, class: usize, mode: usize) -> &[f64] {
        let row = class * self.per_class + mode;
        &self.protos[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.protos
    }

    fn renormalize(&mut self) -> Result<()> {
        for row in 0..self.classes * self.per_class {
            normalize_in_place(&mut self.protos[row * self.dim..(row + 1) * self.dim])?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BinWriter::new(BufWriter::new(file));
        w.magic(PROTO_MAGIC, PROTO_VERSION)?;
        w.u32(self.classes as u32)?;
        w.u32(self.per_class as u32)?;
        w.u32(self.dim as u32)?;
        w.f64(self.epsilon)?;
        w.f64_slice(&self.protos)?;
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PrototypeBank> {
        let file = File::open(path)?;
        let mut r = BinReader::new(BufReader::new(file));
        r.expect_magic(PROTO_MAGIC, PROTO_VERSION)?;
        let classes = r.u32("classes")? as usize;
        let per_class = r.u32("per_class")? as usize;
        let dim = r.u32("dim")? as usize;
        let epsilon = r.f64("epsilon")?;
        let protos = r.f64_vec(classes * per_class * dim, "prototypes")?;
        // Stored rows are already unit norm; validate instead of
        // renormalizing so the roundtrip is bit-exact.
        for row in 0..classes * per_class {
            let n = crate::numeric::norm(&protos[row * dim..(row + 1) * dim]);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::MalformedHeader(format!(
                    "prototype {row} has norm {n}, expected 1"
                )));
            }
        }
        if epsilon <= 0.0 {
            return Err(Error::MalformedHeader("nonpositive epsilon".into()));
        }
        Ok(PrototypeBank {
            classes,
            per_class,
            dim,
            epsilon,
            protos,
        })
    }
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns (centroids, inertia).
fn kmeans_once(
    points: &[&[f64]],
    k: usize,
    max_iters: usize,
    rng: &mut RngStream,
) -> (Vec<Vec<f64>>, f64) {
    let dim = points[0].len();
    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.below(points.len())].to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            rng.weighted_index(&d2)
        } else {
            rng.below(points.len())
        };
        centroids.push(points[idx].to_vec());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // means
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i]].iter_mut().zip(*p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // repopulate an empty cluster with the point farthest from
                // its current centroid (deterministic)
                let (mut far_i, mut far_d) = (0usize, -1.0);
                for (i, p) in points.iter().enumerate() {
                    let d = sq_dist(p, &centroids[assign[i]]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[c] = points[far_i].to_vec();
                assign[far_i] = c;
                changed = true;
            } else {
                for (cv, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *cv = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    (centroids, inertia)
}

/// Best of `restarts` k-means runs by inertia.
fn kmeans(
    points: &[&[f64]],
    k: usize,
    restarts: usize,
    max_iters: usize,
    rng: &mut RngStream,
) -> Vec<Vec<f64>> {
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (c, inertia) = kmeans_once(points, k, max_iters, rng);
        if best.as_ref().map(|(_, bi)| inertia < *bi).unwrap_or(true) {
            best = Some((c, inertia));
        }
    }
    best.unwrap().0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrototypeInitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Cap on per-class sample count fed to k-means (seeded subsample).
    pub max_per_class: usize,
}

impl Default for PrototypeInitConfig {
    fn default() -> Self {
        PrototypeInitConfig {
            restarts: 10,
            max_iters: 100,
            max_per_class: 5000,
        }
    }
}

/// Per-class k-means over embeddings grouped by predicted labels; the
/// normalized centroids become the prototypes. Classes with fewer samples
/// than prototypes duplicate centroids with a small seeded jitter; classes
/// with no samples at all fall back to random unit vectors (logged).
pub fn init_prototypes_kmeans(
    embeddings: &[Vec<f64>],
    prior_labels: &[usize],
    classes: usize,
    per_class: usize,
    epsilon: f64,
    cfg: &PrototypeInitConfig,
    rng: &mut RngStream,
) -> Result<(PrototypeBank, Vec<String>)> {
    if embeddings.len() != prior_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "init_prototypes_kmeans",
            expected: embeddings.len(),
            got: prior_labels.len(),
        });
    }
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("init_prototypes_kmeans embeddings"));
    }
    let dim = embeddings[0].len();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in prior_labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidConfig(format!(
                "prior label {l} out of range for {classes} classes"
            )));
        }
        groups[l].push(i);
    }

    let mut warnings = Vec::new();
    let mut protos = vec![0.0; classes * per_class * dim];
    for (class, group) in groups.iter().enumerate() {
        let mut idxs: Vec<usize> = group.clone();
        if idxs.len() > cfg.max_per_class {
            rng.shuffle(&mut idxs);
            idxs.truncate(cfg.max_per_class);
            idxs.sort_unstable();
        }
        let centroids: Vec<Vec<f64>> = if idxs.is_empty() {
            warnings.push(format!(
                "no samples predicted as class {class}; prototypes randomized"
            ));
            (0..per_class)
                .map(|_| {
                    let mut v = rng.normal_vec(dim);
                    normalize_in_place(&mut v).expect("gaussian vector has positive norm");
                    v
                })
                .collect()
        } else {
            let points: Vec<&[f64]> = idxs.iter().map(|&i| embeddings[i].as_slice()).collect();
            let k_eff = per_class.min(points.len());
            let mut cents = kmeans(&points, k_eff, cfg.restarts, cfg.max_iters, rng);
            if k_eff < per_class {
                warnings.push(format!(
                    "class {class} has {} samples for {per_class} prototypes; duplicating with jitter",
                    points.len()
                ));
                let mut extra = 0;
                while cents.len() < per_class {
                    let base = cents[extra % k_eff].clone();
                    let jittered: Vec<f64> =
                        base.iter().map(|&v| v + 1e-3 * rng.normal()).collect();
                    cents.push(jittered);
                    extra += 1;
                }
            }
            cents
        };
        for (m, centroid) in centroids.into_iter().enumerate() {
            let row = class * per_class + m;
            let dst = &mut protos[row * dim..(row + 1) * dim];
            dst.copy_from_slice(&centroid);
            if normalize_in_place(dst).is_err() {
                // degenerate centroid at the origin: replace with a random
                // direction
                let mut v = rng.normal_vec(dim);
                normalize_in_place(&mut v).expect("gaussian vector has positive norm");
                dst.copy_from_slice(&v);
                warnings.push(format!(
                    "class {class} prototype {m} had zero-norm centroid; randomized"
                ));
            }
        }
    }
    let bank = PrototypeBank::from_rows(classes, per_class, dim, epsilon, protos)?;
    Ok((bank, warnings))
}

// ---------------------------------------------------------------------------
// Similarity and Sinkhorn assignment
// ---------------------------------------------------------------------------

/// Cosine similarities of `embeddings` against the prototypes of `class`:
/// a B x M matrix.
pub fn class_similarity(
    embeddings: &[&[f64]],
    bank: &PrototypeBank,
    class: usize,
) -> Result<Matrix> {
    let m = bank.per_class();
    let mut s = Matrix::zeros(embeddings.len(), m);
    for (i, z) in embeddings.iter().enumerate() {
        for mode in 0..m {
            s.set(i, mode, cosine_similarity(z, bank.prototype(class, mode))?);
        }
    }
    Ok(s)
}

/// Log-domain Sinkhorn-Knopp: starting from exp(S/epsilon), alternate
/// column normalization (columns sum to B/M) and row normalization (rows
/// sum to 1), ending on a row pass so row sums are exact.
pub fn sinkhorn_assign(s: &Matrix, epsilon: f64, iters: usize) -> Result<Matrix> {
    let (b, m) = (s.rows(), s.cols());
    if b == 0 || m == 0 {
        return Err(Error::EmptyInput("sinkhorn_assign"));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("sinkhorn epsilon must be positive".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidConfig("sinkhorn needs at least one iteration".into()));
    }
    if s.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn similarity matrix"));
    }
    let col_target = (b as f64 / m as f64).ln();
    let logk: Vec<f64> = s.data().iter().map(|v| v / epsilon).collect();
    let mut u = vec![0.0; b];
    let mut v = vec![0.0; m];
    let mut scratch_col = vec![0.0; b];
    let mut scratch_row = vec![0.0; m];
    for _ in 0..iters {
        for col in 0..m {
            for row in 0..b {
                scratch_col[row] = logk[row * m + col] + u[row];
            }
            v[col] = col_target - log_sum_exp(&scratch_col)?;
        }
        for row in 0..b {
            for col in 0..m {
                scratch_row[col] = logk[row * m + col] + v[col];
            }
            u[row] = -log_sum_exp(&scratch_row)?;
        }
    }
    let mut q = Matrix::zeros(b, m);
    for row in 0..b {
        for col in 0..m {
            q.set(row, col, (logk[row * m + col] + u[row] + v[col]).exp());
        }
    }
    Ok(q)
}

/// Unbalanced fallback used by the no-balancing ablation: plain per-row
/// softmax of S/epsilon, no column constraint.
pub fn row_softmax_assign(s: &Matrix, epsilon: f64) -> Result<Matrix> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    let mut q = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        let scaled: Vec<f64> = s.row(i).iter().map(|v| v / epsilon).collect();
        let p = softmax(&scaled)?;
        q.row_mut(i).copy_from_slice(&p);
    }
    Ok(q)
}

/// Per-prototype counts of row-argmax assignments; reported in refinement
/// logs to show how balancing affects rare-class prototype usage.
pub fn assignment_counts(q: &Matrix) -> Vec<usize> {
    let mut counts = vec![0usize; q.cols()];
    for i in 0..q.rows() {
        counts[argmax_lowest(q.row(i))] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sinkhorn_iters: usize,
    /// Target smoothing toward uniform: q <- (1-mix) q + mix/M.
    pub uniform_mix: f64,
    /// Extra sharpening on the prediction logits tau*s/epsilon. Neutral at
    /// 1.0 so the default prediction is softmax(s/epsilon).
    pub tau: f64,
    /// Balanced targets via Sinkhorn; false falls back to row softmax.
    pub balanced_targets: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.001,
            sinkhorn_iters: 3,
            uniform_mix: 0.05,
            tau: 1.0,
            balanced_targets: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RefineLog {
    pub epoch_loss: Vec<f64>,
    /// Row-argmax assignment counts per prototype (flat k*M+m), summed
    /// over the final epoch's batches.
    pub prototype_usage: Vec<usize>,
}

/// Cross-entropy of the batch against frozen targets, with the analytic
/// gradient w.r.t. the flat prototype vector. `groups` maps each present
/// class to (member embedding refs, target assignment matrix).
fn refine_loss_and_grad(
    protos: &[f64],
    _classes: usize,
    per_class: usize,
    dim: usize,
    groups: &[(usize, Vec<&[f64]>, Matrix)],
    epsilon: f64,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; protos.len()];
    let mut loss = 0.0;
    let n_classes = groups.len() as f64;
    let scale = tau / epsilon;
    for (class, members, targets) in groups {
        let b = members.len() as f64;
        for (i, z) in members.iter().enumerate() {
            let nz = crate::numeric::norm(z);
            if nz == 0.0 {
                return Err(Error::ZeroNorm("refine embedding"));
            }
            // Similarities and logits against this class's prototypes.
            let mut sims = vec![0.0; per_class];
            for mode in 0..per_class {
                let row = class * per_class + mode;
                let p = &protos[row * dim..(row + 1) * dim];
                let np = crate::numeric::norm(p);
                if np == 0.0 {
                    return Err(Error::ZeroNorm("refine prototype"));
                }
                sims[mode] = dot(z, p) / (nz * np);
            }
            let logits: Vec<f64> = sims.iter().map(|s| s * scale).collect();
            let probs = softmax(&logits)?;
            let weight = 1.0 / (n_classes * b);
            for mode in 0..per_class {
                let q = targets.get(i, mode);
                loss -= weight * q * probs[mode].max(1e-300).ln();
                // dL/d sim = scale * (p - q) * weight
                let dsim = scale * (probs[mode] - q) * weight;
                if dsim == 0.0 {
                    continue;
                }
                let row = class * per_class + mode;
                let p = &protos[row * dim..(row + 1) * dim];
                let np = crate::numeric::norm(p);
                let cos = sims[mode];
                let g = &mut grad[row * dim..(row + 1) * dim];
                for d in 0..dim {
                    let zhat = z[d] / nz;
                    let phat = p[d] / np;
                    g[d] += dsim * (zhat - cos * phat) / np;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Gradient-descend the prototype bank on labeled embeddings, holding the
/// embeddings fixed. Targets are recomputed per batch and frozen for the
/// step; prototypes are renormalized to unit length after every update.
pub fn refine_prototypes(
    bank: &PrototypeBank,
    embeddings: &[Vec<f64>],
    labels: &[usize],
    cfg: &RefineConfig,
) -> Result<(PrototypeBank, RefineLog)> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("refine_prototypes labeled set"));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "refine_prototypes",
            expected: embeddings.len(),
            got: labels.len(),
        });
    }
    let mut out = bank.clone();
    let mut log = RefineLog::default();
    let mut rng = RngStream::new(cfg.seed).substream("proto-refine");
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    let (classes, per_class, dim, epsilon) =
        (out.classes, out.per_class, out.dim, out.epsilon);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        let last_epoch = epoch + 1 == cfg.epochs;
        if last_epoch {
            log.prototype_usage = vec![0; classes * per_class];
        }
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            // Group batch members by class.
            let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); classes];
            for &i in chunk {
                members[labels[i]].push(embeddings[i].as_slice());
            }
            let mut groups = Vec::new();
            for (class, ms) in members.into_iter().enumerate() {
                if ms.is_empty() {
                    continue;
                }
                let s = class_similarity(&ms, &out, class)?;
                let mut q = if cfg.balanced_targets {
                    sinkhorn_assign(&s, epsilon, cfg.sinkhorn_iters)?
                } else {
                    row_softmax_assign(&s, epsilon)?
                };
                if cfg.uniform_mix > 0.0 {
                    let mix = cfg.uniform_mix;
                    let unif = 1.0 / per_class as f64;
                    for v in q.data_mut() {
                        *v = (1.0 - mix) * *v + mix * unif;
                    }
                }
                if last_epoch {
                    for (i, &count_row) in assignment_counts(&q).iter().enumerate() {
                        log.prototype_usage[class * per_class + i] += count_row;
                    }
                }
                groups.push((class, ms, q));
            }
            let (loss, grad) = refine_loss_and_grad(
                &out.protos,
                classes,
                per_class,
                dim,
                &groups,
                epsilon,
                cfg.tau,
            )?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    context: format!("prototype refinement epoch {epoch}"),
                });
            }
            for (p, g) in out.protos.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            out.renormalize()?;
            epoch_loss += loss;
            batches += 1.0;
        }
        log.epoch_loss.push(epoch_loss / batches.max(1.0));
    }
    Ok((out, log))
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Prototype prediction for one embedding: the argmax class over all K*M
/// similarities (ties toward the lowest (class, mode)), the per-class max
/// similarity vector, and the flat similarities for diagnostics.
pub fn proto_predict(
    z: &[f64],
    bank: &PrototypeBank,
) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let (k, m) = (bank.classes(), bank.per_class());
    let mut flat = vec![0.0; k * m];
    for class in 0..k {
        for mode in 0..m {
            flat[class * m + mode] = cosine_similarity(z, bank.prototype(class, mode))?;
        }
    }
    let best_flat = argmax_lowest(&flat);
    let label = best_flat / m;
    let class_scores: Vec<f64> = (0..k)
        .map(|class| {
            flat[class * m..(class + 1) * m]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok((label, class_scores, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, max_relative_error};

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        normalize_in_place(&mut v).unwrap();
        v
    }

    #[test]
    fn kmeans_recovers_separated_clouds() {
        let mut rng = RngStream::new(2);
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        // class 0: clouds at (+-8, 0...); class 1: clouds at (0, +-8, ...)
        let centers = [
            [8.0, 0.0, 0.0, 0.0],
            [-8.0, 0.0, 0.0, 0.0],
            [0.0, 8.0, 0.0, 0.0],
            [0.0, -8.0, 0.0, 0.0],
        ];
        for (ci, c) in centers.iter().enumerate() {
            for _ in 0..30 {
                let p: Vec<f64> = c.iter().map(|&v| v + 1e-4 * rng.normal()).collect();
                embeddings.push(p);
                labels.push(ci / 2);
            }
        }
        let (bank, warnings) = init_prototypes_kmeans(
            &embeddings,
            &labels,
            2,
            2,
            0.05,
            &PrototypeInitConfig::default(),
            &mut RngStream::new(7),
        )
        .unwrap();
        assert!(warnings.is_empty());
        // Exact means oracle: the tight clouds make centroids equal cloud
        // means to ~1e-4; normalized they match the normalized means.
        for class in 0..2 {
            for (_, c) in centers.iter().enumerate().filter(|(i, _)| i / 2 == class) {
                let expect = unit(c.to_vec());
                let matched = (0..2).any(|m| {
                    let p = bank.prototype(class, m);
                    p.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-4)
                });
                assert!(matched, "no prototype matches cloud mean {c:?}");
            }
        }
    }

    #[test]
    fn kmeans_single_prototype_is_class_mean() {
        let embeddings = vec![
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, 4.0],
        ];
        let labels = vec![0, 0, 1, 1];
        let (bank, _) = init_prototypes_kmeans(
            &embeddings,
            &labels,
            2,
            1,
            0.05,
            &PrototypeInitConfig::default(),
            &mut RngStream::new(1),
        )
        .unwrap();
        // class 0 mean = (2, 0) -> unit (1, 0); class 1 mean = (0, 3) -> (0, 1)
        assert!((bank.prototype(0, 0)[0] - 1.0).abs() < 1e-9);
        assert!((bank.prototype(1, 0)[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn init_is_deterministic_and_handles_missing_class() {
        let mut rng = RngStream::new(5);
        let embeddings: Vec<Vec<f64>> = (0..20).map(|_| rng.normal_vec(6)).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        // class 2 never predicted
        let make = |seed| {
            init_prototypes_kmeans(
                &embeddings,
                &labels,
                3,
                2,
                0.05,
                &PrototypeInitConfig::default(),
                &mut RngStream::new(seed),
            )
            .unwrap()
        };
        let (a, warn_a) = make(9);
        let (b, _) = make(9);
        assert_eq!(a.rows(), b.rows());
        assert!(warn_a.iter().any(|w| w.contains("class 2")));
    }

    #[test]
    fn class_similarity_basics() {
        let bank = PrototypeBank::from_rows(
            2,
            2,
            3,
            0.05,
            vec![
                1.0, 0.0, 0.0, // p(0,0)
                0.0, 1.0, 0.0, // p(0,1)
                0.0, 0.0, 1.0, // p(1,0)
                1.0, 1.0, 0.0, // p(1,1) (normalized on construction)
            ],
        )
        .unwrap();
        let z = vec![1.0, 0.0, 0.0];
        let s = class_similarity(&[&z], &bank, 0).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1).abs() < 1e-12);
        // orthogonal to all of class 1? z is orthogonal to p(1,0) only
        let s1 = class_similarity(&[&z], &bank, 1).unwrap();
        assert!(s1.get(0, 0).abs() < 1e-12);
        assert!((s1.get(0, 1) - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_uniform_similarities_give_uniform_assignment() {
        let s = Matrix::from_vec(3, 4, vec![0.7; 12]).unwrap();
        let q = sinkhorn_assign(&s, 0.3, 10).unwrap();
        for v in q.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_identity_preference() {
        let s = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = sinkhorn_assign(&s, 0.05, 50).unwrap();
        // Reference: fully converged run.
        let q_ref = sinkhorn_assign(&s, 0.05, 500).unwrap();
        for (a, b) in q.data().iter().zip(q_ref.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((q.get(0, 0) - 1.0).abs() < 1e-6);
        assert!((q.get(1, 1) - 1.0).abs() < 1e-6);
        assert!(q.get(0, 1) < 1e-6);
    }

    #[test]
    fn sinkhorn_marginals_after_convergence() {
        // Temperature in the regime where 50 sweeps fully converge for
        // similarity entries in [-1, 1].
        let mut rng = RngStream::new(3);
        for trial in 0..20 {
            let b = 2 + rng.below(30);
            let m = 1 + rng.below(5);
            let data: Vec<f64> = (0..b * m).map(|_| 2.0 * rng.uniform() - 1.0).collect();
            let s = Matrix::from_vec(b, m, data).unwrap();
            let q = sinkhorn_assign(&s, 0.3, 50).unwrap();
            for i in 0..b {
                let rs: f64 = q.row(i).iter().sum();
                assert!((rs - 1.0).abs() < 1e-9, "trial {trial} row {i}: {rs}");
            }
            let target = b as f64 / m as f64;
            for c in 0..m {
                let cs: f64 = q.column(c).iter().sum();
                assert!((cs - target).abs() < 1e-6, "trial {trial} col {c}: {cs}");
            }
            assert!(q.data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn sinkhorn_shift_invariance() {
        let mut rng = RngStream::new(4);
        let data: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let s = Matrix::from_vec(4, 3, data.clone()).unwrap();
        let shifted =
            Matrix::from_vec(4, 3, data.iter().map(|v| v + 3.7).collect()).unwrap();
        let qa = sinkhorn_assign(&s, 0.2, 50).unwrap();
        let qb = sinkhorn_assign(&shifted, 0.2, 50).unwrap();
        for (a, b) in qa.data().iter().zip(qb.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    /// All permutations of 0..n via Heap's algorithm.
    pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut items: Vec<usize> = (0..n).collect();
        fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                out.push(items.clone());
                return;
            }
            for i in 0..k {
                heap(k - 1, items, out);
                if k % 2 == 0 {
                    items.swap(i, k - 1);
                } else {
                    items.swap(0, k - 1);
                }
            }
        }
        heap(n, &mut items, &mut out);
        out
    }

    pub(crate) fn best_permutation(s: &Matrix) -> Vec<usize> {
        let n = s.rows();
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for perm in permutations(n) {
            let score: f64 = perm.iter().enumerate().map(|(i, &j)| s.get(i, j)).sum();
            if score > best_score {
                best_score = score;
                best = Some(perm);
            }
        }
        best.unwrap()
    }

    #[test]
    fn low_temperature_recovers_optimal_permutation() {
        let mut rng = RngStream::new(6);
        for _ in 0..5 {
            let data: Vec<f64> = (0..9).map(|_| rng.uniform()).collect();
            let s = Matrix::from_vec(3, 3, data).unwrap();
            let q = sinkhorn_assign(&s, 1e-3, 500).unwrap();
            let perm = best_permutation(&s);
            for (i, &j) in perm.iter().enumerate() {
                assert_eq!(
                    argmax_lowest(q.row(i)),
                    j,
                    "row {i} assignment disagrees with the enumeration oracle"
                );
            }
        }
    }

    #[test]
    fn refine_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(8);
        let (classes, per_class, dim) = (2, 3, 5);
        let bank = PrototypeBank::from_rows(
            classes,
            per_class,
            dim,
            0.05,
            (0..classes * per_class * dim).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let members0: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(dim)).collect();
        let members1: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(dim)).collect();
        let refs0: Vec<&[f64]> = members0.iter().map(|v| v.as_slice()).collect();
        let refs1: Vec<&[f64]> = members1.iter().map(|v| v.as_slice()).collect();
        let s0 = class_similarity(&refs0, &bank, 0).unwrap();
        let s1 = class_similarity(&refs1, &bank, 1).unwrap();
        let q0 = sinkhorn_assign(&s0, 0.05, 3).unwrap();
        let q1 = sinkhorn_assign(&s1, 0.05, 3).unwrap();
        let groups = vec![(0, refs0, q0), (1, refs1, q1)];

        let (_, grad) =
            refine_loss_and_grad(bank.rows(), classes, per_class, dim, &groups, 0.05, 1.0)
                .unwrap();
        // Targets stay frozen while probing, matching the optimization
        // semantics of a single descent step.
        let fd = finite_diff_grad(
            |p| {
                refine_loss_and_grad(p, classes, per_class, dim, &groups, 0.05, 1.0)
                    .unwrap()
                    .0
            },
            bank.rows(),
            1e-6,
        )
        .unwrap();
        let err = max_relative_error(&grad, &fd);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn refine_fixed_point_barely_moves() {
        // Each labeled sample sits exactly on a prototype of its class.
        let protos = vec![
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
        ];
        let bank = PrototypeBank::from_rows(2, 2, 4, 0.01, protos.clone()).unwrap();
        let embeddings = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let labels = vec![0, 0, 1, 1];
        let cfg = RefineConfig {
            epochs: 3,
            uniform_mix: 0.0,
            ..RefineConfig::default()
        };
        let (refined, log) = refine_prototypes(&bank, &embeddings, &labels, &cfg).unwrap();
        let max_move = refined
            .rows()
            .iter()
            .zip(&protos)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_move < 1e-3, "prototypes moved by {max_move}");
        assert!(log.epoch_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn refine_is_deterministic_and_keeps_unit_norm() {
        let mut rng = RngStream::new(10);
        let bank = PrototypeBank::from_rows(
            3,
            2,
            6,
            0.05,
            (0..36).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let embeddings: Vec<Vec<f64>> = (0..24).map(|_| rng.normal_vec(6)).collect();
        let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let cfg = RefineConfig {
            epochs: 5,
            ..RefineConfig::default()
        };
        let (a, _) = refine_prototypes(&bank, &embeddings, &labels, &cfg).unwrap();
        let (b, _) = refine_prototypes(&bank, &embeddings, &labels, &cfg).unwrap();
        assert_eq!(a.rows(), b.rows());
        for class in 0..3 {
            for mode in 0..2 {
                let n = crate::numeric::norm(a.prototype(class, mode));
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn proto_predict_basics() {
        let bank = PrototypeBank::from_rows(
            3,
            2,
            4,
            0.05,
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                1.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 1.0, 0.0, //
            ],
        )
        .unwrap();
        // z equals prototype (2, 0): class 2 wins with score 1.
        let z = vec![1.0, 1.0, 0.0, 0.0];
        let (label, class_scores, flat) = proto_predict(&z, &bank).unwrap();
        assert_eq!(label, 2);
        assert!((class_scores[2] - 1.0).abs() < 1e-12);
        assert_eq!(flat.len(), 6);
        // argmax of class scores equals class of the flat argmax
        assert_eq!(argmax_lowest(&class_scores), label);

        // All-equal similarities tie-break to class 0.
        let bank_same = PrototypeBank::from_rows(
            2,
            2,
            2,
            0.05,
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let (label, _, _) = proto_predict(&[1.0, 0.0], &bank_same).unwrap();
        assert_eq!(label, 0);

        assert!(proto_predict(&[0.0, 0.0], &bank_same).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = RngStream::new(11);
        let bank = PrototypeBank::from_rows(
            2,
            3,
            5,
            0.05,
            (0..30).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        bank.save(&path).unwrap();
        let back = PrototypeBank::load(&path).unwrap();
        assert_eq!(back, bank);
    }

    #[test]
    fn balanced_targets_spread_usage_on_imbalanced_data() {
        // Report-style check: with heavy imbalance in similarity structure
        // the balanced assignment keeps every prototype in use, while the
        // unbalanced fallback may abandon some.
        let mut rng = RngStream::new(12);
        let mut data = Vec::new();
        for i in 0..40 {
            let mut v = rng.normal_vec(3);
            // skew everything toward one direction
            v[0] += if i % 10 == 0 { -2.0 } else { 2.0 };
            data.extend(v);
        }
        let s_rows: Vec<Vec<f64>> = data.chunks(3).map(|c| c.to_vec()).collect();
        let protos = vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let bank = PrototypeBank::from_rows(1, 3, 3, 0.05, protos).unwrap();
        let refs: Vec<&[f64]> = s_rows.iter().map(|v| v.as_slice()).collect();
        let s = class_similarity(&refs, &bank, 0).unwrap();
        let balanced = assignment_counts(&sinkhorn_assign(&s, 0.05, 50).unwrap());
        let unbalanced = assignment_counts(&row_softmax_assign(&s, 0.05).unwrap());
        let min_balanced = balanced.iter().min().unwrap();
        let min_unbalanced = unbalanced.iter().min().unwrap();
        assert!(min_balanced >= min_unbalanced);
    }
}
