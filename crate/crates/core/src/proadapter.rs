//! Frozen residual backbone with prototype-conditioned feature-wise
//! modulation adapters in its last L layers, plus the trainable
//! classifier head.
//!
//! The backbone maps a flattened sample onto a width x time feature grid
//! (per-column input projection) and stacks residual MLP blocks
//! h <- h + W2 tanh(W1 h + b1) + b2. Its parameters are fixed at seeded
//! construction; there is no mutation API, and a digest over the exact
//! bit patterns lets callers assert freezing across training runs.
//!
//! Adapters modulate the residual-branch output of each adapted layer
//! before the residual add: channel-wise scale and shift generated from
//! the branch statistics (self branch) and from the class-affinity
//! conditioning vector (bounded, gated prototype branch). Scales stay in
//! [1-lambda, 1+lambda] by construction. Zero-initialized adapters are an
//! exact identity, so training starts from the frozen model's function.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::numeric::{param_digest, Matrix, RngStream};

pub const ADAPTER_MAGIC: &[u8; 8] = b"SCOPEADA";
pub const ADAPTER_VERSION: u16 = 1;

/// Variance floor inside the temporal Std so gradients stay finite on
/// constant rows.
const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Feature grid width D.
    pub width: usize,
    /// Hidden width of each residual branch.
    pub hidden: usize,
    /// Residual block count N.
    pub layers: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            width: 16,
            hidden: 128,
            layers: 20,
            seed: 7,
        }
    }
}

/// Frozen feature extractor. Parameters are private and never mutated.
#[derive(Debug, Clone)]
pub struct FrozenBackbone {
    cfg: BackboneConfig,
    channels: usize,
    time: usize,
    params: Vec<f64>,
}

impl FrozenBackbone {
    pub fn new(cfg: BackboneConfig, channels: usize, time: usize) -> Result<FrozenBackbone> {
        if cfg.width == 0 || cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::InvalidConfig("backbone dims must be positive".into()));
        }
        if channels == 0 || time == 0 {
            return Err(Error::InvalidConfig("backbone input dims must be positive".into()));
        }
        let (d, h, n) = (cfg.width, cfg.hidden, cfg.layers);
        let count = d * channels + d + n * (h * d + h + d * h + d);
        let mut rng = RngStream::new(cfg.seed).substream("backbone-init");
        let mut params = vec![0.0; count];
        let mut off = 0;
        let proj_scale = 1.0 / (channels as f64).sqrt();
        for p in &mut params[off..off + d * channels] {
            *p = proj_scale * rng.normal();
        }
        off += d * channels + d; // projection bias stays zero
        for _ in 0..n {
            let w1_scale = 1.0 / (d as f64).sqrt();
            for p in &mut params[off..off + h * d] {
                *p = w1_scale * rng.normal();
            }
            off += h * d + h; // b1 zero
            let w2_scale = 1.0 / (h as f64).sqrt();
            for p in &mut params[off..off + d * h] {
                *p = w2_scale * rng.normal();
            }
            off += d * h + d; // b2 zero
        }
        Ok(FrozenBackbone {
            cfg,
            channels,
            time,
            params,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    pub fn depth(&self) -> usize {
        self.cfg.layers
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_dim(&self) -> usize {
        self.channels * self.time
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Bit-exact digest of the frozen parameters.
    pub fn digest(&self) -> u64 {
        param_digest(&self.params)
    }

    fn proj_w(&self) -> &[f64] {
        &self.params[0..self.cfg.width * self.channels]
    }

    fn proj_b(&self) -> &[f64] {
        let start = self.cfg.width * self.channels;
        &self.params[start..start + self.cfg.width]
    }

    fn layer_offset(&self, l: usize) -> usize {
        let (d, h) = (self.cfg.width, self.cfg.hidden);
        d * self.channels + d + l * (h * d + h + d * h + d)
    }

    fn layer_slices(&self, l: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (d, h) = (self.cfg.width, self.cfg.hidden);
        let base = self.layer_offset(l);
        let w1 = &self.params[base..base + h * d];
        let b1 = &self.params[base + h * d..base + h * d + h];
        let w2 = &self.params[base + h * d + h..base + h * d + h + d * h];
        let b2 = &self.params[base + h * d + h + d * h..base + h * d + h + d * h + d];
        (w1, b1, w2, b2)
    }

    /// Project a flattened sample onto the D x T grid.
    pub fn project(&self, features: &[f64]) -> Result<Matrix> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "backbone input",
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        let (d, c, t) = (self.cfg.width, self.channels, self.time);
        let w = self.proj_w();
        let b = self.proj_b();
        let mut out = Matrix::zeros(d, t);
        for col in 0..t {
            for row in 0..d {
                let mut acc = b[row];
                for ch in 0..c {
                    acc += w[row * c + ch] * features[ch * t + col];
                }
                out.set(row, col, acc);
            }
        }
        Ok(out)
    }

    /// Residual branch of layer `l`: returns (tanh activations H x T,
    /// branch output u = W2 act + b2, D x T).
    fn branch(&self, l: usize, h_in: &Matrix) -> (Matrix, Matrix) {
        let (d, hd, t) = (self.cfg.width, self.cfg.hidden, self.time);
        let (w1, b1, w2, b2) = self.layer_slices(l);
        let mut act = Matrix::zeros(hd, t);
        for col in 0..t {
            for j in 0..hd {
                let mut acc = b1[j];
                for row in 0..d {
                    acc += w1[j * d + row] * h_in.get(row, col);
                }
                act.set(j, col, acc.tanh());
            }
        }
        let mut u = Matrix::zeros(d, t);
        for col in 0..t {
            for row in 0..d {
                let mut acc = b2[row];
                for j in 0..hd {
                    acc += w2[row * hd + j] * act.get(j, col);
                }
                u.set(row, col, acc);
            }
        }
        (act, u)
    }

    /// Grad of the branch w.r.t. its input given dL/du (frozen params, no
    /// parameter grads).
    fn branch_backward(&self, l: usize, act: &Matrix, g_u: &Matrix) -> Matrix {
        let (d, hd, t) = (self.cfg.width, self.cfg.hidden, self.time);
        let (w1, _, w2, _) = self.layer_slices(l);
        let mut g_h = Matrix::zeros(d, t);
        for col in 0..t {
            for j in 0..hd {
                let mut acc = 0.0;
                for row in 0..d {
                    acc += w2[row * hd + j] * g_u.get(row, col);
                }
                let a = act.get(j, col);
                let g_pre = acc * (1.0 - a * a);
                if g_pre == 0.0 {
                    continue;
                }
                for row in 0..d {
                    g_h.set(row, col, g_h.get(row, col) + w1[j * d + row] * g_pre);
                }
            }
        }
        g_h
    }

    /// Frozen forward up to and including layer `until` (0 = just the
    /// input projection).
    pub fn forward_to(&self, features: &[f64], until: usize) -> Result<Matrix> {
        let mut h = self.project(features)?;
        for l in 0..until {
            let (_, u) = self.branch(l, &h);
            h.add_scaled(&u, 1.0);
        }
        Ok(h)
    }
}

/// All layer features h_1..h_N of the frozen forward pass.
pub fn backbone_forward(backbone: &FrozenBackbone, features: &[f64]) -> Result<Vec<Matrix>> {
    let mut h = backbone.project(features)?;
    let mut out = Vec::with_capacity(backbone.depth());
    for l in 0..backbone.depth() {
        let (_, u) = backbone.branch(l, &h);
        h.add_scaled(&u, 1.0);
        out.push(h.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Number of top layers to adapt (0 disables adapters entirely).
    pub depth: usize,
    /// Bound on the modulation scale: alpha in [1-scale_bound, 1+scale_bound].
    pub scale_bound: f64,
    /// Bound on the prototype-branch contribution before gating.
    pub proto_bound: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            depth: 3,
            scale_bound: 0.1,
            proto_bound: 1.0,
        }
    }
}

/// Trainable stage-II parameters: per-layer modulation generators plus the
/// classifier head.
#[derive(Debug, Clone)]
pub struct AdapterStack {
    pub cfg: AdapterConfig,
    width: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Per-layer segment sizes within the flat parameter vector.
fn layer_param_size(d: usize, k: usize) -> usize {
    let two_d = 2 * d;
    two_d * two_d + two_d   // self branch
        + two_d * k + two_d // prototype branch
        + k + 1             // gate
}

impl AdapterStack {
    pub fn new(
        cfg: AdapterConfig,
        backbone: &FrozenBackbone,
        classes: usize,
        rng: &mut RngStream,
    ) -> Result<AdapterStack> {
        if cfg.depth > backbone.depth() {
            return Err(Error::InvalidConfig(format!(
                "adapter depth {} exceeds backbone depth {}",
                cfg.depth,
                backbone.depth()
            )));
        }
        if cfg.scale_bound <= 0.0 || cfg.proto_bound <= 0.0 {
            return Err(Error::InvalidConfig(
                "adapter bounds must be positive".into(),
            ));
        }
        if classes < 2 {
            return Err(Error::InvalidConfig("adapter needs K >= 2".into()));
        }
        let d = backbone.width();
        let count = cfg.depth * layer_param_size(d, classes) + d * classes + classes;
        // Adapters start at exact zero (identity); only the head gets a
        // small seeded init.
        let mut params = vec![0.0; count];
        let head_off = cfg.depth * layer_param_size(d, classes);
        for p in &mut params[head_off..head_off + d * classes] {
            *p = 0.01 * rng.normal();
        }
        Ok(AdapterStack {
            cfg,
            width: d,
            classes,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "AdapterStack::set_params",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameters of adapted layer `idx` (0 = lowest adapted layer).
    pub fn layer_params(&self, idx: usize) -> &[f64] {
        let size = layer_param_size(self.width, self.classes);
        &self.params[idx * size..(idx + 1) * size]
    }
}

/// Fraction of trainable parameters over the whole adapted model.
pub fn trainable_fraction(backbone: &FrozenBackbone, adapters: &AdapterStack) -> f64 {
    let trainable = adapters.param_count() as f64;
    trainable / (backbone.param_count() as f64 + trainable)
}

/// Intermediate values of one modulation, kept for the backward pass.
struct ModCache {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    stats: Vec<f64>,     // c = [mu; sigma]
    tanh_pv: Vec<f64>,   // tanh of the prototype-branch preactivation
    gate: f64,           // s
    proto_scale: Vec<f64>, // lambda_w tanh(pv) upper half (scale part)
    proto_shift: Vec<f64>, // lower half (shift part)
    tanh_delta: Vec<f64>, // tanh(delta alpha)
    alpha: Vec<f64>,
}

/// Offsets into one layer's parameter slice.
struct LayerView<'a> {
    ws: &'a [f64],
    bs: &'a [f64],
    wp: &'a [f64],
    bp: &'a [f64],
    wg: &'a [f64],
    bg: f64,
}

fn layer_view(params: &[f64], d: usize, k: usize) -> LayerView<'_> {
    let two_d = 2 * d;
    let mut off = 0;
    let ws = &params[off..off + two_d * two_d];
    off += two_d * two_d;
    let bs = &params[off..off + two_d];
    off += two_d;
    let wp = &params[off..off + two_d * k];
    off += two_d * k;
    let bp = &params[off..off + two_d];
    off += two_d;
    let wg = &params[off..off + k];
    off += k;
    let bg = params[off];
    LayerView {
        ws,
        bs,
        wp,
        bp,
        wg,
        bg,
    }
}

fn modulate_cached(
    u: &Matrix,
    cond: &[f64],
    layer: &LayerView<'_>,
    scale_bound: f64,
    proto_bound: f64,
) -> Result<(Matrix, ModCache)> {
    let d = u.rows();
    let t = u.cols();
    if t == 0 {
        return Err(Error::EmptyInput("modulate: zero-length time axis"));
    }
    let two_d = 2 * d;
    // Temporal statistics per channel (population variance).
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    for row in 0..d {
        let r = u.row(row);
        let m = r.iter().sum::<f64>() / t as f64;
        let var = r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t as f64;
        mu[row] = m;
        sigma[row] = (var + STD_EPS).sqrt();
    }
    let mut stats = Vec::with_capacity(two_d);
    stats.extend_from_slice(&mu);
    stats.extend_from_slice(&sigma);

    // Self branch: [delta_alpha0; beta0] = Ws c + bs.
    let mut self_out = vec![0.0; two_d];
    for (i, so) in self_out.iter_mut().enumerate() {
        let mut acc = layer.bs[i];
        for (j, &cv) in stats.iter().enumerate() {
            acc += layer.ws[i * two_d + j] * cv;
        }
        *so = acc;
    }

    // Prototype branch: bounded tanh of a linear map of the conditioning
    // vector, plus the scalar gate.
    let k = cond.len();
    let mut tanh_pv = vec![0.0; two_d];
    for (i, tp) in tanh_pv.iter_mut().enumerate() {
        let mut acc = layer.bp[i];
        for (j, &cj) in cond.iter().enumerate() {
            acc += layer.wp[i * k + j] * cj;
        }
        *tp = acc.tanh();
    }
    let proto_scale: Vec<f64> = tanh_pv[..d].iter().map(|v| proto_bound * v).collect();
    let proto_shift: Vec<f64> = tanh_pv[d..].iter().map(|v| proto_bound * v).collect();
    let mut gate_pre = layer.bg;
    for (j, &cj) in cond.iter().enumerate() {
        gate_pre += layer.wg[j] * cj;
    }
    let gate = 1.0 / (1.0 + (-gate_pre).exp());

    // Combine and bound.
    let mut tanh_delta = vec![0.0; d];
    let mut alpha = vec![0.0; d];
    let mut beta = vec![0.0; d];
    for row in 0..d {
        let delta = self_out[row] + gate * proto_scale[row];
        tanh_delta[row] = delta.tanh();
        alpha[row] = 1.0 + scale_bound * tanh_delta[row];
        beta[row] = self_out[d + row] + gate * proto_shift[row];
    }

    let mut out = Matrix::zeros(d, t);
    for row in 0..d {
        for col in 0..t {
            out.set(row, col, alpha[row] * u.get(row, col) + beta[row]);
        }
    }
    Ok((
        out,
        ModCache {
            mu,
            sigma,
            stats,
            tanh_pv,
            gate,
            proto_scale,
            proto_shift,
            tanh_delta,
            alpha,
        },
    ))
}

/// Feature-wise modulation of a D x T representation by the conditioning
/// vector, using the parameters of one adapted layer.
pub fn modulate(
    stack: &AdapterStack,
    layer_idx: usize,
    h: &Matrix,
    cond: &[f64],
) -> Result<Matrix> {
    if layer_idx >= stack.cfg.depth {
        return Err(Error::InvalidConfig(format!(
            "adapter layer {layer_idx} out of range (depth {})",
            stack.cfg.depth
        )));
    }
    if cond.len() != stack.classes {
        return Err(Error::DimensionMismatch {
            context: "modulate conditioning vector",
            expected: stack.classes,
            got: cond.len(),
        });
    }
    let view = layer_view(stack.layer_params(layer_idx), stack.width, stack.classes);
    modulate_cached(h, cond, &view, stack.cfg.scale_bound, stack.cfg.proto_bound)
        .map(|(m, _)| m)
}

// ---------------------------------------------------------------------------
// Adapted forward / backward
// ---------------------------------------------------------------------------

struct AdaptedLayerCache {
    act: Matrix, // branch tanh activations
    u: Matrix,   // branch output pre-modulation
    mc: ModCache,
}

/// Cache of one adapted forward pass, from the lowest adapted layer up.
pub struct ForwardCache {
    layers: Vec<AdaptedLayerCache>,
    pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Run the adapted suffix of the network from the cached frozen prefix
/// output `lower` (the features after layer N - L).
pub fn forward_from_lower(
    backbone: &FrozenBackbone,
    stack: &AdapterStack,
    params: &[f64],
    lower: &Matrix,
    cond: &[f64],
) -> Result<ForwardCache> {
    let n = backbone.depth();
    let depth = stack.cfg.depth;
    let d = backbone.width();
    let k = stack.classes;
    let t = backbone.time();
    let mut h = lower.clone();
    let mut layers = Vec::with_capacity(depth);
    let size = layer_param_size(d, k);
    for (idx, l) in (n - depth..n).enumerate() {
        let (act, u) = backbone.branch(l, &h);
        let view = layer_view(&params[idx * size..(idx + 1) * size], d, k);
        let (m, mc) =
            modulate_cached(&u, cond, &view, stack.cfg.scale_bound, stack.cfg.proto_bound)?;
        h.add_scaled(&m, 1.0);
        layers.push(AdaptedLayerCache { act, u, mc });
    }
    // Temporal mean pooling then the linear head.
    let mut pooled = vec![0.0; d];
    for row in 0..d {
        pooled[row] = h.row(row).iter().sum::<f64>() / t as f64;
    }
    let head_off = depth * size;
    let head_w = &params[head_off..head_off + d * k];
    let head_b = &params[head_off + d * k..head_off + d * k + k];
    let mut logits = vec![0.0; k];
    for (c, lg) in logits.iter_mut().enumerate() {
        let mut acc = head_b[c];
        for (row, &pv) in pooled.iter().enumerate() {
            acc += head_w[c * d + row] * pv;
        }
        *lg = acc;
    }
    Ok(ForwardCache {
        layers,
        pooled,
        logits,
    })
}

/// Backward from dL/dlogits, accumulating adapter + head grads into
/// `grad` (same layout as the stack's flat params).
pub fn backward_from_cache(
    backbone: &FrozenBackbone,
    stack: &AdapterStack,
    params: &[f64],
    cache: &ForwardCache,
    cond: &[f64],
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let n = backbone.depth();
    let depth = stack.cfg.depth;
    let d = backbone.width();
    let k = stack.classes;
    let t = backbone.time();
    let size = layer_param_size(d, k);
    let head_off = depth * size;
    let head_w = &params[head_off..head_off + d * k];

    // Head and pooling.
    let mut g_pooled = vec![0.0; d];
    for (c, &gl) in dlogits.iter().enumerate() {
        grad[head_off + d * k + c] += gl;
        for row in 0..d {
            grad[head_off + c * d + row] += gl * cache.pooled[row];
            g_pooled[row] += gl * head_w[c * d + row];
        }
    }
    let mut g_h = Matrix::zeros(d, t);
    for row in 0..d {
        let g = g_pooled[row] / t as f64;
        for col in 0..t {
            g_h.set(row, col, g);
        }
    }

    // Walk adapted layers top-down.
    for idx in (0..depth).rev() {
        let l = n - depth + idx;
        let lc = &cache.layers[idx];
        let mc = &lc.mc;
        let two_d = 2 * d;
        let base = idx * size;
        let view = layer_view(&params[base..base + size], d, k);

        // g_h is dL/dh_out; the modulated branch sees the same gradient.
        let g_m = &g_h;

        // alpha/beta grads.
        let mut g_alpha = vec![0.0; d];
        let mut g_beta = vec![0.0; d];
        for row in 0..d {
            let mut ga = 0.0;
            let mut gb = 0.0;
            for col in 0..t {
                let g = g_m.get(row, col);
                ga += g * lc.u.get(row, col);
                gb += g;
            }
            g_alpha[row] = ga;
            g_beta[row] = gb;
        }
        // Through alpha = 1 + bound * tanh(delta).
        let g_delta: Vec<f64> = (0..d)
            .map(|row| {
                g_alpha[row] * stack.cfg.scale_bound * (1.0 - mc.tanh_delta[row] * mc.tanh_delta[row])
            })
            .collect();

        // Split into self branch, gate, prototype branch.
        // delta = self_out[row] + gate * proto_scale[row]
        // beta  = self_out[d+row] + gate * proto_shift[row]
        let mut g_self = vec![0.0; two_d];
        let mut g_gate = 0.0;
        let mut g_proto = vec![0.0; two_d]; // grads of lambda_w * tanh(pv)
        for row in 0..d {
            g_self[row] = g_delta[row];
            g_self[d + row] = g_beta[row];
            g_gate += g_delta[row] * mc.proto_scale[row] + g_beta[row] * mc.proto_shift[row];
            g_proto[row] = g_delta[row] * mc.gate;
            g_proto[d + row] = g_beta[row] * mc.gate;
        }

        // Gate params.
        let g_gate_pre = g_gate * mc.gate * (1.0 - mc.gate);
        let mut off = base + two_d * two_d + two_d + two_d * k + two_d;
        for (j, &cj) in cond.iter().enumerate() {
            grad[off + j] += g_gate_pre * cj;
        }
        grad[off + k] += g_gate_pre;

        // Prototype branch params: d(bound*tanh(pv))/dpv = bound*(1-tanh^2).
        off = base + two_d * two_d + two_d;
        for i in 0..two_d {
            let g_pv =
                g_proto[i] * stack.cfg.proto_bound * (1.0 - mc.tanh_pv[i] * mc.tanh_pv[i]);
            if g_pv == 0.0 {
                continue;
            }
            for (j, &cj) in cond.iter().enumerate() {
                grad[off + i * k + j] += g_pv * cj;
            }
            grad[base + two_d * two_d + two_d + two_d * k + i] += g_pv;
        }

        // Self branch params and stats grad.
        let mut g_stats = vec![0.0; two_d];
        for i in 0..two_d {
            let g = g_self[i];
            if g == 0.0 {
                continue;
            }
            grad[base + two_d * two_d + i] += g; // bias
            for j in 0..two_d {
                grad[base + i * two_d + j] += g * mc.stats[j];
                g_stats[j] += g * view.ws[i * two_d + j];
            }
        }

        // dL/du: direct modulation term plus the statistics path.
        let mut g_u = Matrix::zeros(d, t);
        for row in 0..d {
            let g_mu = g_stats[row];
            let g_sigma = g_stats[d + row];
            for col in 0..t {
                let direct = mc.alpha[row] * g_m.get(row, col);
                let stat = g_mu / t as f64
                    + g_sigma * (lc.u.get(row, col) - mc.mu[row]) / (t as f64 * mc.sigma[row]);
                g_u.set(row, col, direct + stat);
            }
        }

        // Through the frozen branch to the layer input; add the residual
        // path.
        let g_branch_in = backbone.branch_backward(l, &lc.act, &g_u);
        g_h.add_scaled(&g_branch_in, 1.0);
    }
}

/// Full adapted forward for one sample: frozen prefix, adapted suffix,
/// pooled head logits.
pub fn adapted_forward(
    backbone: &FrozenBackbone,
    stack: &AdapterStack,
    features: &[f64],
    cond: &[f64],
) -> Result<Vec<f64>> {
    let lower = backbone.forward_to(features, backbone.depth() - stack.cfg.depth)?;
    let cache = forward_from_lower(backbone, stack, stack.params(), &lower, cond)?;
    Ok(cache.logits)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdapterCheckpointHeader {
    backbone: BackboneConfig,
    adapter: AdapterConfig,
    channels: usize,
    time: usize,
    classes: usize,
}

/// Save adapter + head parameters with enough config echo to rebuild the
/// seeded frozen backbone.
pub fn save_adapter(
    path: &Path,
    backbone: &FrozenBackbone,
    stack: &AdapterStack,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BinWriter::new(BufWriter::new(file));
    w.magic(ADAPTER_MAGIC, ADAPTER_VERSION)?;
    let header = AdapterCheckpointHeader {
        backbone: backbone.cfg.clone(),
        adapter: stack.cfg.clone(),
        channels: backbone.channels,
        time: backbone.time,
        classes: stack.classes,
    };
    w.str(&serde_json::to_string(&header)?)?;
    w.u64(stack.params().len() as u64)?;
    w.f64_slice(stack.params())?;
    w.into_inner().flush()?;
    Ok(())
}

pub fn load_adapter(path: &Path) -> Result<(FrozenBackbone, AdapterStack)> {
    let file = File::open(path)?;
    let mut r = BinReader::new(BufReader::new(file));
    r.expect_magic(ADAPTER_MAGIC, ADAPTER_VERSION)?;
    let header: AdapterCheckpointHeader = serde_json::from_str(&r.str("header")?)?;
    let backbone = FrozenBackbone::new(header.backbone, header.channels, header.time)?;
    let mut rng = RngStream::new(0);
    let mut stack = AdapterStack::new(header.adapter, &backbone, header.classes, &mut rng)?;
    let n = r.u64("param_count")? as usize;
    if n != stack.param_count() {
        return Err(Error::MalformedHeader(format!(
            "adapter blob holds {n} values, config needs {}",
            stack.param_count()
        )));
    }
    let params = r.f64_vec(n, "adapter params")?;
    stack.set_params(params)?;
    Ok((backbone, stack))
}
