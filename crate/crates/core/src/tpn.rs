//! Task-prior network: a small convolutional (or MLP fallback) encoder
//! with a normalized linear head, trained on the labeled split with
//! cross-entropy plus an equiangular-tight-frame penalty on the head.
//!
//! Backpropagation is hand-written through a fixed block library
//! (temporal conv, depthwise spatial conv, separable conv, per-sample
//! channel standardization, ELU, average pooling, linear). Gradient
//! correctness is guarded by finite-difference checks in the test suite.
//! Channel standardization is per-sample (over the channel's spatial/
//! temporal extent), so encoding is deterministic per sample with no
//! train/eval mode split.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::numeric::{dot, softmax, Matrix, RngStream};

pub const TPN_MAGIC: &[u8; 8] = b"SCOPETPN";
pub const TPN_VERSION: u16 = 1;

const STD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Conv,
    Mlp,
}

/// Encoder architecture. Conv mode mirrors a two-block design: temporal
/// convolution, depthwise spatial collapse, separable temporal
/// convolution, with standardization + ELU + average pooling between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpnArch {
    pub encoder: EncoderKind,
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub depth_multiplier: usize,
    pub separable_kernel: usize,
    pub pointwise_filters: usize,
    pub pool1: usize,
    pub pool2: usize,
    /// Hidden width of the MLP fallback encoder.
    pub mlp_hidden: usize,
    /// Embedding dim of the MLP fallback (conv mode derives its own).
    pub mlp_embed: usize,
}

impl Default for TpnArch {
    fn default() -> Self {
        TpnArch {
            encoder: EncoderKind::Conv,
            temporal_filters: 4,
            temporal_kernel: 7,
            depth_multiplier: 2,
            separable_kernel: 5,
            pointwise_filters: 8,
            pool1: 2,
            pool2: 2,
            mlp_hidden: 32,
            mlp_embed: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    AdamW,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Strength of the head-geometry penalty.
    pub etf_weight: f64,
    /// The geometric penalty targets multi-class heads; enable explicitly
    /// for K = 2 if wanted.
    pub etf_for_binary: bool,
    pub label_smoothing: f64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
}

impl Default for TpnTrainConfig {
    fn default() -> Self {
        TpnTrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            etf_weight: 0.1,
            etf_for_binary: false,
            label_smoothing: 0.0,
            optimizer: Optimizer::Gd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            seed: 1,
        }
    }
}

/// Immutable network description: shapes and the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TpnNet {
    pub arch: TpnArch,
    pub channels: usize,
    pub time_points: usize,
    pub classes: usize,
}

impl TpnNet {
    pub fn new(arch: TpnArch, channels: usize, time_points: usize, classes: usize) -> Result<TpnNet> {
        if classes < 2 {
            return Err(Error::InvalidConfig("TPN needs K >= 2".into()));
        }
        if channels == 0 || time_points == 0 {
            return Err(Error::InvalidConfig("TPN input dims must be positive".into()));
        }
        if arch.encoder == EncoderKind::Conv {
            if arch.temporal_kernel % 2 == 0 || arch.separable_kernel % 2 == 0 {
                return Err(Error::InvalidConfig(
                    "conv kernels must be odd for symmetric padding".into(),
                ));
            }
            if arch.pool1 == 0 || arch.pool2 == 0 {
                return Err(Error::InvalidConfig("pool factors must be positive".into()));
            }
            if time_points % arch.pool1 != 0 || (time_points / arch.pool1) % arch.pool2 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "time_points {} not divisible by pool factors {}x{}",
                    time_points, arch.pool1, arch.pool2
                )));
            }
            if arch.temporal_filters == 0
                || arch.depth_multiplier == 0
                || arch.pointwise_filters == 0
            {
                return Err(Error::InvalidConfig("conv channel counts must be positive".into()));
            }
        }
        let net = TpnNet {
            arch,
            channels,
            time_points,
            classes,
        };
        if net.embed_dim() < classes - 1 {
            return Err(Error::InvalidConfig(format!(
                "embedding dim {} too small for {} classes (need >= K-1)",
                net.embed_dim(),
                classes
            )));
        }
        Ok(net)
    }

    /// Channels after the depthwise spatial collapse.
    fn mid_channels(&self) -> usize {
        self.arch.temporal_filters * self.arch.depth_multiplier
    }

    fn time_after_pool1(&self) -> usize {
        self.time_points / self.arch.pool1
    }

    fn time_out(&self) -> usize {
        self.time_after_pool1() / self.arch.pool2
    }

    pub fn embed_dim(&self) -> usize {
        match self.arch.encoder {
            EncoderKind::Conv => self.arch.pointwise_filters * self.time_out(),
            EncoderKind::Mlp => self.arch.mlp_embed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.channels * self.time_points
    }

    // Flat parameter layout offsets.
    fn seg_sizes(&self) -> Vec<usize> {
        let a = &self.arch;
        let mut segs = match a.encoder {
            EncoderKind::Conv => vec![
                a.temporal_filters * a.temporal_kernel, // temporal weights
                a.temporal_filters,                     // temporal bias
                self.mid_channels() * self.channels,    // depthwise weights
                self.mid_channels() * a.separable_kernel, // separable depthwise
                a.pointwise_filters * self.mid_channels(), // pointwise weights
                a.pointwise_filters,                    // pointwise bias
            ],
            EncoderKind::Mlp => vec![
                a.mlp_hidden * self.feature_dim(),
                a.mlp_hidden,
                a.mlp_embed * a.mlp_hidden,
                a.mlp_embed,
            ],
        };
        segs.push(self.embed_dim() * self.classes); // head
        segs
    }

    fn seg_offset(&self, idx: usize) -> usize {
        self.seg_sizes()[..idx].iter().sum()
    }

    pub fn param_count(&self) -> usize {
        self.seg_sizes().iter().sum()
    }

    pub fn head_offset(&self) -> usize {
        let segs = self.seg_sizes();
        segs[..segs.len() - 1].iter().sum()
    }

    /// Seeded parameter initialization: weights scaled by 1/sqrt(fan_in),
    /// biases zero, head entries at 0.1 scale.
    pub fn init_params(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let a = &self.arch;
        match a.encoder {
            EncoderKind::Conv => {
                let fans = [
                    a.temporal_kernel,
                    0, // bias
                    self.channels,
                    a.separable_kernel,
                    self.mid_channels(),
                    0, // bias
                ];
                for (i, &fan) in fans.iter().enumerate() {
                    if fan == 0 {
                        continue;
                    }
                    let scale = 1.0 / (fan as f64).sqrt();
                    let off = self.seg_offset(i);
                    let len = self.seg_sizes()[i];
                    for p in &mut params[off..off + len] {
                        *p = scale * rng.normal();
                    }
                }
            }
            EncoderKind::Mlp => {
                let fans = [self.feature_dim(), 0, a.mlp_hidden, 0];
                for (i, &fan) in fans.iter().enumerate() {
                    if fan == 0 {
                        continue;
                    }
                    let scale = 1.0 / (fan as f64).sqrt();
                    let off = self.seg_offset(i);
                    let len = self.seg_sizes()[i];
                    for p in &mut params[off..off + len] {
                        *p = scale * rng.normal();
                    }
                }
            }
        }
        let off = self.head_offset();
        for p in &mut params[off..] {
            *p = 0.1 * rng.normal();
        }
        params
    }
}

// ---------------------------------------------------------------------------
// Block primitives
// ---------------------------------------------------------------------------

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// ELU derivative expressed through the output value.
fn elu_grad_from_out(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Standardize `xs` in place over contiguous groups of length `group`;
/// returns (normalized values, per-group sigma).
fn standardize(xs: &[f64], group: usize) -> (Vec<f64>, Vec<f64>) {
    let n_groups = xs.len() / group;
    let mut out = vec![0.0; xs.len()];
    let mut sigmas = vec![0.0; n_groups];
    for g in 0..n_groups {
        let chunk = &xs[g * group..(g + 1) * group];
        let mean = chunk.iter().sum::<f64>() / group as f64;
        let var = chunk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / group as f64;
        let sigma = (var + STD_EPS).sqrt();
        sigmas[g] = sigma;
        for (o, &x) in out[g * group..(g + 1) * group].iter_mut().zip(chunk) {
            *o = (x - mean) / sigma;
        }
    }
    (out, sigmas)
}

/// Backward through standardization: given upstream grad and the
/// normalized outputs, produce grad w.r.t. the raw inputs.
fn standardize_backward(grad: &[f64], normalized: &[f64], sigmas: &[f64], group: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for (g, &sigma) in sigmas.iter().enumerate() {
        let lo = g * group;
        let hi = lo + group;
        let gm = grad[lo..hi].iter().sum::<f64>() / group as f64;
        let gym = grad[lo..hi]
            .iter()
            .zip(&normalized[lo..hi])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / group as f64;
        for i in lo..hi {
            out[i] = (grad[i] - gm - normalized[i] * gym) / sigma;
        }
    }
    out
}

/// Same-padded 1-D correlation of one row with one kernel.
fn conv1d_same(x: &[f64], w: &[f64], out: &mut [f64]) {
    let k = w.len();
    let pad = (k - 1) / 2;
    let t_len = x.len();
    for t in 0..t_len {
        let mut acc = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            let src = t + i;
            if src >= pad && src - pad < t_len {
                acc += wi * x[src - pad];
            }
        }
        out[t] = acc;
    }
}

/// Gradients of conv1d_same: accumulates into `dw` and returns dx.
fn conv1d_same_backward(x: &[f64], w: &[f64], gout: &[f64], dw: &mut [f64]) -> Vec<f64> {
    let k = w.len();
    let pad = (k - 1) / 2;
    let t_len = x.len();
    let mut dx = vec![0.0; t_len];
    for t in 0..t_len {
        let g = gout[t];
        if g == 0.0 {
            continue;
        }
        for i in 0..k {
            let src = t + i;
            if src >= pad && src - pad < t_len {
                dw[i] += g * x[src - pad];
                dx[src - pad] += g * w[i];
            }
        }
    }
    dx
}

fn avg_pool(x: &[f64], t_len: usize, factor: usize, out: &mut [f64]) {
    let t_out = t_len / factor;
    let channels = x.len() / t_len;
    for c in 0..channels {
        for u in 0..t_out {
            let base = c * t_len + u * factor;
            let sum: f64 = x[base..base + factor].iter().sum();
            out[c * t_out + u] = sum / factor as f64;
        }
    }
}

fn avg_pool_backward(gout: &[f64], t_len: usize, factor: usize) -> Vec<f64> {
    let t_out = t_len / factor;
    let channels = gout.len() / t_out;
    let mut dx = vec![0.0; channels * t_len];
    for c in 0..channels {
        for u in 0..t_out {
            let g = gout[c * t_out + u] / factor as f64;
            let base = c * t_len + u * factor;
            for v in dx[base..base + factor].iter_mut() {
                *v += g;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Activations cached for the backward pass of one sample.
struct Cache {
    // conv mode
    x: Vec<f64>,       // C*T
    y1n: Vec<f64>,     // F1*C*T normalized temporal output
    sig1: Vec<f64>,    // F1
    y2n: Vec<f64>,     // CH*T
    sig2: Vec<f64>,    // CH
    y2a: Vec<f64>,     // CH*T post-ELU
    y2p: Vec<f64>,     // CH*T1
    y3: Vec<f64>,      // CH*T1 separable out
    y4n: Vec<f64>,     // F2*T1
    sig3: Vec<f64>,    // F2
    y4a: Vec<f64>,     // F2*T1
    // mlp mode
    h_pre: Vec<f64>,   // hidden pre-activation
    h_act: Vec<f64>,   // hidden post-ELU
}

impl Cache {
    fn empty() -> Cache {
        Cache {
            x: Vec::new(),
            y1n: Vec::new(),
            sig1: Vec::new(),
            y2n: Vec::new(),
            sig2: Vec::new(),
            y2a: Vec::new(),
            y2p: Vec::new(),
            y3: Vec::new(),
            y4n: Vec::new(),
            sig3: Vec::new(),
            y4a: Vec::new(),
            h_pre: Vec::new(),
            h_act: Vec::new(),
        }
    }
}

impl TpnNet {
    fn forward_cached(&self, params: &[f64], features: &[f64]) -> (Vec<f64>, Cache) {
        match self.arch.encoder {
            EncoderKind::Conv => self.forward_conv(params, features),
            EncoderKind::Mlp => self.forward_mlp(params, features),
        }
    }

    fn forward_conv(&self, params: &[f64], features: &[f64]) -> (Vec<f64>, Cache) {
        let a = &self.arch;
        let (c_in, t_len) = (self.channels, self.time_points);
        let f1 = a.temporal_filters;
        let ch = self.mid_channels();
        let f2 = a.pointwise_filters;
        let t1 = self.time_after_pool1();
        let t2 = self.time_out();

        let w_temp = &params[self.seg_offset(0)..self.seg_offset(1)];
        let b_temp = &params[self.seg_offset(1)..self.seg_offset(2)];
        let w_depth = &params[self.seg_offset(2)..self.seg_offset(3)];
        let w_sep = &params[self.seg_offset(3)..self.seg_offset(4)];
        let w_point = &params[self.seg_offset(4)..self.seg_offset(5)];
        let b_point = &params[self.seg_offset(5)..self.seg_offset(6)];

        // Temporal conv: per filter, per input row, correlate along time.
        let mut y1 = vec![0.0; f1 * c_in * t_len];
        let mut row = vec![0.0; t_len];
        for f in 0..f1 {
            let w = &w_temp[f * a.temporal_kernel..(f + 1) * a.temporal_kernel];
            for c in 0..c_in {
                conv1d_same(&features[c * t_len..(c + 1) * t_len], w, &mut row);
                for (t, &v) in row.iter().enumerate() {
                    y1[(f * c_in + c) * t_len + t] = v + b_temp[f];
                }
            }
        }
        let (y1n, sig1) = standardize(&y1, c_in * t_len);

        // Depthwise spatial collapse: each output channel q = f*D+j mixes
        // the C rows of filter map f.
        let dmul = a.depth_multiplier;
        let mut y2 = vec![0.0; ch * t_len];
        for q in 0..ch {
            let f = q / dmul;
            let wrow = &w_depth[q * c_in..(q + 1) * c_in];
            for t in 0..t_len {
                let mut acc = 0.0;
                for (c, &wc) in wrow.iter().enumerate() {
                    acc += wc * y1n[(f * c_in + c) * t_len + t];
                }
                y2[q * t_len + t] = acc;
            }
        }
        let (y2n, sig2) = standardize(&y2, t_len);
        let y2a: Vec<f64> = y2n.iter().map(|&v| elu(v)).collect();
        let mut y2p = vec![0.0; ch * t1];
        avg_pool(&y2a, t_len, a.pool1, &mut y2p);

        // Separable: depthwise temporal conv then pointwise mix.
        let mut y3 = vec![0.0; ch * t1];
        let mut row1 = vec![0.0; t1];
        for q in 0..ch {
            let w = &w_sep[q * a.separable_kernel..(q + 1) * a.separable_kernel];
            conv1d_same(&y2p[q * t1..(q + 1) * t1], w, &mut row1);
            y3[q * t1..(q + 1) * t1].copy_from_slice(&row1);
        }
        let mut y4 = vec![0.0; f2 * t1];
        for g in 0..f2 {
            let wrow = &w_point[g * ch..(g + 1) * ch];
            for u in 0..t1 {
                let mut acc = b_point[g];
                for (q, &wq) in wrow.iter().enumerate() {
                    acc += wq * y3[q * t1 + u];
                }
                y4[g * t1 + u] = acc;
            }
        }
        let (y4n, sig3) = standardize(&y4, t1);
        let y4a: Vec<f64> = y4n.iter().map(|&v| elu(v)).collect();
        let mut z = vec![0.0; f2 * t2];
        avg_pool(&y4a, t1, a.pool2, &mut z);

        let cache = Cache {
            x: features.to_vec(),
            y1n,
            sig1,
            y2n,
            sig2,
            y2a,
            y2p,
            y3,
            y4n,
            sig3,
            y4a,
            ..Cache::empty()
        };
        (z, cache)
    }

    fn forward_mlp(&self, params: &[f64], features: &[f64]) -> (Vec<f64>, Cache) {
        let a = &self.arch;
        let d_in = self.feature_dim();
        let w1 = &params[self.seg_offset(0)..self.seg_offset(1)];
        let b1 = &params[self.seg_offset(1)..self.seg_offset(2)];
        let w2 = &params[self.seg_offset(2)..self.seg_offset(3)];
        let b2 = &params[self.seg_offset(3)..self.seg_offset(4)];

        let mut h_pre = vec![0.0; a.mlp_hidden];
        for (j, hp) in h_pre.iter_mut().enumerate() {
            *hp = b1[j] + dot(&w1[j * d_in..(j + 1) * d_in], features);
        }
        let h_act: Vec<f64> = h_pre.iter().map(|&v| elu(v)).collect();
        let mut z = vec![0.0; a.mlp_embed];
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = b2[i] + dot(&w2[i * a.mlp_hidden..(i + 1) * a.mlp_hidden], &h_act);
        }
        let cache = Cache {
            x: features.to_vec(),
            h_pre,
            h_act,
            ..Cache::empty()
        };
        (z, cache)
    }

    /// Backward from dL/d(embedding); accumulates encoder parameter grads
    /// into `grad` (same layout as params).
    fn backward(&self, params: &[f64], cache: &Cache, dz: &[f64], grad: &mut [f64]) {
        match self.arch.encoder {
            EncoderKind::Conv => self.backward_conv(params, cache, dz, grad),
            EncoderKind::Mlp => self.backward_mlp(params, cache, dz, grad),
        }
    }

    fn backward_conv(&self, params: &[f64], cache: &Cache, dz: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        let (c_in, t_len) = (self.channels, self.time_points);
        let f1 = a.temporal_filters;
        let ch = self.mid_channels();
        let f2 = a.pointwise_filters;
        let t1 = self.time_after_pool1();
        let dmul = a.depth_multiplier;

        let w_depth = &params[self.seg_offset(2)..self.seg_offset(3)];
        let w_sep = &params[self.seg_offset(3)..self.seg_offset(4)];
        let w_point = &params[self.seg_offset(4)..self.seg_offset(5)];

        // pool2 -> ELU -> std3
        let g_y4a = avg_pool_backward(dz, t1, a.pool2);
        let g_y4n: Vec<f64> = g_y4a
            .iter()
            .zip(&cache.y4a)
            .map(|(&g, &y)| g * elu_grad_from_out(y))
            .collect();
        let g_y4 = standardize_backward(&g_y4n, &cache.y4n, &cache.sig3, t1);

        // pointwise
        let (po_w, po_b) = (self.seg_offset(4), self.seg_offset(5));
        let mut g_y3 = vec![0.0; ch * t1];
        for g in 0..f2 {
            let wrow = &w_point[g * ch..(g + 1) * ch];
            for u in 0..t1 {
                let gg = g_y4[g * t1 + u];
                if gg == 0.0 {
                    continue;
                }
                grad[po_b + g] += gg;
                for q in 0..ch {
                    grad[po_w + g * ch + q] += gg * cache.y3[q * t1 + u];
                    g_y3[q * t1 + u] += gg * wrow[q];
                }
            }
        }

        // separable depthwise
        let sep_w = self.seg_offset(3);
        let mut g_y2p = vec![0.0; ch * t1];
        for q in 0..ch {
            let w = &w_sep[q * a.separable_kernel..(q + 1) * a.separable_kernel];
            let mut dw = vec![0.0; a.separable_kernel];
            let dx = conv1d_same_backward(
                &cache.y2p[q * t1..(q + 1) * t1],
                w,
                &g_y3[q * t1..(q + 1) * t1],
                &mut dw,
            );
            for (i, &d) in dw.iter().enumerate() {
                grad[sep_w + q * a.separable_kernel + i] += d;
            }
            g_y2p[q * t1..(q + 1) * t1].copy_from_slice(&dx);
        }

        // pool1 -> ELU -> std2
        let g_y2a = avg_pool_backward(&g_y2p, t_len, a.pool1);
        let g_y2n: Vec<f64> = g_y2a
            .iter()
            .zip(&cache.y2a)
            .map(|(&g, &y)| g * elu_grad_from_out(y))
            .collect();
        let g_y2 = standardize_backward(&g_y2n, &cache.y2n, &cache.sig2, t_len);

        // depthwise spatial
        let dep_w = self.seg_offset(2);
        let mut g_y1n = vec![0.0; f1 * c_in * t_len];
        for q in 0..ch {
            let f = q / dmul;
            let wrow = &w_depth[q * c_in..(q + 1) * c_in];
            for t in 0..t_len {
                let gg = g_y2[q * t_len + t];
                if gg == 0.0 {
                    continue;
                }
                for c in 0..c_in {
                    grad[dep_w + q * c_in + c] += gg * cache.y1n[(f * c_in + c) * t_len + t];
                    g_y1n[(f * c_in + c) * t_len + t] += gg * wrow[c];
                }
            }
        }

        // std1 -> temporal conv
        let g_y1 = standardize_backward(&g_y1n, &cache.y1n, &cache.sig1, c_in * t_len);
        let (te_w, te_b) = (self.seg_offset(0), self.seg_offset(1));
        let w_temp = &params[self.seg_offset(0)..self.seg_offset(1)];
        for f in 0..f1 {
            let w = &w_temp[f * a.temporal_kernel..(f + 1) * a.temporal_kernel];
            let mut dw = vec![0.0; a.temporal_kernel];
            for c in 0..c_in {
                let gout = &g_y1[(f * c_in + c) * t_len..(f * c_in + c + 1) * t_len];
                grad[te_b + f] += gout.iter().sum::<f64>();
                // input grad is not needed below the first layer
                let _ = conv1d_same_backward(
                    &cache.x[c * t_len..(c + 1) * t_len],
                    w,
                    gout,
                    &mut dw,
                );
            }
            for (i, &d) in dw.iter().enumerate() {
                grad[te_w + f * a.temporal_kernel + i] += d;
            }
        }
    }

    fn backward_mlp(&self, params: &[f64], cache: &Cache, dz: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        let d_in = self.feature_dim();
        let w2 = &params[self.seg_offset(2)..self.seg_offset(3)];
        let (o_w1, o_b1, o_w2, o_b2) = (
            self.seg_offset(0),
            self.seg_offset(1),
            self.seg_offset(2),
            self.seg_offset(3),
        );
        let mut g_h = vec![0.0; a.mlp_hidden];
        for (i, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[o_b2 + i] += g;
            for j in 0..a.mlp_hidden {
                grad[o_w2 + i * a.mlp_hidden + j] += g * cache.h_act[j];
                g_h[j] += g * w2[i * a.mlp_hidden + j];
            }
        }
        for j in 0..a.mlp_hidden {
            let g = g_h[j] * elu_grad_from_out(elu(cache.h_pre[j]));
            if g == 0.0 {
                continue;
            }
            grad[o_b1 + j] += g;
            for (i, &x) in cache.x.iter().enumerate().take(d_in) {
                grad[o_w1 + j * d_in + i] += g * x;
            }
        }
    }

    /// Head logits s = W^T z.
    fn head_logits(&self, params: &[f64], embed: &[f64]) -> Vec<f64> {
        let k = self.classes;
        let off = self.head_offset();
        let mut s = vec![0.0; k];
        for (dd, &zv) in embed.iter().enumerate() {
            if zv == 0.0 {
                continue;
            }
            let row = &params[off + dd * k..off + (dd + 1) * k];
            for (sk, &w) in s.iter_mut().zip(row) {
                *sk += w * zv;
            }
        }
        s
    }

    /// Mean cross-entropy (+ optional smoothing) over a batch plus the ETF
    /// penalty on the head; returns (ce, etf, grad over all params).
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        batch: &[(&[f64], usize)],
        etf_weight: f64,
        label_smoothing: f64,
    ) -> Result<(f64, f64, Vec<f64>)> {
        let k = self.classes;
        let b = batch.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let head_off = self.head_offset();
        let mut ce = 0.0;
        for &(features, label) in batch {
            let (z, cache) = self.forward_cached(params, features);
            let s = self.head_logits(params, &z);
            let p = softmax(&s)?;
            // smoothed target
            let alpha = label_smoothing;
            let mut dl_ds = vec![0.0; k];
            for c in 0..k {
                let target = if c == label { 1.0 - alpha + alpha / k as f64 } else { alpha / k as f64 };
                ce -= target * p[c].max(1e-300).ln() / b;
                dl_ds[c] = (p[c] - target) / b;
            }
            // head grads + embedding grad
            let mut dz = vec![0.0; z.len()];
            for (dd, &zv) in z.iter().enumerate() {
                let row = head_off + dd * k;
                for c in 0..k {
                    grad[row + c] += dl_ds[c] * zv;
                    dz[dd] += dl_ds[c] * params[row + c];
                }
            }
            self.backward(params, &cache, &dz, &mut grad);
        }

        let mut etf = 0.0;
        if etf_weight > 0.0 {
            let w = self.head_matrix(params);
            let (loss, etf_grad) = etf_loss_and_grad(&w)?;
            etf = loss;
            for dd in 0..self.embed_dim() {
                for c in 0..k {
                    grad[head_off + dd * k + c] += etf_weight * etf_grad.get(dd, c);
                }
            }
        }
        if !ce.is_finite() || !etf.is_finite() {
            return Err(Error::NanLoss {
                context: "tpn loss".into(),
            });
        }
        Ok((ce, etf, grad))
    }

    pub fn head_matrix(&self, params: &[f64]) -> Matrix {
        let d = self.embed_dim();
        let k = self.classes;
        let off = self.head_offset();
        Matrix::from_vec(d, k, params[off..off + d * k].to_vec())
            .expect("head params are finite")
    }
}

// ---------------------------------------------------------------------------
// ETF geometry
// ---------------------------------------------------------------------------

/// Simplex target gram matrix: (K/(K-1)) I - (1/(K-1)) 11^T.
pub fn etf_target(k: usize) -> Result<Matrix> {
    if k < 2 {
        return Err(Error::InvalidConfig("ETF target needs K >= 2".into()));
    }
    let kf = k as f64;
    let diag = 1.0; // K/(K-1) - 1/(K-1)
    let off = -1.0 / (kf - 1.0);
    let mut t = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            t.set(i, j, if i == j { diag } else { off });
        }
    }
    Ok(t)
}

/// Frobenius penalty ||G - T||_F^2 on the gram of the column-normalized
/// head, with the analytic gradient through the normalization.
pub fn etf_loss_and_grad(w: &Matrix) -> Result<(f64, Matrix)> {
    let d = w.rows();
    let k = w.cols();
    let target = etf_target(k)?;

    // Column norms and normalized copy.
    let mut norms = vec![0.0; k];
    for c in 0..k {
        let mut nn = 0.0;
        for r in 0..d {
            nn += w.get(r, c) * w.get(r, c);
        }
        let n = nn.sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm("etf head column"));
        }
        norms[c] = n;
    }
    let mut wn = Matrix::zeros(d, k);
    for r in 0..d {
        for c in 0..k {
            wn.set(r, c, w.get(r, c) / norms[c]);
        }
    }
    // Gram and residual.
    let gram = wn.transpose().matmul(&wn);
    let mut resid = gram.clone();
    resid.add_scaled(&target, -1.0);
    let loss = resid.frobenius_norm_sq();

    // dL/dWn = 4 Wn E (E symmetric).
    let mut g_wn = wn.matmul(&resid);
    g_wn.scale_in_place(4.0);

    // Through column normalization: g_k = (I - wn_k wn_k^T) g_wn_k / norm_k.
    let mut grad = Matrix::zeros(d, k);
    for c in 0..k {
        let mut proj = 0.0;
        for r in 0..d {
            proj += wn.get(r, c) * g_wn.get(r, c);
        }
        for r in 0..d {
            grad.set(r, c, (g_wn.get(r, c) - proj * wn.get(r, c)) / norms[c]);
        }
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Trained model
// ---------------------------------------------------------------------------

/// Frozen task-prior network.
#[derive(Debug, Clone)]
pub struct TpnModel {
    net: TpnNet,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpnEpochLog {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_etf: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TpnTrainLog {
    pub epochs: Vec<TpnEpochLog>,
    pub warnings: Vec<String>,
}

impl TpnModel {
    pub fn net(&self) -> &TpnNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.net.embed_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.classes
    }

    /// Encoder embedding for one sample.
    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.net.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "tpn encode",
                expected: self.net.feature_dim(),
                got: features.len(),
            });
        }
        Ok(self.net.forward_cached(&self.params, features).0)
    }

    /// Head logits for one sample (unnormalized).
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let z = self.encode(features)?;
        Ok(self.net.head_logits(&self.params, &z))
    }

    pub fn head_matrix(&self) -> Matrix {
        self.net.head_matrix(&self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BinWriter::new(BufWriter::new(file));
        w.magic(TPN_MAGIC, TPN_VERSION)?;
        let arch_json = serde_json::to_string(&self.net.arch)?;
        w.str(&arch_json)?;
        w.u32(self.net.channels as u32)?;
        w.u32(self.net.time_points as u32)?;
        w.u32(self.net.classes as u32)?;
        w.u64(self.params.len() as u64)?;
        w.f64_slice(&self.params)?;
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TpnModel> {
        let file = File::open(path)?;
        let mut r = BinReader::new(BufReader::new(file));
        r.expect_magic(TPN_MAGIC, TPN_VERSION)?;
        let arch: TpnArch = serde_json::from_str(&r.str("arch")?)?;
        let channels = r.u32("channels")? as usize;
        let time_points = r.u32("time_points")? as usize;
        let classes = r.u32("classes")? as usize;
        let net = TpnNet::new(arch, channels, time_points, classes)?;
        let n = r.u64("param_count")? as usize;
        if n != net.param_count() {
            return Err(Error::MalformedHeader(format!(
                "parameter blob holds {n} values, architecture needs {}",
                net.param_count()
            )));
        }
        let params = r.f64_vec(n, "params")?;
        Ok(TpnModel { net, params })
    }
}

/// Per-sample prior prediction: unnormalized logits and the argmax label
/// (ties broken toward the lowest class index).
pub fn prior_predict(model: &TpnModel, features: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut logits = Vec::with_capacity(features.len());
    let mut labels = Vec::with_capacity(features.len());
    for f in features {
        let s = model.logits(f)?;
        labels.push(crate::fusion::argmax_lowest(&s));
        logits.push(s);
    }
    Ok((logits, labels))
}

/// Train the task-prior network on the labeled split with mini-batch
/// descent. Deterministic under (config, data).
pub fn train_tpn(
    labeled: &[(Vec<f64>, usize)],
    arch: TpnArch,
    channels: usize,
    time_points: usize,
    classes: usize,
    cfg: &TpnTrainConfig,
) -> Result<(TpnModel, TpnTrainLog)> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("train_tpn labeled split"));
    }
    let net = TpnNet::new(arch, channels, time_points, classes)?;
    let mut log = TpnTrainLog::default();
    let mut class_counts = vec![0usize; classes];
    for (_, l) in labeled {
        class_counts[*l] += 1;
    }
    for (c, &n) in class_counts.iter().enumerate() {
        if n == 0 {
            log.warnings
                .push(format!("class {c} absent from labeled split"));
        }
    }

    let root = RngStream::new(cfg.seed);
    let mut params = net.init_params(&mut root.substream("tpn-init"));
    let mut shuffle_rng = root.substream("tpn-shuffle");

    let etf_weight = if classes >= 3 || cfg.etf_for_binary {
        cfg.etf_weight
    } else {
        0.0
    };

    let mut adam_m = vec![0.0; params.len()];
    let mut adam_v = vec![0.0; params.len()];
    let mut adam_t = 0usize;

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut ce_sum = 0.0;
        let mut etf_sum = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (labeled[i].0.as_slice(), labeled[i].1))
                .collect();
            let (ce, etf, grad) =
                net.loss_and_grad(&params, &batch, etf_weight, cfg.label_smoothing)?;
            let total = ce + etf_weight * etf;
            if !total.is_finite() {
                return Err(Error::NanLoss {
                    context: format!("tpn epoch {epoch}"),
                });
            }
            ce_sum += ce;
            etf_sum += etf;
            batches += 1.0;
            match cfg.optimizer {
                Optimizer::Gd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
                    }
                }
                Optimizer::AdamW => {
                    adam_t += 1;
                    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                    let bc1 = 1.0 - b1.powi(adam_t as i32);
                    let bc2 = 1.0 - b2.powi(adam_t as i32);
                    for i in 0..params.len() {
                        adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
                        adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
                        let mh = adam_m[i] / bc1;
                        let vh = adam_v[i] / bc2;
                        params[i] -= cfg.learning_rate
                            * (mh / (vh.sqrt() + 1e-8) + cfg.weight_decay * params[i]);
                    }
                }
            }
        }
        // Train accuracy for the log.
        let mut hits = 0usize;
        for (f, l) in labeled {
            let (z, _) = net.forward_cached(&params, f);
            let s = net.head_logits(&params, &z);
            if crate::fusion::argmax_lowest(&s) == *l {
                hits += 1;
            }
        }
        log.epochs.push(TpnEpochLog {
            epoch,
            loss_ce: ce_sum / batches,
            loss_etf: etf_sum / batches,
            train_accuracy: hits as f64 / labeled.len() as f64,
        });
    }
    Ok((TpnModel { net, params }, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, max_relative_error};

    fn toy_net(encoder: EncoderKind) -> TpnNet {
        let arch = TpnArch {
            encoder,
            temporal_filters: 2,
            temporal_kernel: 3,
            depth_multiplier: 2,
            separable_kernel: 3,
            pointwise_filters: 3,
            pool1: 2,
            pool2: 2,
            mlp_hidden: 6,
            mlp_embed: 5,
        };
        TpnNet::new(arch, 3, 8, 3).unwrap()
    }

    #[test]
    fn etf_target_values() {
        let t = etf_target(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { -0.5 };
                assert!((t.get(i, j) - expect).abs() < 1e-15);
            }
        }
        let t2 = etf_target(2).unwrap();
        assert_eq!(
            t2.data(),
            &[1.0, -1.0, -1.0, 1.0]
        );
        for k in 2..8 {
            let t = etf_target(k).unwrap();
            for r in 0..k {
                let sum: f64 = (0..k).map(|c| t.get(r, c)).sum();
                assert!(sum.abs() < 1e-12, "row sum {sum} at K={k}");
            }
        }
        assert!(etf_target(1).is_err());
    }

    #[test]
    fn etf_loss_zero_at_exact_frame() {
        // K=3 simplex in d=2: three unit vectors at 120 degrees.
        let ang = [0.0f64, 2.0 * std::f64::consts::PI / 3.0, 4.0 * std::f64::consts::PI / 3.0];
        let mut w = Matrix::zeros(2, 3);
        for (c, a) in ang.iter().enumerate() {
            w.set(0, c, a.cos());
            w.set(1, c, a.sin());
        }
        let (loss, grad) = etf_loss_and_grad(&w).unwrap();
        assert!(loss < 1e-24);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-11));
    }

    #[test]
    fn etf_loss_hand_value_identity() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, _) = etf_loss_and_grad(&w).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn etf_grad_matches_finite_differences() {
        let mut rng = RngStream::new(77);
        for trial in 0..20 {
            let (d, k) = (4 + trial % 3, 3 + trial % 2);
            let data: Vec<f64> = (0..d * k).map(|_| rng.normal()).collect();
            let w = Matrix::from_vec(d, k, data.clone()).unwrap();
            let (_, grad) = etf_loss_and_grad(&w).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let wm = Matrix::from_vec(d, k, p.to_vec()).unwrap();
                    etf_loss_and_grad(&wm).unwrap().0
                },
                &data,
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(grad.data(), &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn etf_zero_column_errors() {
        let w = Matrix::from_vec(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(etf_loss_and_grad(&w), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn ce_gradient_matches_finite_differences_conv() {
        let net = toy_net(EncoderKind::Conv);
        let mut rng = RngStream::new(5);
        let params = net.init_params(&mut rng);
        let batch_data: Vec<(Vec<f64>, usize)> = (0..3)
            .map(|i| ((0..net.feature_dim()).map(|_| rng.normal()).collect(), i % 3))
            .collect();
        let batch: Vec<(&[f64], usize)> =
            batch_data.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
        let (_, _, grad) = net.loss_and_grad(&params, &batch, 0.0, 0.0).unwrap();
        let fd = finite_diff_grad(
            |p| {
                let (ce, _, _) = net.loss_and_grad(p, &batch, 0.0, 0.0).unwrap();
                ce
            },
            &params,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&grad, &fd);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn ce_gradient_matches_finite_differences_mlp() {
        let net = toy_net(EncoderKind::Mlp);
        let mut rng = RngStream::new(6);
        let params = net.init_params(&mut rng);
        let batch_data: Vec<(Vec<f64>, usize)> = (0..3)
            .map(|i| ((0..net.feature_dim()).map(|_| rng.normal()).collect(), i % 3))
            .collect();
        let batch: Vec<(&[f64], usize)> =
            batch_data.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
        // Include the ETF term and label smoothing so their gradients are
        // exercised through the same check.
        let (_, _, grad) = net.loss_and_grad(&params, &batch, 0.1, 0.05).unwrap();
        let fd = finite_diff_grad(
            |p| {
                let (ce, etf, _) = net.loss_and_grad(p, &batch, 0.1, 0.05).unwrap();
                ce + 0.1 * etf
            },
            &params,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&grad, &fd);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn zero_input_zero_params_gives_zero_embedding_mlp() {
        let net = toy_net(EncoderKind::Mlp);
        let params = vec![0.0; net.param_count()];
        let x = vec![0.0; net.feature_dim()];
        let (z, _) = net.forward_cached(&params, &x);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_is_deterministic_and_shape_checked() {
        let net = toy_net(EncoderKind::Conv);
        let mut rng = RngStream::new(8);
        let params = net.init_params(&mut rng);
        let model = TpnModel {
            net: net.clone(),
            params,
        };
        let x: Vec<f64> = (0..net.feature_dim()).map(|_| rng.normal()).collect();
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), net.embed_dim());
        // toy: F2=3 filters, T=8 -> T1=4 -> T2=2, so d = 6
        assert_eq!(net.embed_dim(), 6);
        assert!(model.encode(&x[1..]).is_err());
    }

    #[test]
    fn prior_predict_tie_break_and_scaling() {
        let net = toy_net(EncoderKind::Mlp);
        let params = vec![0.0; net.param_count()];
        let model = TpnModel {
            net,
            params,
        };
        let x = vec![0.0; model.net.feature_dim()];
        let (logits, labels) = prior_predict(&model, &[x]).unwrap();
        assert!(logits[0].iter().all(|v| *v == 0.0));
        assert_eq!(labels[0], 0, "ties break toward class 0");

        // Argmax invariant under positive scaling.
        let s = vec![0.3, 1.2, -0.5];
        let scaled: Vec<f64> = s.iter().map(|v| v * 17.0).collect();
        assert_eq!(
            crate::fusion::argmax_lowest(&s),
            crate::fusion::argmax_lowest(&scaled)
        );
    }

    #[test]
    fn batch_prediction_equals_per_sample() {
        let net = toy_net(EncoderKind::Conv);
        let mut rng = RngStream::new(4);
        let params = net.init_params(&mut rng);
        let model = TpnModel {
            net,
            params,
        };
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..model.net.feature_dim()).map(|_| rng.normal()).collect())
            .collect();
        let (batch_logits, _) = prior_predict(&model, &xs).unwrap();
        for (x, expect) in xs.iter().zip(&batch_logits) {
            assert_eq!(&model.logits(x).unwrap(), expect);
        }
    }

    fn separable_toy(seed: u64, n_per_class: usize, k: usize, dim: usize) -> Vec<(Vec<f64>, usize)> {
        let mut rng = RngStream::new(seed);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| 3.0 * rng.normal()).collect())
            .collect();
        let mut data = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                let f: Vec<f64> = center.iter().map(|&m| m + 0.1 * rng.normal()).collect();
                data.push((f, c));
            }
        }
        data
    }

    #[test]
    fn training_fits_separable_toy() {
        let data = separable_toy(3, 20, 3, 24);
        let cfg = TpnTrainConfig {
            epochs: 30,
            ..TpnTrainConfig::default()
        };
        let arch = TpnArch::default();
        let (model, log) = train_tpn(&data, arch, 3, 8, 3, &cfg).unwrap();
        let final_acc = log.epochs.last().unwrap().train_accuracy;
        assert!(final_acc >= 0.95, "train accuracy {final_acc}");
        assert_eq!(model.classes(), 3);
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_toy(3, 10, 3, 24);
        let cfg = TpnTrainConfig {
            epochs: 5,
            ..TpnTrainConfig::default()
        };
        let (a, _) = train_tpn(&data, TpnArch::default(), 3, 8, 3, &cfg).unwrap();
        let (b, _) = train_tpn(&data, TpnArch::default(), 3, 8, 3, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn training_logs_absent_class_warning() {
        let mut data = separable_toy(3, 10, 3, 24);
        data.retain(|(_, l)| *l != 2);
        let cfg = TpnTrainConfig {
            epochs: 2,
            ..TpnTrainConfig::default()
        };
        let (_, log) = train_tpn(&data, TpnArch::default(), 3, 8, 3, &cfg).unwrap();
        assert!(log.warnings.iter().any(|w| w.contains("class 2")));
    }

    #[test]
    fn trained_head_approaches_equal_angles() {
        // With the geometric penalty on, pairwise cosines of the
        // normalized head columns settle near -1/(K-1).
        let k = 5;
        let data = separable_toy(9, 16, k, 24);
        let arch = TpnArch {
            encoder: EncoderKind::Mlp,
            mlp_hidden: 24,
            mlp_embed: 16,
            ..TpnArch::default()
        };
        let cfg = TpnTrainConfig {
            epochs: 120,
            learning_rate: 0.08,
            etf_weight: 0.1,
            ..TpnTrainConfig::default()
        };
        let (model, _) = train_tpn(&data, arch, 3, 8, k, &cfg).unwrap();
        let w = model.head_matrix();
        let target = -1.0 / (k as f64 - 1.0);
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in (a + 1)..k {
                let ca = w.column(a);
                let cb = w.column(b);
                let cos = crate::numeric::cosine_similarity(&ca, &cb).unwrap();
                worst = worst.max((cos - target).abs());
            }
        }
        assert!(worst < 0.05, "max deviation from equal angles: {worst}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let data = separable_toy(3, 6, 3, 24);
        let cfg = TpnTrainConfig {
            epochs: 2,
            ..TpnTrainConfig::default()
        };
        let (model, _) = train_tpn(&data, TpnArch::default(), 3, 8, 3, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tpn.bin");
        model.save(&path).unwrap();
        let back = TpnModel::load(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.net(), model.net());
    }
}
