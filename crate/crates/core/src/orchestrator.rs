//! Pipeline driver: stage-I supervision construction, stage-II adapter
//! training with warm-up and cyclic pseudo-sampling, ablation switches,
//! model selection, and the multi-seed experiment matrix.
//!
//! All randomness fans out from a single run seed through named
//! substreams, so two runs with the same config and seed produce
//! identical artifacts, and ablation variants differ only where the flag
//! says they should.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{build_pseudo_manifest, PseudoRecord};
use crate::metrics::{auprc, auroc, cohen_kappa, weighted_f1, ConfusionMatrix, ScoredPredictions};
use crate::numeric::{softmax, Matrix, RngStream};
use crate::proadapter::{
    backward_from_cache, forward_from_lower, trainable_fraction, AdapterConfig, AdapterStack,
    BackboneConfig, FrozenBackbone,
};
use crate::prototypes::{
    init_prototypes_kmeans, proto_predict, refine_prototypes, PrototypeBank, PrototypeInitConfig,
    RefineConfig, RefineLog,
};
use crate::synthdata::{generate_cohort, read_cohort, Cohort, CohortConfig, Sample};
use crate::tpn::{
    prior_predict, train_tpn, Optimizer, TpnArch, TpnModel, TpnTrainConfig, TpnTrainLog,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Load an existing cohort file instead of generating one.
    pub cohort_path: Option<String>,
    pub generate: CohortConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TpnSection {
    pub arch: TpnArch,
    pub train: TpnTrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrototypeSection {
    /// Prototypes per class (M).
    pub per_class: usize,
    /// Assignment temperature.
    pub epsilon: f64,
    pub init: PrototypeInitConfig,
    pub refine: RefineConfig,
}

impl Default for PrototypeSection {
    fn default() -> Self {
        PrototypeSection {
            per_class: 3,
            epsilon: 0.05,
            init: PrototypeInitConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    /// Selection threshold rho: a sample is kept when predictions agree
    /// and confidence strictly exceeds it.
    pub confidence_threshold: f64,
    /// Divides prototype class scores before softmax normalization.
    pub proto_temperature: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            confidence_threshold: 0.5,
            proto_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Each labeled batch is followed by its paired pseudo batch in one
    /// combined step (default).
    Interleaved,
    /// Within each epoch all labeled steps run before all pseudo steps.
    Sequential,
    /// All supervised epochs first, then pseudo-only epochs.
    TwoStage,
    /// Interleaved with the warm-up disabled.
    NoWarmup,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Section {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Pseudo samples drawn per labeled batch: floor(ratio * batch).
    pub pseudo_ratio: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub strategy: Strategy,
}

impl Default for Stage2Section {
    fn default() -> Self {
        Stage2Section {
            warmup_epochs: 10,
            total_epochs: 30,
            batch_size: 16,
            pseudo_ratio: 2.0,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            optimizer: Optimizer::AdamW,
            strategy: Strategy::Interleaved,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// Drop the head-geometry penalty in stage I.
    pub etf_off: bool,
    /// Replace balanced assignment targets with plain row softmax.
    pub sinkhorn_off: bool,
    /// Train pseudo samples with unit weight instead of confidence.
    pub confidence_weights_off: bool,
    /// Feed the uniform vector to every modulation call.
    pub prototype_conditioning_off: bool,
    /// Remove the adapters entirely (head-only training).
    pub adapter_off: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Seeds for the experiment matrix.
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScopeConfig {
    pub data: DataSection,
    pub tpn: TpnSection,
    pub prototypes: PrototypeSection,
    pub fusion: FusionSection,
    pub backbone: BackboneConfig,
    pub adapter: AdapterConfig,
    pub stage2: Stage2Section,
    pub ablations: AblationSection,
    pub run: RunSection,
}

impl ScopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage2.warmup_epochs > self.stage2.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.stage2.warmup_epochs, self.stage2.total_epochs
            )));
        }
        if self.stage2.pseudo_ratio <= 0.0 {
            return Err(Error::InvalidConfig("pseudo_ratio must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.fusion.confidence_threshold) {
            return Err(Error::InvalidConfig(
                "confidence_threshold must lie in [0, 1)".into(),
            ));
        }
        if self.prototypes.per_class == 0 {
            return Err(Error::InvalidConfig("prototypes per_class must be positive".into()));
        }
        Ok(())
    }

    /// Parse TOML text, apply dotted-path overrides, and deserialize with
    /// unknown keys rejected by name.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<ScopeConfig> {
        let mut value: toml_shim::Value = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        for (key, raw) in overrides {
            toml_shim::apply_override(&mut value, key, raw)?;
        }
        let cfg: ScopeConfig = value
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml_shim::to_string(self).map_err(|e| Error::InvalidConfig(format!("config render: {e}")))
    }
}

/// Thin indirection over the `toml` crate so the dependency stays in one
/// place.
mod toml_shim {
    pub use toml::Value;

    use crate::error::{Error, Result};

    pub fn to_string<T: serde::Serialize>(v: &T) -> std::result::Result<String, toml::ser::Error> {
        toml::to_string_pretty(v)
    }

    /// Set `dotted.path = value` inside a TOML tree, creating intermediate
    /// tables. Scalars are parsed as bool, integer, float, then string;
    /// comma-separated values become arrays.
    pub fn apply_override(root: &mut Value, dotted: &str, raw: &str) -> Result<()> {
        let parts: Vec<&str> = dotted.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidConfig(format!("bad override key '{dotted}'")));
        }
        let mut node = root;
        for part in &parts[..parts.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override '{dotted}': '{part}' is not a table"))
            })?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Default::default()));
        }
        let table = node.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override '{dotted}': parent is not a table"))
        })?;
        table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
        Ok(())
    }

    fn parse_scalar(raw: &str) -> Value {
        if raw.contains(',') {
            return Value::Array(raw.split(',').map(|p| parse_scalar(p.trim())).collect());
        }
        if let Ok(b) = raw.parse::<bool>() {
            return Value::Boolean(b);
        }
        if let Ok(i) = raw.parse::<i64>() {
            return Value::Integer(i);
        }
        if let Ok(f) = raw.parse::<f64>() {
            return Value::Float(f);
        }
        Value::String(raw.to_string())
    }
}

// ---------------------------------------------------------------------------
// Stage I
// ---------------------------------------------------------------------------

pub struct Stage1Artifacts {
    pub tpn: TpnModel,
    pub bank: PrototypeBank,
    pub manifest: Vec<PseudoRecord>,
    pub tpn_log: TpnTrainLog,
    pub refine_log: RefineLog,
    pub warnings: Vec<String>,
}

/// Load the cohort named by the config, or generate it.
pub fn obtain_cohort(cfg: &ScopeConfig) -> Result<Cohort> {
    match &cfg.data.cohort_path {
        Some(path) => read_cohort(std::path::Path::new(path)),
        None => generate_cohort(&cfg.data.generate),
    }
}

/// Train the task-prior network on the labeled split only.
pub fn stage1_train_tpn(
    cfg: &ScopeConfig,
    cohort: &Cohort,
    seed: u64,
) -> Result<(TpnModel, TpnTrainLog)> {
    let labeled: Vec<(Vec<f64>, usize)> = cohort
        .labeled()
        .iter()
        .map(|s| (s.features.clone(), s.label))
        .collect();
    let mut tpn_cfg = cfg.tpn.train.clone();
    tpn_cfg.seed = RngStream::new(seed).substream("tpn").seed();
    if cfg.ablations.etf_off {
        tpn_cfg.etf_weight = 0.0;
    }
    train_tpn(
        &labeled,
        cfg.tpn.arch.clone(),
        cohort.channels(),
        cohort.time_points(),
        cohort.classes(),
        &tpn_cfg,
    )
    .map_err(|e| e.in_stage("stage1: task-prior training"))
}

/// Cluster and refine the prototype bank over frozen embeddings.
/// Initialization uses unlabeled embeddings grouped by prior labels; with
/// no unlabeled data it falls back to labeled embeddings grouped by true
/// labels so stage II still has a conditioning source.
pub fn stage1_build_bank(
    cfg: &ScopeConfig,
    cohort: &Cohort,
    tpn: &TpnModel,
    seed: u64,
) -> Result<(PrototypeBank, RefineLog, Vec<String>)> {
    let root = RngStream::new(seed);
    let mut warnings = Vec::new();
    let labeled_embeddings: Vec<Vec<f64>> = cohort
        .labeled()
        .iter()
        .map(|s| tpn.encode(&s.features))
        .collect::<Result<_>>()?;
    let labeled_labels: Vec<usize> = cohort.labeled().iter().map(|s| s.label).collect();
    let mut init_rng = root.substream("proto-init");
    let (bank0, init_warnings) = if cohort.unlabeled().is_empty() {
        warnings.push("unlabeled split empty: prototypes initialized from labeled embeddings".into());
        init_prototypes_kmeans(
            &labeled_embeddings,
            &labeled_labels,
            cohort.classes(),
            cfg.prototypes.per_class,
            cfg.prototypes.epsilon,
            &cfg.prototypes.init,
            &mut init_rng,
        )
    } else {
        let unlabeled_features: Vec<Vec<f64>> = cohort
            .unlabeled()
            .iter()
            .map(|s| s.features.clone())
            .collect();
        let (_, prior_labels) = prior_predict(tpn, &unlabeled_features)?;
        let unlabeled_embeddings: Vec<Vec<f64>> = unlabeled_features
            .iter()
            .map(|f| tpn.encode(f))
            .collect::<Result<_>>()?;
        init_prototypes_kmeans(
            &unlabeled_embeddings,
            &prior_labels,
            cohort.classes(),
            cfg.prototypes.per_class,
            cfg.prototypes.epsilon,
            &cfg.prototypes.init,
            &mut init_rng,
        )
    }
    .map_err(|e| e.in_stage("stage1: prototype init"))?;
    warnings.extend(init_warnings);

    let mut refine_cfg = cfg.prototypes.refine.clone();
    refine_cfg.seed = root.substream("proto-refine").seed();
    refine_cfg.balanced_targets = !cfg.ablations.sinkhorn_off;
    let (bank, refine_log) =
        refine_prototypes(&bank0, &labeled_embeddings, &labeled_labels, &refine_cfg)
            .map_err(|e| e.in_stage("stage1: prototype refinement"))?;
    Ok((bank, refine_log, warnings))
}

/// Build the frozen pseudo-label manifest over the stripped unlabeled
/// view.
pub fn stage1_manifest(
    cfg: &ScopeConfig,
    cohort: &Cohort,
    tpn: &TpnModel,
    bank: &PrototypeBank,
) -> Result<Vec<PseudoRecord>> {
    let unlabeled_features: Vec<Vec<f64>> = cohort
        .unlabeled()
        .iter()
        .map(|s| s.features.clone())
        .collect();
    let (prior_logits, _) = prior_predict(tpn, &unlabeled_features)
        .map_err(|e| e.in_stage("stage1: prior prediction"))?;
    let mut proto_labels = Vec::with_capacity(unlabeled_features.len());
    let mut proto_scores = Vec::with_capacity(unlabeled_features.len());
    for f in &unlabeled_features {
        let z = tpn.encode(f)?;
        let (label, class_scores, _) =
            proto_predict(&z, bank).map_err(|e| e.in_stage("stage1: prototype prediction"))?;
        proto_labels.push(label);
        proto_scores.push(class_scores);
    }
    build_pseudo_manifest(
        &prior_logits,
        &proto_scores,
        &proto_labels,
        cfg.fusion.confidence_threshold,
        cfg.fusion.proto_temperature,
    )
    .map_err(|e| e.in_stage("stage1: fusion"))
}

/// Train the task-prior network on the labeled split, cluster and refine
/// the prototype bank, and freeze the pseudo-label manifest. Touches only
/// the labeled split and the label-stripped unlabeled view.
pub fn run_stage1(cfg: &ScopeConfig, cohort: &Cohort, seed: u64) -> Result<Stage1Artifacts> {
    let (tpn, tpn_log) = stage1_train_tpn(cfg, cohort, seed)?;
    let (bank, refine_log, warnings) = stage1_build_bank(cfg, cohort, &tpn, seed)?;
    let manifest = stage1_manifest(cfg, cohort, &tpn, &bank)?;
    Ok(Stage1Artifacts {
        tpn,
        bank,
        manifest,
        tpn_log,
        refine_log,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Stage II
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_pseudo: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TestMetrics {
    pub kappa: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ManifestSummary {
    pub total_unlabeled: usize,
    pub agreement_rate: f64,
    pub coverage: f64,
    pub selected: usize,
    pub mean_confidence: f64,
}

impl ManifestSummary {
    pub fn from_manifest(manifest: &[PseudoRecord]) -> ManifestSummary {
        let n = manifest.len();
        if n == 0 {
            return ManifestSummary::default();
        }
        let agree = manifest.iter().filter(|r| r.agree).count();
        let selected = manifest.iter().filter(|r| r.selected).count();
        let mean_confidence = manifest.iter().map(|r| r.confidence).sum::<f64>() / n as f64;
        ManifestSummary {
            total_unlabeled: n,
            agreement_rate: agree as f64 / n as f64,
            coverage: selected as f64 / n as f64,
            selected,
            mean_confidence,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub variant: String,
    pub epochs: Vec<EpochReport>,
    pub selection_metric: String,
    pub selected_epoch: usize,
    pub best_val_metric: f64,
    pub test: TestMetrics,
    pub manifest: ManifestSummary,
    /// Kappa of the selected pseudo-labels against the evaluation-only
    /// true labels; filled post-training when those labels are available.
    pub selected_quality_kappa: Option<f64>,
    pub trainable_fraction: f64,
    pub backbone_digest: String,
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub warnings: Vec<String>,
}

/// Cyclic pseudo-sample iterator: covers every index exactly once per
/// cycle, reshuffling at each wrap.
struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
    rng: RngStream,
}

impl CyclicSampler {
    fn new(n: usize, mut rng: RngStream) -> CyclicSampler {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        CyclicSampler { order, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let v = self.order[self.pos];
        self.pos += 1;
        v
    }
}

/// One training item with its conditioning vector and loss weight.
struct TrainItem {
    lower: Matrix,
    cond: Vec<f64>,
    label: usize,
    weight: f64,
}

struct EvalItem {
    lower: Matrix,
    cond: Vec<f64>,
    label: usize,
}

struct Evaluator<'a> {
    backbone: &'a FrozenBackbone,
    tpn: &'a TpnModel,
    bank: &'a PrototypeBank,
    uniform_cond: bool,
    classes: usize,
}

impl<'a> Evaluator<'a> {
    fn cond(&self, features: &[f64]) -> Result<Vec<f64>> {
        if self.uniform_cond {
            return Ok(vec![1.0 / self.classes as f64; self.classes]);
        }
        let z = self.tpn.encode(features)?;
        let (_, class_scores, _) = proto_predict(&z, self.bank)?;
        Ok(class_scores)
    }

    /// Frozen-prefix features and conditioning for a split, computed once
    /// so per-epoch evaluation only runs the adapted suffix.
    fn eval_cache(&self, stack: &AdapterStack, split: &[Sample]) -> Result<Vec<EvalItem>> {
        let lower_depth = self.backbone.depth() - stack.cfg.depth;
        split
            .iter()
            .map(|s| {
                Ok(EvalItem {
                    lower: self.backbone.forward_to(&s.features, lower_depth)?,
                    cond: self.cond(&s.features)?,
                    label: s.label,
                })
            })
            .collect()
    }

    fn metrics_from_cache(&self, stack: &AdapterStack, items: &[EvalItem]) -> Result<TestMetrics> {
        let k = self.classes;
        let mut cm = ConfusionMatrix::new(k);
        let mut scores = Vec::with_capacity(items.len());
        let mut labels = Vec::with_capacity(items.len());
        for item in items {
            let cache =
                forward_from_lower(self.backbone, stack, stack.params(), &item.lower, &item.cond)?;
            let probs = softmax(&cache.logits)?;
            cm.record(item.label, crate::fusion::argmax_lowest(&cache.logits));
            if k == 2 {
                scores.push(probs[1]);
                labels.push(item.label == 1);
            }
        }
        let (roc, prc) = if k == 2 {
            let sp = ScoredPredictions::new(scores, labels)?;
            (auroc(&sp).ok(), auprc(&sp).ok())
        } else {
            (None, None)
        };
        Ok(TestMetrics {
            kappa: cohen_kappa(&cm).unwrap_or(0.0),
            weighted_f1: weighted_f1(&cm).unwrap_or(0.0),
            accuracy: cm.accuracy(),
            auroc: roc,
            auprc: prc,
        })
    }

    fn metrics(&self, stack: &AdapterStack, split: &[Sample]) -> Result<TestMetrics> {
        let items = self.eval_cache(stack, split)?;
        self.metrics_from_cache(stack, &items)
    }
}

fn selection_metric(k: usize, m: &TestMetrics) -> f64 {
    if k == 2 {
        m.auroc.unwrap_or(0.5)
    } else {
        m.kappa
    }
}

/// Score an adapted model on a split, conditioning each sample through
/// the frozen stage-I artifacts (or the uniform vector when conditioning
/// is ablated).
pub fn evaluate_adapted(
    backbone: &FrozenBackbone,
    stack: &AdapterStack,
    tpn: &TpnModel,
    bank: &PrototypeBank,
    uniform_cond: bool,
    split: &[Sample],
) -> Result<TestMetrics> {
    let evaluator = Evaluator {
        backbone,
        tpn,
        bank,
        uniform_cond,
        classes: stack.classes(),
    };
    evaluator.metrics(stack, split)
}

/// Adapter + head training over the frozen backbone using stage-I
/// supervision. Returns the report plus the trained model for
/// checkpointing.
pub fn run_stage2(
    cfg: &ScopeConfig,
    cohort: &Cohort,
    artifacts: &Stage1Artifacts,
    seed: u64,
) -> Result<(RunReport, FrozenBackbone, AdapterStack)> {
    let root = RngStream::new(seed);
    let k = cohort.classes();
    let mut warnings = Vec::new();

    let mut backbone_cfg = cfg.backbone.clone();
    backbone_cfg.seed = root.substream("backbone").seed();
    let backbone = FrozenBackbone::new(backbone_cfg, cohort.channels(), cohort.time_points())?;
    let digest_before = backbone.digest();

    let mut adapter_cfg = cfg.adapter.clone();
    if cfg.ablations.adapter_off {
        adapter_cfg.depth = 0;
    }
    let mut stack = AdapterStack::new(
        adapter_cfg,
        &backbone,
        k,
        &mut root.substream("adapter-init"),
    )?;
    let frac = trainable_fraction(&backbone, &stack);

    let evaluator = Evaluator {
        backbone: &backbone,
        tpn: &artifacts.tpn,
        bank: &artifacts.bank,
        uniform_cond: cfg.ablations.prototype_conditioning_off,
        classes: k,
    };

    // Training items: frozen-prefix features and static conditioning are
    // computed once per sample.
    let lower_depth = backbone.depth() - stack.cfg.depth;
    let mut labeled_items = Vec::with_capacity(cohort.labeled().len());
    for s in cohort.labeled() {
        labeled_items.push(TrainItem {
            lower: backbone.forward_to(&s.features, lower_depth)?,
            cond: evaluator.cond(&s.features)?,
            label: s.label,
            weight: 1.0,
        });
    }
    let unlabeled = cohort.unlabeled();
    let mut pseudo_items = Vec::new();
    let pseudo_active = !matches!(cfg.stage2.strategy, Strategy::TwoStage)
        || cfg.stage2.warmup_epochs < cfg.stage2.total_epochs;
    if pseudo_active {
        for rec in artifacts.manifest.iter().filter(|r| r.selected) {
            let s = &unlabeled[rec.index];
            pseudo_items.push(TrainItem {
                lower: backbone.forward_to(&s.features, lower_depth)?,
                cond: evaluator.cond(&s.features)?,
                label: rec.label_prior,
                weight: if cfg.ablations.confidence_weights_off {
                    1.0
                } else {
                    rec.confidence
                },
            });
        }
    }
    if pseudo_items.is_empty() {
        warnings.push("selected pseudo subset is empty: training is supervised-only".into());
    }

    let warmup = match cfg.stage2.strategy {
        Strategy::NoWarmup => 0,
        _ => cfg.stage2.warmup_epochs,
    };
    let pseudo_per_batch =
        (cfg.stage2.pseudo_ratio * cfg.stage2.batch_size as f64).floor() as usize;

    let mut shuffle_rng = root.substream("stage2-shuffle");
    let mut sampler = CyclicSampler::new(pseudo_items.len(), root.substream("stage2-pseudo"));

    let mut adam_m = vec![0.0; stack.param_count()];
    let mut adam_v = vec![0.0; stack.param_count()];
    let mut adam_t = 0usize;
    let mut grad = vec![0.0; stack.param_count()];

    let mut order: Vec<usize> = (0..labeled_items.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.stage2.total_epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut val_items: Option<Vec<EvalItem>> = None;
    let t_start = Instant::now();

    for epoch in 0..cfg.stage2.total_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sup_sum = 0.0;
        let mut loss_pseudo_sum = 0.0;
        let mut step_count = 0.0f64;

        // Which data enters this epoch, and in what order.
        let use_pseudo = !pseudo_items.is_empty()
            && match cfg.stage2.strategy {
                Strategy::TwoStage => epoch >= warmup,
                _ => epoch >= warmup,
            };
        let use_labeled = match cfg.stage2.strategy {
            Strategy::TwoStage => epoch < warmup,
            _ => true,
        };

        let step = |batch_sup: &[usize], pseudo_n: usize,
                        stack: &mut AdapterStack,
                        sampler: &mut CyclicSampler,
                        adam_m: &mut [f64],
                        adam_v: &mut [f64],
                        adam_t: &mut usize,
                        grad: &mut [f64]|
         -> Result<(f64, f64)> {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let params = stack.params().to_vec();
            let mut loss_sup = 0.0;
            let mut loss_pseudo = 0.0;
            if !batch_sup.is_empty() {
                let bs = batch_sup.len() as f64;
                for &i in batch_sup {
                    let item = &labeled_items[i];
                    let cache =
                        forward_from_lower(&backbone, stack, &params, &item.lower, &item.cond)?;
                    let probs = softmax(&cache.logits)?;
                    loss_sup -= probs[item.label].max(1e-300).ln() / bs;
                    let mut dlogits: Vec<f64> = probs.iter().map(|p| p / bs).collect();
                    dlogits[item.label] -= 1.0 / bs;
                    backward_from_cache(&backbone, stack, &params, &cache, &item.cond, &dlogits, grad);
                }
            }
            if pseudo_n > 0 {
                let bp = pseudo_n as f64;
                for _ in 0..pseudo_n {
                    let item = &pseudo_items[sampler.next()];
                    let cache =
                        forward_from_lower(&backbone, stack, &params, &item.lower, &item.cond)?;
                    let probs = softmax(&cache.logits)?;
                    loss_pseudo -= item.weight * probs[item.label].max(1e-300).ln() / bp;
                    let scale = item.weight / bp;
                    let mut dlogits: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    dlogits[item.label] -= scale;
                    backward_from_cache(&backbone, stack, &params, &cache, &item.cond, &dlogits, grad);
                }
            }
            let total = loss_sup + loss_pseudo;
            if !total.is_finite() {
                return Err(Error::NanLoss {
                    context: format!("stage2 epoch {epoch}"),
                });
            }
            match cfg.stage2.optimizer {
                Optimizer::Gd => {
                    let p = stack.params_mut();
                    for i in 0..p.len() {
                        p[i] -= cfg.stage2.learning_rate
                            * (grad[i] + cfg.stage2.weight_decay * p[i]);
                    }
                }
                Optimizer::AdamW => {
                    *adam_t += 1;
                    let (b1, b2) = (cfg.tpn.train.adam_beta1, cfg.tpn.train.adam_beta2);
                    let bc1 = 1.0 - b1.powi(*adam_t as i32);
                    let bc2 = 1.0 - b2.powi(*adam_t as i32);
                    let p = stack.params_mut();
                    for i in 0..p.len() {
                        adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
                        adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
                        let mh = adam_m[i] / bc1;
                        let vh = adam_v[i] / bc2;
                        p[i] -= cfg.stage2.learning_rate
                            * (mh / (vh.sqrt() + 1e-8) + cfg.stage2.weight_decay * p[i]);
                    }
                }
            }
            Ok((loss_sup, loss_pseudo))
        };

        match cfg.stage2.strategy {
            Strategy::Interleaved | Strategy::NoWarmup => {
                for chunk in order.chunks(cfg.stage2.batch_size.max(1)) {
                    let pn = if use_pseudo { pseudo_per_batch } else { 0 };
                    let (ls, lp) = step(
                        chunk, pn, &mut stack, &mut sampler, &mut adam_m, &mut adam_v,
                        &mut adam_t, &mut grad,
                    )?;
                    loss_sup_sum += ls;
                    loss_pseudo_sum += lp;
                    step_count += 1.0;
                }
            }
            Strategy::Sequential => {
                let mut pseudo_batches = 0usize;
                for chunk in order.chunks(cfg.stage2.batch_size.max(1)) {
                    let (ls, _) = step(
                        chunk, 0, &mut stack, &mut sampler, &mut adam_m, &mut adam_v,
                        &mut adam_t, &mut grad,
                    )?;
                    loss_sup_sum += ls;
                    step_count += 1.0;
                    pseudo_batches += 1;
                }
                if use_pseudo {
                    for _ in 0..pseudo_batches {
                        let (_, lp) = step(
                            &[], pseudo_per_batch, &mut stack, &mut sampler, &mut adam_m,
                            &mut adam_v, &mut adam_t, &mut grad,
                        )?;
                        loss_pseudo_sum += lp;
                        step_count += 1.0;
                    }
                }
            }
            Strategy::TwoStage => {
                if use_labeled {
                    for chunk in order.chunks(cfg.stage2.batch_size.max(1)) {
                        let (ls, _) = step(
                            chunk, 0, &mut stack, &mut sampler, &mut adam_m, &mut adam_v,
                            &mut adam_t, &mut grad,
                        )?;
                        loss_sup_sum += ls;
                        step_count += 1.0;
                    }
                } else if use_pseudo {
                    let batches = order.chunks(cfg.stage2.batch_size.max(1)).count();
                    for _ in 0..batches {
                        let (_, lp) = step(
                            &[], pseudo_per_batch, &mut stack, &mut sampler, &mut adam_m,
                            &mut adam_v, &mut adam_t, &mut grad,
                        )?;
                        loss_pseudo_sum += lp;
                        step_count += 1.0;
                    }
                }
            }
        }

        // Model selection on the validation split (frozen-prefix features
        // cached at the first evaluation point).
        if val_items.is_none() {
            val_items = Some(evaluator.eval_cache(&stack, cohort.validation())?);
        }
        let val_metrics = evaluator.metrics_from_cache(&stack, val_items.as_ref().unwrap())?;
        let val = selection_metric(k, &val_metrics);
        let denom = step_count.max(1.0);
        epochs.push(EpochReport {
            epoch,
            loss_sup: loss_sup_sum / denom,
            loss_pseudo: loss_pseudo_sum / denom,
            val_metric: val,
        });
        let better = best.as_ref().map(|(b, _, _)| val > *b).unwrap_or(true);
        if better {
            best = Some((val, epoch, stack.params().to_vec()));
        }
    }

    let (best_val, selected_epoch, best_params) =
        best.unwrap_or((f64::NEG_INFINITY, 0, stack.params().to_vec()));
    stack.set_params(best_params)?;

    if backbone.digest() != digest_before {
        return Err(Error::InvalidConfig(
            "frozen backbone parameters changed during stage II".into(),
        ));
    }

    let test = evaluator.metrics(&stack, cohort.test())?;
    let report = RunReport {
        seed,
        variant: String::new(),
        epochs,
        selection_metric: if k == 2 { "auroc" } else { "kappa" }.into(),
        selected_epoch,
        best_val_metric: best_val,
        test,
        manifest: ManifestSummary::from_manifest(&artifacts.manifest),
        selected_quality_kappa: None,
        trainable_fraction: frac,
        backbone_digest: format!("{digest_before:016x}"),
        stage1_secs: 0.0,
        stage2_secs: t_start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok((report, backbone, stack))
}

/// Kappa of the selected pseudo-labels against true labels (evaluation
/// use only).
pub fn selected_subset_kappa(
    manifest: &[PseudoRecord],
    true_labels: &[usize],
    k: usize,
) -> Option<f64> {
    let mut cm = ConfusionMatrix::new(k);
    let mut any = false;
    for (rec, &truth) in manifest.iter().zip(true_labels) {
        if rec.selected {
            cm.record(truth, rec.label_prior);
            any = true;
        }
    }
    if any {
        cohen_kappa(&cm).ok()
    } else {
        None
    }
}

/// Full pipeline for one seed over the config's designated cohort: run
/// both stages, then score the frozen manifest against the
/// evaluation-only labels. The cohort is fixed by the data section; run
/// seeds vary initialization, shuffling, and sampling, mirroring a
/// multi-seed protocol over a fixed dataset.
pub fn run_pipeline(cfg: &ScopeConfig, seed: u64) -> Result<(RunReport, Cohort)> {
    let cohort = obtain_cohort(cfg)?;
    let t0 = Instant::now();
    let artifacts = run_stage1(cfg, &cohort, seed)?;
    let stage1_secs = t0.elapsed().as_secs_f64();
    let (mut report, _, _) = run_stage2(cfg, &cohort, &artifacts, seed)?;
    report.stage1_secs = stage1_secs;
    report.selected_quality_kappa = selected_subset_kappa(
        &artifacts.manifest,
        cohort.unlabeled_eval_labels(),
        cohort.classes(),
    );
    Ok((report, cohort))
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

/// Named pipeline variants for comparisons and ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The full method.
    Full,
    /// Frozen backbone, head-only supervised training.
    FrozenHead,
    /// Agreement-only pseudo-labels, unit weights, balancing off.
    NaiveSelfTrain,
    /// Adapters on labeled data only (no pseudo phase).
    SupervisedAdapterOnly,
    EtfOff,
    SinkhornOff,
    ConfidenceWeightsOff,
    PrototypeConditioningOff,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::FrozenHead => "frozen_head",
            Variant::NaiveSelfTrain => "naive_self_train",
            Variant::SupervisedAdapterOnly => "supervised_adapter_only",
            Variant::EtfOff => "etf_off",
            Variant::SinkhornOff => "sinkhorn_off",
            Variant::ConfidenceWeightsOff => "confidence_weights_off",
            Variant::PrototypeConditioningOff => "prototype_conditioning_off",
        }
    }

    pub fn apply(&self, cfg: &mut ScopeConfig) {
        match self {
            Variant::Full => {}
            Variant::FrozenHead => {
                cfg.ablations.adapter_off = true;
                cfg.stage2.warmup_epochs = cfg.stage2.total_epochs;
            }
            Variant::NaiveSelfTrain => {
                cfg.fusion.confidence_threshold = 0.0;
                cfg.ablations.confidence_weights_off = true;
                cfg.ablations.sinkhorn_off = true;
            }
            Variant::SupervisedAdapterOnly => {
                cfg.stage2.warmup_epochs = cfg.stage2.total_epochs;
            }
            Variant::EtfOff => cfg.ablations.etf_off = true,
            Variant::SinkhornOff => cfg.ablations.sinkhorn_off = true,
            Variant::ConfidenceWeightsOff => cfg.ablations.confidence_weights_off = true,
            Variant::PrototypeConditioningOff => {
                cfg.ablations.prototype_conditioning_off = true
            }
        }
    }

    pub const BASELINES: [Variant; 4] = [
        Variant::Full,
        Variant::FrozenHead,
        Variant::NaiveSelfTrain,
        Variant::SupervisedAdapterOnly,
    ];

    pub const ABLATIONS: [Variant; 5] = [
        Variant::Full,
        Variant::EtfOff,
        Variant::SinkhornOff,
        Variant::ConfidenceWeightsOff,
        Variant::PrototypeConditioningOff,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRow {
    pub variant: String,
    pub seed: u64,
    pub kappa: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub coverage: f64,
    /// Kappa of selected pseudo-labels against the held-back true labels.
    pub selected_quality_kappa: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub seeds: usize,
    pub kappa_mean: f64,
    pub kappa_std: f64,
    pub weighted_f1_mean: f64,
    pub weighted_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ExperimentReport {
    pub rows: Vec<MatrixRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<String>,
    /// Mean-ordering inversions relative to the full variant, if any.
    pub inversions: Vec<String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run every (variant, seed) pair and aggregate. Seed failures are
/// recorded and skipped; ordering inversions against the full variant are
/// flagged in the report rather than aborting it.
pub fn run_experiment_matrix(
    base: &ScopeConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("run_experiment_matrix seeds"));
    }
    let mut report = ExperimentReport::default();
    for &variant in variants {
        for &seed in seeds {
            let mut cfg = base.clone();
            variant.apply(&mut cfg);
            let t0 = Instant::now();
            match run_pipeline(&cfg, seed) {
                Ok((run, _)) => {
                    report.rows.push(MatrixRow {
                        variant: variant.name().into(),
                        seed,
                        kappa: run.test.kappa,
                        weighted_f1: run.test.weighted_f1,
                        accuracy: run.test.accuracy,
                        coverage: run.manifest.coverage,
                        selected_quality_kappa: run.selected_quality_kappa,
                        wall_secs: t0.elapsed().as_secs_f64(),
                    });
                }
                Err(e) => {
                    report
                        .failures
                        .push(format!("{} seed {seed}: {e}", variant.name()));
                }
            }
        }
    }
    for &variant in variants {
        let rows: Vec<&MatrixRow> = report
            .rows
            .iter()
            .filter(|r| r.variant == variant.name())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let kappas: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
        let wf1s: Vec<f64> = rows.iter().map(|r| r.weighted_f1).collect();
        let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        let (km, ks) = mean_std(&kappas);
        let (fm, fs) = mean_std(&wf1s);
        let (am, asd) = mean_std(&accs);
        report.aggregates.push(Aggregate {
            variant: variant.name().into(),
            seeds: rows.len(),
            kappa_mean: km,
            kappa_std: ks,
            weighted_f1_mean: fm,
            weighted_f1_std: fs,
            accuracy_mean: am,
            accuracy_std: asd,
        });
    }
    if let Some(full) = report
        .aggregates
        .iter()
        .find(|a| a.variant == Variant::Full.name())
        .map(|a| a.kappa_mean)
    {
        for agg in &report.aggregates {
            if agg.variant != Variant::Full.name() && agg.kappa_mean > full {
                report.inversions.push(format!(
                    "{} mean kappa {:.4} exceeds full {:.4}",
                    agg.variant, agg.kappa_mean, full
                ));
            }
        }
    }
    Ok(report)
}

/// CSV rendering: one row per run plus mean/std footer rows per variant.
pub fn experiment_to_csv(report: &ExperimentReport) -> String {
    let mut out =
        String::from("variant,seed,kappa,weighted_f1,accuracy,coverage,wall_secs\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            r.variant, r.seed, r.kappa, r.weighted_f1, r.accuracy, r.coverage, r.wall_secs
        ));
    }
    for a in &report.aggregates {
        out.push_str(&format!(
            "{},mean,{:.6},{:.6},{:.6},,\n",
            a.variant, a.kappa_mean, a.weighted_f1_mean, a.accuracy_mean
        ));
        out.push_str(&format!(
            "{},std,{:.6},{:.6},{:.6},,\n",
            a.variant, a.kappa_std, a.weighted_f1_std, a.accuracy_std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small fast config for orchestration tests.
    pub(crate) fn tiny_config() -> ScopeConfig {
        let mut cfg = ScopeConfig::default();
        cfg.data.generate = CohortConfig {
            classes: 3,
            modes_per_class: 1,
            labeled_subjects: 2,
            unlabeled_subjects: 3,
            validation_subjects: 1,
            test_subjects: 1,
            samples_per_subject: 12,
            channels: 2,
            time_points: 8,
            class_separation: 1.0,
            subject_shift: 0.4,
            class_weights: vec![0.4, 0.35, 0.25],
            seed: 5,
        };
        cfg.tpn.train.epochs = 8;
        cfg.prototypes.per_class = 2;
        cfg.prototypes.refine.epochs = 5;
        cfg.backbone = BackboneConfig {
            width: 8,
            hidden: 16,
            layers: 6,
            seed: 2,
        };
        cfg.stage2.total_epochs = 6;
        cfg.stage2.warmup_epochs = 2;
        cfg.stage2.batch_size = 8;
        cfg
    }

    #[test]
    fn config_toml_roundtrip_and_overrides() {
        let cfg = ScopeConfig::default();
        let text = cfg.to_toml().unwrap();
        let parsed = ScopeConfig::from_toml(&text, &[]).unwrap();
        assert_eq!(parsed.stage2.total_epochs, cfg.stage2.total_epochs);

        let overridden = ScopeConfig::from_toml(
            &text,
            &[
                ("stage2.total_epochs".into(), "7".into()),
                ("stage2.warmup_epochs".into(), "2".into()),
                ("ablations.etf_off".into(), "true".into()),
                ("run.seeds".into(), "1,2".into()),
            ],
        )
        .unwrap();
        assert_eq!(overridden.stage2.total_epochs, 7);
        assert_eq!(overridden.stage2.warmup_epochs, 2);
        assert!(overridden.ablations.etf_off);
        assert_eq!(overridden.run.seeds, vec![1, 2]);
    }

    #[test]
    fn unknown_config_key_is_rejected_by_name() {
        let err = ScopeConfig::from_toml("[stage2]\nbogus_knob = 3\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_knob"), "{msg}");
    }

    #[test]
    fn warmup_longer_than_total_is_rejected() {
        let mut cfg = ScopeConfig::default();
        cfg.stage2.warmup_epochs = 99;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage1_is_deterministic_and_label_hygienic() {
        let cfg = tiny_config();
        let cohort = generate_cohort(&cfg.data.generate).unwrap();
        let before = cohort.access_snapshot();
        let a = run_stage1(&cfg, &cohort, 11).unwrap();
        let b = run_stage1(&cfg, &cohort, 11).unwrap();
        assert_eq!(cohort.access_snapshot(), before, "stage 1 touched held-out data");
        assert_eq!(a.tpn.params(), b.tpn.params());
        assert_eq!(a.bank.rows(), b.bank.rows());
        assert_eq!(a.manifest.len(), b.manifest.len());
        for (x, y) in a.manifest.iter().zip(&b.manifest) {
            assert_eq!(x.selected, y.selected);
            assert_eq!(x.confidence, y.confidence);
        }
    }

    #[test]
    fn stage2_runs_and_keeps_backbone_frozen() {
        let cfg = tiny_config();
        let cohort = generate_cohort(&cfg.data.generate).unwrap();
        let artifacts = run_stage1(&cfg, &cohort, 3).unwrap();
        let eval_reads_before = cohort.access_snapshot().eval_labels;
        let (report, backbone, _) = run_stage2(&cfg, &cohort, &artifacts, 3).unwrap();
        assert_eq!(
            cohort.access_snapshot().eval_labels,
            eval_reads_before,
            "stage 2 read evaluation-only labels"
        );
        assert_eq!(report.epochs.len(), 6);
        assert_eq!(report.backbone_digest, format!("{:016x}", backbone.digest()));
        // Selected checkpoint maximizes the validation trajectory.
        let best = report
            .epochs
            .iter()
            .map(|e| e.val_metric)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_val_metric, best);
        assert_eq!(
            report.epochs[report.selected_epoch].val_metric,
            report.best_val_metric
        );
        // Warm-up epochs carry no pseudo loss.
        assert_eq!(report.epochs[0].loss_pseudo, 0.0);
        assert_eq!(report.epochs[1].loss_pseudo, 0.0);
    }

    #[test]
    fn warmup_equal_to_total_matches_supervised_only() {
        let mut cfg = tiny_config();
        let cohort = generate_cohort(&cfg.data.generate).unwrap();
        let artifacts = run_stage1(&cfg, &cohort, 7).unwrap();
        cfg.stage2.warmup_epochs = cfg.stage2.total_epochs;
        let (_, _, stack_a) = run_stage2(&cfg, &cohort, &artifacts, 7).unwrap();

        let mut cfg_b = cfg.clone();
        Variant::SupervisedAdapterOnly.apply(&mut cfg_b);
        let (_, _, stack_b) = run_stage2(&cfg_b, &cohort, &artifacts, 7).unwrap();
        assert_eq!(stack_a.params(), stack_b.params());
    }

    #[test]
    fn empty_unlabeled_cohort_degenerates_to_supervised() {
        let cfg = tiny_config();
        let full = generate_cohort(&cfg.data.generate).unwrap();
        let labeled: Vec<Sample> = full.labeled().to_vec();
        let validation: Vec<Sample> = full.validation().to_vec();
        let test: Vec<Sample> = full.test().to_vec();
        let cohort = Cohort::from_parts(
            full.classes(),
            full.channels(),
            full.time_points(),
            labeled,
            Vec::new(),
            validation,
            test,
            Vec::new(),
        )
        .unwrap();
        let artifacts = run_stage1(&cfg, &cohort, 5).unwrap();
        assert!(artifacts.manifest.is_empty());
        let (report, _, _) = run_stage2(&cfg, &cohort, &artifacts, 5).unwrap();
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("supervised-only")));
        assert!(report.epochs.iter().all(|e| e.loss_pseudo == 0.0));
    }

    #[test]
    fn cyclic_sampler_covers_each_index_once_per_cycle() {
        let mut sampler = CyclicSampler::new(7, RngStream::new(3));
        for _ in 0..5 {
            let mut seen = vec![0usize; 7];
            for _ in 0..7 {
                seen[sampler.next()] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn experiment_matrix_aggregates_and_csv() {
        let mut cfg = tiny_config();
        cfg.stage2.total_epochs = 4;
        cfg.stage2.warmup_epochs = 1;
        cfg.tpn.train.epochs = 4;
        let report = run_experiment_matrix(
            &cfg,
            &[Variant::Full, Variant::FrozenHead],
            &[1, 2],
        )
        .unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.aggregates.len(), 2);
        let full = &report.aggregates[0];
        let per_seed: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.variant == "full")
            .map(|r| r.kappa)
            .collect();
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        assert!((full.kappa_mean - mean).abs() < 1e-12);
        let csv = experiment_to_csv(&report);
        assert!(csv.starts_with("variant,seed"));
        assert!(csv.contains("full,mean"));
    }

    #[test]
    fn single_seed_has_zero_std() {
        let mut cfg = tiny_config();
        cfg.stage2.total_epochs = 3;
        cfg.stage2.warmup_epochs = 1;
        cfg.tpn.train.epochs = 3;
        let report = run_experiment_matrix(&cfg, &[Variant::Full], &[9]).unwrap();
        assert_eq!(report.aggregates[0].kappa_std, 0.0);
    }
}
