//! Two-stage semi-supervised adaptation over synthetic subject-shifted
//! cohorts.
//!
//! Stage I builds external supervision for unlabeled data: a small
//! task-prior network trained on the labeled split with an
//! equiangular-tight-frame head penalty, a balanced prototype bank
//! clustered over its embeddings, and confidence-scored pseudo-labels
//! from belief fusion of the two predictors. Stage II fine-tunes
//! prototype-conditioned modulation adapters (and a classifier head)
//! inside a frozen backbone on the labeled data plus the selected,
//! confidence-weighted pseudo-labels.

pub mod binio;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod numeric;
pub mod orchestrator;
pub mod proadapter;
pub mod prototypes;
pub mod synthdata;
pub mod tpn;

pub use error::{Error, Result};
pub use fusion::{
    bba_from_logits, build_pseudo_manifest, ds_combine, ds_combine_bruteforce,
    entropy_confidence, Bba, PseudoRecord,
};
pub use metrics::{
    auprc, auroc, cohen_kappa, pseudo_quality_report, spearman, weighted_f1, ConfusionMatrix,
    ScoredPredictions,
};
pub use numeric::{
    cosine_similarity, finite_diff_grad, log_sum_exp, softmax, Matrix, RngStream,
};
pub use orchestrator::{
    run_experiment_matrix, run_stage1, run_stage2, ExperimentReport, RunReport, ScopeConfig,
    Stage1Artifacts,
};
pub use proadapter::{
    adapted_forward, backbone_forward, modulate, AdapterConfig, AdapterStack, BackboneConfig,
    FrozenBackbone,
};
pub use prototypes::{
    class_similarity, init_prototypes_kmeans, proto_predict, refine_prototypes, sinkhorn_assign,
    PrototypeBank,
};
pub use synthdata::{
    generate_cohort, read_cohort, write_cohort, Cohort, CohortConfig, Sample, UnlabeledSample,
};
pub use tpn::{
    etf_loss_and_grad, etf_target, prior_predict, train_tpn, TpnModel, TpnTrainConfig,
};
