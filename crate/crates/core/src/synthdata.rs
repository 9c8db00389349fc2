//! Synthetic subject-shifted cohort generation and on-disk format.
//!
//! Samples are drawn from class-and-mode Gaussians with an additive
//! per-subject offset, so cross-subject generalization is strictly harder
//! than within-subject fit. The four splits (labeled, unlabeled,
//! validation, test) are subject-disjoint by construction. True labels of
//! the unlabeled split live in an evaluation-only sidecar; training code
//! paths only ever see the stripped view, and reads of the validation,
//! test, and sidecar sections are counted so hygiene can be asserted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub const COHORT_MAGIC: &[u8; 8] = b"SCOPEDAT";
pub const COHORT_VERSION: u16 = 1;

/// A sample with its class label (labeled/validation/test splits).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub subject_id: u32,
    pub label: usize,
}

/// A sample whose label has been stripped (unlabeled split as seen by
/// training code).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub features: Vec<f64>,
    pub subject_id: u32,
}

/// Generation parameters. All scale knobs are per-coordinate standard
/// deviations on top of unit observation noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub classes: usize,
    /// True latent modes per class (intra-class multimodality).
    pub modes_per_class: usize,
    pub labeled_subjects: usize,
    pub unlabeled_subjects: usize,
    pub validation_subjects: usize,
    pub test_subjects: usize,
    pub samples_per_subject: usize,
    pub channels: usize,
    pub time_points: usize,
    /// Per-coordinate std of class centers.
    pub class_separation: f64,
    /// Per-coordinate std of the per-subject additive offset.
    pub subject_shift: f64,
    /// Class-imbalance weights; must sum to 1.
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            classes: 5,
            modes_per_class: 2,
            labeled_subjects: 3,
            unlabeled_subjects: 10,
            validation_subjects: 3,
            test_subjects: 4,
            samples_per_subject: 25,
            channels: 4,
            time_points: 16,
            class_separation: 0.55,
            subject_shift: 0.55,
            class_weights: vec![0.30, 0.25, 0.20, 0.15, 0.10],
            seed: 1,
        }
    }
}

impl CohortConfig {
    pub fn feature_dim(&self) -> usize {
        self.channels * self.time_points
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.modes_per_class == 0 {
            return Err(Error::InvalidConfig("modes_per_class must be positive".into()));
        }
        for (name, v) in [
            ("labeled_subjects", self.labeled_subjects),
            ("unlabeled_subjects", self.unlabeled_subjects),
            ("validation_subjects", self.validation_subjects),
            ("test_subjects", self.test_subjects),
            ("samples_per_subject", self.samples_per_subject),
            ("channels", self.channels),
            ("time_points", self.time_points),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.unlabeled_subjects < self.labeled_subjects {
            return Err(Error::InvalidConfig(
                "unlabeled split must be at least as large as the labeled split".into(),
            ));
        }
        if self.class_weights.len() != self.classes {
            return Err(Error::InvalidConfig(format!(
                "class_weights has {} entries for {} classes",
                self.class_weights.len(),
                self.classes
            )));
        }
        if self.class_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig("class_weights must be nonnegative".into()));
        }
        let sum: f64 = self.class_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "class_weights sum to {sum}, expected 1"
            )));
        }
        if self.class_separation < 0.0 || self.subject_shift < 0.0 {
            return Err(Error::InvalidConfig("scales must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Read counters for hygiene assertions.
#[derive(Debug, Default)]
struct AccessCounters {
    validation: AtomicU64,
    test: AtomicU64,
    eval_labels: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessSnapshot {
    pub validation: u64,
    pub test: u64,
    pub eval_labels: u64,
}

/// Four subject-disjoint splits plus the evaluation-only sidecar of true
/// unlabeled labels.
#[derive(Debug)]
pub struct Cohort {
    classes: usize,
    channels: usize,
    time_points: usize,
    labeled: Vec<Sample>,
    unlabeled: Vec<UnlabeledSample>,
    validation: Vec<Sample>,
    test: Vec<Sample>,
    eval_labels: Vec<usize>,
    access: AccessCounters,
}

impl Cohort {
    /// Assemble a cohort, checking subject-disjointness and dimension
    /// consistency. (Split-size relations are enforced at generation time;
    /// degenerate cohorts, e.g. an empty unlabeled split, are permitted
    /// here so boundary behavior stays testable.)
    pub fn from_parts(
        classes: usize,
        channels: usize,
        time_points: usize,
        labeled: Vec<Sample>,
        unlabeled: Vec<UnlabeledSample>,
        validation: Vec<Sample>,
        test: Vec<Sample>,
        eval_labels: Vec<usize>,
    ) -> Result<Cohort> {
        if classes < 2 {
            return Err(Error::InvalidConfig("cohort needs at least 2 classes".into()));
        }
        if eval_labels.len() != unlabeled.len() {
            return Err(Error::DimensionMismatch {
                context: "cohort eval labels",
                expected: unlabeled.len(),
                got: eval_labels.len(),
            });
        }
        let dim = channels * time_points;
        let mut subject_split = std::collections::BTreeMap::new();
        let mut check = |feats: &[f64], subject: u32, label: Option<usize>, split: &'static str| -> Result<()> {
            if feats.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "cohort sample features",
                    expected: dim,
                    got: feats.len(),
                });
            }
            if let Some(l) = label {
                if l >= classes {
                    return Err(Error::InvalidConfig(format!(
                        "label {l} out of range for {classes} classes"
                    )));
                }
            }
            match subject_split.get(&subject) {
                None => {
                    subject_split.insert(subject, split);
                }
                Some(prev) if *prev != split => {
                    return Err(Error::InvalidConfig(format!(
                        "subject {subject} appears in splits {prev} and {split}"
                    )));
                }
                _ => {}
            }
            Ok(())
        };
        for s in &labeled {
            check(&s.features, s.subject_id, Some(s.label), "labeled")?;
        }
        for (s, &l) in unlabeled.iter().zip(&eval_labels) {
            check(&s.features, s.subject_id, Some(l), "unlabeled")?;
        }
        for s in &validation {
            check(&s.features, s.subject_id, Some(s.label), "validation")?;
        }
        for s in &test {
            check(&s.features, s.subject_id, Some(s.label), "test")?;
        }
        Ok(Cohort {
            classes,
            channels,
            time_points,
            labeled,
            unlabeled,
            validation,
            test,
            eval_labels,
            access: AccessCounters::default(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time_points(&self) -> usize {
        self.time_points
    }

    pub fn feature_dim(&self) -> usize {
        self.channels * self.time_points
    }

    pub fn labeled(&self) -> &[Sample] {
        &self.labeled
    }

    /// Label-stripped view of the unlabeled split (safe for training).
    pub fn unlabeled(&self) -> &[UnlabeledSample] {
        &self.unlabeled
    }

    /// Validation split; the read is counted for hygiene assertions.
    pub fn validation(&self) -> &[Sample] {
        self.access.validation.fetch_add(1, Ordering::Relaxed);
        &self.validation
    }

    /// Test split; the read is counted.
    pub fn test(&self) -> &[Sample] {
        self.access.test.fetch_add(1, Ordering::Relaxed);
        &self.test
    }

    /// True labels of the unlabeled split. Evaluation-only: reads are
    /// counted and must never happen inside training code paths.
    pub fn unlabeled_eval_labels(&self) -> &[usize] {
        self.access.eval_labels.fetch_add(1, Ordering::Relaxed);
        &self.eval_labels
    }

    pub fn access_snapshot(&self) -> AccessSnapshot {
        AccessSnapshot {
            validation: self.access.validation.load(Ordering::Relaxed),
            test: self.access.test.load(Ordering::Relaxed),
            eval_labels: self.access.eval_labels.load(Ordering::Relaxed),
        }
    }

    /// Data equality ignoring access counters.
    pub fn content_eq(&self, other: &Cohort) -> bool {
        self.classes == other.classes
            && self.channels == other.channels
            && self.time_points == other.time_points
            && self.labeled == other.labeled
            && self.unlabeled == other.unlabeled
            && self.validation == other.validation
            && self.test == other.test
            && self.eval_labels == other.eval_labels
    }
}

/// Header fields mirrored into the JSON manifest next to the binary file.
#[derive(Debug, Serialize, Deserialize)]
pub struct CohortManifest {
    pub magic: String,
    pub version: u16,
    pub classes: usize,
    pub channels: usize,
    pub time_points: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

/// Draw a cohort per the config. Deterministic: the same config (same
/// seed) yields an identical cohort.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort> {
    cfg.validate()?;
    let dim = cfg.feature_dim();
    let root = RngStream::new(cfg.seed);
    let mut structure_rng = root.substream("class-structure");

    // Per-coordinate class centers and within-class mode offsets. The mode
    // spread is half the class separation so modes stay class-coherent.
    // All classes additionally share a common-mode component (scaled with
    // the separation) so raw feature directions are strongly correlated,
    // as in signals dominated by baseline structure; linear classifiers
    // are unaffected (it cancels in differences) but direction-based
    // similarity is not. The last two classes are siblings: the second is
    // seeded off the first at a fraction of the separation, giving the
    // cohort one systematically confusable pair (continuous-state
    // ambiguity) instead of uniformly random overlap.
    let mode_spread = 1.0 * cfg.class_separation;
    let common_scale = 2.0 * cfg.class_separation;
    let sibling_factor = 0.35;
    let common: Vec<f64> = (0..dim)
        .map(|_| common_scale * structure_rng.normal())
        .collect();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    for class in 0..cfg.classes {
        let center: Vec<f64> = if class == cfg.classes - 1 && cfg.classes >= 3 {
            let anchor = &centers[cfg.classes - 2];
            (0..dim)
                .map(|i| anchor[i] + sibling_factor * cfg.class_separation * structure_rng.normal())
                .collect()
        } else {
            (0..dim)
                .map(|i| common[i] + cfg.class_separation * structure_rng.normal())
                .collect()
        };
        centers.push(center);
    }
    let mut mode_means = vec![vec![vec![0.0f64; dim]; cfg.modes_per_class]; cfg.classes];
    for (class_modes, center) in mode_means.iter_mut().zip(&centers) {
        for mode in class_modes.iter_mut() {
            for (m, &c) in mode.iter_mut().zip(center) {
                *m = c + mode_spread * structure_rng.normal();
            }
        }
    }

    let total_subjects = cfg.labeled_subjects
        + cfg.unlabeled_subjects
        + cfg.validation_subjects
        + cfg.test_subjects;
    let mut subject_rng = root.substream("subject-offsets");
    let subject_offsets: Vec<Vec<f64>> = (0..total_subjects)
        .map(|_| {
            (0..dim)
                .map(|_| cfg.subject_shift * subject_rng.normal())
                .collect()
        })
        .collect();

    let mut next_subject = 0u32;
    let mut draw_split = |name: &str, n_subjects: usize| -> Vec<Sample> {
        let mut rng = root.substream(name);
        let mut out = Vec::with_capacity(n_subjects * cfg.samples_per_subject);
        for _ in 0..n_subjects {
            let subject_id = next_subject;
            next_subject += 1;
            let offset = &subject_offsets[subject_id as usize];
            for _ in 0..cfg.samples_per_subject {
                let class = rng.weighted_index(&cfg.class_weights);
                let mode = rng.below(cfg.modes_per_class);
                let mean = &mode_means[class][mode];
                let features: Vec<f64> = (0..dim)
                    .map(|i| mean[i] + offset[i] + rng.normal())
                    .collect();
                out.push(Sample {
                    features,
                    subject_id,
                    label: class,
                });
            }
        }
        out
    };

    let labeled = draw_split("split-labeled", cfg.labeled_subjects);
    let unlabeled_full = draw_split("split-unlabeled", cfg.unlabeled_subjects);
    let validation = draw_split("split-validation", cfg.validation_subjects);
    let test = draw_split("split-test", cfg.test_subjects);

    let eval_labels: Vec<usize> = unlabeled_full.iter().map(|s| s.label).collect();
    let unlabeled: Vec<UnlabeledSample> = unlabeled_full
        .into_iter()
        .map(|s| UnlabeledSample {
            features: s.features,
            subject_id: s.subject_id,
        })
        .collect();

    Cohort::from_parts(
        cfg.classes,
        cfg.channels,
        cfg.time_points,
        labeled,
        unlabeled,
        validation,
        test,
        eval_labels,
    )
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write the binary cohort container plus its JSON manifest sidecar.
pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BinWriter::new(BufWriter::new(file));
    w.magic(COHORT_MAGIC, COHORT_VERSION)?;
    w.u32(cohort.classes as u32)?;
    w.u32(cohort.channels as u32)?;
    w.u32(cohort.time_points as u32)?;
    w.u32(cohort.labeled.len() as u32)?;
    w.u32(cohort.unlabeled.len() as u32)?;
    w.u32(cohort.validation.len() as u32)?;
    w.u32(cohort.test.len() as u32)?;
    for s in &cohort.labeled {
        w.u32(s.subject_id)?;
        w.i32(s.label as i32)?;
        w.f64_slice(&s.features)?;
    }
    for s in &cohort.unlabeled {
        w.u32(s.subject_id)?;
        w.i32(-1)?;
        w.f64_slice(&s.features)?;
    }
    for s in &cohort.validation {
        w.u32(s.subject_id)?;
        w.i32(s.label as i32)?;
        w.f64_slice(&s.features)?;
    }
    for s in &cohort.test {
        w.u32(s.subject_id)?;
        w.i32(s.label as i32)?;
        w.f64_slice(&s.features)?;
    }
    // Evaluation-only sidecar: true labels of the unlabeled split.
    for &l in &cohort.eval_labels {
        w.i32(l as i32)?;
    }
    w.into_inner().flush()?;

    let manifest = CohortManifest {
        magic: String::from_utf8_lossy(COHORT_MAGIC).into_owned(),
        version: COHORT_VERSION,
        classes: cohort.classes,
        channels: cohort.channels,
        time_points: cohort.time_points,
        n_labeled: cohort.labeled.len(),
        n_unlabeled: cohort.unlabeled.len(),
        n_validation: cohort.validation.len(),
        n_test: cohort.test.len(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path(path), json + "\n")?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let file = File::open(path)?;
    let mut r = BinReader::new(BufReader::new(file));
    r.expect_magic(COHORT_MAGIC, COHORT_VERSION)?;
    let classes = r.u32("classes")? as usize;
    let channels = r.u32("channels")? as usize;
    let time_points = r.u32("time_points")? as usize;
    let n_labeled = r.u32("n_labeled")? as usize;
    let n_unlabeled = r.u32("n_unlabeled")? as usize;
    let n_validation = r.u32("n_validation")? as usize;
    let n_test = r.u32("n_test")? as usize;
    if classes < 2 || channels == 0 || time_points == 0 {
        return Err(Error::MalformedHeader(format!(
            "classes={classes} channels={channels} time_points={time_points}"
        )));
    }
    let dim = channels * time_points;

    let read_labeled = |r: &mut BinReader<BufReader<File>>, n: usize, split: &'static str| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let subject_id = r.u32("subject_id")?;
            let label = r.i32("label")?;
            if label < 0 || label as usize >= classes {
                return Err(Error::MalformedHeader(format!(
                    "{split}: label {label} out of range"
                )));
            }
            let features = r.f64_vec(dim, "features")?;
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("cohort features"));
            }
            out.push(Sample {
                features,
                subject_id,
                label: label as usize,
            });
        }
        Ok(out)
    };

    let labeled = read_labeled(&mut r, n_labeled, "labeled")?;
    let mut unlabeled = Vec::with_capacity(n_unlabeled);
    for _ in 0..n_unlabeled {
        let subject_id = r.u32("subject_id")?;
        let label = r.i32("label")?;
        if label != -1 {
            return Err(Error::MalformedHeader(format!(
                "unlabeled split carries label {label}, expected -1"
            )));
        }
        let features = r.f64_vec(dim, "features")?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cohort features"));
        }
        unlabeled.push(UnlabeledSample {
            features,
            subject_id,
        });
    }
    let validation = read_labeled(&mut r, n_validation, "validation")?;
    let test = read_labeled(&mut r, n_test, "test")?;

    let mut eval_labels = Vec::with_capacity(n_unlabeled);
    for _ in 0..n_unlabeled {
        let l = r.i32("eval_label")?;
        if l < 0 || l as usize >= classes {
            return Err(Error::MalformedHeader(format!(
                "eval label {l} out of range"
            )));
        }
        eval_labels.push(l as usize);
    }

    Cohort::from_parts(
        classes,
        channels,
        time_points,
        labeled,
        unlabeled,
        validation,
        test,
        eval_labels,
    )
}
