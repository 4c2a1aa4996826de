//! Training-time augmentation: every epoch, each context object is swapped with
//! probability `p_swap`; a swap is a class swap with probability `p_class` and an
//! attribute swap otherwise. Several rows may change at once.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::ingestion::{DatasetBundle, ObjectRef};
use crate::perturb::DonorFeatures;
use crate::seed::{rng_for, SeedPart};
use crate::swapplan::{
    attribute_candidates, source_object, ClassRanker, PlanInput, SwapCandidate, SwapKind,
    DEFAULT_K, DEFAULT_SIMILARITY_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_swap: f64,
    pub p_class: f64,
    /// Size of the candidate pool a swap is drawn from.
    pub k: usize,
    pub threshold: f64,
    pub seed: u64,
    pub epoch: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_swap: 0.5,
            p_class: 0.5,
            k: DEFAULT_K,
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            seed: 0,
            epoch: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_swap", self.p_swap), ("p_class", self.p_class)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One applied swap; a line of the augmentation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedSwap {
    pub question_id: String,
    pub epoch: u64,
    pub detection_index: usize,
    pub kind: SwapKind,
    pub donor: ObjectRef,
    pub donor_class: String,
}

/// The coin flips for one context row, whether or not a swap could be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AugmentDecision {
    pub detection_index: usize,
    pub swap: bool,
    /// `Some(true)` for a class swap; `None` when `swap` is false.
    pub class: Option<bool>,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub features: FeatureMatrix,
    pub applied: Vec<AppliedSwap>,
    pub decisions: Vec<AugmentDecision>,
}

/// Draws this epoch's version of `v`. Randomness for each row comes from
/// `(seed, epoch, question_id, object_id)` only.
pub fn augment_features(
    v: &FeatureMatrix,
    input: PlanInput<'_>,
    bundle: &DatasetBundle,
    ranker: &ClassRanker<'_>,
    donors: &dyn DonorFeatures,
    cfg: &AugmentConfig,
) -> Result<Augmented> {
    cfg.validate()?;
    let q = input.question;
    let mut features = v.clone();
    let mut applied = Vec::new();
    let mut decisions = Vec::with_capacity(input.context.m());
    let none = BTreeSet::new();

    for &row in &input.context.context_indices {
        let source = source_object(input.graph, input.matches, input.detections, row);
        let mut rng = rng_for(&[
            SeedPart::Str("augment"),
            SeedPart::U64(cfg.seed),
            SeedPart::U64(cfg.epoch),
            SeedPart::Str(&q.question_id),
            SeedPart::Str(&source.key),
        ]);
        let swap = rng.random_bool(cfg.p_swap);
        let class = swap.then(|| rng.random_bool(cfg.p_class));

        let candidate = match (class, source.class_label) {
            (Some(true), Some(label)) => {
                let pool = ranker.candidates(label, cfg.k, cfg.threshold, &none, &mut rng)?;
                pick(&pool, &mut rng).and_then(|c| {
                    let instances = bundle.class_index.get(&c.label).filter(|v| !v.is_empty())?;
                    let donor = instances[rng.random_range(0..instances.len())].clone();
                    Some(SwapCandidate {
                        kind: SwapKind::Class,
                        source_detection_index: row,
                        donor_attributes: bundle
                            .object(&donor)
                            .map(|o| o.attributes.clone())
                            .unwrap_or_default(),
                        donor,
                        donor_class: c.label.clone(),
                        padded: c.padded,
                    })
                })
            }
            (Some(false), _) => source.annotation.and_then(|ann| {
                let pool =
                    attribute_candidates(ann, source.reference.as_ref(), bundle, cfg.k, &mut rng);
                pick(&pool, &mut rng).map(|donor| SwapCandidate {
                    kind: SwapKind::Attribute,
                    source_detection_index: row,
                    donor_attributes: bundle
                        .object(donor)
                        .map(|o| o.attributes.clone())
                        .unwrap_or_default(),
                    donor: donor.clone(),
                    donor_class: ann.class_label.clone(),
                    padded: false,
                })
            }),
            _ => None,
        };

        let mut done = false;
        if let Some(c) = candidate {
            match donors.donor_feature(&c) {
                Ok(row_values) => {
                    if row_values.len() != v.d() {
                        return Err(Error::DimensionMismatch {
                            expected: v.d(),
                            found: row_values.len(),
                        });
                    }
                    features.set_row(row, &row_values);
                    applied.push(AppliedSwap {
                        question_id: q.question_id.clone(),
                        epoch: cfg.epoch,
                        detection_index: row,
                        kind: c.kind,
                        donor: c.donor,
                        donor_class: c.donor_class,
                    });
                    done = true;
                }
                Err(Error::DonorUnmatched { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        decisions.push(AugmentDecision {
            detection_index: row,
            swap,
            class,
            applied: done,
        });
    }
    Ok(Augmented {
        features,
        applied,
        decisions,
    })
}

fn pick<'a, T, R: Rng + ?Sized>(pool: &'a [T], rng: &mut R) -> Option<&'a T> {
    (!pool.is_empty()).then(|| &pool[rng.random_range(0..pool.len())])
}

pub fn manifest_jsonl(applied: &[AppliedSwap]) -> String {
    let mut out = String::new();
    for a in applied {
        out.push_str(&serde_json::to_string(a).expect("manifest line serializes"));
        out.push('\n');
    }
    out
}
