//! Feature-level swaps and per-question perturbation enumeration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::MatchTable;
use crate::domain::{FeatureMatrix, SceneGraph};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::ingestion::{self, DatasetBundle, ObjectRef};
use crate::swapplan::{SwapCandidate, SwapKind, SwapPlan};

/// Replaces row `j` of `v` with `donor` using the masked form `V ⊙ P + S ⊙ Pᶜ`,
/// where `P` is all ones except a zero row `j`, every row of `S` is `donor`, and
/// `Pᶜ = J − P`.
///
/// The masks are evaluated elementwise rather than materialized. The result is
/// bitwise identical to [`replace_row`] for every entry that is not a negative
/// zero; a `-0.0` may come out as `+0.0` since `-0 + +0 = +0` in IEEE 754.
pub fn apply_swap(v: &FeatureMatrix, j: usize, donor: &[f32]) -> Result<FeatureMatrix> {
    check(v, j, donor)?;
    let d = v.d();
    let data = v
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &x)| {
            let keep: f32 = if idx / d == j { 0.0 } else { 1.0 };
            let complement = 1.0 - keep;
            x * keep + donor[idx % d] * complement
        })
        .collect();
    FeatureMatrix::new(v.n(), d, data)
}

/// Direct row replacement; the reference for [`apply_swap`].
pub fn replace_row(v: &FeatureMatrix, j: usize, donor: &[f32]) -> Result<FeatureMatrix> {
    check(v, j, donor)?;
    let mut out = v.clone();
    out.set_row(j, donor);
    Ok(out)
}

fn check(v: &FeatureMatrix, j: usize, donor: &[f32]) -> Result<()> {
    if j >= v.n() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: v.n(),
        });
    }
    if donor.len() != v.d() {
        return Err(Error::DimensionMismatch {
            expected: v.d(),
            found: donor.len(),
        });
    }
    if donor.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvariantViolation(vec![
            "donor feature has a non-finite entry".into(),
        ]));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRecord {
    pub question_id: String,
    pub pert_id: u32,
    pub detection_index: usize,
    pub kind: SwapKind,
    pub donor: ObjectRef,
    pub donor_feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPerturbation {
    pub question_id: String,
    pub pert_id: u32,
    pub reason: String,
}

/// Source of the replacement feature row for a swap.
pub trait DonorFeatures {
    fn donor_feature(&self, candidate: &SwapCandidate) -> Result<Vec<f32>>;
}

/// Donor rows taken from the donor image's detector features via its match table.
pub struct DetectorDonors<'a> {
    pub bundle: &'a DatasetBundle,
    pub match_tables: &'a BTreeMap<String, MatchTable>,
}

impl DonorFeatures for DetectorDonors<'_> {
    fn donor_feature(&self, c: &SwapCandidate) -> Result<Vec<f32>> {
        let unmatched = || Error::DonorUnmatched {
            image_id: c.donor.image_id.clone(),
            object_id: c.donor.object_id.clone(),
        };
        let feats = self
            .bundle
            .features
            .get(&c.donor.image_id)
            .ok_or_else(unmatched)?;
        let row = self
            .match_tables
            .get(&c.donor.image_id)
            .and_then(|mt| mt.detection_of(&c.donor.object_id))
            .ok_or_else(unmatched)?;
        Ok(feats.features.row(row).to_vec())
    }
}

/// Donor encodings for perfect-sight inputs: the source object re-encoded with the
/// donor's class and attributes, keeping the source box.
pub struct PerfectSightDonors<'a> {
    pub encoder: &'a Encoder<'a>,
    pub graph: &'a SceneGraph,
}

impl DonorFeatures for PerfectSightDonors<'_> {
    fn donor_feature(&self, c: &SwapCandidate) -> Result<Vec<f32>> {
        let source =
            self.graph
                .objects
                .get(c.source_detection_index)
                .ok_or(Error::IndexOutOfRange {
                    index: c.source_detection_index,
                    len: self.graph.objects.len(),
                })?;
        Ok(self
            .encoder
            .parts(
                &c.donor_class,
                &c.donor_attributes,
                &source.bbox,
                (self.graph.width, self.graph.height),
            )?
            .combine())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Emitted {
        record: PerturbationRecord,
        features: FeatureMatrix,
    },
    Skipped(SkippedPerturbation),
}

/// Lazily yields one perturbed matrix per planned swap, in `pert_id` order.
/// Swaps whose donor feature cannot be resolved are yielded as `Skipped`.
pub fn enumerate_perturbations<'a>(
    v: &'a FeatureMatrix,
    plan: &'a SwapPlan,
    donors: &'a dyn DonorFeatures,
) -> impl Iterator<Item = Result<Perturbation>> + 'a {
    plan.swaps.iter().map(move |s| {
        let c = &s.candidate;
        let donor_feature = match donors.donor_feature(c) {
            Ok(f) => f,
            Err(e @ Error::DonorUnmatched { .. }) => {
                log::warn!(
                    "question {} pert {}: skipped, {e}",
                    plan.question_id,
                    s.pert_id
                );
                return Ok(Perturbation::Skipped(SkippedPerturbation {
                    question_id: plan.question_id.clone(),
                    pert_id: s.pert_id,
                    reason: e.to_string(),
                }));
            }
            Err(e) => return Err(e),
        };
        let features = apply_swap(v, c.source_detection_index, &donor_feature)?;
        Ok(Perturbation::Emitted {
            record: PerturbationRecord {
                question_id: plan.question_id.clone(),
                pert_id: s.pert_id,
                detection_index: c.source_detection_index,
                kind: c.kind,
                donor: c.donor.clone(),
                donor_feature,
            },
            features,
        })
    })
}

/// Emitted perturbations keyed by `pert_id`, plus the skip list.
pub type Materialized = (
    BTreeMap<u32, (PerturbationRecord, FeatureMatrix)>,
    Vec<SkippedPerturbation>,
);

pub fn materialize_perturbations(
    v: &FeatureMatrix,
    plan: &SwapPlan,
    donors: &dyn DonorFeatures,
) -> Result<Materialized> {
    let mut emitted = BTreeMap::new();
    let mut skipped = Vec::new();
    for p in enumerate_perturbations(v, plan, donors) {
        match p? {
            Perturbation::Emitted { record, features } => {
                emitted.insert(record.pert_id, (record, features));
            }
            Perturbation::Skipped(s) => skipped.push(s),
        }
    }
    Ok((emitted, skipped))
}

/// Writes `{question_id}.{pert_id}.smfx` for the unperturbed input (pert 0) and every emitted perturbation.
pub fn dump_perturbations(
    dir: &Path,
    question_id: &str,
    base: &FeatureMatrix,
    boxes: &[crate::domain::BoundingBox],
    perturbations: impl IntoIterator<Item = (u32, FeatureMatrix)>,
) -> Result<usize> {
    ingestion::write_feature_file(dir.join(format!("{question_id}.0.smfx")), base, boxes)?;
    let mut written = 1;
    for (pert_id, m) in perturbations {
        ingestion::write_feature_file(
            dir.join(format!("{question_id}.{pert_id}.smfx")),
            &m,
            boxes,
        )?;
        written += 1;
    }
    Ok(written)
}
