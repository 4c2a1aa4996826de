//! Swap candidate selection.
//!
//! Every context object gets `k` class swaps (similar classes by embedding
//! cosine above a threshold, padded with random classes up to exactly `k`)
//! and up to `k` attribute swaps (same-class objects whose attribute set
//! differs; no padding when fewer exist).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextMode, MatchTable};
use crate::domain::{
    ContextSet, DetectedObject, EmbeddingTable, ObjectAnnotation, Question, SceneGraph,
};
use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::ingestion::{DatasetBundle, ObjectRef};
use crate::seed::{rng_for, SeedPart};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwapKind {
    Class,
    Attribute,
}

impl fmt::Display for SwapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwapKind::Class => "class",
            SwapKind::Attribute => "attribute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCandidate {
    pub kind: SwapKind,
    pub source_detection_index: usize,
    pub donor: ObjectRef,
    pub donor_class: String,
    pub donor_attributes: BTreeSet<String>,
    /// The donor class was drawn at random because too few classes passed the threshold.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSwap {
    pub pert_id: u32,
    pub candidate: SwapCandidate,
}

/// All SwapMix perturbations for one question, in `pert_id` order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SwapPlan {
    pub question_id: String,
    pub swaps: Vec<PlannedSwap>,
}

impl SwapPlan {
    pub fn len(&self) -> usize {
        self.swaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty()
    }

    pub fn count(&self, kind: SwapKind) -> usize {
        self.swaps
            .iter()
            .filter(|s| s.candidate.kind == kind)
            .count()
    }

    /// Candidates grouped by source row.
    pub fn per_object(&self) -> BTreeMap<usize, Vec<&SwapCandidate>> {
        let mut out: BTreeMap<usize, Vec<&SwapCandidate>> = BTreeMap::new();
        for s in &self.swaps {
            out.entry(s.candidate.source_detection_index)
                .or_default()
                .push(&s.candidate);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCandidate {
    pub label: String,
    pub padded: bool,
}

/// Class vocabulary with pre-resolved embeddings for repeated ranking.
#[derive(Debug, Clone)]
pub struct ClassRanker<'a> {
    table: &'a EmbeddingTable,
    classes: Vec<(String, Option<Vec<f64>>)>,
}

impl<'a> ClassRanker<'a> {
    /// Labels the table cannot resolve stay in the vocabulary for padding but are never ranked.
    pub fn new<S: AsRef<str>>(
        table: &'a EmbeddingTable,
        classes: impl IntoIterator<Item = S>,
    ) -> Self {
        let set: BTreeSet<String> = classes
            .into_iter()
            .map(|c| c.as_ref().to_string())
            .collect();
        let classes = set
            .into_iter()
            .map(|c| {
                let v = table.lookup(&c).ok();
                (c, v)
            })
            .collect();
        ClassRanker { table, classes }
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|(c, _)| c.as_str())
    }

    /// Classes other than `label` (and not in `excluded`) with similarity `>= threshold`,
    /// by descending similarity, ties lexicographic.
    pub fn rank(
        &self,
        label: &str,
        threshold: f64,
        excluded: &BTreeSet<String>,
    ) -> Result<Vec<(String, f64)>> {
        let target = self.table.lookup(label)?;
        let mut ranked: Vec<(String, f64)> = self
            .classes
            .iter()
            .filter(|(c, _)| c != label && !excluded.contains(c))
            .filter_map(|(c, v)| v.as_ref().map(|v| (c.clone(), cosine(&target, v))))
            .filter(|(_, s)| *s >= threshold)
            .collect();
        // partial_cmp so that 0.0 and -0.0 tie; similarities are never NaN
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(ranked)
    }

    /// Top-`k` similar classes, padded to exactly `k` with uniformly drawn distinct classes
    /// (when the vocabulary allows it).
    pub fn candidates<R: Rng + ?Sized>(
        &self,
        label: &str,
        k: usize,
        threshold: f64,
        excluded: &BTreeSet<String>,
        rng: &mut R,
    ) -> Result<Vec<ClassCandidate>> {
        let mut out: Vec<ClassCandidate> = self
            .rank(label, threshold, excluded)?
            .into_iter()
            .take(k)
            .map(|(label, _)| ClassCandidate {
                label,
                padded: false,
            })
            .collect();
        if out.len() < k {
            let taken: BTreeSet<&str> = out.iter().map(|c| c.label.as_str()).collect();
            let pool: Vec<&str> = self
                .vocabulary()
                .filter(|c| *c != label && !taken.contains(c) && !excluded.contains(*c))
                .collect();
            let want = (k - out.len()).min(pool.len());
            let picks: Vec<String> = index::sample(rng, pool.len(), want)
                .into_iter()
                .map(|i| pool[i].to_string())
                .collect();
            out.extend(picks.into_iter().map(|label| ClassCandidate {
                label,
                padded: true,
            }));
        }
        Ok(out)
    }
}

/// Convenience wrapper over [`ClassRanker::candidates`].
pub fn class_candidates<R: Rng + ?Sized>(
    label: &str,
    table: &EmbeddingTable,
    all_classes: &BTreeSet<String>,
    k: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<ClassCandidate>> {
    check_k(k)?;
    check_threshold(threshold)?;
    ClassRanker::new(table, all_classes).candidates(label, k, threshold, &BTreeSet::new(), rng)
}

/// Up to `k` same-class donors whose attribute set differs from the source's,
/// drawn without replacement and returned in index order.
pub fn attribute_candidates<R: Rng + ?Sized>(
    source: &ObjectAnnotation,
    source_ref: Option<&ObjectRef>,
    bundle: &DatasetBundle,
    k: usize,
    rng: &mut R,
) -> Vec<ObjectRef> {
    let donors: Vec<&ObjectRef> = bundle
        .class_index
        .get(&source.class_label)
        .into_iter()
        .flatten()
        .filter(|r| Some(*r) != source_ref)
        .filter(|r| {
            bundle
                .object(r)
                .is_some_and(|o| o.attributes != source.attributes)
        })
        .collect();
    let mut picked = index::sample(rng, donors.len(), k.min(donors.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| donors[i].clone()).collect()
}

/// Attributes most similar to the source's canonical attribute (no padding).
pub fn attribute_candidates_perfect<S: AsRef<str>>(
    source: &ObjectAnnotation,
    table: &EmbeddingTable,
    all_attributes: impl IntoIterator<Item = S>,
    k: usize,
    threshold: Option<f64>,
) -> Result<Vec<String>> {
    let Some(attr) = source.canonical_attribute() else {
        return Ok(Vec::new());
    };
    let ranker = ClassRanker::new(table, all_attributes);
    Ok(ranker
        .rank(
            attr,
            threshold.unwrap_or(f64::NEG_INFINITY),
            &BTreeSet::new(),
        )?
        .into_iter()
        .take(k)
        .map(|(a, _)| a)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub k: usize,
    pub threshold: f64,
    pub seed: u64,
    pub mode: ContextMode,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            k: DEFAULT_K,
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            seed: 0,
            mode: ContextMode::Paper,
        }
    }
}

/// One question on one image, as seen by the planner.
#[derive(Debug, Clone, Copy)]
pub struct PlanInput<'a> {
    pub question: &'a Question,
    pub context: &'a ContextSet,
    pub graph: &'a SceneGraph,
    pub matches: &'a MatchTable,
    pub detections: Option<&'a [DetectedObject]>,
}

/// The object behind a context row: its annotation when matched, else the detector's class guess.
pub(crate) struct SourceObject<'a> {
    pub key: String,
    pub reference: Option<ObjectRef>,
    pub annotation: Option<&'a ObjectAnnotation>,
    pub class_label: Option<&'a str>,
}

pub(crate) fn source_object<'a>(
    graph: &'a SceneGraph,
    matches: &MatchTable,
    detections: Option<&'a [DetectedObject]>,
    row: usize,
) -> SourceObject<'a> {
    match matches.object_of(row).and_then(|id| graph.object(id)) {
        Some(obj) => SourceObject {
            key: obj.object_id.clone(),
            reference: Some(ObjectRef {
                image_id: graph.image_id.clone(),
                object_id: obj.object_id.clone(),
            }),
            annotation: Some(obj),
            class_label: Some(&obj.class_label),
        },
        None => SourceObject {
            key: format!("det:{row}"),
            reference: None,
            annotation: None,
            class_label: detections
                .and_then(|d| d.get(row))
                .and_then(|d| d.predicted_class.as_deref()),
        },
    }
}

/// Class names a strict-mode plan must never swap in: every argument term of the program.
pub fn strict_exclusions(q: &Question) -> BTreeSet<String> {
    q.argument_terms().into_iter().map(String::from).collect()
}

/// Builds the full plan for one question. Per-object randomness is keyed by
/// `(seed, question_id, object_id)`, so plans do not depend on processing order.
pub fn build_swap_plan(
    input: PlanInput<'_>,
    bundle: &DatasetBundle,
    ranker: &ClassRanker<'_>,
    opts: &PlanOptions,
) -> Result<SwapPlan> {
    check_k(opts.k)?;
    check_threshold(opts.threshold)?;
    let q = input.question;
    if input.context.question_id != q.question_id {
        return Err(Error::InvalidArgument(format!(
            "context set is for question {}, not {}",
            input.context.question_id, q.question_id
        )));
    }
    let excluded = match opts.mode {
        ContextMode::Paper => BTreeSet::new(),
        ContextMode::Strict => strict_exclusions(q),
    };

    let mut swaps = Vec::new();
    for &row in &input.context.context_indices {
        let source = source_object(input.graph, input.matches, input.detections, row);
        let Some(class_label) = source.class_label else {
            log::debug!(
                "question {}: context row {row} has no class; no swaps",
                q.question_id
            );
            continue;
        };
        let mut rng = rng_for(&[
            SeedPart::U64(opts.seed),
            SeedPart::Str(&q.question_id),
            SeedPart::Str(&source.key),
        ]);

        for cand in ranker.candidates(class_label, opts.k, opts.threshold, &excluded, &mut rng)? {
            let instances = bundle
                .class_index
                .get(&cand.label)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::EmptyClass(cand.label.clone()))?;
            let donor = instances[rng.random_range(0..instances.len())].clone();
            let donor_attributes = bundle
                .object(&donor)
                .map(|o| o.attributes.clone())
                .unwrap_or_default();
            swaps.push(SwapCandidate {
                kind: SwapKind::Class,
                source_detection_index: row,
                donor,
                donor_class: cand.label,
                donor_attributes,
                padded: cand.padded,
            });
        }

        if let Some(annotation) = source.annotation {
            for donor in attribute_candidates(
                annotation,
                source.reference.as_ref(),
                bundle,
                opts.k,
                &mut rng,
            ) {
                let donor_attributes = bundle
                    .object(&donor)
                    .map(|o| o.attributes.clone())
                    .unwrap_or_default();
                swaps.push(SwapCandidate {
                    kind: SwapKind::Attribute,
                    source_detection_index: row,
                    donor,
                    donor_class: annotation.class_label.clone(),
                    donor_attributes,
                    padded: false,
                });
            }
        }
    }

    Ok(SwapPlan {
        question_id: q.question_id.clone(),
        swaps: swaps
            .into_iter()
            .enumerate()
            .map(|(i, candidate)| PlannedSwap {
                pert_id: i as u32 + 1,
                candidate,
            })
            .collect(),
    })
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "similarity threshold must be in [-1, 1], got {t}"
        )));
    }
    Ok(())
}

/// One line of `plans.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLine {
    pub question_id: String,
    pub pert_id: u32,
    pub detection_index: usize,
    pub kind: SwapKind,
    pub donor_image: String,
    pub donor_object: String,
    pub donor_class: String,
    pub donor_attributes: Vec<String>,
    pub padded: bool,
}

pub fn plan_lines(plan: &SwapPlan) -> impl Iterator<Item = PlanLine> + '_ {
    plan.swaps.iter().map(move |s| PlanLine {
        question_id: plan.question_id.clone(),
        pert_id: s.pert_id,
        detection_index: s.candidate.source_detection_index,
        kind: s.candidate.kind,
        donor_image: s.candidate.donor.image_id.clone(),
        donor_object: s.candidate.donor.object_id.clone(),
        donor_class: s.candidate.donor_class.clone(),
        donor_attributes: s.candidate.donor_attributes.iter().cloned().collect(),
        padded: s.candidate.padded,
    })
}

pub fn plans_to_jsonl<'a>(plans: impl IntoIterator<Item = &'a SwapPlan>) -> String {
    let mut out = String::new();
    for plan in plans {
        for line in plan_lines(plan) {
            out.push_str(&serde_json::to_string(&line).expect("plan line serializes"));
            out.push('\n');
        }
    }
    out
}

/// Parses `plans.jsonl` back into per-question plans (questions with no swaps are absent).
pub fn parse_plans_jsonl(text: &str) -> Result<BTreeMap<String, SwapPlan>> {
    let mut plans: BTreeMap<String, SwapPlan> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: PlanLine = serde_json::from_str(line)
            .map_err(|e| Error::MalformedInput(format!("plans line {}: {e}", lineno + 1)))?;
        let plan = plans
            .entry(l.question_id.clone())
            .or_insert_with(|| SwapPlan {
                question_id: l.question_id.clone(),
                swaps: Vec::new(),
            });
        if plan.swaps.last().is_some_and(|s| s.pert_id >= l.pert_id) {
            return Err(Error::MalformedInput(format!(
                "plans line {}: pert_id {} for {} is not increasing",
                lineno + 1,
                l.pert_id,
                l.question_id
            )));
        }
        plan.swaps.push(PlannedSwap {
            pert_id: l.pert_id,
            candidate: SwapCandidate {
                kind: l.kind,
                source_detection_index: l.detection_index,
                donor: ObjectRef {
                    image_id: l.donor_image,
                    object_id: l.donor_object,
                },
                donor_class: l.donor_class,
                donor_attributes: l.donor_attributes.into_iter().collect(),
                padded: l.padded,
            },
        });
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundingBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_table() -> EmbeddingTable {
        // car is closest to truck, then bus; tree is orthogonal.
        let mut t = EmbeddingTable::new(3).unwrap();
        t.insert("car", vec![1.0, 0.0, 0.0]).unwrap();
        t.insert("truck", vec![0.9, 0.1, 0.0]).unwrap();
        t.insert("bus", vec![0.7, 0.7, 0.0]).unwrap();
        t.insert("tree", vec![0.0, 0.0, 1.0]).unwrap();
        t
    }

    fn classes(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn brute_force_cosine(t: &EmbeddingTable, a: &str, b: &str) -> f64 {
        let (x, y) = (t.get(a).unwrap(), t.get(b).unwrap());
        let dot: f64 = x
            .iter()
            .zip(y)
            .map(|(p, q)| f64::from(*p) * f64::from(*q))
            .sum();
        let nx: f64 = x.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
        dot / (nx * ny)
    }

    #[test]
    fn toy_table_top_two() {
        let t = toy_table();
        let all = classes(&["car", "truck", "bus", "tree"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = class_candidates("car", &t, &all, 2, 0.5, &mut rng).unwrap();

        let mut expected: Vec<(&str, f64)> = ["truck", "bus", "tree"]
            .iter()
            .map(|c| (*c, brute_force_cosine(&t, "car", c)))
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1));
        assert_eq!(
            got,
            expected[..2]
                .iter()
                .map(|(c, _)| ClassCandidate {
                    label: c.to_string(),
                    padded: false
                })
                .collect::<Vec<_>>()
        );
        assert_eq!(got[0].label, "truck");
        assert_eq!(got[1].label, "bus");
    }

    #[test]
    fn all_below_threshold_forces_padding() {
        let t = toy_table();
        let all = classes(&["car", "truck", "bus", "tree"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = class_candidates("tree", &t, &all, 3, 0.5, &mut rng).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|c| c.padded));
        let labels: BTreeSet<_> = got.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels.len(), 3);
        assert!(!labels.contains("tree"));
    }

    #[test]
    fn ties_are_lexicographic() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("a", vec![1.0, 0.0]).unwrap();
        t.insert("zeta", vec![1.0, 1.0]).unwrap();
        t.insert("beta", vec![1.0, 1.0]).unwrap();
        let all = classes(&["a", "zeta", "beta"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = class_candidates("a", &t, &all, 2, 0.5, &mut rng).unwrap();
        assert_eq!(got[0].label, "beta");
        assert_eq!(got[1].label, "zeta");
    }

    #[test]
    fn unknown_label_without_fallback() {
        let t = toy_table().with_oov_fallback(false);
        let all = classes(&["car", "zebra"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            class_candidates("zebra", &t, &all, 1, 0.5, &mut rng),
            Err(Error::UnknownLabel(_))
        ));
    }

    fn ann(id: &str, class: &str, attrs: &[&str]) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id.into(),
            class_label: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        }
    }

    fn bundle_of(objects: Vec<ObjectAnnotation>) -> DatasetBundle {
        let g = SceneGraph {
            image_id: "img".into(),
            width: 10.0,
            height: 10.0,
            objects,
            relations: vec![],
        };
        let mut graphs = BTreeMap::new();
        graphs.insert("img".to_string(), g);
        DatasetBundle::new(graphs, vec![], BTreeMap::new()).unwrap()
    }

    fn r(id: &str) -> ObjectRef {
        ObjectRef {
            image_id: "img".into(),
            object_id: id.into(),
        }
    }

    #[test]
    fn red_bus_has_two_donors() {
        let b = bundle_of(vec![
            ann("b1", "bus", &["red"]),
            ann("b2", "bus", &["orange"]),
            ann("b3", "bus", &["yellow"]),
            ann("b4", "bus", &["red"]),
        ]);
        let src = b.object(&r("b1")).unwrap().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let got = attribute_candidates(&src, Some(&r("b1")), &b, 10, &mut rng);
        assert_eq!(got, vec![r("b2"), r("b3")]);
    }

    #[test]
    fn sole_object_of_class_has_no_donors() {
        let b = bundle_of(vec![
            ann("b1", "bus", &["red"]),
            ann("c1", "car", &["blue"]),
        ]);
        let src = b.object(&r("b1")).unwrap().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(attribute_candidates(&src, Some(&r("b1")), &b, 5, &mut rng).is_empty());
    }

    #[test]
    fn seeded_donor_choice_is_stable() {
        let mut objs = vec![ann("s", "cup", &["white"])];
        objs.extend((0..5).map(|i| {
            ann(
                &format!("d{i}"),
                "cup",
                &[["red", "blue", "tall", "small", "green"][i]],
            )
        }));
        let b = bundle_of(objs);
        let src = b.object(&r("s")).unwrap().clone();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            attribute_candidates(&src, Some(&r("s")), &b, 3, &mut rng)
        };
        let first = draw(42);
        // one of the C(5,3) = 10 subsets, distinct, and identical on every run
        let all_subsets: Vec<Vec<ObjectRef>> = (0..5)
            .flat_map(|a| (a + 1..5).flat_map(move |b2| (b2 + 1..5).map(move |c| vec![a, b2, c])))
            .map(|ix| ix.into_iter().map(|i| r(&format!("d{i}"))).collect())
            .collect();
        assert_eq!(all_subsets.len(), 10);
        assert!(all_subsets.contains(&first));
        for _ in 0..5 {
            assert_eq!(draw(42), first);
        }
    }

    #[test]
    fn perfect_attribute_ranking() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("black", vec![1.0, 0.0]).unwrap();
        t.insert("blue", vec![1.0, 0.2]).unwrap();
        t.insert("green", vec![1.0, 0.5]).unwrap();
        t.insert("wooden", vec![0.0, 1.0]).unwrap();
        let src = ann("o", "car", &["black"]);
        let got =
            attribute_candidates_perfect(&src, &t, ["black", "blue", "green", "wooden"], 2, None)
                .unwrap();
        assert_eq!(got, vec!["blue", "green"]);
        let solo = attribute_candidates_perfect(&src, &t, ["black"], 5, None).unwrap();
        assert!(solo.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let plan = SwapPlan {
            question_id: "q1".into(),
            swaps: vec![PlannedSwap {
                pert_id: 1,
                candidate: SwapCandidate {
                    kind: SwapKind::Class,
                    source_detection_index: 2,
                    donor: r("b2"),
                    donor_class: "bus".into(),
                    donor_attributes: ["red".to_string()].into_iter().collect(),
                    padded: true,
                },
            }],
        };
        let text = plans_to_jsonl([&plan]);
        assert_eq!(
            text,
            "{\"question_id\":\"q1\",\"pert_id\":1,\"detection_index\":2,\"kind\":\"class\",\"donor_image\":\"img\",\"donor_object\":\"b2\",\"donor_class\":\"bus\",\"donor_attributes\":[\"red\"],\"padded\":true}\n"
        );
        let parsed = parse_plans_jsonl(&text).unwrap();
        assert_eq!(parsed["q1"], plan);
    }
}
