//! Visual-context identification.
//!
//! Detections are matched to ground-truth objects by IoU, then every detection
//! whose object is not selected by the question's reasoning steps is context.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{iou, ContextSet, DetectedObject, Question, SceneGraph};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Relevant = objects selected by any reasoning step.
    #[default]
    Paper,
    /// Additionally treats objects named by any step argument as relevant, and
    /// keeps swaps from introducing those names (see `swapplan`).
    Strict,
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ContextMode::Paper),
            "strict" => Ok(ContextMode::Strict),
            other => Err(Error::InvalidArgument(format!(
                "context definition must be paper or strict, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Paper => "paper",
            ContextMode::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub object_id: String,
    pub detection_index: usize,
    pub iou: f64,
}

/// Injective assignment of ground-truth objects to detections for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    pub image_id: String,
    num_detections: usize,
    by_object: BTreeMap<String, MatchPair>,
    by_detection: Vec<Option<String>>,
}

impl MatchTable {
    /// Table for perfect-sight inputs, where row `i` is the `i`-th object of the graph.
    pub fn identity(g: &SceneGraph) -> Self {
        let by_object = g
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                (
                    o.object_id.clone(),
                    MatchPair {
                        object_id: o.object_id.clone(),
                        detection_index: i,
                        iou: 1.0,
                    },
                )
            })
            .collect();
        MatchTable {
            image_id: g.image_id.clone(),
            num_detections: g.objects.len(),
            by_object,
            by_detection: g
                .objects
                .iter()
                .map(|o| Some(o.object_id.clone()))
                .collect(),
        }
    }

    pub fn num_detections(&self) -> usize {
        self.num_detections
    }

    pub fn detection_of(&self, object_id: &str) -> Option<usize> {
        self.by_object.get(object_id).map(|p| p.detection_index)
    }

    pub fn object_of(&self, detection_index: usize) -> Option<&str> {
        self.by_detection.get(detection_index)?.as_deref()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &MatchPair> {
        self.by_object.values()
    }

    pub fn len(&self) -> usize {
        self.by_object.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_object.is_empty()
    }
}

/// Greedy matching in descending IoU order; ties go to the smaller object id, then the
/// smaller detection index. Pairs below `iou_threshold` stay unmatched.
pub fn match_detections(
    g: &SceneGraph,
    dets: &[DetectedObject],
    iou_threshold: f64,
) -> Result<MatchTable> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let mut candidates = Vec::new();
    for obj in &g.objects {
        for det in dets {
            let score = iou(&obj.bbox, &det.bbox);
            if score >= iou_threshold {
                candidates.push((score, obj.object_id.as_str(), det.detection_index));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(&b.2))
    });

    let mut by_object = BTreeMap::new();
    let mut by_detection = vec![None; dets.len()];
    for (score, object_id, det) in candidates {
        if by_object.contains_key(object_id) || by_detection[det].is_some() {
            continue;
        }
        by_detection[det] = Some(object_id.to_string());
        by_object.insert(
            object_id.to_string(),
            MatchPair {
                object_id: object_id.to_string(),
                detection_index: det,
                iou: score,
            },
        );
    }
    Ok(MatchTable {
        image_id: g.image_id.clone(),
        num_detections: dets.len(),
        by_object,
        by_detection,
    })
}

/// Splits the detections of the question's image into relevant rows and context rows.
///
/// Unmatched detections are always context.
pub fn identify_context(
    q: &Question,
    g: &SceneGraph,
    mt: &MatchTable,
    mode: ContextMode,
) -> Result<ContextSet> {
    if q.image_id != mt.image_id || g.image_id != mt.image_id {
        return Err(Error::ImageMismatch {
            question_image: q.image_id.clone(),
            table_image: mt.image_id.clone(),
        });
    }
    let mut relevant: BTreeSet<usize> = q
        .selected_object_ids()
        .into_iter()
        .filter_map(|id| mt.detection_of(id))
        .collect();
    if mode == ContextMode::Strict {
        let terms = q.argument_terms();
        for obj in &g.objects {
            let named = terms.contains(obj.class_label.as_str())
                || obj.attributes.iter().any(|a| terms.contains(a.as_str()));
            if named {
                relevant.extend(mt.detection_of(&obj.object_id));
            }
        }
    }
    let context_indices = (0..mt.num_detections())
        .filter(|i| !relevant.contains(i))
        .collect();
    Ok(ContextSet {
        question_id: q.question_id.clone(),
        relevant_indices: relevant.into_iter().collect(),
        context_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, ObjectAnnotation, Operation, ReasoningStep};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn obj(id: &str, class: &str, bbox: BoundingBox) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id.into(),
            class_label: class.into(),
            attributes: BTreeSet::new(),
            bbox,
        }
    }

    fn graph(objects: Vec<ObjectAnnotation>) -> SceneGraph {
        SceneGraph {
            image_id: "img".into(),
            width: 100.0,
            height: 100.0,
            objects,
            relations: vec![],
        }
    }

    fn dets(boxes: &[BoundingBox]) -> Vec<DetectedObject> {
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| DetectedObject {
                detection_index: i,
                bbox: *b,
                predicted_class: None,
            })
            .collect()
    }

    fn step(op: Operation, args: &[&str], selected: &[&str]) -> ReasoningStep {
        ReasoningStep {
            step_index: 0,
            operation: op,
            qualifier: None,
            arguments: args.iter().map(|s| s.to_string()).collect(),
            dependencies: vec![],
            selected_object_ids: selected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn question(steps: Vec<ReasoningStep>) -> Question {
        let program = steps
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.step_index = i;
                if i > 0 {
                    s.dependencies = vec![i - 1];
                }
                s
            })
            .collect();
        Question {
            question_id: "q".into(),
            image_id: "img".into(),
            text: String::new(),
            gt_answer: String::new(),
            program,
        }
    }

    #[test]
    fn identical_boxes_match_fully() {
        let g = graph(vec![
            obj("a", "tree", bb(0.0, 0.0, 10.0, 10.0)),
            obj("b", "car", bb(20.0, 0.0, 30.0, 10.0)),
        ]);
        let boxes: Vec<_> = g.objects.iter().map(|o| o.bbox).collect();
        let mt = match_detections(&g, &dets(&boxes), 0.5).unwrap();
        assert_eq!(mt.len(), 2);
        assert!(mt.pairs().all(|p| p.iou == 1.0));
        assert_eq!(mt.detection_of("b"), Some(1));
    }

    #[test]
    fn equal_overlap_tie_goes_to_lower_object_id() {
        // Detection (0,0,10,10) overlaps each ground-truth half-box with IoU 60/100.
        let g = graph(vec![
            obj("o2", "x", bb(0.0, 4.0, 10.0, 10.0)),
            obj("o1", "x", bb(0.0, 0.0, 10.0, 6.0)),
        ]);
        let mut g = g;
        g.sort_objects();
        let d = dets(&[bb(0.0, 0.0, 10.0, 10.0)]);
        assert!((iou(&g.objects[0].bbox, &d[0].bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&g.objects[1].bbox, &d[0].bbox) - 0.6).abs() < 1e-12);

        // Brute force: both single-pair assignments reach the same total IoU;
        // the lexicographically first object id wins.
        let mut best: Vec<(f64, &str)> = g
            .objects
            .iter()
            .map(|o| (iou(&o.bbox, &d[0].bbox), o.object_id.as_str()))
            .collect();
        best.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let mt = match_detections(&g, &d, 0.5).unwrap();
        assert_eq!(mt.len(), 1);
        assert_eq!(mt.object_of(0), Some(best[0].1));
        assert_eq!(mt.object_of(0), Some("o1"));
    }

    #[test]
    fn disjoint_detections_match_nothing() {
        let g = graph(vec![obj("a", "tree", bb(0.0, 0.0, 10.0, 10.0))]);
        let mt = match_detections(&g, &dets(&[bb(50.0, 50.0, 60.0, 60.0)]), 0.5).unwrap();
        assert!(mt.is_empty());
        assert_eq!(mt.object_of(0), None);
    }

    #[test]
    fn rejects_threshold_outside_unit_interval() {
        let g = graph(vec![]);
        assert!(match_detections(&g, &[], 0.0).is_err());
        assert!(match_detections(&g, &[], 1.5).is_err());
    }

    fn four_object_image() -> SceneGraph {
        graph(vec![
            obj("o1", "tree", bb(0.0, 0.0, 10.0, 10.0)),
            obj("o2", "statue", bb(10.0, 0.0, 20.0, 10.0)),
            obj("o3", "bench", bb(20.0, 0.0, 30.0, 10.0)),
            obj("o4", "dog", bb(30.0, 0.0, 40.0, 10.0)),
        ])
    }

    #[test]
    fn statue_question_leaves_two_context_objects() {
        let g = four_object_image();
        let mt = MatchTable::identity(&g);
        let q = question(vec![
            step(Operation::Select, &["tree"], &["o1"]),
            step(Operation::Relate, &["statue", "in front of", "s"], &["o2"]),
            step(Operation::Query, &["color"], &[]),
        ]);
        let ctx = identify_context(&q, &g, &mt, ContextMode::Paper).unwrap();
        assert_eq!(ctx.relevant_indices, vec![0, 1]);
        assert_eq!(ctx.context_indices, vec![2, 3]);
        assert_eq!(ctx.m(), 2);
    }

    #[test]
    fn selecting_everything_leaves_no_context() {
        let g = four_object_image();
        let mt = MatchTable::identity(&g);
        let q = question(vec![
            step(Operation::Select, &["_"], &["o1", "o2", "o3", "o4"]),
            step(Operation::Exist, &[], &[]),
        ]);
        let ctx = identify_context(&q, &g, &mt, ContextMode::Paper).unwrap();
        assert_eq!(ctx.m(), 0);
    }

    #[test]
    fn strict_mode_protects_named_classes() {
        let g = graph(vec![
            obj("o1", "bus", bb(0.0, 0.0, 10.0, 10.0)),
            obj("o2", "car", bb(10.0, 0.0, 20.0, 10.0)),
        ]);
        let mt = MatchTable::identity(&g);
        // "is there a car?" with no selected objects
        let q = question(vec![
            step(Operation::Select, &["car"], &[]),
            step(Operation::Exist, &[], &[]),
        ]);
        let paper = identify_context(&q, &g, &mt, ContextMode::Paper).unwrap();
        let strict = identify_context(&q, &g, &mt, ContextMode::Strict).unwrap();
        assert_eq!(paper.context_indices, vec![0, 1]);
        assert_eq!(strict.context_indices, vec![0], "bus stays context");
        assert_eq!(strict.relevant_indices, vec![1], "car becomes relevant");
    }

    #[test]
    fn unmatched_detection_is_context() {
        let g = four_object_image();
        let mut boxes: Vec<_> = g.objects.iter().map(|o| o.bbox).collect();
        boxes.push(bb(80.0, 80.0, 90.0, 90.0));
        let mt = match_detections(&g, &dets(&boxes), 0.5).unwrap();
        let q = question(vec![
            step(Operation::Select, &["tree"], &["o1"]),
            step(Operation::Exist, &[], &[]),
        ]);
        let ctx = identify_context(&q, &g, &mt, ContextMode::Paper).unwrap();
        assert_eq!(ctx.relevant_indices, vec![0]);
        assert_eq!(ctx.context_indices, vec![1, 2, 3, 4]);
        assert_eq!(ctx.relevant_indices.len() + ctx.m(), boxes.len());
    }

    #[test]
    fn image_mismatch_is_an_error() {
        let g = four_object_image();
        let mt = MatchTable::identity(&g);
        let mut q = question(vec![step(Operation::Exist, &[], &[])]);
        q.image_id = "other".into();
        assert!(matches!(
            identify_context(&q, &g, &mt, ContextMode::Paper),
            Err(Error::ImageMismatch { .. })
        ));
    }
}
