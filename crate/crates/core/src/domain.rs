//! Core data types shared by every stage of the pipeline.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::embedding::EmbeddingTable;

/// Axis-aligned box in pixel coordinates, `(x1, y1)` top-left and `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        match b.violation() {
            None => Ok(b),
            Some(v) => Err(Error::InvariantViolation(vec![v])),
        }
    }

    /// Construct from GQA-style `x, y, w, h`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub(crate) fn violation(&self) -> Option<String> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Some(format!("bbox has non-finite coordinate: {coords:?}"));
        }
        if coords.iter().any(|c| *c < 0.0) {
            return Some(format!("bbox has negative coordinate: {coords:?}"));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Some(format!("bbox is empty or inverted: {coords:?}"));
        }
        None
    }
}

/// Intersection-over-union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_id: String,
    pub class_label: String,
    pub attributes: BTreeSet<String>,
    pub bbox: BoundingBox,
}

impl ObjectAnnotation {
    /// Lexicographically smallest attribute; the one targeted by single-attribute swaps.
    pub fn canonical_attribute(&self) -> Option<&str> {
        self.attributes.iter().next().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub subject_id: String,
    pub predicate: String,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    /// Sorted by `object_id`.
    pub objects: Vec<ObjectAnnotation>,
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    pub fn object(&self, object_id: &str) -> Option<&ObjectAnnotation> {
        self.objects
            .binary_search_by(|o| o.object_id.as_str().cmp(object_id))
            .ok()
            .map(|i| &self.objects[i])
    }

    pub fn object_mut(&mut self, object_id: &str) -> Option<&mut ObjectAnnotation> {
        self.objects
            .binary_search_by(|o| o.object_id.as_str().cmp(object_id))
            .ok()
            .map(move |i| &mut self.objects[i])
    }

    pub fn sort_objects(&mut self) {
        self.objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    }
}

/// Lists every broken invariant of a scene graph. Empty means the graph is well formed.
pub fn validate_scene_graph(g: &SceneGraph) -> Vec<String> {
    let mut out = Vec::new();
    if !(g.width.is_finite() && g.width > 0.0 && g.height.is_finite() && g.height > 0.0) {
        out.push(format!(
            "image {}: invalid size {}x{}",
            g.image_id, g.width, g.height
        ));
    }
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for obj in &g.objects {
        if obj.object_id.is_empty() {
            out.push("empty object_id".to_string());
        } else if !seen.insert(obj.object_id.as_str()) && reported.insert(obj.object_id.as_str()) {
            out.push(format!("duplicate object_id: {}", obj.object_id));
        }
        if obj.class_label.is_empty() {
            out.push(format!("object {}: empty class_label", obj.object_id));
        }
        if let Some(v) = obj.bbox.violation() {
            out.push(format!("object {}: {v}", obj.object_id));
        }
    }
    for rel in &g.relations {
        for end in [&rel.subject_id, &rel.object_id] {
            if !seen.contains(end.as_str()) {
                out.push(format!("dangling relation endpoint: {end}"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Select,
    Filter,
    Relate,
    Query,
    Verify,
    Exist,
    Choose,
    And,
    Or,
    /// Any operation outside the core vocabulary (e.g. `same`, `common`).
    #[serde(untagged)]
    Other(String),
}

impl Operation {
    pub fn parse(name: &str) -> Operation {
        match name {
            "select" => Operation::Select,
            "filter" => Operation::Filter,
            "relate" => Operation::Relate,
            "query" => Operation::Query,
            "verify" => Operation::Verify,
            "exist" => Operation::Exist,
            "choose" => Operation::Choose,
            "and" => Operation::And,
            "or" => Operation::Or,
            other => Operation::Other(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Operation::Select => "select",
            Operation::Filter => "filter",
            Operation::Relate => "relate",
            Operation::Query => "query",
            Operation::Verify => "verify",
            Operation::Exist => "exist",
            Operation::Choose => "choose",
            Operation::And => "and",
            Operation::Or => "or",
            Operation::Other(s) => s,
        }
    }

    /// Whether a program may end with this operation.
    pub fn produces_answer(&self) -> bool {
        !matches!(
            self,
            Operation::Select | Operation::Filter | Operation::Relate
        )
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub step_index: usize,
    pub operation: Operation,
    /// Second word of a GQA operation name, e.g. `color` in `filter color`.
    pub qualifier: Option<String>,
    pub arguments: Vec<String>,
    pub dependencies: Vec<usize>,
    pub selected_object_ids: Vec<String>,
}

impl ReasoningStep {
    /// Argument strings with a `not(...)` wrapper removed.
    pub fn argument_terms(&self) -> impl Iterator<Item = &str> {
        self.arguments.iter().map(|a| {
            a.strip_prefix("not(")
                .and_then(|s| s.strip_suffix(')'))
                .unwrap_or(a)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub image_id: String,
    pub text: String,
    pub gt_answer: String,
    pub program: Vec<ReasoningStep>,
}

impl Question {
    /// Checks the program shape: non-empty, answer-producing last step, backward-only dependencies.
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.program.last() else {
            return Err(Error::MalformedInput(format!(
                "question {}: empty program",
                self.question_id
            )));
        };
        if !last.operation.produces_answer() {
            return Err(Error::MalformedInput(format!(
                "question {}: final step is {}, which does not produce an answer",
                self.question_id, last.operation
            )));
        }
        for (i, step) in self.program.iter().enumerate() {
            if step.step_index != i {
                return Err(Error::MalformedInput(format!(
                    "question {}: step at position {i} has index {}",
                    self.question_id, step.step_index
                )));
            }
            if let Some(&dep) = step.dependencies.iter().find(|&&d| d >= i) {
                return Err(Error::DanglingDependency {
                    question_id: self.question_id.clone(),
                    step: i,
                    dependency: dep,
                });
            }
        }
        Ok(())
    }

    /// Every argument term of every step; used by strict context identification.
    pub fn argument_terms(&self) -> BTreeSet<&str> {
        self.program
            .iter()
            .flat_map(|s| s.argument_terms())
            .collect()
    }

    pub fn selected_object_ids(&self) -> BTreeSet<&str> {
        self.program
            .iter()
            .flat_map(|s| s.selected_object_ids.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub detection_index: usize,
    pub bbox: BoundingBox,
    pub predicted_class: Option<String>,
}

/// Row-major `n x d` matrix of finite `f32` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvariantViolation(vec![format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )]));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(vec![format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )]));
        }
        Ok(FeatureMatrix { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Replace one row in place. The caller guarantees the donor is finite.
    pub(crate) fn set_row(&mut self, i: usize, row: &[f32]) {
        self.data[i * self.d..(i + 1) * self.d].copy_from_slice(row);
    }

    /// Column-wise mean over all rows, accumulated in f64.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.d];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += f64::from(*v);
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.n as f64);
        acc
    }
}

/// Per-question split of feature rows into relevant objects and visual context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSet {
    pub question_id: String,
    pub relevant_indices: Vec<usize>,
    pub context_indices: Vec<usize>,
}

impl ContextSet {
    pub fn m(&self) -> usize {
        self.context_indices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn obj(id: &str, class: &str) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id.into(),
            class_label: class.into(),
            attributes: BTreeSet::new(),
            bbox: bb(0.0, 0.0, 1.0, 1.0),
        }
    }

    fn graph(objects: Vec<ObjectAnnotation>, relations: Vec<(&str, &str, &str)>) -> SceneGraph {
        SceneGraph {
            image_id: "img".into(),
            width: 10.0,
            height: 10.0,
            objects,
            relations: relations
                .into_iter()
                .map(|(s, p, o)| Relation {
                    subject_id: s.into(),
                    predicate: p.into(),
                    object_id: o.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn duplicate_object_id_is_reported() {
        let g = graph(vec![obj("o1", "car"), obj("o1", "bus")], vec![]);
        assert_eq!(validate_scene_graph(&g), vec!["duplicate object_id: o1"]);
    }

    #[test]
    fn well_formed_graph_has_no_violations() {
        let g = graph(
            vec![obj("o1", "car"), obj("o2", "tree")],
            vec![("o1", "to the left of", "o2")],
        );
        assert!(validate_scene_graph(&g).is_empty());
    }

    #[test]
    fn dangling_relation_is_reported() {
        let g = graph(vec![obj("o1", "car")], vec![("o1", "near", "o9")]);
        assert_eq!(
            validate_scene_graph(&g),
            vec!["dangling relation endpoint: o9"]
        );
    }

    #[test]
    fn bbox_rejects_inverted_and_nan() {
        assert!(BoundingBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        // inter = 2, union = 6
        let b = bb(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // touching edges do not overlap
        assert_eq!(iou(&a, &bb(2.0, 0.0, 3.0, 2.0)), 0.0);
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f32::INFINITY]).is_err());
        assert!(FeatureMatrix::new(0, 2, vec![]).is_err());
        assert!(FeatureMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn program_validation() {
        let step = |i, op: Operation, deps: Vec<usize>| ReasoningStep {
            step_index: i,
            operation: op,
            qualifier: None,
            arguments: vec![],
            dependencies: deps,
            selected_object_ids: vec![],
        };
        let mut q = Question {
            question_id: "q".into(),
            image_id: "img".into(),
            text: String::new(),
            gt_answer: "yes".into(),
            program: vec![],
        };
        assert!(matches!(q.validate(), Err(Error::MalformedInput(_))));
        q.program = vec![
            step(0, Operation::Select, vec![]),
            step(1, Operation::Exist, vec![0]),
        ];
        assert!(q.validate().is_ok());
        q.program[1].dependencies = vec![1];
        assert!(matches!(
            q.validate(),
            Err(Error::DanglingDependency { .. })
        ));
        q.program = vec![step(0, Operation::Select, vec![])];
        assert!(matches!(q.validate(), Err(Error::MalformedInput(_))));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
