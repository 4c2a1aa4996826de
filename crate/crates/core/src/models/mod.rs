//! Answering models. A model maps one (visual input, question) pair to an answer string.

mod baseline;
mod bridge;
mod symbolic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use baseline::{question_key, BaselineModel};
pub use bridge::{
    bridge_export, bridge_import, check_log, expected_pairs, read_answers_jsonl,
    read_job_questions, write_answers_jsonl, ExportItem, ExportSummary, JobQuestion, ANSWERS_FILE,
    FEATURES_DIR, PLANS_FILE, QUESTIONS_FILE,
};
pub use symbolic::{
    apply_edits, selection_trace, symbolic_execute, symbolic_execute_on_swapped,
    unsupported_reason, AttributeOntology, SymbolicModel,
};

use crate::context::MatchTable;
use crate::domain::{FeatureMatrix, Question, SceneGraph};
use crate::error::Result;
use crate::swapplan::SwapCandidate;

/// Answer recorded when a model fails on an input; always scored as incorrect.
pub const FAILURE_ANSWER: &str = "⟂";

/// Lowercase, trim, and collapse internal whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerLogEntry {
    pub question_id: String,
    pub pert_id: u32,
    pub answer: String,
}

impl AnswerLogEntry {
    pub fn new(question_id: impl Into<String>, pert_id: u32, answer: &str) -> Self {
        AnswerLogEntry {
            question_id: question_id.into(),
            pert_id,
            answer: normalize_answer(answer),
        }
    }
}

/// Annotation-level counterpart of a feature swap: the object now carries this class and these attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationEdit {
    pub object_id: String,
    pub class_label: String,
    pub attributes: BTreeSet<String>,
}

impl AnnotationEdit {
    /// The edit for a swap candidate, or `None` when the swapped row has no ground-truth object.
    pub fn for_candidate(c: &SwapCandidate, matches: &MatchTable) -> Option<Self> {
        let object_id = matches.object_of(c.source_detection_index)?;
        Some(AnnotationEdit {
            object_id: object_id.to_string(),
            class_label: c.donor_class.clone(),
            attributes: c.donor_attributes.clone(),
        })
    }
}

/// Everything a model may look at for one answer.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub question: &'a Question,
    pub features: &'a FeatureMatrix,
    pub graph: &'a SceneGraph,
    pub edits: &'a [AnnotationEdit],
}

pub trait VqaModel: Sync {
    fn name(&self) -> &str;

    fn answer(&self, input: &ModelInput<'_>) -> Result<String>;

    /// A reason to leave the question out of the metrics entirely, if any.
    fn exclusion_reason(&self, _question: &Question) -> Option<String> {
        None
    }
}

/// Runs the model and normalizes its answer; failures become [`FAILURE_ANSWER`].
pub fn model_answer(model: &dyn VqaModel, input: &ModelInput<'_>) -> String {
    match model.answer(input) {
        Ok(a) => normalize_answer(&a),
        Err(e) => {
            log::warn!(
                "model {} failed on question {}: {e}",
                model.name(),
                input.question.question_id
            );
            FAILURE_ANSWER.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  To the   LEFT\tof "), "to the left of");
        assert_eq!(AnswerLogEntry::new("q", 0, " Yes ").answer, "yes");
    }

    struct Broken;

    impl VqaModel for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn answer(&self, _: &ModelInput<'_>) -> Result<String> {
            Err(Error::MalformedInput("boom".into()))
        }
    }

    #[test]
    fn failure_is_recorded_as_bottom() {
        let q = Question {
            question_id: "q".into(),
            image_id: "i".into(),
            text: String::new(),
            gt_answer: "x".into(),
            program: vec![],
        };
        let g = SceneGraph {
            image_id: "i".into(),
            width: 1.0,
            height: 1.0,
            objects: vec![],
            relations: vec![],
        };
        let v = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        let input = ModelInput {
            question: &q,
            features: &v,
            graph: &g,
            edits: &[],
        };
        assert_eq!(model_answer(&Broken, &input), FAILURE_ANSWER);
    }
}
