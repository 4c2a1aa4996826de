//! Nearest-neighbour baseline over the mean of all object features.
//!
//! Every row contributes to the mean, so swapping a single context row moves
//! the query point; the model is context-sensitive by construction.

use std::collections::BTreeMap;

use super::{normalize_answer, ModelInput, VqaModel};
use crate::domain::{FeatureMatrix, Question};
use crate::embedding::cosine;
use crate::error::{Error, Result};

/// Final operation, its qualifier and its arguments, e.g. `query|color|` or `exist||`.
pub fn question_key(q: &Question) -> String {
    match q.program.last() {
        Some(step) => format!(
            "{}|{}|{}",
            step.operation,
            step.qualifier.as_deref().unwrap_or(""),
            step.arguments.join(",")
        ),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Memory {
    mean: Vec<f64>,
    answer: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineModel {
    memory: BTreeMap<String, Vec<Memory>>,
    majority: String,
}

impl BaselineModel {
    /// Memorizes `(question key, mean feature) -> gt answer` for every example, in order.
    pub fn train<'a>(
        examples: impl IntoIterator<Item = (&'a Question, &'a FeatureMatrix)>,
    ) -> Result<Self> {
        let mut memory: BTreeMap<String, Vec<Memory>> = BTreeMap::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut dim = None;
        for (q, v) in examples {
            if *dim.get_or_insert(v.d()) != v.d() {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap(),
                    found: v.d(),
                });
            }
            let answer = normalize_answer(&q.gt_answer);
            *counts.entry(answer.clone()).or_default() += 1;
            memory.entry(question_key(q)).or_default().push(Memory {
                mean: v.mean_row(),
                answer,
            });
        }
        // Highest count wins; BTreeMap order makes ties go to the lexicographically smallest answer.
        let majority = counts
            .iter()
            .fold(None::<(&String, usize)>, |best, (a, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((a, c)),
            })
            .map(|(a, _)| a.clone())
            .ok_or_else(|| {
                Error::InvalidArgument("baseline needs at least one training example".into())
            })?;
        Ok(BaselineModel { memory, majority })
    }

    pub fn majority_answer(&self) -> &str {
        &self.majority
    }

    pub fn predict(&self, q: &Question, v: &FeatureMatrix) -> String {
        let Some(entries) = self.memory.get(&question_key(q)) else {
            return self.majority.clone();
        };
        let mean = v.mean_row();
        let mut best: Option<(&Memory, f64)> = None;
        for m in entries {
            let s = cosine(&mean, &m.mean);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((m, s));
            }
        }
        best.map(|(m, _)| m.answer.clone())
            .unwrap_or_else(|| self.majority.clone())
    }
}

impl VqaModel for BaselineModel {
    fn name(&self) -> &str {
        "baseline"
    }

    fn answer(&self, input: &ModelInput<'_>) -> Result<String> {
        Ok(self.predict(input.question, input.features))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Operation, ReasoningStep};

    fn question(id: &str, op: &str, args: &[&str], gt: &str) -> Question {
        Question {
            question_id: id.into(),
            image_id: "img".into(),
            text: String::new(),
            gt_answer: gt.into(),
            program: vec![
                ReasoningStep {
                    step_index: 0,
                    operation: Operation::Select,
                    qualifier: None,
                    arguments: vec!["x".into()],
                    dependencies: vec![],
                    selected_object_ids: vec![],
                },
                ReasoningStep {
                    step_index: 1,
                    operation: Operation::parse(op),
                    qualifier: None,
                    arguments: args.iter().map(|s| s.to_string()).collect(),
                    dependencies: vec![0],
                    selected_object_ids: vec![],
                },
            ],
        }
    }

    fn fm(rows: &[[f32; 2]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn key_format() {
        assert_eq!(question_key(&question("a", "exist", &[], "yes")), "exist||");
        assert_eq!(
            question_key(&question("a", "query", &["color"], "red")),
            "query||color"
        );
    }

    #[test]
    fn zero_distance_retrieval() {
        let qa = question("a", "exist", &[], "yes");
        let qb = question("b", "exist", &[], "no");
        let va = fm(&[[1.0, 0.0], [1.0, 0.0]]);
        let vb = fm(&[[0.0, 1.0], [0.0, 1.0]]);
        let model = BaselineModel::train([(&qa, &va), (&qb, &vb)]).unwrap();
        assert_eq!(model.predict(&qa, &va), "yes");
        assert_eq!(model.predict(&qb, &vb), "no");
    }

    #[test]
    fn single_row_swap_crosses_midpoint() {
        // Stored means (1, 0) and (0, 1); the query image has rows (1,0), (1,0), (0,1)
        // with mean (2/3, 1/3) -> "yes". Replacing one (1,0) row with (0,1) gives
        // mean (1/3, 2/3), closer in angle to (0,1) -> "no".
        let qa = question("a", "exist", &[], "yes");
        let qb = question("b", "exist", &[], "no");
        let model =
            BaselineModel::train([(&qa, &fm(&[[1.0, 0.0]])), (&qb, &fm(&[[0.0, 1.0]]))]).unwrap();
        let v = fm(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(model.predict(&qa, &v), "yes");
        let swapped = crate::perturb::apply_swap(&v, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(model.predict(&qa, &swapped), "no");
    }

    #[test]
    fn unseen_key_falls_back_to_majority() {
        let q1 = question("a", "exist", &[], "yes");
        let q2 = question("b", "exist", &[], "no");
        let q3 = question("c", "verify", &["red"], "no");
        let v = fm(&[[1.0, 1.0]]);
        let model = BaselineModel::train([(&q1, &v), (&q2, &v), (&q3, &v)]).unwrap();
        assert_eq!(model.majority_answer(), "no");
        assert_eq!(
            model.predict(&question("d", "choose", &["a", "b"], "a"), &v),
            "no"
        );
    }

    #[test]
    fn majority_tie_is_lexicographic() {
        let q1 = question("a", "exist", &[], "yes");
        let q2 = question("b", "exist", &[], "no");
        let v = fm(&[[1.0, 1.0]]);
        let model = BaselineModel::train([(&q1, &v), (&q2, &v)]).unwrap();
        assert_eq!(model.majority_answer(), "no");
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(BaselineModel::train(std::iter::empty()).is_err());
    }
}
