//! File-based job protocol for external models.
//!
//! ```text
//! job/
//!   questions.jsonl   {question_id, image_id, question, pert_ids}
//!   plans.jsonl       one line per emitted perturbation
//!   features/{question_id}.{pert_id}.smfx
//!   answers.jsonl     {question_id, pert_id, answer}   (written by the external side)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_answer, AnswerLogEntry};
use crate::domain::{BoundingBox, FeatureMatrix};
use crate::error::{Error, Result};
use crate::ingestion::{write_atomic, write_feature_file};
use crate::swapplan::{plans_to_jsonl, SwapPlan};

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const PLANS_FILE: &str = "plans.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const FEATURES_DIR: &str = "features";

/// One line of the job's `questions.jsonl`. `pert_ids` always starts with 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobQuestion {
    pub question_id: String,
    pub image_id: String,
    pub question: String,
    pub pert_ids: Vec<u32>,
}

/// Everything exported for one question. `plan` should hold only emitted swaps,
/// and `perturbations` the matching matrices.
#[derive(Debug, Clone)]
pub struct ExportItem {
    pub question_id: String,
    pub image_id: String,
    pub text: String,
    pub base: FeatureMatrix,
    pub boxes: Vec<BoundingBox>,
    pub plan: SwapPlan,
    pub perturbations: Vec<(u32, FeatureMatrix)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExportSummary {
    pub questions: usize,
    pub feature_files: usize,
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(&it).expect("job line serializes"));
        out.push('\n');
    }
    out
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::MalformedInput(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Writes a complete job directory. Items are consumed one at a time.
pub fn bridge_export(
    job_dir: &Path,
    items: impl IntoIterator<Item = Result<ExportItem>>,
) -> Result<ExportSummary> {
    let features_dir = job_dir.join(FEATURES_DIR);
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let mut questions = Vec::new();
    let mut plans = Vec::new();
    let mut summary = ExportSummary::default();
    for item in items {
        let item = item?;
        let mut pert_ids = vec![0];
        write_feature_file(
            features_dir.join(format!("{}.0.smfx", item.question_id)),
            &item.base,
            &item.boxes,
        )?;
        summary.feature_files += 1;
        for (pert_id, m) in &item.perturbations {
            write_feature_file(
                features_dir.join(format!("{}.{pert_id}.smfx", item.question_id)),
                m,
                &item.boxes,
            )?;
            pert_ids.push(*pert_id);
            summary.feature_files += 1;
        }
        questions.push(JobQuestion {
            question_id: item.question_id,
            image_id: item.image_id,
            question: item.text,
            pert_ids,
        });
        plans.push(item.plan);
        summary.questions += 1;
    }
    write_atomic(
        &job_dir.join(QUESTIONS_FILE),
        to_jsonl(&questions).as_bytes(),
    )?;
    write_atomic(&job_dir.join(PLANS_FILE), plans_to_jsonl(&plans).as_bytes())?;
    Ok(summary)
}

pub fn read_job_questions(job_dir: &Path) -> Result<Vec<JobQuestion>> {
    read_jsonl(&job_dir.join(QUESTIONS_FILE))
}

/// Every `(question_id, pert_id)` pair the job expects an answer for.
pub fn expected_pairs(questions: &[JobQuestion]) -> BTreeSet<(String, u32)> {
    questions
        .iter()
        .flat_map(|q| q.pert_ids.iter().map(|&p| (q.question_id.clone(), p)))
        .collect()
}

/// Checks that `entries` answers every expected pair exactly once (identical
/// duplicates are tolerated). Pairs outside `expected` are ignored with a warning.
pub fn check_log(
    expected: &BTreeSet<(String, u32)>,
    entries: &[AnswerLogEntry],
) -> Result<BTreeMap<(String, u32), String>> {
    let mut answers: BTreeMap<(String, u32), String> = BTreeMap::new();
    let mut conflicts = BTreeSet::new();
    let mut unexpected = 0usize;
    for e in entries {
        let key = (e.question_id.clone(), e.pert_id);
        if !expected.contains(&key) {
            unexpected += 1;
            continue;
        }
        let answer = normalize_answer(&e.answer);
        match answers.get(&key) {
            Some(prev) if *prev != answer => {
                conflicts.insert(key);
            }
            Some(_) => {}
            None => {
                answers.insert(key, answer);
            }
        }
    }
    if unexpected > 0 {
        log::warn!("answer log has {unexpected} entries for pairs that were not requested");
    }
    let missing: Vec<(String, u32)> = expected
        .iter()
        .filter(|k| !answers.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() || !conflicts.is_empty() {
        return Err(Error::IncompleteLog {
            missing,
            conflicts: conflicts.into_iter().collect(),
        });
    }
    Ok(answers)
}

pub fn read_answers_jsonl(path: &Path) -> Result<Vec<AnswerLogEntry>> {
    Ok(read_jsonl::<AnswerLogEntry>(path)?
        .into_iter()
        .map(|e| AnswerLogEntry::new(e.question_id, e.pert_id, &e.answer))
        .collect())
}

pub fn write_answers_jsonl(path: &Path, entries: &[AnswerLogEntry]) -> Result<()> {
    write_atomic(path, to_jsonl(entries).as_bytes())
}

/// Reads and validates `answers.jsonl`; returns one entry per expected pair, sorted.
pub fn bridge_import(job_dir: &Path) -> Result<Vec<AnswerLogEntry>> {
    let questions = read_job_questions(job_dir)?;
    let entries = read_answers_jsonl(&job_dir.join(ANSWERS_FILE))?;
    let answers = check_log(&expected_pairs(&questions), &entries)?;
    Ok(answers
        .into_iter()
        .map(|((question_id, pert_id), answer)| AnswerLogEntry {
            question_id,
            pert_id,
            answer,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{read_feature_file, ObjectRef};
    use crate::swapplan::{PlannedSwap, SwapCandidate, SwapKind};

    fn item(qid: &str, perts: &[u32]) -> ExportItem {
        let base = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let boxes = vec![
            BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap(),
        ];
        let swaps = perts
            .iter()
            .map(|&p| PlannedSwap {
                pert_id: p,
                candidate: SwapCandidate {
                    kind: SwapKind::Class,
                    source_detection_index: 1,
                    donor: ObjectRef {
                        image_id: "other".into(),
                        object_id: "o".into(),
                    },
                    donor_class: "car".into(),
                    donor_attributes: BTreeSet::new(),
                    padded: false,
                },
            })
            .collect();
        let perturbations = perts
            .iter()
            .map(|&p| {
                (
                    p,
                    crate::perturb::apply_swap(&base, 1, &[p as f32, 0.0]).unwrap(),
                )
            })
            .collect();
        ExportItem {
            question_id: qid.into(),
            image_id: "img".into(),
            text: "Is there a car?".into(),
            base,
            boxes,
            plan: SwapPlan {
                question_id: qid.into(),
                swaps,
            },
            perturbations,
        }
    }

    fn export(dir: &Path) -> Vec<JobQuestion> {
        let summary =
            bridge_export(dir, [Ok(item("q1", &[1, 2, 3])), Ok(item("q2", &[]))]).unwrap();
        assert_eq!(
            summary,
            ExportSummary {
                questions: 2,
                feature_files: 5
            }
        );
        read_job_questions(dir).unwrap()
    }

    #[test]
    fn echo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let questions = export(dir.path());
        assert_eq!(questions[0].pert_ids, vec![0, 1, 2, 3]);
        assert_eq!(questions[1].pert_ids, vec![0]);
        let (m, _) = read_feature_file(dir.path().join("features/q1.2.smfx")).unwrap();
        assert_eq!(m.row(1), &[2.0, 0.0]);
        let echo: Vec<_> = expected_pairs(&questions)
            .into_iter()
            .map(|(q, p)| AnswerLogEntry::new(q, p, "Echo"))
            .collect();
        write_answers_jsonl(&dir.path().join(ANSWERS_FILE), &echo).unwrap();
        let log = bridge_import(dir.path()).unwrap();
        assert_eq!(log.len(), 5);
        assert!(log.iter().all(|e| e.answer == "echo"));
    }

    #[test]
    fn missing_pair_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let questions = export(dir.path());
        let partial: Vec<_> = expected_pairs(&questions)
            .into_iter()
            .filter(|(q, p)| !(q == "q1" && *p == 3))
            .map(|(q, p)| AnswerLogEntry::new(q, p, "yes"))
            .collect();
        match check_log(&expected_pairs(&questions), &partial) {
            Err(Error::IncompleteLog { missing, conflicts }) => {
                assert_eq!(missing, vec![("q1".to_string(), 3)]);
                assert!(conflicts.is_empty());
            }
            other => panic!("expected IncompleteLog, got {other:?}"),
        }
    }

    #[test]
    fn conflicting_duplicates_are_rejected_identical_ones_are_not() {
        let expected: BTreeSet<_> = [("q1".to_string(), 0), ("q1".to_string(), 1)].into();
        let mut log = vec![
            AnswerLogEntry::new("q1", 0, "yes"),
            AnswerLogEntry::new("q1", 1, "yes"),
            AnswerLogEntry::new("q1", 1, " YES"),
        ];
        assert_eq!(check_log(&expected, &log).unwrap().len(), 2);
        log.push(AnswerLogEntry::new("q1", 1, "no"));
        match check_log(&expected, &log) {
            Err(Error::IncompleteLog { missing, conflicts }) => {
                assert!(missing.is_empty());
                assert_eq!(conflicts, vec![("q1".to_string(), 1)]);
            }
            other => panic!("expected IncompleteLog, got {other:?}"),
        }
    }
}
