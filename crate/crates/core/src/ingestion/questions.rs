//! GQA question JSON with semantic programs.
//!
//! Each step is `{"operation": "relate", "argument": "statue,in front of,s (746657)",
//! "dependencies": [0]}`. The ids in the trailing parentheses are the objects selected
//! after the step. An explicit `"selected": [...]` list, when present, takes precedence;
//! that is also the form written back out.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Operation, Question, ReasoningStep};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct RawStep {
    operation: String,
    #[serde(default)]
    argument: String,
    #[serde(default)]
    dependencies: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    selected: Option<Vec<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawQuestion {
    question: String,
    answer: String,
    #[serde(rename = "imageId")]
    image_id: String,
    semantic: Vec<RawStep>,
}

pub fn parse_questions(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions_str(&text)
}

/// Questions come back sorted by `question_id`.
pub fn parse_questions_str(text: &str) -> Result<Vec<Question>> {
    let root: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::MalformedInput(format!("questions: {e}")))?;
    root.into_iter()
        .map(|(question_id, value)| {
            let raw: RawQuestion = serde_json::from_value(value)
                .map_err(|e| Error::MalformedInput(format!("question {question_id}: {e}")))?;
            convert(question_id, raw)
        })
        .collect()
}

fn convert(question_id: String, raw: RawQuestion) -> Result<Question> {
    let program = raw
        .semantic
        .into_iter()
        .enumerate()
        .map(|(i, step)| convert_step(i, step))
        .collect();
    let q = Question {
        question_id,
        image_id: raw.image_id,
        text: raw.question,
        gt_answer: raw.answer,
        program,
    };
    q.validate()?;
    Ok(q)
}

fn convert_step(index: usize, raw: RawStep) -> ReasoningStep {
    let mut words = raw.operation.trim().splitn(2, ' ');
    let operation = Operation::parse(words.next().unwrap_or_default());
    let qualifier = words
        .next()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let (arg_text, bracket_ids) = split_bracket_ids(raw.argument.trim());
    let separator = separator_for(&operation, qualifier.as_deref());
    let arguments = if arg_text.is_empty() || arg_text == "?" {
        Vec::new()
    } else {
        arg_text
            .split(separator)
            .map(|s| s.trim().to_string())
            .collect()
    };
    ReasoningStep {
        step_index: index,
        operation,
        qualifier,
        arguments,
        dependencies: raw.dependencies,
        selected_object_ids: raw.selected.unwrap_or(bracket_ids),
    }
}

fn separator_for(op: &Operation, qualifier: Option<&str>) -> char {
    if *op == Operation::Choose && qualifier != Some("rel") {
        '|'
    } else {
        ','
    }
}

/// Splits `"tree (123,456)"` into `("tree", ["123", "456"])`; `(-)` means no objects.
fn split_bracket_ids(arg: &str) -> (&str, Vec<String>) {
    let Some(open) = arg.rfind(" (") else {
        return (arg, Vec::new());
    };
    let Some(inner) = arg[open + 2..].strip_suffix(')') else {
        return (arg, Vec::new());
    };
    let is_id_list = inner
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == ',' || c == '-' || c == '_' || c == ' ');
    if !is_id_list {
        return (arg, Vec::new());
    }
    let ids = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "-")
        .map(String::from)
        .collect();
    (arg[..open].trim_end(), ids)
}

pub fn questions_to_string(questions: &[Question]) -> Result<String> {
    let out: BTreeMap<&str, RawQuestion> = questions
        .iter()
        .map(|q| {
            let semantic = q
                .program
                .iter()
                .map(|s| {
                    let operation = match &s.qualifier {
                        Some(qual) => format!("{} {qual}", s.operation),
                        None => s.operation.to_string(),
                    };
                    let sep = separator_for(&s.operation, s.qualifier.as_deref()).to_string();
                    let argument = if s.arguments.is_empty() && s.operation == Operation::Exist {
                        "?".to_string()
                    } else {
                        s.arguments.join(&sep)
                    };
                    RawStep {
                        operation,
                        argument,
                        dependencies: s.dependencies.clone(),
                        selected: Some(s.selected_object_ids.clone()),
                    }
                })
                .collect();
            (
                q.question_id.as_str(),
                RawQuestion {
                    question: q.text.clone(),
                    answer: q.gt_answer.clone(),
                    image_id: q.image_id.clone(),
                    semantic,
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&out).map_err(|e| Error::MalformedInput(e.to_string()))
}

pub fn write_questions(path: impl AsRef<Path>, questions: &[Question]) -> Result<()> {
    let text = questions_to_string(questions)?;
    super::write_atomic(path.as_ref(), text.as_bytes())
}
