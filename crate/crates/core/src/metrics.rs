//! Accuracy, context reliance and effective accuracy over answer logs.
//!
//! For question i with answers a_0 (unperturbed) .. a_n and ground truth gt:
//! correct0 = (a_0 == gt); reliant = correct0 and a_j != a_0 for some j >= 1;
//! q_i = 1 iff a_j == gt for every j including 0. Percentages are exact
//! integer ratios rounded half-to-even at two decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};

use crate::domain::Question;
use crate::error::{Error, Result};
use crate::models::{check_log, normalize_answer, AnswerLogEntry};
use crate::swapplan::{SwapKind, SwapPlan};

pub const REPORT_SCHEMA: u32 = 1;

/// A percentage in hundredths (7555 = 75.55%).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(pub u32);

impl Percent {
    /// `num / den * 100`, rounded half-to-even to two decimals. `den = 0` gives 0.
    pub fn ratio(num: usize, den: usize) -> Percent {
        if den == 0 {
            return Percent(0);
        }
        let scaled = num as u128 * 10_000;
        let den = den as u128;
        let (mut q, r) = (scaled / den, scaled % den);
        if 2 * r > den || (2 * r == den && q % 2 == 1) {
            q += 1;
        }
        Percent(q as u32)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    fn json(self) -> Value {
        Value::Number(
            Number::from_str(&self.to_string()).expect("two-decimal literal is a JSON number"),
        )
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{}.{:02}", self.0 / 100, self.0 % 100);
        f.pad(&s)
    }
}

impl FromStr for Percent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedInput(format!("not a two-decimal percentage: {s:?}"));
        let (int, frac) = s.trim().split_once('.').ok_or_else(bad)?;
        if frac.len() != 2 {
            return Err(bad());
        }
        let int: u32 = int.parse().map_err(|_| bad())?;
        let frac: u32 = frac.parse().map_err(|_| bad())?;
        Ok(Percent(int * 100 + frac))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub correct0: bool,
    pub answer0: String,
    pub changed_by: BTreeSet<u32>,
    pub q: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub question_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RobustnessReport {
    pub label: String,
    pub k: Option<usize>,
    /// Raw question count, before exclusions.
    pub n_total: usize,
    /// Evaluated questions; the denominator of accuracy and effective accuracy.
    pub n: usize,
    pub correct: usize,
    pub reliant: usize,
    pub effective: usize,
    pub class_reliant: usize,
    pub attr_reliant: usize,
    /// Perturbations that were evaluated (pert_id >= 1).
    pub perturbations: usize,
    /// Planned perturbations that could not be materialized.
    pub skipped: usize,
    pub per_question: Vec<QuestionOutcome>,
    pub excluded: Vec<Exclusion>,
}

impl RobustnessReport {
    pub fn accuracy(&self) -> Percent {
        Percent::ratio(self.correct, self.n)
    }

    pub fn context_reliance(&self) -> Percent {
        Percent::ratio(self.reliant, self.correct)
    }

    pub fn effective_accuracy(&self) -> Percent {
        Percent::ratio(self.effective, self.n)
    }

    pub fn class_reliance(&self) -> Percent {
        Percent::ratio(self.class_reliant, self.correct)
    }

    pub fn attr_reliance(&self) -> Percent {
        Percent::ratio(self.attr_reliant, self.correct)
    }

    pub fn summary(&self) -> ReportRow {
        ReportRow {
            label: self.label.clone(),
            k: self.k,
            n: self.n,
            n_total: self.n_total,
            accuracy: self.accuracy().to_string(),
            context_reliance: self.context_reliance().to_string(),
            effective_accuracy: self.effective_accuracy().to_string(),
            class_reliance: self.class_reliance().to_string(),
            attr_reliance: self.attr_reliance().to_string(),
            perturbations: self.perturbations,
            skipped: self.skipped,
        }
    }
}

/// `accuracy * (1 - reliance / 100)`, the value effective accuracy must equal.
pub fn identity_effective(accuracy: f64, reliance: f64) -> f64 {
    accuracy * (1.0 - reliance / 100.0)
}

/// Scores the log. `plans` holds the evaluated swaps per question (questions
/// without context may be absent); every `(question, pert_id)` in them plus
/// pert 0 of every non-excluded question must be answered.
pub fn compute_report(
    questions: &[Question],
    logs: &[AnswerLogEntry],
    plans: &BTreeMap<String, SwapPlan>,
    excluded: Vec<Exclusion>,
) -> Result<RobustnessReport> {
    let excluded_ids: BTreeSet<&str> = excluded.iter().map(|e| e.question_id.as_str()).collect();
    let evaluated: Vec<&Question> = questions
        .iter()
        .filter(|q| !excluded_ids.contains(q.question_id.as_str()))
        .collect();

    let mut expected = BTreeSet::new();
    let mut kinds: BTreeMap<(&str, u32), SwapKind> = BTreeMap::new();
    for q in &evaluated {
        expected.insert((q.question_id.clone(), 0));
        if let Some(plan) = plans.get(&q.question_id) {
            for s in &plan.swaps {
                expected.insert((q.question_id.clone(), s.pert_id));
                kinds.insert((q.question_id.as_str(), s.pert_id), s.candidate.kind);
            }
        }
    }
    let answers = check_log(&expected, logs)?;

    let mut report = RobustnessReport {
        n_total: questions.len(),
        n: evaluated.len(),
        perturbations: expected.len() - evaluated.len(),
        excluded,
        ..Default::default()
    };
    for q in evaluated {
        let qid = q.question_id.as_str();
        let gt = normalize_answer(&q.gt_answer);
        let of_question = answers.range((qid.to_string(), 0)..=(qid.to_string(), u32::MAX));
        let mut answer0 = "";
        let mut changed_by = BTreeSet::new();
        let mut all_match_gt = true;
        for ((_, pert), a) in of_question {
            if *pert == 0 {
                answer0 = a;
            }
            all_match_gt &= *a == gt;
        }
        for ((_, pert), a) in answers.range((qid.to_string(), 1)..=(qid.to_string(), u32::MAX)) {
            if a != answer0 {
                changed_by.insert(*pert);
            }
        }
        let correct0 = answer0 == gt;
        if correct0 {
            report.correct += 1;
            if !changed_by.is_empty() {
                report.reliant += 1;
                let has = |kind| {
                    changed_by
                        .iter()
                        .any(|p| kinds.get(&(qid, *p)) == Some(&kind))
                };
                report.class_reliant += has(SwapKind::Class) as usize;
                report.attr_reliant += has(SwapKind::Attribute) as usize;
            }
        }
        report.effective += all_match_gt as usize;
        report.per_question.push(QuestionOutcome {
            question_id: qid.to_string(),
            correct0,
            answer0: answer0.to_string(),
            changed_by,
            q: all_match_gt as u8,
        });
    }
    report
        .per_question
        .sort_by(|a, b| a.question_id.cmp(&b.question_id));
    report.excluded.sort();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

pub fn emit_report(report: &RobustnessReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report_json(report),
        ReportFormat::Text => report_text(report),
        ReportFormat::Csv => report_csv(report),
    }
}

fn report_json(r: &RobustnessReport) -> String {
    let per_question: Vec<Value> = r
        .per_question
        .iter()
        .map(|o| {
            json!({
                "question_id": o.question_id,
                "correct0": o.correct0,
                "answer0": o.answer0,
                "changed_by": o.changed_by,
                "q": o.q,
            })
        })
        .collect();
    // serde_json's Map is a BTreeMap here, so keys come out sorted.
    let mut m = Map::new();
    m.insert("schema".into(), json!(REPORT_SCHEMA));
    m.insert("label".into(), json!(r.label));
    m.insert("k".into(), json!(r.k));
    m.insert("n".into(), json!(r.n));
    m.insert("n_total".into(), json!(r.n_total));
    m.insert("correct".into(), json!(r.correct));
    m.insert("reliant".into(), json!(r.reliant));
    m.insert("effective".into(), json!(r.effective));
    m.insert("class_reliant".into(), json!(r.class_reliant));
    m.insert("attr_reliant".into(), json!(r.attr_reliant));
    m.insert("perturbations".into(), json!(r.perturbations));
    m.insert("skipped".into(), json!(r.skipped));
    m.insert("accuracy".into(), r.accuracy().json());
    m.insert("context_reliance".into(), r.context_reliance().json());
    m.insert("effective_accuracy".into(), r.effective_accuracy().json());
    m.insert("class_reliance".into(), r.class_reliance().json());
    m.insert("attr_reliance".into(), r.attr_reliance().json());
    m.insert("per_question".into(), Value::Array(per_question));
    m.insert("excluded".into(), json!(r.excluded));
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("report serializes");
    s.push('\n');
    s
}

fn report_text(r: &RobustnessReport) -> String {
    let label = if r.label.is_empty() {
        "model"
    } else {
        &r.label
    };
    let w = label.len().max(5);
    let mut s = String::new();
    s.push_str(&format!(
        "{:<w$}  {:>6}  {:>16}  {:>14}\n",
        "Model", "Acc.", "Context Reliance", "Effective Acc."
    ));
    s.push_str(&format!(
        "{:<w$}  {:>6}  {:>16}  {:>14}\n\n",
        label,
        r.accuracy(),
        r.context_reliance(),
        r.effective_accuracy()
    ));
    s.push_str(&format!(
        "{:<w$}  {:>3}  {:>16}  {:>16}\n",
        "Model", "k", "Class Reliance", "Attr. Reliance"
    ));
    let k = r.k.map_or("-".to_string(), |k| k.to_string());
    s.push_str(&format!(
        "{:<w$}  {:>3}  {:>16}  {:>16}\n\n",
        label,
        k,
        r.class_reliance(),
        r.attr_reliance()
    ));
    s.push_str(&format!(
        "questions: {} evaluated of {} ({} excluded); correct {}, reliant {}, effective {}\n",
        r.n,
        r.n_total,
        r.excluded.len(),
        r.correct,
        r.reliant,
        r.effective
    ));
    s.push_str(&format!(
        "perturbations: {} evaluated, {} skipped\n",
        r.perturbations, r.skipped
    ));
    for e in &r.excluded {
        s.push_str(&format!("excluded {}: {}\n", e.question_id, e.reason));
    }
    s
}

/// One CSV row of headline numbers; percentages kept as their two-decimal text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub k: Option<usize>,
    pub n: usize,
    pub n_total: usize,
    pub accuracy: String,
    pub context_reliance: String,
    pub effective_accuracy: String,
    pub class_reliance: String,
    pub attr_reliance: String,
    pub perturbations: usize,
    pub skipped: usize,
}

fn report_csv(r: &RobustnessReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(r.summary()).expect("csv row serializes");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let row: ReportRow = row.map_err(|e| Error::MalformedInput(format!("report csv: {e}")))?;
        for p in [
            &row.accuracy,
            &row.context_reliance,
            &row.effective_accuracy,
            &row.class_reliance,
            &row.attr_reliance,
        ] {
            p.parse::<Percent>()?;
        }
        rows.push(row);
    }
    Ok(rows)
}
