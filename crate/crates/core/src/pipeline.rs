//! Context identification → plan → perturb → answer → report, per question.
//!
//! Each stage is a pure function of the session and one question, so callers
//! may fan questions out over threads and merge results keyed by question id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{identify_context, match_detections, MatchTable, DEFAULT_IOU_THRESHOLD};
use crate::domain::{ContextSet, EmbeddingTable, FeatureMatrix, Question};
use crate::encoder::{Encoder, EncoderSeeds};
use crate::error::{Error, Result};
use crate::ingestion::{read_feature_file, write_atomic, DatasetBundle, ImageFeatures};
use crate::metrics::{compute_report, Exclusion, RobustnessReport};
use crate::models::{model_answer, AnnotationEdit, AnswerLogEntry, ModelInput, VqaModel};
use crate::perturb::{
    dump_perturbations, materialize_perturbations, DetectorDonors, DonorFeatures, Materialized,
    PerfectSightDonors, SkippedPerturbation,
};
use crate::swapplan::{build_swap_plan, ClassRanker, PlanInput, PlanOptions, SwapPlan};

pub const DEFAULT_ENCODER_DIM: usize = 64;

/// Skip list written next to the SMFX dumps by [`Session::perturb_to_dir`].
pub const SKIPPED_FILE: &str = "skipped.jsonl";

/// Where the visual input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualMode {
    /// Detector features loaded from SMFX files.
    #[default]
    Frcnn,
    /// Encodings of the ground-truth annotations.
    Perfect,
}

impl FromStr for VisualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frcnn" => Ok(VisualMode::Frcnn),
            "perfect" => Ok(VisualMode::Perfect),
            other => Err(Error::InvalidArgument(format!(
                "mode must be frcnn or perfect, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for VisualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VisualMode::Frcnn => "frcnn",
            VisualMode::Perfect => "perfect",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub plan: PlanOptions,
    pub iou_threshold: f64,
    pub visual: VisualMode,
    pub encoder_dim: usize,
    pub encoder_seeds: EncoderSeeds,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            plan: PlanOptions::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            visual: VisualMode::Frcnn,
            encoder_dim: DEFAULT_ENCODER_DIM,
            encoder_seeds: EncoderSeeds::default(),
        }
    }
}

/// Answers for one question: pert 0 plus every emitted perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRun {
    pub entries: Vec<AnswerLogEntry>,
    /// The plan restricted to emitted perturbations.
    pub emitted: SwapPlan,
    pub skipped: Vec<SkippedPerturbation>,
}

#[derive(Debug, Clone)]
pub struct Diagnosis {
    /// Full plans (including swaps later skipped), keyed by question id.
    pub plans: BTreeMap<String, SwapPlan>,
    pub log: Vec<AnswerLogEntry>,
    pub report: RobustnessReport,
}

/// Loaded data plus everything derived once per run: visual inputs, match tables, class ranker.
pub struct Session<'a> {
    pub bundle: &'a DatasetBundle,
    pub options: PipelineOptions,
    encoder: Option<Encoder<'a>>,
    encoded: BTreeMap<String, ImageFeatures>,
    matches: BTreeMap<String, MatchTable>,
    ranker: ClassRanker<'a>,
}

impl<'a> Session<'a> {
    pub fn new(
        bundle: &'a DatasetBundle,
        table: &'a EmbeddingTable,
        options: PipelineOptions,
    ) -> Result<Self> {
        let ranker = ClassRanker::new(table, bundle.classes());
        let mut encoder = None;
        let mut encoded = BTreeMap::new();
        let mut matches = BTreeMap::new();
        match options.visual {
            VisualMode::Frcnn => {
                for (image_id, feats) in &bundle.features {
                    let Some(g) = bundle.scene_graphs.get(image_id) else {
                        log::warn!("features for unknown image {image_id} ignored");
                        continue;
                    };
                    matches.insert(
                        image_id.clone(),
                        match_detections(g, &feats.detections, options.iou_threshold)?,
                    );
                }
            }
            VisualMode::Perfect => {
                let enc = Encoder::new(table, options.encoder_dim, options.encoder_seeds)?;
                for (image_id, g) in &bundle.scene_graphs {
                    if g.objects.is_empty() {
                        continue;
                    }
                    encoded.insert(image_id.clone(), enc.encode_scene(g)?);
                    matches.insert(image_id.clone(), MatchTable::identity(g));
                }
                encoder = Some(enc);
            }
        }
        Ok(Session {
            bundle,
            options,
            encoder,
            encoded,
            matches,
            ranker,
        })
    }

    pub fn features(&self, image_id: &str) -> Option<&ImageFeatures> {
        match self.options.visual {
            VisualMode::Frcnn => self.bundle.features.get(image_id),
            VisualMode::Perfect => self.encoded.get(image_id),
        }
    }

    pub fn match_table(&self, image_id: &str) -> Option<&MatchTable> {
        self.matches.get(image_id)
    }

    pub fn match_tables(&self) -> &BTreeMap<String, MatchTable> {
        &self.matches
    }

    /// Why the question cannot be run at all in this session, if so.
    pub fn unavailable_reason(&self, q: &Question) -> Option<String> {
        match (self.features(&q.image_id), self.match_table(&q.image_id)) {
            (Some(_), Some(_)) => None,
            _ => Some(format!("no visual features for image {}", q.image_id)),
        }
    }

    /// Questions left out of the metrics, with reasons, in question order.
    pub fn exclusions(&self, model: Option<&dyn VqaModel>) -> Vec<Exclusion> {
        self.bundle
            .questions
            .iter()
            .filter_map(|q| {
                let reason = self
                    .unavailable_reason(q)
                    .or_else(|| model.and_then(|m| m.exclusion_reason(q)))?;
                log::info!("question {} excluded: {reason}", q.question_id);
                Some(Exclusion {
                    question_id: q.question_id.clone(),
                    reason,
                })
            })
            .collect()
    }

    fn available(&self, q: &Question) -> Result<(&ImageFeatures, &MatchTable)> {
        match (self.features(&q.image_id), self.match_table(&q.image_id)) {
            (Some(f), Some(m)) => Ok((f, m)),
            _ => Err(Error::InvalidArgument(format!(
                "question {}: no visual features for image {}",
                q.question_id, q.image_id
            ))),
        }
    }

    pub fn context(&self, q: &Question) -> Result<ContextSet> {
        let (_, mt) = self.available(q)?;
        let g = self.graph(q)?;
        identify_context(q, g, mt, self.options.plan.mode)
    }

    fn graph(&self, q: &Question) -> Result<&'a crate::domain::SceneGraph> {
        self.bundle
            .scene_graphs
            .get(&q.image_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image {}", q.image_id)))
    }

    pub fn plan_question(&self, q: &Question) -> Result<SwapPlan> {
        let (feats, mt) = self.available(q)?;
        let context = self.context(q)?;
        let input = PlanInput {
            question: q,
            context: &context,
            graph: self.graph(q)?,
            matches: mt,
            detections: Some(&feats.detections),
        };
        build_swap_plan(input, self.bundle, &self.ranker, &self.options.plan)
    }

    /// Plans for every question that has visual input, keyed by question id.
    pub fn plan_all(&self) -> Result<BTreeMap<String, SwapPlan>> {
        self.bundle
            .questions
            .iter()
            .filter(|q| self.unavailable_reason(q).is_none())
            .map(|q| Ok((q.question_id.clone(), self.plan_question(q)?)))
            .collect()
    }

    pub fn ranker(&self) -> &ClassRanker<'a> {
        &self.ranker
    }

    pub fn donors_for(&self, q: &Question) -> Result<Box<dyn DonorFeatures + '_>> {
        Ok(match &self.encoder {
            None => Box::new(DetectorDonors {
                bundle: self.bundle,
                match_tables: &self.matches,
            }),
            Some(encoder) => Box::new(PerfectSightDonors {
                encoder,
                graph: self.graph(q)?,
            }),
        })
    }

    pub fn perturb_question(
        &self,
        q: &Question,
        plan: &SwapPlan,
    ) -> Result<(&FeatureMatrix, Materialized)> {
        let (feats, _) = self.available(q)?;
        let donors = self.donors_for(q)?;
        Ok((
            &feats.features,
            materialize_perturbations(&feats.features, plan, donors.as_ref())?,
        ))
    }

    /// Answers pert 0 and every emitted perturbation of `plan`.
    pub fn run_question(
        &self,
        model: &dyn VqaModel,
        q: &Question,
        plan: &SwapPlan,
    ) -> Result<QuestionRun> {
        let (base, (emitted, skipped)) = self.perturb_question(q, plan)?;
        let perturbed = emitted.into_iter().map(|(pert, (_, m))| (pert, m));
        self.answer_question(model, q, plan, base, perturbed, skipped)
    }

    /// Like [`Session::run_question`] but with perturbed matrices supplied by the caller
    /// (e.g. read back from an SMFX dump).
    pub fn answer_question(
        &self,
        model: &dyn VqaModel,
        q: &Question,
        plan: &SwapPlan,
        base: &FeatureMatrix,
        perturbed: impl IntoIterator<Item = (u32, FeatureMatrix)>,
        skipped: Vec<SkippedPerturbation>,
    ) -> Result<QuestionRun> {
        let (_, mt) = self.available(q)?;
        let graph = self.graph(q)?;
        let by_pert: BTreeMap<u32, _> = plan
            .swaps
            .iter()
            .map(|s| (s.pert_id, &s.candidate))
            .collect();
        let mut entries = vec![AnswerLogEntry {
            question_id: q.question_id.clone(),
            pert_id: 0,
            answer: model_answer(
                model,
                &ModelInput {
                    question: q,
                    features: base,
                    graph,
                    edits: &[],
                },
            ),
        }];
        let mut emitted_ids = BTreeSet::new();
        for (pert_id, features) in perturbed {
            let candidate = by_pert.get(&pert_id).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "question {}: perturbation {pert_id} is not in the plan",
                    q.question_id
                ))
            })?;
            let edits: Vec<AnnotationEdit> = AnnotationEdit::for_candidate(candidate, mt)
                .into_iter()
                .collect();
            let answer = model_answer(
                model,
                &ModelInput {
                    question: q,
                    features: &features,
                    graph,
                    edits: &edits,
                },
            );
            entries.push(AnswerLogEntry {
                question_id: q.question_id.clone(),
                pert_id,
                answer,
            });
            emitted_ids.insert(pert_id);
        }
        Ok(QuestionRun {
            entries,
            emitted: SwapPlan {
                question_id: plan.question_id.clone(),
                swaps: plan
                    .swaps
                    .iter()
                    .filter(|s| emitted_ids.contains(&s.pert_id))
                    .cloned()
                    .collect(),
            },
            skipped,
        })
    }

    /// The report label, e.g. `symbolic (perfect, strict)`.
    pub fn label(&self, model: &dyn VqaModel) -> String {
        format!(
            "{} ({}, {})",
            model.name(),
            self.options.visual,
            self.options.plan.mode
        )
    }

    /// The whole pipeline, sequentially, in question order.
    pub fn diagnose(&self, model: &dyn VqaModel) -> Result<Diagnosis> {
        let plans = self.plan_all()?;
        let exclusions = self.exclusions(Some(model));
        let excluded: BTreeSet<&str> = exclusions.iter().map(|e| e.question_id.as_str()).collect();
        let mut runs = BTreeMap::new();
        for q in &self.bundle.questions {
            if excluded.contains(q.question_id.as_str()) {
                continue;
            }
            runs.insert(
                q.question_id.clone(),
                self.run_question(model, q, &plans[&q.question_id])?,
            );
        }
        let report = self.report(model, runs.values(), exclusions)?;
        let log = runs.into_values().flat_map(|r| r.entries).collect();
        Ok(Diagnosis { plans, log, report })
    }

    /// Writes `{question_id}.{pert_id}.smfx` for pert 0 and every emitted perturbation
    /// of one question; returns the file count and the skips.
    pub fn perturb_question_to_dir(
        &self,
        q: &Question,
        plan: &SwapPlan,
        dir: &Path,
    ) -> Result<(usize, Vec<SkippedPerturbation>)> {
        let (feats, _) = self.available(q)?;
        let (_, (emitted, skipped)) = self.perturb_question(q, plan)?;
        let boxes: Vec<_> = feats.detections.iter().map(|d| d.bbox).collect();
        let written = dump_perturbations(
            dir,
            &q.question_id,
            &feats.features,
            &boxes,
            emitted.into_iter().map(|(p, (_, m))| (p, m)),
        )?;
        Ok((written, skipped))
    }

    /// The perturb stage: SMFX dumps for every planned question plus [`SKIPPED_FILE`].
    pub fn perturb_to_dir(&self, plans: &BTreeMap<String, SwapPlan>, dir: &Path) -> Result<usize> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = 0;
        let mut skipped = Vec::new();
        for q in &self.bundle.questions {
            if self.unavailable_reason(q).is_some() {
                continue;
            }
            let plan = plans
                .get(&q.question_id)
                .cloned()
                .unwrap_or_else(|| empty_plan(q));
            let (n, s) = self.perturb_question_to_dir(q, &plan, dir)?;
            written += n;
            skipped.extend(s);
        }
        write_skipped(&dir.join(SKIPPED_FILE), &skipped)?;
        Ok(written)
    }

    /// Answers one question from SMFX dumps written by the perturb stage.
    pub fn run_question_from_dir(
        &self,
        model: &dyn VqaModel,
        q: &Question,
        plan: &SwapPlan,
        dir: &Path,
        skipped: &BTreeSet<(String, u32)>,
    ) -> Result<QuestionRun> {
        let (base, _) = read_feature_file(dir.join(format!("{}.0.smfx", q.question_id)))?;
        let mut perturbed = Vec::new();
        let mut skips = Vec::new();
        for s in &plan.swaps {
            if skipped.contains(&(q.question_id.clone(), s.pert_id)) {
                skips.push(SkippedPerturbation {
                    question_id: q.question_id.clone(),
                    pert_id: s.pert_id,
                    reason: "skipped by the perturb stage".into(),
                });
                continue;
            }
            let (m, _) =
                read_feature_file(dir.join(format!("{}.{}.smfx", q.question_id, s.pert_id)))?;
            perturbed.push((s.pert_id, m));
        }
        self.answer_question(model, q, plan, &base, perturbed, skips)
    }

    /// The evaluate stage for a built-in model: reads the dumps, answers, scores.
    pub fn evaluate_from_dir(
        &self,
        model: &dyn VqaModel,
        plans: &BTreeMap<String, SwapPlan>,
        dir: &Path,
    ) -> Result<(Vec<AnswerLogEntry>, RobustnessReport)> {
        let skipped = read_skipped(&dir.join(SKIPPED_FILE))?;
        let exclusions = self.exclusions(Some(model));
        let excluded: BTreeSet<&str> = exclusions.iter().map(|e| e.question_id.as_str()).collect();
        let mut runs = Vec::new();
        for q in &self.bundle.questions {
            if excluded.contains(q.question_id.as_str()) {
                continue;
            }
            let plan = plans
                .get(&q.question_id)
                .cloned()
                .unwrap_or_else(|| empty_plan(q));
            runs.push(self.run_question_from_dir(model, q, &plan, dir, &skipped)?);
        }
        let report = self.report(model, &runs, exclusions)?;
        Ok((runs.into_iter().flat_map(|r| r.entries).collect(), report))
    }

    /// Scores an externally produced log (e.g. from the bridge). `plans` are the
    /// full plans; pairs listed in `skipped` are not expected in the log, nor are
    /// questions listed in `exclusions`.
    pub fn report_from_log(
        &self,
        model_name: &str,
        exclusions: Vec<Exclusion>,
        plans: &BTreeMap<String, SwapPlan>,
        skipped: &BTreeSet<(String, u32)>,
        log: &[AnswerLogEntry],
    ) -> Result<RobustnessReport> {
        let emitted: BTreeMap<String, SwapPlan> = plans
            .iter()
            .map(|(qid, p)| {
                let swaps = p
                    .swaps
                    .iter()
                    .filter(|s| !skipped.contains(&(qid.clone(), s.pert_id)))
                    .cloned()
                    .collect();
                (
                    qid.clone(),
                    SwapPlan {
                        question_id: qid.clone(),
                        swaps,
                    },
                )
            })
            .collect();
        let mut report = compute_report(&self.bundle.questions, log, &emitted, exclusions)?;
        report.label = format!(
            "{model_name} ({}, {})",
            self.options.visual, self.options.plan.mode
        );
        report.k = Some(self.options.plan.k);
        report.skipped = skipped.len();
        Ok(report)
    }

    /// Scores finished runs; the runs may come from any number of workers.
    pub fn report<'r>(
        &self,
        model: &dyn VqaModel,
        runs: impl IntoIterator<Item = &'r QuestionRun>,
        exclusions: Vec<Exclusion>,
    ) -> Result<RobustnessReport> {
        let mut log = Vec::new();
        let mut emitted = BTreeMap::new();
        let mut skipped = 0;
        for r in runs {
            log.extend(r.entries.iter().cloned());
            emitted.insert(r.emitted.question_id.clone(), r.emitted.clone());
            skipped += r.skipped.len();
        }
        let mut report = compute_report(&self.bundle.questions, &log, &emitted, exclusions)?;
        report.label = self.label(model);
        report.k = Some(self.options.plan.k);
        report.skipped = skipped;
        Ok(report)
    }
}

/// The plan of a question with no context objects. plans.jsonl has one line per
/// swap, so such questions have no line at all.
pub fn empty_plan(q: &Question) -> SwapPlan {
    SwapPlan {
        question_id: q.question_id.clone(),
        swaps: Vec::new(),
    }
}

pub fn write_skipped(path: &Path, skipped: &[SkippedPerturbation]) -> Result<()> {
    let mut out = String::new();
    for s in skipped {
        out.push_str(&serde_json::to_string(s).expect("skip line serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a skip list; a missing file means nothing was skipped.
pub fn read_skipped(path: &Path) -> Result<BTreeSet<(String, u32)>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let s: SkippedPerturbation = serde_json::from_str(l)
                .map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))?;
            Ok((s.question_id, s.pert_id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "perfect".parse::<VisualMode>().unwrap(),
            VisualMode::Perfect
        );
        assert_eq!(VisualMode::Frcnn.to_string(), "frcnn");
        assert!("rcnn".parse::<VisualMode>().is_err());
    }
}
