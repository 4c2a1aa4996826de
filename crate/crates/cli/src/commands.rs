use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use swapmix_core::augment::{augment_features, manifest_jsonl, AppliedSwap};
use swapmix_core::domain::{BoundingBox, EmbeddingTable, FeatureMatrix, Question};
use swapmix_core::ingestion::{
    encode_smfx, load_embeddings, load_feature_dir, parse_questions, parse_scene_graphs,
    write_atomic, DatasetBundle,
};
use swapmix_core::metrics::{emit_report, Exclusion, ReportFormat, RobustnessReport};
use swapmix_core::models::{
    bridge_export, bridge_import, check_log, read_answers_jsonl, write_answers_jsonl,
    AnswerLogEntry, BaselineModel, ExportItem, SymbolicModel, VqaModel, PLANS_FILE,
};
use swapmix_core::pipeline::{
    empty_plan, read_skipped, write_skipped, QuestionRun, Session, VisualMode, SKIPPED_FILE,
};
use swapmix_core::swapplan::{parse_plans_jsonl, plans_to_jsonl, PlanInput, SwapPlan};
use swapmix_core::synth::{generate, SynthConfig};
use swapmix_core::Error;

use crate::args::{Command, FixtureArgs, ModelArg, RunArgs};

pub enum CliError {
    /// Bad flags or missing inputs: exit 2.
    Usage(String),
    /// Anything wrong with the data itself: exit 1.
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult<()> {
    if let Command::GenFixtures(f) = &command {
        return gen_fixtures(f);
    }
    let (Command::Diagnose(args)
    | Command::Plan(args)
    | Command::Perturb(args)
    | Command::Evaluate(args)
    | Command::Augment(args)
    | Command::ExportBridge(args)
    | Command::ImportBridge(args)) = &command
    else {
        unreachable!("gen-fixtures handled above")
    };
    args.validate().map_err(CliError::Usage)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let data = Data::load(args)?;
    let session = Session::new(&data.bundle, &data.table, args.pipeline_options())?;
    pool.install(|| match &command {
        Command::Diagnose(a) => diagnose(&session, a),
        Command::Plan(a) => plan(&session, a),
        Command::Perturb(a) => perturb(&session, a),
        Command::Evaluate(a) => evaluate(&session, a),
        Command::Augment(a) => augment(&session, a),
        Command::ExportBridge(a) => export_bridge(&session, a),
        Command::ImportBridge(a) => import_bridge(&session, a),
        Command::GenFixtures(_) => unreachable!(),
    })
}

fn require<'p>(path: &'p Option<PathBuf>, flag: &str) -> CliResult<&'p Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required flag {flag}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!(
            "{flag}: {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

struct Data {
    bundle: DatasetBundle,
    table: EmbeddingTable,
}

impl Data {
    fn load(args: &RunArgs) -> CliResult<Self> {
        let sg = require(&args.scene_graphs, "--scene-graphs")?;
        let qs = require(&args.questions, "--questions")?;
        let emb = require(&args.embeddings, "--embeddings")?;
        let feats = match args.visual() {
            VisualMode::Frcnn => Some(require(&args.features, "--features")?),
            VisualMode::Perfect => None,
        };
        let scene_graphs = parse_scene_graphs(sg)?;
        let questions = parse_questions(qs)?;
        let features = match feats {
            Some(dir) => load_feature_dir(dir, scene_graphs.keys())?,
            None => BTreeMap::new(),
        };
        let table = load_embeddings(emb)?;
        let bundle = DatasetBundle::new(scene_graphs, questions, features)?;
        log::info!(
            "loaded {} images, {} questions, {} feature files, {} embeddings",
            bundle.scene_graphs.len(),
            bundle.questions.len(),
            bundle.features.len(),
            table.len()
        );
        Ok(Data { bundle, table })
    }
}

fn build_model(session: &Session<'_>, model: ModelArg) -> CliResult<Box<dyn VqaModel>> {
    match model {
        ModelArg::Symbolic => Ok(Box::new(SymbolicModel::default())),
        ModelArg::Baseline => {
            let examples = session
                .bundle
                .questions
                .iter()
                .filter_map(|q| session.features(&q.image_id).map(|f| (q, &f.features)));
            Ok(Box::new(BaselineModel::train(examples)?))
        }
        ModelArg::Bridge => Err(CliError::Usage(
            "--model bridge answers come from outside: use export-bridge, then import-bridge \
             (or evaluate --answers)"
                .into(),
        )),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_plans(path: &Path) -> CliResult<BTreeMap<String, SwapPlan>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(parse_plans_jsonl(&text)?)
}

/// Questions with visual input, in dataset order.
fn available<'s>(session: &'s Session<'_>) -> Vec<&'s Question> {
    session
        .bundle
        .questions
        .iter()
        .filter(|q| session.unavailable_reason(q).is_none())
        .collect()
}

fn plan_parallel(session: &Session<'_>) -> CliResult<BTreeMap<String, SwapPlan>> {
    let plans: Vec<(String, SwapPlan)> = available(session)
        .par_iter()
        .map(|q| Ok((q.question_id.clone(), session.plan_question(q)?)))
        .collect::<Result<_, Error>>()?;
    Ok(plans.into_iter().collect())
}

/// Stage plans: read from --plans if given, otherwise planned now.
fn plans_for(session: &Session<'_>, args: &RunArgs) -> CliResult<BTreeMap<String, SwapPlan>> {
    match &args.plans {
        Some(_) => read_plans(require(&args.plans, "--plans")?),
        None => plan_parallel(session),
    }
}

/// Non-excluded questions paired with their plans (questions without swaps have no
/// line in plans.jsonl and get an empty plan).
fn scored<'s>(
    session: &'s Session<'_>,
    exclusions: &[Exclusion],
    plans: &BTreeMap<String, SwapPlan>,
) -> Vec<(&'s Question, SwapPlan)> {
    let excluded: BTreeSet<&str> = exclusions.iter().map(|e| e.question_id.as_str()).collect();
    session
        .bundle
        .questions
        .iter()
        .filter(|q| !excluded.contains(q.question_id.as_str()))
        .map(|q| {
            (
                q,
                plans
                    .get(&q.question_id)
                    .cloned()
                    .unwrap_or_else(|| empty_plan(q)),
            )
        })
        .collect()
}

fn write_reports(out: &Path, report: &RobustnessReport, log: &[AnswerLogEntry]) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let text = emit_report(report, ReportFormat::Text);
    write_text(
        &out.join("report.json"),
        &emit_report(report, ReportFormat::Json),
    )?;
    write_text(&out.join("report.txt"), &text)?;
    write_text(
        &out.join("report.csv"),
        &emit_report(report, ReportFormat::Csv),
    )?;
    write_answers_jsonl(&out.join("answers.jsonl"), log)?;
    print!("{text}");
    Ok(())
}

fn perturb_all(
    session: &Session<'_>,
    plans: &BTreeMap<String, SwapPlan>,
    dir: &Path,
) -> CliResult<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let questions = scored(session, &session.exclusions(None), plans);
    let results = questions
        .par_iter()
        .map(|(q, p)| session.perturb_question_to_dir(q, p, dir))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut written = 0;
    let mut skipped = Vec::new();
    for (n, s) in results {
        written += n;
        skipped.extend(s);
    }
    if !skipped.is_empty() {
        log::warn!(
            "{} perturbations skipped (donor without a matched detection)",
            skipped.len()
        );
    }
    write_skipped(&dir.join(SKIPPED_FILE), &skipped)?;
    Ok(written)
}

fn finish_runs(
    session: &Session<'_>,
    model: &dyn VqaModel,
    runs: Vec<QuestionRun>,
) -> CliResult<(RobustnessReport, Vec<AnswerLogEntry>)> {
    let report = session.report(model, &runs, session.exclusions(Some(model)))?;
    let log = runs.into_iter().flat_map(|r| r.entries).collect();
    Ok((report, log))
}

fn diagnose(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let model = build_model(session, args.model)?;
    let plans = plan_parallel(session)?;
    let todo = scored(session, &session.exclusions(Some(model.as_ref())), &plans);
    let runs = todo
        .par_iter()
        .map(|(q, p)| session.run_question(model.as_ref(), q, p))
        .collect::<Result<Vec<_>, Error>>()?;
    let (report, log) = finish_runs(session, model.as_ref(), runs)?;
    write_text(
        &args.out.join("plans.jsonl"),
        &plans_to_jsonl(plans.values()),
    )?;
    if let Some(dir) = &args.dump_features {
        let n = perturb_all(session, &plans, dir)?;
        log::info!("wrote {n} SMFX files to {}", dir.display());
    }
    write_reports(&args.out, &report, &log)
}

fn plan(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let plans = plan_parallel(session)?;
    let swaps: usize = plans.values().map(SwapPlan::len).sum();
    write_text(
        &args.out.join("plans.jsonl"),
        &plans_to_jsonl(plans.values()),
    )?;
    println!(
        "planned {swaps} perturbations for {} questions",
        plans.len()
    );
    Ok(())
}

fn perturb(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let plans = plans_for(session, args)?;
    let dir = args.dump_features.as_ref().unwrap_or(&args.out);
    let n = perturb_all(session, &plans, dir)?;
    println!("wrote {n} SMFX files to {}", dir.display());
    Ok(())
}

fn evaluate(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let plans = read_plans(require(&args.plans, "--plans")?)?;
    let dir = args.dump_features.as_ref().unwrap_or(&args.out);
    let skipped = read_skipped(&dir.join(SKIPPED_FILE))?;

    if args.answers.is_some() {
        let entries = read_answers_jsonl(require(&args.answers, "--answers")?)?;
        // A built-in model's log leaves out the questions that model cannot answer.
        let exclusions = match args.model {
            ModelArg::Bridge => session.exclusions(None),
            m => session.exclusions(Some(build_model(session, m)?.as_ref())),
        };
        let mut expected = BTreeSet::new();
        for (q, p) in scored(session, &exclusions, &plans) {
            expected.insert((q.question_id.clone(), 0));
            for s in &p.swaps {
                if !skipped.contains(&(q.question_id.clone(), s.pert_id)) {
                    expected.insert((q.question_id.clone(), s.pert_id));
                }
            }
        }
        let log: Vec<AnswerLogEntry> = check_log(&expected, &entries)?
            .into_iter()
            .map(|((question_id, pert_id), answer)| AnswerLogEntry {
                question_id,
                pert_id,
                answer,
            })
            .collect();
        let report =
            session.report_from_log(args.model.name(), exclusions, &plans, &skipped, &log)?;
        return write_reports(&args.out, &report, &log);
    }

    let model = build_model(session, args.model)?;
    let todo = scored(session, &session.exclusions(Some(model.as_ref())), &plans);
    let runs = todo
        .par_iter()
        .map(|(q, p)| session.run_question_from_dir(model.as_ref(), q, p, dir, &skipped))
        .collect::<Result<Vec<_>, Error>>()?;
    let (report, log) = finish_runs(session, model.as_ref(), runs)?;
    write_reports(&args.out, &report, &log)
}

struct AugmentedQuestion {
    question_id: String,
    bytes: Vec<u8>,
    applied: Vec<AppliedSwap>,
}

fn augment(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let cfg = args.augment_config();
    let bundle = session.bundle;
    let results = available(session)
        .par_iter()
        .map(|q| -> Result<AugmentedQuestion, Error> {
            let feats = session
                .features(&q.image_id)
                .expect("available question has features");
            let context = session.context(q)?;
            let input = PlanInput {
                question: q,
                context: &context,
                graph: &bundle.scene_graphs[&q.image_id],
                matches: session
                    .match_table(&q.image_id)
                    .expect("available question has matches"),
                detections: Some(&feats.detections),
            };
            let donors = session.donors_for(q)?;
            let out = augment_features(
                &feats.features,
                input,
                bundle,
                session.ranker(),
                donors.as_ref(),
                &cfg,
            )?;
            let boxes: Vec<BoundingBox> = feats.detections.iter().map(|d| d.bbox).collect();
            Ok(AugmentedQuestion {
                question_id: q.question_id.clone(),
                bytes: encode_smfx(&out.features, &boxes)?,
                applied: out.applied,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut applied = Vec::new();
    for r in &results {
        write_atomic(&args.out.join(format!("{}.smfx", r.question_id)), &r.bytes)?;
        applied.extend(r.applied.iter().cloned());
    }
    write_text(&args.out.join("manifest.jsonl"), &manifest_jsonl(&applied))?;
    println!(
        "augmented {} questions (epoch {}), {} swaps applied",
        results.len(),
        cfg.epoch,
        applied.len()
    );
    Ok(())
}

fn export_bridge(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let plans = plans_for(session, args)?;
    let job_dir = args.job_dir.as_ref().unwrap_or(&args.out);
    let items = scored(session, &session.exclusions(None), &plans)
        .into_iter()
        .map(|(q, plan)| {
            let (base, (emitted, skipped)) = session.perturb_question(q, &plan)?;
            if !skipped.is_empty() {
                log::warn!(
                    "question {}: {} perturbations skipped",
                    q.question_id,
                    skipped.len()
                );
            }
            let boxes = session
                .features(&q.image_id)
                .expect("planned question has features")
                .detections
                .iter()
                .map(|d| d.bbox)
                .collect();
            let kept: BTreeSet<u32> = emitted.keys().copied().collect();
            Ok(ExportItem {
                question_id: q.question_id.clone(),
                image_id: q.image_id.clone(),
                text: q.text.clone(),
                base: base.clone(),
                boxes,
                plan: SwapPlan {
                    question_id: plan.question_id.clone(),
                    swaps: plan
                        .swaps
                        .iter()
                        .filter(|s| kept.contains(&s.pert_id))
                        .cloned()
                        .collect(),
                },
                perturbations: emitted
                    .into_iter()
                    .map(|(p, (_, m))| (p, m))
                    .collect::<Vec<(u32, FeatureMatrix)>>(),
            })
        });
    let summary = bridge_export(job_dir, items)?;
    println!(
        "exported {} questions, {} feature files to {}",
        summary.questions,
        summary.feature_files,
        job_dir.display()
    );
    Ok(())
}

fn import_bridge(session: &Session<'_>, args: &RunArgs) -> CliResult<()> {
    let job_dir = require(&args.job_dir, "--job-dir")?;
    let log = bridge_import(job_dir)?;
    let plans = read_plans(&job_dir.join(PLANS_FILE))?;
    let report = session.report_from_log(
        ModelArg::Bridge.name(),
        session.exclusions(None),
        &plans,
        &BTreeSet::new(),
        &log,
    )?;
    write_reports(&args.out, &report, &log)
}

/// A 3×8 matrix exercising signed zero, subnormals and extremes; the same values are
/// hard-coded in the golden-file tests.
pub fn golden_matrix() -> (FeatureMatrix, Vec<BoundingBox>) {
    let mut data: Vec<f32> = (0..24).map(|i| i as f32 * 0.25 - 2.0).collect();
    data[1] = -0.0;
    data[9] = f32::MIN_POSITIVE / 2.0;
    data[15] = f32::MAX;
    data[22] = 1.0e-7;
    let boxes = vec![
        BoundingBox::new(0.0, 0.0, 10.0, 20.0).unwrap(),
        BoundingBox::new(5.5, 6.25, 30.0, 40.0).unwrap(),
        BoundingBox::new(100.0, 0.5, 200.0, 120.75).unwrap(),
    ];
    (FeatureMatrix::new(3, 8, data).unwrap(), boxes)
}

fn gen_fixtures(args: &FixtureArgs) -> CliResult<()> {
    for (name, cfg) in [
        ("default", SynthConfig::default()),
        ("adversarial", SynthConfig::adversarial()),
    ] {
        let dir = args.out.join(name);
        let ds = generate(&cfg)?;
        ds.write(&dir)?;
        println!(
            "{}: {} images, {} questions",
            dir.display(),
            ds.scene_graphs.len(),
            ds.questions.len()
        );
    }
    let (m, boxes) = golden_matrix();
    let path = args.out.join("golden").join("smfx_3x8.smfx");
    write_atomic(&path, &encode_smfx(&m, &boxes)?)?;
    let sidecar = serde_json::json!({
        "n": m.n(),
        "d": m.d(),
        "boxes": boxes.iter().map(|b| [b.x1, b.y1, b.x2, b.y2]).collect::<Vec<_>>(),
        "feature_bits": m.as_slice().iter().map(|v| format!("0x{:08x}", v.to_bits())).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    write_text(&path.with_extension("json"), &text)?;
    println!("{}", path.display());
    Ok(())
}
