use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use swapmix_bench::fixture;
use swapmix_core::augment::{augment_features, AugmentConfig};
use swapmix_core::domain::BoundingBox;
use swapmix_core::ingestion::{decode_smfx, encode_smfx};
use swapmix_core::metrics::compute_report;
use swapmix_core::models::SymbolicModel;
use swapmix_core::pipeline::{PipelineOptions, Session, VisualMode};
use swapmix_core::swapplan::PlanInput;

fn planning(c: &mut Criterion) {
    let (ds, bundle) = fixture();
    let s = Session::new(&bundle, &ds.embeddings, PipelineOptions::default()).unwrap();
    c.bench_function("plan_all (146 questions, k=10)", |b| {
        b.iter(|| black_box(s.plan_all().unwrap()))
    });

    let plans = s.plan_all().unwrap();
    let q = &bundle.questions[0];
    c.bench_function("materialize one question", |b| {
        b.iter(|| black_box(s.perturb_question(q, &plans[&q.question_id]).unwrap()))
    });
}

fn diagnosis(c: &mut Criterion) {
    let (ds, bundle) = fixture();
    let mut group = c.benchmark_group("diagnose symbolic");
    group.sample_size(10);
    for visual in [VisualMode::Frcnn, VisualMode::Perfect] {
        let opts = PipelineOptions {
            visual,
            ..Default::default()
        };
        let s = Session::new(&bundle, &ds.embeddings, opts).unwrap();
        group.bench_function(visual.to_string(), |b| {
            b.iter(|| black_box(s.diagnose(&SymbolicModel::default()).unwrap()))
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let (ds, bundle) = fixture();
    let s = Session::new(&bundle, &ds.embeddings, PipelineOptions::default()).unwrap();
    let d = s.diagnose(&SymbolicModel::default()).unwrap();
    let emitted = &d.plans;
    c.bench_function("compute_report", |b| {
        b.iter(|| {
            black_box(
                compute_report(
                    &bundle.questions,
                    &d.log,
                    emitted,
                    d.report.excluded.clone(),
                )
                .unwrap(),
            )
        })
    });
}

fn augmentation(c: &mut Criterion) {
    let (ds, bundle) = fixture();
    let s = Session::new(&bundle, &ds.embeddings, PipelineOptions::default()).unwrap();
    let q = &bundle.questions[0];
    let feats = s.features(&q.image_id).unwrap();
    let ctx = s.context(q).unwrap();
    let donors = s.donors_for(q).unwrap();
    let mut epoch = 0;
    c.bench_function("augment one image", |b| {
        b.iter(|| {
            epoch += 1;
            let input = PlanInput {
                question: q,
                context: &ctx,
                graph: &bundle.scene_graphs[&q.image_id],
                matches: s.match_table(&q.image_id).unwrap(),
                detections: Some(&feats.detections),
            };
            let cfg = AugmentConfig {
                epoch,
                ..Default::default()
            };
            black_box(
                augment_features(
                    &feats.features,
                    input,
                    &bundle,
                    s.ranker(),
                    donors.as_ref(),
                    &cfg,
                )
                .unwrap(),
            )
        })
    });
}

fn smfx(c: &mut Criterion) {
    let (_, bundle) = fixture();
    let f = bundle.features.values().next().unwrap();
    let boxes: Vec<BoundingBox> = f.detections.iter().map(|d| d.bbox).collect();
    let bytes = encode_smfx(&f.features, &boxes).unwrap();
    c.bench_function("smfx encode", |b| {
        b.iter(|| black_box(encode_smfx(&f.features, &boxes).unwrap()))
    });
    c.bench_function("smfx decode", |b| {
        b.iter(|| black_box(decode_smfx(&bytes).unwrap()))
    });
}

criterion_group!(benches, planning, diagnosis, scoring, augmentation, smfx);
criterion_main!(benches);
