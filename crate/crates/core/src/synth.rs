//! Deterministic synthetic datasets: scene graphs, GQA-style questions with
//! programs, detector-like features and a clustered embedding table.
//!
//! Answers and selected object ids come from running the symbolic executor on
//! the generated graphs, so every supported question is answerable from its
//! own annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{
    BoundingBox, DetectedObject, EmbeddingTable, FeatureMatrix, ObjectAnnotation, Operation,
    Question, ReasoningStep, Relation, SceneGraph,
};
use crate::error::{Error, Result};
use crate::ingestion::{
    write_embeddings, write_feature_file, write_questions, write_scene_graphs, DatasetBundle,
    ImageFeatures,
};
use crate::models::{selection_trace, symbolic_execute, AttributeOntology};
use crate::seed::{rng_for, SeedPart};

pub const CLASS_CLUSTERS: &[&[&str]] = &[
    &[
        "car",
        "bus",
        "truck",
        "taxi",
        "van",
        "motorcycle",
        "bicycle",
    ],
    &["dog", "cat", "horse", "cow", "sheep", "bird"],
    &["chair", "table", "bench", "sofa", "bed"],
    &["tree", "bush", "flower", "plant", "grass"],
    &["man", "woman", "child", "person"],
    &["statue", "camera", "cup", "bottle", "phone", "clock"],
];

pub const COLORS: &[&str] = &[
    "white", "black", "red", "blue", "green", "yellow", "brown", "gray", "orange", "silver", "tan",
    "pink",
];
pub const MATERIALS: &[&str] = &["wooden", "metal", "plastic", "glass", "stone"];
pub const SIZES: &[&str] = &["large", "small"];
pub const PREDICATES: &[&str] = &["left of", "right of", "on", "near", "behind", "in front of"];

pub const SCENE_GRAPHS_FILE: &str = "scene_graphs.json";
pub const QUESTIONS_FILE: &str = "questions.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const FEATURES_DIR: &str = "features";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const GRID_COLS: usize = 4;
const GRID_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub images: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub questions_per_image: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    /// Standard deviation of the per-row noise added to detector features.
    pub feature_noise: f64,
    /// Chance an image gets one extra detection that matches no object.
    pub false_positive_rate: f64,
    /// Questions using an operation the executor does not support.
    pub unsupported_questions: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            images: 24,
            objects_min: 4,
            objects_max: 7,
            questions_per_image: 6,
            feature_dim: 32,
            embedding_dim: 16,
            feature_noise: 0.3,
            false_positive_rate: 0.25,
            unsupported_questions: 2,
        }
    }
}

impl SynthConfig {
    /// Small scenes and near-noiseless class-driven features: a single row swap moves
    /// the mean feature far enough to change a nearest-neighbour answer.
    pub fn adversarial() -> Self {
        SynthConfig {
            seed: 11,
            images: 30,
            objects_min: 3,
            objects_max: 4,
            questions_per_image: 5,
            feature_dim: 8,
            embedding_dim: 16,
            feature_noise: 0.05,
            false_positive_rate: 0.0,
            unsupported_questions: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub scene_graphs: BTreeMap<String, SceneGraph>,
    pub questions: Vec<Question>,
    pub features: BTreeMap<String, ImageFeatures>,
    pub embeddings: EmbeddingTable,
}

impl SynthDataset {
    pub fn bundle(&self) -> Result<DatasetBundle> {
        DatasetBundle::new(
            self.scene_graphs.clone(),
            self.questions.clone(),
            self.features.clone(),
        )
    }

    /// Writes `scene_graphs.json`, `questions.json`, `embeddings.txt` and `features/{image}.smfx`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let features = dir.join(FEATURES_DIR);
        std::fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        write_scene_graphs(dir.join(SCENE_GRAPHS_FILE), &self.scene_graphs)?;
        write_questions(dir.join(QUESTIONS_FILE), &self.questions)?;
        write_embeddings(dir.join(EMBEDDINGS_FILE), &self.embeddings)?;
        for (image_id, f) in &self.features {
            let boxes: Vec<BoundingBox> = f.detections.iter().map(|d| d.bbox).collect();
            write_feature_file(
                features.join(format!("{image_id}.smfx")),
                &f.features,
                &boxes,
            )?;
        }
        Ok(())
    }
}

pub fn all_classes() -> impl Iterator<Item = &'static str> {
    CLASS_CLUSTERS.iter().flat_map(|c| c.iter().copied())
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn round4(x: f64) -> f32 {
    ((x * 1e4).round() / 1e4) as f32
}

/// Words in one cluster share a centre; members sit at noise 0.35 around it.
pub fn clustered_embeddings(seed: u64, dim: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim)?;
    let mut clusters: Vec<(&str, Vec<&str>)> = CLASS_CLUSTERS
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (
                ["vehicle", "animal", "furniture", "plant", "person", "item"][i],
                c.to_vec(),
            )
        })
        .collect();
    clusters.push(("color", COLORS.to_vec()));
    clusters.push(("material", MATERIALS.to_vec()));
    clusters.push(("size", SIZES.to_vec()));
    for (name, words) in clusters {
        let mut rng = rng_for(&[
            SeedPart::Str("synth-embedding"),
            SeedPart::U64(seed),
            SeedPart::Str(name),
        ]);
        let centre = normal_vec(&mut rng, dim);
        for w in words {
            let v = centre
                .iter()
                .map(|c| round4(c + 0.35 * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            table.insert(w, v)?;
        }
    }
    Ok(table)
}

fn prototype(seed: u64, word: &str, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(&[
        SeedPart::Str("synth-prototype"),
        SeedPart::U64(seed),
        SeedPart::Str(word),
    ]);
    normal_vec(&mut rng, dim)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.objects_min < 2
        || cfg.objects_max < cfg.objects_min
        || cfg.objects_max > GRID_COLS * GRID_ROWS - 1
    {
        return Err(Error::InvalidArgument(format!(
            "objects per image must satisfy 2 <= min <= max <= {}",
            GRID_COLS * GRID_ROWS - 1
        )));
    }
    let embeddings = clustered_embeddings(cfg.seed, cfg.embedding_dim)?;
    let ontology = AttributeOntology::default();
    let classes: Vec<&str> = all_classes().collect();
    let mut rng = rng_for(&[SeedPart::Str("synth"), SeedPart::U64(cfg.seed)]);

    let mut scene_graphs = BTreeMap::new();
    let mut features = BTreeMap::new();
    let mut questions = Vec::new();
    for i in 0..cfg.images {
        let image_id = format!("img{i:03}");
        let (g, cells) = scene(&mut rng, &image_id, &classes, cfg);
        features.insert(
            image_id.clone(),
            detector_features(&mut rng, &g, &cells, cfg)?,
        );
        let mut made = 0;
        let mut attempts = 0;
        while made < cfg.questions_per_image && attempts < 50 * cfg.questions_per_image {
            attempts += 1;
            let qid = format!("{image_id}_q{made:02}");
            if let Some(q) = question(&mut rng, &qid, &g, &classes, &ontology) {
                questions.push(q);
                made += 1;
            }
        }
        scene_graphs.insert(image_id, g);
    }
    let images: Vec<&String> = scene_graphs.keys().collect();
    for u in 0..cfg.unsupported_questions {
        let image_id = images[u % images.len()];
        let g = &scene_graphs[image_id];
        let (a, b) = (&g.objects[0], &g.objects[1]);
        questions.push(Question {
            question_id: format!("{image_id}_u{u:02}"),
            image_id: image_id.clone(),
            text: format!(
                "Do the {} and the {} have the same color?",
                a.class_label, b.class_label
            ),
            gt_answer: "no".into(),
            program: vec![
                step(0, Operation::Select, None, &[&a.class_label], &[]),
                step(1, Operation::Select, None, &[&b.class_label], &[]),
                step(
                    2,
                    Operation::Other("same".into()),
                    Some("color"),
                    &[],
                    &[0, 1],
                ),
            ],
        });
    }
    questions.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    Ok(SynthDataset {
        scene_graphs,
        questions,
        features,
        embeddings,
    })
}

/// Objects on a 4x3 grid, one per cell, so boxes never overlap.
fn scene(
    rng: &mut ChaCha8Rng,
    image_id: &str,
    classes: &[&str],
    cfg: &SynthConfig,
) -> (SceneGraph, Vec<usize>) {
    let n = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let mut cells: Vec<usize> = (0..GRID_COLS * GRID_ROWS).collect();
    cells.shuffle(rng);
    let (cw, ch) = (WIDTH / GRID_COLS as f64, HEIGHT / GRID_ROWS as f64);
    let mut objects = Vec::with_capacity(n);
    for (k, &cell) in cells.iter().take(n).enumerate() {
        let (cx, cy) = (
            (cell % GRID_COLS) as f64 * cw,
            (cell / GRID_COLS) as f64 * ch,
        );
        let w = rng.random_range(60..=140) as f64;
        let h = rng.random_range(60..=140) as f64;
        let x = cx + rng.random_range(0..=(cw - w) as u32) as f64;
        let y = cy + rng.random_range(0..=(ch - h) as u32) as f64;
        let mut attributes: BTreeSet<String> = [COLORS.choose(rng).unwrap().to_string()].into();
        if rng.random_bool(0.5) {
            attributes.insert(MATERIALS.choose(rng).unwrap().to_string());
        }
        if rng.random_bool(0.3) {
            attributes.insert(SIZES.choose(rng).unwrap().to_string());
        }
        objects.push(ObjectAnnotation {
            object_id: format!("o{k}"),
            class_label: classes.choose(rng).unwrap().to_string(),
            attributes,
            bbox: BoundingBox::from_xywh(x, y, w, h).expect("grid box is valid"),
        });
    }
    let mut relations = Vec::new();
    let mut seen = BTreeSet::new();
    for s in 0..n {
        for _ in 0..rng.random_range(0..=2) {
            let o = rng.random_range(0..n);
            let p = PREDICATES.choose(rng).unwrap();
            if o != s && seen.insert((s, o)) {
                relations.push(Relation {
                    subject_id: format!("o{s}"),
                    predicate: p.to_string(),
                    object_id: format!("o{o}"),
                });
            }
        }
    }
    relations.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut g = SceneGraph {
        image_id: image_id.to_string(),
        width: WIDTH,
        height: HEIGHT,
        objects,
        relations,
    };
    g.sort_objects();
    let free = cells[n..].to_vec();
    (g, free)
}

/// One jittered detection per object (IoU well above 0.5), shuffled, plus an
/// optional false positive in an empty cell. Rows are class prototype + half
/// the colour prototype + noise.
fn detector_features(
    rng: &mut ChaCha8Rng,
    g: &SceneGraph,
    free_cells: &[usize],
    cfg: &SynthConfig,
) -> Result<ImageFeatures> {
    let d = cfg.feature_dim;
    let mut rows: Vec<(BoundingBox, Vec<f32>)> = Vec::new();
    for o in &g.objects {
        let b = o.bbox;
        let jitter =
            |rng: &mut ChaCha8Rng, span: f64| (rng.random_range(-0.04..0.04) * span).round();
        let bbox = BoundingBox::new(
            (b.x1 + jitter(rng, b.width())).max(0.0),
            (b.y1 + jitter(rng, b.height())).max(0.0),
            b.x2 + jitter(rng, b.width()),
            b.y2 + jitter(rng, b.height()),
        )?;
        let class = prototype(cfg.seed, &o.class_label, d);
        let color = o
            .attributes
            .iter()
            .find(|a| COLORS.contains(&a.as_str()))
            .map(|c| prototype(cfg.seed, c, d))
            .unwrap_or_else(|| vec![0.0; d]);
        let row = (0..d)
            .map(|j| {
                round4(
                    class[j]
                        + 0.5 * color[j]
                        + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        rows.push((bbox, row));
    }
    if !free_cells.is_empty() && rng.random_bool(cfg.false_positive_rate) {
        let cell = free_cells[0];
        let (cw, ch) = (WIDTH / GRID_COLS as f64, HEIGHT / GRID_ROWS as f64);
        let (x, y) = (
            (cell % GRID_COLS) as f64 * cw + 20.0,
            (cell / GRID_COLS) as f64 * ch + 20.0,
        );
        let row = (0..d)
            .map(|_| round4(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        rows.push((BoundingBox::from_xywh(x, y, 80.0, 80.0)?, row));
    }
    rows.shuffle(rng);
    let detections = rows
        .iter()
        .enumerate()
        .map(|(i, (bbox, _))| DetectedObject {
            detection_index: i,
            bbox: *bbox,
            predicted_class: None,
        })
        .collect();
    let features = FeatureMatrix::from_rows(&rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>())?;
    Ok(ImageFeatures {
        features,
        detections,
    })
}

fn step(
    i: usize,
    op: Operation,
    qualifier: Option<&str>,
    args: &[&str],
    deps: &[usize],
) -> ReasoningStep {
    ReasoningStep {
        step_index: i,
        operation: op,
        qualifier: qualifier.map(String::from),
        arguments: args.iter().map(|s| s.to_string()).collect(),
        dependencies: deps.to_vec(),
        selected_object_ids: Vec::new(),
    }
}

fn color_of(o: &ObjectAnnotation) -> &str {
    o.attributes
        .iter()
        .find(|a| COLORS.contains(&a.as_str()))
        .map(String::as_str)
        .expect("generated objects carry one colour")
}

/// Draws one question from a random template; `None` when the template does not fit this scene.
fn question(
    rng: &mut ChaCha8Rng,
    qid: &str,
    g: &SceneGraph,
    classes: &[&str],
    ontology: &AttributeOntology,
) -> Option<Question> {
    use Operation::*;
    let obj = g.objects.choose(rng)?;
    let class = obj.class_label.as_str();
    let unique = g.objects.iter().filter(|o| o.class_label == class).count() == 1;
    let other_color = *COLORS
        .iter()
        .filter(|c| **c != color_of(obj))
        .collect::<Vec<_>>()
        .choose(rng)?;
    let rel = g.relations.choose(rng);
    let template = rng.random_range(0..11);
    let (text, program): (String, Vec<ReasoningStep>) = match template {
        0 if unique => (
            format!("What color is the {class}?"),
            vec![
                step(0, Select, None, &[class], &[]),
                step(1, Query, None, &["color"], &[0]),
            ],
        ),
        1 => {
            let r = rel?;
            let (s, o) = (g.object(&r.subject_id)?, g.object(&r.object_id)?);
            (
                format!(
                    "What color is the {} that is {} the {}?",
                    s.class_label, r.predicate, o.class_label
                ),
                vec![
                    step(0, Select, None, &[&o.class_label], &[]),
                    step(1, Relate, None, &[&s.class_label, &r.predicate, "s"], &[0]),
                    step(2, Query, None, &["color"], &[1]),
                ],
            )
        }
        2 => {
            let r = rel?;
            let (s, o) = (g.object(&r.subject_id)?, g.object(&r.object_id)?);
            (
                format!("What is the {} {}?", s.class_label, r.predicate),
                vec![
                    step(0, Select, None, &[&s.class_label], &[]),
                    step(1, Relate, None, &[&o.class_label, &r.predicate, "o"], &[0]),
                    step(2, Query, None, &["name"], &[1]),
                ],
            )
        }
        3 => {
            // absent classes half the time
            let c = if rng.random_bool(0.5) {
                class
            } else {
                let absent: Vec<&&str> = classes
                    .iter()
                    .filter(|c| g.objects.iter().all(|o| o.class_label != **c))
                    .collect();
                **absent.choose(rng)?
            };
            (
                format!("Is there a {c}?"),
                vec![
                    step(0, Select, None, &[c], &[]),
                    step(1, Exist, None, &[], &[0]),
                ],
            )
        }
        4 => {
            let c = if rng.random_bool(0.5) {
                color_of(obj)
            } else {
                other_color
            };
            (
                format!("Is there a {c} {class}?"),
                vec![
                    step(0, Select, None, &[class], &[]),
                    step(1, Filter, Some("color"), &[c], &[0]),
                    step(2, Exist, None, &[], &[1]),
                ],
            )
        }
        5 if unique => {
            let c = if rng.random_bool(0.5) {
                color_of(obj)
            } else {
                other_color
            };
            (
                format!("Is the {class} {c}?"),
                vec![
                    step(0, Select, None, &[class], &[]),
                    step(1, Verify, Some("color"), &[c], &[0]),
                ],
            )
        }
        6 if unique => {
            let mut pair = [color_of(obj), other_color];
            pair.shuffle(rng);
            (
                format!("Is the {class} {} or {}?", pair[0], pair[1]),
                vec![
                    step(0, Select, None, &[class], &[]),
                    step(1, Choose, Some("color"), &pair, &[0]),
                ],
            )
        }
        7 | 8 => {
            let other = g.objects.choose(rng)?;
            let (c1, c2) = (class, other.class_label.as_str());
            if c1 == c2 {
                return None;
            }
            let (op, word) = if template == 7 {
                (And, "and")
            } else {
                (Or, "or")
            };
            (
                format!("Is there a {c1} {word} a {c2}?"),
                vec![
                    step(0, Select, None, &[c1], &[]),
                    step(1, Exist, None, &[], &[0]),
                    step(2, Select, None, &[c2], &[]),
                    step(3, Exist, None, &[], &[2]),
                    step(4, op, None, &[], &[1, 3]),
                ],
            )
        }
        9 => {
            let not = format!("not({})", color_of(obj));
            (
                format!("Is there a {class} that is not {}?", color_of(obj)),
                vec![
                    step(0, Select, None, &[class], &[]),
                    step(1, Filter, Some("color"), &[&not], &[0]),
                    step(2, Exist, None, &[], &[1]),
                ],
            )
        }
        10 => {
            let r = rel?;
            let (s, o) = (g.object(&r.subject_id)?, g.object(&r.object_id)?);
            (
                format!(
                    "Is the {} {} a {}?",
                    s.class_label, r.predicate, o.class_label
                ),
                vec![
                    step(0, Select, None, &[&s.class_label], &[]),
                    step(
                        1,
                        Verify,
                        Some("rel"),
                        &[&o.class_label, &r.predicate, "o"],
                        &[0],
                    ),
                ],
            )
        }
        _ => return None,
    };
    let answer = symbolic_execute(&program, g, ontology).ok()?;
    let trace = selection_trace(&program, g, ontology).ok()?;
    let program = program
        .into_iter()
        .zip(trace)
        .map(|(mut s, ids)| {
            s.selected_object_ids = ids;
            s
        })
        .collect();
    Some(Question {
        question_id: qid.to_string(),
        image_id: g.image_id.clone(),
        text,
        gt_answer: answer,
        program,
    })
}
