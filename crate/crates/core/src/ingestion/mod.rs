//! Readers and writers for every on-disk format, plus the assembled [`DatasetBundle`].

mod embeddings;
mod questions;
mod scene_graph;
mod smfx;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use embeddings::{embeddings_to_string, load_embeddings, read_embeddings, write_embeddings};
pub use questions::{parse_questions, parse_questions_str, questions_to_string, write_questions};
pub use scene_graph::{
    parse_scene_graphs, parse_scene_graphs_str, scene_graphs_to_string, write_scene_graphs,
};
pub use smfx::{decode_smfx, encode_smfx, read_feature_file, write_feature_file, MAGIC, VERSION};

use crate::domain::{DetectedObject, FeatureMatrix, ObjectAnnotation, Question, SceneGraph};
use crate::error::{Error, Result};

/// A dataset object addressed by image and object id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectRef {
    pub image_id: String,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub features: FeatureMatrix,
    pub detections: Vec<DetectedObject>,
}

/// Scene graphs, questions and detector features for one dataset, with lookup indices.
#[derive(Debug, Clone, Default)]
pub struct DatasetBundle {
    pub scene_graphs: BTreeMap<String, SceneGraph>,
    pub questions: Vec<Question>,
    pub features: BTreeMap<String, ImageFeatures>,
    /// class label -> every object of that class, sorted by (image_id, object_id).
    pub class_index: BTreeMap<String, Vec<ObjectRef>>,
    /// class label -> distinct attribute sets observed for that class, sorted.
    pub attribute_index: BTreeMap<String, Vec<BTreeSet<String>>>,
}

impl DatasetBundle {
    /// Validates cross-file references and builds the indices.
    pub fn new(
        mut scene_graphs: BTreeMap<String, SceneGraph>,
        questions: Vec<Question>,
        features: BTreeMap<String, ImageFeatures>,
    ) -> Result<Self> {
        scene_graphs.values_mut().for_each(SceneGraph::sort_objects);
        let mut violations = Vec::new();
        for q in &questions {
            let Some(g) = scene_graphs.get(&q.image_id) else {
                violations.push(format!(
                    "question {}: unknown image {}",
                    q.question_id, q.image_id
                ));
                continue;
            };
            for id in q.selected_object_ids() {
                if g.object(id).is_none() {
                    violations.push(format!(
                        "question {}: selected object {id} not in image {}",
                        q.question_id, q.image_id
                    ));
                }
            }
        }
        for (image_id, f) in &features {
            if f.detections.len() != f.features.n() {
                violations.push(format!(
                    "image {image_id}: {} detections for {} feature rows",
                    f.detections.len(),
                    f.features.n()
                ));
            }
            for (i, det) in f.detections.iter().enumerate() {
                if det.detection_index != i {
                    violations.push(format!(
                        "image {image_id}: detection at row {i} has index {}",
                        det.detection_index
                    ));
                }
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvariantViolation(violations));
        }
        Ok(build_indices(DatasetBundle {
            scene_graphs,
            questions,
            features,
            class_index: BTreeMap::new(),
            attribute_index: BTreeMap::new(),
        }))
    }

    pub fn object(&self, r: &ObjectRef) -> Option<&ObjectAnnotation> {
        self.scene_graphs.get(&r.image_id)?.object(&r.object_id)
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.class_index.keys().map(String::as_str)
    }

    pub fn attribute_vocabulary(&self) -> BTreeSet<&str> {
        self.scene_graphs
            .values()
            .flat_map(|g| g.objects.iter())
            .flat_map(|o| o.attributes.iter().map(String::as_str))
            .collect()
    }
}

/// Populates `class_index` and `attribute_index` from the scene graphs.
pub fn build_indices(mut bundle: DatasetBundle) -> DatasetBundle {
    let mut class_index: BTreeMap<String, Vec<ObjectRef>> = BTreeMap::new();
    let mut attr_sets: BTreeMap<String, BTreeSet<BTreeSet<String>>> = BTreeMap::new();
    for (image_id, g) in &bundle.scene_graphs {
        for obj in &g.objects {
            class_index
                .entry(obj.class_label.clone())
                .or_default()
                .push(ObjectRef {
                    image_id: image_id.clone(),
                    object_id: obj.object_id.clone(),
                });
            attr_sets
                .entry(obj.class_label.clone())
                .or_default()
                .insert(obj.attributes.clone());
        }
    }
    class_index.values_mut().for_each(|v| v.sort());
    bundle.class_index = class_index;
    bundle.attribute_index = attr_sets
        .into_iter()
        .map(|(class, sets)| (class, sets.into_iter().collect()))
        .collect();
    bundle
}

/// Reads every `{image_id}.smfx` in `dir` for the given images; images without a file are skipped.
pub fn load_feature_dir(
    dir: impl AsRef<Path>,
    image_ids: impl IntoIterator<Item = impl AsRef<str>>,
) -> Result<BTreeMap<String, ImageFeatures>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for image_id in image_ids {
        let image_id = image_id.as_ref();
        let path = dir.join(format!("{image_id}.smfx"));
        if !path.exists() {
            log::warn!("no feature file for image {image_id} at {}", path.display());
            continue;
        }
        let (features, detections) = read_feature_file(&path)?;
        out.insert(
            image_id.to_string(),
            ImageFeatures {
                features,
                detections,
            },
        );
    }
    Ok(out)
}

/// Writes via a temporary file in the same directory, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundingBox;

    fn obj(id: &str, class: &str, attrs: &[&str]) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id.into(),
            class_label: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        }
    }

    fn bundle(images: Vec<(&str, Vec<ObjectAnnotation>)>) -> DatasetBundle {
        let graphs = images
            .into_iter()
            .map(|(id, objects)| {
                (
                    id.to_string(),
                    SceneGraph {
                        image_id: id.into(),
                        width: 10.0,
                        height: 10.0,
                        objects,
                        relations: vec![],
                    },
                )
            })
            .collect();
        DatasetBundle::new(graphs, vec![], BTreeMap::new()).unwrap()
    }

    #[test]
    fn class_index_counts_and_order() {
        let b = bundle(vec![
            ("i2", vec![obj("b", "bus", &[])]),
            ("i1", vec![obj("a", "bus", &["red"]), obj("c", "bus", &[])]),
        ]);
        let refs: Vec<_> = b.class_index["bus"]
            .iter()
            .map(|r| (r.image_id.as_str(), r.object_id.as_str()))
            .collect();
        assert_eq!(refs, vec![("i1", "a"), ("i1", "c"), ("i2", "b")]);
    }

    #[test]
    fn attribute_index_single_and_dedup() {
        let b = bundle(vec![(
            "i1",
            vec![
                obj("a", "bus", &["red", "large"]),
                obj("b", "car", &["red"]),
                obj("c", "car", &["red"]),
                obj("d", "car", &[]),
            ],
        )]);
        let red_large: BTreeSet<String> = ["large", "red"].iter().map(|s| s.to_string()).collect();
        assert_eq!(b.attribute_index["bus"], vec![red_large]);
        // the empty set is kept as a distinct attribute set
        assert_eq!(b.attribute_index["car"].len(), 2);
        assert!(b.attribute_index["car"].contains(&BTreeSet::new()));
    }

    #[test]
    fn question_on_unknown_image_is_rejected() {
        let q = Question {
            question_id: "q".into(),
            image_id: "nope".into(),
            text: String::new(),
            gt_answer: "x".into(),
            program: vec![],
        };
        assert!(matches!(
            DatasetBundle::new(BTreeMap::new(), vec![q], BTreeMap::new()),
            Err(Error::InvariantViolation(_))
        ));
    }
}
