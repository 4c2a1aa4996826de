//! GQA scene-graph JSON.
//!
//! ```json
//! { "2354786": { "width": 500, "height": 333,
//!     "objects": { "1058498": { "name": "shirt", "x": 48, "y": 67, "w": 60, "h": 80,
//!         "attributes": ["white"],
//!         "relations": [ { "name": "to the left of", "object": "1058507" } ] } } } }
//! ```
//!
//! Relations are stored on their subject object. Objects come back sorted by id.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{validate_scene_graph, BoundingBox, ObjectAnnotation, Relation, SceneGraph};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct RawRelation {
    name: String,
    object: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawObject {
    name: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    relations: Vec<RawRelation>,
}

#[derive(Debug, Serialize)]
struct RawGraph {
    width: f64,
    height: f64,
    objects: BTreeMap<String, RawObject>,
}

pub fn parse_scene_graphs(path: impl AsRef<Path>) -> Result<BTreeMap<String, SceneGraph>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_graphs_str(&text)
}

pub fn parse_scene_graphs_str(text: &str) -> Result<BTreeMap<String, SceneGraph>> {
    let root: BTreeMap<String, Value> = serde_json::from_str(text)
        .map_err(|e| Error::MalformedInput(format!("scene graphs: {e}")))?;
    let mut graphs = BTreeMap::new();
    let mut violations = Vec::new();
    for (image_id, raw) in root {
        let graph = parse_graph(&image_id, raw)?;
        violations.extend(
            validate_scene_graph(&graph)
                .into_iter()
                .map(|v| format!("image {image_id}: {v}")),
        );
        graphs.insert(image_id, graph);
    }
    if !violations.is_empty() {
        return Err(Error::InvariantViolation(violations));
    }
    Ok(graphs)
}

fn parse_graph(image_id: &str, raw: Value) -> Result<SceneGraph> {
    let Value::Object(mut fields) = raw else {
        return Err(Error::MalformedInput(format!(
            "image {image_id}: expected an object"
        )));
    };
    let dim = |fields: &serde_json::Map<String, Value>, key: &str| -> Result<f64> {
        fields.get(key).and_then(Value::as_f64).ok_or_else(|| {
            Error::MalformedInput(format!("image {image_id}: missing or non-numeric {key:?}"))
        })
    };
    let width = dim(&fields, "width")?;
    let height = dim(&fields, "height")?;
    let objects: BTreeMap<String, Value> = match fields.remove("objects") {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| Error::MalformedInput(format!("image {image_id}: objects: {e}")))?,
        None => BTreeMap::new(),
    };

    let mut annotations = Vec::with_capacity(objects.len());
    let mut relations = Vec::new();
    for (object_id, value) in objects {
        let obj: RawObject = serde_json::from_value(value).map_err(|e| {
            Error::MalformedInput(format!("image {image_id}, object {object_id}: {e}"))
        })?;
        let bbox = BoundingBox {
            x1: obj.x,
            y1: obj.y,
            x2: obj.x + obj.w,
            y2: obj.y + obj.h,
        };
        relations.extend(obj.relations.into_iter().map(|r| Relation {
            subject_id: object_id.clone(),
            predicate: r.name,
            object_id: r.object,
        }));
        annotations.push(ObjectAnnotation {
            object_id,
            class_label: obj.name,
            attributes: obj.attributes.into_iter().collect::<BTreeSet<_>>(),
            bbox,
        });
    }
    Ok(SceneGraph {
        image_id: image_id.to_string(),
        width,
        height,
        objects: annotations,
        relations,
    })
}

pub fn scene_graphs_to_string(graphs: &BTreeMap<String, SceneGraph>) -> Result<String> {
    let mut out = BTreeMap::new();
    for (image_id, g) in graphs {
        let mut objects: BTreeMap<String, RawObject> = g
            .objects
            .iter()
            .map(|o| {
                (
                    o.object_id.clone(),
                    RawObject {
                        name: o.class_label.clone(),
                        x: o.bbox.x1,
                        y: o.bbox.y1,
                        w: o.bbox.width(),
                        h: o.bbox.height(),
                        attributes: o.attributes.iter().cloned().collect(),
                        relations: Vec::new(),
                    },
                )
            })
            .collect();
        for r in &g.relations {
            let subject = objects.get_mut(&r.subject_id).ok_or_else(|| {
                Error::InvariantViolation(vec![format!(
                    "dangling relation endpoint: {}",
                    r.subject_id
                )])
            })?;
            subject.relations.push(RawRelation {
                name: r.predicate.clone(),
                object: r.object_id.clone(),
            });
        }
        out.insert(
            image_id.clone(),
            RawGraph {
                width: g.width,
                height: g.height,
                objects,
            },
        );
    }
    serde_json::to_string_pretty(&out).map_err(|e| Error::MalformedInput(e.to_string()))
}

pub fn write_scene_graphs(
    path: impl AsRef<Path>,
    graphs: &BTreeMap<String, SceneGraph>,
) -> Result<()> {
    let text = scene_graphs_to_string(graphs)?;
    super::write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "img1": {"width": 100, "height": 80, "objects": {
        "o2": {"name": "tree", "x": 50, "y": 10, "w": 20, "h": 40, "attributes": ["green", "tall", "green"], "relations": []},
        "o1": {"name": "car", "x": 0, "y": 0, "w": 30, "h": 20, "attributes": [],
               "relations": [{"name": "to the left of", "object": "o2"}]},
        "o3": {"name": "man", "x": 5, "y": 5, "w": 5, "h": 5}
      }},
      "img2": {"width": 10, "height": 10, "objects": {
        "a": {"name": "dog", "x": 1, "y": 1, "w": 2, "h": 2},
        "b": {"name": "cat", "x": 4, "y": 4, "w": 2, "h": 2}
      }}
    }"#;

    #[test]
    fn parses_counts_and_relations() {
        let graphs = parse_scene_graphs_str(SAMPLE).unwrap();
        assert_eq!(graphs.len(), 2);
        assert_eq!(graphs.values().map(|g| g.objects.len()).sum::<usize>(), 5);
        let g = &graphs["img1"];
        assert_eq!(
            g.relations,
            vec![Relation {
                subject_id: "o1".into(),
                predicate: "to the left of".into(),
                object_id: "o2".into()
            }]
        );
        let tree = g.object("o2").unwrap();
        assert_eq!(tree.attributes.len(), 2, "duplicate attributes collapse");
        assert_eq!(
            tree.bbox,
            BoundingBox {
                x1: 50.0,
                y1: 10.0,
                x2: 70.0,
                y2: 50.0
            }
        );
    }

    #[test]
    fn missing_name_names_the_object() {
        let text = r#"{"img": {"width": 5, "height": 5, "objects": {"o7": {"x": 0, "y": 0, "w": 1, "h": 1}}}}"#;
        match parse_scene_graphs_str(text) {
            Err(Error::MalformedInput(msg)) => {
                assert!(msg.contains("o7") && msg.contains("name"), "{msg}")
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn dangling_relation_is_invariant_violation() {
        let text = r#"{"img": {"width": 5, "height": 5, "objects": {"o1": {"name": "a", "x": 0, "y": 0, "w": 1, "h": 1,
            "relations": [{"name": "near", "object": "o9"}]}}}}"#;
        match parse_scene_graphs_str(text) {
            Err(Error::InvariantViolation(v)) => {
                assert!(v[0].contains("dangling relation endpoint: o9"))
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn serialize_then_parse_is_fixed_point() {
        let graphs = parse_scene_graphs_str(SAMPLE).unwrap();
        let text = scene_graphs_to_string(&graphs).unwrap();
        let again = parse_scene_graphs_str(&text).unwrap();
        assert_eq!(graphs, again);
        assert_eq!(text, scene_graphs_to_string(&again).unwrap());
    }
}
