//! Symbolic program executor over scene graphs.
//!
//! Each step yields either a set of objects or an answer string. `relate`
//! takes `[target_class, predicate, direction]`; direction `s` finds targets
//! that are the subject of `predicate` toward the current objects, `o` finds
//! targets that are its object. A target class of `_` matches any class.

use std::collections::{BTreeMap, BTreeSet};

use super::{AnnotationEdit, ModelInput, VqaModel};
use crate::domain::{Operation, Question, ReasoningStep, SceneGraph};
use crate::error::{Error, Result};

/// Attribute categories used by `query <category>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeOntology {
    categories: BTreeMap<String, BTreeSet<String>>,
}

impl Default for AttributeOntology {
    fn default() -> Self {
        let mut o = AttributeOntology {
            categories: BTreeMap::new(),
        };
        o.insert(
            "color",
            &[
                "white", "black", "red", "blue", "green", "yellow", "brown", "gray", "grey",
                "orange", "pink", "purple", "silver", "tan", "gold", "beige", "dark", "light",
            ],
        );
        o.insert(
            "material",
            &[
                "wooden", "metal", "plastic", "glass", "concrete", "brick", "stone", "leather",
                "cloth", "paper", "rubber",
            ],
        );
        o.insert(
            "size",
            &["large", "small", "big", "little", "huge", "tiny", "giant"],
        );
        o.insert("height", &["tall", "short"]);
        o.insert("shape", &["round", "square", "rectangular", "triangular"]);
        o.insert(
            "activity",
            &[
                "standing", "sitting", "walking", "running", "lying", "parked", "flying",
            ],
        );
        o
    }
}

impl AttributeOntology {
    pub fn insert(&mut self, category: &str, values: &[&str]) {
        self.categories
            .entry(category.to_string())
            .or_default()
            .extend(values.iter().map(|v| v.to_string()));
    }

    pub fn category(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(name)
    }

    pub fn category_of(&self, attribute: &str) -> Option<&str> {
        self.categories
            .iter()
            .find(|(_, vals)| vals.contains(attribute))
            .map(|(k, _)| k.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum StepValue<'g> {
    Objects(BTreeSet<&'g str>),
    Answer(String),
}

/// Why the executor cannot run this program, if it cannot.
pub fn unsupported_reason(program: &[ReasoningStep]) -> Option<String> {
    program.iter().find_map(|s| {
        let supported = match &s.operation {
            Operation::Other(_) => false,
            Operation::Choose => s.qualifier.as_deref() != Some("rel"),
            _ => true,
        };
        (!supported).then(|| {
            let name = match &s.qualifier {
                Some(q) => format!("{} {q}", s.operation),
                None => s.operation.to_string(),
            };
            format!("unsupported operation: {name}")
        })
    })
}

fn run_program<'g>(
    program: &[ReasoningStep],
    g: &'g SceneGraph,
    ontology: &AttributeOntology,
) -> Result<Vec<StepValue<'g>>> {
    if let Some(reason) = unsupported_reason(program) {
        return Err(Error::UnsupportedOperation(reason));
    }
    let mut values: Vec<StepValue<'_>> = Vec::with_capacity(program.len());
    for step in program {
        let v = run_step(step, &values, g, ontology)?;
        values.push(v);
    }
    Ok(values)
}

pub fn symbolic_execute(
    program: &[ReasoningStep],
    g: &SceneGraph,
    ontology: &AttributeOntology,
) -> Result<String> {
    let mut values = run_program(program, g, ontology)?;
    match values.pop() {
        Some(StepValue::Answer(a)) => Ok(a),
        Some(StepValue::Objects(_)) => Err(Error::MalformedInput(
            "program ends with an object selection".into(),
        )),
        None => Err(Error::MalformedInput("empty program".into())),
    }
}

/// Objects each step touches: the output of object-valued steps, and the union
/// of the object-valued inputs of answer-valued steps.
pub fn selection_trace(
    program: &[ReasoningStep],
    g: &SceneGraph,
    ontology: &AttributeOntology,
) -> Result<Vec<Vec<String>>> {
    let values = run_program(program, g, ontology)?;
    Ok(program
        .iter()
        .zip(&values)
        .map(|(step, v)| {
            let ids: BTreeSet<&str> = match v {
                StepValue::Objects(o) => o.clone(),
                StepValue::Answer(_) => step
                    .dependencies
                    .iter()
                    .filter_map(|&d| match &values[d] {
                        StepValue::Objects(o) => Some(o.iter().copied()),
                        StepValue::Answer(_) => None,
                    })
                    .flatten()
                    .collect(),
            };
            ids.into_iter().map(String::from).collect()
        })
        .collect())
}

/// Applies annotation edits to a copy of the graph, then executes.
pub fn symbolic_execute_on_swapped(
    program: &[ReasoningStep],
    g: &SceneGraph,
    edits: &[AnnotationEdit],
    ontology: &AttributeOntology,
) -> Result<String> {
    if edits.is_empty() {
        return symbolic_execute(program, g, ontology);
    }
    let swapped = apply_edits(g, edits)?;
    symbolic_execute(program, &swapped, ontology)
}

pub fn apply_edits(g: &SceneGraph, edits: &[AnnotationEdit]) -> Result<SceneGraph> {
    let mut out = g.clone();
    for e in edits {
        let obj = out.object_mut(&e.object_id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "swap targets object {} not in image {}",
                e.object_id, g.image_id
            ))
        })?;
        obj.class_label = e.class_label.clone();
        obj.attributes = e.attributes.clone();
    }
    Ok(out)
}

fn dependency_objects<'a, 'g>(
    step: &ReasoningStep,
    values: &'a [StepValue<'g>],
    slot: usize,
) -> Result<&'a BTreeSet<&'g str>> {
    let dep = *step.dependencies.get(slot).ok_or_else(|| {
        Error::MalformedInput(format!(
            "step {} ({}) needs dependency #{slot}",
            step.step_index, step.operation
        ))
    })?;
    match &values[dep] {
        StepValue::Objects(o) => Ok(o),
        StepValue::Answer(_) => Err(Error::MalformedInput(format!(
            "step {} ({}) expects objects from step {dep}",
            step.step_index, step.operation
        ))),
    }
}

fn dependency_answer<'a>(
    step: &ReasoningStep,
    values: &'a [StepValue<'_>],
    slot: usize,
) -> Result<&'a str> {
    let dep = *step.dependencies.get(slot).ok_or_else(|| {
        Error::MalformedInput(format!(
            "step {} ({}) needs dependency #{slot}",
            step.step_index, step.operation
        ))
    })?;
    match &values[dep] {
        StepValue::Answer(a) => Ok(a),
        StepValue::Objects(_) => Err(Error::MalformedInput(format!(
            "step {} ({}) expects an answer from step {dep}",
            step.step_index, step.operation
        ))),
    }
}

fn unique<'g>(step: &ReasoningStep, objs: &BTreeSet<&'g str>) -> Result<&'g str> {
    if objs.len() != 1 {
        return Err(Error::AmbiguousSelection {
            step: step.step_index,
            operation: step.operation.to_string(),
            count: objs.len(),
        });
    }
    Ok(objs.iter().next().copied().unwrap())
}

fn arg(step: &ReasoningStep, i: usize) -> Result<&str> {
    step.arguments.get(i).map(String::as_str).ok_or_else(|| {
        Error::MalformedInput(format!(
            "step {} ({}) is missing argument #{i}",
            step.step_index, step.operation
        ))
    })
}

fn yes_no(b: bool) -> StepValue<'static> {
    StepValue::Answer(if b { "yes" } else { "no" }.to_string())
}

fn has_property(g: &SceneGraph, id: &str, prop: &str) -> bool {
    g.object(id)
        .is_some_and(|o| o.attributes.contains(prop) || o.class_label == prop)
}

/// Objects reachable from `from` via `predicate` in the given direction, restricted to `target` class.
fn related<'g>(
    g: &'g SceneGraph,
    from: &BTreeSet<&str>,
    target: &str,
    predicate: &str,
    direction: &str,
) -> Result<BTreeSet<&'g str>> {
    let target_is_subject = match direction {
        "s" => true,
        "o" => false,
        other => {
            return Err(Error::MalformedInput(format!(
                "relation direction must be s or o, got {other:?}"
            )))
        }
    };
    let matches_target =
        |id: &str| target == "_" || g.object(id).is_some_and(|o| o.class_label == target);
    Ok(g.relations
        .iter()
        .filter(|r| r.predicate == predicate)
        .filter_map(|r| {
            let (found, anchor) = if target_is_subject {
                (r.subject_id.as_str(), r.object_id.as_str())
            } else {
                (r.object_id.as_str(), r.subject_id.as_str())
            };
            (from.contains(anchor) && matches_target(found)).then_some(found)
        })
        .collect())
}

fn run_step<'g>(
    step: &ReasoningStep,
    values: &[StepValue<'g>],
    g: &'g SceneGraph,
    ontology: &AttributeOntology,
) -> Result<StepValue<'g>> {
    Ok(match &step.operation {
        Operation::Select => {
            let class = arg(step, 0)?;
            StepValue::Objects(
                g.objects
                    .iter()
                    .filter(|o| class == "_" || o.class_label == class)
                    .map(|o| o.object_id.as_str())
                    .collect(),
            )
        }
        Operation::Filter => {
            let objs = dependency_objects(step, values, 0)?;
            let raw = arg(step, 0)?;
            let (prop, negate) = match raw.strip_prefix("not(").and_then(|s| s.strip_suffix(')')) {
                Some(inner) => (inner, true),
                None => (raw, false),
            };
            StepValue::Objects(
                objs.iter()
                    .copied()
                    .filter(|id| has_property(g, id, prop) != negate)
                    .collect(),
            )
        }
        Operation::Relate => {
            let objs = dependency_objects(step, values, 0)?;
            StepValue::Objects(related(
                g,
                objs,
                arg(step, 0)?,
                arg(step, 1)?,
                arg(step, 2)?,
            )?)
        }
        Operation::Query => {
            let objs = dependency_objects(step, values, 0)?;
            let id = unique(step, objs)?;
            let obj = g.object(id).expect("selected ids come from the graph");
            let category = arg(step, 0)?;
            if category == "name" {
                return Ok(StepValue::Answer(obj.class_label.clone()));
            }
            let hits: Vec<&String> = match ontology.category(category) {
                Some(values) => obj
                    .attributes
                    .iter()
                    .filter(|a| values.contains(*a))
                    .collect(),
                None => obj.attributes.iter().collect(),
            };
            match hits.as_slice() {
                [one] => StepValue::Answer((*one).clone()),
                _ => {
                    return Err(Error::MalformedInput(format!(
                        "object {id} has {} attributes for query {category:?}",
                        hits.len()
                    )))
                }
            }
        }
        Operation::Verify => {
            let objs = dependency_objects(step, values, 0)?;
            if step.qualifier.as_deref() == Some("rel") || step.arguments.len() == 3 {
                let found = related(g, objs, arg(step, 0)?, arg(step, 1)?, arg(step, 2)?)?;
                yes_no(!found.is_empty())
            } else {
                let id = unique(step, objs)?;
                yes_no(has_property(g, id, arg(step, 0)?))
            }
        }
        Operation::Exist => yes_no(!dependency_objects(step, values, 0)?.is_empty()),
        Operation::Choose => {
            let objs = dependency_objects(step, values, 0)?;
            let id = unique(step, objs)?;
            let (a, b) = (arg(step, 0)?, arg(step, 1)?);
            if has_property(g, id, a) {
                StepValue::Answer(a.to_string())
            } else if has_property(g, id, b) {
                StepValue::Answer(b.to_string())
            } else {
                return Err(Error::MalformedInput(format!(
                    "object {id} has neither {a:?} nor {b:?}"
                )));
            }
        }
        Operation::And | Operation::Or => {
            let x = dependency_answer(step, values, 0)? == "yes";
            let y = dependency_answer(step, values, 1)? == "yes";
            yes_no(if step.operation == Operation::And {
                x && y
            } else {
                x || y
            })
        }
        Operation::Other(name) => return Err(Error::UnsupportedOperation(name.clone())),
    })
}

/// Executes the question's program on the (possibly edited) ground-truth graph; ignores features.
#[derive(Debug, Clone, Default)]
pub struct SymbolicModel {
    pub ontology: AttributeOntology,
}

impl VqaModel for SymbolicModel {
    fn name(&self) -> &str {
        "symbolic"
    }

    fn answer(&self, input: &ModelInput<'_>) -> Result<String> {
        symbolic_execute_on_swapped(
            &input.question.program,
            input.graph,
            input.edits,
            &self.ontology,
        )
    }

    fn exclusion_reason(&self, question: &Question) -> Option<String> {
        unsupported_reason(&question.program)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, ObjectAnnotation, Relation};

    fn obj(id: &str, class: &str, attrs: &[&str]) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id.into(),
            class_label: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        }
    }

    fn rel(s: &str, p: &str, o: &str) -> Relation {
        Relation {
            subject_id: s.into(),
            predicate: p.into(),
            object_id: o.into(),
        }
    }

    fn graph(mut objects: Vec<ObjectAnnotation>, relations: Vec<Relation>) -> SceneGraph {
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        SceneGraph {
            image_id: "img".into(),
            width: 10.0,
            height: 10.0,
            objects,
            relations,
        }
    }

    fn step(op: &str, qualifier: Option<&str>, args: &[&str], deps: &[usize]) -> ReasoningStep {
        ReasoningStep {
            step_index: 0,
            operation: Operation::parse(op),
            qualifier: qualifier.map(String::from),
            arguments: args.iter().map(|s| s.to_string()).collect(),
            dependencies: deps.to_vec(),
            selected_object_ids: vec![],
        }
    }

    fn program(steps: Vec<ReasoningStep>) -> Vec<ReasoningStep> {
        steps
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.step_index = i;
                s
            })
            .collect()
    }

    fn park() -> SceneGraph {
        graph(
            vec![
                obj("t1", "tree", &["green", "tall"]),
                obj("s1", "statue", &["white", "stone"]),
                obj("b1", "bus", &["red"]),
                obj("c1", "camera", &["silver"]),
            ],
            vec![rel("s1", "in front of", "t1"), rel("c1", "on", "b1")],
        )
    }

    #[test]
    fn statue_in_front_of_tree_is_white() {
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("relate", None, &["statue", "in front of", "s"], &[0]),
            step("query", None, &["color"], &[1]),
        ]);
        let onto = AttributeOntology::default();
        assert_eq!(symbolic_execute(&p, &park(), &onto).unwrap(), "white");
    }

    #[test]
    fn exist_car_on_graph_without_car() {
        let p = program(vec![
            step("select", None, &["car"], &[]),
            step("exist", None, &[], &[0]),
        ]);
        assert_eq!(
            symbolic_execute(&p, &park(), &AttributeOntology::default()).unwrap(),
            "no"
        );
    }

    #[test]
    fn choose_silver_or_tan() {
        let p = program(vec![
            step("select", None, &["camera"], &[]),
            step("choose", Some("color"), &["silver", "tan"], &[0]),
        ]);
        assert_eq!(
            symbolic_execute(&p, &park(), &AttributeOntology::default()).unwrap(),
            "silver"
        );
    }

    #[test]
    fn filter_verify_and_or() {
        let onto = AttributeOntology::default();
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("filter", Some("color"), &["green"], &[0]),
            step("exist", None, &[], &[1]),
            step("select", None, &["bus"], &[]),
            step("verify", Some("color"), &["blue"], &[3]),
            step("and", None, &[], &[2, 4]),
        ]);
        assert_eq!(symbolic_execute(&p, &park(), &onto).unwrap(), "no");
        let mut p2 = p.clone();
        p2[5].operation = Operation::Or;
        assert_eq!(symbolic_execute(&p2, &park(), &onto).unwrap(), "yes");
        let neg = program(vec![
            step("select", None, &["tree"], &[]),
            step("filter", None, &["not(green)"], &[0]),
            step("exist", None, &[], &[1]),
        ]);
        assert_eq!(symbolic_execute(&neg, &park(), &onto).unwrap(), "no");
    }

    #[test]
    fn relate_object_direction_and_verify_rel() {
        let onto = AttributeOntology::default();
        let p = program(vec![
            step("select", None, &["camera"], &[]),
            step("relate", None, &["bus", "on", "o"], &[0]),
            step("query", None, &["name"], &[1]),
        ]);
        assert_eq!(symbolic_execute(&p, &park(), &onto).unwrap(), "bus");
        let v = program(vec![
            step("select", None, &["camera"], &[]),
            step("verify", Some("rel"), &["bus", "on", "o"], &[0]),
        ]);
        assert_eq!(symbolic_execute(&v, &park(), &onto).unwrap(), "yes");
    }

    #[test]
    fn query_over_two_objects_is_ambiguous() {
        let g = graph(
            vec![obj("a", "dog", &["brown"]), obj("b", "dog", &["white"])],
            vec![],
        );
        let p = program(vec![
            step("select", None, &["dog"], &[]),
            step("query", None, &["color"], &[0]),
        ]);
        assert!(matches!(
            symbolic_execute(&p, &g, &AttributeOntology::default()),
            Err(Error::AmbiguousSelection { count: 2, .. })
        ));
    }

    #[test]
    fn trace_of_relate_chain() {
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("relate", None, &["statue", "in front of", "s"], &[0]),
            step("query", None, &["color"], &[1]),
        ]);
        let t = selection_trace(&p, &park(), &AttributeOntology::default()).unwrap();
        assert_eq!(
            t,
            vec![
                vec!["t1".to_string()],
                vec!["s1".to_string()],
                vec!["s1".to_string()]
            ]
        );
    }

    #[test]
    fn unsupported_operation() {
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("same", Some("color"), &[], &[0]),
        ]);
        assert!(unsupported_reason(&p).is_some());
        assert!(matches!(
            symbolic_execute(&p, &park(), &AttributeOntology::default()),
            Err(Error::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn context_swap_leaves_answer_unchanged() {
        let onto = AttributeOntology::default();
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("relate", None, &["statue", "in front of", "s"], &[0]),
            step("query", None, &["color"], &[1]),
        ]);
        let edit = AnnotationEdit {
            object_id: "b1".into(),
            class_label: "truck".into(),
            attributes: ["blue".to_string()].into(),
        };
        assert_eq!(
            symbolic_execute_on_swapped(&p, &park(), &[edit], &onto).unwrap(),
            "white"
        );
    }

    #[test]
    fn bus_swapped_to_car_flips_negative_existence() {
        let onto = AttributeOntology::default();
        let p = program(vec![
            step("select", None, &["car"], &[]),
            step("exist", None, &[], &[0]),
        ]);
        let edit = AnnotationEdit {
            object_id: "b1".into(),
            class_label: "car".into(),
            attributes: ["red".to_string()].into(),
        };
        assert_eq!(symbolic_execute(&p, &park(), &onto).unwrap(), "no");
        assert_eq!(
            symbolic_execute_on_swapped(&p, &park(), &[edit], &onto).unwrap(),
            "yes"
        );
    }

    #[test]
    fn swapping_a_relevant_attribute_changes_the_answer() {
        let onto = AttributeOntology::default();
        let p = program(vec![
            step("select", None, &["tree"], &[]),
            step("relate", None, &["statue", "in front of", "s"], &[0]),
            step("query", None, &["color"], &[1]),
        ]);
        let edit = AnnotationEdit {
            object_id: "s1".into(),
            class_label: "statue".into(),
            attributes: ["gray".to_string(), "stone".to_string()].into(),
        };
        assert_eq!(
            symbolic_execute_on_swapped(&p, &park(), &[edit], &onto).unwrap(),
            "gray"
        );
    }
}
