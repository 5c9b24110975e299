use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::deform::DeformationSpec;
use crate::features::FeatureSpec;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::plan::{expand_grid, ExperimentPlan, RunSpec, CLEAN};
use crate::probes::ProbeSpec;

/// Bumped whenever a stage kernel changes its output for the same inputs.
pub const FORMAT_VERSION: u32 = 1;

/// Example track ids kept per confusion cell.
pub const CONFUSION_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Deform,
    Extract,
    Aggregate,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Deform, Stage::Extract, Stage::Aggregate, Stage::Train, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Deform => "deform",
            Stage::Extract => "extract",
            Stage::Aggregate => "aggregate",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

/// Which tracks of a dataset a node covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeTask {
    Deform { dataset: String, deformation: String, scope: Scope },
    Extract { dataset: String, feature: String, condition: String, scope: Scope },
    Aggregate { dataset: String, feature: String, condition: String },
    Train { dataset: String, task: String, feature: String, probe: String, seed: u64 },
    Evaluate { dataset: String, task: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageNode {
    pub stage: Stage,
    /// Canonical parameters of the stage (names of plan entries excluded).
    pub params: Value,
    pub input_keys: Vec<String>,
    pub format_version: u32,
    pub key: String,
    /// Indices of producer nodes, one per node-valued input key.
    pub deps: Vec<usize>,
    pub task: NodeTask,
}

#[derive(Debug, Clone)]
pub struct Dag {
    /// Topologically ordered: every dependency precedes its dependents.
    pub nodes: Vec<StageNode>,
    /// Every run of the grid and its evaluate node.
    pub runs: Vec<(RunSpec, usize)>,
    /// Dataset content digests, used as input keys of the first stages.
    pub dataset_keys: BTreeMap<String, String>,
}

impl Dag {
    pub fn count(&self, stage: Stage) -> usize {
        self.nodes.iter().filter(|n| n.stage == stage).count()
    }

    /// Stage-labelled keys of everything `node` transitively depends on,
    /// the node itself first, dataset digests last.
    pub fn lineage(&self, node: usize) -> Vec<(String, String)> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![node];
        let mut order = Vec::new();
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            order.push(i);
            stack.extend(self.nodes[i].deps.iter().rev());
        }
        order.sort_by_key(|&i| std::cmp::Reverse(i));
        let mut out: Vec<(String, String)> =
            order.iter().map(|&i| (self.nodes[i].stage.as_str().to_string(), self.nodes[i].key.clone())).collect();
        let mut data: Vec<&String> = order
            .iter()
            .flat_map(|&i| self.nodes[i].input_keys.iter())
            .filter(|k| self.dataset_keys.values().any(|d| d == *k))
            .collect();
        data.sort();
        data.dedup();
        out.extend(data.into_iter().map(|k| ("dataset".to_string(), k.clone())));
        out
    }
}

/// Canonical JSON: object keys sorted, numbers in shortest round-trip form.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over the canonical form of (stage, params, input keys, format version).
pub fn node_key(stage: Stage, params: &Value, input_keys: &[String], format_version: u32) -> String {
    let doc = json!({
        "stage": stage.as_str(),
        "params": params,
        "inputs": input_keys,
        "format_version": format_version,
    });
    sha256_hex(canonical_json(&doc).as_bytes())
}

struct Builder {
    nodes: Vec<StageNode>,
    by_key: HashMap<String, usize>,
}

impl Builder {
    fn add(&mut self, stage: Stage, params: Value, inputs: Vec<(String, Option<usize>)>, task: NodeTask) -> usize {
        let input_keys: Vec<String> = inputs.iter().map(|(k, _)| k.clone()).collect();
        let key = node_key(stage, &params, &input_keys, FORMAT_VERSION);
        if let Some(&i) = self.by_key.get(&key) {
            return i;
        }
        let node = StageNode {
            stage,
            params,
            input_keys,
            format_version: FORMAT_VERSION,
            key: key.clone(),
            deps: inputs.iter().filter_map(|(_, d)| *d).collect(),
            task,
        };
        self.nodes.push(node);
        self.by_key.insert(key, self.nodes.len() - 1);
        self.nodes.len() - 1
    }
}

fn deformation_params(spec: &DeformationSpec, scope: Scope) -> Value {
    json!({ "deformation": spec.kind, "seed_salt": spec.seed_salt, "scope": scope })
}

fn feature_params(spec: &FeatureSpec, scope: Scope) -> Value {
    json!({
        "source": spec.source,
        "window_s": spec.window_s,
        "hop_s": spec.hop_s,
        "target_sr": spec.target_sr,
        "extractor_version": spec.extractor_version(),
        "scope": scope,
    })
}

fn probe_params(spec: &ProbeSpec) -> Value {
    json!({ "architecture": spec.architecture, "dropout": spec.dropout })
}

/// Compiles the run grid into batch-level stage nodes. Each dataset is
/// identified by its content digest in `dataset_keys`.
///
/// Probes train on clean features; deformed audio only feeds evaluation
/// unless the plan sets `deform_training`.
pub fn build_dag(plan: &ExperimentPlan, dataset_keys: &BTreeMap<String, String>) -> Result<Dag, OrchestratorError> {
    let invalid = |m: String| OrchestratorError::Plan(m);
    let features: BTreeMap<String, FeatureSpec> =
        plan.feature_specs().map_err(invalid)?.into_iter().map(|f| (f.id.clone(), f)).collect();
    let deformations: BTreeMap<String, DeformationSpec> =
        plan.deformation_specs().map_err(invalid)?.into_iter().map(|d| (d.id.clone(), d)).collect();
    let probes: BTreeMap<String, ProbeSpec> =
        plan.probe_specs().map_err(invalid)?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let deform_scope = if plan.experiment.deform_training { Scope::All } else { Scope::Test };

    let mut b = Builder { nodes: Vec::new(), by_key: HashMap::new() };
    let mut runs = Vec::new();
    let agg = &plan.aggregation;
    let agg_params = json!({
        "mode": agg.mode,
        "representation_op": agg.representation_op,
        "prediction_op": agg.prediction_op,
    });

    for spec in expand_grid(plan) {
        let ds_key = dataset_keys
            .get(&spec.dataset_id)
            .ok_or_else(|| OrchestratorError::Plan(format!("unresolved dataset {}", spec.dataset_id)))?
            .clone();
        let entry = plan.dataset(&spec.dataset_id).expect("grid datasets come from the plan");
        let task =
            entry.bound_tasks().into_iter().find(|t| t.id == spec.task_id).expect("grid tasks come from the plan");
        let feature = &features[&spec.feature_id];
        let probe = &probes[&spec.probe_id];

        // aggregate node for a condition, creating deform/extract as needed
        let features_for = |b: &mut Builder, condition: &str| -> usize {
            let (extract_input, scope) = if condition == CLEAN {
                ((ds_key.clone(), None), Scope::All)
            } else {
                let d = &deformations[condition];
                let di = b.add(
                    Stage::Deform,
                    deformation_params(d, deform_scope),
                    vec![(ds_key.clone(), None)],
                    NodeTask::Deform {
                        dataset: spec.dataset_id.clone(),
                        deformation: condition.to_string(),
                        scope: deform_scope,
                    },
                );
                ((b.nodes[di].key.clone(), Some(di)), deform_scope)
            };
            let ei = b.add(
                Stage::Extract,
                feature_params(feature, scope),
                vec![extract_input],
                NodeTask::Extract {
                    dataset: spec.dataset_id.clone(),
                    feature: spec.feature_id.clone(),
                    condition: condition.to_string(),
                    scope,
                },
            );
            b.add(
                Stage::Aggregate,
                agg_params.clone(),
                vec![(b.nodes[ei].key.clone(), Some(ei))],
                NodeTask::Aggregate {
                    dataset: spec.dataset_id.clone(),
                    feature: spec.feature_id.clone(),
                    condition: condition.to_string(),
                },
            )
        };

        let train_condition = if plan.experiment.deform_training { spec.deformation_id.as_str() } else { CLEAN };
        let train_agg = features_for(&mut b, train_condition);
        let eval_agg = features_for(&mut b, &spec.deformation_id);
        let ti = b.add(
            Stage::Train,
            json!({
                "task": task,
                "probe": probe_params(probe),
                "optimizer": plan.optimizer,
                "seed": spec.seed,
                "standardize": agg.standardize,
                "mode": agg.mode,
            }),
            vec![(b.nodes[train_agg].key.clone(), Some(train_agg))],
            NodeTask::Train {
                dataset: spec.dataset_id.clone(),
                task: spec.task_id.clone(),
                feature: spec.feature_id.clone(),
                probe: spec.probe_id.clone(),
                seed: spec.seed,
            },
        );
        let vi = b.add(
            Stage::Evaluate,
            json!({
                "task": task,
                "mode": agg.mode,
                "confusion_cap": CONFUSION_CAP,
                "threshold": DEFAULT_THRESHOLD,
            }),
            vec![(b.nodes[ti].key.clone(), Some(ti)), (b.nodes[eval_agg].key.clone(), Some(eval_agg))],
            NodeTask::Evaluate { dataset: spec.dataset_id.clone(), task: spec.task_id.clone() },
        );
        runs.push((spec, vi));
    }

    Ok(Dag { nodes: b.nodes, runs, dataset_keys: dataset_keys.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{parse_plan, DeformationEntry, ProbeEntry};
    use crate::probes::Architecture;

    const PLAN: &str = r#"
[experiment]
name = "t"
output_dir = "out"

[[datasets]]
id = "tones"
tasks = [{ id = "pitch_class", kind = "multiclass" }]
[datasets.synthetic]
kind = "tonebank"

[[features]]
id = "mfcc"
builtin = "mfcc_stats"

[[probes]]
id = "slp"
architecture = "slp"
"#;

    fn keys() -> BTreeMap<String, String> {
        [("tones".to_string(), "d".repeat(64))].into()
    }

    fn with_deformations(n: usize) -> ExperimentPlan {
        let mut plan = parse_plan(PLAN).unwrap();
        plan.deformations =
            crate::deform::default_deformation_suite().iter().take(n).map(DeformationEntry::from_spec).collect();
        plan
    }

    #[test]
    fn training_is_shared_across_deformations() {
        let dag = build_dag(&with_deformations(2), &keys()).unwrap();
        assert_eq!(dag.count(Stage::Train), 1);
        assert_eq!(dag.count(Stage::Evaluate), 3);
        assert_eq!(dag.count(Stage::Deform), 2);
        assert_eq!(dag.runs.len(), 3);
    }

    #[test]
    fn clean_only_has_no_deform_nodes() {
        let dag = build_dag(&with_deformations(0), &keys()).unwrap();
        assert_eq!(dag.count(Stage::Deform), 0);
        assert_eq!(dag.nodes.len(), 4);
    }

    #[test]
    fn probes_share_extraction() {
        let mut plan = with_deformations(0);
        plan.probes.push(ProbeEntry::from_spec(&ProbeSpec::new("mlp", Architecture::Mlp { hidden: vec![8] })));
        let dag = build_dag(&plan, &keys()).unwrap();
        assert_eq!(dag.count(Stage::Extract), 1);
        assert_eq!(dag.count(Stage::Train), 2);
    }

    #[test]
    fn deform_training_moves_training_onto_deformed_audio() {
        let mut plan = with_deformations(1);
        plan.experiment.deform_training = true;
        let dag = build_dag(&plan, &keys()).unwrap();
        assert_eq!(dag.count(Stage::Train), 2);
        let trains_on_deformed = dag
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.stage == Stage::Train)
            .any(|(i, _)| dag.lineage(i).iter().any(|(s, _)| s == "deform"));
        assert!(trains_on_deformed);
    }

    #[test]
    fn eval_only_lineage() {
        let dag = build_dag(&with_deformations(4), &keys()).unwrap();
        for (i, n) in dag.nodes.iter().enumerate() {
            let has_deform = dag.lineage(i).iter().any(|(s, _)| s == "deform");
            match n.stage {
                Stage::Train => assert!(!has_deform),
                _ => {}
            }
        }
        for (run, vi) in &dag.runs {
            let has_deform = dag.lineage(*vi).iter().any(|(s, _)| s == "deform");
            assert_eq!(has_deform, !run.is_clean());
        }
    }

    #[test]
    fn topological_order() {
        let dag = build_dag(&with_deformations(2), &keys()).unwrap();
        for (i, n) in dag.nodes.iter().enumerate() {
            assert!(n.deps.iter().all(|&d| d < i));
        }
    }

    #[test]
    fn keys_are_stable_and_sensitive() {
        let a = build_dag(&with_deformations(1), &keys()).unwrap();
        let b = build_dag(&with_deformations(1), &keys()).unwrap();
        let ka: Vec<_> = a.nodes.iter().map(|n| n.key.clone()).collect();
        let kb: Vec<_> = b.nodes.iter().map(|n| n.key.clone()).collect();
        assert_eq!(ka, kb);

        let mut plan = with_deformations(1);
        plan.optimizer.lr = 2e-3;
        let c = build_dag(&plan, &keys()).unwrap();
        for (x, y) in a.nodes.iter().zip(&c.nodes) {
            let same = x.key == y.key;
            match x.stage {
                Stage::Deform | Stage::Extract | Stage::Aggregate => assert!(same),
                Stage::Train | Stage::Evaluate => assert!(!same),
            }
        }
    }

    #[test]
    fn canonical_form_ignores_map_order() {
        let p1: Value = serde_json::from_str(r#"{"b": 1e-3, "a": [1, {"y": 2, "x": 0.1}]}"#).unwrap();
        let p2: Value = serde_json::from_str(r#"{"a": [1, {"x": 0.1, "y": 2}], "b": 0.001}"#).unwrap();
        assert_eq!(canonical_json(&p1), r#"{"a":[1,{"x":0.1,"y":2}],"b":0.001}"#);
        assert_eq!(node_key(Stage::Train, &p1, &[], 1), node_key(Stage::Train, &p2, &[], 1));
        let p3: Value = serde_json::from_str(r#"{"a": [1, {"x": 0.1, "y": 2}], "b": 0.002}"#).unwrap();
        assert_ne!(node_key(Stage::Train, &p1, &[], 1), node_key(Stage::Train, &p3, &[], 1));
        assert_ne!(node_key(Stage::Train, &p1, &[], 1), node_key(Stage::Train, &p1, &[], 2));
        assert_eq!(node_key(Stage::Train, &p1, &[], 1).len(), 64);
    }
}
