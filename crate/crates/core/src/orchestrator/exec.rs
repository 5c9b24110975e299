//! DAG execution: a cache probe walks back from the evaluate nodes to find
//! what must be computed, then a pool of workers runs the ready nodes in
//! (stage, index) order and publishes each result to the cache.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cache::{Blob, Cache, Lookup};
use super::dag::{Dag, Stage};
use super::datasets::PreparedDataset;
use super::kernels::run_node;
use super::OrchestratorError;
use crate::deform::DeformationSpec;
use crate::features::FeatureSpec;
use crate::plan::ExperimentPlan;
use crate::probes::ProbeSpec;

/// Everything the stage kernels read.
pub struct Context<'a> {
    pub plan: &'a ExperimentPlan,
    pub datasets: &'a BTreeMap<String, PreparedDataset>,
    pub cache: &'a Cache,
    pub(crate) features: BTreeMap<String, FeatureSpec>,
    pub(crate) deformations: BTreeMap<String, DeformationSpec>,
    pub(crate) probes: BTreeMap<String, ProbeSpec>,
}

impl<'a> Context<'a> {
    pub fn new(
        plan: &'a ExperimentPlan,
        datasets: &'a BTreeMap<String, PreparedDataset>,
        cache: &'a Cache,
    ) -> Result<Self, OrchestratorError> {
        Ok(Self {
            plan,
            datasets,
            cache,
            features: plan
                .feature_specs()
                .map_err(OrchestratorError::Plan)?
                .into_iter()
                .map(|f| (f.id.clone(), f))
                .collect(),
            deformations: plan
                .deformation_specs()
                .map_err(OrchestratorError::Plan)?
                .into_iter()
                .map(|d| (d.id.clone(), d))
                .collect(),
            probes: plan
                .probe_specs()
                .map_err(OrchestratorError::Plan)?
                .into_iter()
                .map(|p| (p.id.clone(), p))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub parallelism: usize,
    pub cancel: Option<Arc<AtomicBool>>,
    /// Stop scheduling once every pending node of this stage has finished.
    pub halt_after: Option<Stage>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { parallelism: 1, cancel: None, halt_after: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Hit,
    Run,
    Fail,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Hit => "hit",
            Status::Run => "run",
            Status::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProgressEvent {
    pub stage: Stage,
    pub key: String,
    pub status: Status,
    pub message: Option<String>,
}

impl fmt::Display for ProgressEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} key={} status={}", self.stage.as_str(), self.key, self.status.as_str())?;
        if let Some(m) = &self.message {
            write!(f, " error={m:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFailure {
    pub stage: Stage,
    pub key: String,
    pub message: String,
    pub lineage: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub hits: usize,
    pub runs: usize,
    pub failed: usize,
    /// Nodes skipped because something upstream failed.
    pub aborted: usize,
    /// Cached blobs that failed their digest check and were recomputed.
    pub corrupt: usize,
    /// Needed nodes never started (cancellation or halt).
    pub not_started: usize,
}

impl ExecStats {
    pub fn needed(&self) -> usize {
        self.hits + self.runs + self.failed + self.aborted + self.not_started
    }
}

#[derive(Debug)]
pub struct ExecReport {
    /// Blobs of the evaluate nodes that are available, by node index.
    pub outputs: BTreeMap<usize, Arc<Blob>>,
    pub failures: Vec<NodeFailure>,
    pub stats: ExecStats,
    pub cancelled: bool,
    pub halted: bool,
}

/// Per-node timing of everything upstream, carried in each blob's meta so a
/// cache hit reproduces the timing of the run that computed it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct Meta {
    pub lineage: BTreeMap<String, (Stage, f64)>,
}

impl Meta {
    pub(crate) fn of(blob: &Blob) -> Self {
        serde_json::from_slice(&blob.meta).unwrap_or_default()
    }
}

/// Wall seconds per stage over a blob's lineage and the node itself.
pub(crate) fn stage_timing(blob: &Blob, stage: Stage) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (st, secs) in Meta::of(blob).lineage.into_values() {
        *out.entry(st.as_str().to_string()).or_insert(0.0) += secs;
    }
    *out.entry(stage.as_str().to_string()).or_insert(0.0) += blob.elapsed;
    out
}

struct State {
    ready: BinaryHeap<Reverse<(Stage, usize)>>,
    /// Unfinished producer count per node.
    pending: Vec<usize>,
    dead: Vec<bool>,
    in_flight: usize,
    /// Still-unfinished scheduled nodes per stage.
    remaining: BTreeMap<Stage, usize>,
    halted: bool,
    failures: Vec<NodeFailure>,
    stats: ExecStats,
    memo: HashMap<usize, Arc<Blob>>,
    /// Consumers still to read each memoized blob.
    readers: Vec<usize>,
}

pub fn execute(ctx: &Context, dag: &Dag, opts: &ExecOptions, progress: &(dyn Fn(&ProgressEvent) + Sync)) -> ExecReport {
    let n = dag.nodes.len();
    let mut needed = vec![false; n];
    let mut to_run = vec![false; n];
    let mut stats = ExecStats::default();
    let mut memo = HashMap::new();
    for &(_, vi) in &dag.runs {
        needed[vi] = true;
    }
    for i in (0..n).rev() {
        if !needed[i] {
            continue;
        }
        let node = &dag.nodes[i];
        match ctx.cache.get(&node.key) {
            Lookup::Hit(blob) => {
                stats.hits += 1;
                progress(&ProgressEvent {
                    stage: node.stage,
                    key: node.key.clone(),
                    status: Status::Hit,
                    message: None,
                });
                memo.insert(i, Arc::new(blob));
                continue;
            }
            Lookup::Corrupt(why) => {
                log::warn!("cache entry {} is corrupt ({why}); recomputing", node.key);
                stats.corrupt += 1;
            }
            Lookup::Miss => {}
        }
        to_run[i] = true;
        for &d in &node.deps {
            needed[d] = true;
        }
    }

    let mut dependents = vec![Vec::new(); n];
    let mut readers = vec![0usize; n];
    let mut pending = vec![0usize; n];
    let mut remaining = BTreeMap::new();
    let mut ready = BinaryHeap::new();
    for i in (0..n).filter(|&i| to_run[i]) {
        let node = &dag.nodes[i];
        for &d in &node.deps {
            readers[d] += 1;
            if to_run[d] {
                dependents[d].push(i);
                pending[i] += 1;
            }
        }
        *remaining.entry(node.stage).or_insert(0) += 1;
        if pending[i] == 0 {
            ready.push(Reverse((node.stage, i)));
        }
    }
    // Hits that nothing scheduled reads are only kept if they are results.
    let is_eval = |i: usize| dag.nodes[i].stage == Stage::Evaluate;
    memo.retain(|&i, _| readers[i] > 0 || is_eval(i));

    let halt_now = opts
        .halt_after
        .is_some_and(|s| remaining.get(&s).copied().unwrap_or(0) == 0 && remaining.keys().any(|&k| k > s));
    let state = Mutex::new(State {
        ready,
        pending,
        dead: vec![false; n],
        in_flight: 0,
        remaining,
        halted: halt_now,
        failures: Vec::new(),
        stats,
        memo,
        readers,
    });
    let wake = Condvar::new();
    let cancelled = || opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));

    let worker = || loop {
        let (i, inputs) = {
            let mut st = state.lock().unwrap();
            let i = loop {
                if st.halted || cancelled() {
                    return;
                }
                if let Some(Reverse((_, i))) = st.ready.pop() {
                    break i;
                }
                if st.in_flight == 0 {
                    return;
                }
                st = wake.wait(st).unwrap();
            };
            st.in_flight += 1;
            let inputs: Vec<Arc<Blob>> = dag.nodes[i].deps.iter().map(|d| st.memo[d].clone()).collect();
            (i, inputs)
        };

        let node = &dag.nodes[i];
        let started = Instant::now();
        let slices: Vec<&[u8]> = inputs.iter().map(|b| b.body.as_slice()).collect();
        let outcome = catch_unwind(AssertUnwindSafe(|| run_node(ctx, node, &slices))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(OrchestratorError::Plan(format!("internal error: {msg}")))
        });
        let elapsed = started.elapsed().as_secs_f64();
        let published = outcome.and_then(|body| {
            let mut meta = Meta::default();
            for (&d, blob) in node.deps.iter().zip(&inputs) {
                meta.lineage.extend(Meta::of(blob).lineage);
                meta.lineage.insert(dag.nodes[d].key.clone(), (dag.nodes[d].stage, blob.elapsed));
            }
            let blob = Blob { elapsed, meta: serde_json::to_vec(&meta).expect("meta serializes"), body };
            ctx.cache
                .put(&node.key, node.stage.as_str(), &blob)
                .map_err(|e| OrchestratorError::io(&ctx.cache.blob_path(&node.key), e))?;
            Ok(blob)
        });
        drop(inputs);

        let mut st = state.lock().unwrap();
        st.in_flight -= 1;
        for &d in &node.deps {
            st.readers[d] -= 1;
            if st.readers[d] == 0 && !is_eval(d) {
                st.memo.remove(&d);
            }
        }
        *st.remaining.get_mut(&node.stage).unwrap() -= 1;
        match published {
            Ok(blob) => {
                st.stats.runs += 1;
                st.memo.insert(i, Arc::new(blob));
                progress(&ProgressEvent {
                    stage: node.stage,
                    key: node.key.clone(),
                    status: Status::Run,
                    message: None,
                });
                for &j in &dependents[i] {
                    st.pending[j] -= 1;
                    if st.pending[j] == 0 && !st.dead[j] {
                        st.ready.push(Reverse((dag.nodes[j].stage, j)));
                    }
                }
            }
            Err(e) => {
                let message = e.to_string();
                st.stats.failed += 1;
                progress(&ProgressEvent {
                    stage: node.stage,
                    key: node.key.clone(),
                    status: Status::Fail,
                    message: Some(message.clone()),
                });
                st.failures.push(NodeFailure {
                    stage: node.stage,
                    key: node.key.clone(),
                    message,
                    lineage: dag.lineage(i),
                });
                // Everything downstream is abandoned.
                let mut stack = dependents[i].clone();
                while let Some(j) = stack.pop() {
                    if std::mem::replace(&mut st.dead[j], true) {
                        continue;
                    }
                    st.stats.aborted += 1;
                    *st.remaining.get_mut(&dag.nodes[j].stage).unwrap() -= 1;
                    st.failures.push(NodeFailure {
                        stage: dag.nodes[j].stage,
                        key: dag.nodes[j].key.clone(),
                        message: format!("skipped: upstream {} node {} failed", node.stage.as_str(), node.key),
                        lineage: dag.lineage(j),
                    });
                    stack.extend(dependents[j].iter().copied());
                }
            }
        }
        if let Some(s) = opts.halt_after {
            if node.stage == s && st.remaining.get(&s).copied().unwrap_or(0) == 0 {
                st.halted = true;
            }
        }
        wake.notify_all();
    };

    let threads = opts.parallelism.max(1);
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(worker);
            }
        });
    }

    let st = state.into_inner().unwrap();
    let mut stats = st.stats;
    stats.not_started = st.remaining.values().sum();
    let outputs = st.memo.into_iter().filter(|(i, _)| is_eval(*i)).collect();
    ExecReport { outputs, failures: st.failures, stats, cancelled: cancelled(), halted: st.halted }
}
