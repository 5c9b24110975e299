//! Experiment configuration: TOML parsing, validation and grid expansion.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{NoiseBandSpec, SplitPolicy, TaskDecl, TaskKind, ToneBankSpec, XorSpec};
use crate::deform::{DeformKind, DeformationSpec};
use crate::features::{AggregationMode, AggregationSpec, BuiltinExtractor, FeatureSource, FeatureSpec};
use crate::probes::{AdaptiveVariant, Architecture, OptimizerSpec, ProbeSpec};

/// Deformation id of the undeformed condition, always part of the grid.
pub const CLEAN: &str = "clean";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid plan:\n{}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Path-like location, e.g. `features[1].id`.
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} {}: {}", self.locus, self.message)
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Train probes on deformed audio too (off: deformations are eval-only).
    #[serde(default)]
    pub deform_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    Tonebank {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out_dir: Option<PathBuf>,
        #[serde(default)]
        params: ToneBankSpec,
    },
    Noiseband {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out_dir: Option<PathBuf>,
        #[serde(default)]
        params: NoiseBandSpec,
    },
    Xor {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out_dir: Option<PathBuf>,
        #[serde(default)]
        params: XorSpec,
    },
}

impl SyntheticSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SyntheticSpec::Tonebank { .. } => "tonebank",
            SyntheticSpec::Noiseband { .. } => "noiseband",
            SyntheticSpec::Xor { .. } => "xor",
        }
    }

    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            SyntheticSpec::Tonebank { out_dir, .. }
            | SyntheticSpec::Noiseband { out_dir, .. }
            | SyntheticSpec::Xor { out_dir, .. } => out_dir.as_deref(),
        }
    }

    fn out_dir_mut(&mut self) -> &mut Option<PathBuf> {
        match self {
            SyntheticSpec::Tonebank { out_dir, .. }
            | SyntheticSpec::Noiseband { out_dir, .. }
            | SyntheticSpec::Xor { out_dir, .. } => out_dir,
        }
    }

    /// Tasks the generator writes into its manifest.
    pub fn tasks(&self) -> Vec<TaskDecl> {
        let mc = |id: &str| TaskDecl { id: id.into(), kind: TaskKind::Multiclass };
        match self {
            SyntheticSpec::Tonebank { .. } => vec![mc("pitch_class"), mc("timbre")],
            SyntheticSpec::Noiseband { .. } => vec![mc("band")],
            SyntheticSpec::Xor { .. } => vec![mc("xor")],
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            SyntheticSpec::Tonebank { params, .. } => params.check(),
            SyntheticSpec::Noiseband { params, .. } => params.check(),
            SyntheticSpec::Xor { params, .. } => params.check(),
        }
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Task bindings; empty means every task of a synthetic generator.
    #[serde(default)]
    pub tasks: Vec<TaskDecl>,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetEntry {
    /// Tasks evaluated for this dataset.
    pub fn bound_tasks(&self) -> Vec<TaskDecl> {
        if !self.tasks.is_empty() {
            return self.tasks.clone();
        }
        self.synthetic.as_ref().map(|s| s.tasks()).unwrap_or_default()
    }
}

fn default_window() -> f64 {
    crate::features::DEFAULT_WINDOW_S
}

fn default_sr() -> u32 {
    crate::features::DEFAULT_TARGET_SR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Command template with `{manifest}` and `{outdir}` placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plugin: Option<String>,
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default = "default_window")]
    pub hop_s: f64,
    #[serde(default = "default_sr")]
    pub target_sr: u32,
}

impl FeatureEntry {
    pub fn to_spec(&self) -> Result<FeatureSpec, String> {
        let source =
            match (&self.builtin, &self.plugin) {
                (Some(name), None) => FeatureSource::Builtin(BuiltinExtractor::from_name(name).ok_or_else(|| {
                    format!("unknown builtin {name:?} (expected mfcc_stats, mel_stats or chroma_stats)")
                })?),
                (None, Some(cmd)) => FeatureSource::Plugin(cmd.clone()),
                _ => return Err("set exactly one of `builtin` or `plugin`".into()),
            };
        let spec = FeatureSpec {
            id: self.id.clone(),
            source,
            window_s: self.window_s,
            hop_s: self.hop_s,
            target_sr: self.target_sr,
        };
        spec.check().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_noise_snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowpass_cutoff_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<u32>,
    /// Command template with `{in}` and `{out}` WAV placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_codec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec_sim: Option<bool>,
    #[serde(default)]
    pub seed_salt: u64,
}

impl DeformationEntry {
    pub fn to_spec(&self) -> Result<DeformationSpec, String> {
        let mut kinds = Vec::new();
        if let Some(snr_db) = self.white_noise_snr_db {
            kinds.push(DeformKind::WhiteNoise { snr_db });
        }
        if let Some(db) = self.gain_db {
            kinds.push(DeformKind::Gain { db });
        }
        if let Some(cutoff_hz) = self.lowpass_cutoff_hz {
            kinds.push(DeformKind::Lowpass { cutoff_hz });
        }
        if let Some(bits) = self.bit_depth {
            kinds.push(DeformKind::BitDepth { bits });
        }
        if let Some(command) = &self.external_codec {
            kinds.push(DeformKind::ExternalCodec { command: command.clone() });
        }
        if self.codec_sim == Some(true) {
            kinds.push(DeformKind::CodecSim);
        }
        if kinds.len() != 1 {
            return Err(format!(
                "exactly one deformation kind per spec (found {})",
                if kinds.is_empty() {
                    "none".to_string()
                } else {
                    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
                }
            ));
        }
        let spec = DeformationSpec { id: self.id.clone(), kind: kinds.pop().unwrap(), seed_salt: self.seed_salt };
        spec.check().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn from_spec(spec: &DeformationSpec) -> Self {
        let mut e = DeformationEntry {
            id: spec.id.clone(),
            white_noise_snr_db: None,
            gain_db: None,
            lowpass_cutoff_hz: None,
            bit_depth: None,
            external_codec: None,
            codec_sim: None,
            seed_salt: spec.seed_salt,
        };
        match &spec.kind {
            DeformKind::WhiteNoise { snr_db } => e.white_noise_snr_db = Some(*snr_db),
            DeformKind::Gain { db } => e.gain_db = Some(*db),
            DeformKind::Lowpass { cutoff_hz } => e.lowpass_cutoff_hz = Some(*cutoff_hz),
            DeformKind::BitDepth { bits } => e.bit_depth = Some(*bits),
            DeformKind::ExternalCodec { command } => e.external_codec = Some(command.clone()),
            DeformKind::CodecSim => e.codec_sim = Some(true),
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeEntry {
    pub id: String,
    /// `slp`, `mlp` or `mlp_adaptive`.
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<AdaptiveVariant>,
    #[serde(default)]
    pub dropout: f64,
}

impl ProbeEntry {
    pub fn to_spec(&self) -> Result<ProbeSpec, String> {
        let architecture = match (self.architecture.as_str(), &self.hidden, self.variant) {
            ("slp", None, None) => Architecture::Slp,
            ("mlp", Some(hidden), None) => Architecture::Mlp { hidden: hidden.clone() },
            ("mlp", None, _) => return Err("mlp needs `hidden`".into()),
            ("mlp_adaptive", None, Some(variant)) => Architecture::MlpAdaptive { variant },
            ("mlp_adaptive", _, None) => return Err("mlp_adaptive needs `variant` (half or full_half)".into()),
            ("slp" | "mlp" | "mlp_adaptive", _, _) => {
                return Err(format!("`hidden`/`variant` do not apply to architecture {}", self.architecture))
            }
            (other, _, _) => return Err(format!("unknown architecture {other:?} (expected slp, mlp or mlp_adaptive)")),
        };
        let spec = ProbeSpec { id: self.id.clone(), architecture, dropout: self.dropout };
        spec.check().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ProbeSpec) -> Self {
        let (architecture, hidden, variant) = match &spec.architecture {
            Architecture::Slp => ("slp", None, None),
            Architecture::Mlp { hidden } => ("mlp", Some(hidden.clone()), None),
            Architecture::MlpAdaptive { variant } => ("mlp_adaptive", None, Some(*variant)),
        };
        ProbeEntry { id: spec.id.clone(), architecture: architecture.into(), hidden, variant, dropout: spec.dropout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub aggregation: AggregationSpec,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub features: Vec<FeatureEntry>,
    #[serde(default)]
    pub deformations: Vec<DeformationEntry>,
    #[serde(default)]
    pub probes: Vec<ProbeEntry>,
}

/// One concrete pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset_id: String,
    pub task_id: String,
    pub feature_id: String,
    /// A deformation id or [`CLEAN`].
    pub deformation_id: String,
    pub probe_id: String,
    pub seed: u64,
    pub aggregation_mode: AggregationMode,
}

impl RunSpec {
    pub fn is_clean(&self) -> bool {
        self.deformation_id == CLEAN
    }
}

/// Parses the TOML document structure only (syntax, unknown keys, types).
pub fn parse_document(text: &str) -> Result<ExperimentPlan, PlanError> {
    toml::from_str(text).map_err(|e| PlanError::Syntax(e.to_string().trim_end().to_string()))
}

/// Parses and checks the plan's own invariants (no filesystem access).
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, PlanError> {
    let plan = parse_document(text)?;
    let diags: Vec<Diagnostic> =
        check_invariants(&plan).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if diags.is_empty() {
        Ok(plan)
    } else {
        Err(PlanError::Invalid(diags))
    }
}

/// Reads a config file; relative paths inside are resolved against its directory.
pub fn read_plan_document(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io { path: path.to_path_buf(), source })?;
    let mut plan = parse_document(&text)?;
    plan.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(plan)
}

/// [`read_plan_document`] followed by the invariant checks of [`parse_plan`].
pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let plan = read_plan_document(path)?;
    let diags: Vec<Diagnostic> =
        check_invariants(&plan).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if diags.is_empty() {
        Ok(plan)
    } else {
        Err(PlanError::Invalid(diags))
    }
}

pub fn to_toml(plan: &ExperimentPlan) -> String {
    toml::to_string(plan).expect("plans always serialize")
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentPlan {
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.experiment.output_dir);
        for d in &mut self.datasets {
            if let Some(m) = &mut d.manifest {
                resolve(base, m);
            }
            if let Some(s) = &mut d.synthetic {
                if let Some(dir) = s.out_dir_mut() {
                    resolve(base, dir);
                }
            }
        }
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id)
    }

    /// Where a synthetic dataset is generated.
    pub fn synthetic_dir(&self, entry: &DatasetEntry) -> Option<PathBuf> {
        let s = entry.synthetic.as_ref()?;
        Some(
            s.out_dir()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| self.experiment.output_dir.join("datasets").join(&entry.id)),
        )
    }

    pub fn feature_specs(&self) -> Result<Vec<FeatureSpec>, String> {
        self.features.iter().map(FeatureEntry::to_spec).collect()
    }

    pub fn deformation_specs(&self) -> Result<Vec<DeformationSpec>, String> {
        self.deformations.iter().map(DeformationEntry::to_spec).collect()
    }

    pub fn probe_specs(&self) -> Result<Vec<ProbeSpec>, String> {
        self.probes.iter().map(ProbeEntry::to_spec).collect()
    }

    /// Condition ids: CLEAN followed by the configured deformations.
    pub fn conditions(&self) -> Vec<String> {
        std::iter::once(CLEAN.to_string()).chain(self.deformations.iter().map(|d| d.id.clone())).collect()
    }
}

/// Expands the cartesian grid, sorted lexicographically over the run tuple.
pub fn expand_grid(plan: &ExperimentPlan) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for d in &plan.datasets {
        for t in d.bound_tasks() {
            for f in &plan.features {
                for c in plan.conditions() {
                    for p in &plan.probes {
                        for &seed in &plan.experiment.seeds {
                            runs.push(RunSpec {
                                dataset_id: d.id.clone(),
                                task_id: t.id.clone(),
                                feature_id: f.id.clone(),
                                deformation_id: c.clone(),
                                probe_id: p.id.clone(),
                                seed,
                                aggregation_mode: plan.aggregation.mode,
                            });
                        }
                    }
                }
            }
        }
    }
    runs.sort();
    runs
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn error(&mut self, locus: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic { severity: Severity::Error, locus: locus.into(), message: message.into() });
    }

    fn warning(&mut self, locus: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic { severity: Severity::Warning, locus: locus.into(), message: message.into() });
    }

    fn unique<'a>(&mut self, section: &str, what: &str, ids: impl Iterator<Item = &'a str>) {
        let mut seen = BTreeSet::new();
        for (i, id) in ids.enumerate() {
            if id.is_empty() {
                self.error(format!("{section}[{i}].id"), "empty id");
            } else if !seen.insert(id) {
                self.error(format!("{section}[{i}].id"), format!("duplicate {what} id {id:?}"));
            }
        }
    }
}

/// Type invariants and cross-references within the document.
fn check_invariants(plan: &ExperimentPlan) -> Vec<Diagnostic> {
    let mut d = Diags(Vec::new());
    let e = &plan.experiment;
    if e.name.trim().is_empty() {
        d.error("experiment.name", "must be nonempty");
    }
    if e.parallelism == 0 {
        d.error("experiment.parallelism", "must be a positive integer");
    }
    if e.seeds.is_empty() {
        d.error("experiment.seeds", "must be nonempty");
    }
    let distinct: BTreeSet<_> = e.seeds.iter().collect();
    if distinct.len() != e.seeds.len() {
        d.error("experiment.seeds", "seeds must be distinct");
    }

    for (section, empty) in [
        ("datasets", plan.datasets.is_empty()),
        ("features", plan.features.is_empty()),
        ("probes", plan.probes.is_empty()),
    ] {
        if empty {
            d.error(section, format!("at least one [[{section}]] entry is required"));
        }
    }
    d.unique("datasets", "dataset", plan.datasets.iter().map(|x| x.id.as_str()));
    d.unique("features", "feature", plan.features.iter().map(|x| x.id.as_str()));
    d.unique("deformations", "deformation", plan.deformations.iter().map(|x| x.id.as_str()));
    d.unique("probes", "probe", plan.probes.iter().map(|x| x.id.as_str()));

    for (i, ds) in plan.datasets.iter().enumerate() {
        let at = |k: &str| format!("datasets[{i}].{k}");
        match (&ds.manifest, &ds.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                d.error(format!("datasets[{i}]"), "set exactly one of `manifest` or `synthetic`")
            }
            (Some(_), None) if ds.tasks.is_empty() => {
                d.error(at("tasks"), "manifest datasets must bind at least one task")
            }
            (None, Some(s)) => {
                if let Err(m) = s.check() {
                    d.error(at("synthetic"), m);
                }
                let known = s.tasks();
                for (j, t) in ds.tasks.iter().enumerate() {
                    if !known.iter().any(|k| k == t) {
                        d.error(
                            format!("datasets[{i}].tasks[{j}]"),
                            format!("{} datasets have no {} task {:?}", s.kind_name(), t.kind.as_str(), t.id),
                        );
                    }
                }
            }
            _ => {}
        }
        d.unique(&at("tasks"), "task", ds.tasks.iter().map(|t| t.id.as_str()));
        if let Err(err) = ds.split.check() {
            d.error(at("split"), err.to_string());
        }
    }
    for (i, f) in plan.features.iter().enumerate() {
        if let Err(m) = f.to_spec() {
            d.error(format!("features[{i}]"), m);
        }
    }
    for (i, x) in plan.deformations.iter().enumerate() {
        if x.id == CLEAN {
            d.error(format!("deformations[{i}].id"), format!("{CLEAN:?} is reserved for the undeformed condition"));
        }
        if let Err(m) = x.to_spec() {
            d.error(format!("deformations[{i}]"), m);
        }
    }
    for (i, p) in plan.probes.iter().enumerate() {
        if let Err(m) = p.to_spec() {
            d.error(format!("probes[{i}]"), m);
        }
    }
    if let Err(err) = plan.optimizer.check() {
        d.error("optimizer", err.to_string());
    }
    if plan.aggregation.mode == AggregationMode::Prediction
        && plan.aggregation.representation_op != crate::features::RepresentationOp::Mean
    {
        d.warning("aggregation.representation_op", "ignored in prediction mode");
    }
    d.0
}

/// All diagnostics: plan invariants plus filesystem references.
pub fn validate(plan: &ExperimentPlan) -> Vec<Diagnostic> {
    let mut d = Diags(check_invariants(plan));
    for (i, ds) in plan.datasets.iter().enumerate() {
        if let Some(m) = &ds.manifest {
            if !m.is_file() {
                d.error(format!("datasets[{i}].manifest"), format!("manifest not found: {}", m.display()));
            }
        }
    }
    d.0
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}
