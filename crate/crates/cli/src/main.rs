use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use repref_core::dataio::{
    synth_noiseband, synth_tonebank, synth_xor, DataError, NoiseBandSpec, ToneBankSpec, XorSpec,
};
use repref_core::orchestrator::{
    clean_cache, default_cache_dir, dry_run, run_experiment, OrchestratorError, ProgressEvent, RunOptions, Stage,
    RESULTS_JSONL,
};
use repref_core::plan::{has_errors, load_plan, read_plan_document, validate, PlanError};
use repref_core::report::{
    confusion_report, results_table, write_table, ConfusionInputs, Preset, ReportError, ReportSource,
};

#[derive(Parser)]
#[command(name = "repref", version, about = "Evaluate audio representations with downstream probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan file and print its diagnostics.
    Validate { config: PathBuf },
    /// Execute a plan, reusing cached stage outputs.
    Run(RunArgs),
    /// Build tables and confusion pages from stored results.
    Report(ReportArgs),
    /// Generate a synthetic dataset.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Delete a cache directory's contents.
    CleanCache {
        #[arg(long, env = "REPREF_CACHE")]
        cache: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Worker threads (overrides the plan).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Cache directory (default: <output_dir>/cache).
    #[arg(long, env = "REPREF_CACHE")]
    cache: Option<PathBuf>,
    /// Continue an interrupted run in the same output directory.
    #[arg(long)]
    resume: bool,
    /// Print the run grid and node counts without executing.
    #[arg(long)]
    dry_run: bool,
    /// Stop right after every node of this stage has finished (fault injection).
    #[arg(long, hide = true, value_parser = parse_stage)]
    halt_after: Option<Stage>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::from_name(s).ok_or_else(|| format!("unknown stage {s:?}"))
}

#[derive(Args)]
struct ReportArgs {
    /// results.jsonl, or the run output directory containing it.
    results: PathBuf,
    /// Table preset; repeatable. Without --preset or --confusion every
    /// applicable preset is written.
    #[arg(long, value_parser = ["overall", "robustness", "best_probe"])]
    preset: Vec<String>,
    /// Confusion page for TASK/FEATURE; repeatable.
    #[arg(long, value_name = "TASK/FEATURE")]
    confusion: Vec<String>,
    /// Report directory (default: report/ next to the results).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SynthKind {
    /// Harmonic tones labelled by pitch class and timbre.
    Tonebank {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        sr: Option<u32>,
    },
    /// Band-limited noise labelled by band.
    Noiseband {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_classes: Option<usize>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        sr: Option<u32>,
    },
    /// Points in feature space whose label is an XOR of the cluster signs.
    Xor {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_per_cluster: Option<usize>,
        #[arg(long)]
        spread: Option<f64>,
    },
}

/// Exit status contract: 1 for runtime failures, 2 for usage or config errors.
enum Failure {
    Runtime(anyhow::Error),
    Config(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn plan_failure(e: PlanError) -> Failure {
    config(e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Synth { kind } => cmd_synth(kind),
        Command::CleanCache { cache } => cmd_clean_cache(&cache),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Runtime(e)) => {
            report_error(&e);
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            report_error(&e);
            ExitCode::from(2)
        }
    }
}

/// Prints the error chain, skipping causes the outer message already quotes.
fn report_error(e: &anyhow::Error) {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    eprintln!("error: {text}");
}

fn cmd_validate(path: &Path) -> Result<ExitCode, Failure> {
    let plan = read_plan_document(path).map_err(plan_failure)?;
    let diags = validate(&plan);
    for d in &diags {
        println!("{d}");
    }
    if has_errors(&diags) {
        Ok(ExitCode::from(1))
    } else {
        println!("{}: ok", path.display());
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let plan = load_plan(&args.config).map_err(plan_failure)?;
    if args.parallelism == Some(0) {
        return Err(config(anyhow!("--parallelism must be at least 1")));
    }
    if args.dry_run {
        let dry = dry_run(&plan).map_err(config)?;
        for r in &dry.runs {
            println!(
                "run dataset={} task={} feature={} deformation={} probe={} seed={}",
                r.dataset_id, r.task_id, r.feature_id, r.deformation_id, r.probe_id, r.seed
            );
        }
        for (stage, n) in &dry.nodes {
            println!("nodes stage={} count={n}", stage.as_str());
        }
        println!("{} runs, {} nodes", dry.runs.len(), dry.total_nodes);
        return Ok(ExitCode::SUCCESS);
    }

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        ctrlc::set_handler(move || {
            eprintln!("interrupt received; finishing running nodes");
            cancel.store(true, Ordering::SeqCst);
        })
        .context("installing the interrupt handler")?;
    }
    let opts = RunOptions {
        cache_dir: args.cache.clone(),
        parallelism: args.parallelism,
        resume: args.resume,
        cancel: Some(cancel),
        halt_after: args.halt_after,
    };
    let stdout = Mutex::new(std::io::stdout());
    let progress = |e: &ProgressEvent| {
        let mut out = stdout.lock().unwrap();
        let _ = writeln!(out, "{e}");
        let _ = out.flush();
    };
    let outcome = match run_experiment(&plan, &opts, &progress) {
        Ok(o) => o,
        Err(e @ OrchestratorError::Interrupted(_)) => return Err(config(e)),
        Err(e) => return Err(e.into()),
    };

    let s = &outcome.exec.stats;
    println!(
        "summary runs={}/{} hits={} computed={} failed={} skipped={} corrupt={}",
        outcome.results.len(),
        outcome.total_runs,
        s.hits,
        s.runs,
        s.failed,
        s.aborted,
        s.corrupt
    );
    if outcome.exec.halted {
        eprintln!("halted after stage {}; rerun with --resume", args.halt_after.map_or("?", |s| s.as_str()));
        return Ok(ExitCode::from(1));
    }
    if outcome.exec.cancelled {
        eprintln!("cancelled; rerun with --resume to continue");
        return Ok(ExitCode::from(1));
    }
    if let Some(p) = &outcome.results_path {
        println!("results {}", p.display());
    }
    let cache = args.cache.unwrap_or_else(|| default_cache_dir(&plan));
    println!("cache {}", cache.display());
    if !outcome.exec.failures.is_empty() {
        for f in &outcome.exec.failures {
            eprintln!("failed stage={} key={}: {}", f.stage.as_str(), f.key, f.message);
            for (stage, key) in &f.lineage {
                eprintln!("  lineage {stage} {key}");
            }
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, Failure> {
    let results_path = if args.results.is_dir() { args.results.join(RESULTS_JSONL) } else { args.results.clone() };
    if !results_path.is_file() {
        return Err(config(anyhow!("no results at {}", results_path.display())));
    }
    let source = ReportSource::open(&results_path)?;
    let report_dir = args.out.clone().unwrap_or_else(|| source.report_dir());

    let mut confusions = Vec::new();
    for spec in &args.confusion {
        let (task, feature) =
            spec.split_once('/').ok_or_else(|| config(anyhow!("--confusion expects TASK/FEATURE, got {spec:?}")))?;
        confusions.push((task.to_string(), feature.to_string()));
    }
    let explicit = !args.preset.is_empty();
    let presets: Vec<Preset> = if explicit {
        args.preset.iter().map(|p| p.parse().expect("clap checked the name")).collect()
    } else if confusions.is_empty() {
        Preset::ALL.to_vec()
    } else {
        vec![]
    };

    for preset in presets {
        match results_table(&source.results, preset) {
            Ok(table) => {
                let (csv, md) = write_table(&table, &report_dir)?;
                println!("table {preset} {} {}", csv.display(), md.display());
            }
            Err(ReportError::AbsentCondition(c)) if !explicit => {
                println!("table {preset} skipped: results contain no {c} runs");
            }
            Err(e) => return Err(e.into()),
        }
    }

    if !confusions.is_empty() {
        let datasets = source.datasets();
        let inputs = ConfusionInputs {
            results: &source.results,
            datasets: &datasets,
            output_dir: &source.output_dir,
            report_dir: &report_dir,
        };
        for (task, feature) in &confusions {
            let page = confusion_report(&inputs, task, feature)?;
            for w in &page.warnings {
                eprintln!("warning: {w}");
            }
            println!("confusion {}", page.path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth_failure(e: DataError) -> Failure {
    match e {
        DataError::Io { .. } | DataError::InvalidSynthSpec(_) => config(e),
        other => other.into(),
    }
}

fn cmd_synth(kind: SynthKind) -> Result<ExitCode, Failure> {
    let (out, dataset) = match kind {
        SynthKind::Tonebank { out, seed, n_per_class, duration_s, sr } => {
            let mut spec = ToneBankSpec::default();
            if let Some(n) = n_per_class {
                spec.n_per_class = n;
            }
            if let Some(d) = duration_s {
                spec.duration_s = d;
            }
            if let Some(sr) = sr {
                spec.sr = sr;
            }
            let ds = synth_tonebank(&spec, seed, &out).map_err(synth_failure)?;
            (out, ds)
        }
        SynthKind::Noiseband { out, seed, n_classes, n_per_class, duration_s, sr } => {
            let mut spec = NoiseBandSpec::default();
            if let Some(n) = n_classes {
                spec.n_classes = n;
            }
            if let Some(n) = n_per_class {
                spec.n_per_class = n;
            }
            if let Some(d) = duration_s {
                spec.duration_s = d;
            }
            if let Some(sr) = sr {
                spec.sr = sr;
            }
            let ds = synth_noiseband(&spec, seed, &out).map_err(synth_failure)?;
            (out, ds)
        }
        SynthKind::Xor { out, seed, n_per_cluster, spread } => {
            let mut spec = XorSpec::default();
            if let Some(n) = n_per_cluster {
                spec.n_per_cluster = n;
            }
            if let Some(s) = spread {
                spec.spread = s;
            }
            let ds = synth_xor(&spec, seed, &out).map_err(synth_failure)?;
            (out, ds)
        }
    };
    println!(
        "wrote {} tracks to {} (manifest {})",
        dataset.tracks.len(),
        out.display(),
        out.join("manifest.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_clean_cache(cache: &Path) -> Result<ExitCode, Failure> {
    let removed = clean_cache(cache).with_context(|| format!("cleaning {}", cache.display()))?;
    println!("removed {removed} entries from {}", cache.display());
    Ok(ExitCode::SUCCESS)
}
