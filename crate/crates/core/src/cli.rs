//! Command-line front end. Exit codes: 0 success, 1 input or config error,
//! 2 pipeline or backend failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cgseg::{self, CgsegConfig};
use crate::config::{CheckerKind, EmbeddingConfig, EmbeddingKind, RunConfig};
use crate::eval::{self, SampleMetrics, SlideObservation};
use crate::inventory::{self, SlideSize};
use crate::kb::{self, KbKind, VectorIndex};
use crate::llm::{self, ChatBackend, DryRunBackend};
use crate::pipeline::{self, Agents, PipelineResult, RunStatus};
use crate::raster;
use crate::runner::{AcceptAll, CheckMode, Checker, RunnerChecker, RunnerClient};
use crate::scm::{self, ScmWeights, Tier};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or input files.
    Input(String),
    /// Pipeline or backend failure after inputs were accepted.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Failure(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Failure(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "slidegen", version, about = "Slide design image to python-pptx code")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a design image into blocks.
    Segment(SegmentArgs),
    /// Score a corpus of inventories and optionally tier and sample it.
    Complexity(ComplexityArgs),
    /// Run the generation pipeline for one design.
    Generate(GenerateArgs),
    /// Score generated slides against references.
    Evaluate(EvaluateArgs),
    /// Embed a knowledge base and optionally query it.
    KbIndex(KbIndexArgs),
}

#[derive(Debug, Args)]
pub struct CgsegFlags {
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub max_depth: usize,
}

impl CgsegFlags {
    fn config(&self) -> Result<CgsegConfig, CliError> {
        let cfg = CgsegConfig {
            grid: self.grid,
            threshold: self.threshold,
            max_depth: self.max_depth,
        };
        cfg.validate().map_err(input)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub image: PathBuf,
    #[command(flatten)]
    pub cgseg: CgsegFlags,
    /// Write the region JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a PNG with the filled mask and region outlines.
    #[arg(long)]
    pub debug_png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Directory of `<id>.json` inventories with `<id>.png` renders.
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub cgseg: CgsegFlags,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub gamma: f64,
    /// Assign simple/medium/complex tiers.
    #[arg(long)]
    pub tier: bool,
    /// Draw this many ids per tier (implies --tier).
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `design` from the config.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Build every prompt without contacting the backend or the runner.
    #[arg(long)]
    pub dry_run: bool,
    /// Record per-stage wall time in the trace.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON manifest listing many samples.
    #[arg(long, conflicts_with_all = ["reference", "generated", "trace"])]
    pub batch: Option<PathBuf>,
    /// Reference inventory JSON.
    #[arg(long = "ref", required_unless_present = "batch")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub ref_image: Option<PathBuf>,
    /// Generated inventory JSON.
    #[arg(long = "gen")]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub gen_image: Option<PathBuf>,
    /// Generation trace; a failed run scores zero.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value = "sample")]
    pub id: String,
    /// JSON object of externally computed CLIP scores keyed by sample id.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    #[arg(long, default_value_t = SlideSize::default().width_in)]
    pub slide_width: f64,
    #[arg(long, default_value_t = SlideSize::default().height_in)]
    pub slide_height: f64,
    /// Write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    ShapeType,
    OperationFunction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct KbIndexArgs {
    /// JSONL knowledge base.
    pub kb: PathBuf,
    /// Entry kind to index; inferred when the file holds a single kind.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "mock")]
    pub provider: ProviderArg,
    #[arg(long, default_value_t = 256)]
    pub dimension: usize,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to save the index JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Load an existing index instead of embedding the KB again.
    #[arg(long, conflicts_with = "out")]
    pub load: bool,
    #[arg(long)]
    pub query: Option<String>,
    #[arg(short, long, default_value_t = 5)]
    pub k: usize,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Complexity(a) => cmd_complexity(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::KbIndex(a) => cmd_kb_index(&a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| failure(format!("{}: {e}", parent.display())))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(failure)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| failure(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(failure)?);
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct SegmentReport {
    image: String,
    width: usize,
    height: usize,
    coverage: Option<f64>,
    regions: Vec<cgseg::Region>,
}

fn cmd_segment(a: &SegmentArgs) -> Result<(), CliError> {
    let cfg = a.cgseg.config()?;
    let img = raster::load_image(&a.image).map_err(input)?;
    let regions = cgseg::cgseg(&img, &cfg);
    if let Some(p) = &a.debug_png {
        cgseg::debug_mask_png(&img, &cfg, p).map_err(failure)?;
    }
    let report = SegmentReport {
        image: a.image.display().to_string(),
        width: img.width(),
        height: img.height(),
        coverage: cgseg::coverage_ratio(&img, &cfg).ok(),
        regions,
    };
    emit(a.out.as_deref(), &report)
}

#[derive(Debug, Serialize)]
struct ComplexitySummary {
    count: usize,
    weights: ScmWeights,
    stats: scm::CohortStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    centers: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proportions: Option<BTreeMap<Tier, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<BTreeMap<Tier, Vec<String>>>,
    seed: u64,
}

#[derive(Serialize)]
struct CohortRow<'a> {
    id: &'a str,
    element_count: usize,
    type_count: usize,
    coverage: f64,
    z: Option<f64>,
    tier: Option<String>,
}

fn cmd_complexity(a: &ComplexityArgs) -> Result<(), CliError> {
    let cfg = a.cgseg.config()?;
    let weights = ScmWeights::new(a.alpha, a.beta, a.gamma).map_err(input)?;
    let mut records = scm::load_corpus(&a.corpus, &cfg).map_err(input)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("no inventories found in {}", a.corpus.display())));
    }
    let stats = scm::score_cohort(&mut records, &weights).map_err(input)?;
    let tiering = a.tier || a.sample.is_some();
    let centers = if tiering {
        Some(scm::tier_cohort(&mut records).map_err(input)?)
    } else {
        None
    };
    let sample = match a.sample {
        Some(n) => Some(scm::sample_tiers(&records, n, a.seed).map_err(input)?),
        None => None,
    };

    std::fs::create_dir_all(&a.out_dir).map_err(failure)?;
    write_json(&a.out_dir.join("cohort.json"), &records)?;
    let mut csv = csv::Writer::from_path(a.out_dir.join("cohort.csv")).map_err(failure)?;
    for r in &records {
        csv.serialize(CohortRow {
            id: &r.id,
            element_count: r.features.element_count,
            type_count: r.features.type_count,
            coverage: r.features.coverage,
            z: r.z,
            tier: r.tier.map(|t| t.to_string()),
        })
        .map_err(failure)?;
    }
    csv.flush().map_err(failure)?;

    let summary = ComplexitySummary {
        count: records.len(),
        weights,
        stats,
        centers,
        proportions: tiering.then(|| scm::tier_proportions(&records)),
        sample,
        seed: a.seed,
    };
    write_json(&a.out_dir.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(failure)?);
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.config).map_err(input)?;
    if let Some(d) = &a.design {
        cfg.design = Some(d.clone());
    }
    if let Some(o) = &a.output_dir {
        cfg.output_dir = o.clone();
    }
    if a.timing {
        cfg.record_timing = true;
    }
    cfg.validate().map_err(input)?;
    let design = cfg
        .design
        .clone()
        .ok_or_else(|| CliError::Input("no design image given (config `design` or --design)".into()))?;
    let pictures = cfg.pictures().map_err(input)?;

    let kb_shapes = kb::load_kb(&cfg.shape_kb).map_err(input)?;
    let kb_functions = kb::load_kb(&cfg.function_kb).map_err(input)?;
    let shape_types = kb::all_entries(&kb_shapes, KbKind::ShapeType);
    let embedder = cfg.embedding.provider(cfg.seed).map_err(input)?;
    let functions = kb::build_index(&kb_functions, embedder.as_ref(), KbKind::OperationFunction).map_err(failure)?;

    let dry = DryRunBackend::default();
    let live: Option<Box<dyn ChatBackend>> = if a.dry_run {
        None
    } else {
        Some(llm::backend_from_config(&cfg.backend).map_err(input)?)
    };
    let backend: &dyn ChatBackend = live.as_deref().unwrap_or(&dry);

    let client = if cfg.checker.kind == CheckerKind::Runner && !a.dry_run {
        Some(RunnerClient::spawn(&cfg.checker.command, cfg.checker.timeout()).map_err(failure)?)
    } else {
        None
    };
    let syntax = client.as_ref().map(|c| RunnerChecker::new(c, CheckMode::Syntax));
    let execute = client.as_ref().map(|c| RunnerChecker::new(c, CheckMode::Execute));
    let snippet_checker: &dyn Checker = syntax.as_ref().map_or(&AcceptAll as &dyn Checker, |c| c);
    let program_checker: &dyn Checker = execute.as_ref().map_or(&AcceptAll as &dyn Checker, |c| c);

    let agents = Agents {
        backend,
        embedder: embedder.as_ref(),
        shape_types: &shape_types,
        functions: &functions,
        snippet_checker,
        program_checker,
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(failure)?;
    let result = pipeline::run_pipeline(&design, &pictures, &cfg.pipeline(), &agents, &cfg.output_dir)
        .map_err(|e| match e {
            pipeline::PipelineError::Input(m) => CliError::Input(m),
            other => failure(other),
        })?;

    if a.dry_run {
        let prompts: Vec<_> = result
            .calls
            .iter()
            .map(|c| json!({"stage": c.stage, "block": c.block, "system": c.system, "prompt": c.prompt, "images": c.images}))
            .collect();
        write_json(&cfg.output_dir.join("prompts.json"), &prompts)?;
    }
    println!(
        "{}",
        json!({
            "sample_id": result.sample_id,
            "status": result.status,
            "regions": result.regions.len(),
            "calls": result.calls.len(),
            "trace": cfg.output_dir.join("trace.json"),
        })
    );
    match result.status {
        RunStatus::Ok => Ok(()),
        RunStatus::ExecutionFailure => Err(CliError::Failure("assembled program failed every check".into())),
        RunStatus::Error => Err(CliError::Failure(result.failure.unwrap_or_else(|| "pipeline failed".into()))),
    }
}

/// One manifest line for `evaluate --batch`. Paths are relative to the
/// manifest file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchItem {
    pub id: String,
    pub reference: PathBuf,
    #[serde(default)]
    pub reference_image: Option<PathBuf>,
    #[serde(default)]
    pub generated: Option<PathBuf>,
    #[serde(default)]
    pub generated_image: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

fn observation(inventory_path: &Path, image: Option<&Path>) -> Result<SlideObservation, CliError> {
    Ok(SlideObservation {
        shapes: inventory::load_inventory(inventory_path).map_err(input)?,
        image: image.map(raster::load_image).transpose().map_err(input)?,
    })
}

fn trace_succeeded(path: &Path) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let trace: PipelineResult = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(trace.status == RunStatus::Ok)
}

fn score_item(item: &BatchItem, slide: SlideSize) -> Result<SampleMetrics, CliError> {
    let reference = observation(&item.reference, item.reference_image.as_deref())?;
    let executed = match &item.trace {
        Some(t) => trace_succeeded(t)?,
        None => item.generated.is_some(),
    };
    let generated = match (&item.generated, executed) {
        (Some(g), true) => Some(observation(g, item.generated_image.as_deref())?),
        (None, true) => {
            return Err(CliError::Input(format!(
                "sample {} ran successfully but has no generated inventory",
                item.id
            )))
        }
        (_, false) => None,
    };
    eval::evaluate_sample(&item.id, &reference, generated.as_ref(), slide).map_err(failure)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let slide = SlideSize {
        width_in: a.slide_width,
        height_in: a.slide_height,
    };
    if !(slide.width_in > 0.0 && slide.height_in > 0.0) {
        return Err(CliError::Input("slide size must be positive".into()));
    }
    let items = match &a.batch {
        Some(manifest) => {
            let text = std::fs::read_to_string(manifest).map_err(|e| input(format!("{}: {e}", manifest.display())))?;
            let mut items: Vec<BatchItem> =
                serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", manifest.display())))?;
            let base = manifest.parent().unwrap_or(Path::new(""));
            for it in &mut items {
                for p in [
                    Some(&mut it.reference),
                    it.reference_image.as_mut(),
                    it.generated.as_mut(),
                    it.generated_image.as_mut(),
                    it.trace.as_mut(),
                ]
                .into_iter()
                .flatten()
                {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
            items
        }
        None => vec![BatchItem {
            id: a.id.clone(),
            reference: a.reference.clone().expect("clap enforces --ref"),
            reference_image: a.ref_image.clone(),
            generated: a.generated.clone(),
            generated_image: a.gen_image.clone(),
            trace: a.trace.clone(),
        }],
    };
    let mut samples = items
        .iter()
        .map(|it| score_item(it, slide))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = &a.clip {
        let text = std::fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        let clip: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(input)?;
        eval::merge_clip_scores(&mut samples, &clip);
    }
    let report = eval::batch_report(&samples).map_err(input)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print!("{}", eval::render_table(&report));
    Ok(())
}

fn cmd_kb_index(a: &KbIndexArgs) -> Result<(), CliError> {
    let embedding = EmbeddingConfig {
        kind: match a.provider {
            ProviderArg::Mock => EmbeddingKind::Mock,
            ProviderArg::Http => EmbeddingKind::Http,
        },
        dimension: a.dimension,
        endpoint: a.endpoint.clone(),
        model: a.model.clone(),
        api_key_env: a.api_key_env.clone(),
        ..EmbeddingConfig::default()
    };
    let provider = embedding.provider(a.seed).map_err(input)?;

    let index = if a.load {
        VectorIndex::load(&a.kb).map_err(input)?
    } else {
        let entries = kb::load_kb(&a.kb).map_err(input)?;
        let kind = match a.kind {
            Some(KindArg::ShapeType) => KbKind::ShapeType,
            Some(KindArg::OperationFunction) => KbKind::OperationFunction,
            None => {
                let mut kinds: Vec<KbKind> = entries.iter().map(|e| e.kind).collect();
                kinds.sort();
                kinds.dedup();
                match kinds.as_slice() {
                    [] => KbKind::OperationFunction,
                    [k] => *k,
                    _ => return Err(CliError::Input("KB mixes entry kinds; pass --kind".into())),
                }
            }
        };
        let index = kb::build_index(&entries, provider.as_ref(), kind).map_err(failure)?;
        if let Some(out) = &a.out {
            index.save(out).map_err(failure)?;
        }
        index
    };
    let hits = match &a.query {
        Some(q) => kb::retrieve_top_k(&index, q, a.k, provider.as_ref()).map_err(failure)?,
        None => Vec::new(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "kind": index.kind(),
            "dimension": index.dimension(),
            "entries": index.len(),
            "hits": hits,
        }))
        .map_err(failure)?
    );
    Ok(())
}
