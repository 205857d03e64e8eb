//! Describer, coder and assembler orchestration.
//!
//! A design image is segmented into blocks; the describer writes one
//! overall description plus one per block (with every shape-type entry in
//! the prompt), the coder turns each block into a snippet using retrieved
//! function entries, and the assembler merges the surviving snippets with a
//! layout-aware prompt carrying each block's position in inches. Coder and
//! assembler retry with checker feedback up to `max_refine` calls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgseg::{self, CgsegConfig};
use crate::eval::SampleMetrics;
use crate::inventory::{InchBox, SlideSize};
use crate::kb::{self, EmbeddingProvider, KbEntry, KbError, ScoredEntry, VectorIndex};
use crate::llm::{ChatBackend, ChatRequest, LlmError, Matcher, ScriptEntry};
use crate::prompts::{self, TemplateError};
use crate::raster::{self, PixelRect};
use crate::runner::Checker;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input error: {0}")]
    Input(String),
    #[error("backend failed during {stage}: {source}")]
    Backend { stage: Stage, source: LlmError },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("i/o error: {0}")]
    Io(String),
}

fn io_err(context: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub cgseg: CgsegConfig,
    #[serde(default)]
    pub slide: SlideSize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_max_refine")]
    pub max_refine: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub record_timing: bool,
}

fn default_top_k() -> usize {
    5
}
fn default_max_refine() -> usize {
    3
}
fn default_parallelism() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cgseg: CgsegConfig::default(),
            slide: SlideSize::default(),
            top_k: default_top_k(),
            max_refine: default_max_refine(),
            parallelism: default_parallelism(),
            record_timing: false,
        }
    }
}

/// Everything the agents talk to.
pub struct Agents<'a> {
    pub backend: &'a dyn ChatBackend,
    pub embedder: &'a dyn EmbeddingProvider,
    /// Shape-type entries in id order.
    pub shape_types: &'a [KbEntry],
    pub functions: &'a VectorIndex,
    pub snippet_checker: &'a dyn Checker,
    pub program_checker: &'a dyn Checker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DescribeOverall,
    DescribeBlock,
    Code,
    Assemble,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::DescribeOverall => "describe_overall",
            Stage::DescribeBlock => "describe_block",
            Stage::Code => "code",
            Stage::Assemble => "assemble",
        })
    }
}

/// One backend call as it appears in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub block: Option<usize>,
    pub attempt: usize,
    pub system: String,
    pub prompt: String,
    /// Attached images, relative to the run directory.
    pub images: Vec<String>,
    pub reply: Option<String>,
    pub error: Option<String>,
}

struct CallSink<'a> {
    workdir: &'a Path,
    records: Vec<CallRecord>,
}

impl<'a> CallSink<'a> {
    fn new(workdir: &'a Path) -> Self {
        Self {
            workdir,
            records: Vec::new(),
        }
    }

    fn call(
        &mut self,
        backend: &dyn ChatBackend,
        req: &ChatRequest,
        stage: Stage,
        block: Option<usize>,
        attempt: usize,
    ) -> Result<String, LlmError> {
        let outcome = backend.complete(req).map(|r| r.text);
        let images = req
            .image_paths()
            .iter()
            .map(|p| relative_to(p, self.workdir))
            .collect();
        self.records.push(CallRecord {
            stage,
            block,
            attempt,
            system: req.system.clone(),
            prompt: req.user_text(),
            images,
            reply: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        });
        outcome
    }
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Maps pixel boxes on the design image to inches on the slide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideGeometry {
    pub slide: SlideSize,
    pub image_width_px: usize,
    pub image_height_px: usize,
}

impl SlideGeometry {
    pub fn new(slide: SlideSize, image_width_px: usize, image_height_px: usize) -> Self {
        assert!(image_width_px > 0 && image_height_px > 0, "image size must be positive");
        assert!(slide.width_in > 0.0 && slide.height_in > 0.0, "slide size must be positive");
        Self {
            slide,
            image_width_px,
            image_height_px,
        }
    }

    /// Inverse of [`scale_position`], in fractional pixels.
    pub fn to_pixels(&self, b: &InchBox) -> [f64; 4] {
        let px = |v: f64| v * self.image_width_px as f64 / self.slide.width_in;
        let py = |v: f64| v * self.image_height_px as f64 / self.slide.height_in;
        [px(b.x), py(b.y), px(b.w), py(b.h)]
    }
}

pub fn scale_position(bbox: &PixelRect, geom: &SlideGeometry) -> InchBox {
    let sx = |v: usize| v as f64 * geom.slide.width_in / geom.image_width_px as f64;
    let sy = |v: usize| v as f64 * geom.slide.height_in / geom.image_height_px as f64;
    InchBox::new(sx(bbox.x), sy(bbox.y), sx(bbox.w), sy(bbox.h))
}

pub fn format_position(b: &InchBox) -> String {
    format!("left={:.3}, top={:.3}, width={:.3}, height={:.3}", b.x, b.y, b.w, b.h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: usize,
    pub depth: usize,
    pub bbox_px: PixelRect,
    pub bbox_in: InchBox,
    /// Cropped block image, relative to the run directory.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDescription {
    pub region_id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptions {
    pub overall: String,
    pub per_block: Vec<BlockDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub code: String,
    /// `None` when the checker accepted the code.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnippetStatus {
    Ok,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub region_id: usize,
    pub code: String,
    pub attempts: Vec<Attempt>,
    pub status: SnippetStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramStatus {
    Ok,
    ExecutionFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledProgram {
    pub code: String,
    pub attempts: Vec<Attempt>,
    pub status: ProgramStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ExecutionFailure,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub sample_id: String,
    pub status: RunStatus,
    pub failure: Option<String>,
    pub geometry: SlideGeometry,
    pub regions: Vec<RegionRecord>,
    pub descriptions: Option<Descriptions>,
    pub snippets: Vec<CodeSnippet>,
    pub layout_prompt: Option<String>,
    pub program: Option<AssembledProgram>,
    pub calls: Vec<CallRecord>,
    #[serde(default)]
    pub metrics: Option<SampleMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<BTreeMap<String, f64>>,
}

impl PipelineResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serialises");
        s.push('\n');
        s
    }

    /// Hash-keyed script that replays every successful call of this trace.
    pub fn replay_script(&self) -> Vec<ScriptEntry> {
        self.calls
            .iter()
            .filter_map(|c| {
                let reply = c.reply.clone()?;
                let hash = ChatRequest::new(c.system.clone()).text(c.prompt.clone()).text_hash();
                Some(ScriptEntry {
                    matcher: Matcher::Hash(hash),
                    reply,
                })
            })
            .collect()
    }
}

fn describe_with_sink(
    design: &Path,
    regions: &[RegionRecord],
    workdir: &Path,
    shape_types: &[KbEntry],
    backend: &dyn ChatBackend,
    sink: &mut CallSink<'_>,
) -> Result<Descriptions, PipelineError> {
    let types = prompts::format_shape_types(shape_types);
    let overall_prompt = prompts::render(prompts::OVERALL_TEMPLATE, &[("shape_types", &types)])?;
    let req = ChatRequest::new(prompts::DESCRIBER_SYSTEM)
        .image(design)
        .text(overall_prompt);
    let overall = sink
        .call(backend, &req, Stage::DescribeOverall, None, 1)
        .map_err(|source| PipelineError::Backend {
            stage: Stage::DescribeOverall,
            source,
        })?;

    let count = regions.len().to_string();
    let mut per_block = Vec::with_capacity(regions.len());
    for r in regions {
        let number = (r.id + 1).to_string();
        let prompt = prompts::render(
            prompts::BLOCK_TEMPLATE,
            &[("block_number", &number), ("block_count", &count), ("shape_types", &types)],
        )?;
        let req = ChatRequest::new(prompts::DESCRIBER_SYSTEM)
            .image(workdir.join(&r.image))
            .text(prompt);
        let text = sink
            .call(backend, &req, Stage::DescribeBlock, Some(r.id), 1)
            .map_err(|source| PipelineError::Backend {
                stage: Stage::DescribeBlock,
                source,
            })?;
        per_block.push(BlockDescription { region_id: r.id, text });
    }
    Ok(Descriptions { overall, per_block })
}

/// Overall description from the full design, then one description per
/// region, in region order.
pub fn describe(
    design: &Path,
    regions: &[RegionRecord],
    workdir: &Path,
    shape_types: &[KbEntry],
    backend: &dyn ChatBackend,
) -> Result<(Descriptions, Vec<CallRecord>), PipelineError> {
    let mut sink = CallSink::new(workdir);
    let d = describe_with_sink(design, regions, workdir, shape_types, backend, &mut sink)?;
    Ok((d, sink.records))
}

#[allow(clippy::too_many_arguments)]
fn refine_loop(
    backend: &dyn ChatBackend,
    checker: &dyn Checker,
    system: &str,
    base_prompt: &str,
    images: &[PathBuf],
    stage: Stage,
    block: Option<usize>,
    max_refine: usize,
    sink: &mut CallSink<'_>,
) -> (Vec<Attempt>, Option<String>) {
    let mut attempts = Vec::new();
    let mut prompt = base_prompt.to_string();
    for n in 1..=max_refine {
        let mut req = ChatRequest::new(system);
        for img in images {
            req = req.image(img.clone());
        }
        let req = req.text(prompt.clone());
        match sink.call(backend, &req, stage, block, n) {
            Ok(reply) => {
                let code = prompts::extract_code(&reply);
                match checker.check(&code, sink.workdir) {
                    Ok(()) => {
                        attempts.push(Attempt {
                            code: code.clone(),
                            error: None,
                        });
                        return (attempts, Some(code));
                    }
                    Err(error) => {
                        prompt = format!("{base_prompt}{}", prompts::refinement_suffix(&code, &error));
                        attempts.push(Attempt {
                            code,
                            error: Some(error),
                        });
                    }
                }
            }
            Err(e) => attempts.push(Attempt {
                code: String::new(),
                error: Some(format!("backend {}: {e}", e.kind())),
            }),
        }
    }
    (attempts, None)
}

fn snippet_with_sink(
    region: &RegionRecord,
    description: &str,
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    sink: &mut CallSink<'_>,
) -> Result<CodeSnippet, PipelineError> {
    let hits = kb::retrieve_top_k(agents.functions, description, cfg.top_k, agents.embedder)?;
    let prompt = prompts::render(
        prompts::CODER_TEMPLATE,
        &[("description", description), ("functions", &prompts::format_functions(&hits))],
    )?;
    let image = sink.workdir.join(&region.image);
    let (attempts, code) = refine_loop(
        agents.backend,
        agents.snippet_checker,
        prompts::CODER_SYSTEM,
        &prompt,
        &[image],
        Stage::Code,
        Some(region.id),
        cfg.max_refine,
        sink,
    );
    Ok(CodeSnippet {
        region_id: region.id,
        status: if code.is_some() {
            SnippetStatus::Ok
        } else {
            SnippetStatus::Dropped
        },
        code: code.unwrap_or_default(),
        attempts,
    })
}

/// Generates one block's snippet, retrying with checker feedback.
pub fn gen_snippet(
    region: &RegionRecord,
    description: &str,
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> Result<(CodeSnippet, Vec<CallRecord>), PipelineError> {
    let mut sink = CallSink::new(workdir);
    let s = snippet_with_sink(region, description, agents, cfg, &mut sink)?;
    Ok((s, sink.records))
}

/// Instantiates the assembler prompt. Dropped snippets are skipped.
pub fn build_layout_prompt(
    design_ref: &str,
    overall: &str,
    snippets: &[CodeSnippet],
    regions: &[RegionRecord],
    grammar: &[ScoredEntry],
    slide: SlideSize,
) -> Result<String, TemplateError> {
    let kept: Vec<(&CodeSnippet, &RegionRecord)> = snippets
        .iter()
        .filter(|s| s.status == SnippetStatus::Ok)
        .filter_map(|s| regions.iter().find(|r| r.id == s.region_id).map(|r| (s, r)))
        .collect();
    let code_snippets = if kept.is_empty() {
        "(no code snippets)".to_string()
    } else {
        kept.iter()
            .map(|(s, r)| format!("### Block {}\n```python\n{}\n```", r.id + 1, s.code))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let mut positions = format!("Slide size: {:.3} x {:.3} in.", slide.width_in, slide.height_in);
    for (_, r) in &kept {
        positions.push_str(&format!("\n- Block {}: {}", r.id + 1, format_position(&r.bbox_in)));
    }
    prompts::render(
        prompts::LAYOUT_TEMPLATE,
        &[
            ("design", design_ref),
            ("overall_description", overall),
            ("code_snippets", &code_snippets),
            ("positions", &positions),
            ("grammar", &prompts::format_functions(grammar)),
        ],
    )
}

/// Concatenated code of the kept snippets, used as the grammar query.
pub fn snippet_query(snippets: &[CodeSnippet]) -> String {
    snippets
        .iter()
        .filter(|s| s.status == SnippetStatus::Ok)
        .map(|s| s.code.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Copies pictures into `<workdir>/assets`, returning their relative paths.
pub fn stage_pictures(pictures: &[PathBuf], workdir: &Path) -> Result<Vec<String>, PipelineError> {
    if pictures.is_empty() {
        return Ok(Vec::new());
    }
    let assets = workdir.join("assets");
    std::fs::create_dir_all(&assets).map_err(|e| io_err("create assets dir", e))?;
    pictures
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .ok_or_else(|| PipelineError::Input(format!("bad picture path {}", p.display())))?;
            std::fs::copy(p, assets.join(name)).map_err(|e| io_err(&p.display().to_string(), e))?;
            Ok(format!("assets/{}", name.to_string_lossy()))
        })
        .collect()
}

fn pictures_section(relative: &[String]) -> String {
    if relative.is_empty() {
        return "\n## Pictures\n(no pictures supplied)\n".to_string();
    }
    let mut s = "\n## Pictures\nThese files are in the working directory; insert them with \
                 `slide.shapes.add_picture` using the relative paths below.\n"
        .to_string();
    for r in relative {
        s.push_str(&format!("- {r}\n"));
    }
    s
}

fn assemble_with_sink(
    prompt: &str,
    pictures: &[PathBuf],
    images: &[PathBuf],
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    sink: &mut CallSink<'_>,
) -> Result<AssembledProgram, PipelineError> {
    let relative = stage_pictures(pictures, sink.workdir)?;
    let full_prompt = format!("{prompt}{}", pictures_section(&relative));
    let (attempts, code) = refine_loop(
        agents.backend,
        agents.program_checker,
        prompts::ASSEMBLER_SYSTEM,
        &full_prompt,
        images,
        Stage::Assemble,
        None,
        cfg.max_refine,
        sink,
    );
    Ok(AssembledProgram {
        status: if code.is_some() {
            ProgramStatus::Ok
        } else {
            ProgramStatus::ExecutionFailure
        },
        code: code.unwrap_or_default(),
        attempts,
    })
}

/// Runs the assembler with refinement. `images` are attached to every call.
pub fn assemble(
    prompt: &str,
    pictures: &[PathBuf],
    images: &[PathBuf],
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> Result<(AssembledProgram, Vec<CallRecord>), PipelineError> {
    let mut sink = CallSink::new(workdir);
    let p = assemble_with_sink(prompt, pictures, images, agents, cfg, &mut sink)?;
    Ok((p, sink.records))
}

struct Timer {
    enabled: bool,
    last: Instant,
    stages: BTreeMap<String, f64>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            last: Instant::now(),
            stages: BTreeMap::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        if self.enabled {
            let now = Instant::now();
            self.stages
                .insert(name.to_string(), (now - self.last).as_secs_f64() * 1000.0);
            self.last = now;
        }
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.stages)
    }
}

/// Segments the design and writes `design.png` plus block crops into
/// `workdir`.
pub fn prepare_regions(
    design: &Path,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> Result<(SlideGeometry, Vec<RegionRecord>), PipelineError> {
    let img = raster::load_image(design).map_err(|e| PipelineError::Input(e.to_string()))?;
    let geometry = SlideGeometry::new(cfg.slide, img.width(), img.height());
    std::fs::create_dir_all(workdir.join("blocks")).map_err(|e| io_err("create run dir", e))?;
    img.save_png(workdir.join("design.png"))
        .map_err(|e| io_err("write design copy", e))?;
    let mut regions = Vec::new();
    for (id, region) in cgseg::cgseg(&img, &cfg.cgseg).into_iter().enumerate() {
        let rel = format!("blocks/block_{id:03}.png");
        region
            .image
            .as_ref()
            .expect("segmentation attaches crops")
            .save_png(workdir.join(&rel))
            .map_err(|e| io_err("write block crop", e))?;
        regions.push(RegionRecord {
            id,
            depth: region.depth,
            bbox_px: region.bbox,
            bbox_in: scale_position(&region.bbox, &geometry),
            image: rel,
        });
    }
    Ok((geometry, regions))
}

fn generate_snippets(
    regions: &[RegionRecord],
    descriptions: &Descriptions,
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> Result<Vec<(CodeSnippet, Vec<CallRecord>)>, PipelineError> {
    let job = |r: &RegionRecord| {
        let desc = descriptions
            .per_block
            .iter()
            .find(|d| d.region_id == r.id)
            .map(|d| d.text.as_str())
            .unwrap_or_default();
        gen_snippet(r, desc, agents, cfg, workdir)
    };
    if cfg.parallelism <= 1 || regions.len() <= 1 {
        return regions.iter().map(job).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| io_err("thread pool", e))?;
    pool.install(|| regions.par_iter().map(job).collect())
}

/// Full run for one design. Input problems are returned as errors; failures
/// after that point are recorded in the result, which is also written to
/// `<workdir>/trace.json` (and `program.py` when assembly produced code).
pub fn run_pipeline(
    design: &Path,
    pictures: &[PathBuf],
    cfg: &PipelineConfig,
    agents: &Agents<'_>,
    workdir: &Path,
) -> Result<PipelineResult, PipelineError> {
    if !design.is_file() {
        return Err(PipelineError::Input(format!("design image not found: {}", design.display())));
    }
    if let Some(missing) = pictures.iter().find(|p| !p.is_file()) {
        return Err(PipelineError::Input(format!("picture not found: {}", missing.display())));
    }
    let mut timer = Timer::new(cfg.record_timing);
    let (geometry, regions) = prepare_regions(design, cfg, workdir)?;
    timer.lap("segment");

    let sample_id = design
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    let mut result = PipelineResult {
        sample_id,
        status: RunStatus::Error,
        failure: None,
        geometry,
        regions,
        descriptions: None,
        snippets: Vec::new(),
        layout_prompt: None,
        program: None,
        calls: Vec::new(),
        metrics: None,
        timing_ms: None,
    };
    if let Err(e) = run_stages(&mut result, pictures, cfg, agents, workdir, &mut timer) {
        result.status = RunStatus::Error;
        result.failure = Some(e.to_string());
    }
    result.timing_ms = timer.finish();

    std::fs::write(workdir.join("trace.json"), result.to_json()).map_err(|e| io_err("write trace", e))?;
    if let Some(p) = &result.program {
        if !p.code.is_empty() {
            std::fs::write(workdir.join("program.py"), format!("{}\n", p.code))
                .map_err(|e| io_err("write program", e))?;
        }
    }
    Ok(result)
}

fn run_stages(
    result: &mut PipelineResult,
    pictures: &[PathBuf],
    cfg: &PipelineConfig,
    agents: &Agents<'_>,
    workdir: &Path,
    timer: &mut Timer,
) -> Result<(), PipelineError> {
    let design_copy = workdir.join("design.png");
    let mut sink = CallSink::new(workdir);
    let described = describe_with_sink(
        &design_copy,
        &result.regions,
        workdir,
        agents.shape_types,
        agents.backend,
        &mut sink,
    );
    result.calls.append(&mut sink.records);
    let descriptions = described?;
    timer.lap("describe");

    for (snippet, mut calls) in generate_snippets(&result.regions, &descriptions, agents, cfg, workdir)? {
        result.calls.append(&mut calls);
        result.snippets.push(snippet);
    }
    timer.lap("code");

    let query = match snippet_query(&result.snippets) {
        q if q.trim().is_empty() => descriptions.overall.clone(),
        q => q,
    };
    let grammar = kb::retrieve_top_k(agents.functions, &query, cfg.top_k, agents.embedder)?;
    let prompt = build_layout_prompt(
        "The reference design image (design.png) is attached.",
        &descriptions.overall,
        &result.snippets,
        &result.regions,
        &grammar,
        cfg.slide,
    )?;
    result.descriptions = Some(descriptions);
    result.layout_prompt = Some(prompt.clone());

    let mut sink = CallSink::new(workdir);
    let assembled = assemble_with_sink(&prompt, pictures, &[design_copy], agents, cfg, &mut sink);
    result.calls.append(&mut sink.records);
    let program = assembled?;
    timer.lap("assemble");
    result.status = match program.status {
        ProgramStatus::Ok => RunStatus::Ok,
        ProgramStatus::ExecutionFailure => RunStatus::ExecutionFailure,
    };
    result.program = Some(program);
    Ok(())
}
