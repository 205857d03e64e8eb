//! Deterministic end-to-end generation scenario shared by tests.

use std::path::{Path, PathBuf};

use slidegen_core::kb::{self, KbEntry, KbKind, MockEmbedder, VectorIndex};
use slidegen_core::llm::{Matcher, ScriptEntry};
use slidegen_core::pipeline::{self, Agents, PipelineConfig, PipelineResult};
use slidegen_core::raster::{PixelRect, RasterImage};
use slidegen_core::runner::{AcceptAll, Checker};

/// White 640x360 design with a title bar, two cards and a footer line.
pub fn design() -> RasterImage {
    let mut img = RasterImage::filled(640, 360, [255, 255, 255]);
    img.fill_rect(PixelRect::new(64, 36, 512, 54), [31, 58, 95]);
    img.fill_rect(PixelRect::new(96, 54, 192, 18), [250, 250, 250]);
    img.fill_rect(PixelRect::new(64, 144, 224, 144), [220, 90, 40]);
    img.fill_rect(PixelRect::new(352, 144, 224, 144), [40, 140, 90]);
    img.fill_rect(PixelRect::new(384, 180, 160, 18), [255, 255, 255]);
    img
}

/// Rejects any code containing `BROKEN`.
pub struct PatternChecker;

impl Checker for PatternChecker {
    fn check(&self, code: &str, _workdir: &Path) -> Result<(), String> {
        if code.contains("BROKEN") {
            Err("NameError: name 'BROKEN' is not defined".into())
        } else {
            Ok(())
        }
    }
}

/// Block 1 passes first time, block 2 needs one repair, block 3 never
/// passes, other blocks pass first time.
pub fn script() -> Vec<ScriptEntry> {
    let e = |m: &str, reply: &str| ScriptEntry {
        matcher: Matcher::Substring(m.to_string()),
        reply: reply.to_string(),
    };
    vec![
        e(
            "Combine the code snippets",
            "```python\nfrom pptx import Presentation\nfrom pptx.util import Inches\nprs = Presentation()\nprs.slide_width = Inches(13.333)\nprs.slide_height = Inches(7.5)\nslide = prs.slides.add_slide(prs.slide_layouts[6])\nprs.save('output.pptx')\n```",
        ),
        e("Describe the complete slide design", "A navy title bar above two coloured cards."),
        e("block 1 of", "DESC-A: a navy TextBox title bar."),
        e("block 2 of", "DESC-B: an orange Shape card."),
        e("block 3 of", "DESC-C: a green Shape card."),
        e("The attached image is block", "DESC-OTHER: a plain Shape."),
        e("BROKEN_FOREVER", "```python\nBROKEN_FOREVER\n```"),
        e("BROKEN_ONCE", "```python\nbox = slide.shapes.add_shape(1, 0, 0, 10, 10)  # repaired\n```"),
        e("DESC-A", "```python\ntb = slide.shapes.add_textbox(0, 0, 10, 10)\n```"),
        e("DESC-B", "```python\nBROKEN_ONCE\n```"),
        e("DESC-C", "```python\nBROKEN_FOREVER\n```"),
        e("DESC-OTHER", "```python\nshape = slide.shapes.add_shape(1, 0, 0, 5, 5)\n```"),
    ]
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub struct Knowledge {
    pub shape_types: Vec<KbEntry>,
    pub functions: VectorIndex,
    pub embedder: MockEmbedder,
}

pub fn knowledge() -> Knowledge {
    let embedder = MockEmbedder::new(256, 0);
    let shapes = kb::load_kb(data_dir().join("shape_types.jsonl")).unwrap();
    let fns = kb::load_kb(data_dir().join("operation_functions.jsonl")).unwrap();
    Knowledge {
        shape_types: kb::all_entries(&shapes, KbKind::ShapeType),
        functions: kb::build_index(&fns, &embedder, KbKind::OperationFunction).unwrap(),
        embedder,
    }
}

/// Writes the design and one picture into `root/inputs`, runs the pipeline
/// into `root/run` and returns the result.
pub fn run(root: &Path, backend: &dyn slidegen_core::llm::ChatBackend, parallelism: usize) -> PipelineResult {
    let inputs = root.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let design_path = inputs.join("design.png");
    design().save_png(&design_path).unwrap();
    let logo = inputs.join("logo.png");
    RasterImage::filled(8, 8, [200, 0, 0]).save_png(&logo).unwrap();
    let k = knowledge();
    let agents = Agents {
        backend,
        embedder: &k.embedder,
        shape_types: &k.shape_types,
        functions: &k.functions,
        snippet_checker: &PatternChecker,
        program_checker: &AcceptAll,
    };
    let cfg = PipelineConfig {
        parallelism,
        ..PipelineConfig::default()
    };
    let out = root.join("run");
    pipeline::run_pipeline(&design_path, &[logo], &cfg, &agents, &out).unwrap()
}
