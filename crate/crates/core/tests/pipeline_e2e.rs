mod common;

use std::path::PathBuf;

use common::scenario;
use slidegen_core::llm::ScriptedBackend;
use slidegen_core::pipeline::{PipelineResult, ProgramStatus, RunStatus, SnippetStatus, Stage};

const BLESS_VAR: &str = "SLIDEGEN_BLESS";

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/pipeline_trace.json")
}

fn run_once(parallelism: usize) -> (PipelineResult, String, ScriptedBackend) {
    let dir = tempfile::tempdir().unwrap();
    let backend = ScriptedBackend::new(scenario::script());
    let result = scenario::run(dir.path(), &backend, parallelism);
    let trace = std::fs::read_to_string(dir.path().join("run/trace.json")).unwrap();
    assert_eq!(trace, result.to_json());
    (result, trace, backend)
}

#[test]
fn trace_matches_golden_across_runs() {
    let (_, first, _) = run_once(4);
    if std::env::var_os(BLESS_VAR).is_some() {
        std::fs::write(golden_path(), &first).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path())
        .unwrap_or_else(|_| panic!("missing golden; rerun with {BLESS_VAR}=1"));
    assert_eq!(first, golden, "trace drifted; rerun with {BLESS_VAR}=1 if intended");
    for parallelism in [4, 1] {
        assert_eq!(run_once(parallelism).1, golden);
    }
}

#[test]
fn call_count_and_refinement_accounting() {
    let (r, _, backend) = run_once(2);
    assert!(r.regions.len() >= 3, "scenario needs three blocks, got {}", r.regions.len());
    let snippet_attempts: usize = r.snippets.iter().map(|s| s.attempts.len()).sum();
    let program = r.program.as_ref().unwrap();
    let expected = 1 + r.regions.len() + snippet_attempts + program.attempts.len();
    assert_eq!(r.calls.len(), expected);
    assert_eq!(backend.call_count(), expected);

    let by_id = |id: usize| r.snippets.iter().find(|s| s.region_id == id).unwrap();
    assert_eq!((by_id(0).status, by_id(0).attempts.len()), (SnippetStatus::Ok, 1));
    assert_eq!((by_id(1).status, by_id(1).attempts.len()), (SnippetStatus::Ok, 2));
    assert_eq!((by_id(2).status, by_id(2).attempts.len()), (SnippetStatus::Dropped, 3));
    for s in &r.snippets {
        assert!((1..=3).contains(&s.attempts.len()));
        assert_eq!(s.status == SnippetStatus::Ok, s.attempts.last().unwrap().error.is_none());
    }
    assert_eq!((program.status, r.status), (ProgramStatus::Ok, RunStatus::Ok));

    let layout = r.layout_prompt.as_ref().unwrap();
    assert!(layout.contains("# repaired"));
    assert!(!layout.contains("BROKEN"));
    assert!(!layout.contains("- Block 3:"));
    assert!(layout.contains("- Block 1:"));
    assert!(r.calls.last().unwrap().prompt.contains("- assets/logo.png"));
}

#[test]
fn call_order_and_relative_paths() {
    let (r, trace, _) = run_once(3);
    let stages: Vec<Stage> = r.calls.iter().map(|c| c.stage).collect();
    assert_eq!(stages[0], Stage::DescribeOverall);
    assert!(stages[1..=r.regions.len()].iter().all(|s| *s == Stage::DescribeBlock));
    assert_eq!(*stages.last().unwrap(), Stage::Assemble);
    let code_blocks: Vec<usize> = r
        .calls
        .iter()
        .filter(|c| c.stage == Stage::Code)
        .map(|c| c.block.unwrap())
        .collect();
    let mut sorted = code_blocks.clone();
    sorted.sort();
    assert_eq!(code_blocks, sorted);
    assert!(!trace.contains("/tmp"));
    assert_eq!(r.calls[0].images, vec!["design.png".to_string()]);
}

#[test]
fn describer_prompt_lists_every_shape_type_once() {
    let (r, _, _) = run_once(1);
    let k = scenario::knowledge();
    assert_eq!(k.shape_types.len(), 44);
    for call in r.calls.iter().filter(|c| matches!(c.stage, Stage::DescribeOverall | Stage::DescribeBlock)) {
        for e in &k.shape_types {
            assert_eq!(call.prompt.matches(&format!("`{}`", e.name)).count(), 1, "{}", e.name);
        }
    }
}

#[test]
fn trace_replays_to_identical_result() {
    let (original, trace, _) = run_once(2);
    let dir = tempfile::tempdir().unwrap();
    let replay = ScriptedBackend::new(original.replay_script());
    let again = scenario::run(dir.path(), &replay, 2);
    assert_eq!(again.to_json(), trace);
}

#[test]
fn outputs_written_to_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let backend = ScriptedBackend::new(scenario::script());
    let r = scenario::run(dir.path(), &backend, 1);
    let run = dir.path().join("run");
    for region in &r.regions {
        assert!(run.join(&region.image).is_file());
    }
    assert!(run.join("design.png").is_file());
    assert!(run.join("assets/logo.png").is_file());
    let program = std::fs::read_to_string(run.join("program.py")).unwrap();
    assert!(program.contains("prs.save('output.pptx')"));
}

#[test]
fn backend_failure_is_recorded_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let backend = ScriptedBackend::new(vec![]);
    let r = scenario::run(dir.path(), &backend, 1);
    assert_eq!(r.status, RunStatus::Error);
    assert!(r.failure.as_ref().unwrap().contains("describe_overall"));
    assert_eq!(r.calls.len(), 1);
    assert!(r.calls[0].error.is_some());
    let trace: PipelineResult =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/trace.json")).unwrap()).unwrap();
    assert_eq!(trace, r);
}
