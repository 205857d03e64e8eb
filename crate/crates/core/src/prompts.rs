//! Prompt templates for the describer, coder and assembler agents.

use thiserror::Error;

use crate::kb::{KbEntry, ScoredEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template placeholder {{{{{0}}}}} has no value")]
    Unfilled(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

/// Substitutes `{{name}}` placeholders in one pass. Values are inserted
/// verbatim and never re-scanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or(TemplateError::Unterminated(offset + start))?;
        let key = &after[..end];
        let value = values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::Unfilled(key.to_string()))?;
        out.push_str(value);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

pub const DESCRIBER_SYSTEM: &str = "You are a presentation designer who describes slide designs \
precisely, naming every element with python-pptx object types.";

pub const OVERALL_TEMPLATE: &str = "\
Describe the complete slide design in the attached image.
Cover the background, the colour scheme, and the arrangement of the main \
elements from top to bottom and left to right.
Name each element with one of the shape types listed below.

## Shape types
{{shape_types}}
";

pub const BLOCK_TEMPLATE: &str = "\
The attached image is block {{block_number}} of {{block_count}} cut from a slide design.
Describe every element inside this block: its shape type, text content, \
colours, font size and weight, and its placement within the block.
Name each element with one of the shape types listed below.

## Shape types
{{shape_types}}
";

pub const CODER_SYSTEM: &str = "You write python-pptx code. Reply with a single ```python code block.";

pub const CODER_TEMPLATE: &str = "\
Write python-pptx code that recreates the slide block shown in the attached image.

## Block description
{{description}}

## Reference functions
{{functions}}

## Requirements
- The code is a fragment: `prs` (a Presentation) and `slide` (the target slide) already exist.
- Import any helpers you use, such as `Inches`, `Pt` and `RGBColor`.
- Only use functions and attributes that exist in python-pptx.
";

pub const ASSEMBLER_SYSTEM: &str = "You assemble python-pptx programs. Reply with a single ```python code block.";

pub const LAYOUT_TEMPLATE: &str = "\
Combine the code snippets below into one complete python-pptx program that recreates the slide design.

## Design
{{design}}

## Overall Description
{{overall_description}}

## Code Snippets
{{code_snippets}}

## Positions
{{positions}}

## Grammar
{{grammar}}

## Requirements
1. Every block must appear at its listed position on the final slide; use the inch values above with `Inches(...)`.
2. The merged program must contain no syntax errors and no context conflicts between snippets: \
create one `Presentation`, set its slide size, add one blank slide, rename clashing variables, \
and save the deck as `output.pptx` in the working directory.
";

pub const REFINE_TEMPLATE: &str = "

## Previous attempt
```python
{{code}}
```

Fix the following error and return the corrected code:
{{error}}
";

pub fn format_shape_types(entries: &[KbEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("- `{}`: {}", e.name, e.body.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_functions(entries: &[ScoredEntry]) -> String {
    if entries.is_empty() {
        return "(none retrieved)".to_string();
    }
    entries
        .iter()
        .map(|e| format!("### {}\n{}", e.name, e.body.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn refinement_suffix(code: &str, error: &str) -> String {
    render(REFINE_TEMPLATE, &[("code", code), ("error", error)]).expect("refinement template is complete")
}

/// Pulls the first fenced code block out of a reply; falls back to the
/// whole reply when there is none.
pub fn extract_code(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim_end().to_string();
    }
    reply.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_and_rejects() {
        assert_eq!(render("a {{x}} b {{y}}", &[("x", "1"), ("y", "{{z}}")]).unwrap(), "a 1 b {{z}}");
        assert_eq!(render("{{x}}", &[]), Err(TemplateError::Unfilled("x".into())));
        assert!(matches!(render("oops {{x", &[("x", "")]), Err(TemplateError::Unterminated(5))));
    }

    #[test]
    fn extracts_fenced_code() {
        assert_eq!(extract_code("Here:\n```python\nx = 1\ny = 2\n```\nDone"), "x = 1\ny = 2");
        assert_eq!(extract_code("```\nz = 3\n```"), "z = 3");
        assert_eq!(extract_code("  plain = True \n"), "plain = True");
        assert_eq!(extract_code("```python\nunterminated = 1\n"), "unterminated = 1");
    }

    #[test]
    fn layout_template_has_all_sections() {
        for section in ["## Design", "## Overall Description", "## Code Snippets", "## Positions", "## Grammar"] {
            assert_eq!(LAYOUT_TEMPLATE.matches(section).count(), 1, "{section}");
        }
    }
}
