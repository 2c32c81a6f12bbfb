//! Input-generation and output-annotation prompt templates.
//!
//! The three templates ship embedded and are rendered by plain slot
//! substitution: `{name}` tokens with a known name are replaced in a single
//! pass, everything else is copied byte for byte. User text is never rescanned,
//! so an input that happens to contain `{instruction}` stays literal.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::normalize;
use crate::task::{TaskKind, TaskSpec};

const INPUT_GENERATION: &str = include_str!("../templates/input_generation.txt");
const INPUT_CLASSIFICATION: &str = include_str!("../templates/input_classification.txt");
const OUTPUT_ANNOTATION: &str = include_str!("../templates/output_annotation.txt");

/// Marker that introduces an input block, both in the templates and in rendered input lists.
pub const INPUT_MARKER: &str = "[input]=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplateId {
    InputGenForGeneration,
    InputGenForClassification,
    OutputAnnotation,
}

impl PromptTemplateId {
    pub const ALL: [PromptTemplateId; 3] = [
        PromptTemplateId::InputGenForGeneration,
        PromptTemplateId::InputGenForClassification,
        PromptTemplateId::OutputAnnotation,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptTemplateId::InputGenForGeneration => "input_generation.txt",
            PromptTemplateId::InputGenForClassification => "input_classification.txt",
            PromptTemplateId::OutputAnnotation => "output_annotation.txt",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            PromptTemplateId::InputGenForGeneration => INPUT_GENERATION,
            PromptTemplateId::InputGenForClassification => INPUT_CLASSIFICATION,
            PromptTemplateId::OutputAnnotation => OUTPUT_ANNOTATION,
        }
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            PromptTemplateId::InputGenForGeneration => {
                &["instruction", "high_quality_input_string", "low_quality_input_string"]
            }
            PromptTemplateId::InputGenForClassification => &[
                "instruction",
                "high_quality_input_string",
                "low_quality_input_string",
                "conditional_label",
            ],
            PromptTemplateId::OutputAnnotation => &["instruction", "input_1", "output_1", "new_input"],
        }
    }
}

/// Joiner between `USER : [input]` and a demonstration input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConjunctionVariant {
    #[default]
    EqualsNewline,
    Colon,
    DoubleNewline,
}

impl ConjunctionVariant {
    pub const ALL: [ConjunctionVariant; 3] = [
        ConjunctionVariant::EqualsNewline,
        ConjunctionVariant::Colon,
        ConjunctionVariant::DoubleNewline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConjunctionVariant::EqualsNewline => "=\n",
            ConjunctionVariant::Colon => ":",
            ConjunctionVariant::DoubleNewline => "\n\n",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConjunctionVariant::EqualsNewline => "equals_newline",
            ConjunctionVariant::Colon => "colon",
            ConjunctionVariant::DoubleNewline => "double_newline",
        }
    }
}

impl fmt::Display for ConjunctionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConjunctionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equals_newline" | "=\\n" | "=\n" => Ok(ConjunctionVariant::EqualsNewline),
            "colon" | ":" => Ok(ConjunctionVariant::Colon),
            "double_newline" | "\\n\\n" | "\n\n" => Ok(ConjunctionVariant::DoubleNewline),
            other => Err(Error::argument(format!(
                "unknown conjunction {other:?} (expected equals_newline, colon or double_newline)"
            ))),
        }
    }
}

/// Single-pass `{slot}` substitution; unknown slots are left untouched.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots
                .iter()
                .find(|(slot, _)| *slot == name)
                .map(|(_, value)| (close, *value))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// The annotation template split into a header, one repeatable
/// demonstration turn, and the query tail.
#[derive(Debug, Clone, PartialEq, Eq)]
struct AnnotationLayout {
    header: String,
    /// Text of a turn before the conjunction, e.g. `USER : [input] `.
    turn_prefix: String,
    /// Between demonstration input and output, e.g. `\nASSISTANT : `.
    turn_middle: String,
    turn_suffix: String,
    tail: String,
}

impl AnnotationLayout {
    fn parse(template: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Template(format!("annotation template: {msg}"));
        let input_at = template.find("{input_1}").ok_or_else(|| bad("missing {input_1}"))?;
        let conj = ConjunctionVariant::EqualsNewline.as_str();
        if !template[..input_at].ends_with(conj) {
            return Err(bad("{input_1} must follow the \"=\\n\" conjunction"));
        }
        let conj_at = input_at - conj.len();
        let turn_start = template[..conj_at].rfind('\n').map_or(0, |i| i + 1);
        let after_input = input_at + "{input_1}".len();
        let output_at = template[after_input..]
            .find("{output_1}")
            .map(|i| after_input + i)
            .ok_or_else(|| bad("missing {output_1} after {input_1}"))?;
        let after_output = output_at + "{output_1}".len();
        let turn_end = template[after_output..]
            .find('\n')
            .map_or(template.len(), |i| after_output + i + 1);

        let layout = AnnotationLayout {
            header: template[..turn_start].to_string(),
            turn_prefix: template[turn_start..conj_at].to_string(),
            turn_middle: template[after_input..output_at].to_string(),
            turn_suffix: template[after_output..turn_end].to_string(),
            tail: String::new(),
        };
        let one = &template[turn_start..turn_end];
        let mut cursor = turn_end;
        let mut n = 2;
        loop {
            let numbered = one
                .replace("{input_1}", &format!("{{input_{n}}}"))
                .replace("{output_1}", &format!("{{output_{n}}}"));
            if template[cursor..].starts_with(&numbered) {
                cursor += numbered.len();
                n += 1;
            } else {
                break;
            }
        }
        let tail = template[cursor..].to_string();
        if !tail.contains("{new_input}") {
            return Err(bad("query turn with {new_input} must follow the demonstration turns"));
        }
        if tail.contains(&format!("{{input_{n}}}")) {
            return Err(bad("demonstration turns must share one layout"));
        }
        Ok(AnnotationLayout { tail, ..layout })
    }

    fn render(
        &self,
        instruction: &str,
        demonstrations: &[(&str, &str)],
        new_input: &str,
        variant: ConjunctionVariant,
    ) -> String {
        let mut out = fill(&self.header, &[("instruction", instruction)]);
        for (input, output) in demonstrations {
            self.push_turn(&mut out, input, output, variant);
        }
        out.push_str(&fill(
            &self.tail,
            &[("new_input", new_input), ("instruction", instruction)],
        ));
        out
    }

    fn push_turn(&self, out: &mut String, input: &str, output: &str, variant: ConjunctionVariant) {
        out.push_str(&self.turn_prefix);
        out.push_str(variant.as_str());
        out.push_str(input);
        out.push_str(&self.turn_middle);
        out.push_str(output);
        out.push_str(&self.turn_suffix);
    }

    fn turn_len(&self, input: &str, output: &str, variant: ConjunctionVariant) -> usize {
        let mut s = String::new();
        self.push_turn(&mut s, input, output, variant);
        s.chars().count()
    }
}

/// Holds the three templates; [`PromptEngine::default`] uses the embedded ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEngine {
    input_generation: String,
    input_classification: String,
    annotation: String,
    layout: AnnotationLayout,
}

impl Default for PromptEngine {
    fn default() -> Self {
        PromptEngine::from_templates(INPUT_GENERATION, INPUT_CLASSIFICATION, OUTPUT_ANNOTATION)
            .expect("embedded templates are well formed")
    }
}

impl PromptEngine {
    pub fn from_templates(generation: &str, classification: &str, annotation: &str) -> Result<Self> {
        for (id, text) in [
            (PromptTemplateId::InputGenForGeneration, generation),
            (PromptTemplateId::InputGenForClassification, classification),
            (PromptTemplateId::OutputAnnotation, annotation),
        ] {
            for slot in id.required_slots() {
                if !text.contains(&format!("{{{slot}}}")) {
                    return Err(Error::Template(format!("{} lacks slot {{{slot}}}", id.file_name())));
                }
            }
        }
        Ok(PromptEngine {
            input_generation: generation.to_string(),
            input_classification: classification.to_string(),
            annotation: annotation.to_string(),
            layout: AnnotationLayout::parse(annotation)?,
        })
    }

    /// Loads overrides from `dir`; a template file that is absent falls back to the embedded one.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let load = |id: PromptTemplateId| -> Result<String> {
            let path = dir.join(id.file_name());
            if path.exists() {
                fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
            } else {
                Ok(id.embedded().to_string())
            }
        };
        Self::from_templates(
            &load(PromptTemplateId::InputGenForGeneration)?,
            &load(PromptTemplateId::InputGenForClassification)?,
            &load(PromptTemplateId::OutputAnnotation)?,
        )
    }

    pub fn template(&self, id: PromptTemplateId) -> &str {
        match id {
            PromptTemplateId::InputGenForGeneration => &self.input_generation,
            PromptTemplateId::InputGenForClassification => &self.input_classification,
            PromptTemplateId::OutputAnnotation => &self.annotation,
        }
    }

    pub fn digest(&self, id: PromptTemplateId) -> String {
        sha256_hex(self.template(id).as_bytes())
    }

    pub fn render_input_prompt(
        &self,
        task: &TaskSpec,
        high_quality_inputs: &[&str],
        low_quality_inputs: &[&str],
        conditional_label: Option<&str>,
    ) -> Result<String> {
        if high_quality_inputs.is_empty() {
            return Err(Error::argument("at least one high-quality input is required"));
        }
        let high = join_inputs(high_quality_inputs);
        let low = join_inputs(low_quality_inputs);
        match (&task.kind, conditional_label) {
            (TaskKind::Generation, None) => Ok(fill(
                &self.input_generation,
                &[
                    ("instruction", &task.instruction),
                    ("high_quality_input_string", &high),
                    ("low_quality_input_string", &low),
                ],
            )),
            (TaskKind::Generation, Some(_)) => Err(Error::argument("conditional label supplied for a generation task")),
            (TaskKind::Classification { .. }, None) => {
                Err(Error::argument("classification prompts need a conditional label"))
            }
            (TaskKind::Classification { labels }, Some(label)) => {
                if !labels.iter().any(|l| normalize(l) == normalize(label)) {
                    return Err(Error::argument(format!("{label:?} is not a task label")));
                }
                Ok(fill(
                    &self.input_classification,
                    &[
                        ("instruction", &task.instruction),
                        ("high_quality_input_string", &high),
                        ("low_quality_input_string", &low),
                        ("conditional_label", label),
                    ],
                ))
            }
        }
    }

    pub fn render_annotation_prompt(
        &self,
        task: &TaskSpec,
        new_input: &str,
        variant: ConjunctionVariant,
    ) -> Result<String> {
        let demos: Vec<(&str, &str)> = task
            .demonstrations
            .iter()
            .map(|d| (d.input.as_str(), d.output.as_str()))
            .collect();
        self.render_annotation_with(&task.instruction, &demos, new_input, variant)
    }

    /// Annotation prompt over an arbitrary number of demonstration turns.
    pub fn render_annotation_with(
        &self,
        instruction: &str,
        demonstrations: &[(&str, &str)],
        new_input: &str,
        variant: ConjunctionVariant,
    ) -> Result<String> {
        if demonstrations.is_empty() {
            return Err(Error::argument("annotation needs at least one demonstration"));
        }
        if new_input.trim().is_empty() {
            return Err(Error::argument("new input is empty"));
        }
        Ok(self.layout.render(instruction, demonstrations, new_input, variant))
    }

    /// Character count one extra demonstration turn adds to an annotation prompt.
    pub fn annotation_turn_chars(&self, input: &str, output: &str, variant: ConjunctionVariant) -> usize {
        self.layout.turn_len(input, output, variant)
    }
}

/// `[input]=\n{text}` blocks separated by one blank line.
pub fn join_inputs(inputs: &[&str]) -> String {
    inputs
        .iter()
        .map(|text| format!("{INPUT_MARKER}\n{text}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Content hash of an embedded template.
pub fn template_digest(id: PromptTemplateId) -> String {
    sha256_hex(id.embedded().as_bytes())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
