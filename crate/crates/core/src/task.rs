//! Tasks, examples and datasets, plus ingestion of Super-NaturalInstructions V2 task files.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::normalize;
use crate::synthesis::SynthesisParams;

/// Upper bound on seed demonstrations per task.
pub const MAX_DEMONSTRATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Synthetic,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
    pub provenance: Provenance,
}

impl Example {
    pub fn new(input: impl Into<String>, output: impl Into<String>, provenance: Provenance) -> Self {
        Example {
            input: input.into(),
            output: output.into(),
            provenance,
        }
    }

    pub fn seed(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self::new(input, output, Provenance::Seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskKind {
    Classification { labels: Vec<String> },
    Generation,
}

impl TaskKind {
    pub fn labels(&self) -> Option<&[String]> {
        match self {
            TaskKind::Classification { labels } => Some(labels),
            TaskKind::Generation => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub kind: TaskKind,
    pub demonstrations: Vec<Example>,
}

impl TaskSpec {
    /// Builds a task and rejects it if any invariant is violated.
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        kind: TaskKind,
        demonstrations: Vec<Example>,
    ) -> Result<Self> {
        let task = TaskSpec {
            id: id.into(),
            instruction: instruction.into(),
            kind,
            demonstrations,
        };
        let report = validate_task(&task);
        if report.is_empty() {
            Ok(task)
        } else {
            Err(Error::Validation(report.to_string()))
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.kind.labels()
    }

    pub fn demo_inputs(&self) -> Vec<&str> {
        self.demonstrations.iter().map(|d| d.input.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        decode_json(text, "task spec")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedCounts {
    pub raw_inputs: usize,
    pub post_input_filter: usize,
    pub post_pair_filter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub task_id: String,
    pub examples: Vec<Example>,
    pub params: SynthesisParams,
    pub created_counts: CreatedCounts,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One JSON object per line, in dataset order.
    pub fn to_jsonl(&self) -> Result<String> {
        examples_to_jsonl(&self.examples)
    }
}

pub fn examples_to_jsonl(examples: &[Example]) -> Result<String> {
    let mut out = String::new();
    for example in examples {
        out.push_str(&serde_json::to_string(example)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_examples_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let body = examples_to_jsonl(examples)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| decode_json(line, &format!("{}:{}", path.display(), n + 1)))
        .collect()
}

/// Decodes JSON and reports the path of the first offending field.
pub(crate) fn decode_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| Error::Parse {
        origin: origin.to_string(),
        field: err.path().to_string(),
        message: err.inner().to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.issues.join("; "))
    }
}

/// Lists every violated task or example invariant. Never fails.
pub fn validate_task(task: &TaskSpec) -> ValidationReport {
    let mut issues = Vec::new();
    if task.instruction.trim().is_empty() {
        issues.push("instruction empty".to_string());
    }
    if task.demonstrations.is_empty() {
        issues.push("no demonstrations".to_string());
    }
    if task.demonstrations.len() > MAX_DEMONSTRATIONS {
        issues.push(format!(
            "{} demonstrations, at most {MAX_DEMONSTRATIONS} allowed",
            task.demonstrations.len()
        ));
    }
    for (i, demo) in task.demonstrations.iter().enumerate() {
        if demo.input.trim().is_empty() {
            issues.push(format!("demonstration {i}: input empty"));
        }
        if demo.output.trim().is_empty() {
            issues.push(format!("demonstration {i}: output empty"));
        }
    }
    if let TaskKind::Classification { labels } = &task.kind {
        if labels.len() < 2 {
            issues.push(format!("classification needs at least 2 labels, got {}", labels.len()));
        }
        let mut seen = HashSet::new();
        for label in labels {
            let key = normalize(label);
            if key.is_empty() {
                issues.push("empty label".to_string());
            } else if !seen.insert(key) {
                issues.push(format!("duplicate label {label:?}"));
            }
        }
        for (i, demo) in task.demonstrations.iter().enumerate() {
            if !seen.contains(&normalize(&demo.output)) {
                issues.push(format!("demonstration {i}: output {:?} is not a label", demo.output));
            }
        }
    }
    ValidationReport { issues }
}

/// Seeded sample of `k` demonstrations without replacement, kept in task order.
pub fn select_demonstrations(task: &TaskSpec, k: usize, seed: u64) -> Result<Vec<Example>> {
    let n = task.demonstrations.len();
    if k == 0 || k > n {
        return Err(Error::argument(format!("k must lie in 1..={n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| task.demonstrations[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindOverride {
    #[default]
    Auto,
    Classification,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    /// Above this many distinct outputs a task without a label inventory is generation.
    pub classification_threshold: usize,
    pub kind: KindOverride,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            classification_threshold: 10,
            kind: KindOverride::Auto,
        }
    }
}

/// An evaluation instance; NIv2 instances may carry several acceptable outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub input: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Niv2Task {
    pub spec: TaskSpec,
    pub instances: Vec<Instance>,
}

#[derive(Deserialize)]
struct Niv2File {
    #[serde(rename = "Definition")]
    definition: Vec<String>,
    #[serde(rename = "Positive Examples")]
    positive_examples: Vec<Niv2Example>,
    #[serde(rename = "Instances", default)]
    instances: Vec<Niv2Instance>,
    #[serde(rename = "Labels", default)]
    labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct Niv2Example {
    input: String,
    output: String,
}

#[derive(Deserialize)]
struct Niv2Instance {
    #[serde(default)]
    id: String,
    input: String,
    output: Vec<String>,
}

pub fn load_niv2_task(path: &Path, options: &LoadOptions) -> Result<TaskSpec> {
    Ok(Niv2Task::load(path, options)?.spec)
}

impl Niv2Task {
    pub fn load(path: &Path, options: &LoadOptions) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".to_string());
        Self::parse(&id, &text, &path.display().to_string(), options)
    }

    pub fn parse(id: &str, text: &str, origin: &str, options: &LoadOptions) -> Result<Self> {
        let file: Niv2File = decode_json(text, origin)?;
        let instruction = file.definition.first().cloned().ok_or_else(|| Error::Parse {
            origin: origin.to_string(),
            field: "Definition".to_string(),
            message: "no definition entries".to_string(),
        })?;
        if file.positive_examples.is_empty() {
            return Err(Error::Validation(format!("{origin}: zero positive examples")));
        }
        let demonstrations: Vec<Example> = file
            .positive_examples
            .iter()
            .take(MAX_DEMONSTRATIONS)
            .map(|e| Example::seed(e.input.clone(), e.output.clone()))
            .collect();

        let observed: Vec<&str> = file
            .positive_examples
            .iter()
            .map(|e| e.output.as_str())
            .chain(file.instances.iter().flat_map(|i| i.output.iter().map(String::as_str)))
            .collect();
        let kind = infer_kind(file.labels.as_deref(), &observed, options);

        let spec = TaskSpec::new(id, instruction, kind, demonstrations)
            .map_err(|e| Error::Validation(format!("{origin}: {e}")))?;
        let instances = file
            .instances
            .into_iter()
            .enumerate()
            .map(|(n, i)| Instance {
                id: if i.id.is_empty() { format!("{id}-{n}") } else { i.id },
                input: i.input,
                outputs: i.output,
            })
            .collect();
        Ok(Niv2Task { spec, instances })
    }
}

/// Distinct outputs in first-seen order, deduplicated after normalization.
fn distinct_outputs(observed: &[&str]) -> Vec<String> {
    let mut seen = HashSet::new();
    observed
        .iter()
        .filter(|o| !normalize(o).is_empty() && seen.insert(normalize(o)))
        .map(|o| o.trim().to_string())
        .collect()
}

fn infer_kind(inventory: Option<&[String]>, observed: &[&str], options: &LoadOptions) -> TaskKind {
    let classification = |labels: Vec<String>| TaskKind::Classification { labels };
    match (options.kind, inventory) {
        (KindOverride::Generation, _) => TaskKind::Generation,
        (_, Some(labels)) => classification(labels.to_vec()),
        (KindOverride::Classification, None) => classification(distinct_outputs(observed)),
        (KindOverride::Auto, None) => {
            let distinct = distinct_outputs(observed);
            // A closed label set shows up as repeated outputs; a few unique
            // outputs say nothing about the kind.
            let repeats = distinct.len() < observed.len();
            if distinct.len() >= 2 && distinct.len() <= options.classification_threshold && repeats {
                classification(distinct)
            } else {
                TaskKind::Generation
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn niv2(definition: &str, examples: &[(&str, &str)], instances: &[(&str, &str)]) -> String {
        let pos: Vec<_> = examples
            .iter()
            .map(|(i, o)| serde_json::json!({"input": i, "output": o, "explanation": ""}))
            .collect();
        let inst: Vec<_> = instances
            .iter()
            .enumerate()
            .map(|(n, (i, o))| serde_json::json!({"id": format!("i{n}"), "input": i, "output": [o]}))
            .collect();
        serde_json::json!({
            "Definition": [definition],
            "Positive Examples": pos,
            "Instances": inst,
        })
        .to_string()
    }

    #[test]
    fn topic_word_task_is_generation() {
        let text = niv2(
            "Write a topic word from a given fact.",
            &[
                ("pesticides cause pollution", "pollution harms"),
                ("plants need sunlight to grow", "plant growth"),
            ],
            &[],
        );
        let task = Niv2Task::parse("t", &text, "fixture", &LoadOptions::default())
            .unwrap()
            .spec;
        assert_eq!(task.kind, TaskKind::Generation);
        assert_eq!(task.demonstrations.len(), 2);
        assert_eq!(task.instruction, "Write a topic word from a given fact.");
    }

    #[test]
    fn label_inventory_makes_classification() {
        let mut doc: serde_json::Value = serde_json::from_str(&niv2(
            "Decide the relation.",
            &[("a", "entailment"), ("b", "neutral"), ("c", "contradiction")],
            &[("d", "neutral"), ("e", "entailment")],
        ))
        .unwrap();
        doc["Labels"] = serde_json::json!(["entailment", "neutral", "contradiction"]);
        let task = Niv2Task::parse("t", &doc.to_string(), "fixture", &LoadOptions::default())
            .unwrap()
            .spec;
        assert_eq!(task.labels().unwrap().len(), 3);
    }

    #[test]
    fn repeated_outputs_infer_classification() {
        let text = niv2(
            "Decide the relation.",
            &[("a", "entailment"), ("b", "neutral")],
            &[("c", "contradiction"), ("d", "Neutral"), ("e", "entailment")],
        );
        let task = Niv2Task::parse("t", &text, "fixture", &LoadOptions::default())
            .unwrap()
            .spec;
        assert_eq!(task.labels().unwrap(), ["entailment", "neutral", "contradiction"]);
    }

    #[test]
    fn kind_override_wins() {
        let text = niv2(
            "Decide the relation.",
            &[("a", "yes"), ("b", "no")],
            &[("c", "yes"), ("d", "no")],
        );
        let options = LoadOptions {
            kind: KindOverride::Generation,
            ..Default::default()
        };
        let task = Niv2Task::parse("t", &text, "fixture", &options).unwrap().spec;
        assert_eq!(task.kind, TaskKind::Generation);
    }

    #[test]
    fn five_positive_examples_truncate_to_three() {
        let examples: Vec<(String, String)> = (0..5).map(|i| (format!("in {i}"), format!("out {i}"))).collect();
        let refs: Vec<(&str, &str)> = examples.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let text = niv2("Do it.", &refs, &[]);
        let task = Niv2Task::parse("t", &text, "fixture", &LoadOptions::default())
            .unwrap()
            .spec;
        assert_eq!(task.demonstrations.len(), 3);
        assert_eq!(task.demonstrations[2].input, "in 2");
    }

    #[test]
    fn malformed_field_is_named() {
        let text = r#"{"Definition": "not a list", "Positive Examples": []}"#;
        let err = Niv2Task::parse("t", text, "fixture", &LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { field, .. } => assert_eq!(field, "Definition"),
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"Definition": ["x"], "Positive Examples": [{"input": 3, "output": "y"}]}"#;
        let err = Niv2Task::parse("t", text, "fixture", &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("Positive Examples[0].input"), "{err}");
    }

    #[test]
    fn zero_positive_examples_is_validation_error() {
        let text = r#"{"Definition": ["x"], "Positive Examples": []}"#;
        let err = Niv2Task::parse("t", text, "fixture", &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    fn classification_task() -> TaskSpec {
        TaskSpec {
            id: "c".into(),
            instruction: "Classify.".into(),
            kind: TaskKind::Classification {
                labels: vec!["positive".into(), "negative".into()],
            },
            demonstrations: vec![Example::seed("good", "positive"), Example::seed("bad", "negative")],
        }
    }

    #[test]
    fn validation_reports() {
        let mut task = classification_task();
        assert!(validate_task(&task).is_empty());

        task.demonstrations[1].output = "meh".into();
        let report = validate_task(&task);
        assert_eq!(report.issues.len(), 1);
        assert!(report.issues[0].starts_with("demonstration 1"));

        let mut task = classification_task();
        task.instruction = "  ".into();
        assert_eq!(validate_task(&task).issues, ["instruction empty"]);

        let mut task = classification_task();
        task.kind = TaskKind::Classification {
            labels: vec!["positive".into(), "Positive ".into(), "negative".into()],
        };
        assert!(validate_task(&task).issues[0].contains("duplicate label"));
    }

    #[test]
    fn demonstration_selection() {
        let mut task = classification_task();
        task.demonstrations.push(Example::seed("fine", "positive"));
        assert_eq!(select_demonstrations(&task, 3, 9).unwrap(), task.demonstrations);
        let first = select_demonstrations(&task, 2, 17).unwrap();
        for _ in 0..5 {
            assert_eq!(select_demonstrations(&task, 2, 17).unwrap(), first);
        }
        assert!(select_demonstrations(&task, 0, 1).is_err());
        assert!(select_demonstrations(&task, 4, 1).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let examples = classification_task().demonstrations;
        write_examples_jsonl(&path, &examples).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"input":"good","output":"positive","provenance":"seed"}"#
        );
        assert_eq!(read_examples_jsonl(&path).unwrap(), examples);
    }
}
