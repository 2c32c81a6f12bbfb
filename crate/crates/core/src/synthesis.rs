//! The staged pipeline: input generation against a growing repository,
//! input filtering, in-context output annotation, pair filtering.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::backend::{Backend, GenerationRequest};
use crate::error::{Error, Result};
use crate::filters::{compute_length_stats, filter_inputs, filter_pairs, FilterConfig, FilterOutcome, Rejection};
use crate::prompt::{ConjunctionVariant, PromptEngine, INPUT_MARKER};
use crate::task::{CreatedCounts, Example, Provenance, SyntheticDataset, TaskSpec};

/// Stop sequence for annotation calls; the multi-turn template invites the
/// model to continue with further `USER` turns.
pub const ANNOTATION_STOP: &str = "USER";

/// Input-generation calls allowed per requested raw input.
pub const ATTEMPT_BUDGET_FACTOR: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisParams {
    /// Target repository size before filtering.
    pub n_raw_inputs: usize,
    pub input_temperature: f64,
    pub output_temperature: f64,
    /// Repository entries sampled into each generation prompt.
    pub repo_sample_size: usize,
    pub max_new_tokens_input: usize,
    pub max_new_tokens_output: usize,
    pub rng_seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            n_raw_inputs: 100,
            input_temperature: 1.0,
            output_temperature: 0.0,
            repo_sample_size: 3,
            max_new_tokens_input: 256,
            max_new_tokens_output: 128,
            rng_seed: 0,
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_raw_inputs == 0 {
            problems.push("n_raw_inputs must be at least 1".to_string());
        }
        let invalid = |t: f64| t.is_nan() || t < 0.0;
        if invalid(self.input_temperature) || invalid(self.output_temperature) {
            problems.push("temperatures must be non-negative".to_string());
        }
        if self.input_temperature < self.output_temperature {
            problems.push(format!(
                "input_temperature {} is below output_temperature {}",
                self.input_temperature, self.output_temperature
            ));
        }
        if self.max_new_tokens_input == 0 || self.max_new_tokens_output == 0 {
            problems.push("token limits must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn attempt_budget(&self) -> usize {
        self.n_raw_inputs.saturating_mul(ATTEMPT_BUDGET_FACTOR)
    }
}

/// Append-only, insertion-ordered set of generated inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InputRepository {
    entries: Vec<String>,
    #[serde(skip)]
    seen: HashSet<String>,
}

impl InputRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `text` unless an identical entry exists. Returns whether it was added.
    pub fn insert(&mut self, text: &str) -> bool {
        if self.seen.contains(text) {
            return false;
        }
        self.seen.insert(text.to_string());
        self.entries.push(text.to_string());
        true
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform sample of `min(k, len)` entries without replacement, in insertion order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<&str> {
        let k = k.min(self.entries.len());
        if k == 0 {
            return Vec::new();
        }
        let mut picked = index::sample(rng, self.entries.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| self.entries[i].as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedInput {
    pub input: String,
    /// Label the generation prompt asked for; audit metadata only.
    pub requested_label: Option<String>,
}

impl AsRef<str> for GeneratedInput {
    fn as_ref(&self) -> &str {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputGeneration {
    pub entries: Vec<GeneratedInput>,
    pub repository: InputRepository,
    pub attempts: usize,
    pub backend_failures: usize,
    pub parse_rejections: usize,
    pub duplicates: usize,
    /// Conditional labels drawn per attempt (classification only).
    pub label_draws: BTreeMap<String, usize>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseRejection;

impl std::fmt::Display for ParseRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("generated input is empty after cleanup")
    }
}

const QUOTE_PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('`', '`')];

/// Strips a leading `[input]=` marker, surrounding whitespace and one pair of
/// surrounding quotes.
pub fn parse_generated_input(raw: &str) -> std::result::Result<String, ParseRejection> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix(INPUT_MARKER) {
        text = rest.trim();
    }
    for (open, close) in QUOTE_PAIRS {
        if text.len() >= 2 && text.starts_with(open) && text.ends_with(close) {
            text = text[open.len_utf8()..text.len() - close.len_utf8()].trim();
            break;
        }
    }
    if text.is_empty() {
        Err(ParseRejection)
    } else {
        Ok(text.to_string())
    }
}

/// One round of input generation: prompt repeatedly, each time with the seed
/// inputs as high-quality examples and a fresh repository sample as
/// low-quality ones, until the repository holds `n_raw_inputs` entries or the
/// attempt budget runs out. Running out is reported as a warning.
pub async fn generate_inputs(
    engine: &PromptEngine,
    task: &TaskSpec,
    params: &SynthesisParams,
    backend: &dyn Backend,
) -> Result<InputGeneration> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let high_quality = task.demo_inputs();
    let labels = task.labels();
    let mut out = InputGeneration {
        entries: Vec::with_capacity(params.n_raw_inputs),
        repository: InputRepository::new(),
        attempts: 0,
        backend_failures: 0,
        parse_rejections: 0,
        duplicates: 0,
        label_draws: labels
            .map(|ls| ls.iter().map(|l| (l.clone(), 0)).collect())
            .unwrap_or_default(),
        warning: None,
    };

    while out.repository.len() < params.n_raw_inputs && out.attempts < params.attempt_budget() {
        out.attempts += 1;
        let label = labels.map(|ls| ls[rng.random_range(0..ls.len())].clone());
        if let Some(l) = &label {
            *out.label_draws.entry(l.clone()).or_default() += 1;
        }
        let low_quality = out.repository.sample(&mut rng, params.repo_sample_size);
        let prompt = engine.render_input_prompt(task, &high_quality, &low_quality, label.as_deref())?;
        let request = GenerationRequest::new(prompt, params.input_temperature, params.max_new_tokens_input)
            .with_seed(rng.next_u64());
        let response = backend.generate(&request).await;
        if response.is_error() {
            out.backend_failures += 1;
            continue;
        }
        match parse_generated_input(&response.text) {
            Err(_) => out.parse_rejections += 1,
            Ok(text) => {
                if out.repository.insert(&text) {
                    out.entries.push(GeneratedInput {
                        input: text,
                        requested_label: label,
                    });
                } else {
                    out.duplicates += 1;
                }
            }
        }
    }

    if out.repository.len() < params.n_raw_inputs {
        let message = format!(
            "attempt budget of {} exhausted with {} of {} inputs",
            params.attempt_budget(),
            out.repository.len(),
            params.n_raw_inputs
        );
        warn!(task = %task.id, "{message}");
        out.warning = Some(message);
    }
    Ok(out)
}

fn annotation_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Annotates every input in context; the result is aligned with `inputs`, an
/// entry is `None` when the backend failed or answered with nothing.
pub async fn annotate_aligned(
    engine: &PromptEngine,
    task: &TaskSpec,
    inputs: &[&str],
    params: &SynthesisParams,
    backend: &dyn Backend,
) -> Result<Vec<Option<Example>>> {
    let requests = inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let prompt = engine.render_annotation_prompt(task, input, ConjunctionVariant::EqualsNewline)?;
            Ok(
                GenerationRequest::new(prompt, params.output_temperature, params.max_new_tokens_output)
                    .with_stop(ANNOTATION_STOP)
                    .with_seed(annotation_seed(params.rng_seed, i)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = backend.batch_generate(&requests).await;
    Ok(inputs
        .iter()
        .zip(responses)
        .map(|(input, response)| {
            let output = response.text.trim();
            (!response.is_error() && !output.is_empty()).then(|| Example::new(*input, output, Provenance::Synthetic))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub examples: Vec<Example>,
    /// Inputs dropped because annotation failed.
    pub failed: usize,
}

pub async fn annotate_outputs(
    engine: &PromptEngine,
    task: &TaskSpec,
    inputs: &[&str],
    params: &SynthesisParams,
    backend: &dyn Backend,
) -> Result<Annotation> {
    let aligned = annotate_aligned(engine, task, inputs, params, backend).await?;
    let failed = aligned.iter().filter(|e| e.is_none()).count();
    Ok(Annotation {
        examples: aligned.into_iter().flatten().collect(),
        failed,
    })
}

/// Everything a pipeline run produced besides the dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub dataset: SyntheticDataset,
    pub generation: InputGeneration,
    pub input_rejections: Vec<Rejection<GeneratedInput>>,
    pub pair_rejections: Vec<Rejection<Example>>,
    pub annotation_failures: usize,
}

impl PipelineRun {
    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self.generation.warning.iter().cloned().collect();
        if self.annotation_failures > 0 {
            w.push(format!(
                "{} inputs dropped by failed annotation",
                self.annotation_failures
            ));
        }
        w
    }
}

pub(crate) fn empty_after_filter<T>(stage: &str, outcome: &FilterOutcome<T>) -> Error {
    let filter = outcome.dominant_filter().unwrap_or("unknown");
    Error::EmptyDataset {
        stage: format!("{stage}-stage {filter} filter"),
        detail: format!("{} candidates rejected", outcome.rejected.len()),
    }
}

/// generate → filter inputs → annotate → filter pairs.
pub async fn run_pipeline(
    engine: &PromptEngine,
    task: &TaskSpec,
    params: &SynthesisParams,
    backend: &dyn Backend,
    filter_config: &FilterConfig,
) -> Result<PipelineRun> {
    filter_config.validate()?;
    let stats = compute_length_stats(&task.demonstrations)?;

    let generation = generate_inputs(engine, task, params, backend).await?;
    if generation.entries.is_empty() {
        return Err(Error::EmptyDataset {
            stage: "input generation".into(),
            detail: format!(
                "{} attempts, {} backend failures, {} unparsable",
                generation.attempts, generation.backend_failures, generation.parse_rejections
            ),
        });
    }
    let raw_inputs = generation.entries.len();

    let input_stage = filter_inputs(generation.entries.clone(), &stats, filter_config);
    if input_stage.kept.is_empty() {
        return Err(empty_after_filter("input", &input_stage));
    }
    let post_input_filter = input_stage.kept.len();

    let kept_inputs: Vec<&str> = input_stage.kept.iter().map(|g| g.input.as_str()).collect();
    let annotation = annotate_outputs(engine, task, &kept_inputs, params, backend).await?;
    if annotation.examples.is_empty() {
        return Err(Error::EmptyDataset {
            stage: "annotation".into(),
            detail: format!("{} annotation calls failed", annotation.failed),
        });
    }

    let pair_stage = filter_pairs(annotation.examples, &stats, filter_config, task.labels());
    if pair_stage.kept.is_empty() {
        return Err(empty_after_filter("pair", &pair_stage));
    }

    let created_counts = CreatedCounts {
        raw_inputs,
        post_input_filter,
        post_pair_filter: pair_stage.kept.len(),
    };
    info!(task = %task.id, ?created_counts, "pipeline finished");
    Ok(PipelineRun {
        dataset: SyntheticDataset {
            task_id: task.id.clone(),
            examples: pair_stage.kept,
            params: params.clone(),
            created_counts,
        },
        generation,
        input_rejections: input_stage.rejected,
        pair_rejections: pair_stage.rejected,
        annotation_failures: annotation.failed,
    })
}
