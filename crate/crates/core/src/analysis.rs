//! Analysis protocols: filter ablations over shared raw generations, label
//! randomization, Self-ICL prompt packing, conjunction sensitivity and label
//! distribution reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest};
use crate::error::{Error, Result};
use crate::filters::{compute_length_stats, filter_inputs, filter_pairs, FilterConfig};
use crate::metrics::{
    evaluate_task, evaluate_task_multi, irrelevant_ratio, l1_distance, label_distribution, round1, EvalResult,
};
use crate::prompt::{sha256_hex, ConjunctionVariant, PromptEngine};
use crate::synthesis::{annotate_aligned, generate_inputs, InputGeneration, SynthesisParams, ANNOTATION_STOP};
use crate::task::{CreatedCounts, Example, Instance, Provenance, SyntheticDataset, TaskSpec};

/// Default characters-per-token estimate for context budgets.
pub const CHARS_PER_TOKEN: f64 = 4.0;

pub fn context_budget_chars(tokens: usize, chars_per_token: f64) -> usize {
    (tokens as f64 * chars_per_token).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationConfig {
    WithBoth,
    WithoutNoise,
    WithoutLength,
    WithoutBoth,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::WithBoth,
        AblationConfig::WithoutNoise,
        AblationConfig::WithoutLength,
        AblationConfig::WithoutBoth,
    ];

    /// Column heading in the ablation table.
    pub fn heading(self) -> &'static str {
        match self {
            AblationConfig::WithBoth => "With Both",
            AblationConfig::WithoutNoise => "Without Noise",
            AblationConfig::WithoutLength => "Without Length",
            AblationConfig::WithoutBoth => "Without Both",
        }
    }

    /// `base` with this variant's filters switched off. Other settings are kept.
    pub fn apply(self, base: &FilterConfig) -> FilterConfig {
        let mut config = base.clone();
        if matches!(self, AblationConfig::WithoutNoise | AblationConfig::WithoutBoth) {
            config.enable_noise = false;
        }
        if matches!(self, AblationConfig::WithoutLength | AblationConfig::WithoutBoth) {
            config.enable_length = false;
        }
        config
    }
}

/// Replaces every output with a seeded uniform label draw.
pub fn randomize_labels(dataset: &SyntheticDataset, labels: Option<&[String]>, seed: u64) -> Result<SyntheticDataset> {
    let labels = match labels {
        Some(l) if !l.is_empty() => l,
        _ => return Err(Error::argument("label randomization needs a classification task")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = dataset
        .examples
        .iter()
        .map(|e| {
            Example::new(
                e.input.clone(),
                labels[rng.random_range(0..labels.len())].clone(),
                Provenance::Randomized,
            )
        })
        .collect();
    Ok(SyntheticDataset {
        examples,
        ..dataset.clone()
    })
}

/// Copy of `task` whose demonstration outputs are seeded uniform label draws.
pub fn randomize_demo_labels(task: &TaskSpec, seed: u64) -> Result<TaskSpec> {
    let labels = task
        .labels()
        .ok_or_else(|| Error::argument("label randomization needs a classification task"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut randomized = task.clone();
    for demo in &mut randomized.demonstrations {
        demo.output = labels[rng.random_range(0..labels.len())].clone();
        demo.provenance = Provenance::Randomized;
    }
    Ok(randomized)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfIclPrompt {
    pub prompt: String,
    /// Synthetic examples packed after the seed demonstrations.
    pub k_used: usize,
}

/// Packs synthetic examples, in dataset order, after the seed demonstrations
/// until the next one would push the prompt past `context_budget` characters.
pub fn build_self_icl_prompt(
    engine: &PromptEngine,
    task: &TaskSpec,
    dataset: &[Example],
    context_budget: usize,
    query_input: &str,
    variant: ConjunctionVariant,
) -> Result<SelfIclPrompt> {
    if dataset.is_empty() {
        return Err(Error::argument("self-ICL needs a non-empty synthetic dataset"));
    }
    let base = engine.render_annotation_prompt(task, query_input, variant)?;
    let mut length = base.chars().count();
    if length > context_budget {
        return Err(Error::argument(format!(
            "base prompt of {length} characters exceeds the context budget of {context_budget}"
        )));
    }
    let mut k_used = 0;
    for example in dataset {
        let extra = engine.annotation_turn_chars(&example.input, &example.output, variant);
        if length + extra > context_budget {
            break;
        }
        length += extra;
        k_used += 1;
    }
    let demos: Vec<(&str, &str)> = task
        .demonstrations
        .iter()
        .chain(&dataset[..k_used])
        .map(|e| (e.input.as_str(), e.output.as_str()))
        .collect();
    let prompt = engine.render_annotation_with(&task.instruction, &demos, query_input, variant)?;
    debug_assert_eq!(prompt.chars().count(), length);
    Ok(SelfIclPrompt { prompt, k_used })
}

/// Raw generations shared by every ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGenerations {
    pub generation: InputGeneration,
    /// Aligned with `generation.entries`; `None` where annotation failed.
    pub annotations: Vec<Option<Example>>,
}

impl RawGenerations {
    /// Content hash over inputs and annotations, in order.
    pub fn digest(&self) -> String {
        let mut buf = String::new();
        for (entry, annotation) in self.generation.entries.iter().zip(&self.annotations) {
            let record = serde_json::json!({
                "input": entry.input,
                "output": annotation.as_ref().map(|e| e.output.as_str()),
            });
            buf.push_str(&record.to_string());
            buf.push('\n');
        }
        sha256_hex(buf.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariantRun {
    pub variant: AblationConfig,
    pub dataset: SyntheticDataset,
    /// Indices into the raw generations that survived both stages.
    pub kept_indices: Vec<usize>,
    pub raw_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub raw: RawGenerations,
    pub variants: Vec<AblationVariantRun>,
}

pub async fn generate_raw(
    engine: &PromptEngine,
    task: &TaskSpec,
    params: &SynthesisParams,
    backend: &dyn Backend,
) -> Result<RawGenerations> {
    let generation = generate_inputs(engine, task, params, backend).await?;
    if generation.entries.is_empty() {
        return Err(Error::EmptyDataset {
            stage: "input generation".into(),
            detail: format!("{} attempts produced no usable input", generation.attempts),
        });
    }
    let inputs: Vec<&str> = generation.entries.iter().map(|g| g.input.as_str()).collect();
    let annotations = annotate_aligned(engine, task, &inputs, params, backend).await?;
    Ok(RawGenerations {
        generation,
        annotations,
    })
}

struct Indexed<'a> {
    index: usize,
    text: &'a str,
}

impl AsRef<str> for Indexed<'_> {
    fn as_ref(&self) -> &str {
        self.text
    }
}

/// Re-applies the filters of `variant` to shared raw generations. A variant
/// may legitimately end up empty; that is reported, not raised.
pub fn apply_ablation(
    task: &TaskSpec,
    params: &SynthesisParams,
    raw: &RawGenerations,
    base: &FilterConfig,
    variant: AblationConfig,
) -> Result<AblationVariantRun> {
    let config = variant.apply(base);
    config.validate()?;
    let stats = compute_length_stats(&task.demonstrations)?;
    let candidates = raw
        .generation
        .entries
        .iter()
        .enumerate()
        .map(|(index, g)| Indexed { index, text: &g.input })
        .collect();
    let input_stage = filter_inputs(candidates, &stats, &config);
    let post_input_filter = input_stage.kept.len();

    let (indices, pairs): (Vec<usize>, Vec<Example>) = input_stage
        .kept
        .iter()
        .filter_map(|c| raw.annotations[c.index].clone().map(|e| (c.index, e)))
        .unzip();
    // filter_pairs preserves order, so kept examples can be matched back to
    // indices by walking both sequences.
    let pair_stage = filter_pairs(pairs.clone(), &stats, &config, task.labels());
    let mut kept_indices = Vec::with_capacity(pair_stage.kept.len());
    let mut cursor = 0;
    for kept in &pair_stage.kept {
        while pairs[cursor] != *kept {
            cursor += 1;
        }
        kept_indices.push(indices[cursor]);
        cursor += 1;
    }

    Ok(AblationVariantRun {
        variant,
        dataset: SyntheticDataset {
            task_id: task.id.clone(),
            created_counts: CreatedCounts {
                raw_inputs: raw.generation.entries.len(),
                post_input_filter,
                post_pair_filter: pair_stage.kept.len(),
            },
            examples: pair_stage.kept,
            params: params.clone(),
        },
        kept_indices,
        raw_digest: raw.digest(),
    })
}

/// One generation pass, then every requested filter variant over it.
pub async fn run_filter_ablation(
    engine: &PromptEngine,
    task: &TaskSpec,
    params: &SynthesisParams,
    backend: &dyn Backend,
    base: &FilterConfig,
    variants: &[AblationConfig],
) -> Result<AblationRun> {
    if variants.is_empty() {
        return Err(Error::argument("no ablation variants requested"));
    }
    let raw = generate_raw(engine, task, params, backend).await?;
    let variants = variants
        .iter()
        .map(|&v| apply_ablation(task, params, &raw, base, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRun { raw, variants })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub task_id: String,
    /// Percent score per conjunction, in sweep order.
    pub scores: Vec<(ConjunctionVariant, f64)>,
    pub diff: f64,
}

/// Spread of one row's percent scores: max minus min, one decimal.
pub fn sensitivity_diff(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::argument("a sensitivity comparison needs at least two variants"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(round1(max - min))
}

impl SensitivityRow {
    pub fn from_scores(task_id: impl Into<String>, scores: Vec<(ConjunctionVariant, f64)>) -> Result<Self> {
        let values: Vec<f64> = scores.iter().map(|(_, s)| round1(*s)).collect();
        let diff = sensitivity_diff(&values)?;
        Ok(SensitivityRow {
            task_id: task_id.into(),
            scores: scores.into_iter().map(|(v, s)| (v, round1(s))).collect(),
            diff,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySweep {
    pub row: SensitivityRow,
    pub results: Vec<(ConjunctionVariant, EvalResult)>,
    /// Calls that failed and were scored as empty predictions.
    pub failed_calls: usize,
}

/// Settings for direct prediction calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionSettings {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        PredictionSettings {
            temperature: 0.0,
            max_new_tokens: 128,
            seed: 0,
        }
    }
}

pub(crate) fn prediction_request(prompt: String, settings: &PredictionSettings, index: usize) -> GenerationRequest {
    GenerationRequest::new(prompt, settings.temperature, settings.max_new_tokens)
        .with_stop(ANNOTATION_STOP)
        .with_seed(settings.seed.wrapping_add(index as u64))
}

/// Sends prompts in one batch; failed calls become empty predictions.
pub async fn predict(
    backend: &dyn Backend,
    prompts: Vec<String>,
    settings: &PredictionSettings,
) -> (Vec<String>, usize) {
    let requests: Vec<GenerationRequest> = prompts
        .into_iter()
        .enumerate()
        .map(|(i, p)| prediction_request(p, settings, i))
        .collect();
    let responses = backend.batch_generate(&requests).await;
    let failed = responses.iter().filter(|r| r.is_error()).count();
    (
        responses.into_iter().map(|r| r.text.trim().to_string()).collect(),
        failed,
    )
}

/// Scores the same instances once per conjunction variant.
pub async fn prompt_sensitivity_sweep(
    engine: &PromptEngine,
    task: &TaskSpec,
    backend: &dyn Backend,
    variants: &[ConjunctionVariant],
    instances: &[Instance],
    settings: &PredictionSettings,
) -> Result<SensitivitySweep> {
    if variants.len() < 2 {
        return Err(Error::argument("a sensitivity sweep needs at least two variants"));
    }
    if instances.is_empty() {
        return Err(Error::argument("no evaluation instances"));
    }
    let golds: Vec<Vec<String>> = instances.iter().map(|i| i.outputs.clone()).collect();
    let mut results = Vec::with_capacity(variants.len());
    let mut failed_calls = 0;
    for &variant in variants {
        let prompts = instances
            .iter()
            .map(|i| engine.render_annotation_prompt(task, &i.input, variant))
            .collect::<Result<Vec<_>>>()?;
        let (predictions, failed) = predict(backend, prompts, settings).await;
        failed_calls += failed;
        results.push((variant, evaluate_task_multi(task, &predictions, &golds)?));
    }
    let row = SensitivityRow::from_scores(
        task.id.clone(),
        results.iter().map(|(v, r)| (*v, r.aggregate * 100.0)).collect(),
    )?;
    Ok(SensitivitySweep {
        row,
        results,
        failed_calls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemDistribution {
    pub accuracy: f64,
    pub l1: f64,
    pub irrelevant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub task_id: String,
    pub baseline: SystemDistribution,
    pub self_guide: SystemDistribution,
}

fn system_distribution(
    task: &TaskSpec,
    labels: &[String],
    outputs: &[String],
    golds: &[String],
) -> Result<SystemDistribution> {
    let gold_distribution = label_distribution(golds, labels)?;
    let distribution = label_distribution(outputs, labels)?;
    Ok(SystemDistribution {
        accuracy: evaluate_task(task, outputs, golds)?.aggregate,
        l1: l1_distance(&distribution, &gold_distribution)?,
        irrelevant: irrelevant_ratio(&distribution),
    })
}

/// Accuracy, L1 distance to the gold label distribution, and irrelevant
/// ratio for a baseline and a tuned system on the same instances.
pub fn distribution_report(
    task: &TaskSpec,
    baseline_outputs: &[String],
    selfguide_outputs: &[String],
    gold_outputs: &[String],
) -> Result<DistributionRow> {
    let labels = task
        .labels()
        .ok_or_else(|| Error::argument("distribution reports need a classification task"))?;
    if baseline_outputs.len() != gold_outputs.len() || selfguide_outputs.len() != gold_outputs.len() {
        return Err(Error::argument(format!(
            "output counts differ: baseline {}, self-guide {}, gold {}",
            baseline_outputs.len(),
            selfguide_outputs.len(),
            gold_outputs.len()
        )));
    }
    Ok(DistributionRow {
        task_id: task.id.clone(),
        baseline: system_distribution(task, labels, baseline_outputs, gold_outputs)?,
        self_guide: system_distribution(task, labels, selfguide_outputs, gold_outputs)?,
    })
}
