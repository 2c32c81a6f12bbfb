//! Exact Match, ROUGE-L, label distributions and task-level evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{TaskKind, TaskSpec};

/// Key used for outputs that map to no label.
pub const IRRELEVANT: &str = "IRRELEVANT";

/// Output normalization shared by Exact Match and label matching: trim, then casefold.
pub fn normalize(text: &str) -> String {
    text.trim().to_lowercase()
}

/// ROUGE tokens: casefolded maximal runs of alphanumeric characters.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Longest common subsequence length. O(|a|·|b|) time, O(min(|a|,|b|)) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// ROUGE-L F1 between a candidate and a reference.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&rouge_tokens(candidate), &rouge_tokens(reference))
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_length(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize(prediction) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

/// Rounds half away from zero to one decimal. The nudge absorbs binary
/// representation error so that e.g. a mean of exactly 41.55 prints as 41.6.
pub fn round1(value: f64) -> f64 {
    let scaled = value * 10.0;
    (scaled + scaled.signum() * 1e-9).round() / 10.0
}

pub fn format_percent(value: f64) -> String {
    format!("{:.1}", round1(value))
}

/// Probability mass over a task's labels plus the irrelevant bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    /// Keyed by normalized label, with [`IRRELEVANT`] always present.
    pub mass: BTreeMap<String, f64>,
}

impl LabelDistribution {
    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn get(&self, label: &str) -> f64 {
        self.mass.get(&normalize(label)).copied().unwrap_or(0.0)
    }

    pub fn irrelevant(&self) -> f64 {
        self.mass.get(IRRELEVANT).copied().unwrap_or(0.0)
    }
}

/// Maps each output to the label it normalizes to, otherwise to [`IRRELEVANT`].
pub fn label_distribution(outputs: &[impl AsRef<str>], labels: &[String]) -> Result<LabelDistribution> {
    if labels.is_empty() {
        return Err(Error::argument("label set is empty"));
    }
    if outputs.is_empty() {
        return Err(Error::argument("no outputs to summarize"));
    }
    let mut counts: BTreeMap<String, usize> = labels.iter().map(|l| (normalize(l), 0)).collect();
    if counts.contains_key(IRRELEVANT) {
        return Err(Error::argument(format!(
            "label collides with reserved key {IRRELEVANT}"
        )));
    }
    counts.insert(IRRELEVANT.to_string(), 0);
    for output in outputs {
        let key = normalize(output.as_ref());
        match counts.get_mut(&key) {
            Some(n) if key != IRRELEVANT => *n += 1,
            _ => *counts.get_mut(IRRELEVANT).unwrap() += 1,
        }
    }
    let n = outputs.len() as f64;
    Ok(LabelDistribution {
        mass: counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
    })
}

pub fn l1_distance(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if !p.mass.keys().eq(q.mass.keys()) {
        return Err(Error::argument("distributions have different key sets"));
    }
    Ok(p.mass.values().zip(q.mass.values()).map(|(a, b)| (a - b).abs()).sum())
}

pub fn irrelevant_ratio(distribution: &LabelDistribution) -> f64 {
    distribution.irrelevant()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ExactMatch,
    RougeL,
}

impl MetricKind {
    pub fn for_task(kind: &TaskKind) -> Self {
        match kind {
            TaskKind::Classification { .. } => MetricKind::ExactMatch,
            TaskKind::Generation => MetricKind::RougeL,
        }
    }

    pub fn score(self, prediction: &str, gold: &str) -> f64 {
        match self {
            MetricKind::ExactMatch => exact_match(prediction, gold),
            MetricKind::RougeL => rouge_l(prediction, gold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task_id: String,
    pub metric_kind: MetricKind,
    pub per_instance_scores: Vec<f64>,
    /// Arithmetic mean of `per_instance_scores`, in [0, 1].
    pub aggregate: f64,
}

impl EvalResult {
    pub fn from_scores(task_id: impl Into<String>, metric_kind: MetricKind, scores: Vec<f64>) -> Self {
        let aggregate = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        EvalResult {
            task_id: task_id.into(),
            metric_kind,
            per_instance_scores: scores,
            aggregate,
        }
    }

    /// Aggregate in percent, rounded to one decimal.
    pub fn percent(&self) -> f64 {
        round1(self.aggregate * 100.0)
    }

    pub fn report(&self, include_per_instance: bool) -> EvalReport {
        EvalReport {
            task_id: self.task_id.clone(),
            metric: self.metric_kind,
            aggregate: self.percent(),
            n: self.per_instance_scores.len(),
            per_instance: include_per_instance.then(|| self.per_instance_scores.clone()),
        }
    }
}

/// Serialized evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub metric: MetricKind,
    pub aggregate: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_instance: Option<Vec<f64>>,
}

pub fn evaluate_task(
    task: &TaskSpec,
    predictions: &[impl AsRef<str>],
    golds: &[impl AsRef<str>],
) -> Result<EvalResult> {
    if predictions.len() != golds.len() {
        return Err(Error::argument(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::argument("nothing to evaluate"));
    }
    let metric = MetricKind::for_task(&task.kind);
    let scores = predictions
        .iter()
        .zip(golds)
        .map(|(p, g)| metric.score(p.as_ref(), g.as_ref()))
        .collect();
    Ok(EvalResult::from_scores(task.id.clone(), metric, scores))
}

/// Like [`evaluate_task`] with several acceptable references per instance;
/// each instance scores its best reference.
pub fn evaluate_task_multi(
    task: &TaskSpec,
    predictions: &[impl AsRef<str>],
    golds: &[Vec<String>],
) -> Result<EvalResult> {
    if predictions.len() != golds.len() {
        return Err(Error::argument(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::argument("nothing to evaluate"));
    }
    let metric = MetricKind::for_task(&task.kind);
    let scores = predictions
        .iter()
        .zip(golds)
        .map(|(p, refs)| refs.iter().map(|g| metric.score(p.as_ref(), g)).fold(0.0, f64::max))
        .collect();
    Ok(EvalResult::from_scores(task.id.clone(), metric, scores))
}
