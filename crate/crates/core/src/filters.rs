//! Rule-based quality gates: noise-term rejection and the demonstration length band.
//!
//! Lengths are whitespace-token counts. The band for a field is the open
//! interval `(mu - 2*sigma_eff, mu + 2*sigma_eff)` where `sigma_eff` is the
//! population standard deviation over the demonstrations, floored by
//! [`FilterConfig::sigma_floor_fraction`] of the mean and
//! [`FilterConfig::sigma_floor_tokens`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::normalize;
use crate::task::Example;

const DEFAULT_NOISE_TERMS: &str = include_str!("../resources/noise_terms.txt");

/// Parses a noise list: one term per line, blank lines and `#` comments skipped.
pub fn parse_noise_terms(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn default_noise_terms() -> Vec<String> {
    parse_noise_terms(DEFAULT_NOISE_TERMS)
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub noise_terms: Vec<String>,
    pub enable_noise: bool,
    pub enable_length: bool,
    /// Classification pairs whose output matches no label are dropped.
    pub enable_label: bool,
    pub sigma_floor_fraction: f64,
    pub sigma_floor_tokens: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            noise_terms: default_noise_terms(),
            enable_noise: true,
            enable_length: true,
            enable_label: true,
            sigma_floor_fraction: 0.05,
            sigma_floor_tokens: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enable_noise && self.noise_terms.iter().all(|t| t.is_empty()) {
            return Err(Error::Validation("noise filter enabled with an empty term list".into()));
        }
        if self.sigma_floor_fraction < 0.0 || self.sigma_floor_tokens < 0.0 {
            return Err(Error::Validation("sigma floors must be non-negative".into()));
        }
        Ok(())
    }

    pub fn effective_sigma(&self, mu: f64, sigma: f64) -> f64 {
        sigma.max(self.sigma_floor_fraction * mu).max(self.sigma_floor_tokens)
    }

    pub fn band(&self, mu: f64, sigma: f64) -> Band {
        let s = self.effective_sigma(mu, sigma);
        Band {
            low: mu - 2.0 * s,
            high: mu + 2.0 * s,
        }
    }
}

/// Open interval of acceptable token counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn contains(&self, length: usize) -> bool {
        let l = length as f64;
        self.low < l && l < self.high
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2})", self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mu_input: f64,
    pub sigma_input: f64,
    pub mu_output: f64,
    pub sigma_output: f64,
}

impl LengthStats {
    pub fn input_band(&self, config: &FilterConfig) -> Band {
        config.band(self.mu_input, self.sigma_input)
    }

    pub fn output_band(&self, config: &FilterConfig) -> Band {
        config.band(self.mu_output, self.sigma_output)
    }
}

fn mean_and_population_sd(values: &[usize]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn compute_length_stats(demonstrations: &[Example]) -> Result<LengthStats> {
    if demonstrations.is_empty() {
        return Err(Error::argument("length statistics need at least one demonstration"));
    }
    let inputs: Vec<usize> = demonstrations.iter().map(|d| token_count(&d.input)).collect();
    let outputs: Vec<usize> = demonstrations.iter().map(|d| token_count(&d.output)).collect();
    let (mu_input, sigma_input) = mean_and_population_sd(&inputs);
    let (mu_output, sigma_output) = mean_and_population_sd(&outputs);
    Ok(LengthStats {
        mu_input,
        sigma_input,
        mu_output,
        sigma_output,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict<R> {
    Keep,
    Discard(R),
}

impl<R> Verdict<R> {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

/// Discards on the first listed term found as a case-insensitive substring.
pub fn noise_check(text: &str, config: &FilterConfig) -> Verdict<String> {
    if !config.enable_noise {
        return Verdict::Keep;
    }
    let haystack = text.to_lowercase();
    config
        .noise_terms
        .iter()
        .find(|term| !term.is_empty() && haystack.contains(&term.to_lowercase()))
        .map_or(Verdict::Keep, |term| Verdict::Discard(term.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Input,
    Output,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Input => "input",
            Field::Output => "output",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    InputOnly,
    Both,
}

/// What a length check looks at: an input alone or an input-output pair.
#[derive(Debug, Clone, Copy)]
pub struct LengthSubject<'a> {
    pub input: &'a str,
    pub output: Option<&'a str>,
}

impl<'a> From<&'a str> for LengthSubject<'a> {
    fn from(input: &'a str) -> Self {
        LengthSubject { input, output: None }
    }
}

impl<'a> From<&'a Example> for LengthSubject<'a> {
    fn from(example: &'a Example) -> Self {
        LengthSubject {
            input: &example.input,
            output: Some(&example.output),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthViolation {
    pub field: Field,
    pub length: usize,
    pub band: Band,
}

pub fn length_check<'a>(
    subject: impl Into<LengthSubject<'a>>,
    stats: &LengthStats,
    config: &FilterConfig,
    side: Side,
) -> Verdict<LengthViolation> {
    if !config.enable_length {
        return Verdict::Keep;
    }
    let subject = subject.into();
    let mut fields = vec![(Field::Input, subject.input, stats.input_band(config))];
    if side == Side::Both {
        if let Some(output) = subject.output {
            fields.push((Field::Output, output, stats.output_band(config)));
        }
    }
    for (field, text, band) in fields {
        let length = token_count(text);
        if !band.contains(length) {
            return Verdict::Discard(LengthViolation { field, length, band });
        }
    }
    Verdict::Keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "filter", rename_all = "snake_case")]
pub enum RejectReason {
    Noise { field: Field, term: String },
    Length(LengthViolation),
    Label { output: String },
}

impl RejectReason {
    /// Short filter name used in stage reports.
    pub fn filter_name(&self) -> &'static str {
        match self {
            RejectReason::Noise { .. } => "noise",
            RejectReason::Length(_) => "length",
            RejectReason::Label { .. } => "label",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Noise { field, term } => write!(f, "noise term {term:?} in {field}"),
            RejectReason::Length(v) => write!(f, "{} length {} outside {}", v.field, v.length, v.band),
            RejectReason::Label { output } => write!(f, "output {output:?} is not a label"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection<T> {
    pub item: T,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T> {
    pub kept: Vec<T>,
    pub rejected: Vec<Rejection<T>>,
}

impl<T> FilterOutcome<T> {
    fn with_capacity(n: usize) -> Self {
        FilterOutcome {
            kept: Vec::with_capacity(n),
            rejected: Vec::new(),
        }
    }

    fn route(&mut self, item: T, reason: Option<RejectReason>) {
        match reason {
            None => self.kept.push(item),
            Some(reason) => self.rejected.push(Rejection { item, reason }),
        }
    }

    /// Name of the filter that rejected the most items, noise first on ties.
    pub fn dominant_filter(&self) -> Option<&'static str> {
        ["noise", "length", "label"]
            .into_iter()
            .map(|name| {
                let n = self.rejected.iter().filter(|r| r.reason.filter_name() == name).count();
                (name, n)
            })
            .filter(|&(_, n)| n > 0)
            .fold(None, |best: Option<(&'static str, usize)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(name, _)| name)
    }
}

fn noise_reason(field: Field, text: &str, config: &FilterConfig) -> Option<RejectReason> {
    match noise_check(text, config) {
        Verdict::Keep => None,
        Verdict::Discard(term) => Some(RejectReason::Noise { field, term }),
    }
}

fn length_reason<'a>(
    subject: impl Into<LengthSubject<'a>>,
    stats: &LengthStats,
    config: &FilterConfig,
    side: Side,
) -> Option<RejectReason> {
    match length_check(subject, stats, config, side) {
        Verdict::Keep => None,
        Verdict::Discard(v) => Some(RejectReason::Length(v)),
    }
}

/// Input-stage gate: noise on the input, then its length band.
pub fn filter_inputs<T: AsRef<str>>(inputs: Vec<T>, stats: &LengthStats, config: &FilterConfig) -> FilterOutcome<T> {
    let mut outcome = FilterOutcome::with_capacity(inputs.len());
    for item in inputs {
        let text = item.as_ref();
        let reason =
            noise_reason(Field::Input, text, config).or_else(|| length_reason(text, stats, config, Side::InputOnly));
        outcome.route(item, reason);
    }
    outcome
}

/// Pair-stage gate: noise in either field, both length bands, and for
/// classification (`labels` given) membership of the output in the label set.
pub fn filter_pairs(
    examples: Vec<Example>,
    stats: &LengthStats,
    config: &FilterConfig,
    labels: Option<&[String]>,
) -> FilterOutcome<Example> {
    let label_keys: Option<Vec<String>> = labels
        .filter(|_| config.enable_label)
        .map(|ls| ls.iter().map(|l| normalize(l)).collect());
    let mut outcome = FilterOutcome::with_capacity(examples.len());
    for example in examples {
        let reason = noise_reason(Field::Input, &example.input, config)
            .or_else(|| noise_reason(Field::Output, &example.output, config))
            .or_else(|| length_reason(&example, stats, config, Side::Both))
            .or_else(|| {
                let keys = label_keys.as_ref()?;
                (!keys.contains(&normalize(&example.output))).then(|| RejectReason::Label {
                    output: example.output.clone(),
                })
            });
        outcome.route(example, reason);
    }
    outcome
}
