//! Random search over synthesis hyperparameters, scoring each point by its
//! worst per-task improvement over the in-context baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::synthesis::SynthesisParams;
use crate::task::TaskSpec;

/// A real-valued search dimension: a closed interval sampled uniformly, or an
/// explicit list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RealDim {
    // Listed first: untagged parsing would otherwise read `[a, b]` as a range.
    Choices(Vec<f64>),
    Range { low: f64, high: f64 },
}

impl RealDim {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            RealDim::Range { low, high } if low.is_finite() && high.is_finite() && low <= high => Ok(()),
            RealDim::Range { low, high } => Err(Error::Validation(format!("{name}: empty interval [{low}, {high}]"))),
            RealDim::Choices(v) if v.is_empty() => Err(Error::Validation(format!("{name}: no choices"))),
            RealDim::Choices(v) if v.iter().any(|x| !x.is_finite()) => {
                Err(Error::Validation(format!("{name}: non-finite choice")))
            }
            RealDim::Choices(_) => Ok(()),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            RealDim::Range { low, .. } => *low,
            RealDim::Choices(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            RealDim::Range { high, .. } => *high,
            RealDim::Choices(v) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// The finite value set, if there is one. A degenerate interval counts as one point.
    pub fn points(&self) -> Option<Vec<f64>> {
        match self {
            RealDim::Range { low, high } if low == high => Some(vec![*low]),
            RealDim::Range { .. } => None,
            RealDim::Choices(v) => Some(v.clone()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RealDim::Range { low, high } if low == high => *low,
            RealDim::Range { low, high } => rng.random_range(*low..=*high),
            RealDim::Choices(v) => v[rng.random_range(0..v.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpace {
    pub input_temperature: RealDim,
    pub output_temperature: RealDim,
    pub n_raw_inputs_choices: Vec<usize>,
    pub repo_sample_size_choices: Vec<usize>,
}

impl ParamSpace {
    pub fn validate(&self) -> Result<()> {
        self.input_temperature.validate("input_temperature")?;
        self.output_temperature.validate("output_temperature")?;
        if self.n_raw_inputs_choices.is_empty() || self.n_raw_inputs_choices.contains(&0) {
            return Err(Error::Validation(
                "n_raw_inputs_choices must be non-empty and positive".into(),
            ));
        }
        if self.repo_sample_size_choices.is_empty() {
            return Err(Error::Validation("repo_sample_size_choices must be non-empty".into()));
        }
        if self.output_temperature.min() < 0.0 {
            return Err(Error::Validation("temperatures must be non-negative".into()));
        }
        // Every drawn point must keep inputs at least as hot as outputs.
        if self.input_temperature.min() < self.output_temperature.max() {
            return Err(Error::Validation(format!(
                "input_temperature lower bound {} is below output_temperature upper bound {}",
                self.input_temperature.min(),
                self.output_temperature.max()
            )));
        }
        Ok(())
    }

    /// All points of a fully discrete space, in lexicographic dimension order.
    pub fn enumerate(&self, base: &SynthesisParams) -> Option<Vec<SynthesisParams>> {
        let inputs = self.input_temperature.points()?;
        let outputs = self.output_temperature.points()?;
        let mut all = Vec::new();
        for &input_temperature in &inputs {
            for &output_temperature in &outputs {
                for &n_raw_inputs in &self.n_raw_inputs_choices {
                    for &repo_sample_size in &self.repo_sample_size_choices {
                        all.push(SynthesisParams {
                            input_temperature,
                            output_temperature,
                            n_raw_inputs,
                            repo_sample_size,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Some(all)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, base: &SynthesisParams) -> SynthesisParams {
        SynthesisParams {
            input_temperature: self.input_temperature.sample(rng),
            output_temperature: self.output_temperature.sample(rng),
            n_raw_inputs: self.n_raw_inputs_choices[rng.random_range(0..self.n_raw_inputs_choices.len())],
            repo_sample_size: self.repo_sample_size_choices[rng.random_range(0..self.repo_sample_size_choices.len())],
            ..base.clone()
        }
    }
}

fn serialize_score<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("inf")
    }
}

fn serialize_scores<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    struct Score(f64);
    impl Serialize for Score {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            serialize_score(&self.0, s)
        }
    }
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(k, &Score(*v))?;
    }
    map.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: SynthesisParams,
    /// Score minus baseline per task; `-inf` where evaluation failed.
    #[serde(serialize_with = "serialize_scores")]
    pub per_task_delta: BTreeMap<String, f64>,
    #[serde(serialize_with = "serialize_score")]
    pub objective: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, String>,
}

/// Worst-task improvement.
pub fn objective(per_task_delta: &BTreeMap<String, f64>) -> Result<f64> {
    if per_task_delta.is_empty() {
        return Err(Error::argument("objective over an empty task set"));
    }
    Ok(per_task_delta.values().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Index of the maximal objective, earliest trial on ties.
pub fn select_best(trials: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if t.objective > trials[b].objective => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Draws `trials` points and scores each on every task.
///
/// A fully discrete space is visited as a seeded permutation first, so
/// `trials >= size` covers every point; further trials draw uniformly.
/// Continuous spaces are always drawn uniformly.
pub fn random_search<F>(
    tasks: &[TaskSpec],
    baseline_scores: &BTreeMap<String, f64>,
    space: &ParamSpace,
    base: &SynthesisParams,
    trials: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&SynthesisParams, &TaskSpec) -> std::result::Result<f64, String>,
{
    if trials == 0 {
        return Err(Error::argument("trials must be at least 1"));
    }
    if tasks.is_empty() {
        return Err(Error::argument("no tasks to tune on"));
    }
    space.validate()?;
    if let Some(missing) = tasks.iter().find(|t| !baseline_scores.contains_key(&t.id)) {
        return Err(Error::argument(format!("no baseline score for task {}", missing.id)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planned = space.enumerate(base).unwrap_or_default();
    planned.shuffle(&mut rng);
    planned.truncate(trials);
    while planned.len() < trials {
        planned.push(space.sample(&mut rng, base));
    }

    let mut records = Vec::with_capacity(trials);
    for (trial, params) in planned.into_iter().enumerate() {
        let mut per_task_delta = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for task in tasks {
            let delta = match evaluate(&params, task) {
                Ok(score) if score.is_finite() => score - baseline_scores[&task.id],
                Ok(score) => {
                    failures.insert(task.id.clone(), format!("non-finite score {score}"));
                    f64::NEG_INFINITY
                }
                Err(e) => {
                    tracing::warn!(trial, task = %task.id, error = %e, "evaluation failed");
                    failures.insert(task.id.clone(), e);
                    f64::NEG_INFINITY
                }
            };
            per_task_delta.insert(task.id.clone(), delta);
        }
        let objective = objective(&per_task_delta)?;
        records.push(TrialRecord {
            trial,
            params,
            per_task_delta,
            objective,
            failures,
        });
    }
    let best = records[select_best(&records).expect("at least one trial")].clone();
    Ok(SearchOutcome { best, trials: records })
}

/// Winning parameters as written for a later synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestParams {
    pub params: SynthesisParams,
    pub trial: usize,
    pub objective: Option<f64>,
    /// Trainer settings passed through untouched.
    #[serde(default)]
    pub trainer: serde_json::Map<String, serde_json::Value>,
}

impl BestParams {
    pub fn from_record(record: &TrialRecord) -> Self {
        BestParams {
            params: record.params.clone(),
            trial: record.trial,
            objective: record.objective.is_finite().then_some(record.objective),
            trainer: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub tune: Vec<String>,
    pub held_out: Vec<String>,
}

/// Seeded halving within each category; odd categories give the extra task to
/// the tuning half so no category goes untuned.
pub fn split_tune_heldout(tasks: &[(String, String)], seed: u64) -> TaskSplit {
    let mut by_category: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, category) in tasks {
        by_category.entry(category).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = TaskSplit {
        tune: Vec::new(),
        held_out: Vec::new(),
    };
    for ids in by_category.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let half = ids.len().div_ceil(2);
        split.tune.extend(ids[..half].iter().map(|s| s.to_string()));
        split.held_out.extend(ids[half..].iter().map(|s| s.to_string()));
    }
    split
}
