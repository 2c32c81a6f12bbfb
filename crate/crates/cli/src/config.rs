//! TOML run configuration. Relative paths resolve against the directory of the
//! config file; command-line overrides are applied after parsing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use selfsynth::analysis::{PredictionSettings, CHARS_PER_TOKEN};
use selfsynth::backend::BackendConfig;
use selfsynth::filters::{parse_noise_terms, FilterConfig};
use selfsynth::prompt::ConjunctionVariant;
use selfsynth::synthesis::SynthesisParams;
use selfsynth::task::LoadOptions;
use selfsynth::tuner::ParamSpace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Rules for the mock backend; without one it simulates a model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<String>,
    pub endpoint_url: String,
    pub api_key_env_var: String,
    pub model_name: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel_requests: usize,
    pub initial_backoff_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let http = BackendConfig::default();
        BackendSection {
            kind: BackendKind::default(),
            mock_script: None,
            endpoint_url: http.endpoint_url,
            api_key_env_var: http.api_key_env_var,
            model_name: http.model_name,
            request_timeout_secs: http.request_timeout.as_secs_f64(),
            max_retries: http.max_retries,
            max_parallel_requests: http.max_parallel_requests,
            initial_backoff_ms: http.initial_backoff_ms,
        }
    }
}

impl BackendSection {
    pub fn http_config(&self) -> Result<BackendConfig> {
        Ok(BackendConfig {
            endpoint_url: self.endpoint_url.clone(),
            api_key_env_var: self.api_key_env_var.clone(),
            model_name: self.model_name.clone(),
            request_timeout: Duration::try_from_secs_f64(self.request_timeout_secs)
                .context("backend.request_timeout_secs")?,
            max_retries: self.max_retries,
            max_parallel_requests: self.max_parallel_requests,
            initial_backoff_ms: self.initial_backoff_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Evaluate at most this many instances per task, in file order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_instances: Option<usize>,
    pub prompt_variant: ConjunctionVariant,
    /// Self-ICL context window in tokens, converted with `chars_per_token`.
    pub context_budget_tokens: usize,
    pub chars_per_token: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            temperature: 0.0,
            max_new_tokens: 128,
            seed: 0,
            max_instances: None,
            prompt_variant: ConjunctionVariant::default(),
            context_budget_tokens: 4096,
            chars_per_token: CHARS_PER_TOKEN,
        }
    }
}

impl EvaluationSection {
    pub fn prediction_settings(&self) -> PredictionSettings {
        PredictionSettings {
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<ParamSpace>,
    /// In-context baseline score per task id, in percent.
    pub baseline_scores: BTreeMap<String, f64>,
    /// Tune on a seeded half of each task category and hold out the rest.
    pub split_heldout: bool,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            trials: 20,
            seed: 0,
            space: None,
            baseline_scores: BTreeMap::new(),
            split_heldout: true,
        }
    }
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task_paths: Vec<String>,
    /// Artifacts land here; left out of manifests so runs compare byte-for-byte.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<String>,
    /// Replaces `filters.noise_terms` with the terms in this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_terms_file: Option<String>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub params: SynthesisParams,
    #[serde(default)]
    pub filters: FilterConfig,
    #[serde(default)]
    pub loader: LoadOptions,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task_paths: Vec::new(),
            output_dir: default_output_dir(),
            templates_dir: None,
            noise_terms_file: None,
            backend: BackendSection::default(),
            params: SynthesisParams::default(),
            filters: FilterConfig::default(),
            loader: LoadOptions::default(),
            evaluation: EvaluationSection::default(),
            tune: TuneSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Flags that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub input_temperature: Option<f64>,
    #[arg(long, global = true)]
    pub output_temperature: Option<f64>,
    #[arg(long, global = true)]
    pub n_raw_inputs: Option<usize>,
    #[arg(long, global = true)]
    pub repo_sample_size: Option<usize>,
    /// RNG seed for synthesis.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub max_parallel_requests: Option<usize>,
}

impl RunConfig {
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let deserializer = toml::Deserializer::parse(text).with_context(|| format!("{origin}: invalid TOML"))?;
        let config: RunConfig = serde_path_to_error::deserialize(deserializer).map_err(|e| {
            let path = e.path().to_string();
            anyhow::Error::new(selfsynth::Error::Parse {
                origin: origin.to_string(),
                field: path,
                message: e.into_inner().message().trim().to_string(),
            })
        })?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| selfsynth::Error::io(path, e))?;
        let mut config = Self::parse_str(&text, &path.display().to_string())?;
        config.base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        config.apply(overrides);
        config.finish()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.input_temperature {
            self.params.input_temperature = v;
        }
        if let Some(v) = o.output_temperature {
            self.params.output_temperature = v;
        }
        if let Some(v) = o.n_raw_inputs {
            self.params.n_raw_inputs = v;
        }
        if let Some(v) = o.repo_sample_size {
            self.params.repo_sample_size = v;
        }
        if let Some(v) = o.seed {
            self.params.rng_seed = v;
        }
        if let Some(v) = &o.output_dir {
            // The flag is relative to the working directory, not the config file.
            let dir = std::path::absolute(v).unwrap_or_else(|_| v.clone());
            self.output_dir = dir.display().to_string();
        }
        if let Some(v) = o.backend {
            self.backend.kind = v;
        }
        if let Some(v) = o.max_parallel_requests {
            self.backend.max_parallel_requests = v;
        }
    }

    /// Loads referenced files and checks every section.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(file) = &self.noise_terms_file {
            let path = self.resolve(file);
            let text = fs::read_to_string(&path).map_err(|e| selfsynth::Error::io(&path, e))?;
            self.filters.noise_terms = parse_noise_terms(&text);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for raw in &self.task_paths {
            let path = self.resolve(raw);
            if !path.is_file() {
                bail!(selfsynth::Error::Validation(format!(
                    "task file {} not found",
                    path.display()
                )));
            }
        }
        for (name, raw) in [
            ("templates_dir", &self.templates_dir),
            ("backend.mock_script", &self.backend.mock_script),
        ] {
            if let Some(raw) = raw {
                if !self.resolve(raw).exists() {
                    bail!(selfsynth::Error::Validation(format!("{name} {raw} not found")));
                }
            }
        }
        if self.backend.max_parallel_requests == 0 {
            bail!(selfsynth::Error::Validation(
                "backend.max_parallel_requests must be at least 1".into()
            ));
        }
        if self.evaluation.chars_per_token.is_nan() || self.evaluation.chars_per_token <= 0.0 {
            bail!(selfsynth::Error::Validation(
                "evaluation.chars_per_token must be positive".into()
            ));
        }
        self.params.validate()?;
        self.filters.validate()?;
        if let Some(space) = &self.tune.space {
            space.validate()?;
        }
        Ok(())
    }

    pub fn resolve(&self, raw: &str) -> PathBuf {
        let path = Path::new(raw);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Effective configuration as recorded in manifests.
    pub fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let config = RunConfig::parse_str(
            "task_paths = [\"t.json\"]\n[backend]\nendpoint_url = \"http://h/v1\"\n",
            "inline",
        )
        .unwrap();
        assert_eq!(config.backend.endpoint_url, "http://h/v1");
        assert_eq!(config.params, SynthesisParams::default());
        assert_eq!(config.backend.max_retries, 3);
        assert_eq!(config.output_dir, "out");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse_str("[params]\ntemprature = 0.5\n", "inline").unwrap_err();
        let text = format!("{err:#}");
        assert!(text.contains("temprature"), "{text}");
        assert!(text.contains("params"), "{text}");
    }

    #[test]
    fn type_mismatch_has_field_path() {
        let err = RunConfig::parse_str("[params]\nn_raw_inputs = \"many\"\n", "inline").unwrap_err();
        assert!(format!("{err:#}").contains("params.n_raw_inputs"), "{err:#}");
    }

    #[test]
    fn flags_override_file_values() {
        let mut config = RunConfig::parse_str("[params]\ninput_temperature = 1.0\n", "inline").unwrap();
        config.apply(&Overrides {
            input_temperature: Some(0.8),
            seed: Some(11),
            ..Default::default()
        });
        assert_eq!(config.params.input_temperature, 0.8);
        assert_eq!(config.params.rng_seed, 11);
    }

    #[test]
    fn snapshot_leaves_out_output_dir() {
        let config = RunConfig::default();
        let snap = config.snapshot().unwrap();
        assert!(snap.get("output_dir").is_none());
        assert!(snap.get("params").is_some());
    }

    #[test]
    fn tune_space_parses_ranges_and_choices() {
        let config = RunConfig::parse_str(
            "[tune.space]\ninput_temperature = { low = 0.5, high = 1.0 }\noutput_temperature = [0.0]\n\
             n_raw_inputs_choices = [50, 100]\nrepo_sample_size_choices = [3]\n",
            "inline",
        )
        .unwrap();
        let space = config.tune.space.unwrap();
        assert_eq!(space.output_temperature.points(), Some(vec![0.0]));
        assert!(space.input_temperature.points().is_none());
    }
}
