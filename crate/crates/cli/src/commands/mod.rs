pub mod ablate;
pub mod evaluate;
pub mod report;
pub mod synthesize;
pub mod tune;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _, Result};

use selfsynth::backend::{Backend, HttpBackend, MockBackend, MockScript};
use selfsynth::manifest::RunManifest;
use selfsynth::prompt::PromptEngine;
use selfsynth::task::{validate_task, Instance, Niv2Task, TaskSpec};

use crate::config::{BackendKind, Overrides, RunConfig};

pub struct LoadedTask {
    pub spec: TaskSpec,
    pub instances: Vec<Instance>,
}

impl LoadedTask {
    pub fn category(&self) -> &'static str {
        if self.spec.kind.is_classification() {
            "classification"
        } else {
            "generation"
        }
    }
}

pub struct Context {
    config: Option<RunConfig>,
    overrides: Overrides,
}

impl Context {
    pub fn new(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let config = path.map(|p| RunConfig::load(p, overrides)).transpose()?;
        Ok(Context {
            config,
            overrides: overrides.clone(),
        })
    }

    pub fn overrides(&self) -> &Overrides {
        &self.overrides
    }

    pub fn config(&self) -> Result<&RunConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| anyhow!(selfsynth::Error::argument("this command needs --config")))
    }

    pub fn output_root(&self) -> Option<PathBuf> {
        match (&self.overrides.output_dir, &self.config) {
            (_, Some(config)) => Some(config.output_root()),
            (Some(dir), None) => Some(dir.clone()),
            (None, None) => None,
        }
    }

    pub fn engine(&self) -> Result<PromptEngine> {
        let config = self.config()?;
        match &config.templates_dir {
            Some(dir) => Ok(PromptEngine::from_dir(&config.resolve(dir))?),
            None => Ok(PromptEngine::default()),
        }
    }

    pub fn backend(&self) -> Result<Arc<dyn Backend>> {
        let config = self.config()?;
        let section = &config.backend;
        Ok(match section.kind {
            BackendKind::Mock => {
                let mock = match &section.mock_script {
                    Some(path) => MockBackend::from_script(MockScript::load(&config.resolve(path))?),
                    None => MockBackend::simulated(),
                };
                Arc::new(mock.with_max_parallel(section.max_parallel_requests))
            }
            BackendKind::Http => Arc::new(HttpBackend::new(section.http_config()?)?),
        })
    }

    /// Configured tasks, optionally narrowed to one id.
    pub fn tasks(&self, only: Option<&str>) -> Result<Vec<LoadedTask>> {
        let config = self.config()?;
        if config.task_paths.is_empty() {
            bail!(selfsynth::Error::Validation("task_paths is empty".into()));
        }
        let mut tasks = Vec::new();
        for raw in &config.task_paths {
            let task = load_task(&config.resolve(raw), config)?;
            if only.is_none_or(|id| id == task.spec.id) {
                tasks.push(task);
            }
        }
        if tasks.is_empty() {
            bail!(selfsynth::Error::argument(format!(
                "no configured task has id {}",
                only.unwrap_or_default()
            )));
        }
        Ok(tasks)
    }

    pub fn task(&self, id: Option<&str>) -> Result<LoadedTask> {
        let mut tasks = self.tasks(id)?;
        if tasks.len() > 1 {
            bail!(selfsynth::Error::argument(
                "several tasks are configured; pick one with --task"
            ));
        }
        Ok(tasks.remove(0))
    }
}

/// Reads a NIv2 task file, or a plain task specification without instances.
pub fn load_task(path: &Path, config: &RunConfig) -> Result<LoadedTask> {
    let text = fs::read_to_string(path).map_err(|e| selfsynth::Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
    let loaded = if value.get("Definition").is_some() {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".into());
        let niv2 = Niv2Task::parse(&id, &text, &path.display().to_string(), &config.loader)?;
        LoadedTask {
            spec: niv2.spec,
            instances: niv2.instances,
        }
    } else {
        LoadedTask {
            spec: TaskSpec::from_json(&text)?,
            instances: Vec::new(),
        }
    };
    let report = validate_task(&loaded.spec);
    if !report.is_empty() {
        bail!(selfsynth::Error::Validation(format!("{}: {report}", path.display())));
    }
    Ok(loaded)
}

/// Output files of one command run and the manifest describing them.
pub struct Outputs {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Outputs {
    pub fn create(config: &RunConfig, engine: &PromptEngine, command: &str, seed: u64) -> Result<Self> {
        let dir = config.output_root().join(command);
        fs::create_dir_all(&dir).map_err(|e| selfsynth::Error::io(&dir, e))?;
        let manifest = RunManifest::new(command, seed, engine, config.snapshot()?);
        Ok(Outputs { dir, manifest })
    }

    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| selfsynth::Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| selfsynth::Error::io(&path, e))?;
        self.manifest.record_artifact(relative, bytes);
        Ok(path)
    }

    pub fn write_json(&mut self, relative: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    /// Seals and writes `manifest.json`; returns the manifest hash.
    pub fn finish(mut self) -> Result<String> {
        let hash = self.manifest.seal()?;
        self.manifest.write(&self.dir.join("manifest.json"))?;
        Ok(hash)
    }
}

pub fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Predictions, one per line: a JSON string or an object with `prediction`.
pub fn read_predictions(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| selfsynth::Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let parse_error = |message: String| selfsynth::Error::Parse {
                origin: path.display().to_string(),
                field: format!("line {}", i + 1),
                message,
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_error(e.to_string()))?;
            match value {
                serde_json::Value::String(s) => Ok(s),
                serde_json::Value::Object(map) => match map.get("prediction") {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    _ => Err(parse_error("expected a string field `prediction`".into()).into()),
                },
                _ => Err(parse_error("expected a JSON string or object".into()).into()),
            }
        })
        .collect()
}

/// Evaluation instances after the configured cap.
pub fn eval_instances<'a>(task: &'a LoadedTask, config: &RunConfig) -> Result<&'a [Instance]> {
    if task.instances.is_empty() {
        bail!(selfsynth::Error::argument(format!(
            "task {} has no evaluation instances",
            task.spec.id
        )));
    }
    let n = config
        .evaluation
        .max_instances
        .map_or(task.instances.len(), |m| m.min(task.instances.len()));
    Ok(&task.instances[..n])
}

pub fn default_dataset_path(config: &RunConfig, task_id: &str) -> PathBuf {
    config
        .output_root()
        .join("synthesize")
        .join(task_id)
        .join("dataset.jsonl")
}
