use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::{json, Value};

use selfsynth::backend::finetune_records;
use selfsynth::prompt::ConjunctionVariant;
use selfsynth::synthesis::{run_pipeline, SynthesisParams};
use selfsynth::task::{read_examples_jsonl, CreatedCounts, SyntheticDataset};
use selfsynth::tuner::BestParams;

use super::{default_dataset_path, jsonl, Context, Outputs};

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Only this task id.
    #[arg(long)]
    pub task: Option<String>,
    /// Parameters written by `tune` (or a bare parameter object) replacing `[params]`.
    /// Command-line overrides still apply on top.
    #[arg(long)]
    pub params_file: Option<PathBuf>,
}

fn read_params_file(path: &PathBuf) -> Result<SynthesisParams> {
    let text = fs::read_to_string(path).map_err(|e| selfsynth::Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let params = if value.get("params").is_some() {
        serde_json::from_value::<BestParams>(value)?.params
    } else {
        serde_json::from_value::<SynthesisParams>(value)?
    };
    Ok(params)
}

pub async fn synthesize(ctx: &Context, args: &SynthesizeArgs) -> Result<Value> {
    let mut config = ctx.config()?.clone();
    if let Some(path) = &args.params_file {
        config.params = read_params_file(path)?;
        config.apply(ctx.overrides());
        config.validate()?;
    }
    let engine = ctx.engine()?;
    let backend = ctx.backend()?;
    let tasks = ctx.tasks(args.task.as_deref())?;
    let mut outputs = Outputs::create(&config, &engine, "synthesize", config.params.rng_seed)?;

    let mut summary = serde_json::Map::new();
    for task in &tasks {
        let id = &task.spec.id;
        let run = run_pipeline(&engine, &task.spec, &config.params, backend.as_ref(), &config.filters).await?;
        outputs.write(&format!("{id}/dataset.jsonl"), run.dataset.to_jsonl()?.as_bytes())?;
        let rejections = run
            .input_rejections
            .iter()
            .map(|r| json!({"stage": "input", "item": r.item, "reason": r.reason}))
            .chain(
                run.pair_rejections
                    .iter()
                    .map(|r| json!({"stage": "pair", "item": r.item, "reason": r.reason})),
            );
        outputs.write(&format!("{id}/rejections.jsonl"), jsonl(rejections)?.as_bytes())?;

        let manifest = &mut outputs.manifest;
        manifest.task_ids.push(id.clone());
        manifest.counts.insert(id.clone(), run.dataset.created_counts);
        manifest
            .warnings
            .extend(run.warnings().into_iter().map(|w| format!("{id}: {w}")));
        manifest.extra.insert(
            format!("{id}.generation"),
            json!({
                "attempts": run.generation.attempts,
                "backend_failures": run.generation.backend_failures,
                "parse_rejections": run.generation.parse_rejections,
                "duplicates": run.generation.duplicates,
                "label_draws": run.generation.label_draws,
                "annotation_failures": run.annotation_failures,
            }),
        );
        summary.insert(id.clone(), serde_json::to_value(run.dataset.created_counts)?);
    }
    let dir = outputs.dir.clone();
    let hash = outputs.finish()?;
    Ok(json!({"command": "synthesize", "manifest_hash": hash, "output_dir": dir, "tasks": summary}))
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Synthetic dataset; defaults to the `synthesize` output for the task.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub prompt_variant: Option<ConjunctionVariant>,
}

pub fn export(ctx: &Context, args: &ExportArgs) -> Result<Value> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let tasks = ctx.tasks(args.task.as_deref())?;
    if args.dataset.is_some() && tasks.len() > 1 {
        anyhow::bail!(selfsynth::Error::argument(
            "--dataset needs a single task; pick one with --task"
        ));
    }
    let variant = args.prompt_variant.unwrap_or(config.evaluation.prompt_variant);
    let mut outputs = Outputs::create(config, &engine, "export-finetune", config.params.rng_seed)?;
    let mut summary = serde_json::Map::new();
    for task in &tasks {
        let id = &task.spec.id;
        let path = args.dataset.clone().unwrap_or_else(|| default_dataset_path(config, id));
        let examples = read_examples_jsonl(&path)?;
        let dataset = SyntheticDataset {
            task_id: id.clone(),
            created_counts: CreatedCounts {
                raw_inputs: examples.len(),
                post_input_filter: examples.len(),
                post_pair_filter: examples.len(),
            },
            examples,
            params: config.params.clone(),
        };
        let records = finetune_records(&engine, &task.spec, &dataset, variant)?;
        outputs.write(&format!("{id}.jsonl"), jsonl(&records)?.as_bytes())?;
        outputs.manifest.task_ids.push(id.clone());
        summary.insert(id.clone(), json!(records.len()));
    }
    let dir = outputs.dir.clone();
    let hash = outputs.finish()?;
    Ok(json!({"command": "export-finetune", "manifest_hash": hash, "output_dir": dir, "records": summary}))
}
