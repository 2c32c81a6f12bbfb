use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde_json::{json, Value};

use selfsynth::analysis::{predict, randomize_demo_labels, randomize_labels, run_filter_ablation, AblationConfig};
use selfsynth::metrics::evaluate_task_multi;
use selfsynth::task::{examples_to_jsonl, read_examples_jsonl, CreatedCounts, SyntheticDataset, TaskSpec};

use super::{default_dataset_path, eval_instances, jsonl, Context, LoadedTask, Outputs};

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("protocol").required(true).args(["filters", "labels"])))]
pub struct AblateArgs {
    /// Re-filter one shared set of raw generations under every filter variant.
    #[arg(long)]
    pub filters: bool,
    /// Randomize labels of the synthetic dataset and of the demonstrations.
    #[arg(long)]
    pub labels: bool,
    #[arg(long)]
    pub task: Option<String>,
    /// Synthetic dataset for `--labels`; defaults to the `synthesize` output.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// With `--labels`, also score in-context prompting with true and with
    /// randomized demonstrations on the configured backend.
    #[arg(long, requires = "labels")]
    pub evaluate: bool,
}

pub async fn ablate(ctx: &Context, args: &AblateArgs) -> Result<Value> {
    if args.filters {
        filters(ctx, args).await
    } else {
        labels(ctx, args).await
    }
}

async fn filters(ctx: &Context, args: &AblateArgs) -> Result<Value> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let backend = ctx.backend()?;
    let tasks = ctx.tasks(args.task.as_deref())?;
    let mut outputs = Outputs::create(config, &engine, "ablate-filters", config.params.rng_seed)?;
    let mut summary = serde_json::Map::new();
    for task in &tasks {
        let id = &task.spec.id;
        let run = run_filter_ablation(
            &engine,
            &task.spec,
            &config.params,
            backend.as_ref(),
            &config.filters,
            &AblationConfig::ALL,
        )
        .await?;
        let raw = run
            .raw
            .generation
            .entries
            .iter()
            .zip(&run.raw.annotations)
            .map(|(entry, annotation)| {
                json!({"input": entry.input, "output": annotation.as_ref().map(|e| e.output.as_str())})
            });
        outputs.write(&format!("{id}/raw.jsonl"), jsonl(raw)?.as_bytes())?;
        let mut variants = serde_json::Map::new();
        for variant in &run.variants {
            let name = serde_json::to_value(variant.variant)?;
            let name = name.as_str().unwrap_or_default();
            outputs.write(&format!("{id}/{name}.jsonl"), variant.dataset.to_jsonl()?.as_bytes())?;
            variants.insert(name.to_string(), serde_json::to_value(variant.dataset.created_counts)?);
        }
        let raw_digest = run.raw.digest();
        outputs.manifest.task_ids.push(id.clone());
        outputs
            .manifest
            .extra
            .insert(format!("{id}.raw_digest"), json!(raw_digest));
        summary.insert(id.clone(), json!({"raw_digest": raw_digest, "variants": variants}));
    }
    let dir = outputs.dir.clone();
    let hash = outputs.finish()?;
    Ok(json!({"command": "ablate", "protocol": "filters", "manifest_hash": hash, "output_dir": dir, "tasks": summary}))
}

async fn icl_score(ctx: &Context, task: &TaskSpec, loaded: &LoadedTask) -> Result<f64> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let instances = eval_instances(loaded, config)?;
    let prompts = instances
        .iter()
        .map(|i| engine.render_annotation_prompt(task, &i.input, config.evaluation.prompt_variant))
        .collect::<selfsynth::Result<Vec<_>>>()?;
    let (predictions, _) = predict(
        ctx.backend()?.as_ref(),
        prompts,
        &config.evaluation.prediction_settings(),
    )
    .await;
    let golds: Vec<Vec<String>> = instances.iter().map(|i| i.outputs.clone()).collect();
    Ok(evaluate_task_multi(task, &predictions, &golds)?.percent())
}

async fn labels(ctx: &Context, args: &AblateArgs) -> Result<Value> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let task = ctx.task(args.task.as_deref())?;
    let id = task.spec.id.clone();
    if !task.spec.kind.is_classification() {
        bail!(selfsynth::Error::argument(format!(
            "task {id} is not a classification task"
        )));
    }
    let seed = config.params.rng_seed;
    let path = args
        .dataset
        .clone()
        .unwrap_or_else(|| default_dataset_path(config, &id));
    let examples = read_examples_jsonl(&path)?;
    let n = examples.len();
    let dataset = SyntheticDataset {
        task_id: id.clone(),
        examples,
        params: config.params.clone(),
        created_counts: CreatedCounts {
            raw_inputs: n,
            post_input_filter: n,
            post_pair_filter: n,
        },
    };
    let randomized = randomize_labels(&dataset, task.spec.labels(), seed)?;
    let randomized_task = randomize_demo_labels(&task.spec, seed)?;

    let mut outputs = Outputs::create(config, &engine, "ablate-labels", seed)?;
    outputs.manifest.task_ids.push(id.clone());
    outputs.write(
        &format!("{id}/rand_self_guide.jsonl"),
        examples_to_jsonl(&randomized.examples)?.as_bytes(),
    )?;
    let mut task_json = randomized_task.to_json()?;
    task_json.push('\n');
    outputs.write(&format!("{id}/rand_baseline_task.json"), task_json.as_bytes())?;

    let scores = if args.evaluate {
        let baseline = icl_score(ctx, &task.spec, &task).await?;
        let rand_baseline = icl_score(ctx, &randomized_task, &task).await?;
        let scores = json!({"baseline": baseline, "rand_baseline": rand_baseline});
        outputs.write_json(&format!("{id}/scores.json"), &scores)?;
        scores
    } else {
        Value::Null
    };
    let dir = outputs.dir.clone();
    let hash = outputs.finish()?;
    Ok(json!({
        "command": "ablate",
        "protocol": "labels",
        "manifest_hash": hash,
        "output_dir": dir,
        "randomized_examples": randomized.len(),
        "scores": scores,
    }))
}
