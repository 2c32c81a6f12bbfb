use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde_json::{json, Value};

use selfsynth::analysis::{build_self_icl_prompt, context_budget_chars, predict, prompt_sensitivity_sweep};
use selfsynth::metrics::evaluate_task_multi;
use selfsynth::prompt::ConjunctionVariant;
use selfsynth::report::{score_table_json, task_table_csv, RowStatistic, ScoreRow, ScoreTable};
use selfsynth::task::read_examples_jsonl;

use super::{default_dataset_path, eval_instances, jsonl, read_predictions, Context, Outputs};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Score predictions from this file (JSON Lines) against the task instances.
    #[arg(long, conflicts_with = "live")]
    pub predictions: Option<PathBuf>,
    /// Query the configured backend in context with the seed demonstrations.
    #[arg(long)]
    pub live: bool,
    /// Conjunction used in demonstration turns for live evaluation.
    #[arg(long)]
    pub prompt_variant: Option<ConjunctionVariant>,
    /// Evaluate every conjunction variant and report the spread.
    #[arg(long, requires = "live")]
    pub sweep: bool,
    /// Include per-instance scores in the report.
    #[arg(long)]
    pub per_instance: bool,
}

pub async fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<Value> {
    if args.predictions.is_none() && !args.live {
        bail!(selfsynth::Error::argument(
            "evaluate needs --predictions <file> or --live"
        ));
    }
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let task = ctx.task(args.task.as_deref())?;
    let id = task.spec.id.clone();
    let instances = eval_instances(&task, config)?;
    let golds: Vec<Vec<String>> = instances.iter().map(|i| i.outputs.clone()).collect();
    let mut outputs = Outputs::create(config, &engine, "evaluate", config.evaluation.seed)?;
    outputs.manifest.task_ids.push(id.clone());

    if args.sweep {
        let backend = ctx.backend()?;
        let sweep = prompt_sensitivity_sweep(
            &engine,
            &task.spec,
            backend.as_ref(),
            &ConjunctionVariant::ALL,
            instances,
            &config.evaluation.prediction_settings(),
        )
        .await?;
        let table = ScoreTable::new(
            sweep.row.scores.iter().map(|(v, _)| v.name().to_string()).collect(),
            vec![ScoreRow {
                task_id: id.clone(),
                category: task.category().to_string(),
                scores: sweep.row.scores.iter().map(|(_, s)| *s).collect(),
            }],
        )?;
        outputs.write(
            &format!("{id}.sensitivity.csv"),
            task_table_csv(&table, RowStatistic::Diff, None)?.as_bytes(),
        )?;
        outputs.write(
            &format!("{id}.sensitivity.json"),
            score_table_json(&table, None)?.as_bytes(),
        )?;
        if sweep.failed_calls > 0 {
            outputs.manifest.warnings.push(format!(
                "{} generation calls failed and scored as empty",
                sweep.failed_calls
            ));
        }
        let hash = outputs.finish()?;
        return Ok(json!({"command": "evaluate", "manifest_hash": hash, "sensitivity": sweep.row}));
    }

    let predictions = match &args.predictions {
        Some(path) => read_predictions(path)?,
        None => {
            let variant = args.prompt_variant.unwrap_or(config.evaluation.prompt_variant);
            let prompts = instances
                .iter()
                .map(|i| engine.render_annotation_prompt(&task.spec, &i.input, variant))
                .collect::<selfsynth::Result<Vec<_>>>()?;
            let (predictions, failed) = predict(
                ctx.backend()?.as_ref(),
                prompts,
                &config.evaluation.prediction_settings(),
            )
            .await;
            if failed > 0 {
                outputs
                    .manifest
                    .warnings
                    .push(format!("{failed} generation calls failed and scored as empty"));
            }
            outputs.manifest.extra.insert("prompt_variant".into(), json!(variant));
            outputs.write(
                &format!("{id}.predictions.jsonl"),
                jsonl(predictions.iter().map(|p| json!({"prediction": p})))?.as_bytes(),
            )?;
            predictions
        }
    };
    let result = evaluate_task_multi(&task.spec, &predictions, &golds)?;
    let report = result.report(args.per_instance);
    outputs.write_json(&format!("{id}.json"), &report)?;
    let hash = outputs.finish()?;
    Ok(json!({"command": "evaluate", "manifest_hash": hash, "report": report}))
}

#[derive(Debug, Args)]
pub struct SelfIclArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Synthetic dataset; defaults to the `synthesize` output for the task.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Context window in tokens; overrides `evaluation.context_budget_tokens`.
    #[arg(long)]
    pub context_tokens: Option<usize>,
    #[arg(long)]
    pub per_instance: bool,
}

pub async fn self_icl(ctx: &Context, args: &SelfIclArgs) -> Result<Value> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let task = ctx.task(args.task.as_deref())?;
    let id = task.spec.id.clone();
    let instances = eval_instances(&task, config)?;
    let path = args
        .dataset
        .clone()
        .unwrap_or_else(|| default_dataset_path(config, &id));
    let dataset = read_examples_jsonl(&path)?;

    let eval = &config.evaluation;
    let tokens = args.context_tokens.unwrap_or(eval.context_budget_tokens);
    // The reply has to fit in the same window as the prompt.
    let budget = context_budget_chars(tokens.saturating_sub(eval.max_new_tokens), eval.chars_per_token);
    let mut prompts = Vec::with_capacity(instances.len());
    let mut k_used = Vec::with_capacity(instances.len());
    for instance in instances {
        let packed = build_self_icl_prompt(
            &engine,
            &task.spec,
            &dataset,
            budget,
            &instance.input,
            eval.prompt_variant,
        )?;
        k_used.push(packed.k_used);
        prompts.push(packed.prompt);
    }
    let (predictions, failed) = predict(ctx.backend()?.as_ref(), prompts, &eval.prediction_settings()).await;
    let golds: Vec<Vec<String>> = instances.iter().map(|i| i.outputs.clone()).collect();
    let result = evaluate_task_multi(&task.spec, &predictions, &golds)?;

    let mut outputs = Outputs::create(config, &engine, "self-icl", eval.seed)?;
    outputs.manifest.task_ids.push(id.clone());
    if failed > 0 {
        outputs
            .manifest
            .warnings
            .push(format!("{failed} generation calls failed and scored as empty"));
    }
    let k_min = k_used.iter().copied().min().unwrap_or(0);
    let k_max = k_used.iter().copied().max().unwrap_or(0);
    let body = json!({
        "report": result.report(args.per_instance),
        "budget_chars": budget,
        "k_used_min": k_min,
        "k_used_max": k_max,
        "k_used": if args.per_instance { json!(k_used) } else { Value::Null },
    });
    outputs.write_json(&format!("{id}.json"), &body)?;
    outputs.write(
        &format!("{id}.predictions.jsonl"),
        jsonl(predictions.iter().map(|p| json!({"prediction": p})))?.as_bytes(),
    )?;
    let hash = outputs.finish()?;
    Ok(json!({"command": "self-icl", "manifest_hash": hash, "result": body}))
}
