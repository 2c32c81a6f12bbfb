use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Result};
use clap::Args;
use serde::Deserialize;
use serde_json::{json, Value};

use selfsynth::synthesis::SynthesisParams;
use selfsynth::task::TaskSpec;
use selfsynth::tuner::{random_search, split_tune_heldout, BestParams};

use super::{jsonl, Context, Outputs};

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("evaluator").required(true).args(["scores", "eval_command"])))]
pub struct TuneArgs {
    /// Precomputed scores (JSON Lines of `{task_id, params, score}`) to look
    /// trial points up in. Points missing from the table count as failures.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Shell command run once per (trial, task). It receives
    /// `SELFSYNTH_TASK_ID` and `SELFSYNTH_PARAMS` (JSON) in its environment
    /// and must print the score in percent as its last stdout line.
    #[arg(long)]
    pub eval_command: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoredPoint {
    input_temperature: f64,
    output_temperature: f64,
    n_raw_inputs: usize,
    repo_sample_size: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    task_id: String,
    params: ScoredPoint,
    score: f64,
}

type PointKey = (String, u64, u64, usize, usize);

fn point_key(task_id: &str, p: &SynthesisParams) -> PointKey {
    (
        task_id.to_string(),
        p.input_temperature.to_bits(),
        p.output_temperature.to_bits(),
        p.n_raw_inputs,
        p.repo_sample_size,
    )
}

fn read_score_table(path: &Path) -> Result<HashMap<PointKey, f64>> {
    let text = fs::read_to_string(path).map_err(|e| selfsynth::Error::io(path, e))?;
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut de = serde_json::Deserializer::from_str(line);
        let entry: ScoreLine = serde_path_to_error::deserialize(&mut de).map_err(|e| selfsynth::Error::Parse {
            origin: path.display().to_string(),
            field: format!("line {}: {}", i + 1, e.path()),
            message: e.inner().to_string(),
        })?;
        let params = SynthesisParams {
            input_temperature: entry.params.input_temperature,
            output_temperature: entry.params.output_temperature,
            n_raw_inputs: entry.params.n_raw_inputs,
            repo_sample_size: entry.params.repo_sample_size,
            ..SynthesisParams::default()
        };
        table.insert(point_key(&entry.task_id, &params), entry.score);
    }
    Ok(table)
}

fn run_eval_command(command: &str, params: &SynthesisParams, task: &TaskSpec) -> std::result::Result<f64, String> {
    let params_json = serde_json::to_string(params).map_err(|e| e.to_string())?;
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .env("SELFSYNTH_TASK_ID", &task.id)
        .env("SELFSYNTH_PARAMS", params_json)
        .output()
        .map_err(|e| format!("running evaluator: {e}"))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(format!("evaluator exited with {}: {}", output.status, stderr.trim()));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or_default();
    last.trim()
        .parse::<f64>()
        .map_err(|_| format!("evaluator printed {last:?}, expected a number"))
}

pub fn tune(ctx: &Context, args: &TuneArgs) -> Result<Value> {
    let config = ctx.config()?;
    let engine = ctx.engine()?;
    let section = &config.tune;
    let Some(space) = &section.space else {
        bail!(selfsynth::Error::Validation("tune needs a [tune.space] section".into()));
    };
    let all_tasks = ctx.tasks(None)?;

    let split = section.split_heldout.then(|| {
        let ids: Vec<(String, String)> = all_tasks
            .iter()
            .map(|t| (t.spec.id.clone(), t.category().to_string()))
            .collect();
        split_tune_heldout(&ids, section.seed)
    });
    let tasks: Vec<TaskSpec> = all_tasks
        .into_iter()
        .filter(|t| split.as_ref().is_none_or(|s| s.tune.contains(&t.spec.id)))
        .map(|t| t.spec)
        .collect();

    let trials = args.trials.unwrap_or(section.trials);
    let outcome = match (&args.scores, &args.eval_command) {
        (Some(path), _) => {
            let table = read_score_table(path)?;
            random_search(
                &tasks,
                &section.baseline_scores,
                space,
                &config.params,
                trials,
                section.seed,
                |p, t| {
                    table
                        .get(&point_key(&t.id, p))
                        .copied()
                        .ok_or_else(|| format!("no score for task {} at this point", t.id))
                },
            )?
        }
        (None, Some(command)) => random_search(
            &tasks,
            &section.baseline_scores,
            space,
            &config.params,
            trials,
            section.seed,
            |p, t| run_eval_command(command, p, t),
        )?,
        (None, None) => bail!(selfsynth::Error::argument("tune needs --scores or --eval-command")),
    };

    let best = BestParams::from_record(&outcome.best);
    let mut outputs = Outputs::create(config, &engine, "tune", section.seed)?;
    outputs.manifest.task_ids = tasks.iter().map(|t| t.id.clone()).collect();
    if let Some(split) = &split {
        outputs
            .manifest
            .extra
            .insert("split".into(), serde_json::to_value(split)?);
    }
    outputs.write("trials.jsonl", jsonl(&outcome.trials)?.as_bytes())?;
    outputs.write_json("best_params.json", &best)?;
    let hash = outputs.finish()?;
    Ok(json!({
        "command": "tune",
        "manifest_hash": hash,
        "best": outcome.best,
        "trials": outcome.trials.len(),
        "split": split,
    }))
}
