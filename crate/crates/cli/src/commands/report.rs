use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use selfsynth::analysis::distribution_report;
use selfsynth::manifest::RunManifest;
use selfsynth::report::{
    category_table_csv, distribution_table_csv, distribution_table_json, score_table_json, task_table_csv,
    RowStatistic, ScoreTable,
};

use super::{eval_instances, read_predictions, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// Per-task scores with category averages and the last-minus-first delta.
    Scores,
    /// Category averages per filter variant.
    Ablation,
    /// Per-task conjunction scores with the max-minus-min spread.
    Sensitivity,
    /// Accuracy, L1 distance and irrelevant ratio for two systems.
    Distribution,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    /// Score CSV with columns `task_id,category,<system>...`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Manifest of the run the scores came from; its hash is stamped on every row.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Distribution reports: task whose instances hold the gold labels.
    #[arg(long)]
    pub task: Option<String>,
    /// Distribution reports: baseline predictions (JSON Lines).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Distribution reports: tuned-system predictions (JSON Lines).
    #[arg(long)]
    pub self_guide: Option<PathBuf>,
}

fn manifest_hash(path: Option<&Path>) -> Result<Option<String>> {
    let Some(path) = path else { return Ok(None) };
    let manifest = RunManifest::read(path)?;
    if !manifest.verify()? {
        bail!(selfsynth::Error::Validation(format!(
            "{} does not match its recorded hash",
            path.display()
        )));
    }
    Ok(manifest.manifest_hash)
}

fn write(dir: Option<&Path>, name: &str, body: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    fs::create_dir_all(dir).map_err(|e| selfsynth::Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| selfsynth::Error::io(&path, e))?;
    Ok(Some(path))
}

pub fn report(ctx: &Context, args: &ReportArgs) -> Result<Value> {
    let hash = manifest_hash(args.manifest.as_deref())?;
    let dir = ctx.output_root().map(|root| root.join("report"));
    let name = format!("{:?}", args.kind).to_lowercase();

    let (csv, json_body) = match args.kind {
        ReportKind::Scores | ReportKind::Ablation | ReportKind::Sensitivity => {
            let Some(input) = &args.input else {
                bail!(selfsynth::Error::argument("this report needs --input <csv>"));
            };
            let text = fs::read_to_string(input).map_err(|e| selfsynth::Error::io(input, e))?;
            let table = ScoreTable::from_csv(&text, &input.display().to_string())?;
            let csv = match args.kind {
                ReportKind::Scores => task_table_csv(&table, RowStatistic::Delta, hash.as_deref())?,
                ReportKind::Sensitivity => task_table_csv(&table, RowStatistic::Diff, hash.as_deref())?,
                _ => category_table_csv(&table, hash.as_deref())?,
            };
            (csv, score_table_json(&table, hash.as_deref())?)
        }
        ReportKind::Distribution => {
            let (Some(baseline), Some(self_guide)) = (&args.baseline, &args.self_guide) else {
                bail!(selfsynth::Error::argument(
                    "distribution reports need --baseline and --self-guide"
                ));
            };
            let config = ctx.config()?;
            let task = ctx.task(args.task.as_deref())?;
            let instances = eval_instances(&task, config)?;
            let golds: Vec<String> = instances
                .iter()
                .map(|i| i.outputs.first().cloned().unwrap_or_default())
                .collect();
            let row = distribution_report(
                &task.spec,
                &read_predictions(baseline)?,
                &read_predictions(self_guide)?,
                &golds,
            )?;
            let rows = [row];
            (
                distribution_table_csv(&rows, hash.as_deref())?,
                distribution_table_json(&rows, hash.as_deref())?,
            )
        }
    };
    let csv_path = write(dir.as_deref(), &format!("{name}.csv"), &csv)?;
    let json_path = write(dir.as_deref(), &format!("{name}.json"), &json_body)?;
    let parsed: Value = serde_json::from_str(&json_body)?;
    Ok(json!({
        "command": "report",
        "kind": name,
        "manifest_hash": hash,
        "csv": csv,
        "report": parsed,
        "files": [csv_path, json_path],
    }))
}
