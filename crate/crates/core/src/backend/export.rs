use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{ConjunctionVariant, PromptEngine};
use crate::task::{SyntheticDataset, TaskSpec};

/// One training record for teacher-forced finetuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
}

pub fn finetune_records(
    engine: &PromptEngine,
    task: &TaskSpec,
    dataset: &SyntheticDataset,
    variant: ConjunctionVariant,
) -> Result<Vec<FinetuneRecord>> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot export an empty dataset".into()));
    }
    dataset
        .examples
        .iter()
        .map(|example| {
            Ok(FinetuneRecord {
                prompt: engine.render_annotation_prompt(task, &example.input, variant)?,
                completion: example.output.clone(),
            })
        })
        .collect()
}

/// Writes `{prompt, completion}` JSON Lines and returns the record count.
pub fn export_finetune_dataset(
    engine: &PromptEngine,
    task: &TaskSpec,
    dataset: &SyntheticDataset,
    variant: ConjunctionVariant,
    path: &Path,
) -> Result<usize> {
    let records = finetune_records(engine, task, dataset, variant)?;
    let mut body = String::new();
    for record in &records {
        body.push_str(&serde_json::to_string(record)?);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}
