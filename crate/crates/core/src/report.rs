//! Table assembly: per-task score comparisons with category averages, filter
//! ablation summaries, conjunction sensitivity and label distribution rows.
//! Every rendering carries the manifest hash of the run it came from.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::DistributionRow;
use crate::error::{Error, Result};
use crate::metrics::round1;

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub task_id: String,
    pub category: String,
    /// One percent score per system, aligned with [`ScoreTable::systems`].
    pub scores: Vec<f64>,
}

/// Percent scores of several systems (or prompt variants, or filter
/// variants) over a set of tasks grouped into categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub systems: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySummary {
    pub category: String,
    pub tasks: usize,
    /// Mean score per system, one decimal.
    pub averages: Vec<f64>,
    /// Mean of the last system minus mean of the first, one decimal.
    pub delta: f64,
    /// Mean over tasks of the per-task max-minus-min spread, one decimal.
    pub mean_diff: f64,
}

/// Columns the score CSV reader skips because reports derive them.
const DERIVED_COLUMNS: [&str; 3] = ["delta", "diff", "manifest_hash"];

impl ScoreTable {
    pub fn new(systems: Vec<String>, rows: Vec<ScoreRow>) -> Result<Self> {
        if systems.is_empty() {
            return Err(Error::argument("score table needs at least one system column"));
        }
        if let Some(bad) = rows.iter().find(|r| r.scores.len() != systems.len()) {
            return Err(Error::argument(format!(
                "task {} has {} scores for {} systems",
                bad.task_id,
                bad.scores.len(),
                systems.len()
            )));
        }
        Ok(ScoreTable { systems, rows })
    }

    /// Reads `task_id,category,<system>...` CSV. Derived columns are ignored.
    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |field: String, message: String| Error::Parse {
            origin: origin.to_string(),
            field,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| parse_err("header".into(), e.to_string()))?
            .clone();
        if headers.get(0) != Some("task_id") || headers.get(1) != Some("category") {
            return Err(parse_err(
                "header".into(),
                "expected the first columns to be task_id,category".into(),
            ));
        }
        let system_columns: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .skip(2)
            .filter(|(_, h)| !DERIVED_COLUMNS.contains(h))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| parse_err(format!("row {}", line + 1), e.to_string()))?;
            let task_id = record.get(0).unwrap_or_default().to_string();
            if task_id.eq_ignore_ascii_case("avg") {
                continue;
            }
            let mut scores = Vec::with_capacity(system_columns.len());
            for (i, name) in &system_columns {
                let cell = record.get(*i).unwrap_or_default();
                let value = cell.parse::<f64>().map_err(|_| {
                    parse_err(
                        format!("row {} column {name}", line + 1),
                        format!("{cell:?} is not a number"),
                    )
                })?;
                scores.push(value);
            }
            rows.push(ScoreRow {
                task_id,
                category: record.get(1).unwrap_or_default().to_string(),
                scores,
            });
        }
        ScoreTable::new(system_columns.into_iter().map(|(_, h)| h).collect(), rows)
    }

    /// Categories in order of first appearance.
    pub fn categories(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.category.as_str()) {
                seen.push(&row.category);
            }
        }
        seen
    }

    pub fn summaries(&self) -> Vec<CategorySummary> {
        self.categories()
            .into_iter()
            .map(|category| {
                let rows: Vec<&ScoreRow> = self.rows.iter().filter(|r| r.category == category).collect();
                let raw: Vec<f64> = (0..self.systems.len())
                    .map(|s| mean(rows.iter().map(|r| r.scores[s])))
                    .collect();
                CategorySummary {
                    category: category.to_string(),
                    tasks: rows.len(),
                    averages: raw.iter().map(|&a| round1(a)).collect(),
                    delta: round1(raw[raw.len() - 1] - raw[0]),
                    mean_diff: round1(mean(rows.iter().map(|r| round1(spread(&r.scores))))),
                }
            })
            .collect()
    }

    pub fn summary(&self, category: &str) -> Option<CategorySummary> {
        self.summaries().into_iter().find(|s| s.category == category)
    }
}

fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

fn fmt2(x: f64) -> String {
    let r = ((x * 100.0) + x.signum() * 1e-9).round() / 100.0;
    format!("{r:.2}")
}

/// Which trailing column a per-task table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatistic {
    /// Last system minus first.
    Delta,
    /// Max minus min across systems.
    Diff,
}

#[derive(Serialize)]
struct JsonReport<'a, T: Serialize> {
    manifest_hash: Option<&'a str>,
    #[serde(flatten)]
    body: T,
}

fn write_csv(rows: Vec<Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| Error::Validation(format!("writing CSV: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Validation(format!("writing CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Per-task rows followed by an `Avg` row per category.
pub fn task_table_csv(table: &ScoreTable, statistic: RowStatistic, manifest_hash: Option<&str>) -> Result<String> {
    let hash = manifest_hash.unwrap_or_default().to_string();
    let stat_name = match statistic {
        RowStatistic::Delta => "delta",
        RowStatistic::Diff => "diff",
    };
    let mut header = vec!["task_id".to_string(), "category".to_string()];
    header.extend(table.systems.iter().cloned());
    header.push(stat_name.into());
    header.push("manifest_hash".into());
    let mut out = vec![header];
    for summary in table.summaries() {
        for row in table.rows.iter().filter(|r| r.category == summary.category) {
            let stat = match statistic {
                RowStatistic::Delta => round1(row.scores[row.scores.len() - 1] - row.scores[0]),
                RowStatistic::Diff => round1(spread(&row.scores)),
            };
            let mut line = vec![row.task_id.clone(), row.category.clone()];
            line.extend(row.scores.iter().map(|&s| fmt1(s)));
            line.push(fmt1(stat));
            line.push(hash.clone());
            out.push(line);
        }
        let stat = match statistic {
            RowStatistic::Delta => summary.delta,
            RowStatistic::Diff => summary.mean_diff,
        };
        let mut line = vec!["Avg".to_string(), summary.category.clone()];
        line.extend(summary.averages.iter().map(|&a| fmt1(a)));
        line.push(fmt1(stat));
        line.push(hash.clone());
        out.push(line);
    }
    write_csv(out)
}

/// One row per category with the average of each system column.
pub fn category_table_csv(table: &ScoreTable, manifest_hash: Option<&str>) -> Result<String> {
    let mut header = vec!["category".to_string()];
    header.extend(table.systems.iter().cloned());
    header.push("manifest_hash".into());
    let mut out = vec![header];
    for summary in table.summaries() {
        let mut line = vec![summary.category.clone()];
        line.extend(summary.averages.iter().map(|&a| fmt1(a)));
        line.push(manifest_hash.unwrap_or_default().to_string());
        out.push(line);
    }
    write_csv(out)
}

#[derive(Serialize)]
struct ScoreJson<'a> {
    systems: &'a [String],
    rows: &'a [ScoreRow],
    summaries: Vec<CategorySummary>,
}

pub fn score_table_json(table: &ScoreTable, manifest_hash: Option<&str>) -> Result<String> {
    let report = JsonReport {
        manifest_hash,
        body: ScoreJson {
            systems: &table.systems,
            rows: &table.rows,
            summaries: table.summaries(),
        },
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

/// Column-wise mean of distribution rows, for the closing `Avg` line.
pub fn distribution_average(rows: &[DistributionRow]) -> Option<[f64; 6]> {
    if rows.is_empty() {
        return None;
    }
    let cols = |f: fn(&DistributionRow) -> f64| mean(rows.iter().map(f));
    Some([
        cols(|r| r.baseline.accuracy),
        cols(|r| r.self_guide.accuracy),
        cols(|r| r.baseline.l1),
        cols(|r| r.self_guide.l1),
        cols(|r| r.baseline.irrelevant),
        cols(|r| r.self_guide.irrelevant),
    ])
}

pub fn distribution_table_csv(rows: &[DistributionRow], manifest_hash: Option<&str>) -> Result<String> {
    let hash = manifest_hash.unwrap_or_default().to_string();
    let mut out = vec![[
        "task_id",
        "baseline_accuracy",
        "self_guide_accuracy",
        "baseline_l1",
        "self_guide_l1",
        "baseline_irrelevant",
        "self_guide_irrelevant",
        "manifest_hash",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for row in rows {
        let values = [
            row.baseline.accuracy,
            row.self_guide.accuracy,
            row.baseline.l1,
            row.self_guide.l1,
            row.baseline.irrelevant,
            row.self_guide.irrelevant,
        ];
        let mut line = vec![row.task_id.clone()];
        line.extend(values.iter().map(|&v| fmt2(v)));
        line.push(hash.clone());
        out.push(line);
    }
    if let Some(avg) = distribution_average(rows) {
        let mut line = vec!["Avg".to_string()];
        line.extend(avg.iter().map(|&v| fmt2(v)));
        line.push(hash);
        out.push(line);
    }
    write_csv(out)
}

pub fn distribution_table_json(rows: &[DistributionRow], manifest_hash: Option<&str>) -> Result<String> {
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [DistributionRow],
        average: Option<BTreeMap<&'static str, f64>>,
    }
    let average = distribution_average(rows).map(|a| {
        [
            "baseline_accuracy",
            "self_guide_accuracy",
            "baseline_l1",
            "self_guide_l1",
            "baseline_irrelevant",
            "self_guide_irrelevant",
        ]
        .into_iter()
        .zip(a)
        .collect()
    });
    Ok(serde_json::to_string_pretty(&JsonReport {
        manifest_hash,
        body: Body { rows, average },
    })?)
}
