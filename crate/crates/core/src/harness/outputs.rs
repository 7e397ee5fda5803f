use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{canonicalize, write_predictions, MetricsReport, PredictionRecord};

use super::checkpoint::Checkpoint;
use super::report::{exact, percent, Table};
use super::run::{RunOutcome, RunReport};

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TIMING_FILE: &str = "timing.json";
pub const TRAIN_PREDICTIONS: &str = "predictions_train.jsonl";
pub const TEST_PREDICTIONS: &str = "predictions_test.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    training_seconds: f64,
}

pub fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    write_json(&dir.join(TIMING_FILE), &Timing { training_seconds: seconds })
}

pub fn metrics_table(rows: &[(&str, &MetricsReport)]) -> Table {
    let mut t = Table::new(&["Split", "N", "Accuracy (%)", "Precision (%)", "Recall (%)", "F1 (%)"]);
    for (name, m) in rows {
        t.push(vec![
            name.to_string(),
            m.n.to_string(),
            percent(m.accuracy),
            percent(m.precision),
            percent(m.recall),
            percent(m.f1),
        ]);
    }
    t
}

pub fn loss_table(losses: &[f64]) -> Table {
    let mut t = Table::new(&["epoch", "train_loss"]);
    for (i, l) in losses.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), exact(*l)]);
    }
    t
}

/// Errors per ground-truth answer, in answer order.
pub fn answer_error_table(records: &[PredictionRecord]) -> Table {
    let mut by: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let truth = canonicalize(&r.ground_truth);
        let e = by.entry(truth.clone()).or_default();
        e.0 += 1;
        if canonicalize(&r.prediction) == truth {
            e.1 += 1;
        }
    }
    let mut t = Table::new(&["answer", "count", "correct", "errors"]);
    for (a, (n, ok)) in by {
        t.push(vec![a, n.to_string(), ok.to_string(), (n - ok).to_string()]);
    }
    t
}

fn summary(report: &RunReport) -> Table {
    let mut rows = vec![("train", &report.train)];
    if let Some(t) = &report.test {
        rows.push(("test", t));
    }
    metrics_table(&rows)
}

/// Report, checkpoint, predictions and tables of a training run.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = &outcome.report;
    write_json(&dir.join(REPORT_FILE), r)?;
    summary(r).write(dir, "metrics", "Metrics")?;
    loss_table(&r.epoch_losses).write_csv(dir, "epoch_loss")?;
    write_predictions(&dir.join(TRAIN_PREDICTIONS), &outcome.train_predictions)?;
    if !outcome.test_predictions.is_empty() {
        write_predictions(&dir.join(TEST_PREDICTIONS), &outcome.test_predictions)?;
        answer_error_table(&outcome.test_predictions).write_csv(dir, "answer_errors")?;
    }
    let model = &outcome.trained.model;
    model.vocab.save(&dir.join("vocab.txt"))?;
    model.answers.save(&dir.join("answers.txt"))?;
    Checkpoint::capture(&r.config, model, &outcome.trained.optimizer).save(&dir.join(CHECKPOINT_FILE))?;
    write_timing(dir, r.training_seconds)
}

/// Predictions and metrics of a standalone evaluation.
pub fn write_eval(dir: &Path, metrics: &MetricsReport, records: &[PredictionRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_predictions(&dir.join(PREDICTIONS), records)?;
    write_json(&dir.join(METRICS_FILE), metrics)?;
    metrics_table(&[("eval", metrics)]).write(dir, "metrics", "Metrics")?;
    answer_error_table(records).write_csv(dir, "answer_errors")
}
