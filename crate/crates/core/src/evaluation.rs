//! Dual-threshold classification, F-beta scoring, threshold search and
//! four-fold cross-validation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{enumerate_partitions, trait_probabilities, FoldedDataset, FounderRecord, PartitionSpec};
use crate::inference::{query_founder, InferenceConfig, InferenceError, InferenceResult};
use crate::llm::CompletionProvider;
use crate::policy::Policy;
use crate::statistics::rescale_probabilities;
use crate::training::{train, TrainError, TrainingConfig, TrainingRun};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("grid step {0} must be positive and divide 1")]
    Grid(f64),
    #[error("no records to evaluate")]
    EmptyRecords,
    #[error("beta must be positive, got {0}")]
    Beta(f64),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("partition {partition} read its test fold {fold} during training")]
    Leakage { partition: String, fold: usize },
    #[error("partition {partition}: {source}")]
    Training {
        partition: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_success: f64,
    pub theta_failure: f64,
}

/// Predicts success iff `p_success > θs` and `p_failure < θf`.
pub fn classify(result: &InferenceResult, t: &Thresholds) -> bool {
    classify_scores(result.p_success, result.p_failure, t)
}

fn classify_scores(p_success: f64, p_failure: f64, t: &Thresholds) -> bool {
    p_success > t.theta_success && p_failure < t.theta_failure
}

/// `(1 + β²)PR / (β²P + R)`, zero when the denominator is zero.
pub fn f_beta(beta: f64, precision: f64, recall: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
    pub thresholds: Thresholds,
    pub partition: Option<String>,
}

/// Inference output for one record plus its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub p_success: f64,
    pub p_failure: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub inference: InferenceConfig,
    /// Spread each direction's rule probabilities over [0.1, 0.9] before scoring.
    pub rescale: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            inference: InferenceConfig::default(),
            rescale: true,
        }
    }
}

/// The policy exactly as it is scored under `cfg`.
pub fn scoring_policy(policy: &Policy, cfg: &ScoringConfig) -> Policy {
    if cfg.rescale {
        rescale_probabilities(policy).policy
    } else {
        policy.clone()
    }
}

/// Scores normalized records; sampled inference uses a per-record seed.
pub fn score_records(policy: &Policy, records: &[FounderRecord], cfg: &ScoringConfig) -> Result<Vec<Score>, EvalError> {
    let scored = scoring_policy(policy, cfg);
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let traits = trait_probabilities(r).probabilities;
            let mut inference = cfg.inference;
            inference.seed = crate::derive_seed(cfg.inference.seed, "record", i as u64);
            let res = query_founder(&scored, &traits, &inference)?;
            Ok(Score {
                p_success: res.p_success,
                p_failure: res.p_failure,
                label: r.is_success(),
            })
        })
        .collect()
}

pub fn metrics_from_scores(scores: &[Score], t: Thresholds, beta: f64) -> MetricsReport {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for s in scores {
        match (classify_scores(s.p_success, s.p_failure, &t), s.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    MetricsReport {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f_beta: f_beta(beta, precision, recall),
        beta,
        thresholds: t,
        partition: None,
    }
}

pub fn evaluate_policy(
    policy: &Policy,
    records: &[FounderRecord],
    t: Thresholds,
    beta: f64,
    cfg: &ScoringConfig,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let scores = score_records(policy, records, cfg)?;
    Ok(metrics_from_scores(&scores, t, beta))
}

/// Grid points `0, step, ..., 1`; `step` must divide 1.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(EvalError::Grid(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(EvalError::Grid(step));
    }
    let n = n as usize;
    Ok((0..=n).map(|k| k as f64 / n as f64).collect())
}

/// Best `(θs, θf)` on the grid. Ties go to the larger `θs`, then the smaller `θf`.
pub fn search_thresholds(scores: &[Score], beta: f64, step: f64) -> Result<MetricsReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    if !(beta > 0.0) {
        return Err(EvalError::Beta(beta));
    }
    let grid = threshold_grid(step)?;
    let mut best: Option<MetricsReport> = None;
    for &ts in grid.iter().rev() {
        for &tf in &grid {
            let m = metrics_from_scores(
                scores,
                Thresholds {
                    theta_success: ts,
                    theta_failure: tf,
                },
                beta,
            );
            if best.as_ref().is_none_or(|b| m.f_beta > b.f_beta) {
                best = Some(m);
            }
        }
    }
    Ok(best.expect("grid is nonempty"))
}

pub fn threshold_search(
    policy: &Policy,
    records: &[FounderRecord],
    beta: f64,
    step: f64,
    cfg: &ScoringConfig,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let scores = score_records(policy, records, cfg)?;
    search_thresholds(&scores, beta, step)
}

/// Test-fold outcome of one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub partition: PartitionSpec,
    pub metrics: MetricsReport,
    pub selected_iteration: u32,
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub beta: f64,
    pub rows: Vec<PartitionResult>,
    pub average: AverageRow,
    /// False when any partition is missing from `rows`.
    pub complete: bool,
}

impl CrossValidationReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>9} {:>9} {:>9}", "partition", "precision", "recall", format!("F{}", self.beta));
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>9.1} {:>9.1} {:>9.1}",
                row.partition.to_string(),
                row.metrics.precision * 100.0,
                row.metrics.recall * 100.0,
                row.metrics.f_beta * 100.0
            );
        }
        let _ = writeln!(
            out,
            "{:<28} {:>9.1} {:>9.1} {:>9.1}",
            "average",
            self.average.precision * 100.0,
            self.average.recall * 100.0,
            self.average.f_beta * 100.0
        );
        if !self.complete {
            let _ = writeln!(out, "(incomplete: {} of 12 partitions)", self.rows.len());
        }
        out
    }
}

fn average_row(rows: &[PartitionResult]) -> AverageRow {
    let n = rows.len().max(1) as f64;
    AverageRow {
        precision: rows.iter().map(|r| r.metrics.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.metrics.recall).sum::<f64>() / n,
        f_beta: rows.iter().map(|r| r.metrics.f_beta).sum::<f64>() / n,
    }
}

/// Trains on one partition and scores the final policy on its test fold,
/// failing if training touched the test fold.
pub fn run_partition(
    data: &FoldedDataset,
    partition: &PartitionSpec,
    cfg: &TrainingConfig,
    provider: &dyn CompletionProvider,
    seed: u64,
    out: Option<&Path>,
) -> Result<(PartitionResult, TrainingRun), EvalError> {
    let name = partition.to_string();
    let view = data.view();
    let run = train(&view, partition, cfg, provider, seed, out).map_err(|e| EvalError::Training {
        partition: name.clone(),
        source: Box::new(e),
    })?;
    if view.accessed().contains(&partition.test_fold) {
        return Err(EvalError::Leakage {
            partition: name,
            fold: partition.test_fold,
        });
    }
    let test: Vec<FounderRecord> = data.fold(partition.test_fold).iter().map(|r| run.normalization.apply(r)).collect();
    let mut metrics = evaluate_policy(&run.final_policy, &test, run.thresholds, cfg.beta, &cfg.scoring)?;
    metrics.partition = Some(name);
    Ok((
        PartitionResult {
            partition: partition.clone(),
            metrics,
            selected_iteration: run.selected_iteration,
            policy: run.final_policy.clone(),
        },
        run,
    ))
}

/// Runs all 12 partitions of a four-fold split. Each partition trains with
/// its own derived seed, so results do not depend on execution order.
pub fn cross_validate(
    data: &FoldedDataset,
    cfg: &TrainingConfig,
    provider: &dyn CompletionProvider,
    seed: u64,
    out: Option<&Path>,
) -> Result<(CrossValidationReport, Vec<TrainingRun>), EvalError> {
    let partitions = enumerate_partitions(data.n_folds)?;
    let results: Vec<_> = partitions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let dir = out.map(|o| o.join(format!("partition_{i:02}")));
            run_partition(data, p, cfg, provider, crate::derive_seed(seed, "partition", i as u64), dir.as_deref())
        })
        .collect();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for r in results {
        let (row, run) = r?;
        rows.push(row);
        runs.push(run);
    }
    let report = CrossValidationReport {
        beta: cfg.beta,
        average: average_row(&rows),
        complete: rows.len() == partitions.len(),
        rows,
    };
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("crossval.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(o.join("crossval.txt"), report.render_table())?;
    }
    Ok((report, runs))
}
