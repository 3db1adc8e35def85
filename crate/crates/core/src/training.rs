//! The iterative policy-refinement loop: insights, summarization, calibration,
//! reflection, periodic review and final policy selection.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_batches, DataError, FoldView, FounderRecord, NormalizationTable, PartitionSpec, Vocabulary};
use crate::derive_seed;
use crate::evaluation::{threshold_search, EvalError, MetricsReport, ScoringConfig, Thresholds};
use crate::llm::{
    build_evaluation_prompt, build_insight_prompt, build_reflection_prompt, build_summary_prompt, complete_all,
    parse_policy_response, CompletionProvider, DecodingParams, LlmError, Prompt, PromptKind, WindowEntry,
};
use crate::policy::{serialize_policy, Policy};
use crate::statistics::{
    binarize, calibrate_policy, draw_sample, mine_hints, prune_policy, Binarizer, CalibrationReport, Hints,
    StatsConfig, StatsError, Transaction,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("max_iterations is 0; there is no policy to select")]
    NoIterations,
    #[error("iteration {iteration} is not a review checkpoint")]
    NotCheckpoint { iteration: u32 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("iteration {iteration}: {source}")]
    Provider {
        iteration: u32,
        #[source]
        source: LlmError,
    },
    #[error("evaluation failed: {0}")]
    Eval(Box<EvalError>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(Box::new(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_iterations: u32,
    pub batch_size: usize,
    pub prevalence: f64,
    /// Review the recent policies every this many iterations.
    pub eval_every: u32,
    /// Number of recent policies shown at a review.
    pub window: usize,
    /// Evenly spaced iterations compared during final selection.
    pub final_candidates: usize,
    pub beta: f64,
    pub grid_step: f64,
    pub stats: StatsConfig,
    pub scoring: ScoringConfig,
    pub decoding: DecodingParams,
    pub max_in_flight: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_iterations: 10,
            batch_size: 50,
            prevalence: 0.10,
            eval_every: 5,
            window: 5,
            final_candidates: 4,
            beta: 0.25,
            grid_step: 0.02,
            stats: StatsConfig::default(),
            scoring: ScoringConfig::default(),
            decoding: DecodingParams::default(),
            max_in_flight: 8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.max_iterations == 0 {
            return Err(TrainError::NoIterations);
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return bad(format!("prevalence {} outside [0, 1]", self.prevalence));
        }
        if self.eval_every == 0 || self.window == 0 || self.final_candidates == 0 {
            return bad("eval_every, window and final_candidates must be positive".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        crate::evaluation::threshold_grid(self.grid_step)?;
        Ok(())
    }
}

/// One prompt/response pair in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub index: usize,
    pub kind: PromptKind,
    pub iteration: u32,
    pub batch_id: Option<usize>,
    pub seed: u64,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub batch_id: usize,
    pub hints: Hints,
    pub merged: Policy,
    pub calibrated: Policy,
    pub report: CalibrationReport,
    /// Policy after reflection; the calibrated, pruned policy when the
    /// reflection response had no usable rules.
    pub policy: Policy,
    pub reflection_fallback: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub iteration: u32,
    /// `(iteration, F_beta)` of each policy in the window.
    pub scores: Vec<(u32, f64)>,
    pub chosen: Policy,
    /// Set when the evaluator response was unusable and the best-scoring
    /// policy was taken instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub iteration: u32,
    pub policy: Policy,
    pub history: Vec<IterationRecord>,
    pub reviews: Vec<Review>,
    pub exchanges: Vec<Exchange>,
}

/// Everything an iteration reads besides the state.
pub struct TrainContext<'a> {
    pub cfg: &'a TrainingConfig,
    pub provider: &'a dyn CompletionProvider,
    pub vocabulary: Vocabulary,
    /// Unnormalized training records, used to render founder profiles.
    pub raw: Vec<FounderRecord>,
    pub transactions: Vec<Transaction>,
    /// Normalized records scored at reviews.
    pub review_set: Vec<FounderRecord>,
    pub seed: u64,
}

impl TrainContext<'_> {
    fn params(&self, kind: PromptKind, iteration: u32, k: usize) -> DecodingParams {
        DecodingParams {
            seed: derive_seed(self.seed, kind.as_str(), ((iteration as u64) << 20) | k as u64),
            ..self.cfg.decoding
        }
    }

    fn ask(&self, state: &mut TrainingState, prompt: Prompt, params: DecodingParams) -> Result<String, TrainError> {
        let iteration = prompt.iteration;
        let response = self
            .provider
            .complete(&prompt, &params)
            .map_err(|source| TrainError::Provider { iteration, source })?;
        log_exchange(state, &prompt, params.seed, &response);
        Ok(response)
    }

    pub fn calibration_seed(&self, iteration: u32) -> u64 {
        derive_seed(self.seed, "calibration", iteration as u64)
    }
}

fn log_exchange(state: &mut TrainingState, prompt: &Prompt, seed: u64, response: &str) {
    state.exchanges.push(Exchange {
        index: state.exchanges.len(),
        kind: prompt.kind,
        iteration: prompt.iteration,
        batch_id: prompt.batch_id,
        seed,
        prompt: prompt.text.clone(),
        response: response.to_string(),
    });
}

/// One refinement step over `batch` (indices into `ctx.raw`). On error the
/// input state is untouched.
pub fn run_iteration(
    state: &TrainingState,
    ctx: &TrainContext<'_>,
    batch: &[usize],
    batch_id: usize,
) -> Result<TrainingState, TrainError> {
    let mut next = state.clone();
    let iteration = state.iteration + 1;
    let cfg = ctx.cfg;
    let mut warnings = Vec::new();

    let jobs: Vec<(Prompt, DecodingParams)> = batch
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let r = &ctx.raw[i];
            (
                build_insight_prompt(r, r.label, Some(batch_id), iteration),
                ctx.params(PromptKind::Insight, iteration, k),
            )
        })
        .collect();
    let mut insights = Vec::with_capacity(jobs.len());
    for ((prompt, params), result) in jobs.iter().zip(complete_all(ctx.provider, &jobs, cfg.max_in_flight)) {
        let text = result.map_err(|source| TrainError::Provider { iteration, source })?;
        log_exchange(&mut next, prompt, params.seed, &text);
        insights.push(text);
    }

    let cal_seed = ctx.calibration_seed(iteration);
    let sample: Vec<Transaction> = draw_sample(&ctx.transactions, cfg.stats.sample_size, cal_seed)
        .into_iter()
        .cloned()
        .collect();
    let hints = mine_hints(&sample, &cfg.stats)?;

    let prompt = build_summary_prompt(&insights, &state.policy, &ctx.vocabulary, &hints, Some(batch_id), iteration);
    let response = ctx.ask(&mut next, prompt, ctx.params(PromptKind::Summarize, iteration, 0))?;
    let candidate = match parse_policy_response(&response, Some(&ctx.vocabulary)) {
        Ok(parsed) => {
            warnings.extend(parsed.warnings);
            parsed.policy
        }
        Err(_) => {
            warnings.push(format!("iteration {iteration}: summary had no usable rules"));
            Policy::default()
        }
    };
    let mut merged = state.policy.merged_with(&candidate);
    merged.id = format!("merged_{iteration}");
    merged.iteration = iteration;

    let (calibrated, report) = calibrate_policy(
        &merged,
        &ctx.transactions,
        cfg.stats.sample_size,
        cfg.stats.min_samples,
        cal_seed,
    )?;

    let prompt = build_reflection_prompt(&merged, &calibrated, &report, &hints, iteration);
    let response = ctx.ask(&mut next, prompt, ctx.params(PromptKind::Reflect, iteration, 0))?;
    let (mut policy, reflection_fallback) = match parse_policy_response(&response, Some(&ctx.vocabulary)) {
        Ok(parsed) => {
            warnings.extend(parsed.warnings);
            (parsed.policy, false)
        }
        Err(_) => {
            let msg = format!("iteration {iteration}: reflection had no usable rules; keeping calibrated policy");
            log::warn!("{msg}");
            warnings.push(msg);
            (prune_policy(&calibrated, &report)?.policy, true)
        }
    };
    policy.id = format!("iter_{iteration}");
    policy.iteration = iteration;

    next.iteration = iteration;
    next.policy = policy.clone();
    next.history.push(IterationRecord {
        iteration,
        batch_id,
        hints,
        merged,
        calibrated,
        report,
        policy,
        reflection_fallback,
        warnings,
    });
    Ok(next)
}

/// Scores the most recent policies and lets the provider pick the next one.
pub fn periodic_evaluation(state: &TrainingState, ctx: &TrainContext<'_>) -> Result<TrainingState, TrainError> {
    let cfg = ctx.cfg;
    if state.iteration == 0 || !state.iteration.is_multiple_of(cfg.eval_every) {
        return Err(TrainError::NotCheckpoint {
            iteration: state.iteration,
        });
    }
    let mut next = state.clone();
    let start = state.history.len().saturating_sub(cfg.window);
    let mut window = Vec::new();
    for rec in &state.history[start..] {
        let m = threshold_search(&rec.policy, &ctx.review_set, cfg.beta, cfg.grid_step, &cfg.scoring)?;
        window.push(WindowEntry {
            iteration: rec.iteration,
            policy: rec.policy.clone(),
            f_score: m.f_beta,
        });
    }
    let prompt = build_evaluation_prompt(&window, cfg.beta, state.iteration);
    let response = ctx.ask(&mut next, prompt, ctx.params(PromptKind::Evaluate, state.iteration, 0))?;
    let (mut chosen, fallback) = match parse_policy_response(&response, Some(&ctx.vocabulary)) {
        Ok(parsed) => (parsed.policy, false),
        Err(_) => {
            log::warn!("iteration {}: evaluator response unusable; taking best window policy", state.iteration);
            let best = window
                .iter()
                .max_by(|a, b| a.f_score.total_cmp(&b.f_score))
                .expect("window holds at least the current iteration");
            (best.policy.clone(), true)
        }
    };
    chosen.id = format!("review_{}", state.iteration);
    chosen.iteration = state.iteration;
    next.policy = chosen.clone();
    next.reviews.push(Review {
        iteration: state.iteration,
        scores: window.iter().map(|w| (w.iteration, w.f_score)).collect(),
        chosen,
        fallback,
    });
    Ok(next)
}

/// `k` iterations evenly spaced over `1..=max`, always including the last.
pub fn candidate_iterations(max: u32, k: usize) -> Vec<u32> {
    if max == 0 || k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![max];
    }
    if k as u32 >= max {
        return (1..=max).collect();
    }
    let mut out: Vec<u32> = (0..k)
        .map(|j| 1 + ((j as f64) * (max - 1) as f64 / (k - 1) as f64).round() as u32)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: u32,
    pub policy: Policy,
    pub metrics: MetricsReport,
    pub candidate_scores: Vec<(u32, f64)>,
    /// Every candidate scored zero; the latest one was taken.
    pub all_zero: bool,
}

/// Picks the candidate with the highest F_beta on `records`, preferring the
/// later iteration on ties.
pub fn select_final_policy(
    history: &[IterationRecord],
    candidates: &[u32],
    records: &[FounderRecord],
    cfg: &TrainingConfig,
) -> Result<Selection, TrainError> {
    let mut best: Option<(u32, &Policy, MetricsReport)> = None;
    let mut scores = Vec::new();
    for &c in candidates {
        let Some(rec) = history.iter().find(|r| r.iteration == c) else { continue };
        let m = threshold_search(&rec.policy, records, cfg.beta, cfg.grid_step, &cfg.scoring)?;
        scores.push((c, m.f_beta));
        if best.as_ref().is_none_or(|(_, _, b)| m.f_beta >= b.f_beta) {
            best = Some((c, &rec.policy, m));
        }
    }
    let (iteration, policy, metrics) = best.ok_or(TrainError::NoIterations)?;
    let all_zero = scores.iter().all(|(_, f)| *f == 0.0);
    if all_zero {
        log::warn!("every candidate policy scored F=0; selecting the latest, iteration {iteration}");
    }
    Ok(Selection {
        iteration,
        policy: policy.clone(),
        metrics,
        candidate_scores: scores,
        all_zero,
    })
}

/// What a scorer needs to apply a trained policy to new raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalArtifact {
    pub policy: Policy,
    pub thresholds: Thresholds,
    pub beta: f64,
    pub scoring: ScoringConfig,
    pub normalization: NormalizationTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub master: u64,
    pub split: u64,
    pub batches: Vec<u64>,
    pub calibration: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub partition: PartitionSpec,
    pub config: TrainingConfig,
    pub provider: String,
    pub seeds: SeedLog,
    pub final_policy: Policy,
    pub thresholds: Thresholds,
    pub selected_iteration: u32,
    pub selection: Selection,
    pub state: TrainingState,
    pub normalization: NormalizationTable,
    pub binarizer: Binarizer,
}

impl TrainingRun {
    pub fn final_artifact(&self) -> FinalArtifact {
        FinalArtifact {
            policy: self.final_policy.clone(),
            thresholds: self.thresholds,
            beta: self.config.beta,
            scoring: self.config.scoring,
            normalization: self.normalization.clone(),
        }
    }
}

/// Stratified 50/50 split of the validation fold into review and selection halves.
fn split_validation(records: &[FounderRecord], seed: u64) -> (Vec<FounderRecord>, Vec<FounderRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_review = vec![false; records.len()];
    for positive in [true, false] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_success() == positive).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..idx.len().div_ceil(2)] {
            in_review[i] = true;
        }
    }
    let (mut review, mut selection) = (Vec::new(), Vec::new());
    for (r, flag) in records.iter().zip(in_review) {
        if flag {
            review.push(r.clone());
        } else {
            selection.push(r.clone());
        }
    }
    (review, selection)
}

/// Trains on the partition's training folds, reviews and selects on its
/// validation fold. Only folds read through `view` are touched. With `out`,
/// artifacts are written there, including a partial state if a step fails.
pub fn train(
    view: &FoldView<'_>,
    partition: &PartitionSpec,
    cfg: &TrainingConfig,
    provider: &dyn CompletionProvider,
    seed: u64,
    out: Option<&Path>,
) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    partition.validate()?;
    let raw = view.folds(&partition.train_folds);
    if raw.is_empty() {
        return Err(DataError::EmptyTraining.into());
    }
    let raw_validation = view.fold(partition.validation_fold);
    let normalization = NormalizationTable::fit(&raw)?;
    let train_norm: Vec<FounderRecord> = raw.iter().map(|r| normalization.apply(r)).collect();
    let validation: Vec<FounderRecord> = raw_validation.iter().map(|r| normalization.apply(r)).collect();
    let binarizer = Binarizer::fit(&train_norm)?;
    let transactions = binarize(&train_norm, &binarizer);
    let split_seed = derive_seed(seed, "split", 0);
    let (review_set, selection_set) = split_validation(&validation, split_seed);
    if review_set.is_empty() || selection_set.is_empty() {
        return Err(DataError::Insufficient("validation fold too small to split".into()).into());
    }
    let vocabulary = Vocabulary::new(raw[0].features.keys().cloned().collect())?;

    let ctx = TrainContext {
        cfg,
        provider,
        vocabulary,
        raw,
        transactions,
        review_set,
        seed,
    };
    let mut seeds = SeedLog {
        master: seed,
        split: split_seed,
        batches: Vec::new(),
        calibration: Vec::new(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("config.json"), cfg)?;
    }

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut state = TrainingState::default();
    for i in 0..cfg.max_iterations as usize {
        if i >= batches.len() {
            let s = derive_seed(seed, "batches", seeds.batches.len() as u64);
            seeds.batches.push(s);
            batches.extend(sample_batches(&ctx.raw, cfg.batch_size, cfg.prevalence, s)?);
        }
        seeds.calibration.push(ctx.calibration_seed(i as u32 + 1));
        let step = run_iteration(&state, &ctx, &batches[i], i).and_then(|s| {
            if s.iteration % cfg.eval_every == 0 {
                periodic_evaluation(&s, &ctx)
            } else {
                Ok(s)
            }
        });
        match step {
            Ok(s) => state = s,
            Err(e) => {
                if let Some(dir) = out {
                    write_state(dir, &state, &seeds)?;
                }
                return Err(e);
            }
        }
        log::info!(
            "partition {partition} iteration {}: {} rules",
            state.iteration,
            state.policy.len()
        );
    }

    let candidates = candidate_iterations(cfg.max_iterations, cfg.final_candidates);
    let selection = select_final_policy(&state.history, &candidates, &selection_set, cfg)?;
    let run = TrainingRun {
        partition: partition.clone(),
        config: cfg.clone(),
        provider: provider.id().to_string(),
        seeds,
        final_policy: selection.policy.clone(),
        thresholds: selection.metrics.thresholds,
        selected_iteration: selection.iteration,
        selection,
        state,
        normalization,
        binarizer,
    };
    if let Some(dir) = out {
        write_run(dir, &run)?;
    }
    Ok(run)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), TrainError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_state(dir: &Path, state: &TrainingState, seeds: &SeedLog) -> Result<(), TrainError> {
    let policies = dir.join("policies");
    let calibration = dir.join("calibration");
    let prompts = dir.join("prompts");
    let responses = dir.join("responses");
    for d in [&policies, &calibration, &prompts, &responses] {
        fs::create_dir_all(d)?;
    }
    write_json(&dir.join("seeds.json"), seeds)?;
    for rec in &state.history {
        fs::write(policies.join(format!("policy_{:03}.txt", rec.iteration)), serialize_policy(&rec.policy))?;
        write_json(&calibration.join(format!("calibration_{:03}.json", rec.iteration)), &rec.report)?;
        write_json(&calibration.join(format!("hints_{:03}.json", rec.iteration)), &rec.hints)?;
    }
    for ex in &state.exchanges {
        let name = format!("{:05}_{}_{:03}.txt", ex.index, ex.kind, ex.iteration);
        fs::write(prompts.join(&name), &ex.prompt)?;
        fs::write(responses.join(&name), &ex.response)?;
    }
    write_json(&dir.join("reviews.json"), &state.reviews)?;
    Ok(())
}

fn write_run(dir: &Path, run: &TrainingRun) -> Result<(), TrainError> {
    write_state(dir, &run.state, &run.seeds)?;
    write_json(&dir.join("metrics.json"), &run.selection)?;
    write_json(&dir.join("final.json"), &run.final_artifact())?;
    fs::write(dir.join("final_policy.txt"), serialize_policy(&run.final_policy))?;
    Ok(())
}
