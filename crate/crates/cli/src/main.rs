//! `llmar` command-line entry point.

mod config;
mod error;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use llmar::dataset::{generate_synthetic, load_dataset, write_dataset, FoldedDataset, FounderRecord, NormalizationTable, Vocabulary};
use llmar::evaluation::{cross_validate, evaluate_policy, run_partition, threshold_search, score_records, Thresholds};
use llmar::inference::{infer, InferenceConfig, ProbProgram};
use llmar::policy::{parse_policy, serialize_policy, Policy};
use llmar::statistics::{binarize, calibrate_policy, mine_hints, mine_rules, Binarizer};
use llmar::training::FinalArtifact;

use crate::config::{ProviderKind, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "llmar", version, about = "Train and apply probabilistic rule policies for founder-success prediction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    /// Worker threads for scoring and cross-validation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Machine-readable output, including errors.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic founder dataset with planted rules.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        prevalence: Option<f64>,
    },
    /// Mine class association rules and report the hint rules.
    Mine {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report every rule above the confidence floors, not just the hints.
        #[arg(long)]
        all: bool,
    },
    /// Replace a policy's probabilities with empirical frequencies.
    Calibrate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Evaluate a probabilistic logic program.
    Infer {
        #[arg(long)]
        program: PathBuf,
        /// Force Monte Carlo estimation with this many samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a policy on one cross-validation partition.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Partition index in 0..12.
        #[arg(long)]
        partition: Option<usize>,
    },
    /// Train and test on all 12 partitions.
    Crossval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score founders with a policy and thresholds.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Precision, recall and F-beta of a policy on labeled founders.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Search the threshold grid instead of using fixed thresholds.
        #[arg(long)]
        search: bool,
    },
    /// F-beta of a precision/recall pair, both in percent.
    Fscore {
        #[arg(long)]
        precision: f64,
        #[arg(long)]
        recall: f64,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Run directory holding final.json from `train`.
    #[arg(long, conflicts_with = "policy")]
    run: Option<PathBuf>,
    /// Policy file; feature values are then taken as already normalized.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    theta_success: Option<f64>,
    #[arg(long)]
    theta_failure: Option<f64>,
    /// Spread rule probabilities over [0.1, 0.9] before scoring (policy files only).
    #[arg(long)]
    rescale: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let json = cli.global.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                println!("{}", serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_flags(
        cli.global.seed,
        cli.global.provider,
        cli.global.beta,
        cli.global.grid_step,
        cli.global.jobs,
        cli.global.out.clone(),
    );
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let json = cli.global.json;
    match cli.command {
        Command::Synth { n, prevalence } => cmd_synth(cfg, n, prevalence, json),
        Command::Mine { data, all } => {
            cfg.set_data(data);
            cmd_mine(&cfg, all, json)
        }
        Command::Calibrate { data, policy } => {
            cfg.set_data(data);
            cmd_calibrate(&cfg, &policy, json)
        }
        Command::Infer { program, samples } => cmd_infer(&program, samples, cfg.seed, json),
        Command::Train { data, partition } => {
            cfg.set_data(data);
            if let Some(p) = partition {
                cfg.partition = p;
            }
            cmd_train(&cfg, json)
        }
        Command::Crossval { data } => {
            cfg.set_data(data);
            cmd_crossval(&cfg, json)
        }
        Command::Predict { model, data } => {
            cfg.set_data(data);
            cmd_predict(&cfg, &model, json)
        }
        Command::Eval { model, data, search } => {
            cfg.set_data(data);
            cmd_eval(&cfg, &model, search, json)
        }
        Command::Fscore { precision, recall } => {
            let f = llmar::evaluation::f_beta(cfg.training.beta, precision / 100.0, recall / 100.0) * 100.0;
            emit(json, &serde_json::json!({ "beta": cfg.training.beta, "precision": precision, "recall": recall, "f_beta": f }), || {
                format!("F{} = {f:.1}\n", cfg.training.beta)
            })
        }
    }
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let text = if json {
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))? + "\n"
    } else {
        human()
    };
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(path, text + "\n")
}

fn load_records(cfg: &RunConfig) -> Result<(Vec<FounderRecord>, Vocabulary), CliError> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Config("no dataset given (--data or config `data`)".into()))?;
    let vocab = match &cfg.vocabulary {
        Some(names) => Vocabulary::new(names.clone())?,
        None => Vocabulary::from_csv_header(path)?,
    };
    let records = load_dataset(path, &vocab)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok((records, vocab))
}

fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_policy(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_synth(cfg: RunConfig, n: Option<usize>, prevalence: Option<f64>, json: bool) -> Result<(), CliError> {
    let out = cfg.out.clone().ok_or_else(|| CliError::Config("synth needs --out FILE".into()))?;
    let mut gen = cfg.generator.clone().unwrap_or_else(|| llmar::dataset::GeneratorConfig::default_founders(6000));
    if let Some(n) = n {
        gen.n = n;
    }
    if let Some(p) = prevalence {
        gen.prevalence = p;
    }
    let data = generate_synthetic(&gen, cfg.seed)?;
    let vocab = gen.vocabulary()?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data.records, &vocab)?;
    let positives = data.records.iter().filter(|r| r.is_success()).count();
    let mut replay = cfg.clone();
    replay.generator = Some(gen.clone());
    write_file(&out, buf)?;
    write_json(&meta_path(&out), &serde_json::json!({ "config": replay, "dataset": data, "positives": positives }))?;
    emit(json, &serde_json::json!({ "path": out, "records": data.records.len(), "positives": positives }), || {
        format!("wrote {} records ({positives} positive) to {}\n", data.records.len(), out.display())
    })
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn prepared_transactions(records: &[FounderRecord]) -> Result<Vec<llmar::statistics::Transaction>, CliError> {
    let table = NormalizationTable::fit(records)?;
    let normalized: Vec<FounderRecord> = records.iter().map(|r| table.apply(r)).collect();
    let binarizer = Binarizer::fit(&normalized)?;
    Ok(binarize(&normalized, &binarizer))
}

fn cmd_mine(cfg: &RunConfig, all: bool, json: bool) -> Result<(), CliError> {
    let (records, _) = load_records(cfg)?;
    let tx = prepared_transactions(&records)?;
    let stats = &cfg.training.stats;
    let (success, failure) = if all {
        let floor = stats.min_confidence_success.min(stats.min_confidence_failure);
        let rules = mine_rules(&tx, stats.min_support, floor, stats.max_len)?;
        let (s, f): (Vec<_>, Vec<_>) = rules.into_iter().partition(|r| r.consequent == llmar::Direction::Success);
        (
            s.into_iter().filter(|r| r.confidence >= stats.min_confidence_success).collect(),
            f.into_iter().filter(|r| r.confidence >= stats.min_confidence_failure).collect(),
        )
    } else {
        let hints = mine_hints(&tx, stats)?;
        (hints.success, hints.failure)
    };
    let hints = llmar::statistics::Hints { success, failure };
    if let Some(out) = &cfg.out {
        write_json(&out.join("hints.json"), &hints)?;
        write_json(&out.join("run_config.json"), cfg)?;
    }
    emit(json, &hints, || {
        let mut s = String::new();
        for (title, rules) in [("Success rules", &hints.success), ("Failure rules", &hints.failure)] {
            s.push_str(&format!("{title}:\n"));
            s.push_str(&format!("  {:<60} {:>8} {:>10} {:>6}\n", "body", "support", "confidence", "count"));
            for r in rules {
                s.push_str(&format!("  {:<60} {:>8.3} {:>10.3} {:>6}\n", r.body_text(), r.support, r.confidence, r.count));
            }
        }
        s
    })
}

fn cmd_calibrate(cfg: &RunConfig, policy_path: &Path, json: bool) -> Result<(), CliError> {
    let (records, _) = load_records(cfg)?;
    let policy = load_policy(policy_path)?;
    let tx = prepared_transactions(&records)?;
    let stats = &cfg.training.stats;
    let (calibrated, report) = calibrate_policy(&policy, &tx, stats.sample_size, stats.min_samples, cfg.seed)?;
    if let Some(out) = &cfg.out {
        write_file(&out.join("calibrated_policy.txt"), serialize_policy(&calibrated))?;
        write_json(&out.join("calibration.json"), &report)?;
        write_json(&out.join("run_config.json"), cfg)?;
    }
    emit(json, &serde_json::json!({ "policy": serialize_policy(&calibrated), "report": report }), || {
        llmar::llm::calibrated_statements(&calibrated) + "\n"
    })
}

fn cmd_infer(program: &Path, samples: Option<usize>, seed: u64, json: bool) -> Result<(), CliError> {
    let text = fs::read_to_string(program).map_err(|e| CliError::Data(format!("{}: {e}", program.display())))?;
    let program = ProbProgram::parse(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let mut icfg = InferenceConfig {
        seed,
        ..Default::default()
    };
    if let Some(n) = samples {
        icfg.exact_limit = 0;
        icfg.samples = n;
    }
    let res = infer(&program, &icfg).map_err(|e| CliError::Data(e.to_string()))?;
    emit(json, &res, || format!("p_success = {}\np_failure = {}\n", res.p_success, res.p_failure))
}

fn folded(cfg: &RunConfig) -> Result<FoldedDataset, CliError> {
    let (records, _) = load_records(cfg)?;
    Ok(FoldedDataset::new(records, cfg.n_folds, llmar::derive_seed(cfg.seed, "folds", 0))?)
}

fn cmd_train(cfg: &RunConfig, json: bool) -> Result<(), CliError> {
    let data = folded(cfg)?;
    let partitions = llmar::dataset::enumerate_partitions(cfg.n_folds)?;
    let partition = partitions
        .get(cfg.partition)
        .ok_or_else(|| CliError::Config(format!("partition {} out of range 0..{}", cfg.partition, partitions.len())))?;
    let provider = cfg.provider()?;
    if let Some(out) = &cfg.out {
        write_json(&out.join("run_config.json"), cfg)?;
    }
    let seed = llmar::derive_seed(cfg.seed, "partition", cfg.partition as u64);
    let (row, run) = run_partition(&data, partition, &cfg.training, provider.as_ref(), seed, cfg.out.as_deref())?;
    if let Some(out) = &cfg.out {
        write_json(&out.join("test_metrics.json"), &row.metrics)?;
    }
    emit(json, &row, || {
        format!(
            "partition {}\nselected iteration {}\nthresholds: success > {:.2}, failure < {:.2}\n\n{}\ntest precision {:.1}  recall {:.1}  F{} {:.1}\n",
            row.partition,
            run.selected_iteration,
            run.thresholds.theta_success,
            run.thresholds.theta_failure,
            serialize_policy(&run.final_policy),
            row.metrics.precision * 100.0,
            row.metrics.recall * 100.0,
            row.metrics.beta,
            row.metrics.f_beta * 100.0
        )
    })
}

fn cmd_crossval(cfg: &RunConfig, json: bool) -> Result<(), CliError> {
    let data = folded(cfg)?;
    let provider = cfg.provider()?;
    if let Some(out) = &cfg.out {
        write_json(&out.join("run_config.json"), cfg)?;
    }
    let (report, _) = cross_validate(&data, &cfg.training, provider.as_ref(), cfg.seed, cfg.out.as_deref())?;
    emit(json, &report, || report.render_table())
}

struct Model {
    policy: Policy,
    thresholds: Thresholds,
    scoring: llmar::evaluation::ScoringConfig,
    normalization: Option<NormalizationTable>,
}

fn load_model(cfg: &RunConfig, args: &ModelArgs) -> Result<Model, CliError> {
    let mut model = match (&args.run, &args.policy) {
        (Some(dir), _) => {
            let path = dir.join("final.json");
            let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let art: FinalArtifact =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Model {
                policy: art.policy,
                thresholds: art.thresholds,
                scoring: art.scoring,
                normalization: Some(art.normalization),
            }
        }
        (None, Some(path)) => Model {
            policy: load_policy(path)?,
            thresholds: Thresholds {
                theta_success: 0.5,
                theta_failure: 0.5,
            },
            scoring: llmar::evaluation::ScoringConfig {
                inference: cfg.training.scoring.inference,
                rescale: args.rescale,
            },
            normalization: None,
        },
        (None, None) => return Err(CliError::Config("give --run DIR or --policy FILE".into())),
    };
    if let Some(t) = args.theta_success {
        model.thresholds.theta_success = t;
    }
    if let Some(t) = args.theta_failure {
        model.thresholds.theta_failure = t;
    }
    model.scoring.inference.seed = cfg.seed;
    Ok(model)
}

fn model_records(cfg: &RunConfig, model: &Model) -> Result<Vec<FounderRecord>, CliError> {
    let (records, _) = load_records(cfg)?;
    Ok(match &model.normalization {
        Some(table) => records.iter().map(|r| table.apply(r)).collect(),
        None => records,
    })
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    p_success: f64,
    p_failure: f64,
    prediction: u8,
}

fn cmd_predict(cfg: &RunConfig, args: &ModelArgs, json: bool) -> Result<(), CliError> {
    let model = load_model(cfg, args)?;
    let records = model_records(cfg, &model)?;
    let scores = score_records(&model.policy, &records, &model.scoring)?;
    let predictions: Vec<Prediction> = records
        .iter()
        .zip(&scores)
        .map(|(r, s)| Prediction {
            id: r.id.clone(),
            p_success: s.p_success,
            p_failure: s.p_failure,
            prediction: (s.p_success > model.thresholds.theta_success && s.p_failure < model.thresholds.theta_failure) as u8,
        })
        .collect();
    let mut csv_text = String::from("id,p_success,p_failure,prediction\n");
    for p in &predictions {
        csv_text.push_str(&format!("{},{},{},{}\n", p.id, p.p_success, p.p_failure, p.prediction));
    }
    if let Some(out) = &cfg.out {
        write_file(&out.join("predictions.csv"), &csv_text)?;
        write_json(&out.join("run_config.json"), cfg)?;
    }
    emit(json, &predictions, || csv_text.clone())
}

fn cmd_eval(cfg: &RunConfig, args: &ModelArgs, search: bool, json: bool) -> Result<(), CliError> {
    let model = load_model(cfg, args)?;
    let records = model_records(cfg, &model)?;
    let beta = cfg.training.beta;
    let report = if search {
        threshold_search(&model.policy, &records, beta, cfg.training.grid_step, &model.scoring)?
    } else {
        evaluate_policy(&model.policy, &records, model.thresholds, beta, &model.scoring)?
    };
    if let Some(out) = &cfg.out {
        write_json(&out.join("metrics.json"), &report)?;
        write_json(&out.join("run_config.json"), cfg)?;
    }
    emit(json, &report, || {
        format!(
            "thresholds: success > {:.2}, failure < {:.2}\ntp {}  fp {}  fn {}  tn {}\nprecision {:.1}  recall {:.1}  F{} {:.1}\n",
            report.thresholds.theta_success,
            report.thresholds.theta_failure,
            report.tp,
            report.fp,
            report.fn_,
            report.tn,
            report.precision * 100.0,
            report.recall * 100.0,
            beta,
            report.f_beta * 100.0
        )
    })
}
