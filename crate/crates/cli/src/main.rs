use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use hivechat_core::event::{read_jsonl, write_jsonl, Event, NullSink};
use hivechat_core::orchestrator::{
    compute_metrics, Components, Orchestrator, OrchestratorConfig, Settings,
};
use hivechat_core::phase::PhaseConfig;
use hivechat_core::retrieval::{
    build_store, extract_pairs, read_pairs, write_pairs, ExtractionFilter,
};
use hivechat_core::reward::{
    estimate_misfire_params, expected_save, operating_points, sweep_thresholds, MisfireParams,
};
use hivechat_core::sim::{run_sim, selector_convergence_experiment, Scenario};
use hivechat_core::voter::{
    evaluate_scored, extract_training_labels, score_examples, train, LabeledExample, TrainConfig,
    VoteClassifierModel,
};
use hivechat_core::{Engine, RewardSchema, Timestamp, VectorTable};

#[derive(Parser)]
#[command(
    name = "hivechat",
    version,
    about = "Crowd and chatbot response orchestration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TableArgs {
    /// Word vectors in GloVe text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Dimension of the empty table used when no embeddings are given.
    #[arg(long, default_value_t = 50)]
    dim: usize,
}

impl TableArgs {
    fn load(&self) -> Result<VectorTable> {
        Ok(match &self.embeddings {
            Some(p) => VectorTable::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => VectorTable::new(self.dim),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run a scenario in virtual time.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Event log output (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Per-tick trace output (JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print metrics as CSV instead of JSON.
        #[arg(long)]
        csv: bool,
    },
    /// Train the vote classifier on labeled messages from logs.
    TrainVoter {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        /// Share of examples held out for the printed evaluation.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
    },
    /// Report per-class precision, recall and F1 of a trained model.
    EvalVoter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[command(flatten)]
        table: TableArgs,
        /// Defaults to the model's own threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Pick the confidence threshold that maximizes expected points saved.
    OptimizeThreshold {
        #[arg(long)]
        model: PathBuf,
        /// Logs with labeled messages for the operating curve.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Logs for misfire estimation; defaults to --log.
        #[arg(long = "misfire-log")]
        misfire_logs: Vec<PathBuf>,
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        p_misfire: Option<f64>,
        #[arg(long)]
        e_upvoted: Option<f64>,
        /// Write the chosen threshold back into the model file.
        #[arg(long)]
        write: bool,
    },
    /// Extract query-response pairs from logs.
    ExtractPairs {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Participant ids whose data must not be reused.
        #[arg(long, value_delimiter = ',')]
        block: Vec<String>,
    },
    /// Answer a query from a pair file by nearest-neighbour retrieval.
    Retrieve {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        table: TableArgs,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        query: String,
    },
    /// Score the selector's top-1 choices on a topic-tagged scenario.
    EvalSelector {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deployment metrics of a log.
    Metrics {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Print the averaged vector of a text.
    Embed {
        #[command(flatten)]
        table: TableArgs,
        text: String,
    },
    /// Inspect bot selection state.
    Selector {
        #[command(subcommand)]
        command: SelectorCommand,
    },
    /// Inspect reward ledgers.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
}

#[derive(Subcommand)]
enum SelectorCommand {
    /// Per-bot counts and priors after replaying a log.
    Dump {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        table: TableArgs,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Per-worker point totals as CSV.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<Vec<Event>>> {
    paths
        .iter()
        .map(|p| read_jsonl(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn labeled(logs: &[PathBuf], table: &VectorTable) -> Result<Vec<LabeledExample>> {
    let examples = extract_training_labels(&read_logs(logs)?, table)?;
    if examples.is_empty() {
        bail!("the logs contain no labeled messages");
    }
    Ok(examples)
}

#[derive(Serialize)]
struct TrainSummary {
    examples: usize,
    train: usize,
    holdout: usize,
    evaluation: Option<hivechat_core::voter::EvalReport>,
}

#[derive(Serialize)]
struct ThresholdSummary {
    chosen: hivechat_core::reward::OperatingPoint,
    expected_save: f64,
    misfire: MisfireParams,
    curve: Vec<(f64, f64, f64, f64)>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { config, listen } => {
            let mut cfg = match config {
                Some(p) => OrchestratorConfig::load(&p)?,
                None => OrchestratorConfig::default(),
            };
            if let Some(l) = listen {
                cfg.listen = l;
            }
            tokio::runtime::Runtime::new()?.block_on(hivechat_server::serve(cfg))?;
        }
        Command::Simulate {
            scenario,
            seed,
            log,
            trace,
            csv,
        } => {
            let s = load_scenario(&scenario, seed)?;
            let result = run_sim(&s)?;
            if let Some(p) = log {
                write_jsonl(&p, &result.events)?;
            }
            if let Some(p) = trace {
                write_text(&p, &serde_json::to_string_pretty(&result.ticks)?)?;
            }
            if csv {
                print!("{}", result.metrics.to_csv());
            } else {
                print_json(&result.metrics)?;
            }
        }
        Command::TrainVoter {
            logs,
            table,
            out,
            l2,
            epochs,
            learning_rate,
            seed,
            threshold,
            holdout,
        } => {
            if !(0.0..1.0).contains(&holdout) {
                bail!("--holdout must be in [0, 1)");
            }
            let table = table.load()?;
            let mut examples = labeled(&logs, &table)?;
            examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_hold = (examples.len() as f64 * holdout).round() as usize;
            let (held, fit) = examples.split_at(n_hold);
            let cfg = TrainConfig {
                l2_lambda: l2,
                epochs,
                learning_rate,
                seed,
                confidence_threshold: threshold,
                ..TrainConfig::default()
            };
            let model = train(fit, &cfg)?;
            model.save(&out)?;
            let evaluation = if held.is_empty() {
                None
            } else {
                Some(evaluate_scored(&score_examples(&model, held)?, threshold))
            };
            print_json(&TrainSummary {
                examples: examples.len(),
                train: fit.len(),
                holdout: held.len(),
                evaluation,
            })?;
        }
        Command::EvalVoter {
            model,
            logs,
            table,
            threshold,
        } => {
            let model = VoteClassifierModel::load(&model)?;
            let examples = labeled(&logs, &table.load()?)?;
            let t = threshold.unwrap_or(model.confidence_threshold);
            print_json(&evaluate_scored(&score_examples(&model, &examples)?, t))?;
        }
        Command::OptimizeThreshold {
            model: model_path,
            logs,
            misfire_logs,
            table,
            p_misfire,
            e_upvoted,
            write,
        } => {
            let mut model = VoteClassifierModel::load(&model_path)?;
            let table = table.load()?;
            let examples = labeled(&logs, &table)?;
            let points = operating_points(&score_examples(&model, &examples)?);
            let schema = RewardSchema::default();
            let misfire = match (p_misfire, e_upvoted) {
                (Some(p), Some(e)) => MisfireParams::new(p, e)?,
                (None, None) => {
                    let source = if misfire_logs.is_empty() {
                        &logs
                    } else {
                        &misfire_logs
                    };
                    estimate_misfire_params(
                        &model,
                        &read_logs(source)?,
                        &table,
                        &PhaseConfig::default().weights,
                    )?
                }
                _ => bail!("give both --p-misfire and --e-upvoted, or neither"),
            };
            let chosen = sweep_thresholds(&points, &schema, &misfire)?;
            let curve = points
                .iter()
                .map(|p| {
                    (
                        p.threshold,
                        p.tpr,
                        p.fpr,
                        expected_save(p.tpr, p.fpr, &schema, &misfire),
                    )
                })
                .collect();
            if write {
                model.confidence_threshold = chosen.threshold;
                model.save(&model_path)?;
            }
            print_json(&ThresholdSummary {
                chosen,
                expected_save: expected_save(chosen.tpr, chosen.fpr, &schema, &misfire),
                misfire,
                curve,
            })?;
        }
        Command::ExtractPairs { logs, out, block } => {
            let filter = ExtractionFilter {
                blocked_ids: block.into_iter().collect(),
            };
            let mut pairs = Vec::new();
            for log in read_logs(&logs)? {
                pairs.extend(extract_pairs(&log, &filter)?);
            }
            match out {
                Some(p) => {
                    let file = fs::File::create(&p)?;
                    write_pairs(&pairs, io::BufWriter::new(file))?;
                    eprintln!("{} pairs written to {}", pairs.len(), p.display());
                }
                None => write_pairs(&pairs, io::stdout().lock())?,
            }
        }
        Command::Retrieve {
            pairs,
            table,
            k,
            seed,
            query,
        } => {
            let table = table.load()?;
            let built = build_store(read_pairs(&pairs)?, &table);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match built.store.retrieve_text(&query, &table, k, &mut rng) {
                Some(reply) => println!("{reply}"),
                None => bail!("no pair could be retrieved for that query"),
            }
        }
        Command::EvalSelector { scenario, seed } => {
            let s = load_scenario(&scenario, seed)?;
            let (report, _) = selector_convergence_experiment(&s)?;
            print_json(&report)?;
        }
        Command::Metrics { logs, csv } => {
            let events: Vec<Event> = read_logs(&logs)?.into_iter().flatten().collect();
            let report = compute_metrics(&events, &RewardSchema::default())?;
            if csv {
                print!("{}", report.to_csv());
            } else {
                print_json(&report)?;
            }
        }
        Command::Embed { table, text } => {
            print_json(&table.load()?.embed(&text))?;
        }
        Command::Selector {
            command: SelectorCommand::Dump { log, table },
        } => {
            let events = read_jsonl(&log)?;
            let orch = Orchestrator::resume(
                &events,
                RewardSchema::default(),
                Components::without_bots(Arc::new(table.load()?)),
                Settings::default(),
                Box::new(NullSink),
                Timestamp::ZERO,
            )?;
            print_json(&orch.selector().summaries())?;
        }
        Command::Ledger {
            command: LedgerCommand::Export { log, out },
        } => {
            let schema = RewardSchema::default();
            let engine = Engine::replay(schema.clone(), &read_jsonl(&log)?)?;
            let csv = engine.ledger().to_csv(&schema);
            match out {
                Some(p) => write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
            eprintln!(
                "{} grants, {} points",
                engine.ledger().grants().len(),
                engine.ledger().total_points()
            );
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
