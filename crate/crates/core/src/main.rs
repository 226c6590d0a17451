use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdoh_pipeline::annotator::TraceRecord;
use sdoh_pipeline::config::{build_gateway, BuiltGateway, PipelineConfig};
use sdoh_pipeline::dataset::{self, Split};
use sdoh_pipeline::ndjson;
use sdoh_pipeline::optimizer::OptimizerConfig;
use sdoh_pipeline::pipeline::{self, LabelSet, PipelineError, VerdictLine};
use sdoh_pipeline::program::Step;
use sdoh_pipeline::review;
use sdoh_pipeline::taxonomy::SdohLabel;

#[derive(Parser)]
#[command(name = "sdoh", version, about = "SDoH note augmentation, annotation and evaluation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Extract social history from raw notes and build the note pool.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        work: PathBuf,
    },
    /// Open an augmentation session for a label and generate its first batch.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        label: SdohLabel,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Serve the review API over a work directory, or apply a verdict file.
    ReviewServe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        work: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// NDJSON verdicts `{item_id, passed, feedback?, idempotency_key?}`.
        #[arg(long)]
        apply: Option<PathBuf>,
        /// Exit after applying instead of serving.
        #[arg(long)]
        once: bool,
    },
    /// Run quality control over human-accepted notes.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        work: PathBuf,
        #[arg(long, default_value = "sft")]
        split: Split,
        /// Directory holding optimized program files.
        #[arg(long)]
        programs: Option<PathBuf>,
    },
    /// Search few-shot demos for one cascade step.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        step: Step,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        candidates: usize,
        #[arg(long, default_value_t = 8)]
        max_demos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the annotation cascade over records.
    Annotate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Score cascade predictions against gold records.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        golds: PathBuf,
        #[arg(long, default_value = "all")]
        labelset: LabelSet,
        /// Report path; a rendered table goes next to it as `.txt`.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Export records as chat-format fine-tuning examples.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        sft: bool,
        #[arg(long)]
        with_reasoning: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count records per label, split and source.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn setup(common: &Common) -> Result<(PipelineConfig, BuiltGateway), PipelineError> {
    let config = PipelineConfig::load(&common.config)?;
    let gateway = build_gateway(&config.gateway)?;
    Ok((config, gateway))
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json value"));
}

fn run_review(
    gateway: Arc<sdoh_pipeline::gateway::Gateway>,
    work: &Path,
    addr: &str,
    apply: Option<&Path>,
    once: bool,
) -> Result<(), PipelineError> {
    let service = pipeline::review_service(work, gateway)?;
    if let Some(path) = apply {
        let verdicts: Vec<VerdictLine> = ndjson::read(path)?;
        let advanced = pipeline::apply_verdicts(&service, work, &verdicts)?;
        let (state, _) = service.snapshot();
        print(json!({ "applied": verdicts.len(), "advanced": advanced, "state": pipeline::session_summary(&state) }));
    }
    if once {
        return Ok(());
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Input(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| PipelineError::Input(format!("bind {addr}: {e}")))?;
        tracing::info!("review API listening on {addr}");
        axum::serve(listener, review::router(service.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| PipelineError::Input(e.to_string()))
    })?;
    pipeline::sync_batch_files(&service, work)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest { common, input, work } => {
            let config = PipelineConfig::load(&common.config)?;
            let report = pipeline::ingest(&config, &input, &work)?;
            print(json!({ "n_notes": report.n_notes, "with_social_history": report.with_social_history }));
        }
        Command::Augment {
            common,
            work,
            label,
            batch,
        } => {
            let (config, gw) = setup(&common)?;
            let batch_id = pipeline::augment(&config, &work, label, batch, &gw.gateway)?;
            print(json!({ "batch_id": batch_id, "file": work.join("batches").join(format!("{batch_id}.ndjson")) }));
        }
        Command::ReviewServe {
            common,
            work,
            addr,
            apply,
            once,
        } => {
            let (_, gw) = setup(&common)?;
            run_review(gw.gateway, &work, &addr, apply.as_deref(), once)?;
        }
        Command::Validate {
            common,
            work,
            split,
            programs,
        } => {
            let (config, gw) = setup(&common)?;
            let taxonomy = pipeline::load_taxonomy(&config)?;
            let programs = pipeline::load_programs(&taxonomy, programs.as_deref())?;
            let summary = pipeline::validate(&config, &work, &programs, split, &gw.gateway)?;
            print(serde_json::to_value(summary).expect("summary"));
        }
        Command::Optimize {
            common,
            records,
            step,
            out,
            candidates,
            max_demos,
            seed,
        } => {
            let (config, gw) = setup(&common)?;
            let records = dataset::load_records(&records)?;
            let opt = OptimizerConfig {
                num_candidates: candidates,
                max_demos,
                seed,
            };
            let summary = pipeline::optimize(&config, &records, step, &opt, &out, &gw.gateway)?;
            print(summary);
        }
        Command::Annotate {
            common,
            input,
            out,
            programs,
            runs,
        } => {
            let (config, gw) = setup(&common)?;
            let taxonomy = pipeline::load_taxonomy(&config)?;
            let programs = pipeline::load_programs(&taxonomy, programs.as_deref())?;
            let records = dataset::load_records(&input)?;
            let traces = pipeline::annotate(&config, &records, &programs, runs, &gw.gateway)?;
            ndjson::write(&out, &traces)?;
            let failed = traces.iter().filter(|t| t.error.is_some()).count();
            print(json!({ "traces": traces.len(), "failed": failed }));
        }
        Command::Evaluate {
            preds,
            golds,
            labelset,
            out,
        } => {
            let traces: Vec<TraceRecord> = ndjson::read(&preds)?;
            let golds = dataset::load_records(&golds)?;
            let report = pipeline::evaluate(&traces, &golds, labelset)?;
            pipeline::write_report(&report, &out)?;
            print!("{}", report.render_table());
        }
        Command::Export {
            records,
            sft,
            with_reasoning,
            seed,
            out,
        } => {
            if !sft {
                return Err(PipelineError::Input("only --sft export is supported".into()));
            }
            let records = dataset::load_records(&records)?;
            let manifest = pipeline::export(&records, with_reasoning, seed, &out)?;
            print(json!({ "n_records": manifest.n_records, "with_reasoning": with_reasoning }));
        }
        Command::Stats { records, json } => {
            let records = dataset::load_records(&records)?;
            let stats = dataset::stats(&records);
            if json {
                print(serde_json::to_value(&stats).expect("stats"));
            } else {
                print!("{}", stats.render_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
