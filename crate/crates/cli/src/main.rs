use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cfsim::pipeline::{Pipeline, RunConfig, Stage, StageOutcome};
use cfsim_annotate::{load_qualification, load_tasks, router, AnnotationService, ServiceConfig, SystemClock};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cfsim",
    version,
    about = "Counterfactual simulatability of natural-language explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Explanations,
    Counterfactuals,
    Simulate,
    Outputs,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or all of them.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Print the metric report of a finished run.
    Report {
        /// Run directory (`<store_dir>/<run_id>`).
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Sanity checks.
    Sanity {
        #[command(subcommand)]
        check: SanityCheck,
    },
    /// Agreement of human annotators and the LLM simulator.
    Iaa {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        human_export: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Correlate simulation precision with plausibility ratings.
    Correlate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        plausibility: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Write annotation tasks for a run as JSON lines.
    Tasks {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve annotation tasks over HTTP.
    Serve {
        /// Task file written by `cfsim tasks`; may be given more than once.
        #[arg(long, required = true)]
        tasks: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = cfsim_annotate::DEFAULT_REDUNDANCY)]
        redundancy: usize,
        #[arg(long, default_value_t = cfsim_annotate::DEFAULT_TTL_MINUTES)]
        ttl_minutes: i64,
        /// Qualification set; the bundled 11 items when omitted.
        #[arg(long)]
        qualification: Option<PathBuf>,
        #[arg(long, default_value_t = cfsim_annotate::DEFAULT_PASS_THRESHOLD)]
        pass_threshold: usize,
        /// Environment variable holding the shared secret.
        #[arg(long, default_value = "CFSIM_ANNOTATION_SECRET")]
        secret_env: String,
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Directory with the annotation UI bundle.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SanityCheck {
    /// Compare normal post-hoc explanations with ones forced to argue for
    /// the other label.
    Forced {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// Opens an existing run from its directory, using the configuration
/// recorded in its store.
fn open_run(run: &Path) -> Result<Pipeline> {
    let run_id = run
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{} does not name a run directory", run.display()))?;
    let store_dir = run.parent().unwrap_or(Path::new("."));
    let mut cfg = Pipeline::stored_config(store_dir, run_id)?;
    cfg.store_dir = store_dir.to_path_buf();
    Ok(Pipeline::open(cfg)?)
}

fn print_outcomes(outcomes: &[StageOutcome]) -> bool {
    let mut clean = true;
    for o in outcomes {
        println!(
            "{:<16} written {:>4}  skipped {:>4}  failed {:>4}",
            o.stage.name(),
            o.written,
            o.skipped,
            o.failures.len()
        );
        for f in &o.failures {
            eprintln!("  {}: {}", f.item, f.error);
        }
        clean &= o.failures.is_empty();
    }
    clean
}

async fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, stage } => {
            let pipeline = Pipeline::open(RunConfig::load(&config)?)?;
            let outcomes = match stage {
                StageArg::All => pipeline.run_all().await?,
                StageArg::Explanations => vec![pipeline.run_stage(Stage::Explanations).await?],
                StageArg::Counterfactuals => vec![pipeline.run_stage(Stage::Counterfactuals).await?],
                StageArg::Simulate => vec![pipeline.run_stage(Stage::Simulate).await?],
                StageArg::Outputs => vec![pipeline.run_stage(Stage::Outputs).await?],
            };
            let clean = print_outcomes(&outcomes);
            println!(
                "provider calls: {}  run: {}",
                pipeline.gateway().provider_calls(),
                pipeline.config().run_dir().display()
            );
            Ok(clean)
        }
        Command::Report { run, format } => {
            let report = open_run(&run)?.report().await?;
            match format {
                Format::Json => print!("{}", report.to_json()),
                Format::Table => print!("{}", report.render_table()),
            }
            Ok(true)
        }
        Command::Sanity {
            check: SanityCheck::Forced { config, format },
        } => {
            let pipeline = Pipeline::open(RunConfig::load(&config)?)?;
            let outcomes = pipeline.run_forced().await?;
            let clean = print_outcomes(&outcomes);
            let report = pipeline.report().await?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report.tables.forced_vs_normal)?),
                Format::Table => print!("{}", report.render_table()),
            }
            Ok(clean)
        }
        Command::Iaa {
            run,
            human_export,
            format,
        } => {
            let pipeline = open_run(&run)?;
            let report = pipeline.iaa_report(&human_export)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Format::Table => {
                    println!(
                        "{} items with full annotation, {} skipped",
                        report.items, report.items_skipped
                    );
                    print!("{}", report.table.render(&pipeline.dataset().id));
                }
            }
            Ok(true)
        }
        Command::Correlate {
            run,
            plausibility,
            format,
        } => {
            let corr = open_run(&run)?.correlation_report(&plausibility).await?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&corr)?),
                Format::Table => print!("{}", corr.render()),
            }
            Ok(true)
        }
        Command::Tasks { run, out } => {
            let tasks = open_run(&run)?.annotation_tasks();
            let mut text = String::new();
            for t in &tasks {
                text.push_str(&serde_json::to_string(t)?);
                text.push('\n');
            }
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
            Ok(true)
        }
        Command::Serve {
            tasks,
            addr,
            redundancy,
            ttl_minutes,
            qualification,
            pass_threshold,
            secret_env,
            journal,
            static_dir,
        } => {
            if ttl_minutes <= 0 {
                bail!("--ttl-minutes must be positive");
            }
            let mut cfg = ServiceConfig {
                redundancy,
                reservation_ttl: chrono::Duration::minutes(ttl_minutes),
                pass_threshold,
                journal,
                ..ServiceConfig::default()
            };
            if let Some(path) = qualification {
                cfg.qualification = load_qualification(&path)?;
            }
            let secret = std::env::var(&secret_env).ok();
            if secret.is_none() {
                eprintln!("warning: {secret_env} is not set; the API accepts unauthenticated requests");
            }
            let service = AnnotationService::new(cfg, Arc::new(SystemClock))?;
            for path in &tasks {
                let n = service.add_tasks(load_tasks(path)?)?;
                println!("loaded {n} tasks from {}", path.display());
            }
            cfsim_annotate::serve(addr, router(Arc::new(service), secret, static_dir)).await?;
            Ok(true)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
