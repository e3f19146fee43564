use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Parser, Subcommand};
use icc_core::embedding_store::{read_name_list, LabelCatalog};
use icc_core::eval_harness::{
    ingest_embeddings, read_image_entries, render_table, write_report, EvalConfig, EvalContext,
};
use icc_core::scorer_gateway::{conformance, server, ClientOptions, Gateway, SyntheticBackend};
use icc_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "icc", version, about = "In-context image classification runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy and shot count, then write the report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Backend endpoint: `synthetic` or `host:port`.
        #[arg(long, env = "ICC_BACKEND")]
        backend: Option<String>,
        /// Record per-image failures instead of aborting the run.
        #[arg(long)]
        skip_errors: bool,
        /// Report path; the accuracy table is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        desc_cache: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Embed images and class names through a backend into a store file pair.
    Embed {
        #[arg(long, env = "ICC_BACKEND")]
        backend: String,
        /// JSON lines of `{id, label, path}`.
        #[arg(long)]
        images: PathBuf,
        /// Class names, one per line.
        #[arg(long)]
        labels: PathBuf,
        /// Output prefix; writes `<prefix>.manifest.jsonl` and `<prefix>.emb`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "{label}")]
        label_template: String,
    },
    /// Generate visual descriptions for each class into a cache file.
    Describe {
        /// Eval config supplying the store, support split and prompt settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "ICC_BACKEND")]
        backend: Option<String>,
    },
    /// Serve the deterministic synthetic backend over TCP.
    ServeSynthetic {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Optional eval config whose synthetic settings are used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a backend against the protocol fixtures.
    Conformance {
        #[arg(long, env = "ICC_BACKEND")]
        backend: String,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = run(cli.command);
    eprintln!("wall clock: {:.2}s", started.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Backend) => 3,
        _ => 1,
    }
}

fn load_config(path: &Path, backend: Option<String>) -> anyhow::Result<EvalConfig> {
    let mut cfg = EvalConfig::load(path)?;
    if let Some(b) = backend {
        cfg.backend = b;
    }
    Ok(cfg)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Eval {
            config,
            backend,
            skip_errors,
            out,
            desc_cache,
            workers,
        } => {
            let mut cfg = load_config(&config, backend)?;
            cfg.skip_errors |= skip_errors;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if desc_cache.is_some() {
                cfg.desc_cache = desc_cache;
            }
            let out = out.or_else(|| cfg.output.clone());
            let report = EvalContext::load(cfg)?.run_all()?;
            print!("{}", render_table(&report));
            for r in report.runs.iter().filter(|r| r.errors > 0) {
                eprintln!("{} {}-shot: {} images failed", r.strategy, r.shots, r.errors);
            }
            if let Some(path) = out {
                write_report(&report, &path)?;
                eprintln!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Embed {
            backend,
            images,
            labels,
            out,
            label_template,
        } => {
            let gateway = Gateway::from_endpoint(&backend, &Default::default(), ClientOptions::default());
            let entries = read_image_entries(&images)?;
            let classes = read_name_list(&labels)?;
            let (manifest, matrix) = ingest_embeddings(&gateway, &entries, &classes, &label_template, &out)?;
            println!("{}\n{}", manifest.display(), matrix.display());
            Ok(())
        }
        Command::Describe {
            config,
            labels,
            out,
            backend,
        } => {
            let mut cfg = load_config(&config, backend)?;
            cfg.desc_cache = Some(out.clone());
            let ctx = EvalContext::load(cfg)?;
            let catalog = LabelCatalog::load(&ctx.store, &labels)?;
            let n = ctx.prewarm_descriptions(catalog.classes())?;
            println!("{n} descriptions in {}", out.display());
            Ok(())
        }
        Command::ServeSynthetic { listen, config } => {
            let synthetic = match config {
                Some(p) => EvalConfig::load(&p)?.synthetic_config(),
                None => Default::default(),
            };
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            println!("listening on {}", listener.local_addr()?);
            std::io::stdout().flush()?;
            server::serve(listener, Arc::new(SyntheticBackend::new(synthetic)))?;
            Ok(())
        }
        Command::Conformance { backend, timeout_secs } => {
            let fixtures = conformance::parse_fixtures(conformance::FIXTURES)?;
            let exchange = conformance::tcp_exchange(&backend, Duration::from_secs(timeout_secs))?;
            let outcomes = conformance::run(&fixtures, exchange);
            for o in &outcomes {
                if o.passed {
                    println!("PASS {}", o.name);
                } else {
                    println!("FAIL {}: {}", o.name, o.detail);
                }
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed > 0 {
                return Err(Error::ProtocolViolation(format!("{failed} of {} fixtures failed", outcomes.len())).into());
            }
            Ok(())
        }
    }
}
