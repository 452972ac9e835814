use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::commands::{self, ScoreInputs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "onto-decode", version, about = "Ontology-guided structured summarization")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set decode.max_tokens=32.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for per-note and per-concept work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Number of top DCF classes kept when pruning.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Child hops below a kept class that are also kept.
    #[arg(long, global = true)]
    pub alpha: Option<usize>,
    /// Tokens between ontology rescoring steps.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Total beams across all groups.
    #[arg(long, global = true)]
    pub beam_size: Option<usize>,
    /// Beam groups for diverse beam search.
    #[arg(long, global = true)]
    pub groups: Option<usize>,
    /// Boost factor for the hierarchy score.
    #[arg(long, global = true)]
    pub h_bf: Option<f64>,
    /// Boost factor for the property score.
    #[arg(long, global = true)]
    pub p_bf: Option<f64>,
    /// Boost factor for the similarity score.
    #[arg(long, global = true)]
    pub s_bf: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build normalized domain DCFs from the corpus.
    BuildDcf,
    /// Extract class-structured representations from a note file.
    Extract {
        note_file: PathBuf,
        /// Restrict extraction to one class id.
        #[arg(long)]
        concept: Option<String>,
    },
    /// Prune a CSR file to a domain's frequent classes.
    Prune {
        csr_file: PathBuf,
        #[arg(long)]
        domain: String,
        /// Use this DCF file instead of rebuilding from the corpus.
        #[arg(long)]
        dcf: Option<PathBuf>,
    },
    /// Extract, prune and verbalize every note of an admission.
    Summarize {
        admission_dir: PathBuf,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        no_prune: bool,
    },
    /// Score a summary against its notes and an optional reference.
    Score {
        #[arg(long)]
        summary: PathBuf,
        /// Note file or admission directory.
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Structured summary for groundedness and relevance.
        #[arg(long)]
        structured: Option<PathBuf>,
        #[arg(long)]
        domain: Option<String>,
    },
    /// Serve the reference n-gram model over HTTP.
    ServeNgram {
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: SocketAddr,
    },
}

impl GlobalArgs {
    /// Configuration file, then `--set` overrides, then dedicated flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(v) = self.k {
            cfg.prune.k = v;
        }
        if let Some(v) = self.alpha {
            cfg.prune.alpha = v;
        }
        if let Some(v) = self.window {
            cfg.decode.window = v;
        }
        if let Some(v) = self.beam_size {
            cfg.decode.beam_size = v;
        }
        if let Some(v) = self.groups {
            cfg.decode.num_groups = v;
        }
        if let Some(v) = self.h_bf {
            cfg.decode.h_bf = v;
        }
        if let Some(v) = self.p_bf {
            cfg.decode.p_bf = v;
        }
        if let Some(v) = self.s_bf {
            cfg.decode.s_bf = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

/// Runs one parsed invocation, writing a JSON summary of the result to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.global.resolve_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| dispatch(&cfg, cli.command))
}

fn dispatch(cfg: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::BuildDcf => {
            let files = commands::cmd_build_dcf(cfg)?;
            print_json(&json!({ "written": files }));
        }
        Command::Extract { note_file, concept } => {
            let docs = commands::cmd_extract(cfg, &note_file, concept.as_deref())?;
            print_json(&json!({ "csrs": docs }));
        }
        Command::Prune {
            csr_file,
            domain,
            dcf,
        } => {
            let doc = commands::cmd_prune(cfg, &csr_file, &domain, dcf.as_deref())?;
            print_json(&json!(doc));
        }
        Command::Summarize {
            admission_dir,
            domain,
            no_prune,
        } => {
            let out = commands::cmd_summarize(cfg, &admission_dir, domain.as_deref(), no_prune)?;
            print_json(&json!({
                "structured": out.structured_path,
                "unstructured": out.unstructured_path,
            }));
        }
        Command::Score {
            summary,
            notes,
            reference,
            structured,
            domain,
        } => {
            let report = commands::cmd_score(
                cfg,
                &ScoreInputs {
                    summary: &summary,
                    notes: &notes,
                    reference: reference.as_deref(),
                    structured: structured.as_deref(),
                    domain: domain.as_deref(),
                },
            )?;
            print_json(&json!(report));
        }
        Command::ServeNgram { addr } => {
            let handle = commands::cmd_serve_ngram(cfg, addr)?;
            println!("{}", handle.url());
            let _ = std::io::stdout().flush();
            handle.join().map_err(|e| CliError::io(addr.to_string(), e))?;
        }
    }
    Ok(())
}
