use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcbpl::causal::EstimatorKind;
use dcbpl::pipeline::{self, PipelineError, ReportKind, RuleMethod, RunConfig, CONFIG_FILE};
use dcbpl::scm::Stratum;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dcbpl", version, about = "Provider-rule estimation and provider-specific next-action models on simulated encounters")]
struct Cli {
    /// Run configuration (JSON). Defaults to <out>/config.json, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cohort.
    Simulate,
    /// Build the vocabulary, order-set pairs and splits.
    Prepare,
    /// Train the population model.
    Pretrain,
    /// Fine-tune one provider's model.
    Finetune {
        #[arg(long)]
        provider: usize,
    },
    /// Cross-fitted values of each provider and of the learned rule.
    Estimate {
        #[arg(long, value_parser = ["aipw", "tmle", "plugin"])]
        estimator: Option<String>,
        #[arg(long)]
        crossfit: Option<usize>,
    },
    /// Learn the stratum-to-provider rule.
    Rule {
        #[arg(long, value_parser = ["pseudo-blip", "cv-select"])]
        method: Option<String>,
    },
    /// Write metric reports for every model.
    Evaluate {
        #[arg(long, default_value = "all", value_parser = ["topk", "separation", "qacc", "all"])]
        report: String,
    },
    /// Every stage end to end.
    Dcbpl,
    /// Top-k next actions of the provider the rule picks for a stratum.
    Query {
        /// `complaint,severity`
        #[arg(long)]
        stratum: String,
        /// Past action sets: actions separated by ',', sets by ';'.
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn error_kind(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Config(_) => "config",
        PipelineError::Stage { .. } => "stage",
        PipelineError::Io { .. } => "io",
        PipelineError::Missing(_) => "missing_artifact",
        PipelineError::Tampered(_) => "tampered",
        PipelineError::UnknownStratum { .. } => "unknown_stratum",
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if cli.out.join(CONFIG_FILE).exists() => RunConfig::load(&cli.out.join(CONFIG_FILE))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run_seed = seed;
    }
    cfg.output_dir = Some(cli.out.clone());
    Ok(cfg)
}

fn parse_prefix(s: &str) -> Result<Vec<Vec<usize>>, PipelineError> {
    s.split(';')
        .map(str::trim)
        .filter(|set| !set.is_empty())
        .map(|set| {
            set.split(',')
                .map(|a| a.trim().parse().map_err(|_| PipelineError::Config(format!("prefix action '{a}' is not an integer"))))
                .collect()
        })
        .collect()
}

fn finish(cfg: &RunConfig, dir: &Path, stage: &str) -> Result<serde_json::Value, PipelineError> {
    std::fs::write(dir.join(CONFIG_FILE), cfg.resolved().to_json())
        .map_err(|source| PipelineError::Io { path: dir.join(CONFIG_FILE), source })?;
    let manifest = pipeline::write_manifest(cfg, dir)?;
    Ok(json!({ "stage": stage, "out": dir, "config_hash": manifest.config_hash }))
}

fn run(cli: &Cli) -> Result<serde_json::Value, PipelineError> {
    let mut cfg = load_config(cli)?;
    let dir = cli.out.as_path();
    if !matches!(cli.command, Command::Query { .. }) {
        cfg.validate()?;
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    }
    let result = match &cli.command {
        Command::Simulate => pipeline::stage_simulate(&cfg, dir).and_then(|_| finish(&cfg, dir, "simulate")),
        Command::Prepare => pipeline::stage_prepare(&cfg, dir).and_then(|_| finish(&cfg, dir, "prepare")),
        Command::Pretrain => pipeline::stage_pretrain(&cfg, dir).and_then(|_| finish(&cfg, dir, "pretrain")),
        Command::Finetune { provider } => pipeline::stage_finetune(&cfg, dir, *provider).and_then(|_| finish(&cfg, dir, "finetune")),
        Command::Estimate { estimator, crossfit } => {
            if let Some(e) = estimator {
                cfg.causal.estimator = e.parse::<EstimatorKind>().map_err(|e| PipelineError::Config(e.to_string()))?;
            }
            if let Some(v) = crossfit {
                cfg.causal.folds = *v;
            }
            cfg.validate()?;
            pipeline::stage_estimate(&cfg, dir).and_then(|est| {
                let mut out = finish(&cfg, dir, "estimate")?;
                out["estimates"] = est;
                Ok(out)
            })
        }
        Command::Rule { method } => {
            if let Some(m) = method {
                cfg.causal.method = m.parse::<RuleMethod>()?;
            }
            pipeline::stage_rule(&cfg, dir).and_then(|_| finish(&cfg, dir, "rule"))
        }
        Command::Evaluate { report } => {
            let kind = report.parse::<ReportKind>()?;
            pipeline::stage_evaluate(&cfg, dir, kind).and_then(|_| finish(&cfg, dir, "evaluate"))
        }
        Command::Dcbpl => pipeline::run_dcbpl(&cfg, dir).map(|a| {
            json!({
                "stage": "dcbpl",
                "out": dir,
                "config_hash": a.manifest.config_hash,
                "rule_providers": a.rule.providers(),
            })
        }),
        Command::Query { stratum, prefix, k } => {
            let stratum: Stratum = stratum.parse().map_err(|e: dcbpl::scm::ScmError| PipelineError::Config(e.to_string()))?;
            let prefix = parse_prefix(prefix)?;
            pipeline::query_optimal_policy(dir, stratum, &prefix, *k)
                .map(|q| serde_json::to_value(q).expect("query result serializes"))
        }
    };
    if let Err(e) = &result {
        if !matches!(cli.command, Command::Query { .. } | Command::Dcbpl) && !matches!(e, PipelineError::Config(_)) {
            pipeline::mark_failed(dir, e);
        }
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
