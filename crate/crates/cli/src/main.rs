use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use inferact::agent::{make_env, replay_dirichlet, run_with_env, EnvConfig, RunConfig, RunLog};
use inferact::env::remote::EndpointConfig;
use inferact::model::build_model_with;
use inferact::report::{analyze, export, ActionCounts, ExportFormat, ExportKind, ExportSpec, StepSelection};

#[derive(Parser)]
#[command(
    name = "inferact",
    version,
    about = "Run and inspect discrete active inference experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Synthetic,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its log and model snapshots.
    Run(RunArgs),
    /// Export figure data from a run log.
    Export {
        /// Run log (JSONL).
        #[arg(long)]
        log: PathBuf,
        /// a_matrices, efe_grid, action_heatmap or action_timeline.
        #[arg(long)]
        kind: String,
        /// all, last, N, N,M,... or A..B.
        #[arg(long, default_value = "all")]
        steps: String,
        /// Output file (a directory for a_matrices).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Summarize a run log.
    Analyze {
        log: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a config file without running it.
    ValidateConfig { config: PathBuf },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate [config default: 50.0].
    #[arg(long)]
    eta: Option<f64>,
    /// Policy precision [config default: 8.0].
    #[arg(long)]
    gamma: Option<f64>,
    /// Action precision [config default: 16.0].
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    /// Chat-completions URL for the remote environment.
    #[arg(long)]
    endpoint: Option<String>,
    /// Text corpus for the remote environment.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Ground-truth profile for the synthetic environment.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.eta {
            cfg.learning.eta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        match self.env {
            Some(EnvKind::Remote) if !matches!(cfg.env, EnvConfig::Remote { .. }) => {
                cfg.env = EnvConfig::Remote {
                    endpoint: EndpointConfig::default(),
                    corpus: None,
                }
            }
            Some(EnvKind::Synthetic) if !matches!(cfg.env, EnvConfig::Synthetic { .. }) => {
                cfg.env = EnvConfig::default()
            }
            _ => {}
        }
        match &mut cfg.env {
            EnvConfig::Remote { endpoint, corpus } => {
                if let Some(url) = &self.endpoint {
                    endpoint.url = url.clone();
                }
                if let Some(c) = &self.corpus {
                    *corpus = Some(c.clone());
                }
            }
            EnvConfig::Synthetic { profile, .. } => {
                if let Some(p) = &self.profile {
                    *profile = Some(p.clone());
                }
            }
        }
        Ok(cfg)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.config()?;
    cfg.validate()?;
    let mut env = make_env(&cfg)?;
    let profile = cfg.profile()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log_path = args.out.join("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let out = run_with_env(&cfg, env.as_mut(), profile, Some(&mut log))
        .with_context(|| format!("run aborted; partial log in {}", log_path.display()))?;
    drop(log);

    if let Some(profile) = &out.header.profile {
        write_json(&args.out.join("profile.json"), profile)?;
    }
    if let Some(k) = cfg.snapshot_interval {
        let (template, _) = build_model_with(cfg.dims, &cfg.preferences)?;
        for step in (0..=out.records.len()).step_by(k) {
            let dir = replay_dirichlet(&out.header, &out.records, step)?;
            let doc = template.with_learned(&dir)?.to_document(Some(&dir), Some(step));
            write_json(&args.out.join(format!("model_step_{step:04}.json")), &doc)?;
        }
    }
    let final_doc = out.model.to_document(Some(&out.dirichlet), Some(out.records.len()));
    write_json(&args.out.join("model_final.json"), &final_doc)?;

    let counts = ActionCounts::of(&out.records);
    println!("steps: {}", out.records.len());
    println!("final VFE: {:.6}", out.records.last().map_or(f64::NAN, |r| r.vfe));
    println!(
        "actions: prompt {} search {} none {}",
        counts.prompt, counts.search, counts.none
    );
    println!("log: {}", log_path.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    let result = match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Export {
            log,
            kind,
            steps,
            out,
            format,
        } => (|| {
            let spec = ExportSpec {
                log,
                kind: kind.parse::<ExportKind>()?,
                steps: steps.parse::<StepSelection>()?,
                out,
                format: format.parse::<ExportFormat>()?,
            };
            for path in export(&spec)? {
                println!("{}", path.display());
            }
            Ok(())
        })(),
        Command::Analyze { log, json } => (|| {
            let report = analyze(&RunLog::read(&log).with_context(|| format!("reading {}", log.display()))?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(())
        })(),
        Command::ValidateConfig { config } => (|| {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            println!("{}: ok ({} policies)", config.display(), cfg.policies()?.len());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
