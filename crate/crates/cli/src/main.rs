use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qtraj::config::{ExperimentConfig, Seeds, Task};
use qtraj::error::{Error, Result};
use qtraj::runner::{self, RunOutcome};
use qtraj::zoo::{ModelSpec, MODEL_NAMES};

/// Disordered repeated-measurement experiments.
#[derive(Parser, Debug)]
#[command(name = "qtraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every hypothesis of the model on sampled environments.
    Validate(Opts),
    /// Probe eventual strict positivity.
    Esp(Opts),
    /// Solve for the stationary state and check its equivariance.
    Stationary(Opts),
    /// Estimate the forgetting rate against its declared bound.
    Forgetting(Opts),
    /// Pattern-frequency CLT with variance and normality checks.
    Clt(Opts),
    /// Simulate coalescence of the label-chain coupling.
    Couple(Opts),
    /// Run every task above.
    Report(Opts),
}

#[derive(Args, Debug)]
struct Opts {
    /// Experiment config (TOML); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Seed for both the environment and the trajectories.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long, env = "QTRAJ_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pattern in the outcome alphabet, e.g. `11,22` or `KS`. Repeatable.
    #[arg(long = "pattern")]
    patterns: Vec<String>,
    /// Shorthand for `--param alpha=…`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Shorthand for `--param gamma=…`.
    #[arg(long)]
    gamma: Option<f64>,
    /// Shorthand for `--param d=…`.
    #[arg(short = 'd')]
    dim: Option<usize>,
    /// Model parameter as `key=value`, value in TOML syntax.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

/// Seed used when neither a config nor `--seed` supplies one.
const DEFAULT_SEED: u64 = 0;

fn parse_param(text: &str) -> Result<(String, toml::Value)> {
    let (key, value) = text.split_once('=').ok_or_else(|| Error::Config(format!("--param '{text}' is not key=value")))?;
    let doc: toml::Table = toml::from_str(&format!("v = {}", value.trim())).map_err(|e| Error::Config(format!("--param {key}: {e}")))?;
    Ok((key.trim().to_string(), doc["v"].clone()))
}

fn model_spec(base: Option<&ModelSpec>, name: Option<&str>, overrides: toml::Table) -> Result<ModelSpec> {
    let mut table = toml::Table::new();
    let name = match (base, name) {
        (Some(b), Some(n)) if b.name() != n => n.to_string(),
        (Some(b), _) => {
            table = toml::Table::try_from(b).map_err(|e| Error::Config(e.to_string()))?;
            table.remove("name");
            b.name().to_string()
        }
        (None, Some(n)) => n.to_string(),
        (None, None) => return Err(Error::Config(format!("--model or --config is required; models: {}", MODEL_NAMES.join(", ")))),
    };
    if !MODEL_NAMES.contains(&name.as_str()) {
        return Err(Error::Config(format!("unknown model '{name}'; models: {}", MODEL_NAMES.join(", "))));
    }
    let keys: Vec<String> = overrides.keys().cloned().collect();
    table.extend(overrides);
    let spec = ModelSpec::from_parts(&name, table)?;
    // serde drops unknown keys silently; catch them here
    let known = toml::Table::try_from(&spec).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(k) = keys.iter().find(|k| !known.contains_key(k.as_str())) {
        let fields: Vec<&str> = known.keys().map(|s| s.as_str()).filter(|s| *s != "name").collect();
        return Err(Error::Config(format!("model '{name}' has no parameter '{k}' (parameters: {})", fields.join(", "))));
    }
    Ok(spec)
}

fn build_config(task: Task, o: &Opts) -> Result<ExperimentConfig> {
    let base = o.config.as_deref().map(ExperimentConfig::from_path).transpose()?;
    let mut overrides = toml::Table::new();
    for p in &o.params {
        let (k, v) = parse_param(p)?;
        overrides.insert(k, v);
    }
    if let Some(a) = o.alpha {
        overrides.insert("alpha".into(), toml::Value::Float(a));
    }
    if let Some(g) = o.gamma {
        overrides.insert("gamma".into(), toml::Value::Float(g));
    }
    if let Some(d) = o.dim {
        overrides.insert("d".into(), toml::Value::Integer(d as i64));
    }
    let model = match &base {
        Some(c) if o.model.is_none() && overrides.is_empty() => c.model.clone(),
        _ => model_spec(base.as_ref().map(|c| &c.model), o.model.as_deref(), overrides)?,
    };
    let mut cfg = match base {
        Some(mut c) => {
            c.task = task;
            c.model = model;
            c
        }
        None => ExperimentConfig::new(task, model, Seeds::both(DEFAULT_SEED)),
    };
    if let Some(s) = o.seed {
        cfg.seeds = Seeds::both(s);
    }
    if let Some(n) = o.steps {
        cfg.run.n_steps = n;
    }
    if let Some(n) = o.trajectories {
        cfg.run.n_trajectories = n;
    }
    if o.threads.is_some() {
        cfg.run.threads = o.threads;
    }
    if let Some(dir) = &o.out {
        cfg.output.dir = dir.clone();
    }
    if !o.patterns.is_empty() {
        cfg.run.patterns = o.patterns.clone();
    }
    cfg.check()?;
    Ok(cfg)
}

fn print_outcome(out: &RunOutcome) {
    println!("model: {}", out.model.sheet.model);
    println!("{}", serde_json::to_string_pretty(&out.model.sheet).expect("sheet serializes"));
    for t in &out.tasks {
        println!("\n[{}]", t.task.name());
        for c in &t.checks {
            println!("  {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    println!();
    for f in out.files() {
        println!("wrote {}", f.display());
    }
    println!("verdict: {}", if out.passed() { "pass" } else { "fail" });
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, opts) = match &cli.command {
        Command::Validate(o) => (Task::Validate, o),
        Command::Esp(o) => (Task::Esp, o),
        Command::Stationary(o) => (Task::Stationary, o),
        Command::Forgetting(o) => (Task::Forgetting, o),
        Command::Clt(o) => (Task::Clt, o),
        Command::Couple(o) => (Task::Couple, o),
        Command::Report(o) => (Task::Report, o),
    };
    let result = build_config(task, opts).and_then(|cfg| runner::run(&cfg));
    match result {
        Ok(out) => {
            print_outcome(&out);
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::error_exit_code(&e) as u8)
        }
    }
}
