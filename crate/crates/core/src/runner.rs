//! Config-driven experiment runner.
//!
//! Each task writes `<dir>/<task>.json` holding the config, the constant
//! sheet, every estimate and one verdict per check, plus CSV plot data where
//! it makes sense. Outputs are pure functions of the config: there are no
//! timestamps, and parallel reductions are ordered.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::clt::{clt_report, CltOptions, IndicatorPanel};
use crate::config::{ExperimentConfig, Task};
use crate::coupling::{check_a1_env, simulate_coalescence};
use crate::error::{Error, Result};
use crate::instrument::esp_probe;
use crate::linalg::{trace_norm, DensityMatrix};
use crate::rng::{derive_seed, domain};
use crate::stationary::{estimate_beta, solve_stationary_state, verify_stationarity};
use crate::trajectory::{sample_batch, InitialState, Pattern};
use crate::zoo::{validate_environments, validate_group_hypotheses, EspDecl, Model, RateDecl, StationaryDecl};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_STATISTICAL: i32 = 4;

/// One pass/fail verdict against a declared constant or tolerance.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug)]
pub struct TaskOutput {
    pub task: Task,
    pub checks: Vec<Check>,
    pub result: Value,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: Model,
    pub tasks: Vec<TaskOutput>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.tasks.iter().all(|t| t.checks.iter().all(|c| c.passed))
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_STATISTICAL
        }
    }

    pub fn files(&self) -> Vec<&Path> {
        self.tasks.iter().flat_map(|t| t.files.iter().map(|p| p.as_path())).collect()
    }
}

/// Exit status for a failed run.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Structure(_) | Error::Hypothesis(_) | Error::Io(_) => EXIT_CONFIG,
        Error::Statistical(_) => EXIT_STATISTICAL,
        Error::Numerical(_) | Error::Cap(_) | Error::Unsupported(_) => EXIT_NUMERICAL,
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.check()?;
    match cfg.run.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let model = Model::build(&cfg.model, &cfg.environment, cfg.seeds.environment)?;
    fs::create_dir_all(&cfg.output.dir)?;
    write_json(&cfg.output.dir.join("sheet.json"), &serde_json::to_value(&model.sheet).expect("sheet serializes"))?;
    let tasks = match cfg.task {
        Task::Report => vec![Task::Validate, Task::Esp, Task::Stationary, Task::Forgetting, Task::Clt, Task::Couple],
        t => vec![t],
    };
    let mut outputs = Vec::new();
    for task in tasks {
        let mut out = match task {
            Task::Validate => validate(cfg, &model)?,
            Task::Esp => esp(cfg, &model)?,
            Task::Stationary => stationary(cfg, &model)?,
            Task::Forgetting => forgetting(cfg, &model)?,
            Task::Clt => clt(cfg, &model)?,
            Task::Couple => couple(cfg, &model)?,
            Task::Report => unreachable!("expanded above"),
        };
        let path = cfg.output.dir.join(format!("{}.json", task.name()));
        let doc = json!({
            "meta": { "tool": "qtraj", "version": env!("CARGO_PKG_VERSION") },
            "task": task.name(),
            "config": cfg,
            "sheet": model.sheet,
            "result": out.result,
            "checks": out.checks,
            "passed": out.checks.iter().all(|c| c.passed),
        });
        write_json(&path, &doc)?;
        out.files.insert(0, path);
        outputs.push(out);
    }
    if cfg.task == Task::Report {
        let summary: Vec<Value> = outputs
            .iter()
            .map(|t| json!({ "task": t.task.name(), "passed": t.checks.iter().all(|c| c.passed), "checks": t.checks }))
            .collect();
        let path = cfg.output.dir.join("report.json");
        write_json(&path, &json!({ "model": model.sheet.model, "tasks": summary }))?;
        if let Some(first) = outputs.first_mut() {
            first.files.push(path);
        }
    }
    Ok(RunOutcome { model, tasks: outputs })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(header).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn validate(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let v = validate_environments(model, cfg.run.validate_envs, cfg.seeds.run);
    let mut checks =
        vec![Check::new("instrument validation", v.passed, format!("{} failures, max |Σ V†V − I| = {:.3e}", v.failures, v.max_deviation))];
    let labels = match check_a1_env(&model.process, 32, cfg.seeds.run) {
        Ok(l) => Some(l.maps().to_vec()),
        Err(Error::Hypothesis(m)) | Err(Error::Unsupported(m)) => {
            checks.push(Check::new("basis-label structure", false, m));
            None
        }
        Err(e) => return Err(e),
    };
    let group = if model.sheet.group.is_some() {
        match validate_group_hypotheses(model, cfg.run.validate_envs.min(1000), cfg.seeds.run) {
            Ok(g) => {
                checks.push(Check::new(
                    "group hypotheses",
                    true,
                    format!(
                        "min block entry {:.4e} ≥ ε₀ = {:.4e}; max overlap {:.6} ≤ q = {:.6}",
                        g.eps0_observed, g.eps0, g.q_observed, g.q
                    ),
                ));
                Some(serde_json::to_value(g).expect("serializes"))
            }
            Err(Error::Hypothesis(m)) => {
                checks.push(Check::new("group hypotheses", false, m));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(TaskOutput {
        task: Task::Validate,
        checks,
        result: json!({ "environments": v, "label_maps": labels, "group": group }),
        files: vec![],
    })
}

fn esp(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let n_envs = if model.process.is_deterministic() { 1 } else { cfg.run.esp_envs };
    let mut probes = Vec::with_capacity(n_envs);
    for k in 0..n_envs {
        let seed = derive_seed(cfg.seeds.run, domain::ENV_DRAW, k as u64);
        let omega = if model.process.is_deterministic() { model.process.seed() } else { seed };
        probes.push(esp_probe(&model.process, omega, cfg.run.esp_n_max)?);
    }
    let found: Vec<Option<usize>> = probes.iter().map(|p| p.n0).collect();
    let checks = match model.sheet.esp {
        EspDecl::Holds { n0 } => {
            vec![Check::new("ESP index", found.iter().all(|f| *f == Some(n0)), format!("declared N₀ = {n0}, found {found:?}"))]
        }
        EspDecl::Fails => vec![Check::new(
            "ESP fails",
            found.iter().all(|f| f.is_none()),
            format!("no strictly positive composition expected up to n = {}, found {found:?}", cfg.run.esp_n_max),
        )],
        EspDecl::Unknown => vec![],
    };
    Ok(TaskOutput { task: Task::Esp, checks, result: json!({ "probes": probes }), files: vec![] })
}

fn stationary(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let env = &model.process;
    let d = model.sheet.dim;
    let mut solutions = Vec::new();
    let mut checks = Vec::new();
    let mut worst_decl: f64 = 0.0;
    for origin in 0..4i64 {
        let sol = solve_stationary_state(env, origin, cfg.tolerances.stationary, cfg.run.stationary_depth)?;
        if let Some(s) = &sol.state {
            let target = match model.sheet.stationary {
                StationaryDecl::MaximallyMixed => Some(DensityMatrix::maximally_mixed(d)),
                StationaryDecl::Basis { label } => Some(DensityMatrix::basis(d, label)),
                StationaryDecl::Unknown => None,
            };
            if let Some(t) = target {
                worst_decl = worst_decl.max(trace_norm(&(s.matrix() - t.matrix()))?);
            }
        }
        solutions.push(sol);
    }
    let converged = solutions.iter().all(|s| s.converged);
    checks.push(Check::new(
        "backward iteration converged",
        converged,
        format!("depths {:?}", solutions.iter().map(|s| s.back_depth).collect::<Vec<_>>()),
    ));
    let residual = if converged { Some(verify_stationarity(env, 0, &[1, 2, 5, 10])?) } else { None };
    if let Some(r) = residual {
        checks.push(Check::new("cocycle residual", r <= 10.0 * cfg.tolerances.stationary.max(1e-12), format!("{r:.3e}")));
    }
    if !matches!(model.sheet.stationary, StationaryDecl::Unknown) && converged {
        checks.push(Check::new("declared stationary state", worst_decl <= 1e-8, format!("max trace distance {worst_decl:.3e}")));
    }
    let populations: Vec<Option<Vec<f64>>> = solutions.iter().map(|s| s.state.as_ref().map(|x| x.populations())).collect();
    Ok(TaskOutput {
        task: Task::Stationary,
        checks,
        result: json!({ "solutions": solutions, "populations": populations, "residual": residual }),
        files: vec![],
    })
}

fn forgetting(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let n_values: Vec<usize> = (1..=cfg.run.forgetting_n_max).collect();
    let theta = cfg.run.initial.resolve();
    let est = estimate_beta(&model.process, &theta, &n_values, cfg.run.forgetting_envs, cfg.seeds.run)?;
    let k = cfg.tolerances.sigmas;
    let mut checks = Vec::new();
    let bounds: Vec<Option<f64>> = n_values.iter().map(|&n| model.sheet.rate.eval(n)).collect();
    if !matches!(model.sheet.rate, RateDecl::Empirical) {
        let violations: Vec<usize> = n_values
            .iter()
            .enumerate()
            .filter(|(i, _)| est.beta_hat[*i] > bounds[*i].unwrap_or(f64::INFINITY) + k * est.stderr[*i] + 1e-12)
            .map(|(_, &n)| n)
            .collect();
        checks.push(Check::new("β̂_n ≤ r_n + kσ", violations.is_empty(), format!("violations at n = {violations:?}")));
    }
    if let (Some((_, r)), Some(se)) = (est.fitted_rate, est.slope_stderr) {
        let slope = r.ln();
        checks.push(Check::new("decreasing trend", slope + k * se < 0.0, format!("log-slope {slope:.4} ± {se:.4}")));
    }
    let path = cfg.output.dir.join("forgetting.csv");
    write_csv(
        &path,
        &["n", "beta_hat", "stderr", "bound"],
        n_values.iter().enumerate().map(|(i, n)| {
            vec![
                n.to_string(),
                format!("{:e}", est.beta_hat[i]),
                format!("{:e}", est.stderr[i]),
                bounds[i].map_or(String::new(), |b| format!("{b:e}")),
            ]
        }),
    )?;
    Ok(TaskOutput { task: Task::Forgetting, checks, result: json!({ "estimate": est, "bounds": bounds }), files: vec![path] })
}

fn clt(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let alphabet = &model.sheet.alphabet;
    let patterns: Vec<Pattern> = if cfg.run.patterns.is_empty() {
        (0..alphabet.len()).map(|a| Pattern::new(vec![a], alphabet.len())).collect::<Result<_>>()?
    } else {
        cfg.run.patterns.iter().map(|p| Pattern::parse_with_classes(p, alphabet, &model.sheet.classes)).collect::<Result<_>>()?
    };
    let n = cfg.run.n_steps;
    let records = sample_batch(
        &model.process,
        &cfg.run.initial.resolve(),
        n + patterns.iter().map(|p| p.len()).max().unwrap_or(1) - 1,
        cfg.run.n_trajectories,
        cfg.seeds.run,
        cfg.run.disorder.into(),
    )?;
    let grid: Vec<usize> =
        [n / 8, n / 4, n / 2, n].into_iter().filter(|&m| m > 0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let opts = CltOptions {
        lag_window: cfg.run.lag_window,
        batch_len: cfg.run.batch_len,
        jitter_seed: Some(derive_seed(cfg.seeds.run, domain::JITTER, 0)),
        variance_grid: grid,
        ..CltOptions::default()
    };
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for (idx, b) in patterns.iter().enumerate() {
        let label = b.display(alphabet);
        let panel = IndicatorPanel::new(&records, b, n)?;
        let rep = clt_report(&panel, &opts)?;
        if let Some(nt) = &rep.normality {
            checks.push(Check::new(format!("[{label}] KS normality"), nt.ks_pvalue >= tol.level, format!("p = {:.4}", nt.ks_pvalue)));
            let gap = (rep.sigma2_series - rep.sigma2_batch).abs() / rep.sigma2_series;
            checks.push(Check::new(format!("[{label}] series vs batch Σ̂²"), gap <= tol.estimator_rel, format!("relative gap {gap:.4}")));
            if let Some(last) = rep.variance_check.last() {
                let gap = (last.variance - rep.sigma2_series).abs() / rep.sigma2_series;
                checks.push(Check::new(
                    format!("[{label}] Var(S_n/√n) vs Σ̂²"),
                    gap <= tol.variance_rel,
                    format!("relative gap {gap:.4} at n = {}", last.n),
                ));
            }
        }
        if let Some(dg) = &rep.degenerate {
            checks.push(Check::new(
                format!("[{label}] degenerate L² criterion"),
                dg.pass,
                format!("max |x| = {:.3e} vs {:.3e}", dg.max_abs, dg.threshold),
            ));
        }
        let path = cfg.output.dir.join(format!("clt_{idx}.csv"));
        write_csv(
            &path,
            &["trajectory", "normalized_sum"],
            rep.normalized_samples.iter().enumerate().map(|(k, x)| vec![k.to_string(), format!("{x:e}")]),
        )?;
        files.push(path);
        let path = cfg.output.dir.join(format!("clt_{idx}_variance.csv"));
        write_csv(
            &path,
            &["n", "variance", "stderr"],
            rep.variance_check.iter().map(|v| vec![v.n.to_string(), format!("{:e}", v.variance), format!("{:e}", v.stderr)]),
        )?;
        files.push(path);
        reports.push(json!({ "pattern": label, "report": rep }));
    }
    Ok(TaskOutput { task: Task::Clt, checks, result: json!({ "patterns": reports }), files })
}

fn couple(cfg: &ExperimentConfig, model: &Model) -> Result<TaskOutput> {
    let sheet = &model.sheet;
    let l = cfg.run.block_len.unwrap_or(sheet.l);
    let eps = sheet.epsilon;
    let d = sheet.dim;
    let (theta, eta) = (InitialState::Basis(0), InitialState::Basis(d - 1));
    let stats = simulate_coalescence(&model.process, &theta, &eta, l, eps, cfg.run.coupling_blocks, cfg.run.coupling_runs, cfg.seeds.run)?;
    let k = cfg.tolerances.sigmas;
    let mut checks = Vec::new();
    if l == sheet.l {
        let bad: Vec<usize> =
            stats.tail.iter().filter(|(r, f, se)| *f > (1.0 - eps).powi(*r as i32) + k * se + 1e-12).map(|(r, _, _)| *r).collect();
        checks.push(Check::new("P(R_* > r) ≤ (1−ε)^r + kσ", bad.is_empty(), format!("violations at r = {bad:?}")));
        let bound = l as f64 / eps + 1.0;
        checks.push(Check::new(
            "E[T_out] ≤ L/ε + 1 + kσ",
            stats.censored == 0 && stats.mean_t_out <= bound + k * stats.stderr_t_out,
            format!("mean {:.4} ± {:.4}, bound {bound:.4}, censored {}", stats.mean_t_out, stats.stderr_t_out, stats.censored),
        ));
    }
    let path = cfg.output.dir.join("coalescence.csv");
    stats.write_csv(fs::File::create(&path)?)?;
    Ok(TaskOutput { task: Task::Couple, checks, result: json!({ "stats": stats }), files: vec![path] })
}
