//! The `mvmv` command-line front end.
//!
//! Experiments are described by a JSON file (see [`ExperimentPlan`]); flags
//! only pick the file, the output directory, the seed and the worker count.
//! Every artifact lands in the output directory and is a pure function of
//! the plan and the seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::coefficients::validate_hypotheses;
use crate::dynamics::{solve_limit_ode, solve_mv_ensemble, solve_skeleton, EnsembleSummary, SolvedPath};
use crate::error::{Error, Result};
use crate::harness::{
    run_clt, run_convergence, run_ldp_tail, run_mdp_equivalence, DeviationReport, ExperimentPlan, SCHEMA_VERSION,
};
use crate::noise::{probe_rng, NoisePlan};
use crate::rate::{rate_endpoint, rate_tube, Control, RateOptions, RateResult};

/// Probes used by `validate`.
pub const VALIDATION_PROBES: usize = 1000;
/// Particle paths written by `simulate`.
pub const SIMULATE_PATHS: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "mvmv", version, about = "Small-noise experiments for reflected McKean-Vlasov equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment file (JSON).
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(short = 'o', long = "out", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the plan's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicas and particles.
    #[arg(long, env = "MVMV_WORKERS")]
    pub workers: Option<usize>,
    /// Repeat for more log output.
    #[arg(short = 'v', long = "verbose", action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One particle ensemble at the plan's epsilon.
    Simulate(CommonArgs),
    /// The deterministic limit path.
    Limit(CommonArgs),
    /// Strong convergence rate to the limit path.
    Convergence(CommonArgs),
    /// Fluctuation moments against the linearized limit.
    Clt(CommonArgs),
    /// Tail probability of a ball around the terminal state.
    LdpTail(CommonArgs),
    /// Exponential-equivalence trend for the moderate-deviation pair.
    MdpEquiv(CommonArgs),
    /// Rate function of an endpoint or tube target.
    Rate {
        #[command(flatten)]
        common: CommonArgs,
        /// Endpoint target, comma separated; overrides the plan.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        target: Option<Vec<f64>>,
    },
    /// Numerical hypothesis check of the preset's coefficients.
    Validate(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(c)
            | Command::Limit(c)
            | Command::Convergence(c)
            | Command::Clt(c)
            | Command::LdpTail(c)
            | Command::MdpEquiv(c)
            | Command::Validate(c) => c,
            Command::Rate { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Limit(_) => "limit",
            Command::Convergence(_) => "convergence",
            Command::Clt(_) => "clt",
            Command::LdpTail(_) => "ldp-tail",
            Command::MdpEquiv(_) => "mdp-equiv",
            Command::Rate { .. } => "rate",
            Command::Validate(_) => "validate",
        }
    }
}

/// Reads and validates an experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let plan: ExperimentPlan =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    plan.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(plan)
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    preset: &'a str,
    seed: u64,
    pass: bool,
    result: T,
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        info!("writing {}", path.display());
        fs::write(path, text)?;
        Ok(())
    }

    fn summary<T: Serialize>(&self, command: &str, plan: &ExperimentPlan, pass: bool, result: T) -> Result<()> {
        let s = Summary { schema_version: SCHEMA_VERSION, command, preset: &plan.preset, seed: plan.seed, pass, result };
        let mut text = serde_json::to_string_pretty(&s)?;
        text.push('\n');
        self.write(&format!("{command}.json"), &text)
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// `t, X_1..X_d, K_1..K_d, varK`.
pub fn path_csv(path: &SolvedPath) -> String {
    let d = path.dim();
    let mut out = String::from("t");
    for i in 1..=d {
        let _ = write!(out, ",X_{i}");
    }
    for i in 1..=d {
        let _ = write!(out, ",K_{i}");
    }
    out.push_str(",varK\n");
    for k in 0..path.len() {
        let row = std::iter::once(path.grid().time(k))
            .chain(path.state(k).iter().copied())
            .chain(path.compensator(k).iter().copied())
            .chain(std::iter::once(path.variation()[k]));
        out.push_str(&join(row));
        out.push('\n');
    }
    out
}

/// `t, mean, second_moment, sup_stat` (`mean_1..mean_d` when `d > 1`).
pub fn ensemble_csv(rows: &[EnsembleSummary]) -> String {
    let d = rows.first().map_or(1, |r| r.mean.len());
    let mut out = String::from("t");
    if d == 1 {
        out.push_str(",mean");
    } else {
        for i in 1..=d {
            let _ = write!(out, ",mean_{i}");
        }
    }
    out.push_str(",second_moment,sup_stat\n");
    for r in rows {
        let row = std::iter::once(r.t)
            .chain(r.mean.iter().copied())
            .chain([r.second_moment, r.sup_stat]);
        out.push_str(&join(row));
        out.push('\n');
    }
    out
}

/// `epsilon, estimate, stderr, censored`, then a `fit, slope, r2,` trailer
/// row when a log-log fit exists.
pub fn report_csv(report: &DeviationReport) -> String {
    let mut out = String::from("epsilon,estimate,stderr,censored\n");
    for p in &report.points {
        let _ = writeln!(out, "{},{},{},{}", p.epsilon, p.estimate, p.stderr, p.censored);
    }
    if let Some(f) = report.fit {
        let _ = writeln!(out, "fit,{},{},", f.slope, f.r2);
    }
    out
}

fn rate_csv(r: &RateResult) -> String {
    format!("value,residual,iterations,success\n{},{},{},{}\n", r.value, r.residual, r.iterations, r.success)
}

fn control_csv(h: &Control) -> String {
    let m = h.noise_dim();
    let mut out = String::from("t");
    for i in 1..=m {
        let _ = write!(out, ",h_{i}");
    }
    out.push('\n');
    let dt = h.grid().dt();
    for i in 0..h.pieces() {
        out.push_str(&join(std::iter::once(i as f64 * dt).chain(h.piece(i).iter().copied())));
        out.push('\n');
    }
    out
}

fn write_reports(out: &Outputs, command: &str, plan: &ExperimentPlan, reports: &[DeviationReport]) -> Result<bool> {
    for r in reports {
        info!("{}: {} ({:.1}s)", r.experiment, r.verdict, r.runtime_secs);
        out.write(&format!("{}.csv", r.experiment), &report_csv(r))?;
    }
    let pass = reports.iter().all(|r| r.pass);
    out.summary(command, plan, pass, reports)?;
    Ok(pass)
}

/// Runs one command; `Ok(true)` means every verdict passed.
pub fn run_command(cmd: &Command) -> Result<bool> {
    let common = cmd.common();
    let mut plan = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        plan.seed = seed;
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = common.workers {
            if w == 0 {
                return Err(Error::Config("--workers must be positive".into()));
            }
            b = b.num_threads(w);
        }
        b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
    };
    let out = Outputs::new(&common.out)?;
    pool.install(|| dispatch(cmd, &plan, &out))
}

fn dispatch(cmd: &Command, plan: &ExperimentPlan, out: &Outputs) -> Result<bool> {
    let name = cmd.name();
    match cmd {
        Command::Limit(_) => {
            let s = plan.setup()?;
            let x0 = solve_limit_ode(&s.coefficients, &s.operator, &s.xi, &s.grid)?;
            out.write("limit.csv", &path_csv(&x0))?;
            out.summary(name, plan, true, serde_json::json!({ "terminal": x0.terminal(), "sup_norm": x0.sup_norm() }))?;
            Ok(true)
        }
        Command::Simulate(_) => {
            let s = plan.setup()?;
            let eps = plan.epsilon.unwrap_or(plan.epsilons[0]);
            let ens = solve_mv_ensemble(
                &s.coefficients,
                &s.operator,
                &s.xi,
                eps,
                plan.particles,
                &s.grid,
                NoisePlan::new(plan.seed, 0),
            )?;
            let rows = ens.summary();
            out.write("ensemble.csv", &ensemble_csv(&rows))?;
            for i in 0..plan.particles.min(SIMULATE_PATHS) {
                out.write(&format!("particle_{i}.csv"), &path_csv(&ens.particle(i)))?;
            }
            let last = rows.last().expect("grid has at least two points");
            out.summary(name, plan, true, serde_json::json!({ "epsilon": eps, "particles": plan.particles, "terminal": last }))?;
            Ok(true)
        }
        Command::Convergence(_) => write_reports(out, name, plan, &[run_convergence(plan)?]),
        Command::Clt(_) => write_reports(out, name, plan, &run_clt(plan)?),
        Command::LdpTail(_) => {
            let t = plan
                .ldp
                .as_ref()
                .ok_or_else(|| Error::Config("ldp-tail needs an \"ldp\": {\"target\", \"radius\"} block".into()))?;
            write_reports(out, name, plan, &[run_ldp_tail(plan, &t.target, t.radius)?])
        }
        Command::MdpEquiv(_) => {
            let mut reports = Vec::new();
            for &delta in &plan.deltas {
                let mut r = run_mdp_equivalence(plan, delta)?;
                if plan.deltas.len() > 1 {
                    r.experiment = format!("{}-delta{delta}", r.experiment);
                }
                reports.push(r);
            }
            write_reports(out, name, plan, &reports)
        }
        Command::Rate { target, .. } => {
            let s = plan.setup()?;
            let x0 = solve_limit_ode(&s.coefficients, &s.operator, &s.xi, &s.grid)?;
            let opts = RateOptions { tol: plan.rate.tol, pieces: plan.rate.pieces, ..Default::default() };
            let mode = plan.rate.mode;
            let result = match (target.as_ref().or(plan.rate.target.as_ref()), &plan.rate.tube) {
                (Some(z), _) => rate_endpoint(&s.coefficients, &s.operator, &x0, mode, z, &opts)?,
                (None, Some(h)) => {
                    let control = Control::constant(s.grid, s.coefficients.noise_dim(), h)?;
                    let phi = solve_skeleton(&s.coefficients, &s.operator, &x0, &control, mode)?;
                    rate_tube(&s.coefficients, &s.operator, &x0, mode, &phi, &opts)?
                }
                (None, None) => {
                    return Err(Error::Config("rate needs --target, \"rate.target\" or \"rate.tube\"".into()))
                }
            };
            out.write("rate.csv", &rate_csv(&result))?;
            out.write("rate_control.csv", &control_csv(&result.control))?;
            let pass = result.success;
            out.summary(
                name,
                plan,
                pass,
                serde_json::json!({
                    "value": result.value,
                    "residual": result.residual,
                    "iterations": result.iterations,
                    "success": result.success,
                    "method": result.method,
                    "pieces": result.control.pieces(),
                }),
            )?;
            Ok(pass)
        }
        Command::Validate(_) => {
            let s = plan.setup()?;
            let mut rng = probe_rng(plan.seed, 0);
            let report = validate_hypotheses(&s.coefficients, VALIDATION_PROBES, &mut rng)?;
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            print!("{text}");
            let mut csv = String::from("hypothesis,declared,observed,ratio,pass\n");
            for c in &report.checks {
                let _ = writeln!(csv, "{},{},{},{},{}", c.hypothesis, c.declared, c.observed, c.ratio, c.pass);
            }
            out.write("validate.csv", &csv)?;
            let pass = report.pass;
            out.summary(name, plan, pass, report)?;
            Ok(pass)
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code:
/// 0 pass, 1 verdict failure, 2 error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("mvmv: error: {}", one_line(&e.to_string()));
            return 2;
        }
    };
    let level = match cli.command.common().verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run_command(&cli.command) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("mvmv: {}: verdict failed", cli.command.name());
            1
        }
        Err(e) => {
            eprintln!("mvmv: error: {}", one_line(&e.to_string()));
            2
        }
    }
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_plan(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("plan.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn config_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_plan(dir.path(), r#"{"preset": "linear-reflected", "T": 1, "epsilon_grid": [0.001, 0.01]}"#);
        let e = parse_config(&p).unwrap_err().to_string();
        assert!(e.contains("epsilon grid must be strictly decreasing"), "{e}");

        let p = write_plan(dir.path(), "{\"preset\": \"linear-reflected\",\n \"T\": 1, \"bogus\": 2}");
        let e = parse_config(&p).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 2"), "{e}");

        assert!(parse_config(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn path_csv_layout() {
        let plan = ExperimentPlan::minimal("linear-reflected", 1.0);
        let s = plan.setup().unwrap();
        let x0 = solve_limit_ode(&s.coefficients, &s.operator, &s.xi, &crate::dynamics::TimeGrid::new(1.0, 2).unwrap()).unwrap();
        let csv = path_csv(&x0);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,X_1,K_1,varK");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1,0,0"));
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let p = write_plan(dir.path(), r#"{"preset": "free-brownian", "T": 1, "steps": 100}"#);
        let args = |cmd: &str, extra: &[&str]| {
            let mut v = vec!["mvmv".to_string(), cmd.to_string(), "-c".into(), p.display().to_string(), "-o".into(), out.display().to_string()];
            v.extend(extra.iter().map(|s| s.to_string()));
            v
        };
        assert_eq!(main_with_args(args("limit", &[])), 0);
        assert!(out.join("limit.csv").exists());
        assert_eq!(main_with_args(args("rate", &["--target", "1.0"])), 0);
        let rate = fs::read_to_string(out.join("rate.csv")).unwrap();
        let value: f64 = rate.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
        assert!((value - 0.5).abs() < 1e-3, "{value}");
        assert_eq!(main_with_args(args("rate", &[])), 2);
        assert_eq!(main_with_args(args("nope", &[])), 2);
        let bad = write_plan(dir.path(), r#"{"preset": "linear-reflected", "T": 1, "kappa": 0.5}"#);
        assert_eq!(main_with_args(["mvmv", "limit", "-c", bad.to_str().unwrap(), "-o", out.to_str().unwrap()]), 2);
    }
}
