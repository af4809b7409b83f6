//! Command-line front end.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    almost_period_search, averaging_check, incremental_decay, perturbation_response, ScenarioData, ShiftTarget,
    AVERAGING_NOISE_BAND,
};
use crate::dynamics::{estimate_lipschitz, estimate_monotonicity};
use crate::error::SweepError;
use crate::integrator::{bounded_solution, catch_up, inclusion_residual, richardson_order, Scenario};
use crate::scenarios::{self, ScenarioParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

const ESTIMATE_SAMPLES: usize = 4_000;
const ALPHA_SAMPLING_SLACK: f64 = 0.05;
const RESIDUAL_SAMPLES: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "sweepsim", version, about = "Perturbed sweeping process simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a scenario and write trajectory.csv and meta.json.
    Simulate(RunArgs),
    /// Incremental stability report for two starts.
    Stability(RunArgs),
    /// Response of the bounded solution to eps.
    Response(RunArgs),
    /// Convergence of high-frequency solutions to the averaged one.
    Average(RunArgs),
    /// Search for almost periods of the set, the data or the bounded solution.
    AlmostPeriod(RunArgs),
    /// Empirical convergence order of the scheme.
    Order(RunArgs),
    /// Print the scenario registry.
    ListScenarios,
}

#[derive(Debug, Default, Args)]
#[command(allow_negative_numbers = true)]
pub struct RunArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub t_start: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Analysis window `a,b`.
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub x0_b: Option<Vec<f64>>,
    /// Monotonicity constant; sampled when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub h_list: Option<Vec<f64>>,
    /// Almost-period target: `set`, `data` or `trajectory`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub s_range: Option<Vec<f64>>,
    #[arg(long)]
    pub s_grid: Option<f64>,
    #[arg(long)]
    pub t_grid: Option<f64>,
}

/// Merged configuration. Field names match the JSON config schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub eps: Option<f64>,
    pub step: Option<f64>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub window: Option<Vec<f64>>,
    pub eps_list: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub x0_b: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub target: Option<String>,
    pub s_range: Option<Vec<f64>>,
    pub s_grid: Option<f64>,
    pub t_grid: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $flags:expr, $($field:ident),*) => {
        $( if $flags.$field.is_some() { $base.$field = $flags.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        overlay!(
            cfg, args, scenario, eps, step, t_start, t_end, window, eps_list, tol, seed, out, x0, x0_b, alpha, h_list,
            target, s_range, s_grid, t_grid
        );
        Ok(cfg)
    }

    fn scenario_id(&self) -> Result<&str, CliError> {
        self.scenario
            .as_deref()
            .ok_or_else(|| CliError::config("missing --scenario"))
    }

    fn params(&self) -> ScenarioParams {
        ScenarioParams {
            eps: self.eps,
            h: self.step,
            t_start: self.t_start,
            t_end: self.t_end,
            x0: self.x0.clone(),
        }
    }

    fn build(&self) -> Result<Scenario, CliError> {
        Ok(scenarios::build(self.scenario_id()?, &self.params())?)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn pair(v: &Option<Vec<f64>>, name: &str) -> Result<Option<(f64, f64)>, CliError> {
        match v.as_deref() {
            None => Ok(None),
            Some([a, b]) if a.is_finite() && b.is_finite() && b > a => Ok(Some((*a, *b))),
            Some(other) => Err(CliError::config(format!("--{name} needs two increasing values, got {other:?}"))),
        }
    }

    fn window(&self) -> Result<Option<(f64, f64)>, CliError> {
        Self::pair(&self.window, "window")
    }

    fn require_window(&self) -> Result<(f64, f64), CliError> {
        self.window()?.ok_or_else(|| CliError::config("missing --window"))
    }

    fn eps_list(&self) -> Result<&[f64], CliError> {
        match self.eps_list.as_deref() {
            Some(l) if !l.is_empty() => Ok(l),
            _ => Err(CliError::config("missing --eps-list")),
        }
    }
}

/// Error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        let code = match e.root() {
            SweepError::Infeasible(_) => EXIT_INFEASIBLE,
            SweepError::DimensionMismatch { .. }
            | SweepError::InvalidSet(_)
            | SweepError::InvalidArgument(_)
            | SweepError::NotMonotone(_)
            | SweepError::StepTooCoarse { .. } => EXIT_CONFIG,
            SweepError::NoConvergence { .. }
            | SweepError::Unbounded
            | SweepError::NotInSet { .. }
            | SweepError::NonFinite(_)
            | SweepError::InvariantViolation { .. }
            | SweepError::Step { .. } => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("I/O error: {e}"))
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| e.error)?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    Ok(write_atomic(dir, name, text.as_bytes())?)
}

/// Monotonicity constant: explicit value, or the seeded sample minus a
/// sampling margin.
fn resolve_alpha(cfg: &RunConfig, s: &Scenario, eps: f64) -> Result<f64, CliError> {
    if let Some(a) = cfg.alpha {
        return Ok(a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let sampled = estimate_monotonicity(
        s.field(),
        eps,
        s.moving_set().bound().max(1e-3),
        (s.t_start(), s.t_end()),
        ESTIMATE_SAMPLES,
        &mut rng,
    )?;
    Ok(sampled - ALPHA_SAMPLING_SLACK)
}

fn verdict(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate(a) => run_simulate(&RunConfig::from_args(&a)?),
        Command::Stability(a) => run_stability(&RunConfig::from_args(&a)?),
        Command::Response(a) => run_response(&RunConfig::from_args(&a)?),
        Command::Average(a) => run_average(&RunConfig::from_args(&a)?),
        Command::AlmostPeriod(a) => run_almost_period(&RunConfig::from_args(&a)?),
        Command::Order(a) => run_order(&RunConfig::from_args(&a)?),
        Command::ListScenarios => {
            println!("{:<22} {:>3}  description", "id", "dim");
            for e in scenarios::registry() {
                println!("{:<22} {:>3}  {}", e.id, e.dim, e.description);
            }
            Ok(EXIT_OK)
        }
    }
}

pub fn run_simulate(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = cfg.build()?;
    let traj = catch_up(&s)?;
    let residual = inclusion_residual(&traj, &s, RESIDUAL_SAMPLES)?;
    let window = (s.t_start(), s.t_end());
    let radius = s.moving_set().bound().max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let alpha_hat = estimate_monotonicity(s.field(), s.eps(), radius, window, ESTIMATE_SAMPLES, &mut rng)?;
    let lip = estimate_lipschitz(s.field(), s.eps(), radius, window, ESTIMATE_SAMPLES, &mut rng)?;

    let out = cfg.out_dir();
    write_atomic(&out, "trajectory.csv", traj.to_csv().as_bytes())?;
    let meta = json!({
        "scenario": cfg.scenario_id()?,
        "description": scenarios::info(cfg.scenario_id()?)?.description,
        "eps": s.eps(),
        "step": s.h(),
        "t_start": s.t_start(),
        "t_end": s.t_end(),
        "x0": s.x0(),
        "seed": cfg.seed(),
        "steps": traj.len() - 1,
        "constants": {
            "alpha_hat": alpha_hat,
            "lipschitz_x_hat": lip.state,
            "lipschitz_t_hat": lip.time,
            "bound_m": s.moving_set().bound(),
            "set_lipschitz": s.moving_set().lipschitz(),
        },
        "inclusion_residual": residual,
    });
    write_json(&out, "meta.json", &meta)?;
    println!("steps              {}", traj.len() - 1);
    println!("final state        {:?}", traj.last().unwrap_or(&[]));
    println!("inclusion residual {residual:.3e}");
    println!("alpha_hat          {alpha_hat:.6}");
    println!("L_x_hat, L_t_hat   {:.6}, {:.6}", lip.state, lip.time);
    Ok(EXIT_OK)
}

pub fn run_stability(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = cfg.build()?;
    let info = scenarios::info(cfg.scenario_id()?)?;
    let x0_b = cfg
        .x0_b
        .clone()
        .or(info.x0_b)
        .ok_or_else(|| CliError::config("missing --x0-b"))?;
    let alpha = resolve_alpha(cfg, &s, s.eps())?;
    let report = incremental_decay(&s, &s.x0().to_vec(), &x0_b, alpha)?;
    let out = cfg.out_dir();
    write_json(&out, "stability.json", &report)?;
    let mut csv = Vec::new();
    report.write_gap_csv(&mut csv)?;
    write_atomic(&out, "gap.csv", &csv)?;
    let show = |v: Option<f64>| v.map_or("unreliable".to_string(), |x| format!("{x:.6}"));
    println!("declared alpha     {alpha:.6}");
    println!("fitted rate        {}", show(report.fitted_rate));
    println!("r squared          {}", show(report.r_squared));
    println!("gronwall satisfied {}", report.gronwall_satisfied);
    Ok(verdict(report.gronwall_satisfied))
}

pub fn run_response(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = cfg.build()?;
    let window = cfg.require_window()?;
    let eps0 = s.field().eps0;
    let alpha = match (cfg.alpha, s.field().declared_alpha) {
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => resolve_alpha(cfg, &s, eps0)?,
    };
    let report = perturbation_response(&s, cfg.eps_list()?, window, alpha)?;
    write_json(&cfg.out_dir(), "response.json", &report)?;
    println!("{:>12} {:>14} {:>14}", "eps", "sup gap", "bound");
    for i in 0..report.eps_values.len() {
        println!(
            "{:>12.6} {:>14.6e} {:>14.6e}",
            report.eps_values[i], report.sup_gaps[i], report.bound_values[i]
        );
    }
    if report.window_too_early {
        println!("window too early: transient not yet below the smallest bound; bounds not asserted");
        return Ok(EXIT_OK);
    }
    Ok(verdict(report.bounds_hold()))
}

pub fn run_average(cfg: &RunConfig) -> Result<i32, CliError> {
    let id = cfg.scenario_id()?;
    let averaged_id = match id {
        "example2" => "example2_averaged",
        other => {
            return Err(CliError::config(format!(
                "scenario '{other}' has no registered averaged counterpart"
            )))
        }
    };
    let window = cfg.require_window()?;
    let mut params = cfg.params();
    params.eps = None;
    let averaged = scenarios::build(averaged_id, &params)?;
    let family = scenarios::example2_family(averaged.h(), averaged.t_start(), averaged.t_end());
    let report = averaging_check(&family, &averaged, cfg.eps_list()?, window)?;
    write_json(&cfg.out_dir(), "response.json", &report)?;
    println!("{:>12} {:>14} {:>14}", "eps", "sup gap", "int. dev.");
    for i in 0..report.eps_values.len() {
        println!(
            "{:>12.6} {:>14.6e} {:>14.6e}",
            report.eps_values[i], report.sup_gaps[i], report.bound_values[i]
        );
    }
    let ok = report.decreasing_within(AVERAGING_NOISE_BAND);
    println!("decreasing within 20% band: {ok}");
    Ok(verdict(ok))
}

pub fn run_almost_period(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = cfg.build()?;
    let s_range = RunConfig::pair(&cfg.s_range, "s-range")?.ok_or_else(|| CliError::config("missing --s-range"))?;
    let tol = cfg.tol.ok_or_else(|| CliError::config("missing --tol"))?;
    let t_window = cfg.window()?.unwrap_or((s.t_start(), s.t_end()));
    let s_grid = cfg.s_grid.unwrap_or(0.01);
    let t_grid = cfg.t_grid.unwrap_or(0.01);
    let kind = cfg.target.as_deref().unwrap_or("set");
    let data;
    let traj;
    let target: &dyn ShiftTarget = match kind {
        "set" => s.moving_set(),
        "data" => {
            data = ScenarioData::new(&s);
            &data
        }
        "trajectory" => {
            let alpha = match (cfg.alpha, s.field().declared_alpha) {
                (Some(a), _) | (None, Some(a)) => a,
                (None, None) => resolve_alpha(cfg, &s, s.eps())?,
            };
            let span = s.with_window(t_window.0 + s_range.0.min(0.0), t_window.1 + s_range.1.max(0.0) + s.h())?;
            traj = bounded_solution(&span, alpha, crate::analysis::REFERENCE_TOL)?;
            &traj
        }
        other => {
            return Err(CliError::config(format!(
                "unknown target '{other}'; expected set, data or trajectory"
            )))
        }
    };
    let report = almost_period_search(target, tol, s_range, s_grid, t_window, t_grid)?;
    write_json(&cfg.out_dir(), "almost_period.json", &report)?;
    println!("target {kind}, tolerance {tol:e}");
    match report.best() {
        Some((p, r)) => println!("{} period(s) found; best s = {p:.12} (residual {r:.3e})", report.periods_found.len()),
        None => println!("no period found"),
    }
    Ok(verdict(!report.periods_found.is_empty()))
}

pub fn run_order(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = cfg.build()?;
    let h_list = cfg.h_list.clone().unwrap_or_else(|| vec![1e-2, 5e-3, 2.5e-3]);
    let report = richardson_order(&s, &h_list)?;
    write_json(&cfg.out_dir(), "order.json", &report)?;
    println!("{:>12} {:>14}", "h", "error");
    for (h, e) in report.steps.iter().zip(&report.errors) {
        println!("{h:>12.3e} {e:>14.6e}");
    }
    println!("order {:?}", report.order);
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sweepsim").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"scenario": "example1", "eps": 0.1, "window": [1, 2], "seed": 9}"#).unwrap();
        let cli = parse(&["simulate", "--config", path.to_str().unwrap(), "--eps", "-0.2"]);
        let Command::Simulate(a) = cli.command else { panic!() };
        let cfg = RunConfig::from_args(&a).unwrap();
        assert_eq!(cfg.scenario.as_deref(), Some("example1"));
        assert_eq!(cfg.eps, Some(-0.2));
        assert_eq!(cfg.window().unwrap(), Some((1.0, 2.0)));
        assert_eq!(cfg.seed(), 9);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"scenari": "example1"}"#).unwrap();
        let cli = parse(&["simulate", "--config", path.to_str().unwrap()]);
        let Command::Simulate(a) = cli.command else { panic!() };
        assert_eq!(RunConfig::from_args(&a).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn list_arguments() {
        let cli = parse(&["response", "--eps-list", "0.1,0.05", "--window", "10,20", "--x0", "-0.5"]);
        let Command::Response(a) = cli.command else { panic!() };
        assert_eq!(a.eps_list, Some(vec![0.1, 0.05]));
        assert_eq!(a.x0, Some(vec![-0.5]));
        let bad = RunConfig {
            window: Some(vec![2.0, 1.0]),
            ..Default::default()
        };
        assert_eq!(bad.window().unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn exit_code_mapping() {
        let code = |e: SweepError| CliError::from(e).code;
        assert_eq!(code(SweepError::Infeasible("x".into())), EXIT_INFEASIBLE);
        assert_eq!(code(SweepError::InvalidArgument("x".into())), EXIT_CONFIG);
        assert_eq!(
            code(SweepError::Step {
                step: 3,
                source: Box::new(SweepError::NonFinite("x".into()))
            }),
            EXIT_NUMERIC
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
