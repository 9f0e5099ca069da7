//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or input
//! error. A `--config FILE` of `key = value` lines supplies defaults for the
//! chosen subcommand; flags on the command line take precedence.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::data::read_csv_path;
use crate::dgp::{DesignId, DesignSpec};
use crate::error::Error;
use crate::hte::{ate_estimate, att_estimate, HteConfig, Link};
use crate::lasso::PenaltyConfig;
use crate::montecarlo::{emit_report, run_cell_with, run_grid, Estimator, McConfig, McSummary, ReportFormat};
use crate::regression::EstimateReport;
use crate::selection::{
    double_selection, ds_plus_i3, lasso_direct, p1_ttest_demo, single_selection_post_lasso, union_ads,
    EstimatorOptions,
};
use crate::split::{split_sample_estimate, SplitConfig, DEFAULT_TRUNC_C};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pdsinfer", version, about = "Post-double-selection inference on treatment effects")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines used as default flags for the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo replications for one design cell or an R² grid.
    Simulate(SimulateArgs),
    /// Estimate the treatment coefficient from a CSV file.
    Estimate(EstimateArgs),
    /// Estimate the ATE or ATT of a binary treatment from a CSV file.
    Ate(AteArgs),
    /// Single- vs double-selection coverage with one control.
    #[command(name = "demo-p1")]
    DemoP1(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PenaltyArgs {
    /// Penalty slack constant c in λ = 2c√n Φ⁻¹(1 - γ/(2p)).
    #[arg(long = "penalty-c", default_value_t = 1.1)]
    pub c: f64,
    /// Penalty confidence γ.
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    /// Rounds of penalty-loading refinement.
    #[arg(long, default_value_t = 5)]
    pub loading_iterations: usize,
}

impl PenaltyArgs {
    fn config(&self) -> PenaltyConfig {
        PenaltyConfig { c: self.c, gamma: self.gamma, loading_iterations: self.loading_iterations, ..Default::default() }
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Design id, e.g. 1, 22, 8a.
    #[arg(long, default_value = "1", value_parser = parse_design)]
    pub design: DesignId,
    /// Target R² of the outcome equation.
    #[arg(long, default_value_t = 0.0)]
    pub r2y: f64,
    /// Target R² of the treatment equation.
    #[arg(long, default_value_t = 0.0)]
    pub r2d: f64,
    /// Comma-separated R² values; runs the full r2_y × r2_d grid instead of one cell.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    /// True treatment effect.
    #[arg(long, default_value_t = 0.5)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated estimators.
    #[arg(long, default_value = "oracle,ds-oracle,post-lasso,lasso,ds,union-ads,ds-i3,split", value_delimiter = ',', value_parser = parse_estimator)]
    pub estimators: Vec<Estimator>,
    /// Report file; the table is always echoed to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    pub format: ReportFormat,
    /// Worker threads.
    #[arg(long, env = "PDS_THREADS", default_value_t = default_threads())]
    pub threads: usize,
    /// Truncation constant for split-sample residuals.
    #[arg(long, default_value_t = DEFAULT_TRUNC_C)]
    pub trunc_c: f64,
    /// Use the outcome scale formula of the "a" designs exactly as printed.
    #[arg(long)]
    pub literal_cy: bool,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Ds,
    PostLasso,
    DsI3,
    UnionAds,
    Split,
    Lasso,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Input CSV with a header row and numeric columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "d")]
    pub treatment: String,
    #[arg(long, value_enum, default_value_t = Method::Ds)]
    pub method: Method,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Seed for the split-sample partition.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit without a constant term.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = DEFAULT_TRUNC_C)]
    pub trunc_c: f64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    Ate,
    Att,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LinkArg {
    Linear,
    Logit,
}

#[derive(Debug, Clone, Args)]
pub struct AteArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Binary (0/1) treatment column.
    #[arg(long, default_value = "d")]
    pub treatment: String,
    #[arg(long, value_enum, default_value_t = Kind::Ate)]
    pub kind: Kind,
    #[arg(long, value_enum, default_value_t = LinkArg::Linear)]
    pub link: LinkArg,
    /// Propensities are clipped to [trim, 1 - trim].
    #[arg(long, default_value_t = 0.01)]
    pub trim: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    /// Coefficient of the control in the outcome equation.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta_g: f64,
    /// Coefficient of the control in the treatment equation.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta_m: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(10..))]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the two summary rows as a report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    pub format: ReportFormat,
}

fn parse_design(s: &str) -> Result<DesignId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Input(_) | Error::UnknownDesign(_) | Error::UnknownEstimator(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        CliFailure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> CliFailure {
    CliFailure { code: EXIT_USAGE, message: message.into() }
}

const SUBCOMMANDS: [&str; 4] = ["simulate", "estimate", "ate", "demo-p1"];

/// Turns `key = value` lines into flags. `true` gives a bare switch, `false`
/// omits the flag. Blank lines and `#` comments are skipped.
pub fn config_to_args(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", k + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(format!("config line {}: empty key", k + 1));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Removes `--config` from the arguments and splices the file's flags in
/// right after the subcommand name, so explicit flags override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliFailure> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path: Option<String> = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().to_string();
        if s == "--config" {
            let v = it.next().ok_or_else(|| usage("--config needs a file"))?;
            path = Some(v.to_string_lossy().to_string());
        } else if let Some(v) = s.strip_prefix("--config=") {
            path = Some(v.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    let extra = config_to_args(&text).map_err(usage)?;
    let pos = rest
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| usage("--config needs a subcommand"))?;
    let tail = rest.split_off(pos + 1);
    rest.extend(extra.into_iter().map(OsString::from));
    rest.extend(tail);
    Ok(rest)
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Ate(a) => cmd_ate(a, out),
        Command::DemoP1(a) => cmd_demo_p1(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn io_fail(e: std::io::Error) -> CliFailure {
    CliFailure::from(Error::from(e))
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliFailure> {
    if a.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let spec = DesignSpec {
        design: a.design,
        n: a.n,
        p: a.p,
        r2_y: a.r2y,
        r2_d: a.r2d,
        alpha0: a.alpha0,
        seed: a.seed,
        literal_cy: a.literal_cy,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let config = McConfig {
        split: SplitConfig {
            options: EstimatorOptions { penalty: a.penalty.config(), ..Default::default() },
            trunc_c: a.trunc_c,
        },
    };
    let reps = a.reps as usize;
    let rows = match &a.grid {
        Some(grid) => {
            for &v in grid {
                if !(0.0..1.0).contains(&v) {
                    return Err(usage(format!("grid value {v} outside [0,1)")));
                }
            }
            run_grid(&spec, grid, &a.estimators, reps, a.seed, a.threads, &config)?
        }
        None => run_cell_with(&spec, &a.estimators, reps, a.seed, a.threads, &config)?,
    };
    if let Some(path) = &a.out {
        emit_report(&rows, a.format, path)?;
    }
    print_table(&rows, out).map_err(io_fail)
}

/// Human-oriented summary table.
pub fn print_table(rows: &[McSummary], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<11} {:>6} {:>5} {:>5} {:>6} {:>10} {:>10} {:>9} {:>7} {:>7} {:>9} {:>7} {:>5}",
        "estimator", "design", "r2_y", "r2_d", "reps", "mean_bias", "med_bias", "rmse", "reject", "cover", "ci_len",
        "s_hat", "fail"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<11} {:>6} {:>5.2} {:>5.2} {:>6} {:>10.4} {:>10.4} {:>9.4} {:>7.3} {:>7.3} {:>9.4} {:>7.2} {:>5}",
            r.estimator,
            r.design,
            r.r2_y,
            r.r2_d,
            r.reps,
            r.mean_bias,
            r.median_bias,
            r.rmse,
            r.rejection_rate_5pct,
            r.coverage_95,
            r.mean_ci_length,
            r.mean_s_hat,
            r.failures
        )?;
    }
    Ok(())
}

pub fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<(), CliFailure> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage(format!("--level must lie in (0,1), got {}", a.level)));
    }
    let csv = read_csv_path(&a.data, &a.outcome, &a.treatment)?;
    let opts = EstimatorOptions { penalty: a.penalty.config(), level: a.level, intercept: !a.no_intercept };
    let data = &csv.data;
    let report: EstimateReport = match a.method {
        Method::Ds => double_selection(data, &opts)?,
        Method::PostLasso => single_selection_post_lasso(data, &opts)?,
        Method::DsI3 => ds_plus_i3(data, &opts)?,
        Method::Lasso => lasso_direct(data, &opts)?,
        Method::UnionAds => union_ads(&double_selection(data, &opts)?, &single_selection_post_lasso(data, &opts)?)?,
        Method::Split => {
            let cfg = SplitConfig { options: opts.clone(), trunc_c: a.trunc_c };
            split_sample_estimate(data, &cfg, a.seed)?.0
        }
    };
    if a.json {
        let names: Vec<&str> = report.selected.iter().map(|&j| csv.controls[j].as_str()).collect();
        let value = serde_json::json!({ "method": method_name(a.method), "n": data.n(), "p": data.p(),
            "report": report, "selected_names": names });
        writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("report serializes")).map_err(io_fail)?;
        return Ok(());
    }
    let names: Vec<&str> = report.selected.iter().map(|&j| csv.controls[j].as_str()).collect();
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "method     {}", method_name(a.method))?;
        writeln!(out, "n          {}", data.n())?;
        writeln!(out, "p          {}", data.p())?;
        writeln!(out, "alpha_hat  {:.6}", report.alpha_hat)?;
        writeln!(out, "se         {:.6}", report.se)?;
        writeln!(out, "ci         [{:.6}, {:.6}] at {}", report.ci_lower, report.ci_upper, report.level)?;
        writeln!(out, "s_hat      {}", report.s_hat)?;
        writeln!(out, "selected   {}", names.join(","))?;
        if report.flags.any() {
            writeln!(
                out,
                "flags      truncated={} nonconverged={}",
                report.flags.truncated, report.flags.nonconverged
            )?;
        }
        Ok(())
    };
    w(out).map_err(io_fail)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Ds => "ds",
        Method::PostLasso => "post-lasso",
        Method::DsI3 => "ds-i3",
        Method::UnionAds => "union-ads",
        Method::Split => "split",
        Method::Lasso => "lasso",
    }
}

fn check_binary(d: &DVector<f64>, column: &str) -> Result<(), CliFailure> {
    match d.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(usage(format!("treatment column `{column}` must be 0/1; row {} has {}", i + 1, d[i]))),
        None => Ok(()),
    }
}

pub fn cmd_ate(a: &AteArgs, out: &mut dyn Write) -> Result<(), CliFailure> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage(format!("--level must lie in (0,1), got {}", a.level)));
    }
    if !(a.trim > 0.0 && a.trim < 0.5) {
        return Err(usage(format!("--trim must lie in (0,0.5), got {}", a.trim)));
    }
    let csv = read_csv_path(&a.data, &a.outcome, &a.treatment)?;
    let data = &csv.data;
    check_binary(&data.d, &a.treatment)?;
    let link = match a.link {
        LinkArg::Linear => Link::Linear,
        LinkArg::Logit => Link::Logit,
    };
    let cfg = HteConfig { penalty: a.penalty.config(), trim_eps: a.trim };
    let report = match a.kind {
        Kind::Ate => ate_estimate(&data.y, &data.d, &data.x, link, &cfg, a.level)?,
        Kind::Att => att_estimate(&data.y, &data.d, &data.x, link, &cfg, a.level)?,
    };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_fail)?;
        return Ok(());
    }
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "kind       {}", report.kind)?;
        writeln!(out, "link       {link}")?;
        writeln!(out, "n          {}", report.n)?;
        writeln!(out, "effect     {:.6}", report.effect_hat)?;
        writeln!(out, "se         {:.6}", report.se)?;
        writeln!(out, "ci         [{:.6}, {:.6}] at {}", report.ci_lower, report.ci_upper, report.level)?;
        if let Some(mu) = report.mu_hat {
            writeln!(out, "mu_hat     {mu:.6}")?;
        }
        Ok(())
    };
    w(out).map_err(io_fail)
}

pub fn cmd_demo_p1(a: &DemoArgs, out: &mut dyn Write) -> Result<(), CliFailure> {
    if a.n < 4 {
        return Err(usage(format!("--n must be at least 4, got {}", a.n)));
    }
    let demo = p1_ttest_demo(a.beta_g, a.beta_m, a.n, a.reps as usize, a.seed)?;
    if let Some(path) = &a.out {
        emit_report(&[demo.single.clone(), demo.double.clone()], a.format, path)?;
    }
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "{:<17} {:>11} {:>19} {:>10} {:>8} {:>9}", "method", "coverage_95", "rejection_rate_5pct", "mean_bias", "rmse", "inclusion")?;
        for (s, inc) in [(&demo.single, demo.single_inclusion), (&demo.double, demo.double_inclusion)] {
            writeln!(
                out,
                "{:<17} {:>11.4} {:>19.4} {:>10.4} {:>8.4} {:>9.4}",
                s.estimator, s.coverage_95, s.rejection_rate_5pct, s.mean_bias, s.rmse, inc
            )?;
        }
        Ok(())
    };
    w(out).map_err(io_fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_become_flags() {
        let args = config_to_args("# c\nreps = 5\nliteral_cy = true\nformat=json\nx=false\n").unwrap();
        assert_eq!(args, vec!["--reps", "5", "--literal-cy", "--format", "json"]);
        assert!(config_to_args("oops").is_err());
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "reps = 3\nn = 30\np = 10\nestimators = oracle\n").unwrap();
        let args: Vec<OsString> = ["pdsinfer", "--config", cfg.to_str().unwrap(), "simulate", "--reps", "2"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        match cli.command {
            Command::Simulate(s) => {
                assert_eq!(s.reps, 2);
                assert_eq!(s.n, 30);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
