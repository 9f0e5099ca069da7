//! Replication engine: draws samples from a design, runs the requested
//! estimators on each, and aggregates bias, RMSE, coverage and rejection.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{DesignSampler, DesignSpec};
use crate::error::{Error, Result};
use crate::regression::{Dataset, EstimateReport};
use crate::selection::{
    double_selection, ds_oracle, ds_plus_i3, lasso_direct, oracle, single_selection_post_lasso, union_ads,
};
use crate::split::{split_sample_estimate, SplitConfig};
use crate::stats::{derive_seed, lower_median, mean, tag_hash, two_sided_critical};

/// Default number of replications per cell.
pub const DEFAULT_REPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Oracle,
    DsOracle,
    PostLasso,
    Lasso,
    Ds,
    UnionAds,
    DsI3,
    Split,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Oracle,
        Estimator::DsOracle,
        Estimator::PostLasso,
        Estimator::Lasso,
        Estimator::Ds,
        Estimator::UnionAds,
        Estimator::DsI3,
        Estimator::Split,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Oracle => "oracle",
            Estimator::DsOracle => "ds-oracle",
            Estimator::PostLasso => "post-lasso",
            Estimator::Lasso => "lasso",
            Estimator::Ds => "ds",
            Estimator::UnionAds => "union-ads",
            Estimator::DsI3 => "ds-i3",
            Estimator::Split => "split",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|e| e.name()).collect()
    }

    /// Parses a comma-separated list such as "oracle,ds,split".
    pub fn parse_list(list: &str) -> Result<Vec<Estimator>> {
        let out: Vec<Estimator> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if out.is_empty() {
            return Err(Error::UnknownEstimator(list.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        if key == "ds-union-ads" {
            return Ok(Estimator::UnionAds);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == key)
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}

/// Outcome of one estimator on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicate {
    /// α̂ - α₀, absent when the estimator returned an error.
    pub bias: Option<f64>,
    pub covered: bool,
    pub rejected: bool,
    pub ci_length: Option<f64>,
    pub s_hat: Option<usize>,
    /// Errored, truncated or non-converged.
    pub failed: bool,
}

impl Replicate {
    pub fn from_report(r: &EstimateReport, alpha0: f64) -> Self {
        let z = two_sided_critical(r.level);
        let covered = r.covers(alpha0);
        // The symmetric interval and the t-test agree except on the boundary.
        let rejected = if r.se > 0.0 { ((r.alpha_hat - alpha0) / r.se).abs() > z } else { r.alpha_hat != alpha0 };
        Replicate {
            bias: Some(r.alpha_hat - alpha0),
            covered,
            rejected,
            ci_length: Some(r.width()),
            s_hat: Some(r.s_hat),
            failed: r.flags.any(),
        }
    }

    /// An errored replication counts as a rejection without coverage.
    pub fn failure() -> Self {
        Replicate { bias: None, covered: false, rejected: true, ci_length: None, s_hat: None, failed: true }
    }

    pub fn from_result(r: &Result<EstimateReport>, alpha0: f64) -> Self {
        match r {
            Ok(rep) => Self::from_report(rep, alpha0),
            Err(_) => Self::failure(),
        }
    }
}

/// Aggregate metrics for one (estimator, design, R²) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimator: String,
    pub design: String,
    pub r2_y: f64,
    pub r2_d: f64,
    pub reps: usize,
    pub mean_bias: f64,
    pub median_bias: f64,
    pub rmse: f64,
    pub rejection_rate_5pct: f64,
    pub coverage_95: f64,
    pub mean_ci_length: f64,
    pub mean_s_hat: f64,
    pub failures: usize,
}

pub const REPORT_HEADER: [&str; 13] = [
    "estimator",
    "design",
    "r2_y",
    "r2_d",
    "reps",
    "mean_bias",
    "median_bias",
    "rmse",
    "rejection_rate_5pct",
    "coverage_95",
    "mean_ci_length",
    "mean_s_hat",
    "failures",
];

impl McSummary {
    /// Bias, RMSE, interval length and ŝ average over replications that
    /// produced an estimate; rates are over all replications.
    pub fn from_replicates(estimator: &str, design: &str, r2_y: f64, r2_d: f64, reps: &[Replicate]) -> Self {
        let biases: Vec<f64> = reps.iter().filter_map(|r| r.bias).collect();
        let lengths: Vec<f64> = reps.iter().filter_map(|r| r.ci_length).collect();
        let s_hats: Vec<f64> = reps.iter().filter_map(|r| r.s_hat.map(|s| s as f64)).collect();
        let total = reps.len() as f64;
        let sq: Vec<f64> = biases.iter().map(|b| b * b).collect();
        McSummary {
            estimator: estimator.to_string(),
            design: design.to_string(),
            r2_y,
            r2_d,
            reps: reps.len(),
            mean_bias: mean(&biases),
            median_bias: lower_median(&biases),
            rmse: mean(&sq).sqrt(),
            rejection_rate_5pct: reps.iter().filter(|r| r.rejected).count() as f64 / total,
            coverage_95: reps.iter().filter(|r| r.covered).count() as f64 / total,
            mean_ci_length: mean(&lengths),
            mean_s_hat: mean(&s_hats),
            failures: reps.iter().filter(|r| r.failed).count(),
        }
    }
}

/// Settings for the estimators inside a simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct McConfig {
    pub split: SplitConfig,
}

fn cell_key(spec: &DesignSpec) -> u64 {
    derive_seed(&[
        tag_hash(&spec.design.label()),
        spec.r2_y.to_bits(),
        spec.r2_d.to_bits(),
        spec.n as u64,
        spec.p as u64,
        spec.alpha0.to_bits(),
        u64::from(spec.literal_cy),
    ])
}

/// Seed of replication `r` in a cell.
pub fn replication_seed(master_seed: u64, spec: &DesignSpec, r: usize) -> u64 {
    derive_seed(&[master_seed, cell_key(spec), r as u64])
}

/// Seed of the split-sample partition in replication `r`.
pub fn split_seed(master_seed: u64, spec: &DesignSpec, r: usize) -> u64 {
    derive_seed(&[master_seed, cell_key(spec), r as u64, tag_hash("split")])
}

/// Runs every estimator in `estimators` on one dataset.
pub fn run_estimators(
    data: &Dataset,
    estimators: &[Estimator],
    config: &McConfig,
    split_seed: u64,
) -> Vec<Result<EstimateReport>> {
    let opts = &config.split.options;
    let mut ds: Option<Result<EstimateReport>> = None;
    let mut pl: Option<Result<EstimateReport>> = None;
    let mut out = Vec::with_capacity(estimators.len());
    for &e in estimators {
        let r = match e {
            Estimator::Oracle => oracle(data, opts),
            Estimator::DsOracle => ds_oracle(data, opts),
            Estimator::Lasso => lasso_direct(data, opts),
            Estimator::DsI3 => ds_plus_i3(data, opts),
            Estimator::Split => split_sample_estimate(data, &config.split, split_seed).map(|(r, _)| r),
            Estimator::Ds => ds.get_or_insert_with(|| double_selection(data, opts)).clone(),
            Estimator::PostLasso => pl.get_or_insert_with(|| single_selection_post_lasso(data, opts)).clone(),
            Estimator::UnionAds => {
                let a = ds.get_or_insert_with(|| double_selection(data, opts)).clone();
                let b = pl.get_or_insert_with(|| single_selection_post_lasso(data, opts)).clone();
                match (a, b) {
                    (Ok(a), Ok(b)) => union_ads(&a, &b),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                }
            }
        };
        out.push(r);
    }
    out
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))
}

/// Simulates one cell. Output does not depend on `threads`.
pub fn run_cell(
    spec: &DesignSpec,
    estimators: &[Estimator],
    reps: usize,
    master_seed: u64,
    threads: usize,
) -> Result<Vec<McSummary>> {
    run_cell_with(spec, estimators, reps, master_seed, threads, &McConfig::default())
}

pub fn run_cell_with(
    spec: &DesignSpec,
    estimators: &[Estimator],
    reps: usize,
    master_seed: u64,
    threads: usize,
    config: &McConfig,
) -> Result<Vec<McSummary>> {
    let pool = build_pool(threads)?;
    pool.install(|| cell_in_pool(spec, estimators, reps, master_seed, config))
}

fn cell_in_pool(
    spec: &DesignSpec,
    estimators: &[Estimator],
    reps: usize,
    master_seed: u64,
    config: &McConfig,
) -> Result<Vec<McSummary>> {
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    let sampler = DesignSampler::new(spec)?;
    let rows: Vec<Vec<Replicate>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<Replicate>> {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(master_seed, spec, r));
            let sample = sampler.sample(&mut rng)?;
            let results = run_estimators(&sample.data, estimators, config, split_seed(master_seed, spec, r));
            Ok(results.iter().map(|res| Replicate::from_result(res, spec.alpha0)).collect())
        })
        .collect::<Result<_>>()?;
    let label = spec.design.label();
    Ok(estimators
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let col: Vec<Replicate> = rows.iter().map(|row| row[k]).collect();
            McSummary::from_replicates(e.name(), &label, spec.r2_y, spec.r2_d, &col)
        })
        .collect())
}

/// Runs the full r2_y × r2_d grid for the design in `base`. Rows are ordered
/// by r2_y, then r2_d, then estimator.
pub fn run_grid(
    base: &DesignSpec,
    r2_values: &[f64],
    estimators: &[Estimator],
    reps: usize,
    master_seed: u64,
    threads: usize,
    config: &McConfig,
) -> Result<Vec<McSummary>> {
    if r2_values.is_empty() {
        return Err(Error::InvalidArgument("empty R² grid".into()));
    }
    let pool = build_pool(threads)?;
    let mut rows = Vec::new();
    for &r2_y in r2_values {
        for &r2_d in r2_values {
            let spec = base.clone().with_r2(r2_y, r2_d);
            spec.validate()?;
            rows.extend(pool.install(|| cell_in_pool(&spec, estimators, reps, master_seed, config))?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}`; use csv or json"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

/// Writes rows as CSV (fixed header, always present) or as a JSON array.
pub fn write_report<W: Write>(rows: &[McSummary], format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            let io = |e: csv::Error| Error::Io(e.to_string());
            w.write_record(REPORT_HEADER).map_err(io)?;
            for row in rows {
                w.serialize(row).map_err(io)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(rows: &[McSummary], format: ReportFormat, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_report(rows, format, BufWriter::new(file))
}

/// Reads back a CSV report.
pub fn read_csv_report<R: std::io::Read>(input: R) -> Result<Vec<McSummary>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(|e| Error::Io(e.to_string()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::DesignId;

    fn rep(bias: f64, covered: bool) -> Replicate {
        Replicate {
            bias: Some(bias),
            covered,
            rejected: !covered,
            ci_length: Some(1.0),
            s_hat: Some(2),
            failed: false,
        }
    }

    #[test]
    fn names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!("ds-union-ads".parse::<Estimator>().unwrap(), Estimator::UnionAds);
        let err = "bogus".parse::<Estimator>().unwrap_err().to_string();
        assert!(err.contains("post-lasso") && err.contains("split"));
    }

    #[test]
    fn single_rep_rmse_is_abs_bias() {
        let s = McSummary::from_replicates("x", "1", 0.0, 0.0, &[rep(-0.3, true)]);
        assert_eq!(s.rmse, 0.3);
        assert_eq!(s.mean_bias, -0.3);
    }

    #[test]
    fn failures_count_against_coverage() {
        let s = McSummary::from_replicates("x", "1", 0.0, 0.0, &[rep(0.1, true), Replicate::failure()]);
        assert_eq!(s.coverage_95, 0.5);
        assert_eq!(s.rejection_rate_5pct, 0.5);
        assert_eq!(s.failures, 1);
        assert_eq!(s.mean_bias, 0.1);
    }

    #[test]
    fn csv_header_only_for_empty() {
        let mut buf = Vec::new();
        write_report(&[], ReportFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", REPORT_HEADER.join(",")));
    }

    #[test]
    fn small_cell_runs() {
        let spec = DesignSpec::new(DesignId::from_str("1").unwrap()).with_size(40, 20).with_r2(0.4, 0.4);
        let rows = run_cell(&spec, &[Estimator::Oracle, Estimator::Ds], 4, 1, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].reps, 4);
    }
}
