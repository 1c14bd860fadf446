//! Experiment configuration and sweep execution.
//!
//! Config files are flat `key = value` text with `#` comments; unknown keys
//! are rejected so typos surface instead of silently using defaults. A
//! sweep runs every (algorithm, swept value, replication) combination,
//! writes one CSV row per run in that order, and emits a summary file with
//! means and 95% confidence half-widths. Seeds derive from the base seed
//! and the (value, replication) index only, so all algorithms see
//! identical mobility and traffic and rerunning a sweep reproduces its
//! output byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::MetricsRecord;
use crate::sim::{Algorithm, SimConfig, SimError, Simulation};

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Number of vehicles.
    Density,
    /// Number of CBR connection pairs.
    Traffic,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::Density => "density",
            SweepParameter::Traffic => "traffic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "density" => Some(SweepParameter::Density),
            "traffic" => Some(SweepParameter::Traffic),
            _ => None,
        }
    }

    /// Default swept values when the config does not name any.
    pub fn default_values(&self) -> Vec<u64> {
        match self {
            SweepParameter::Density => vec![100, 150, 200, 250, 300],
            SweepParameter::Traffic => vec![20, 40, 60, 80, 100],
        }
    }
}

/// A sweep: the swept parameter, its values, replications per value, and
/// the algorithms to compare.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<u64>,
    pub replications: usize,
    pub algorithms: Vec<Algorithm>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            return Err(ConfigError::invalid("sweep_values", "must not be empty"));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::invalid(
                "sweep_values",
                "must be strictly ascending",
            ));
        }
        if self.replications == 0 {
            return Err(ConfigError::invalid("replications", "must be >= 1"));
        }
        if self.algorithms.is_empty() {
            return Err(ConfigError::invalid("algorithms", "must not be empty"));
        }
        Ok(())
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            parameter: SweepParameter::Density,
            values: SweepParameter::Density.default_values(),
            replications: 10,
            algorithms: vec![Algorithm::Pro, Algorithm::Greedy, Algorithm::Exor],
        }
    }
}

/// Result of parsing a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub sim: SimConfig,
    pub sweep: SweepSpec,
    /// Whether the file named sweep values explicitly (a later parameter
    /// override should re-default them when it did not).
    pub sweep_values_explicit: bool,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line_no} is not `key = value`: {line:?}")]
    Syntax { line_no: usize, line: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| ConfigError::invalid(key, e.to_string()))
}

/// Parses config text. Every parameter has a default; the file only states
/// overrides.
pub fn parse_config_str(text: &str) -> Result<ParsedConfig, ConfigError> {
    let mut sim = SimConfig::default();
    let mut sweep = SweepSpec::default();
    let mut values_explicit = false;
    let mut param_explicit = false;

    for (line_no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line_no: line_no + 1,
            line: raw.to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "scenario_id" => sim.scenario_id = value.to_string(),
            "algorithm" => {
                sim.algorithm = Algorithm::parse(value)
                    .ok_or_else(|| ConfigError::invalid(key, "expected pro, greedy, or exor"))?
            }
            "algorithms" => {
                let mut algos = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    let a = Algorithm::parse(part).ok_or_else(|| {
                        ConfigError::invalid(key, format!("unknown algorithm {part:?}"))
                    })?;
                    if !algos.contains(&a) {
                        algos.push(a);
                    }
                }
                sweep.algorithms = algos;
            }
            "seed" => sim.seed = parse_num(key, value)?,
            "area_width_m" => sim.area.0 = parse_num(key, value)?,
            "area_height_m" => sim.area.1 = parse_num(key, value)?,
            "block_size_m" => sim.block_size = parse_num(key, value)?,
            "n_vehicles" => sim.n_vehicles = parse_num(key, value)?,
            "n_cbr_pairs" => sim.n_cbr_pairs = parse_num(key, value)?,
            "cbr_rate_pps" => sim.cbr_rate = parse_num(key, value)?,
            "sim_duration_s" => sim.sim_duration = parse_num(key, value)?,
            "beacon_interval_s" => sim.beacon_interval = parse_num(key, value)?,
            "neighbor_expiry_s" => sim.neighbor_expiry = parse_num(key, value)?,
            "transmission_range_m" => sim.range = parse_num(key, value)?,
            "max_queue_len" => sim.max_queue = parse_num(key, value)?,
            "t_m_s" => sim.slot_time = parse_num(key, value)?,
            "p0" => sim.p0 = parse_num(key, value)?,
            "hop_limit" => sim.hop_limit = parse_num(key, value)?,
            "ttl_s" => sim.ttl = parse_num(key, value)?,
            "packet_size_bytes" => sim.packet_size_bytes = parse_num(key, value)?,
            "data_rate_mbps" => sim.data_rate_mbps = parse_num(key, value)?,
            "mobility_step_s" => sim.mobility_step = parse_num(key, value)?,
            "traffic_light_period_s" => sim.traffic_light_period = parse_num(key, value)?,
            "v_min_mps" => sim.v_min = parse_num(key, value)?,
            "v_max_mps" => sim.v_max = parse_num(key, value)?,
            "sigma" => sim.sigma = parse_num(key, value)?,
            "alpha" => sim.sinr.alpha = parse_num(key, value)?,
            "beta" => sim.sinr.beta = parse_num(key, value)?,
            "noise" => sim.sinr.noise = parse_num(key, value)?,
            "mc_samples" => sim.sinr.mc_samples = parse_num(key, value)?,
            "p_opp_threshold" => sim.routing.p_opp_threshold = parse_num(key, value)?,
            "timer_ms" => {
                let ms: f64 = parse_num(key, value)?;
                sim.routing.timer = ms / 1000.0;
            }
            "tie_epsilon" => sim.routing.tie_epsilon = parse_num(key, value)?,
            "p_cut" => sim.p_cut = parse_num(key, value)?,
            "max_scene_interferers" => sim.max_scene_interferers = parse_num(key, value)?,
            "exor_k_max" => sim.exor_k_max = parse_num(key, value)?,
            "carrier_sense_factor" => sim.carrier_sense_factor = parse_num(key, value)?,
            "sweep_param" => {
                sweep.parameter = SweepParameter::parse(value)
                    .ok_or_else(|| ConfigError::invalid(key, "expected density or traffic"))?;
                param_explicit = true;
            }
            "sweep_values" => {
                let mut vals = Vec::new();
                for part in value.split(',') {
                    vals.push(parse_num::<u64>(key, part.trim())?);
                }
                sweep.values = vals;
                values_explicit = true;
            }
            "replications" => sweep.replications = parse_num(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
    }

    if param_explicit && !values_explicit {
        sweep.values = sweep.parameter.default_values();
    }
    sim.validate()
        .map_err(|e| ConfigError::invalid(&e.key, e.reason))?;
    sweep.validate()?;
    Ok(ParsedConfig {
        sim,
        sweep,
        sweep_values_explicit: values_explicit,
    })
}

/// Parses a config file; an empty file yields all defaults.
pub fn parse_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Serializes a configuration with every key stated, in parse order.
/// `parse_config_str` of the output reproduces the inputs exactly.
pub fn to_config_string(sim: &SimConfig, sweep: &SweepSpec) -> String {
    let mut s = String::new();
    let algos: Vec<&str> = sweep.algorithms.iter().map(|a| a.as_str()).collect();
    let values: Vec<String> = sweep.values.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "scenario_id = {}", sim.scenario_id);
    let _ = writeln!(s, "algorithm = {}", sim.algorithm.as_str());
    let _ = writeln!(s, "algorithms = {}", algos.join(","));
    let _ = writeln!(s, "seed = {}", sim.seed);
    let _ = writeln!(s, "area_width_m = {}", sim.area.0);
    let _ = writeln!(s, "area_height_m = {}", sim.area.1);
    let _ = writeln!(s, "block_size_m = {}", sim.block_size);
    let _ = writeln!(s, "n_vehicles = {}", sim.n_vehicles);
    let _ = writeln!(s, "n_cbr_pairs = {}", sim.n_cbr_pairs);
    let _ = writeln!(s, "cbr_rate_pps = {}", sim.cbr_rate);
    let _ = writeln!(s, "sim_duration_s = {}", sim.sim_duration);
    let _ = writeln!(s, "beacon_interval_s = {}", sim.beacon_interval);
    let _ = writeln!(s, "neighbor_expiry_s = {}", sim.neighbor_expiry);
    let _ = writeln!(s, "transmission_range_m = {}", sim.range);
    let _ = writeln!(s, "max_queue_len = {}", sim.max_queue);
    let _ = writeln!(s, "t_m_s = {}", sim.slot_time);
    let _ = writeln!(s, "p0 = {}", sim.p0);
    let _ = writeln!(s, "hop_limit = {}", sim.hop_limit);
    let _ = writeln!(s, "ttl_s = {}", sim.ttl);
    let _ = writeln!(s, "packet_size_bytes = {}", sim.packet_size_bytes);
    let _ = writeln!(s, "data_rate_mbps = {}", sim.data_rate_mbps);
    let _ = writeln!(s, "mobility_step_s = {}", sim.mobility_step);
    let _ = writeln!(s, "traffic_light_period_s = {}", sim.traffic_light_period);
    let _ = writeln!(s, "v_min_mps = {}", sim.v_min);
    let _ = writeln!(s, "v_max_mps = {}", sim.v_max);
    let _ = writeln!(s, "sigma = {}", sim.sigma);
    let _ = writeln!(s, "alpha = {}", sim.sinr.alpha);
    let _ = writeln!(s, "beta = {}", sim.sinr.beta);
    let _ = writeln!(s, "noise = {}", sim.sinr.noise);
    let _ = writeln!(s, "mc_samples = {}", sim.sinr.mc_samples);
    let _ = writeln!(s, "p_opp_threshold = {}", sim.routing.p_opp_threshold);
    let _ = writeln!(s, "timer_ms = {}", sim.routing.timer * 1000.0);
    let _ = writeln!(s, "tie_epsilon = {}", sim.routing.tie_epsilon);
    let _ = writeln!(s, "p_cut = {}", sim.p_cut);
    let _ = writeln!(s, "max_scene_interferers = {}", sim.max_scene_interferers);
    let _ = writeln!(s, "exor_k_max = {}", sim.exor_k_max);
    let _ = writeln!(s, "carrier_sense_factor = {}", sim.carrier_sense_factor);
    let _ = writeln!(s, "sweep_param = {}", sweep.parameter.as_str());
    let _ = writeln!(s, "sweep_values = {}", values.join(","));
    let _ = writeln!(s, "replications = {}", sweep.replications);
    s
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// CSV header for result rows (fixed column order).
pub const RESULTS_HEADER: &str = "scenario_id,algorithm,seed,n_vehicles,n_cbr_pairs,generated,delivered,pdr,avg_delay_s,throughput,drop_queue,drop_sinr,drop_void,drop_limit";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

/// One result row in the fixed column order. Hop-limit and TTL drops share
/// the `drop_limit` column.
pub fn csv_row(m: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.scenario_id,
        m.algorithm,
        m.seed,
        m.n_vehicles,
        m.n_cbr_pairs,
        m.generated,
        m.delivered,
        fmt_opt(m.pdr),
        fmt_opt(m.avg_delay),
        fmt_opt(m.throughput),
        m.drop_queue_overflow,
        m.drop_sinr_fail,
        m.drop_void,
        m.drop_hop_limit + m.drop_ttl,
    )
}

/// Mean and 95% half-width over one (algorithm, value) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub parameter: String,
    pub value: u64,
    pub replications: usize,
    pub mean_pdr: Option<f64>,
    pub ci_pdr: Option<f64>,
    pub mean_delay: Option<f64>,
    pub ci_delay: Option<f64>,
    pub mean_throughput: Option<f64>,
    pub ci_throughput: Option<f64>,
}

fn mean_ci(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid dof")
        .inverse_cdf(0.975);
    (Some(mean), Some(t * (var / n).sqrt()))
}

/// Aggregates rows per (algorithm, swept value), preserving first-seen
/// order.
pub fn summarize(records: &[MetricsRecord], parameter: SweepParameter) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64)> = Vec::new();
    for m in records {
        let value = match parameter {
            SweepParameter::Density => m.n_vehicles as u64,
            SweepParameter::Traffic => m.n_cbr_pairs as u64,
        };
        let key = (m.algorithm.clone(), value);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(algorithm, value)| {
            let cell: Vec<&MetricsRecord> = records
                .iter()
                .filter(|m| {
                    m.algorithm == algorithm
                        && match parameter {
                            SweepParameter::Density => m.n_vehicles as u64 == value,
                            SweepParameter::Traffic => m.n_cbr_pairs as u64 == value,
                        }
                })
                .collect();
            let pdrs: Vec<f64> = cell.iter().filter_map(|m| m.pdr).collect();
            let delays: Vec<f64> = cell.iter().filter_map(|m| m.avg_delay).collect();
            let tps: Vec<f64> = cell.iter().filter_map(|m| m.throughput).collect();
            let (mean_pdr, ci_pdr) = mean_ci(&pdrs);
            let (mean_delay, ci_delay) = mean_ci(&delays);
            let (mean_throughput, ci_throughput) = mean_ci(&tps);
            SummaryRow {
                algorithm,
                parameter: parameter.as_str().to_string(),
                value,
                replications: cell.len(),
                mean_pdr,
                ci_pdr,
                mean_delay,
                ci_delay,
                mean_throughput,
                ci_throughput,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "algorithm,parameter,value,replications,mean_pdr,ci95_pdr,mean_delay_s,ci95_delay_s,mean_throughput,ci95_throughput";

pub fn summary_row_csv(r: &SummaryRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.algorithm,
        r.parameter,
        r.value,
        r.replications,
        fmt_opt(r.mean_pdr),
        fmt_opt(r.ci_pdr),
        fmt_opt(r.mean_delay),
        fmt_opt(r.ci_delay),
        fmt_opt(r.mean_throughput),
        fmt_opt(r.ci_throughput),
    )
}

/// Behavior switches for [`run_sweep`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Write a per-event trace file for every run.
    pub trace: bool,
    /// Suppress progress lines on stdout.
    pub quiet: bool,
}

/// Everything a finished sweep produced.
#[derive(Debug)]
pub struct SweepOutput {
    pub records: Vec<MetricsRecord>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

/// One unit of sweep work.
#[derive(Debug, Clone)]
struct Job {
    cfg: SimConfig,
}

/// Expands a sweep into per-run configs in deterministic
/// (algorithm, value, replication) order. Seeds depend only on the value
/// and replication indices so every algorithm replays the same worlds.
pub fn sweep_configs(base: &SimConfig, spec: &SweepSpec) -> Result<Vec<SimConfig>, SimError> {
    let mut out = Vec::new();
    for &algo in &spec.algorithms {
        for (vi, &value) in spec.values.iter().enumerate() {
            for rep in 0..spec.replications {
                let mut cfg = base.clone();
                cfg.algorithm = algo;
                match spec.parameter {
                    SweepParameter::Density => cfg.n_vehicles = value as usize,
                    SweepParameter::Traffic => cfg.n_cbr_pairs = value as usize,
                }
                cfg.seed = base
                    .seed
                    .wrapping_add((vi * spec.replications + rep) as u64);
                cfg.scenario_id = format!("{}_{}", spec.parameter.as_str(), value);
                cfg.validate()?;
                out.push(cfg);
            }
        }
    }
    Ok(out)
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let n = std::env::var("PRO_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
}

fn run_one(cfg: SimConfig, out_dir: &Path, opts: &SweepOptions) -> Result<MetricsRecord, SweepError> {
    let trace_name = format!(
        "trace_{}_{}_{}.log",
        cfg.scenario_id,
        cfg.algorithm.as_str(),
        cfg.seed
    );
    let mut sim = Simulation::new(cfg).map_err(SweepError::Sim)?;
    if opts.trace {
        sim.enable_trace();
    }
    let record = sim.run();
    if opts.trace {
        let path = out_dir.join(trace_name);
        let mut text = sim.trace_lines().join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|source| SweepError::Io { path, source })?;
    }
    Ok(record)
}

/// Runs the whole sweep and writes `results.csv` and `summary.csv` under
/// `out_dir`. On a run failure the rows completed so far are preserved and
/// an error row is appended before the error propagates.
pub fn run_sweep(
    base: &SimConfig,
    spec: &SweepSpec,
    out_dir: &Path,
    opts: &SweepOptions,
) -> Result<SweepOutput, SweepError> {
    spec.validate()?;
    let jobs: Vec<Job> = sweep_configs(base, spec)?
        .into_iter()
        .map(|cfg| Job { cfg })
        .collect();
    fs::create_dir_all(out_dir).map_err(|source| SweepError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let worker = |job: &Job| -> Result<MetricsRecord, SweepError> {
        let r = run_one(job.cfg.clone(), out_dir, opts);
        if !opts.quiet {
            if let Ok(m) = &r {
                let mut line = format!(
                    "{} {} seed={} pdr={}",
                    m.scenario_id,
                    m.algorithm,
                    m.seed,
                    fmt_opt(m.pdr)
                );
                let _ = write!(line, " delay={}", fmt_opt(m.avg_delay));
                println!("{line}");
                let _ = std::io::stdout().flush();
            }
        }
        r
    };
    let results: Vec<Result<MetricsRecord, SweepError>> = match thread_pool() {
        Some(pool) => pool.install(|| jobs.par_iter().map(worker).collect()),
        None => jobs.par_iter().map(worker).collect(),
    };

    let results_path = out_dir.join("results.csv");
    let summary_path = out_dir.join("summary.csv");
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut failure: Option<SweepError> = None;
    for r in results {
        match r {
            Ok(m) => {
                rows.push(csv_row(&m));
                records.push(m);
            }
            Err(e) => {
                rows.push(format!("error,{e},,,,,,,,,,,,"));
                failure = Some(e);
                break;
            }
        }
    }
    let mut text = String::from(RESULTS_HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&results_path, text).map_err(|source| SweepError::Io {
        path: results_path.clone(),
        source,
    })?;

    if let Some(e) = failure {
        return Err(e);
    }

    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for row in summarize(&records, spec.parameter) {
        text.push_str(&summary_row_csv(&row));
        text.push('\n');
    }
    fs::write(&summary_path, text).map_err(|source| SweepError::Io {
        path: summary_path.clone(),
        source,
    })?;

    Ok(SweepOutput {
        records,
        results_path,
        summary_path,
    })
}

/// Writes a standalone results CSV (used for single runs).
pub fn write_results_csv(records: &[MetricsRecord], path: &Path) -> Result<(), SweepError> {
    let mut text = String::from(RESULTS_HEADER);
    text.push('\n');
    for m in records {
        text.push_str(&csv_row(m));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}
