//! Experiment runner: single simulations or parameter sweeps from a flat
//! `key = value` config file, with CSV results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pro_sim::experiment::{
    parse_config, run_sweep, write_results_csv, ParsedConfig, SweepOptions, SweepParameter,
};
use pro_sim::sim::{Algorithm, SimConfig, Simulation};

#[derive(Parser, Debug)]
#[command(
    name = "pro-sim",
    about = "VANET opportunistic-routing simulator and experiment runner",
    version
)]
struct Args {
    /// Experiment config file (flat `key = value`); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for CSV results and traces.
    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Override the base RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Restrict to one algorithm: pro, greedy, or exor.
    #[arg(long)]
    algo: Option<String>,

    /// Run a sweep over this parameter (density or traffic) instead of a
    /// single simulation.
    #[arg(long)]
    sweep: Option<String>,

    /// Write a per-event trace file for every run.
    #[arg(long)]
    trace: bool,

    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> Result<(), String> {
    let ParsedConfig {
        mut sim,
        mut sweep,
        sweep_values_explicit,
    } = match &args.config {
        Some(path) => parse_config(path).map_err(|e| e.to_string())?,
        None => ParsedConfig {
            sim: SimConfig::default(),
            sweep: Default::default(),
            sweep_values_explicit: false,
        },
    };

    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    let algo_override = match &args.algo {
        Some(s) => Some(
            Algorithm::parse(s)
                .ok_or_else(|| format!("unknown algorithm {s:?} (expected pro, greedy, exor)"))?,
        ),
        None => None,
    };

    match &args.sweep {
        Some(param) => {
            let parameter = SweepParameter::parse(param)
                .ok_or_else(|| format!("unknown sweep {param:?} (expected density, traffic)"))?;
            if parameter != sweep.parameter {
                sweep.parameter = parameter;
                if !sweep_values_explicit {
                    sweep.values = parameter.default_values();
                }
            }
            if let Some(a) = algo_override {
                sweep.algorithms = vec![a];
            }
            let opts = SweepOptions {
                trace: args.trace,
                quiet: args.quiet,
            };
            let out = run_sweep(&sim, &sweep, &args.out, &opts).map_err(|e| e.to_string())?;
            if !args.quiet {
                println!(
                    "wrote {} rows to {} (summary: {})",
                    out.records.len(),
                    out.results_path.display(),
                    out.summary_path.display()
                );
            }
            Ok(())
        }
        None => {
            if let Some(a) = algo_override {
                sim.algorithm = a;
            }
            std::fs::create_dir_all(&args.out)
                .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
            let mut runner = Simulation::new(sim).map_err(|e| e.to_string())?;
            if args.trace {
                runner.enable_trace();
            }
            let record = runner.run();
            if args.trace {
                let path = args.out.join(format!(
                    "trace_{}_{}_{}.log",
                    record.scenario_id, record.algorithm, record.seed
                ));
                let mut text = runner.trace_lines().join("\n");
                text.push('\n');
                std::fs::write(&path, text)
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            let path = args.out.join("results.csv");
            write_results_csv(std::slice::from_ref(&record), &path)
                .map_err(|e| e.to_string())?;
            if !args.quiet {
                let fmt = |v: Option<f64>| match v {
                    Some(x) => format!("{x:.4}"),
                    None => "NA".to_string(),
                };
                println!(
                    "{} {} seed={}: generated={} delivered={} pdr={} delay={} throughput={}",
                    record.scenario_id,
                    record.algorithm,
                    record.seed,
                    record.generated,
                    record.delivered,
                    fmt(record.pdr),
                    fmt(record.avg_delay),
                    fmt(record.throughput),
                );
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
