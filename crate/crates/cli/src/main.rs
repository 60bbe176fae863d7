//! `irsmec` command-line front end.
//!
//! Exit status: 0 on success, 2 for malformed input files or parameters,
//! 3 when a solver result breaks its contract (failed chain or oracle check,
//! numerical failure), 1 for anything else.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use irsmec::ao::{verify_chain, write_trace};
use irsmec::experiments::{run_scenario, Instance, ScenarioParams};
use irsmec::oracle::{oracle_check, OracleConfig};
use irsmec::single_user::activation_map;
use irsmec::Error;

#[derive(Parser, Debug)]
#[command(version, about = "Computation-rate optimizer for IRS-aided wireless-powered MEC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one instance file and print the solution as JSON.
    Solve {
        instance: PathBuf,
        /// Write the solution here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write the per-iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario file and write runs.csv, summary.csv and metadata.json.
    Sweep {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Check the TDMA/NOMA inequality chain on one instance.
    CompareMa { instance: PathBuf },
    /// Single-device activation map over N, P_E and C as CSV.
    ActivationMap {
        /// Deployment (scenario `params` block); the first device is used.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,8,16,32")]
        elements: Vec<usize>,
        /// HAP powers in dBm as `start:stop:step`.
        #[arg(long, default_value = "20:50:1")]
        pe_dbm: String,
        #[arg(long, value_delimiter = ',', default_value = "400,800,2000")]
        cycles: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare the solver with the brute-force oracle on a tiny instance.
    OracleCheck {
        instance: PathBuf,
        #[arg(long, default_value_t = 64)]
        phase_levels: usize,
        #[arg(long, default_value_t = 9)]
        grid_points: usize,
    },
}

/// Marks a result that breaks a solver contract.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Violation>().is_some() {
        return 3;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Schema { .. } | Error::InvalidParams { .. } | Error::Json(_) | Error::UnknownBenchmark(_)) => 2,
        Some(
            Error::Numerical(_)
            | Error::InfeasibleAnchor(_)
            | Error::BracketGrowth { .. }
            | Error::QosInfeasible(_),
        ) => 3,
        _ => 1,
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Solve { instance, out, trace } => {
            let mut inst = Instance::load(&instance)?;
            inst.ao.record_trace |= trace.is_some();
            let r = inst.solve()?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &r.solution)?;
            writeln!(w)?;
            if let Some(t) = trace {
                write_trace(File::create(&t)?, &r.trace)?;
            }
        }
        Command::Sweep { scenario, out_dir } => {
            let o = run_scenario(&scenario, &out_dir)?;
            println!("{} rows -> {}", o.rows.len(), o.runs_csv.display());
            println!("summary -> {}", o.summary_csv.display());
        }
        Command::CompareMa { instance } => {
            let inst = Instance::load(&instance)?;
            let params = inst.system();
            let chan = inst.channel(&params)?;
            let report = verify_chain(&params, &chan, &inst.ao)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.holds() {
                return Err(Violation("inequality chain violated".into()).into());
            }
        }
        Command::ActivationMap {
            params,
            elements,
            pe_dbm,
            cycles,
            out,
        } => {
            let sp: ScenarioParams = match params {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).map_err(|e| Error::Schema {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?,
                None => ScenarioParams::default(),
            };
            let mut system = sp.realize(0);
            system.device_positions = vec![sp.device_center];
            let powers = parse_range(&pe_dbm)?;
            let rows = activation_map(&system, &elements, &powers, &cycles)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Command::OracleCheck {
            instance,
            phase_levels,
            grid_points,
        } => {
            let inst = Instance::load(&instance)?;
            let params = inst.system();
            let chan = inst.channel(&params)?;
            let cfg = OracleConfig {
                phase_levels,
                grid_points,
                ..OracleConfig::default()
            };
            let report = oracle_check(&params, &chan, inst.case, inst.ma, &cfg, &inst.ao)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                return Err(Violation(format!("solver is {:.3e} below the oracle", -report.gap)).into());
            }
        }
    }
    Ok(())
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Schema {
        path: "pe_dbm".into(),
        reason: format!("expected start:stop:step, got `{s}`"),
    };
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else { return Err(bad().into()) };
    if !(step > 0.0) || stop < start {
        return Err(bad().into());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}
