use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use usdn_core::config::{ConfigError, Scenario};
use usdn_core::metrics::{
    events_csv, per_node_csv, summary_csv, summary_row, traffic_ratio_csv, SUMMARY_HEADER,
};
use usdn_core::runner::{run_scenario, sweep, RunError, SweepAxis};
use usdn_core::MICROS_PER_SEC;

/// Discrete-event simulator for an SDN-managed low-power wireless mesh.
#[derive(Parser)]
#[command(name = "usdn-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario with one seed and write CSV reports.
    Run {
        /// Scenario file.
        #[arg(long)]
        scenario: PathBuf,
        /// Master seed for every random draw in the run.
        #[arg(long)]
        seed: u64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Also write the full event log as events.csv.
        #[arg(long)]
        events: bool,
    },
    /// Re-run a scenario across a list of parameter values and a seed range,
    /// accumulating one summary row per (value, seed) into sweep.csv.
    Sweep {
        /// Scenario file; must have an [sdn] section.
        #[arg(long)]
        scenario: PathBuf,
        /// Knob to vary: nsu_period_s or ft_lifetime_s.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma separated values in seconds, e.g. 60,120,300.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        /// Seed count; seeds 1 through this value are run.
        #[arg(long)]
        seeds: u64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a scenario file without running it.
    Validate {
        /// Scenario file.
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("USDN_SIM_LOG")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            events,
        } => cmd_run(&scenario, seed, &out, events),
        Cmd::Sweep {
            scenario,
            axis,
            values,
            seeds,
            out,
        } => cmd_sweep(&scenario, axis, &values, seeds, &out),
        Cmd::Validate { scenario } => cmd_validate(&scenario),
    }
}

fn cmd_run(path: &Path, seed: u64, out: &Path, events: bool) -> anyhow::Result<()> {
    let scenario = Scenario::load(path)?;
    let started = Instant::now();
    let run = run_scenario(&scenario, seed)?;
    log::info!(
        "{} seed {seed}: {} log records in {:?}",
        scenario.name,
        run.log.len(),
        started.elapsed()
    );
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_out(out, "summary.csv", summary_csv(&run.report, &scenario.name, seed))?;
    write_out(out, "per_node.csv", per_node_csv(&run.report))?;
    write_out(out, "traffic_ratio.csv", traffic_ratio_csv(&run.report))?;
    if events {
        write_out(out, "events.csv", events_csv(&run.log))?;
    }
    Ok(())
}

fn cmd_sweep(
    path: &Path,
    axis: SweepAxis,
    values: &[u64],
    seed_count: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let scenario = Scenario::load(path)?;
    let seeds: Vec<u64> = (1..=seed_count).collect();
    let started = Instant::now();
    let points = sweep(&scenario, axis, values, &seeds)?;
    log::info!(
        "{}: {} sweep points in {:?}",
        scenario.name,
        points.len(),
        started.elapsed()
    );
    let mut csv = format!("axis,value,{SUMMARY_HEADER}\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{}",
            axis.as_str(),
            p.axis_value,
            summary_row(&p.report, &scenario.name, p.seed)
        ));
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_out(out, "sweep.csv", csv)
}

fn cmd_validate(path: &Path) -> anyhow::Result<()> {
    let scenario = Scenario::load(path)?;
    println!(
        "{}: {} nodes, {} flows, {} interferers, {:.0} s, sdn {}",
        scenario.name,
        scenario.node_ids().len(),
        scenario.flows.len(),
        scenario.interferers.len(),
        scenario.duration as f64 / MICROS_PER_SEC as f64,
        if scenario.sdn.is_some() { "on" } else { "off" },
    );
    Ok(())
}

fn write_out(dir: &Path, file: &str, content: String) -> anyhow::Result<()> {
    let path = dir.join(file);
    fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))
}

/// Map an error to the documented exit code: 2 for an invalid scenario,
/// 1 for anything else (IO, log consistency).
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(cfg) = err.downcast_ref::<ConfigError>() {
        return config_code(cfg);
    }
    if let Some(RunError::Config(cfg)) = err.downcast_ref::<RunError>() {
        return config_code(cfg);
    }
    1
}

fn config_code(err: &ConfigError) -> u8 {
    match err {
        ConfigError::Io { .. } => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_scenarios_exit_two_but_io_exits_one() {
        let invalid = anyhow::Error::from(ConfigError::Invalid("bad".into()));
        assert_eq!(exit_code(&invalid), 2);

        let io = anyhow::Error::from(ConfigError::Io {
            path: "missing.cfg".into(),
            err: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        });
        assert_eq!(exit_code(&io), 1);

        let sweep_bad = anyhow::Error::from(RunError::Config(ConfigError::Invalid(
            "sweeping needs [sdn]".into(),
        )));
        assert_eq!(exit_code(&sweep_bad), 2);

        let plain = anyhow::anyhow!("disk full");
        assert_eq!(exit_code(&plain), 1);
    }
}
