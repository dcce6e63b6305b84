use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use patrol::cli::{
    cmd_compare, cmd_profile, cmd_replay, cmd_run, BackendChoice, CliError, EvalReport, Overrides, RunFlags,
};

#[derive(Parser)]
#[command(
    name = "patrol",
    version,
    about = "Anomaly detection and mitigation pipeline for patrol robots"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    Remote,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Scenario file.
    scenario: PathBuf,
    /// Enable or disable anomaly detection.
    #[arg(long, value_enum)]
    ad: Option<Switch>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Latency budget in seconds.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunOpts {
    fn flags(&self) -> RunFlags {
        RunFlags {
            overrides: Overrides {
                ad_enabled: self.ad.map(|s| matches!(s, Switch::On)),
                backend: self.backend.map(|b| match b {
                    Backend::Scripted => BackendChoice::Scripted,
                    Backend::Remote => BackendChoice::Remote,
                }),
                t_max_s: self.t_max,
                seed: self.seed,
            },
            out: Some(self.out.clone()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write reports and archives.
    Run(RunOpts),
    /// Run a scenario with detection off and on and compare.
    Compare(RunOpts),
    /// Recompute the report from a run log.
    Replay {
        log: PathBuf,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Allocate per-stage timeouts from run logs.
    Profile {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long = "t-max", default_value_t = 14.0)]
        t_max: f64,
    },
}

fn summary(r: &EvalReport) -> String {
    let mut s = format!(
        "{}: {} frames, detection {}, accuracy {:.2}%, detection rate {:.2}%, final epsilon {:.3}\n",
        r.scenario,
        r.frames,
        if r.ad_enabled { "on" } else { "off" },
        r.accuracy_pct,
        r.detection_rate_pct,
        r.final_epsilon
    );
    s += &format!(
        "latency min {:.3} s, mean {:.3} s, max {:.3} s, {:.1}% below 14 s\n",
        r.latency.min_s, r.latency.mean_s, r.latency.max_s, r.latency_share_below_14s_pct
    );
    if let Some(nav) = &r.nav {
        s += &format!(
            "trajectory {:.2} m, time {:.2} s, sudden stops {}, goal {}\n",
            nav.trajectory_m,
            nav.time_s,
            nav.sudden_stops,
            if nav.reached_goal { "reached" } else { "not reached" }
        );
    }
    const SHOWN: usize = 10;
    for a in r.anomalies.iter().take(SHOWN) {
        s += &format!(
            "  frame {} {:?} {:?}: {} -> {:?}\n",
            a.frame_id, a.class, a.severity, a.description, a.actions
        );
    }
    if r.anomalies.len() > SHOWN {
        s += &format!("  ... {} more anomalies in the report\n", r.anomalies.len() - SHOWN);
    }
    s
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Run(opts) => {
            let artifacts = cmd_run(&opts.scenario, &opts.flags())?;
            emit(&summary(&artifacts.report));
            emit(&format!("wrote {}\n", artifacts.report_json.display()));
        }
        Command::Compare(opts) => {
            let (off, on) = cmd_compare(&opts.scenario, &opts.flags())?;
            emit(&(summary(&off) + &summary(&on)));
            emit(&format!("wrote {}\n", opts.out.join("compare.csv").display()));
        }
        Command::Replay { log, out } => {
            let report = cmd_replay(&log)?;
            let json = patrol::cli::canonical_json(&report);
            match out {
                Some(path) => {
                    std::fs::write(&path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    emit(&summary(&report));
                }
                None => emit(&json),
            }
        }
        Command::Profile { logs, t_max } => {
            let alloc = cmd_profile(&logs, t_max)?;
            for (stage, timeout) in alloc.timeouts_s() {
                emit(&format!("{:<8} {:.3} s\n", stage.name(), timeout));
            }
            emit(&format!("total    {:.3} s\n", alloc.t_max_s()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
