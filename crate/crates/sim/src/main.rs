use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use teleop_sim::protocol::{read_script, write_script};
use teleop_sim::scenario::ticks_for;
use teleop_sim::server::{serve, ServeOptions};
use teleop_sim::sim::Summary;
use teleop_sim::telemetry::{read_telemetry, Format, Writer};
use teleop_sim::{load_scenario, plot, run_script, Scenario};

#[derive(Parser)]
#[command(name = "teleop-sim", version, about = "Constrained two-arm teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a master script or a live session.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Master script (JSON lines); defaults to the scenario's own script.
        #[arg(long, conflicts_with = "serve")]
        script: Option<PathBuf>,
        /// Accept live clients on this TCP port instead of reading a script.
        #[arg(long)]
        serve: Option<u16>,
        /// Telemetry output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Telemetry format; guessed from the output extension when omitted.
        #[arg(long)]
        format: Option<Format>,
        /// Simulated duration in seconds; defaults to the scenario's.
        #[arg(long)]
        duration: Option<f64>,
        /// Control period in milliseconds; defaults to the scenario's.
        #[arg(long)]
        ts: Option<f64>,
        /// Live mode: write the accepted inbound messages as a replayable script.
        #[arg(long, requires = "serve")]
        record: Option<PathBuf>,
        /// Live mode: hold the clock until the first client connects.
        #[arg(long, requires = "serve")]
        wait: bool,
    },
    /// Load a scenario and report problems.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Render distance, force and trajectory plots from a telemetry file.
    Plot {
        #[arg(long)]
        telemetry: PathBuf,
        /// Output directory; defaults to the telemetry file's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

impl Command {
    fn execute(self) -> Result<(), AnyError> {
        match self {
            Command::Run { scenario, script, serve: port, out, format, duration, ts, record, wait } => {
                let mut sc = load_scenario(&scenario)?;
                if let Some(ms) = ts {
                    if !(ms > 0.0) {
                        return Err(format!("--ts must be positive, got {ms}").into());
                    }
                    sc.controller.sampling_time = ms * 1e-3;
                }
                let duration = duration.unwrap_or(sc.duration);
                let ticks = ticks_for(duration, sc.controller.sampling_time);
                for w in sc.warnings() {
                    eprintln!("warning: {w}");
                }
                let format = format.or(out.as_deref().map(Format::from_path)).unwrap_or(Format::Csv);
                let sink: Box<dyn Write> = match &out {
                    Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                    None => Box::new(std::io::sink()),
                };
                let summary = match port {
                    Some(port) => run_live(&sc, port, ticks, sink, format, record.as_deref(), wait)?,
                    None => run_scripted(&sc, script, ticks, sink, format)?,
                };
                print_summary(&sc, &summary);
                if let Some(p) = out {
                    println!("telemetry: {} ({format})", p.display());
                }
                Ok(())
            }
            Command::Validate { scenario } => {
                let sc = load_scenario(&scenario)?;
                println!("{}: ok", scenario.display());
                println!("  robots: {}", sc.robot_ids().join(", "));
                println!("  constraint rows: {}", sc.scene.row_names().len());
                println!("  duration: {} s at T_s = {} ms", sc.duration, sc.controller.sampling_time * 1e3);
                if let Some(s) = &sc.script {
                    let entries = read_script(s)?;
                    println!("  script: {} ({} entries)", s.display(), entries.len());
                }
                for w in sc.warnings() {
                    println!("  warning: {w}");
                }
                Ok(())
            }
            Command::Plot { telemetry, out_dir } => {
                let t = read_telemetry(&telemetry)?;
                let dir = out_dir.unwrap_or_else(|| telemetry.parent().unwrap_or(Path::new(".")).to_path_buf());
                let stem = telemetry.file_stem().and_then(|s| s.to_str()).unwrap_or("telemetry");
                for path in plot::render_all(&t, &dir, stem)? {
                    println!("{}", path.display());
                }
                Ok(())
            }
        }
    }
}

fn run_scripted(
    sc: &Scenario,
    script: Option<PathBuf>,
    ticks: u64,
    sink: Box<dyn Write>,
    format: Format,
) -> Result<Summary, AnyError> {
    let entries = match script.or_else(|| sc.script.clone()) {
        Some(p) => read_script(p)?,
        None => Vec::new(),
    };
    let mut writer = Writer::new(sink, format, teleop_sim::telemetry::Schema::for_scenario(sc))?;
    let summary = run_script(sc, &entries, ticks, |_, rec| writer.write(rec).map_err(|e| e.to_string()))?;
    writer.finish()?;
    Ok(summary)
}

fn run_live(
    sc: &Scenario,
    port: u16,
    ticks: u64,
    sink: Box<dyn Write>,
    format: Format,
    record: Option<&Path>,
    wait: bool,
) -> Result<Summary, AnyError> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut writer = Writer::new(sink, format, teleop_sim::telemetry::Schema::for_scenario(sc))?;
    let options = ServeOptions { ticks, realtime: true, wait_for_client: wait, ..Default::default() };
    let out = serve(sc, listener, options, |_, rec| writer.write(rec).map_err(|e| e.to_string()))?;
    writer.finish()?;
    if let Some(p) = record {
        let mut f = BufWriter::new(File::create(p)?);
        write_script(&mut f, &out.inbound)?;
        eprintln!("recorded {} inbound messages to {}", out.inbound.len(), p.display());
    }
    Ok(out.summary)
}

fn print_summary(sc: &Scenario, s: &Summary) {
    let ts = sc.controller.sampling_time;
    println!("{}: {} ticks", sc.name, s.ticks);
    println!("  infeasible ticks: {}", s.infeasible_ticks);
    println!("  joint-limit ticks: {}", s.joint_limit_ticks);
    println!("  max kkt residual: {:.3e}", s.max_kkt_residual);
    println!("  max iterations: {}", s.max_iterations);
    for row in &s.rows {
        println!(
            "  {:<24} min d̃ = {:+.6e}  V_max·T_s = {:.3e}",
            row.name,
            row.min_margin,
            row.discretization_bound(ts)
        );
    }
}
