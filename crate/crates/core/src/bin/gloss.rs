use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gloss::geo::GeoPoint;
use gloss::oracle;
use gloss::sim::{self, ReportFormat, RunOptions, SimError};

#[derive(Parser)]
#[command(name = "gloss", version, about = "Geo-spatial overlay and hearsay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario and print its report.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable profile caching everywhere.
        #[arg(long)]
        no_cache: bool,
        #[arg(long, value_enum, default_value = "human")]
        report: Format,
        /// Write the event and routing trace to stderr.
        #[arg(long)]
        trace: bool,
    },
    /// Check a scenario without running it.
    Validate { scenario: String },
    /// Brute-force reference answers.
    #[command(subcommand)]
    Oracle(OracleCmd),
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Deepest region containing a point, by scanning every region.
    Containment {
        scenario: String,
        #[arg(allow_negative_numbers = true)]
        lat: f64,
        #[arg(allow_negative_numbers = true)]
        lon: f64,
    },
    /// Node that should receive a message for a region, and the tree path to it.
    Route { scenario: String, from: String, region: String },
    /// Great-circle distance in metres.
    Haversine {
        #[arg(allow_negative_numbers = true)]
        lat1: f64,
        #[arg(allow_negative_numbers = true)]
        lon1: f64,
        #[arg(allow_negative_numbers = true)]
        lat2: f64,
        #[arg(allow_negative_numbers = true)]
        lon2: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

fn load(name: &str) -> Result<sim::Scenario, ExitCode> {
    sim::load(name).map_err(|e| {
        eprintln!("error: {name}: {e}");
        ExitCode::from(1)
    })
}

fn point(lat: f64, lon: f64) -> Result<GeoPoint, ExitCode> {
    GeoPoint::new(lat, lon).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}

fn execute(cmd: Command) -> Result<(), ExitCode> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            no_cache,
            report,
            trace,
        } => {
            let s = load(&scenario)?;
            let out = sim::run(&s, &RunOptions { seed, no_cache }).map_err(|SimError::Invariant(msg)| {
                eprintln!("invariant violated: {msg}");
                ExitCode::from(2)
            })?;
            if trace {
                for line in &out.trace {
                    eprintln!("{line}");
                }
            }
            let format = match report {
                Format::Human => ReportFormat::Human,
                Format::Machine => ReportFormat::Machine,
            };
            print!("{}", out.report.emit(format));
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!(
                "ok: {} regions, {} nodes, {} users, {} scheduled inputs",
                s.world.len(),
                s.topology.len(),
                s.profiles.len(),
                s.schedule.len()
            );
        }
        Command::Oracle(OracleCmd::Containment { scenario, lat, lon }) => {
            let s = load(&scenario)?;
            match oracle::scan_deepest(&s.world, point(lat, lon)?) {
                Some(r) => println!("{r}"),
                None => {
                    eprintln!("error: point lies outside the world");
                    return Err(ExitCode::from(1));
                }
            }
        }
        Command::Oracle(OracleCmd::Route { scenario, from, region }) => {
            let s = load(&scenario)?;
            let net = s.network();
            let fail = |msg: String| {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            };
            let target = oracle::owning_node(&net, &region.as_str().into())
                .ok_or_else(|| fail(format!("no node owns `{region}` or any region above it")))?;
            let path = oracle::tree_path(&net, &from.as_str().into(), &target)
                .ok_or_else(|| fail(format!("no tree path from `{from}` to `{target}`")))?;
            let names: Vec<&str> = path.iter().map(|n| n.as_str()).collect();
            println!("node {target}");
            println!("path {}", names.join(" "));
        }
        Command::Oracle(OracleCmd::Haversine { lat1, lon1, lat2, lon2 }) => {
            println!("{:.3}", oracle::distance_m(point(lat1, lon1)?, point(lat2, lon2)?));
        }
    }
    Ok(())
}
