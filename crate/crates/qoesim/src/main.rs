use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qoesim::batch::{self, Dumps};
use qoesim::compare;
use qoesim::core::config::Architecture;
use qoesim::core::rng::{stream, substream};
use qoesim::core::traces::generate_ladder;
use qoesim::scenario::{effective_toml, read_seed_file, Overrides, Scenario};
use qoesim::{trace_io, Error};

#[derive(Parser)]
#[command(
    name = "qoesim",
    version,
    about = "Packet-level simulator for QoE-aware video admission"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario for one seed.
    Run {
        #[command(flatten)]
        src: Source,
        /// Seed to run; defaults to the first seed of the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dumps: DumpFlags,
    },
    /// Run every seed and aggregate CDFs.
    Batch {
        #[command(flatten)]
        src: Source,
        /// File of seeds replacing the scenario's list.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a gnuplot script for the CDF files.
        #[arg(long)]
        gnuplot: bool,
        #[command(flatten)]
        dumps: DumpFlags,
    },
    /// Print a trend table over result directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the table as CSV to this file as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario and print the fully resolved config.
    Validate {
        #[command(flatten)]
        src: Source,
    },
    /// Export the trace ladder a seed would generate.
    Traces {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: mad-cif, grandma-qcif or desk-grandma.
    #[arg(long)]
    preset: Option<String>,
    /// Replace the scenario's architecture.
    #[arg(long, value_parser = parse_arch)]
    architecture: Option<Architecture>,
    /// Replace the scenario's duration, in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Clone, Copy)]
struct DumpFlags {
    /// Write the event log (`events.log`).
    #[arg(long)]
    dump_events: bool,
    /// Write the per-packet trace (`packets.csv`).
    #[arg(long)]
    dump_packets: bool,
    /// Write the admission audit log (`admission.csv`).
    #[arg(long)]
    dump_admission: bool,
}

impl From<DumpFlags> for Dumps {
    fn from(d: DumpFlags) -> Dumps {
        Dumps {
            events: d.dump_events,
            packets: d.dump_packets,
            admission: d.dump_admission,
        }
    }
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    match s {
        "non_adaptive" => Ok(Architecture::NonAdaptive),
        "adaptive" => Ok(Architecture::Adaptive),
        "cross_layer" => Ok(Architecture::CrossLayer),
        _ => Err("expected non_adaptive, adaptive or cross_layer".into()),
    }
}

impl Source {
    fn load(&self, seeds: Option<Vec<u64>>) -> Result<Scenario, Error> {
        let ov = Overrides {
            architecture: self.architecture,
            seeds,
            duration_s: self.duration,
        };
        match (&self.config, &self.preset) {
            (Some(p), _) => Scenario::load(p, &ov),
            (None, Some(name)) => Scenario::preset(name, &ov),
            (None, None) => Err(Error::Other("give --config or --preset".into())),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Run {
            src,
            seed,
            out,
            dumps,
        } => {
            let seeds = seed.map(|s| vec![s]);
            let scn = src.load(seeds)?;
            let seed = scn.seeds()[0];
            let res = batch::run_single(&scn, seed, &out, dumps.into())?;
            let s = &res.summary;
            println!(
                "{} seed {seed}: admitted {}/{} decoded {} mos {} util {:.3}",
                s.architecture,
                s.sessions_admitted,
                s.sessions_requested,
                s.sessions_decoded,
                s.mean_mos().map_or("-".into(), |m| format!("{m:.3}")),
                s.utilization
            );
        }
        Command::Batch {
            src,
            seeds,
            out,
            gnuplot,
            dumps,
        } => {
            let seeds = seeds.as_deref().map(read_seed_file).transpose()?;
            let scn = src.load(seeds)?;
            let rows = batch::run_batch(&scn, &out, dumps.into(), gnuplot)?;
            let trend = compare::trend_row(&out.display().to_string(), &rows);
            print!("{}", compare::trend_table(&[trend]));
        }
        Command::Compare { dirs, out } => {
            let refs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
            let rows = compare::compare_dirs(&refs)?;
            print!("{}", compare::trend_table(&rows));
            if let Some(path) = out {
                std::fs::write(&path, compare::trend_csv(&rows)?)
                    .with_context(|| path.display().to_string())?;
            }
        }
        Command::Validate { src } => {
            let scn = src.load(None)?;
            print!("{}", effective_toml(&scn.config));
        }
        Command::Traces { src, seed, out } => {
            let scn = src.load(None)?;
            if scn.ladder.is_some() {
                bail!("scenario already replays a trace manifest");
            }
            let ladder =
                generate_ladder(&scn.config.content, &mut substream(seed, stream::TRACES))?;
            let path = trace_io::write_ladder(&out, &ladder)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
