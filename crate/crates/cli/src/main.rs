//! `pnc`: dump classic netCDF files and run access-pattern benchmarks.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pncdf::bench::{bench_flash, bench_partition, BenchMode, BenchReport, FlashConfig, PartitionConfig, PartitionPattern};
use pncdf::dump::{dump_file, DumpOptions};
use pncdf::ExternalType;

#[derive(Parser)]
#[command(name = "pnc", version, about = "Classic netCDF dump and benchmark tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a CDL-like listing of a file.
    Dump {
        path: PathBuf,
        /// Print only the header.
        #[arg(long)]
        header_only: bool,
        /// Print data of this variable only.
        #[arg(long, value_name = "NAME")]
        var: Option<String>,
    },
    /// Run a benchmark; prints CSV (pattern,n,bytes,phase,seconds,ops).
    #[command(subcommand)]
    Bench(Bench),
}

#[derive(Subcommand)]
enum Bench {
    /// Partitioned 3-D array tt(z,y,x).
    Partition(PartitionArgs),
    /// Block-partitioned multi-variable writes.
    Flash(FlashArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Array shape as ZxYxX, e.g. 8x8x8.
    #[arg(long, value_parser = parse_shape)]
    shape: [u64; 3],
    /// Element type: byte, char, short, int, float or double.
    #[arg(long = "type", value_parser = parse_type, default_value = "double")]
    etype: ExternalType,
    /// Z, Y, X, ZY, ZX, YX, ZYX or BLOCK.
    #[arg(long)]
    pattern: PartitionPattern,
    /// Number of participants.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..=1024))]
    n: u16,
    /// write, or read (verifies every element).
    #[arg(long, default_value = "write")]
    mode: BenchMode,
    #[arg(long)]
    out: PathBuf,
    /// Number of collective I/O aggregators.
    #[arg(long)]
    aggregators: Option<usize>,
    /// Use independent instead of collective calls.
    #[arg(long)]
    independent: bool,
}

#[derive(Args)]
struct FlashArgs {
    #[arg(long, default_value_t = 8)]
    nxb: u64,
    #[arg(long, default_value_t = 8)]
    nyb: u64,
    #[arg(long, default_value_t = 8)]
    nzb: u64,
    /// Blocks per participant.
    #[arg(long, default_value_t = 80)]
    nblocks: u64,
    #[arg(long, default_value_t = 24)]
    nvar: usize,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..=1024))]
    n: u16,
    /// Guard cells kept in memory around each block.
    #[arg(long, default_value_t = 0)]
    nguard: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    aggregators: Option<usize>,
}

fn parse_shape(s: &str) -> Result<[u64; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    let dims: Vec<u64> = parts
        .iter()
        .map(|p| p.trim().parse::<u64>().map_err(|_| format!("bad extent {p:?} in shape {s:?}")))
        .collect::<Result<_, _>>()?;
    match dims.as_slice() {
        &[z, y, x] if z > 0 && y > 0 && x > 0 => Ok([z, y, x]),
        _ => Err(format!("shape {s:?} must be three positive extents like 8x8x8")),
    }
}

fn parse_type(s: &str) -> Result<ExternalType, String> {
    ExternalType::from_cdl_name(&s.to_ascii_lowercase()).ok_or_else(|| format!("unknown type {s:?}"))
}

fn report(r: &BenchReport) -> Result<()> {
    print!("{}\n{}", BenchReport::CSV_HEADER, r.csv());
    eprintln!("digest={} data_bytes={} mismatches={}", r.digest, r.data_bytes, r.mismatches);
    if r.mismatches > 0 {
        bail!("verification failed: {} elements differ from the generator", r.mismatches);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dump { path, header_only, var } => {
            let text = dump_file(&path, &DumpOptions { header_only, var })
                .with_context(|| format!("cannot dump {}", path.display()))?;
            print!("{text}");
        }
        Command::Bench(Bench::Partition(a)) => {
            let mut cfg = PartitionConfig::new(a.shape, a.etype, a.pattern, a.n as usize, a.out);
            cfg.mode = a.mode;
            cfg.aggregators = a.aggregators;
            cfg.collective = !a.independent;
            report(&bench_partition(&cfg).context("partition benchmark failed")?)?;
        }
        Command::Bench(Bench::Flash(a)) => {
            let cfg = FlashConfig {
                nxb: a.nxb,
                nyb: a.nyb,
                nzb: a.nzb,
                nblocks: a.nblocks,
                nvar: a.nvar,
                n: a.n as usize,
                nguard: a.nguard,
                out: a.out,
                aggregators: a.aggregators,
            };
            report(&bench_flash(&cfg).context("flash benchmark failed")?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnc: {e:#}");
            ExitCode::FAILURE
        }
    }
}
