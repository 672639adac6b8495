use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipcat_core::config::{SimConfig, TraceSource};
use ipcat_core::engine::{self, Comparison};
use ipcat_core::scenario;
use ipcat_core::trace::{generate_trace, write_trace, TraceFormat, TraceGenSpec};
use ipcat_core::{Error, StatsReport};

#[derive(Parser)]
#[command(name = "ipcat", version, about = "Instruction-fetch memory path simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen {
        #[arg(long, default_value_t = 512)]
        code_pages: u64,
        #[arg(long, default_value_t = 1024)]
        functions: u64,
        #[arg(long, default_value_t = 32)]
        func_size: u64,
        #[arg(long, default_value_t = 0.8)]
        skew: f64,
        #[arg(long, default_value_t = 0.3)]
        data_ratio: f64,
        #[arg(long, default_value_t = 4096)]
        data_pages: u64,
        #[arg(long)]
        length: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the text format instead of binary.
        #[arg(long)]
        text: bool,
    },
    /// Simulate one configuration and print its report.
    Run {
        config: PathBuf,
        trace: PathBuf,
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Run two configurations on one trace and print both reports and the speedup.
    Compare {
        base: PathBuf,
        variant: PathBuf,
        trace: PathBuf,
    },
    /// Run one configuration per value of a key.
    Sweep {
        config: PathBuf,
        trace: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Compare a named preset against the base configuration.
    Scenario {
        name: String,
        trace: PathBuf,
        /// Base configuration (defaults to the built-in baseline).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    /// Simulation or configuration semantics: exit 1.
    Semantic(String),
    /// Usage or I/O: exit 2.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ConfigLine { .. } => Failure::Semantic(e.to_string()),
            Error::Io { .. } | Error::Parse { .. } => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Semantic(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn with_trace(mut cfg: SimConfig, trace: &Path) -> SimConfig {
    cfg.trace = Some(TraceSource::File(trace.to_path_buf()));
    cfg
}

fn load(config: &Path, trace: &Path) -> Result<SimConfig, Failure> {
    Ok(with_trace(SimConfig::load(config)?, trace))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen {
            code_pages,
            functions,
            func_size,
            skew,
            data_ratio,
            data_pages,
            length,
            seed,
            output,
            text,
        } => {
            let spec = TraceGenSpec {
                code_pages,
                functions,
                func_size_lines: func_size,
                popularity_skew: skew,
                data_ratio,
                data_pages,
                length,
                seed,
            };
            let records = generate_trace(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            let format = if text { TraceFormat::Text } else { TraceFormat::Binary };
            write_trace(&records, &output, format)?;
        }
        Command::Run {
            config,
            trace,
            json: _,
            csv,
        } => {
            let report = engine::run(&load(&config, &trace)?)?;
            if csv {
                println!("{}", StatsReport::csv_header());
                println!("{}", report.csv_row());
            } else {
                println!("{}", report.to_json());
            }
        }
        Command::Compare {
            base,
            variant,
            trace,
        } => {
            let b = load(&base, &trace)?;
            let v = load(&variant, &trace)?;
            print_comparison("base", "variant", &engine::compare(&b, &v)?);
        }
        Command::Sweep {
            config,
            trace,
            param,
            values,
        } => {
            let cfg = load(&config, &trace)?;
            let rows = engine::sweep(&cfg, &param, &values)?;
            println!("value,{}", StatsReport::csv_header());
            for (value, report) in rows {
                println!("{value},{}", report.csv_row());
            }
        }
        Command::Scenario {
            name,
            trace,
            config,
        } => {
            scenario::overlay(&name)?;
            let base = match config {
                Some(p) => SimConfig::load(p)?,
                None => SimConfig::default(),
            };
            let base = with_trace(base, &trace);
            let records = engine::load_trace(&base)?;
            let cmp = scenario::run_scenario(&base, &name, &records)?;
            print_comparison("baseline", &name, &cmp);
        }
    }
    Ok(())
}

fn print_comparison(base_name: &str, variant_name: &str, cmp: &Comparison) {
    println!("name,speedup,{}", StatsReport::csv_header());
    println!("{base_name},1,{}", cmp.base.csv_row());
    println!("{variant_name},{},{}", cmp.speedup, cmp.variant.csv_row());
    eprintln!("speedup {variant_name} over {base_name}: {:.4}", cmp.speedup);
}
