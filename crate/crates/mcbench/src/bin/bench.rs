use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectask::analytic::table1_csv;
use spectask::trace::write_timeline;
use spectask::DotOptions;
use spectask_mc::bench::{run_benchmark, write_csv, BenchConfig, BenchRecord, Workload};
use spectask_mc::mc::{bar_class, McConfig, Mode, RemcConfig, DEFAULT_BOX, DEFAULT_TEMPERATURE};

#[derive(Parser)]
#[command(name = "bench", about = "Monte Carlo benchmarks on the speculative task runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-chain Metropolis Monte Carlo.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
    },
    /// Replica exchange Monte Carlo.
    Remc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        replicas: usize,
        /// Comma-separated ladder; defaults to a geometric ladder from
        /// --temperature to twice that.
        #[arg(long, value_delimiter = ',')]
        temperatures: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long, default_value_t = 3)]
        exchange_every: usize,
    },
    /// Expected gain and speedup table of the analytic model.
    Table1 {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// One or more of task, spec, reject.
    #[arg(long, value_delimiter = ',', default_value = "task")]
    mode: Vec<Mode>,
    /// One or more worker counts.
    #[arg(long, value_delimiter = ',')]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    spec_depth: usize,
    #[arg(long, default_value_t = 5)]
    domains: usize,
    #[arg(long, default_value_t = 200)]
    particles: usize,
    #[arg(long, default_value_t = DEFAULT_BOX)]
    box_len: f64,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn tagged(base: &Path, tag: Option<&str>, ext: &str) -> PathBuf {
    let s = base.to_string_lossy();
    let stem = s.strip_suffix(ext).unwrap_or(&s);
    match tag {
        Some(t) => PathBuf::from(format!("{stem}.{t}{ext}")),
        None => PathBuf::from(format!("{stem}{ext}")),
    }
}

fn run(common: Common, workload: Workload) -> Result<(), Box<dyn std::error::Error>> {
    let threads = if common.threads.is_empty() {
        vec![spectask::default_num_threads()]
    } else {
        common.threads.clone()
    };
    // Task mode first so the other modes have a baseline.
    let mut modes = common.mode.clone();
    modes.sort_by_key(|m| *m != Mode::Task);
    modes.dedup();
    let multi = modes.len() * threads.len() > 1;
    let mut records: Vec<BenchRecord> = Vec::new();
    for &t in &threads {
        let mut baseline = None;
        for &mode in &modes {
            let cfg = BenchConfig {
                mc: McConfig {
                    domains: common.domains,
                    particles: common.particles,
                    box_len: common.box_len,
                    iterations: common.iterations,
                    mode,
                    spec_depth: common.spec_depth,
                    threads: t,
                    seed: common.seed,
                },
                workload: workload.clone(),
                runs: common.runs,
            };
            let (record, out) = run_benchmark(&cfg, baseline)?;
            if mode == Mode::Task {
                baseline = Some(record.mean_seconds);
            }
            let tag = format!("{mode}.T{t}");
            let tag = multi.then_some(tag.as_str());
            if let Some(p) = &common.dot {
                fs::write(tagged(p, tag, ".dot"), out.runtime.generate_dot(&DotOptions::default()))?;
            }
            if let Some(p) = &common.trace {
                write_timeline(&tagged(p, tag, ".trace.csv"), &out.runtime.trace(), bar_class)?;
            }
            eprintln!(
                "{mode} T={t}: {:.4}s accept={:.3} speedup={}",
                record.mean_seconds,
                record.accept_ratio,
                record.speedup.map_or("-".into(), |s| format!("{s:.3}"))
            );
            records.push(record);
        }
    }
    match &common.csv {
        Some(p) => write_csv(fs::File::create(p)?, &records)?,
        None => write_csv(io::stdout().lock(), &records)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mc { common, temperature } => run(common, Workload::Mc { temperature }),
        Command::Remc {
            common,
            replicas,
            temperatures,
            temperature,
            exchange_every,
        } => {
            let temperatures = if temperatures.is_empty() {
                RemcConfig::ladder(temperature, 2.0 * temperature, replicas)
            } else {
                temperatures
            };
            run(
                common,
                Workload::Remc {
                    temperatures,
                    exchange_every,
                },
            )
        }
        Command::Table1 { csv } => match csv {
            Some(p) => fs::write(p, table1_csv()).map_err(Into::into),
            None => {
                print!("{}", table1_csv());
                Ok(())
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
