use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use driftcheck::config::expand_glob;
use driftcheck::reportlog::{read_records, render_report, summarize, ReportFormat};
use driftcheck::runner::{console_line, run_suite, summary_lines, write_records, MonotonicClock, SweepPlan};
use driftcheck::DriftError;
use driftcheck_core::BackendKind;

#[derive(Parser)]
#[command(name = "driftcheck", version, about = "Cross-backend inference drift checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Reference,
    Optimized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run every config matching a glob and log one JSONL record per check.
    Run {
        /// Config glob, e.g. 'configs/*.yaml'.
        #[arg(short, long)]
        config: String,
        /// Target backend; defaults to each config's `options.optimized`.
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Same as `--target optimized`.
        #[arg(long, conflicts_with = "target")]
        compile: bool,
        /// Comma-separated atol grid, e.g. 1e-6,1e-5,1e-4,1e-3.
        #[arg(long, value_delimiter = ',')]
        sweep_atol: Option<Vec<f64>>,
        #[arg(long)]
        rtol: Option<f64>,
        /// Overrides each config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Check all four ordered backend pairs, self-pairs included.
        #[arg(long)]
        all_pairs: bool,
    },
    /// Summarize a JSONL results file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        /// Write report files here instead of printing them.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode, DriftError> {
    match cli.command {
        Command::Run { config, target, compile, sweep_atol, rtol, seed, out, jobs, all_pairs } => {
            let configs = expand_glob(&config)?;
            if configs.is_empty() {
                println!("No configs matched: {config}");
            }
            let mut plan = SweepPlan::new(configs);
            plan.target = match (target, compile) {
                (_, true) | (Some(Target::Optimized), _) => Some(BackendKind::Optimized),
                (Some(Target::Reference), _) => Some(BackendKind::Reference),
                (None, false) => None,
            };
            plan.atol_grid = sweep_atol;
            plan.rtol = rtol;
            plan.seed = seed;
            plan.jobs = jobs;
            plan.all_pairs = all_pairs;
            let clock = MonotonicClock::new();
            let (summary, records) = run_suite(&plan, &clock)?;
            for r in &records {
                println!("{}", console_line(r, all_pairs));
            }
            write_records(&records, &out)?;
            println!("{}", summary_lines(&summary));
            Ok(ExitCode::from(summary.exit_code() as u8))
        }
        Command::Report { input, format, out_dir } => {
            let (records, skipped) = read_records(&input)?;
            for s in &skipped {
                eprintln!("warning: {}:{}: {}", input.display(), s.line, s.reason);
            }
            let tables = summarize(&records)?;
            let format = match format {
                Format::Md => ReportFormat::Markdown,
                Format::Csv => ReportFormat::Csv,
            };
            let files = render_report(&tables, format);
            match out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| DriftError::io(&dir, e))?;
                    for (name, body) in files {
                        let p = dir.join(name);
                        std::fs::write(&p, body).map_err(|e| DriftError::io(&p, e))?;
                        println!("wrote {}", p.display());
                    }
                }
                None => {
                    for (name, body) in files {
                        if format == ReportFormat::Csv {
                            println!("# {name}");
                        }
                        print!("{body}");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
