use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use deep_hybrid::config::ExperimentConfig;
use deep_hybrid::env::{Condition, TrialSpec};
use deep_hybrid::harness::{run_experiment, summarize, write_summary, write_trials, BinSummary, ExperimentPlan};
use deep_hybrid::svg::line_chart;
use deep_hybrid::trace::trace_trial;

#[derive(Parser)]
#[command(name = "deep-hybrid", version, about = "Hybrid active inference tool-use experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a velocity sweep and write per-trial and per-bin tables.
    Run {
        #[arg(long, default_value = "static")]
        condition: String,
        #[arg(long, default_value_t = 150)]
        trials: usize,
        #[arg(long, default_value_t = 0.0)]
        speed_min: f64,
        #[arg(long, default_value_t = 8.0)]
        speed_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one trial and dump its full trace.
    Trace {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[arg(long, default_value = "static")]
        condition: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "trace")]
        out: PathBuf,
        /// Steps between scene frames; 0 disables them.
        #[arg(long, default_value_t = 50)]
        frame_every: usize,
    },
    /// Parse and check a config file, then print it with defaults filled in.
    ValidateConfig { path: PathBuf },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn summary_charts(out: &Path, rows: &[BinSummary]) -> Result<()> {
    let x: Vec<f64> = rows.iter().map(|r| r.speed_bin as f64).collect();
    let pick = |f: fn(&BinSummary) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let charts = [
        ("accuracy.svg", "accuracy", pick(|r| r.accuracy)),
        ("time.svg", "completion time (steps)", pick(|r| r.time_mean)),
        ("error.svg", "final error (px)", pick(|r| r.error_mean)),
    ];
    for (file, title, ys) in charts {
        fs::write(out.join(file), line_chart(title, &x, &[(title, &ys)]))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            condition,
            trials,
            speed_min,
            speed_max,
            seed,
            config,
            out,
        } => {
            let cfg = load(config.as_deref())?;
            let plan = ExperimentPlan {
                condition: Condition::parse(&condition)?,
                trials,
                speed_min,
                speed_max,
                seed,
            };
            let results = run_experiment(&plan, &cfg)?;
            let rows = summarize(&results);
            fs::create_dir_all(&out)?;
            write_trials(&out.join("trials.csv"), &results)?;
            write_summary(&out.join("summary.csv"), &rows)?;
            if !rows.is_empty() {
                summary_charts(&out, &rows)?;
            }
            println!("{:>4} {:>6} {:>8} {:>10} {:>10}", "bin", "trials", "accuracy", "time", "error");
            let cell = |v: f64| if v.is_finite() { format!("{v:.1}") } else { "-".into() };
            for r in &rows {
                println!(
                    "{:>4} {:>6} {:>8.3} {:>10} {:>10}",
                    r.speed_bin,
                    r.trials,
                    r.accuracy,
                    cell(r.time_mean),
                    cell(r.error_mean)
                );
            }
        }
        Command::Trace {
            seed,
            speed,
            condition,
            config,
            out,
            frame_every,
        } => {
            let cfg = load(config.as_deref())?;
            let spec = TrialSpec::new(Condition::parse(&condition)?, speed, seed)?;
            let r = trace_trial(&spec, &cfg, &out, frame_every)?;
            println!(
                "success={} grasp={:?} completion={:?} final_error={:.1}",
                r.success, r.grasp_time, r.completion_time, r.final_error
            );
            if let Some(e) = r.abort {
                println!("aborted: {e}");
            }
        }
        Command::ValidateConfig { path } => {
            let cfg = load(Some(&path))?;
            cfg.validate()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
