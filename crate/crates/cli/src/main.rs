use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use semcast_core::config::ScenarioConfig;
use semcast_core::harness::{
    emit_csv, ingest_label_map, run_experiment, write_csv, ExperimentPlan, RunOptions,
};
use semcast_core::optimizer::Init;
use semcast_core::rdp::read_samples_csv;
use semcast_core::{
    benchmark_metrics, fit_curve, metrics_from_solution, realize, sqp_solve, RunMetrics, Scheme,
    SolveOptions,
};

/// Latency-optimal power and rate planning for intent-aware semantic multicast.
#[derive(Debug, Parser)]
#[command(name = "semcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed; overrides the seed in the input file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials per sweep point; overrides the plan.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario and print the allocation.
    Solve {
        config: PathBuf,
        /// Start from a random feasible point drawn from --seed.
        #[arg(long)]
        random_start: bool,
    },
    /// Compare the proposed scheme with the NGM and FGM baselines on one scenario.
    Bench { config: PathBuf },
    /// Run an experiment plan.
    Montecarlo {
        plan: PathBuf,
        /// Directory for scenario dumps of failed trials.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Fit a·exp(−b·r) + c to `rate,metric` samples.
    Fit { samples: PathBuf },
    /// Class statistics of a label map (PGM or integer CSV).
    Ingest {
        map: PathBuf,
        #[arg(long, default_value_t = 35)]
        classes: usize,
    },
    /// Compression rate and bit budget of the proposed scheme for K = 1..15.
    Table3,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = &cli.common;
    match &cli.command {
        Command::Solve {
            config,
            random_start,
        } => solve(config, *random_start, common),
        Command::Bench { config } => bench(config, common),
        Command::Montecarlo { plan, dump_dir } => {
            let plan = ExperimentPlan::load(plan)
                .with_context(|| format!("reading {}", plan.display()))?;
            montecarlo(plan, dump_dir.clone(), common)
        }
        Command::Fit { samples } => fit(samples, common),
        Command::Ingest { map, classes } => ingest(map, *classes, common),
        Command::Table3 => montecarlo(ExperimentPlan::table3(), None, common),
    }
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_scenario(
    path: &Path,
    common: &Common,
) -> Result<(semcast_core::Scenario, semcast_core::ChannelRealization)> {
    let mut config =
        ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = common.seed {
        config.channel.seed = seed;
    }
    let scenario = config.build()?;
    let channel = realize(&scenario.radio, config.channel.fading, config.channel.seed);
    Ok((scenario, channel))
}

fn solve(path: &Path, random_start: bool, common: &Common) -> Result<()> {
    let (scenario, channel) = load_scenario(path, common)?;
    let init = if random_start {
        Init::Random {
            seed: common.seed.unwrap_or(0),
        }
    } else {
        Init::WarmStart
    };
    let report = sqp_solve(
        &scenario,
        &channel,
        &SolveOptions {
            init,
            ..SolveOptions::default()
        },
    )?;
    match &common.out {
        Some(_) => {
            let mut out = output(&common.out)?;
            writeln!(
                out,
                "{}",
                semcast_core::SolveReport::csv_header(scenario.classes())
            )?;
            writeln!(out, "{}", report.csv_row())?;
            out.flush()?;
        }
        None => report.write_text(&mut io::stdout().lock())?,
    }
    if !report.converged {
        bail!(
            "solver did not converge after {} iterations",
            report.iterations
        );
    }
    Ok(())
}

fn bench(path: &Path, common: &Common) -> Result<()> {
    let (scenario, channel) = load_scenario(path, common)?;
    let report = sqp_solve(&scenario, &channel, &SolveOptions::default())?;
    if !report.converged {
        bail!(
            "solver did not converge after {} iterations",
            report.iterations
        );
    }
    let mut rows = vec![(
        Scheme::Proposed,
        metrics_from_solution(&report, &scenario, &channel)?,
    )];
    for scheme in [Scheme::Ngm, Scheme::Fgm] {
        rows.push((scheme, benchmark_metrics(scheme, &scenario, &channel)?));
    }
    let mut out = output(&common.out)?;
    writeln!(out, "scheme,{}", RunMetrics::FIELDS.join(","))?;
    for (scheme, m) in rows {
        let values: Vec<String> = m.values().iter().map(f64::to_string).collect();
        writeln!(out, "{scheme},{}", values.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn montecarlo(mut plan: ExperimentPlan, dump_dir: Option<PathBuf>, common: &Common) -> Result<()> {
    if let Some(seed) = common.seed {
        plan.seed = seed;
    }
    if let Some(trials) = common.trials {
        plan.trials = trials;
    }
    let dump_dir = dump_dir.or_else(|| common.out.as_ref().map(|p| p.with_extension("failures")));
    let result = run_experiment(
        &plan,
        &RunOptions {
            threads: common.threads,
            dump_dir,
        },
    )?;
    match &common.out {
        Some(path) => emit_csv(&result, path)?,
        None => write_csv(&result, io::stdout().lock())?,
    }
    Ok(())
}

fn fit(path: &Path, common: &Common) -> Result<()> {
    let samples = read_samples_csv(path).with_context(|| format!("reading {}", path.display()))?;
    let fit = fit_curve(&samples)?;
    let mut out = output(&common.out)?;
    writeln!(out, "a,b,c,rms")?;
    writeln!(out, "{},{},{},{}", fit.a, fit.b, fit.c, fit.rms)?;
    out.flush()?;
    Ok(())
}

fn ingest(path: &Path, classes: usize, common: &Common) -> Result<()> {
    let stats =
        ingest_label_map(path, classes).with_context(|| format!("reading {}", path.display()))?;
    let g = &stats.geometry;
    eprintln!(
        "{}x{} pixels, {} classes, class pixel fraction {}",
        stats.width,
        stats.height,
        g.num_classes(),
        g.class_pixel_fraction()
    );
    let mut out = output(&common.out)?;
    writeln!(out, "class,pixels")?;
    for (l, count) in stats.class_counts.iter().enumerate() {
        writeln!(out, "{l},{count}")?;
    }
    out.flush()?;
    Ok(())
}
