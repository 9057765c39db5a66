use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use titration_core::avatar::{generate_population, read_population, write_population, Avatar, PopulationTargets};
use titration_core::trial::export::{read_summary, SUMMARY_FILE};
use titration_core::trial::scenario::CANONICAL;
use titration_core::trial::{export_results, recompute_summary, render_report, run_scenario, ScenarioSpec, TrialConfig};

/// Virtual trial harness for basal insulin titration policies.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write per-avatar logs plus summary.json.
    Run {
        /// Scenario preset; repeat for several. Defaults to all five.
        #[arg(long = "scenario", value_parser = CANONICAL)]
        scenarios: Vec<String>,
        /// Population file from `gen-pop`; generated from --seed/--n when omitted.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Population size when generating.
        #[arg(long, default_value_t = 427)]
        n: usize,
        #[arg(long, default_value_t = 52)]
        weeks: u32,
        #[arg(long)]
        out: PathBuf,
        /// TOML harness configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic population as JSON lines.
    GenPop {
        #[arg(long, default_value_t = 427)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// TOML file overriding the calibration targets.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Drug the insulin sensitivity is calibrated against.
        #[arg(long, default_value = "degludec")]
        drug: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute summary metrics from the per-avatar logs of a run.
    Metrics {
        dir: PathBuf,
        /// Overwrite summary.json instead of printing to stdout.
        #[arg(long)]
        write: bool,
    },
    /// Print checkpoint tables from a run's summary.json.
    Report { dir: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<TrialConfig> {
    match path {
        Some(p) => TrialConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(TrialConfig::default()),
    }
}

fn load_targets(path: Option<&Path>, n: usize) -> Result<PopulationTargets> {
    let mut targets = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PopulationTargets::default(),
    };
    targets.n = n;
    Ok(targets)
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenarios: Vec<String>,
    population: Option<PathBuf>,
    seed: u64,
    n: usize,
    weeks: u32,
    out: PathBuf,
    config: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(config.as_deref())?;
    let settings = config.run_settings()?;
    let avatars: Vec<Avatar> = match &population {
        Some(p) => read_population(p).with_context(|| format!("reading population {}", p.display()))?,
        None => generate_population(&load_targets(None, n)?, seed, &settings.drug)?,
    };
    if avatars.is_empty() {
        bail!("population is empty");
    }
    let names: Vec<String> = if scenarios.is_empty() {
        CANONICAL.iter().map(|s| s.to_string()).collect()
    } else {
        scenarios
    };
    let mut results = Vec::with_capacity(names.len());
    for name in &names {
        let mut spec = ScenarioSpec::preset(name)?.with_weeks(weeks);
        spec.miss_probability = config.miss_probability;
        let started = std::time::Instant::now();
        let result = run_scenario(&spec, &avatars, &settings)?;
        eprintln!(
            "{name}: {} avatars, {} aborted, {:.1}s",
            result.runs.len(),
            result.failures.len(),
            started.elapsed().as_secs_f64()
        );
        for f in &result.failures {
            eprintln!("  avatar {}: {}", f.avatar_id, f.reason);
        }
        results.push(result);
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let summary = export_results(&out, &results)?;
    if population.is_none() {
        write_population(&out.join("population.jsonl"), &avatars)?;
    }
    print!("{}", render_report(&summary));
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenarios,
            population,
            seed,
            n,
            weeks,
            out,
            config,
        } => run(scenarios, population, seed, n, weeks, out, config),
        Command::GenPop {
            n,
            seed,
            targets,
            drug,
            out,
        } => {
            let targets = load_targets(targets.as_deref(), n)?;
            let nominal = titration_core::pk::DrugParams::preset(&drug).with_context(|| format!("unknown drug {drug:?}"))?;
            let population = generate_population(&targets, seed, &nominal)?;
            write_population(&out, &population)?;
            eprintln!("wrote {} avatars to {}", population.len(), out.display());
            Ok(())
        }
        Command::Metrics { dir, write } => {
            let summary = recompute_summary(&dir)?;
            let text = serde_json::to_string_pretty(&summary)?;
            if write {
                let path = dir.join(SUMMARY_FILE);
                std::fs::write(&path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
            } else {
                println!("{text}");
            }
            Ok(())
        }
        Command::Report { dir } => {
            let summary = read_summary(&dir.join(SUMMARY_FILE))?;
            print!("{}", render_report(&summary));
            Ok(())
        }
    }
}
