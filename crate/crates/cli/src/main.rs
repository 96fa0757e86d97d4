//! `risnoma` command-line runner.

mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use risnoma::config::{load_config, Profile, SystemConfig};
use risnoma::experiment::{self, Csv, VERSION};

#[derive(Parser, Debug)]
#[command(name = "risnoma", version = VERSION, about = "RIS-assisted NOMA ISAC beamforming experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file (overrides --profile)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// built-in configuration
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// number of seeds 0..N (defaults to the config's `seeds`)
    #[arg(long, global = true, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// explicit comma-separated seeds
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// worker threads (defaults to the available parallelism)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// output directory for CSV and plot artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// also write SVG plots next to the CSVs
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean normalized beampattern per RIS size
    Beampattern {
        /// RIS sizes (defaults to the config's `m_sweep`)
        #[arg(long, value_delimiter = ',')]
        m_list: Option<Vec<usize>>,
    },
    /// Mean min beampattern gain against RIS size, NOMA and orthogonal
    SweepM {
        #[arg(long, value_delimiter = ',')]
        m_list: Option<Vec<usize>>,
    },
    /// Illumination map of one run
    Heatmap {
        /// grid points per axis
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
    /// Single NOMA trial, JSON result on stdout
    Run {
        /// seed (defaults to the first selected seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-seed NOMA vs orthogonal comparison at the configured RIS size
    Baseline,
}

impl Common {
    fn config(&self) -> Result<SystemConfig> {
        match &self.config {
            Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(SystemConfig::profile(match self.profile {
                ProfileArg::Paper => Profile::Paper,
                ProfileArg::Desk => Profile::Desk,
            })),
        }
    }

    fn seeds(&self, config: &SystemConfig) -> Result<Vec<u64>> {
        let seeds = match (&self.seed_list, self.seeds) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => (0..n).collect(),
            (None, None) => (0..config.seeds as u64).collect(),
        };
        if seeds.is_empty() {
            bail!("no seeds selected");
        }
        Ok(seeds)
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn write(csv: &Csv, dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(name);
    csv.write(&path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = &cli.common;
    let config = common.config()?;
    let seeds = common.seeds(&config)?;
    let workers = common.workers();

    if let Command::Run { seed } = &cli.command {
        let seed = seed.unwrap_or(seeds[0]);
        let result = experiment::run_trial(&config, seed)?;
        let doc = serde_json::json!({
            "version": VERSION,
            "config_hash": config.hash(),
            "result": result,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }

    let out = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Beampattern { m_list } => {
            let ms = m_list.clone().unwrap_or_else(|| config.m_sweep.clone());
            let table = experiment::beampattern(&config, &ms, &seeds, workers)?;
            for (m, s, r) in &table.trials {
                if let Err(e) = r {
                    eprintln!("M={m} seed {s}: {e}");
                }
            }
            write(&table.to_csv(&config, &seeds), out, "beampattern.csv")?;
            if common.plot {
                plot::beampattern(&table, &out.join("beampattern.svg"))?;
            }
        }
        Command::SweepM { m_list } => {
            let ms = m_list.clone().unwrap_or_else(|| config.m_sweep.clone());
            let table = experiment::sweep_m(&config, &ms, &seeds, workers)?;
            write(&table.to_csv(&config, &seeds), out, "sweep_m.csv")?;
            write(&table.trials_csv(&config, &seeds), out, "sweep_m_trials.csv")?;
            if common.plot {
                plot::sweep(&table, &out.join("sweep_m.svg"))?;
            }
        }
        Command::Heatmap { resolution } => {
            let seed = seeds[0];
            let (xs, ys, map) = experiment::heatmap(&config, seed, *resolution)?;
            write(&experiment::heatmap_csv(&config, seed, &xs, &ys, &map), out, "heatmap.csv")?;
            if common.plot {
                plot::heatmap(&xs, &ys, &map, &out.join("heatmap.svg"))?;
            }
        }
        Command::Baseline => {
            let csv = experiment::baseline_csv(&config, &seeds, workers)?;
            write(&csv, out, "baseline.csv")?;
        }
        Command::Run { .. } => unreachable!(),
    }
    Ok(())
}
