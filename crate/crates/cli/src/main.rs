//! `clrm`: generate ensembles, cluster them, train and evaluate control
//! policies, and re-render report plots.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use clrm_core::harness::{
    cluster_data, evaluate_saved, generate_data, reference_provider, render_reports,
    run_experiment, worker_pool, ExperimentConfig, Mode,
};

#[derive(Parser)]
#[command(
    name = "clrm",
    version,
    about = "Multi-asset closed-loop reservoir management"
)]
struct Cli {
    /// TOML experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Two 25×25 assets, 100 realizations, 10 clusters, 150 iterations.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Individual,
    Global,
}

#[derive(Subcommand)]
enum Command {
    /// Generate realization ensembles into `<out>/seed_<s>/realizations`.
    Generate {
        /// Asset JSON file; repeat for several. Replaces the configured assets.
        #[arg(long)]
        asset: Vec<PathBuf>,
        /// Realizations per asset.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Cluster saved ensembles (generating any that are missing).
    Cluster,
    /// Run the full pipeline into a new timestamped directory.
    Train {
        /// Resume training from a checkpoint stem.
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test realizations at every configured ε_c.
    Evaluate {
        #[arg(long)]
        from_checkpoint: PathBuf,
    },
    /// Re-render the SVG plots of every output directory below a path.
    Report {
        /// Run directory; defaults to `--out`.
        dir: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            ModeArg::Individual => Mode::Individual,
            ModeArg::Global => Mode::Global,
        };
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn report_tree(dir: &Path) -> Result<usize> {
    let mut n = render_reports(dir).with_context(|| format!("rendering {}", dir.display()))?;
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            n += report_tree(&p)?;
        }
    }
    Ok(n)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = resolve(&cli)?;
    let pool = worker_pool()?;
    pool.install(|| -> Result<()> {
        match &cli.command {
            Command::Generate { asset, count } => {
                if !asset.is_empty() {
                    cfg.asset_files = asset.clone();
                    if cfg.mode == Mode::Global && asset.len() == 1 {
                        cfg.mode = Mode::Individual;
                    }
                }
                if let Some(c) = count {
                    cfg.realizations = *c;
                    cfg.clusters = cfg.clusters.min(c.saturating_sub(1)).max(1);
                }
                cfg.validate()?;
                for &seed in &cfg.seeds {
                    let dir = cfg.out.join(format!("seed_{seed}"));
                    let (assets, sets) = generate_data(&cfg, seed, &dir)?;
                    for (a, s) in assets.iter().zip(&sets) {
                        println!("{}: {} realizations in {}", a.name, s.len(), dir.join("realizations").join(&a.name).display());
                    }
                }
            }
            Command::Cluster => {
                cfg.validate()?;
                let provider = reference_provider(&cfg);
                for &seed in &cfg.seeds {
                    let dir = cfg.out.join(format!("seed_{seed}"));
                    let (assets, sets) = generate_data(&cfg, seed, &dir)?;
                    let clusters = cluster_data(&cfg, seed, &dir, &assets, &sets, &provider)?;
                    for (a, c) in assets.iter().zip(&clusters) {
                        println!("{}: {} clusters, test realizations {:?}", a.name, c.k(), c.centroid_members);
                    }
                }
            }
            Command::Train { from_checkpoint } => {
                cfg.resume_from = from_checkpoint.clone();
                let outcome = run_experiment(&cfg)?;
                for s in &outcome.seeds {
                    for p in &s.policies {
                        let r = p.selected_record();
                        println!(
                            "seed {} {}: selected iteration {} with expected test NPV {:.6e} ({:+.2}% over iteration 0)",
                            s.seed,
                            p.name,
                            r.iteration,
                            r.expected_npv,
                            100.0 * p.improvement()
                        );
                    }
                }
                println!("{}", outcome.dir.display());
            }
            Command::Evaluate { from_checkpoint } => {
                cfg.validate()?;
                for &seed in &cfg.seeds {
                    let dir = cfg.out.join(format!("seed_{seed}"));
                    for r in evaluate_saved(&cfg, seed, &dir, from_checkpoint)? {
                        println!("seed {seed} eps_c {}: expected test NPV {:.6e}", r.epsilon_c, r.expected_npv);
                    }
                }
            }
            Command::Report { dir } => {
                let dir = dir.clone().unwrap_or_else(|| cfg.out.clone());
                if !dir.is_dir() {
                    bail!("{} is not a directory", dir.display());
                }
                let n = report_tree(&dir)?;
                info!("rendered {n} plots");
                println!("{n} plots rendered under {}", dir.display());
            }
        }
        Ok(())
    })
}
