use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use safedpa_bench::{ExperimentConfig, Pipeline};

/// Safe policy adaptation experiments: train, calibrate and evaluate.
#[derive(Parser)]
#[command(name = "safedpa", version)]
struct Cli {
    /// TOML config; omitted keys take the preset of its `env`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Random-walk transitions for the dynamics model.
    Collect,
    /// Encoder and control-affine heads.
    TrainDyn,
    /// The task policy (random, analytic or policy gradient).
    TrainPolicy,
    /// History-window adaptation module.
    TrainAdapt,
    /// Few-shot fine-tuning on the real variant.
    Finetune,
    /// Robust filter margin.
    Margin,
    /// Pooled success and safety rates per method.
    Eval,
    /// Per-direction rates per method and a polar CSV.
    Sweep,
    /// Barrier-change grids over the action box.
    Heatmap,
    /// Untuned versus tuned prediction error and open-loop rollouts.
    Report,
    /// All training stages and every applicable evaluation.
    Run,
    /// Prints the effective config as TOML.
    ShowConfig,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Cmd::ShowConfig = cli.cmd {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let mut p = Pipeline::open(cfg)?;
    match cli.cmd {
        Cmd::Collect => p.collect()?,
        Cmd::TrainDyn => p.train_dyn()?,
        Cmd::TrainPolicy => p.train_policy()?,
        Cmd::TrainAdapt => p.train_adapt()?,
        Cmd::Finetune => p.finetune()?,
        Cmd::Margin => p.margin()?,
        Cmd::Eval => print!("{}", safedpa_bench::metrics::rows_csv(&p.eval()?)),
        Cmd::Sweep => print!("{}", safedpa_bench::metrics::rows_csv(&p.sweep()?)),
        Cmd::Heatmap => {
            for (m, c) in p.heatmap()?.correlations {
                println!("{m}: pearson vs oracle {}", c.map_or("undefined".into(), |c| format!("{c:.4}")));
            }
        }
        Cmd::Report => print!("{}", safedpa_bench::report::summary_csv(&p.report()?)),
        Cmd::Run => p.run_all()?,
        Cmd::ShowConfig => unreachable!(),
    }
    for r in &p.runs {
        log::debug!("{} {}", r.stage, if r.cached { "cached" } else { "ran" });
    }
    Ok(())
}
