use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bfssl_core::checkpoint;
use bfssl_core::sim::{self, Baseline, RunConfig};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "bfssl", version, about = "Vehicular federated self-supervised learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the allocator and the federated encoder.
    Train(Common),
    /// Replay a trained actor deterministically.
    Test {
        #[command(flatten)]
        common: Common,
        /// Actor checkpoint; defaults to `<out>/actor.ckpt`.
        #[arg(long)]
        actor: Option<PathBuf>,
    },
    /// Run a comparison: pso, uniform-agg, drop-agg or random-alloc.
    Baseline {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the fully resolved configuration.
    Config(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    vehicles: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.slots {
            cfg.slots = v;
        }
        if let Some(v) = self.vehicles {
            cfg.vehicles = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish(out: &sim::RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    sim::write_outputs(out, cfg, dir).with_context(|| format!("writing to {}", dir.display()))?;
    let s = &out.summary;
    println!(
        "{}: {} slots, mean reward {:.5}, final reward {:.5}, objective {:.5} ± {:.5}, final loss {:.5}, empty rounds {}",
        s.mode, s.rows, s.reward.mean, s.final_reward, s.objective.mean, s.objective.std, s.final_global_loss, s.empty_rounds
    );
    info!("outputs in {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = sim::run_training(&cfg)?;
            finish(&out, &cfg, &common.out)
        }
        Command::Test { common, actor } => {
            let cfg = common.resolve()?;
            let path = actor.unwrap_or_else(|| common.out.join("actor.ckpt"));
            let net = checkpoint::load_mlp(&path).with_context(|| format!("loading actor {}", path.display()))?;
            let out = sim::run_test(&cfg, &net)?;
            finish(&out, &cfg, &common.out.join("test"))
        }
        Command::Baseline { name, common } => {
            let which: Baseline = name.parse()?;
            let cfg = common.resolve()?;
            let out = sim::run_baseline(&cfg, which)?;
            finish(&out, &cfg, &common.out.join(which.name()))
        }
        Command::Config(common) => {
            print!("{}", common.resolve()?.to_toml());
            Ok(())
        }
    }
}
