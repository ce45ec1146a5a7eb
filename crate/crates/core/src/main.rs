use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pbm_auction::cli;
use pbm_auction::config::{parse_config, ConfigLayer, Mode, SyntheticLayer};
use pbm_auction::environment::{CtrKind, PriceKind};

#[derive(Parser)]
#[command(version, about = "UCB bandit experiments for position-based ad auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic instances, UCB against greedy.
    Synthetic(Common),
    /// Replay of a logged auction stream.
    Replay(Common),
    /// Mean cumulative regret against the theoretical bound.
    BoundCheck(Common),
    /// Production model on the top slots, bandits on the tail.
    TailDemo(Common),
    /// Write a synthetic auction log.
    GenLog(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum PriceArg {
    FixedOne,
    Uniform1ToK,
    Binomial10Half,
}

#[derive(Clone, Copy, ValueEnum)]
enum CtrArg {
    Uniform0108,
    EasyTwoLevel,
    RealSample,
}

#[derive(Args)]
struct Common {
    /// JSON config file or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Rounds per run (T).
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Smoothing window for instant regret.
    #[arg(long)]
    window: Option<usize>,
    /// Visibility share reserved for the production model.
    #[arg(long)]
    beta: Option<f64>,
    /// Confidence gate on the exploration bonus.
    #[arg(long)]
    alpha: Option<f64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Auction log (NDJSON) for replay.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Number of arms for synthetic instances.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    price_kind: Option<PriceArg>,
    #[arg(long, value_enum)]
    ctr_kind: Option<CtrArg>,
    /// CTR list, one value per line.
    #[arg(long)]
    ctr_file: Option<PathBuf>,
}

impl Common {
    fn layer(&self, mode: Mode) -> ConfigLayer {
        let synthetic = SyntheticLayer {
            price_kind: self.price_kind.map(|p| match p {
                PriceArg::FixedOne => PriceKind::FixedOne,
                PriceArg::Uniform1ToK => PriceKind::Uniform1ToK,
                PriceArg::Binomial10Half => PriceKind::Binomial10Half,
            }),
            ctr_kind: self.ctr_kind.map(|c| match c {
                CtrArg::Uniform0108 => CtrKind::Uniform01To08,
                CtrArg::EasyTwoLevel => CtrKind::EasyTwoLevel,
                CtrArg::RealSample => CtrKind::RealSample,
            }),
            k: self.k,
            real_ctr_file: self.ctr_file.clone(),
        };
        ConfigLayer {
            mode: Some(mode),
            synthetic: Some(synthetic),
            log_path: self.log.clone(),
            rounds: self.rounds,
            runs: self.runs,
            delta: self.delta,
            window: self.window,
            beta: self.beta,
            alpha: self.alpha,
            master_seed: self.seed,
            output_dir: self.out.clone(),
            ..ConfigLayer::default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (mode, args) = match Cli::parse().command {
        Command::Synthetic(a) => (Mode::Synthetic, a),
        Command::Replay(a) => (Mode::Replay, a),
        Command::BoundCheck(a) => (Mode::BoundCheck, a),
        Command::TailDemo(a) => (Mode::TailGuardDemo, a),
        Command::GenLog(a) => (Mode::GenLog, a),
    };
    let config = match parse_config(args.config.as_deref(), args.layer(mode)) {
        Ok(c) => c,
        Err(e) => {
            log::error!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli::run(&config, jobs) {
        Ok(outcome) if outcome.success => ExitCode::SUCCESS,
        Ok(_) => {
            log::error!("regret bound violated at one or more checkpoints");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
