//! Executes a resolved [`ExperimentConfig`] and writes its artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant as Clock;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InstanceSpec, Mode};
use crate::environment::{
    bundled_ctrs, filter_top_quantile, generate_instance, generate_log, load_log,
    nearest_rank_quantile, read_ctr_file, split_groups, Replay,
};
use crate::error::{Error, Result};
use crate::harness::{
    aggregate, check_bound, checkpoints, frozen_ranking_regret, mean_error_rows, production_ctrs,
    run_many, run_once, run_replay, run_seed, seeded_rng, spearman, write_errors_csv, write_json,
    write_trace_csv, AggregateResult, Instance, RunOptions, RunResult,
};
use crate::pbm::{arms_from, VisibilityProfile};
use crate::policy::{PolicyConfig, PolicyMode};
use crate::tail_guard::{top_slot_count, TailGuardConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Config echo plus what is needed to audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub run_seeds: Vec<u64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// False only when a bound check found a violated checkpoint.
    pub success: bool,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: &'static str,
    pub rounds: usize,
    pub final_regret_over_t: f64,
    pub final_mean_cumulative_regret: f64,
    /// `(t, mean Regret/t)` at powers of ten.
    pub regret_over_t_at: Vec<(u64, f64)>,
}

impl PolicySummary {
    fn new(policy: &'static str, agg: &AggregateResult) -> Self {
        let rounds = agg.rounds();
        Self {
            policy,
            rounds,
            final_regret_over_t: agg.mean_regret_over_t[rounds - 1],
            final_mean_cumulative_regret: agg.mean_cumulative_regret[rounds - 1],
            regret_over_t_at: checkpoints(rounds as u64)
                .into_iter()
                .map(|t| (t, agg.mean_regret_over_t[t as usize - 1]))
                .collect(),
        }
    }
}

const POLICIES: [PolicyMode; 2] = [PolicyMode::AuctionUcb, PolicyMode::BaselineGreedy];

struct Writer<'a> {
    dir: &'a Path,
    artifacts: Vec<PathBuf>,
}

impl Writer<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.artifacts.push(path.clone());
        path
    }

    fn trace(&mut self, name: &str, agg: &AggregateResult) -> Result<()> {
        let path = self.path(name);
        write_trace_csv(&path, agg)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }
}

/// Runs the configured mode with at most `jobs` worker threads.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<Outcome> {
    config.validate()?;
    let started = Clock::now();
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Writer {
        dir,
        artifacts: Vec::new(),
    };
    info!("mode {} into {}", config.mode.as_str(), dir.display());

    let success = match config.mode {
        Mode::Synthetic => synthetic(config, jobs, &mut out)?,
        Mode::Replay => replay(config, jobs, &mut out)?,
        Mode::BoundCheck => bound_check(config, jobs, &mut out)?,
        Mode::TailGuardDemo => tail_guard_demo(config, jobs, &mut out)?,
        Mode::GenLog => gen_log(config, &mut out)?,
    };

    let run_seeds = match config.mode {
        Mode::GenLog => Vec::new(),
        _ => (0..config.runs as u64).map(|i| run_seed(config.master_seed, i)).collect(),
    };
    let manifest = Manifest {
        config: config.clone(),
        run_seeds,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    out.json(MANIFEST_FILE, &manifest)?;
    Ok(Outcome {
        success,
        artifacts: out.artifacts,
    })
}

fn explicit_instance(spec: &InstanceSpec) -> Result<Instance> {
    let vis = match &spec.gammas {
        Some(g) => VisibilityProfile::new(g.clone())?,
        None => VisibilityProfile::harmonic(spec.prices.len())?,
    };
    Instance::new(arms_from(&spec.prices, &spec.ctrs)?, vis)
}

/// The instance shared by every run, drawn from the master seed unless given explicitly.
fn shared_instance(config: &ExperimentConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Instance> {
    match &config.instance {
        Some(spec) => explicit_instance(spec),
        None => {
            let (arms, vis) = generate_instance(&config.synthetic, rng)?;
            Instance::new(arms, vis)
        }
    }
}

fn synthetic_runs(
    config: &ExperimentConfig,
    jobs: usize,
    instance: &Instance,
    policy: &PolicyConfig,
    options: &RunOptions,
) -> Result<(Vec<RunResult>, AggregateResult)> {
    let runs = run_many(config.master_seed, config.runs, jobs, |seed| {
        run_once(instance, policy, config.rounds, seed, options)
    })?;
    let agg = aggregate(&runs, config.window)?;
    Ok((runs, agg))
}

fn synthetic(config: &ExperimentConfig, jobs: usize, out: &mut Writer) -> Result<bool> {
    let instance = shared_instance(config, &mut seeded_rng(config.master_seed))?;
    out.json("instance.json", &instance)?;
    let mut summaries = Vec::new();
    for mode in POLICIES {
        let policy = PolicyConfig::new(config.delta, mode)?;
        let (runs, agg) = synthetic_runs(config, jobs, &instance, &policy, &RunOptions::default())?;
        let name = mode.as_str();
        out.trace(&format!("trace_{name}.csv"), &agg)?;
        let rows = mean_error_rows(&runs, &instance.arms, |_| true)?;
        let path = out.path(&format!("errors_{name}.csv"));
        write_errors_csv(&path, &rows)?;
        let summary = PolicySummary::new(name, &agg);
        info!("{name}: final Regret/t {:.6}", summary.final_regret_over_t);
        summaries.push(summary);
    }
    out.json("summary.json", &summaries)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct ReplaySummary {
    rounds: usize,
    dropped_rounds: usize,
    arms: usize,
    confident_arms: usize,
    cold_arms: usize,
    confident_threshold: u64,
    /// Mean over runs of the rank correlation between `N_k` and relative eCPI error on cold arms.
    mean_spearman_n_vs_rel_err: Option<f64>,
    policies: Vec<PolicySummary>,
}

/// Spearman correlation between final `N_k` and relative eCPI error over the
/// arms selected by `include`.
pub fn opportunity_correlation(
    run: &RunResult,
    arms: &[crate::pbm::Arm],
    include: impl Fn(usize) -> bool,
) -> Result<Option<f64>> {
    let errors = crate::harness::ecpi_errors(&run.final_state, arms)?;
    let (n, rel): (Vec<f64>, Vec<f64>) = (0..arms.len())
        .filter(|&k| include(k))
        .filter_map(|k| errors.rel[k].map(|r| (run.final_state.n[k], r)))
        .unzip();
    Ok(spearman(&n, &rel))
}

/// Loads, filters and splits the configured log.
pub fn prepare_replay(config: &ExperimentConfig) -> Result<(Replay, u64, usize)> {
    let path = config
        .log_path
        .as_deref()
        .ok_or_else(|| Error::Config("log_path: required in replay mode".into()))?;
    let log = filter_top_quantile(&load_log(path)?, config.quantile)?;
    let threshold = match config.confident_threshold {
        Some(t) => t,
        None => {
            let mut counts: Vec<u64> = log.catalog.iter().map(|e| e.opportunities).collect();
            counts.sort_unstable();
            nearest_rank_quantile(&counts, 0.5).unwrap_or(0)
        }
    };
    let split = split_groups(&log, threshold);
    let width = log.rounds.iter().map(|r| r.participants.len()).max().unwrap_or(1);
    let replay = Replay::new(&log, &split, VisibilityProfile::harmonic(width.max(1))?)?;
    Ok((replay, threshold, log.dropped_rounds))
}

fn replay(config: &ExperimentConfig, jobs: usize, out: &mut Writer) -> Result<bool> {
    let (replay, threshold, dropped_rounds) = prepare_replay(config)?;
    if replay.rounds().is_empty() {
        return Err(Error::Config("log_path: the log has no non-empty rounds".into()));
    }
    let cold = |k: usize| !replay.is_confident(k);
    let cold_arms = (0..replay.arms().len()).filter(|&k| cold(k)).count();
    info!(
        "replaying {} rounds, {} cold of {} arms (threshold {threshold})",
        replay.rounds().len(),
        cold_arms,
        replay.arms().len()
    );

    let mut policies = Vec::new();
    let mut mean_spearman = None;
    for mode in POLICIES {
        let policy = PolicyConfig::new(config.delta, mode)?;
        let runs = run_many(config.master_seed, config.runs, jobs, |seed| {
            run_replay(&replay, &policy, seed)
        })?;
        let agg = aggregate(&runs, config.window)?;
        let name = mode.as_str();
        out.trace(&format!("trace_{name}.csv"), &agg)?;
        let rows = mean_error_rows(&runs, replay.arms(), cold)?;
        let path = out.path(&format!("errors_{name}.csv"));
        write_errors_csv(&path, &rows)?;
        if mode == PolicyMode::AuctionUcb {
            let rhos = runs
                .iter()
                .map(|r| opportunity_correlation(r, replay.arms(), cold))
                .collect::<Result<Vec<_>>>()?;
            let defined: Vec<f64> = rhos.into_iter().flatten().collect();
            if !defined.is_empty() {
                mean_spearman = Some(defined.iter().sum::<f64>() / defined.len() as f64);
            }
        }
        policies.push(PolicySummary::new(name, &agg));
    }
    out.json(
        "summary.json",
        &ReplaySummary {
            rounds: replay.rounds().len(),
            dropped_rounds,
            arms: replay.arms().len(),
            confident_arms: replay.arms().len() - cold_arms,
            cold_arms,
            confident_threshold: threshold,
            mean_spearman_n_vs_rel_err: mean_spearman,
            policies,
        },
    )?;
    Ok(true)
}

fn bound_check(config: &ExperimentConfig, jobs: usize, out: &mut Writer) -> Result<bool> {
    let spec = config.instance.clone().unwrap_or_else(InstanceSpec::reference);
    let instance = explicit_instance(&spec)?;
    out.json("instance.json", &instance)?;
    let policy = PolicyConfig::new(config.delta, PolicyMode::AuctionUcb)?;
    let (_, agg) = synthetic_runs(config, jobs, &instance, &policy, &RunOptions::default())?;
    out.trace("trace_auction_ucb.csv", &agg)?;
    let report = check_bound(&agg, &instance.arms, &instance.vis, config.rounds, config.delta)?;
    out.json("bound_report.json", &report)?;
    for c in &report.checkpoints {
        info!(
            "t={} regret {:.4} bound {:.4} {}",
            c.t,
            c.mean_cumulative_regret,
            c.bound,
            if c.holds { "ok" } else { "VIOLATED" }
        );
    }
    Ok(report.holds)
}

#[derive(Debug, Serialize)]
struct TailSummary {
    beta: f64,
    alpha: f64,
    protected_slots: usize,
    /// Instant regret of always showing the production model's ranking.
    frozen_production_regret: f64,
    baseline_ctr: Vec<f64>,
    guarded: PolicySummary,
    unguarded: PolicySummary,
}

fn tail_guard_demo(config: &ExperimentConfig, jobs: usize, out: &mut Writer) -> Result<bool> {
    let (beta, alpha) = match (config.beta, config.alpha) {
        (Some(b), Some(a)) => (b, a),
        _ => return Err(Error::Config("beta, alpha: required in tail_guard_demo mode".into())),
    };
    let guard = TailGuardConfig::new(beta, alpha)?;
    let mut rng = seeded_rng(config.master_seed);
    let instance = shared_instance(config, &mut rng)?;
    let p = config.production;
    let baseline = production_ctrs(&instance.arms, p.noise, p.cold_fraction, p.cold_discount, &mut rng)?;
    let instance = instance.with_baseline(baseline.clone())?;
    out.json("instance.json", &instance)?;

    let policy = PolicyConfig::new(config.delta, PolicyMode::AuctionUcb)?;
    let guarded_opts = RunOptions {
        guard: Some(guard),
        ..RunOptions::default()
    };
    let (_, guarded) = synthetic_runs(config, jobs, &instance, &policy, &guarded_opts)?;
    let (_, unguarded) = synthetic_runs(config, jobs, &instance, &policy, &RunOptions::default())?;
    out.trace("trace_guarded.csv", &guarded)?;
    out.trace("trace_unguarded.csv", &unguarded)?;
    let summary = TailSummary {
        beta,
        alpha,
        protected_slots: top_slot_count(&instance.vis, beta),
        frozen_production_regret: frozen_ranking_regret(&instance, &baseline)?,
        baseline_ctr: baseline,
        guarded: PolicySummary::new("guarded", &guarded),
        unguarded: PolicySummary::new("unguarded", &unguarded),
    };
    info!(
        "m={} guarded Regret/t {:.6}, unguarded {:.6}, frozen production {:.6}",
        summary.protected_slots,
        summary.guarded.final_regret_over_t,
        summary.unguarded.final_regret_over_t,
        summary.frozen_production_regret
    );
    out.json("summary.json", &summary)?;
    Ok(true)
}

fn gen_log(config: &ExperimentConfig, out: &mut Writer) -> Result<bool> {
    let pool = match &config.synthetic.real_ctr_file {
        Some(path) => read_ctr_file(path)?,
        None => bundled_ctrs(),
    };
    let log = generate_log(&config.log_gen, &pool, &mut seeded_rng(config.master_seed))?;
    let path = out.path("auction_log.ndjson");
    log.save(&path)?;
    info!(
        "wrote {} rounds over {} arms to {}",
        log.rounds.len(),
        log.catalog.len(),
        path.display()
    );
    Ok(true)
}
