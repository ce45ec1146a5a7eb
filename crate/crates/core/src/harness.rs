//! Multi-run experiments, regret traces and their summaries.
//!
//! Instant regret is always the expected gap of the displayed ranking under
//! the true CTRs, never a realized reward difference.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{simulate_clicks, Replay};
use crate::error::{Error, Result};
use crate::pbm::{Arm, BoundConstants, GapEvaluator, Ranking, VisibilityProfile};
use crate::policy::{init_state, warm_start, BanditState, PolicyConfig, PseudoCount};
use crate::tail_guard::{guarded_rank, GuardedScores, TailGuardConfig};

/// A ground-truth instance, optionally with a production CTR model for the tail guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub arms: Vec<Arm>,
    pub vis: VisibilityProfile,
    pub baseline_ctr: Option<Vec<f64>>,
}

impl Instance {
    pub fn new(arms: Vec<Arm>, vis: VisibilityProfile) -> Result<Self> {
        if arms.len() != vis.len() {
            return Err(Error::LengthMismatch {
                what: "arms",
                expected: vis.len(),
                got: arms.len(),
            });
        }
        for arm in &arms {
            arm.ctr()?;
        }
        Ok(Self {
            arms,
            vis,
            baseline_ctr: None,
        })
    }

    pub fn with_baseline(mut self, baseline_ctr: Vec<f64>) -> Result<Self> {
        if baseline_ctr.len() != self.arms.len() {
            return Err(Error::LengthMismatch {
                what: "baseline_ctr",
                expected: self.arms.len(),
                got: baseline_ctr.len(),
            });
        }
        self.baseline_ctr = Some(baseline_ctr);
        Ok(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub guard: Option<TailGuardConfig>,
    /// Start from pseudo-counts instead of a random initial display.
    pub warm_start: Option<Vec<PseudoCount>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub instant_regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub final_state: BanditState,
    pub seed: u64,
}

impl RunResult {
    fn from_instant(instant_regret: Vec<f64>, final_state: BanditState, seed: u64) -> Self {
        let cumulative_regret = instant_regret
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        Self {
            instant_regret,
            cumulative_regret,
            final_state,
            seed,
        }
    }
}

/// Seed of run `index` under `master`. Depends only on the pair, so adding
/// runs never changes existing ones.
pub fn run_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plays `rounds` displays on a synthetic instance.
///
/// Round 1 is a uniformly random display whose clicks seed the statistics
/// (or, with a warm start, the first UCB ranking). Every later round ranks,
/// simulates clicks and updates.
pub fn run_once(
    instance: &Instance,
    config: &PolicyConfig,
    rounds: u64,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    if rounds == 0 {
        return Err(Error::param("rounds", "must be at least 1"));
    }
    let Instance {
        arms,
        vis,
        baseline_ctr,
    } = instance;
    let baseline = match (&options.guard, baseline_ctr) {
        (Some(guard), Some(ctrs)) => Some((guard, ctrs)),
        (Some(_), None) => {
            return Err(Error::param(
                "guard",
                "the tail guard needs production CTRs on the instance",
            ))
        }
        (None, _) => None,
    };
    let gaps = GapEvaluator::new(arms, vis)?;
    let mut rng = seeded_rng(seed);
    let mut instant = Vec::with_capacity(rounds as usize);

    let (mut state, first) = init_state(arms, vis, &mut rng)?;
    let mut remaining = rounds;
    match &options.warm_start {
        Some(pseudo) => state = warm_start(&state, pseudo)?,
        None => {
            let clicks = simulate_clicks(&first, arms, vis, &mut rng)?;
            state.credit_clicks(&first, &clicks.clicks)?;
            instant.push(gaps.gap(&first));
            remaining -= 1;
        }
    }

    for _ in 0..remaining {
        let ranking = match baseline {
            Some((guard, ctrs)) => {
                let scores = GuardedScores::from_state(&state, ctrs.clone(), config.delta)?;
                guarded_rank(arms, vis, &scores, guard)?
            }
            None => state.select_ranking(config)?,
        };
        let clicks = simulate_clicks(&ranking, arms, vis, &mut rng)?;
        instant.push(gaps.gap(&ranking));
        state.apply(&ranking, &clicks.clicks, vis)?;
    }
    Ok(RunResult::from_instant(instant, state, seed))
}

/// Replays every round of `replay` once.
pub fn run_replay(replay: &Replay, config: &PolicyConfig, seed: u64) -> Result<RunResult> {
    let mut rng = seeded_rng(seed);
    let mut state = replay.init_state(&mut rng)?;
    let mut instant = Vec::with_capacity(replay.rounds().len());
    for participants in replay.rounds() {
        let step = replay.replay_round(participants, &mut state, config, &mut rng)?;
        instant.push(step.instant_regret);
    }
    Ok(RunResult::from_instant(instant, state, seed))
}

/// Runs `runs` seeded copies of `job` on up to `jobs` threads, returning
/// results in run-index order.
pub fn run_many<F>(master_seed: u64, runs: usize, jobs: usize, job: F) -> Result<Vec<RunResult>>
where
    F: Fn(u64) -> Result<RunResult> + Sync,
{
    let seeds: Vec<u64> = (0..runs as u64).map(|i| run_seed(master_seed, i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean_regret_over_t: Vec<f64>,
    pub std_regret_over_t: Vec<f64>,
    pub smoothed_instant: Vec<f64>,
    pub mean_cumulative_regret: Vec<f64>,
    pub mean_instant: Vec<f64>,
    pub n_runs: usize,
}

impl AggregateResult {
    pub fn rounds(&self) -> usize {
        self.mean_regret_over_t.len()
    }
}

/// Pointwise mean and sample standard deviation (zero for a single run) of
/// `cumulative_regret / t`, plus a trailing moving average of the mean
/// instant regret. The first `window - 1` rounds average what is available.
pub fn aggregate(runs: &[RunResult], window: usize) -> Result<AggregateResult> {
    let first = runs.first().ok_or_else(|| Error::param("runs", "no runs to aggregate"))?;
    if window == 0 {
        return Err(Error::param("window", "must be at least 1"));
    }
    let len = first.instant_regret.len();
    for run in runs {
        if run.instant_regret.len() != len || run.cumulative_regret.len() != len {
            return Err(Error::LengthMismatch {
                what: "run trace",
                expected: len,
                got: run.instant_regret.len(),
            });
        }
    }

    let n = runs.len();
    let mut mean_ratio = vec![0.0; len];
    let mut m2_ratio = vec![0.0; len];
    let mut mean_cum = vec![0.0; len];
    let mut mean_instant = vec![0.0; len];
    // Welford updates, one run at a time.
    for (j, run) in runs.iter().enumerate() {
        let count = (j + 1) as f64;
        for i in 0..len {
            let ratio = run.cumulative_regret[i] / (i + 1) as f64;
            let d = ratio - mean_ratio[i];
            mean_ratio[i] += d / count;
            m2_ratio[i] += d * (ratio - mean_ratio[i]);
            mean_cum[i] += (run.cumulative_regret[i] - mean_cum[i]) / count;
            mean_instant[i] += (run.instant_regret[i] - mean_instant[i]) / count;
        }
    }
    let std_ratio = m2_ratio
        .iter()
        .map(|m2| if n > 1 { (m2 / (n - 1) as f64).max(0.0).sqrt() } else { 0.0 })
        .collect();

    Ok(AggregateResult {
        mean_regret_over_t: mean_ratio,
        std_regret_over_t: std_ratio,
        smoothed_instant: trailing_mean(&mean_instant, window),
        mean_cumulative_regret: mean_cum,
        mean_instant,
        n_runs: n,
    })
}

fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let width = (i + 1).min(window);
        out.push(sum / width as f64);
    }
    out
}

/// Per-arm eCPI errors of the learned CTRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcpiErrors {
    /// `|P * theta - P * theta_hat|`
    pub abs: Vec<f64>,
    /// `abs / (P * theta)`; `None` where the true eCPI is zero.
    pub rel: Vec<Option<f64>>,
}

pub fn ecpi_errors(state: &BanditState, arms: &[Arm]) -> Result<EcpiErrors> {
    if arms.len() != state.k() {
        return Err(Error::LengthMismatch {
            what: "arms",
            expected: state.k(),
            got: arms.len(),
        });
    }
    let mut abs = Vec::with_capacity(arms.len());
    let mut rel = Vec::with_capacity(arms.len());
    for (k, arm) in arms.iter().enumerate() {
        let truth = arm.ecpi()?;
        let err = (truth - arm.price * state.theta_hat(k)?).abs();
        abs.push(err);
        rel.push((truth > 0.0).then(|| err / truth));
    }
    Ok(EcpiErrors { abs, rel })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpportunityError {
    pub arm: usize,
    pub n: f64,
    pub rel_err: Option<f64>,
}

/// `(N_k, relative error)` per arm, ascending in `N_k`.
pub fn error_vs_opportunities(state: &BanditState, arms: &[Arm]) -> Result<Vec<OpportunityError>> {
    let errors = ecpi_errors(state, arms)?;
    let mut rows: Vec<OpportunityError> = errors
        .rel
        .iter()
        .enumerate()
        .map(|(arm, &rel_err)| OpportunityError {
            arm,
            n: state.n[arm],
            rel_err,
        })
        .collect();
    rows.sort_by(|a, b| a.n.total_cmp(&b.n).then(a.arm.cmp(&b.arm)));
    Ok(rows)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckpoint {
    pub t: u64,
    pub mean_cumulative_regret: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub constants: BoundConstants,
    pub checkpoints: Vec<BoundCheckpoint>,
    /// True iff the mean regret is within the bound at every checkpoint.
    pub holds: bool,
}

/// Powers of ten up to and including `horizon`, starting at 1.
pub fn checkpoints(horizon: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |t| t.checked_mul(10))
        .take_while(|&t| t <= horizon)
        .collect()
}

/// Compares the mean cumulative regret with the regret bound at every power
/// of ten up to `horizon`.
pub fn check_bound(
    aggregate: &AggregateResult,
    arms: &[Arm],
    vis: &VisibilityProfile,
    horizon: u64,
    delta: f64,
) -> Result<BoundReport> {
    if horizon as usize > aggregate.rounds() {
        return Err(Error::param(
            "horizon",
            format!("trace has {} rounds, asked for {horizon}", aggregate.rounds()),
        ));
    }
    let constants = BoundConstants::from_instance(arms, vis)?;
    let checkpoints = checkpoints(horizon)
        .into_iter()
        .map(|t| {
            let mean = aggregate.mean_cumulative_regret[t as usize - 1];
            let bound = constants.evaluate(t as f64, delta)?;
            Ok(BoundCheckpoint {
                t,
                mean_cumulative_regret: mean,
                bound,
                holds: mean <= bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let holds = checkpoints.iter().all(|c| c.holds);
    Ok(BoundReport {
        delta,
        constants,
        checkpoints,
        holds,
    })
}

/// A noisy production CTR model: every arm's CTR is scaled by a log-normal
/// factor with spread `noise`, and a `cold_fraction` of arms is additionally
/// underestimated by `cold_discount`.
pub fn production_ctrs<R: Rng + ?Sized>(
    arms: &[Arm],
    noise: f64,
    cold_fraction: f64,
    cold_discount: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let normal = rand_distr::Normal::new(0.0, noise).map_err(|e| Error::param("noise", e.to_string()))?;
    arms.iter()
        .map(|arm| {
            let factor = rand_distr::Distribution::sample(&normal, rng).exp();
            let cold = rng.random_bool(cold_fraction.clamp(0.0, 1.0));
            let ctr = arm.ctr()? * factor * if cold { cold_discount } else { 1.0 };
            Ok(ctr.clamp(0.0, 1.0))
        })
        .collect()
}

/// Regret of always showing the production model's ranking.
pub fn frozen_ranking_regret(instance: &Instance, ctrs: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = instance
        .arms
        .iter()
        .zip(ctrs)
        .map(|(a, c)| a.price * c)
        .collect();
    let ranking = Ranking::new(
        crate::pbm::argsort_desc(&scores, |i| instance.arms[i].id),
        instance.arms.len(),
    )?;
    Ok(GapEvaluator::new(&instance.arms, &instance.vis)?.gap(&ranking))
}

#[derive(Debug, Clone, Serialize)]
struct TraceRow {
    round: usize,
    mean_regret_over_t: f64,
    std_regret_over_t: f64,
    smoothed_instant_regret: f64,
}

pub fn write_trace_csv(path: &Path, aggregate: &AggregateResult) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for i in 0..aggregate.rounds() {
        out.serialize(TraceRow {
            round: i + 1,
            mean_regret_over_t: aggregate.mean_regret_over_t[i],
            std_regret_over_t: aggregate.std_regret_over_t[i],
            smoothed_instant_regret: aggregate.smoothed_instant[i],
        })?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub arm_id: u64,
    pub n: f64,
    pub abs_err: f64,
    pub rel_err: Option<f64>,
}

/// Per-arm errors averaged over the final states of `runs`, restricted to
/// arms where `include` holds.
pub fn mean_error_rows(
    runs: &[RunResult],
    arms: &[Arm],
    include: impl Fn(usize) -> bool,
) -> Result<Vec<ErrorRow>> {
    let count = runs.len() as f64;
    let mut rows: Vec<ErrorRow> = arms
        .iter()
        .enumerate()
        .filter(|(k, _)| include(*k))
        .map(|(_, a)| ErrorRow {
            arm_id: a.id,
            n: 0.0,
            abs_err: 0.0,
            rel_err: a.ecpi().ok().filter(|e| *e > 0.0).map(|_| 0.0),
        })
        .collect();
    for run in runs {
        let errors = ecpi_errors(&run.final_state, arms)?;
        let mut row = rows.iter_mut();
        for k in (0..arms.len()).filter(|&k| include(k)) {
            let r = row.next().expect("one row per included arm");
            r.n += run.final_state.n[k] / count;
            r.abs_err += errors.abs[k] / count;
            if let (Some(acc), Some(rel)) = (r.rel_err.as_mut(), errors.rel[k]) {
                *acc += rel / count;
            }
        }
    }
    Ok(rows)
}

pub fn write_errors_csv(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
