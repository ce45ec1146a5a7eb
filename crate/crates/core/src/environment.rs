//! Simulated users, synthetic instances and replay of logged auctions.
//!
//! Users follow the position-based model: position `l` is observed with
//! probability `gamma[l]` and an observed arm is clicked with probability
//! equal to its CTR, independently across positions.
//!
//! Auction logs are newline-delimited JSON. The first record holds the
//! catalog, every later record one auction round:
//!
//! ```text
//! {"catalog":[{"id":7,"price":2.5,"ctr":0.12,"opportunities":311}, ...]}
//! {"region":"region-03","participants":[7,12,40]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pbm::{self, argsort_desc, Arm, Ranking, VisibilityProfile};
use crate::policy::{BanditState, PolicyConfig};

const BUNDLED_CTRS: &str = include_str!("../data/ctr_sample.txt");

/// Number of high-CTR arms in the two-level instance.
pub const EASY_HIGH_ARMS: usize = 7;
pub const EASY_HIGH_CTR: f64 = 0.8;
pub const EASY_LOW_CTR: f64 = 0.1;

/// Stand-in list of realistic CTR values shipped with the crate.
pub fn bundled_ctrs() -> Vec<f64> {
    parse_ctr_list(BUNDLED_CTRS, Path::new("<bundled>")).expect("bundled CTR list is valid")
}

/// One real per line; blank lines are skipped.
pub fn parse_ctr_list(text: &str, origin: &Path) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let value: f64 = line.trim().parse().map_err(|e| Error::MalformedLog {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: format!("not a number: {e}"),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::MalformedLog {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    reason: format!("CTR {value} outside [0, 1]"),
                });
            }
            Ok(value)
        })
        .collect()
}

pub fn read_ctr_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ctr_list(&text, path)
}

/// Per-position clicks, 1 if the arm shown there was clicked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickOutcome {
    pub clicks: Vec<u8>,
}

impl ClickOutcome {
    pub fn total(&self) -> u32 {
        self.clicks.iter().map(|&c| u32::from(c)).sum()
    }
}

/// Draws `Bernoulli(gamma[l] * ctr)` independently per position.
///
/// Exactly one uniform draw is consumed per position regardless of the
/// probabilities, so traces stay aligned across instances.
pub fn simulate_clicks<R: Rng + ?Sized>(
    ranking: &Ranking,
    arms: &[Arm],
    vis: &VisibilityProfile,
    rng: &mut R,
) -> Result<ClickOutcome> {
    if ranking.len() != vis.len() {
        return Err(Error::LengthMismatch {
            what: "ranking",
            expected: vis.len(),
            got: ranking.len(),
        });
    }
    let mut clicks = Vec::with_capacity(ranking.len());
    for (&k, &g) in ranking.slots().iter().zip(vis.gammas()) {
        let arm = arms.get(k).ok_or_else(|| {
            Error::InvalidRanking(format!("arm index {k} out of range for {} arms", arms.len()))
        })?;
        let ctr = arm.ctr()?;
        if !(0.0..=1.0).contains(&ctr) || !(0.0..=1.0).contains(&g) {
            return Err(Error::param(
                "click probability",
                format!("ctr {ctr} and visibility {g} must lie in [0, 1]"),
            ));
        }
        let p = g * ctr;
        clicks.push(u8::from(rng.random::<f64>() < p));
    }
    Ok(ClickOutcome { clicks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceKind {
    /// Every price is 1.
    FixedOne,
    /// Continuous uniform on `[1, K]`.
    Uniform1ToK,
    /// `Binomial(10, 0.5)`, zero draws resampled.
    Binomial10Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrKind {
    /// Uniform on `[0.1, 0.8]`.
    #[serde(rename = "uniform_01_08")]
    Uniform01To08,
    /// Seven arms at 0.8, the rest at 0.1.
    EasyTwoLevel,
    /// Sampled without replacement from a CTR list.
    RealSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub price_kind: PriceKind,
    pub ctr_kind: CtrKind,
    pub k: usize,
    /// CTR list for [`CtrKind::RealSample`]; the bundled list when absent.
    pub real_ctr_file: Option<PathBuf>,
}

impl SyntheticSpec {
    pub fn new(price_kind: PriceKind, ctr_kind: CtrKind, k: usize) -> Self {
        Self {
            price_kind,
            ctr_kind,
            k,
            real_ctr_file: None,
        }
    }
}

/// Draws prices, then CTRs, for `spec.k` arms with ids `0..k`, paired with
/// the stand-in visibility profile of the same length.
pub fn generate_instance<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<(Vec<Arm>, VisibilityProfile)> {
    let k = spec.k;
    if k == 0 {
        return Err(Error::param("k", "at least one arm is required"));
    }
    if spec.ctr_kind == CtrKind::EasyTwoLevel && k < EASY_HIGH_ARMS {
        return Err(Error::param(
            "k",
            format!("easy_two_level needs at least {EASY_HIGH_ARMS} arms, got {k}"),
        ));
    }

    let prices: Vec<f64> = match spec.price_kind {
        PriceKind::FixedOne => vec![1.0; k],
        PriceKind::Uniform1ToK => (0..k).map(|_| rng.random_range(1.0..=k as f64)).collect(),
        PriceKind::Binomial10Half => {
            let binomial = Binomial::new(10, 0.5).expect("valid binomial parameters");
            (0..k)
                .map(|_| loop {
                    let draw = binomial.sample(rng);
                    if draw > 0 {
                        break draw as f64;
                    }
                })
                .collect()
        }
    };

    let ctrs: Vec<f64> = match spec.ctr_kind {
        CtrKind::Uniform01To08 => (0..k).map(|_| rng.random_range(0.1..=0.8)).collect(),
        CtrKind::EasyTwoLevel => {
            let mut ctrs = vec![EASY_LOW_CTR; k];
            ctrs[..EASY_HIGH_ARMS].fill(EASY_HIGH_CTR);
            ctrs.shuffle(rng);
            ctrs
        }
        CtrKind::RealSample => {
            let pool = match &spec.real_ctr_file {
                Some(path) => read_ctr_file(path)?,
                None => bundled_ctrs(),
            };
            if pool.len() < k {
                return Err(Error::param(
                    "real_ctr_file",
                    format!("needs at least {k} CTR values, found {}", pool.len()),
                ));
            }
            index::sample(rng, pool.len(), k)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        }
    };

    Ok((pbm::arms_from(&prices, &ctrs)?, VisibilityProfile::harmonic(k)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: u64,
    pub price: f64,
    pub ctr: f64,
    pub opportunities: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionRound {
    pub region: String,
    pub participants: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRecord {
    catalog: Vec<CatalogEntry>,
}

/// Logged auctions over a catalog of ads.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionLog {
    /// Sorted by id.
    pub catalog: Vec<CatalogEntry>,
    /// Non-empty rounds in log order.
    pub rounds: Vec<AuctionRound>,
    /// Rounds dropped for having no participants, at load or by filtering.
    pub dropped_rounds: usize,
    /// Opportunity counts of the catalog as loaded, sorted ascending. Quantile
    /// thresholds are taken over this population so filtering is idempotent.
    reference_counts: Vec<u64>,
}

impl AuctionLog {
    /// Validates ids, drops empty rounds and sorts the catalog.
    pub fn new(mut catalog: Vec<CatalogEntry>, rounds: Vec<AuctionRound>) -> Result<Self> {
        catalog.sort_by_key(|e| e.id);
        let mut ids = HashSet::with_capacity(catalog.len());
        for entry in &catalog {
            Arm::with_ctr(entry.id, entry.price, entry.ctr)?;
            if !ids.insert(entry.id) {
                return Err(Error::InvalidArm {
                    id: entry.id,
                    reason: "duplicate catalog id".into(),
                });
            }
        }
        let mut kept = Vec::with_capacity(rounds.len());
        let mut dropped = 0;
        for (i, round) in rounds.into_iter().enumerate() {
            check_round(&round, &ids).map_err(|reason| Error::InvalidParameter {
                name: "round",
                reason: format!("round {i}: {reason}"),
            })?;
            if round.participants.is_empty() {
                dropped += 1;
            } else {
                kept.push(round);
            }
        }
        let mut reference_counts: Vec<u64> = catalog.iter().map(|e| e.opportunities).collect();
        reference_counts.sort_unstable();
        Ok(Self {
            catalog,
            rounds: kept,
            dropped_rounds: dropped,
            reference_counts,
        })
    }

    pub fn arms(&self) -> Vec<Arm> {
        self.catalog
            .iter()
            .map(|e| Arm {
                id: e.id,
                price: e.price,
                true_ctr: Some(e.ctr),
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &CatalogRecord {
                catalog: self.catalog.clone(),
            },
        )?;
        writeln!(out).map_err(|e| Error::io("<log writer>", e))?;
        for round in &self.rounds {
            serde_json::to_writer(&mut out, round)?;
            writeln!(out).map_err(|e| Error::io("<log writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_round(round: &AuctionRound, ids: &HashSet<u64>) -> std::result::Result<(), String> {
    let mut seen = HashSet::with_capacity(round.participants.len());
    for id in &round.participants {
        if !ids.contains(id) {
            return Err(format!("unknown participant id {id}"));
        }
        if !seen.insert(*id) {
            return Err(format!("participant {id} listed twice"));
        }
    }
    Ok(())
}

/// Parses a log from any reader; `origin` labels error messages.
pub fn parse_log<R: BufRead>(reader: R, origin: &Path) -> Result<AuctionLog> {
    let malformed = |line: usize, reason: String| Error::MalformedLog {
        path: origin.to_path_buf(),
        line,
        reason,
    };

    let mut catalog: Option<Vec<CatalogEntry>> = None;
    let mut ids = HashSet::new();
    let mut rounds = Vec::new();
    let mut dropped = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match &catalog {
            None => {
                let record: CatalogRecord = serde_json::from_str(&line)
                    .map_err(|e| malformed(lineno, format!("expected catalog record: {e}")))?;
                for entry in &record.catalog {
                    Arm::with_ctr(entry.id, entry.price, entry.ctr)
                        .map_err(|e| malformed(lineno, e.to_string()))?;
                    if !ids.insert(entry.id) {
                        return Err(malformed(lineno, format!("duplicate catalog id {}", entry.id)));
                    }
                }
                catalog = Some(record.catalog);
            }
            Some(_) => {
                let round: AuctionRound = serde_json::from_str(&line)
                    .map_err(|e| malformed(lineno, format!("expected round record: {e}")))?;
                check_round(&round, &ids).map_err(|reason| malformed(lineno, reason))?;
                if round.participants.is_empty() {
                    dropped += 1;
                } else {
                    rounds.push(round);
                }
            }
        }
    }
    let catalog = catalog.ok_or_else(|| malformed(1, "missing catalog record".into()))?;
    let mut log = AuctionLog::new(catalog, rounds)?;
    log.dropped_rounds += dropped;
    Ok(log)
}

pub fn load_log(path: &Path) -> Result<AuctionLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(BufReader::new(file), path)
}

/// Nearest-rank quantile of ascending `sorted`: the value at rank
/// `max(1, ceil(q * n))`.
pub fn nearest_rank_quantile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    // Guard against q * n landing a hair above an integer.
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Some(sorted[rank.min(n) - 1])
}

/// Keeps arms whose opportunity count reaches the `q`-quantile of the
/// loaded catalog's counts, then drops rounds left without participants.
pub fn filter_top_quantile(log: &AuctionLog, q: f64) -> Result<AuctionLog> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::param("quantile", format!("must lie in [0, 1), got {q}")));
    }
    let threshold = nearest_rank_quantile(&log.reference_counts, q)
        .ok_or_else(|| Error::param("quantile", "catalog is empty"))?;
    let catalog: Vec<CatalogEntry> = log
        .catalog
        .iter()
        .filter(|e| e.opportunities >= threshold)
        .cloned()
        .collect();
    let kept: HashSet<u64> = catalog.iter().map(|e| e.id).collect();

    let mut dropped = log.dropped_rounds;
    let mut rounds = Vec::with_capacity(log.rounds.len());
    for round in &log.rounds {
        let participants: Vec<u64> = round
            .participants
            .iter()
            .copied()
            .filter(|id| kept.contains(id))
            .collect();
        if participants.is_empty() {
            dropped += 1;
        } else {
            rounds.push(AuctionRound {
                region: round.region.clone(),
                participants,
            });
        }
    }
    if catalog.is_empty() || (rounds.is_empty() && !log.rounds.is_empty()) {
        return Err(Error::param(
            "quantile",
            format!("no arms or rounds survive the {q}-quantile filter"),
        ));
    }
    Ok(AuctionLog {
        catalog,
        rounds,
        dropped_rounds: dropped,
        reference_counts: log.reference_counts.clone(),
    })
}

/// Arms whose true CTR is trusted (frozen) versus learned online.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub confident: Vec<u64>,
    pub cold: Vec<u64>,
}

/// Arms with at least `threshold` opportunities are confident, the rest cold.
pub fn split_groups(log: &AuctionLog, threshold: u64) -> GroupSplit {
    let (confident, cold): (Vec<_>, Vec<_>) = log
        .catalog
        .iter()
        .partition(|e| e.opportunities >= threshold);
    GroupSplit {
        confident: confident.into_iter().map(|e| e.id).collect(),
        cold: cold.into_iter().map(|e| e.id).collect(),
    }
}

/// Outcome of replaying one logged round.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    /// Catalog indices in display order.
    pub ranking: Ranking,
    pub clicks: ClickOutcome,
    pub instant_regret: f64,
}

/// A log prepared for replay: catalog arms, dense participant indices and
/// the confident/cold split.
#[derive(Debug, Clone)]
pub struct Replay {
    arms: Vec<Arm>,
    confident: Vec<bool>,
    rounds: Vec<Vec<usize>>,
    vis: VisibilityProfile,
}

impl Replay {
    pub fn new(log: &AuctionLog, split: &GroupSplit, vis: VisibilityProfile) -> Result<Self> {
        let arms = log.arms();
        let index: HashMap<u64, usize> = arms.iter().enumerate().map(|(i, a)| (a.id, i)).collect();
        let lookup = |id: &u64| {
            index.get(id).copied().ok_or_else(|| Error::InvalidArm {
                id: *id,
                reason: "not in catalog".into(),
            })
        };
        let mut confident = vec![false; arms.len()];
        for id in &split.confident {
            confident[lookup(id)?] = true;
        }
        let rounds = log
            .rounds
            .iter()
            .map(|r| {
                if r.participants.len() > vis.len() {
                    return Err(Error::LengthMismatch {
                        what: "round participants (visibility positions available)",
                        expected: vis.len(),
                        got: r.participants.len(),
                    });
                }
                r.participants.iter().map(lookup).collect()
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Self {
            arms,
            confident,
            rounds,
            vis,
        })
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn rounds(&self) -> &[Vec<usize>] {
        &self.rounds
    }

    pub fn is_confident(&self, k: usize) -> bool {
        self.confident[k]
    }

    pub fn vis(&self) -> &VisibilityProfile {
        &self.vis
    }

    /// Initial statistics at `t = 1`.
    ///
    /// Confident arms hold one pseudo-impression at their true CTR. Cold arms
    /// are shuffled and shown once in chunks of at most `L` positions, each
    /// chunk crediting the visibility of its positions and simulated clicks.
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BanditState> {
        let k = self.arms.len();
        let mut state = BanditState {
            t: 1,
            s: vec![0.0; k],
            n: vec![0.0; k],
            prices: self.arms.iter().map(|a| a.price).collect(),
        };
        let mut cold: Vec<usize> = (0..k).filter(|&i| !self.confident[i]).collect();
        cold.shuffle(rng);
        for i in (0..k).filter(|&i| self.confident[i]) {
            state.s[i] = self.arms[i].ctr()?;
            state.n[i] = 1.0;
        }
        for chunk in cold.chunks(self.vis.len()) {
            let vis = self.vis.truncated(chunk.len())?;
            let ranking = Ranking::from_sorted(chunk.to_vec());
            let clicks = simulate_clicks(&ranking, &self.arms, &vis, rng)?;
            for ((&i, &c), &g) in chunk.iter().zip(&clicks.clicks).zip(vis.gammas()) {
                state.n[i] += g;
                state.s[i] += f64::from(c);
            }
        }
        if let Some(i) = state.n.iter().position(|&n| n <= 0.0) {
            return Err(Error::ZeroImpressions(i));
        }
        Ok(state)
    }

    /// Plays one logged round: ranks its participants, simulates clicks and
    /// updates the statistics of cold arms only.
    pub fn replay_round<R: Rng + ?Sized>(
        &self,
        participants: &[usize],
        state: &mut BanditState,
        config: &PolicyConfig,
        rng: &mut R,
    ) -> Result<ReplayStep> {
        if participants.is_empty() {
            return Err(Error::param("participants", "round has no participants"));
        }
        let vis = self.vis.truncated(participants.len())?;
        let scores = participants
            .iter()
            .map(|&k| {
                if self.confident[k] {
                    self.arms[k].ecpi()
                } else {
                    state.score(k, config)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let order = argsort_desc(&scores, |i| self.arms[participants[i]].id);
        let ranking = Ranking::from_sorted(order.iter().map(|&i| participants[i]).collect());
        let clicks = simulate_clicks(&ranking, &self.arms, &vis, rng)?;
        let instant_regret = pbm::subset_gap(&ranking, &self.arms, &vis)?;
        state.apply_where(&ranking, &clicks.clicks, &vis, |k| !self.confident[k])?;
        Ok(ReplayStep {
            ranking,
            clicks,
            instant_regret,
        })
    }
}

/// Shape of a generated auction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogGenParams {
    pub arms: usize,
    pub rounds: usize,
    pub regions: usize,
    pub max_participants: usize,
    /// Arm `i` (after shuffling) is drawn with weight `1 / (i + 1)^zipf_exponent`.
    pub zipf_exponent: f64,
    pub max_price: f64,
}

impl Default for LogGenParams {
    fn default() -> Self {
        Self {
            arms: 300,
            rounds: 15_000,
            regions: 10,
            max_participants: 30,
            zipf_exponent: 1.0,
            max_price: 10.0,
        }
    }
}

/// Emits a log with Zipf-like participation, uniform prices on
/// `[1, max_price]` and CTRs drawn from `ctr_pool` with replacement. Each
/// round has a uniform number of participants in `0..=max_participants`, so
/// a few empty rounds are generated as well.
pub fn generate_log<R: Rng + ?Sized>(
    params: &LogGenParams,
    ctr_pool: &[f64],
    rng: &mut R,
) -> Result<AuctionLog> {
    if params.arms == 0 || params.regions == 0 || ctr_pool.is_empty() {
        return Err(Error::param("log generator", "needs arms, regions and a CTR pool"));
    }
    if !(params.max_price >= 1.0) {
        return Err(Error::param("max_price", "must be at least 1"));
    }
    let max_participants = params.max_participants.min(params.arms);

    let mut popularity: Vec<f64> = (0..params.arms)
        .map(|i| 1.0 / ((i + 1) as f64).powf(params.zipf_exponent))
        .collect();
    popularity.shuffle(rng);
    let mut catalog: Vec<CatalogEntry> = (0..params.arms)
        .map(|i| CatalogEntry {
            id: i as u64,
            price: rng.random_range(1.0..=params.max_price),
            ctr: ctr_pool[rng.random_range(0..ctr_pool.len())],
            opportunities: 0,
        })
        .collect();

    let mut rounds = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let region = format!("region-{:02}", rng.random_range(0..params.regions));
        let count = rng.random_range(0..=max_participants);
        let mut participants: Vec<u64> = if count == 0 {
            Vec::new()
        } else {
            index::sample_weighted(rng, params.arms, |i| popularity[i], count)
                .map_err(|e| Error::param("log generator", e.to_string()))?
                .into_iter()
                .map(|i| i as u64)
                .collect()
        };
        participants.shuffle(rng);
        for &id in &participants {
            catalog[id as usize].opportunities += 1;
        }
        rounds.push(AuctionRound {
            region,
            participants,
        });
    }
    AuctionLog::new(catalog, rounds)
}
