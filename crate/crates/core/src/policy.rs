//! Per-arm click statistics and the UCB ranking rule.
//!
//! The state tracks cumulative clicks `s[k]` and effective impressions
//! `n[k]`, where every display of arm `k` at position `l` adds `gamma[l]` to
//! `n[k]`. The CTR estimate is `s[k] / n[k]` and the optimistic index adds
//! `sqrt(delta * ln t / n[k])`. Rankings sort arms by `price * index`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pbm::{argsort_desc, Arm, Ranking, VisibilityProfile};

/// Exploration coefficient used unless configured otherwise.
pub const DEFAULT_DELTA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Rank by `price * (ctr_hat + bonus)`.
    AuctionUcb,
    /// Rank by `price * ctr_hat`, no exploration bonus.
    BaselineGreedy,
}

impl PolicyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyMode::AuctionUcb => "auction_ucb",
            PolicyMode::BaselineGreedy => "baseline_greedy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub delta: f64,
    pub mode: PolicyMode,
}

impl PolicyConfig {
    pub fn new(delta: f64, mode: PolicyMode) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        Ok(Self { delta, mode })
    }

    pub fn auction_ucb() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            mode: PolicyMode::AuctionUcb,
        }
    }

    pub fn baseline_greedy() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            mode: PolicyMode::BaselineGreedy,
        }
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::auction_ucb()
    }
}

/// Prior evidence for one arm, injected as pseudo-counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoCount {
    pub clicks: f64,
    pub impressions: f64,
}

impl PseudoCount {
    /// `impressions` effective impressions at the predicted CTR.
    pub fn from_prediction(ctr: f64, impressions: f64) -> Self {
        Self {
            clicks: ctr * impressions,
            impressions,
        }
    }
}

/// Learner statistics. Serializes as `{t, s, n, prices}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub t: u64,
    pub s: Vec<f64>,
    pub n: Vec<f64>,
    pub prices: Vec<f64>,
}

impl BanditState {
    pub fn k(&self) -> usize {
        self.prices.len()
    }

    /// Checks shapes and the positivity invariants of a deserialized snapshot.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        for (what, len) in [("s", self.s.len()), ("n", self.n.len())] {
            if len != k {
                return Err(Error::LengthMismatch {
                    what,
                    expected: k,
                    got: len,
                });
            }
        }
        if self.t == 0 {
            return Err(Error::param("t", "round counter starts at 1"));
        }
        if let Some(k) = self.n.iter().position(|&n| !(n > 0.0)) {
            return Err(Error::ZeroImpressions(k));
        }
        if self.s.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::param("s", "click counts must be nonnegative"));
        }
        if self.prices.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::param("prices", "prices must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)?;
        state.validate()?;
        Ok(state)
    }

    /// Unbiased CTR estimate `s / n`. Can exceed 1 early on.
    pub fn theta_hat(&self, k: usize) -> Result<f64> {
        let n = self.impressions(k)?;
        Ok(self.s[k] / n)
    }

    /// `sqrt(delta * ln t / n)`; zero at `t = 1`.
    pub fn bonus(&self, k: usize, delta: f64) -> Result<f64> {
        let n = self.impressions(k)?;
        Ok((delta * (self.t as f64).ln() / n).sqrt())
    }

    pub fn ucb_index(&self, k: usize, config: &PolicyConfig) -> Result<f64> {
        Ok(self.theta_hat(k)? + self.bonus(k, config.delta)?)
    }

    /// Ranking score of arm `k` under `config.mode`.
    pub fn score(&self, k: usize, config: &PolicyConfig) -> Result<f64> {
        let ctr = match config.mode {
            PolicyMode::AuctionUcb => self.ucb_index(k, config)?,
            PolicyMode::BaselineGreedy => self.theta_hat(k)?,
        };
        Ok(self.prices[k] * ctr)
    }

    /// All arms sorted by descending score, ties by ascending index.
    pub fn select_ranking(&self, config: &PolicyConfig) -> Result<Ranking> {
        let scores = (0..self.k())
            .map(|k| self.score(k, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ranking::from_sorted(argsort_desc(&scores, |i| i as u64)))
    }

    /// Pure form of [`BanditState::apply`].
    pub fn update(&self, ranking: &Ranking, clicks: &[u8], vis: &VisibilityProfile) -> Result<Self> {
        let mut next = self.clone();
        next.apply(ranking, clicks, vis)?;
        Ok(next)
    }

    /// Advances the round counter and credits each shown arm with the
    /// visibility of its position and its click.
    pub fn apply(&mut self, ranking: &Ranking, clicks: &[u8], vis: &VisibilityProfile) -> Result<()> {
        self.apply_where(ranking, clicks, vis, |_| true)
    }

    /// Like [`BanditState::apply`] but only arms with `learns(k)` change.
    /// The round counter always advances.
    pub fn apply_where(
        &mut self,
        ranking: &Ranking,
        clicks: &[u8],
        vis: &VisibilityProfile,
        learns: impl Fn(usize) -> bool,
    ) -> Result<()> {
        self.check_display(ranking, clicks, vis)?;
        for ((&k, &c), &g) in ranking.slots().iter().zip(clicks).zip(vis.gammas()) {
            if learns(k) {
                self.n[k] += g;
                self.s[k] += f64::from(c);
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Adds clicks without touching impressions or the round counter. Used
    /// to credit the initial display, whose impressions [`init_state`]
    /// already recorded.
    pub fn credit_clicks(&mut self, ranking: &Ranking, clicks: &[u8]) -> Result<()> {
        if clicks.len() != ranking.len() {
            return Err(Error::LengthMismatch {
                what: "clicks",
                expected: ranking.len(),
                got: clicks.len(),
            });
        }
        check_clicks(clicks)?;
        for (&k, &c) in ranking.slots().iter().zip(clicks) {
            if k >= self.k() {
                return Err(Error::InvalidRanking(format!("arm index {k} out of range")));
            }
            self.s[k] += f64::from(c);
        }
        Ok(())
    }

    fn check_display(&self, ranking: &Ranking, clicks: &[u8], vis: &VisibilityProfile) -> Result<()> {
        if ranking.len() != vis.len() {
            return Err(Error::LengthMismatch {
                what: "ranking",
                expected: vis.len(),
                got: ranking.len(),
            });
        }
        if clicks.len() != vis.len() {
            return Err(Error::LengthMismatch {
                what: "clicks",
                expected: vis.len(),
                got: clicks.len(),
            });
        }
        if let Some(&k) = ranking.slots().iter().find(|&&k| k >= self.k()) {
            return Err(Error::InvalidRanking(format!(
                "arm index {k} out of range for {} arms",
                self.k()
            )));
        }
        check_clicks(clicks)
    }

    fn impressions(&self, k: usize) -> Result<f64> {
        match self.n.get(k) {
            None => Err(Error::InvalidRanking(format!(
                "arm index {k} out of range for {} arms",
                self.k()
            ))),
            Some(&n) if n > 0.0 => Ok(n),
            Some(_) => Err(Error::ZeroImpressions(k)),
        }
    }
}

fn check_clicks(clicks: &[u8]) -> Result<()> {
    if clicks.iter().any(|&c| c > 1) {
        return Err(Error::param("clicks", "entries must be 0 or 1"));
    }
    Ok(())
}

/// Shows every arm once in uniformly random order.
///
/// Returns the displayed ranking and a state at `t = 1` whose impressions
/// are the visibility of each arm's position. Clicks from that display are
/// credited separately with [`BanditState::credit_clicks`].
pub fn init_state<R: Rng + ?Sized>(
    arms: &[Arm],
    vis: &VisibilityProfile,
    rng: &mut R,
) -> Result<(BanditState, Ranking)> {
    if arms.is_empty() {
        return Err(Error::param("arms", "at least one arm is required"));
    }
    if arms.len() != vis.len() {
        return Err(Error::LengthMismatch {
            what: "arms",
            expected: vis.len(),
            got: arms.len(),
        });
    }
    let k = arms.len();
    let mut slots: Vec<usize> = (0..k).collect();
    slots.shuffle(rng);
    let mut n = vec![0.0; k];
    for (&arm, &g) in slots.iter().zip(vis.gammas()) {
        if g <= 0.0 {
            return Err(Error::ZeroImpressions(arm));
        }
        n[arm] = g;
    }
    let state = BanditState {
        t: 1,
        s: vec![0.0; k],
        n,
        prices: arms.iter().map(|a| a.price).collect(),
    };
    Ok((state, Ranking::from_sorted(slots)))
}

/// Replaces the statistics with prior pseudo-counts and resets `t` to 1.
pub fn warm_start(state: &BanditState, pseudo: &[PseudoCount]) -> Result<BanditState> {
    if pseudo.len() != state.k() {
        return Err(Error::LengthMismatch {
            what: "pseudo counts",
            expected: state.k(),
            got: pseudo.len(),
        });
    }
    for (k, p) in pseudo.iter().enumerate() {
        if !(p.impressions > 0.0 && p.impressions.is_finite()) {
            return Err(Error::ZeroImpressions(k));
        }
        if !(p.clicks >= 0.0 && p.clicks.is_finite()) {
            return Err(Error::param("pseudo clicks", format!("arm {k}: must be nonnegative")));
        }
    }
    Ok(BanditState {
        t: 1,
        s: pseudo.iter().map(|p| p.clicks).collect(),
        n: pseudo.iter().map(|p| p.impressions).collect(),
        prices: state.prices.clone(),
    })
}
