//! Ground-truth arithmetic for the position-based click model.
//!
//! A ranking places arm `slots[l]` at position `l`; a user observes position
//! `l` with probability `gamma[l]` and then clicks the arm with probability
//! equal to its CTR. Every click pays the arm's fixed per-click price, so the
//! expected reward of a ranking is `sum_l gamma[l] * price * ctr`.
//!
//! Ranking slots are indices into the arm slice they were built against, not
//! [`Arm::id`]. Ids are only used to break score ties.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide that two visibility coefficients are equal.
pub const VISIBILITY_REL_TOL: f64 = 1e-12;

/// Gaps at or below `ZERO_GAP_REL_TOL * optimal_reward` count as zero.
pub const ZERO_GAP_REL_TOL: f64 = 1e-12;

/// Largest arm count for which bound constants come from full enumeration.
pub const MAX_ENUMERATED_ARMS: usize = 8;

/// An ad competing for slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub id: u64,
    pub price: f64,
    /// Click probability once observed. `None` when the ground truth is hidden.
    pub true_ctr: Option<f64>,
}

impl Arm {
    pub fn new(id: u64, price: f64, true_ctr: Option<f64>) -> Result<Self> {
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::InvalidArm {
                id,
                reason: format!("price must be positive, got {price}"),
            });
        }
        if let Some(ctr) = true_ctr {
            if !(0.0..=1.0).contains(&ctr) {
                return Err(Error::InvalidArm {
                    id,
                    reason: format!("CTR must lie in [0, 1], got {ctr}"),
                });
            }
        }
        Ok(Self {
            id,
            price,
            true_ctr,
        })
    }

    /// Arm with a known CTR, the usual case in simulation.
    pub fn with_ctr(id: u64, price: f64, ctr: f64) -> Result<Self> {
        Self::new(id, price, Some(ctr))
    }

    pub fn ctr(&self) -> Result<f64> {
        self.true_ctr.ok_or(Error::MissingCtr(self.id))
    }

    /// Expected cost per impression, `price * ctr`.
    pub fn ecpi(&self) -> Result<f64> {
        Ok(self.price * self.ctr()?)
    }
}

/// Builds arms with ids `0..K` from parallel price and CTR vectors.
pub fn arms_from(prices: &[f64], ctrs: &[f64]) -> Result<Vec<Arm>> {
    if prices.len() != ctrs.len() {
        return Err(Error::LengthMismatch {
            what: "ctrs",
            expected: prices.len(),
            got: ctrs.len(),
        });
    }
    prices
        .iter()
        .zip(ctrs)
        .enumerate()
        .map(|(k, (&p, &c))| Arm::with_ctr(k as u64, p, c))
        .collect()
}

/// Strictly decreasing positional observation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct VisibilityProfile {
    gammas: Vec<f64>,
}

impl VisibilityProfile {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        let Some(&first) = gammas.first() else {
            return Err(Error::InvalidVisibility("profile is empty".into()));
        };
        if !(first > 0.0 && first <= 1.0) {
            return Err(Error::InvalidVisibility(format!(
                "first coefficient must lie in (0, 1], got {first}"
            )));
        }
        for (l, pair) in gammas.windows(2).enumerate() {
            let (hi, lo) = (pair[0], pair[1]);
            if !(lo >= 0.0) {
                return Err(Error::InvalidVisibility(format!(
                    "coefficient {} is negative or NaN: {lo}",
                    l + 1
                )));
            }
            if lo >= hi * (1.0 - VISIBILITY_REL_TOL) {
                return Err(Error::InvalidVisibility(format!(
                    "coefficients must strictly decrease, got {hi} then {lo} at position {}",
                    l + 1
                )));
            }
        }
        Ok(Self { gammas })
    }

    /// Stand-in profile `gamma_l = 0.9 * 9 / (l + 8)` for positions `l = 1..=len`.
    ///
    /// With 30 slots the top 3, 5, 8 and 20 positions hold the first prefixes
    /// reaching 20%, 30%, 40% and 80% of the total visibility.
    pub fn harmonic(len: usize) -> Result<Self> {
        Self::new((1..=len).map(|l| 8.1 / (l as f64 + 8.0)).collect())
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.gammas.iter().sum()
    }

    /// The first `len` positions of the profile.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::LengthMismatch {
                what: "truncated visibility profile",
                expected: self.len(),
                got: len,
            });
        }
        Ok(Self {
            gammas: self.gammas[..len].to_vec(),
        })
    }
}

impl TryFrom<Vec<f64>> for VisibilityProfile {
    type Error = Error;

    fn try_from(gammas: Vec<f64>) -> Result<Self> {
        Self::new(gammas)
    }
}

impl From<VisibilityProfile> for Vec<f64> {
    fn from(profile: VisibilityProfile) -> Self {
        profile.gammas
    }
}

/// An ordered list of distinct arm indices; `slots[l]` is shown at position `l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ranking {
    slots: Vec<usize>,
}

impl Ranking {
    /// A full permutation of `0..k`.
    pub fn new(slots: Vec<usize>, k: usize) -> Result<Self> {
        if slots.len() != k {
            return Err(Error::LengthMismatch {
                what: "ranking",
                expected: k,
                got: slots.len(),
            });
        }
        let mut seen = vec![false; k];
        for &s in &slots {
            if s >= k {
                return Err(Error::InvalidRanking(format!(
                    "arm index {s} out of range for {k} arms"
                )));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidRanking(format!("arm index {s} appears twice")));
            }
        }
        Ok(Self { slots })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            slots: (0..k).collect(),
        }
    }

    pub(crate) fn from_sorted(slots: Vec<usize>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn into_slots(self) -> Vec<usize> {
        self.slots
    }
}

/// Indices of `scores` sorted by score descending, ties by ascending `ids`.
pub(crate) fn argsort_desc(scores: &[f64], ids: impl Fn(usize) -> u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids(a).cmp(&ids(b)),
        other => other,
    });
    order
}

fn check_shapes(ranking: &Ranking, arms: &[Arm], vis: &VisibilityProfile) -> Result<()> {
    if arms.len() != vis.len() {
        return Err(Error::LengthMismatch {
            what: "arms",
            expected: vis.len(),
            got: arms.len(),
        });
    }
    if ranking.len() != arms.len() {
        return Err(Error::LengthMismatch {
            what: "ranking",
            expected: arms.len(),
            got: ranking.len(),
        });
    }
    if let Some(&bad) = ranking.slots.iter().find(|&&s| s >= arms.len()) {
        return Err(Error::InvalidRanking(format!(
            "arm index {bad} out of range for {} arms",
            arms.len()
        )));
    }
    Ok(())
}

fn ecpis(arms: &[Arm]) -> Result<Vec<f64>> {
    arms.iter().map(Arm::ecpi).collect()
}

fn reward_of(slots: &[usize], values: &[f64], gammas: &[f64]) -> f64 {
    slots
        .iter()
        .zip(gammas)
        .map(|(&k, &g)| g * values[k])
        .sum()
}

/// `sum_l gamma_l * P * theta` of the arm at position `l`.
pub fn expected_reward(ranking: &Ranking, arms: &[Arm], vis: &VisibilityProfile) -> Result<f64> {
    check_shapes(ranking, arms, vis)?;
    Ok(reward_of(&ranking.slots, &ecpis(arms)?, vis.gammas()))
}

/// Arms by descending eCPI, ties by ascending id.
pub fn optimal_ranking(arms: &[Arm], vis: &VisibilityProfile) -> Result<Ranking> {
    if arms.len() != vis.len() {
        return Err(Error::LengthMismatch {
            what: "arms",
            expected: vis.len(),
            got: arms.len(),
        });
    }
    let values = ecpis(arms)?;
    Ok(Ranking::from_sorted(argsort_desc(&values, |i| arms[i].id)))
}

/// Expected reward lost by `ranking` relative to the optimal ranking.
pub fn action_gap(ranking: &Ranking, arms: &[Arm], vis: &VisibilityProfile) -> Result<f64> {
    check_shapes(ranking, arms, vis)?;
    Ok(GapEvaluator::new(arms, vis)?.gap(ranking))
}

/// Caches the optimal reward of an instance for repeated gap queries.
#[derive(Debug, Clone)]
pub struct GapEvaluator {
    values: Vec<f64>,
    gammas: Vec<f64>,
    optimum: f64,
}

impl GapEvaluator {
    pub fn new(arms: &[Arm], vis: &VisibilityProfile) -> Result<Self> {
        let best = optimal_ranking(arms, vis)?;
        let values = ecpis(arms)?;
        let optimum = reward_of(best.slots(), &values, vis.gammas());
        Ok(Self {
            values,
            gammas: vis.gammas().to_vec(),
            optimum,
        })
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// Gap of a full ranking over the evaluator's arms.
    ///
    /// # Panics
    /// If a slot is out of range.
    pub fn gap(&self, ranking: &Ranking) -> f64 {
        // The optimum dominates every permutation; only rounding can push this below 0.
        (self.optimum - reward_of(ranking.slots(), &self.values, &self.gammas)).max(0.0)
    }
}

/// Gap of `ranking` against the best ordering of the same arms, for rankings
/// that show only a subset of `arms` (one logged auction).
pub fn subset_gap(ranking: &Ranking, arms: &[Arm], vis: &VisibilityProfile) -> Result<f64> {
    if ranking.len() != vis.len() {
        return Err(Error::LengthMismatch {
            what: "ranking",
            expected: vis.len(),
            got: ranking.len(),
        });
    }
    let shown = ranking
        .slots
        .iter()
        .map(|&k| {
            arms.get(k).cloned().ok_or_else(|| {
                Error::InvalidRanking(format!("arm index {k} out of range for {} arms", arms.len()))
            })
        })
        .collect::<Result<Vec<Arm>>>()?;
    action_gap(&Ranking::identity(shown.len()), &shown, vis)
}

/// `min_l (sum gamma)^2 / l + (sum_{i<=l} gamma_i)^2` over `l = 1..=L`.
pub fn c_gamma(vis: &VisibilityProfile) -> f64 {
    let total = vis.total();
    let mut prefix = 0.0;
    let mut best = f64::INFINITY;
    for (l, &g) in vis.gammas().iter().enumerate() {
        prefix += g;
        let value = total * total / (l + 1) as f64 + prefix * prefix;
        best = best.min(value);
    }
    best
}

/// Instance constants entering the logarithmic regret bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub delta_min: f64,
    pub delta_max: f64,
    pub c_gamma: f64,
    pub p_max: f64,
    pub k: usize,
    /// Whether `delta_min` and `delta_max` come from enumerating every permutation.
    pub exact: bool,
}

impl BoundConstants {
    /// Gaps are enumerated over all `K!` rankings when `K <= 8`. Above that,
    /// `delta_max` is the gap of the reversed optimal ranking (exact by the
    /// rearrangement inequality) and `delta_min` is the smallest positive gap
    /// among adjacent transpositions of the optimum, which can overestimate
    /// the true minimum.
    pub fn from_instance(arms: &[Arm], vis: &VisibilityProfile) -> Result<Self> {
        let best = optimal_ranking(arms, vis)?;
        let values = ecpis(arms)?;
        let gammas = vis.gammas();
        let optimum = reward_of(best.slots(), &values, gammas);
        let zero_tol = ZERO_GAP_REL_TOL * optimum.abs();
        let k = arms.len();

        let (delta_min, delta_max, exact) = if k <= MAX_ENUMERATED_ARMS {
            let mut min_pos = f64::INFINITY;
            let mut max_gap: f64 = 0.0;
            for_each_permutation(k, |perm| {
                let gap = optimum - reward_of(perm, &values, gammas);
                if gap > zero_tol {
                    min_pos = min_pos.min(gap);
                }
                max_gap = max_gap.max(gap);
            });
            (min_pos, max_gap, true)
        } else {
            let mut min_pos = f64::INFINITY;
            let mut slots = best.slots().to_vec();
            for l in 0..k - 1 {
                slots.swap(l, l + 1);
                let gap = optimum - reward_of(&slots, &values, gammas);
                slots.swap(l, l + 1);
                if gap > zero_tol {
                    min_pos = min_pos.min(gap);
                }
            }
            let reversed: Vec<usize> = best.slots().iter().rev().copied().collect();
            let max_gap = optimum - reward_of(&reversed, &values, gammas);
            (min_pos, max_gap, false)
        };

        if !delta_min.is_finite() {
            return Err(Error::DegenerateInstance);
        }
        Ok(Self {
            delta_min,
            delta_max,
            c_gamma: c_gamma(vis),
            p_max: arms.iter().map(|a| a.price).fold(f64::MIN, f64::max),
            k,
            exact,
        })
    }

    /// Bound on the expected cumulative regret after `horizon` rounds.
    ///
    /// The constant in front of the logarithm is 64 at `delta = 1.5` and grows
    /// linearly with `delta`. The constant term only holds for `delta >= 1.5`.
    pub fn evaluate(&self, horizon: f64, delta: f64) -> Result<f64> {
        if !(horizon >= 1.0) {
            return Err(Error::param("horizon", format!("must be >= 1, got {horizon}")));
        }
        if !(delta >= 1.5) {
            return Err(Error::param(
                "delta",
                format!("the regret bound requires delta >= 1.5, got {delta}"),
            ));
        }
        let k = self.k as f64;
        let log_coef = 64.0 * delta / 1.5;
        Ok(PI * PI / 3.0 * k * self.delta_max
            + log_coef * k * self.c_gamma * self.p_max / self.delta_min * horizon.ln())
    }
}

/// Upper bound on expected cumulative regret of the UCB policy after `horizon` rounds.
pub fn regret_bound(
    arms: &[Arm],
    vis: &VisibilityProfile,
    horizon: u64,
    delta: f64,
) -> Result<f64> {
    BoundConstants::from_instance(arms, vis)?.evaluate(horizon as f64, delta)
}

/// Heap's algorithm over permutations of `0..k`.
fn for_each_permutation(k: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut counters = vec![0usize; k];
    visit(&perm);
    let mut i = 1;
    while i < k {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            visit(&perm);
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_arm() -> (Vec<Arm>, VisibilityProfile) {
        (
            arms_from(&[1.0, 1.0], &[0.8, 0.1]).unwrap(),
            VisibilityProfile::new(vec![1.0, 0.5]).unwrap(),
        )
    }

    /// Every permutation of 0..k, built recursively.
    fn all_perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn reward_single_arm() {
        let arms = arms_from(&[2.0], &[0.5]).unwrap();
        let vis = VisibilityProfile::new(vec![1.0]).unwrap();
        assert_eq!(expected_reward(&Ranking::identity(1), &arms, &vis).unwrap(), 1.0);
    }

    #[test]
    fn reward_two_arms() {
        let (arms, vis) = two_arm();
        let r = expected_reward(&Ranking::identity(2), &arms, &vis).unwrap();
        assert!((r - 0.85).abs() < 1e-15);
    }

    #[test]
    fn reward_zero_ctrs() {
        let arms = arms_from(&[3.0, 1.0, 2.0], &[0.0; 3]).unwrap();
        let vis = VisibilityProfile::harmonic(3).unwrap();
        let r = Ranking::new(vec![2, 0, 1], 3).unwrap();
        assert_eq!(expected_reward(&r, &arms, &vis).unwrap(), 0.0);
    }

    #[test]
    fn reward_errors() {
        let (arms, vis) = two_arm();
        assert!(matches!(
            expected_reward(&Ranking::identity(1), &arms, &vis),
            Err(Error::LengthMismatch { .. })
        ));
        let hidden = vec![Arm::new(0, 1.0, None).unwrap(), arms[1].clone()];
        assert!(matches!(
            expected_reward(&Ranking::identity(2), &hidden, &vis),
            Err(Error::MissingCtr(0))
        ));
    }

    #[test]
    fn optimal_ranking_examples() {
        let arms = arms_from(&[2.0, 1.0, 1.0], &[0.1, 0.5, 0.3]).unwrap();
        let vis = VisibilityProfile::harmonic(3).unwrap();
        assert_eq!(optimal_ranking(&arms, &vis).unwrap().slots(), &[1, 2, 0]);

        let tied = arms_from(&[1.0, 2.0, 0.5, 4.0], &[0.4, 0.2, 0.8, 0.1]).unwrap();
        let vis4 = VisibilityProfile::harmonic(4).unwrap();
        assert_eq!(optimal_ranking(&tied, &vis4).unwrap().slots(), &[0, 1, 2, 3]);

        let single = arms_from(&[1.0], &[0.3]).unwrap();
        let vis1 = VisibilityProfile::new(vec![0.7]).unwrap();
        assert_eq!(optimal_ranking(&single, &vis1).unwrap().slots(), &[0]);
    }

    #[test]
    fn gap_examples() {
        let (arms, vis) = two_arm();
        let best = optimal_ranking(&arms, &vis).unwrap();
        assert_eq!(action_gap(&best, &arms, &vis).unwrap(), 0.0);
        let swapped = Ranking::new(vec![1, 0], 2).unwrap();
        assert!((action_gap(&swapped, &arms, &vis).unwrap() - 0.35).abs() < 1e-15);

        let uniform = arms_from(&[1.0; 4], &[0.3; 4]).unwrap();
        let vis4 = VisibilityProfile::harmonic(4).unwrap();
        for p in all_perms(4) {
            let r = Ranking::new(p, 4).unwrap();
            assert_eq!(action_gap(&r, &uniform, &vis4).unwrap(), 0.0);
        }
    }

    #[test]
    fn subset_gap_uses_shown_arms_only() {
        let arms = arms_from(&[1.0, 1.0, 1.0, 1.0], &[0.9, 0.8, 0.1, 0.5]).unwrap();
        let vis = VisibilityProfile::new(vec![1.0, 0.5]).unwrap();
        let good = Ranking::from_sorted(vec![3, 2]);
        assert_eq!(subset_gap(&good, &arms, &vis).unwrap(), 0.0);
        let bad = Ranking::from_sorted(vec![2, 3]);
        assert!((subset_gap(&bad, &arms, &vis).unwrap() - 0.5 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn c_gamma_examples() {
        let vis = VisibilityProfile::new(vec![1.0, 0.5]).unwrap();
        assert!((c_gamma(&vis) - 3.25).abs() < 1e-15);
        let one = VisibilityProfile::new(vec![1.0]).unwrap();
        assert_eq!(c_gamma(&one), 2.0);
    }

    #[test]
    fn bound_reference_instance() {
        let (arms, vis) = two_arm();
        let consts = BoundConstants::from_instance(&arms, &vis).unwrap();
        assert!((consts.delta_min - 0.35).abs() < 1e-15);
        assert!((consts.delta_max - 0.35).abs() < 1e-15);
        assert_eq!(consts.p_max, 1.0);
        let at_e = consts.evaluate(std::f64::consts::E, 1.5).unwrap();
        let hand = PI * PI / 3.0 * 2.0 * 0.35 + 64.0 * 2.0 * 3.25 / 0.35;
        assert!((at_e - hand).abs() < 1e-9);
        assert!((at_e - 1191.0).abs() < 0.2);

        let at_one = regret_bound(&arms, &vis, 1, 1.5).unwrap();
        assert!((at_one - PI * PI / 3.0 * 2.0 * 0.35).abs() < 1e-12);
    }

    #[test]
    fn bound_rejects_degenerate_and_small_delta() {
        let arms = arms_from(&[1.0; 3], &[0.2; 3]).unwrap();
        let vis = VisibilityProfile::harmonic(3).unwrap();
        assert!(matches!(
            regret_bound(&arms, &vis, 100, 1.5),
            Err(Error::DegenerateInstance)
        ));
        let (arms, vis) = two_arm();
        assert!(regret_bound(&arms, &vis, 100, 1.0).is_err());
    }

    #[test]
    fn large_k_uses_adjacent_swaps() {
        let ctrs: Vec<f64> = (0..12).map(|i| 0.05 + 0.05 * i as f64).collect();
        let arms = arms_from(&[1.0; 12], &ctrs).unwrap();
        let vis = VisibilityProfile::harmonic(12).unwrap();
        let c = BoundConstants::from_instance(&arms, &vis).unwrap();
        assert!(!c.exact);
        let g = vis.gammas();
        let swaps = (0..11)
            .map(|l| (g[l] - g[l + 1]) * 0.05)
            .fold(f64::INFINITY, f64::min);
        assert!((c.delta_min - swaps).abs() < 1e-12);
        let reversed = Ranking::new((0..12).collect(), 12).unwrap();
        assert!((c.delta_max - action_gap(&reversed, &arms, &vis).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn visibility_validation() {
        assert!(VisibilityProfile::new(vec![]).is_err());
        assert!(VisibilityProfile::new(vec![1.2, 0.5]).is_err());
        assert!(VisibilityProfile::new(vec![0.5, 0.5]).is_err());
        assert!(VisibilityProfile::new(vec![0.5, 0.5 * (1.0 - 1e-13)]).is_err());
        assert!(VisibilityProfile::new(vec![0.5, 0.6]).is_err());
        assert!(VisibilityProfile::new(vec![0.5, -0.1]).is_err());
        assert!(VisibilityProfile::new(vec![1.0, 0.5, 0.0]).is_ok());
        assert!(VisibilityProfile::harmonic(30).is_ok());
    }

    #[test]
    fn ranking_validation() {
        assert!(Ranking::new(vec![0, 0], 2).is_err());
        assert!(Ranking::new(vec![0, 2], 2).is_err());
        assert!(Ranking::new(vec![1], 2).is_err());
        assert!(Ranking::new(vec![1, 0], 2).is_ok());
    }

    fn instance(max_k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1..=max_k).prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..10.0, k),
                prop::collection::vec(0.0f64..=1.0, k),
                prop::collection::vec(0.01f64..1.0, k),
            )
        })
    }

    fn profile(mut raw: Vec<f64>) -> Option<VisibilityProfile> {
        raw.sort_by(|a, b| b.total_cmp(a));
        VisibilityProfile::new(raw).ok()
    }

    proptest! {
        #[test]
        fn optimal_matches_enumeration((prices, ctrs, raw) in instance(5)) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &ctrs).unwrap();
            let k = arms.len();
            let best = optimal_ranking(&arms, &vis).unwrap();
            let best_reward = expected_reward(&best, &arms, &vis).unwrap();
            let brute = all_perms(k)
                .into_iter()
                .map(|p| expected_reward(&Ranking::new(p, k).unwrap(), &arms, &vis).unwrap())
                .fold(f64::MIN, f64::max);
            prop_assert!((best_reward - brute).abs() <= 1e-12 * brute.abs().max(1.0));
        }

        #[test]
        fn gap_decomposes((prices, ctrs, raw) in instance(4)) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &ctrs).unwrap();
            let k = arms.len();
            let best = optimal_ranking(&arms, &vis).unwrap();
            let opt = expected_reward(&best, &arms, &vis).unwrap();
            prop_assert_eq!(action_gap(&best, &arms, &vis).unwrap(), 0.0);
            for p in all_perms(k) {
                let r = Ranking::new(p, k).unwrap();
                let gap = action_gap(&r, &arms, &vis).unwrap();
                prop_assert!(gap >= 0.0);
                let direct = opt - expected_reward(&r, &arms, &vis).unwrap();
                prop_assert!((gap - direct.max(0.0)).abs() <= 1e-15);
            }
        }

        #[test]
        fn c_gamma_matches_loop(raw in prop::collection::vec(0.01f64..1.0, 1..12)) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let g = vis.gammas();
            let total: f64 = g.iter().sum();
            let mut brute = f64::INFINITY;
            for l in 1..=g.len() {
                let prefix: f64 = g[..l].iter().sum();
                brute = brute.min(total.powi(2) / l as f64 + prefix.powi(2));
            }
            let c = c_gamma(&vis);
            prop_assert!((c - brute).abs() <= 1e-12 * brute);
            prop_assert!(c <= total.powi(2) + g[0].powi(2) + 1e-12);
        }

        #[test]
        fn bound_monotone_in_horizon(
            (prices, ctrs, raw) in instance(5),
            t1 in 1u64..100_000,
            extra in 0u64..100_000,
        ) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &ctrs).unwrap();
            let Ok(consts) = BoundConstants::from_instance(&arms, &vis) else { return Ok(()) };
            let lo = consts.evaluate(t1 as f64, 1.5).unwrap();
            let hi = consts.evaluate((t1 + extra) as f64, 1.5).unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn price_scaling_keeps_optimum((prices, ctrs, raw) in instance(8), c in 0.01f64..100.0) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &ctrs).unwrap();
            let scaled: Vec<f64> = prices.iter().map(|p| p * c).collect();
            let scaled_arms = arms_from(&scaled, &ctrs).unwrap();
            let a = optimal_ranking(&arms, &vis).unwrap();
            let b = optimal_ranking(&scaled_arms, &vis).unwrap();
            prop_assert_eq!(a.slots(), b.slots());
        }

        #[test]
        fn adjacent_swap_min_never_below_enumerated((prices, ctrs, raw) in instance(6)) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &ctrs).unwrap();
            let Ok(exact) = BoundConstants::from_instance(&arms, &vis) else { return Ok(()) };
            let best = optimal_ranking(&arms, &vis).unwrap();
            let mut slots = best.slots().to_vec();
            for l in 0..slots.len().saturating_sub(1) {
                slots.swap(l, l + 1);
                let gap = action_gap(&Ranking::new(slots.clone(), arms.len()).unwrap(), &arms, &vis).unwrap();
                slots.swap(l, l + 1);
                if gap > ZERO_GAP_REL_TOL * expected_reward(&best, &arms, &vis).unwrap() {
                    prop_assert!(gap >= exact.delta_min * (1.0 - 1e-12));
                }
            }
        }
    }
}
