//! Guarded exploration: the production ranking keeps the top slots and the
//! bandit only reorders the tail.
//!
//! The number of protected slots `m` is the shortest prefix of positions
//! whose share of total visibility reaches `beta`. Those slots go to the arms
//! with the highest `price * ctr_alpha`, where an arm may use its bandit
//! estimate instead of the production CTR only once its confidence width is
//! at most `alpha`, and only if the estimate is higher. The remaining arms
//! fill the tail by their optimistic bandit score `price * (ctr_hat + bonus)`.
//!
//! With 30 slots of a typical visibility profile, `beta = 0.4` protects the
//! top 8 slots (about 42% of visibility) and `beta = 0.3` the top 5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pbm::{argsort_desc, Arm, Ranking, VisibilityProfile};
use crate::policy::BanditState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailGuardConfig {
    /// Share of total visibility reserved for the protected top slots.
    pub beta: f64,
    /// Largest confidence width at which a bandit estimate may enter the top slots.
    pub alpha: f64,
}

impl TailGuardConfig {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::param("beta", format!("must lie in (0, 1], got {beta}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
        }
        Ok(Self { beta, alpha })
    }
}

/// Per-arm CTR evidence from the production model and the bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardedScores {
    pub baseline_ctr: Vec<f64>,
    pub bandit_ctr: Vec<f64>,
    pub bonus: Vec<f64>,
}

impl GuardedScores {
    pub fn new(baseline_ctr: Vec<f64>, bandit_ctr: Vec<f64>, bonus: Vec<f64>) -> Result<Self> {
        let k = baseline_ctr.len();
        for (what, len) in [("bandit_ctr", bandit_ctr.len()), ("bonus", bonus.len())] {
            if len != k {
                return Err(Error::LengthMismatch {
                    what,
                    expected: k,
                    got: len,
                });
            }
        }
        if baseline_ctr.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::param("baseline_ctr", "entries must lie in [0, 1]"));
        }
        if bandit_ctr.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::param("bandit_ctr", "entries must be nonnegative"));
        }
        if bonus.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::param("bonus", "entries must be nonnegative"));
        }
        Ok(Self {
            baseline_ctr,
            bandit_ctr,
            bonus,
        })
    }

    /// Bandit estimates and exploration bonuses read from `state`.
    pub fn from_state(state: &BanditState, baseline_ctr: Vec<f64>, delta: f64) -> Result<Self> {
        let k = state.k();
        let bandit_ctr = (0..k).map(|i| state.theta_hat(i)).collect::<Result<_>>()?;
        let bonus = (0..k).map(|i| state.bonus(i, delta)).collect::<Result<_>>()?;
        Self::new(baseline_ctr, bandit_ctr, bonus)
    }

    pub fn len(&self) -> usize {
        self.baseline_ctr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline_ctr.is_empty()
    }
}

/// Smallest `m` with `sum(gamma[..m]) / sum(gamma) >= beta`.
pub fn top_slot_count(vis: &VisibilityProfile, beta: f64) -> usize {
    let gammas = vis.gammas();
    let total: f64 = gammas.iter().sum();
    let mut prefix = 0.0;
    for (l, &g) in gammas.iter().enumerate() {
        prefix += g;
        if prefix / total >= beta {
            return l + 1;
        }
    }
    gammas.len()
}

pub fn guarded_ctr(scores: &GuardedScores, k: usize, alpha: f64) -> f64 {
    let baseline = scores.baseline_ctr[k];
    if scores.bonus[k] <= alpha {
        baseline.max(scores.bandit_ctr[k])
    } else {
        baseline
    }
}

/// Top `m` slots by `price * guarded_ctr`, the tail by `price * (ctr_hat + bonus)`.
pub fn guarded_rank(
    arms: &[Arm],
    vis: &VisibilityProfile,
    scores: &GuardedScores,
    config: &TailGuardConfig,
) -> Result<Ranking> {
    let k = arms.len();
    if k != vis.len() {
        return Err(Error::LengthMismatch {
            what: "arms",
            expected: vis.len(),
            got: k,
        });
    }
    if scores.len() != k {
        return Err(Error::LengthMismatch {
            what: "scores",
            expected: k,
            got: scores.len(),
        });
    }
    let m = top_slot_count(vis, config.beta);

    let guarded: Vec<f64> = (0..k)
        .map(|i| arms[i].price * guarded_ctr(scores, i, config.alpha))
        .collect();
    let mut slots = argsort_desc(&guarded, |i| arms[i].id);
    let tail = slots.split_off(m);

    let optimistic: Vec<f64> = tail
        .iter()
        .map(|&i| arms[i].price * (scores.bandit_ctr[i] + scores.bonus[i]))
        .collect();
    slots.extend(argsort_desc(&optimistic, |j| arms[tail[j]].id).into_iter().map(|j| tail[j]));
    Ranking::new(slots, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbm::arms_from;
    use proptest::prelude::*;

    fn halving() -> VisibilityProfile {
        VisibilityProfile::new(vec![0.5, 0.25, 0.125, 0.0625, 0.03125]).unwrap()
    }

    #[test]
    fn slot_counts() {
        // shares 0.516, 0.774, 0.903, ...
        let vis = halving();
        assert_eq!(top_slot_count(&vis, 0.5), 1);
        assert_eq!(top_slot_count(&vis, 0.7), 2);
        assert_eq!(top_slot_count(&vis, 1.0), 5);

        let bundled = VisibilityProfile::harmonic(30).unwrap();
        assert_eq!(top_slot_count(&bundled, 0.2), 3);
        assert_eq!(top_slot_count(&bundled, 0.3), 5);
        assert_eq!(top_slot_count(&bundled, 0.4), 8);
        assert_eq!(top_slot_count(&bundled, 0.8), 20);
    }

    #[test]
    fn slot_count_exact_half() {
        // Total visibility is exactly 1, so the first share is exactly 0.5.
        let vis = VisibilityProfile::new(vec![0.5, 0.25, 0.125, 0.0625, 0.0625 - 1e-6, 1e-6]).unwrap();
        assert_eq!(top_slot_count(&vis, 0.5), 1);
        assert_eq!(top_slot_count(&vis, 0.75), 2);
        assert_eq!(top_slot_count(&vis, 0.7500001), 3);
    }

    #[test]
    fn guarded_ctr_branches() {
        let s = GuardedScores::new(vec![0.3, 0.3, 0.4], vec![0.5, 0.9, 0.4], vec![0.01, 0.10, 0.7]).unwrap();
        assert_eq!(guarded_ctr(&s, 0, 0.05), 0.5);
        assert_eq!(guarded_ctr(&s, 1, 0.05), 0.3);
        assert_eq!(guarded_ctr(&s, 2, 0.05), 0.4);
        assert_eq!(guarded_ctr(&s, 2, 1.0), 0.4);
    }

    #[test]
    fn worked_example() {
        let arms = arms_from(&[1.0; 3], &[0.1; 3]).unwrap();
        let vis = VisibilityProfile::new(vec![0.9, 0.2, 0.1]).unwrap();
        assert_eq!(top_slot_count(&vis, 0.5), 1);
        let scores =
            GuardedScores::new(vec![0.5, 0.4, 0.3], vec![0.2, 0.9, 0.8], vec![0.2, 0.01, 0.01]).unwrap();
        let cfg = TailGuardConfig::new(0.5, 0.05).unwrap();
        assert_eq!(guarded_rank(&arms, &vis, &scores, &cfg).unwrap().slots(), &[1, 2, 0]);
    }

    #[test]
    fn full_protection_is_guarded_ecpi_ranking() {
        let arms = arms_from(&[1.0, 2.0, 1.5, 0.5], &[0.1; 4]).unwrap();
        let vis = VisibilityProfile::harmonic(4).unwrap();
        let scores = GuardedScores::new(
            vec![0.2, 0.1, 0.3, 0.8],
            vec![0.9, 0.0, 0.1, 0.0],
            vec![0.01, 0.01, 0.5, 0.01],
        )
        .unwrap();
        let cfg = TailGuardConfig::new(1.0, 0.05).unwrap();
        // guarded eCPI: 0.9, 0.2, 0.45, 0.4
        assert_eq!(guarded_rank(&arms, &vis, &scores, &cfg).unwrap().slots(), &[0, 2, 3, 1]);
    }

    #[test]
    fn tiny_alpha_keeps_baseline_top() {
        let arms = arms_from(&[1.0, 3.0, 2.0, 1.0, 1.0], &[0.1; 5]).unwrap();
        let vis = halving();
        let scores = GuardedScores::new(
            vec![0.1, 0.05, 0.3, 0.2, 0.4],
            vec![0.9, 0.9, 0.9, 0.9, 0.9],
            vec![0.3, 0.2, 0.1, 0.4, 0.5],
        )
        .unwrap();
        let cfg = TailGuardConfig::new(0.7, 1e-9).unwrap();
        let r = guarded_rank(&arms, &vis, &scores, &cfg).unwrap();
        // baseline eCPI: 0.1, 0.15, 0.6, 0.2, 0.4
        assert_eq!(&r.slots()[..2], &[2, 4]);
    }

    #[test]
    fn config_validation() {
        assert!(TailGuardConfig::new(0.0, 0.1).is_err());
        assert!(TailGuardConfig::new(1.1, 0.1).is_err());
        assert!(TailGuardConfig::new(0.5, 0.0).is_err());
        assert!(GuardedScores::new(vec![0.1], vec![0.1, 0.2], vec![0.0]).is_err());
        assert!(GuardedScores::new(vec![0.1], vec![0.1], vec![-1.0]).is_err());
    }

    fn guard_case() -> impl Strategy<Value = (Vec<f64>, Vec<(f64, f64, f64)>, Vec<f64>, f64, f64)> {
        (1usize..15).prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..10.0, k),
                prop::collection::vec((0.0f64..=1.0, 0.0f64..2.0, 0.0f64..1.0), k),
                prop::collection::vec(0.01f64..1.0, k),
                0.01f64..=1.0,
                0.001f64..0.5,
            )
        })
    }

    fn profile(mut raw: Vec<f64>) -> Option<VisibilityProfile> {
        raw.sort_by(|a, b| b.total_cmp(a));
        VisibilityProfile::new(raw).ok()
    }

    proptest! {
        #[test]
        fn output_is_permutation((prices, sc, raw, beta, alpha) in guard_case()) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &vec![0.1; prices.len()]).unwrap();
            let scores = GuardedScores::new(
                sc.iter().map(|s| s.0).collect(),
                sc.iter().map(|s| s.1).collect(),
                sc.iter().map(|s| s.2).collect(),
            ).unwrap();
            let cfg = TailGuardConfig::new(beta, alpha).unwrap();
            let r = guarded_rank(&arms, &vis, &scores, &cfg).unwrap();
            prop_assert!(Ranking::new(r.into_slots(), prices.len()).is_ok());
        }

        #[test]
        fn wide_intervals_preserve_baseline_top((prices, sc, raw, beta, alpha) in guard_case()) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &vec![0.1; prices.len()]).unwrap();
            let scores = GuardedScores::new(
                sc.iter().map(|s| s.0).collect(),
                sc.iter().map(|s| s.1).collect(),
                sc.iter().map(|s| alpha + 0.01 + s.2).collect(),
            ).unwrap();
            let cfg = TailGuardConfig::new(beta, alpha).unwrap();
            let m = top_slot_count(&vis, beta);
            let r = guarded_rank(&arms, &vis, &scores, &cfg).unwrap();
            let baseline: Vec<f64> = (0..prices.len()).map(|i| prices[i] * sc[i].0).collect();
            let mut expected: Vec<usize> = (0..prices.len()).collect();
            expected.sort_by(|&a, &b| baseline[b].partial_cmp(&baseline[a]).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(&r.slots()[..m], &expected[..m]);
        }

        #[test]
        fn slot_count_monotone_in_beta(raw in prop::collection::vec(0.01f64..1.0, 1..30), b1 in 0.001f64..=1.0, b2 in 0.001f64..=1.0) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let (m_lo, m_hi) = (top_slot_count(&vis, lo), top_slot_count(&vis, hi));
            prop_assert!(m_lo <= m_hi);
            prop_assert!(m_lo >= 1 && m_hi <= vis.len());
        }

        #[test]
        fn guarded_ctr_dominates(base in 0.0f64..=1.0, hat in 0.0f64..2.0, bonus in 0.0f64..1.0, alpha in 0.001f64..1.0) {
            let s = GuardedScores::new(vec![base], vec![hat], vec![bonus]).unwrap();
            let g = guarded_ctr(&s, 0, alpha);
            if bonus <= alpha {
                prop_assert!(g >= base);
            } else {
                prop_assert_eq!(g, base);
            }
        }

        #[test]
        fn price_scaling_keeps_guarded_rank((prices, sc, raw, beta, alpha) in guard_case(), c in prop::sample::select(vec![0.25, 0.5, 2.0, 8.0])) {
            let Some(vis) = profile(raw) else { return Ok(()) };
            let arms = arms_from(&prices, &vec![0.1; prices.len()]).unwrap();
            let scaled: Vec<f64> = prices.iter().map(|p| p * c).collect();
            let scaled_arms = arms_from(&scaled, &vec![0.1; prices.len()]).unwrap();
            let scores = GuardedScores::new(
                sc.iter().map(|s| s.0).collect(),
                sc.iter().map(|s| s.1).collect(),
                sc.iter().map(|s| s.2).collect(),
            ).unwrap();
            let cfg = TailGuardConfig::new(beta, alpha).unwrap();
            prop_assert_eq!(
                guarded_rank(&arms, &vis, &scores, &cfg).unwrap(),
                guarded_rank(&scaled_arms, &vis, &scores, &cfg).unwrap()
            );
        }
    }
}
