//! UCB bandits for ranking ads in position-based pay-per-click auctions.
//!
//! - [`pbm`]: arms, visibility profiles, rankings, expected reward and regret bound.
//! - [`policy`]: bandit statistics, UCB and greedy ranking, updates, warm start.
//! - [`environment`]: click simulation, synthetic instances, auction logs and replay.
//! - [`tail_guard`]: keeps the top slots on a production model while bandits explore the tail.
//! - [`harness`]: multi-run experiments, aggregation, error metrics, bound checks.
//! - [`config`] and [`cli`]: configuration layering and artifact-writing entry points.

// `!(x >= 0.0)` guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod environment;
pub mod error;
pub mod harness;
pub mod pbm;
pub mod policy;
pub mod tail_guard;

pub use error::{Error, Result};
pub use pbm::{Arm, Ranking, VisibilityProfile};
pub use policy::{BanditState, PolicyConfig, PolicyMode};
