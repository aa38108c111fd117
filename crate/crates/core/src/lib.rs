//! Distributed speculative decoding with top-K sparse logits transmission.
//!
//! A small drafter on the device proposes `gamma` tokens, ships each token
//! with the top-K truncation of its distribution over a wireless uplink, and
//! a large verifier at the edge accepts or corrects them. The crate provides
//! the protocol itself ([`specdec`]), the wire format and latency model
//! ([`transport`]), the closed-form draft-length planner ([`planner`], built
//! on [`lambert`]) and a seeded Monte Carlo harness over synthetic model
//! pairs ([`simkit`]).
//!
//! The numeric modules are generic over [`Real`]; the aliases below fix them
//! to `f64`, which is what the protocol layer uses.

pub mod dist;
pub mod error;
pub mod lambert;
pub mod num;
pub mod planner;
pub mod simkit;
pub mod specdec;
pub mod transport;

pub use dist::{
    analytic_alpha, densify, residual, sample, sample_with_uniform, softmax_temp, top_k_sparsify, tv_distance,
    Categorical, TokenId,
};
pub use error::{Error, Result};
pub use lambert::{lambert_w, lambert_wm1_neg_exp, WBranch};
pub use num::Real;
pub use planner::{as2, brute_force_gamma, expected_tokens, gamma_zero, odld, speedup, sweep_table, Mode};

pub type Distribution = dist::Distribution<f64>;
pub type SparseTopK = dist::SparseTopK<f64>;
pub type LogitVector = dist::LogitVector<f64>;
pub type Plan = planner::Plan<f64>;
pub type PlannerInput = planner::PlannerInput<f64>;
pub type SweepTable = planner::SweepTable<f64>;
