//! Core of a solver for fixed-horizon multi-agent chance-constrained
//! stochastic shortest path problems in which agents only interact at a
//! small number of interaction points.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the outside world (solver libraries, files, clocks, the command line) lives
//! in the companion `mccssp` crate; here we keep the algorithmic pieces:
//!
//! - [`model`]: agents, interaction points, instances and their validation.
//! - [`layers`]: time-layered reachable interaction state spaces.
//! - [`risk`]: execution-risk recursion, policy evaluation and occupancy flows.
//! - [`ilp`]: the integer program over occupancy flows and policy extraction,
//!   written against the [`ilp::MilpBackend`] trait.
//! - [`oracle`]: exhaustive deterministic-policy search, a dynamic-programming
//!   check for risk-free problems, and the first-come-first-serve baseline.
//! - [`pft`]: probabilistic flow tubes, DTW alignment, clustering, intent
//!   recognition and Monte Carlo collision risk tables.
//! - [`grid`]: the multi-agent grid benchmark.
//! - [`intersection`]: the risk-aware intersection domain and its
//!   receding-horizon simulator.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod grid;
pub mod ilp;
pub mod intersection;
pub mod layers;
pub mod model;
pub mod oracle;
pub mod pft;
pub mod random;
pub mod risk;

mod seed;

pub use ilp::{build_ilp, solve, IlpModel, MilpBackend, SolveOptions, SolveResult, SolveStatus};
pub use layers::{reachable_layers, LayeredSpace};
pub use model::{
    interaction_product, validate_instance, AgentModel, InteractionPoint, MccSspInstance,
    RiskCoupling, RiskModel, StateId, TabularMdp,
};
pub use risk::{execution_risk, expected_utility, Policy};
