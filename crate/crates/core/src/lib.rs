//! Reliability of a renewable generator bundled with a finite battery.
//!
//! Net generation (generation minus demand) is driven by a finite
//! continuous-time Markov chain, and the battery level is a fluid queue
//! regulated at `0` and `bmax`. The crate computes the loss-of-load
//! probability (LOLP) and lost-load rate exactly, the exponential decay rate
//! of LOLP in the battery size by two independent routes, Monte Carlo
//! estimates of the same quantities, Markov models fitted from power traces,
//! and battery sizes for reliability targets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod error;
pub mod fit;
pub mod fluid;
pub mod io;
pub mod ldp;
pub mod linalg;
pub mod random;
pub mod sim;
pub mod sizing;

pub use ctmc::{drift, invariant_distribution, reverse_model, uniformize, NetGenModel, RateMatrix, UniformizedChain};
pub use error::{Error, ErrorCategory, Result};
pub use fit::{
    build_model, estimate_transition_matrix, fit_pipeline, quantize, to_rate_matrix, BinningSpec, FitOptions,
    FittedModel, TransitionCounts,
};
pub use fluid::{
    cdf, lolp_lower_bound, reliability, reliability_at, solve_stationary, two_state_lolp, LolpLowerBound,
    ReliabilityReport, SpectralSolution,
};
pub use io::{ModelDocument, Trace, Units};
pub use ldp::{cgf, decay_rate_eig, decay_rate_ld, decay_report, CgfEvaluator, DecayRateReport};
pub use sim::{
    battery_replay, simulate_ctmc, simulate_ctmc_stats, simulate_dtmc, simulate_dtmc_replay, trace_replay, RateSegment,
    SimOptions, SimulationStats, Trajectory,
};
pub use sizing::{incremental_size, size_estimate, size_exact, size_report, SizingResult};
