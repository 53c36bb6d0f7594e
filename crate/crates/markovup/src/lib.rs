//! Simulation and verification toolkit for integer-valued processes that
//! are Markov while rising and memory-dependent while falling.
//!
//! The effective memory of such a process is its current descent run; the
//! toolkit represents that run explicitly ([`process::MemoryState`]), so
//! every expressible transition law has the one-sided Markov structure by
//! construction. On top of the process layer sit:
//!
//! - [`audit`] — quantitative assumption data for a law: per-depth bounds
//!   on the probability a fall continues, their certified infinite product,
//!   the uniform exponential moment of upward jumps, and the mixing level
//!   at the floor.
//! - [`bounds`] — certified constants bounding exponential moments of rise
//!   durations, fall durations and rise heights, composed into the
//!   multiplicative constant `C1` of the recurrence bound
//!   `E exp(alpha * hit_time) <= exp(alpha * x0) * C1`, plus a search for
//!   the largest feasible exponent.
//! - [`verify`] — Monte Carlo estimators for each bounded quantity, an
//!   exact solver on the finite extended chain of a ceiling-bounded law,
//!   and a dominance report lining estimates up against the bounds.
//! - [`config`] / [`pipeline`] — JSON campaign configs and the CLI
//!   subcommands built on them.

pub mod audit;
pub mod bounds;
pub mod config;
pub mod pipeline;
pub mod process;
pub mod verify;

pub use audit::{AuditOptions, DownProbBounds, LawProfile, UpJumpMoment};
pub use bounds::{max_feasible_alpha, recurrence_bound, BoundReport};
pub use config::CampaignConfig;
pub use process::{
    simulate, FadingWalk, FadingWalkParams, MemoryState, State, TransitionLaw, Trajectory,
};
pub use verify::{dominance_report, Estimate, ExtendedChain, McBudget};
