//! Vehicle-to-building charging laboratory.
//!
//! A building with a fleet of unidirectional and bidirectional chargers is
//! billed under a time-of-use energy tariff plus a demand charge. The crate
//! provides the simulator, six rule-based charging policies, an LP oracle
//! solved by an in-crate simplex, a masked DDPG learner, and a synthetic
//! scenario generator.

pub mod billing;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod heuristics;
pub mod io;
pub mod lp;
pub mod mask;
pub mod oracle;
pub mod rl;
pub mod sim;
pub mod tariff;
pub mod types;

pub use billing::{bill_schedule, check_feasibility, compute_bill, soc_step, Binding, Schedule, Violation, FEAS_TOL};
pub use error::{Error, Result};
pub use heuristics::{HeuristicKind, HeuristicPolicy};
pub use oracle::{build_lp, guidance_action, solve_episode, solve_lp, LpOptions, LpProblem, LpSolution, OraclePolicy};
pub use sim::{rollout, AssignmentPolicy, ChargerPriority, NormConstants, Policy, Rollout, RolloutOptions, Simulator, TieBreak};
pub use tariff::Tariff;
pub use types::{standard_fleet, Action, BillBreakdown, ChargerSpec, Episode, EvSession, ObjectiveWeights, MAX_CHARGERS};
