//! Benchmark tables: every policy rolled out on the same episodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::billing::compute_bill;
use crate::error::{Error, Result};
use crate::heuristics::{HeuristicKind, HeuristicPolicy};
use crate::oracle::{LpOptions, OraclePolicy};
use crate::rl::RlPolicy;
use crate::sim::{rollout, AssignmentPolicy, Policy, RolloutOptions};
use crate::types::{Action, BillBreakdown, ChargerSpec, Episode, ObjectiveWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyId {
    Heuristic(HeuristicKind),
    Rl,
    Oracle,
}

impl PolicyId {
    pub fn id(&self) -> &'static str {
        match self {
            PolicyId::Heuristic(k) => k.id(),
            PolicyId::Rl => "rl",
            PolicyId::Oracle => "oracle",
        }
    }

    pub fn all_baselines() -> Vec<PolicyId> {
        let mut v: Vec<PolicyId> = HeuristicKind::ALL.into_iter().map(PolicyId::Heuristic).collect();
        v.push(PolicyId::Oracle);
        v
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(PolicyId::Rl),
            "oracle" | "milp" | "lp" => Ok(PolicyId::Oracle),
            other => other.parse().map(PolicyId::Heuristic),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub assignment: AssignmentPolicy,
    pub weights: ObjectiveWeights,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { assignment: AssignmentPolicy::default(), weights: ObjectiveWeights::default() }
    }
}

/// Bill of one policy on one episode.
pub fn run_policy(
    episode: &Episode,
    chargers: &[ChargerSpec],
    policy: PolicyId,
    rl: Option<&RlPolicy>,
    options: &EvalOptions,
) -> Result<BillBreakdown> {
    let mut boxed: Box<dyn Policy> = match policy {
        PolicyId::Heuristic(k) => Box::new(HeuristicPolicy::new(k)),
        PolicyId::Rl => Box::new(rl.ok_or_else(|| Error::Config("policy rl needs a checkpoint".into()))?.clone()),
        PolicyId::Oracle => Box::new(OraclePolicy::planned(
            LpOptions { weights: options.weights, ..Default::default() },
            options.assignment,
        )),
    };
    let opts = RolloutOptions { assignment: options.assignment, weights: options.weights, record_trajectory: false };
    Ok(rollout(episode, chargers, boxed.as_mut(), &opts)?.bill)
}

/// Demand charge with the chargers idle.
pub fn building_only_demand(episode: &Episode, n_chargers: usize) -> Result<f64> {
    let idle = vec![Action::zeros(n_chargers); episode.n_slots];
    let socs: Vec<f64> = episode.sessions.iter().map(|s| s.soc_init).collect();
    Ok(compute_bill(episode, &idle, &socs)?.demand_charge_usd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub bill_mean: f64,
    pub bill_std: f64,
    pub shave_mean: f64,
    pub shave_std: f64,
    /// Mean missing energy per episode, kWh.
    pub missing_soc: f64,
    pub objective_mean: f64,
    pub demand_mean: f64,
    pub energy_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Aggregate per-episode bills; `baseline_demand[e]` is episode `e`'s building-only demand charge.
pub fn summarize(policy: &str, bills: &[BillBreakdown], baseline_demand: &[f64], weights: &ObjectiveWeights) -> EvalRow {
    let totals: Vec<f64> = bills.iter().map(|b| b.total_usd).collect();
    let shaves: Vec<f64> = bills.iter().zip(baseline_demand).map(|(b, d)| d - b.demand_charge_usd).collect();
    let (bill_mean, bill_std) = mean_std(&totals);
    let (shave_mean, shave_std) = mean_std(&shaves);
    let avg = |f: &dyn Fn(&BillBreakdown) -> f64| mean_std(&bills.iter().map(f).collect::<Vec<_>>()).0;
    EvalRow {
        policy: policy.to_string(),
        bill_mean,
        bill_std,
        shave_mean,
        shave_std,
        missing_soc: avg(&|b| b.missing_soc_kwh),
        objective_mean: avg(&|b| b.weighted_objective(weights)),
        demand_mean: avg(&|b| b.demand_charge_usd),
        energy_mean: avg(&|b| b.energy_cost_usd),
    }
}

/// One row per policy, sorted by policy id.
pub fn evaluate(
    episodes: &[Episode],
    chargers: &[ChargerSpec],
    policies: &[PolicyId],
    rl: Option<&RlPolicy>,
    options: &EvalOptions,
) -> Result<Vec<EvalRow>> {
    let baseline: Vec<f64> = episodes.iter().map(|e| building_only_demand(e, chargers.len())).collect::<Result<_>>()?;
    let mut ids = policies.to_vec();
    ids.sort_by_key(|p| p.id());
    ids.dedup();
    ids.iter()
        .map(|&p| {
            let bills: Vec<BillBreakdown> =
                episodes.iter().map(|e| run_policy(e, chargers, p, rl, options)).collect::<Result<_>>()?;
            Ok(summarize(p.id(), &bills, &baseline, &options.weights))
        })
        .collect()
}

pub const CSV_HEADER: &str = "policy,bill_mean,bill_std,shave_mean,shave_std,missing_soc";

pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.policy, r.bill_mean, r.bill_std, r.shave_mean, r.shave_std, r.missing_soc
        ));
    }
    out
}
