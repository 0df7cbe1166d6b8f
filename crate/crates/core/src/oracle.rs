//! Full-information oracle: with the charger assignment fixed by the FIFO
//! simulator pass, the remaining scheduling problem is a linear program.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::sim::{AssignmentPolicy, OccupancyTimeline, Policy, SimState, Simulator, StepContext};
use crate::types::{Action, ChargerSpec, Episode, ObjectiveWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub weights: ObjectiveWeights,
    /// Peak already committed before the horizon starts, kW.
    pub peak_floor_kw: f64,
    /// Drop rows that no schedule within the charger bounds can violate.
    pub prune_redundant_rows: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { weights: ObjectiveWeights::default(), peak_floor_kw: 0.0, prune_redundant_rows: true }
    }
}

/// A scheduling LP together with the map back to charger powers.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub lp: LinearProgram,
    /// Constant part of the objective (building energy, unserved sessions).
    pub objective_offset: f64,
    pub start_slot: usize,
    pub n_chargers: usize,
    pub n_slots: usize,
    /// `(slot offset, charger)` of every power column.
    pub power_vars: Vec<(usize, usize)>,
    pub peak_var: usize,
    /// `(session index, column)` of every missing-energy column.
    pub missing_vars: Vec<(usize, usize)>,
    /// Energy already known to be missing for sessions that never connect, kWh.
    pub unserved_missing_kwh: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// One action per slot from the problem's start slot.
    pub schedule: Vec<Action>,
    pub objective_value: f64,
    pub peak_kw: f64,
    /// `(session index, missing kWh)` for sessions departing within the horizon.
    pub missing_soc_kwh: Vec<(usize, f64)>,
    pub iterations: usize,
}

impl LpProblem {
    pub fn n_rows(&self) -> usize {
        self.lp.rows.len()
    }

    pub fn to_lp_format(&self) -> String {
        self.lp.to_lp_format(self.objective_offset)
    }
}

/// Build the LP from `timeline.start_slot` to the episode end. `soc` holds
/// the SoC of every session at the start slot.
pub fn build_lp(
    episode: &Episode,
    chargers: &[ChargerSpec],
    timeline: &OccupancyTimeline,
    soc: &[f64],
    options: &LpOptions,
) -> Result<LpProblem> {
    options.weights.validate()?;
    if soc.len() != episode.sessions.len() {
        return Err(Error::InvalidInput(format!("{} SoCs for {} sessions", soc.len(), episode.sessions.len())));
    }
    let w = options.weights;
    let tariff = &episode.tariff;
    let d = tariff.delta;
    let start = timeline.start_slot;
    let n_slots = timeline.cells.len();
    let mut lp = LinearProgram::default();
    let mut offset = 0.0;

    // one power column per occupied (slot, charger)
    let mut power_vars = Vec::new();
    let mut column_at = vec![vec![None; chargers.len()]; n_slots];
    let mut session_cols: Vec<Vec<usize>> = vec![Vec::new(); episode.sessions.len()];
    for (k, cells) in timeline.cells.iter().enumerate() {
        let slot = start + k;
        for (i, cell) in cells.iter().enumerate() {
            if let Some(s) = *cell {
                let c = &chargers[i];
                let col = lp.add_var(format!("p_{slot}_{i}"), w.lambda_e * tariff.energy_rate(slot) * d, c.p_min, c.p_max);
                power_vars.push((k, i));
                column_at[k][i] = Some(col);
                session_cols[s].push(col);
            }
        }
        offset += w.lambda_e * tariff.energy_rate(slot) * d * episode.building_load[slot];
    }

    // peak column
    let mut peak_lb = options.peak_floor_kw.max(0.0);
    let mut peak_ub = peak_lb;
    for k in 0..n_slots {
        let slot = start + k;
        if !tariff.demand_eligible(slot) {
            continue;
        }
        let b = episode.building_load[slot];
        let reach: f64 = (0..chargers.len()).filter(|&i| column_at[k][i].is_some()).map(|i| chargers[i].p_max).sum();
        if reach == 0.0 || (options.prune_redundant_rows && column_at[k].iter().all(Option::is_none)) {
            peak_lb = peak_lb.max(b);
        }
        peak_ub = peak_ub.max(b + reach);
    }
    let peak_var = lp.add_var("peak", w.lambda_d * tariff.demand_rate(), peak_lb, peak_ub.max(peak_lb));

    let mut missing_vars = Vec::new();
    let mut unserved_missing_kwh = Vec::new();
    for (s, sess) in episode.sessions.iter().enumerate() {
        if sess.departure_slot <= start {
            continue;
        }
        let need = (sess.soc_req - soc[s]) * sess.capacity_kwh;
        let cols = &session_cols[s];
        if cols.is_empty() {
            if sess.arrival_slot < start + n_slots.max(1) || n_slots == 0 {
                unserved_missing_kwh.push((s, need.max(0.0)));
                offset += w.lambda_s * need.max(0.0);
            }
            continue;
        }
        let cap = sess.capacity_kwh;
        // SoC band on every prefix of the stay
        let mut max_up = 0.0;
        let mut max_down = 0.0;
        for (n, _) in cols.iter().enumerate() {
            let prefix: Vec<(usize, f64)> = cols[..=n].iter().map(|&c| (c, 1.0)).collect();
            let c = &lp.upper[cols[n]];
            max_up += c;
            max_down += lp.lower[cols[n]];
            let lo = (sess.soc_min - soc[s]) * cap / d;
            let hi = (sess.soc_max - soc[s]) * cap / d;
            if options.prune_redundant_rows && max_down >= lo && max_up <= hi {
                continue;
            }
            lp.add_row(format!("soc_{}_{}", sess.id, n), prefix, lo, hi);
        }
        let upper = ((sess.soc_req - sess.soc_min) * cap).max(0.0);
        let m = lp.add_var(format!("miss_{}", sess.id), w.lambda_s, 0.0, upper);
        let mut coefs = vec![(m, 1.0)];
        coefs.extend(cols.iter().map(|&c| (c, d)));
        lp.add_row(format!("req_{}", sess.id), coefs, need, f64::INFINITY);
        missing_vars.push((s, m));
    }

    for (k, cols) in column_at.iter().enumerate() {
        let slot = start + k;
        let active: Vec<usize> = cols.iter().flatten().copied().collect();
        if active.is_empty() {
            continue;
        }
        let b = episode.building_load[slot];
        if tariff.demand_eligible(slot) {
            let reach: f64 = active.iter().map(|&c| lp.upper[c]).sum();
            if !(options.prune_redundant_rows && b + reach <= peak_lb) {
                let mut coefs = vec![(peak_var, 1.0)];
                coefs.extend(active.iter().map(|&c| (c, -1.0)));
                lp.add_row(format!("peak_{slot}"), coefs, b, f64::INFINITY);
            }
        }
        let floor: f64 = active.iter().map(|&c| lp.lower[c]).sum();
        if !(options.prune_redundant_rows && floor >= -b) {
            lp.add_row(format!("draw_{slot}"), active.iter().map(|&c| (c, 1.0)).collect(), -b, f64::INFINITY);
        }
    }

    Ok(LpProblem {
        lp,
        objective_offset: offset,
        start_slot: start,
        n_chargers: chargers.len(),
        n_slots,
        power_vars,
        peak_var,
        missing_vars,
        unserved_missing_kwh,
    })
}

/// Build the whole-episode LP under the FIFO assignment `assignment`.
pub fn build_episode_lp(
    episode: &Episode,
    chargers: &[ChargerSpec],
    assignment: AssignmentPolicy,
    options: &LpOptions,
) -> Result<LpProblem> {
    let sim = Simulator::new(episode, chargers, assignment)?;
    let timeline = sim.occupancy_timeline()?;
    build_lp(episode, chargers, &timeline, &sim.state.soc, options)
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let res = lp::solve(&problem.lp)?;
    let mut schedule = vec![Action::zeros(problem.n_chargers); problem.n_slots];
    if res.status == LpStatus::Optimal {
        for (col, &(k, i)) in problem.power_vars.iter().enumerate() {
            schedule[k].power_kw[i] = res.x[col];
        }
    }
    let mut missing: Vec<(usize, f64)> = problem.missing_vars.iter().map(|&(s, c)| (s, res.x[c])).collect();
    missing.extend(problem.unserved_missing_kwh.iter().copied());
    missing.sort_by_key(|m| m.0);
    Ok(LpSolution {
        status: res.status,
        schedule,
        objective_value: res.objective + problem.objective_offset,
        peak_kw: res.x[problem.peak_var],
        missing_soc_kwh: missing,
        iterations: res.iterations,
    })
}

fn require_optimal(sol: LpSolution) -> Result<LpSolution> {
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        other => Err(Error::Solver(format!("oracle LP ended {other:?}"))),
    }
}

/// Solve the full-episode LP and require optimality.
pub fn solve_episode(
    episode: &Episode,
    chargers: &[ChargerSpec],
    assignment: AssignmentPolicy,
    options: &LpOptions,
) -> Result<LpSolution> {
    require_optimal(solve_lp(&build_episode_lp(episode, chargers, assignment, options)?)?)
}

/// Peak over demand-eligible slots already realised before `state.slot`.
pub fn realized_peak(episode: &Episode, actions: &[Action]) -> f64 {
    actions
        .iter()
        .enumerate()
        .filter(|(j, _)| episode.tariff.demand_eligible(*j))
        .map(|(j, a)| episode.building_load[j] + a.total())
        .fold(0.0, f64::max)
}

/// First action of the LP re-solved from the simulator's current state.
pub fn guidance_action(sim: &Simulator<'_>, options: &LpOptions) -> Result<Action> {
    let timeline = sim.occupancy_timeline()?;
    let problem = build_lp(sim.episode, sim.chargers, &timeline, &sim.state.soc, options)?;
    let sol = require_optimal(solve_lp(&problem)?)?;
    Ok(sol.schedule.into_iter().next().unwrap_or_else(|| Action::zeros(sim.chargers.len())))
}

/// Replays a precomputed full-episode LP schedule, or re-solves every slot.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub options: LpOptions,
    pub assignment: AssignmentPolicy,
    plan: Option<Vec<Action>>,
    history: Vec<Action>,
    resolve_each_slot: bool,
}

impl OraclePolicy {
    /// Solve once at the first slot and replay the plan.
    pub fn planned(options: LpOptions, assignment: AssignmentPolicy) -> Self {
        Self { options, assignment, plan: None, history: Vec::new(), resolve_each_slot: false }
    }

    /// Re-solve from the current state at every slot.
    pub fn receding(options: LpOptions, assignment: AssignmentPolicy) -> Self {
        Self { options, assignment, plan: None, history: Vec::new(), resolve_each_slot: true }
    }

    fn simulator_at<'a>(&self, ctx: &StepContext<'a>) -> Simulator<'a> {
        let state: SimState = ctx.state.clone();
        Simulator { episode: ctx.episode, chargers: ctx.chargers, assignment: self.assignment, state }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Action> {
        let slot = ctx.state.slot;
        if slot == 0 {
            self.history.clear();
            self.plan = None;
        }
        let action = if self.resolve_each_slot {
            let mut options = self.options;
            options.peak_floor_kw = options.peak_floor_kw.max(realized_peak(ctx.episode, &self.history));
            guidance_action(&self.simulator_at(ctx), &options)?
        } else {
            if self.plan.is_none() {
                let sim = self.simulator_at(ctx);
                let timeline = sim.occupancy_timeline()?;
                let problem = build_lp(ctx.episode, ctx.chargers, &timeline, &ctx.state.soc, &self.options)?;
                self.plan = Some(require_optimal(solve_lp(&problem)?)?.schedule);
            }
            let plan = self.plan.as_ref().expect("plan was just built");
            plan.get(self.history.len()).cloned().unwrap_or_else(|| Action::zeros(ctx.chargers.len()))
        };
        self.history.push(action.clone());
        Ok(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billing::bill_schedule;
    use crate::billing::Schedule;
    use crate::tariff::Tariff;
    use crate::types::EvSession;

    fn episode(load: Vec<f64>, sessions: Vec<EvSession>) -> Episode {
        Episode {
            n_slots: load.len(),
            building_load: load,
            sessions,
            day_of_week: vec![0],
            tariff: Tariff::default(),
            estimated_peak_kw: 0.0,
            history_peaks: vec![],
        }
    }

    fn peak_hours(mut ep: Episode) -> Episode {
        ep.tariff.peak_window = (0.0, 24.0);
        ep
    }

    #[test]
    fn row_count_by_construction() {
        let ep = peak_hours(episode(vec![10.0; 4], vec![EvSession::new(0, 0, 4, 0.5, 0.6, 40.0)]));
        let ch = vec![ChargerSpec::bidirectional(0, 20.0)];
        let opts = LpOptions { prune_redundant_rows: false, ..Default::default() };
        let p = build_episode_lp(&ep, &ch, AssignmentPolicy::default(), &opts).unwrap();
        assert_eq!(p.lp.n_vars(), 4 + 1 + 1);
        let count = |prefix: &str| p.lp.rows.iter().filter(|r| r.name.starts_with(prefix)).count();
        assert_eq!((count("soc_"), count("peak_"), count("draw_"), count("req_")), (4, 4, 4, 1));
    }

    #[test]
    fn empty_episode_is_building_bill() {
        let mut load = vec![20.0; 96];
        load[50] = 70.0;
        let ep = episode(load, vec![]);
        let ch = vec![ChargerSpec::bidirectional(0, 20.0)];
        let sol = solve_episode(&ep, &ch, AssignmentPolicy::default(), &LpOptions::default()).unwrap();
        assert_eq!(sol.peak_kw, 70.0);
        let bill = crate::billing::compute_bill(&ep, &sol.schedule, &[]).unwrap();
        assert!((sol.objective_value - bill.weighted_objective(&ObjectiveWeights::default())).abs() < 1e-9);
        assert!(sol.schedule.iter().all(|a| a.power_kw.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn offpeak_need_is_bought_at_offpeak_rate() {
        // three off-peak slots, 10 kWh needed, nothing at peak
        let ep = episode(vec![5.0; 96], vec![EvSession::new(0, 0, 3, 0.5, 0.75, 40.0)]);
        let ch = vec![ChargerSpec::unidirectional(0, 20.0)];
        let sol = solve_episode(&ep, &ch, AssignmentPolicy::default(), &LpOptions::default()).unwrap();
        let delivered: f64 = sol.schedule.iter().map(|a| a.total() * 0.25).sum();
        assert!((delivered - 10.0).abs() < 1e-9);
        let building: f64 = (0..96).map(|j| 5.0 * ep.tariff.energy_rate(j) * 0.25).sum::<f64>();
        let expected = building + 10.0 * 0.11271 + 3.0 * 9.62 * 0.25 * 5.0;
        assert!((sol.objective_value - expected).abs() < 1e-9, "{} vs {expected}", sol.objective_value);
    }

    #[test]
    fn lp_schedule_bills_to_its_objective() {
        let mut load: Vec<f64> = (0..96).map(|j| 30.0 + 20.0 * ((j as f64) / 96.0 * 6.28).sin().abs()).collect();
        load[40] = 90.0;
        let sessions = vec![EvSession::new(0, 30, 70, 0.2, 0.8, 62.0), EvSession::new(1, 35, 60, 0.7, 0.5, 40.0)];
        let ep = episode(load, sessions);
        let ch = vec![ChargerSpec::bidirectional(0, 20.0), ChargerSpec::unidirectional(1, 20.0)];
        let sol = solve_episode(&ep, &ch, AssignmentPolicy::default(), &LpOptions::default()).unwrap();
        let sim = Simulator::new(&ep, &ch, AssignmentPolicy::default()).unwrap();
        let mut probe = sim.clone();
        while !probe.is_done() {
            probe.step(&Action::zeros(2)).unwrap();
        }
        let schedule = Schedule { actions: sol.schedule.clone(), bindings: probe.state.bindings.clone() };
        assert!(crate::billing::check_feasibility(&ch, &ep, &schedule).is_empty());
        let bill = bill_schedule(&ep, &schedule).unwrap();
        let w = ObjectiveWeights::default();
        assert!((bill.weighted_objective(&w) - sol.objective_value).abs() < 1e-6 * sol.objective_value.abs());
    }

    #[test]
    fn last_slot_guidance_matches_forced_charge() {
        let ep = episode(vec![10.0; 4], vec![EvSession::new(0, 0, 4, 0.5, 0.6, 40.0)]);
        let ch = vec![ChargerSpec::unidirectional(0, 20.0)];
        let mut sim = Simulator::new(&ep, &ch, AssignmentPolicy::default()).unwrap();
        for _ in 0..3 {
            sim.step(&Action::zeros(1)).unwrap();
        }
        // 4 kWh missing with one slot left -> 16 kW
        let a = guidance_action(&sim, &LpOptions::default()).unwrap();
        assert!((a.power_kw[0] - 16.0).abs() < 1e-9);
    }
}
