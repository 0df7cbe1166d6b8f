//! SoC dynamics, feasibility checks and bill computation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::types::{Action, BillBreakdown, ChargerSpec, Episode};

/// Absolute slack (kW, or SoC fraction) tolerated by feasibility checks.
pub const FEAS_TOL: f64 = 1e-6;

/// Linear charging profile: `soc + power·δ / capacity`, unclipped.
pub fn soc_step(soc: f64, power_kw: f64, delta_h: f64, capacity_kwh: f64) -> Result<f64> {
    ensure_finite("soc", soc)?;
    ensure_finite("power_kw", power_kw)?;
    ensure_finite("delta_h", delta_h)?;
    ensure_finite("capacity_kwh", capacity_kwh)?;
    if capacity_kwh <= 0.0 || delta_h <= 0.0 {
        return Err(Error::InvalidInput("capacity and slot length must be positive".into()));
    }
    Ok(soc + power_kw * delta_h / capacity_kwh)
}

/// Where and from when a session was plugged in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub charger: usize,
    pub connect_slot: usize,
}

/// A full power schedule together with the charger bindings it was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub actions: Vec<Action>,
    /// One entry per episode session; `None` if it never got a charger.
    pub bindings: Vec<Option<Binding>>,
}

impl Schedule {
    /// SoC of every session after each slot of its stay, starting with the
    /// connection SoC. Unbound sessions yield just `[soc_init]`.
    pub fn soc_paths(&self, episode: &Episode) -> Vec<Vec<f64>> {
        let delta = episode.tariff.delta;
        episode
            .sessions
            .iter()
            .zip(&self.bindings)
            .map(|(s, b)| {
                let mut path = vec![s.soc_init];
                if let Some(b) = b {
                    let mut soc = s.soc_init;
                    for j in b.connect_slot..s.departure_slot.min(self.actions.len()) {
                        let p = self.actions[j].power_kw.get(b.charger).copied().unwrap_or(0.0);
                        soc += p * delta / s.capacity_kwh;
                        path.push(soc);
                    }
                }
                path
            })
            .collect()
    }

    pub fn final_socs(&self, episode: &Episode) -> Vec<f64> {
        self.soc_paths(episode).into_iter().map(|p| *p.last().expect("path has its start")).collect()
    }
}

/// Bill a schedule against the episode tariff.
pub fn compute_bill(episode: &Episode, schedule: &[Action], final_socs: &[f64]) -> Result<BillBreakdown> {
    if schedule.len() != episode.n_slots {
        return Err(Error::InvalidInput(format!(
            "schedule has {} slots, episode has {}",
            schedule.len(),
            episode.n_slots
        )));
    }
    if final_socs.len() != episode.sessions.len() {
        return Err(Error::InvalidInput(format!(
            "{} final SoCs for {} sessions",
            final_socs.len(),
            episode.sessions.len()
        )));
    }
    let tariff = &episode.tariff;
    let mut energy = 0.0;
    let mut peak = 0.0_f64;
    let mut negative = Vec::new();
    for (j, action) in schedule.iter().enumerate() {
        let net = action.total() + episode.building_load[j];
        if !net.is_finite() {
            return Err(Error::Numeric(format!("non-finite draw at slot {j}")));
        }
        if net < -FEAS_TOL {
            negative.push(j);
        }
        energy += net * tariff.energy_rate(j) * tariff.delta;
        if tariff.demand_eligible(j) {
            peak = peak.max(net);
        }
    }
    if !negative.is_empty() {
        return Err(Error::NegativeDraw { slots: negative });
    }
    let demand = tariff.demand_rate() * peak;
    let missing = episode
        .sessions
        .iter()
        .zip(final_socs)
        .map(|(s, &soc)| (s.soc_req - soc).max(0.0) * s.capacity_kwh)
        .sum();
    Ok(BillBreakdown {
        energy_cost_usd: energy,
        demand_charge_usd: demand,
        peak_power_kw: peak,
        missing_soc_kwh: missing,
        total_usd: energy + demand,
    })
}

/// Bill a [`Schedule`], deriving final SoCs from its bindings.
pub fn bill_schedule(episode: &Episode, schedule: &Schedule) -> Result<BillBreakdown> {
    compute_bill(episode, &schedule.actions, &schedule.final_socs(episode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Shape { detail: String },
    ChargerBounds { slot: usize, charger: usize, power_kw: f64 },
    SocBelowMin { slot: usize, session: u32, soc: f64 },
    SocAboveMax { slot: usize, session: u32, soc: f64 },
    NegativeDraw { slot: usize, net_kw: f64 },
}

/// Every breach of charger bounds, SoC bounds and the no-export rule.
pub fn check_feasibility(chargers: &[ChargerSpec], episode: &Episode, schedule: &Schedule) -> Vec<Violation> {
    let mut out = Vec::new();
    if schedule.actions.len() != episode.n_slots || schedule.bindings.len() != episode.sessions.len() {
        out.push(Violation::Shape {
            detail: format!(
                "{} actions / {} bindings for {} slots / {} sessions",
                schedule.actions.len(),
                schedule.bindings.len(),
                episode.n_slots,
                episode.sessions.len()
            ),
        });
        return out;
    }
    for (j, action) in schedule.actions.iter().enumerate() {
        if action.len() != chargers.len() {
            out.push(Violation::Shape { detail: format!("slot {j} action has {} entries", action.len()) });
            continue;
        }
        for (i, (&p, c)) in action.power_kw.iter().zip(chargers).enumerate() {
            if !(p >= c.p_min - FEAS_TOL && p <= c.p_max + FEAS_TOL) {
                out.push(Violation::ChargerBounds { slot: j, charger: i, power_kw: p });
            }
        }
        let net = action.total() + episode.building_load[j];
        if !(net >= -FEAS_TOL) {
            out.push(Violation::NegativeDraw { slot: j, net_kw: net });
        }
    }
    for ((s, b), path) in episode.sessions.iter().zip(&schedule.bindings).zip(schedule.soc_paths(episode)) {
        let start = b.map_or(s.arrival_slot, |b| b.connect_slot);
        for (k, &soc) in path.iter().enumerate().skip(1) {
            let slot = start + k;
            if soc < s.soc_min - FEAS_TOL {
                out.push(Violation::SocBelowMin { slot, session: s.id, soc });
            }
            if soc > s.soc_max + FEAS_TOL {
                out.push(Violation::SocAboveMax { slot, session: s.id, soc });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tariff::Tariff;
    use crate::types::{ChargerSpec, EvSession};

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

    const NOON: usize = 48;

    #[test]
    fn soc_step_examples() {
        assert!((soc_step(0.5, 20.0, 0.25, 40.0).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(soc_step(0.3, 0.0, 0.25, 62.0).unwrap(), 0.3);
        assert!((soc_step(0.625, -20.0, 0.25, 40.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(soc_step(f64::NAN, 1.0, 0.25, 40.0).is_err());
        assert!(soc_step(0.5, 1.0, 0.25, 0.0).is_err());
    }

    #[test]
    fn single_peak_slot_energy_cost() {
        let mut load = vec![0.0; 96];
        load[NOON] = 100.0;
        let ep = episode(load, vec![]);
        let bill = compute_bill(&ep, &vec![Action::zeros(1); 96], &[]).unwrap();
        assert!((bill.energy_cost_usd - 3.665).abs() < 1e-12);
    }

    #[test]
    fn demand_charge_with_slot_factor() {
        let mut load = vec![0.0; 96];
        load[NOON] = 125.0;
        let ep = episode(load, vec![]);
        let bill = compute_bill(&ep, &vec![Action::zeros(1); 96], &[]).unwrap();
        assert!((bill.demand_charge_usd - 300.625).abs() < 1e-9);
        assert_eq!(bill.peak_power_kw, 125.0);
        assert!((bill.total_usd - bill.energy_cost_usd - bill.demand_charge_usd).abs() < 1e-12);
    }

    #[test]
    fn demand_window_and_factor_switches() {
        let mut load = vec![0.0; 96];
        load[2] = 200.0; // 00:30, off-peak
        load[NOON] = 50.0;
        let mut ep = episode(load, vec![]);
        let sched = vec![Action::zeros(1); 96];
        assert_eq!(compute_bill(&ep, &sched, &[]).unwrap().peak_power_kw, 50.0);
        ep.tariff.demand_peak_hours_only = false;
        ep.tariff.demand_includes_delta = false;
        let bill = compute_bill(&ep, &sched, &[]).unwrap();
        assert_eq!(bill.peak_power_kw, 200.0);
        assert!((bill.demand_charge_usd - 200.0 * 9.62).abs() < 1e-9);
    }

    #[test]
    fn idle_world_bills_only_missing_energy() {
        let sessions = vec![EvSession::new(0, 40, 50, 0.2, 0.7, 40.0), EvSession::new(1, 41, 60, 0.1, 0.3, 62.0)];
        let ep = episode(vec![0.0; 96], sessions);
        let bill = compute_bill(&ep, &vec![Action::zeros(2); 96], &[0.2, 0.1]).unwrap();
        assert_eq!(bill.total_usd, 0.0);
        let expected: f64 = 0.7 * 40.0 + 0.3 * 62.0;
        assert!((bill.missing_soc_kwh - (expected - 0.2 * 40.0 - 0.1 * 62.0)).abs() < 1e-9);
    }

    #[test]
    fn bill_rejects_bad_shapes_and_export() {
        let ep = episode(vec![20.0; 96], vec![]);
        assert!(compute_bill(&ep, &vec![Action::zeros(1); 95], &[]).is_err());
        let mut sched = vec![Action::zeros(2); 96];
        sched[10] = vec![-20.0, -10.0].into();
        match compute_bill(&ep, &sched, &[]) {
            Err(Error::NegativeDraw { slots }) => assert_eq!(slots, vec![10]),
            other => panic!("expected negative draw error, got {other:?}"),
        }
    }

    #[test]
    fn feasibility_examples() {
        let chargers = vec![ChargerSpec::bidirectional(0, 20.0), ChargerSpec::bidirectional(1, 20.0)];
        let sessions = vec![EvSession::new(0, 0, 4, 0.5, 0.6, 40.0)];
        let ep = episode(vec![20.0; 4], sessions);
        let mut ep = ep;
        ep.day_of_week = vec![0];
        let ok = Schedule {
            actions: vec![vec![10.0, 0.0].into(); 4],
            bindings: vec![Some(Binding { charger: 0, connect_slot: 0 })],
        };
        assert!(check_feasibility(&chargers, &ep, &ok).is_empty());

        let mut over = ok.clone();
        over.actions[1].power_kw[0] = 25.0;
        let v = check_feasibility(&chargers, &ep, &over);
        assert_eq!(v.iter().filter(|v| matches!(v, Violation::ChargerBounds { .. })).count(), 1);

        let mut export = ok.clone();
        export.actions[2] = vec![-15.0, -15.0].into();
        let v = check_feasibility(&chargers, &ep, &export);
        assert_eq!(v, vec![Violation::NegativeDraw { slot: 2, net_kw: -10.0 }]);

        let mut overfill = ok;
        overfill.actions = vec![vec![20.0, 0.0].into(); 4];
        let v = check_feasibility(&chargers, &ep, &overfill);
        assert!(v.iter().any(|v| matches!(v, Violation::SocAboveMax { session: 0, .. })));
    }
}
