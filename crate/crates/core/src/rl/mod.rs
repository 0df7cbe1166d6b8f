//! Reinforcement-learning side: reward shaping, action normalisation, the
//! off-peak greedy rule, and the masked DDPG learner.

pub mod ddpg;
pub mod mlp;
pub mod replay;

use crate::sim::StepContext;
use crate::types::{Action, ChargerSpec, ObjectiveWeights};

pub use ddpg::{train, Checkpoint, DdpgConfig, RlPolicy, TrainLogRow, TrainOutcome};
pub use mlp::{Activation, Adam, Mlp};
pub use replay::{ReplayBuffer, Transition};

/// Reward components `(r1, r2, r3)`: delivered useful energy, negative energy
/// cost of the charger power, negative demand penalty over the running peak.
pub fn reward_terms(ctx: &StepContext<'_>, action: &Action) -> (f64, f64, f64) {
    let s = ctx.state;
    let tariff = &ctx.episode.tariff;
    let d = tariff.delta;
    let r1 = s
        .energy_need_kwh
        .iter()
        .zip(&action.power_kw)
        .map(|(&need, &p)| need.min(p * d).max(0.0))
        .sum();
    let total = action.total();
    let r2 = -total * d * tariff.energy_rate(s.slot);
    let r3 = -(s.building_kw + total - s.estimated_peak_kw).max(0.0) * tariff.theta_d;
    (r1, r2, r3)
}

pub fn reward(ctx: &StepContext<'_>, action: &Action, w: &ObjectiveWeights) -> f64 {
    let (r1, r2, r3) = reward_terms(ctx, action);
    w.lambda_s * r1 + w.lambda_e * r2 + w.lambda_d * r3
}

/// Off-peak / weekend rule: charge toward the requirement at the fastest
/// rate that does not overshoot it; bidirectional chargers bleed surplus.
pub fn greedy_offpeak(ctx: &StepContext<'_>) -> Action {
    let d = ctx.delta();
    let power = ctx
        .chargers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if ctx.state.occupancy[i].is_none() {
                return 0.0;
            }
            let rate = ctx.state.energy_need_kwh[i] / d;
            if rate > 0.0 {
                rate.min(c.p_max)
            } else if c.is_bidirectional() {
                rate.max(c.p_min)
            } else {
                0.0
            }
        })
        .collect();
    Action { power_kw: power }
}

/// Affine map from `[p_min, p_max]` to `[-1, 1]`, per charger.
pub fn normalize_action(power_kw: &[f64], chargers: &[ChargerSpec]) -> Vec<f64> {
    power_kw
        .iter()
        .zip(chargers)
        .map(|(&p, c)| 2.0 * (p - c.p_min) / (c.p_max - c.p_min) - 1.0)
        .collect()
}

pub fn denormalize_action(unit: &[f64], chargers: &[ChargerSpec]) -> Vec<f64> {
    unit.iter()
        .zip(chargers)
        .map(|(&u, c)| c.p_min + (u + 1.0) * (c.p_max - c.p_min) / 2.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{AssignmentPolicy, Simulator};
    use crate::tariff::Tariff;
    use crate::types::{Episode, EvSession};

    fn one_ev(load: f64, soc: f64, req: f64) -> Episode {
        Episode {
            n_slots: 96,
            building_load: vec![load; 96],
            sessions: vec![EvSession::new(0, 0, 40, soc, req, 40.0)],
            day_of_week: vec![0],
            tariff: Tariff::default(),
            estimated_peak_kw: 0.0,
            history_peaks: vec![],
        }
    }

    #[test]
    fn reward_example_offpeak_charge() {
        // need 5 kWh = (0.625 - 0.5) * 40
        let ep = one_ev(0.0, 0.5, 0.625);
        let chargers = vec![ChargerSpec::bidirectional(0, 20.0)];
        let mut sim = Simulator::new(&ep, &chargers, AssignmentPolicy::default()).unwrap();
        sim.state.estimated_peak_kw = 100.0;
        let (r1, r2, r3) = reward_terms(&sim.context(), &vec![20.0].into());
        assert!((r1 - 5.0).abs() < 1e-12);
        assert!((r2 + 0.56355).abs() < 1e-12);
        assert_eq!(r3, 0.0);
    }

    #[test]
    fn reward_peak_breach() {
        let ep = one_ev(120.0, 0.3, 0.8);
        let chargers = vec![ChargerSpec::bidirectional(0, 20.0)];
        let mut sim = Simulator::new(&ep, &chargers, AssignmentPolicy::default()).unwrap();
        sim.state.estimated_peak_kw = 130.0;
        let (_, _, r3) = reward_terms(&sim.context(), &vec![20.0].into());
        assert!((r3 + 96.2).abs() < 1e-12);
        sim.state.estimated_peak_kw = 200.0;
        let r = reward(&sim.context(), &Action::zeros(1), &ObjectiveWeights::default());
        assert_eq!(r, 0.0);
    }

    #[test]
    fn greedy_rule() {
        // need 3 kWh
        let ep = one_ev(0.0, 0.5, 0.575);
        let chargers = vec![ChargerSpec::bidirectional(0, 20.0)];
        let sim = Simulator::new(&ep, &chargers, AssignmentPolicy::default()).unwrap();
        assert!((greedy_offpeak(&sim.context()).power_kw[0] - 12.0).abs() < 1e-9);

        let ep = one_ev(0.0, 0.8, 0.5);
        let uni = vec![ChargerSpec::unidirectional(0, 20.0)];
        let sim = Simulator::new(&ep, &uni, AssignmentPolicy::default()).unwrap();
        assert_eq!(greedy_offpeak(&sim.context()).power_kw[0], 0.0);
        let sim = Simulator::new(&ep, &chargers, AssignmentPolicy::default()).unwrap();
        assert_eq!(greedy_offpeak(&sim.context()).power_kw[0], -20.0);
    }

    #[test]
    fn action_normalisation_round_trip() {
        let chargers = vec![ChargerSpec::bidirectional(0, 20.0), ChargerSpec::unidirectional(1, 20.0)];
        assert_eq!(normalize_action(&[10.0, 20.0], &chargers), vec![0.5, 1.0]);
        assert_eq!(normalize_action(&[0.0, 10.0], &chargers), vec![0.0, 0.0]);
        let p = [-13.7, 4.2];
        let back = denormalize_action(&normalize_action(&p, &chargers), &chargers);
        assert!(back.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
