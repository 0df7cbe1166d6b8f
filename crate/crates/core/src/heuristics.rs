//! Baseline charging rules: fast charge, trickle, and the gap-filling
//! least-laxity / earliest-deadline variants.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{force_departure, MaskInputs};
use crate::sim::{Policy, StepContext};
use crate::types::Action;

/// Slack in hours: time left minus the time a full-rate charge would need.
pub fn laxity(ctx: &StepContext<'_>, i: usize) -> Option<f64> {
    ctx.state.occupancy[i]?;
    let c = &ctx.chargers[i];
    Some(ctx.state.remaining_slots[i] as f64 * ctx.delta() - ctx.state.energy_need_kwh[i] / c.p_max)
}

/// Constant power that delivers the remaining need by departure, clipped to the charger.
pub fn trickle_rate(ctx: &StepContext<'_>, i: usize) -> f64 {
    if ctx.state.occupancy[i].is_none() || ctx.state.remaining_slots[i] == 0 {
        return 0.0;
    }
    let rate = ctx.state.energy_need_kwh[i] / (ctx.state.remaining_slots[i] as f64 * ctx.delta());
    rate.clamp(0.0, ctx.chargers[i].p_max)
}

fn occupied(ctx: &StepContext<'_>) -> Vec<usize> {
    (0..ctx.chargers.len()).filter(|&i| ctx.state.occupancy[i].is_some()).collect()
}

fn power_gap(ctx: &StepContext<'_>) -> f64 {
    ctx.state.estimated_peak_kw - ctx.state.building_kw
}

fn departure(ctx: &StepContext<'_>, i: usize) -> usize {
    ctx.state.remaining_slots[i]
}

fn by_laxity(ctx: &StepContext<'_>) -> Vec<usize> {
    let mut order = occupied(ctx);
    order.sort_by(|&a, &b| {
        laxity(ctx, a).partial_cmp(&laxity(ctx, b)).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order
}

fn by_reverse_laxity(ctx: &StepContext<'_>) -> Vec<usize> {
    let mut order = occupied(ctx);
    order.sort_by(|&a, &b| {
        laxity(ctx, b).partial_cmp(&laxity(ctx, a)).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order
}

fn by_deadline(ctx: &StepContext<'_>) -> Vec<usize> {
    let mut order = occupied(ctx);
    order.sort_by_key(|&i| (departure(ctx, i), i));
    order
}

fn by_reverse_deadline(ctx: &StepContext<'_>) -> Vec<usize> {
    let mut order = occupied(ctx);
    order.sort_by(|&a, &b| departure(ctx, b).cmp(&departure(ctx, a)).then(a.cmp(&b)));
    order
}

pub fn fast_charge(ctx: &StepContext<'_>) -> Action {
    let power = (0..ctx.chargers.len())
        .map(|i| match (ctx.session(i), ctx.state.soc_on(i)) {
            (Some(s), Some(soc)) if soc < s.soc_max => ctx.chargers[i].p_max,
            _ => 0.0,
        })
        .collect();
    Action { power_kw: power }
}

pub fn trickle(ctx: &StepContext<'_>) -> Action {
    Action { power_kw: (0..ctx.chargers.len()).map(|i| trickle_rate(ctx, i)).collect() }
}

fn fill_gap(ctx: &StepContext<'_>, order: &[usize]) -> Action {
    let mut out = Action::zeros(ctx.chargers.len());
    let mut gap = power_gap(ctx);
    if gap <= 0.0 {
        return out;
    }
    for &i in order {
        if gap <= 0.0 {
            break;
        }
        let p = trickle_rate(ctx, i).min(gap);
        out.power_kw[i] = p;
        gap -= p;
    }
    out
}

pub fn trickle_llf(ctx: &StepContext<'_>) -> Action {
    fill_gap(ctx, &by_laxity(ctx))
}

pub fn trickle_edf(ctx: &StepContext<'_>) -> Action {
    fill_gap(ctx, &by_deadline(ctx))
}

/// Charge-first rule. `order` ranks vehicles for overcharging, discharging
/// and the final capped trickle loop.
fn charge_first(ctx: &StepContext<'_>, order: &[usize]) -> Action {
    let n = ctx.chargers.len();
    let d = ctx.delta();
    let rates: Vec<f64> = (0..n).map(|i| trickle_rate(ctx, i)).collect();
    let total: f64 = rates.iter().sum();
    let mut gap = power_gap(ctx);
    let mut out = Action::zeros(n);
    if total < gap {
        out.power_kw.copy_from_slice(&rates);
        gap -= total;
        for &i in order {
            if gap <= 0.0 {
                break;
            }
            let c = &ctx.chargers[i];
            if !c.is_bidirectional() {
                continue;
            }
            let (Some(s), Some(soc)) = (ctx.session(i), ctx.state.soc_on(i)) else { continue };
            let room = (s.soc_max - soc) * s.capacity_kwh / d;
            let extra = (c.p_max - rates[i]).min(room - rates[i]).min(gap).max(0.0);
            out.power_kw[i] += extra;
            gap -= extra;
        }
        return out;
    }
    let mut discharging = vec![false; n];
    for &i in order {
        if gap >= total {
            break;
        }
        let c = &ctx.chargers[i];
        let (Some(s), Some(soc)) = (ctx.session(i), ctx.state.soc_on(i)) else { continue };
        if !c.is_bidirectional() || soc <= s.soc_req {
            continue;
        }
        let p = ((s.soc_req - soc) * s.capacity_kwh / d).max(c.p_min);
        out.power_kw[i] = p;
        discharging[i] = true;
        gap -= p;
    }
    for &i in order {
        if discharging[i] {
            continue;
        }
        let p = rates[i].min(gap).max(0.0);
        out.power_kw[i] = p;
        gap -= p;
    }
    out
}

pub fn charge_first_llf(ctx: &StepContext<'_>) -> Action {
    charge_first(ctx, &by_reverse_laxity(ctx))
}

pub fn charge_first_edf(ctx: &StepContext<'_>) -> Action {
    charge_first(ctx, &by_reverse_deadline(ctx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeuristicKind {
    FastCharge,
    Trickle,
    TrickleLlf,
    TrickleEdf,
    ChargeFirstLlf,
    ChargeFirstEdf,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 6] = [
        HeuristicKind::FastCharge,
        HeuristicKind::Trickle,
        HeuristicKind::TrickleLlf,
        HeuristicKind::TrickleEdf,
        HeuristicKind::ChargeFirstLlf,
        HeuristicKind::ChargeFirstEdf,
    ];

    pub fn id(self) -> &'static str {
        match self {
            HeuristicKind::FastCharge => "fc",
            HeuristicKind::Trickle => "trickle",
            HeuristicKind::TrickleLlf => "t-llf",
            HeuristicKind::TrickleEdf => "t-edf",
            HeuristicKind::ChargeFirstLlf => "cf-llf",
            HeuristicKind::ChargeFirstEdf => "cf-edf",
        }
    }

    /// Raw rule output, before departure forcing.
    pub fn raw_action(self, ctx: &StepContext<'_>) -> Action {
        match self {
            HeuristicKind::FastCharge => fast_charge(ctx),
            HeuristicKind::Trickle => trickle(ctx),
            HeuristicKind::TrickleLlf => trickle_llf(ctx),
            HeuristicKind::TrickleEdf => trickle_edf(ctx),
            HeuristicKind::ChargeFirstLlf => charge_first_llf(ctx),
            HeuristicKind::ChargeFirstEdf => charge_first_edf(ctx),
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown heuristic '{s}'")))
    }
}

/// A heuristic with forced charging (and, except for fast charge, forced
/// discharging) toward the requirement at departure.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicPolicy {
    pub kind: HeuristicKind,
}

impl HeuristicPolicy {
    pub fn new(kind: HeuristicKind) -> Self {
        Self { kind }
    }
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> String {
        self.kind.id().to_string()
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Action> {
        let raw = self.kind.raw_action(ctx);
        let inputs = MaskInputs::from_context(ctx);
        let forced = force_departure(&inputs, &raw.power_kw, self.kind != HeuristicKind::FastCharge);
        Ok(Action { power_kw: forced })
    }
}
