//! Six-step piecewise-linear action mask and the post-processing repair
//! applied to every executed action.
//!
//! The mask is built only from scaling, min/max and ReLU so it stays
//! differentiable almost everywhere; [`mask_with_jacobian`] returns the exact
//! Jacobian of the composed map for backpropagation through the actor.

use crate::billing::FEAS_TOL;
use crate::error::{Error, Result};
use crate::sim::StepContext;
use crate::types::{Action, ChargerSpec};

pub const MASK_EPSILON: f64 = 1e-5;

/// Per-charger quantities the mask reads from the state.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskInputs {
    pub energy_need_kwh: Vec<f64>,
    pub remaining_slots: Vec<f64>,
    pub c_max: Vec<f64>,
    pub c_min: Vec<f64>,
    pub building_kw: f64,
    pub estimated_peak_kw: f64,
    pub delta_h: f64,
    /// `true` for chargers in the bidirectional index set.
    pub bidirectional: Vec<bool>,
    pub epsilon: f64,
}

impl MaskInputs {
    pub fn from_context(ctx: &StepContext<'_>) -> Self {
        let s = ctx.state;
        Self {
            energy_need_kwh: s.energy_need_kwh.clone(),
            remaining_slots: s.remaining_slots.iter().map(|&r| r as f64).collect(),
            c_max: ctx.chargers.iter().map(|c| c.p_max).collect(),
            c_min: ctx.chargers.iter().map(|c| c.p_min).collect(),
            building_kw: s.building_kw,
            estimated_peak_kw: s.estimated_peak_kw,
            delta_h: ctx.delta(),
            bidirectional: ctx.chargers.iter().map(ChargerSpec::is_bidirectional).collect(),
            epsilon: MASK_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.c_max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_max.is_empty()
    }

    pub fn uni_idx(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.bidirectional[i]).collect()
    }

    pub fn bi_idx(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.bidirectional[i]).collect()
    }

    fn connected(&self, i: usize) -> bool {
        self.remaining_slots[i] > 0.0
    }

    fn validate(&self, action_len: usize) -> Result<()> {
        let n = self.len();
        let lens = [
            self.energy_need_kwh.len(),
            self.remaining_slots.len(),
            self.c_min.len(),
            self.bidirectional.len(),
            action_len,
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidInput(format!("mask shape mismatch: {lens:?} vs {n} chargers")));
        }
        if !(self.epsilon > 0.0 && self.delta_h > 0.0) {
            return Err(Error::InvalidInput("mask epsilon and slot length must be positive".into()));
        }
        Ok(())
    }

    /// Forced-charge floor: the power needed now so that charging at full
    /// rate afterwards still meets the requirement. Zero on idle chargers.
    fn charge_floor(&self, i: usize) -> f64 {
        if !self.connected(i) {
            return 0.0;
        }
        let d = self.delta_h;
        ((self.energy_need_kwh[i] - (self.remaining_slots[i] - 1.0) * self.c_max[i] * d) / d).min(self.c_max[i])
    }

    /// Forced-discharge ceiling for bidirectional chargers. Zero on idle chargers.
    fn discharge_ceiling(&self, i: usize) -> f64 {
        if !self.connected(i) {
            return 0.0;
        }
        let d = self.delta_h;
        ((self.energy_need_kwh[i] - (self.remaining_slots[i] - 1.0) * self.c_min[i] * d) / d).max(self.c_min[i])
    }
}

/// Output of the mask with its Jacobian (row-major, `n × n`, d out / d raw).
#[derive(Debug, Clone)]
pub struct MaskTrace {
    pub output: Vec<f64>,
    pub jacobian: Vec<f64>,
    /// Smallest distance from any active min/max/ReLU switch point; the
    /// Jacobian is locally constant within this margin.
    pub kink_margin: f64,
}

impl MaskTrace {
    /// `Jᵀ · upstream`: gradient with respect to the raw action.
    pub fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        let n = self.output.len();
        let mut g = vec![0.0; n];
        for (r, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let row = &self.jacobian[r * n..(r + 1) * n];
            for (gk, &j) in g.iter_mut().zip(row) {
                *gk += u * j;
            }
        }
        g
    }
}

struct Tracker {
    n: usize,
    a: Vec<f64>,
    jac: Vec<f64>,
    margin: f64,
}

impl Tracker {
    fn note(&mut self, lhs: f64, rhs: f64) {
        self.margin = self.margin.min((lhs - rhs).abs());
    }

    /// Elementwise step with local derivative `diag(d)`.
    fn scale_rows(&mut self, d: &[f64]) {
        let n = self.n;
        for (r, &dr) in d.iter().enumerate() {
            if dr != 1.0 {
                self.jac[r * n..(r + 1) * n].iter_mut().for_each(|x| *x *= dr);
            }
        }
    }

    /// Left-multiply the running Jacobian by a dense local Jacobian.
    fn compose(&mut self, local: &[f64]) {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let l = local[r * n + k];
                if l == 0.0 {
                    continue;
                }
                let src = &self.jac[k * n..(k + 1) * n];
                for (o, &s) in out[r * n..(r + 1) * n].iter_mut().zip(src) {
                    *o += l * s;
                }
            }
        }
        self.jac = out;
    }
}

/// Apply masks M1 through M6 and return the Jacobian alongside.
pub fn mask_with_jacobian(inputs: &MaskInputs, raw: &[f64]) -> Result<MaskTrace> {
    inputs.validate(raw.len())?;
    let n = inputs.len();
    let eps = inputs.epsilon;
    let d = inputs.delta_h;
    let mut identity = vec![0.0; n * n];
    for i in 0..n {
        identity[i * n + i] = 1.0;
    }
    let mut t = Tracker { n, a: raw.to_vec(), jac: identity, margin: f64::INFINITY };

    // M1: zero actions on idle chargers.
    let gate: Vec<f64> = inputs.remaining_slots.iter().map(|&r| r / (r + eps)).collect();
    t.a.iter_mut().zip(&gate).for_each(|(a, g)| *a *= g);
    t.scale_rows(&gate);

    // M2: unidirectional chargers stop at the required SoC.
    let mut dm = vec![1.0; n];
    for i in inputs.uni_idx() {
        let cap = inputs.energy_need_kwh[i].max(0.0) / d;
        if inputs.connected(i) {
            t.note(t.a[i], cap);
        }
        if t.a[i] > cap {
            t.a[i] = cap;
            dm[i] = 0.0;
        }
    }
    t.scale_rows(&dm);

    // M3: force charging so the requirement is still reachable.
    let mut dm = vec![1.0; n];
    for i in 0..n {
        let floor = inputs.charge_floor(i);
        if inputs.connected(i) {
            t.note(t.a[i], floor);
        }
        if t.a[i] < floor {
            t.a[i] = floor;
            dm[i] = 0.0;
        }
    }
    t.scale_rows(&dm);

    // M4: bidirectional chargers discharge back to the requirement.
    let mut dm = vec![1.0; n];
    for i in inputs.bi_idx() {
        let ceil = inputs.discharge_ceiling(i);
        if inputs.connected(i) {
            t.note(t.a[i], ceil);
        }
        if t.a[i] > ceil {
            t.a[i] = ceil;
            dm[i] = 0.0;
        }
    }
    t.scale_rows(&dm);

    // M5: fill the gap below the estimated peak.
    let power_gap = inputs.estimated_peak_kw - inputs.building_kw;
    let mut can_increase = vec![0.0; n];
    let mut g = vec![0.0; n];
    for i in 0..n {
        let head = (inputs.energy_need_kwh[i] / d).min(inputs.c_max[i]) - t.a[i];
        if inputs.connected(i) {
            t.note(head, 0.0);
        }
        if head > 0.0 {
            can_increase[i] = head;
            g[i] = -1.0;
        }
    }
    let s_inc: f64 = can_increase.iter().sum();
    let sum_a: f64 = t.a.iter().sum();
    let slack = power_gap - sum_a;
    t.note(slack, 0.0);
    let h = slack.max(0.0);
    let dh: f64 = if slack > 0.0 { -1.0 } else { 0.0 };
    t.note(h, s_inc);
    let (to_improve, dt): (f64, Vec<f64>) = if h < s_inc { (h, vec![dh; n]) } else { (s_inc, g.clone()) };
    if to_improve != 0.0 || dt.iter().any(|&x| x != 0.0) {
        let den = s_inc + eps;
        let mut local = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let mut v = dt[k] * can_increase[i] / den - to_improve * can_increase[i] * g[k] / (den * den);
                if i == k {
                    v += 1.0 + to_improve * g[i] / den;
                }
                local[i * n + k] = v;
            }
        }
        for i in 0..n {
            t.a[i] += to_improve * can_increase[i] / den;
        }
        t.compose(&local);
    }

    // M6: never discharge below the building load.
    let sum_a: f64 = t.a.iter().sum();
    let deficit = -inputs.building_kw - sum_a;
    t.note(deficit, 0.0);
    let to_improve = deficit.max(0.0);
    let dt: f64 = if deficit > 0.0 { -1.0 } else { 0.0 };
    let mut neg = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        if inputs.connected(i) {
            t.note(t.a[i], 0.0);
        }
        if t.a[i] < 0.0 {
            neg[i] = t.a[i];
            q[i] = 1.0;
        }
    }
    if to_improve > 0.0 {
        // The denominator is kept strictly negative so the correction
        // never flips sign when the discharge total is below ε.
        let den = neg.iter().sum::<f64>() - eps;
        let mut local = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let mut v = dt * neg[i] / den - to_improve * neg[i] * q[k] / (den * den);
                if i == k {
                    v += 1.0 + to_improve * q[i] / den;
                }
                local[i * n + k] = v;
            }
        }
        for i in 0..n {
            t.a[i] += to_improve * neg[i] / den;
        }
        t.compose(&local);
    }

    Ok(MaskTrace { output: t.a, jacobian: t.jac, kink_margin: t.margin })
}

/// Apply masks M1 through M6.
pub fn mask(inputs: &MaskInputs, raw: &[f64]) -> Result<Vec<f64>> {
    Ok(mask_with_jacobian(inputs, raw)?.output)
}

/// Only the departure-forcing steps M3 and (optionally) M4, used to repair
/// heuristic actions.
pub fn force_departure(inputs: &MaskInputs, action: &[f64], with_discharge: bool) -> Vec<f64> {
    action
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut a = a.max(inputs.charge_floor(i));
            if with_discharge && inputs.bidirectional[i] {
                a = a.min(inputs.discharge_ceiling(i));
            }
            a
        })
        .collect()
}

/// Clip each charger so the connected vehicle's next SoC stays inside
/// `[soc_min, soc_max]`. Idle chargers are set to zero.
pub fn post_process_soc(ctx: &StepContext<'_>, action: &Action) -> Action {
    let d = ctx.delta();
    let power = action
        .power_kw
        .iter()
        .enumerate()
        .map(|(i, &p)| match (ctx.session(i), ctx.state.soc_on(i)) {
            (Some(s), Some(soc)) => {
                let hi = ((s.soc_max - soc) * s.capacity_kwh / d).max(0.0);
                let lo = ((s.soc_min - soc) * s.capacity_kwh / d).min(0.0);
                p.clamp(lo, hi)
            }
            _ => 0.0,
        })
        .collect();
    Action { power_kw: power }
}

/// Shrink discharging chargers proportionally so the building never exports.
pub fn enforce_building_floor(building_kw: f64, action: &mut Action) {
    let total = action.total();
    if total + building_kw >= 0.0 {
        return;
    }
    let discharge: f64 = action.power_kw.iter().filter(|p| **p < 0.0).sum();
    if discharge >= 0.0 {
        return;
    }
    // scale negative entries so the net draw is exactly zero
    let positive = total - discharge;
    let allowed = (-(building_kw + positive)).min(0.0);
    let factor = (allowed / discharge).clamp(0.0, 1.0);
    for p in action.power_kw.iter_mut().filter(|p| **p < 0.0) {
        *p *= factor;
    }
}

/// Repair layer between a policy and the simulator: charger bounds, idle
/// chargers, SoC window, building floor.
pub fn finalize_action(ctx: &StepContext<'_>, raw: &Action) -> Action {
    let clipped = Action {
        power_kw: raw.power_kw.iter().zip(ctx.chargers).map(|(&p, c)| c.clamp(p)).collect(),
    };
    let mut out = post_process_soc(ctx, &clipped);
    enforce_building_floor(ctx.state.building_kw, &mut out);
    debug_assert!(out.total() + ctx.state.building_kw >= -FEAS_TOL);
    out
}
