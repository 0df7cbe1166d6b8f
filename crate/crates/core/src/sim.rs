//! Slot-stepped digital twin of the building and its chargers.
//!
//! A [`Simulator`] owns one [`SimState`] and advances it with the five-step
//! transition: peak-estimate update, SoC update, release/assign, energy-need
//! refresh, remaining-time refresh. Charger assignment is FIFO with a
//! configurable charger-class priority and tie-breaker, and is independent of
//! the power actions taken.

use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::billing::{bill_schedule, Binding, Schedule};
use crate::error::{Error, Result};
use crate::mask::finalize_action;
use crate::rl::{greedy_offpeak, reward};
use crate::types::{validate_fleet, Action, BillBreakdown, ChargerSpec, Episode, EvSession, ObjectiveWeights, MAX_CHARGERS};

/// Length of the policy state abstraction.
pub const FEATURE_LEN: usize = 7 + 2 * MAX_CHARGERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargerPriority {
    BidirectionalFirst,
    UnidirectionalFirst,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// Later-departing vehicle first.
    Departure,
    /// Larger battery first.
    Capacity,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentPolicy {
    pub priority: ChargerPriority,
    pub tie_break: TieBreak,
    pub rng_seed: u64,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        Self { priority: ChargerPriority::BidirectionalFirst, tie_break: TieBreak::Departure, rng_seed: 0 }
    }
}

/// Full simulator state at the start of slot `slot`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub slot: usize,
    /// Session index (into `Episode::sessions`) plugged into each charger.
    pub occupancy: Vec<Option<usize>>,
    /// Current SoC of every session; only meaningful once connected.
    pub soc: Vec<f64>,
    pub estimated_peak_kw: f64,
    pub building_kw: f64,
    pub energy_need_kwh: Vec<f64>,
    pub remaining_slots: Vec<usize>,
    pub arrivals_so_far: usize,
    pub day_of_week: u8,
    pub history_peak_mean: f64,
    pub history_peak_var: f64,
    /// Sessions that have not arrived yet, in arrival order.
    pub pending_sessions: VecDeque<usize>,
    /// Arrived sessions still waiting for a free charger, FIFO.
    pub waiting_sessions: Vec<usize>,
    pub bindings: Vec<Option<Binding>>,
    /// Session-slots spent waiting for a charger.
    pub unserved_slots: usize,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn is_done(&self, episode: &Episode) -> bool {
        self.slot >= episode.n_slots
    }

    /// Session connected to charger `i`, if any.
    pub fn session_on<'e>(&self, episode: &'e Episode, i: usize) -> Option<&'e EvSession> {
        self.occupancy[i].map(|s| &episode.sessions[s])
    }

    /// SoC of the vehicle on charger `i`, if any.
    pub fn soc_on(&self, i: usize) -> Option<f64> {
        self.occupancy[i].map(|s| self.soc[s])
    }
}

/// Everything a charging policy may look at in one slot.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub state: &'a SimState,
    pub episode: &'a Episode,
    pub chargers: &'a [ChargerSpec],
}

impl<'a> StepContext<'a> {
    pub fn session(&self, i: usize) -> Option<&'a EvSession> {
        self.state.session_on(self.episode, i)
    }

    pub fn delta(&self) -> f64 {
        self.episode.tariff.delta
    }

    pub fn is_peak(&self) -> bool {
        self.episode.tariff.is_peak(self.state.slot)
    }

    pub fn is_weekend(&self) -> bool {
        self.episode.is_weekend(self.state.slot)
    }
}

/// A charging policy: maps a state to a raw power vector (kW).
pub trait Policy {
    fn name(&self) -> String;

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Action>;

    /// Whether off-peak and weekend slots are handed to the greedy rule.
    fn offpeak_override(&self) -> bool {
        false
    }
}

/// Policy that never charges.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn name(&self) -> String {
        "idle".into()
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Action> {
        Ok(Action::zeros(ctx.chargers.len()))
    }
}

/// Normalisation scales for the state abstraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConstants {
    pub power_scale_kw: f64,
    pub max_capacity_kwh: f64,
    pub slots_per_day: f64,
    pub max_stay_slots: f64,
    pub max_arrivals: f64,
}

impl NormConstants {
    /// Scales derived from a set of training episodes.
    pub fn fit(episodes: &[Episode]) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| Error::Config("no episodes to fit normalisation".into()))?;
        let mut power: f64 = 1.0;
        let mut cap: f64 = 1.0;
        let mut stay: f64 = 1.0;
        let mut arrivals: f64 = 1.0;
        for ep in episodes {
            power = ep.building_load.iter().chain(std::iter::once(&ep.estimated_peak_kw)).fold(power, |a, &b| a.max(b));
            power = ep.history_peaks.iter().fold(power, |a, &b| a.max(b));
            for s in &ep.sessions {
                cap = cap.max(s.capacity_kwh);
                stay = stay.max(s.stay_slots() as f64);
            }
            arrivals = arrivals.max(ep.sessions.len() as f64);
        }
        Ok(Self {
            power_scale_kw: power,
            max_capacity_kwh: cap,
            slots_per_day: first.tariff.slots_per_day() as f64,
            max_stay_slots: stay,
            max_arrivals: arrivals,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.power_scale_kw, self.max_capacity_kwh, self.slots_per_day, self.max_stay_slots, self.max_arrivals];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!("normalisation scales must be finite and positive: {self:?}")));
        }
        Ok(())
    }
}

/// The 37-element normalised state abstraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn featurize(state: &SimState, norm: &NormConstants) -> Result<FeatureVector> {
    norm.validate()?;
    let mut f = [0.0; FEATURE_LEN];
    let p = norm.power_scale_kw;
    f[0] = (state.slot as f64 % norm.slots_per_day) / norm.slots_per_day;
    f[1] = unit(state.building_kw / p);
    f[2] = unit(state.estimated_peak_kw / p);
    f[3] = unit(state.history_peak_mean / p);
    f[4] = unit(state.history_peak_var / (p * p));
    f[5] = f64::from(state.day_of_week) / 6.0;
    f[6] = unit(state.arrivals_so_far as f64 / norm.max_arrivals);
    for (i, (&need, &rem)) in state.energy_need_kwh.iter().zip(&state.remaining_slots).enumerate().take(MAX_CHARGERS) {
        f[7 + i] = unit(need / norm.max_capacity_kwh);
        f[7 + MAX_CHARGERS + i] = unit(rem as f64 / norm.max_stay_slots);
    }
    Ok(FeatureVector(f))
}

/// Plugs waiting sessions into idle chargers.
pub fn assign_arrivals(state: &mut SimState, chargers: &[ChargerSpec], policy: &AssignmentPolicy) {
    let mut still_waiting = Vec::new();
    for &s in &state.waiting_sessions {
        let idle: Vec<usize> = (0..chargers.len()).filter(|&i| state.occupancy[i].is_none()).collect();
        let bi = idle.iter().copied().find(|&i| chargers[i].is_bidirectional());
        let uni = idle.iter().copied().find(|&i| !chargers[i].is_bidirectional());
        let choice = match policy.priority {
            ChargerPriority::BidirectionalFirst => bi.or(uni),
            ChargerPriority::UnidirectionalFirst => uni.or(bi),
            ChargerPriority::Random => idle.choose(&mut state.rng).copied(),
        };
        match choice {
            Some(i) => {
                state.occupancy[i] = Some(s);
                state.bindings[s] = Some(Binding { charger: i, connect_slot: state.slot });
            }
            None => still_waiting.push(s),
        }
    }
    state.waiting_sessions = still_waiting;
}

fn admit_arrivals(state: &mut SimState, episode: &Episode, policy: &AssignmentPolicy) {
    let mut batch = Vec::new();
    while let Some(&s) = state.pending_sessions.front() {
        if episode.sessions[s].arrival_slot > state.slot {
            break;
        }
        state.pending_sessions.pop_front();
        state.arrivals_so_far += 1;
        if episode.sessions[s].departure_slot > state.slot {
            batch.push(s);
        }
    }
    // Arrivals in one batch are simultaneous up to slot snapping; order them
    // by arrival slot, then by the tie-breaker.
    match policy.tie_break {
        TieBreak::Departure => batch.sort_by(|&a, &b| {
            let (sa, sb) = (&episode.sessions[a], &episode.sessions[b]);
            sa.arrival_slot.cmp(&sb.arrival_slot).then(sb.departure_slot.cmp(&sa.departure_slot)).then(a.cmp(&b))
        }),
        TieBreak::Capacity => batch.sort_by(|&a, &b| {
            let (sa, sb) = (&episode.sessions[a], &episode.sessions[b]);
            sa.arrival_slot
                .cmp(&sb.arrival_slot)
                .then(sb.capacity_kwh.total_cmp(&sa.capacity_kwh))
                .then(a.cmp(&b))
        }),
        TieBreak::Random => {
            batch.shuffle(&mut state.rng);
            batch.sort_by_key(|&a| episode.sessions[a].arrival_slot);
        }
    }
    state.waiting_sessions.extend(batch);
}

fn refresh_derived(state: &mut SimState, episode: &Episode) {
    for i in 0..state.occupancy.len() {
        match state.occupancy[i] {
            Some(s) => {
                let sess = &episode.sessions[s];
                state.energy_need_kwh[i] = sess.energy_need_kwh(state.soc[s]);
                state.remaining_slots[i] = sess.departure_slot.saturating_sub(state.slot);
            }
            None => {
                state.energy_need_kwh[i] = 0.0;
                state.remaining_slots[i] = 0;
            }
        }
    }
    state.building_kw = episode.building_load.get(state.slot).copied().unwrap_or(0.0);
    let day = episode.tariff.day_of(state.slot.min(episode.n_slots.saturating_sub(1)));
    state.day_of_week = episode.day_of_week_at(state.slot.min(episode.n_slots.saturating_sub(1)));
    let (mean, var) = episode.history_stats(day);
    state.history_peak_mean = mean;
    state.history_peak_var = var;
}

/// Initial state at slot 0 with slot-0 arrivals already assigned.
pub fn initial_state(episode: &Episode, chargers: &[ChargerSpec], policy: &AssignmentPolicy) -> SimState {
    let mut order: Vec<usize> = (0..episode.sessions.len()).collect();
    order.sort_by_key(|&s| (episode.sessions[s].arrival_slot, s));
    let mut state = SimState {
        slot: 0,
        occupancy: vec![None; chargers.len()],
        soc: episode.sessions.iter().map(|s| s.soc_init).collect(),
        estimated_peak_kw: episode.estimated_peak_kw,
        building_kw: 0.0,
        energy_need_kwh: vec![0.0; chargers.len()],
        remaining_slots: vec![0; chargers.len()],
        arrivals_so_far: 0,
        day_of_week: 0,
        history_peak_mean: 0.0,
        history_peak_var: 0.0,
        pending_sessions: order.into(),
        waiting_sessions: Vec::new(),
        bindings: vec![None; episode.sessions.len()],
        unserved_slots: 0,
        rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
    };
    admit_arrivals(&mut state, episode, policy);
    assign_arrivals(&mut state, chargers, policy);
    state.unserved_slots += state.waiting_sessions.len();
    refresh_derived(&mut state, episode);
    state
}

/// Advance `state` by one slot under `action`. Returns `true` once the
/// episode has ended.
pub fn transition(
    state: &mut SimState,
    action: &Action,
    episode: &Episode,
    chargers: &[ChargerSpec],
    policy: &AssignmentPolicy,
) -> Result<bool> {
    if state.is_done(episode) {
        return Ok(true);
    }
    if action.len() != chargers.len() {
        return Err(Error::InvalidInput(format!("action has {} entries for {} chargers", action.len(), chargers.len())));
    }
    let delta = episode.tariff.delta;
    // 1. peak estimate
    let draw = episode.building_load[state.slot] + action.total();
    state.estimated_peak_kw = state.estimated_peak_kw.max(draw);
    // 2. SoC
    for (i, occ) in state.occupancy.iter().enumerate() {
        if let Some(s) = *occ {
            state.soc[s] += action.power_kw[i] * delta / episode.sessions[s].capacity_kwh;
        }
    }
    // 3. release departures at the new slot, then admit and assign arrivals
    state.slot += 1;
    let now = state.slot;
    for occ in state.occupancy.iter_mut() {
        if occ.is_some_and(|s| episode.sessions[s].departure_slot <= now) {
            *occ = None;
        }
    }
    state.waiting_sessions.retain(|&s| episode.sessions[s].departure_slot > now);
    if now < episode.n_slots {
        admit_arrivals(state, episode, policy);
        assign_arrivals(state, chargers, policy);
        state.unserved_slots += state.waiting_sessions.len();
    }
    // 4, 5. energy need and remaining time
    refresh_derived(state, episode);
    Ok(state.is_done(episode))
}

/// A simulator bound to one episode and fleet.
#[derive(Clone)]
pub struct Simulator<'a> {
    pub episode: &'a Episode,
    pub chargers: &'a [ChargerSpec],
    pub assignment: AssignmentPolicy,
    pub state: SimState,
}

impl<'a> Simulator<'a> {
    pub fn new(episode: &'a Episode, chargers: &'a [ChargerSpec], assignment: AssignmentPolicy) -> Result<Self> {
        episode.validate()?;
        validate_fleet(chargers)?;
        let state = initial_state(episode, chargers, &assignment);
        Ok(Self { episode, chargers, assignment, state })
    }

    pub fn context(&self) -> StepContext<'_> {
        StepContext { state: &self.state, episode: self.episode, chargers: self.chargers }
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done(self.episode)
    }

    pub fn step(&mut self, action: &Action) -> Result<bool> {
        transition(&mut self.state, action, self.episode, self.chargers, &self.assignment)
    }

    /// Occupancy of every charger from the current slot to the episode end.
    /// Assignment ignores power, so this replays the future with idle chargers.
    pub fn occupancy_timeline(&self) -> Result<OccupancyTimeline> {
        let mut probe = self.clone();
        let start = probe.state.slot;
        let mut cells = Vec::with_capacity(self.episode.n_slots.saturating_sub(start));
        let idle = Action::zeros(self.chargers.len());
        while !probe.is_done() {
            cells.push(probe.state.occupancy.clone());
            probe.step(&idle)?;
        }
        Ok(OccupancyTimeline { start_slot: start, cells })
    }
}

/// Which session occupies each charger, slot by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTimeline {
    pub start_slot: usize,
    /// `cells[k][i]` is the session on charger `i` at slot `start_slot + k`.
    pub cells: Vec<Vec<Option<usize>>>,
}

/// One recorded step of a rollout.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: SimState,
    pub action: Action,
    pub reward: f64,
    pub next_state: SimState,
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub assignment: AssignmentPolicy,
    pub weights: ObjectiveWeights,
    pub record_trajectory: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { assignment: AssignmentPolicy::default(), weights: ObjectiveWeights::default(), record_trajectory: true }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub schedule: Schedule,
    pub bill: BillBreakdown,
    pub trajectory: Vec<StepRecord>,
    pub unserved_slots: usize,
}

/// Run `policy` over the whole episode through the repair layer and bill the result.
pub fn rollout(episode: &Episode, chargers: &[ChargerSpec], policy: &mut dyn Policy, options: &RolloutOptions) -> Result<Rollout> {
    let mut sim = Simulator::new(episode, chargers, options.assignment)?;
    let mut actions = Vec::with_capacity(episode.n_slots);
    let mut trajectory = Vec::new();
    while !sim.is_done() {
        let ctx = sim.context();
        let raw = if policy.offpeak_override() && (!ctx.is_peak() || ctx.is_weekend()) {
            greedy_offpeak(&ctx)
        } else {
            policy.act(&ctx)?
        };
        if raw.len() != chargers.len() {
            return Err(Error::InvalidInput(format!(
                "policy {} returned {} entries for {} chargers",
                policy.name(),
                raw.len(),
                chargers.len()
            )));
        }
        if raw.power_kw.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("policy {} produced a non-finite action at slot {}", policy.name(), sim.state.slot)));
        }
        let action = finalize_action(&ctx, &raw);
        let r = reward(&ctx, &action, &options.weights);
        let before = options.record_trajectory.then(|| sim.state.clone());
        sim.step(&action)?;
        if let Some(state) = before {
            trajectory.push(StepRecord { state, action: action.clone(), reward: r, next_state: sim.state.clone() });
        }
        actions.push(action);
    }
    let schedule = Schedule { actions, bindings: sim.state.bindings.clone() };
    let bill = bill_schedule(episode, &schedule)?;
    Ok(Rollout { schedule, bill, trajectory, unserved_slots: sim.state.unserved_slots })
}
