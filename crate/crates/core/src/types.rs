//! Shared domain vocabulary: chargers, sessions, episodes, actions and bills.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tariff::Tariff;

/// Upper bound on fleet size; the policy state abstraction has one slot per charger.
pub const MAX_CHARGERS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargerSpec {
    pub id: u32,
    /// Maximum discharge power as a non-positive kW value.
    pub p_min: f64,
    pub p_max: f64,
}

impl ChargerSpec {
    pub fn unidirectional(id: u32, p_max: f64) -> Self {
        Self { id, p_min: 0.0, p_max }
    }

    pub fn bidirectional(id: u32, p_limit: f64) -> Self {
        Self { id, p_min: -p_limit, p_max: p_limit }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.p_min < 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_min.is_finite() && self.p_max.is_finite()) || self.p_min > 0.0 || self.p_max <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "charger {} needs p_min <= 0 < p_max, got [{}, {}]",
                self.id, self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, power_kw: f64) -> f64 {
        power_kw.clamp(self.p_min, self.p_max)
    }
}

/// The reference fleet: `n_bi` bidirectional chargers first, then `n_uni`
/// unidirectional ones, all rated at `p_max` kW.
pub fn standard_fleet(n_bi: usize, n_uni: usize, p_max: f64) -> Vec<ChargerSpec> {
    (0..n_bi)
        .map(|i| ChargerSpec::bidirectional(i as u32, p_max))
        .chain((0..n_uni).map(|i| ChargerSpec::unidirectional((n_bi + i) as u32, p_max)))
        .collect()
}

pub fn validate_fleet(chargers: &[ChargerSpec]) -> Result<()> {
    if chargers.is_empty() || chargers.len() > MAX_CHARGERS {
        return Err(Error::InvalidInput(format!(
            "fleet size {} outside 1..={MAX_CHARGERS}",
            chargers.len()
        )));
    }
    chargers.iter().try_for_each(ChargerSpec::validate)
}

/// One charging session. The vehicle is plugged in for slots
/// `arrival_slot..departure_slot`; its SoC at departure is the SoC after the
/// action of slot `departure_slot - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvSession {
    pub id: u32,
    pub arrival_slot: usize,
    pub departure_slot: usize,
    pub soc_init: f64,
    pub soc_req: f64,
    #[serde(default = "default_soc_min")]
    pub soc_min: f64,
    #[serde(default = "default_soc_max")]
    pub soc_max: f64,
    pub capacity_kwh: f64,
}

fn default_soc_min() -> f64 {
    0.0
}

fn default_soc_max() -> f64 {
    0.9
}

impl EvSession {
    pub fn new(id: u32, arrival_slot: usize, departure_slot: usize, soc_init: f64, soc_req: f64, capacity_kwh: f64) -> Self {
        Self {
            id,
            arrival_slot,
            departure_slot,
            soc_init,
            soc_req,
            soc_min: default_soc_min(),
            soc_max: default_soc_max(),
            capacity_kwh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("session {}: {msg}", self.id)));
        if self.arrival_slot >= self.departure_slot {
            return bad("arrival must precede departure");
        }
        let fractions = [self.soc_init, self.soc_req, self.soc_min, self.soc_max];
        if fractions.iter().any(|f| !f.is_finite() || !(0.0..=1.0).contains(f)) {
            return bad("SoC values must lie in [0, 1]");
        }
        if !(self.soc_min <= self.soc_init && self.soc_init <= self.soc_max) {
            return bad("soc_init outside [soc_min, soc_max]");
        }
        if !(self.soc_min <= self.soc_req && self.soc_req <= self.soc_max) {
            return bad("soc_req outside [soc_min, soc_max]");
        }
        if !(self.capacity_kwh.is_finite() && self.capacity_kwh > 0.0) {
            return bad("capacity must be positive");
        }
        Ok(())
    }

    /// Energy still missing at SoC `soc`, kWh (negative when above requirement).
    pub fn energy_need_kwh(&self, soc: f64) -> f64 {
        (self.soc_req - soc) * self.capacity_kwh
    }

    pub fn stay_slots(&self) -> usize {
        self.departure_slot - self.arrival_slot
    }
}

/// A billing-period (or single-day) scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub n_slots: usize,
    /// Average building draw per slot, kW.
    pub building_load: Vec<f64>,
    pub sessions: Vec<EvSession>,
    /// Day of week (0 = Monday) for each day the episode touches.
    pub day_of_week: Vec<u8>,
    pub tariff: Tariff,
    /// Estimated billing-period peak at the first slot, kW.
    pub estimated_peak_kw: f64,
    /// Daily building peaks of the seven days preceding the episode, kW.
    pub history_peaks: Vec<f64>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        self.tariff.validate()?;
        if self.building_load.len() != self.n_slots {
            return Err(Error::InvalidInput(format!(
                "building load has {} entries for {} slots",
                self.building_load.len(),
                self.n_slots
            )));
        }
        if let Some(j) = self.building_load.iter().position(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidInput(format!("building load at slot {j} is negative or non-finite")));
        }
        let days = self.n_days();
        if self.day_of_week.len() != days || self.day_of_week.iter().any(|d| *d > 6) {
            return Err(Error::InvalidInput(format!("expected {days} day-of-week entries in 0..=6")));
        }
        if !self.estimated_peak_kw.is_finite() || self.estimated_peak_kw < 0.0 {
            return Err(Error::InvalidInput("estimated peak must be finite and >= 0".into()));
        }
        if self.history_peaks.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("history peaks must be finite".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.sessions {
            s.validate()?;
            if s.departure_slot > self.n_slots {
                return Err(Error::InvalidInput(format!("session {} departs after the episode ends", s.id)));
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidInput(format!("duplicate session id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.n_slots.div_ceil(self.tariff.slots_per_day())
    }

    pub fn day_of_week_at(&self, slot: usize) -> u8 {
        let day = self.tariff.day_of(slot).min(self.day_of_week.len().saturating_sub(1));
        self.day_of_week.get(day).copied().unwrap_or(0)
    }

    pub fn is_weekend(&self, slot: usize) -> bool {
        self.day_of_week_at(slot) >= 5
    }

    /// Maximum building draw of each day in the episode.
    pub fn daily_building_peaks(&self) -> Vec<f64> {
        let spd = self.tariff.slots_per_day();
        self.building_load
            .chunks(spd)
            .map(|day| day.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Mean and population variance of the daily building peaks over the
    /// seven days preceding `day`, drawing on `history_peaks` for days before
    /// the episode start.
    pub fn history_stats(&self, day: usize) -> (f64, f64) {
        let mut peaks = self.history_peaks.clone();
        peaks.extend(self.daily_building_peaks());
        let end = (self.history_peaks.len() + day).min(peaks.len());
        let window = &peaks[end.saturating_sub(7)..end];
        if window.is_empty() {
            return (0.0, 0.0);
        }
        let n = window.len() as f64;
        let mean = window.iter().sum::<f64>() / n;
        let var = window.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

/// Per-slot charger power vector, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub power_kw: Vec<f64>,
}

impl Action {
    pub fn zeros(n: usize) -> Self {
        Self { power_kw: vec![0.0; n] }
    }

    pub fn total(&self) -> f64 {
        self.power_kw.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.power_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_kw.is_empty()
    }
}

impl From<Vec<f64>> for Action {
    fn from(power_kw: Vec<f64>) -> Self {
        Self { power_kw }
    }
}

/// Coefficients trading off missing SoC, energy cost and demand charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda_s: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { lambda_s: 1.0, lambda_e: 1.0, lambda_d: 3.0 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_s, self.lambda_e, self.lambda_d];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("objective weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Audited cost decomposition of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BillBreakdown {
    pub energy_cost_usd: f64,
    pub demand_charge_usd: f64,
    pub peak_power_kw: f64,
    pub missing_soc_kwh: f64,
    pub total_usd: f64,
}

impl BillBreakdown {
    /// λ-weighted objective: λ_E·energy + λ_D·demand + λ_S·missing kWh.
    pub fn weighted_objective(&self, w: &ObjectiveWeights) -> f64 {
        w.lambda_e * self.energy_cost_usd + w.lambda_d * self.demand_charge_usd + w.lambda_s * self.missing_soc_kwh
    }
}
