//! Time-of-use energy pricing and demand charges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A two-period time-of-use tariff with a demand charge.
///
/// Slots map to local hours as `floor(slot * delta) mod 24`; slot 0 is
/// midnight of the first day. The peak window is half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariff {
    /// Off-peak energy price, $/kWh.
    pub theta_e_offpeak: f64,
    /// Peak energy price, $/kWh.
    pub theta_e_peak: f64,
    /// `[start_hour, end_hour)` of the peak window.
    pub peak_window: (f64, f64),
    /// Demand price, $/kW.
    pub theta_d: f64,
    /// Slot length in hours.
    pub delta: f64,
    /// Multiply the demand charge by the slot length.
    pub demand_includes_delta: bool,
    /// Only peak-window slots set the billed peak.
    pub demand_peak_hours_only: bool,
}

impl Default for Tariff {
    fn default() -> Self {
        Self {
            theta_e_offpeak: 0.11271,
            theta_e_peak: 0.1466,
            peak_window: (6.0, 22.0),
            theta_d: 9.62,
            delta: 0.25,
            demand_includes_delta: true,
            demand_peak_hours_only: true,
        }
    }
}

impl Tariff {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.theta_e_offpeak, self.theta_e_peak, self.theta_d];
        if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("tariff prices must be finite and >= 0".into()));
        }
        if self.theta_e_offpeak > self.theta_e_peak {
            return Err(Error::Config("off-peak price exceeds peak price".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("slot length {} outside (0, 1]", self.delta)));
        }
        let (start, end) = self.peak_window;
        if !(0.0..=24.0).contains(&start) || !(0.0..=24.0).contains(&end) || start >= end {
            return Err(Error::Config(format!("bad peak window [{start}, {end})")));
        }
        Ok(())
    }

    /// Number of slots in one day.
    pub fn slots_per_day(&self) -> usize {
        (24.0 / self.delta).round() as usize
    }

    /// Local hour of day (fractional) at the start of `slot`.
    pub fn hour_of_day(&self, slot: usize) -> f64 {
        let hour = (slot as f64 * self.delta).floor();
        hour.rem_euclid(24.0)
    }

    /// Zero-based day index containing `slot`.
    pub fn day_of(&self, slot: usize) -> usize {
        slot / self.slots_per_day()
    }

    pub fn is_peak(&self, slot: usize) -> bool {
        let hour = self.hour_of_day(slot);
        hour >= self.peak_window.0 && hour < self.peak_window.1
    }

    /// Energy price θ_E for `slot`, $/kWh.
    pub fn energy_rate(&self, slot: usize) -> f64 {
        if self.is_peak(slot) {
            self.theta_e_peak
        } else {
            self.theta_e_offpeak
        }
    }

    /// Whether `slot` can set the billed peak.
    pub fn demand_eligible(&self, slot: usize) -> bool {
        !self.demand_peak_hours_only || self.is_peak(slot)
    }

    /// Dollars per kW of billed peak.
    pub fn demand_rate(&self) -> f64 {
        if self.demand_includes_delta {
            self.theta_d * self.delta
        } else {
            self.theta_d
        }
    }
}
