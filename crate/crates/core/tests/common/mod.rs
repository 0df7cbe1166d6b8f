#![allow(dead_code)]

use rand::Rng;
use v2b_core::{ChargerSpec, Episode, EvSession, Tariff};

pub fn tariff(delta: f64, peak_window: (f64, f64)) -> Tariff {
    Tariff { delta, peak_window, ..Tariff::default() }
}

/// Random single-day episode; every session fits inside `n_slots`.
pub fn random_episode<R: Rng>(
    rng: &mut R,
    n_slots: usize,
    tariff: Tariff,
    n_sessions: usize,
    load: (f64, f64),
) -> Episode {
    let mut sessions: Vec<EvSession> = (0..n_sessions)
        .map(|_| {
            let a = rng.random_range(0..n_slots - 1);
            let d = rng.random_range(a + 1..=n_slots);
            let soc_init = rng.random_range(0.05..0.6);
            let soc_req = rng.random_range(soc_init..0.9);
            let cap = [40.0, 62.0, 75.0][rng.random_range(0..3)];
            EvSession::new(0, a, d, soc_init, soc_req, cap)
        })
        .collect();
    sessions.sort_by_key(|s| (s.arrival_slot, s.departure_slot));
    for (k, s) in sessions.iter_mut().enumerate() {
        s.id = k as u32;
    }
    let building_load: Vec<f64> = (0..n_slots).map(|_| rng.random_range(load.0..load.1)).collect();
    let estimated_peak_kw = building_load.iter().cloned().fold(0.0, f64::max) * rng.random_range(0.8..1.1);
    Episode {
        n_slots,
        building_load,
        sessions,
        day_of_week: vec![0; n_slots.div_ceil(tariff.slots_per_day())],
        tariff,
        estimated_peak_kw,
        history_peaks: vec![estimated_peak_kw; 7],
    }
}

pub fn mixed_fleet<R: Rng>(rng: &mut R, n: usize) -> Vec<ChargerSpec> {
    (0..n)
        .map(|i| {
            let p = [7.0, 11.0, 20.0][rng.random_range(0..3)];
            if rng.random_bool(0.5) {
                ChargerSpec::bidirectional(i as u32, p)
            } else {
                ChargerSpec::unidirectional(i as u32, p)
            }
        })
        .collect()
}
