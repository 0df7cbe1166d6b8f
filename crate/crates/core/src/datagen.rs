//! Synthetic scenario generation, daily splitting, peak estimation and
//! cluster-stratified downsampling.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::oracle::{solve_episode, LpOptions};
use crate::sim::AssignmentPolicy;
use crate::tariff::Tariff;
use crate::types::{standard_fleet, ChargerSpec, Episode, EvSession, ObjectiveWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    pub n_bidirectional: usize,
    pub n_unidirectional: usize,
    pub p_max_kw: f64,
}

impl FleetSpec {
    pub fn chargers(&self) -> Vec<ChargerSpec> {
        standard_fleet(self.n_bidirectional, self.n_unidirectional, self.p_max_kw)
    }
}

/// Normal distribution truncated to `[min, max]` by rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncNormal {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncNormal {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.mean.is_finite() && self.std.is_finite() && self.std >= 0.0 && self.min <= self.max;
        if !ok {
            return Err(Error::Config(format!("{name}: bad truncated normal {self:?}")));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.std == 0.0 {
            return self.mean.clamp(self.min, self.max);
        }
        let n = Normal::new(self.mean, self.std).expect("validated");
        for _ in 0..1000 {
            let v = n.sample(rng);
            if (self.min..=self.max).contains(&v) {
                return v;
            }
        }
        self.mean.clamp(self.min, self.max)
    }
}

/// Generative model of one billing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub n_days: usize,
    /// Day of week of day 0 (0 = Monday).
    pub start_day_of_week: u8,
    /// Mean EV arrivals per weekday.
    pub arrival_rate: f64,
    pub weekend_rate_factor: f64,
    pub arrival_hour: TruncNormal,
    pub stay_hours: TruncNormal,
    pub soc_init: (f64, f64),
    pub soc_req: (f64, f64),
    pub capacities_kwh: Vec<f64>,
    /// Hourly building load shape, kW (24 values).
    pub load_curve_kw: Vec<f64>,
    pub load_noise_kw: f64,
    pub weekend_load_factor: f64,
    pub fleet: FleetSpec,
    pub tariff: Tariff,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let load_curve_kw = (0..24)
            .map(|h| {
                let x = (h as f64 - 13.0) / 3.5;
                40.0 + 60.0 * (-x * x).exp()
            })
            .collect();
        Self {
            n_days: 7,
            start_day_of_week: 0,
            arrival_rate: 3.5,
            weekend_rate_factor: 0.2,
            arrival_hour: TruncNormal { mean: 9.0, std: 1.0, min: 7.0, max: 12.0 },
            stay_hours: TruncNormal { mean: 7.0, std: 1.5, min: 2.0, max: 10.0 },
            soc_init: (0.2, 0.5),
            soc_req: (0.6, 0.85),
            capacities_kwh: vec![40.0, 62.0],
            load_curve_kw,
            load_noise_kw: 5.0,
            weekend_load_factor: 0.6,
            fleet: FleetSpec { n_bidirectional: 2, n_unidirectional: 3, p_max_kw: 20.0 },
            tariff: Tariff::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.tariff.validate()?;
        crate::types::validate_fleet(&self.fleet.chargers())?;
        if self.n_days == 0 || self.start_day_of_week > 6 {
            return Err(Error::Config("n_days must be positive and start_day_of_week in 0..=6".into()));
        }
        let rates = [self.arrival_rate, self.weekend_rate_factor, self.load_noise_kw, self.weekend_load_factor];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("rates, factors and noise must be finite and >= 0".into()));
        }
        self.arrival_hour.validate("arrival_hour")?;
        self.stay_hours.validate("stay_hours")?;
        if self.arrival_hour.min < 0.0 || self.arrival_hour.max + self.stay_hours.max > 24.0 || self.stay_hours.min <= 0.0 {
            return Err(Error::Config("arrival window plus stay must fit within one day".into()));
        }
        for (name, (lo, hi)) in [("soc_init", self.soc_init), ("soc_req", self.soc_req)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] outside [0, 1]")));
            }
        }
        if self.soc_req.1 > 0.9 || self.soc_init.1 > 0.9 {
            return Err(Error::Config("SoC ranges must stay at or below 0.9".into()));
        }
        if self.capacities_kwh.is_empty() || self.capacities_kwh.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::Config("capacities must be positive".into()));
        }
        if self.load_curve_kw.len() != 24 || self.load_curve_kw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("load_curve_kw needs 24 non-negative values".into()));
        }
        Ok(())
    }

    pub fn chargers(&self) -> Vec<ChargerSpec> {
        self.fleet.chargers()
    }

    fn day_of_week(&self, day: usize) -> u8 {
        ((self.start_day_of_week as usize + day) % 7) as u8
    }

    fn day_load<R: Rng + ?Sized>(&self, dow: u8, rng: &mut R) -> Vec<f64> {
        let spd = self.tariff.slots_per_day();
        let factor = if dow >= 5 { self.weekend_load_factor } else { 1.0 };
        let noise = Normal::new(0.0, self.load_noise_kw.max(f64::MIN_POSITIVE)).expect("validated");
        (0..spd)
            .map(|j| {
                let hour = self.tariff.hour_of_day(j) as usize;
                let eps = if self.load_noise_kw > 0.0 { noise.sample(rng) } else { 0.0 };
                (self.load_curve_kw[hour] * factor + eps).max(0.0)
            })
            .collect()
    }
}

/// Sample one billing period.
pub fn sample_month(spec: &ScenarioSpec, seed: u64) -> Result<Episode> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spd = spec.tariff.slots_per_day();
    let delta = spec.tariff.delta;
    let mut history_peaks = Vec::with_capacity(7);
    for k in 0..7 {
        // the week before day 0 repeats its weekday pattern
        history_peaks.push(spec.day_load(spec.day_of_week(k), &mut rng).into_iter().fold(0.0, f64::max));
    }
    let mut building_load = Vec::with_capacity(spec.n_days * spd);
    let mut sessions = Vec::new();
    let mut day_of_week = Vec::with_capacity(spec.n_days);
    for day in 0..spec.n_days {
        let dow = spec.day_of_week(day);
        day_of_week.push(dow);
        building_load.extend(spec.day_load(dow, &mut rng));
        let rate = spec.arrival_rate * if dow >= 5 { spec.weekend_rate_factor } else { 1.0 };
        let count = if rate > 0.0 {
            Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
        } else {
            0
        };
        let mut day_sessions = Vec::with_capacity(count);
        for _ in 0..count {
            let arrive_h = spec.arrival_hour.sample(&mut rng);
            let stay_h = spec.stay_hours.sample(&mut rng);
            let arrival = (arrive_h / delta).ceil() as usize;
            let departure = (((arrive_h + stay_h) / delta).floor() as usize).min(spd);
            let soc_init = rng.random_range(spec.soc_init.0..=spec.soc_init.1);
            let soc_req = rng.random_range(spec.soc_req.0..=spec.soc_req.1);
            let capacity = *spec.capacities_kwh.choose(&mut rng).expect("validated non-empty");
            if departure <= arrival {
                continue;
            }
            day_sessions.push((day * spd + arrival, day * spd + departure, soc_init, soc_req, capacity));
        }
        day_sessions.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        for (a, d, si, sr, cap) in day_sessions {
            sessions.push(EvSession::new(sessions.len() as u32, a, d, si, sr, cap));
        }
    }
    let ep = Episode {
        n_slots: spec.n_days * spd,
        building_load,
        sessions,
        day_of_week,
        tariff: spec.tariff.clone(),
        estimated_peak_kw: 0.0,
        history_peaks,
    };
    ep.validate()?;
    Ok(ep)
}

/// Weekday days of a billing period as separate one-day episodes.
pub fn split_daily(monthly: &Episode) -> Result<Vec<Episode>> {
    monthly.validate()?;
    let spd = monthly.tariff.slots_per_day();
    let peaks = monthly.daily_building_peaks();
    let mut out = Vec::new();
    for day in 0..monthly.n_days() {
        let dow = monthly.day_of_week[day];
        if dow >= 5 {
            continue;
        }
        let start = day * spd;
        let end = ((day + 1) * spd).min(monthly.n_slots);
        let sessions = monthly
            .sessions
            .iter()
            .filter(|s| s.arrival_slot >= start && s.arrival_slot < end)
            .filter_map(|s| {
                let mut s = s.clone();
                s.arrival_slot -= start;
                s.departure_slot = s.departure_slot.min(end) - start;
                (s.arrival_slot < s.departure_slot).then_some(s)
            })
            .collect();
        let mut history = monthly.history_peaks.clone();
        history.extend_from_slice(&peaks[..day]);
        let history_peaks = history[history.len().saturating_sub(7)..].to_vec();
        let ep = Episode {
            n_slots: end - start,
            building_load: monthly.building_load[start..end].to_vec(),
            sessions,
            day_of_week: vec![dow],
            tariff: monthly.tariff.clone(),
            estimated_peak_kw: monthly.estimated_peak_kw,
            history_peaks,
        };
        ep.validate()?;
        out.push(ep);
    }
    Ok(out)
}

/// Number of sessions arriving on weekend days.
pub fn weekend_session_count(monthly: &Episode) -> usize {
    monthly.sessions.iter().filter(|s| monthly.is_weekend(s.arrival_slot)).count()
}

/// LP-optimal peak power of each episode.
pub fn optimal_peaks(
    episodes: &[Episode],
    chargers: &[ChargerSpec],
    assignment: AssignmentPolicy,
    weights: ObjectiveWeights,
) -> Result<Vec<f64>> {
    let opts = LpOptions { weights, ..Default::default() };
    episodes.iter().map(|ep| Ok(solve_episode(ep, chargers, assignment, &opts)?.peak_kw)).collect()
}

/// Lower end of the two-sided 99% confidence interval of the mean peak,
/// scaled by `1 + inflation`. A single sample is returned as is.
pub fn estimate_peak(peaks: &[f64], inflation: f64) -> Result<f64> {
    if peaks.is_empty() {
        return Err(Error::Config("no peaks to estimate from".into()));
    }
    if peaks.iter().any(|p| !p.is_finite()) || !inflation.is_finite() || inflation < 0.0 {
        return Err(Error::InvalidInput("peaks and inflation must be finite, inflation >= 0".into()));
    }
    let n = peaks.len() as f64;
    let mean = peaks.iter().sum::<f64>() / n;
    let base = if peaks.len() == 1 {
        mean
    } else {
        let sd = (peaks.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = StdNormal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.995);
        mean - z * sd / n.sqrt()
    };
    Ok(base * (1.0 + inflation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn sse(values: &[f64], centroids: &[f64], labels: &[usize]) -> f64 {
    values.iter().zip(labels).map(|(v, &l)| (v - centroids[l]).powi(2)).sum()
}

fn nearest(v: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (c, &m) in centroids.iter().enumerate() {
        if (v - m).abs() < (v - centroids[best]).abs() {
            best = c;
        }
    }
    best
}

/// One-dimensional k-means with k-means++ seeding and Lloyd iterations.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || values.len() < k {
        return Err(Error::Config(format!("cannot form {k} clusters from {} values", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means values must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![values[rng.random_range(0..values.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = values.iter().map(|&v| (v - centroids[nearest(v, &centroids)]).powi(2)).collect();
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            centroids.push(values[rng.random_range(0..values.len())]);
            continue;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = values.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(values[pick]);
    }
    let mut labels: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < 100 {
        iterations += 1;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<f64> = values.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(v, _)| *v).collect();
            if !members.is_empty() {
                *centroid = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
        history.push(sse(values, &centroids, &next));
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeans { centroids, labels, objective_history: history, iterations })
}

/// Sample indices for disjoint train and test sets, allocated to clusters
/// of the 1-D `feature` in proportion to cluster size.
pub fn downsample(feature: &[f64], k: usize, n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if feature.len() < n_train + n_test {
        return Err(Error::Config(format!("{} samples cannot supply {n_train} train + {n_test} test", feature.len())));
    }
    let km = kmeans_1d(feature, k, seed)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in km.labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    members.iter_mut().for_each(|m| m.shuffle(&mut rng));
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let total = feature.len();
    let mut by_size: Vec<usize> = (0..k).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));

    let allocate = |want: usize, room: &[usize]| -> Vec<usize> {
        let mut quota: Vec<usize> = (0..k).map(|c| (want * sizes[c] / total).min(room[c])).collect();
        let mut left = want - quota.iter().sum::<usize>();
        while left > 0 {
            let mut progressed = false;
            for &c in &by_size {
                if left > 0 && quota[c] < room[c] {
                    quota[c] += 1;
                    left -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        quota
    };
    let train_quota = allocate(n_train, &sizes);
    let room: Vec<usize> = (0..k).map(|c| sizes[c] - train_quota[c]).collect();
    let test_quota = allocate(n_test, &room);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for c in 0..k {
        train.extend_from_slice(&members[c][..train_quota[c]]);
        test.extend_from_slice(&members[c][train_quota[c]..train_quota[c] + test_quota[c]]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Monthly samples with their LP-optimal demand charges and cluster labels.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub episodes: Vec<Episode>,
    pub optimal_demand_usd: Vec<f64>,
    pub labels: Vec<usize>,
}
