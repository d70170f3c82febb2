//! Seeded synthetic stock series and gate-event logs.

use std::f64::consts::PI;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CargoStatus, ContainerCategory, EventLog, GateEvent};
use crate::series::{make_hourly_index, StockSeries};

const YEAR_HOURS: f64 = 8766.0;
const WEEK_HOURS: f64 = 168.0;
const DAY_HOURS: f64 = 24.0;

/// Share of arrivals that are standard containers, then reefer; the rest
/// are special.
const STANDARD_SHARE: f64 = 0.8;
const REEFER_SHARE: f64 = 0.1;
const EMPTY_SHARE: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
    pub base_level: f64,
    pub trend_per_hour: f64,
    pub yearly_amp: f64,
    pub weekly_amp: f64,
    pub daily_amp: f64,
    pub ar1_phi: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Hourly data from 2022-01-01 through 2024-04-13 23:00 with daily,
    /// weekly and yearly cycles around a level of 400.
    pub fn reference() -> Self {
        Self {
            start: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2024, 4, 14, 0, 0, 0).unwrap(),
            base_level: 400.0,
            trend_per_hour: 0.002,
            yearly_amp: 60.0,
            weekly_amp: 40.0,
            daily_amp: 80.0,
            ar1_phi: 0.9,
            noise_sigma: 8.0,
            seed: 2024,
        }
    }

    /// A flat level with no cycles or noise.
    pub fn constant(start: DateTime<Utc>, end: DateTime<Utc>, level: f64) -> Self {
        Self {
            start,
            end,
            base_level: level,
            trend_per_hour: 0.0,
            yearly_amp: 0.0,
            weekly_amp: 0.0,
            daily_amp: 0.0,
            ar1_phi: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(Error::InvalidRange { start: self.start.to_rfc3339(), end: self.end.to_rfc3339() });
        }
        if !(self.base_level >= 0.0) {
            return Err(Error::Config(format!("base level must be non-negative, got {}", self.base_level)));
        }
        if !(self.ar1_phi > -1.0 && self.ar1_phi < 1.0) {
            return Err(Error::Config(format!("AR(1) coefficient must lie in (-1, 1), got {}", self.ar1_phi)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    fn deterministic(&self, t: f64) -> f64 {
        self.base_level
            + self.trend_per_hour * t
            + self.yearly_amp * (2.0 * PI * t / YEAR_HOURS).sin()
            + self.weekly_amp * (2.0 * PI * t / WEEK_HOURS).sin()
            + self.daily_amp * (2.0 * PI * t / DAY_HOURS).sin()
    }
}

/// Unrounded, non-negative level per hour, with AR(1) noise.
fn levels(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z = Normal::new(0.0, 1.0).unwrap();
    let stationary = spec.noise_sigma / (1.0 - spec.ar1_phi * spec.ar1_phi).sqrt();
    let mut e = if spec.noise_sigma > 0.0 { stationary * z.sample(rng) } else { 0.0 };
    (0..n)
        .map(|t| {
            if t > 0 && spec.noise_sigma > 0.0 {
                e = spec.ar1_phi * e + spec.noise_sigma * z.sample(rng);
            }
            (spec.deterministic(t as f64) + e).max(0.0)
        })
        .collect()
}

pub fn generate_series(spec: &SynthSpec) -> Result<StockSeries> {
    spec.validate()?;
    let index = make_hourly_index(spec.start, spec.end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = levels(spec, index.len(), &mut rng).into_iter().map(|v| v.round() as u32).collect();
    StockSeries::new(index, values, ContainerCategory::Standard)
}

const LINES: [&str; 5] = ["MSC", "MAERSK", "CMA", "COSCO", "HAPAG"];
const STANDARD_CODES: [&str; 3] = ["22G1", "42G1", "45G1"];
const REEFER_CODES: [&str; 2] = ["22R1", "45R1"];
const SPECIAL_CODES: [&str; 3] = ["22U1", "22T1", "42P1"];

struct Arrivals<'a> {
    rng: &'a mut ChaCha8Rng,
    dwell: Exp<f64>,
    end: DateTime<Utc>,
    events: Vec<GateEvent>,
}

impl Arrivals<'_> {
    /// Adds one arrival of a standard empty container, or of a container
    /// drawn from the whole mix.
    fn push(&mut self, gate_in: DateTime<Utc>, target: bool) {
        let rng = &mut *self.rng;
        let (codes, status): (&[&str], CargoStatus) = if target {
            (&STANDARD_CODES, CargoStatus::Empty)
        } else {
            // Everything except standard empties, in proportion.
            loop {
                let u: f64 = rng.random();
                let codes: &[&str] = if u < STANDARD_SHARE {
                    &STANDARD_CODES
                } else if u < STANDARD_SHARE + REEFER_SHARE {
                    &REEFER_CODES
                } else {
                    &SPECIAL_CODES
                };
                let status = if rng.random::<f64>() < EMPTY_SHARE { CargoStatus::Empty } else { CargoStatus::Full };
                if !(codes == STANDARD_CODES.as_slice() && status == CargoStatus::Empty) {
                    break (codes, status);
                }
            }
        };
        let iso = codes[rng.random_range(0..codes.len())];
        let line = LINES[rng.random_range(0..LINES.len())];
        let dwell_secs = (self.dwell.sample(rng) * 3600.0).round() as i64;
        let out = gate_in + Duration::seconds(dwell_secs.max(1));
        let id = format!("SYNU{:07}", self.events.len());
        self.events.push(GateEvent {
            container_id: id,
            shipping_line: line.into(),
            iso_code: iso.into(),
            cargo_status: status,
            gate_in,
            gate_out: (out < self.end).then_some(out),
        });
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Gate events whose standard empty stock follows the [`generate_series`]
/// level `L`. Standard empties arrive as a Poisson process, uniformly within
/// each hour, and stay an exponential time of mean `D`. The hourly rate
///
/// ```text
/// λ_h = (L_{h+1} − L_h e^{−1/D}) / (D (1 − e^{−1/D}))
/// ```
///
/// makes the expected stock at `h + 1` equal `L_{h+1}` given `L_h` at `h`,
/// clamped at 0 where the level falls faster than departures allow. Other
/// containers arrive in proportion and do not affect that stock.
pub fn generate_event_log(spec: &SynthSpec, mean_dwell_hours: f64) -> Result<EventLog> {
    spec.validate()?;
    if !(mean_dwell_hours > 0.0) {
        return Err(Error::Config(format!("mean dwell must be positive, got {mean_dwell_hours}")));
    }
    let index = make_hourly_index(spec.start, spec.end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let level = levels(spec, index.len() + 1, &mut rng);
    let target_share = STANDARD_SHARE * EMPTY_SHARE;
    let keep = (-1.0 / mean_dwell_hours).exp();
    let mut arrivals = Arrivals {
        rng: &mut rng,
        dwell: Exp::new(1.0 / mean_dwell_hours).map_err(|e| Error::Config(e.to_string()))?,
        end: spec.end,
        events: Vec::new(),
    };

    // Stock already in the yard at the start; dwell is memoryless so the
    // remaining time is exponential as well.
    let initial_target = poisson(arrivals.rng, level[0]);
    let initial_other = poisson(arrivals.rng, level[0] * (1.0 - target_share) / target_share);
    for k in 0..initial_target + initial_other {
        let back = arrivals.rng.random_range(0..3600 * 24);
        let gate_in = spec.start - Duration::seconds(back);
        let out = spec.start + Duration::seconds((arrivals.dwell.sample(arrivals.rng) * 3600.0).round() as i64);
        arrivals.push(gate_in, k < initial_target);
        let last = arrivals.events.last_mut().unwrap();
        last.gate_out = (out < spec.end).then_some(out.max(spec.start + Duration::seconds(1)));
    }

    for (h, ts) in index.iter().enumerate() {
        // Arrivals during hour h are first counted at h + 1.
        let rate = ((level[h + 1] - level[h] * keep) / (mean_dwell_hours * (1.0 - keep))).max(0.0);
        let n_target = poisson(arrivals.rng, rate);
        let n_other = poisson(arrivals.rng, rate * (1.0 - target_share) / target_share);
        let rng = &mut *arrivals.rng;
        let mut offsets: Vec<(i64, bool)> =
            (0..n_target + n_other).map(|k| (rng.random_range(0..3600), k < n_target)).collect();
        offsets.sort();
        for (secs, target) in offsets {
            arrivals.push(ts + Duration::seconds(secs), target);
        }
    }
    let events = arrivals.events;
    EventLog::new(events, spec.end - Duration::seconds(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_stock_series, ClassificationTable};

    fn short(days: i64) -> SynthSpec {
        let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        SynthSpec { end: start + Duration::days(days), start, ..SynthSpec::reference() }
    }

    #[test]
    fn constant_spec_is_constant() {
        let s = short(10);
        let s = generate_series(&SynthSpec::constant(s.start, s.end, 100.0)).unwrap();
        assert_eq!(s.len(), 240);
        assert!(s.values().iter().all(|v| *v == 100));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = short(30);
        assert_eq!(generate_series(&spec).unwrap(), generate_series(&spec).unwrap());
        let other = SynthSpec { seed: 7, ..spec.clone() };
        assert_ne!(generate_series(&spec).unwrap(), generate_series(&other).unwrap());
        let a = generate_event_log(&spec, 6.0).unwrap();
        assert_eq!(a, generate_event_log(&spec, 6.0).unwrap());
    }

    #[test]
    fn weekly_cycle_autocorrelation() {
        let base = short(120);
        let spec = SynthSpec { weekly_amp: 20.0, ..SynthSpec::constant(base.start, base.end, 100.0) };
        let s = generate_series(&spec).unwrap();
        let y = s.to_f64();
        let (a, b) = (&y[..y.len() - 168], &y[168..]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r > 0.99, "{r}");
    }

    #[test]
    fn event_log_rebuilds_the_level() {
        let base = short(90);
        let spec = SynthSpec { daily_amp: 20.0, weekly_amp: 15.0, yearly_amp: 0.0, base_level: 150.0, ..base };
        let log = generate_event_log(&spec, 6.0).unwrap();
        let index = make_hourly_index(spec.start, spec.end).unwrap();
        let stock = build_stock_series(&log, ContainerCategory::Standard, &index, &ClassificationTable::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let level = levels(&spec, index.len(), &mut rng);
        let within = stock
            .values()
            .iter()
            .zip(&level)
            .filter(|(v, l)| (**v as f64 - *l).abs() <= 3.0 * l.sqrt().max(1.0))
            .count();
        assert!(within as f64 >= 0.99 * index.len() as f64, "{within} of {}", index.len());

        let categories: std::collections::BTreeSet<_> = log
            .events
            .iter()
            .map(|e| crate::ingest::classify_container(&e.iso_code, &ClassificationTable::default()))
            .collect();
        assert_eq!(categories.len(), 3);
        assert!(log.events.iter().any(|e| e.cargo_status == CargoStatus::Full));
    }

    #[test]
    fn zero_rate_gives_empty_log() {
        let base = short(5);
        let spec = SynthSpec::constant(base.start, base.end, 0.0);
        let log = generate_event_log(&spec, 10.0).unwrap();
        assert!(log.events.is_empty());
        let index = make_hourly_index(spec.start, spec.end).unwrap();
        let stock = build_stock_series(&log, ContainerCategory::Standard, &index, &ClassificationTable::default()).unwrap();
        assert!(stock.values().iter().all(|v| *v == 0));
    }

    #[test]
    fn rejects_bad_specs() {
        let s = short(2);
        assert!(generate_series(&SynthSpec { end: s.start, ..s.clone() }).is_err());
        assert!(generate_series(&SynthSpec { ar1_phi: 1.0, ..s.clone() }).is_err());
        assert!(generate_event_log(&s, 0.0).is_err());
    }
}
