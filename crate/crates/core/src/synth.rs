//! Synthetic radial networks, household load profiles, unmetered-demand
//! injection and noisy, non-synchronous meter readings with known ground
//! truth.
//!
//! Every generator is a pure function of its arguments and seed. Random
//! streams come from [`RNG_ALGORITHM`], one independent stream per meter or
//! per hour so that generation can run in parallel without changing output.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    Branch, Bus, Connection, GridModel, Meter, Network, PerUnitBase, Phase, PhaseConfig, Slack,
    DEFAULT_PHASE_VOLTAGE,
};
use crate::ingest::{reactive_from_pf, write_energy_csv, write_voltage_csv, EnergyReading, VoltageReading};
use crate::par::{self, Execution};
use crate::powerflow::{meter_voltage_at, solve_snapshot, LoadSnapshot, MeterLoad, SolverConfig};

pub const RNG_ALGORITHM: &str = "ChaCha8Rng";
pub const POWER_FACTOR: f64 = 0.95;
pub const SLACK_BUS: &str = "Source";

/// Bounds on every segment's resistance.
pub const R_RANGE_OHM: (f64, f64) = (0.005, 0.05);
pub const X_OVER_R_RANGE: (f64, f64) = (0.3, 1.0);
/// Street cable between junctions: large cross-section, short spans.
const BACKBONE_R_OHM: (f64, f64) = (0.005, 0.015);
/// Customer service cable: small cross-section.
const SERVICE_R_OHM: (f64, f64) = (0.02, 0.05);

/// Probability that a new backbone bus continues the previous one instead
/// of branching off an arbitrary earlier junction.
const CHAIN_PROBABILITY: f64 = 0.6;
const THREE_PHASE_SERVICE_PROBABILITY: f64 = 0.15;

pub const PILOT_FEEDERS: usize = 12;
pub const PILOT_BUSES: usize = 690;
pub const PILOT_METERS: usize = 266;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Radial network with `n_feeders` subtrees of `buses_per_feeder` buses
/// under one slack bus, and `round(meter_fraction × buses)` meters.
pub fn generate_network(
    n_feeders: usize,
    buses_per_feeder: usize,
    meter_fraction: f64,
    seed: u64,
) -> Result<Network> {
    if n_feeders == 0 || buses_per_feeder == 0 {
        return Err(Error::InvalidArgument("feeder and bus counts must be positive".into()));
    }
    if !(meter_fraction > 0.0 && meter_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "meter_fraction must be in (0, 1], got {meter_fraction}"
        )));
    }
    let buses = n_feeders * buses_per_feeder;
    let meters = ((meter_fraction * buses as f64).round() as usize).max(1);
    generate_network_sized(&vec![buses_per_feeder; n_feeders], meters, seed)
}

/// Pilot-scale network: 690 buses, 266 meters, 12 feeders.
pub fn pilot_network(seed: u64) -> Result<Network> {
    let per = (PILOT_BUSES - 1) / PILOT_FEEDERS;
    let extra = (PILOT_BUSES - 1) % PILOT_FEEDERS;
    let sizes: Vec<usize> = (0..PILOT_FEEDERS).map(|f| per + usize::from(f < extra)).collect();
    generate_network_sized(&sizes, PILOT_METERS, seed)
}

/// Network with one feeder per entry of `feeder_sizes` and `n_meters`
/// meters spread over the feeders in proportion to their size. Each feeder
/// is a three-phase backbone tree; each meter hangs off it on its own
/// service bus while buses remain, then on backbone buses.
pub fn generate_network_sized(feeder_sizes: &[usize], n_meters: usize, seed: u64) -> Result<Network> {
    let total: usize = feeder_sizes.iter().sum();
    if feeder_sizes.is_empty() || feeder_sizes.contains(&0) {
        return Err(Error::InvalidArgument("every feeder needs at least one bus".into()));
    }
    if n_meters == 0 || n_meters > total {
        return Err(Error::InvalidArgument(format!(
            "meter count must be in 1..={total}, got {n_meters}"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let mut model = GridModel {
        buses: vec![Bus {
            id: SLACK_BUS.into(),
            phases: PhaseConfig::ThreePhase,
            v_nominal: Some(DEFAULT_PHASE_VOLTAGE),
        }],
        slacks: vec![Slack {
            bus: SLACK_BUS.into(),
            v_pu: 1.0,
        }],
        ..GridModel::default()
    };

    // Largest-remainder split of meters over feeders.
    let quotas: Vec<f64> = feeder_sizes
        .iter()
        .map(|&s| n_meters as f64 * s as f64 / total as f64)
        .collect();
    let mut per_feeder: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..feeder_sizes.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = n_meters - per_feeder.iter().sum::<usize>();
    for &f in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        if per_feeder[f] < feeder_sizes[f] {
            per_feeder[f] += 1;
            left -= 1;
        }
    }

    let width = total.to_string().len().max(3);
    let mut meter_no = 0usize;
    for (f, &size) in feeder_sizes.iter().enumerate() {
        let first = model.buses.len();
        let meters = per_feeder[f];
        let services = meters.min(size - 1);
        let backbone = size - services;

        // parent within the feeder, None for the slack
        let mut parent: Vec<Option<usize>> = vec![None; size];
        for j in 1..backbone {
            parent[j] = Some(if rng.random::<f64>() < CHAIN_PROBABILITY {
                j - 1
            } else {
                rng.random_range(0..j)
            });
        }
        let mut phases = vec![PhaseConfig::ThreePhase; size];
        for j in backbone..size {
            parent[j] = Some(rng.random_range(0..backbone));
            if rng.random::<f64>() >= THREE_PHASE_SERVICE_PROBABILITY {
                phases[j] = PhaseConfig::single(Phase::ALL[rng.random_range(0..3)]);
            }
        }
        for j in 0..size {
            let id = format!("Terminal_{:0width$}", first + j);
            let from = match parent[j] {
                None => SLACK_BUS.to_string(),
                Some(p) => model.buses[first + p].id.clone(),
            };
            let range = if j < backbone { BACKBONE_R_OHM } else { SERVICE_R_OHM };
            let r = uniform(&mut rng, range);
            let x = r * uniform(&mut rng, X_OVER_R_RANGE);
            model.branches.push(Branch {
                id: format!("Line_{:0width$}", first + j),
                from,
                to: id.clone(),
                r_ohm: r,
                x_ohm: x,
                length_m: None,
            });
            model.buses.push(Bus {
                id,
                phases: phases[j],
                v_nominal: Some(DEFAULT_PHASE_VOLTAGE),
            });
        }

        // Every service bus is metered; leftover meters go on backbone buses.
        let mut extra: Vec<usize> = (0..backbone).collect();
        extra.shuffle(&mut rng);
        let mut chosen: Vec<usize> = (backbone..size).chain(extra.into_iter().take(meters - services)).collect();
        chosen.sort_unstable();
        for j in chosen {
            meter_no += 1;
            let bus = &model.buses[first + j];
            model.meters.push(Meter {
                id: format!("meter_{meter_no}"),
                bus: bus.id.clone(),
                connection: if bus.phases == PhaseConfig::ThreePhase {
                    Connection::ThreePhase
                } else {
                    Connection::SinglePhase
                },
                contracted_kw: None,
            });
        }
    }
    Network::from_model(model)
}

/// Per-meter hourly kW series on a shared hourly axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyLoads {
    pub start: DateTime<Utc>,
    pub n_hours: usize,
    pub kw: BTreeMap<String, Vec<f64>>,
}

impl HourlyLoads {
    pub fn hour(&self, h: usize) -> DateTime<Utc> {
        self.start + Duration::hours(h as i64)
    }

    pub fn n_days(&self) -> usize {
        self.n_hours / 24
    }

    /// Mean total demand of a set of meters over the whole axis.
    pub fn mean_total_kw<'a>(&self, meters: impl IntoIterator<Item = &'a str>) -> f64 {
        if self.n_hours == 0 {
            return 0.0;
        }
        let sum: f64 = meters
            .into_iter()
            .filter_map(|m| self.kw.get(m))
            .map(|s| s.iter().sum::<f64>())
            .sum();
        sum / self.n_hours as f64
    }

    pub fn snapshot(&self, h: usize, pf: f64) -> LoadSnapshot {
        let mut s = LoadSnapshot::new(self.hour(h));
        for (m, series) in &self.kw {
            let p = series[h];
            s.loads.insert(
                m.clone(),
                MeterLoad {
                    p_kw: p,
                    q_kvar: reactive_from_pf(p, pf),
                },
            );
        }
        s
    }
}

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()
}

/// Relative demand by hour of day, normalized to mean 1: a base load with
/// a morning peak around 07:30 and a larger evening peak around 20:00.
pub fn diurnal_shape() -> [f64; 24] {
    let bump = |h: f64, centre: f64, width: f64| (-0.5 * ((h - centre) / width).powi(2)).exp();
    let mut shape = [0.0; 24];
    for (h, v) in shape.iter_mut().enumerate() {
        let h = h as f64 + 0.5;
        *v = 0.35 + 0.55 * bump(h, 7.5, 1.5) + 1.1 * bump(h, 20.0, 2.0);
    }
    let mean = shape.iter().sum::<f64>() / 24.0;
    shape.map(|v| v / mean)
}

const WEEKEND_FACTOR: f64 = 1.12;
const HOUSEHOLD_MEDIAN_KW: f64 = 0.45;
const HOUSEHOLD_SIGMA: f64 = 0.4;
const DAY_SIGMA: f64 = 0.1;
const HOUR_SIGMA: f64 = 0.25;

fn unit_mean_lognormal(sigma: f64) -> LogNormal<f64> {
    LogNormal::new(-0.5 * sigma * sigma, sigma).expect("finite sigma")
}

/// Hourly actual demand for every meter over `n_days` days from
/// [`default_start`]. Three-phase connections draw three times a household.
pub fn generate_baseline_loads(network: &Network, n_days: usize, seed: u64) -> Result<HourlyLoads> {
    generate_baseline_loads_from(network, default_start(), n_days, seed, Execution::Auto)
}

pub fn generate_baseline_loads_from(
    network: &Network,
    start: DateTime<Utc>,
    n_days: usize,
    seed: u64,
    exec: Execution,
) -> Result<HourlyLoads> {
    if n_days == 0 {
        return Err(Error::InvalidArgument("n_days must be at least 1".into()));
    }
    let shape = diurnal_shape();
    let n_hours = n_days * 24;
    let series = par::map_range(network.meters().len(), exec, |m| {
        let meter = &network.meters()[m];
        let mut rng = rng_for(seed, m as u64 + 1);
        let household = LogNormal::new(HOUSEHOLD_MEDIAN_KW.ln(), HOUSEHOLD_SIGMA)
            .expect("finite parameters")
            .sample(&mut rng);
        let scale = match meter.connection {
            Connection::ThreePhase => 3.0 * household,
            Connection::SinglePhase => household,
        };
        let day_noise = unit_mean_lognormal(DAY_SIGMA);
        let hour_noise = unit_mean_lognormal(HOUR_SIGMA);
        let mut out = Vec::with_capacity(n_hours);
        for d in 0..n_days {
            let date = (start + Duration::days(d as i64)).date_naive();
            let weekly = match date.weekday() {
                Weekday::Sat | Weekday::Sun => WEEKEND_FACTOR,
                _ => 1.0,
            };
            let day = day_noise.sample(&mut rng);
            for s in shape {
                out.push(scale * weekly * day * s * hour_noise.sample(&mut rng));
            }
        }
        (meter.id.clone(), out)
    });
    Ok(HourlyLoads {
        start,
        n_hours,
        kw: series.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FraudAmount {
    /// Constant unmetered demand in kW.
    UnreportedKw(f64),
    /// Share of actual demand that goes unmetered, in (0, 1).
    UnreportedFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FraudSchedule {
    Continuous,
    /// 22:00 to 06:00.
    Nightly,
    RandomHours { p: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudScenario {
    pub meter_id: String,
    /// Day offsets from the series start, half-open.
    pub start_day: usize,
    pub end_day: usize,
    pub amount: FraudAmount,
    pub schedule: FraudSchedule,
}

impl FraudScenario {
    fn check(&self, loads: &HourlyLoads) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("scenario for {}: {msg}", self.meter_id)));
        if !loads.kw.contains_key(&self.meter_id) {
            return Err(Error::UnknownMeter(self.meter_id.clone()));
        }
        if self.start_day >= self.end_day {
            return bad(format!("start_day {} must precede end_day {}", self.start_day, self.end_day));
        }
        if self.end_day > loads.n_days() {
            return bad(format!("end_day {} beyond {} days", self.end_day, loads.n_days()));
        }
        match self.amount {
            FraudAmount::UnreportedKw(kw) if !(kw > 0.0 && kw.is_finite()) => {
                return bad(format!("unreported kW must be positive, got {kw}"))
            }
            FraudAmount::UnreportedFraction(f) if !(f > 0.0 && f < 1.0) => {
                return bad(format!("unreported fraction must be in (0, 1), got {f}"))
            }
            _ => {}
        }
        if let FraudSchedule::RandomHours { p, .. } = self.schedule {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("hour probability must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    /// Hours (indices into the series) during which demand is unmetered.
    pub fn active_hours(&self, loads: &HourlyLoads) -> Vec<usize> {
        let range = self.start_day * 24..self.end_day * 24;
        match self.schedule {
            FraudSchedule::Continuous => range.collect(),
            FraudSchedule::Nightly => range
                .filter(|&h| {
                    let hod = loads.hour(h).hour();
                    !(6..22).contains(&hod)
                })
                .collect(),
            FraudSchedule::RandomHours { p, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                range.filter(|_| rng.random::<f64>() < p).collect()
            }
        }
    }
}

/// Adds unmetered demand. Returns `(actual', metered)` where `metered` is
/// the demand before injection.
pub fn inject_fraud(actual: &HourlyLoads, scenarios: &[FraudScenario]) -> Result<(HourlyLoads, HourlyLoads)> {
    for s in scenarios {
        s.check(actual)?;
    }
    for (i, a) in scenarios.iter().enumerate() {
        for b in &scenarios[i + 1..] {
            if a.meter_id == b.meter_id && a.start_day < b.end_day && b.start_day < a.end_day {
                return Err(Error::InvalidArgument(format!(
                    "overlapping scenarios on {}: days {}..{} and {}..{}",
                    a.meter_id, a.start_day, a.end_day, b.start_day, b.end_day
                )));
            }
        }
    }
    let metered = actual.clone();
    let mut out = actual.clone();
    for s in scenarios {
        let series = out.kw.get_mut(&s.meter_id).expect("checked meter");
        for h in s.active_hours(actual) {
            series[h] = match s.amount {
                FraudAmount::UnreportedKw(kw) => series[h] + kw,
                FraudAmount::UnreportedFraction(f) => series[h] / (1.0 - f),
            };
        }
    }
    Ok((out, metered))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    /// Sample instants uniform over the hour.
    Uniform,
    /// Every sample at the start of its hour.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingModel {
    /// Mean readings in a retained meter-hour; values above 1 add a
    /// Poisson number of extra readings.
    pub reads_per_hour_mean: f64,
    pub dropout_probability: f64,
    pub jitter: Jitter,
    /// Ground-truth load-flow resolution within each hour.
    pub sub_intervals: usize,
}

impl Default for SamplingModel {
    fn default() -> Self {
        SamplingModel {
            reads_per_hour_mean: 1.0,
            dropout_probability: 0.3,
            jitter: Jitter::Uniform,
            sub_intervals: 4,
        }
    }
}

impl SamplingModel {
    /// One reading every hour at the hour start, one sub-interval.
    pub fn exact() -> Self {
        SamplingModel {
            reads_per_hour_mean: 1.0,
            dropout_probability: 0.0,
            jitter: Jitter::None,
            sub_intervals: 1,
        }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1], got {}",
                self.dropout_probability
            )));
        }
        if !(self.reads_per_hour_mean >= 1.0 && self.reads_per_hour_mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reads_per_hour_mean must be at least 1, got {}",
                self.reads_per_hour_mean
            )));
        }
        if self.sub_intervals == 0 || 3600 % self.sub_intervals != 0 {
            return Err(Error::InvalidArgument(format!(
                "sub_intervals must divide 3600 s, got {}",
                self.sub_intervals
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub intra_hour_load_cv: f64,
    /// Gaussian meter error, p.u.
    pub meter_voltage_noise_sd: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            intra_hour_load_cv: 0.15,
            meter_voltage_noise_sd: 0.002,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            intra_hour_load_cv: 0.0,
            meter_voltage_noise_sd: 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("intra_hour_load_cv", self.intra_hour_load_cv),
            ("meter_voltage_noise_sd", self.meter_voltage_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub energy: Vec<EnergyReading>,
    pub voltage: Vec<VoltageReading>,
}

impl Measurements {
    pub fn energy_csv(&self) -> String {
        write_energy_csv(&self.energy)
    }

    pub fn voltage_csv(&self) -> String {
        write_voltage_csv(&self.voltage)
    }
}

/// Energy readings from `metered` and voltage readings sampled from a
/// ground-truth load flow of `actual` at sub-hourly resolution.
pub fn synthesize_measurements(
    network: &Network,
    actual: &HourlyLoads,
    metered: &HourlyLoads,
    sampling: &SamplingModel,
    noise: &NoiseModel,
    seed: u64,
    exec: Execution,
) -> Result<Measurements> {
    sampling.check()?;
    noise.check()?;
    if actual.start != metered.start || actual.n_hours != metered.n_hours {
        return Err(Error::InvalidArgument("actual and metered series have different axes".into()));
    }
    for m in network.meters() {
        for (which, loads) in [("actual", actual), ("metered", metered)] {
            if loads.kw.get(&m.id).is_none_or(|s| s.len() != loads.n_hours) {
                return Err(Error::InvalidArgument(format!("{which} series missing or short for {}", m.id)));
            }
        }
    }

    let mut energy = Vec::with_capacity(network.meters().len() * metered.n_hours);
    for m in network.meters() {
        for (h, &kw) in metered.kw[&m.id].iter().enumerate() {
            energy.push(EnergyReading {
                meter_id: m.id.clone(),
                hour_start: metered.hour(h),
                energy_kwh: kw,
                reactive_kvarh: None,
            });
        }
    }

    let pu = network.clone().to_per_unit(PerUnitBase::default())?;
    let solver = SolverConfig::default();
    let k = sampling.sub_intervals;
    let sub_secs = 3600 / k as i64;
    let shape_sigma = (1.0 + noise.intra_hour_load_cv.powi(2)).ln().sqrt();
    let intra = unit_mean_lognormal(shape_sigma);
    let meter_noise = Normal::new(0.0, noise.meter_voltage_noise_sd).expect("checked sd");
    let extra_reads = (sampling.reads_per_hour_mean > 1.0)
        .then(|| Poisson::new(sampling.reads_per_hour_mean - 1.0).expect("positive rate"));
    let meters = network.meters();

    let per_hour = par::map_range(actual.n_hours, exec, |h| -> Result<Vec<VoltageReading>> {
        let mut rng = rng_for(seed, h as u64 + 1);
        let hour = actual.hour(h);
        let mut factors = vec![vec![1.0; k]; meters.len()];
        for f in factors.iter_mut() {
            for x in f.iter_mut() {
                *x = intra.sample(&mut rng);
            }
            let mean = f.iter().sum::<f64>() / k as f64;
            for x in f.iter_mut() {
                *x /= mean;
            }
        }
        let mut solutions = Vec::with_capacity(k);
        for s in 0..k {
            let mut snap = LoadSnapshot::new(hour + Duration::seconds(s as i64 * sub_secs));
            for (m, meter) in meters.iter().enumerate() {
                let p = actual.kw[&meter.id][h] * factors[m][s];
                snap.loads.insert(
                    meter.id.clone(),
                    MeterLoad {
                        p_kw: p,
                        q_kvar: reactive_from_pf(p, POWER_FACTOR),
                    },
                );
            }
            let sol = solve_snapshot(&pu, &snap, &solver)?;
            if !sol.converged {
                return Err(Error::NonConvergence(format!(
                    "ground truth at {} sub-interval {s}",
                    snap.timestamp.to_rfc3339()
                )));
            }
            solutions.push(sol);
        }
        let mut out = Vec::new();
        for (m, meter) in meters.iter().enumerate() {
            if rng.random::<f64>() < sampling.dropout_probability {
                continue;
            }
            let reads = 1 + extra_reads.map_or(0, |p| p.sample(&mut rng) as usize);
            let v_base = pu.v_base(network.meter_bus(m));
            for _ in 0..reads {
                let offset = match sampling.jitter {
                    Jitter::Uniform => rng.random_range(0..3600i64),
                    Jitter::None => 0,
                };
                let s = (offset / sub_secs) as usize;
                let v = meter_voltage_at(&solutions[s], network, m) + meter_noise.sample(&mut rng);
                out.push(VoltageReading {
                    meter_id: meter.id.clone(),
                    timestamp: hour + Duration::seconds(offset),
                    voltage_v: v * v_base,
                    phase: None,
                });
            }
        }
        Ok(out)
    });
    let mut voltage = Vec::new();
    for hour in per_hour {
        voltage.extend(hour?);
    }
    voltage.sort_by(|a, b| a.meter_id.cmp(&b.meter_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(Measurements { energy, voltage })
}

/// Random placement of unmetered demand on distinct feeders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FraudPlan {
    pub count: usize,
    /// Unreported kW as a share of the feeder's mean total demand.
    pub feeder_load_fraction: f64,
    pub schedule: FraudSchedule,
    /// Shortest window in days.
    pub min_days: usize,
}

impl Default for FraudPlan {
    fn default() -> Self {
        FraudPlan {
            count: 0,
            feeder_load_fraction: 0.2,
            schedule: FraudSchedule::Continuous,
            min_days: 14,
        }
    }
}

/// Picks `plan.count` distinct feeders and one meter in each, and sizes each
/// injection from that feeder's mean demand.
pub fn plan_frauds(network: &Network, loads: &HourlyLoads, plan: &FraudPlan, seed: u64) -> Result<Vec<FraudScenario>> {
    if plan.count == 0 {
        return Ok(Vec::new());
    }
    let n_days = loads.n_days();
    if n_days == 0 {
        return Err(Error::InvalidArgument("load series shorter than a day".into()));
    }
    let mut feeders: Vec<crate::grid::Feeder> = network
        .meters()
        .iter()
        .map(|m| network.feeder_of(&m.bus))
        .collect::<Result<BTreeSet<_>>>()?
        .into_iter()
        .collect();
    if feeders.len() < plan.count {
        return Err(Error::InvalidArgument(format!(
            "{} frauds requested but only {} metered feeders",
            plan.count,
            feeders.len()
        )));
    }
    let mut rng = rng_for(seed, 0);
    feeders.shuffle(&mut rng);
    let min_days = plan.min_days.clamp(1, n_days);
    let mut out = Vec::with_capacity(plan.count);
    for &feeder in &feeders[..plan.count] {
        let meters = network.feeder_meters(feeder);
        let meter = meters[rng.random_range(0..meters.len())].to_string();
        let kw = plan.feeder_load_fraction * loads.mean_total_kw(meters.iter().copied());
        let start_day = rng.random_range(0..=n_days - min_days);
        let end_day = rng.random_range(start_day + min_days..=n_days);
        out.push(FraudScenario {
            meter_id: meter,
            start_day,
            end_day,
            amount: FraudAmount::UnreportedKw(kw),
            schedule: plan.schedule,
        });
    }
    out.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_feeders: usize,
    pub buses_per_feeder: usize,
    pub meter_fraction: f64,
    pub n_days: usize,
    pub start: DateTime<Utc>,
    pub sampling: SamplingModel,
    pub noise: NoiseModel,
    pub fraud: FraudPlan,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_feeders: PILOT_FEEDERS,
            buses_per_feeder: 57,
            meter_fraction: 0.4,
            n_days: 60,
            start: default_start(),
            sampling: SamplingModel::default(),
            noise: NoiseModel::default(),
            fraud: FraudPlan::default(),
        }
    }
}

/// Seeds of the independent generation steps, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSeeds {
    pub network: u64,
    pub loads: u64,
    pub fraud: u64,
    pub measurements: u64,
}

impl StepSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StepSeeds {
            network: rng.random(),
            loads: rng.random(),
            fraud: rng.random(),
            measurements: rng.random(),
        }
    }
}

/// Scenario manifest: everything needed to regenerate and score a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub rng_algorithm: String,
    pub config: SynthConfig,
    pub step_seeds: StepSeeds,
    pub power_factor: f64,
    pub buses: usize,
    pub meters: usize,
    pub frauds: Vec<FraudScenario>,
}

impl ScenarioManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub network: Network,
    pub actual: HourlyLoads,
    pub metered: HourlyLoads,
    pub measurements: Measurements,
    pub manifest: ScenarioManifest,
}

pub fn synthesize(config: &SynthConfig, exec: Execution) -> Result<SyntheticDataset> {
    let seeds = StepSeeds::derive(config.seed);
    let network = generate_network(
        config.n_feeders,
        config.buses_per_feeder,
        config.meter_fraction,
        seeds.network,
    )?;
    synthesize_on(network, config, exec)
}

/// Like [`synthesize`] but on a given network.
pub fn synthesize_on(network: Network, config: &SynthConfig, exec: Execution) -> Result<SyntheticDataset> {
    let seeds = StepSeeds::derive(config.seed);
    let baseline = generate_baseline_loads_from(&network, config.start, config.n_days, seeds.loads, exec)?;
    let frauds = plan_frauds(&network, &baseline, &config.fraud, seeds.fraud)?;
    let (actual, metered) = inject_fraud(&baseline, &frauds)?;
    let measurements = synthesize_measurements(
        &network,
        &actual,
        &metered,
        &config.sampling,
        &config.noise,
        seeds.measurements,
        exec,
    )?;
    let manifest = ScenarioManifest {
        rng_algorithm: RNG_ALGORITHM.into(),
        config: config.clone(),
        step_seeds: seeds,
        power_factor: POWER_FACTOR,
        buses: network.buses().len(),
        meters: network.meters().len(),
        frauds,
    };
    Ok(SyntheticDataset {
        network,
        actual,
        metered,
        measurements,
        manifest,
    })
}
