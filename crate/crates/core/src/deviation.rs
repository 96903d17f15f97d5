//! Daily voltage statistics and the simulated-minus-measured deviation
//! indicators.
//!
//! For every meter and day the minimum, mean and maximum voltage is taken
//! from the hourly load-flow results and, separately, from the instantaneous
//! measurements. The three indicators are the plain differences
//! `simulated - measured` of those daily values, in p.u.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::ingest::{local_day, MeterSeries};
use crate::powerflow::{meter_voltage_at, VoltageSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyVoltageStats {
    pub meter_id: String,
    pub day: NaiveDate,
    pub source: Source,
    pub v_min: f64,
    pub v_mean: f64,
    pub v_max: f64,
    pub sample_count: usize,
}

fn summarize(meter_id: &str, day: NaiveDate, source: Source, values: &[f64]) -> DailyVoltageStats {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    DailyVoltageStats {
        meter_id: meter_id.to_string(),
        day,
        source,
        v_min: min,
        // rounding in the sum can push the mean a ulp outside [min, max]
        v_mean: mean.clamp(min, max),
        v_max: max,
        sample_count: values.len(),
    }
}

/// Daily min/mean/max of each meter's simulated voltage over the converged
/// hourly solutions of that day. Days without a converged hour are absent.
pub fn daily_stats_simulated(
    solutions: &[VoltageSolution],
    network: &Network,
    tz: Tz,
) -> Vec<DailyVoltageStats> {
    let mut days: BTreeMap<NaiveDate, Vec<&VoltageSolution>> = BTreeMap::new();
    for s in solutions.iter().filter(|s| s.converged) {
        days.entry(local_day(s.timestamp, tz)).or_default().push(s);
    }
    let mut out = Vec::new();
    for (m, meter) in network.meters().iter().enumerate() {
        for (&day, sols) in &days {
            let values: Vec<f64> = sols
                .iter()
                .map(|s| meter_voltage_at(s, network, m))
                .collect();
            out.push(summarize(&meter.id, day, Source::Simulated, &values));
        }
    }
    out
}

/// Daily min/mean/max of one meter's measured samples in p.u. of
/// `nominal_v`. Days with fewer than `min_samples` samples are absent.
pub fn daily_stats_measured(
    series: &MeterSeries,
    nominal_v: f64,
    min_samples: usize,
    tz: Tz,
) -> Vec<DailyVoltageStats> {
    let mut days: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for r in &series.voltage {
        days.entry(local_day(r.timestamp, tz))
            .or_default()
            .push(r.voltage_v / nominal_v);
    }
    days.into_iter()
        .filter(|(_, v)| !v.is_empty() && v.len() >= min_samples)
        .map(|(day, v)| summarize(&series.meter_id, day, Source::Measured, &v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Indicator {
    #[serde(rename = "dv_mean")]
    Mean,
    #[serde(rename = "dv_min")]
    Min,
    #[serde(rename = "dv_max")]
    Max,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Mean, Indicator::Min, Indicator::Max];

    fn layer(self) -> usize {
        match self {
            Indicator::Mean => 0,
            Indicator::Min => 1,
            Indicator::Max => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Mean => "dv_mean",
            Indicator::Min => "dv_min",
            Indicator::Max => "dv_max",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown indicator `{s}`")))
    }
}

/// The three indicators of one meter-day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyIndicators {
    pub dv_mean: Option<f64>,
    pub dv_min: Option<f64>,
    pub dv_max: Option<f64>,
}

/// Dense meter × day grid of the three indicators. `None` marks a missing
/// cell; cells are never imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMatrix {
    meters: Vec<String>,
    days: Vec<NaiveDate>,
    layers: [Vec<Option<f64>>; 3],
}

impl IndicatorMatrix {
    /// An all-missing matrix over `meters` and the contiguous days
    /// `first..=last`.
    pub fn empty(meters: Vec<String>, days: Option<(NaiveDate, NaiveDate)>) -> Self {
        let days: Vec<NaiveDate> = match days {
            Some((first, last)) => first.iter_days().take_while(|d| *d <= last).collect(),
            None => Vec::new(),
        };
        let cells = meters.len() * days.len();
        IndicatorMatrix {
            meters,
            days,
            layers: [vec![None; cells], vec![None; cells], vec![None; cells]],
        }
    }

    pub fn meters(&self) -> &[String] {
        &self.meters
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn cell_count(&self) -> usize {
        self.meters.len() * self.days.len()
    }

    pub fn meter_index(&self, meter_id: &str) -> Option<usize> {
        self.meters.iter().position(|m| m == meter_id)
    }

    pub fn day_index(&self, day: NaiveDate) -> Option<usize> {
        let first = *self.days.first()?;
        let i = (day - first).num_days();
        (i >= 0 && (i as usize) < self.days.len()).then_some(i as usize)
    }

    pub fn get(&self, indicator: Indicator, meter: usize, day: usize) -> Option<f64> {
        self.layers[indicator.layer()][meter * self.days.len() + day]
    }

    pub fn set(&mut self, indicator: Indicator, meter: usize, day: usize, value: Option<f64>) {
        let n = self.days.len();
        self.layers[indicator.layer()][meter * n + day] = value;
    }

    pub fn cell(&self, meter: usize, day: usize) -> DailyIndicators {
        DailyIndicators {
            dv_mean: self.get(Indicator::Mean, meter, day),
            dv_min: self.get(Indicator::Min, meter, day),
            dv_max: self.get(Indicator::Max, meter, day),
        }
    }

    /// One meter's row of an indicator, day by day.
    pub fn row(&self, indicator: Indicator, meter: usize) -> &[Option<f64>] {
        let n = self.days.len();
        &self.layers[indicator.layer()][meter * n..(meter + 1) * n]
    }

    pub fn present(&self, indicator: Indicator) -> impl Iterator<Item = f64> + Clone + '_ {
        self.layers[indicator.layer()].iter().filter_map(|c| *c)
    }

    /// Applies `f` to every present cell of every layer.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for c in layer.iter_mut() {
                *c = c.map(&f);
            }
        }
        out
    }

    /// Layer as CSV: one row per meter, one column per ISO date, empty
    /// field for a missing cell. Values use the shortest round-trip form.
    pub fn to_csv(&self, indicator: Indicator) -> String {
        let mut out = String::from("meter_id");
        for d in &self.days {
            out.push(',');
            out.push_str(&d.format("%Y-%m-%d").to_string());
        }
        out.push('\n');
        for (m, meter) in self.meters.iter().enumerate() {
            out.push_str(meter);
            for c in self.row(indicator, m) {
                out.push(',');
                if let Some(v) = c {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv) over the three layers, which must
    /// share their axes.
    pub fn from_csv(dv_mean: &str, dv_min: &str, dv_max: &str) -> Result<Self> {
        let mut parsed = Vec::new();
        for text in [dv_mean, dv_min, dv_max] {
            parsed.push(parse_layer(text)?);
        }
        let (meters, days, _) = &parsed[0];
        if parsed.iter().any(|(m, d, _)| m != meters || d != days) {
            return Err(Error::Parse("indicator layers have different axes".into()));
        }
        if days.windows(2).any(|w| w[0].succ_opt() != Some(w[1])) {
            return Err(Error::Parse("day axis is not contiguous".into()));
        }
        let meters = meters.clone();
        let days = days.clone();
        let mut it = parsed.into_iter().map(|(_, _, cells)| cells);
        Ok(IndicatorMatrix {
            meters,
            days,
            layers: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        })
    }
}

type Layer = (Vec<String>, Vec<NaiveDate>, Vec<Option<f64>>);

fn parse_layer(text: &str) -> Result<Layer> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.get(0) != Some("meter_id") {
        return Err(Error::Parse("matrix header must start with meter_id".into()));
    }
    let days = header
        .iter()
        .skip(1)
        .map(|d| {
            NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("bad date `{d}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meters = Vec::new();
    let mut cells = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        meters.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            cells.push(if field.is_empty() {
                None
            } else {
                Some(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value `{field}`: {e}")))?,
                )
            });
        }
    }
    Ok((meters, days, cells))
}

/// Builds the indicator matrix over `meters` and the contiguous union of
/// days on either side. A cell is present only when both sides have the
/// meter-day.
pub fn compute_indicators(
    sim: &[DailyVoltageStats],
    meas: &[DailyVoltageStats],
    meters: &[String],
) -> IndicatorMatrix {
    let wanted: HashMap<&str, usize> = meters
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let relevant = || {
        sim.iter()
            .chain(meas)
            .filter(|s| wanted.contains_key(s.meter_id.as_str()))
    };
    let first = relevant().map(|s| s.day).min();
    let last = relevant().map(|s| s.day).max();
    let mut matrix = IndicatorMatrix::empty(meters.to_vec(), first.zip(last));

    let measured: HashMap<(&str, NaiveDate), &DailyVoltageStats> = meas
        .iter()
        .map(|s| ((s.meter_id.as_str(), s.day), s))
        .collect();
    for s in sim {
        let Some(&m) = wanted.get(s.meter_id.as_str()) else {
            continue;
        };
        let Some(x) = measured.get(&(s.meter_id.as_str(), s.day)) else {
            continue;
        };
        let d = matrix.day_index(s.day).expect("day within axis");
        matrix.set(Indicator::Mean, m, d, Some(s.v_mean - x.v_mean));
        matrix.set(Indicator::Min, m, d, Some(s.v_min - x.v_min));
        matrix.set(Indicator::Max, m, d, Some(s.v_max - x.v_max));
    }
    matrix
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorStats {
    pub average: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub dv_mean: IndicatorStats,
    pub dv_min: IndicatorStats,
    pub dv_max: IndicatorStats,
}

impl SummaryStats {
    pub fn get(&self, indicator: Indicator) -> &IndicatorStats {
        match indicator {
            Indicator::Mean => &self.dv_mean,
            Indicator::Min => &self.dv_min,
            Indicator::Max => &self.dv_max,
        }
    }
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> IndicatorStats {
    let count = values.clone().count();
    if count == 0 {
        return IndicatorStats {
            average: 0.0,
            std: 0.0,
            count,
        };
    }
    let average = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - average).powi(2)).sum::<f64>() / count as f64;
    IndicatorStats {
        average,
        std: var.sqrt(),
        count,
    }
}

/// Average and population standard deviation of each indicator over its
/// present cells. An indicator without cells reports zeros.
pub fn summary_statistics(matrix: &IndicatorMatrix) -> SummaryStats {
    SummaryStats {
        dv_mean: stats(matrix.present(Indicator::Mean)),
        dv_min: stats(matrix.present(Indicator::Min)),
        dv_max: stats(matrix.present(Indicator::Max)),
    }
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub indicator: Indicator,
    pub bin_width: f64,
    /// `counts.len() + 1` edges, each an integer multiple of `bin_width`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Count of the bin `[lo, lo + bin_width)`.
    pub fn count_at(&self, lo: f64) -> Option<usize> {
        let k = (lo / self.bin_width).round() as i64;
        let first = (self.edges[0] / self.bin_width).round() as i64;
        let i = k - first;
        (i >= 0 && (i as usize) < self.counts.len()).then(|| self.counts[i as usize])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Index `k` with `k * w <= v < (k + 1) * w`, exact on the edges as
/// computed by multiplication.
fn bin_index(v: f64, w: f64) -> i64 {
    let mut k = (v / w).floor() as i64;
    if (k as f64) * w > v {
        k -= 1;
    }
    if ((k + 1) as f64) * w <= v {
        k += 1;
    }
    k
}

/// Symmetric histogram of the present cells of one indicator. Bin edges
/// are multiples of `bin_width`; a value on an edge counts in the upper bin.
pub fn histogram(matrix: &IndicatorMatrix, indicator: Indicator, bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let ks: Vec<i64> = matrix
        .present(indicator)
        .map(|v| bin_index(v, bin_width))
        .collect();
    let half = ks
        .iter()
        .map(|&k| if k < 0 { -k } else { k + 1 })
        .max()
        .unwrap_or(1);
    let mut counts = vec![0usize; 2 * half as usize];
    for k in ks {
        counts[(k + half) as usize] += 1;
    }
    let edges = (-half..=half).map(|k| k as f64 * bin_width).collect();
    Ok(Histogram {
        indicator,
        bin_width,
        edges,
        counts,
    })
}

/// Fraction of present cells with `|value| <= bound`; 1 for an empty layer.
pub fn fraction_within(matrix: &IndicatorMatrix, indicator: Indicator, bound: f64) -> f64 {
    let (inside, total) = matrix
        .present(indicator)
        .fold((0usize, 0usize), |(i, t), v| (i + usize::from(v.abs() <= bound), t + 1));
    if total == 0 {
        1.0
    } else {
        inside as f64 / total as f64
    }
}
