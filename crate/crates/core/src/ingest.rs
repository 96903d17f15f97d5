//! Smart-meter readings: CSV parsing, cleaning and hourly load derivation.
//!
//! Energy readings are hourly kWh totals and so represent mean power over
//! the hour. Voltage readings are instantaneous samples at uneven instants,
//! roughly one per meter and hour, with frequent dropouts.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Phase, DEFAULT_PHASE_VOLTAGE};
use crate::powerflow::MeterLoad;

pub const ENERGY_HEADER: [&str; 3] = ["meter_id", "hour_start", "energy_kwh"];
pub const ENERGY_REACTIVE: &str = "reactive_kvarh";
pub const VOLTAGE_HEADER: [&str; 3] = ["meter_id", "timestamp", "voltage_v"];
pub const VOLTAGE_PHASE: &str = "phase";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    pub meter_id: String,
    pub hour_start: DateTime<Utc>,
    pub energy_kwh: f64,
    pub reactive_kvarh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageReading {
    pub meter_id: String,
    pub timestamp: DateTime<Utc>,
    pub voltage_v: f64,
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the source document.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub rejected: Vec<RowError>,
}

fn check_header(found: &csv::StringRecord, required: &[&str], optional: &str) -> Result<bool> {
    let fields: Vec<&str> = found.iter().collect();
    let base_ok = fields.len() >= required.len() && fields[..required.len()] == *required;
    match (base_ok, &fields[required.len().min(fields.len())..]) {
        (true, []) => Ok(false),
        (true, [extra]) if *extra == optional => Ok(true),
        _ => Err(Error::Parse(format!(
            "expected header `{}[,{}]`, found `{}`",
            required.join(","),
            optional,
            fields.join(",")
        ))),
    }
}

fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("bad {what} `{s}`"))
}

fn parse_rows<T>(
    content: &str,
    required: &[&str],
    optional: &str,
    mut row: impl FnMut(&csv::StringRecord, bool) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(content.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(format!("unreadable header: {e}")))?
        .clone();
    let has_optional = check_header(&header, required, optional)?;
    let width = header.len();

    let mut out = Parsed {
        rows: Vec::new(),
        rejected: Vec::new(),
    };
    for record in reader.records() {
        match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != width {
                    out.rejected.push(RowError {
                        line,
                        message: format!("expected {width} fields, found {}", rec.len()),
                    });
                    continue;
                }
                match row(&rec, has_optional) {
                    Ok(r) => out.rows.push(r),
                    Err(message) => out.rejected.push(RowError { line, message }),
                }
            }
            Err(e) => out.rejected.push(RowError {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Parses `meter_id,hour_start,energy_kwh[,reactive_kvarh]`.
pub fn parse_energy_csv(content: &str) -> Result<Parsed<EnergyReading>> {
    parse_rows(content, &ENERGY_HEADER, ENERGY_REACTIVE, |rec, reactive| {
        let energy_kwh = parse_f64(&rec[2], "energy")?;
        if energy_kwh < 0.0 {
            return Err(format!("negative energy {energy_kwh}"));
        }
        let reactive_kvarh = match reactive {
            true if !rec[3].trim().is_empty() => Some(parse_f64(&rec[3], "reactive energy")?),
            _ => None,
        };
        Ok(EnergyReading {
            meter_id: rec[0].trim().to_string(),
            hour_start: parse_time(&rec[1])?,
            energy_kwh,
            reactive_kvarh,
        })
    })
}

/// Parses `meter_id,timestamp,voltage_v[,phase]`.
pub fn parse_voltage_csv(content: &str) -> Result<Parsed<VoltageReading>> {
    parse_rows(content, &VOLTAGE_HEADER, VOLTAGE_PHASE, |rec, with_phase| {
        let voltage_v = parse_f64(&rec[2], "voltage")?;
        if voltage_v <= 0.0 {
            return Err(format!("non-physical voltage {voltage_v}"));
        }
        let phase = match with_phase {
            true => match rec[3].trim() {
                "" => None,
                "a" | "A" => Some(Phase::A),
                "b" | "B" => Some(Phase::B),
                "c" | "C" => Some(Phase::C),
                other => return Err(format!("bad phase `{other}`")),
            },
            false => None,
        };
        Ok(VoltageReading {
            meter_id: rec[0].trim().to_string(),
            timestamp: parse_time(&rec[1])?,
            voltage_v,
            phase,
        })
    })
}

pub fn write_energy_csv(rows: &[EnergyReading]) -> String {
    let with_reactive = rows.iter().any(|r| r.reactive_kvarh.is_some());
    let mut out = ENERGY_HEADER.join(",");
    if with_reactive {
        out.push(',');
        out.push_str(ENERGY_REACTIVE);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{}",
            r.meter_id,
            r.hour_start.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            r.energy_kwh
        ));
        if with_reactive {
            out.push(',');
            if let Some(q) = r.reactive_kvarh {
                out.push_str(&q.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_voltage_csv(rows: &[VoltageReading]) -> String {
    let with_phase = rows.iter().any(|r| r.phase.is_some());
    let mut out = VOLTAGE_HEADER.join(",");
    if with_phase {
        out.push(',');
        out.push_str(VOLTAGE_PHASE);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{}",
            r.meter_id,
            r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            r.voltage_v
        ));
        if with_phase {
            out.push(',');
            if let Some(p) = r.phase {
                out.push_str(&p.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Calendar day of an instant in the analysis timezone.
pub fn local_day(ts: DateTime<Utc>, tz: Tz) -> NaiveDate {
    ts.with_timezone(&tz).date_naive()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningRules {
    /// Nominal phase voltage per meter; meters not listed use `default_nominal_v`.
    pub nominal_v: BTreeMap<String, f64>,
    pub default_nominal_v: f64,
    /// Plausible voltage window in multiples of nominal.
    pub voltage_window: (f64, f64),
    pub gap_threshold: Duration,
    /// Voltage samples a day needs to count as covered.
    pub min_samples_per_day: usize,
    pub timezone: Tz,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            nominal_v: BTreeMap::new(),
            default_nominal_v: DEFAULT_PHASE_VOLTAGE,
            voltage_window: (0.7, 1.3),
            gap_threshold: Duration::hours(24),
            min_samples_per_day: 4,
            timezone: Tz::UTC,
        }
    }
}

impl CleaningRules {
    pub fn nominal_for(&self, meter_id: &str) -> f64 {
        self.nominal_v
            .get(meter_id)
            .copied()
            .unwrap_or(self.default_nominal_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Energy,
    Voltage,
}

/// Interval `[start, end)` without readings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub meter_id: String,
    pub stream: Stream,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_rows: usize,
    pub output_rows: usize,
    pub duplicates: usize,
    pub out_of_range: usize,
    pub misaligned: usize,
    pub gaps: Vec<Gap>,
}

impl CleaningReport {
    pub fn dropped(&self) -> usize {
        self.duplicates + self.out_of_range + self.misaligned
    }

    pub fn merge(mut self, other: CleaningReport) -> Self {
        self.input_rows += other.input_rows;
        self.output_rows += other.output_rows;
        self.duplicates += other.duplicates;
        self.out_of_range += other.out_of_range;
        self.misaligned += other.misaligned;
        self.gaps.extend(other.gaps);
        self.gaps.sort_by(|a, b| {
            (&a.meter_id, a.stream, a.start).cmp(&(&b.meter_id, b.stream, b.start))
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of hours between the first and last energy reading that have one.
    pub energy_hours: f64,
    /// Fraction of days between the first and last voltage sample with at
    /// least the minimum sample count.
    pub voltage_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSeries {
    pub meter_id: String,
    pub energy: Vec<EnergyReading>,
    pub voltage: Vec<VoltageReading>,
    pub coverage: Coverage,
}

impl MeterSeries {
    /// Flattens back into reading lists, e.g. to re-clean.
    pub fn readings(&self) -> (Vec<EnergyReading>, Vec<VoltageReading>) {
        (self.energy.clone(), self.voltage.clone())
    }
}

fn is_on_the_hour(ts: &DateTime<Utc>) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

fn coverage(energy: &[EnergyReading], voltage: &[VoltageReading], rules: &CleaningRules) -> Coverage {
    let energy_hours = match (energy.first(), energy.last()) {
        (Some(a), Some(b)) => {
            let span = (b.hour_start - a.hour_start).num_hours() + 1;
            energy.len() as f64 / span as f64
        }
        _ => 0.0,
    };
    let voltage_days = match (voltage.first(), voltage.last()) {
        (Some(a), Some(b)) => {
            let first = local_day(a.timestamp, rules.timezone);
            let last = local_day(b.timestamp, rules.timezone);
            let span = (last - first).num_days() + 1;
            let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
            for v in voltage {
                *per_day.entry(local_day(v.timestamp, rules.timezone)).or_default() += 1;
            }
            let covered = per_day
                .values()
                .filter(|&&n| n >= rules.min_samples_per_day)
                .count();
            covered as f64 / span as f64
        }
        _ => 0.0,
    };
    Coverage {
        energy_hours,
        voltage_days,
    }
}

/// Cleans readings per meter: out-of-hour energy rows and implausible
/// voltages are dropped, duplicates (same meter and timestamp) collapse to
/// the first occurrence, and long gaps are recorded.
pub fn clean(
    energy: Vec<EnergyReading>,
    voltage: Vec<VoltageReading>,
    rules: &CleaningRules,
) -> (BTreeMap<String, MeterSeries>, CleaningReport) {
    let mut report = CleaningReport {
        input_rows: energy.len() + voltage.len(),
        ..CleaningReport::default()
    };

    let mut by_meter: BTreeMap<String, (Vec<EnergyReading>, Vec<VoltageReading>)> =
        BTreeMap::new();
    for e in energy {
        if !is_on_the_hour(&e.hour_start) {
            report.misaligned += 1;
            continue;
        }
        by_meter.entry(e.meter_id.clone()).or_default().0.push(e);
    }
    let (lo, hi) = rules.voltage_window;
    for v in voltage {
        let pu = v.voltage_v / rules.nominal_for(&v.meter_id);
        if !(lo..=hi).contains(&pu) {
            report.out_of_range += 1;
            continue;
        }
        by_meter.entry(v.meter_id.clone()).or_default().1.push(v);
    }

    let mut out = BTreeMap::new();
    for (meter_id, (mut e, mut v)) in by_meter {
        // stable: among equal timestamps the first input row stays first
        e.sort_by_key(|r| r.hour_start);
        v.sort_by_key(|r| r.timestamp);
        let (ne, nv) = (e.len(), v.len());
        e.dedup_by_key(|r| r.hour_start);
        v.dedup_by_key(|r| r.timestamp);
        report.duplicates += (ne - e.len()) + (nv - v.len());

        let hour = Duration::hours(1);
        for w in e.windows(2) {
            let start = w[0].hour_start + hour;
            if w[1].hour_start - start > rules.gap_threshold {
                report.gaps.push(Gap {
                    meter_id: meter_id.clone(),
                    stream: Stream::Energy,
                    start,
                    end: w[1].hour_start,
                });
            }
        }
        for w in v.windows(2) {
            if w[1].timestamp - w[0].timestamp > rules.gap_threshold {
                report.gaps.push(Gap {
                    meter_id: meter_id.clone(),
                    stream: Stream::Voltage,
                    start: w[0].timestamp,
                    end: w[1].timestamp,
                });
            }
        }

        report.output_rows += e.len() + v.len();
        let coverage = coverage(&e, &v, rules);
        out.insert(
            meter_id.clone(),
            MeterSeries {
                meter_id,
                energy: e,
                voltage: v,
                coverage,
            },
        );
    }
    (out, report)
}

/// Reactive power of `p` at lagging power factor `pf`.
pub fn reactive_from_pf(p: f64, pf: f64) -> f64 {
    p * pf.acos().tan()
}

/// Mean power per hour. Reactive power comes from the recorded reactive
/// energy or, when absent, from the power factor.
pub fn hourly_power(series: &MeterSeries, power_factor: f64) -> BTreeMap<DateTime<Utc>, MeterLoad> {
    series
        .energy
        .iter()
        .map(|r| {
            // kWh over one hour is mean kW
            let p_kw = r.energy_kwh;
            let q_kvar = r
                .reactive_kvarh
                .unwrap_or_else(|| reactive_from_pf(p_kw, power_factor));
            (r.hour_start, MeterLoad { p_kw, q_kvar })
        })
        .collect()
}
