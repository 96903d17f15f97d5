//! End-to-end analysis from raw inputs to a stored, ranked run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deviation::{
    compute_indicators, daily_stats_measured, daily_stats_simulated, summary_statistics, DailyVoltageStats,
    IndicatorMatrix, SummaryStats,
};
use crate::error::{Error, Result};
use crate::grid::{load_network, Network, PerUnitBase};
use crate::ingest::{clean, hourly_power, parse_energy_csv, parse_voltage_csv, CleaningReport, CleaningRules};
use crate::par::Execution;
use crate::powerflow::{solve_series_with, LoadSnapshot, SolverConfig};
use crate::ranking::{build_candidates, CandidateRecord, ExclusionWindow, PatternParams};
use crate::store::{AnalysisStore, InputDigest, NetworkRef, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// IANA name of the zone that defines day boundaries.
    pub timezone: String,
    /// Used when the energy stream has no reactive column.
    pub power_factor: f64,
    pub min_samples_per_day: usize,
    /// Plausible measured voltage range in multiples of nominal.
    pub voltage_window: (f64, f64),
    pub gap_threshold_hours: i64,
    pub solver: SolverConfig,
    pub pattern: PatternParams,
    pub exclusions: Vec<ExclusionWindow>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        let rules = CleaningRules::default();
        AnalysisOptions {
            timezone: "UTC".into(),
            power_factor: 0.95,
            min_samples_per_day: rules.min_samples_per_day,
            voltage_window: rules.voltage_window,
            gap_threshold_hours: rules.gap_threshold.num_hours(),
            solver: SolverConfig::default(),
            pattern: PatternParams::default(),
            exclusions: Vec::new(),
        }
    }
}

impl AnalysisOptions {
    pub fn tz(&self) -> Result<Tz> {
        self.timezone
            .parse()
            .map_err(|_| Error::Config(format!("unknown timezone `{}`", self.timezone)))
    }

    fn check(&self) -> Result<()> {
        self.tz()?;
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Config(format!("power_factor must be in (0, 1], got {}", self.power_factor)));
        }
        let (lo, hi) = self.voltage_window;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("voltage_window must satisfy 0 < lo < hi, got ({lo}, {hi})")));
        }
        if self.gap_threshold_hours <= 0 {
            return Err(Error::Config("gap_threshold_hours must be positive".into()));
        }
        if !(self.pattern.threshold > 0.0) {
            return Err(Error::Config("pattern threshold must be positive".into()));
        }
        if !(self.solver.tolerance > 0.0) || self.solver.max_iterations == 0 {
            return Err(Error::Config("solver needs tolerance > 0 and max_iterations >= 1".into()));
        }
        Ok(())
    }

    /// Cleaning rules with each meter's nominal voltage taken from its bus.
    pub fn cleaning_rules(&self, network: &Network) -> Result<CleaningRules> {
        let mut nominal_v = BTreeMap::new();
        for (m, meter) in network.meters().iter().enumerate() {
            let bus = &network.buses()[network.meter_bus(m)];
            let v = bus
                .v_nominal
                .ok_or_else(|| Error::MissingNominalVoltage(bus.id.clone()))?;
            nominal_v.insert(meter.id.clone(), v);
        }
        Ok(CleaningRules {
            nominal_v,
            voltage_window: self.voltage_window,
            gap_threshold: Duration::hours(self.gap_threshold_hours),
            min_samples_per_day: self.min_samples_per_day,
            timezone: self.tz()?,
            ..CleaningRules::default()
        })
    }
}

/// Everything computed from one network and measurement set.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub matrix: IndicatorMatrix,
    pub summary: SummaryStats,
    pub daily_stats: Vec<DailyVoltageStats>,
    /// Every scored meter, ranked, with pattern labels.
    pub ranking: Vec<CandidateRecord>,
    pub cleaning: CleaningReport,
    pub rejected_rows: usize,
    /// Meters present in the readings but not in the network; ignored.
    pub unknown_meters: BTreeSet<String>,
    pub hours: usize,
    pub nonconverged_hours: Vec<DateTime<Utc>>,
    pub loadflow_computed_at: DateTime<Utc>,
}

/// Hourly snapshots over every hour with at least one energy reading.
/// Meters without a reading in an hour are listed as missing.
pub fn hourly_snapshots(
    network: &Network,
    series: &BTreeMap<String, crate::ingest::MeterSeries>,
    power_factor: f64,
) -> Vec<LoadSnapshot> {
    let mut hours: BTreeMap<DateTime<Utc>, LoadSnapshot> = BTreeMap::new();
    for meter in network.meters() {
        let Some(s) = series.get(&meter.id) else { continue };
        for (ts, load) in hourly_power(s, power_factor) {
            hours
                .entry(ts)
                .or_insert_with(|| LoadSnapshot::new(ts))
                .loads
                .insert(meter.id.clone(), load);
        }
    }
    for snap in hours.values_mut() {
        for meter in network.meters() {
            if !snap.loads.contains_key(&meter.id) {
                snap.missing.insert(meter.id.clone());
            }
        }
    }
    hours.into_values().collect()
}

/// Runs every compute stage in memory. Errors carry the stage name.
pub fn analyze(
    network: &Network,
    energy_csv: &str,
    voltage_csv: &str,
    options: &AnalysisOptions,
    exec: Execution,
) -> Result<Analysis> {
    options.check()?;
    let tz = options.tz()?;

    let rules = options.cleaning_rules(network).map_err(|e| e.at_stage("ingest"))?;
    let energy = parse_energy_csv(energy_csv).map_err(|e| e.at_stage("ingest"))?;
    let voltage = parse_voltage_csv(voltage_csv).map_err(|e| e.at_stage("ingest"))?;
    let rejected_rows = energy.rejected.len() + voltage.rejected.len();
    let unknown_meters: BTreeSet<String> = energy
        .rows
        .iter()
        .map(|r| &r.meter_id)
        .chain(voltage.rows.iter().map(|r| &r.meter_id))
        .filter(|m| network.meter_index(m).is_none())
        .cloned()
        .collect();
    let (series, cleaning) = clean(
        energy.rows.into_iter().filter(|r| !unknown_meters.contains(&r.meter_id)).collect(),
        voltage.rows.into_iter().filter(|r| !unknown_meters.contains(&r.meter_id)).collect(),
        &rules,
    );

    let snapshots = hourly_snapshots(network, &series, options.power_factor);
    let pu = network
        .clone()
        .to_per_unit(PerUnitBase::default())
        .map_err(|e| e.at_stage("loadflow"))?;
    let solutions =
        solve_series_with(&pu, &snapshots, &options.solver, exec).map_err(|e| e.at_stage("loadflow"))?;
    let loadflow_computed_at = Utc::now();
    let nonconverged_hours = solutions.iter().filter(|s| !s.converged).map(|s| s.timestamp).collect();

    let mut daily_stats = daily_stats_simulated(&solutions, network, tz);
    drop(solutions);
    let mut measured = Vec::new();
    for meter in network.meters() {
        if let Some(s) = series.get(&meter.id) {
            measured.extend(daily_stats_measured(s, rules.nominal_for(&meter.id), rules.min_samples_per_day, tz));
        }
    }
    let meters: Vec<String> = network.meters().iter().map(|m| m.id.clone()).collect();
    let matrix = compute_indicators(&daily_stats, &measured, &meters);
    let summary = summary_statistics(&matrix);
    daily_stats.extend(measured);
    daily_stats.sort_by(|a, b| (&a.meter_id, a.day, a.source).cmp(&(&b.meter_id, b.day, b.source)));

    let ranking = build_candidates(&matrix, &options.exclusions, network, meters.len().max(1), &options.pattern)
        .map_err(|e| e.at_stage("ranking"))?;

    Ok(Analysis {
        matrix,
        summary,
        daily_stats,
        ranking,
        cleaning,
        rejected_rows,
        unknown_meters,
        hours: snapshots.len(),
        nonconverged_hours,
        loadflow_computed_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: PathBuf,
    pub energy: PathBuf,
    pub voltage: PathBuf,
    /// Directory that receives one subdirectory per run.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.network, &mut config.energy, &mut config.voltage, &mut config.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

fn read_input(role: &str, path: &Path) -> Result<(String, InputDigest)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {role} file {}: {e}", path.display())))?;
    let digest = InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: hex_digest(text.as_bytes()),
    };
    Ok((text, digest))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run id derived from input contents and analysis options only, so the
/// same data under other paths maps to the same run.
pub fn run_id(inputs: &[InputDigest], options: &AnalysisOptions) -> String {
    let mut h = Sha256::new();
    for i in inputs {
        h.update(i.role.as_bytes());
        h.update(b"=");
        h.update(i.sha256.as_bytes());
        h.update(b"\n");
    }
    h.update(serde_json::to_vec(options).expect("options serialize"));
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    format!("run-{}", &hex[..12])
}

/// Directory the run for `config` lives in, from input digests alone.
pub fn locate_run(config: &PipelineConfig) -> Result<PathBuf> {
    let mut inputs = Vec::new();
    for (role, path) in [("network", &config.network), ("energy", &config.energy), ("voltage", &config.voltage)] {
        inputs.push(read_input(role, path)?.1);
    }
    Ok(config.out.join(run_id(&inputs, &config.analysis)))
}

/// Reads the inputs, analyzes them and persists the store under
/// `config.out`. Unreadable inputs fail before any computation.
pub fn run_pipeline(config: &PipelineConfig, exec: Execution) -> Result<(AnalysisStore, PathBuf)> {
    config.analysis.check()?;
    let (network_text, network_digest) = read_input("network", &config.network)?;
    let (energy_text, energy_digest) = read_input("energy", &config.energy)?;
    let (voltage_text, voltage_digest) = read_input("voltage", &config.voltage)?;

    let network = load_network(&network_text).map_err(|e| e.at_stage("network"))?;
    let analysis = analyze(&network, &energy_text, &voltage_text, &config.analysis, exec)?;

    let inputs = vec![network_digest.clone(), energy_digest, voltage_digest];
    let id = run_id(&inputs, &config.analysis);
    let store = AnalysisStore::from_analysis(
        id,
        NetworkRef::new(&network, network_digest.path.clone(), network_digest.sha256.clone()),
        analysis,
        Provenance::new(inputs, serde_json::to_value(config)?),
        config.analysis.clone(),
    );
    let dir = store.save(&config.out).map_err(|e| e.at_stage("persist"))?;
    Ok((store, dir))
}
