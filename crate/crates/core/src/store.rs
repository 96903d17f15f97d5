//! On-disk analysis store: one directory per run holding plain CSV and JSON
//! documents.
//!
//! ```text
//! <root>/<run_id>/
//!   manifest.json         run metadata, summary, provenance, options
//!   matrix_dv_mean.csv    indicator layers (meters × days)
//!   matrix_dv_min.csv
//!   matrix_dv_max.csv
//!   daily_stats.csv       simulated and measured daily statistics
//!   candidates.json       full ranking at full precision
//!   candidates.csv        full ranking with triage, 4 decimals
//!   annotations.json      triage annotations with version tokens
//!   exclusions.json       exclusion windows with version token
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::deviation::{DailyVoltageStats, Indicator, IndicatorMatrix, SummaryStats, Source};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::ingest::CleaningReport;
use crate::pipeline::{Analysis, AnalysisOptions};
use crate::ranking::{build_candidates, export_candidates, CandidateRecord, ExclusionWindow, TerminalLookup, Triage};

pub const MANIFEST: &str = "manifest.json";
pub const DAILY_STATS: &str = "daily_stats.csv";
pub const CANDIDATES_JSON: &str = "candidates.json";
pub const CANDIDATES_CSV: &str = "candidates.csv";
pub const ANNOTATIONS: &str = "annotations.json";
pub const EXCLUSIONS: &str = "exclusions.json";
const FORMAT_VERSION: u32 = 1;

pub fn matrix_file(indicator: Indicator) -> String {
    format!("matrix_{}.csv", indicator.name())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// The network a run was computed on: where it came from and the meter
/// attachments the service needs without reloading it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRef {
    pub path: String,
    pub sha256: String,
    /// Meter ids in model order.
    pub meters: Vec<String>,
    /// Meter id → bus id.
    pub terminals: BTreeMap<String, String>,
}

impl NetworkRef {
    pub fn new(network: &Network, path: String, sha256: String) -> Self {
        NetworkRef {
            path,
            sha256,
            meters: network.meters().iter().map(|m| m.id.clone()).collect(),
            terminals: network
                .meters()
                .iter()
                .map(|m| (m.id.clone(), m.bus.clone()))
                .collect(),
        }
    }
}

impl TerminalLookup for NetworkRef {
    fn terminal(&self, meter_id: &str) -> Option<&str> {
        self.terminals.get(meter_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    pub loadflow_computed_at: DateTime<Utc>,
    pub ranking_computed_at: DateTime<Utc>,
}

impl Provenance {
    /// Timestamps are filled in by [`AnalysisStore::from_analysis`].
    pub fn new(inputs: Vec<InputDigest>, config: serde_json::Value) -> Self {
        let now = Utc::now();
        Provenance {
            inputs,
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: now,
            loadflow_computed_at: now,
            ranking_computed_at: now,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub triage: Triage,
    pub comment: String,
    pub updated_at: DateTime<Utc>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub hours: usize,
    pub nonconverged_hours: Vec<DateTime<Utc>>,
    pub rejected_rows: usize,
    pub unknown_meters: BTreeSet<String>,
    pub cleaning: CleaningReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisStore {
    pub run_id: String,
    pub network: NetworkRef,
    pub matrix: IndicatorMatrix,
    pub summary: SummaryStats,
    pub daily_stats: Vec<DailyVoltageStats>,
    /// Every scored meter in rank order under the current exclusions.
    pub ranking: Vec<CandidateRecord>,
    pub annotations: BTreeMap<String, Annotation>,
    pub exclusions: Vec<ExclusionWindow>,
    pub exclusions_version: u64,
    pub options: AnalysisOptions,
    pub diagnostics: RunDiagnostics,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    run_id: String,
    network: NetworkRef,
    summary: SummaryStats,
    options: AnalysisOptions,
    diagnostics: RunDiagnostics,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationsDoc {
    annotations: BTreeMap<String, Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExclusionsDoc {
    version: u64,
    windows: Vec<ExclusionWindow>,
}

/// Row of the run listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub meters: usize,
    pub first_day: Option<NaiveDate>,
    pub last_day: Option<NaiveDate>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<String> {
    fs::read_to_string(dir.join(name)).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("{}", dir.join(name).display())),
        _ => Error::Io(e),
    })
}

const DAILY_HEADER: [&str; 7] = ["meter_id", "day", "source", "v_min", "v_mean", "v_max", "sample_count"];

fn daily_stats_csv(stats: &[DailyVoltageStats]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(DAILY_HEADER).expect("in-memory write");
    for s in stats {
        let source = match s.source {
            Source::Simulated => "simulated",
            Source::Measured => "measured",
        };
        w.write_record([
            s.meter_id.clone(),
            s.day.to_string(),
            source.to_string(),
            s.v_min.to_string(),
            s.v_mean.to_string(),
            s.v_max.to_string(),
            s.sample_count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn parse_daily_stats(text: &str) -> Result<Vec<DailyVoltageStats>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(DAILY_HEADER) {
        return Err(Error::Parse(format!("{DAILY_STATS} has an unexpected header")));
    }
    let num = |f: &str| f.parse::<f64>().map_err(|e| Error::Parse(format!("bad number `{f}`: {e}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(DailyVoltageStats {
            meter_id: rec[0].to_string(),
            day: rec[1]
                .parse()
                .map_err(|e| Error::Parse(format!("bad day `{}`: {e}", &rec[1])))?,
            source: match &rec[2] {
                "simulated" => Source::Simulated,
                "measured" => Source::Measured,
                other => return Err(Error::Parse(format!("bad source `{other}`"))),
            },
            v_min: num(&rec[3])?,
            v_mean: num(&rec[4])?,
            v_max: num(&rec[5])?,
            sample_count: rec[6]
                .parse()
                .map_err(|e| Error::Parse(format!("bad count `{}`: {e}", &rec[6])))?,
        });
    }
    Ok(out)
}

impl AnalysisStore {
    pub fn from_analysis(
        run_id: String,
        network: NetworkRef,
        analysis: Analysis,
        mut provenance: Provenance,
        options: AnalysisOptions,
    ) -> Self {
        provenance.loadflow_computed_at = analysis.loadflow_computed_at;
        provenance.ranking_computed_at = Utc::now();
        AnalysisStore {
            run_id,
            network,
            matrix: analysis.matrix,
            summary: analysis.summary,
            daily_stats: analysis.daily_stats,
            ranking: analysis.ranking,
            annotations: BTreeMap::new(),
            exclusions: options.exclusions.clone(),
            exclusions_version: 0,
            options,
            diagnostics: RunDiagnostics {
                hours: analysis.hours,
                nonconverged_hours: analysis.nonconverged_hours,
                rejected_rows: analysis.rejected_rows,
                unknown_meters: analysis.unknown_meters,
                cleaning: analysis.cleaning,
            },
            provenance,
        }
    }

    /// The ranking with triage and comments merged in.
    pub fn candidates(&self) -> Vec<CandidateRecord> {
        self.ranking
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(a) = self.annotations.get(&r.meter_id) {
                    r.triage = a.triage;
                    r.comment = a.comment.clone();
                }
                r
            })
            .collect()
    }

    pub fn top_candidates(&self, top_k: usize) -> Vec<CandidateRecord> {
        let mut c = self.candidates();
        c.truncate(top_k);
        c
    }

    pub fn annotation_version(&self, meter_id: &str) -> u64 {
        self.annotations.get(meter_id).map_or(0, |a| a.version)
    }

    pub fn is_ranked(&self, meter_id: &str) -> bool {
        self.ranking.iter().any(|r| r.meter_id == meter_id)
    }

    /// Records a triage decision. With `expected_version`, the write only
    /// succeeds if the meter's annotation is still at that version.
    pub fn set_triage(
        &mut self,
        meter_id: &str,
        triage: Triage,
        comment: String,
        expected_version: Option<u64>,
        now: DateTime<Utc>,
    ) -> Result<Annotation> {
        if !self.is_ranked(meter_id) {
            return Err(Error::UnknownMeter(meter_id.to_string()));
        }
        let current = self.annotation_version(meter_id);
        if let Some(expected) = expected_version {
            if expected != current {
                return Err(Error::Conflict { expected, current });
            }
        }
        let a = Annotation {
            triage,
            comment,
            updated_at: now,
            version: current + 1,
        };
        self.annotations.insert(meter_id.to_string(), a.clone());
        Ok(a)
    }

    /// Replaces the exclusion windows and re-ranks from the stored matrix.
    /// Load flows are not touched.
    pub fn set_exclusions(
        &mut self,
        mut windows: Vec<ExclusionWindow>,
        expected_version: Option<u64>,
        now: DateTime<Utc>,
    ) -> Result<u64> {
        if let Some(expected) = expected_version {
            if expected != self.exclusions_version {
                return Err(Error::Conflict {
                    expected,
                    current: self.exclusions_version,
                });
            }
        }
        windows.sort();
        windows.dedup();
        self.ranking = build_candidates(
            &self.matrix,
            &windows,
            &self.network,
            self.network.meters.len().max(1),
            &self.options.pattern,
        )?;
        self.exclusions = windows;
        self.exclusions_version += 1;
        self.provenance.ranking_computed_at = now;
        Ok(self.exclusions_version)
    }

    pub fn run_info(&self) -> RunInfo {
        RunInfo {
            run_id: self.run_id.clone(),
            created_at: self.provenance.created_at,
            meters: self.matrix.meters().len(),
            first_day: self.matrix.days().first().copied(),
            last_day: self.matrix.days().last().copied(),
        }
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            run_id: self.run_id.clone(),
            network: self.network.clone(),
            summary: self.summary,
            options: self.options.clone(),
            diagnostics: self.diagnostics.clone(),
            provenance: self.provenance.clone(),
        }
    }

    fn write_all(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest())?)?;
        for ind in Indicator::ALL {
            fs::write(dir.join(matrix_file(ind)), self.matrix.to_csv(ind))?;
        }
        fs::write(dir.join(DAILY_STATS), daily_stats_csv(&self.daily_stats))?;
        self.write_ranking(dir, fs::write)?;
        self.write_annotations(dir, fs::write)?;
        Ok(())
    }

    fn write_ranking<E: Into<Error>>(
        &self,
        dir: &Path,
        write: impl Fn(PathBuf, String) -> std::result::Result<(), E>,
    ) -> Result<()> {
        write(dir.join(CANDIDATES_JSON), serde_json::to_string_pretty(&self.ranking)?).map_err(Into::into)?;
        write(dir.join(CANDIDATES_CSV), export_candidates(&self.candidates())).map_err(Into::into)?;
        let doc = ExclusionsDoc {
            version: self.exclusions_version,
            windows: self.exclusions.clone(),
        };
        write(dir.join(EXCLUSIONS), serde_json::to_string_pretty(&doc)?).map_err(Into::into)?;
        Ok(())
    }

    fn write_annotations<E: Into<Error>>(
        &self,
        dir: &Path,
        write: impl Fn(PathBuf, String) -> std::result::Result<(), E>,
    ) -> Result<()> {
        let doc = AnnotationsDoc {
            annotations: self.annotations.clone(),
        };
        write(dir.join(ANNOTATIONS), serde_json::to_string_pretty(&doc)?).map_err(Into::into)
    }

    /// Writes the whole store to `<root>/<run_id>`, replacing an earlier
    /// copy. Files are staged in a scratch directory first so a failed
    /// write never leaves a partial run behind.
    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        fs::create_dir_all(root)?;
        let dir = root.join(&self.run_id);
        let stage = root.join(format!(".{}.staging-{}", self.run_id, std::process::id()));
        if stage.exists() {
            fs::remove_dir_all(&stage)?;
        }
        fs::create_dir(&stage)?;
        if let Err(e) = self.write_all(&stage) {
            let _ = fs::remove_dir_all(&stage);
            return Err(e);
        }
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&stage, &dir)?;
        Ok(dir)
    }

    /// Rewrites the annotation document and the candidate CSV in place.
    pub fn persist_annotations(&self, dir: &Path) -> Result<()> {
        self.write_annotations(dir, |p, s| write_atomic(&p, &s))?;
        write_atomic(&dir.join(CANDIDATES_CSV), &export_candidates(&self.candidates()))
    }

    /// Rewrites the ranking, exclusions and manifest in place.
    pub fn persist_ranking(&self, dir: &Path) -> Result<()> {
        self.write_ranking(dir, |p, s| write_atomic(&p, &s))?;
        write_atomic(&dir.join(MANIFEST), &serde_json::to_string_pretty(&self.manifest())?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&read(dir, MANIFEST)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "store format {} not supported",
                manifest.format_version
            )));
        }
        let layers: Vec<String> = Indicator::ALL
            .iter()
            .map(|&i| read(dir, &matrix_file(i)))
            .collect::<Result<_>>()?;
        let matrix = IndicatorMatrix::from_csv(&layers[0], &layers[1], &layers[2])?;
        let daily_stats = parse_daily_stats(&read(dir, DAILY_STATS)?)?;
        let ranking: Vec<CandidateRecord> = serde_json::from_str(&read(dir, CANDIDATES_JSON)?)?;
        let annotations: AnnotationsDoc = serde_json::from_str(&read(dir, ANNOTATIONS)?)?;
        let exclusions: ExclusionsDoc = serde_json::from_str(&read(dir, EXCLUSIONS)?)?;
        Ok(AnalysisStore {
            run_id: manifest.run_id,
            network: manifest.network,
            matrix,
            summary: manifest.summary,
            daily_stats,
            ranking,
            annotations: annotations.annotations,
            exclusions: exclusions.windows,
            exclusions_version: exclusions.version,
            options: manifest.options,
            diagnostics: manifest.diagnostics,
            provenance: manifest.provenance,
        })
    }
}

/// Runs under `root`, sorted by run id. Directories without a manifest
/// are skipped.
pub fn list_runs(root: &Path) -> Result<Vec<RunInfo>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if !path.is_dir() || !path.join(MANIFEST).exists() {
            continue;
        }
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')) {
            continue;
        }
        out.push(AnalysisStore::load(&path)?.run_info());
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}
