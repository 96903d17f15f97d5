//! Per-meter severity from the daily-minimum deviation layer, candidate
//! ranking, temporal pattern labels and the candidate CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::deviation::{Indicator, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::grid::Network;

pub const DEFAULT_TOP_K: usize = 15;

/// Half-open day range `[start, end)` left out of scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct ExclusionWindow {
    start: NaiveDate,
    end: NaiveDate,
}

#[derive(Deserialize)]
struct RawWindow {
    start: NaiveDate,
    end: NaiveDate,
}

impl TryFrom<RawWindow> for ExclusionWindow {
    type Error = Error;

    fn try_from(raw: RawWindow) -> Result<Self> {
        ExclusionWindow::new(raw.start, raw.end)
    }
}

impl ExclusionWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidArgument(format!(
                "exclusion window needs start < end, got {start}..{end}"
            )));
        }
        Ok(ExclusionWindow { start, end })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day < self.end
    }
}

impl FromStr for ExclusionWindow {
    type Err = Error;

    /// `YYYY-MM-DD..YYYY-MM-DD`
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::InvalidArgument(format!("expected <start>..<end>, got `{s}`")))?;
        let parse = |d: &str| {
            NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|e| Error::InvalidArgument(format!("bad date `{d}`: {e}")))
        };
        ExclusionWindow::new(parse(a)?, parse(b)?)
    }
}

pub fn is_excluded(day: NaiveDate, exclusions: &[ExclusionWindow]) -> bool {
    exclusions.iter().any(|w| w.contains(day))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Severity {
    pub dv_min_mean: f64,
    /// Signed maximum of the daily-minimum deviation.
    pub dv_min_max: f64,
    pub present_days: usize,
}

/// Mean and signed maximum of each meter's present daily-minimum deviations
/// outside the exclusion windows. Meters with no such cell are absent.
pub fn severity_scores(
    matrix: &IndicatorMatrix,
    exclusions: &[ExclusionWindow],
) -> BTreeMap<String, Severity> {
    let included: Vec<bool> = matrix
        .days()
        .iter()
        .map(|&d| !is_excluded(d, exclusions))
        .collect();
    let mut out = BTreeMap::new();
    for (m, meter) in matrix.meters().iter().enumerate() {
        let values: Vec<f64> = matrix
            .row(Indicator::Min, m)
            .iter()
            .zip(&included)
            .filter_map(|(c, &inc)| c.filter(|_| inc))
            .collect();
        if values.is_empty() {
            continue;
        }
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        out.insert(
            meter.clone(),
            Severity {
                dv_min_mean: mean.min(max),
                dv_min_max: max,
                present_days: values.len(),
            },
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "date", rename_all = "snake_case")]
pub enum Pattern {
    Persistent,
    Ceased(NaiveDate),
    Onset(NaiveDate),
    Intermittent,
    Quiet,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Persistent => f.write_str("persistent"),
            Pattern::Ceased(d) => write!(f, "ceased:{d}"),
            Pattern::Onset(d) => write!(f, "onset:{d}"),
            Pattern::Intermittent => f.write_str("intermittent"),
            Pattern::Quiet => f.write_str("quiet"),
        }
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let date = |d: &str| {
            NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("bad pattern date `{d}`: {e}")))
        };
        match s.split_once(':') {
            Some(("ceased", d)) => Ok(Pattern::Ceased(date(d)?)),
            Some(("onset", d)) => Ok(Pattern::Onset(date(d)?)),
            None if s == "persistent" => Ok(Pattern::Persistent),
            None if s == "intermittent" => Ok(Pattern::Intermittent),
            None if s == "quiet" => Ok(Pattern::Quiet),
            _ => Err(Error::Parse(format!("unknown pattern `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    /// A day is hot when its deviation exceeds this, in p.u.
    pub threshold: f64,
    /// Hot fraction both halves need for `persistent`.
    pub p_hi: f64,
    /// Quiet days required after the last (or before the first) hot day.
    pub tail_days: usize,
    /// Hot days required for `ceased` / `onset`.
    pub min_hot: usize,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            threshold: 0.1,
            p_hi: 0.5,
            tail_days: 21,
            min_hot: 5,
        }
    }
}

fn hot_fraction(hot: &[bool], values: &[Option<f64>]) -> f64 {
    let present = values.iter().filter(|v| v.is_some()).count();
    if present == 0 {
        return 0.0;
    }
    hot.iter().filter(|&&h| h).count() as f64 / present as f64
}

/// Labels a daily series. Rules are tried in order: quiet (no hot day),
/// persistent, ceased, onset, and intermittent otherwise. Missing days are
/// never hot.
pub fn classify_pattern(days: &[NaiveDate], values: &[Option<f64>], params: &PatternParams) -> Pattern {
    assert_eq!(days.len(), values.len(), "series axes differ");
    let n = values.len();
    let hot: Vec<bool> = values
        .iter()
        .map(|v| v.is_some_and(|x| x > params.threshold))
        .collect();
    let hot_count = hot.iter().filter(|&&h| h).count();
    let (Some(first), Some(last)) = (hot.iter().position(|&h| h), hot.iter().rposition(|&h| h)) else {
        return Pattern::Quiet;
    };

    let mid = n / 2;
    if mid > 0
        && hot_fraction(&hot[..mid], &values[..mid]) >= params.p_hi
        && hot_fraction(&hot[mid..], &values[mid..]) >= params.p_hi
    {
        return Pattern::Persistent;
    }
    if hot_count >= params.min_hot && (n - 1) - last >= params.tail_days {
        return Pattern::Ceased(days[last]);
    }
    if hot_count >= params.min_hot && first >= params.tail_days {
        return Pattern::Onset(days[first]);
    }
    Pattern::Intermittent
}

/// A meter's daily-minimum series with excluded days blanked and the
/// excluded head and tail of the axis trimmed.
pub fn included_series(
    matrix: &IndicatorMatrix,
    meter: usize,
    exclusions: &[ExclusionWindow],
) -> (Vec<NaiveDate>, Vec<Option<f64>>) {
    let days = matrix.days();
    let keep: Vec<bool> = days.iter().map(|&d| !is_excluded(d, exclusions)).collect();
    let (Some(lo), Some(hi)) = (keep.iter().position(|&k| k), keep.iter().rposition(|&k| k)) else {
        return (Vec::new(), Vec::new());
    };
    let row = matrix.row(Indicator::Min, meter);
    (
        days[lo..=hi].to_vec(),
        (lo..=hi).map(|i| row[i].filter(|_| keep[i])).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Triage {
    Unreviewed,
    FieldInspectionCandidate,
    ValidationCandidate,
    Discarded,
}

impl Triage {
    pub fn name(self) -> &'static str {
        match self {
            Triage::Unreviewed => "unreviewed",
            Triage::FieldInspectionCandidate => "field_inspection_candidate",
            Triage::ValidationCandidate => "validation_candidate",
            Triage::Discarded => "discarded",
        }
    }
}

impl FromStr for Triage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Triage::Unreviewed,
            Triage::FieldInspectionCandidate,
            Triage::ValidationCandidate,
            Triage::Discarded,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown triage status `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub rank: usize,
    pub meter_id: String,
    pub terminal_id: String,
    pub dv_min_mean: f64,
    pub dv_min_max: f64,
    pub pattern: Option<Pattern>,
    pub triage: Triage,
    pub comment: String,
}

/// Resolves the terminal (bus) a meter is attached to.
pub trait TerminalLookup {
    fn terminal(&self, meter_id: &str) -> Option<&str>;
}

impl TerminalLookup for Network {
    fn terminal(&self, meter_id: &str) -> Option<&str> {
        self.terminal_of(meter_id).ok()
    }
}

impl TerminalLookup for BTreeMap<String, String> {
    fn terminal(&self, meter_id: &str) -> Option<&str> {
        self.get(meter_id).map(String::as_str)
    }
}

/// Top `top_k` meters by signed maximum, ties broken by mean (descending)
/// and then meter id. Patterns are left unset; triage starts unreviewed.
pub fn rank_candidates(
    scores: &BTreeMap<String, Severity>,
    terminals: &impl TerminalLookup,
    top_k: usize,
) -> Result<Vec<CandidateRecord>> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let mut ordered: Vec<(&String, &Severity)> = scores.iter().collect();
    ordered.sort_by(|(ma, a), (mb, b)| {
        b.dv_min_max
            .total_cmp(&a.dv_min_max)
            .then(b.dv_min_mean.total_cmp(&a.dv_min_mean))
            .then(ma.cmp(mb))
    });
    ordered
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, (meter, s))| {
            let terminal = terminals
                .terminal(meter)
                .ok_or_else(|| Error::UnknownMeter(meter.clone()))?;
            Ok(CandidateRecord {
                rank: i + 1,
                meter_id: meter.clone(),
                terminal_id: terminal.to_string(),
                dv_min_mean: s.dv_min_mean,
                dv_min_max: s.dv_min_max,
                pattern: None,
                triage: Triage::Unreviewed,
                comment: String::new(),
            })
        })
        .collect()
}

/// Ranks candidates and labels their patterns.
pub fn build_candidates(
    matrix: &IndicatorMatrix,
    exclusions: &[ExclusionWindow],
    terminals: &impl TerminalLookup,
    top_k: usize,
    params: &PatternParams,
) -> Result<Vec<CandidateRecord>> {
    let scores = severity_scores(matrix, exclusions);
    let mut records = rank_candidates(&scores, terminals, top_k)?;
    for r in &mut records {
        let m = matrix.meter_index(&r.meter_id).expect("scored meter is in matrix");
        let (days, values) = included_series(matrix, m, exclusions);
        r.pattern = Some(classify_pattern(&days, &values, params));
    }
    Ok(records)
}

pub const CANDIDATE_HEADER: [&str; 8] = [
    "rank",
    "meter_id",
    "terminal_id",
    "dv_min_mean",
    "dv_min_max",
    "pattern",
    "triage",
    "comment",
];

/// Candidate table as CSV with indicators at 4 decimal places.
pub fn export_candidates(records: &[CandidateRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CANDIDATE_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.rank.to_string(),
            r.meter_id.clone(),
            r.terminal_id.clone(),
            format!("{:.4}", r.dv_min_mean),
            format!("{:.4}", r.dv_min_max),
            r.pattern.map(|p| p.to_string()).unwrap_or_default(),
            r.triage.name().to_string(),
            r.comment.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
