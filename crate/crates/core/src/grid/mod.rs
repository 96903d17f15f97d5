//! Radial low-voltage network model.
//!
//! A [`GridModel`] is the raw, possibly inconsistent, content of a network
//! file. [`validate`] checks every structural invariant and reports all
//! failures; [`Network::from_model`] accepts only models that pass and
//! precomputes the tree ordering used by the load-flow sweep.

mod file;
mod per_unit;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use file::{load_network, parse_model, to_document, NetworkDocument};
pub use per_unit::{PerUnitBase, PuNetwork};

/// Default phase-to-neutral voltage of a 400 V network.
pub const DEFAULT_PHASE_VOLTAGE: f64 = 230.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "c")]
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        };
        f.write_str(s)
    }
}

/// Phases present at a bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseConfig {
    #[serde(rename = "abc")]
    ThreePhase,
    #[serde(rename = "a")]
    SinglePhaseA,
    #[serde(rename = "b")]
    SinglePhaseB,
    #[serde(rename = "c")]
    SinglePhaseC,
}

impl PhaseConfig {
    pub fn single(phase: Phase) -> Self {
        match phase {
            Phase::A => PhaseConfig::SinglePhaseA,
            Phase::B => PhaseConfig::SinglePhaseB,
            Phase::C => PhaseConfig::SinglePhaseC,
        }
    }

    /// The single phase, or `None` for a three-phase bus.
    pub fn single_phase(self) -> Option<Phase> {
        match self {
            PhaseConfig::ThreePhase => None,
            PhaseConfig::SinglePhaseA => Some(Phase::A),
            PhaseConfig::SinglePhaseB => Some(Phase::B),
            PhaseConfig::SinglePhaseC => Some(Phase::C),
        }
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.single_phase().is_none_or(|p| p == phase)
    }

    fn is_subset_of(self, other: PhaseConfig) -> bool {
        match self.single_phase() {
            None => other == PhaseConfig::ThreePhase,
            Some(p) => other.contains(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseConfig,
    /// Phase-to-neutral nominal voltage in volts.
    pub v_nominal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub length_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connection {
    SinglePhase,
    ThreePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Meter {
    pub id: String,
    pub bus: String,
    pub connection: Connection,
    pub contracted_kw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slack {
    pub bus: String,
    pub v_pu: f64,
}

/// Unvalidated network content.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridModel {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub meters: Vec<Meter>,
    pub slacks: Vec<Slack>,
}

/// Phase(s) a meter measures and loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeterPhases {
    Single(Phase),
    Three,
}

/// Label of the slack-adjacent subtree a bus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feeder {
    Root,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub offenders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, offenders: Vec<String>) {
        self.checks.push(ValidationCheck {
            name: name.to_string(),
            passed: offenders.is_empty(),
            offenders,
        });
    }
}

pub mod checks {
    pub const UNIQUE_BUS_IDS: &str = "unique bus ids";
    pub const UNIQUE_BRANCH_IDS: &str = "unique branch ids";
    pub const UNIQUE_METER_IDS: &str = "unique meter ids";
    pub const NOMINAL_VOLTAGE: &str = "nominal voltage positive";
    pub const SLACK_COUNT: &str = "exactly one slack";
    pub const SLACK_BUS: &str = "slack→bus dangling";
    pub const SLACK_VOLTAGE: &str = "slack voltage positive";
    pub const BRANCH_ENDPOINTS: &str = "branch→bus dangling";
    pub const SELF_LOOP: &str = "branch endpoints distinct";
    pub const IMPEDANCE: &str = "impedance nonnegative";
    pub const RADIAL: &str = "not radial";
    pub const CONNECTED: &str = "disconnected bus";
    pub const METER_BUS: &str = "meter→bus dangling";
    pub const METERS_PER_BUS: &str = "one meter per bus";
    pub const METER_PHASE: &str = "meter phase resolvable";
    pub const PHASE_NESTING: &str = "child phases within parent";
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dups.iter().any(|d: &String| d == id) {
            dups.push(id.to_string());
        }
    }
    dups
}

struct Traversal {
    order: Vec<usize>,
    parent: Vec<Option<(usize, usize)>>,
    cycle_branches: Vec<usize>,
}

/// Breadth-first walk from `root` over branches whose endpoints exist.
fn traverse(model: &GridModel, bus_idx: &HashMap<&str, usize>, root: usize) -> Traversal {
    let n = model.buses.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, br) in model.branches.iter().enumerate() {
        if let (Some(&f), Some(&t)) = (bus_idx.get(br.from.as_str()), bus_idx.get(br.to.as_str())) {
            if f != t {
                adj[f].push((t, k));
                adj[t].push((f, k));
            }
        }
    }
    let mut visited = vec![false; n];
    let mut used_branch = vec![false; model.branches.len()];
    let mut parent = vec![None; n];
    let mut order = Vec::with_capacity(n);
    let mut cycle_branches = Vec::new();
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, k) in &adj[u] {
            if used_branch[k] {
                continue;
            }
            used_branch[k] = true;
            if visited[v] {
                cycle_branches.push(k);
                continue;
            }
            visited[v] = true;
            parent[v] = Some((u, k));
            queue.push_back(v);
        }
    }
    Traversal {
        order,
        parent,
        cycle_branches,
    }
}

/// Checks every network invariant and reports all offenders.
pub fn validate(model: &GridModel) -> ValidationReport {
    use checks::*;
    let mut report = ValidationReport { checks: Vec::new() };

    report.push(UNIQUE_BUS_IDS, duplicates(model.buses.iter().map(|b| b.id.as_str())));
    report.push(
        UNIQUE_BRANCH_IDS,
        duplicates(model.branches.iter().map(|b| b.id.as_str())),
    );
    report.push(
        UNIQUE_METER_IDS,
        duplicates(model.meters.iter().map(|m| m.id.as_str())),
    );
    report.push(
        NOMINAL_VOLTAGE,
        model
            .buses
            .iter()
            .filter(|b| b.v_nominal.is_some_and(|v| !(v > 0.0 && v.is_finite())))
            .map(|b| b.id.clone())
            .collect(),
    );

    let bus_idx: HashMap<&str, usize> = model
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();

    report.push(
        SLACK_COUNT,
        if model.slacks.len() == 1 {
            Vec::new()
        } else {
            vec![format!("{} slack entries", model.slacks.len())]
        },
    );
    report.push(
        SLACK_BUS,
        model
            .slacks
            .iter()
            .filter(|s| !bus_idx.contains_key(s.bus.as_str()))
            .map(|s| s.bus.clone())
            .collect(),
    );
    report.push(
        SLACK_VOLTAGE,
        model
            .slacks
            .iter()
            .filter(|s| !(s.v_pu > 0.0 && s.v_pu.is_finite()))
            .map(|s| s.bus.clone())
            .collect(),
    );

    report.push(
        BRANCH_ENDPOINTS,
        model
            .branches
            .iter()
            .filter(|b| {
                !bus_idx.contains_key(b.from.as_str()) || !bus_idx.contains_key(b.to.as_str())
            })
            .map(|b| b.id.clone())
            .collect(),
    );
    report.push(
        SELF_LOOP,
        model
            .branches
            .iter()
            .filter(|b| b.from == b.to)
            .map(|b| b.id.clone())
            .collect(),
    );
    report.push(
        IMPEDANCE,
        model
            .branches
            .iter()
            .filter(|b| !(b.r_ohm >= 0.0 && b.x_ohm >= 0.0 && b.r_ohm.is_finite() && b.x_ohm.is_finite()))
            .map(|b| b.id.clone())
            .collect(),
    );

    let root = model
        .slacks
        .first()
        .and_then(|s| bus_idx.get(s.bus.as_str()).copied());
    let traversal = root.map(|r| traverse(model, &bus_idx, r));

    let mut radial = Vec::new();
    if model.branches.len() + 1 != model.buses.len() {
        radial.push(format!(
            "{} branches for {} buses",
            model.branches.len(),
            model.buses.len()
        ));
    }
    if let Some(t) = &traversal {
        radial.extend(t.cycle_branches.iter().map(|&k| model.branches[k].id.clone()));
    }
    report.push(RADIAL, radial);

    report.push(
        CONNECTED,
        match &traversal {
            Some(t) => {
                let mut reached = vec![false; model.buses.len()];
                for &u in &t.order {
                    reached[u] = true;
                }
                model
                    .buses
                    .iter()
                    .zip(reached)
                    .filter(|(_, r)| !r)
                    .map(|(b, _)| b.id.clone())
                    .collect()
            }
            None => model.buses.iter().map(|b| b.id.clone()).collect(),
        },
    );

    report.push(
        METER_BUS,
        model
            .meters
            .iter()
            .filter(|m| !bus_idx.contains_key(m.bus.as_str()))
            .map(|m| m.id.clone())
            .collect(),
    );
    report.push(
        METERS_PER_BUS,
        duplicates(model.meters.iter().map(|m| m.bus.as_str())),
    );
    report.push(
        METER_PHASE,
        model
            .meters
            .iter()
            .filter(|m| {
                m.connection == Connection::SinglePhase
                    && bus_idx
                        .get(m.bus.as_str())
                        .is_some_and(|&i| model.buses[i].phases == PhaseConfig::ThreePhase)
            })
            .map(|m| m.id.clone())
            .collect(),
    );

    let mut nesting = Vec::new();
    if let Some(t) = &traversal {
        for (child, p) in t.parent.iter().enumerate() {
            if let Some((parent, _)) = p {
                if !model.buses[child]
                    .phases
                    .is_subset_of(model.buses[*parent].phases)
                {
                    nesting.push(model.buses[child].id.clone());
                }
            }
        }
    }
    report.push(PHASE_NESTING, nesting);

    report
}

/// A validated radial network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Network {
    model: GridModel,
    bus_idx: HashMap<String, usize>,
    meter_idx: HashMap<String, usize>,
    slack: usize,
    order: Vec<usize>,
    parent: Vec<Option<(usize, usize)>>,
    feeders: Vec<Feeder>,
    feeder_count: usize,
    meter_bus: Vec<usize>,
    meter_phases: Vec<MeterPhases>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
    }
}

impl Network {
    /// Validates `model` and builds the tree index. Fails with the first
    /// violated invariant.
    pub fn from_model(model: GridModel) -> Result<Self> {
        let report = validate(&model);
        if let Some(failed) = report.failures().next() {
            let detail = if failed.offenders.is_empty() {
                String::new()
            } else {
                format!(" ({})", failed.offenders.join(", "))
            };
            return Err(Error::Validation(format!("{}{}", failed.name, detail)));
        }

        let bus_idx: HashMap<String, usize> = model
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let slack = bus_idx[&model.slacks[0].bus];
        let borrowed: HashMap<&str, usize> =
            bus_idx.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        let t = traverse(&model, &borrowed, slack);

        let mut feeders = vec![Feeder::Root; model.buses.len()];
        let mut feeder_count = 0;
        for &u in &t.order {
            if let Some((p, _)) = t.parent[u] {
                feeders[u] = if p == slack {
                    feeder_count += 1;
                    Feeder::Index(feeder_count - 1)
                } else {
                    feeders[p]
                };
            }
        }

        let meter_idx = model
            .meters
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        let meter_bus: Vec<usize> = model.meters.iter().map(|m| bus_idx[&m.bus]).collect();
        let meter_phases = model
            .meters
            .iter()
            .zip(&meter_bus)
            .map(|(m, &b)| match (m.connection, model.buses[b].phases.single_phase()) {
                (_, Some(p)) => MeterPhases::Single(p),
                (Connection::ThreePhase, None) => MeterPhases::Three,
                (Connection::SinglePhase, None) => unreachable!("rejected by validation"),
            })
            .collect();

        Ok(Network {
            model,
            bus_idx,
            meter_idx,
            slack,
            order: t.order,
            parent: t.parent,
            feeders,
            feeder_count,
            meter_bus,
            meter_phases,
        })
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn buses(&self) -> &[Bus] {
        &self.model.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.model.branches
    }

    pub fn meters(&self) -> &[Meter] {
        &self.model.meters
    }

    pub fn slack(&self) -> &Slack {
        &self.model.slacks[0]
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_idx.get(id).copied()
    }

    pub fn meter_index(&self, id: &str) -> Option<usize> {
        self.meter_idx.get(id).copied()
    }

    /// Bus indices in breadth-first order from the slack.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `(parent bus, branch)` of each bus; `None` for the slack.
    pub fn parent(&self, bus: usize) -> Option<(usize, usize)> {
        self.parent[bus]
    }

    pub fn meter_bus(&self, meter: usize) -> usize {
        self.meter_bus[meter]
    }

    pub fn meter_phases(&self, meter: usize) -> MeterPhases {
        self.meter_phases[meter]
    }

    pub fn feeder_count(&self) -> usize {
        self.feeder_count
    }

    pub fn feeder_of(&self, bus_id: &str) -> Result<Feeder> {
        self.bus_index(bus_id)
            .map(|i| self.feeders[i])
            .ok_or_else(|| Error::UnknownBus(bus_id.to_string()))
    }

    pub fn feeder_of_index(&self, bus: usize) -> Feeder {
        self.feeders[bus]
    }

    /// Meter ids attached to buses of `feeder`, in model order.
    pub fn feeder_meters(&self, feeder: Feeder) -> Vec<&str> {
        self.model
            .meters
            .iter()
            .zip(&self.meter_bus)
            .filter(|(_, &b)| self.feeders[b] == feeder)
            .map(|(m, _)| m.id.as_str())
            .collect()
    }

    /// Terminal (bus) id a meter is attached to.
    pub fn terminal_of(&self, meter_id: &str) -> Result<&str> {
        self.meter_index(meter_id)
            .map(|i| self.model.meters[i].bus.as_str())
            .ok_or_else(|| Error::UnknownMeter(meter_id.to_string()))
    }
}
