//! JSON network file.
//!
//! ```json
//! {
//!   "buses":    [{"id": "S", "phases": "abc", "v_nominal": 230.0}, ...],
//!   "branches": [{"id": "L1", "from": "S", "to": "B", "r_ohm": 0.05, "x_ohm": 0.02, "length_m": 30.0}, ...],
//!   "meters":   [{"id": "meter_1", "bus": "B", "connection": "single_phase"}, ...],
//!   "slack":    {"bus": "S", "v_pu": 1.0}
//! }
//! ```
//!
//! Unknown keys are rejected at every level.

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, Connection, GridModel, Meter, Network, PhaseConfig, Slack};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub buses: Vec<BusEntry>,
    pub branches: Vec<BranchEntry>,
    pub meters: Vec<MeterEntry>,
    pub slack: SlackEntries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: String,
    pub phases: PhaseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_nominal: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterEntry {
    pub id: String,
    pub bus: String,
    pub connection: Connection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackEntry {
    pub bus: String,
    #[serde(default = "one")]
    pub v_pu: f64,
}

fn one() -> f64 {
    1.0
}

/// A single slack object; a list is accepted so that a document declaring
/// several slacks parses and is then rejected by validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlackEntries {
    One(SlackEntry),
    Many(Vec<SlackEntry>),
}

impl From<NetworkDocument> for GridModel {
    fn from(doc: NetworkDocument) -> Self {
        GridModel {
            buses: doc
                .buses
                .into_iter()
                .map(|b| Bus {
                    id: b.id,
                    phases: b.phases,
                    v_nominal: b.v_nominal,
                })
                .collect(),
            branches: doc
                .branches
                .into_iter()
                .map(|b| Branch {
                    id: b.id,
                    from: b.from,
                    to: b.to,
                    r_ohm: b.r_ohm,
                    x_ohm: b.x_ohm,
                    length_m: b.length_m,
                })
                .collect(),
            meters: doc
                .meters
                .into_iter()
                .map(|m| Meter {
                    id: m.id,
                    bus: m.bus,
                    connection: m.connection,
                    contracted_kw: None,
                })
                .collect(),
            slacks: match doc.slack {
                SlackEntries::One(s) => vec![s],
                SlackEntries::Many(v) => v,
            }
            .into_iter()
            .map(|s| Slack {
                bus: s.bus,
                v_pu: s.v_pu,
            })
            .collect(),
        }
    }
}

pub fn to_document(model: &GridModel) -> NetworkDocument {
    let slacks: Vec<SlackEntry> = model
        .slacks
        .iter()
        .map(|s| SlackEntry {
            bus: s.bus.clone(),
            v_pu: s.v_pu,
        })
        .collect();
    NetworkDocument {
        buses: model
            .buses
            .iter()
            .map(|b| BusEntry {
                id: b.id.clone(),
                phases: b.phases,
                v_nominal: b.v_nominal,
            })
            .collect(),
        branches: model
            .branches
            .iter()
            .map(|b| BranchEntry {
                id: b.id.clone(),
                from: b.from.clone(),
                to: b.to.clone(),
                r_ohm: b.r_ohm,
                x_ohm: b.x_ohm,
                length_m: b.length_m,
            })
            .collect(),
        meters: model
            .meters
            .iter()
            .map(|m| MeterEntry {
                id: m.id.clone(),
                bus: m.bus.clone(),
                connection: m.connection,
            })
            .collect(),
        slack: if slacks.len() == 1 {
            SlackEntries::One(slacks.into_iter().next().unwrap())
        } else {
            SlackEntries::Many(slacks)
        },
    }
}

pub fn parse_model(text: &str) -> Result<GridModel> {
    let doc: NetworkDocument =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(doc.into())
}

/// Parses and validates a network file.
pub fn load_network(text: &str) -> Result<Network> {
    Network::from_model(parse_model(text)?)
}

impl Network {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&to_document(self.model())).expect("serializable")
    }
}
