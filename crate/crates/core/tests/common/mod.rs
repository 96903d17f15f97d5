#![allow(dead_code)]

use chrono::{DateTime, TimeZone, Utc};
use ntl_core::grid::{Branch, Bus, Connection, GridModel, Meter, Network, Phase, PhaseConfig, PerUnitBase, Slack};
use ntl_core::powerflow::{LoadSnapshot, MeterLoad};
use num_complex::Complex64;
use proptest::prelude::*;

pub const V_NOM: f64 = 230.0;

/// Shape of a random radial network: for each non-slack bus its parent
/// (an earlier bus), an optional single phase, R and X in ohm, and the
/// meter's load (kW, kvar).
#[derive(Debug, Clone)]
pub struct Layout {
    pub buses: Vec<BusSpec>,
}

#[derive(Debug, Clone)]
pub struct BusSpec {
    pub parent: usize,
    pub phase: Option<Phase>,
    pub r: f64,
    pub x: f64,
    pub p_kw: f64,
    pub q_kvar: f64,
}

fn phase(i: u8) -> Option<Phase> {
    match i {
        0 => Some(Phase::A),
        1 => Some(Phase::B),
        2 => Some(Phase::C),
        _ => None,
    }
}

/// Networks with `1..=max_load_buses` buses besides the slack.
pub fn layout_strategy(max_load_buses: usize, max_r: f64, max_kw: f64) -> impl Strategy<Value = Layout> {
    prop::collection::vec(
        (any::<prop::sample::Index>(), 0u8..6, 0.001..max_r, 0.0..1.0f64, 0.0..max_kw, 0.0..0.5f64),
        1..=max_load_buses,
    )
    .prop_map(|raw| {
        let mut buses: Vec<BusSpec> = Vec::new();
        for (i, (parent, ph, r, xr, p, qf)) in raw.into_iter().enumerate() {
            let parent = parent.index(i + 1);
            // a single-phase parent forces its phase on the child
            let inherited = if parent == 0 { None } else { buses[parent - 1].phase };
            buses.push(BusSpec {
                parent,
                phase: inherited.or(phase(ph)),
                r,
                x: r * xr,
                p_kw: p,
                q_kvar: p * qf,
            });
        }
        Layout { buses }
    })
}

pub fn bus_id(i: usize) -> String {
    if i == 0 { "S".into() } else { format!("B{i}") }
}

pub fn meter_id(i: usize) -> String {
    format!("m{i}")
}

impl Layout {
    pub fn network(&self) -> Network {
        let mut model = GridModel {
            buses: vec![Bus { id: bus_id(0), phases: PhaseConfig::ThreePhase, v_nominal: Some(V_NOM) }],
            slacks: vec![Slack { bus: bus_id(0), v_pu: 1.0 }],
            ..GridModel::default()
        };
        for (k, b) in self.buses.iter().enumerate() {
            let i = k + 1;
            model.buses.push(Bus {
                id: bus_id(i),
                phases: b.phase.map_or(PhaseConfig::ThreePhase, PhaseConfig::single),
                v_nominal: Some(V_NOM),
            });
            model.branches.push(Branch {
                id: format!("L{i}"),
                from: bus_id(b.parent),
                to: bus_id(i),
                r_ohm: b.r,
                x_ohm: b.x,
                length_m: None,
            });
            model.meters.push(Meter {
                id: meter_id(i),
                bus: bus_id(i),
                connection: if b.phase.is_some() { Connection::SinglePhase } else { Connection::ThreePhase },
                contracted_kw: None,
            });
        }
        Network::from_model(model).expect("generated network is valid")
    }

    pub fn snapshot(&self, scale: f64) -> LoadSnapshot {
        let mut s = LoadSnapshot::new(t0());
        for (k, b) in self.buses.iter().enumerate() {
            s.loads.insert(meter_id(k + 1), MeterLoad { p_kw: b.p_kw * scale, q_kvar: b.q_kvar * scale });
        }
        s
    }

    /// Per-bus impedance in p.u. of the default base.
    pub fn z_pu(&self, k: usize) -> (f64, f64) {
        let zb = PerUnitBase::default().z_base(V_NOM);
        (self.buses[k].r / zb, self.buses[k].x / zb)
    }
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()
}

/// Bus-impedance fixed point, one phase at a time: with Z[i][j] the
/// impedance shared by the slack paths of buses i and j,
/// V_i = V_slack - sum_j Z[i][j] * conj(S_j / V_j).
pub fn oracle(layout: &Layout) -> Vec<[Option<f64>; 3]> {
    let n = layout.buses.len();
    let path = |mut i: usize| {
        let mut p = Vec::new();
        while i != 0 {
            p.push(i);
            i = layout.buses[i - 1].parent;
        }
        p
    };
    let paths: Vec<Vec<usize>> = (1..=n).map(path).collect();
    let z: Vec<Complex64> = (0..n).map(|k| {
        let (r, x) = layout.z_pu(k);
        Complex64::new(r, x)
    }).collect();
    let zbus: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| paths[i].iter().filter(|b| paths[j].contains(b)).map(|&b| z[b - 1]).sum())
                .collect()
        })
        .collect();
    let s_base = PerUnitBase::default().s_base_va;

    let mut out = vec![[None; 3]; n + 1];
    out[0] = [Some(1.0); 3];
    for (ph, phase) in Phase::ALL.into_iter().enumerate() {
        let on: Vec<usize> = (0..n).filter(|&k| layout.buses[k].phase.is_none_or(|p| p == phase)).collect();
        let s: Vec<Complex64> = (0..n)
            .map(|k| {
                let b = &layout.buses[k];
                let total = Complex64::new(b.p_kw, b.q_kvar) * 1000.0 / s_base;
                match b.phase {
                    Some(p) if p == phase => total,
                    Some(_) => Complex64::new(0.0, 0.0),
                    None => total / 3.0,
                }
            })
            .collect();
        let mut v = vec![Complex64::new(1.0, 0.0); n];
        for _ in 0..100_000 {
            let i_load: Vec<Complex64> = (0..n).map(|j| (s[j] / v[j]).conj()).collect();
            let mut change = 0.0f64;
            for &i in &on {
                let next = Complex64::new(1.0, 0.0) - on.iter().map(|&j| zbus[i][j] * i_load[j]).sum::<Complex64>();
                change = change.max((next - v[i]).norm());
                v[i] = next;
            }
            if change < 1e-15 {
                break;
            }
        }
        for &i in &on {
            out[i + 1][ph] = Some(v[i].norm());
        }
    }
    out
}

