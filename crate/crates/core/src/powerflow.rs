//! Backward/forward sweep load flow on a radial network.
//!
//! Phases are solved as three decoupled networks sharing the topology, with
//! constant-power loads. Each iteration accumulates branch currents from the
//! leaves to the slack (`I = conj(S / V)`) and then updates voltages from the
//! slack outwards (`V_child = V_parent - Z * I`).

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MeterPhases, Network, Phase, PuNetwork};
use crate::par::{self, Execution};

type Phasors = [Complex64; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterLoad {
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Hourly mean loads of every meter for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSnapshot {
    pub timestamp: DateTime<Utc>,
    pub loads: BTreeMap<String, MeterLoad>,
    /// Meters without a reading this hour; solved as zero load.
    pub missing: BTreeSet<String>,
}

impl LoadSnapshot {
    pub fn new(timestamp: DateTime<Utc>) -> Self {
        LoadSnapshot {
            timestamp,
            loads: BTreeMap::new(),
            missing: BTreeSet::new(),
        }
    }

    /// Scales every load by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut s = self.clone();
        for l in s.loads.values_mut() {
            l.p_kw *= k;
            l.q_kvar *= k;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub flat_start_voltage: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-8,
            max_iterations: 100,
            flat_start_voltage: 1.0,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "solver needs tolerance > 0 and max_iterations >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    pub timestamp: DateTime<Utc>,
    /// Per-bus, per-phase voltage phasors in p.u., indexed like `Network::buses`.
    pub voltages: Vec<Phasors>,
    /// Current through the branch feeding each bus (zero for the slack).
    pub branch_currents: Vec<Phasors>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest voltage change in the final iteration.
    pub max_mismatch: f64,
}

impl VoltageSolution {
    pub fn magnitude(&self, bus: usize, phase: Phase) -> f64 {
        self.voltages[bus][phase.index()].norm()
    }

    pub fn bus_magnitudes(&self, network: &Network) -> BTreeMap<String, [f64; 3]> {
        network
            .buses()
            .iter()
            .zip(&self.voltages)
            .map(|(b, v)| (b.id.clone(), [v[0].norm(), v[1].norm(), v[2].norm()]))
            .collect()
    }
}

/// Per-bus, per-phase complex power demand in p.u.
fn bus_demand(pu: &PuNetwork, snapshot: &LoadSnapshot) -> Result<Vec<Phasors>> {
    let net = pu.network();
    let base = pu.base();
    let mut s = vec![[ZERO; 3]; net.buses().len()];
    for (meter_id, load) in &snapshot.loads {
        if !(load.p_kw.is_finite() && load.q_kvar.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite load for {meter_id} at {}",
                snapshot.timestamp
            )));
        }
        let m = net
            .meter_index(meter_id)
            .ok_or_else(|| Error::UnknownMeter(meter_id.clone()))?;
        let bus = net.meter_bus(m);
        let total = Complex64::new(base.power_pu(load.p_kw), base.power_pu(load.q_kvar));
        match net.meter_phases(m) {
            MeterPhases::Single(p) => s[bus][p.index()] += total,
            MeterPhases::Three => {
                for ph in &mut s[bus] {
                    *ph += total / 3.0;
                }
            }
        }
    }
    for meter_id in &snapshot.missing {
        if net.meter_index(meter_id).is_none() {
            return Err(Error::UnknownMeter(meter_id.clone()));
        }
    }
    Ok(s)
}

/// Solves one hourly snapshot. Non-convergence is reported through
/// `converged = false` with the last iterate, never as an error.
pub fn solve_snapshot(
    pu: &PuNetwork,
    snapshot: &LoadSnapshot,
    config: &SolverConfig,
) -> Result<VoltageSolution> {
    config.check()?;
    let demand = bus_demand(pu, snapshot)?;
    let net = pu.network();
    let n = net.buses().len();
    let order = net.order();
    let slack = net.slack_index();

    let v_slack = Complex64::new(net.slack().v_pu, 0.0);
    let mut v = vec![[Complex64::new(config.flat_start_voltage, 0.0); 3]; n];
    v[slack] = [v_slack; 3];
    let mut cur = vec![[ZERO; 3]; n];

    let mut iterations = 0;
    let mut converged = false;
    let mut max_dv = f64::INFINITY;
    while iterations < config.max_iterations {
        iterations += 1;

        for c in cur.iter_mut() {
            *c = [ZERO; 3];
        }
        for &b in order.iter().rev() {
            for ph in 0..3 {
                let s = demand[b][ph];
                if s != ZERO {
                    cur[b][ph] += (s / v[b][ph]).conj();
                }
            }
            if let Some((p, _)) = net.parent(b) {
                let child = cur[b];
                for ph in 0..3 {
                    cur[p][ph] += child[ph];
                }
            }
        }

        max_dv = 0.0;
        for &b in order.iter().skip(1) {
            let (p, k) = net.parent(b).expect("non-slack bus has a parent");
            let z = pu.branch_z(k);
            for ph in 0..3 {
                let next = v[p][ph] - z * cur[b][ph];
                max_dv = max_dv.max((next - v[b][ph]).norm());
                v[b][ph] = next;
            }
        }

        if !max_dv.is_finite() {
            break;
        }
        if max_dv < config.tolerance {
            converged = true;
            break;
        }
    }

    // The slack current is the whole feeder draw, not a branch current.
    cur[slack] = [ZERO; 3];
    Ok(VoltageSolution {
        timestamp: snapshot.timestamp,
        voltages: v,
        branch_currents: cur,
        iterations,
        converged,
        max_mismatch: max_dv,
    })
}

/// Solves an ordered series of independent hourly snapshots.
pub fn solve_series(
    pu: &PuNetwork,
    snapshots: &[LoadSnapshot],
    config: &SolverConfig,
) -> Result<Vec<VoltageSolution>> {
    solve_series_with(pu, snapshots, config, Execution::Auto)
}

pub fn solve_series_with(
    pu: &PuNetwork,
    snapshots: &[LoadSnapshot],
    config: &SolverConfig,
    exec: Execution,
) -> Result<Vec<VoltageSolution>> {
    if let Some(w) = snapshots
        .windows(2)
        .find(|w| w[0].timestamp >= w[1].timestamp)
    {
        return Err(Error::InvalidArgument(format!(
            "snapshots not strictly increasing at {}",
            w[1].timestamp
        )));
    }
    par::map(snapshots, exec, |s| solve_snapshot(pu, s, config))
        .into_iter()
        .collect()
}

/// Scalar voltage seen by a meter: its declared phase, or the lowest phase
/// of a three-phase connection.
pub fn meter_voltage(solution: &VoltageSolution, network: &Network, meter_id: &str) -> Result<f64> {
    let m = network
        .meter_index(meter_id)
        .ok_or_else(|| Error::UnknownMeter(meter_id.to_string()))?;
    Ok(meter_voltage_at(solution, network, m))
}

pub fn meter_voltage_at(solution: &VoltageSolution, network: &Network, meter: usize) -> f64 {
    let bus = network.meter_bus(meter);
    match network.meter_phases(meter) {
        MeterPhases::Single(p) => solution.magnitude(bus, p),
        MeterPhases::Three => Phase::ALL
            .iter()
            .map(|&p| solution.magnitude(bus, p))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Largest difference between the power drawn at any bus and phase, as
/// recomputed from the solved voltages and branch currents, and the demand.
pub fn power_balance_residual(
    pu: &PuNetwork,
    snapshot: &LoadSnapshot,
    solution: &VoltageSolution,
) -> Result<f64> {
    let demand = bus_demand(pu, snapshot)?;
    let net = pu.network();
    let n = net.buses().len();
    let mut outflow = vec![[ZERO; 3]; n];
    for b in 0..n {
        if let Some((p, _)) = net.parent(b) {
            for ph in 0..3 {
                outflow[p][ph] += solution.branch_currents[b][ph];
            }
        }
    }
    let mut worst = 0.0f64;
    for b in 0..n {
        if b == net.slack_index() {
            continue;
        }
        for ph in 0..3 {
            let i_net = solution.branch_currents[b][ph] - outflow[b][ph];
            let s = solution.voltages[b][ph] * i_net.conj();
            worst = worst.max((s - demand[b][ph]).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        Branch, Bus, Connection, GridModel, Meter, PerUnitBase, PhaseConfig, Slack,
    };
    use chrono::TimeZone;

    const Z_BASE: f64 = 5.29;

    fn chain(n_load: usize, r_pu: f64, x_pu: f64, phases: PhaseConfig) -> PuNetwork {
        let mut buses = vec![Bus {
            id: "S".into(),
            phases: PhaseConfig::ThreePhase,
            v_nominal: Some(230.0),
        }];
        let mut branches = Vec::new();
        let mut meters = Vec::new();
        for i in 0..n_load {
            let id = format!("B{i}");
            let from = if i == 0 { "S".to_string() } else { format!("B{}", i - 1) };
            buses.push(Bus {
                id: id.clone(),
                phases: if i + 1 == n_load { phases } else { PhaseConfig::ThreePhase },
                v_nominal: Some(230.0),
            });
            branches.push(Branch {
                id: format!("L{i}"),
                from,
                to: id.clone(),
                r_ohm: r_pu * Z_BASE,
                x_ohm: x_pu * Z_BASE,
                length_m: None,
            });
            meters.push(Meter {
                id: format!("m{i}"),
                bus: id,
                connection: if i + 1 == n_load && phases != PhaseConfig::ThreePhase {
                    Connection::SinglePhase
                } else {
                    Connection::ThreePhase
                },
                contracted_kw: None,
            });
        }
        Network::from_model(GridModel {
            buses,
            branches,
            meters,
            slacks: vec![Slack {
                bus: "S".into(),
                v_pu: 1.0,
            }],
        })
        .unwrap()
        .to_per_unit(PerUnitBase::default())
        .unwrap()
    }

    fn snapshot(loads: &[(&str, f64, f64)]) -> LoadSnapshot {
        let mut s = LoadSnapshot::new(Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap());
        for &(m, p, q) in loads {
            s.loads.insert(m.into(), MeterLoad { p_kw: p, q_kvar: q });
        }
        s
    }

    /// V <- 1 - Z * conj(S / V), iterated from V = 1.
    fn scalar_oracle(z: Complex64, s: Complex64) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for _ in 0..10_000 {
            let next = Complex64::new(1.0, 0.0) - z * (s / v).conj();
            if (next - v).norm() < 1e-15 {
                return next;
            }
            v = next;
        }
        v
    }

    #[test]
    fn zero_load_is_slack_voltage_in_one_iteration() {
        let pu = chain(5, 0.01, 0.01, PhaseConfig::ThreePhase);
        let sol = solve_snapshot(&pu, &snapshot(&[]), &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        for v in &sol.voltages {
            for ph in v {
                assert_eq!(ph.norm(), 1.0);
            }
        }
    }

    #[test]
    fn two_bus_single_phase_matches_scalar_oracle() {
        let pu = chain(1, 0.01, 0.01, PhaseConfig::SinglePhaseA);
        // 0.5 p.u. on a 10 kVA per-phase base is 5 kW.
        let sol = solve_snapshot(&pu, &snapshot(&[("m0", 5.0, 0.0)]), &SolverConfig::default())
            .unwrap();
        assert!(sol.converged);
        let expected = scalar_oracle(Complex64::new(0.01, 0.01), Complex64::new(0.5, 0.0));
        let got = sol.voltages[1][0];
        assert!((got - expected).norm() < 1e-8, "{got} vs {expected}");
        // untouched phases stay at slack voltage
        assert_eq!(sol.magnitude(1, Phase::B), 1.0);
    }

    #[test]
    fn uniform_chain_drops_monotonically() {
        let pu = chain(2, 0.02, 0.01, PhaseConfig::ThreePhase);
        let sol = solve_snapshot(
            &pu,
            &snapshot(&[("m0", 6.0, 1.0), ("m1", 6.0, 1.0)]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.converged);
        let v: Vec<f64> = (0..3).map(|b| sol.magnitude(b, Phase::A)).collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");

        // chain oracle: scalar iteration on the two-node nodal equations
        let z = Complex64::new(0.02, 0.01);
        let s = Complex64::new(0.2, 1.0 / 30.0);
        let (mut v1, mut v2) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        for _ in 0..1000 {
            let i2 = (s / v2).conj();
            let i1 = (s / v1).conj() + i2;
            v1 = Complex64::new(1.0, 0.0) - z * i1;
            v2 = v1 - z * i2;
        }
        assert!((sol.magnitude(1, Phase::A) - v1.norm()).abs() < 1e-8);
        assert!((sol.magnitude(2, Phase::A) - v2.norm()).abs() < 1e-8);
    }

    #[test]
    fn three_phase_load_splits_equally() {
        let pu = chain(1, 0.01, 0.0, PhaseConfig::ThreePhase);
        let sol = solve_snapshot(&pu, &snapshot(&[("m0", 9.0, 0.0)]), &SolverConfig::default())
            .unwrap();
        let mags: Vec<f64> = Phase::ALL.iter().map(|&p| sol.magnitude(1, p)).collect();
        assert_eq!(mags[0], mags[1]);
        assert_eq!(mags[1], mags[2]);
        let expected = scalar_oracle(Complex64::new(0.01, 0.0), Complex64::new(0.3, 0.0));
        assert!((mags[0] - expected.norm()).abs() < 1e-8);
    }

    #[test]
    fn overload_reports_non_convergence() {
        let pu = chain(1, 0.5, 0.5, PhaseConfig::SinglePhaseA);
        let sol = solve_snapshot(&pu, &snapshot(&[("m0", 50.0, 0.0)]), &SolverConfig::default())
            .unwrap();
        assert!(!sol.converged);
    }

    #[test]
    fn residual_is_small_after_convergence() {
        let pu = chain(3, 0.02, 0.015, PhaseConfig::SinglePhaseC);
        let cfg = SolverConfig::default();
        let snap = snapshot(&[("m0", 3.0, 1.0), ("m1", 1.0, 0.2), ("m2", 2.0, 0.5)]);
        let sol = solve_snapshot(&pu, &snap, &cfg).unwrap();
        assert!(sol.converged);
        assert!(power_balance_residual(&pu, &snap, &sol).unwrap() < 10.0 * cfg.tolerance);
    }

    #[test]
    fn meter_voltage_rules() {
        let pu = chain(2, 0.01, 0.01, PhaseConfig::SinglePhaseB);
        let net = pu.network();
        let mut sol = solve_snapshot(&pu, &snapshot(&[]), &SolverConfig::default()).unwrap();
        assert_eq!(meter_voltage(&sol, net, "m0").unwrap(), 1.0);
        sol.voltages[1] = [
            Complex64::new(0.98, 0.0),
            Complex64::new(0.97, 0.0),
            Complex64::new(0.99, 0.0),
        ];
        assert_eq!(meter_voltage(&sol, net, "m0").unwrap(), 0.97);
        sol.voltages[2][1] = Complex64::new(0.0, 0.955);
        assert_eq!(meter_voltage(&sol, net, "m1").unwrap(), 0.955);
        assert!(matches!(
            meter_voltage(&sol, net, "nope"),
            Err(Error::UnknownMeter(_))
        ));
    }

    #[test]
    fn unknown_meter_in_snapshot_is_rejected() {
        let pu = chain(1, 0.01, 0.01, PhaseConfig::ThreePhase);
        let err = solve_snapshot(&pu, &snapshot(&[("ghost", 1.0, 0.0)]), &SolverConfig::default());
        assert!(matches!(err, Err(Error::UnknownMeter(_))));
    }

    #[test]
    fn series_must_be_strictly_increasing_and_matches_elementwise() {
        let pu = chain(2, 0.01, 0.01, PhaseConfig::ThreePhase);
        let cfg = SolverConfig::default();
        assert!(solve_series(&pu, &[], &cfg).unwrap().is_empty());
        let a = snapshot(&[("m0", 2.0, 0.5)]);
        assert!(solve_series(&pu, &[a.clone(), a.clone()], &cfg).is_err());
        let mut b = a.clone();
        b.timestamp += chrono::Duration::hours(1);
        let mut c = b.clone();
        c.timestamp += chrono::Duration::hours(1);
        let series = solve_series(&pu, &[a.clone(), b.clone(), c.clone()], &cfg).unwrap();
        assert_eq!(series[0].voltages, series[1].voltages);
        assert_eq!(series[1].voltages, series[2].voltages);
        assert_eq!(series[2], solve_snapshot(&pu, &c, &cfg).unwrap());
        let seq = solve_series_with(&pu, &[a, b, c], &cfg, Execution::Sequential).unwrap();
        assert_eq!(seq, series);
    }

    #[test]
    fn invalid_config_rejected() {
        let pu = chain(1, 0.01, 0.01, PhaseConfig::ThreePhase);
        let cfg = SolverConfig {
            max_iterations: 0,
            ..SolverConfig::default()
        };
        assert!(solve_snapshot(&pu, &snapshot(&[]), &cfg).is_err());
    }
}
