use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};

/// Per-phase power base. The voltage base of each bus is its nominal
/// phase-to-neutral voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_va: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        PerUnitBase { s_base_va: 10_000.0 }
    }
}

impl PerUnitBase {
    pub fn z_base(&self, v_base: f64) -> f64 {
        v_base * v_base / self.s_base_va
    }

    /// Per-phase kW (or kvar) to per-unit.
    pub fn power_pu(&self, kw: f64) -> f64 {
        kw * 1000.0 / self.s_base_va
    }
}

/// A network annotated with per-unit branch impedances.
#[derive(Debug, Clone)]
pub struct PuNetwork {
    network: Network,
    base: PerUnitBase,
    v_base: Vec<f64>,
    z_pu: Vec<Complex64>,
}

impl Network {
    /// Expresses branch impedances in per-unit. Each branch uses the nominal
    /// voltage of its downstream bus.
    pub fn to_per_unit(self, base: PerUnitBase) -> Result<PuNetwork> {
        if !(base.s_base_va > 0.0 && base.s_base_va.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "power base must be positive, got {}",
                base.s_base_va
            )));
        }
        let v_base = self
            .buses()
            .iter()
            .map(|b| b.v_nominal.ok_or_else(|| Error::MissingNominalVoltage(b.id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let z_pu = self
            .branches()
            .iter()
            .map(|br| {
                let to = self.bus_index(&br.to).expect("validated endpoint");
                let zb = base.z_base(v_base[to]);
                Complex64::new(br.r_ohm / zb, br.x_ohm / zb)
            })
            .collect();
        Ok(PuNetwork {
            network: self,
            base,
            v_base,
            z_pu,
        })
    }
}

impl PuNetwork {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn base(&self) -> PerUnitBase {
        self.base
    }

    pub fn v_base(&self, bus: usize) -> f64 {
        self.v_base[bus]
    }

    pub fn branch_z(&self, branch: usize) -> Complex64 {
        self.z_pu[branch]
    }

    /// Inverse conversion: branch `(r_ohm, x_ohm)` from the per-unit values.
    pub fn impedances_ohm(&self) -> Vec<(f64, f64)> {
        self.network
            .branches()
            .iter()
            .zip(&self.z_pu)
            .map(|(br, z)| {
                let to = self.network.bus_index(&br.to).expect("validated endpoint");
                let zb = self.base.z_base(self.v_base[to]);
                (z.re * zb, z.im * zb)
            })
            .collect()
    }

    pub fn into_network(self) -> Network {
        self.network
    }
}
