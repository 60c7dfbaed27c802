//! Balanced positive-sequence network model, island detection and the
//! algebraic network solve.
//!
//! A network file is TOML with scalar bases followed by `[[buses]]`,
//! `[[lines]]`, `[[switches]]`, `[[loads]]`, an optional `[grid]` source and
//! the `[[inverters]]` fleet. See the README for the full schema.

mod solver;
mod system;
mod topology;

pub use solver::{solve_island, IslandSolution, LoadInjection, PowerInjection, SolverOptions, SourceInjection};
pub use system::{solve_network, Injection, InverterTerminal, NetworkSolution, OperatingPoint};
pub(crate) use topology::admittance_for as topology_admittance;
pub use topology::{build_admittance, detect_islands, detect_islands_with, AdmittanceMatrix, IslandDescriptor};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverters::{InverterParams, InverterSpec};

/// Smallest series impedance magnitude (pu) accepted on a line.
pub const MIN_LINE_IMPEDANCE: f64 = 1e-6;

/// Switch name → closed.
pub type SwitchStates = BTreeMap<String, bool>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    /// Nominal line-to-line voltage (V).
    pub v_nom_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    /// Series resistance (pu).
    pub r: f64,
    /// Series reactance (pu).
    pub x: f64,
    /// Name of the switch in series with this line, if switchable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Switch {
    pub name: String,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    #[default]
    ConstantPower,
    ConstantImpedance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub name: String,
    pub bus: String,
    pub p_kw: f64,
    pub q_kvar: f64,
    #[serde(default)]
    pub model: LoadModel,
    /// Whether disconnect events may target this load.
    #[serde(default = "yes")]
    pub connectable: bool,
}

fn yes() -> bool {
    true
}

/// Stiff upstream source (substation) modeled as `V∠0` behind `r + jx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSource {
    pub bus: String,
    pub r: f64,
    pub x: f64,
    #[serde(default = "unity")]
    pub v_pu: f64,
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub s_base_va: f64,
    pub v_base_v: f64,
    pub f_nom_hz: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub switches: Vec<Switch>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSource>,
    #[serde(default)]
    pub inverters: Vec<InverterSpec>,
}

impl NetworkModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let net: NetworkModel = toml::from_str(text).map_err(|e| Error::Parse {
            what: "network".into(),
            message: e.to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "network".into(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Base power in kVA, the divisor from kW/kvar to per-unit.
    pub fn s_base_kva(&self) -> f64 {
        self.s_base_va / 1000.0
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn load_index(&self, name: &str) -> Option<usize> {
        self.loads.iter().position(|l| l.name == name)
    }

    pub fn inverter_index(&self, id: u32) -> Option<usize> {
        self.inverters.iter().position(|i| i.id == id)
    }

    pub fn default_switch_states(&self) -> SwitchStates {
        self.switches.iter().map(|s| (s.name.clone(), s.closed)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_base_va > 0.0 && self.v_base_v > 0.0 && self.f_nom_hz > 0.0) {
            return Err(Error::config("per-unit bases and nominal frequency must be strictly positive"));
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::config(format!("duplicate bus '{}'", b.id)));
            }
            if !(b.v_nom_v > 0.0) {
                return Err(Error::config(format!("bus '{}' needs a positive nominal voltage", b.id)));
            }
        }
        let switch_names: BTreeSet<&str> = self.switches.iter().map(|s| s.name.as_str()).collect();
        if switch_names.len() != self.switches.len() {
            return Err(Error::config("duplicate switch name"));
        }
        for (k, l) in self.lines.iter().enumerate() {
            for end in [&l.from, &l.to] {
                if !ids.contains(end.as_str()) {
                    return Err(Error::config(format!("line {k} references unknown bus '{end}'")));
                }
            }
            if l.from == l.to {
                return Err(Error::config(format!("line {k} is a self-loop")));
            }
            if l.r < 0.0 {
                return Err(Error::config(format!("line {k} has negative resistance")));
            }
            if l.r.hypot(l.x) < MIN_LINE_IMPEDANCE {
                return Err(Error::config(format!("line {k} impedance below {MIN_LINE_IMPEDANCE} pu")));
            }
            if let Some(sw) = &l.switch {
                if !switch_names.contains(sw.as_str()) {
                    return Err(Error::config(format!("line {k} references unknown switch '{sw}'")));
                }
            }
        }
        let mut load_names = BTreeSet::new();
        for l in &self.loads {
            if !load_names.insert(l.name.as_str()) {
                return Err(Error::config(format!("duplicate load '{}'", l.name)));
            }
            if !ids.contains(l.bus.as_str()) {
                return Err(Error::config(format!("load '{}' on unknown bus '{}'", l.name, l.bus)));
            }
        }
        if let Some(g) = &self.grid {
            if !ids.contains(g.bus.as_str()) {
                return Err(Error::config(format!("grid source on unknown bus '{}'", g.bus)));
            }
            if g.r < 0.0 || g.r.hypot(g.x) < MIN_LINE_IMPEDANCE {
                return Err(Error::config("grid source impedance invalid"));
            }
        }
        let mut inv_ids = BTreeSet::new();
        for inv in &self.inverters {
            if !inv_ids.insert(inv.id) {
                return Err(Error::config(format!("duplicate inverter id {}", inv.id)));
            }
        }
        self.fleet().map(|_| ())
    }

    /// Resolved parameters of the inverter fleet, in file order.
    pub fn fleet(&self) -> Result<Vec<InverterParams>> {
        self.inverters
            .iter()
            .map(|spec| {
                let bus = self
                    .bus_index(&spec.bus)
                    .ok_or_else(|| Error::config(format!("inverter {} on unknown bus '{}'", spec.id, spec.bus)))?;
                InverterParams::from_spec(spec, bus, self.f_nom_hz)
            })
            .collect()
    }

    pub(crate) fn line_closed(&self, line: &Line, states: &SwitchStates) -> bool {
        match &line.switch {
            None => true,
            Some(name) => states
                .get(name)
                .copied()
                .or_else(|| self.switches.iter().find(|s| &s.name == name).map(|s| s.closed))
                .unwrap_or(false),
        }
    }

    /// Rejects switch maps that name unknown switches or omit known ones.
    pub fn check_switch_states(&self, states: &SwitchStates) -> Result<()> {
        for name in states.keys() {
            if !self.switches.iter().any(|s| &s.name == name) {
                return Err(Error::config(format!("unknown switch '{name}'")));
            }
        }
        for s in &self.switches {
            if !states.contains_key(&s.name) {
                return Err(Error::config(format!("switch '{}' has no state", s.name)));
            }
        }
        Ok(())
    }
}
