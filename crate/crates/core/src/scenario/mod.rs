//! Scenario description, the simulation driver and the shipped case
//! library.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! name = "my_case"
//! network = "builtin:microgrid9"   # or a path, or an inline [network] table
//! mode = "fully_coordinated"
//! duration_s = 6.0
//!
//! [gains]
//! tau_p_s = 0.06
//!
//! [topology]
//! kind = "random"
//! links = 12
//!
//! [[events]]
//! t = 1.0
//! kind = "switch_open"
//! switch = "sw_13_152"
//! ```

mod library;
mod record;
mod run;

pub use library::{case_library, library_case, sweep_point, SweepRow, CASE_NAMES};
pub use record::{IndexSample, IslandSample, Sample, TimeSeriesRecord, UnitSample};
pub use run::{run, Aborted, Simulation};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::{CommGraph, ControlMode};
use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// Prefix of network references that name a network shipped with the crate.
pub const BUILTIN_PREFIX: &str = "builtin:";

const MICROGRID9: &str = include_str!("../../data/microgrid9.toml");

/// Networks shipped with the crate, by name.
pub fn builtin_network(name: &str) -> Option<NetworkModel> {
    match name {
        "microgrid9" => Some(NetworkModel::from_toml_str(MICROGRID9).expect("shipped network is valid")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkRef {
    /// `builtin:<name>` or a file path.
    Named(String),
    Inline(Box<NetworkModel>),
}

impl NetworkRef {
    pub fn resolve(&self) -> Result<NetworkModel> {
        match self {
            NetworkRef::Inline(net) => {
                net.validate()?;
                Ok((**net).clone())
            }
            NetworkRef::Named(name) => match name.strip_prefix(BUILTIN_PREFIX) {
                Some(b) => builtin_network(b).ok_or_else(|| Error::config(format!("unknown builtin network '{b}'"))),
                None => NetworkModel::load(Path::new(name)),
            },
        }
    }
}

fn default_network() -> NetworkRef {
    NetworkRef::Named(format!("{BUILTIN_PREFIX}microgrid9"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    /// Real-power consensus time constant; `k_p,i = m_p,i τ_p`.
    #[serde(default = "default_tau_p")]
    pub tau_p_s: f64,
    #[serde(default = "default_k_q_gfm")]
    pub k_q_gfm_s: f64,
    #[serde(default = "default_k_q_gfl")]
    pub k_q_gfl_s: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_tau_p() -> f64 {
    0.06
}
fn default_k_q_gfm() -> f64 {
    4.0
}
fn default_k_q_gfl() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    12.0
}
fn default_beta() -> f64 {
    4.0
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec {
            tau_p_s: default_tau_p(),
            k_q_gfm_s: default_k_q_gfm(),
            k_q_gfl_s: default_k_q_gfl(),
            alpha: default_alpha(),
            beta: default_beta(),
        }
    }
}

/// Communication topology. Links are given by inverter id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    #[default]
    Complete,
    #[serde(rename = "none")]
    Empty,
    Edges { links: Vec<[u32; 2]> },
    /// Random connected graph; the seed defaults to the scenario seed.
    Random {
        links: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Explicit links that need not connect the graph.
    Forced { links: Vec<[u32; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    SwitchOpen { switch: String },
    SwitchClose { switch: String },
    LoadDisconnect { load: String },
    LoadChange { load: String, p_kw: f64, q_kvar: f64 },
    PmaxChange { inverter: u32, p_max_kw: f64 },
    InverterTrip { inverter: u32 },
    InverterReconnect { inverter: u32 },
    CommLinkFail { link: [u32; 2] },
    CommLinkRestore { link: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub action: Action,
}

impl Event {
    pub fn new(t: f64, action: Action) -> Self {
        Event { t, action }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_network")]
    pub network: NetworkRef,
    #[serde(default = "default_mode")]
    pub mode: ControlMode,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_dt_sec")]
    pub dt_sec_s: f64,
    /// Record every `decimation`-th step.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    /// Longest grid-connected pre-roll used to reach the initial
    /// equilibrium; it stops early once the state is stationary.
    #[serde(default = "default_settle")]
    pub settle_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Length of the steady-state window closing each event window.
    #[serde(default = "default_steady_window")]
    pub steady_window_s: f64,
    #[serde(default)]
    pub gains: GainSpec,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_mode() -> ControlMode {
    ControlMode::FullyCoordinated
}
fn default_duration() -> f64 {
    6.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_dt_sec() -> f64 {
    1e-2
}
fn default_decimation() -> usize {
    10
}
fn default_settle() -> f64 {
    30.0
}
fn default_steady_window() -> f64 {
    0.5
}

impl Scenario {
    /// Scenario on the shipped network with every setting at its default.
    pub fn new(name: &str, mode: ControlMode) -> Self {
        Scenario {
            name: name.to_string(),
            network: default_network(),
            mode,
            duration_s: default_duration(),
            dt_s: default_dt(),
            dt_sec_s: default_dt_sec(),
            decimation: default_decimation(),
            settle_s: default_settle(),
            seed: 0,
            steady_window_s: default_steady_window(),
            gains: GainSpec::default(),
            topology: TopologySpec::Complete,
            events: Vec::new(),
        }
    }

    /// Parses a scenario. Relative network paths are resolved against
    /// `base_dir`. Events are stably sorted by time.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut sc: Scenario =
            toml::from_str(text).map_err(|e| Error::Parse { what: "scenario".into(), message: e.to_string() })?;
        if let (NetworkRef::Named(name), Some(dir)) = (&sc.network, base_dir) {
            if !name.starts_with(BUILTIN_PREFIX) && Path::new(name).is_relative() {
                sc.network = NetworkRef::Named(dir.join(name).to_string_lossy().into_owned());
            }
        }
        sc.sort_events();
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "scenario".into(), message: e.to_string() })
    }

    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    /// Copy with the network inlined, so the result is self-contained.
    pub fn resolved(&self) -> Result<Scenario> {
        let mut sc = self.clone();
        sc.network = NetworkRef::Inline(Box::new(self.network.resolve()?));
        Ok(sc)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the
    /// scenario (`gains.alpha`, `topology.links`); values are TOML literals,
    /// falling back to a bare string. The result is type-checked.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Scenario> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let bad = |m: String| Error::Parse { what: "override".into(), message: m };
        let mut root = toml::Value::try_from(self).map_err(|e| bad(e.to_string()))?;
        for (key, raw) in overrides {
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            let parts: Vec<&str> = key.split('.').collect();
            let mut node = &mut root;
            for part in &parts[..parts.len() - 1] {
                let table = node.as_table_mut().ok_or_else(|| bad(format!("'{key}' does not name a table field")))?;
                node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            let table = node.as_table_mut().ok_or_else(|| bad(format!("'{key}' does not name a table field")))?;
            table.insert(parts[parts.len() - 1].to_string(), value);
        }
        let mut sc: Scenario = root.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        sc.sort_events();
        Ok(sc)
    }

    /// Statically checks the scenario against its network; the same
    /// checks run when a simulation is built.
    pub fn validate(&self) -> Result<()> {
        Simulation::new(self).map(|_| ())
    }

    pub(crate) fn build_graph(&self, net: &NetworkModel) -> Result<CommGraph> {
        let n = net.inverters.len();
        let index = |id: u32| {
            net.inverter_index(id).ok_or_else(|| Error::config(format!("topology references unknown inverter {id}")))
        };
        let edges = |links: &[[u32; 2]]| -> Result<Vec<(usize, usize)>> {
            links.iter().map(|[a, b]| Ok((index(*a)?, index(*b)?))).collect()
        };
        match &self.topology {
            TopologySpec::Complete => Ok(CommGraph::complete(n)),
            TopologySpec::Empty => Ok(CommGraph::empty(n)),
            TopologySpec::Edges { links } => {
                let g = CommGraph::from_edges(n, &edges(links)?)?;
                if !crate::consensus::is_connected(&g) {
                    return Err(Error::config("communication topology is not connected (use kind = \"forced\")"));
                }
                Ok(g)
            }
            TopologySpec::Forced { links } => CommGraph::from_edges(n, &edges(links)?),
            TopologySpec::Random { links, seed } => {
                crate::consensus::random_connected_topology(n, *links, seed.unwrap_or(self.seed))
            }
        }
    }
}

/// Where a scenario came from, for reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Library(String),
    File(PathBuf),
}

/// Resolves a library case name, a scenario file path, or a run manifest
/// (`*.json`), whose scenario is checked against the recorded hash.
pub fn resolve_scenario(reference: &str) -> Result<(Scenario, ScenarioSource)> {
    if let Some(sc) = library_case(reference) {
        return Ok((sc, ScenarioSource::Library(reference.to_string())));
    }
    let path = Path::new(reference);
    if path.exists() {
        let sc = if path.extension().is_some_and(|e| e == "json") {
            crate::output::Manifest::load(path)?.scenario(path)?
        } else {
            Scenario::load(path)?
        };
        return Ok((sc, ScenarioSource::File(path.to_path_buf())));
    }
    Err(Error::config(format!("'{reference}' is neither a library case nor a scenario file")))
}
