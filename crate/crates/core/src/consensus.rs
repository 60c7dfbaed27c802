//! Secondary control: leader-follower consensus on the droop setpoints over
//! a communication graph.
//!
//! GFM units are leaders: besides the consensus term they carry the
//! frequency restoration input `ω_i − ω_nom` and the voltage regulation
//! input `α (V_i − 1)`. GFL units are pure followers.
//!
//! Units: the real-power consensus variable is `y_i = m_p,i P_set,i` (rad/s)
//! and `k_p` is in rad/kW, so `k_p Ṗ_set` is in rad/s². The reactive
//! variable is `m_q,i Q_i` (pu) and `k_q` is in seconds.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverters::InverterKind;

/// Undirected communication graph over the inverter fleet (0-based fleet
/// indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    disabled: BTreeSet<(usize, usize)>,
    online: Vec<bool>,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl CommGraph {
    pub fn empty(n: usize) -> Self {
        CommGraph { n, edges: BTreeSet::new(), disabled: BTreeSet::new(), online: vec![true; n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = CommGraph::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                g.edges.insert((i, j));
            }
        }
        g
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = CommGraph::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::config(format!("link ({i}, {j}) outside a {n}-node graph")));
            }
            if i == j {
                return Err(Error::config(format!("self-loop on node {i}")));
            }
            g.edges.insert(key(i, j));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Links present in the topology, enabled or not.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn link_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_link(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&key(i, j))
    }

    pub fn link_enabled(&self, i: usize, j: usize) -> bool {
        self.has_link(i, j) && !self.disabled.contains(&key(i, j))
    }

    pub fn is_online(&self, i: usize) -> bool {
        self.online[i]
    }

    pub fn set_online(&mut self, i: usize, online: bool) {
        self.online[i] = online;
    }

    /// Effective adjacency: link present, enabled, and both endpoints online.
    pub fn effective(&self, i: usize, j: usize) -> bool {
        i != j && self.online[i] && self.online[j] && self.link_enabled(i, j)
    }

    /// Connected components of the effective graph over online nodes.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] || !self.online[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                comp.push(i);
                for j in 0..self.n {
                    if !seen[j] && self.effective(i, j) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// True when the effective graph forms a single component over the online
/// nodes.
pub fn is_connected(graph: &CommGraph) -> bool {
    graph.components().len() <= 1
}

/// Random connected graph with exactly `links` edges: a uniform random
/// spanning tree (Prüfer sequence) plus uniformly drawn extra edges.
pub fn random_connected_topology(n: usize, links: usize, seed: u64) -> Result<CommGraph> {
    let max = n * n.saturating_sub(1) / 2;
    if n == 0 || links + 1 < n || links > max {
        return Err(Error::config(format!(
            "{links} links cannot form a connected graph on {n} nodes (need {}..={max})",
            n.saturating_sub(1)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = CommGraph::empty(n);
    if n >= 2 {
        let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &p in &prufer {
            degree[p] += 1;
        }
        for &p in &prufer {
            let leaf = (0..n).find(|&k| degree[k] == 1).expect("a leaf always exists");
            g.edges.insert(key(leaf, p));
            degree[leaf] -= 1;
            degree[p] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&k| degree[k] == 1).collect();
        g.edges.insert(key(rest[0], rest[1]));
    }
    let mut spare: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|e| !g.edges.contains(e)).collect();
    spare.shuffle(&mut rng);
    g.edges.extend(spare.into_iter().take(links + 1 - n));
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommEvent {
    Fail(usize, usize),
    Restore(usize, usize),
}

/// Disables or re-enables an existing link.
pub fn apply_comm_event(graph: &CommGraph, event: CommEvent) -> Result<CommGraph> {
    let (i, j) = match event {
        CommEvent::Fail(i, j) | CommEvent::Restore(i, j) => (i, j),
    };
    if !graph.has_link(i, j) {
        return Err(Error::config(format!("no communication link ({i}, {j})")));
    }
    let mut g = graph.clone();
    match event {
        CommEvent::Fail(..) => g.disabled.insert(key(i, j)),
        CommEvent::Restore(..) => g.disabled.remove(&key(i, j)),
    };
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    NoControl,
    Uncoordinated,
    GfmCoordinated,
    FullyCoordinated,
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] =
        [ControlMode::NoControl, ControlMode::Uncoordinated, ControlMode::GfmCoordinated, ControlMode::FullyCoordinated];

    pub fn name(self) -> &'static str {
        match self {
            ControlMode::NoControl => "no_control",
            ControlMode::Uncoordinated => "uncoordinated",
            ControlMode::GfmCoordinated => "gfm_coordinated",
            ControlMode::FullyCoordinated => "fully_coordinated",
        }
    }

    /// Whether the consensus sums may use a link between units of these kinds.
    fn admits(self, a: InverterKind, b: InverterKind) -> bool {
        match self {
            ControlMode::NoControl | ControlMode::Uncoordinated => false,
            ControlMode::GfmCoordinated => a == InverterKind::Gfm && b == InverterKind::Gfm,
            ControlMode::FullyCoordinated => true,
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControlMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown control mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryGains {
    /// Per-inverter real-power gain (rad/kW).
    pub k_p: Vec<f64>,
    /// Per-inverter reactive gain (s).
    pub k_q: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Secondary update period (s).
    pub dt_sec: f64,
}

impl SecondaryGains {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k_p.len() != n || self.k_q.len() != n {
            return Err(Error::config(format!("gain vectors must have {n} entries")));
        }
        if self.k_p.iter().chain(&self.k_q).any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::config("k_p and k_q must be positive"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::config("alpha and beta must be non-negative with a positive sum"));
        }
        if !(self.dt_sec > 0.0) {
            return Err(Error::config("dt_sec must be positive"));
        }
        Ok(())
    }
}

/// What one inverter reports to the secondary layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub kind: InverterKind,
    /// Online and energized; inactive agents neither update nor communicate.
    pub active: bool,
    /// Electrical island label. Consensus only runs between agents that
    /// share an island.
    pub group: usize,
    pub m_p: f64,
    pub p_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Local frequency (rad/s).
    pub omega: f64,
    pub m_q: f64,
    /// Delivered reactive power (kvar).
    pub q: f64,
    /// Terminal voltage magnitude (pu).
    pub v: f64,
    pub v_set: f64,
}

impl Agent {
    pub fn is_gfm(&self) -> bool {
        self.kind == InverterKind::Gfm
    }
}

fn check(graph: &CommGraph, gains: &SecondaryGains, agents: &[Agent]) -> Result<()> {
    if graph.len() != agents.len() {
        return Err(Error::config(format!(
            "communication graph has {} nodes but the fleet has {} units",
            graph.len(),
            agents.len()
        )));
    }
    gains.validate(agents.len())
}

fn linked(mode: ControlMode, graph: &CommGraph, agents: &[Agent], i: usize, j: usize) -> bool {
    agents[j].active
        && agents[i].group == agents[j].group
        && graph.effective(i, j)
        && mode.admits(agents[i].kind, agents[j].kind)
}

fn consensus_sum(mode: ControlMode, graph: &CommGraph, agents: &[Agent], i: usize, x: impl Fn(&Agent) -> f64) -> f64 {
    let mut sum = 0.0;
    for j in 0..agents.len() {
        if linked(mode, graph, agents, i, j) {
            sum += x(&agents[i]) - x(&agents[j]);
        }
    }
    sum
}

/// Right-hand side `k_p,i Ṗ_set,i` negated, i.e. the quantity each agent
/// drives to zero: `Σ_j c_ij (y_i − y_j)` plus `ω_i − ω_nom` for leaders.
/// Agents that do not update get zero.
pub fn freq_residuals(mode: ControlMode, graph: &CommGraph, agents: &[Agent], omega_nom: f64) -> Vec<f64> {
    (0..agents.len())
        .map(|i| {
            let a = &agents[i];
            if mode == ControlMode::NoControl || !a.active {
                return 0.0;
            }
            let sum = consensus_sum(mode, graph, agents, i, |x| x.m_p * x.p_set);
            if a.is_gfm() {
                sum + (a.omega - omega_nom)
            } else {
                sum
            }
        })
        .collect()
}

/// Voltage counterpart of [`freq_residuals`]: `Σ_j c_ij (m_q,i Q_i − m_q,j Q_j)`
/// for followers, `α (V_i − 1) + β Σ_j …` for leaders.
pub fn volt_residuals(mode: ControlMode, graph: &CommGraph, alpha: f64, beta: f64, agents: &[Agent]) -> Vec<f64> {
    (0..agents.len())
        .map(|i| {
            let a = &agents[i];
            if mode == ControlMode::NoControl || !a.active {
                return 0.0;
            }
            let sum = consensus_sum(mode, graph, agents, i, |x| x.m_q * x.q);
            if a.is_gfm() {
                alpha * (a.v - 1.0) + beta * sum
            } else {
                sum
            }
        })
        .collect()
}

/// One forward-Euler update of the real-power setpoints.
///
/// Leader setpoints are held within `[P_min, P_max]` so a saturated leader
/// stops integrating; follower setpoints are never clamped, only their
/// delivered power is.
pub fn freq_secondary_step(
    mode: ControlMode,
    graph: &CommGraph,
    gains: &SecondaryGains,
    agents: &[Agent],
    omega_nom: f64,
) -> Result<Vec<f64>> {
    check(graph, gains, agents)?;
    let r = freq_residuals(mode, graph, agents, omega_nom);
    Ok(agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let p = a.p_set - gains.dt_sec * r[i] / gains.k_p[i];
            if a.is_gfm() && a.active && mode != ControlMode::NoControl {
                p.clamp(a.p_min, a.p_max)
            } else {
                p
            }
        })
        .collect())
}

/// One forward-Euler update of the voltage setpoints.
pub fn volt_secondary_step(mode: ControlMode, graph: &CommGraph, gains: &SecondaryGains, agents: &[Agent]) -> Result<Vec<f64>> {
    check(graph, gains, agents)?;
    let r = volt_residuals(mode, graph, gains.alpha, gains.beta, agents);
    Ok(agents.iter().enumerate().map(|(i, a)| a.v_set - gains.dt_sec * r[i] / gains.k_q[i]).collect())
}

/// Largest frequency-loop residual over agents whose setpoint is free to
/// move. A leader pinned at a setpoint limit with the residual pushing
/// further into the limit is at a constrained equilibrium and is skipped.
pub fn freq_equilibrium_residual(mode: ControlMode, graph: &CommGraph, agents: &[Agent], omega_nom: f64) -> f64 {
    let r = freq_residuals(mode, graph, agents, omega_nom);
    agents
        .iter()
        .zip(r)
        .filter(|(a, r)| {
            let pinned_high = a.is_gfm() && a.p_set >= a.p_max && *r < 0.0;
            let pinned_low = a.is_gfm() && a.p_set <= a.p_min && *r > 0.0;
            !(pinned_high || pinned_low)
        })
        .fold(0.0, |m, (_, r)| m.max(r.abs()))
}

pub fn volt_equilibrium_residual(mode: ControlMode, graph: &CommGraph, alpha: f64, beta: f64, agents: &[Agent]) -> f64 {
    volt_residuals(mode, graph, alpha, beta, agents).into_iter().fold(0.0, |m, r| m.max(r.abs()))
}
