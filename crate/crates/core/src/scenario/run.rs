use num_complex::Complex64;

use super::record::{IndexSample, IslandSample, Sample, TimeSeriesRecord, UnitSample};
use super::{Action, Event, Scenario};
use crate::consensus::{
    apply_comm_event, freq_secondary_step, volt_secondary_step, Agent, CommEvent, CommGraph, ControlMode, SecondaryGains,
};
use crate::error::{Error, Result};
use crate::inverters::{gfl_primary_step, gfm_primary_step, InverterParams, TerminalMeasurement, UnitState};
use crate::metrics::{v_error, MetricValue, SharingSnapshot, SharingUnit};
use crate::network::{
    detect_islands_with, solve_network, AdmittanceMatrix, Injection, IslandDescriptor, NetworkModel, NetworkSolution,
    OperatingPoint, SolverOptions, SwitchStates,
};

/// A run stopped by a solver failure, with everything recorded before it.
#[derive(Debug)]
pub struct Aborted {
    pub record: TimeSeriesRecord,
    pub t: f64,
    pub error: Error,
}

/// Relative change per secondary period below which the pre-roll counts
/// as stationary.
const SETTLE_TOL: f64 = 1e-12;

/// Simulation state of one scenario run.
#[derive(Debug, Clone)]
pub struct Simulation {
    name: String,
    mode: ControlMode,
    net: NetworkModel,
    fleet: Vec<InverterParams>,
    units: Vec<UnitState>,
    online: Vec<bool>,
    switches: SwitchStates,
    loads: Vec<Option<Complex64>>,
    graph: CommGraph,
    gains: SecondaryGains,
    islands: Vec<(IslandDescriptor, AdmittanceMatrix)>,
    island_of: Vec<Option<usize>>,
    last: Option<NetworkSolution>,
    opts: SolverOptions,
    dt: f64,
    sec_every: usize,
    decimation: usize,
    steps: usize,
    settle_steps: usize,
    events: Vec<(usize, Event)>,
}

fn relative_pu(pct: f64) -> f64 {
    pct / 100.0
}

impl Simulation {
    /// Validates `scenario` against its network and builds the initial
    /// state (before the pre-roll).
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let net = scenario.network.resolve()?;
        let fleet = net.fleet()?;
        let n = fleet.len();
        let bad = |m: String| Error::config(m);
        if !(scenario.duration_s > 0.0 && scenario.dt_s > 0.0 && scenario.dt_sec_s > 0.0) {
            return Err(bad("duration_s, dt_s and dt_sec_s must be positive".into()));
        }
        let ratio = scenario.dt_sec_s / scenario.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(bad(format!("dt_sec_s ({}) must be an integer multiple of dt_s ({})", scenario.dt_sec_s, scenario.dt_s)));
        }
        if scenario.decimation == 0 {
            return Err(bad("decimation must be at least 1".into()));
        }
        if !(scenario.settle_s >= 0.0 && scenario.steady_window_s > 0.0) {
            return Err(bad("settle_s must be non-negative and steady_window_s positive".into()));
        }
        let g = &scenario.gains;
        if !(g.tau_p_s > 0.0 && g.k_q_gfm_s > 0.0 && g.k_q_gfl_s > 0.0) {
            return Err(bad("tau_p_s, k_q_gfm_s and k_q_gfl_s must be positive".into()));
        }
        let gains = SecondaryGains {
            k_p: fleet.iter().map(|p| p.m_p * g.tau_p_s).collect(),
            k_q: fleet.iter().map(|p| if p.is_gfm() { g.k_q_gfm_s } else { g.k_q_gfl_s }).collect(),
            alpha: g.alpha,
            beta: g.beta,
            dt_sec: scenario.dt_sec_s,
        };
        gains.validate(n)?;
        let graph = scenario.build_graph(&net)?;

        let steps_of = |t: f64| (t / scenario.dt_s).round() as usize;
        let mut events = Vec::new();
        for ev in &scenario.events {
            if !(ev.t >= 0.0 && ev.t <= scenario.duration_s) {
                return Err(bad(format!("event at t = {} s lies outside [0, {}]", ev.t, scenario.duration_s)));
            }
            check_event(&net, &fleet, &graph, &ev.action)?;
            events.push((steps_of(ev.t), ev.clone()));
        }
        events.sort_by_key(|(k, _)| *k);

        let mut sim = Simulation {
            name: scenario.name.clone(),
            mode: scenario.mode,
            units: fleet.iter().map(UnitState::initial).collect(),
            online: vec![true; n],
            switches: net.default_switch_states(),
            loads: net.loads.iter().map(|l| Some(Complex64::new(l.p_kw, l.q_kvar))).collect(),
            graph,
            gains,
            islands: Vec::new(),
            island_of: vec![None; n],
            last: None,
            opts: SolverOptions::default(),
            dt: scenario.dt_s,
            sec_every: ratio.round() as usize,
            decimation: scenario.decimation,
            steps: steps_of(scenario.duration_s),
            settle_steps: steps_of(scenario.settle_s),
            events,
            net,
            fleet,
        };
        sim.retopologize();
        Ok(sim)
    }

    pub fn fleet(&self) -> &[InverterParams] {
        &self.fleet
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn units(&self) -> &[UnitState] {
        &self.units
    }

    fn retopologize(&mut self) {
        let mut desc = detect_islands_with(&self.net, &self.switches, &self.online);
        let mut changed = false;
        for d in desc.iter().filter(|d| !d.energized) {
            for &k in &d.inverters {
                self.online[k] = false;
                changed = true;
            }
        }
        if changed {
            desc = detect_islands_with(&self.net, &self.switches, &self.online);
        }
        for k in 0..self.fleet.len() {
            self.graph.set_online(k, self.online[k]);
        }
        self.islands = crate::network::topology_admittance(&self.net, &self.switches, desc);
        self.island_of = vec![None; self.fleet.len()];
        for (i, (d, _)) in self.islands.iter().enumerate() {
            for &k in &d.inverters {
                self.island_of[k] = Some(i);
            }
        }
    }

    fn solve(&self) -> Result<NetworkSolution> {
        let inj: Vec<Injection> = self
            .units
            .iter()
            .enumerate()
            .map(|(k, u)| match (self.online[k], u) {
                (false, _) => Injection::Offline,
                (true, UnitState::Gfm(s)) => Injection::Source { emf: s.source() },
                (true, UnitState::Gfl(s)) => Injection::Power { s_kw: Complex64::new(s.p_out, s.q_out) },
            })
            .collect();
        let op = OperatingPoint { inverters: &inj, loads: &self.loads };
        solve_network(&self.net, &self.fleet, &self.islands, &op, self.last.as_ref(), &self.opts)
    }

    fn terminal_voltage(&self, sol: &NetworkSolution, k: usize) -> Option<Complex64> {
        sol.bus_voltage[self.fleet[k].bus]
    }

    fn measured_pq(&self, sol: &NetworkSolution, k: usize) -> (f64, f64) {
        match (&self.units[k], sol.inverter[k]) {
            (UnitState::Gfl(s), _) => (s.p_out, s.q_out),
            (UnitState::Gfm(_), Some(t)) => (t.p_kw, t.q_kvar),
            (UnitState::Gfm(_), None) => (0.0, 0.0),
        }
    }

    fn primary(&mut self, sol: &NetworkSolution) {
        for k in 0..self.fleet.len() {
            if !self.online[k] {
                continue;
            }
            let p = &self.fleet[k];
            let v = self.terminal_voltage(sol, k).expect("online unit sits on an energized island");
            match &mut self.units[k] {
                UnitState::Gfm(s) => {
                    let t = sol.inverter[k].expect("online source has a terminal solution");
                    let meas = TerminalMeasurement { v: t.v, p_kw: t.p_kw, q_kvar: t.q_kvar };
                    *s = gfm_primary_step(p, s, &meas, self.dt).0;
                }
                UnitState::Gfl(s) => *s = gfl_primary_step(p, s, v, self.dt).0,
            }
        }
    }

    /// Agents seen by the secondary layer. Units on a grid-connected island
    /// do not run secondary control.
    pub fn agents(&self, sol: &NetworkSolution) -> Vec<Agent> {
        (0..self.fleet.len())
            .map(|k| {
                let p = &self.fleet[k];
                let u = &self.units[k];
                let island = self.island_of[k].map(|i| &self.islands[i].0);
                let (_, q) = self.measured_pq(sol, k);
                Agent {
                    kind: p.kind,
                    active: self.online[k] && island.is_some_and(|d| !d.has_grid),
                    group: island.map_or(usize::MAX, |d| d.label()),
                    m_p: p.m_p,
                    p_set: u.p_set(),
                    p_min: p.p_min,
                    p_max: p.p_max,
                    omega: u.omega(),
                    m_q: p.m_q,
                    q,
                    v: self.terminal_voltage(sol, k).map_or(0.0, |v| v.norm()),
                    v_set: u.v_set(),
                }
            })
            .collect()
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn gains(&self) -> &SecondaryGains {
        &self.gains
    }

    fn secondary(&mut self, sol: &NetworkSolution) -> Result<()> {
        if self.mode == ControlMode::NoControl {
            return Ok(());
        }
        let agents = self.agents(sol);
        let omega_nom = self.fleet.first().map_or(0.0, |p| p.omega_nom);
        let p_set = freq_secondary_step(self.mode, &self.graph, &self.gains, &agents, omega_nom)?;
        let v_set = volt_secondary_step(self.mode, &self.graph, &self.gains, &agents)?;
        for (k, u) in self.units.iter_mut().enumerate() {
            if agents[k].active {
                u.set_setpoints(p_set[k], v_set[k]);
            }
        }
        Ok(())
    }

    /// One step at index `k`: solve, advance primary control, and every
    /// secondary period the setpoints. Returns the solution the step used.
    fn step(&mut self, k: usize) -> Result<NetworkSolution> {
        let sol = self.solve()?;
        self.primary(&sol);
        if k % self.sec_every == 0 {
            self.secondary(&sol)?;
        }
        self.last = Some(sol.clone());
        Ok(sol)
    }

    fn fingerprint(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for u in &self.units {
            match u {
                UnitState::Gfm(s) => out.extend([s.emf, s.v_int, s.p_f, s.q_f, s.v_f, s.p_set, s.v_set, s.omega]),
                UnitState::Gfl(s) => out.extend([s.pll_int, s.omega, s.v_f, s.p_out, s.q_out, s.p_set, s.v_set]),
            }
        }
        out
    }

    /// Runs the pre-roll until the state is stationary or `settle_s`
    /// elapses. Returns the pre-roll length in steps.
    pub fn settle(&mut self) -> Result<usize> {
        let mut prev = self.fingerprint();
        for k in 0..self.settle_steps {
            self.step(k)?;
            if (k + 1) % self.sec_every == 0 {
                let now = self.fingerprint();
                let stationary = now.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= SETTLE_TOL * a.abs().max(1.0));
                if stationary {
                    return Ok(k + 1);
                }
                prev = now;
            }
        }
        Ok(self.settle_steps)
    }

    fn apply(&mut self, action: &Action) -> Result<()> {
        let idx = |id: u32| self.net.inverter_index(id).expect("validated");
        match action {
            Action::SwitchOpen { switch } | Action::SwitchClose { switch } => {
                self.switches.insert(switch.clone(), matches!(action, Action::SwitchClose { .. }));
                self.retopologize();
            }
            Action::LoadDisconnect { load } => {
                let l = self.net.load_index(load).expect("validated");
                self.loads[l] = None;
            }
            Action::LoadChange { load, p_kw, q_kvar } => {
                let l = self.net.load_index(load).expect("validated");
                self.loads[l] = Some(Complex64::new(*p_kw, *q_kvar));
            }
            Action::PmaxChange { inverter, p_max_kw } => {
                let k = idx(*inverter);
                self.fleet[k].p_max = *p_max_kw;
            }
            Action::InverterTrip { inverter } => {
                let k = idx(*inverter);
                self.online[k] = false;
                if let UnitState::Gfl(s) = &mut self.units[k] {
                    s.connected = false;
                }
                self.retopologize();
            }
            Action::InverterReconnect { inverter } => {
                let k = idx(*inverter);
                if !self.online[k] {
                    let terminal = self.last.as_ref().and_then(|s| self.terminal_voltage(s, k));
                    let p = &self.fleet[k];
                    match &mut self.units[k] {
                        UnitState::Gfm(s) => s.reset_on_reconnect(p, terminal),
                        UnitState::Gfl(s) => s.reset_on_reconnect(p, terminal),
                    }
                    self.online[k] = true;
                    self.retopologize();
                }
            }
            Action::CommLinkFail { link: [a, b] } => {
                self.graph = apply_comm_event(&self.graph, CommEvent::Fail(idx(*a), idx(*b)))?;
            }
            Action::CommLinkRestore { link: [a, b] } => {
                self.graph = apply_comm_event(&self.graph, CommEvent::Restore(idx(*a), idx(*b)))?;
            }
        }
        Ok(())
    }

    fn index_of(&self, members: &[usize], sol: &NetworkSolution, f_nom: f64) -> IndexSample {
        let units: Vec<SharingUnit> = members
            .iter()
            .map(|&k| {
                let (p, q) = self.measured_pq(sol, k);
                let spec = &self.net.inverters[k];
                SharingUnit {
                    m_p: relative_pu(spec.freq_droop_pct),
                    m_q: relative_pu(spec.volt_droop_pct),
                    p,
                    q,
                    rating: spec.rating_kw,
                }
            })
            .collect();
        let snap = SharingSnapshot { units };
        let (eta_p, eta_q) = snap.eta();
        let volts: Vec<f64> =
            members.iter().filter_map(|&k| self.terminal_voltage(sol, k)).map(|v| v.norm()).collect();
        let f_err = members
            .iter()
            .map(|&k| (self.units[k].omega() / (2.0 * std::f64::consts::PI) - f_nom).abs())
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
        IndexSample {
            eta_p,
            eta_q,
            mpsi: snap.mpsi(),
            mqsi: snap.mqsi(),
            v_error: v_error(&volts),
            f_error_hz: f_err.into(),
        }
    }

    fn sample(&self, t: f64, sol: &NetworkSolution) -> Sample {
        let f_nom = self.net.f_nom_hz;
        let units = (0..self.fleet.len())
            .map(|k| {
                let u = &self.units[k];
                let on = self.online[k];
                let (p, q) = if on { self.measured_pq(sol, k) } else { (0.0, 0.0) };
                UnitSample {
                    online: on,
                    island: self.island_of[k].map(|i| self.islands[i].0.label()),
                    f_hz: on.then(|| u.omega() / (2.0 * std::f64::consts::PI)),
                    v_pu: if on { self.terminal_voltage(sol, k).map(|v| v.norm()) } else { None },
                    p_kw: p,
                    q_kvar: q,
                    p_set_kw: u.p_set(),
                    v_set_pu: u.v_set(),
                }
            })
            .collect();
        let islands: Vec<IslandSample> = self
            .islands
            .iter()
            .filter(|(d, _)| d.energized && !d.inverters.is_empty())
            .map(|(d, _)| IslandSample {
                label: d.label(),
                members: d.inverters.clone(),
                index: self.index_of(&d.inverters, sol, f_nom),
            })
            .collect();
        Sample { t, units, system: self.system_index(&islands, sol, f_nom), islands }
    }

    /// Fleet-wide indices. Each unit's deviation is taken against its own
    /// island's sharing parameter, then averaged over all online units.
    fn system_index(&self, islands: &[IslandSample], sol: &NetworkSolution, f_nom: f64) -> IndexSample {
        if islands.len() == 1 {
            return islands[0].index;
        }
        let all: Vec<usize> = islands.iter().flat_map(|i| i.members.iter().copied()).collect();
        let whole = self.index_of(&all, sol, f_nom);
        let pooled = |f: fn(&IndexSample) -> MetricValue| -> MetricValue {
            let mut acc = 0.0;
            for isl in islands {
                match f(&isl.index).value() {
                    Some(v) => acc += v * isl.members.len() as f64,
                    None => return MetricValue::Undefined,
                }
            }
            if all.is_empty() {
                MetricValue::Undefined
            } else {
                MetricValue::Defined(acc / all.len() as f64)
            }
        };
        IndexSample { mpsi: pooled(|x| x.mpsi), mqsi: pooled(|x| x.mqsi), ..whole }
    }

    fn empty_record(&self) -> TimeSeriesRecord {
        let mut times: Vec<f64> = self.events.iter().map(|(_, e)| e.t).collect();
        times.dedup();
        TimeSeriesRecord {
            scenario: self.name.clone(),
            f_nom_hz: self.net.f_nom_hz,
            ids: self.net.inverters.iter().map(|i| i.id).collect(),
            kinds: self.fleet.iter().map(|p| p.kind).collect(),
            bus_names: self.net.buses.iter().map(|b| b.id.clone()).collect(),
            duration_s: self.steps as f64 * self.dt,
            event_times: times,
            samples: Vec::new(),
        }
    }

    /// Pre-roll, then the scripted horizon.
    pub fn run(mut self) -> std::result::Result<TimeSeriesRecord, Box<Aborted>> {
        let mut record = self.empty_record();
        if let Err(error) = self.settle() {
            return Err(Box::new(Aborted { record, t: 0.0, error }));
        }
        let mut next_event = 0;
        for k in 0..=self.steps {
            let t = k as f64 * self.dt;
            while next_event < self.events.len() && self.events[next_event].0 == k {
                let action = self.events[next_event].1.action.clone();
                if let Err(error) = self.apply(&action) {
                    return Err(Box::new(Aborted { record, t, error }));
                }
                next_event += 1;
            }
            let sol = match self.solve() {
                Ok(sol) => sol,
                Err(error) => return Err(Box::new(Aborted { record, t, error })),
            };
            if k % self.decimation == 0 {
                record.samples.push(self.sample(t, &sol));
            }
            if k == self.steps {
                break;
            }
            self.primary(&sol);
            if k % self.sec_every == 0 {
                if let Err(error) = self.secondary(&sol) {
                    return Err(Box::new(Aborted { record, t, error }));
                }
            }
            self.last = Some(sol);
        }
        Ok(record)
    }

    /// Runs up to (and including) the solve at time `t`, returning the
    /// agents the secondary layer sees there. Used to inspect equilibria.
    pub fn run_until(&mut self, t: f64) -> Result<Vec<Agent>> {
        self.settle()?;
        let end = ((t / self.dt).round() as usize).min(self.steps);
        let mut next_event = 0;
        for k in 0..=end {
            while next_event < self.events.len() && self.events[next_event].0 == k {
                let action = self.events[next_event].1.action.clone();
                self.apply(&action)?;
                next_event += 1;
            }
            if k == end {
                let sol = self.solve()?;
                return Ok(self.agents(&sol));
            }
            self.step(k)?;
        }
        unreachable!("loop returns at k == end")
    }
}

fn check_event(net: &NetworkModel, fleet: &[InverterParams], graph: &CommGraph, action: &Action) -> Result<()> {
    let inverter = |id: u32| {
        net.inverter_index(id).ok_or_else(|| Error::config(format!("event targets unknown inverter {id}")))
    };
    match action {
        Action::SwitchOpen { switch } | Action::SwitchClose { switch } => {
            if !net.switches.iter().any(|s| &s.name == switch) {
                return Err(Error::config(format!("event targets unknown switch '{switch}'")));
            }
        }
        Action::LoadDisconnect { load } | Action::LoadChange { load, .. } => {
            let l = net.load_index(load).ok_or_else(|| Error::config(format!("event targets unknown load '{load}'")))?;
            if !net.loads[l].connectable {
                return Err(Error::config(format!("load '{load}' is not connectable")));
            }
        }
        Action::PmaxChange { inverter: id, p_max_kw } => {
            let p = &fleet[inverter(*id)?];
            if !(*p_max_kw >= p.p_min && *p_max_kw <= p.rating_kw) {
                return Err(Error::config(format!("P_max {p_max_kw} kW for inverter {id} outside [P_min, rating]")));
            }
        }
        Action::InverterTrip { inverter: id } | Action::InverterReconnect { inverter: id } => {
            inverter(*id)?;
        }
        Action::CommLinkFail { link: [a, b] } | Action::CommLinkRestore { link: [a, b] } => {
            let (i, j) = (inverter(*a)?, inverter(*b)?);
            if !graph.has_link(i, j) {
                return Err(Error::config(format!("event targets unknown communication link ({a}, {b})")));
            }
        }
    }
    Ok(())
}

/// Builds, settles and runs a scenario.
pub fn run(scenario: &Scenario) -> Result<TimeSeriesRecord> {
    Simulation::new(scenario)?.run().map_err(|a| a.error)
}
