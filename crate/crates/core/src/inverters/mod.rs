//! Reduced-order GFM and GFL inverter models with their primary droop
//! controls.
//!
//! Power is carried in kW/kvar, voltages in per-unit, frequencies in rad/s.
//! Angles are measured against a single synchronous frame rotating at the
//! nominal frequency.

mod filters;
mod gfl;
mod gfm;

pub use filters::{lpf_update, rk4};
pub use gfl::{gfl_power_reference, gfl_primary_step, gfl_saturate, gfl_var_reference, pll_update, GflState};
pub use gfm::{droop_frequency, droop_voltage, gfm_primary_step, GfmState, EMF_MAX, EMF_MIN};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Below this terminal voltage magnitude (pu) the PLL frequency estimate is
/// frozen.
pub const PLL_FREEZE_VOLTAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverterKind {
    Gfm,
    Gfl,
}

/// Inverter description as it appears in the network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterSpec {
    pub id: u32,
    pub kind: InverterKind,
    pub bus: String,
    pub rating_kw: f64,
    /// Coupling impedance `[r, x]` in per-unit of the network base (GFM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<[f64; 2]>,
    #[serde(default = "default_freq_droop")]
    pub freq_droop_pct: f64,
    #[serde(default = "default_volt_droop")]
    pub volt_droop_pct: f64,
    /// Pre-dispatch real-power setpoint.
    pub p_set_kw: f64,
    #[serde(default = "one")]
    pub v_set_pu: f64,
    #[serde(default)]
    pub q_nom_kvar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_kw: Option<f64>,
    #[serde(default)]
    pub p_min_kw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_kvar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min_kvar: Option<f64>,
    #[serde(default = "default_filter_hz")]
    pub filter_hz: f64,
    #[serde(default = "default_kp_v")]
    pub kp_v: f64,
    #[serde(default = "default_ki_v")]
    pub ki_v: f64,
    #[serde(default = "default_kp_pll")]
    pub kp_pll: f64,
    #[serde(default = "default_ki_pll")]
    pub ki_pll: f64,
    #[serde(default = "default_tau_act")]
    pub actuation_tau_s: f64,
}

fn one() -> f64 {
    1.0
}
fn default_freq_droop() -> f64 {
    1.0
}
fn default_volt_droop() -> f64 {
    5.0
}
fn default_filter_hz() -> f64 {
    10.0
}
fn default_kp_v() -> f64 {
    0.1
}
fn default_ki_v() -> f64 {
    40.0
}
// ~50 ms settling: zeta = 0.707, zeta * omega_n = 80 rad/s.
fn default_kp_pll() -> f64 {
    160.0
}
fn default_ki_pll() -> f64 {
    12_800.0
}
fn default_tau_act() -> f64 {
    0.02
}

impl InverterSpec {
    /// Minimal spec with every control parameter at its default.
    pub fn new(id: u32, kind: InverterKind, bus: &str, rating_kw: f64, p_set_kw: f64) -> Self {
        InverterSpec {
            id,
            kind,
            bus: bus.to_string(),
            rating_kw,
            coupling: None,
            freq_droop_pct: default_freq_droop(),
            volt_droop_pct: default_volt_droop(),
            p_set_kw,
            v_set_pu: 1.0,
            q_nom_kvar: 0.0,
            p_max_kw: None,
            p_min_kw: 0.0,
            q_max_kvar: None,
            q_min_kvar: None,
            filter_hz: default_filter_hz(),
            kp_v: default_kp_v(),
            ki_v: default_ki_v(),
            kp_pll: default_kp_pll(),
            ki_pll: default_ki_pll(),
            actuation_tau_s: default_tau_act(),
        }
    }
}

/// Frequency droop gain from a percent droop: `pct` percent of nominal
/// frequency across the full rating (rad/s per kW).
pub fn freq_droop_gain(pct: f64, omega_nom: f64, rating_kw: f64) -> f64 {
    pct / 100.0 * omega_nom / rating_kw
}

/// Voltage droop gain from a percent droop: `pct` percent of the 1 pu
/// nominal voltage across the full rating (pu per kvar).
pub fn volt_droop_gain(pct: f64, rating_kw: f64) -> f64 {
    pct / 100.0 / rating_kw
}

/// Resolved, validated inverter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterParams {
    pub id: u32,
    pub kind: InverterKind,
    pub bus: usize,
    pub rating_kw: f64,
    pub coupling: Complex64,
    /// rad/s per kW
    pub m_p: f64,
    /// pu per kvar
    pub m_q: f64,
    pub omega_nom: f64,
    pub p_set0: f64,
    pub v_set0: f64,
    pub q_nom: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub omega_f: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_pll: f64,
    pub ki_pll: f64,
    pub tau_act: f64,
}

impl InverterParams {
    pub fn from_spec(spec: &InverterSpec, bus: usize, f_nom_hz: f64) -> Result<Self> {
        let omega_nom = 2.0 * PI * f_nom_hz;
        let id = spec.id;
        let bad = |msg: &str| Error::config(format!("inverter {id}: {msg}"));
        if !(spec.rating_kw > 0.0) {
            return Err(bad("rating must be positive"));
        }
        if !(spec.freq_droop_pct > 0.0 && spec.volt_droop_pct > 0.0) {
            return Err(bad("droop percentages must be positive"));
        }
        let p_max = spec.p_max_kw.unwrap_or(spec.rating_kw);
        if !(spec.p_min_kw <= p_max && p_max <= spec.rating_kw) {
            return Err(bad("requires p_min <= p_max <= rating"));
        }
        let q_max = spec.q_max_kvar.unwrap_or(spec.rating_kw);
        let q_min = spec.q_min_kvar.unwrap_or(-spec.rating_kw);
        if q_min > q_max {
            return Err(bad("q_min exceeds q_max"));
        }
        let coupling = match (spec.kind, spec.coupling) {
            (InverterKind::Gfm, Some([r, x])) => {
                if r < 0.0 || Complex64::new(r, x).norm() < 1e-9 {
                    return Err(bad("coupling impedance must have r >= 0 and nonzero magnitude"));
                }
                Complex64::new(r, x)
            }
            (InverterKind::Gfm, None) => return Err(bad("grid-forming unit needs a coupling impedance")),
            (InverterKind::Gfl, _) => Complex64::new(0.0, 0.0),
        };
        let positive = [
            ("filter_hz", spec.filter_hz),
            ("kp_pll", spec.kp_pll),
            ("ki_pll", spec.ki_pll),
            ("actuation_tau_s", spec.actuation_tau_s),
            ("ki_v", spec.ki_v),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(bad(&format!("{name} must be positive")));
            }
        }
        if spec.kp_v < 0.0 {
            return Err(bad("kp_v must be non-negative"));
        }
        Ok(InverterParams {
            id,
            kind: spec.kind,
            bus,
            rating_kw: spec.rating_kw,
            coupling,
            m_p: freq_droop_gain(spec.freq_droop_pct, omega_nom, spec.rating_kw),
            m_q: volt_droop_gain(spec.volt_droop_pct, spec.rating_kw),
            omega_nom,
            p_set0: spec.p_set_kw,
            v_set0: spec.v_set_pu,
            q_nom: spec.q_nom_kvar,
            p_max,
            p_min: spec.p_min_kw,
            q_max,
            q_min,
            omega_f: 2.0 * PI * spec.filter_hz,
            kp_v: spec.kp_v,
            ki_v: spec.ki_v,
            kp_pll: spec.kp_pll,
            ki_pll: spec.ki_pll,
            tau_act: spec.actuation_tau_s,
        })
    }

    pub fn is_gfm(&self) -> bool {
        self.kind == InverterKind::Gfm
    }
}

/// Terminal measurements handed to a grid-forming unit after a network solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalMeasurement {
    /// Terminal voltage phasor (pu, synchronous frame).
    pub v: Complex64,
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Dynamic state of one inverter.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitState {
    Gfm(GfmState),
    Gfl(GflState),
}

impl UnitState {
    pub fn initial(params: &InverterParams) -> Self {
        match params.kind {
            InverterKind::Gfm => UnitState::Gfm(GfmState::initial(params)),
            InverterKind::Gfl => UnitState::Gfl(GflState::initial(params)),
        }
    }

    pub fn p_set(&self) -> f64 {
        match self {
            UnitState::Gfm(s) => s.p_set,
            UnitState::Gfl(s) => s.p_set,
        }
    }

    pub fn v_set(&self) -> f64 {
        match self {
            UnitState::Gfm(s) => s.v_set,
            UnitState::Gfl(s) => s.v_set,
        }
    }

    pub fn set_setpoints(&mut self, p_set: f64, v_set: f64) {
        match self {
            UnitState::Gfm(s) => {
                s.p_set = p_set;
                s.v_set = v_set;
            }
            UnitState::Gfl(s) => {
                s.p_set = p_set;
                s.v_set = v_set;
            }
        }
    }

    /// Locally measured frequency (rad/s): droop reference for GFM, PLL
    /// estimate for GFL.
    pub fn omega(&self) -> f64 {
        match self {
            UnitState::Gfm(s) => s.omega,
            UnitState::Gfl(s) => s.omega,
        }
    }

    /// Filtered terminal voltage magnitude (pu).
    pub fn v_filtered(&self) -> f64 {
        match self {
            UnitState::Gfm(s) => s.v_f,
            UnitState::Gfl(s) => s.v_f,
        }
    }
}
