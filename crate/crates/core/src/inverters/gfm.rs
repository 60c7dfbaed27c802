use num_complex::Complex64;

use super::{rk4, InverterParams, TerminalMeasurement};

/// Hard clamp on the internal voltage magnitude (pu).
pub const EMF_MIN: f64 = 0.5;
pub const EMF_MAX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GfmState {
    /// Internal angle relative to the synchronous frame (rad).
    pub delta: f64,
    /// Internal voltage magnitude (pu), output of the voltage PI loop.
    pub emf: f64,
    /// Voltage-loop integrator.
    pub v_int: f64,
    pub p_f: f64,
    pub q_f: f64,
    pub v_f: f64,
    pub p_set: f64,
    pub v_set: f64,
    /// Droop frequency reference at the current state (rad/s).
    pub omega: f64,
}

impl GfmState {
    pub fn initial(params: &InverterParams) -> Self {
        GfmState {
            delta: 0.0,
            emf: params.v_set0,
            v_int: params.v_set0,
            p_f: params.p_set0,
            q_f: params.q_nom,
            v_f: params.v_set0,
            p_set: params.p_set0,
            v_set: params.v_set0,
            omega: params.omega_nom,
        }
    }

    /// Internal source phasor `E∠δ`.
    pub fn source(&self) -> Complex64 {
        Complex64::from_polar(self.emf, self.delta)
    }

    /// Restart after a trip: integrators re-seeded from the terminal voltage,
    /// setpoints kept.
    pub fn reset_on_reconnect(&mut self, params: &InverterParams, terminal: Option<Complex64>) {
        let v = terminal.unwrap_or(Complex64::new(1.0, 0.0));
        self.delta = v.arg();
        self.v_int = v.norm().clamp(EMF_MIN, EMF_MAX);
        self.emf = self.v_int;
        self.p_f = 0.0;
        self.q_f = params.q_nom;
        self.v_f = v.norm();
        self.omega = droop_frequency(params, self.p_f, self.p_set);
    }
}

/// P-f droop: `ω_ref = ω_nom − m_p (P̃ − P_set)`.
pub fn droop_frequency(params: &InverterParams, p_filtered: f64, p_set: f64) -> f64 {
    params.omega_nom - params.m_p * (p_filtered - p_set)
}

/// Q-V droop: `V_ref = V_set − m_q (Q̃ − Q_nom)`.
pub fn droop_voltage(params: &InverterParams, q_filtered: f64, v_set: f64) -> f64 {
    v_set - params.m_q * (q_filtered - params.q_nom)
}

/// Advances the grid-forming primary control by `dt` with the network
/// measurements held, returning the new state and the internal source
/// phasor to use in the next network solve.
pub fn gfm_primary_step(
    params: &InverterParams,
    state: &GfmState,
    meas: &TerminalMeasurement,
    dt: f64,
) -> (GfmState, Complex64) {
    let v_mag = meas.v.norm();
    let (p_set, v_set) = (state.p_set, state.v_set);
    let wf = params.omega_f;
    let error = |q_f: f64, v_f: f64| droop_voltage(params, q_f, v_set) - v_f;

    // [delta, p_f, q_f, v_f, v_int]
    let x0 = [state.delta, state.p_f, state.q_f, state.v_f, state.v_int];
    let x1 = rk4(x0, dt, |x| {
        let err = error(x[2], x[3]);
        let unclamped = x[4] + params.kp_v * err;
        let wound_up = (unclamped >= EMF_MAX && err > 0.0) || (unclamped <= EMF_MIN && err < 0.0);
        [
            droop_frequency(params, x[1], p_set) - params.omega_nom,
            wf * (meas.p_kw - x[1]),
            wf * (meas.q_kvar - x[2]),
            wf * (v_mag - x[3]),
            if wound_up { 0.0 } else { params.ki_v * err },
        ]
    });

    let v_int = x1[4].clamp(EMF_MIN, EMF_MAX);
    let emf = (v_int + params.kp_v * error(x1[2], x1[3])).clamp(EMF_MIN, EMF_MAX);
    let next = GfmState {
        delta: x1[0],
        emf,
        v_int,
        p_f: x1[1],
        q_f: x1[2],
        v_f: x1[3],
        p_set,
        v_set,
        omega: droop_frequency(params, x1[1], p_set),
    };
    let source = next.source();
    (next, source)
}
