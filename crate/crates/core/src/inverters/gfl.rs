use num_complex::Complex64;

use super::{lpf_update, rk4, InverterParams, PLL_FREEZE_VOLTAGE};

#[derive(Debug, Clone, PartialEq)]
pub struct GflState {
    /// PLL angle relative to the synchronous frame (rad).
    pub theta_pll: f64,
    /// PLL integrator: frequency deviation estimate (rad/s).
    pub pll_int: f64,
    /// PLL frequency estimate (rad/s).
    pub omega: f64,
    pub v_f: f64,
    /// Delivered real/reactive power after the actuation lag and saturation.
    pub p_out: f64,
    pub q_out: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub p_set: f64,
    pub v_set: f64,
    pub connected: bool,
}

impl GflState {
    pub fn initial(params: &InverterParams) -> Self {
        let (p, q) = gfl_saturate(params, params.p_set0, params.q_nom);
        GflState {
            theta_pll: 0.0,
            pll_int: 0.0,
            omega: params.omega_nom,
            v_f: params.v_set0,
            p_out: p,
            q_out: q,
            p_ref: params.p_set0,
            q_ref: params.q_nom,
            p_set: params.p_set0,
            v_set: params.v_set0,
            connected: true,
        }
    }

    /// Restart after a trip: PLL locked to the present bus angle, output
    /// ramps from zero, setpoints kept.
    pub fn reset_on_reconnect(&mut self, params: &InverterParams, terminal: Option<Complex64>) {
        let v = terminal.unwrap_or(Complex64::new(1.0, 0.0));
        self.theta_pll = v.arg();
        self.pll_int = 0.0;
        self.omega = params.omega_nom;
        self.v_f = v.norm();
        self.p_out = params.p_min.max(0.0).min(params.p_max);
        self.q_out = 0.0f64.clamp(params.q_min, params.q_max);
        self.connected = true;
    }
}

/// Freq/watt droop: `P_ref = P_set + (ω_nom − ω) / m_p`.
pub fn gfl_power_reference(params: &InverterParams, omega: f64, p_set: f64) -> f64 {
    p_set + (params.omega_nom - omega) / params.m_p
}

/// Volt/var droop: `Q_ref = Q_nom + (V_set − V) / m_q`.
pub fn gfl_var_reference(params: &InverterParams, v_filtered: f64, v_set: f64) -> f64 {
    params.q_nom + (v_set - v_filtered) / params.m_q
}

/// Output saturation of a grid-following unit.
pub fn gfl_saturate(params: &InverterParams, p_ref: f64, q_ref: f64) -> (f64, f64) {
    (p_ref.clamp(params.p_min, params.p_max), q_ref.clamp(params.q_min, params.q_max))
}

/// Synchronous-frame PLL: a PI loop drives the normalized q-axis voltage
/// `sin(θ_bus − θ_pll)` to zero. Below [`PLL_FREEZE_VOLTAGE`] the estimate
/// is held.
pub fn pll_update(params: &InverterParams, state: &GflState, v: Complex64, dt: f64) -> GflState {
    let mut next = state.clone();
    if v.norm() <= PLL_FREEZE_VOLTAGE {
        next.theta_pll += (state.omega - params.omega_nom) * dt;
        return next;
    }
    let theta_bus = v.arg();
    let vq = |theta: f64| (theta_bus - theta).sin();
    let x1 = rk4([state.theta_pll, state.pll_int], dt, |x| {
        let e = vq(x[0]);
        [params.kp_pll * e + x[1], params.ki_pll * e]
    });
    next.theta_pll = x1[0];
    next.pll_int = x1[1];
    // Mean angle rate over the step; exact at steady state under the held input.
    next.omega = params.omega_nom + (x1[0] - state.theta_pll) / dt;
    next
}

/// Advances the grid-following primary control by `dt` and returns the new
/// state with the delivered terminal injection `P + jQ` (kW, kvar).
pub fn gfl_primary_step(params: &InverterParams, state: &GflState, v: Complex64, dt: f64) -> (GflState, Complex64) {
    let mut next = pll_update(params, state, v, dt);
    next.v_f = lpf_update(state.v_f, v.norm(), params.omega_f, dt);
    next.p_ref = gfl_power_reference(params, next.omega, next.p_set);
    next.q_ref = gfl_var_reference(params, next.v_f, next.v_set);
    let (p_target, q_target) = gfl_saturate(params, next.p_ref, next.q_ref);
    let rate = 1.0 / params.tau_act;
    let (p, q) = gfl_saturate(
        params,
        lpf_update(state.p_out, p_target, rate, dt),
        lpf_update(state.q_out, q_target, rate, dt),
    );
    next.p_out = p;
    next.q_out = q;
    (next, Complex64::new(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverters::{InverterKind, InverterSpec};

    fn params(rating: f64) -> InverterParams {
        InverterParams::from_spec(&InverterSpec::new(2, InverterKind::Gfl, "b", rating, 200.0), 0, 60.0).unwrap()
    }

    #[test]
    fn nominal_frequency_gives_setpoint() {
        let p = params(350.0);
        assert_eq!(gfl_power_reference(&p, p.omega_nom, 123.0), 123.0);
        assert_eq!(gfl_var_reference(&p, 1.01, 1.01), p.q_nom);
    }

    #[test]
    fn tenth_percent_underfrequency_gives_tenth_of_rating() {
        let p = params(350.0);
        let w = p.omega_nom - 0.001 * p.omega_nom;
        let p_ref = gfl_power_reference(&p, w, 100.0);
        assert!((p_ref - 135.0).abs() < 1e-9, "{p_ref}");
    }

    #[test]
    fn freq_watt_slope_is_exact() {
        let p = params(350.0);
        let (a, b) = (p.omega_nom - 0.3, p.omega_nom + 0.2);
        let slope = (gfl_power_reference(&p, b, 0.0) - gfl_power_reference(&p, a, 0.0)) / (b - a);
        assert!((slope + 1.0 / p.m_p).abs() < 1e-9 * (1.0 / p.m_p));
    }

    #[test]
    fn pll_locks_to_constant_angle() {
        let p = params(350.0);
        let mut s = GflState::initial(&p);
        let v = Complex64::from_polar(1.0, 0.4);
        for _ in 0..2000 {
            s = pll_update(&p, &s, v, 1e-3);
        }
        assert!((s.omega - p.omega_nom).abs() < 1e-9);
        assert!((s.theta_pll - 0.4).abs() < 1e-9);
    }

    #[test]
    fn pll_tracks_frequency_offset_without_steady_error() {
        // A bus angle ramping at +0.1 rad/s relative to the synchronous
        // frame: the type-2 loop must converge to ω_nom + 0.1 exactly.
        let p = params(350.0);
        let mut s = GflState::initial(&p);
        let dt = 1e-3;
        for k in 0..4000 {
            let v = Complex64::from_polar(1.0, 0.1 * k as f64 * dt);
            s = pll_update(&p, &s, v, dt);
        }
        assert!((s.omega - (p.omega_nom + 0.1)).abs() < 1e-9, "{}", s.omega - p.omega_nom);
    }

    #[test]
    fn pll_step_response_matches_linear_second_order() {
        // Small angle step: linearized loop θ'' + kp θ' + ki θ = kp u' + ki u.
        // Closed-form phase error e(t) = u e^{-ζω t}(cos ω_d t - ζ/√(1-ζ²) sin ω_d t).
        let p = params(350.0);
        let mut s = GflState::initial(&p);
        let (u, dt) = (1e-4, 1e-5);
        let wn = p.ki_pll.sqrt();
        let zeta = p.kp_pll / (2.0 * wn);
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let mut t = 0.0;
        let mut worst: f64 = 0.0;
        for _ in 0..5000 {
            s = pll_update(&p, &s, Complex64::from_polar(1.0, u), dt);
            t += dt;
            let e = u * (-zeta * wn * t).exp() * ((wd * t).cos() - zeta / (1.0 - zeta * zeta).sqrt() * (wd * t).sin());
            worst = worst.max(((u - s.theta_pll) - e).abs());
        }
        assert!(worst < 1e-3 * u, "worst deviation {worst:e}");
    }

    #[test]
    fn pll_freezes_without_voltage() {
        let p = params(350.0);
        let mut s = GflState::initial(&p);
        s.omega = p.omega_nom + 0.05;
        let before = s.omega;
        s = pll_update(&p, &s, Complex64::new(0.0, 0.0), 1e-3);
        assert_eq!(s.omega, before);
    }

    #[test]
    fn delivered_power_respects_limits() {
        let mut p = params(350.0);
        p.p_max = 225.0;
        let mut s = GflState::initial(&p);
        s.p_set = 400.0;
        for _ in 0..500 {
            let (next, inj) = gfl_primary_step(&p, &s, Complex64::new(1.0, 0.0), 1e-3);
            assert!(inj.re <= p.p_max && inj.re >= p.p_min);
            s = next;
        }
        assert!((s.p_out - 225.0).abs() < 1e-9);
    }

    #[test]
    fn saturation_is_identity_inside_limits() {
        let p = params(350.0);
        assert_eq!(gfl_saturate(&p, 123.4, -56.7), (123.4, -56.7));
        assert_eq!(gfl_saturate(&p, 400.0, 900.0), (350.0, 350.0));
        assert_eq!(gfl_saturate(&p, -1.0, -900.0), (0.0, -350.0));
    }
}
