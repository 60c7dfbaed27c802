/// One classical fourth-order Runge-Kutta step of `x' = f(x)` with inputs
/// held constant over the step.
pub fn rk4<const N: usize>(x: [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let axpy = |a: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = f(&x);
    let k2 = f(&axpy(&x, &k1, dt / 2.0));
    let k3 = f(&axpy(&x, &k2, dt / 2.0));
    let k4 = f(&axpy(&x, &k3, dt));
    let mut out = x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// First-order low-pass `y' = omega_f (u - y)` advanced by one RK4 step.
pub fn lpf_update(y: f64, u: f64, omega_f: f64, dt: f64) -> f64 {
    rk4([y], dt, |s| [omega_f * (u - s[0])])[0]
}
