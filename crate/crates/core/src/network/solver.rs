//! Newton-Raphson solve of one island.
//!
//! Grid-forming sources are folded in as Norton equivalents (a shunt `1/z`
//! plus a current `E/z` at the terminal bus), so every island bus is a PQ
//! bus and no slack is needed. Unknowns are the rectangular components of
//! the bus voltages; the residual is the complex power mismatch
//! `V_k conj((Y'V)_k − I_N,k) − S_sched,k(V)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{AdmittanceMatrix, LoadModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max-norm power mismatch tolerance (pu).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 50 }
    }
}

/// Voltage source `emf` behind impedance `z`, attached at local bus `bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceInjection {
    pub bus: usize,
    pub emf: Complex64,
    pub z: Complex64,
}

/// Specified power injection (pu, generator convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerInjection {
    pub bus: usize,
    pub s: Complex64,
}

/// Load consumption at 1 pu voltage (pu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadInjection {
    pub bus: usize,
    pub s: Complex64,
    pub model: LoadModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandSolution {
    pub v: Vec<Complex64>,
    /// Current out of each source into its terminal bus (pu).
    pub source_current: Vec<Complex64>,
    /// Complex power delivered by each source at its terminal bus (pu).
    pub source_power: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
}

struct Prepared {
    y: DMatrix<Complex64>,
    i_src: Vec<Complex64>,
    s_const: Vec<Complex64>,
    s_imp: Vec<Complex64>,
}

fn prepare(y: &AdmittanceMatrix, sources: &[SourceInjection], gfl: &[PowerInjection], loads: &[LoadInjection]) -> Prepared {
    let n = y.dim();
    let mut ym = y.y.clone();
    let zero = Complex64::new(0.0, 0.0);
    let mut i_src = vec![zero; n];
    let mut s_const = vec![zero; n];
    let mut s_imp = vec![zero; n];
    for s in sources {
        let yc = Complex64::new(1.0, 0.0) / s.z;
        ym[(s.bus, s.bus)] += yc;
        i_src[s.bus] += s.emf * yc;
    }
    for g in gfl {
        s_const[g.bus] += g.s;
    }
    for l in loads {
        match l.model {
            LoadModel::ConstantPower => s_const[l.bus] -= l.s,
            LoadModel::ConstantImpedance => s_imp[l.bus] += l.s,
        }
    }
    Prepared { y: ym, i_src, s_const, s_imp }
}

impl Prepared {
    fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|k| {
                let mut acc = -self.i_src[k];
                for j in 0..n {
                    acc += self.y[(k, j)] * v[j];
                }
                acc
            })
            .collect()
    }

    fn mismatch(&self, v: &[Complex64], j: &[Complex64]) -> Vec<Complex64> {
        (0..v.len())
            .map(|k| v[k] * j[k].conj() - (self.s_const[k] - self.s_imp[k] * v[k].norm_sqr()))
            .collect()
    }
}

fn max_abs(f: &[Complex64]) -> f64 {
    f.iter().fold(0.0, |m, c| m.max(c.re.abs()).max(c.im.abs()))
}

fn newton(p: &Prepared, mut v: Vec<Complex64>, opts: &SolverOptions) -> std::result::Result<(Vec<Complex64>, usize, f64), f64> {
    let n = v.len();
    let mut last = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let cur = p.currents(&v);
        let f = p.mismatch(&v, &cur);
        last = max_abs(&f);
        if !last.is_finite() {
            return Err(last);
        }
        // Always take one correction so warm starts do not carry the
        // previous step's residual forward.
        if last < opts.tol && iter > 0 {
            return Ok((v, iter, last));
        }
        if iter == opts.max_iter {
            break;
        }
        // rows: [Re F; Im F], columns: [e; f]
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            for m in 0..n {
                let ykm = p.y[(k, m)];
                if ykm.re == 0.0 && ykm.im == 0.0 && k != m {
                    continue;
                }
                let mut de = v[k] * ykm.conj();
                let mut df = -Complex64::i() * v[k] * ykm.conj();
                if k == m {
                    de += cur[k].conj() + 2.0 * v[k].re * p.s_imp[k];
                    df += Complex64::i() * cur[k].conj() + 2.0 * v[k].im * p.s_imp[k];
                }
                jac[(k, m)] = de.re;
                jac[(k, n + m)] = df.re;
                jac[(n + k, m)] = de.im;
                jac[(n + k, n + m)] = df.im;
            }
        }
        let rhs = DVector::from_iterator(2 * n, f.iter().map(|c| -c.re).chain(f.iter().map(|c| -c.im)));
        let Some(dx) = jac.lu().solve(&rhs) else { return Err(last) };
        for k in 0..n {
            v[k] += Complex64::new(dx[k], dx[n + k]);
        }
    }
    Err(last)
}

/// Solves one energized island. `init` is a warm start (previous step);
/// on failure the solve is retried from a flat start aligned with the
/// first source angle.
pub fn solve_island(
    y: &AdmittanceMatrix,
    sources: &[SourceInjection],
    gfl: &[PowerInjection],
    loads: &[LoadInjection],
    init: Option<&[Complex64]>,
    opts: &SolverOptions,
) -> Result<IslandSolution> {
    let n = y.dim();
    if sources.is_empty() {
        return Err(Error::config("island has no voltage source"));
    }
    let p = prepare(y, sources, gfl, loads);
    let flat = vec![Complex64::from_polar(1.0, sources[0].emf.arg()); n];
    let attempt = match init {
        Some(v0) if v0.len() == n => newton(&p, v0.to_vec(), opts).or_else(|_| newton(&p, flat, opts)),
        _ => newton(&p, flat, opts),
    };
    let (v, iterations, mismatch) =
        attempt.map_err(|mismatch| Error::Divergence { iterations: opts.max_iter, mismatch })?;
    let source_current: Vec<Complex64> = sources.iter().map(|s| (s.emf - v[s.bus]) / s.z).collect();
    let source_power = sources.iter().zip(&source_current).map(|(s, i)| v[s.bus] * i.conj()).collect();
    Ok(IslandSolution { v, source_current, source_power, iterations, mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bus() -> AdmittanceMatrix {
        AdmittanceMatrix { buses: vec![0], y: DMatrix::from_element(1, 1, Complex64::new(0.0, 0.0)) }
    }

    #[test]
    fn unloaded_network_sits_at_source_voltage() {
        let mut y = DMatrix::from_element(3, 3, Complex64::new(0.0, 0.0));
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(0.02, 0.05);
        for (a, b) in [(0, 1), (1, 2)] {
            y[(a, a)] += ys;
            y[(b, b)] += ys;
            y[(a, b)] -= ys;
            y[(b, a)] -= ys;
        }
        let y = AdmittanceMatrix { buses: vec![0, 1, 2], y };
        let src = [SourceInjection { bus: 0, emf: Complex64::new(1.0, 0.0), z: Complex64::new(0.0, 0.1) }];
        let sol = solve_island(&y, &src, &[], &[], None, &SolverOptions::default()).unwrap();
        for v in &sol.v {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        }
        assert!(sol.source_power[0].norm() < 1e-10);
    }

    #[test]
    fn two_bus_closed_form() {
        // E = 1∠0 behind j0.1 feeding a 0.1 pu resistive load. With zero
        // received reactive power V = E cos θ and P = E² sin 2θ / (2X).
        let src = [SourceInjection { bus: 0, emf: Complex64::new(1.0, 0.0), z: Complex64::new(0.0, 0.1) }];
        let load = [LoadInjection { bus: 0, s: Complex64::new(0.1, 0.0), model: LoadModel::ConstantPower }];
        let sol = solve_island(&single_bus(), &src, &[], &load, None, &SolverOptions::default()).unwrap();
        let theta = (2.0 * 0.1 * 0.1f64).asin() / 2.0;
        let expect = Complex64::from_polar(theta.cos(), -theta);
        assert!((sol.v[0] - expect).norm() < 1e-9, "{} vs {}", sol.v[0], expect);
        assert!((sol.source_power[0] - Complex64::new(0.1, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn island_without_source_is_rejected() {
        assert!(solve_island(&single_bus(), &[], &[], &[], None, &SolverOptions::default()).is_err());
    }

    #[test]
    fn impossible_load_reports_divergence() {
        let src = [SourceInjection { bus: 0, emf: Complex64::new(1.0, 0.0), z: Complex64::new(0.0, 0.1) }];
        let load = [LoadInjection { bus: 0, s: Complex64::new(20.0, 0.0), model: LoadModel::ConstantPower }];
        let err = solve_island(&single_bus(), &src, &[], &load, None, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn constant_impedance_load_scales_with_voltage() {
        let src = [SourceInjection { bus: 0, emf: Complex64::new(1.0, 0.0), z: Complex64::new(0.0, 0.1) }];
        let load = [LoadInjection { bus: 0, s: Complex64::new(0.5, 0.0), model: LoadModel::ConstantImpedance }];
        let sol = solve_island(&single_bus(), &src, &[], &load, None, &SolverOptions::default()).unwrap();
        // Closed form: voltage divider with R = 1/0.5.
        let expect = Complex64::new(2.0, 0.0) / Complex64::new(2.0, 0.1);
        assert!((sol.v[0] - expect).norm() < 1e-9);
    }
}
