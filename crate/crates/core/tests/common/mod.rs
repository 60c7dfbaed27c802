//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use lfc_core::network::*;
use num_complex::Complex64;
use proptest::prelude::*;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Radial test system: bus `k > 0` hangs off `parent[k - 1]`.
#[derive(Debug, Clone)]
pub struct Radial {
    pub parent: Vec<usize>,
    pub z: Vec<Complex64>,
    pub source_bus: usize,
    pub emf: Complex64,
    pub coupling: Complex64,
    pub gfl: Vec<(usize, Complex64)>,
    pub loads: Vec<(usize, Complex64)>,
}

impl Radial {
    pub fn n(&self) -> usize {
        self.parent.len() + 1
    }

    pub fn model(&self, order: &[usize]) -> NetworkModel {
        let name = |k: usize| format!("b{k}");
        NetworkModel {
            s_base_va: 1e6,
            v_base_v: 4160.0,
            f_nom_hz: 60.0,
            buses: order.iter().map(|&k| Bus { id: name(k), v_nom_v: 4160.0 }).collect(),
            lines: self
                .parent
                .iter()
                .zip(&self.z)
                .enumerate()
                .map(|(k, (p, z))| Line { from: name(*p), to: name(k + 1), r: z.re, x: z.im, switch: None })
                .collect(),
            switches: Vec::new(),
            loads: Vec::new(),
            grid: None,
            inverters: Vec::new(),
        }
    }

    /// Newton solve through the crate, with buses listed in `order`.
    /// Returns voltages indexed by original bus number.
    pub fn solve(&self, order: &[usize]) -> (Vec<Complex64>, IslandSolution) {
        let net = self.model(order);
        let islands = build_admittance(&net, &Default::default()).unwrap();
        assert_eq!(islands.len(), 1);
        let y = &islands[0].1;
        let at = |bus: usize| y.local_index(order.iter().position(|&b| b == bus).unwrap()).unwrap();
        let src = [SourceInjection { bus: at(self.source_bus), emf: self.emf, z: self.coupling }];
        let gfl: Vec<PowerInjection> = self.gfl.iter().map(|(b, s)| PowerInjection { bus: at(*b), s: *s }).collect();
        let loads: Vec<LoadInjection> = self
            .loads
            .iter()
            .map(|(b, s)| LoadInjection { bus: at(*b), s: *s, model: LoadModel::ConstantPower })
            .collect();
        let sol = solve_island(y, &src, &gfl, &loads, None, &SolverOptions::default()).unwrap();
        let v = (0..self.n()).map(|b| sol.v[at(b)]).collect();
        (v, sol)
    }

    /// Gauss-Seidel on the Norton-augmented nodal equations, built from
    /// the raw line list.
    pub fn oracle(&self) -> Vec<Complex64> {
        let n = self.n();
        let mut y = vec![vec![c(0.0, 0.0); n]; n];
        for (k, (p, z)) in self.parent.iter().zip(&self.z).enumerate() {
            let (a, b) = (*p, k + 1);
            let ys = 1.0 / z;
            y[a][a] += ys;
            y[b][b] += ys;
            y[a][b] -= ys;
            y[b][a] -= ys;
        }
        let yc = 1.0 / self.coupling;
        y[self.source_bus][self.source_bus] += yc;
        let mut i_n = vec![c(0.0, 0.0); n];
        i_n[self.source_bus] = self.emf * yc;
        let mut s = vec![c(0.0, 0.0); n];
        for (b, x) in &self.gfl {
            s[*b] += x;
        }
        for (b, x) in &self.loads {
            s[*b] -= x;
        }
        let mut v = vec![self.emf / self.emf.norm(); n];
        for _ in 0..200_000 {
            let mut change = 0.0f64;
            for k in 0..n {
                let mut acc = (s[k] / v[k]).conj() + i_n[k];
                for j in 0..n {
                    if j != k {
                        acc -= y[k][j] * v[j];
                    }
                }
                let next = acc / y[k][k];
                change = change.max((next - v[k]).norm());
                v[k] = next;
            }
            if change < 1e-15 {
                break;
            }
        }
        v
    }
}

pub fn radial() -> impl Strategy<Value = Radial> {
    (2usize..=6).prop_flat_map(|n| {
        let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|k| (0..k).boxed()).collect();
        (
            parents,
            prop::collection::vec((0.005f64..0.04, 0.01f64..0.06), n - 1),
            0..n,
            (0.98f64..1.05, -0.2f64..0.2),
            prop::collection::vec((0..n, 0.0f64..0.25, -0.08f64..0.08), 0..3),
            prop::collection::vec((0..n, 0.0f64..0.35, 0.0f64..0.12), 1..4),
        )
            .prop_map(|(parent, z, source_bus, (e, th), gfl, loads)| Radial {
                parent,
                z: z.into_iter().map(|(r, x)| c(r, x)).collect(),
                source_bus,
                emf: Complex64::from_polar(e, th),
                coupling: c(0.01, 0.1),
                gfl: gfl.into_iter().map(|(b, p, q)| (b, c(p, q))).collect(),
                loads: loads.into_iter().map(|(b, p, q)| (b, c(p, q))).collect(),
            })
    })
}

pub fn max_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}


/// One unit of a single-bus droop fixture.
#[derive(Debug, Clone, Copy)]
pub struct DroopUnit {
    pub gfm: bool,
    pub rating_kw: f64,
    pub p_set_kw: f64,
    pub p_max_kw: f64,
}

/// All units and a constant-power load on one bus; GFM couplings are
/// purely reactive so the system is lossless.
pub fn single_bus_scenario(units: &[DroopUnit], load_kw: f64, mode: lfc_core::consensus::ControlMode) -> lfc_core::scenario::Scenario {
    use lfc_core::inverters::{InverterKind, InverterSpec};
    let inverters = units
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let kind = if u.gfm { InverterKind::Gfm } else { InverterKind::Gfl };
            let mut spec = InverterSpec::new(k as u32 + 1, kind, "b0", u.rating_kw, u.p_set_kw);
            spec.p_max_kw = Some(u.p_max_kw);
            if u.gfm {
                spec.coupling = Some([0.0, 0.1]);
            }
            spec
        })
        .collect();
    let net = NetworkModel {
        s_base_va: 1e6,
        v_base_v: 4160.0,
        f_nom_hz: 60.0,
        buses: vec![Bus { id: "b0".into(), v_nom_v: 4160.0 }],
        lines: Vec::new(),
        switches: Vec::new(),
        loads: vec![Load {
            name: "load".into(),
            bus: "b0".into(),
            p_kw: load_kw,
            q_kvar: 0.0,
            model: LoadModel::ConstantPower,
            connectable: true,
        }],
        grid: None,
        inverters,
    };
    let mut sc = lfc_core::scenario::Scenario::new("single_bus", mode);
    sc.network = lfc_core::scenario::NetworkRef::Inline(Box::new(net));
    sc.duration_s = 2.0;
    sc
}

/// Frequency (rad/s) and unit powers (kW) at which the droop curves of
/// `units` add up to `load_kw`, found by bisection on ω.
pub fn droop_oracle(units: &[DroopUnit], load_kw: f64) -> (f64, Vec<f64>) {
    let omega_nom = 2.0 * std::f64::consts::PI * 60.0;
    let powers = |w: f64| -> Vec<f64> {
        units
            .iter()
            .map(|u| {
                let m = lfc_core::inverters::freq_droop_gain(1.0, omega_nom, u.rating_kw);
                let p = u.p_set_kw + (omega_nom - w) / m;
                if u.gfm {
                    p
                } else {
                    p.clamp(0.0, u.p_max_kw)
                }
            })
            .collect()
    };
    let excess = |w: f64| powers(w).iter().sum::<f64>() - load_kw;
    let (mut lo, mut hi) = (omega_nom * 0.8, omega_nom * 1.2);
    assert!(excess(lo) > 0.0 && excess(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    (w, powers(w))
}
