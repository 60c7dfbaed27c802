use num_complex::Complex64;

use super::{
    solve_island, AdmittanceMatrix, IslandDescriptor, LoadInjection, NetworkModel, PowerInjection, SolverOptions,
    SourceInjection,
};
use crate::error::Result;
use crate::inverters::InverterParams;

/// What an inverter presents to the network for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Injection {
    /// GFM internal source phasor (pu) behind its coupling impedance.
    Source { emf: Complex64 },
    /// GFL delivered power (kW + j kvar).
    Power { s_kw: Complex64 },
    Offline,
}

#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint<'a> {
    pub inverters: &'a [Injection],
    /// Per-load consumption (kW + j kvar) at 1 pu, `None` when disconnected.
    pub loads: &'a [Option<Complex64>],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterTerminal {
    /// Terminal voltage `V^g∠δ^g` (pu).
    pub v: Complex64,
    /// Terminal current `I^g∠φ^g` (pu), positive into the network.
    pub i: Complex64,
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Network state after one solve; quantities on de-energized islands are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub bus_voltage: Vec<Option<Complex64>>,
    pub inverter: Vec<Option<InverterTerminal>>,
    /// Power drawn from the upstream grid source (kW + j kvar), if energized.
    pub grid_power_kw: Option<Complex64>,
    pub iterations: usize,
}

/// Solves every energized island of the system.
pub fn solve_network(
    net: &NetworkModel,
    fleet: &[InverterParams],
    islands: &[(IslandDescriptor, AdmittanceMatrix)],
    op: &OperatingPoint<'_>,
    warm: Option<&NetworkSolution>,
    opts: &SolverOptions,
) -> Result<NetworkSolution> {
    let base = net.s_base_kva();
    let grid = net.grid.as_ref().map(|g| (net.bus_index(&g.bus).expect("validated"), g));
    let mut out = NetworkSolution {
        bus_voltage: vec![None; net.buses.len()],
        inverter: vec![None; fleet.len()],
        grid_power_kw: None,
        iterations: 0,
    };
    for (desc, y) in islands {
        if !desc.energized {
            continue;
        }
        let mut sources = Vec::new();
        let mut owners = Vec::new();
        let mut gfl = Vec::new();
        for &k in &desc.inverters {
            let bus = y.local_index(fleet[k].bus).expect("inverter bus in island");
            match op.inverters[k] {
                Injection::Source { emf } => {
                    sources.push(SourceInjection { bus, emf, z: fleet[k].coupling });
                    owners.push(Some(k));
                }
                Injection::Power { s_kw } => gfl.push(PowerInjection { bus, s: s_kw / base }),
                Injection::Offline => {}
            }
        }
        if let Some((gb, g)) = grid.filter(|(gb, _)| desc.has_grid && y.local_index(*gb).is_some()) {
            sources.push(SourceInjection {
                bus: y.local_index(gb).expect("checked"),
                emf: Complex64::new(g.v_pu, 0.0),
                z: Complex64::new(g.r, g.x),
            });
            owners.push(None);
        }
        if sources.is_empty() {
            continue;
        }
        let loads: Vec<LoadInjection> = desc
            .loads
            .iter()
            .filter_map(|&l| {
                op.loads[l].map(|s| LoadInjection {
                    bus: y.local_index(net.bus_index(&net.loads[l].bus).expect("validated")).expect("load bus in island"),
                    s: s / base,
                    model: net.loads[l].model,
                })
            })
            .collect();
        let init: Option<Vec<Complex64>> =
            warm.and_then(|w| y.buses.iter().map(|&b| w.bus_voltage[b]).collect::<Option<Vec<_>>>());
        let sol = solve_island(y, &sources, &gfl, &loads, init.as_deref(), opts)?;
        out.iterations = out.iterations.max(sol.iterations);
        for (local, &bus) in y.buses.iter().enumerate() {
            out.bus_voltage[bus] = Some(sol.v[local]);
        }
        for (s, owner) in owners.iter().enumerate() {
            let i = sol.source_current[s];
            let pw = sol.source_power[s] * base;
            match owner {
                Some(k) => {
                    out.inverter[*k] = Some(InverterTerminal { v: sol.v[sources[s].bus], i, p_kw: pw.re, q_kvar: pw.im })
                }
                None => out.grid_power_kw = Some(pw),
            }
        }
        for &k in &desc.inverters {
            if let Injection::Power { s_kw } = op.inverters[k] {
                let v = sol.v[y.local_index(fleet[k].bus).expect("checked")];
                let i = (s_kw / base / v).conj();
                out.inverter[k] = Some(InverterTerminal { v, i, p_kw: s_kw.re, q_kvar: s_kw.im });
            }
        }
    }
    Ok(out)
}
