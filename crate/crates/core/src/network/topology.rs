use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{NetworkModel, SwitchStates};
use crate::error::Result;
use crate::inverters::InverterKind;

/// Nodal admittance matrix of one island (pu). Row/column `k` corresponds to
/// global bus `buses[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub buses: Vec<usize>,
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.buses.len()
    }

    pub fn local_index(&self, bus: usize) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }
}

/// One electrical island: a connected component of the closed-line graph.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandDescriptor {
    /// Global bus indices, ascending.
    pub buses: Vec<usize>,
    /// Fleet indices of online inverters on the island, ascending.
    pub inverters: Vec<usize>,
    pub loads: Vec<usize>,
    pub has_grid: bool,
    /// True when a voltage source (online GFM or the grid) is present.
    pub energized: bool,
}

impl IslandDescriptor {
    /// Stable label: the smallest member bus index.
    pub fn label(&self) -> usize {
        self.buses[0]
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn components(net: &NetworkModel, states: &SwitchStates) -> Vec<Vec<usize>> {
    let n = net.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for line in net.lines.iter().filter(|l| net.line_closed(l, states)) {
        let a = net.bus_index(&line.from).expect("validated line endpoint");
        let b = net.bus_index(&line.to).expect("validated line endpoint");
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for bus in 0..n {
        let root = find(&mut parent, bus);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(bus);
    }
    groups
}

/// Partitions buses into islands assuming every inverter is online.
/// Switches missing from `states` keep their modeled state.
pub fn detect_islands(net: &NetworkModel, states: &SwitchStates) -> Vec<IslandDescriptor> {
    detect_islands_with(net, states, &vec![true; net.inverters.len()])
}

/// As [`detect_islands`], with per-inverter online flags.
pub fn detect_islands_with(net: &NetworkModel, states: &SwitchStates, online: &[bool]) -> Vec<IslandDescriptor> {
    let grid_bus = net.grid.as_ref().and_then(|g| net.bus_index(&g.bus));
    components(net, states)
        .into_iter()
        .map(|buses| {
            let inverters: Vec<usize> = net
                .inverters
                .iter()
                .enumerate()
                .filter(|(k, inv)| online[*k] && net.bus_index(&inv.bus).is_some_and(|b| buses.contains(&b)))
                .map(|(k, _)| k)
                .collect();
            let loads = net
                .loads
                .iter()
                .enumerate()
                .filter(|(_, l)| net.bus_index(&l.bus).is_some_and(|b| buses.contains(&b)))
                .map(|(k, _)| k)
                .collect();
            let has_grid = grid_bus.is_some_and(|g| buses.contains(&g));
            let has_gfm = inverters.iter().any(|&k| net.inverters[k].kind == InverterKind::Gfm);
            IslandDescriptor { buses, inverters, loads, has_grid, energized: has_grid || has_gfm }
        })
        .collect()
}

/// One admittance matrix per island under `states`, which must name every
/// switch of the model and nothing else.
pub fn build_admittance(net: &NetworkModel, states: &SwitchStates) -> Result<Vec<(IslandDescriptor, AdmittanceMatrix)>> {
    net.check_switch_states(states)?;
    Ok(admittance_for(net, states, detect_islands(net, states)))
}

pub(crate) fn admittance_for(
    net: &NetworkModel,
    states: &SwitchStates,
    islands: Vec<IslandDescriptor>,
) -> Vec<(IslandDescriptor, AdmittanceMatrix)> {
    islands
        .into_iter()
        .map(|island| {
            let n = island.buses.len();
            let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
            let local = |bus: usize| island.buses.binary_search(&bus).ok();
            for line in net.lines.iter().filter(|l| net.line_closed(l, states)) {
                let a = net.bus_index(&line.from).expect("validated");
                let b = net.bus_index(&line.to).expect("validated");
                let (Some(i), Some(j)) = (local(a), local(b)) else { continue };
                let ys = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
                y[(i, i)] += ys;
                y[(j, j)] += ys;
                y[(i, j)] -= ys;
                y[(j, i)] -= ys;
            }
            let buses = island.buses.clone();
            (island, AdmittanceMatrix { buses, y })
        })
        .collect()
}
