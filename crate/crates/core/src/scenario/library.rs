use serde::{Deserialize, Serialize};

use super::{run, Action, Event, Scenario, TopologySpec};
use crate::consensus::ControlMode;
use crate::error::Result;
use crate::metrics::convergence_time;

pub const CASE_NAMES: [&str; 14] = [
    "case1_no_control",
    "case2_uncoordinated",
    "case3_gfm_coordinated",
    "case4_lfc",
    "intermittency_275",
    "intermittency_250",
    "intermittency_225",
    "intermittency_200",
    "reduced_comm",
    "link_failure_4_7",
    "plug_n_play",
    "mg_split",
    "topology_sweep",
    "steady_grid_connected",
];

/// Islanding from the substation.
pub const ISLAND_SWITCH: &str = "sw_13_152";
/// Disconnects the area160 block, 35% of the load.
pub const LOAD_SWITCH: &str = "sw_60_160";

fn open(t: f64, switch: &str) -> Event {
    Event::new(t, Action::SwitchOpen { switch: switch.to_string() })
}

fn case(name: &str, mode: ControlMode, events: Vec<Event>) -> Scenario {
    let mut sc = Scenario::new(name, mode);
    sc.events = events;
    sc
}

/// Islanding at 1 s, loss of 35% of the load at 4 s.
fn two_event_script() -> Vec<Event> {
    vec![open(1.0, ISLAND_SWITCH), open(4.0, LOAD_SWITCH)]
}

/// Three zone clusters whose leaders (1, 4, 7) form a ring.
pub fn reduced_topology() -> TopologySpec {
    TopologySpec::Edges {
        links: vec![[1, 2], [1, 3], [2, 3], [4, 5], [4, 6], [5, 6], [7, 8], [7, 9], [8, 9], [1, 4], [4, 7], [7, 1]],
    }
}

fn intermittency(p_max: u32) -> Scenario {
    let mut events = vec![open(1.0, ISLAND_SWITCH)];
    for inverter in [2, 5, 8] {
        events.push(Event::new(2.5, Action::PmaxChange { inverter, p_max_kw: p_max as f64 }));
    }
    case(&format!("intermittency_{p_max}"), ControlMode::FullyCoordinated, events)
}

/// A library scenario by name.
pub fn library_case(name: &str) -> Option<Scenario> {
    let sc = match name {
        "case1_no_control" => case(name, ControlMode::NoControl, two_event_script()),
        "case2_uncoordinated" => case(name, ControlMode::Uncoordinated, two_event_script()),
        "case3_gfm_coordinated" => case(name, ControlMode::GfmCoordinated, two_event_script()),
        "case4_lfc" => case(name, ControlMode::FullyCoordinated, two_event_script()),
        "intermittency_275" => intermittency(275),
        "intermittency_250" => intermittency(250),
        "intermittency_225" => intermittency(225),
        "intermittency_200" => intermittency(200),
        "reduced_comm" => {
            let mut sc = case(name, ControlMode::FullyCoordinated, two_event_script());
            sc.topology = reduced_topology();
            sc
        }
        "link_failure_4_7" => {
            let mut events = two_event_script();
            events.insert(1, Event::new(2.5, Action::CommLinkFail { link: [4, 7] }));
            let mut sc = case(name, ControlMode::FullyCoordinated, events);
            sc.topology = reduced_topology();
            sc
        }
        "plug_n_play" => case(
            name,
            ControlMode::FullyCoordinated,
            vec![
                open(1.0, ISLAND_SWITCH),
                Event::new(2.0, Action::InverterTrip { inverter: 2 }),
                Event::new(3.0, Action::InverterReconnect { inverter: 2 }),
            ],
        ),
        "mg_split" => {
            let mut sc = case(
                name,
                ControlMode::FullyCoordinated,
                vec![open(1.0, ISLAND_SWITCH), open(4.0, "sw_1_2"), open(4.0, "sw_2_3")],
            );
            sc.duration_s = 8.0;
            sc
        }
        "topology_sweep" => {
            let mut sc = case(name, ControlMode::FullyCoordinated, vec![open(1.0, ISLAND_SWITCH)]);
            sc.topology = TopologySpec::Random { links: 8, seed: None };
            sc.duration_s = 8.0;
            sc
        }
        "steady_grid_connected" => {
            let mut sc = case(name, ControlMode::FullyCoordinated, Vec::new());
            sc.duration_s = 2.0;
            sc
        }
        _ => return None,
    };
    Some(sc)
}

/// Every library scenario, in [`CASE_NAMES`] order.
pub fn case_library() -> Vec<(String, Scenario)> {
    CASE_NAMES.iter().map(|n| (n.to_string(), library_case(n).expect("listed case exists"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub links: usize,
    pub seed: u64,
    /// Seconds from the first event until MPSI stays in the band.
    pub convergence_s: Option<f64>,
}

/// Runs `base` on a random connected topology with `links` links and
/// measures MPSI convergence after its first event.
pub fn sweep_point(base: &Scenario, links: usize, seed: u64, band: f64, hold: f64) -> Result<SweepRow> {
    let mut sc = base.clone();
    sc.topology = TopologySpec::Random { links, seed: Some(seed) };
    sc.seed = seed;
    let record = run(&sc)?;
    let t0 = record.event_times.first().copied().unwrap_or(0.0);
    let times = record.times();
    let mpsi = record.series(|x| x.mpsi);
    Ok(SweepRow { links, seed, convergence_s: convergence_time(&times, &mpsi, t0, record.duration_s, band, hold) })
}
