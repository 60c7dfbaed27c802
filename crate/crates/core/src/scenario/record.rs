use serde::{Deserialize, Serialize};

use crate::inverters::InverterKind;
use crate::metrics::{convergence_time, window_mean, IslandSummary, MetricSummary, MetricValue};

/// One inverter at one recorded instant. Electrical quantities are absent
/// while the unit is offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSample {
    pub online: bool,
    /// Label of the electrical island (smallest member bus index).
    pub island: Option<usize>,
    pub f_hz: Option<f64>,
    pub v_pu: Option<f64>,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub p_set_kw: f64,
    pub v_set_pu: f64,
}

/// Sharing and regulation indices over a set of units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexSample {
    pub eta_p: MetricValue,
    pub eta_q: MetricValue,
    pub mpsi: MetricValue,
    pub mqsi: MetricValue,
    pub v_error: MetricValue,
    /// Largest `|f − f_nom|` among the units (Hz).
    pub f_error_hz: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandSample {
    pub label: usize,
    /// Fleet indices of the online units.
    pub members: Vec<usize>,
    pub index: IndexSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub units: Vec<UnitSample>,
    pub islands: Vec<IslandSample>,
    /// Fleet-wide indices: each island contributes its units' deviations
    /// from its own sharing parameter.
    pub system: IndexSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub scenario: String,
    pub f_nom_hz: f64,
    pub ids: Vec<u32>,
    pub kinds: Vec<InverterKind>,
    /// Bus names, indexed by island label.
    pub bus_names: Vec<String>,
    pub duration_s: f64,
    /// Distinct event times.
    pub event_times: Vec<f64>,
    pub samples: Vec<Sample>,
}

impl TimeSeriesRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, f: impl Fn(&IndexSample) -> MetricValue) -> Vec<MetricValue> {
        self.samples.iter().map(|s| f(&s.system)).collect()
    }

    /// Sample closest to `t`.
    pub fn at(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// `[start, end]` of each window: from 0 to the first event, then event
    /// to event, the last running to the end of the horizon.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(self.event_times.iter().copied().filter(|t| *t > 0.0 && *t < self.duration_s));
        edges.push(self.duration_s);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Per-window steady-state metrics over the closing `steady_window`
    /// seconds, with MPSI convergence time for band `band` held `hold` s.
    pub fn summarize(&self, steady_window: f64, band: f64, hold: f64) -> Vec<MetricSummary> {
        let times = self.times();
        let windows = self.windows();
        let last = windows.len().saturating_sub(1);
        windows
            .into_iter()
            .enumerate()
            .map(|(k, (t0, end))| {
                // A window closed by an event ends just before it is applied.
                let t1 = if k == last { end } else { end - 1e-9 };
                let s0 = (t1 - steady_window).max(t0);
                let mean = |f: &dyn Fn(&IndexSample) -> MetricValue| window_mean(&times, &self.series(f), s0, t1);
                let islands = self.island_summaries(&times, s0, t1);
                MetricSummary {
                    window: if k == 0 { "initial".to_string() } else { format!("event@{t0}s") },
                    t_start: t0,
                    t_end: end,
                    f_error_hz: mean(&|x| x.f_error_hz),
                    mpsi: mean(&|x| x.mpsi),
                    mqsi: mean(&|x| x.mqsi),
                    v_error: mean(&|x| x.v_error),
                    convergence_s: convergence_time(&times, &self.series(|x| x.mpsi), t0, t1, band, hold),
                    islands,
                }
            })
            .collect()
    }

    fn island_summaries(&self, times: &[f64], s0: f64, t1: f64) -> Vec<IslandSummary> {
        let Some(last) = self.samples.iter().rev().find(|s| s.t <= t1 + 1e-12) else { return Vec::new() };
        last.islands
            .iter()
            .map(|isl| {
                let series = |f: &dyn Fn(&IndexSample) -> MetricValue| -> Vec<MetricValue> {
                    self.samples
                        .iter()
                        .map(|s| {
                            s.islands
                                .iter()
                                .find(|i| i.label == isl.label && i.members == isl.members)
                                .map_or(MetricValue::Undefined, |i| f(&i.index))
                        })
                        .collect()
                };
                let mean = |f: &dyn Fn(&IndexSample) -> MetricValue| window_mean(times, &series(f), s0, t1);
                IslandSummary {
                    island: self.bus_names.get(isl.label).cloned().unwrap_or_else(|| isl.label.to_string()),
                    inverters: isl.members.iter().map(|&k| self.ids[k]).collect(),
                    f_error_hz: mean(&|x| x.f_error_hz),
                    mpsi: mean(&|x| x.mpsi),
                    mqsi: mean(&|x| x.mqsi),
                    v_error: mean(&|x| x.v_error),
                }
            })
            .collect()
    }
}
