//! Run artifacts: the time-series CSV, the per-window summary (JSON and an
//! aligned text table), the resolved scenario and a manifest tying them
//! together.
//!
//! CSV columns are `t_s`, then for every inverter `<quantity>_<id>_<unit>`
//! (`f_1_hz`, `v_1_pu`, `p_1_kw`, `q_1_kvar`, `pset_1_kw`, `vset_1_pu`) plus
//! `online_<id>` and `island_<id>`, then the fleet-wide indices. Cells of
//! offline units are left empty; undefined indices read `undefined`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{MetricSummary, MetricValue, CONVERGENCE_BAND, CONVERGENCE_HOLD_S};
use crate::scenario::{Scenario, SweepRow, TimeSeriesRecord};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

const SYSTEM_COLUMNS: [&str; 6] = ["eta_p", "eta_q", "mpsi", "mqsi", "v_error_pu", "f_error_hz"];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse { what: "csv".into(), message: e.to_string() }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse { what: "json".into(), message: e.to_string() }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric(v: MetricValue) -> String {
    v.to_string()
}

pub fn timeseries_header(record: &TimeSeriesRecord) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    for id in &record.ids {
        h.extend([
            format!("f_{id}_hz"),
            format!("v_{id}_pu"),
            format!("p_{id}_kw"),
            format!("q_{id}_kvar"),
            format!("pset_{id}_kw"),
            format!("vset_{id}_pu"),
            format!("online_{id}"),
            format!("island_{id}"),
        ]);
    }
    h.extend(SYSTEM_COLUMNS.iter().map(|s| s.to_string()));
    h
}

pub fn write_timeseries<W: std::io::Write>(record: &TimeSeriesRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(timeseries_header(record)).map_err(csv_err)?;
    for s in &record.samples {
        let mut row = vec![s.t.to_string()];
        for u in &s.units {
            let on = u.online;
            row.extend([
                opt(u.f_hz),
                opt(u.v_pu),
                if on { u.p_kw.to_string() } else { String::new() },
                if on { u.q_kvar.to_string() } else { String::new() },
                u.p_set_kw.to_string(),
                u.v_set_pu.to_string(),
                u8::from(on).to_string(),
                u.island.and_then(|i| record.bus_names.get(i).cloned()).unwrap_or_default(),
            ]);
        }
        let x = &s.system;
        row.extend([x.eta_p, x.eta_q, x.mpsi, x.mqsi, x.v_error, x.f_error_hz].map(metric));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn timeseries_csv(record: &TimeSeriesRecord) -> Result<String> {
    let mut buf = Vec::new();
    write_timeseries(record, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Per-window steady-state indices of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: String,
    pub steady_window_s: f64,
    pub convergence_band: f64,
    pub convergence_hold_s: f64,
    pub windows: Vec<MetricSummary>,
}

impl RunSummary {
    pub fn new(scenario: &Scenario, record: &TimeSeriesRecord) -> Self {
        RunSummary {
            scenario: scenario.name.clone(),
            mode: scenario.mode.name().to_string(),
            steady_window_s: scenario.steady_window_s,
            convergence_band: CONVERGENCE_BAND,
            convergence_hold_s: CONVERGENCE_HOLD_S,
            windows: record.summarize(scenario.steady_window_s, CONVERGENCE_BAND, CONVERGENCE_HOLD_S),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(json_err)
    }

    /// Rows are event windows, with one indented row per island when the
    /// system is split; columns follow the usual |f−60|, MPSI, V_error,
    /// MQSI order.
    pub fn to_table(&self) -> String {
        let mut s = format!("{} ({})\n", self.scenario, self.mode);
        let _ = writeln!(
            s,
            "{:<24} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "window", "|f-f0| (Hz)", "MPSI", "V_err (pu)", "MQSI", "conv (s)"
        );
        for w in &self.windows {
            let conv = w.convergence_s.map_or_else(|| "none".to_string(), |c| format!("{c:.2}"));
            let _ = writeln!(
                s,
                "{:<24} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>10}",
                w.window, w.f_error_hz, w.mpsi, w.v_error, w.mqsi, conv
            );
            if w.islands.len() > 1 {
                for isl in &w.islands {
                    let ids: Vec<String> = isl.inverters.iter().map(|i| i.to_string()).collect();
                    let label = format!("  {} [{}]", isl.island, ids.join(","));
                    let _ = writeln!(
                        s,
                        "{:<24} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}",
                        label, isl.f_error_hz, isl.mpsi, isl.v_error, isl.mqsi
                    );
                }
            }
        }
        s
    }
}

/// Hex SHA-256 of a resolved scenario file.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    /// Resolved scenario, relative to the manifest.
    pub scenario_file: String,
    pub config_sha256: String,
    pub seed: u64,
    pub lfc_core_version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(json_err)
    }

    /// Reads the scenario the manifest points at, checking its hash.
    pub fn scenario(&self, manifest_path: &Path) -> Result<Scenario> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let path = dir.join(&self.scenario_file);
        let text = fs::read_to_string(&path)?;
        let hash = config_hash(&text);
        if hash != self.config_sha256 {
            return Err(Error::config(format!(
                "{} does not match the manifest hash ({} != {})",
                path.display(),
                hash,
                self.config_sha256
            )));
        }
        Scenario::from_toml_str(&text, Some(dir))
    }
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, scenario: &Scenario, record: &TimeSeriesRecord) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let resolved = scenario.resolved()?.to_toml_string()?;
    fs::write(dir.join(SCENARIO_FILE), &resolved)?;
    write_timeseries(record, fs::File::create(dir.join(TIMESERIES_FILE))?)?;
    let summary = RunSummary::new(scenario, record);
    fs::write(dir.join(SUMMARY_JSON_FILE), summary.to_json()? + "\n")?;
    fs::write(dir.join(SUMMARY_TEXT_FILE), summary.to_table())?;
    let manifest = Manifest {
        scenario: scenario.name.clone(),
        scenario_file: SCENARIO_FILE.to_string(),
        config_sha256: config_hash(&resolved),
        seed: scenario.seed,
        lfc_core_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: [TIMESERIES_FILE, SUMMARY_JSON_FILE, SUMMARY_TEXT_FILE].map(String::from).to_vec(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).map_err(json_err)? + "\n")?;
    Ok(manifest)
}

/// One row per case, one column group per event window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub windows: Vec<String>,
    pub rows: Vec<RunSummary>,
}

impl CompareTable {
    /// Fails unless every case runs the same network and event script.
    pub fn new(cases: &[(Scenario, RunSummary)]) -> Result<Self> {
        let Some((first, _)) = cases.first() else {
            return Err(Error::config("compare needs at least one case"));
        };
        let net = first.network.resolve()?;
        for (sc, _) in &cases[1..] {
            if sc.events != first.events {
                return Err(Error::config(format!(
                    "'{}' and '{}' have different event scripts",
                    first.name, sc.name
                )));
            }
            if sc.network.resolve()? != net {
                return Err(Error::config(format!("'{}' and '{}' use different networks", first.name, sc.name)));
            }
        }
        let rows: Vec<RunSummary> = cases.iter().map(|(_, s)| s.clone()).collect();
        let windows = rows[0].windows.iter().map(|w| w.window.clone()).collect();
        Ok(CompareTable { windows, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(json_err)
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.scenario.len()).max().unwrap_or(4).max(4);
        let mut head = format!("{:<width$}", "case");
        let mut sub = format!("{:<width$}", "");
        for w in &self.windows {
            let _ = write!(head, " | {:<47}", w);
            let _ = write!(sub, " | {:>11} {:>11} {:>11} {:>11}", "|f-f0|", "MPSI", "V_err", "MQSI");
        }
        let mut s = format!("{head}\n{sub}\n");
        for r in &self.rows {
            let _ = write!(s, "{:<width$}", r.scenario);
            for w in &r.windows {
                let _ = write!(s, " | {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}", w.f_error_hz, w.mpsi, w.v_error, w.mqsi);
            }
            s.push('\n');
        }
        s
    }
}

/// `links,seed,convergence_s` rows; a run that never converged has an
/// empty convergence cell.
pub fn write_sweep<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["links", "seed", "convergence_s"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.links.to_string(), r.seed.to_string(), opt(r.convergence_s)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
