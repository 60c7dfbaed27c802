//! Power-sharing and regulation indices.
//!
//! In the sharing indices `m_p` and `m_q` are the droop gains expressed
//! relative to each unit's own rating (0.01 for a 1% droop), so that
//! `m_p P / s` is the unit's droop excursion as a fraction of nominal.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Spelling of an undefined index in summaries.
pub const UNDEFINED: &str = "undefined";

/// Default MPSI band for convergence times.
pub const CONVERGENCE_BAND: f64 = 1e-3;
/// Default time MPSI must stay in the band.
pub const CONVERGENCE_HOLD_S: f64 = 0.2;

/// A metric that may be undefined (empty island, zero sharing parameter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }

    pub fn is_below(self, bound: f64) -> bool {
        self.value().is_some_and(|v| v < bound)
    }
}

impl From<Option<f64>> for MetricValue {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(v) if v.is_finite() => MetricValue::Defined(v),
            _ => MetricValue::Undefined,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            MetricValue::Undefined => f.pad(UNDEFINED),
        }
    }
}

impl fmt::LowerExp for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => fmt::LowerExp::fmt(v, f),
            MetricValue::Undefined => f.pad(UNDEFINED),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => s.serialize_f64(*v),
            MetricValue::Undefined => s.serialize_str(UNDEFINED),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MetricValue;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number or \"{UNDEFINED}\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<MetricValue, E> {
                Ok(MetricValue::Defined(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<MetricValue, E> {
                Ok(MetricValue::Defined(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<MetricValue, E> {
                Ok(MetricValue::Defined(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<MetricValue, E> {
                if v == UNDEFINED {
                    Ok(MetricValue::Undefined)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Steady-state indices of one event window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub window: String,
    pub t_start: f64,
    pub t_end: f64,
    pub f_error_hz: MetricValue,
    pub mpsi: MetricValue,
    pub mqsi: MetricValue,
    pub v_error: MetricValue,
    /// Seconds from the window start until MPSI settles in its band.
    pub convergence_s: Option<f64>,
    pub islands: Vec<IslandSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandSummary {
    /// Name of the island's first bus.
    pub island: String,
    pub inverters: Vec<u32>,
    pub f_error_hz: MetricValue,
    pub mpsi: MetricValue,
    pub mqsi: MetricValue,
    pub v_error: MetricValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingUnit {
    pub m_p: f64,
    pub m_q: f64,
    pub p: f64,
    pub q: f64,
    pub rating: f64,
}

/// Connected units of one island.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SharingSnapshot {
    pub units: Vec<SharingUnit>,
}

fn eta_of(units: &[SharingUnit], x: impl Fn(&SharingUnit) -> (f64, f64)) -> MetricValue {
    if units.is_empty() {
        return MetricValue::Undefined;
    }
    let (num, den) = units.iter().fold((0.0, 0.0), |(n, d), u| {
        let (power, m) = x(u);
        (n + power, d + u.rating / m)
    });
    if den > 0.0 {
        MetricValue::Defined(num / den)
    } else {
        MetricValue::Undefined
    }
}

fn index_of(units: &[SharingUnit], eta: MetricValue, x: impl Fn(&SharingUnit) -> f64) -> MetricValue {
    match eta {
        MetricValue::Defined(e) if e != 0.0 => {
            let sum: f64 = units.iter().map(|u| ((x(u) - e) / e).abs()).sum();
            MetricValue::Defined(sum / units.len() as f64)
        }
        _ => MetricValue::Undefined,
    }
}

impl SharingSnapshot {
    /// `(η_p, η_q)` with `η = ΣP / Σ(s/m)`.
    pub fn eta(&self) -> (MetricValue, MetricValue) {
        (eta_of(&self.units, |u| (u.p, u.m_p)), eta_of(&self.units, |u| (u.q, u.m_q)))
    }

    /// Mean absolute relative deviation of `m_p P / s` from `η_p`.
    pub fn mpsi(&self) -> MetricValue {
        index_of(&self.units, self.eta().0, |u| u.m_p * u.p / u.rating)
    }

    pub fn mqsi(&self) -> MetricValue {
        index_of(&self.units, self.eta().1, |u| u.m_q * u.q / u.rating)
    }
}

/// Mean absolute deviation from 1 pu.
pub fn v_error(voltages: &[f64]) -> MetricValue {
    if voltages.is_empty() {
        return MetricValue::Undefined;
    }
    MetricValue::Defined(voltages.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / voltages.len() as f64)
}

/// Mean of the defined samples with `t0 <= t <= t1`; undefined if any
/// sample in the window is undefined or the window is empty.
pub fn window_mean(times: &[f64], values: &[MetricValue], t0: f64, t1: f64) -> MetricValue {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (t, v) in times.iter().zip(values) {
        if *t < t0 - 1e-12 || *t > t1 + 1e-12 {
            continue;
        }
        match v.value() {
            Some(x) => {
                acc += x;
                n += 1;
            }
            None => return MetricValue::Undefined,
        }
    }
    if n == 0 {
        MetricValue::Undefined
    } else {
        MetricValue::Defined(acc / n as f64)
    }
}

/// Time from `t_event` until `values` enters `[0, band)` and stays there
/// for at least `hold` seconds, looking only at samples in
/// `[t_event, t_end]`. `None` if that never happens within the window.
pub fn convergence_time(times: &[f64], values: &[MetricValue], t_event: f64, t_end: f64, band: f64, hold: f64) -> Option<f64> {
    let mut entered: Option<f64> = None;
    for (t, v) in times.iter().zip(values) {
        if *t < t_event - 1e-12 {
            continue;
        }
        if *t > t_end + 1e-12 {
            break;
        }
        if v.is_below(band) {
            let start = *entered.get_or_insert(*t);
            if t - start >= hold - 1e-12 {
                return Some(start - t_event);
            }
        } else {
            entered = None;
        }
    }
    None
}
