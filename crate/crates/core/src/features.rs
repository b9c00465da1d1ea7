//! Per-signal statistical summaries used as classifier inputs and prompt
//! metadata: mean, population standard deviation, Fisher-Pearson skewness,
//! least-squares slope, min, and max for each of the three recorded signals,
//! in that fixed order.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::datagen::TraceRecord;
use crate::plant::SignalId;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: {len} values, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite value in series for {signal}")]
    NonFinite { signal: &'static str },
}

pub const FEATURE_COUNT: usize = 18;
pub const STATS_PER_SIGNAL: usize = 6;
pub const STAT_NAMES: [&str; STATS_PER_SIGNAL] = ["mean", "std", "skewness", "slope", "min", "max"];

/// The 18 feature names in serialization order, e.g. `delta_f1.mean`,
/// `delta_p_tie.skewness`.
pub fn feature_names() -> [String; FEATURE_COUNT] {
    let mut names: Vec<String> = Vec::with_capacity(FEATURE_COUNT);
    for sig in SignalId::ALL {
        for stat in STAT_NAMES {
            names.push(format!("{}.{stat}", sig.name()));
        }
    }
    names.try_into().expect("exactly 18 names")
}

/// Fixed-order feature vector; serializes as a map keyed by
/// [`feature_names`] so dataset lines stay self-describing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The six statistics for one signal in documented order.
    pub fn stats(&self, signal: SignalId) -> [f64; STATS_PER_SIGNAL] {
        let base = match signal {
            SignalId::DeltaF1 => 0,
            SignalId::DeltaF2 => STATS_PER_SIGNAL,
            SignalId::DeltaPTie => 2 * STATS_PER_SIGNAL,
        };
        self.0[base..base + STATS_PER_SIGNAL]
            .try_into()
            .expect("six stats per signal")
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let names = feature_names();
        let mut map = serializer.serialize_map(Some(FEATURE_COUNT))?;
        for (name, value) in names.iter().zip(self.0.iter()) {
            map.serialize_entry(name, value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FeatureVisitor;

        impl<'de> Visitor<'de> for FeatureVisitor {
            type Value = FeatureVector;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a map with the {FEATURE_COUNT} named features")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let names = feature_names();
                let mut values = [f64::NAN; FEATURE_COUNT];
                let mut seen = [false; FEATURE_COUNT];
                while let Some((key, value)) = access.next_entry::<String, f64>()? {
                    let idx = names.iter().position(|n| *n == key).ok_or_else(|| {
                        serde::de::Error::custom(format!("unknown feature {key}"))
                    })?;
                    values[idx] = value;
                    seen[idx] = true;
                }
                if let Some(missing) = seen.iter().position(|s| !s) {
                    return Err(serde::de::Error::custom(format!(
                        "missing feature {}",
                        names[missing]
                    )));
                }
                Ok(FeatureVector(values))
            }
        }

        deserializer.deserialize_map(FeatureVisitor)
    }
}

/// Fisher-Pearson population skewness `m3 / m2^{3/2}`; returns 0 when the
/// second moment is below 1e-12 (degenerate series guard).
pub fn skewness(series: &[f64]) -> Result<f64, FeatureError> {
    if series.len() < 2 {
        return Err(FeatureError::TooShort {
            len: series.len(),
            min: 2,
        });
    }
    if all_equal(series) {
        return Ok(0.0);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for v in series {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 < 1e-12 {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}

/// Ordinary-least-squares slope of the series against `t_k = k * dt`.
pub fn slope(series: &[f64], dt: f64) -> Result<f64, FeatureError> {
    if series.len() < 2 {
        return Err(FeatureError::TooShort {
            len: series.len(),
            min: 2,
        });
    }
    if all_equal(series) {
        return Ok(0.0);
    }
    let n = series.len() as f64;
    let t_mean = dt * (series.len() - 1) as f64 / 2.0;
    let v_mean = series.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, v) in series.iter().enumerate() {
        let td = k as f64 * dt - t_mean;
        num += td * (v - v_mean);
        den += td * td;
    }
    Ok(num / den)
}

fn all_equal(series: &[f64]) -> bool {
    series.iter().all(|v| *v == series[0])
}

/// Mean, population std, skewness, slope, min, max for one series.
pub fn summarize(series: &[f64], dt: f64) -> Result<[f64; STATS_PER_SIGNAL], FeatureError> {
    if series.len() < 2 {
        return Err(FeatureError::TooShort {
            len: series.len(),
            min: 2,
        });
    }
    if all_equal(series) {
        let v = series[0];
        return Ok([v, 0.0, 0.0, 0.0, v, v]);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in series {
        min = min.min(*v);
        max = max.max(*v);
    }
    Ok([
        mean,
        var.sqrt(),
        skewness(series)?,
        slope(series, dt)?,
        min,
        max,
    ])
}

/// Extracts the 18-value feature vector from a recorded trace, in the order
/// (delta_f1, delta_f2, delta_p_tie) x (mean, std, skewness, slope, min, max).
pub fn extract(trace: &TraceRecord) -> Result<FeatureVector, FeatureError> {
    let dt = if trace.t_s.len() >= 2 {
        trace.t_s[1] - trace.t_s[0]
    } else {
        return Err(FeatureError::TooShort {
            len: trace.t_s.len(),
            min: 2,
        });
    };
    let mut values = [0.0; FEATURE_COUNT];
    for (i, (series, signal)) in [
        (&trace.delta_f1, "delta_f1"),
        (&trace.delta_f2, "delta_f2"),
        (&trace.delta_p_tie, "delta_p_tie"),
    ]
    .into_iter()
    .enumerate()
    {
        if series.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { signal });
        }
        let stats = summarize(series, dt)?;
        values[i * STATS_PER_SIGNAL..(i + 1) * STATS_PER_SIGNAL].copy_from_slice(&stats);
    }
    Ok(FeatureVector(values))
}
