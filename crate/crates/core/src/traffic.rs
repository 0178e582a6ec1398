//! Traffic datasets: synthetic generation and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{PhysicalNetwork, PnoId};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Sms,
    Call,
    Internet,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Sms => "sms",
            Channel::Call => "call",
            Channel::Internet => "internet",
        })
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sms" => Ok(Channel::Sms),
            "call" => Ok(Channel::Call),
            "internet" => Ok(Channel::Internet),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

/// Dense `[cell x time]` traffic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficDataset {
    pub cell_ids: Vec<PnoId>,
    /// Minutes since origin, strictly increasing and uniformly spaced.
    pub timestamps: Vec<i64>,
    /// `values[cell][t]`.
    pub values: Vec<Vec<f64>>,
    pub channel: Channel,
}

impl TrafficDataset {
    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn horizon(&self) -> usize {
        self.timestamps.len()
    }

    pub fn series(&self, cell: PnoId) -> Option<&[f64]> {
        self.cell_ids
            .iter()
            .position(|&c| c == cell)
            .map(|i| self.values[i].as_slice())
    }

    /// Time slice `[start, end)` of every cell.
    pub fn slice(&self, start: usize, end: usize) -> TrafficDataset {
        let end = end.min(self.horizon());
        let start = start.min(end);
        TrafficDataset {
            cell_ids: self.cell_ids.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.iter().map(|row| row[start..end].to_vec()).collect(),
            channel: self.channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.cell_ids.len() {
            return Err(Error::Schema(format!(
                "{} rows for {} cells",
                self.values.len(),
                self.cell_ids.len()
            )));
        }
        for (cell, row) in self.cell_ids.iter().zip(&self.values) {
            if row.len() != self.timestamps.len() {
                return Err(Error::Schema(format!("cell {cell} has {} values", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Schema(format!("cell {cell} has invalid value {v}")));
            }
        }
        let steps: BTreeSet<i64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        if steps.len() > 1 || steps.iter().any(|&s| s <= 0) {
            return Err(Error::Schema(
                "timestamps not strictly increasing and uniformly spaced".into(),
            ));
        }
        Ok(())
    }

    /// Writes the dataset in the `cell_id,timestamp,channel,value` schema,
    /// cell-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let to_io = |e: csv::Error| Error::io("csv output", std::io::Error::other(e));
        w.write_record(["cell_id", "timestamp", "channel", "value"])
            .map_err(to_io)?;
        let channel = self.channel.to_string();
        for (cell, row) in self.cell_ids.iter().zip(&self.values) {
            for (t, v) in self.timestamps.iter().zip(row) {
                w.write_record([cell.to_string(), t.to_string(), channel.clone(), v.to_string()])
                    .map_err(to_io)?;
            }
        }
        w.flush().map_err(|e| Error::io("csv output", e))
    }
}

/// Diurnal load profile for synthetic traffic.
///
/// Each cell's base load is a deterministic function of its grid position:
/// a radial hotspot centred on the grid rising from `base_min` at the edges
/// to `base_max` at the centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficProfile {
    pub base_min: f64,
    pub base_max: f64,
    pub amplitude: f64,
    pub noise_scale: f64,
    /// Diurnal period in steps.
    pub period: usize,
    pub step_minutes: i64,
    pub channel: Channel,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            base_min: 2.0,
            base_max: 10.0,
            amplitude: 0.6,
            noise_scale: 0.3,
            period: 144,
            step_minutes: 10,
            channel: Channel::Sms,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("network.traffic.{k}");
        if !(self.base_min.is_finite() && self.base_min >= 0.0) {
            return Err(Error::config(key("base_min"), "must be finite and non-negative"));
        }
        if !(self.base_max.is_finite() && self.base_max >= self.base_min) {
            return Err(Error::config(key("base_max"), "must be finite and >= base_min"));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::config(key("amplitude"), "must be finite and non-negative"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config(key("noise_scale"), "must be finite and non-negative"));
        }
        if self.period == 0 {
            return Err(Error::config(key("period"), "must be at least 1"));
        }
        if self.step_minutes <= 0 {
            return Err(Error::config(key("step_minutes"), "must be positive"));
        }
        Ok(())
    }

    /// Base load of a cell at `position` on a `rows x cols` grid.
    pub fn base_load(&self, position: (f64, f64), grid: (usize, usize)) -> f64 {
        let (rows, cols) = grid;
        let cx = (cols as f64 - 1.0) / 2.0;
        let cy = (rows as f64 - 1.0) / 2.0;
        let sigma = 0.35 * rows.max(cols) as f64;
        let d2 = (position.0 - cx).powi(2) + (position.1 - cy).powi(2);
        self.base_min + (self.base_max - self.base_min) * (-d2 / (2.0 * sigma * sigma)).exp()
    }
}

pub fn generate_synthetic_traffic(
    network: &PhysicalNetwork,
    seed: u64,
    horizon: usize,
    profile: &TrafficProfile,
) -> Result<TrafficDataset> {
    profile.validate()?;
    if horizon == 0 {
        return Err(Error::config("network.horizon", "must be at least 1"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, profile.noise_scale)
        .map_err(|e| Error::config("network.traffic.noise_scale", e.to_string()))?;
    let omega = 2.0 * std::f64::consts::PI / profile.period as f64;
    let mut values = Vec::with_capacity(network.len());
    for obj in &network.objects {
        let base = profile.base_load(obj.position, network.grid_dims);
        let row = (0..horizon)
            .map(|t| {
                let clean = base * (1.0 + profile.amplitude * (omega * t as f64).sin());
                let eps = if profile.noise_scale > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (clean + eps).max(0.0)
            })
            .collect();
        values.push(row);
    }
    Ok(TrafficDataset {
        cell_ids: network.cell_ids(),
        timestamps: (0..horizon as i64).map(|t| t * profile.step_minutes).collect(),
        values,
        channel: profile.channel,
    })
}

/// Restricts which rows of a traffic CSV are ingested.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrafficCsvSchema {
    /// Only rows of this channel are kept; `None` requires a single-channel file.
    pub channel: Option<Channel>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub missing_count: usize,
}

pub fn load_traffic_csv(path: impl AsRef<Path>, schema: TrafficCsvSchema) -> Result<(TrafficDataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_traffic_csv(file, schema)
}

pub fn read_traffic_csv<R: Read>(input: R, schema: TrafficCsvSchema) -> Result<(TrafficDataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["cell_id", "timestamp", "channel", "value"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut cells: BTreeMap<PnoId, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut channel: Option<Channel> = schema.channel;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let cell: PnoId = record[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid cell_id `{}`", &record[0])))?;
        let ts: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid timestamp `{}`", &record[1])))?;
        let ch: Channel = record[2].trim().parse().map_err(bad)?;
        let value: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid value `{}`", &record[3])))?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(bad(format!("value {value} must be finite and non-negative")));
        }
        match (schema.channel, channel) {
            (Some(want), _) if want != ch => continue,
            (None, None) => channel = Some(ch),
            (None, Some(seen)) if seen != ch => {
                return Err(Error::Schema(format!(
                    "line {line}: mixed channels `{seen}` and `{ch}`; select one in the schema"
                )))
            }
            _ => {}
        }
        let series = cells.entry(cell).or_default();
        if series.contains_key(&ts) {
            return Err(bad(format!("duplicate row for cell {cell} at timestamp {ts}")));
        }
        if let Some((&last, _)) = series.last_key_value() {
            if ts < last {
                return Err(Error::Schema(format!(
                    "line {line}: timestamp {ts} for cell {cell} precedes earlier timestamp {last}"
                )));
            }
        }
        series.insert(ts, value);
        rows += 1;
    }

    let all_ts: BTreeSet<i64> = cells.values().flat_map(|s| s.keys().copied()).collect();
    let (Some(&first), Some(&last)) = (all_ts.first(), all_ts.last()) else {
        return Err(Error::Schema("no data rows".into()));
    };
    let step = all_ts
        .iter()
        .zip(all_ts.iter().skip(1))
        .map(|(a, b)| b - a)
        .min()
        .unwrap_or(1);
    if let Some(off) = all_ts.iter().find(|&&t| (t - first) % step != 0) {
        return Err(Error::Schema(format!(
            "timestamp {off} is not aligned to a {step}-minute grid"
        )));
    }
    let timestamps: Vec<i64> = (0..=((last - first) / step)).map(|i| first + i * step).collect();

    let mut missing_count = 0;
    let mut values = Vec::with_capacity(cells.len());
    for series in cells.values() {
        let row: Vec<f64> = timestamps
            .iter()
            .map(|t| {
                series.get(t).copied().unwrap_or_else(|| {
                    missing_count += 1;
                    0.0
                })
            })
            .collect();
        values.push(row);
    }
    let dataset = TrafficDataset {
        cell_ids: cells.keys().copied().collect(),
        timestamps,
        values,
        channel: channel.unwrap_or(Channel::Sms),
    };
    Ok((dataset, LoadReport { rows, missing_count }))
}
