//! Federated twin synchronization: synchronous creation (V-twin),
//! asynchronous maintenance (H-twin) and the aggregation rules.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{sliding_samples, LinearForecaster, MinMaxScaler, Sample, TrainingConfig};
use crate::metrics::{quality_report, CostReport, QualityReport};
use crate::network::PnoId;
use crate::params::ParamVec;
use crate::scalar::Scalar;

mod aggregate;
mod checkpoint;
mod htwin;
mod vtwin;

pub use aggregate::{
    aggregate_fltrust, aggregate_mean, aggregate_median, aggregate_tid, robust_center_spread, staleness_weight,
    tid_with_details, TidOutcome, MAD_CONSISTENCY,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use htwin::{run_htwin, Arrival, AsyncSchedule, HTwinConfig, HTwinEngine, Recluster};
pub use vtwin::{run_vtwin, run_vtwin_with, VTwinRun};

/// One participant's contribution: its full locally trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<F> {
    pub client_id: u32,
    pub params: ParamVec<F>,
    pub sample_count: u64,
    pub base_version: u64,
    /// False for fabricated clients. Aggregators never look at it.
    pub authentic: bool,
}

impl<F: Scalar> ClientUpdate<F> {
    pub fn new(client_id: u32, params: ParamVec<F>, sample_count: u64, base_version: u64) -> Self {
        ClientUpdate {
            client_id,
            params,
            sample_count,
            base_version,
            authentic: true,
        }
    }
}

/// Called with the current global twin and the batch of updates about to be
/// aggregated; may add, drop or alter updates.
pub type UpdateHook<'a> = dyn FnMut(&GlobalTwin, &mut Vec<ClientUpdate<f64>>) -> Result<()> + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTwin {
    pub cluster_id: usize,
    pub params: ParamVec<f64>,
    /// Number of aggregations applied so far.
    pub version: u64,
    pub cost: CostReport,
}

impl GlobalTwin {
    pub fn new(cluster_id: usize, window: usize) -> Self {
        GlobalTwin {
            cluster_id,
            params: ParamVec::zeros(window + 1),
            version: 0,
            cost: CostReport::default(),
        }
    }

    pub fn model(&self) -> Result<LinearForecaster<f64>> {
        LinearForecaster::unpack(&self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Mean,
    Median,
    #[serde(rename = "fltrust")]
    FlTrust,
    Tid,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] = [RuleKind::Mean, RuleKind::Median, RuleKind::FlTrust, RuleKind::Tid];
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Mean => "Mean",
            RuleKind::Median => "Median",
            RuleKind::FlTrust => "FLTrust",
            RuleKind::Tid => "TID",
        })
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(RuleKind::Mean),
            "median" => Ok(RuleKind::Median),
            "fltrust" => Ok(RuleKind::FlTrust),
            "tid" => Ok(RuleKind::Tid),
            other => Err(Error::config(
                "fedsync.rule",
                format!("unknown aggregation rule `{other}`"),
            )),
        }
    }
}

/// Normalized training windows held by the server for FLTrust.
#[derive(Debug, Clone, PartialEq)]
pub struct RootDataset<F> {
    pub samples: Vec<Sample<F>>,
}

impl<F: Scalar> RootDataset<F> {
    /// Pools the sliding windows of several raw series, each normalized by
    /// its own min-max statistics.
    pub fn from_series<'a>(series: impl IntoIterator<Item = &'a [F]>, window: usize) -> Result<Self> {
        let mut samples = Vec::new();
        for s in series {
            let scaler = MinMaxScaler::fit(s);
            samples.extend(sliding_samples(&scaler.normalize_all(s), window));
        }
        if samples.is_empty() {
            return Err(Error::domain("root dataset has no training windows"));
        }
        Ok(RootDataset { samples })
    }

    /// The server's own update: local training from `global` on the root data.
    pub fn server_update(&self, global: &ParamVec<F>, cfg: &TrainingConfig) -> Result<ParamVec<F>> {
        let model = LinearForecaster::unpack(global)?;
        Ok(model.train_on_samples(&self.samples, cfg)?.pack())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregationRule<F> {
    Mean,
    Median,
    FlTrust { root: Arc<RootDataset<F>> },
    Tid { tau: F },
}

impl<F: Scalar> AggregationRule<F> {
    pub fn kind(&self) -> RuleKind {
        match self {
            AggregationRule::Mean => RuleKind::Mean,
            AggregationRule::Median => RuleKind::Median,
            AggregationRule::FlTrust { .. } => RuleKind::FlTrust,
            AggregationRule::Tid { .. } => RuleKind::Tid,
        }
    }

    /// Smallest batch the rule accepts.
    pub fn min_updates(&self) -> usize {
        match self {
            AggregationRule::Tid { .. } => 3,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AggregationRule::Tid { tau } = self {
            if !(*tau > F::zero()) {
                return Err(Error::config("fedsync.tau", "TID threshold must be positive"));
            }
        }
        Ok(())
    }

    /// Aggregates full client models into a new full model.
    pub fn aggregate(
        &self,
        updates: &[ClientUpdate<F>],
        global: &ParamVec<F>,
        training: &TrainingConfig,
    ) -> Result<ParamVec<F>> {
        match self {
            AggregationRule::Mean => aggregate_mean(updates),
            AggregationRule::Median => aggregate_median(updates),
            AggregationRule::FlTrust { root } => {
                let server = root.server_update(global, training)?;
                aggregate_fltrust(updates, &server, global)
            }
            AggregationRule::Tid { tau } => aggregate_tid(updates, *tau),
        }
    }
}

/// A cell taking part in federation: its whole series and the scaler
/// fitted on its training split.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCell {
    pub id: PnoId,
    pub series: Vec<f64>,
    pub scaler: MinMaxScaler<f64>,
}

impl TwinCell {
    /// Builds a cell whose scaler is fitted on `series[..train_end]`.
    pub fn new(id: PnoId, series: Vec<f64>, train_end: usize) -> Result<Self> {
        if train_end == 0 || train_end > series.len() {
            return Err(Error::domain(format!(
                "training split {train_end} outside series of length {}",
                series.len()
            )));
        }
        let scaler = MinMaxScaler::fit(&series[..train_end]);
        Ok(TwinCell { id, series, scaler })
    }
}

/// Concatenated one-step forecasts of `model` over `start..end` of every
/// cell, as (predictions, truth).
pub fn forecast_span<'a>(
    model: &LinearForecaster<f64>,
    cells: impl IntoIterator<Item = &'a TwinCell>,
    start: usize,
    end: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if start >= end {
        return Err(Error::domain(format!("empty evaluation span {start}..{end}")));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for cell in cells {
        if end > cell.series.len() {
            return Err(Error::domain(format!(
                "evaluation span ends past cell {} data",
                cell.id
            )));
        }
        pred.extend(crate::forecast::rolling_forecast(
            model,
            &cell.series[..end - 1],
            &cell.scaler,
            end - start,
        )?);
        truth.extend_from_slice(&cell.series[start..end]);
    }
    Ok((pred, truth))
}

pub fn evaluate_span<'a>(
    model: &LinearForecaster<f64>,
    cells: impl IntoIterator<Item = &'a TwinCell>,
    start: usize,
    end: usize,
) -> Result<QualityReport<f64>> {
    let (pred, truth) = forecast_span(model, cells, start, end)?;
    quality_report(&pred, &truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEntry {
    pub version: u64,
    pub params: ParamVec<f64>,
    pub quality: Option<QualityReport<f64>>,
    /// Cumulative ledger totals at this version.
    pub comm_cost: u64,
    pub compute_cost: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TwinTimeline {
    pub cluster_id: usize,
    pub entries: Vec<TimelineEntry>,
}

impl TwinTimeline {
    pub fn push(&mut self, twin: &GlobalTwin, quality: Option<QualityReport<f64>>) {
        self.entries.push(TimelineEntry {
            version: twin.version,
            params: twin.params.clone(),
            quality,
            comm_cost: twin.cost.comm_units,
            compute_cost: twin.cost.compute_units,
        });
    }

    /// CSV `version,mae,mse,nrmse,comm_cost,compute_cost`; errors are the
    /// reported (capped) values, unevaluated cells are left empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let io = |e: csv::Error| Error::State(format!("timeline export failed: {e}"));
        w.write_record(["version", "mae", "mse", "nrmse", "comm_cost", "compute_cost"])
            .map_err(io)?;
        for e in &self.entries {
            let (mae, mse, nrmse) = match &e.quality {
                Some(q) => (
                    format!("{:.6}", q.mae.reported),
                    format!("{:.6}", q.mse.reported),
                    q.nrmse.map(|m| format!("{:.6}", m.reported)).unwrap_or_default(),
                ),
                None => Default::default(),
            };
            w.write_record([
                e.version.to_string(),
                mae,
                mse,
                nrmse,
                e.comm_cost.to_string(),
                e.compute_cost.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::State(format!("timeline export failed: {e}")))?;
        Ok(())
    }
}
