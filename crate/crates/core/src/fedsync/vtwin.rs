//! Synchronous twin creation: every cell trains each round and the rule
//! aggregates all updates at once.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::forecast::{train_local, LinearForecaster, TrainingConfig};
use crate::metrics::CostEvent;

use super::{evaluate_span, AggregationRule, ClientUpdate, GlobalTwin, TwinCell, TwinTimeline, UpdateHook};

#[derive(Debug, Clone, PartialEq)]
pub struct VTwinRun {
    pub twin: GlobalTwin,
    pub timeline: TwinTimeline,
}

/// Trains a twin for `rounds` rounds on `cells[..].series[..train_end]`,
/// starting from a zero model.
pub fn run_vtwin(
    cluster_id: usize,
    cells: &[TwinCell],
    train_end: usize,
    rounds: usize,
    rule: &AggregationRule<f64>,
    training: &TrainingConfig,
) -> Result<GlobalTwin> {
    let start = GlobalTwin::new(cluster_id, training.window);
    run_vtwin_with(
        start,
        cells,
        train_end,
        rounds,
        rule,
        training,
        None,
        &mut |_, _| Ok(()),
    )
    .map(|run| run.twin)
}

/// Full form of [`run_vtwin`]: continues from `start`, evaluates every round
/// on `eval` (absolute series indices) when given, and lets `hook` see each
/// round's updates before aggregation.
#[allow(clippy::too_many_arguments)]
pub fn run_vtwin_with(
    start: GlobalTwin,
    cells: &[TwinCell],
    train_end: usize,
    rounds: usize,
    rule: &AggregationRule<f64>,
    training: &TrainingConfig,
    eval: Option<Range<usize>>,
    hook: &mut UpdateHook<'_>,
) -> Result<VTwinRun> {
    if rounds == 0 {
        return Err(Error::config("vtwin.rounds", "must be at least 1"));
    }
    if cells.is_empty() {
        return Err(Error::domain(format!("cluster {} has no cells", start.cluster_id)));
    }
    training.validate()?;
    rule.validate()?;
    let mut twin = start;
    let n_params = twin.params.len() as u64;
    let mut timeline = TwinTimeline {
        cluster_id: twin.cluster_id,
        entries: Vec::new(),
    };

    for _ in 0..rounds {
        let global = LinearForecaster::unpack(&twin.params)?;
        let mut updates = Vec::with_capacity(cells.len());
        for cell in cells {
            let series = cell.series.get(..train_end).ok_or_else(|| {
                Error::domain(format!("cell {} has no training split of length {train_end}", cell.id))
            })?;
            let (model, n) = train_local(&global, series, &cell.scaler, training)?;
            twin.cost.record(CostEvent::ModelTransfer { params: n_params });
            twin.cost.record(CostEvent::ModelTransfer { params: n_params });
            twin.cost.record(CostEvent::Compute {
                epochs: training.epochs as u64,
                samples: n as u64,
            });
            updates.push(ClientUpdate::new(cell.id, model.pack(), n as u64, twin.version));
        }
        hook(&twin, &mut updates)?;
        let next = rule.aggregate(&updates, &twin.params, training)?;
        if !next.is_finite() {
            return Err(Error::State(format!(
                "twin {} diverged at round {}",
                twin.cluster_id,
                twin.version + 1
            )));
        }
        twin.params = next;
        twin.version += 1;
        let quality = match &eval {
            Some(r) => Some(evaluate_span(&twin.model()?, cells, r.start, r.end)?),
            None => None,
        };
        timeline.push(&twin, quality);
    }
    Ok(VTwinRun { twin, timeline })
}
