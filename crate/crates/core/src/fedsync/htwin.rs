//! Asynchronous twin maintenance: clients sync on their own schedules and
//! stale contributions are discounted.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{train_local, LinearForecaster, TrainingConfig};
use crate::metrics::{CostEvent, CostReport};
use crate::network::PnoId;
use crate::params::ParamVec;
use crate::rng::stream;

use super::{
    evaluate_span, staleness_weight, AggregationRule, ClientUpdate, GlobalTwin, TwinCell, TwinTimeline, UpdateHook,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HTwinConfig {
    /// Base weight of a fresh update.
    pub beta: f64,
    /// Updates buffered per aggregation.
    pub batch: usize,
    /// Steps of recent data used for the timeline's quality figures.
    pub eval_window: usize,
    /// Sync periods are drawn uniformly from this range, in steps.
    pub min_period: usize,
    pub max_period: usize,
}

impl Default for HTwinConfig {
    fn default() -> Self {
        HTwinConfig {
            beta: 0.5,
            batch: 1,
            eval_window: 36,
            min_period: 36,
            max_period: 108,
        }
    }
}

impl HTwinConfig {
    pub fn validate(&self) -> Result<()> {
        staleness_weight(0, self.beta).map_err(|_| Error::config("htwin.beta", "must lie in (0, 1]"))?;
        if self.batch == 0 {
            return Err(Error::config("htwin.batch", "must be at least 1"));
        }
        if self.eval_window == 0 {
            return Err(Error::config("htwin.eval_window", "must be at least 1"));
        }
        if self.min_period == 0 || self.min_period > self.max_period {
            return Err(Error::config("htwin.min_period", "need 1 <= min_period <= max_period"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub client: PnoId,
    pub period: usize,
    /// First arrival step, in `1..=period`.
    pub offset: usize,
}

impl Arrival {
    pub fn due(&self, tick: usize) -> bool {
        tick >= self.offset && (tick - self.offset).is_multiple_of(self.period)
    }
}

/// Deterministic arrival pattern, one entry per client in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncSchedule {
    pub arrivals: Vec<Arrival>,
}

impl AsyncSchedule {
    pub fn from_seed(clients: &[PnoId], min_period: usize, max_period: usize, seed: u64) -> Result<Self> {
        if min_period == 0 || min_period > max_period {
            return Err(Error::config("htwin.min_period", "need 1 <= min_period <= max_period"));
        }
        let mut ids = clients.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut rng = stream(seed, "htwin-schedule");
        let arrivals = ids
            .into_iter()
            .map(|client| {
                let period = rng.random_range(min_period..=max_period);
                let offset = rng.random_range(1..=period);
                Arrival { client, period, offset }
            })
            .collect();
        Ok(AsyncSchedule { arrivals })
    }

    pub fn due(&self, tick: usize) -> impl Iterator<Item = PnoId> + '_ {
        self.arrivals.iter().filter(move |a| a.due(tick)).map(|a| a.client)
    }
}

/// Re-partitions cells between twins given the first series index not yet
/// observed; `None` keeps the current assignment.
pub type Recluster<'a> = dyn FnMut(usize) -> Result<Option<BTreeMap<PnoId, usize>>> + 'a;

#[derive(Debug, Clone)]
struct ClientState {
    twin: usize,
    last_sync: usize,
    base_version: u64,
    base_params: ParamVec<f64>,
}

/// Runs any number of twins over a shared stream of cell data.
pub struct HTwinEngine<'a> {
    cells: &'a [TwinCell],
    train_end: usize,
    stream_end: usize,
    rule: AggregationRule<f64>,
    training: TrainingConfig,
    cfg: HTwinConfig,
    pub twins: Vec<GlobalTwin>,
    pub timelines: Vec<TwinTimeline>,
    clients: Vec<ClientState>,
    pending: Vec<Vec<ClientUpdate<f64>>>,
    applied: u64,
    events: u64,
    recluster_due: bool,
    /// Re-partition after this many applied batches; 0 disables.
    pub recluster_period: u64,
    /// Stop the stream after this many client arrivals.
    pub max_events: Option<u64>,
    /// Costs incurred by this engine only.
    pub cost: CostReport,
    /// First series index not yet observed at the last processed arrival,
    /// or the stream end when the stream ran out.
    pub stopped_at: usize,
}

impl<'a> HTwinEngine<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cells: &'a [TwinCell],
        twins: Vec<GlobalTwin>,
        assignment: &BTreeMap<PnoId, usize>,
        train_end: usize,
        stream_end: usize,
        rule: AggregationRule<f64>,
        training: TrainingConfig,
        cfg: HTwinConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        training.validate()?;
        rule.validate()?;
        if cfg.batch < rule.min_updates() {
            return Err(Error::config(
                "htwin.batch",
                format!("{} needs batches of at least {}", rule.kind(), rule.min_updates()),
            ));
        }
        if let Some(t) = twins.iter().find(|t| t.version == 0) {
            return Err(Error::State(format!(
                "twin {} has not been initialized by synchronous training",
                t.cluster_id
            )));
        }
        if train_end <= training.window || stream_end < train_end {
            return Err(Error::domain(format!(
                "stream {train_end}..{stream_end} needs more than {} steps of history",
                training.window
            )));
        }
        let clients = cells
            .iter()
            .map(|c| {
                if c.series.len() < stream_end {
                    return Err(Error::domain(format!("cell {} has no data up to {stream_end}", c.id)));
                }
                let twin = *assignment
                    .get(&c.id)
                    .filter(|t| **t < twins.len())
                    .ok_or_else(|| Error::State(format!("cell {} is not assigned to a twin", c.id)))?;
                Ok(ClientState {
                    twin,
                    last_sync: train_end,
                    base_version: twins[twin].version,
                    base_params: twins[twin].params.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let timelines = twins
            .iter()
            .map(|t| TwinTimeline {
                cluster_id: t.cluster_id,
                entries: Vec::new(),
            })
            .collect();
        let pending = vec![Vec::new(); twins.len()];
        let mut engine = HTwinEngine {
            cells,
            train_end,
            stream_end,
            rule,
            training,
            cfg,
            twins,
            timelines,
            clients,
            pending,
            applied: 0,
            events: 0,
            recluster_due: false,
            recluster_period: 0,
            max_events: None,
            cost: CostReport::default(),
            stopped_at: train_end,
        };
        for t in 0..engine.twins.len() {
            engine.record(t, train_end)?;
        }
        Ok(engine)
    }

    /// Number of aggregations applied across all twins.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    /// Client arrivals processed so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Current twin of each cell.
    pub fn assignment(&self) -> BTreeMap<PnoId, usize> {
        self.cells
            .iter()
            .zip(&self.clients)
            .map(|(c, s)| (c.id, s.twin))
            .collect()
    }

    /// Plays the whole stream. Only full batches are aggregated.
    pub fn run(
        &mut self,
        schedule: &AsyncSchedule,
        hook: &mut UpdateHook<'_>,
        mut recluster: Option<&mut Recluster<'_>>,
    ) -> Result<()> {
        let index: BTreeMap<PnoId, usize> = self.cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        let mut capped = false;
        'stream: for tick in 1..=self.stream_end - self.train_end {
            let now = self.train_end + tick;
            for client in schedule.due(tick) {
                if self.max_events.is_some_and(|m| self.events >= m) {
                    capped = true;
                    break 'stream;
                }
                self.stopped_at = now;
                let &ci = index
                    .get(&client)
                    .ok_or_else(|| Error::State(format!("schedule names unknown client {client}")))?;
                self.arrive(ci, now, hook)?;
                if self.recluster_due {
                    self.recluster_due = false;
                    if let Some(f) = recluster.as_deref_mut() {
                        if let Some(map) = f(now)? {
                            self.reassign(&map)?;
                        }
                    }
                }
            }
        }
        if !capped {
            self.stopped_at = self.stream_end;
        }
        // A partial batch at the end is dropped whatever the rule, so rules
        // differ only in how they combine the same batches.
        for pending in &mut self.pending {
            pending.clear();
        }
        Ok(())
    }

    fn arrive(&mut self, ci: usize, now: usize, hook: &mut UpdateHook<'_>) -> Result<()> {
        let cell = &self.cells[ci];
        let state = &self.clients[ci];
        if now <= state.last_sync {
            return Ok(());
        }
        let window = self.training.window;
        let base = LinearForecaster::unpack(&state.base_params)?;
        let (model, n) = train_local(
            &base,
            &cell.series[state.last_sync - window..now],
            &cell.scaler,
            &self.training,
        )?;
        let t = state.twin;
        let update = ClientUpdate::new(cell.id, model.pack(), n as u64, state.base_version);
        let n_params = self.twins[t].params.len() as u64;
        let events = [
            CostEvent::ModelTransfer { params: n_params },
            CostEvent::ModelTransfer { params: n_params },
            CostEvent::Compute {
                epochs: self.training.epochs as u64,
                samples: n as u64,
            },
        ];
        for e in events {
            self.twins[t].cost.record(e);
            self.cost.record(e);
        }
        self.events += 1;
        self.pending[t].push(update);
        if self.pending[t].len() >= self.cfg.batch {
            self.apply(t, now, hook)?;
        }
        let state = &mut self.clients[ci];
        state.last_sync = now;
        state.base_version = self.twins[t].version;
        state.base_params = self.twins[t].params.clone();
        Ok(())
    }

    fn apply(&mut self, t: usize, now: usize, hook: &mut UpdateHook<'_>) -> Result<()> {
        let mut updates = std::mem::take(&mut self.pending[t]);
        hook(&self.twins[t], &mut updates)?;
        let twin = &mut self.twins[t];
        let aggregated = self.rule.aggregate(&updates, &twin.params, &self.training)?;
        let weights = updates
            .iter()
            .map(|u| staleness_weight(twin.version.saturating_sub(u.base_version) as i64, self.cfg.beta))
            .collect::<Result<Vec<_>>>()?;
        let weight = weights.iter().sum::<f64>() / weights.len() as f64;
        let next = twin.params.add_scaled(&aggregated.sub(&twin.params)?, weight)?;
        if !next.is_finite() {
            return Err(Error::State(format!(
                "twin {} diverged at version {}",
                twin.cluster_id,
                twin.version + 1
            )));
        }
        twin.params = next;
        twin.version += 1;
        self.applied += 1;
        if self.recluster_period > 0 && self.applied.is_multiple_of(self.recluster_period) {
            self.recluster_due = true;
        }
        self.record(t, now)
    }

    fn record(&mut self, t: usize, now: usize) -> Result<()> {
        let start = now.saturating_sub(self.cfg.eval_window).max(self.training.window);
        let members: Vec<&TwinCell> = self
            .cells
            .iter()
            .zip(&self.clients)
            .filter(|(_, s)| s.twin == t)
            .map(|(c, _)| c)
            .collect();
        let quality = if members.is_empty() || start >= now {
            None
        } else {
            Some(evaluate_span(&self.twins[t].model()?, members, start, now)?)
        };
        self.timelines[t].push(&self.twins[t], quality);
        Ok(())
    }

    /// Moves cells between twins. A moved cell resynchronizes with its new
    /// twin's current model on its next arrival.
    pub fn reassign(&mut self, assignment: &BTreeMap<PnoId, usize>) -> Result<()> {
        for (cell, state) in self.cells.iter().zip(self.clients.iter_mut()) {
            let Some(&twin) = assignment.get(&cell.id) else {
                continue;
            };
            if twin >= self.twins.len() {
                return Err(Error::State(format!(
                    "cell {} assigned to missing twin {twin}",
                    cell.id
                )));
            }
            if twin != state.twin {
                state.twin = twin;
                state.base_version = self.twins[twin].version;
                state.base_params = self.twins[twin].params.clone();
            }
        }
        Ok(())
    }
}

/// Maintains a single initialized twin over the stream `train_end..stream_end`
/// of `cells`. The first timeline entry is the starting state.
#[allow(clippy::too_many_arguments)]
pub fn run_htwin(
    twin: GlobalTwin,
    cells: &[TwinCell],
    train_end: usize,
    stream_end: usize,
    schedule: &AsyncSchedule,
    rule: &AggregationRule<f64>,
    training: &TrainingConfig,
    cfg: &HTwinConfig,
) -> Result<TwinTimeline> {
    let assignment = cells.iter().map(|c| (c.id, 0)).collect();
    let mut engine = HTwinEngine::new(
        cells,
        vec![twin],
        &assignment,
        train_end,
        stream_end,
        rule.clone(),
        *training,
        *cfg,
    )?;
    engine.run(schedule, &mut |_, _| Ok(()), None)?;
    Ok(engine.timelines.remove(0))
}
