//! The traffic-forecasting experiment: data, splits, clustering, the
//! synchronous and asynchronous phases, and held-out evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cluster::{align_labels, cluster_cells, ClusterAssignment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fedsync::{
    evaluate_span, forecast_span, run_vtwin_with, AggregationRule, AsyncSchedule, GlobalTwin, HTwinEngine, RootDataset,
    RuleKind, TwinCell, TwinTimeline, UpdateHook, VTwinRun,
};
use crate::metrics::{centralized_events, cost_accounting, quality_report, CostReport, QualityReport};
use crate::network::{build_physical_network, PhysicalNetwork, PnoId};
use crate::rng::derive_seed;
use crate::traffic::{generate_synthetic_traffic, load_traffic_csv, LoadReport, TrafficCsvSchema, TrafficDataset};

/// Series index boundaries: `[0, train_end)` trains the synchronous phase,
/// `[train_end, stream_end)` streams during maintenance, the rest is test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Splits {
    pub train_end: usize,
    pub stream_end: usize,
    pub horizon: usize,
}

impl Splits {
    pub fn from_fractions(horizon: usize, train: f64, stream: f64, window: usize) -> Result<Self> {
        let train_end = (horizon as f64 * train).round() as usize;
        let stream_end = (horizon as f64 * (train + stream)).round() as usize;
        if train_end <= window + 1 || stream_end <= train_end || horizon <= stream_end {
            return Err(Error::config(
                "network.horizon",
                format!("horizon {horizon} too short for window {window} and the configured splits"),
            ));
        }
        Ok(Splits {
            train_end,
            stream_end,
            horizon,
        })
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.stream_end..self.horizon
    }
}

pub struct Scenario {
    pub config: ExperimentConfig,
    pub network: PhysicalNetwork,
    pub dataset: TrafficDataset,
    pub load_report: Option<LoadReport>,
    pub cells: Vec<TwinCell>,
    pub splits: Splits,
    pub root: Arc<RootDataset<f64>>,
}

impl Scenario {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let network = build_physical_network(&config.network.grid())?;
        let (dataset, load_report) = match &config.network.csv {
            Some(path) => {
                let (d, r) = load_traffic_csv(
                    path,
                    TrafficCsvSchema {
                        channel: config.network.channel,
                    },
                )?;
                (d, Some(r))
            }
            None => (
                generate_synthetic_traffic(&network, config.seed, config.network.horizon, &config.network.traffic)?,
                None,
            ),
        };
        if dataset.cell_ids != network.cell_ids() {
            return Err(Error::Schema(format!(
                "traffic covers {} cells but the {}x{} grid has {}",
                dataset.n_cells(),
                config.network.rows,
                config.network.cols,
                network.len()
            )));
        }
        let f = &config.fedsync;
        let window = config.forecaster.window;
        let splits = Splits::from_fractions(dataset.horizon(), f.train_fraction, f.stream_fraction, window)?;
        let cells = dataset
            .cell_ids
            .iter()
            .zip(&dataset.values)
            .map(|(&id, v)| TwinCell::new(id, v.clone(), splits.train_end))
            .collect::<Result<Vec<_>>>()?;

        // The server's root data is its own synthetic slice, independent of
        // what the clients hold.
        let root_len = ((dataset.horizon() as f64 * f.root_fraction).ceil() as usize).max(2 * window + 2);
        let root_traffic = generate_synthetic_traffic(
            &network,
            derive_seed(config.seed, "fltrust-root"),
            root_len,
            &config.network.traffic,
        )?;
        let root = Arc::new(RootDataset::from_series(
            root_traffic.values.iter().map(|v| v.as_slice()),
            window,
        )?);
        Ok(Scenario {
            config: config.clone(),
            network,
            dataset,
            load_report,
            cells,
            splits,
            root,
        })
    }

    pub fn rule(&self, kind: RuleKind) -> AggregationRule<f64> {
        match kind {
            RuleKind::Mean => AggregationRule::Mean,
            RuleKind::Median => AggregationRule::Median,
            RuleKind::FlTrust => AggregationRule::FlTrust {
                root: Arc::clone(&self.root),
            },
            RuleKind::Tid => AggregationRule::Tid {
                tau: self.config.fedsync.tau,
            },
        }
    }

    /// Clusters cells on their synchronous-training data.
    pub fn cluster(&self, k: usize) -> Result<ClusterAssignment> {
        let period = self.config.clustering.period;
        if k == 1 {
            return Ok(ClusterAssignment::single(&self.network.cell_ids(), period));
        }
        cluster_cells(
            &self.network,
            &self.dataset.slice(0, self.splits.train_end),
            k,
            derive_seed(self.config.seed, "clustering"),
            period,
        )
    }

    pub fn members(&self, assignment: &ClusterAssignment, cluster: usize) -> Vec<TwinCell> {
        self.cells
            .iter()
            .filter(|c| assignment.assignment.get(&c.id) == Some(&cluster))
            .cloned()
            .collect()
    }

    pub fn schedule(&self) -> Result<AsyncSchedule> {
        let f = &self.config.fedsync;
        AsyncSchedule::from_seed(&self.network.cell_ids(), f.min_period, f.max_period, self.config.seed)
    }

    /// Raw records of all cells over `start..end`.
    pub fn records(&self, start: usize, end: usize) -> u64 {
        (self.cells.len() * end.saturating_sub(start)) as u64
    }
}

/// One synchronous twin per cluster, trained for the configured rounds.
/// Each round is evaluated on the stream split.
pub fn vtwin_phase(
    scn: &Scenario,
    assignment: &ClusterAssignment,
    rule: &AggregationRule<f64>,
    hook: &mut UpdateHook<'_>,
) -> Result<Vec<VTwinRun>> {
    let cfg = &scn.config;
    (0..assignment.k)
        .map(|c| {
            let cells = scn.members(assignment, c);
            run_vtwin_with(
                GlobalTwin::new(c, cfg.forecaster.window),
                &cells,
                scn.splits.train_end,
                cfg.fedsync.rounds,
                rule,
                &cfg.forecaster,
                Some(scn.splits.train_end..scn.splits.stream_end),
                hook,
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HTwinOutcome {
    pub twins: Vec<GlobalTwin>,
    pub timelines: Vec<TwinTimeline>,
    pub assignment: BTreeMap<PnoId, usize>,
    /// Costs of the asynchronous phase alone.
    pub cost: CostReport,
    pub events: u64,
    pub applied: u64,
    pub stopped_at: usize,
}

/// Options of one asynchronous run.
#[derive(Debug, Clone, Copy, Default)]
pub struct HTwinRunOptions {
    /// Overrides the configured batch size.
    pub batch: Option<usize>,
    pub max_events: Option<u64>,
    /// Periodically re-cluster cells on the data observed so far.
    pub recluster: bool,
}

pub fn htwin_phase(
    scn: &Scenario,
    assignment: &ClusterAssignment,
    twins: Vec<GlobalTwin>,
    rule: &AggregationRule<f64>,
    opts: HTwinRunOptions,
    hook: &mut UpdateHook<'_>,
) -> Result<HTwinOutcome> {
    let cfg = &scn.config;
    let mut hcfg = cfg.fedsync.htwin();
    if let Some(b) = opts.batch {
        hcfg.batch = b;
    }
    let mut engine = HTwinEngine::new(
        &scn.cells,
        twins,
        &assignment.assignment,
        scn.splits.train_end,
        scn.splits.stream_end,
        rule.clone(),
        cfg.forecaster,
        hcfg,
    )?;
    engine.max_events = opts.max_events;
    let schedule = scn.schedule()?;
    if opts.recluster && assignment.k > 1 && cfg.clustering.period > 0 {
        engine.recluster_period = cfg.clustering.period as u64;
        let mut current = assignment.clone();
        let mut count = 0u64;
        let mut recluster = |now: usize| -> Result<Option<BTreeMap<PnoId, usize>>> {
            count += 1;
            let next = cluster_cells(
                &scn.network,
                &scn.dataset.slice(0, now),
                current.k,
                derive_seed(derive_seed(cfg.seed, "reclustering"), &count.to_string()),
                current.recluster_period,
            )?;
            current = align_labels(&current, &next);
            Ok(Some(current.assignment.clone()))
        };
        engine.run(&schedule, hook, Some(&mut recluster))?;
    } else {
        engine.run(&schedule, hook, None)?;
    }
    Ok(HTwinOutcome {
        assignment: engine.assignment(),
        cost: engine.cost,
        events: engine.events(),
        applied: engine.applied(),
        stopped_at: engine.stopped_at,
        twins: engine.twins,
        timelines: engine.timelines,
    })
}

/// Test-split quality of the twins, each cell forecast by its own twin and
/// all forecasts pooled.
pub fn evaluate_twins(
    scn: &Scenario,
    twins: &[GlobalTwin],
    assignment: &BTreeMap<PnoId, usize>,
) -> Result<QualityReport<f64>> {
    let test = scn.splits.test();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for cell in &scn.cells {
        let t = *assignment
            .get(&cell.id)
            .ok_or_else(|| Error::State(format!("cell {} has no twin", cell.id)))?;
        let model = twins
            .get(t)
            .ok_or_else(|| Error::State(format!("missing twin {t}")))?
            .model()?;
        let (p, y) = forecast_span(&model, [cell], test.start, test.end)?;
        pred.extend(p);
        truth.extend(y);
    }
    quality_report(&pred, &truth)
}

/// Quality of one twin on some cells over `start..end`.
pub fn evaluate_twin(twin: &GlobalTwin, cells: &[TwinCell], start: usize, end: usize) -> Result<QualityReport<f64>> {
    evaluate_span(&twin.model()?, cells, start, end)
}

/// Ledger of a centralized twin keeping up with `start..end`: every new
/// raw record is uploaded and the server trains over them.
pub fn centralized_cost(scn: &Scenario, start: usize, end: usize) -> CostReport {
    cost_accounting(&centralized_events(
        scn.records(start, end),
        scn.config.forecaster.epochs as u64,
    ))
}

/// Everything the clean forecasting experiment produces for one clustering.
#[derive(Debug, Clone)]
pub struct VhRun {
    pub k: usize,
    pub assignment: ClusterAssignment,
    pub vtwin: Vec<VTwinRun>,
    pub vtwin_quality: QualityReport<f64>,
    pub vtwin_cost: CostReport,
    pub htwin: HTwinOutcome,
    pub htwin_quality: QualityReport<f64>,
}

/// Synchronous creation then asynchronous maintenance with `k` clusters and
/// the configured rule.
pub fn run_vh(scn: &Scenario, k: usize) -> Result<VhRun> {
    let rule = scn.rule(scn.config.fedsync.rule);
    let assignment = scn.cluster(k)?;
    let mut no_hook = |_: &GlobalTwin, _: &mut Vec<_>| Ok(());
    let vtwin = vtwin_phase(scn, &assignment, &rule, &mut no_hook)?;
    let twins: Vec<GlobalTwin> = vtwin.iter().map(|r| r.twin.clone()).collect();
    let vtwin_quality = evaluate_twins(scn, &twins, &assignment.assignment)?;
    let vtwin_cost = twins.iter().fold(CostReport::default(), |acc, t| acc + t.cost);
    let htwin = htwin_phase(
        scn,
        &assignment,
        twins,
        &rule,
        HTwinRunOptions {
            recluster: true,
            ..Default::default()
        },
        &mut no_hook,
    )?;
    let htwin_quality = evaluate_twins(scn, &htwin.twins, &htwin.assignment)?;
    Ok(VhRun {
        k,
        assignment,
        vtwin,
        vtwin_quality,
        vtwin_cost,
        htwin,
        htwin_quality,
    })
}

/// Asynchronous maintenance cost over the first `events` arrivals against
/// a centralized twin ingesting the same period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostComparison {
    pub events: u64,
    pub period: (usize, usize),
    pub htwin: CostReport,
    pub centralized: CostReport,
    pub reduction: f64,
}

pub fn compare_maintenance_cost(
    scn: &Scenario,
    twins: Vec<GlobalTwin>,
    assignment: &ClusterAssignment,
) -> Result<CostComparison> {
    let rule = scn.rule(scn.config.fedsync.rule);
    let out = htwin_phase(
        scn,
        assignment,
        twins,
        &rule,
        HTwinRunOptions {
            max_events: Some(scn.config.fedsync.cost_events),
            ..Default::default()
        },
        &mut |_, _| Ok(()),
    )?;
    let period = (scn.splits.train_end, out.stopped_at);
    let centralized = centralized_cost(scn, period.0, period.1);
    let reduction = crate::metrics::cost_reduction(&out.cost, &centralized, &scn.config.cost)?;
    Ok(CostComparison {
        events: out.events,
        period,
        htwin: out.cost,
        centralized,
        reduction,
    })
}
