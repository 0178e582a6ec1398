//! Demand twin: an autoregressive model of per-content request counts per
//! window. It forecasts next-window demand and generates synthetic episodes
//! with injected flash crowds.

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::forecast::{sliding_samples, LinearForecaster, TrainingConfig};

use super::{CacheTopology, CachingConfig, RequestEvent, Spike};

/// Sampling weight given to contents the twin forecasts no demand for.
const DEMAND_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct DemandTwin {
    model: Option<LinearForecaster<f64>>,
    /// Divisor that maps per-BS window counts to the model's range.
    scale: f64,
    window: usize,
    topology: CacheTopology,
    catalog: usize,
    forecast_window: usize,
    spike_len: usize,
    spike_width: usize,
    spike_intensity: f64,
    spike_extra: usize,
}

/// Output of [`twin_generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwinEpisode {
    pub events: Vec<RequestEvent>,
    /// Most demanded content forecast for each generated window.
    pub forecasts: Vec<usize>,
    pub spikes: Vec<Spike>,
}

/// BS a recorded request is counted against: the one that served it, or
/// the client's first serving BS.
pub(crate) fn home_bs(topology: &CacheTopology, event: &RequestEvent) -> usize {
    event.serving_bs.unwrap_or(topology.services[event.client][0])
}

/// Request counts per complete window, indexed `[bs * catalog + content][window]`.
pub(crate) fn window_counts(
    topology: &CacheTopology,
    events: &[RequestEvent],
    catalog: usize,
    forecast_window: usize,
) -> Vec<Vec<f64>> {
    let steps = events.last().map_or(0, |e| e.time as usize + 1);
    let n_windows = steps / forecast_window;
    let mut counts = vec![vec![0.0; n_windows]; topology.n_bs * catalog];
    for e in events {
        let w = e.time as usize / forecast_window;
        if w < n_windows {
            counts[home_bs(topology, e) * catalog + e.content][w] += 1.0;
        }
    }
    counts
}

impl DemandTwin {
    pub fn untrained(cfg: &CachingConfig, topology: &CacheTopology) -> Self {
        DemandTwin {
            model: None,
            scale: 1.0,
            window: cfg.twin_window,
            topology: topology.clone(),
            catalog: cfg.catalog,
            forecast_window: cfg.forecast_window,
            spike_len: cfg.spike_len,
            spike_width: cfg.spike_width,
            spike_intensity: cfg.spike_intensity,
            spike_extra: cfg.spike_extra,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    pub fn model(&self) -> Option<&LinearForecaster<f64>> {
        self.model.as_ref()
    }

    /// Lags the model reads.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Steps per counted window.
    pub fn forecast_window(&self) -> usize {
        self.forecast_window
    }

    /// Next-window count of one content at one BS from its last counts,
    /// most recent first. Never negative.
    pub fn predict(&self, recent: &[f64]) -> Result<f64> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::State("demand twin is not trained".into()))?;
        let x: Vec<f64> = recent.iter().map(|v| v / self.scale).collect();
        Ok((model.predict(&x)? * self.scale).max(0.0))
    }
}

/// Fits the twin on recorded requests. The model is shared by all contents
/// and BSs; it starts from persistence and is refined by gradient descent
/// on per-content totals.
pub fn train_demand_twin(
    cfg: &CachingConfig,
    topology: &CacheTopology,
    history: &[RequestEvent],
) -> Result<DemandTwin> {
    let mut twin = DemandTwin::untrained(cfg, topology);
    let per_bs = window_counts(topology, history, cfg.catalog, cfg.forecast_window);
    let n_windows = per_bs.first().map_or(0, Vec::len);
    if n_windows <= cfg.twin_window {
        return Err(Error::domain(format!(
            "{n_windows} demand windows cannot train a twin with {} lags",
            cfg.twin_window
        )));
    }
    let totals: Vec<Vec<f64>> = (0..cfg.catalog)
        .map(|c| {
            (0..n_windows)
                .map(|w| (0..topology.n_bs).map(|b| per_bs[b * cfg.catalog + c][w]).sum())
                .collect()
        })
        .collect();
    let n = (cfg.catalog * n_windows) as f64;
    let rms = (totals.iter().flatten().map(|v| v * v).sum::<f64>() / n)
        .sqrt()
        .max(1.0);
    let samples: Vec<_> = totals
        .iter()
        .flat_map(|s| {
            let norm: Vec<f64> = s.iter().map(|v| v / rms).collect();
            sliding_samples(&norm, cfg.twin_window)
        })
        .collect();
    let mut init = LinearForecaster::zeros(cfg.twin_window);
    init.weights[0] = 1.0;
    let training = TrainingConfig {
        window: cfg.twin_window,
        learning_rate: cfg.twin_learning_rate,
        epochs: cfg.twin_epochs,
    };
    let model = init.train_on_samples(&samples, &training)?;
    if !model.is_finite() {
        return Err(Error::State(
            "demand twin diverged; lower caching.twin_learning_rate".into(),
        ));
    }
    twin.model = Some(model);
    twin.scale = rms / topology.n_bs as f64;
    Ok(twin)
}

/// Synthetic episode of `n_steps` steps continuing `history`.
///
/// Each window, every client samples from its BS's forecast demand and the
/// sampled counts feed the next forecast. With probability `rare_rate` per
/// window a flash crowd starts at a random BS on contents the twin
/// forecasts as cold there.
pub fn twin_generate(
    twin: &DemandTwin,
    history: &[RequestEvent],
    n_steps: usize,
    rare_rate: f64,
    seed: u64,
) -> Result<TwinEpisode> {
    if !twin.is_trained() {
        return Err(Error::State("demand twin is not trained".into()));
    }
    if !(0.0..=1.0).contains(&rare_rate) {
        return Err(Error::config("caching.rare_rate", "must lie in [0, 1]"));
    }
    let topo = &twin.topology;
    let (catalog, lags, fw) = (twin.catalog, twin.window, twin.forecast_window);
    let n_series = topo.n_bs * catalog;
    // Last `lags` windows of each series, most recent first.
    let past = window_counts(topo, history, catalog, fw);
    let mut recent: Vec<Vec<f64>> = past
        .iter()
        .map(|s| {
            (0..lags)
                .map(|l| if l < s.len() { s[s.len() - 1 - l] } else { 0.0 })
                .collect()
        })
        .collect();
    recent.resize(n_series, vec![0.0; lags]);

    let mut rng = crate::rng::stream(seed, "twin-generate");
    let home: Vec<usize> = (0..topo.n_clients()).map(|c| topo.services[c][0]).collect();
    let mut events = Vec::new();
    let mut forecasts = Vec::new();
    let mut spikes: Vec<Spike> = Vec::new();
    let mut pred = vec![0.0; n_series];
    for start in (0..n_steps).step_by(fw) {
        for (p, r) in pred.iter_mut().zip(&recent) {
            *p = twin.predict(r)?;
        }
        let total = |c: usize| (0..topo.n_bs).map(|b| pred[b * catalog + c]).sum::<f64>();
        let top =
            (0..catalog).map(|c| (c, total(c))).fold(
                (0, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        forecasts.push(top.0);

        let end = (start + fw).min(n_steps) as u64;
        if rare_rate > 0.0 && rng.random_bool(rare_rate) {
            let bs = rng.random_range(0..topo.n_bs);
            let mut order: Vec<usize> = (0..catalog).collect();
            order.sort_by(|&a, &b| pred[bs * catalog + a].total_cmp(&pred[bs * catalog + b]));
            order.truncate(catalog.div_ceil(2));
            order.shuffle(&mut rng);
            order.truncate(twin.spike_width);
            spikes.push(Spike {
                bs,
                start: start as u64,
                end: (start + twin.spike_len).min(n_steps) as u64,
                contents: order,
            });
        }
        let samplers = (0..topo.n_bs)
            .map(|b| WeightedIndex::new(pred[b * catalog..(b + 1) * catalog].iter().map(|p| p + DEMAND_FLOOR)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::State(format!("twin demand weights: {e}")))?;

        let mut counts = vec![0.0; n_series];
        for t in start as u64..end {
            let active: Vec<Option<&Spike>> = (0..topo.n_bs)
                .map(|b| spikes.iter().rev().find(|s| s.bs == b && s.start <= t && t < s.end))
                .collect();
            for (client, &b) in home.iter().enumerate() {
                let crowd = topo.services[client].iter().find_map(|&s| active[s]);
                let mut push = |content: usize, counts: &mut Vec<f64>| {
                    counts[b * catalog + content] += 1.0;
                    events.push(RequestEvent {
                        time: t,
                        client,
                        content,
                        serving_bs: None,
                    });
                };
                let content = match crowd {
                    Some(s) if rng.random_bool(twin.spike_intensity) => {
                        *s.contents.choose(&mut rng).expect("crowd group is non-empty")
                    }
                    _ => samplers[b].sample(&mut rng),
                };
                push(content, &mut counts);
                if let Some(s) = crowd {
                    for _ in 0..twin.spike_extra {
                        let c = *s.contents.choose(&mut rng).expect("crowd group is non-empty");
                        push(c, &mut counts);
                    }
                }
            }
        }
        for (r, c) in recent.iter_mut().zip(&counts) {
            r.rotate_right(1);
            r[0] = *c;
        }
    }
    Ok(TwinEpisode {
        events,
        forecasts,
        spikes,
    })
}
