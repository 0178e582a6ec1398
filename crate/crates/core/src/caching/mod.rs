//! Edge-caching sandbox: base stations with local caches, a drifting Zipf
//! request process with flash crowds, a demand twin, tabular Q-learning
//! eviction policies and a load-balancing safety shield.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

mod env;
mod policy;
mod twin;

pub use env::{safety_shield, step_env, CacheAction, CacheEntry, CacheState, SafetyShield, StepOutcome};
pub use policy::{
    evaluate_caching, observe, run_cache_sim, train_policy, write_report_csv, write_trace_csv, CacheSimOutput,
    CachingReport, EvictRule, Policy, QTable, TraceRow, Variant, N_STATES,
};
pub use twin::{train_demand_twin, twin_generate, DemandTwin, TwinEpisode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CachingConfig {
    pub n_bs: usize,
    pub slots: usize,
    pub clients_per_bs: usize,
    pub catalog: usize,
    pub alpha: f64,
    /// Steps between popularity drifts.
    pub drift: usize,
    /// Furthest rank distance a drift swap moves a content.
    pub drift_span: usize,
    pub theta: f64,
    pub rho: f64,
    /// Sliding window of the load counters, in steps.
    pub load_window: usize,
    pub episodes: usize,
    pub episode_len: usize,
    /// Steps of recorded history used for training and the twin.
    pub history_len: usize,
    pub eval_horizon: usize,
    /// Flash-crowd probability per block in the recorded history.
    pub history_spike_rate: f64,
    /// Flash-crowd probability per block in the evaluation stream.
    pub spike_rate: f64,
    /// Spike probability per block in twin-generated episodes.
    pub rare_rate: f64,
    pub spike_len: usize,
    pub spike_width: usize,
    /// Probability that a client under a flash crowd requests from it.
    pub spike_intensity: f64,
    /// Extra requests per step each crowded client sends for the crowd.
    pub spike_extra: usize,
    /// Steps per demand-count window of the twin.
    pub forecast_window: usize,
    pub twin_window: usize,
    pub twin_epochs: usize,
    pub twin_learning_rate: f64,
    /// Share of twin-generated episodes for +DNT variants.
    pub dnt_mix: f64,
    pub epsilon: f64,
    /// Window request count from which a content is hot at a BS.
    pub hot_count: usize,
}

impl Default for CachingConfig {
    fn default() -> Self {
        CachingConfig {
            n_bs: 5,
            slots: 150,
            clients_per_bs: 8,
            catalog: 1000,
            alpha: 0.8,
            drift: 500,
            drift_span: 10,
            theta: 1.5,
            rho: 0.5,
            load_window: 200,
            episodes: 20,
            episode_len: 2000,
            history_len: 10_000,
            eval_horizon: 5000,
            history_spike_rate: 0.0,
            spike_rate: 0.3,
            rare_rate: 0.5,
            spike_len: 300,
            spike_width: 20,
            spike_intensity: 0.7,
            spike_extra: 2,
            forecast_window: 50,
            twin_window: 12,
            twin_epochs: 100,
            twin_learning_rate: 0.03,
            dnt_mix: 0.5,
            epsilon: 0.1,
            hot_count: 5,
        }
    }
}

impl CachingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("caching.n_bs", self.n_bs),
            ("caching.slots", self.slots),
            ("caching.catalog", self.catalog),
            ("caching.drift", self.drift),
            ("caching.drift_span", self.drift_span),
            ("caching.load_window", self.load_window),
            ("caching.episode_len", self.episode_len),
            ("caching.history_len", self.history_len),
            ("caching.eval_horizon", self.eval_horizon),
            ("caching.spike_len", self.spike_len),
            ("caching.spike_width", self.spike_width),
            ("caching.forecast_window", self.forecast_window),
            ("caching.twin_window", self.twin_window),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.clients_per_bs < 3 && self.n_bs > 1 {
            return Err(Error::config(
                "caching.clients_per_bs",
                "ring topology needs at least 3 clients per BS",
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("caching.alpha", "must be finite and non-negative"));
        }
        if !(self.theta > 1.0) {
            return Err(Error::config("caching.theta", "must exceed 1"));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::config("caching.rho", "must be non-negative"));
        }
        for (key, p) in [
            ("caching.history_spike_rate", self.history_spike_rate),
            ("caching.spike_rate", self.spike_rate),
            ("caching.rare_rate", self.rare_rate),
            ("caching.spike_intensity", self.spike_intensity),
            ("caching.dnt_mix", self.dnt_mix),
            ("caching.epsilon", self.epsilon),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        if !(self.twin_learning_rate > 0.0) {
            return Err(Error::config("caching.twin_learning_rate", "must be positive"));
        }
        if self.episode_len > self.history_len {
            return Err(Error::config("caching.episode_len", "must not exceed history_len"));
        }
        if self.history_len < (self.twin_window + 2) * self.forecast_window {
            return Err(Error::config(
                "caching.history_len",
                "too short to train the demand twin on its window",
            ));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<CacheTopology> {
        CacheTopology::ring(self.n_bs, self.slots, self.clients_per_bs)
    }

    /// One world: `history_len` recorded steps at the history spike rate,
    /// followed by the evaluation steps at `spike_rate`.
    pub fn stream_spec(&self) -> StreamSpec {
        StreamSpec {
            catalog: self.catalog,
            alpha: self.alpha,
            drift: self.drift,
            drift_span: self.drift_span,
            spike_rate: self.spike_rate,
            calm_rate: self.history_spike_rate,
            calm_until: self.history_len as u64,
            spike_len: self.spike_len,
            spike_width: self.spike_width,
            spike_intensity: self.spike_intensity,
            spike_extra: self.spike_extra,
        }
    }
}

/// Base stations and which of them serve each client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheTopology {
    pub n_bs: usize,
    pub slots_per_bs: usize,
    pub clients_per_bs: usize,
    pub max_bs_per_client: usize,
    /// Sorted serving BSs of each client.
    pub services: Vec<Vec<usize>>,
}

impl Default for CacheTopology {
    fn default() -> Self {
        CacheTopology::ring(5, 150, 8).expect("default ring is valid")
    }
}

impl CacheTopology {
    /// BSs on a ring; each shares one client with each neighbour and serves
    /// the rest exclusively.
    pub fn ring(n_bs: usize, slots: usize, clients_per_bs: usize) -> Result<Self> {
        if n_bs == 0 {
            return Err(Error::config("caching.n_bs", "must be at least 1"));
        }
        let shared = if n_bs > 1 { 2 } else { 0 };
        if clients_per_bs <= shared {
            return Err(Error::config(
                "caching.clients_per_bs",
                format!("must exceed the {shared} clients shared with neighbours"),
            ));
        }
        let exclusive = clients_per_bs - shared;
        let mut services: Vec<Vec<usize>> = (0..n_bs * exclusive).map(|c| vec![c / exclusive]).collect();
        if n_bs > 1 {
            for b in 0..n_bs {
                let mut pair = vec![b, (b + 1) % n_bs];
                pair.sort_unstable();
                services.push(pair);
            }
        }
        let t = CacheTopology {
            n_bs,
            slots_per_bs: slots,
            clients_per_bs,
            max_bs_per_client: 2,
            services,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n_clients(&self) -> usize {
        self.services.len()
    }

    pub fn clients_of(&self, bs: usize) -> Vec<usize> {
        (0..self.n_clients())
            .filter(|&c| self.services[c].contains(&bs))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (c, s) in self.services.iter().enumerate() {
            if s.is_empty() || s.len() > self.max_bs_per_client || s.iter().any(|&b| b >= self.n_bs) {
                return Err(Error::State(format!("client {c} has an invalid service set {s:?}")));
            }
        }
        for b in 0..self.n_bs {
            let n = self.clients_of(b).len();
            if n != self.clients_per_bs {
                return Err(Error::State(format!(
                    "BS {b} lists {n} clients, expected {}",
                    self.clients_per_bs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestEvent {
    pub time: u64,
    pub client: usize,
    pub content: usize,
    /// Filled in by the environment when the request is served.
    pub serving_bs: Option<usize>,
}

/// Request-process parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSpec {
    pub catalog: usize,
    pub alpha: f64,
    pub drift: usize,
    pub drift_span: usize,
    pub spike_rate: f64,
    /// Spike probability for blocks starting before `calm_until`.
    pub calm_rate: f64,
    pub calm_until: u64,
    pub spike_len: usize,
    pub spike_width: usize,
    pub spike_intensity: f64,
    pub spike_extra: usize,
}

/// A flash crowd: clients of `bs` favour `contents` during `start..end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spike {
    pub bs: usize,
    pub start: u64,
    pub end: u64,
    pub contents: Vec<usize>,
}

/// Popularity ranking sampler with drift.
pub(crate) struct Popularity {
    /// `ranking[r]` is the content at rank `r`.
    pub ranking: Vec<usize>,
    zipf: Option<Zipf<f64>>,
}

impl Popularity {
    pub fn new(catalog: usize, alpha: f64, rng: &mut SimRng) -> Result<Self> {
        if catalog == 0 {
            return Err(Error::config("caching.catalog", "must be at least 1"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::config("caching.alpha", "must be finite and non-negative"));
        }
        let mut ranking: Vec<usize> = (0..catalog).collect();
        ranking.shuffle(rng);
        let zipf = if alpha > 0.0 {
            Some(Zipf::new(catalog as f64, alpha).map_err(|e| Error::config("caching.alpha", e.to_string()))?)
        } else {
            None
        };
        Ok(Popularity { ranking, zipf })
    }

    pub fn sample(&self, rng: &mut SimRng) -> usize {
        let rank = match &self.zipf {
            Some(z) => (z.sample(rng) as usize).clamp(1, self.ranking.len()) - 1,
            None => rng.random_range(0..self.ranking.len()),
        };
        self.ranking[rank]
    }

    /// Swaps a tenth of the ranks with a nearby rank.
    pub fn drift(&mut self, span: usize, rng: &mut SimRng) {
        let n = self.ranking.len();
        if n < 2 {
            return;
        }
        for _ in 0..(n / 10).max(1) {
            let r = rng.random_range(0..n);
            let other = (r + rng.random_range(1..=span)).min(n - 1);
            self.ranking.swap(r, other);
        }
    }

    /// `width` distinct contents from the colder half of the ranking.
    pub fn cold_group(&self, width: usize, rng: &mut SimRng) -> Vec<usize> {
        let n = self.ranking.len();
        let tail = &self.ranking[n / 2..];
        tail.choose_multiple(rng, width.min(tail.len())).copied().collect()
    }
}

/// Request stream with drifting Zipf popularity and no flash crowds.
pub fn simulate_request_stream(
    topology: &CacheTopology,
    catalog_size: usize,
    zipf_alpha: f64,
    drift: usize,
    seed: u64,
    horizon: usize,
) -> Result<Vec<RequestEvent>> {
    let spec = StreamSpec {
        catalog: catalog_size,
        alpha: zipf_alpha,
        drift,
        drift_span: 10,
        spike_rate: 0.0,
        calm_rate: 0.0,
        calm_until: 0,
        spike_len: 1,
        spike_width: 1,
        spike_intensity: 0.0,
        spike_extra: 0,
    };
    simulate_stream(topology, &spec, seed, horizon).map(|(events, _)| events)
}

/// Every step each client requests one content. At the start of each
/// `spike_len` block a flash crowd hits a random BS with probability
/// `spike_rate`: its clients draw from a cold group with probability
/// `spike_intensity` and send `spike_extra` more requests for the group.
pub fn simulate_stream(
    topology: &CacheTopology,
    spec: &StreamSpec,
    seed: u64,
    horizon: usize,
) -> Result<(Vec<RequestEvent>, Vec<Spike>)> {
    if horizon == 0 {
        return Err(Error::config("caching.eval_horizon", "must be at least 1"));
    }
    if spec.drift == 0 {
        return Err(Error::config("caching.drift", "must be at least 1"));
    }
    let mut rng = crate::rng::stream(seed, "cache-requests");
    let mut pop = Popularity::new(spec.catalog, spec.alpha, &mut rng)?;
    let mut events = Vec::with_capacity(horizon * topology.n_clients());
    let mut spikes: Vec<Spike> = Vec::new();
    let served: Vec<Vec<usize>> = (0..topology.n_bs).map(|b| topology.clients_of(b)).collect();
    let mut spiking = vec![None::<usize>; topology.n_clients()];
    for t in 0..horizon as u64 {
        if t > 0 && t % spec.drift as u64 == 0 {
            pop.drift(spec.drift_span.max(1), &mut rng);
        }
        if spec.spike_len > 0 && t % spec.spike_len as u64 == 0 {
            spiking.iter_mut().for_each(|s| *s = None);
            let rate = if t < spec.calm_until {
                spec.calm_rate
            } else {
                spec.spike_rate
            };
            if rate > 0.0 && rng.random_bool(rate) {
                let bs = rng.random_range(0..topology.n_bs);
                let contents = pop.cold_group(spec.spike_width, &mut rng);
                for &c in &served[bs] {
                    spiking[c] = Some(spikes.len());
                }
                spikes.push(Spike {
                    bs,
                    start: t,
                    end: (t + spec.spike_len as u64).min(horizon as u64),
                    contents,
                });
            }
        }
        for (client, spike) in spiking.iter().enumerate() {
            let group = spike.map(|s| &spikes[s].contents);
            let content = match group {
                Some(g) if rng.random_bool(spec.spike_intensity) => {
                    *g.choose(&mut rng).expect("spike group is non-empty")
                }
                _ => pop.sample(&mut rng),
            };
            events.push(RequestEvent {
                time: t,
                client,
                content,
                serving_bs: None,
            });
            if let Some(g) = group {
                for _ in 0..spec.spike_extra {
                    events.push(RequestEvent {
                        time: t,
                        client,
                        content: *g.choose(&mut rng).expect("spike group is non-empty"),
                        serving_bs: None,
                    });
                }
            }
        }
    }
    Ok((events, spikes))
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Lru => "LRU",
            Variant::Lfu => "LFU",
            Variant::Rl => "RL",
            Variant::RlDnt => "RL+DNT",
            Variant::ReliableRl => "ReliableRL",
            Variant::ReliableRlDnt => "ReliableRL+DNT",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "lru" => Ok(Variant::Lru),
            "lfu" => Ok(Variant::Lfu),
            "rl" => Ok(Variant::Rl),
            "rl+dnt" => Ok(Variant::RlDnt),
            "reliablerl" => Ok(Variant::ReliableRl),
            "reliablerl+dnt" => Ok(Variant::ReliableRlDnt),
            other => Err(Error::config("caching.variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_topology_shape() {
        let t = CacheTopology::default();
        assert_eq!(t.n_clients(), 5 * 6 + 5);
        for b in 0..5 {
            assert_eq!(t.clients_of(b).len(), 8);
        }
        assert!(t.services.iter().all(|s| (1..=2).contains(&s.len())));
        assert!(CacheTopology::ring(5, 150, 2).is_err());
        assert_eq!(CacheTopology::ring(1, 10, 3).unwrap().n_clients(), 3);
    }

    #[test]
    fn zero_alpha_is_uniform() {
        let t = CacheTopology::default();
        let catalog = 1000;
        let events = simulate_request_stream(&t, catalog, 0.0, 500, 3, 50_000).unwrap();
        let mut counts = vec![0u64; catalog];
        events.iter().for_each(|e| counts[e.content] += 1);
        let expected = events.len() as f64 / catalog as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dof = (catalog - 1) as f64;
        assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn single_content_catalog() {
        let t = CacheTopology::default();
        let events = simulate_request_stream(&t, 1, 0.8, 10, 1, 100).unwrap();
        assert_eq!(events.len(), 100 * t.n_clients());
        assert!(events.iter().all(|e| e.content == 0));
    }

    #[test]
    fn streams_are_deterministic() {
        let cfg = CachingConfig {
            spike_rate: 1.0,
            ..CachingConfig::default()
        };
        let t = cfg.topology().unwrap();
        let a = simulate_stream(&t, &cfg.stream_spec(), 4, cfg.history_len + 600).unwrap();
        let b = simulate_stream(&t, &cfg.stream_spec(), 4, cfg.history_len + 600).unwrap();
        assert_eq!(a, b);
        let c = simulate_stream(&t, &cfg.stream_spec(), 5, cfg.history_len + 600).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn spikes_only_after_the_calm_period() {
        let cfg = CachingConfig {
            spike_rate: 1.0,
            history_spike_rate: 0.0,
            history_len: 900,
            ..CachingConfig::default()
        };
        let t = cfg.topology().unwrap();
        let (events, spikes) = simulate_stream(&t, &cfg.stream_spec(), 4, 1500).unwrap();
        assert_eq!(spikes.iter().map(|s| s.start).collect::<Vec<_>>(), vec![900, 1200]);
        let calm = events.iter().filter(|e| e.time < 900).count();
        assert_eq!(calm, 900 * t.n_clients());
        // Crowded clients send one regular and `spike_extra` crowd requests.
        let s = &spikes[0];
        let step: Vec<_> = events.iter().filter(|e| e.time == s.start).collect();
        let crowded = t.clients_of(s.bs).len();
        assert_eq!(step.len(), t.n_clients() + crowded * cfg.spike_extra);
        assert_eq!(s.contents.len(), cfg.spike_width);
    }

    #[test]
    fn invalid_alpha_is_a_config_error() {
        let t = CacheTopology::default();
        for a in [-0.5, f64::NAN] {
            assert!(matches!(
                simulate_request_stream(&t, 10, a, 10, 1, 10),
                Err(Error::Config { .. })
            ));
        }
        assert!(simulate_request_stream(&t, 0, 0.8, 10, 1, 10).is_err());
        assert!(simulate_request_stream(&t, 10, 0.8, 10, 1, 0).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("PPO".parse::<Variant>().is_err());
    }

    #[test]
    fn default_config_is_valid() {
        CachingConfig::default().validate().unwrap();
        let bad = CachingConfig {
            theta: 1.0,
            ..CachingConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "caching.theta"));
    }
}
