//! Eviction policies: LRU/LFU baselines and tabular Q-learning over a
//! three-action eviction menu, trained on recorded or twin-generated
//! episodes, plus the evaluation harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SimRng};

use super::env::{safety_shield, step_env, CacheAction, CacheState, SafetyShield, StepOutcome};
use super::twin::{train_demand_twin, twin_generate, DemandTwin};
use super::{simulate_stream, CacheTopology, CachingConfig, RequestEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Lru,
    Lfu,
    Rl,
    RlDnt,
    ReliableRl,
    ReliableRlDnt,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Lru,
        Variant::Lfu,
        Variant::Rl,
        Variant::RlDnt,
        Variant::ReliableRl,
        Variant::ReliableRlDnt,
    ];

    pub fn is_learned(self) -> bool {
        !matches!(self, Variant::Lru | Variant::Lfu)
    }

    /// Trains on twin-generated episodes besides recorded ones.
    pub fn uses_twin(self) -> bool {
        matches!(self, Variant::RlDnt | Variant::ReliableRlDnt)
    }

    /// Trains and runs with the safety shield.
    pub fn is_reliable(self) -> bool {
        matches!(self, Variant::ReliableRl | Variant::ReliableRlDnt)
    }
}

/// Which cached entry to evict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvictRule {
    Lru,
    Lfu,
    /// Entry with the lowest forecast next-window demand at the BS.
    Forecast,
}

impl EvictRule {
    pub const ALL: [EvictRule; 3] = [EvictRule::Lru, EvictRule::Lfu, EvictRule::Forecast];

    fn index(self) -> usize {
        self as usize
    }
}

/// Popularity tier x occupancy tier x load tier.
pub const N_STATES: usize = 27;

/// Action values as sample averages of the observed decision rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<[f64; 3]>,
    /// Rewards averaged into each value.
    pub counts: Vec<[u64; 3]>,
    /// Decisions taken in each state during training.
    pub visits: Vec<u64>,
}

impl Default for QTable {
    fn default() -> Self {
        QTable {
            values: vec![[0.0; 3]; N_STATES],
            counts: vec![[0; 3]; N_STATES],
            visits: vec![0; N_STATES],
        }
    }
}

impl QTable {
    /// Greedy action, ties to the earlier action; `None` for unseen states.
    pub fn greedy(&self, state: usize) -> Option<EvictRule> {
        if self.visits[state] == 0 {
            return None;
        }
        let v = &self.values[state];
        let best = (0..3).fold(0, |b, a| if v[a] > v[b] { a } else { b });
        Some(EvictRule::ALL[best])
    }

    fn update(&mut self, state: usize, action: EvictRule, target: f64) {
        let n = &mut self.counts[state][action.index()];
        *n += 1;
        let q = &mut self.values[state][action.index()];
        *q += (target - *q) / *n as f64;
    }
}

/// Discretized decision state at `bs` for a request of `content`.
pub fn observe(state: &CacheState, bs: usize, content: usize, hot_count: usize, theta: f64) -> usize {
    let recent = state.recent_count(bs, content) as usize;
    let popularity = if recent >= hot_count.max(1) {
        0
    } else if recent > 0 {
        1
    } else {
        2
    };
    let fill = state.cache(bs).len() as f64 / state.slots() as f64;
    let occupancy = if fill < 0.5 {
        0
    } else if fill < 1.0 {
        1
    } else {
        2
    };
    let ratio = state.load_ratio(bs);
    let load = if ratio <= (1.0 + theta) / 2.0 {
        0
    } else if ratio <= theta {
        1
    } else {
        2
    };
    popularity * 9 + occupancy * 3 + load
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub variant: Variant,
    /// `None` for the LRU/LFU baselines.
    pub q: Option<QTable>,
    /// Forecaster behind [`EvictRule::Forecast`]; persistence when absent.
    pub twin: Option<DemandTwin>,
}

impl Policy {
    pub fn baseline(variant: Variant) -> Result<Self> {
        if variant.is_learned() {
            return Err(Error::config("caching.variant", format!("{variant} is not a baseline")));
        }
        Ok(Policy {
            variant,
            q: None,
            twin: None,
        })
    }
}

/// Per-(BS, content) request counts per window and their next-window
/// forecasts.
struct DemandTracker<'a> {
    twin: Option<&'a DemandTwin>,
    catalog: usize,
    window: u64,
    index: u64,
    current: Vec<f64>,
    recent: Vec<Vec<f64>>,
    forecast: Vec<f64>,
}

impl<'a> DemandTracker<'a> {
    fn new(twin: Option<&'a DemandTwin>, n_bs: usize, catalog: usize, window: usize) -> Self {
        let lags = twin.map_or(1, DemandTwin::window);
        DemandTracker {
            twin,
            catalog,
            window: window as u64,
            index: 0,
            current: vec![0.0; n_bs * catalog],
            recent: vec![vec![0.0; lags]; n_bs * catalog],
            forecast: vec![0.0; n_bs * catalog],
        }
    }

    fn advance(&mut self, time: u64) -> Result<()> {
        let target = time / self.window;
        if target == self.index {
            return Ok(());
        }
        while self.index < target {
            for (r, c) in self.recent.iter_mut().zip(self.current.iter_mut()) {
                r.rotate_right(1);
                r[0] = *c;
                *c = 0.0;
            }
            self.index += 1;
        }
        for (f, r) in self.forecast.iter_mut().zip(&self.recent) {
            *f = match self.twin {
                Some(t) => t.predict(r)?,
                None => r[0],
            };
        }
        Ok(())
    }

    fn record(&mut self, bs: usize, content: usize) {
        self.current[bs * self.catalog + content] += 1.0;
    }

    fn get(&self, bs: usize, content: usize) -> f64 {
        self.forecast[bs * self.catalog + content]
    }
}

/// One pass of a request stream through fresh caches.
struct Episode<'a> {
    topology: &'a CacheTopology,
    state: CacheState,
    shield: SafetyShield,
    tracker: DemandTracker<'a>,
    hot_count: usize,
}

impl<'a> Episode<'a> {
    fn new(
        cfg: &CachingConfig,
        topology: &'a CacheTopology,
        twin: Option<&'a DemandTwin>,
        shielded: bool,
    ) -> Result<Self> {
        Ok(Episode {
            topology,
            state: CacheState::new(topology.n_bs, topology.slots_per_bs, cfg.catalog, cfg.load_window),
            shield: SafetyShield::new(cfg.theta, cfg.rho, shielded)?,
            tracker: DemandTracker::new(twin, topology.n_bs, cfg.catalog, cfg.forecast_window),
            hot_count: cfg.hot_count,
        })
    }

    /// Moves the clocks to the event and resolves its BS. Returns the
    /// decision state when the request will need an eviction.
    fn prepare(&mut self, event: &mut RequestEvent) -> Result<(usize, Option<usize>)> {
        self.state.advance_to(event.time);
        self.tracker.advance(event.time)?;
        let bs = match event.serving_bs {
            Some(b) => b,
            None => self.state.route(self.topology, event.client)?,
        };
        event.serving_bs = Some(bs);
        let decide = !self.state.contains(bs, event.content) && self.state.is_full(bs);
        let obs = decide.then(|| observe(&self.state, bs, event.content, self.hot_count, self.shield.theta));
        Ok((bs, obs))
    }

    fn victim(&self, bs: usize, rule: EvictRule) -> usize {
        let s = &self.state;
        match rule {
            EvictRule::Lru => s.lru_victim(bs),
            EvictRule::Lfu => s.lfu_victim(bs),
            EvictRule::Forecast => (0..s.cache(bs).len()).min_by(|&a, &b| {
                let (ea, eb) = (&s.cache(bs)[a], &s.cache(bs)[b]);
                self.tracker
                    .get(bs, ea.content)
                    .total_cmp(&self.tracker.get(bs, eb.content))
                    .then(ea.last_used.cmp(&eb.last_used))
            }),
        }
        .expect("decisions happen on full caches")
    }

    /// Applies the shield to `rule` and returns the action to execute and
    /// whether the shield replaced it.
    fn shielded_action(&mut self, bs: usize, rule: EvictRule) -> (CacheAction, bool) {
        let proposed = CacheAction::Evict(self.victim(bs, rule));
        safety_shield(&self.state, bs, proposed, &mut self.shield)
    }

    fn execute(&mut self, event: &RequestEvent, action: CacheAction) -> Result<StepOutcome> {
        let out = step_env(&mut self.state, self.topology, event, action, &self.shield)?;
        self.tracker.record(out.bs, event.content);
        Ok(out)
    }
}

fn is_synthetic(episode: usize, mix: f64) -> bool {
    ((episode + 1) as f64 * mix).floor() > (episode as f64 * mix).floor()
}

/// Events of `[start, start + len)` with times rebased to zero.
fn slice_steps(events: &[RequestEvent], start: u64, len: u64) -> Vec<RequestEvent> {
    let lo = events.partition_point(|e| e.time < start);
    let hi = events.partition_point(|e| e.time < start + len);
    events[lo..hi]
        .iter()
        .map(|e| RequestEvent {
            time: e.time - start,
            ..*e
        })
        .collect()
}

/// Tabular one-step Q-learning with sample-average values. A decision is credited with the step reward
/// of the request that triggered it and with -1 if its victim is requested
/// again at the same BS within one demand window. Reliable variants train
/// with the shield on; an overridden action is pulled towards the value of
/// the LRU action minus `rho`.
///
/// +DNT variants replace a `dnt_mix` share of the recorded episodes with
/// twin-generated ones.
pub fn train_policy(
    cfg: &CachingConfig,
    topology: &CacheTopology,
    history: &[RequestEvent],
    twin: Option<&DemandTwin>,
    variant: Variant,
    episodes: usize,
    seed: u64,
) -> Result<Policy> {
    if !variant.is_learned() {
        return Err(Error::config(
            "caching.variant",
            format!("{variant} is not a learned policy"),
        ));
    }
    let twin = if variant.uses_twin() {
        Some(twin.ok_or_else(|| Error::State(format!("{variant} needs a trained demand twin")))?)
    } else {
        None
    };
    let steps = history.last().map_or(0, |e| e.time + 1);
    let len = cfg.episode_len as u64;
    if episodes > 0 && steps < len {
        return Err(Error::config("caching.episode_len", "longer than the recorded history"));
    }
    let mut q = QTable::default();
    let mut rng = stream(seed, "cache-train");
    for episode in 0..episodes {
        let events = match twin {
            Some(t) if is_synthetic(episode, cfg.dnt_mix) => {
                let ep_seed = derive_seed(seed, "cache-twin-episode").wrapping_add(episode as u64);
                twin_generate(t, history, cfg.episode_len, cfg.rare_rate, ep_seed)?.events
            }
            _ => {
                let start = rng.random_range(0..=steps - len);
                slice_steps(history, start, len)
            }
        };
        run_training_episode(cfg, topology, twin, variant.is_reliable(), &events, &mut q, &mut rng)?;
    }
    Ok(Policy {
        variant,
        q: Some(q),
        twin: twin.cloned(),
    })
}

struct Decision {
    state: usize,
    rule: EvictRule,
    reward: f64,
    deadline: u64,
}

fn run_training_episode(
    cfg: &CachingConfig,
    topology: &CacheTopology,
    twin: Option<&DemandTwin>,
    reliable: bool,
    events: &[RequestEvent],
    q: &mut QTable,
    rng: &mut SimRng,
) -> Result<()> {
    let mut ep = Episode::new(cfg, topology, twin, reliable)?;
    let horizon = cfg.forecast_window as u64;
    let mut decisions: Vec<Decision> = Vec::new();
    // Open decision whose victim is (bs, content), if any.
    let mut watch: Vec<Option<usize>> = vec![None; topology.n_bs * cfg.catalog];
    let mut open: std::collections::VecDeque<(usize, usize)> = Default::default();
    for event in events {
        let mut event = *event;
        while let Some(&(d, key)) = open.front() {
            if decisions[d].deadline > event.time {
                break;
            }
            open.pop_front();
            if watch[key] == Some(d) {
                watch[key] = None;
                q.update(decisions[d].state, decisions[d].rule, decisions[d].reward);
            }
        }
        let (bs, obs) = ep.prepare(&mut event)?;
        let key = bs * cfg.catalog + event.content;
        if let Some(d) = watch[key].take() {
            q.update(decisions[d].state, decisions[d].rule, decisions[d].reward - 1.0);
        }
        let mut decided = None;
        let action = match obs {
            None => CacheAction::NoOp,
            Some(s) => {
                let proposed = match q.greedy(s) {
                    Some(best) if !rng.random_bool(cfg.epsilon) => best,
                    _ => EvictRule::ALL[rng.random_range(0..3)],
                };
                q.visits[s] += 1;
                let (action, intervened) = ep.shielded_action(bs, proposed);
                let executed = if intervened {
                    let target = q.values[s][EvictRule::Lru.index()] - cfg.rho;
                    q.update(s, proposed, target);
                    EvictRule::Lru
                } else {
                    proposed
                };
                decided = Some((s, executed));
                action
            }
        };
        let out = ep.execute(&event, action)?;
        if let (Some((s, rule)), Some(victim)) = (decided, out.evicted) {
            let d = decisions.len();
            decisions.push(Decision {
                state: s,
                rule,
                reward: out.reward,
                deadline: event.time + horizon,
            });
            let vkey = bs * cfg.catalog + victim;
            watch[vkey] = Some(d);
            open.push_back((d, vkey));
        }
    }
    for (d, key) in open {
        if watch[key] == Some(d) {
            q.update(decisions[d].state, decisions[d].rule, decisions[d].reward);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CachingReport {
    pub variant: Variant,
    pub hit_rate: f64,
    pub hits: u64,
    pub requests: u64,
    pub interventions: u64,
    /// Mean sliding-window load of each BS.
    pub bs_loads: Vec<f64>,
    /// Time-averaged coefficient of variation of the window loads.
    pub load_cv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow {
    pub time: u64,
    pub client: usize,
    pub content: usize,
    pub bs: usize,
    pub hit: bool,
}

/// Runs `events` through fresh caches. Learned policies act greedily and
/// pick uniformly at random in states never seen in training. Load
/// statistics are sampled once per step after the first full window.
pub fn evaluate_caching(
    policy: &Policy,
    cfg: &CachingConfig,
    topology: &CacheTopology,
    events: &[RequestEvent],
    shielded: bool,
    seed: u64,
) -> Result<CachingReport> {
    evaluate_traced(policy, cfg, topology, events, shielded, seed, None)
}

fn evaluate_traced(
    policy: &Policy,
    cfg: &CachingConfig,
    topology: &CacheTopology,
    events: &[RequestEvent],
    shielded: bool,
    seed: u64,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<CachingReport> {
    if events.is_empty() {
        return Err(Error::domain("empty evaluation stream"));
    }
    let mut ep = Episode::new(cfg, topology, policy.twin.as_ref(), shielded)?;
    let mut rng = stream(seed, "cache-eval");
    let mut stats = LoadStats::new(topology.n_bs);
    let warm = cfg.load_window as u64;
    let mut now = events[0].time;
    for event in events {
        if event.time != now {
            if now + 1 >= warm {
                stats.sample(&ep.state);
            }
            now = event.time;
        }
        let mut event = *event;
        let (bs, obs) = ep.prepare(&mut event)?;
        let action = match obs {
            None => CacheAction::NoOp,
            Some(s) => {
                let rule = match (&policy.q, policy.variant) {
                    (None, Variant::Lfu) => EvictRule::Lfu,
                    (None, _) => EvictRule::Lru,
                    (Some(q), _) => q.greedy(s).unwrap_or_else(|| EvictRule::ALL[rng.random_range(0..3)]),
                };
                ep.shielded_action(bs, rule).0
            }
        };
        let out = ep.execute(&event, action)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow {
                time: event.time,
                client: event.client,
                content: event.content,
                bs: out.bs,
                hit: out.hit,
            });
        }
    }
    if now + 1 >= warm || stats.samples == 0 {
        stats.sample(&ep.state);
    }
    let requests = ep.state.hits + ep.state.misses;
    Ok(CachingReport {
        variant: policy.variant,
        hit_rate: ep.state.hits as f64 / requests as f64,
        hits: ep.state.hits,
        requests,
        interventions: ep.shield.intervention_count,
        bs_loads: stats.load_sum.iter().map(|s| s / stats.samples as f64).collect(),
        load_cv: stats.cv_sum / stats.samples as f64,
    })
}

struct LoadStats {
    load_sum: Vec<f64>,
    cv_sum: f64,
    samples: u64,
}

impl LoadStats {
    fn new(n_bs: usize) -> Self {
        LoadStats {
            load_sum: vec![0.0; n_bs],
            cv_sum: 0.0,
            samples: 0,
        }
    }

    fn sample(&mut self, state: &CacheState) {
        for (s, l) in self.load_sum.iter_mut().zip(state.loads()) {
            *s += *l as f64;
        }
        self.cv_sum += state.load_cv();
        self.samples += 1;
    }
}

#[derive(Debug, Clone)]
pub struct CacheSimOutput {
    pub reports: Vec<CachingReport>,
    /// Event trace of the requested variant, if any.
    pub trace: Vec<TraceRow>,
}

/// Records `history_len` steps of one world, trains the demand twin and the
/// four learned variants on them, and evaluates every variant on the next
/// `eval_horizon` steps. All variants share the training and evaluation
/// seeds.
pub fn run_cache_sim(cfg: &CachingConfig, seed: u64, trace_variant: Option<Variant>) -> Result<CacheSimOutput> {
    cfg.validate()?;
    let topology = cfg.topology()?;
    let horizon = cfg.history_len + cfg.eval_horizon;
    let (events, _) = simulate_stream(&topology, &cfg.stream_spec(), derive_seed(seed, "cache-world"), horizon)?;
    let split = events.partition_point(|e| (e.time as usize) < cfg.history_len);
    let history = &events[..split];
    let eval = slice_steps(&events[split..], cfg.history_len as u64, cfg.eval_horizon as u64);
    let twin = train_demand_twin(cfg, &topology, history)?;
    let train_seed = derive_seed(seed, "cache-policy");
    let eval_seed = derive_seed(seed, "cache-policy-eval");
    let mut reports = Vec::new();
    let mut trace = Vec::new();
    for variant in Variant::ALL {
        let policy = if variant.is_learned() {
            train_policy(cfg, &topology, history, Some(&twin), variant, cfg.episodes, train_seed)?
        } else {
            Policy::baseline(variant)?
        };
        let sink = (trace_variant == Some(variant)).then_some(&mut trace);
        reports.push(evaluate_traced(
            &policy,
            cfg,
            &topology,
            &eval,
            variant.is_reliable(),
            eval_seed,
            sink,
        )?);
    }
    Ok(CacheSimOutput { reports, trace })
}

/// `variant,hit_rate,interventions,bs0_load,..,load_cv`.
pub fn write_report_csv<W: std::io::Write>(reports: &[CachingReport], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| Error::State(format!("caching report export failed: {e}"));
    let n_bs = reports.first().map_or(0, |r| r.bs_loads.len());
    let mut header = vec!["variant".to_string(), "hit_rate".into(), "interventions".into()];
    header.extend((0..n_bs).map(|b| format!("bs{b}_load")));
    header.push("load_cv".into());
    w.write_record(&header).map_err(err)?;
    for r in reports {
        let mut row = vec![
            r.variant.to_string(),
            format!("{:.6}", r.hit_rate),
            r.interventions.to_string(),
        ];
        row.extend(r.bs_loads.iter().map(|l| format!("{l:.6}")));
        row.push(format!("{:.6}", r.load_cv));
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::State(format!("caching report export failed: {e}")))?;
    Ok(())
}

/// `time,client,content,bs,hit` with `hit` as 0/1.
pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| Error::State(format!("trace export failed: {e}"));
    w.write_record(["time", "client", "content", "bs", "hit"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.time.to_string(),
            r.client.to_string(),
            r.content.to_string(),
            r.bs.to_string(),
            u8::from(r.hit).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::State(format!("trace export failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caching::simulate_request_stream;

    fn small() -> (CachingConfig, CacheTopology) {
        let cfg = CachingConfig {
            catalog: 200,
            slots: 20,
            history_len: 3000,
            episode_len: 500,
            eval_horizon: 1000,
            episodes: 4,
            twin_window: 6,
            twin_epochs: 10,
            load_window: 100,
            spike_len: 200,
            ..CachingConfig::default()
        };
        let topo = cfg.topology().unwrap();
        (cfg, topo)
    }

    #[test]
    fn zero_episodes_gives_a_random_policy() {
        let (cfg, topo) = small();
        let history = simulate_request_stream(&topo, cfg.catalog, 0.8, 500, 1, 600).unwrap();
        let p = train_policy(&cfg, &topo, &history, None, Variant::Rl, 0, 4).unwrap();
        let q = p.q.unwrap();
        assert!((0..N_STATES).all(|s| q.greedy(s).is_none()));
        // Unseen states draw each action.
        let mut rng = stream(1, "t");
        let mut seen = [0; 3];
        for _ in 0..300 {
            seen[rng.random_range(0..3)] += 1;
        }
        assert!(seen.iter().all(|&n| n > 60));
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, topo) = small();
        let history = simulate_request_stream(&topo, cfg.catalog, 0.8, 500, 2, cfg.history_len).unwrap();
        let twin = train_demand_twin(&cfg, &topo, &history).unwrap();
        for v in [Variant::Rl, Variant::ReliableRlDnt] {
            let a = train_policy(&cfg, &topo, &history, Some(&twin), v, 3, 11).unwrap();
            let b = train_policy(&cfg, &topo, &history, Some(&twin), v, 3, 11).unwrap();
            assert_eq!(a.q, b.q);
            assert!(a.q.as_ref().unwrap().visits.iter().sum::<u64>() > 0);
        }
        assert!(train_policy(&cfg, &topo, &history, None, Variant::Lru, 3, 11).is_err());
        assert!(train_policy(&cfg, &topo, &history, None, Variant::RlDnt, 3, 11).is_err());
    }

    #[test]
    fn lfu_beats_lru_on_static_zipf() {
        let (cfg, topo) = small();
        let events = simulate_request_stream(&topo, cfg.catalog, 0.8, usize::MAX, 3, 4000).unwrap();
        let run = |v| {
            evaluate_caching(&Policy::baseline(v).unwrap(), &cfg, &topo, &events, false, 1)
                .unwrap()
                .hit_rate
        };
        let (lru, lfu) = (run(Variant::Lru), run(Variant::Lfu));
        assert!(lfu >= lru, "lfu {lfu} lru {lru}");
    }

    #[test]
    fn small_catalog_saturates() {
        let (mut cfg, topo) = small();
        cfg.catalog = 15;
        let events = simulate_request_stream(&topo, cfg.catalog, 0.8, 100, 3, 2000).unwrap();
        let r = evaluate_caching(&Policy::baseline(Variant::Lru).unwrap(), &cfg, &topo, &events, false, 1).unwrap();
        assert_eq!(r.hits + (r.requests - r.hits), events.len() as u64);
        assert!(r.requests - r.hits <= 15 * 5);
        assert!(r.hit_rate > 0.99);
    }

    #[test]
    fn accounting_and_unshielded_interventions() {
        let (cfg, _) = small();
        let out = run_cache_sim(&cfg, 5, Some(Variant::ReliableRlDnt)).unwrap();
        assert_eq!(out.reports.len(), 6);
        let requests = out.reports[0].requests;
        for r in &out.reports {
            assert_eq!(r.requests, requests);
            assert!((0.0..=1.0).contains(&r.hit_rate));
            assert_eq!(r.hit_rate, r.hits as f64 / r.requests as f64);
            if !r.variant.is_reliable() {
                assert_eq!(r.interventions, 0);
            }
            assert_eq!(r.bs_loads.len(), 5);
        }
        assert_eq!(out.trace.len() as u64, requests);
        let again = run_cache_sim(&cfg, 5, None).unwrap();
        assert_eq!(again.reports, out.reports);
        assert!(again.trace.is_empty());
    }

    #[test]
    fn csv_layout() {
        let r = CachingReport {
            variant: Variant::ReliableRlDnt,
            hit_rate: 0.5,
            hits: 1,
            requests: 2,
            interventions: 3,
            bs_loads: vec![1.0, 2.0],
            load_cv: 0.25,
        };
        let mut buf = Vec::new();
        write_report_csv(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "variant,hit_rate,interventions,bs0_load,bs1_load,load_cv\n\
             ReliableRL+DNT,0.500000,3,1.000000,2.000000,0.250000\n"
        );
        let mut buf = Vec::new();
        let row = TraceRow {
            time: 4,
            client: 1,
            content: 9,
            bs: 0,
            hit: true,
        };
        write_trace_csv(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,client,content,bs,hit\n4,1,9,0,1\n"
        );
    }

    #[test]
    fn observation_tiers() {
        let (cfg, topo) = small();
        let mut state = CacheState::new(5, 2, 10, 100);
        let shield = SafetyShield::new(1.5, 0.5, false).unwrap();
        assert_eq!(observe(&state, 0, 3, cfg.hot_count, 1.5), 2 * 9);
        for t in 0..5 {
            let e = RequestEvent {
                time: t,
                client: 0,
                content: 3,
                serving_bs: None,
            };
            step_env(&mut state, &topo, &e, CacheAction::NoOp, &shield).unwrap();
        }
        // Hot content, half full, only BS 0 loaded (ratio 5).
        assert_eq!(observe(&state, 0, 3, 5, 1.5), 3 + 2);
        assert_eq!(observe(&state, 0, 3, 6, 1.5), 9 + 3 + 2);
    }
}
