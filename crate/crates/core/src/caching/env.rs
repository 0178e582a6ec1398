//! Cache state, the environment step and the safety shield.

use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::{CacheTopology, RequestEvent};

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub content: usize,
    pub last_used: u64,
    /// Requests served from this entry, counting the inserting miss.
    pub uses: u64,
}

/// Per-BS caches in insertion order plus sliding-window counters.
///
/// The load of a BS is the number of requests it served in the last
/// `window` steps.
#[derive(Debug, Clone)]
pub struct CacheState {
    time: u64,
    slots: usize,
    window: usize,
    caches: Vec<Vec<CacheEntry>>,
    position: Vec<Vec<u32>>,
    load_ring: Vec<Vec<u32>>,
    load: Vec<u64>,
    recent_log: Vec<VecDeque<(u64, usize)>>,
    recent: Vec<Vec<u32>>,
    pub hits: u64,
    pub misses: u64,
    /// Requests served per BS over the whole run.
    pub total_load: Vec<u64>,
}

impl CacheState {
    pub fn new(n_bs: usize, slots: usize, catalog: usize, window: usize) -> Self {
        CacheState {
            time: 0,
            slots,
            window: window.max(1),
            caches: vec![Vec::with_capacity(slots); n_bs],
            position: vec![vec![ABSENT; catalog]; n_bs],
            load_ring: vec![vec![0; window.max(1)]; n_bs],
            load: vec![0; n_bs],
            recent_log: vec![VecDeque::new(); n_bs],
            recent: vec![vec![0; catalog]; n_bs],
            hits: 0,
            misses: 0,
            total_load: vec![0; n_bs],
        }
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn n_bs(&self) -> usize {
        self.caches.len()
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn catalog(&self) -> usize {
        self.position.first().map_or(0, |p| p.len())
    }

    pub fn cache(&self, bs: usize) -> &[CacheEntry] {
        &self.caches[bs]
    }

    pub fn contains(&self, bs: usize, content: usize) -> bool {
        self.position[bs].get(content).is_some_and(|&p| p != ABSENT)
    }

    pub fn is_full(&self, bs: usize) -> bool {
        self.caches[bs].len() >= self.slots
    }

    pub fn loads(&self) -> &[u64] {
        &self.load
    }

    /// Requests for `content` at `bs` within the window.
    pub fn recent_count(&self, bs: usize, content: usize) -> u32 {
        self.recent[bs][content]
    }

    /// Window load of `bs` relative to the mean over all BSs; 1 when no BS
    /// has any load.
    pub fn load_ratio(&self, bs: usize) -> f64 {
        let total: u64 = self.load.iter().sum();
        if total == 0 {
            return 1.0;
        }
        self.load[bs] as f64 * self.load.len() as f64 / total as f64
    }

    /// Coefficient of variation of the window loads; 0 when all are zero.
    pub fn load_cv(&self) -> f64 {
        let n = self.load.len() as f64;
        let mean = self.load.iter().sum::<u64>() as f64 / n;
        if mean == 0.0 {
            return 0.0;
        }
        let var = self.load.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }

    /// Least-loaded member of the client's service set, ties to the lower id.
    pub fn route(&self, topology: &CacheTopology, client: usize) -> Result<usize> {
        let services = topology
            .services
            .get(client)
            .ok_or_else(|| Error::State(format!("unknown client {client}")))?;
        services
            .iter()
            .copied()
            .min_by_key(|&b| (self.load[b], b))
            .ok_or_else(|| Error::State(format!("client {client} has no serving BS")))
    }

    pub fn lru_victim(&self, bs: usize) -> Option<usize> {
        (0..self.caches[bs].len()).min_by_key(|&i| (self.caches[bs][i].last_used, i))
    }

    pub fn lfu_victim(&self, bs: usize) -> Option<usize> {
        (0..self.caches[bs].len()).min_by_key(|&i| {
            let e = &self.caches[bs][i];
            (e.uses, e.last_used, i)
        })
    }

    /// Moves the clock forward, expiring window counters.
    pub fn advance_to(&mut self, time: u64) {
        while self.time < time {
            self.time += 1;
            let slot = (self.time % self.window as u64) as usize;
            for bs in 0..self.load.len() {
                self.load[bs] -= self.load_ring[bs][slot] as u64;
                self.load_ring[bs][slot] = 0;
                while let Some(&(t, c)) = self.recent_log[bs].front() {
                    if t + self.window as u64 > self.time {
                        break;
                    }
                    self.recent_log[bs].pop_front();
                    self.recent[bs][c] -= 1;
                }
            }
        }
    }

    fn insert(&mut self, bs: usize, content: usize) {
        self.position[bs][content] = self.caches[bs].len() as u32;
        self.caches[bs].push(CacheEntry {
            content,
            last_used: self.time,
            uses: 1,
        });
    }

    fn evict(&mut self, bs: usize, index: usize) -> usize {
        let victim = self.caches[bs].remove(index);
        self.position[bs][victim.content] = ABSENT;
        for (i, e) in self.caches[bs].iter().enumerate().skip(index) {
            self.position[bs][e.content] = i as u32;
        }
        victim.content
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheAction {
    /// Serve a hit, or insert into a cache with free slots.
    NoOp,
    /// Evict the entry at this index of the serving BS's cache.
    Evict(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub bs: usize,
    pub hit: bool,
    pub reward: f64,
    pub evicted: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyShield {
    /// Largest tolerated ratio of a BS's window load to the mean.
    pub theta: f64,
    /// Reward penalty per unit of ratio above `theta`.
    pub rho: f64,
    pub enabled: bool,
    pub intervention_count: u64,
}

impl SafetyShield {
    pub fn new(theta: f64, rho: f64, enabled: bool) -> Result<Self> {
        if !(theta > 1.0) {
            return Err(Error::config("caching.theta", "must exceed 1"));
        }
        Ok(SafetyShield {
            theta,
            rho,
            enabled,
            intervention_count: 0,
        })
    }

    /// Imbalance penalty for serving at `bs`; zero when disabled.
    pub fn penalty(&self, state: &CacheState, bs: usize) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.rho * (state.load_ratio(bs) - self.theta).max(0.0)
    }
}

/// Serves one request. The event's `serving_bs`, when set, must belong to
/// the client's service set; otherwise the request is routed.
pub fn step_env(
    state: &mut CacheState,
    topology: &CacheTopology,
    event: &RequestEvent,
    action: CacheAction,
    shield: &SafetyShield,
) -> Result<StepOutcome> {
    if event.content >= state.catalog() {
        return Err(Error::State(format!("content {} outside the catalog", event.content)));
    }
    state.advance_to(event.time);
    let bs = match event.serving_bs {
        Some(b) if topology.services.get(event.client).is_some_and(|s| s.contains(&b)) => b,
        Some(b) => {
            return Err(Error::State(format!("BS {b} does not serve client {}", event.client)));
        }
        None => state.route(topology, event.client)?,
    };
    let hit = state.contains(bs, event.content);
    let mut evicted = None;
    if hit {
        if action != CacheAction::NoOp {
            return Err(Error::Action("eviction requested on a cache hit".into()));
        }
        let i = state.position[bs][event.content] as usize;
        let now = state.time;
        let e = &mut state.caches[bs][i];
        e.last_used = now;
        e.uses += 1;
        state.hits += 1;
    } else {
        match (action, state.is_full(bs)) {
            (CacheAction::NoOp, false) => {}
            (CacheAction::NoOp, true) => {
                return Err(Error::Action(format!("BS {bs} cache is full: a victim is required")));
            }
            (CacheAction::Evict(_), false) => {
                return Err(Error::Action(format!("BS {bs} cache has free slots: nothing to evict")));
            }
            (CacheAction::Evict(i), true) => {
                if i >= state.caches[bs].len() {
                    return Err(Error::Action(format!(
                        "victim index {i} out of range for {} entries",
                        state.caches[bs].len()
                    )));
                }
                evicted = Some(state.evict(bs, i));
            }
        }
        state.insert(bs, event.content);
        state.misses += 1;
    }
    state.total_load[bs] += 1;
    let slot = (state.time % state.window as u64) as usize;
    state.load_ring[bs][slot] += 1;
    state.load[bs] += 1;
    state.recent_log[bs].push_back((state.time, event.content));
    state.recent[bs][event.content] += 1;
    let reward = if hit { 1.0 } else { 0.0 } - shield.penalty(state, bs);
    Ok(StepOutcome {
        bs,
        hit,
        reward,
        evicted,
    })
}

/// Overrides an eviction at an overloaded BS with its LRU victim. Counts an
/// intervention only when that changes the victim.
pub fn safety_shield(
    state: &CacheState,
    bs: usize,
    proposed: CacheAction,
    shield: &mut SafetyShield,
) -> (CacheAction, bool) {
    if !shield.enabled || state.load_ratio(bs) <= shield.theta {
        return (proposed, false);
    }
    match (proposed, state.lru_victim(bs)) {
        (CacheAction::Evict(i), Some(lru)) if i != lru => {
            shield.intervention_count += 1;
            (CacheAction::Evict(lru), true)
        }
        _ => (proposed, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> CacheTopology {
        CacheTopology::ring(5, 3, 8).unwrap()
    }

    fn ev(time: u64, client: usize, content: usize) -> RequestEvent {
        RequestEvent {
            time,
            client,
            content,
            serving_bs: None,
        }
    }

    fn off() -> SafetyShield {
        SafetyShield::new(1.5, 0.5, false).unwrap()
    }

    #[test]
    fn hit_fill_and_evict_paths() {
        let t = topo();
        let mut s = CacheState::new(5, 3, 10, 4);
        let out = step_env(&mut s, &t, &ev(0, 0, 7), CacheAction::NoOp, &off()).unwrap();
        assert!(!out.hit && out.bs == 0 && out.evicted.is_none());
        let before = s.cache(0).to_vec();
        let out = step_env(&mut s, &t, &ev(1, 0, 7), CacheAction::NoOp, &off()).unwrap();
        assert!(out.hit && out.reward == 1.0);
        assert_eq!(s.cache(0).iter().map(|e| e.content).collect::<Vec<_>>(), vec![7]);
        assert_eq!(s.cache(0)[0].uses, before[0].uses + 1);
        for c in [1, 2] {
            step_env(&mut s, &t, &ev(2, 0, c), CacheAction::NoOp, &off()).unwrap();
        }
        assert!(s.is_full(0));
        let out = step_env(&mut s, &t, &ev(3, 0, 9), CacheAction::Evict(0), &off()).unwrap();
        assert_eq!(out.evicted, Some(7));
        assert_eq!(s.cache(0).len(), 3);
        assert!(s.contains(0, 9) && !s.contains(0, 7));
        assert_eq!(s.hits + s.misses, 5);
    }

    #[test]
    fn invalid_actions() {
        let t = topo();
        let mut s = CacheState::new(5, 1, 10, 4);
        assert!(matches!(
            step_env(&mut s, &t, &ev(0, 0, 1), CacheAction::Evict(0), &off()),
            Err(Error::Action(_))
        ));
        step_env(&mut s, &t, &ev(0, 0, 1), CacheAction::NoOp, &off()).unwrap();
        assert!(matches!(
            step_env(&mut s, &t, &ev(0, 0, 2), CacheAction::Evict(1), &off()),
            Err(Error::Action(_))
        ));
        assert!(matches!(
            step_env(&mut s, &t, &ev(0, 0, 2), CacheAction::NoOp, &off()),
            Err(Error::Action(_))
        ));
        assert!(matches!(
            step_env(&mut s, &t, &ev(0, 0, 1), CacheAction::Evict(0), &off()),
            Err(Error::Action(_))
        ));
    }

    #[test]
    fn load_window_expires() {
        let t = topo();
        let mut s = CacheState::new(5, 10, 10, 3);
        step_env(&mut s, &t, &ev(0, 0, 1), CacheAction::NoOp, &off()).unwrap();
        step_env(&mut s, &t, &ev(1, 0, 2), CacheAction::NoOp, &off()).unwrap();
        step_env(&mut s, &t, &ev(1, 0, 2), CacheAction::NoOp, &off()).unwrap();
        assert_eq!(s.loads()[0], 3);
        assert_eq!(s.recent_count(0, 1), 1);
        s.advance_to(3);
        assert_eq!(s.loads()[0], 2);
        assert_eq!(s.recent_count(0, 1), 0);
        assert_eq!(s.recent_count(0, 2), 2);
        s.advance_to(10);
        assert_eq!(s.loads()[0], 0);
        assert_eq!(s.total_load[0], 3);
    }

    #[test]
    fn shared_client_routes_to_lighter_bs() {
        let t = topo();
        // Client 30 is shared by BS 0 and 1.
        assert_eq!(t.services[30], vec![0, 1]);
        let mut s = CacheState::new(5, 10, 10, 50);
        assert_eq!(s.route(&t, 30).unwrap(), 0);
        step_env(&mut s, &t, &ev(0, 0, 1), CacheAction::NoOp, &off()).unwrap();
        assert_eq!(s.route(&t, 30).unwrap(), 1);
        let out = step_env(&mut s, &t, &ev(0, 30, 2), CacheAction::NoOp, &off()).unwrap();
        assert_eq!(out.bs, 1);
        let forced = RequestEvent {
            serving_bs: Some(3),
            ..ev(0, 30, 2)
        };
        assert!(step_env(&mut s, &t, &forced, CacheAction::NoOp, &off()).is_err());
    }

    fn overloaded() -> CacheState {
        // BS 0 carries 4 misses, BS 1..4 one each: ratio 20/8 = 2.5.
        let t = topo();
        let mut s = CacheState::new(5, 2, 20, 100);
        let requests = [(0, 1), (0, 2), (0, 3), (0, 4), (6, 5), (12, 6), (18, 7), (24, 8)];
        for (time, (client, content)) in requests.into_iter().enumerate() {
            let full = s.is_full(t.services[client][0]);
            let action = if full { CacheAction::Evict(1) } else { CacheAction::NoOp };
            step_env(&mut s, &t, &ev(time as u64, client, content), action, &off()).unwrap();
        }
        s
    }

    #[test]
    fn shield_overrides_overloaded_bs() {
        let s = overloaded();
        assert!(s.load_ratio(0) > 2.0);
        let mut shield = SafetyShield::new(1.5, 0.5, true).unwrap();
        let lru = s.lru_victim(0).unwrap();
        let other = 1 - lru;
        let (a, hit) = safety_shield(&s, 0, CacheAction::Evict(other), &mut shield);
        assert!(hit);
        assert_eq!(a, CacheAction::Evict(lru));
        assert_eq!(shield.intervention_count, 1);
        // Already the LRU victim: nothing to override.
        let (a, hit) = safety_shield(&s, 0, CacheAction::Evict(lru), &mut shield);
        assert!(!hit && a == CacheAction::Evict(lru));
        // Balanced BS: pass through.
        let (_, hit) = safety_shield(&s, 1, CacheAction::Evict(0), &mut shield);
        assert!(!hit);
        assert_eq!(shield.intervention_count, 1);
        let mut disabled = SafetyShield::new(1.5, 0.5, false).unwrap();
        let (a, hit) = safety_shield(&s, 0, CacheAction::Evict(other), &mut disabled);
        assert!(!hit && a == CacheAction::Evict(other));
        assert_eq!(disabled.intervention_count, 0);
    }

    #[test]
    fn penalty_only_when_enabled() {
        let s = overloaded();
        let on = SafetyShield::new(1.5, 0.5, true).unwrap();
        assert!((on.penalty(&s, 0) - 0.5 * (s.load_ratio(0) - 1.5)).abs() < 1e-12);
        assert_eq!(on.penalty(&s, 1), 0.0);
        assert_eq!(off().penalty(&s, 0), 0.0);
    }
}
