//! Experiment configuration: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caching::CachingConfig;
use crate::error::{Error, Result};
use crate::fedsync::{HTwinConfig, RuleKind};
use crate::forecast::TrainingConfig;
use crate::metrics::CostWeights;
use crate::network::NetworkConfig;
use crate::threat::AttackKind;
use crate::traffic::{Channel, TrafficProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; the command line may override it.
    pub output: Option<PathBuf>,
    pub network: NetworkSection,
    pub clustering: ClusteringSection,
    pub forecaster: TrainingConfig,
    pub fedsync: FedsyncSection,
    pub attack: AttackSection,
    pub cost: CostWeights,
    pub caching: CachingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            output: None,
            network: NetworkSection::default(),
            clustering: ClusteringSection::default(),
            forecaster: TrainingConfig::default(),
            fedsync: FedsyncSection::default(),
            attack: AttackSection::default(),
            cost: CostWeights::default(),
            caching: CachingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub rows: usize,
    pub cols: usize,
    pub capacity: f64,
    /// Steps of synthetic traffic to generate.
    pub horizon: usize,
    /// Load traffic from this CSV instead of generating it.
    pub csv: Option<PathBuf>,
    /// Channel to keep when the CSV mixes several.
    pub channel: Option<Channel>,
    pub traffic: TrafficProfile,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let grid = NetworkConfig::default();
        NetworkSection {
            rows: grid.rows,
            cols: grid.cols,
            capacity: grid.capacity,
            horizon: 2016,
            csv: None,
            channel: None,
            traffic: TrafficProfile::default(),
        }
    }
}

impl NetworkSection {
    pub fn grid(&self) -> NetworkConfig {
        NetworkConfig {
            rows: self.rows,
            cols: self.cols,
            capacity: self.capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: usize,
    /// Re-cluster after this many asynchronous aggregations; 0 disables.
    pub period: usize,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection { k: 4, period: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedsyncSection {
    pub rounds: usize,
    pub rule: RuleKind,
    pub tau: f64,
    pub beta: f64,
    pub batch: usize,
    pub eval_window: usize,
    pub min_period: usize,
    pub max_period: usize,
    /// Leading share of every series used for synchronous training.
    pub train_fraction: f64,
    /// Following share streamed during asynchronous maintenance; the rest
    /// is held out for testing.
    pub stream_fraction: f64,
    /// Size of the server's FLTrust root data relative to the horizon.
    pub root_fraction: f64,
    /// Asynchronous arrivals compared against the centralized baseline.
    pub cost_events: u64,
}

impl Default for FedsyncSection {
    fn default() -> Self {
        let h = HTwinConfig::default();
        FedsyncSection {
            rounds: 30,
            rule: RuleKind::Mean,
            tau: 3.0,
            beta: h.beta,
            batch: h.batch,
            eval_window: h.eval_window,
            min_period: h.min_period,
            max_period: h.max_period,
            train_fraction: 0.6,
            stream_fraction: 0.2,
            root_fraction: 0.05,
            cost_events: 50,
        }
    }
}

impl FedsyncSection {
    pub fn htwin(&self) -> HTwinConfig {
        HTwinConfig {
            beta: self.beta,
            batch: self.batch,
            eval_window: self.eval_window,
            min_period: self.min_period,
            max_period: self.max_period,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub kind: AttackKind,
    /// Fabricated clients per aggregation. When unset: enough to make up
    /// `fake_fraction` of the participants for MPAF, one more than the
    /// authentic count for TPI.
    pub n_fake: Option<usize>,
    pub fake_fraction: f64,
    pub lambda: f64,
    pub clip_c: f64,
    /// Authentic updates per asynchronous aggregation during attack runs.
    pub htwin_batch: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kind: AttackKind::None,
            n_fake: None,
            fake_fraction: 0.2,
            lambda: 10.0,
            clip_c: 1.0,
            htwin_batch: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if n.rows == 0 {
            return Err(Error::config("network.rows", "must be at least 1"));
        }
        if n.cols == 0 {
            return Err(Error::config("network.cols", "must be at least 1"));
        }
        if let Some(csv) = &n.csv {
            if !csv.exists() {
                return Err(Error::config(
                    "network.csv",
                    format!("file {} does not exist", csv.display()),
                ));
            }
        } else if n.horizon == 0 {
            return Err(Error::config("network.horizon", "must be at least 1"));
        }
        n.traffic.validate()?;
        let cells = n.rows * n.cols;
        if self.clustering.k == 0 || self.clustering.k > cells {
            return Err(Error::config(
                "clustering.k",
                format!("must lie in 1..={cells} for a {}x{} grid", n.rows, n.cols),
            ));
        }
        self.forecaster.validate()?;
        let f = &self.fedsync;
        if f.rounds == 0 {
            return Err(Error::config("fedsync.rounds", "must be at least 1"));
        }
        if !(f.tau > 0.0) {
            return Err(Error::config("fedsync.tau", "must be positive"));
        }
        self.fedsync.htwin().validate().map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key: key.replace("htwin.", "fedsync."),
                message,
            },
            other => other,
        })?;
        if f.rule == RuleKind::Tid && f.batch < 3 {
            return Err(Error::config(
                "fedsync.batch",
                "TID aggregation needs batches of at least 3",
            ));
        }
        for (key, v) in [
            ("fedsync.train_fraction", f.train_fraction),
            ("fedsync.stream_fraction", f.stream_fraction),
            ("fedsync.root_fraction", f.root_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(key, "must lie strictly between 0 and 1"));
            }
        }
        if f.train_fraction + f.stream_fraction >= 1.0 {
            return Err(Error::config(
                "fedsync.stream_fraction",
                "training and stream shares must leave a test split",
            ));
        }
        let a = &self.attack;
        if !(a.lambda > 0.0) {
            return Err(Error::config("attack.lambda", "must be positive"));
        }
        if !(a.clip_c > 0.0) {
            return Err(Error::config("attack.clip_c", "must be positive"));
        }
        if !(a.fake_fraction >= 0.0 && a.fake_fraction < 1.0) {
            return Err(Error::config("attack.fake_fraction", "must lie in [0, 1)"));
        }
        if a.htwin_batch < 3 {
            return Err(Error::config(
                "attack.htwin_batch",
                "must be at least 3 so every rule can aggregate a batch",
            ));
        }
        for (key, w) in [
            ("cost.comm", self.cost.comm),
            ("cost.raw_data", self.cost.raw_data),
            ("cost.compute", self.cost.compute),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(key, "must be finite and non-negative"));
            }
        }
        self.caching.validate()
    }
}
