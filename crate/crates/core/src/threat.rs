//! Model-poisoning attacks on twin aggregation and the evaluation grid
//! comparing aggregation rules under them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fedsync::{ClientUpdate, GlobalTwin, RuleKind};
use crate::forecast::LinearForecaster;
use crate::metrics::{Metric, REPORT_CAP};
use crate::params::ParamVec;
use crate::pipeline::{evaluate_twins, htwin_phase, vtwin_phase, HTwinRunOptions, Scenario};
use crate::rng::{derive_seed, stream};
use crate::scalar::median;

/// Fabricated clients get ids from here upwards.
pub const FAKE_CLIENT_BASE: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Mpaf,
    Tpi,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::None, AttackKind::Mpaf, AttackKind::Tpi];
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "None",
            AttackKind::Mpaf => "MPAF",
            AttackKind::Tpi => "TPI",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "mpaf" => Ok(AttackKind::Mpaf),
            "tpi" => Ok(AttackKind::Tpi),
            other => Err(Error::config("attack.kind", format!("unknown attack `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub n_fake: usize,
    pub lambda: f64,
    pub clip_c: f64,
    /// MPAF target model.
    pub base_model: ParamVec<f64>,
    /// The TPI attacker's own initial model.
    pub attacker_init: ParamVec<f64>,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config("attack.lambda", "must be positive"));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::config("attack.clip_c", "must be positive"));
        }
        Ok(())
    }
}

fn fakes(params: Vec<ParamVec<f64>>, sample_count: u64, version: u64) -> Vec<ClientUpdate<f64>> {
    params
        .into_iter()
        .enumerate()
        .map(|(i, p)| ClientUpdate {
            client_id: FAKE_CLIENT_BASE + i as u32,
            params: p,
            sample_count,
            base_version: version,
            authentic: false,
        })
        .collect()
}

/// MPAF: every fake pushes the global model toward the attacker's base
/// model, amplified by `lambda`. `sample_count` is the count the fakes
/// claim, mimicking authentic clients.
pub fn craft_mpaf(global: &GlobalTwin, cfg: &AttackConfig, sample_count: u64) -> Result<Vec<ClientUpdate<f64>>> {
    cfg.validate()?;
    if cfg.n_fake == 0 {
        return Ok(Vec::new());
    }
    let push = cfg.base_model.sub(&global.params)?;
    let p = global.params.add_scaled(&push, cfg.lambda)?;
    Ok(fakes(vec![p; cfg.n_fake], sample_count, global.version))
}

/// The TPI attacker's per-dimension scale guess, built only from its own
/// initial model and the public global model.
pub fn tpi_spread(attacker_init: &ParamVec<f64>, global: &ParamVec<f64>) -> Result<Vec<f64>> {
    Ok(attacker_init.sub(global)?.iter().map(|d| d.abs()).collect())
}

/// TPI: identical fakes moving from the global model toward the attacker's
/// initial model, each dimension clipped to `clip_c` times the spread guess.
pub fn craft_tpi(
    attacker_init: &ParamVec<f64>,
    global: &GlobalTwin,
    cfg: &AttackConfig,
    spread: &[f64],
    sample_count: u64,
) -> Result<Vec<ClientUpdate<f64>>> {
    cfg.validate()?;
    let direction = attacker_init.sub(&global.params)?;
    if spread.len() != direction.len() {
        return Err(Error::Dimension {
            expected: direction.len(),
            got: spread.len(),
        });
    }
    if cfg.n_fake == 0 {
        return Ok(Vec::new());
    }
    if direction.iter().all(|d| *d == 0.0) {
        return Err(Error::DegenerateAttack);
    }
    let p: Vec<f64> = global
        .params
        .iter()
        .zip(direction.iter())
        .zip(spread)
        .map(|((g, d), s)| {
            let bound = cfg.clip_c * s;
            g + (cfg.lambda * d).clamp(-bound, bound)
        })
        .collect();
    Ok(fakes(vec![ParamVec(p); cfg.n_fake], sample_count, global.version))
}

/// Appends the fabricated updates and shuffles the batch with `seed`.
pub fn inject(
    round_updates: Vec<ClientUpdate<f64>>,
    attack_updates: Vec<ClientUpdate<f64>>,
    seed: u64,
) -> Vec<ClientUpdate<f64>> {
    if attack_updates.is_empty() {
        return round_updates;
    }
    let mut all = round_updates;
    all.extend(attack_updates);
    all.shuffle(&mut stream(seed, "attack-shuffle"));
    all
}

/// Stateful adversary plugged into the aggregation hook: it sees the
/// global model and, for count mimicry, the authentic sample counts of the
/// previous aggregation of the same twin.
pub struct Attacker {
    pub kind: AttackKind,
    pub n_fake: Option<usize>,
    pub fake_fraction: f64,
    pub lambda: f64,
    pub clip_c: f64,
    pub base_model: ParamVec<f64>,
    pub attacker_init: ParamVec<f64>,
    seed: u64,
    prior_counts: BTreeMap<usize, u64>,
    calls: u64,
}

impl Attacker {
    pub fn from_config(cfg: &ExperimentConfig, kind: AttackKind) -> Self {
        let w = cfg.forecaster.window;
        let base = LinearForecaster::random(w, 1.0, &mut stream(cfg.seed, "mpaf-base")).pack();
        let init = LinearForecaster::random(w, 1.0, &mut stream(cfg.seed, "tpi-init")).pack();
        Attacker {
            kind,
            n_fake: cfg.attack.n_fake,
            fake_fraction: cfg.attack.fake_fraction,
            lambda: cfg.attack.lambda,
            clip_c: cfg.attack.clip_c,
            base_model: base,
            attacker_init: init,
            seed: cfg.seed,
            prior_counts: BTreeMap::new(),
            calls: 0,
        }
    }

    /// Fakes to add next to `authentic` real updates.
    pub fn fake_count(&self, authentic: usize) -> usize {
        if let Some(n) = self.n_fake {
            return n;
        }
        match self.kind {
            AttackKind::None => 0,
            AttackKind::Mpaf => (authentic as f64 * self.fake_fraction / (1.0 - self.fake_fraction)).round() as usize,
            AttackKind::Tpi => authentic + 1,
        }
    }

    fn config(&self, n_fake: usize) -> AttackConfig {
        AttackConfig {
            kind: self.kind,
            n_fake,
            lambda: self.lambda,
            clip_c: self.clip_c,
            base_model: self.base_model.clone(),
            attacker_init: self.attacker_init.clone(),
        }
    }

    pub fn intervene(&mut self, global: &GlobalTwin, updates: &mut Vec<ClientUpdate<f64>>) -> Result<()> {
        self.calls += 1;
        if self.kind == AttackKind::None {
            return Ok(());
        }
        let counts: Vec<f64> = updates.iter().map(|u| u.sample_count as f64).collect();
        let current = median(&counts).map(|m| m.round() as u64).unwrap_or(0);
        let mimic = self.prior_counts.insert(global.cluster_id, current).unwrap_or(current);
        let cfg = self.config(self.fake_count(updates.len()));
        let crafted = match self.kind {
            AttackKind::None => Vec::new(),
            AttackKind::Mpaf => craft_mpaf(global, &cfg, mimic)?,
            AttackKind::Tpi => {
                let spread = tpi_spread(&self.attacker_init, &global.params)?;
                match craft_tpi(&self.attacker_init, global, &cfg, &spread, mimic) {
                    // The global model already sits on the target: hold it there.
                    Err(Error::DegenerateAttack) => {
                        fakes(vec![global.params.clone(); cfg.n_fake], mimic, global.version)
                    }
                    other => other?,
                }
            }
        };
        let round_seed = derive_seed(self.seed, "attack-round").wrapping_add(self.calls);
        *updates = inject(std::mem::take(updates), crafted, round_seed);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "V-twin")]
    VTwin,
    #[serde(rename = "H-twin")]
    HTwin,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::VTwin => "V-twin",
            Phase::HTwin => "H-twin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackEvalResult {
    pub phase: Phase,
    pub rule: RuleKind,
    pub attack: AttackKind,
    pub mae: Metric<f64>,
    pub mse: Metric<f64>,
}

/// Which cells of the grid to run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackGrid {
    pub phases: Vec<Phase>,
    pub rules: Vec<RuleKind>,
    pub attacks: Vec<AttackKind>,
}

impl Default for AttackGrid {
    fn default() -> Self {
        AttackGrid {
            phases: vec![Phase::VTwin, Phase::HTwin],
            rules: RuleKind::ALL.to_vec(),
            attacks: AttackKind::ALL.to_vec(),
        }
    }
}

/// Runs every (phase, rule, attack) cell of `grid`. A V-twin cell attacks
/// the synchronous rounds; an H-twin cell starts from a clean synchronous
/// twin built with the same rule and attacks the asynchronous stream. Both
/// report test-split errors.
pub fn run_attack_eval(scn: &Scenario, grid: &AttackGrid) -> Result<Vec<AttackEvalResult>> {
    let cfg = &scn.config;
    let assignment = scn.cluster(cfg.clustering.k)?;
    let mut results = Vec::new();
    for &rule_kind in &grid.rules {
        let rule = scn.rule(rule_kind);
        let mut clean_vtwin = None;
        for &phase in &grid.phases {
            for &attack in &grid.attacks {
                let mut attacker = Attacker::from_config(cfg, attack);
                let mut hook = |g: &GlobalTwin, u: &mut Vec<ClientUpdate<f64>>| attacker.intervene(g, u);
                let quality = match phase {
                    Phase::VTwin => {
                        let runs = vtwin_phase(scn, &assignment, &rule, &mut hook)?;
                        let twins: Vec<GlobalTwin> = runs.into_iter().map(|r| r.twin).collect();
                        evaluate_twins(scn, &twins, &assignment.assignment)?
                    }
                    Phase::HTwin => {
                        if clean_vtwin.is_none() {
                            let runs = vtwin_phase(scn, &assignment, &rule, &mut |_, _| Ok(()))?;
                            clean_vtwin = Some(runs.into_iter().map(|r| r.twin).collect::<Vec<_>>());
                        }
                        let twins = clean_vtwin.clone().expect("set above");
                        let out = htwin_phase(
                            scn,
                            &assignment,
                            twins,
                            &rule,
                            HTwinRunOptions {
                                batch: Some(cfg.attack.htwin_batch),
                                ..Default::default()
                            },
                            &mut hook,
                        )?;
                        evaluate_twins(scn, &out.twins, &out.assignment)?
                    }
                };
                results.push(AttackEvalResult {
                    phase,
                    rule: rule_kind,
                    attack,
                    mae: quality.mae,
                    mse: quality.mse,
                });
            }
        }
    }
    Ok(results)
}

/// CSV `phase,rule,attack,mae,mse` with capped values.
pub fn write_attack_csv<W: std::io::Write>(results: &[AttackEvalResult], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| Error::State(format!("attack grid export failed: {e}"));
    w.write_record(["phase", "rule", "attack", "mae", "mse"]).map_err(err)?;
    for r in results {
        w.write_record([
            r.phase.to_string(),
            r.rule.to_string(),
            r.attack.to_string(),
            format!("{:.6}", r.mae.reported),
            format!("{:.6}", r.mse.reported),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::State(format!("attack grid export failed: {e}")))?;
    Ok(())
}

/// Text table with rules as rows and one MAE/MSE column pair per
/// (phase, attack).
pub fn format_attack_table(results: &[AttackEvalResult]) -> String {
    let mut phases: Vec<Phase> = results.iter().map(|r| r.phase).collect();
    phases.sort();
    phases.dedup();
    let mut attacks: Vec<AttackKind> = results.iter().map(|r| r.attack).collect();
    attacks.sort();
    attacks.dedup();
    let mut rules: Vec<RuleKind> = results.iter().map(|r| r.rule).collect();
    rules.sort();
    rules.dedup();

    let cols: Vec<(Phase, AttackKind)> = phases
        .iter()
        .flat_map(|p| attacks.iter().map(move |a| (*p, *a)))
        .collect();
    let cell = |rule, (phase, attack): (Phase, AttackKind)| {
        results
            .iter()
            .find(|r| r.rule == rule && r.phase == phase && r.attack == attack)
            .map(|r| (fmt_err(r.mae), fmt_err(r.mse)))
            .unwrap_or_else(|| ("-".into(), "-".into()))
    };
    let width = 8;
    let group = 2 * width + 1;
    let mut out = String::new();
    out.push_str(&format!("{:<8}", ""));
    for (p, a) in &cols {
        out.push_str(&format!(" | {:^group$}", format!("{p} {a}")));
    }
    out.push('\n');
    out.push_str(&format!("{:<8}", "Rule"));
    for _ in &cols {
        out.push_str(&format!(" | {:>width$} {:>width$}", "MAE", "MSE"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(8 + cols.len() * (group + 3)));
    out.push('\n');
    for rule in rules {
        out.push_str(&format!("{:<8}", rule.to_string()));
        for c in &cols {
            let (mae, mse) = cell(rule, *c);
            out.push_str(&format!(" | {mae:>width$} {mse:>width$}"));
        }
        out.push('\n');
    }
    out
}

fn fmt_err(m: Metric<f64>) -> String {
    if m.capped {
        format!("{REPORT_CAP:.1}")
    } else {
        format!("{:.3}", m.reported)
    }
}
