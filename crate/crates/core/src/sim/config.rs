//! Scenario files.
//!
//! A scenario is a TOML document of top-level `key = value` protocol and
//! workload parameters plus behavior sections: `[behavior.default]` applies
//! to every node, `[behavior.<id>]` overrides a single node. Unknown keys are
//! rejected.
//!
//! ```toml
//! n_nodes = 10
//! seed = 7
//! duration = 300.0
//! tx_rate_normal = 1.0
//! tx_rate_priority = 0.1
//!
//! [behavior.default]
//! kind = "honest"
//!
//! [behavior.3]
//! kind = "empty-block-attacker"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::NodeId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorKind {
    Honest,
    /// Honest for the first rounds, then inverts its report with `flip_prob`.
    MaliciousReviewer { flip_prob: f64 },
    /// Builds `delay` seconds after its trigger fires.
    LazyLeader { delay: f64 },
    /// Proposes an empty block as soon as it leads.
    EmptyBlockAttacker,
    Colluder { group: u32 },
}

impl BehaviorKind {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::Honest => "honest",
            BehaviorKind::MaliciousReviewer { .. } => "malicious-reviewer",
            BehaviorKind::LazyLeader { .. } => "lazy-leader",
            BehaviorKind::EmptyBlockAttacker => "empty-block-attacker",
            BehaviorKind::Colluder { .. } => "colluder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorProfile {
    pub kind: BehaviorKind,
    pub p_fa: f64,
    pub p_md: f64,
    /// Added to every message latency of this node.
    pub extra_latency: f64,
}

impl BehaviorProfile {
    pub fn honest() -> Self {
        Self {
            kind: BehaviorKind::Honest,
            p_fa: 0.1,
            p_md: 0.1,
            extra_latency: 0.0,
        }
    }

    pub fn with_kind(kind: BehaviorKind) -> Self {
        Self {
            kind,
            ..Self::honest()
        }
    }
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorTable {
    kind: Option<String>,
    flip_prob: Option<f64>,
    delay: Option<f64>,
    group: Option<u32>,
    p_fa: Option<f64>,
    p_md: Option<f64>,
    latency: Option<f64>,
}

impl BehaviorTable {
    fn over(&self, base: &BehaviorTable) -> BehaviorTable {
        // A node section that names its own kind does not inherit the kind's
        // parameters from the default section.
        let kind_params = self.kind.is_none();
        BehaviorTable {
            kind: self.kind.clone().or_else(|| base.kind.clone()),
            flip_prob: self.flip_prob.or(base.flip_prob.filter(|_| kind_params)),
            delay: self.delay.or(base.delay.filter(|_| kind_params)),
            group: self.group.or(base.group.filter(|_| kind_params)),
            p_fa: self.p_fa.or(base.p_fa),
            p_md: self.p_md.or(base.p_md),
            latency: self.latency.or(base.latency),
        }
    }

    fn resolve(&self, section: &str) -> Result<BehaviorProfile, ConfigError> {
        let key = |k: &str| format!("behavior.{section}.{k}");
        let kind = match self.kind.as_deref().unwrap_or("honest") {
            "honest" => BehaviorKind::Honest,
            "malicious-reviewer" => {
                let flip_prob = self.flip_prob.unwrap_or(1.0);
                if !(0.0..=1.0).contains(&flip_prob) {
                    return Err(invalid(&key("flip_prob"), "must lie in [0, 1]"));
                }
                BehaviorKind::MaliciousReviewer { flip_prob }
            }
            "lazy-leader" => {
                let delay = self.delay.unwrap_or(5.0);
                if !(delay >= 0.0) {
                    return Err(invalid(&key("delay"), "must be non-negative"));
                }
                BehaviorKind::LazyLeader { delay }
            }
            "empty-block-attacker" => BehaviorKind::EmptyBlockAttacker,
            "colluder" => BehaviorKind::Colluder {
                group: self.group.unwrap_or(0),
            },
            other => return Err(invalid(&key("kind"), format!("unknown behavior `{other}`"))),
        };
        let defaults = BehaviorProfile::honest();
        let p_fa = self.p_fa.unwrap_or(defaults.p_fa);
        let p_md = self.p_md.unwrap_or(defaults.p_md);
        for (name, v) in [("p_fa", p_fa), ("p_md", p_md)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(&key(name), "must lie in [0, 1)"));
            }
        }
        if p_fa + p_md >= 1.0 {
            return Err(invalid(&key("p_fa"), "p_fa + p_md must be below 1"));
        }
        let extra_latency = self.latency.unwrap_or(0.0);
        if !(extra_latency >= 0.0) {
            return Err(invalid(&key("latency"), "must be non-negative"));
        }
        Ok(BehaviorProfile {
            kind,
            p_fa,
            p_md,
            extra_latency,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_nodes: usize,
    seed: u64,
    duration: f64,
    tx_rate_normal: f64,
    tx_rate_priority: f64,
    m: Option<usize>,
    w: Option<f64>,
    b_max: Option<u32>,
    n_candidates: Option<usize>,
    d_min: Option<f64>,
    d_max: Option<f64>,
    alpha: Option<f64>,
    world_prior: Option<f64>,
    fee_pass_through: Option<bool>,
    normal_fee: Option<f64>,
    follower_share: Option<f64>,
    incentive_budget: Option<f64>,
    network_latency: Option<[f64; 2]>,
    lag_tolerance: Option<f64>,
    initial_leader: Option<u32>,
    classifier_seed: Option<u64>,
    classifier_rows: Option<usize>,
    #[serde(default)]
    behavior: BTreeMap<String, BehaviorTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_nodes: usize,
    pub seed: u64,
    pub duration: f64,
    pub tx_rate_normal: f64,
    pub tx_rate_priority: f64,
    /// Block capacity.
    pub m: usize,
    /// Maximum wait of the oldest normal transaction.
    pub w: f64,
    pub b_max: u32,
    pub n_candidates: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub alpha: f64,
    pub world_prior: f64,
    pub fee_pass_through: bool,
    pub normal_fee: f64,
    pub follower_share: f64,
    pub incentive_budget: f64,
    /// Per-message latency bounds, seconds.
    pub network_latency: (f64, f64),
    /// A block created later than this after its trigger counts as bad work.
    pub lag_tolerance: f64,
    pub initial_leader: Option<NodeId>,
    pub classifier_seed: u64,
    pub classifier_rows: usize,
    /// One entry per node, in node order.
    pub behaviors: Vec<BehaviorProfile>,
}

impl ScenarioConfig {
    /// An all-honest scenario with default protocol parameters.
    pub fn honest(n_nodes: usize, seed: u64, duration: f64) -> Self {
        Self {
            n_nodes,
            seed,
            duration,
            tx_rate_normal: 1.0,
            tx_rate_priority: 0.1,
            m: 10,
            w: 5.0,
            b_max: 5,
            n_candidates: crate::election::default_candidate_count(n_nodes),
            d_min: 0.33,
            d_max: 0.67,
            alpha: 0.5,
            world_prior: 0.8,
            fee_pass_through: true,
            normal_fee: 0.01,
            follower_share: 0.5,
            incentive_budget: 100.0,
            network_latency: (0.05, 0.5),
            lag_tolerance: 1.0,
            initial_leader: None,
            classifier_seed: 0,
            classifier_rows: 1000,
            behaviors: vec![BehaviorProfile::honest(); n_nodes],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut cfg = Self::honest(raw.n_nodes.max(1), raw.seed, raw.duration);
        cfg.n_nodes = raw.n_nodes;
        cfg.tx_rate_normal = raw.tx_rate_normal;
        cfg.tx_rate_priority = raw.tx_rate_priority;
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = raw.$field { cfg.$field = v; } )* };
        }
        take!(
            m, w, b_max, n_candidates, d_min, d_max, alpha, world_prior, fee_pass_through,
            normal_fee, follower_share, incentive_budget, lag_tolerance, classifier_seed,
            classifier_rows
        );
        if let Some([lo, hi]) = raw.network_latency {
            cfg.network_latency = (lo, hi);
        }
        cfg.initial_leader = raw.initial_leader.map(NodeId);

        let default = raw.behavior.get("default").cloned().unwrap_or_default();
        let mut overrides = BTreeMap::new();
        for (section, table) in &raw.behavior {
            if section == "default" {
                continue;
            }
            let id: usize = section
                .parse()
                .map_err(|_| invalid(&format!("behavior.{section}"), "section must be `default` or a node id"))?;
            if id >= raw.n_nodes {
                return Err(invalid(
                    &format!("behavior.{section}"),
                    format!("node id out of range for {} nodes", raw.n_nodes),
                ));
            }
            overrides.insert(id, table.over(&default).resolve(section)?);
        }
        let base = default.resolve("default")?;
        cfg.behaviors = (0..raw.n_nodes)
            .map(|i| overrides.get(&i).copied().unwrap_or(base))
            .collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 10 {
            return Err(invalid("n_nodes", "must be at least 10"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be positive"));
        }
        for (key, rate) in [
            ("tx_rate_normal", self.tx_rate_normal),
            ("tx_rate_priority", self.tx_rate_priority),
        ] {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(invalid(key, "must be a non-negative rate"));
            }
        }
        if self.m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if !(self.w > 0.0) {
            return Err(invalid("w", "must be positive"));
        }
        if self.b_max == 0 {
            return Err(invalid("b_max", "must be at least 1"));
        }
        let cap = crate::election::candidate_cap(self.n_nodes);
        if self.n_candidates == 0 || self.n_candidates > cap {
            return Err(invalid("n_candidates", format!("must lie in [1, {cap}]")));
        }
        if !(0.0 <= self.d_min && self.d_min < self.d_max && self.d_max <= 1.0) {
            return Err(invalid("d_min", "need 0 <= d_min < d_max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1]"));
        }
        if !(self.world_prior > 0.0 && self.world_prior < 1.0) {
            return Err(invalid("world_prior", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.follower_share) {
            return Err(invalid("follower_share", "must lie in [0, 1]"));
        }
        if !(self.incentive_budget >= 0.0) || !(self.normal_fee >= 0.0) {
            return Err(invalid("incentive_budget", "budget and fees must be non-negative"));
        }
        let (lo, hi) = self.network_latency;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid("network_latency", "need 0 <= min <= max"));
        }
        if !(self.lag_tolerance >= 0.0) {
            return Err(invalid("lag_tolerance", "must be non-negative"));
        }
        if let Some(l) = self.initial_leader {
            if l.0 as usize >= self.n_nodes {
                return Err(invalid("initial_leader", "node id out of range"));
            }
        }
        if self.classifier_rows < 10 {
            return Err(invalid("classifier_rows", "must be at least 10"));
        }
        if self.behaviors.len() != self.n_nodes {
            return Err(invalid("behavior", "behaviors must cover every node"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "n_nodes = 10\nseed = 1\nduration = 60.0\ntx_rate_normal = 1.0\ntx_rate_priority = 0.1\n";

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg, ScenarioConfig::honest(10, 1, 60.0));
        assert_eq!(cfg.n_candidates, 1);
    }

    #[test]
    fn behavior_sections() {
        let text = format!(
            "{BASE}[behavior.default]\np_fa = 0.2\n\n[behavior.3]\nkind = \"malicious-reviewer\"\nflip_prob = 0.7\n\n[behavior.4]\nkind = \"lazy-leader\"\ndelay = 2.5\nlatency = 0.3\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.behaviors[0].p_fa, 0.2);
        assert_eq!(cfg.behaviors[3].kind, BehaviorKind::MaliciousReviewer { flip_prob: 0.7 });
        assert_eq!(cfg.behaviors[3].p_fa, 0.2);
        assert_eq!(cfg.behaviors[4].kind, BehaviorKind::LazyLeader { delay: 2.5 });
        assert_eq!(cfg.behaviors[4].extra_latency, 0.3);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            format!("{BASE}bogus = 1\n"),
            format!("{BASE}[behavior.3]\nflavor = 1\n"),
            format!("{BASE}[behavior.12]\nkind = \"honest\"\n"),
            format!("{BASE}[behavior.x]\nkind = \"honest\"\n"),
            format!("{BASE}[behavior.1]\nkind = \"saboteur\"\n"),
            format!("{BASE}d_min = 0.8\n"),
            format!("{BASE}n_candidates = 2\n"),
            format!("{BASE}[behavior.1]\nkind = \"malicious-reviewer\"\nflip_prob = 1.5\n"),
            format!("{BASE}[behavior.1]\np_fa = 0.5\np_md = 0.5\n"),
            "n_nodes = 10\n".to_string(),
        ] {
            assert!(ScenarioConfig::from_toml_str(&text).is_err(), "accepted:\n{text}");
        }
    }
}
