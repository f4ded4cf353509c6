//! Deterministic simulator: scenario files, the event loop, metrics, trace
//! audit, trust experiments and attack scenarios.

pub mod attacks;
pub mod audit;
pub mod config;
pub mod figures;
pub mod metrics;
pub mod scenario;

pub use attacks::{attack_config, run_attack, Attack, AttackSummary};
pub use audit::{audit_trace, AuditReport};
pub use config::{BehaviorKind, BehaviorProfile, ConfigError, ScenarioConfig};
pub use figures::{run_fig7, run_fig8, Fig7Config, Fig7Result, Fig8Config, Fig8Result};
pub use metrics::MetricsRecord;
pub use scenario::{run_scenario, SimError};
