//! Canned adversarial scenarios.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use super::config::{BehaviorKind, BehaviorProfile, ScenarioConfig};
use super::metrics::MetricsRecord;
use super::scenario::{run_scenario, SimError};
use crate::engine::{EventKind, LedgerEvent};
use crate::model::NodeId;
use crate::numfmt::float;
use crate::peer_prediction::Outcome;

/// Node that misbehaves as leader in the leader-side attacks.
pub const ATTACKER: NodeId = NodeId(3);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    /// The first leader proposes empty blocks.
    EmptyBlock,
    /// A share of the followers report as one bloc against their signals.
    Collusion { fraction: f64 },
    /// The first leader sits on its trigger for `delay` seconds.
    Laggard { delay: f64 },
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Attack::EmptyBlock => "empty-block",
            Attack::Collusion { .. } => "collusion",
            Attack::Laggard { .. } => "laggard",
        }
    }
}

impl FromStr for Attack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty-block" => Ok(Attack::EmptyBlock),
            "collusion" => Ok(Attack::Collusion { fraction: 0.25 }),
            "laggard" => Ok(Attack::Laggard { delay: 5.0 }),
            other => Err(format!(
                "unknown scenario `{other}` (expected empty-block, collusion or laggard)"
            )),
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scenario for `attack`: an otherwise honest network.
pub fn attack_config(attack: Attack, seed: u64) -> ScenarioConfig {
    match attack {
        Attack::EmptyBlock | Attack::Laggard { .. } => {
            let mut cfg = ScenarioConfig::honest(10, seed, 120.0);
            let kind = match attack {
                Attack::Laggard { delay } => BehaviorKind::LazyLeader { delay },
                _ => BehaviorKind::EmptyBlockAttacker,
            };
            cfg.behaviors[ATTACKER.0 as usize] = BehaviorProfile::with_kind(kind);
            cfg.initial_leader = Some(ATTACKER);
            cfg
        }
        Attack::Collusion { fraction } => {
            let mut cfg = ScenarioConfig::honest(20, seed, 300.0);
            // Leader duty rotates, so the bloc is sized against all but one node.
            let members = ((cfg.n_nodes - 1) as f64 * fraction).floor() as usize;
            for b in cfg.behaviors.iter_mut().rev().take(members) {
                *b = BehaviorProfile::with_kind(BehaviorKind::Colluder { group: 0 });
            }
            cfg
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub attack: Attack,
    pub seed: u64,
    pub attacker_proposals: usize,
    pub attacker_accepted: usize,
    pub attacker_voted_out: usize,
    /// Whether the attacker's first proposal ended in a vote-out.
    pub voted_out_on_first_proposal: bool,
    pub verdicts: usize,
    /// Verdicts whose outcome differs from the all-truthful counterfactual.
    pub verdicts_changed: usize,
    /// Changes that turn an accept into a vote-out or back, or accept a bad block.
    pub decisive_changes: usize,
    pub chain_height: u64,
}

impl AttackSummary {
    pub fn change_rate(&self) -> f64 {
        ratio(self.verdicts_changed, self.verdicts)
    }

    pub fn decisive_rate(&self) -> f64 {
        ratio(self.decisive_changes, self.verdicts)
    }

    pub const CSV_HEADER: &'static str = "attack,seed,attacker_proposals,attacker_accepted,attacker_voted_out,voted_out_on_first_proposal,verdicts,verdicts_changed,decisive_changes,change_rate,chain_height";

    pub fn write_csv<W: Write>(rows: &[AttackSummary], mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.attack,
                r.seed,
                r.attacker_proposals,
                r.attacker_accepted,
                r.attacker_voted_out,
                u8::from(r.voted_out_on_first_proposal),
                r.verdicts,
                r.verdicts_changed,
                r.decisive_changes,
                float(r.change_rate()),
                r.chain_height
            )?;
        }
        Ok(())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn summarize(
    attack: Attack,
    seed: u64,
    metrics: &MetricsRecord,
    trace: &[LedgerEvent],
) -> AttackSummary {
    let leader_of = |e: &LedgerEvent| e.get("leader").map(|l| l == ATTACKER.0.to_string());
    let proposals = trace
        .iter()
        .filter(|e| e.kind == EventKind::BlockProposed && leader_of(e) == Some(true))
        .count();
    let voted_out = trace
        .iter()
        .filter(|e| e.kind == EventKind::LeaderVotedOut && leader_of(e) == Some(true))
        .count();
    let first_outcome = metrics
        .built
        .iter()
        .find(|b| b.leader == ATTACKER)
        .and_then(|b| b.outcome);
    let changed = metrics
        .verdicts
        .iter()
        .filter(|v| v.outcome != v.truthful_outcome)
        .count();
    let decisive = metrics
        .verdicts
        .iter()
        .filter(|v| {
            let swap = matches!(
                (v.outcome, v.truthful_outcome),
                (Outcome::Accept, Outcome::RejectVoteOut) | (Outcome::RejectVoteOut, Outcome::Accept)
            );
            swap || (v.outcome == Outcome::Accept && !v.good)
        })
        .count();
    AttackSummary {
        attack,
        seed,
        attacker_proposals: proposals,
        attacker_accepted: metrics.accepted_by(ATTACKER),
        attacker_voted_out: voted_out,
        voted_out_on_first_proposal: first_outcome == Some(Outcome::RejectVoteOut),
        verdicts: metrics.verdicts.len(),
        verdicts_changed: changed,
        decisive_changes: decisive,
        chain_height: metrics.chain_height,
    }
}

/// Runs `attack` with `seed` and summarizes it.
pub fn run_attack(
    attack: Attack,
    seed: u64,
) -> Result<(AttackSummary, MetricsRecord, Vec<LedgerEvent>), SimError> {
    let (metrics, trace) = run_scenario(&attack_config(attack, seed))?;
    Ok((summarize(attack, seed, &metrics, &trace), metrics, trace))
}
