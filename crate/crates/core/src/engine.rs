//! Protocol state machine: election, build, verify, then accept, retry or
//! vote out; plus the audit trace it emits and end-of-epoch incentives.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Block, BlockReport, BlockViolation, NodeId, NodeProfile, Time, Transaction, TxClass};
use crate::numfmt::float;
use crate::peer_prediction::{Outcome, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Electing,
    Building,
    AwaitingVerdict,
    Halted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub phase: Phase,
    pub leader: Option<NodeId>,
    pub budget: u32,
    /// Accepted blocks in the current term, `b_CB`.
    pub blocks_done: u32,
    pub retry_pending: bool,
    pub term_index: u64,
    /// Whether the last term ended in a vote-out; selects the executor rule
    /// for the next election.
    pub voted_out: bool,
    /// Height of the block awaiting a verdict.
    pub pending: Option<u64>,
}

impl RoundState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Electing,
            leader: None,
            budget: 0,
            blocks_done: 0,
            retry_pending: false,
            term_index: 0,
            voted_out: false,
            pending: None,
        }
    }
}

impl Default for RoundState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectedInfo {
    pub leader: NodeId,
    pub budget: u32,
    pub executor: NodeId,
    pub candidates: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    Elected(ElectedInfo),
    BlockBuilt { block: Block, report: BlockReport },
    VerdictReached { height: u64, verdict: Verdict },
    Halt,
}

impl EngineEvent {
    fn name(&self) -> &'static str {
        match self {
            EngineEvent::Elected(_) => "elected",
            EngineEvent::BlockBuilt { .. } => "block-built",
            EngineEvent::VerdictReached { .. } => "verdict",
            EngineEvent::Halt => "halt",
        }
    }
}

/// Side effects the driver must carry out after a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    RunElection { voted_out: bool },
    BuildBlock { leader: NodeId, height: u64 },
    CollectVerdict { height: u64 },
    CommitBlock { height: u64 },
    RequeueTxs { height: u64 },
    RecordVoteOut { leader: NodeId },
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("event `{event}` is illegal in phase {phase:?}")]
    IllegalTransition { phase: Phase, event: &'static str },
    #[error("verdict for height {got} but height {expected:?} is pending")]
    HeightMismatch { expected: Option<u64>, got: u64 },
    #[error("block from {got} but the leader is {expected:?}")]
    WrongLeader { expected: Option<NodeId>, got: NodeId },
    #[error("elected budget must be at least 1")]
    ZeroBudget,
    #[error("invalid incentive parameter: {0}")]
    InvalidIncentive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Elected,
    BlockProposed,
    Verdict,
    BlockAccepted,
    BlockRejectedRetry,
    LeaderVotedOut,
    IncentivesPaid,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Elected,
        EventKind::BlockProposed,
        EventKind::Verdict,
        EventKind::BlockAccepted,
        EventKind::BlockRejectedRetry,
        EventKind::LeaderVotedOut,
        EventKind::IncentivesPaid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Elected => "Elected",
            EventKind::BlockProposed => "BlockProposed",
            EventKind::Verdict => "Verdict",
            EventKind::BlockAccepted => "BlockAccepted",
            EventKind::BlockRejectedRetry => "BlockRejectedRetry",
            EventKind::LeaderVotedOut => "LeaderVotedOut",
            EventKind::IncentivesPaid => "IncentivesPaid",
        }
    }
}

impl FromStr for EventKind {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceParseError(format!("unknown event kind `{s}`")))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("malformed trace line: {0}")]
pub struct TraceParseError(pub String);

/// One audit-trace record. Serialized as a single line:
/// `t=<time> seq=<n> kind=<Kind> key=value ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEvent {
    pub time: Time,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Vec<(String, String)>,
}

impl LedgerEvent {
    pub fn new(time: Time, seq: u64, kind: EventKind) -> Self {
        Self {
            time,
            seq,
            kind,
            payload: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.payload.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_field<T: FromStr>(&self, key: &str) -> Result<T, TraceParseError> {
        let raw = self
            .get(key)
            .ok_or_else(|| TraceParseError(format!("{} event lacks `{key}`", self.kind.name())))?;
        raw.parse()
            .map_err(|_| TraceParseError(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn to_line(&self) -> String {
        let mut line = format!("t={} seq={} kind={}", float(self.time), self.seq, self.kind.name());
        for (k, v) in &self.payload {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            line.push_str(v);
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, TraceParseError> {
        let mut fields = line.split_whitespace().map(|f| {
            f.split_once('=')
                .ok_or_else(|| TraceParseError(format!("field `{f}` lacks `=`")))
        });
        let mut head = |key: &str| -> Result<&str, TraceParseError> {
            match fields.next() {
                Some(Ok((k, v))) if k == key => Ok(v),
                _ => Err(TraceParseError(format!("expected `{key}=` field"))),
            }
        };
        let time: Time = head("t")?
            .parse()
            .map_err(|_| TraceParseError("bad time".into()))?;
        let seq: u64 = head("seq")?
            .parse()
            .map_err(|_| TraceParseError("bad seq".into()))?;
        let kind: EventKind = head("kind")?.parse()?;
        let payload = fields
            .map(|f| f.map(|(k, v)| (k.to_string(), v.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            time,
            seq,
            kind,
            payload,
        })
    }
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    let parts: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(sep)
    }
}

fn split_list(raw: &str, sep: char) -> impl Iterator<Item = &str> {
    raw.split(sep).filter(|s| !s.is_empty() && *s != "-")
}

/// `txid:class:arrival;...`
pub fn encode_txs(txs: &[Transaction]) -> String {
    join(
        txs.iter()
            .map(|t| format!("{}:{}:{}", t.txid, t.class.tag(), float(t.arrival_time))),
        ";",
    )
}

pub fn decode_txs(raw: &str) -> Result<Vec<Transaction>, TraceParseError> {
    split_list(raw, ';')
        .map(|item| {
            let bad = || TraceParseError(format!("bad transaction `{item}`"));
            let mut parts = item.split(':');
            let txid = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let class = parts
                .next()
                .and_then(|s| s.chars().next())
                .and_then(TxClass::from_tag)
                .ok_or_else(bad)?;
            let arrival = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok(Transaction::new(txid, class, 0.0, arrival))
        })
        .collect()
}

pub fn encode_nodes(nodes: &[NodeId]) -> String {
    join(nodes.iter().map(|n| n.0), ",")
}

pub fn decode_nodes(raw: &str) -> Result<Vec<NodeId>, TraceParseError> {
    split_list(raw, ',')
        .map(|s| {
            s.parse()
                .map(NodeId)
                .map_err(|_| TraceParseError(format!("bad node id `{s}`")))
        })
        .collect()
}

/// `node:opinion:trust;...` with opinion `1` for accept.
pub fn encode_opinions(opinions: &BTreeMap<NodeId, (bool, f64)>) -> String {
    join(
        opinions
            .iter()
            .map(|(n, (op, t))| format!("{}:{}:{}", n.0, u8::from(*op), float(*t))),
        ";",
    )
}

pub fn decode_opinions(raw: &str) -> Result<BTreeMap<NodeId, (bool, f64)>, TraceParseError> {
    split_list(raw, ';')
        .map(|item| {
            let bad = || TraceParseError(format!("bad opinion `{item}`"));
            let mut parts = item.split(':');
            let node = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let op = match parts.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad()),
            };
            let trust = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok((NodeId(node), (op, trust)))
        })
        .collect()
}

pub fn encode_violations(report: &BlockReport) -> String {
    join(report.violations.iter().map(|v| v.name()), ",")
}

pub fn decode_violations(raw: &str) -> Result<Vec<BlockViolation>, TraceParseError> {
    split_list(raw, ',')
        .map(|s| {
            BlockViolation::from_name(s)
                .ok_or_else(|| TraceParseError(format!("unknown violation `{s}`")))
        })
        .collect()
}

fn outcome_from_name(s: &str) -> Option<Outcome> {
    [Outcome::Accept, Outcome::RejectRetry, Outcome::RejectVoteOut]
        .into_iter()
        .find(|o| o.name() == s)
}

pub fn parse_outcome(raw: &str) -> Result<Outcome, TraceParseError> {
    outcome_from_name(raw).ok_or_else(|| TraceParseError(format!("unknown outcome `{raw}`")))
}

/// Advances the protocol by one event.
///
/// Ledger events are numbered from `next_seq`. An illegal event leaves the
/// caller's state untouched and returns an error.
pub fn step(
    state: &RoundState,
    event: &EngineEvent,
    now: Time,
    next_seq: u64,
) -> Result<(RoundState, Vec<LedgerEvent>, Vec<Command>), ProtocolError> {
    let illegal = || ProtocolError::IllegalTransition {
        phase: state.phase,
        event: event.name(),
    };
    let mut s = state.clone();
    let mut seq = next_seq;
    let mut ev = |kind| {
        let e = LedgerEvent::new(now, seq, kind);
        seq += 1;
        e
    };
    let mut events = Vec::new();
    let mut commands = Vec::new();

    match (state.phase, event) {
        (Phase::Halted, _) => return Err(illegal()),
        (_, EngineEvent::Halt) => {
            s.phase = Phase::Halted;
        }
        (Phase::Electing, EngineEvent::Elected(info)) => {
            if info.budget == 0 {
                return Err(ProtocolError::ZeroBudget);
            }
            s.phase = Phase::Building;
            s.leader = Some(info.leader);
            s.budget = info.budget;
            s.blocks_done = 0;
            s.retry_pending = false;
            s.term_index += 1;
            events.push(
                ev(EventKind::Elected)
                    .with("term", s.term_index)
                    .with("leader", info.leader)
                    .with("budget", info.budget)
                    .with("executor", info.executor)
                    .with("after_voteout", u8::from(state.voted_out))
                    .with("candidates", encode_nodes(&info.candidates)),
            );
            s.voted_out = false;
            commands.push(Command::BuildBlock {
                leader: info.leader,
                height: 0,
            });
        }
        (Phase::Building, EngineEvent::BlockBuilt { block, report }) => {
            if Some(block.leader) != state.leader {
                return Err(ProtocolError::WrongLeader {
                    expected: state.leader,
                    got: block.leader,
                });
            }
            s.phase = Phase::AwaitingVerdict;
            s.pending = Some(block.height);
            events.push(
                ev(EventKind::BlockProposed)
                    .with("height", block.height)
                    .with("leader", block.leader)
                    .with("created", float(block.created_at))
                    .with("last_tx", float(block.last_tx_time))
                    .with("retry", u8::from(state.retry_pending))
                    .with("txs", encode_txs(&block.txs))
                    .with("violations", encode_violations(report)),
            );
            commands.push(Command::CollectVerdict {
                height: block.height,
            });
        }
        (Phase::AwaitingVerdict, EngineEvent::VerdictReached { height, verdict }) => {
            if state.pending != Some(*height) {
                return Err(ProtocolError::HeightMismatch {
                    expected: state.pending,
                    got: *height,
                });
            }
            let leader = state.leader.ok_or_else(illegal)?;
            s.pending = None;
            events.push(
                ev(EventKind::Verdict)
                    .with("height", height)
                    .with("leader", leader)
                    .with("d", float(verdict.decision))
                    .with("h", verdict.trustworthy)
                    .with("outcome", verdict.outcome.name())
                    .with("opinions", encode_opinions(&verdict.opinions)),
            );
            match verdict.outcome {
                Outcome::Accept => {
                    s.blocks_done += 1;
                    s.retry_pending = false;
                    events.push(
                        ev(EventKind::BlockAccepted)
                            .with("height", height)
                            .with("leader", leader)
                            .with("done", s.blocks_done)
                            .with("budget", s.budget),
                    );
                    commands.push(Command::CommitBlock { height: *height });
                    if s.blocks_done >= s.budget {
                        s.phase = Phase::Electing;
                        commands.push(Command::RunElection { voted_out: false });
                    } else {
                        s.phase = Phase::Building;
                        commands.push(Command::BuildBlock {
                            leader,
                            height: height + 1,
                        });
                    }
                }
                Outcome::RejectRetry => {
                    s.retry_pending = true;
                    s.phase = Phase::Building;
                    events.push(
                        ev(EventKind::BlockRejectedRetry)
                            .with("height", height)
                            .with("leader", leader)
                            .with("d", float(verdict.decision)),
                    );
                    commands.push(Command::RequeueTxs { height: *height });
                    commands.push(Command::BuildBlock {
                        leader,
                        height: *height,
                    });
                }
                Outcome::RejectVoteOut => {
                    s.retry_pending = false;
                    s.voted_out = true;
                    s.phase = Phase::Electing;
                    events.push(
                        ev(EventKind::LeaderVotedOut)
                            .with("height", height)
                            .with("leader", leader)
                            .with("d", float(verdict.decision))
                            .with("reason", "decision-at-or-below-d_min"),
                    );
                    commands.push(Command::RequeueTxs { height: *height });
                    commands.push(Command::RecordVoteOut { leader });
                    commands.push(Command::RunElection { voted_out: true });
                }
            }
        }
        _ => return Err(illegal()),
    }
    Ok((s, events, commands))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncentiveConfig {
    /// Fraction of the epoch budget paid to followers.
    pub follower_share: f64,
    /// Pay leaders the normal-transaction fees of their accepted blocks.
    pub fee_pass_through: bool,
}

impl Default for IncentiveConfig {
    fn default() -> Self {
        Self {
            follower_share: 0.5,
            fee_pass_through: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncentiveLedger {
    pub follower_rewards: BTreeMap<NodeId, f64>,
    pub leader_rewards: BTreeMap<NodeId, f64>,
    pub fee_rewards: BTreeMap<NodeId, f64>,
    pub epoch_budget: f64,
}

impl IncentiveLedger {
    /// Budget paid out, excluding fee pass-through.
    pub fn paid_from_budget(&self) -> f64 {
        self.follower_rewards.values().sum::<f64>() + self.leader_rewards.values().sum::<f64>()
    }

    pub fn total_for(&self, node: NodeId) -> f64 {
        [&self.follower_rewards, &self.leader_rewards, &self.fee_rewards]
            .iter()
            .map(|m| m.get(&node).copied().unwrap_or(0.0))
            .sum()
    }

    /// One `IncentivesPaid` record per node with a nonzero payout.
    pub fn to_events(&self, time: Time, next_seq: u64) -> Vec<LedgerEvent> {
        let mut nodes: Vec<NodeId> = self
            .follower_rewards
            .keys()
            .chain(self.leader_rewards.keys())
            .chain(self.fee_rewards.keys())
            .copied()
            .collect();
        nodes.sort();
        nodes.dedup();
        nodes
            .into_iter()
            .filter(|&n| self.total_for(n) > 0.0)
            .enumerate()
            .map(|(i, n)| {
                let get = |m: &BTreeMap<NodeId, f64>| float(m.get(&n).copied().unwrap_or(0.0));
                LedgerEvent::new(time, next_seq + i as u64, EventKind::IncentivesPaid)
                    .with("node", n)
                    .with("follower", get(&self.follower_rewards))
                    .with("leader", get(&self.leader_rewards))
                    .with("fees", get(&self.fee_rewards))
            })
            .collect()
    }
}

/// Splits an epoch budget: the follower share by normalized trust, the rest
/// by accepted-block counts, plus optional fee pass-through.
///
/// A share with no eligible recipient (all trust zero, or no accepted
/// blocks) is left unpaid.
pub fn distribute_incentives(
    profiles: &[NodeProfile],
    accepted_blocks: &BTreeMap<NodeId, u32>,
    fees: &BTreeMap<NodeId, f64>,
    budget: f64,
    cfg: &IncentiveConfig,
) -> Result<IncentiveLedger, ProtocolError> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(ProtocolError::InvalidIncentive("budget must be a non-negative number"));
    }
    if !(0.0..=1.0).contains(&cfg.follower_share) {
        return Err(ProtocolError::InvalidIncentive("follower share must lie in [0, 1]"));
    }
    let follower_pot = budget * cfg.follower_share;
    let leader_pot = budget - follower_pot;

    let weights: Vec<(NodeId, f64)> = profiles
        .iter()
        .map(|p| (p.node, p.normalized_trust().max(0.0)))
        .collect();
    let total_trust: f64 = weights.iter().map(|(_, w)| w).sum();
    let follower_rewards = weights
        .iter()
        .map(|&(n, w)| {
            let r = if total_trust > 0.0 {
                follower_pot * w / total_trust
            } else {
                0.0
            };
            (n, r)
        })
        .collect();

    let total_blocks: u64 = accepted_blocks.values().map(|&b| u64::from(b)).sum();
    let leader_rewards = accepted_blocks
        .iter()
        .map(|(&n, &b)| {
            let r = if total_blocks > 0 {
                leader_pot * f64::from(b) / total_blocks as f64
            } else {
                0.0
            };
            (n, r)
        })
        .collect();

    let fee_rewards = if cfg.fee_pass_through {
        fees.iter()
            .filter(|(n, _)| accepted_blocks.get(n).copied().unwrap_or(0) > 0)
            .map(|(&n, &f)| (n, f.max(0.0)))
            .collect()
    } else {
        BTreeMap::new()
    };

    Ok(IncentiveLedger {
        follower_rewards,
        leader_rewards,
        fee_rewards,
        epoch_budget: budget,
    })
}
