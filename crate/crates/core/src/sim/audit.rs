//! Offline trace audit: replays a recorded trace through block validation,
//! opinion aggregation and the protocol state machine and reports every
//! record it cannot reproduce.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{
    decode_nodes, decode_opinions, decode_txs, decode_violations, parse_outcome, step, ElectedInfo,
    EngineEvent, EventKind, LedgerEvent, RoundState, TraceParseError,
};
use crate::model::{validate_block, Block, BlockStatus, NodeId};
use crate::peer_prediction::{aggregate, Outcome, Thresholds};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub transitions_replayed: usize,
    pub verdicts_checked: usize,
    pub blocks_checked: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Auditor<'a> {
    trace: &'a [LedgerEvent],
    capacity: usize,
    thresholds: Thresholds,
    report: AuditReport,
    state: RoundState,
    committed: BTreeSet<u64>,
    last_verdict: Option<(u64, f64, Outcome)>,
    accepted_heights: Vec<u64>,
    pending_txs: BTreeMap<u64, Vec<u64>>,
}

/// Audits `trace` for a scenario with block capacity `capacity`.
pub fn audit_trace(trace: &[LedgerEvent], capacity: usize, thresholds: &Thresholds) -> AuditReport {
    let mut a = Auditor {
        trace,
        capacity,
        thresholds: *thresholds,
        report: AuditReport::default(),
        state: RoundState::new(),
        committed: BTreeSet::new(),
        last_verdict: None,
        accepted_heights: Vec::new(),
        pending_txs: BTreeMap::new(),
    };
    a.run();
    a.report
}

impl Auditor<'_> {
    fn flag(&mut self, at: usize, msg: impl Into<String>) {
        self.report
            .violations
            .push(format!("seq {}: {}", self.trace[at].seq, msg.into()));
    }

    fn run(&mut self) {
        for (i, e) in self.trace.iter().enumerate() {
            if e.seq != i as u64 {
                self.flag(i, format!("expected seq {i}"));
            }
            if i > 0 && e.time < self.trace[i - 1].time {
                self.flag(i, "time runs backwards");
            }
        }
        let mut i = 0;
        while i < self.trace.len() {
            let consumed = match self.replay(i) {
                Ok(n) => n,
                Err(e) => {
                    self.flag(i, e.0);
                    1
                }
            };
            i += consumed.max(1);
        }
        let contiguous = self
            .accepted_heights
            .windows(2)
            .all(|w| w[1] == w[0] + 1);
        if !contiguous {
            self.report
                .violations
                .push("accepted heights are not contiguous".into());
        }
    }

    /// Replays the record at `i`; returns how many records it accounts for.
    fn replay(&mut self, i: usize) -> Result<usize, TraceParseError> {
        let rec = &self.trace[i];
        let event = match rec.kind {
            EventKind::Elected => EngineEvent::Elected(ElectedInfo {
                leader: NodeId(rec.parse_field("leader")?),
                budget: rec.parse_field("budget")?,
                executor: NodeId(rec.parse_field("executor")?),
                candidates: decode_nodes(rec.get("candidates").unwrap_or("-"))?,
            }),
            EventKind::BlockProposed => {
                let block = self.rebuild_block(rec)?;
                let report = validate_block(&block, self.capacity);
                let recorded = decode_violations(rec.get("violations").unwrap_or("-"))?;
                if recorded != report.violations {
                    self.flag(i, "recorded block violations differ from validation");
                }
                for tx in &block.txs {
                    if self.committed.contains(&tx.txid) {
                        self.flag(i, format!("transaction {} replayed after commit", tx.txid));
                    }
                }
                self.pending_txs
                    .insert(block.height, block.txs.iter().map(|t| t.txid).collect());
                self.report.blocks_checked += 1;
                EngineEvent::BlockBuilt { block, report }
            }
            EventKind::Verdict => {
                let recorded = decode_opinions(rec.get("opinions").unwrap_or("-"))?;
                let opinions = recorded.iter().map(|(&n, &(op, _))| (n, op)).collect();
                let trust = recorded.iter().map(|(&n, &(_, t))| (n, t)).collect();
                let verdict = aggregate(&opinions, &trust, &self.thresholds)
                    .map_err(|e| TraceParseError(format!("aggregation failed: {e}")))?;
                let d: f64 = rec.parse_field("d")?;
                let outcome = parse_outcome(rec.get("outcome").unwrap_or(""))?;
                if verdict.outcome != outcome {
                    self.flag(i, "recorded outcome differs from aggregation");
                }
                let height: u64 = rec.parse_field("height")?;
                self.last_verdict = Some((height, d, outcome));
                self.report.verdicts_checked += 1;
                EngineEvent::VerdictReached { height, verdict }
            }
            EventKind::IncentivesPaid => {
                for key in ["follower", "leader", "fees"] {
                    let v: f64 = rec.parse_field(key)?;
                    if v < 0.0 {
                        self.flag(i, format!("negative {key} reward"));
                    }
                }
                return Ok(1);
            }
            EventKind::BlockAccepted | EventKind::BlockRejectedRetry | EventKind::LeaderVotedOut => {
                return Err(TraceParseError(format!(
                    "{} without a preceding verdict",
                    rec.kind.name()
                )));
            }
        };

        let (next, produced, _) = match step(&self.state, &event, rec.time, rec.seq) {
            Ok(r) => r,
            Err(e) => return Err(TraceParseError(format!("replay rejected: {e}"))),
        };
        for (k, p) in produced.iter().enumerate() {
            match self.trace.get(i + k) {
                Some(actual) if actual.to_line() == p.to_line() => {}
                Some(_) => self.flag(i + k, "record differs from replayed transition"),
                None => self.flag(i, "trace ends before the replayed transition"),
            }
            self.follow_up(i + k, p);
        }
        self.state = next;
        self.report.transitions_replayed += 1;
        Ok(produced.len())
    }

    fn follow_up(&mut self, at: usize, e: &LedgerEvent) {
        match e.kind {
            EventKind::BlockAccepted => {
                let height: u64 = e.parse_field("height").unwrap_or(0);
                let done: u32 = e.parse_field("done").unwrap_or(0);
                let budget: u32 = e.parse_field("budget").unwrap_or(0);
                if done > budget {
                    self.flag(at, "term exceeded its block budget");
                }
                if let Some(txs) = self.pending_txs.remove(&height) {
                    for txid in txs {
                        if !self.committed.insert(txid) {
                            self.flag(at, format!("transaction {txid} committed twice"));
                        }
                    }
                }
                self.accepted_heights.push(height);
            }
            EventKind::LeaderVotedOut => {
                let height: u64 = e.parse_field("height").unwrap_or(u64::MAX);
                match self.last_verdict {
                    Some((h, d, _)) if h == height && d <= self.thresholds.d_min => {}
                    _ => self.flag(at, "vote-out without a qualifying decision"),
                }
                self.pending_txs.remove(&height);
            }
            EventKind::BlockRejectedRetry => {
                let height: u64 = e.parse_field("height").unwrap_or(0);
                self.pending_txs.remove(&height);
            }
            _ => {}
        }
    }

    fn rebuild_block(&self, rec: &LedgerEvent) -> Result<Block, TraceParseError> {
        let height: u64 = rec.parse_field("height")?;
        Ok(Block {
            height,
            parent: height.checked_sub(1),
            leader: NodeId(rec.parse_field("leader")?),
            created_at: rec.parse_field("created")?,
            last_tx_time: rec.parse_field("last_tx")?,
            txs: decode_txs(rec.get("txs").unwrap_or("-"))?,
            status: BlockStatus::Proposed,
        })
    }
}
