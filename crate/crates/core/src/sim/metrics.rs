//! Scenario metrics and their CSV files.
//!
//! | file | header |
//! |------|--------|
//! | `tx_delays.csv` | `txid,class,arrival,included_at,delay` |
//! | `blocks.csv` | `height,leader,trigger_time,created_at,n_txs,good,outcome` |
//! | `verdicts.csv` | `time,height,leader,good,d,h,outcome,truthful_d,truthful_outcome` |
//! | `trust.csv` | `time,node,trust,score,promptness` |
//! | `heights.csv` | `time,height` |
//! | `utilization.csv` | `height,utilization` |
//! | `nodes.csv` | `node,trust,trust_core,peers,efficiency,voteouts,blocks_generated,reward` |
//! | `summary.csv` | `metric,value` |
//!
//! Floats carry 9 significant digits. A transaction never included has empty
//! `included_at` and `delay` cells.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::engine::{IncentiveLedger, LedgerEvent};
use crate::model::{NodeId, NodeProfile, Time, TxClass};
use crate::numfmt::float;
use crate::peer_prediction::Outcome;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassifierStats {
    pub rows: usize,
    /// Accuracy on the training rows.
    pub accuracy: f64,
    pub logloss: f64,
    pub final_train_logloss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltBlock {
    pub height: u64,
    pub leader: NodeId,
    /// When the creation rule fired.
    pub trigger_time: Time,
    pub created_at: Time,
    pub txids: Vec<u64>,
    /// Whether the block was honest work: valid and on time.
    pub good: bool,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictSample {
    pub time: Time,
    pub height: u64,
    pub leader: NodeId,
    pub good: bool,
    pub decision: f64,
    pub trustworthy: usize,
    pub outcome: Outcome,
    /// Decision had every reviewer reported its signal truthfully.
    pub truthful_decision: f64,
    pub truthful_outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustSample {
    pub time: Time,
    pub node: NodeId,
    pub trust: f64,
    pub score: f64,
    pub promptness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxDelay {
    pub txid: u64,
    pub class: TxClass,
    pub arrival: Time,
    /// Creation time of the first built block carrying the transaction.
    pub included_at: Option<Time>,
}

impl TxDelay {
    pub fn delay(&self) -> Option<f64> {
        self.included_at.map(|t| t - self.arrival)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRecord {
    pub arrivals: Vec<(u64, TxClass, Time)>,
    pub built: Vec<BuiltBlock>,
    /// txid → index into `built` of its first inclusion.
    pub inclusion: BTreeMap<u64, usize>,
    pub verdicts: Vec<VerdictSample>,
    pub trust: Vec<TrustSample>,
    pub utilization: Vec<(u64, f64)>,
    pub heights: Vec<(Time, u64)>,
    pub voteouts: u32,
    pub chain_height: u64,
    pub classifier: ClassifierStats,
    pub incentives: IncentiveLedger,
    pub final_profiles: Vec<NodeProfile>,
}

impl MetricsRecord {
    pub fn tx_delays(&self) -> Vec<TxDelay> {
        self.arrivals
            .iter()
            .map(|&(txid, class, arrival)| TxDelay {
                txid,
                class,
                arrival,
                included_at: self.inclusion.get(&txid).map(|&i| self.built[i].created_at),
            })
            .collect()
    }

    pub fn delays_of(&self, class: TxClass) -> Vec<f64> {
        self.tx_delays()
            .iter()
            .filter(|d| d.class == class)
            .filter_map(TxDelay::delay)
            .collect()
    }

    pub fn accepted_by(&self, leader: NodeId) -> usize {
        self.built
            .iter()
            .filter(|b| b.leader == leader && b.outcome == Some(Outcome::Accept))
            .count()
    }

    /// Share of verdicts whose outcome differs from the truthful counterfactual.
    pub fn verdict_change_rate(&self) -> f64 {
        if self.verdicts.is_empty() {
            return 0.0;
        }
        let changed = self
            .verdicts
            .iter()
            .filter(|v| v.outcome != v.truthful_outcome)
            .count();
        changed as f64 / self.verdicts.len() as f64
    }

    pub fn summary(&self) -> Vec<(&'static str, String)> {
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                f64::NAN
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let p = self.delays_of(TxClass::Priority);
        let n = self.delays_of(TxClass::Normal);
        let max = |xs: &[f64]| xs.iter().copied().fold(0.0, f64::max);
        vec![
            ("transactions", self.arrivals.len().to_string()),
            ("blocks_built", self.built.len().to_string()),
            ("chain_height", self.chain_height.to_string()),
            ("voteouts", self.voteouts.to_string()),
            ("mean_priority_delay", float(mean(&p))),
            ("max_priority_delay", float(max(&p))),
            ("mean_normal_delay", float(mean(&n))),
            ("max_normal_delay", float(max(&n))),
            ("mean_utilization", float(mean(&self.utilization.iter().map(|u| u.1).collect::<Vec<_>>()))),
            ("verdict_change_rate", float(self.verdict_change_rate())),
            ("classifier_rows", self.classifier.rows.to_string()),
            ("classifier_accuracy", float(self.classifier.accuracy)),
            ("classifier_logloss", float(self.classifier.logloss)),
            ("incentives_paid", float(self.incentives.paid_from_budget())),
        ]
    }

    /// Writes every metrics CSV and `trace.log` into `dir`.
    pub fn write_dir(&self, dir: &Path, trace: &[LedgerEvent]) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| -> io::Result<io::BufWriter<fs::File>> {
            Ok(io::BufWriter::new(fs::File::create(dir.join(name))?))
        };
        let opt = |x: Option<f64>| x.map(float).unwrap_or_default();

        let mut out = file("tx_delays.csv")?;
        writeln!(out, "txid,class,arrival,included_at,delay")?;
        for d in self.tx_delays() {
            writeln!(
                out,
                "{},{},{},{},{}",
                d.txid,
                d.class.tag(),
                float(d.arrival),
                opt(d.included_at),
                opt(d.delay())
            )?;
        }
        out.flush()?;

        let mut out = file("blocks.csv")?;
        writeln!(out, "height,leader,trigger_time,created_at,n_txs,good,outcome")?;
        for b in &self.built {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                b.height,
                b.leader,
                float(b.trigger_time),
                float(b.created_at),
                b.txids.len(),
                u8::from(b.good),
                b.outcome.map_or("", Outcome::name)
            )?;
        }
        out.flush()?;

        let mut out = file("verdicts.csv")?;
        writeln!(out, "time,height,leader,good,d,h,outcome,truthful_d,truthful_outcome")?;
        for v in &self.verdicts {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                float(v.time),
                v.height,
                v.leader,
                u8::from(v.good),
                float(v.decision),
                v.trustworthy,
                v.outcome.name(),
                float(v.truthful_decision),
                v.truthful_outcome.name()
            )?;
        }
        out.flush()?;

        let mut out = file("trust.csv")?;
        writeln!(out, "time,node,trust,score,promptness")?;
        for t in &self.trust {
            writeln!(
                out,
                "{},{},{},{},{}",
                float(t.time),
                t.node,
                float(t.trust),
                float(t.score),
                float(t.promptness)
            )?;
        }
        out.flush()?;

        let mut out = file("heights.csv")?;
        writeln!(out, "time,height")?;
        for (t, h) in &self.heights {
            writeln!(out, "{},{}", float(*t), h)?;
        }
        out.flush()?;

        let mut out = file("utilization.csv")?;
        writeln!(out, "height,utilization")?;
        for (h, u) in &self.utilization {
            writeln!(out, "{},{}", h, float(*u))?;
        }
        out.flush()?;

        let mut out = file("nodes.csv")?;
        writeln!(out, "node,trust,trust_core,peers,efficiency,voteouts,blocks_generated,reward")?;
        for p in &self.final_profiles {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.node,
                float(p.trust),
                float(p.trust_core),
                p.peers,
                float(p.efficiency),
                p.voteouts,
                p.blocks_generated,
                float(self.incentives.total_for(p.node))
            )?;
        }
        out.flush()?;

        let mut out = file("summary.csv")?;
        writeln!(out, "metric,value")?;
        for (k, v) in self.summary() {
            writeln!(out, "{k},{v}")?;
        }
        out.flush()?;

        write_trace(&dir.join("trace.log"), trace)
    }
}

pub fn write_trace(path: &Path, trace: &[LedgerEvent]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for e in trace {
        writeln!(out, "{}", e.to_line())?;
    }
    out.flush()
}

pub fn read_trace(path: &Path) -> Result<Vec<LedgerEvent>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| LedgerEvent::parse_line(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
