//! Domain types shared across the crate: transactions, blocks, node profiles
//! and the append-only chain.

use std::fmt;

use thiserror::Error;

/// Simulated time in seconds.
pub type Time = f64;

/// Identifier of a consortium node, `0 <= id < node count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Urgency class tagged by the submitting client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxClass {
    Priority,
    Normal,
}

impl TxClass {
    pub fn tag(self) -> char {
        match self {
            TxClass::Priority => 'P',
            TxClass::Normal => 'N',
        }
    }

    pub fn from_tag(c: char) -> Option<Self> {
        match c {
            'P' => Some(TxClass::Priority),
            'N' => Some(TxClass::Normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub txid: u64,
    pub class: TxClass,
    pub fee: f64,
    pub arrival_time: Time,
    pub payload_tag: String,
}

impl Transaction {
    pub fn new(txid: u64, class: TxClass, fee: f64, arrival_time: Time) -> Self {
        Self {
            txid,
            class,
            fee,
            arrival_time,
            payload_tag: String::new(),
        }
    }

    pub fn priority(txid: u64, arrival_time: Time) -> Self {
        Self::new(txid, TxClass::Priority, 0.0, arrival_time)
    }

    pub fn normal(txid: u64, arrival_time: Time) -> Self {
        Self::new(txid, TxClass::Normal, 0.0, arrival_time)
    }

    pub fn is_priority(&self) -> bool {
        self.class == TxClass::Priority
    }

    /// Queue order: arrival time, then txid.
    pub(crate) fn queue_key_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.arrival_time
            .total_cmp(&other.arrival_time)
            .then(self.txid.cmp(&other.txid))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Proposed,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    /// Height of the predecessor; `None` only for genesis.
    pub parent: Option<u64>,
    pub leader: NodeId,
    /// Block creation time (BCT).
    pub created_at: Time,
    /// Arrival time of the latest-arriving included transaction (tau).
    pub last_tx_time: Time,
    pub txs: Vec<Transaction>,
    pub status: BlockStatus,
}

impl Block {
    /// The harness-created genesis block. It is the only block allowed to be empty.
    pub fn genesis(leader: NodeId) -> Self {
        Self {
            height: 0,
            parent: None,
            leader,
            created_at: 0.0,
            last_tx_time: 0.0,
            txs: Vec::new(),
            status: BlockStatus::Accepted,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent.is_none()
    }

    pub fn priority_count(&self) -> usize {
        self.txs.iter().filter(|t| t.is_priority()).count()
    }

    /// Leader efficiency of this block, `created_at - last_tx_time`.
    pub fn efficiency(&self) -> Result<f64, ModelError> {
        compute_efficiency(self.created_at, self.last_tx_time)
    }
}

/// A broken block invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockViolation {
    EmptyBlock,
    PriorityAfterNormal,
    NormalOrder,
    OverCapacity,
    LastTxAfterCreation,
    LastTxMismatch,
    ParentLink,
}

impl BlockViolation {
    pub const ALL: [BlockViolation; 7] = [
        BlockViolation::EmptyBlock,
        BlockViolation::PriorityAfterNormal,
        BlockViolation::NormalOrder,
        BlockViolation::OverCapacity,
        BlockViolation::LastTxAfterCreation,
        BlockViolation::LastTxMismatch,
        BlockViolation::ParentLink,
    ];

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockViolation::EmptyBlock => "empty-block",
            BlockViolation::PriorityAfterNormal => "priority-order",
            BlockViolation::NormalOrder => "normal-order",
            BlockViolation::OverCapacity => "over-capacity",
            BlockViolation::LastTxAfterCreation => "last-tx-after-creation",
            BlockViolation::LastTxMismatch => "last-tx-mismatch",
            BlockViolation::ParentLink => "parent-link",
        }
    }
}

impl fmt::Display for BlockViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of [`validate_block`]. Violations are data, never an error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockReport {
    pub violations: Vec<BlockViolation>,
}

impl BlockReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, v: BlockViolation) -> bool {
        self.violations.contains(&v)
    }
}

/// Checks every block invariant and reports each one that is broken.
///
/// Genesis is exempt from the emptiness rule. `last_tx_time` must equal the
/// latest arrival among the included transactions.
pub fn validate_block(block: &Block, capacity: usize) -> BlockReport {
    let mut violations = Vec::new();

    if block.txs.is_empty() && !block.is_genesis() {
        violations.push(BlockViolation::EmptyBlock);
    }

    let mut seen_normal = false;
    let mut priority_after_normal = false;
    let mut last_normal: Option<&Transaction> = None;
    let mut normal_out_of_order = false;
    for tx in &block.txs {
        match tx.class {
            TxClass::Priority => {
                if seen_normal {
                    priority_after_normal = true;
                }
            }
            TxClass::Normal => {
                seen_normal = true;
                if let Some(prev) = last_normal {
                    if prev.queue_key_cmp(tx).is_gt() {
                        normal_out_of_order = true;
                    }
                }
                last_normal = Some(tx);
            }
        }
    }
    if priority_after_normal {
        violations.push(BlockViolation::PriorityAfterNormal);
    }
    if normal_out_of_order {
        violations.push(BlockViolation::NormalOrder);
    }
    if block.txs.len() > capacity {
        violations.push(BlockViolation::OverCapacity);
    }
    if block.last_tx_time > block.created_at {
        violations.push(BlockViolation::LastTxAfterCreation);
    }
    if let Some(latest) = block
        .txs
        .iter()
        .map(|t| t.arrival_time)
        .max_by(|a, b| a.total_cmp(b))
    {
        if latest != block.last_tx_time {
            violations.push(BlockViolation::LastTxMismatch);
        }
    }
    let parent_ok = match block.parent {
        None => block.height == 0,
        Some(p) => block.height >= 1 && p == block.height - 1,
    };
    if !parent_ok {
        violations.push(BlockViolation::ParentLink);
    }

    BlockReport { violations }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("clock inversion: last transaction at {tau} is after block creation at {bct}")]
    ClockInversion { bct: Time, tau: Time },
    #[error("invalid node profile for node {node}: {reason}")]
    InvalidProfile { node: NodeId, reason: &'static str },
}

/// Leader efficiency `E = BCT - tau`; smaller is better.
pub fn compute_efficiency(bct: Time, tau: Time) -> Result<f64, ModelError> {
    if tau > bct {
        return Err(ModelError::ClockInversion { bct, tau });
    }
    Ok(bct - tau)
}

/// Raw trust assigned to every node at network start.
///
/// Slightly above the trustworthiness threshold of 1.0 so a cold network has
/// a non-empty quorum.
pub const INITIAL_TRUST: f64 = 1.2;

/// History-blend part of [`INITIAL_TRUST`], carried into the first update.
pub const INITIAL_TRUST_CORE: f64 = 0.6;

/// Raw trust above this value makes a node trustworthy (normalized trust > 0.5).
pub const TRUST_THRESHOLD: f64 = 1.0;

/// Per-node state driving both election and verification.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProfile {
    pub node: NodeId,
    /// Raw trust in `[0, 2]`.
    pub trust: f64,
    /// History-blend core of the trust score in `[0, 1]`.
    pub trust_core: f64,
    /// Node degree.
    pub peers: u32,
    /// Efficiency of the node's latest accepted block as leader.
    pub efficiency: f64,
    pub voteouts: u32,
    pub blocks_generated: u32,
    /// False-alarm probability, P(reject | good work).
    pub p_fa: f64,
    /// Missed-detection probability, P(accept | bad work).
    pub p_md: f64,
    /// Base review latency in seconds.
    pub latency: f64,
}

impl NodeProfile {
    pub fn new(node: NodeId, peers: u32, p_fa: f64, p_md: f64) -> Result<Self, ModelError> {
        let profile = Self {
            node,
            trust: INITIAL_TRUST,
            trust_core: INITIAL_TRUST_CORE,
            peers,
            efficiency: 0.0,
            voteouts: 0,
            blocks_generated: 0,
            p_fa,
            p_md,
            latency: 0.0,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_trust(mut self, trust: f64) -> Self {
        self.trust = trust;
        self
    }

    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |reason| ModelError::InvalidProfile {
            node: self.node,
            reason,
        };
        if !(0.0..=1.0).contains(&self.p_fa) || !(0.0..=1.0).contains(&self.p_md) {
            return Err(err("error probabilities must lie in [0, 1]"));
        }
        if self.p_fa + self.p_md >= 1.0 {
            return Err(err("p_fa + p_md must be below 1"));
        }
        if !(0.0..=2.0).contains(&self.trust) {
            return Err(err("trust must lie in [0, 2]"));
        }
        if !(0.0..=1.0).contains(&self.trust_core) {
            return Err(err("trust core must lie in [0, 1]"));
        }
        if !(self.latency >= 0.0) {
            return Err(err("latency must be non-negative"));
        }
        Ok(())
    }

    /// Trust on the `[0, 1]` scale.
    pub fn normalized_trust(&self) -> f64 {
        self.trust / 2.0
    }

    pub fn is_trustworthy(&self) -> bool {
        self.trust > TRUST_THRESHOLD
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("block at height {height} is not accepted")]
    NotAccepted { height: u64 },
    #[error("expected height {expected}, got {got}")]
    HeightGap { expected: u64, got: u64 },
}

/// Append-only chain of accepted blocks with contiguous heights from 0.
#[derive(Debug, Clone, Default)]
pub struct ChainState {
    blocks: Vec<Block>,
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip_height(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.height)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn append(&mut self, block: Block) -> Result<(), ChainError> {
        if block.status != BlockStatus::Accepted {
            return Err(ChainError::NotAccepted {
                height: block.height,
            });
        }
        let expected = self.tip_height().map_or(0, |h| h + 1);
        if block.height != expected {
            return Err(ChainError::HeightGap {
                expected,
                got: block.height,
            });
        }
        self.blocks.push(block);
        Ok(())
    }
}
