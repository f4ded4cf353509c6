//! Dynamic block creation.
//!
//! A block is cut as soon as any priority transaction is waiting, or when the
//! normal queue can fill a block, or when the oldest normal transaction has
//! waited for the maximum waiting time.

use thiserror::Error;

use crate::mempool::{Mempool, MempoolError};
use crate::model::{Block, BlockStatus, NodeId, Time};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuilderConfig {
    /// Block capacity `m`.
    pub capacity: usize,
    /// Maximum waiting time `w` for normal transactions, in seconds.
    pub max_wait: f64,
}

impl BuilderConfig {
    pub fn new(capacity: usize, max_wait: f64) -> Result<Self, BuildError> {
        if capacity == 0 {
            return Err(BuildError::InvalidConfig("capacity must be at least 1"));
        }
        if !(max_wait > 0.0) {
            return Err(BuildError::InvalidConfig("max wait must be positive"));
        }
        Ok(Self { capacity, max_wait })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    CreateNow,
    Wait,
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("refusing to build an empty block")]
    EmptyPool,
    #[error("invalid builder config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Mempool(#[from] MempoolError),
}

/// Block-creation trigger.
pub fn should_create(priority: usize, normal: usize, waited: f64, cfg: &BuilderConfig) -> Trigger {
    if priority >= 1 || normal >= cfg.capacity || waited >= cfg.max_wait {
        Trigger::CreateNow
    } else {
        Trigger::Wait
    }
}

/// Evaluates [`should_create`] against the pool's current state.
pub fn pool_trigger(pool: &Mempool, now: Time, cfg: &BuilderConfig) -> Trigger {
    let (p, n) = pool.counts();
    if p + n == 0 {
        return Trigger::Wait;
    }
    should_create(p, n, pool.current_wait(now), cfg)
}

/// Drains the pool into a proposed block at `height`.
pub fn build(
    pool: &mut Mempool,
    leader: NodeId,
    height: u64,
    now: Time,
    cfg: &BuilderConfig,
) -> Result<Block, BuildError> {
    if pool.is_empty() {
        return Err(BuildError::EmptyPool);
    }
    let txs = pool.drain_for_block(cfg.capacity, now)?;
    let last_tx_time = txs
        .iter()
        .map(|t| t.arrival_time)
        .max_by(|a, b| a.total_cmp(b))
        .expect("drained at least one transaction");
    Ok(Block {
        height,
        parent: height.checked_sub(1),
        leader,
        created_at: now,
        last_tx_time,
        txs,
        status: BlockStatus::Proposed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_block, Transaction};

    fn cfg() -> BuilderConfig {
        BuilderConfig::new(10, 5.0).unwrap()
    }

    #[test]
    fn trigger_table() {
        let c = cfg();
        assert_eq!(should_create(1, 0, 0.0, &c), Trigger::CreateNow);
        assert_eq!(should_create(0, 10, 0.0, &c), Trigger::CreateNow);
        assert_eq!(should_create(0, 9, 4.999, &c), Trigger::Wait);
        assert_eq!(should_create(0, 1, 5.0, &c), Trigger::CreateNow);
    }

    #[test]
    fn build_priority_and_normal() {
        let mut pool = Mempool::new();
        pool.submit(Transaction::normal(2, 0.0), 0.0).unwrap();
        pool.submit(Transaction::priority(1, 1.0), 1.0).unwrap();
        let b = build(&mut pool, NodeId(3), 4, 1.0, &cfg()).unwrap();
        assert_eq!(b.txs.iter().map(|t| t.txid).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(b.parent, Some(3));
        assert_eq!(b.last_tx_time, 1.0);
        assert!(validate_block(&b, 10).is_ok());
        assert!(pool.is_empty());
    }

    #[test]
    fn build_cuts_at_capacity() {
        let mut pool = Mempool::new();
        for i in 1..=12 {
            pool.submit(Transaction::normal(i, i as f64), i as f64).unwrap();
        }
        let b = build(&mut pool, NodeId(0), 1, 12.0, &cfg()).unwrap();
        assert_eq!(b.txs.len(), 10);
        assert_eq!(b.txs.last().unwrap().txid, 10);
        assert_eq!(pool.counts(), (0, 2));
    }

    #[test]
    fn build_refuses_empty_pool() {
        let mut pool = Mempool::new();
        assert_eq!(
            build(&mut pool, NodeId(0), 1, 0.0, &cfg()),
            Err(BuildError::EmptyPool)
        );
        assert_eq!(pool_trigger(&pool, 100.0, &cfg()), Trigger::Wait);
    }

    #[test]
    fn config_validation() {
        assert!(BuilderConfig::new(0, 1.0).is_err());
        assert!(BuilderConfig::new(1, 0.0).is_err());
    }
}
