//! Unconfirmed transaction pool.
//!
//! Priority and normal transactions live in separate FIFO queues ordered by
//! `(arrival_time, txid)`. The pool also keeps a bounded history of its own
//! size, which is the entropy source for the leader draw.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::model::{Time, Transaction, TxClass};

/// Number of `(time, size)` samples retained for the entropy sample.
pub const SIZE_HISTORY_CAPACITY: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum MempoolError {
    #[error("transaction {0} was already submitted")]
    Duplicate(u64),
    #[error("transaction {txid} arrives at {arrival} but was submitted at {now}")]
    ArrivalMismatch { txid: u64, arrival: Time, now: Time },
    #[error("cannot drain an empty pool")]
    EmptyDrain,
    #[error("block capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Default)]
pub struct Mempool {
    priority: VecDeque<Transaction>,
    normal: VecDeque<Transaction>,
    /// Every txid ever accepted, so a replayed transaction is refused even
    /// after it has been confirmed.
    seen: HashSet<u64>,
    size_history: VecDeque<(Time, usize)>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, tx: Transaction, now: Time) -> Result<(), MempoolError> {
        if self.seen.contains(&tx.txid) {
            return Err(MempoolError::Duplicate(tx.txid));
        }
        if tx.arrival_time != now {
            return Err(MempoolError::ArrivalMismatch {
                txid: tx.txid,
                arrival: tx.arrival_time,
                now,
            });
        }
        self.seen.insert(tx.txid);
        self.enqueue(tx);
        self.record_size(now);
        Ok(())
    }

    /// Puts transactions from a rejected block back, keeping their original
    /// arrival times.
    pub fn requeue(&mut self, txs: impl IntoIterator<Item = Transaction>, now: Time) {
        for tx in txs {
            self.seen.insert(tx.txid);
            self.enqueue(tx);
        }
        self.record_size(now);
    }

    fn enqueue(&mut self, tx: Transaction) {
        let queue = match tx.class {
            TxClass::Priority => &mut self.priority,
            TxClass::Normal => &mut self.normal,
        };
        let at = queue.partition_point(|q| q.queue_key_cmp(&tx).is_le());
        queue.insert(at, tx);
    }

    fn record_size(&mut self, now: Time) {
        if self.size_history.len() == SIZE_HISTORY_CAPACITY {
            self.size_history.pop_front();
        }
        self.size_history.push_back((now, self.len()));
    }

    /// `(p, n_t)`: queued priority and normal transaction counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.priority.len(), self.normal.len())
    }

    pub fn len(&self) -> usize {
        self.priority.len() + self.normal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, txid: u64) -> bool {
        self.priority.iter().chain(&self.normal).any(|t| t.txid == txid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.priority.iter().chain(&self.normal)
    }

    pub fn oldest_normal_arrival(&self) -> Option<Time> {
        self.normal.front().map(|t| t.arrival_time)
    }

    /// Takes up to `capacity` transactions: priority first, then normal, both
    /// oldest first. Overflow stays queued.
    pub fn drain_for_block(
        &mut self,
        capacity: usize,
        now: Time,
    ) -> Result<Vec<Transaction>, MempoolError> {
        if capacity == 0 {
            return Err(MempoolError::ZeroCapacity);
        }
        if self.is_empty() {
            return Err(MempoolError::EmptyDrain);
        }
        let from_priority = self.priority.len().min(capacity);
        let mut txs: Vec<Transaction> = self.priority.drain(..from_priority).collect();
        let from_normal = self.normal.len().min(capacity - txs.len());
        txs.extend(self.normal.drain(..from_normal));
        self.record_size(now);
        Ok(txs)
    }

    /// `T_C`: how long the oldest waiting normal transaction has waited.
    pub fn current_wait(&self, now: Time) -> f64 {
        self.oldest_normal_arrival()
            .map_or(0.0, |t| (now - t).max(0.0))
    }

    /// Fixed-width little-endian encoding of the size history: for each sample
    /// the time in whole milliseconds (u64) followed by the size (u64).
    pub fn entropy_sample(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_history.len() * 16);
        for &(time, size) in &self.size_history {
            let millis = (time * 1000.0).round().max(0.0) as u64;
            out.extend_from_slice(&millis.to_le_bytes());
            out.extend_from_slice(&(size as u64).to_le_bytes());
        }
        out
    }

    pub fn size_history(&self) -> impl Iterator<Item = &(Time, usize)> {
        self.size_history.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(txs: &[Transaction]) -> Vec<u64> {
        txs.iter().map(|t| t.txid).collect()
    }

    #[test]
    fn submit_routes_by_class() {
        let mut pool = Mempool::new();
        assert_eq!(pool.counts(), (0, 0));
        pool.submit(Transaction::priority(1, 0.0), 0.0).unwrap();
        assert_eq!(pool.counts(), (1, 0));
        pool.submit(Transaction::normal(2, 1.0), 1.0).unwrap();
        assert_eq!(pool.counts(), (1, 1));
        assert_eq!(
            pool.submit(Transaction::normal(2, 2.0), 2.0),
            Err(MempoolError::Duplicate(2))
        );
    }

    #[test]
    fn counts_track_classes() {
        let mut pool = Mempool::new();
        for i in 0..3 {
            pool.submit(Transaction::normal(i, 0.0), 0.0).unwrap();
        }
        assert_eq!(pool.counts(), (0, 3));
        let mut pool = Mempool::new();
        pool.submit(Transaction::priority(0, 0.0), 0.0).unwrap();
        pool.submit(Transaction::priority(1, 0.0), 0.0).unwrap();
        pool.submit(Transaction::normal(2, 0.0), 0.0).unwrap();
        assert_eq!(pool.counts(), (2, 1));
    }

    #[test]
    fn drain_priority_then_normal() {
        let mut pool = Mempool::new();
        for (id, t) in [(3u64, 0.0), (4, 1.0), (5, 2.0)] {
            pool.submit(Transaction::normal(id, t), t).unwrap();
        }
        pool.submit(Transaction::priority(1, 3.0), 3.0).unwrap();
        pool.submit(Transaction::priority(2, 4.0), 4.0).unwrap();
        let txs = pool.drain_for_block(4, 5.0).unwrap();
        assert_eq!(ids(&txs), vec![1, 2, 3, 4]);
        assert_eq!(pool.counts(), (0, 1));
        assert!(pool.contains(5));
    }

    #[test]
    fn drain_partial_and_errors() {
        let mut pool = Mempool::new();
        assert_eq!(pool.drain_for_block(4, 0.0), Err(MempoolError::EmptyDrain));
        pool.submit(Transaction::normal(1, 0.0), 0.0).unwrap();
        pool.submit(Transaction::normal(2, 0.5), 0.5).unwrap();
        assert_eq!(ids(&pool.drain_for_block(4, 1.0).unwrap()), vec![1, 2]);
        assert!(pool.is_empty());
    }

    /// Enumerates every priority/normal queue split up to 6 + 6 and capacity
    /// up to 8, checking the drained prefix against the decision rule.
    #[test]
    fn drain_matches_enumerated_rule() {
        for p in 0..=6u64 {
            for n in 0..=6u64 {
                if p + n == 0 {
                    continue;
                }
                for m in 1..=8usize {
                    let mut pool = Mempool::new();
                    for i in 0..n {
                        pool.submit(Transaction::normal(100 + i, i as f64), i as f64).unwrap();
                    }
                    for i in 0..p {
                        let t = 10.0 + i as f64;
                        pool.submit(Transaction::priority(i, t), t).unwrap();
                    }
                    let got = ids(&pool.drain_for_block(m, 20.0).unwrap());
                    let take_p = (p as usize).min(m);
                    let take_n = (n as usize).min(m - take_p);
                    let mut want: Vec<u64> = (0..take_p as u64).collect();
                    want.extend((0..take_n as u64).map(|i| 100 + i));
                    assert_eq!(got, want, "p={p} n={n} m={m}");
                    assert_eq!(pool.counts(), (p as usize - take_p, n as usize - take_n));
                }
            }
        }
    }

    #[test]
    fn priority_overflow_keeps_oldest() {
        let mut pool = Mempool::new();
        for i in 1..=5 {
            pool.submit(Transaction::priority(i, i as f64), i as f64).unwrap();
        }
        assert_eq!(ids(&pool.drain_for_block(3, 6.0).unwrap()), vec![1, 2, 3]);
        assert_eq!(ids(&pool.iter().cloned().collect::<Vec<_>>()), vec![4, 5]);
    }

    #[test]
    fn current_wait_follows_oldest_normal() {
        let mut pool = Mempool::new();
        assert_eq!(pool.current_wait(10.0), 0.0);
        pool.submit(Transaction::normal(1, 4.0), 4.0).unwrap();
        pool.submit(Transaction::normal(2, 6.0), 6.0).unwrap();
        assert_eq!(pool.current_wait(10.0), 6.0);
        pool.drain_for_block(10, 11.0).unwrap();
        assert_eq!(pool.current_wait(12.0), 0.0);
    }

    #[test]
    fn equal_arrivals_order_by_txid() {
        let mut pool = Mempool::new();
        pool.submit(Transaction::normal(9, 1.0), 1.0).unwrap();
        pool.requeue([Transaction::normal(3, 1.0)], 1.0);
        assert_eq!(ids(&pool.drain_for_block(5, 2.0).unwrap()), vec![3, 9]);
    }

    #[test]
    fn entropy_sample_encoding() {
        let pool = Mempool::new();
        assert!(pool.entropy_sample().is_empty());

        let mut a = Mempool::new();
        let mut b = Mempool::new();
        for pool in [&mut a, &mut b] {
            pool.submit(Transaction::normal(1, 0.25), 0.25).unwrap();
        }
        assert_eq!(a.entropy_sample(), b.entropy_sample());
        let bytes = a.entropy_sample();
        assert_eq!(bytes.len(), 16);
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 250);
        assert_eq!(u64::from_le_bytes(bytes[8..].try_into().unwrap()), 1);

        b.submit(Transaction::normal(2, 0.5), 0.5).unwrap();
        a.submit(Transaction::normal(2, 0.6), 0.6).unwrap();
        assert_ne!(a.entropy_sample(), b.entropy_sample());
    }

    #[test]
    fn size_history_is_bounded() {
        let mut pool = Mempool::new();
        for i in 0..200u64 {
            pool.submit(Transaction::normal(i, i as f64), i as f64).unwrap();
        }
        assert_eq!(pool.size_history().count(), SIZE_HISTORY_CAPACITY);
        assert_eq!(pool.entropy_sample().len(), SIZE_HISTORY_CAPACITY * 16);
    }

    #[test]
    fn replayed_txid_is_refused_after_confirmation() {
        let mut pool = Mempool::new();
        pool.submit(Transaction::normal(1, 0.0), 0.0).unwrap();
        pool.drain_for_block(1, 1.0).unwrap();
        assert_eq!(
            pool.submit(Transaction::normal(1, 2.0), 2.0),
            Err(MempoolError::Duplicate(1))
        );
    }
}
