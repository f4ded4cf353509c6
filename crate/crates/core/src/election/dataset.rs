//! Synthetic labeled node datasets and their CSV form.
//!
//! CSV layout: header `trust_scaled,peers,blocks,voteout,label`, then one row
//! per node in node order. `voteout` and `label` are `0`/`1`.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::features::{calibrate_oracle, FeatureVector, LabelingOracle, BLOCKS_MAX, TRUST_SCALE_MAX};
use crate::numfmt::float;

pub const DATASET_HEADER: &str = "trust_scaled,peers,blocks,voteout,label";

/// Probability that a synthetic node carries a vote-out flag.
pub const VOTEOUT_RATE: f64 = 0.15;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset needs at least 10 nodes, got {0}")]
    TooSmall(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<(FeatureVector, bool)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|(_, y)| *y).count()
    }

    /// Deterministic shuffle then split; the first part holds
    /// `round(len * test_fraction)` rows and is the test set.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let n_test = (self.rows.len() as f64 * test_fraction).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            rows: ids.iter().map(|&i| self.rows[i]).collect(),
        };
        (pick(&idx[..n_test]), pick(&idx[n_test..]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{DATASET_HEADER}")?;
        for (f, y) in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                float(f.trust_scaled),
                f.peers,
                f.blocks_generated,
                u8::from(f.voteout),
                u8::from(*y)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, DatasetError> {
        let mut rows = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if n == 0 {
                if line.trim() != DATASET_HEADER {
                    return Err(DatasetError::Parse {
                        line: lineno,
                        reason: format!("expected header `{DATASET_HEADER}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| DatasetError::Parse {
                line: lineno,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let trust: f64 = cols[0].parse().map_err(|_| bad("bad trust_scaled"))?;
            let peers: u32 = cols[1].parse().map_err(|_| bad("bad peers"))?;
            let blocks: u32 = cols[2].parse().map_err(|_| bad("bad blocks"))?;
            let flag = |s: &str, what: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(what)),
            };
            let voteout = flag(cols[3], "voteout must be 0 or 1")?;
            let label = flag(cols[4], "label must be 0 or 1")?;
            rows.push((FeatureVector::new(trust, peers, blocks, voteout), label));
        }
        if rows.is_empty() {
            return Err(DatasetError::Parse {
                line: 1,
                reason: "no data rows".into(),
            });
        }
        Ok(Self { rows })
    }
}

/// `n` synthetic nodes labeled by the oracle calibrated for `n` nodes.
pub fn generate_dataset(n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    generate_scaled(n, n, seed)
}

/// `rows` synthetic nodes drawn for a network of `n_nodes` (peer counts lie
/// in `[1, n_nodes - 1]`), labeled by that network's oracle.
pub fn generate_scaled(rows: usize, n_nodes: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n_nodes < 10 {
        return Err(DatasetError::TooSmall(n_nodes));
    }
    let oracle = calibrate_oracle(n_nodes as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..rows)
        .map(|_| {
            let peers = rng.gen_range(1..n_nodes as u32);
            let blocks = rng.gen_range(0..=BLOCKS_MAX);
            // Quantized to 1e-6 so the CSV form round-trips exactly.
            let trust = (rng.gen_range(0.0..TRUST_SCALE_MAX) * 1e6).round() / 1e6;
            let voteout = rng.gen_bool(VOTEOUT_RATE);
            let f = FeatureVector::new(trust, peers, blocks, voteout);
            (f, oracle.is_candidate(&f))
        })
        .collect();
    Ok(Dataset { rows })
}

/// Labels every row with `oracle`, replacing existing labels.
pub fn relabel(data: &mut Dataset, oracle: &LabelingOracle) {
    for (f, y) in &mut data.rows {
        *y = oracle.is_candidate(f);
    }
}
