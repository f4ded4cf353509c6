//! Leader election: a boosted-tree classifier ranks nodes into a short
//! candidate list, then an entropy-seeded draw picks the next leader and its
//! block budget.

pub mod dataset;
pub mod features;
pub mod gbdt;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{NodeId, NodeProfile};

pub use dataset::{generate_dataset, Dataset};
pub use features::{calibrate_oracle, extract_features, FeatureVector, LabelingOracle};
pub use gbdt::{train_classifier, BoostedEnsemble, TrainParams};

#[derive(Debug, Error, PartialEq)]
pub enum ElectionError {
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("requested {requested} candidates but at most {cap} are allowed for {nodes} nodes")]
    TooManyCandidates {
        requested: usize,
        cap: usize,
        nodes: usize,
    },
    #[error("candidate list size must be at least 1")]
    ZeroCandidates,
    #[error("block budget ceiling must be at least 1")]
    ZeroBudget,
    #[error("no node is eligible to run the election")]
    NoExecutor,
}

/// Result of one election.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionOutcome {
    pub leader: NodeId,
    /// Maximum number of blocks the leader may append, in `[1, b_max]`.
    pub budget: u32,
    pub candidates: Vec<NodeId>,
    /// Nodes told the budget; always exactly the candidate list.
    pub knowledge_set: BTreeSet<NodeId>,
}

/// Largest candidate list allowed for a network: `ceil(N / 10)`.
pub fn candidate_cap(n_nodes: usize) -> usize {
    n_nodes.div_ceil(10).max(1)
}

/// Default candidate list size: `max(3, ceil(N / 20))`, clipped to the cap.
pub fn default_candidate_count(n_nodes: usize) -> usize {
    3usize.max(n_nodes.div_ceil(20)).min(candidate_cap(n_nodes))
}

/// Ranks nodes by predicted candidate probability and keeps the top `n`.
/// Ties break by higher trust, then lower id.
pub fn predict_candidates(
    model: &BoostedEnsemble,
    profiles: &[NodeProfile],
    n: usize,
) -> Result<Vec<NodeId>, ElectionError> {
    if n == 0 {
        return Err(ElectionError::ZeroCandidates);
    }
    let cap = candidate_cap(profiles.len());
    if n > cap {
        return Err(ElectionError::TooManyCandidates {
            requested: n,
            cap,
            nodes: profiles.len(),
        });
    }
    let mut ranked: Vec<(f64, &NodeProfile)> = profiles
        .iter()
        .map(|p| (model.predict_proba(&extract_features(p, p.blocks_generated)), p))
        .collect();
    ranked.sort_by(|(pa, a), (pb, b)| {
        pb.total_cmp(pa)
            .then(b.trust.total_cmp(&a.trust))
            .then(a.node.cmp(&b.node))
    });
    Ok(ranked.into_iter().take(n).map(|(_, p)| p.node).collect())
}

/// Entropy-seeded draw of the next leader and its block budget.
///
/// The generator is ChaCha20 keyed with
/// `SHA-256(entropy || round_salt_le || last_height_le)`.
pub fn mtrng_draw(
    entropy: &[u8],
    round_salt: u64,
    last_height: u64,
    candidates: &[NodeId],
    b_max: u32,
) -> Result<ElectionOutcome, ElectionError> {
    if candidates.is_empty() {
        return Err(ElectionError::NoCandidates);
    }
    if b_max == 0 {
        return Err(ElectionError::ZeroBudget);
    }
    let mut hasher = Sha256::new();
    hasher.update(entropy);
    hasher.update(round_salt.to_le_bytes());
    hasher.update(last_height.to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let leader = candidates[rng.gen_range(0..candidates.len())];
    let budget = rng.gen_range(1..=b_max);
    Ok(ElectionOutcome {
        leader,
        budget,
        candidates: candidates.to_vec(),
        knowledge_set: candidates.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectionConfig {
    pub n_candidates: usize,
    pub b_max: u32,
}

/// Everything the election needs to know about the network right now.
#[derive(Debug, Clone, Copy)]
pub struct ElectionInput<'a> {
    pub current_leader: Option<NodeId>,
    pub voted_out: bool,
    /// Candidate list of the previous election, if any.
    pub previous_candidates: &'a [NodeId],
    pub profiles: &'a [NodeProfile],
    pub entropy: &'a [u8],
    pub round_salt: u64,
    pub last_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionRecord {
    pub outcome: ElectionOutcome,
    /// Node that ran the classifier and the draw.
    pub executor: NodeId,
    pub voted_out: bool,
}

/// Picks the node that runs the election.
///
/// A leader in good standing runs it itself. Otherwise the most trusted node
/// of the previous candidate list (excluding the outgoing leader) runs it,
/// falling back to the whole network; ties go to the lowest id.
pub fn election_executor(input: &ElectionInput<'_>) -> Result<NodeId, ElectionError> {
    if !input.voted_out {
        if let Some(leader) = input.current_leader {
            return Ok(leader);
        }
    }
    let eligible = |p: &&NodeProfile| Some(p.node) != input.current_leader;
    let most_trusted = |pool: &mut dyn Iterator<Item = &NodeProfile>| {
        pool.max_by(|a, b| a.trust.total_cmp(&b.trust).then(b.node.cmp(&a.node)))
            .map(|p| p.node)
    };
    let from_previous = most_trusted(
        &mut input
            .profiles
            .iter()
            .filter(eligible)
            .filter(|p| input.previous_candidates.contains(&p.node)),
    );
    from_previous
        .or_else(|| most_trusted(&mut input.profiles.iter().filter(eligible)))
        .ok_or(ElectionError::NoExecutor)
}

/// Runs the full election: executor choice, candidate ranking, draw.
pub fn run_election(
    input: &ElectionInput<'_>,
    cfg: &ElectionConfig,
    model: &BoostedEnsemble,
) -> Result<ElectionRecord, ElectionError> {
    let executor = election_executor(input)?;
    let candidates = predict_candidates(model, input.profiles, cfg.n_candidates)?;
    let outcome = mtrng_draw(
        input.entropy,
        input.round_salt,
        input.last_height,
        &candidates,
        cfg.b_max,
    )?;
    Ok(ElectionRecord {
        outcome,
        executor,
        voted_out: input.voted_out,
    })
}
