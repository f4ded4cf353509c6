//! Peer-prediction verification of a leader's block.
//!
//! Every follower is paired with a random peer and reports two probabilities
//! that the peer accepts the block: a prior before the block is revealed and a
//! posterior after reviewing it privately. The follower's own opinion is
//! inferred from the direction of the update, its report is scored with the
//! binary quadratic rule against the peer's realized report, and the score
//! feeds the trust recursion. Only trustworthy followers (raw trust above 1)
//! count toward the decision `D`.
//!
//! Notation used in the comments below: `q = P(W = a)` is the world prior,
//! `fa`/`md` are false-alarm and missed-detection probabilities.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{validate_block, Block, NodeId, NodeProfile, TRUST_THRESHOLD};

#[derive(Debug, Error, PartialEq)]
pub enum PeerPredictionError {
    #[error("signal {0:?} has zero probability for this reviewer")]
    DegenerateSignal(Judgement),
    #[error("report {0} is outside [0, 1]")]
    ReportOutOfRange(f64),
    #[error("latency {0} is negative")]
    NegativeLatency(f64),
    #[error("latency range is inverted: min {min} > max {max}")]
    InvertedLatencyRange { min: f64, max: f64 },
    #[error("no trustworthy follower submitted an opinion")]
    NoQuorum,
    #[error("thresholds must satisfy 0 <= d_min < d_max <= 1 (got {d_min}, {d_max})")]
    InvalidThresholds { d_min: f64, d_max: f64 },
    #[error("a review round needs at least two followers, got {0}")]
    TooFewFollowers(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Binary judgement of a piece of work: accept (`a`) or reject (`r`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Judgement {
    Accept,
    Reject,
}

impl Judgement {
    pub fn flipped(self) -> Self {
        match self {
            Judgement::Accept => Judgement::Reject,
            Judgement::Reject => Judgement::Accept,
        }
    }
}

/// Commonly held prior that the leader's work is good, `P(W = a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPrior {
    pub p_work_good: f64,
}

impl WorldPrior {
    pub fn new(p_work_good: f64) -> Result<Self, PeerPredictionError> {
        if !(0.0..=1.0).contains(&p_work_good) {
            return Err(PeerPredictionError::InvalidParameter(
                "P(W = a) must lie in [0, 1]",
            ));
        }
        Ok(Self { p_work_good })
    }
}

impl Default for WorldPrior {
    fn default() -> Self {
        Self { p_work_good: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPair {
    pub reviewer: NodeId,
    pub peer: NodeId,
    pub prior: f64,
    pub posterior: f64,
    pub report_latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub node: NodeId,
    pub score: f64,
    pub trust_before: f64,
    pub trust_after: f64,
    pub core_after: f64,
    pub promptness: f64,
}

/// `y_ij`: probability that peer `j` accepts, before the work is seen.
///
/// The reviewer's own parameters do not enter; only the peer's error rates
/// and the world prior do.
pub fn prior_belief(_reviewer: &NodeProfile, peer: &NodeProfile, world: &WorldPrior) -> f64 {
    let q = world.p_work_good;
    (1.0 - peer.p_fa) * q + peer.p_md * (1.0 - q)
}

/// `y'_ij(s_i)`: probability that peer `j` accepts given the reviewer's own
/// private signal.
pub fn posterior_belief(
    reviewer: &NodeProfile,
    peer: &NodeProfile,
    world: &WorldPrior,
    signal: Judgement,
) -> Result<f64, PeerPredictionError> {
    let q = world.p_work_good;
    // Joint weights of (W, s_i): a1 = P(a, r), a2 = P(r, r), a3 = P(a, a), a4 = P(r, a).
    let (w_good, w_bad) = match signal {
        Judgement::Reject => (reviewer.p_fa * q, (1.0 - reviewer.p_md) * (1.0 - q)),
        Judgement::Accept => ((1.0 - reviewer.p_fa) * q, reviewer.p_md * (1.0 - q)),
    };
    let total = w_good + w_bad;
    if total <= 0.0 {
        return Err(PeerPredictionError::DegenerateSignal(signal));
    }
    Ok((w_good * (1.0 - peer.p_fa) + w_bad * peer.p_md) / total)
}

/// Probability that the reviewer observes `signal`, i.e. the normalizer of
/// [`posterior_belief`].
pub fn signal_probability(reviewer: &NodeProfile, world: &WorldPrior, signal: Judgement) -> f64 {
    let q = world.p_work_good;
    match signal {
        Judgement::Reject => reviewer.p_fa * q + (1.0 - reviewer.p_md) * (1.0 - q),
        Judgement::Accept => (1.0 - reviewer.p_fa) * q + reviewer.p_md * (1.0 - q),
    }
}

/// Binary quadratic scoring rule: `2y - y^2` if the outcome is 1, `1 - y^2` otherwise.
pub fn quadratic_score(report: f64, outcome: bool) -> Result<f64, PeerPredictionError> {
    if !(0.0..=1.0).contains(&report) {
        return Err(PeerPredictionError::ReportOutOfRange(report));
    }
    Ok(if outcome {
        2.0 * report - report * report
    } else {
        1.0 - report * report
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Promptness {
    /// Normalized latency `beta` in `[0, 1]`; 0 is the fastest reviewer.
    pub beta: f64,
    /// `1 - beta`.
    pub index: f64,
}

/// Normalizes a reviewer's latency against the observed range.
pub fn promptness(latency: f64, min: f64, max: f64) -> Result<Promptness, PeerPredictionError> {
    for l in [latency, min, max] {
        if l < 0.0 {
            return Err(PeerPredictionError::NegativeLatency(l));
        }
    }
    if min > max {
        return Err(PeerPredictionError::InvertedLatencyRange { min, max });
    }
    let range = max - min;
    let beta = if range > 0.0 {
        ((latency - min) / range).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(Promptness {
        beta,
        index: 1.0 - beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustUpdate {
    /// Raw trust in `[0, 2]`.
    pub trust: f64,
    /// History-blend core carried into the next round, in `[0, 1]`.
    pub core: f64,
}

/// `T = alpha * R + (1 - alpha) * T_hat + (1 - beta)`.
///
/// Only the blend `alpha * R + (1 - alpha) * T_hat` is carried forward; the
/// promptness term is added fresh every round.
pub fn update_trust(core: f64, score: f64, alpha: f64, beta: f64) -> TrustUpdate {
    let blended = alpha * score + (1.0 - alpha) * core;
    TrustUpdate {
        trust: blended + 1.0 - beta,
        core: blended,
    }
}

/// Inferred opinion: accept iff the posterior rose above the prior. Equality
/// counts as rejection.
pub fn infer_opinion(prior: f64, posterior: f64) -> bool {
    posterior > prior
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub d_min: f64,
    pub d_max: f64,
}

impl Thresholds {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self, PeerPredictionError> {
        if !(0.0 <= d_min && d_min < d_max && d_max <= 1.0) {
            return Err(PeerPredictionError::InvalidThresholds { d_min, d_max });
        }
        Ok(Self { d_min, d_max })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            d_min: 0.33,
            d_max: 0.67,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Accept,
    RejectRetry,
    RejectVoteOut,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Accept => "accept",
            Outcome::RejectRetry => "retry",
            Outcome::RejectVoteOut => "vote-out",
        }
    }

    pub fn from_decision(d: f64, thresholds: &Thresholds) -> Self {
        if d <= thresholds.d_min {
            Outcome::RejectVoteOut
        } else if d >= thresholds.d_max {
            Outcome::Accept
        } else {
            Outcome::RejectRetry
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// Fraction of trustworthy followers accepting, `D`.
    pub decision: f64,
    /// Number of trustworthy followers, `h`.
    pub trustworthy: usize,
    pub outcome: Outcome,
    /// Every submitted opinion, with the trust it was weighed at.
    pub opinions: BTreeMap<NodeId, (bool, f64)>,
}

/// Decision over trustworthy opinions only.
///
/// Opinions from nodes without a trust entry are treated as untrusted.
pub fn aggregate(
    opinions: &BTreeMap<NodeId, bool>,
    trust: &BTreeMap<NodeId, f64>,
    thresholds: &Thresholds,
) -> Result<Verdict, PeerPredictionError> {
    Thresholds::new(thresholds.d_min, thresholds.d_max)?;
    let mut accepted = 0usize;
    let mut h = 0usize;
    let mut weighed = BTreeMap::new();
    for (&node, &accepts) in opinions {
        let t = trust.get(&node).copied().unwrap_or(0.0);
        weighed.insert(node, (accepts, t));
        if t > TRUST_THRESHOLD {
            h += 1;
            accepted += usize::from(accepts);
        }
    }
    if h == 0 {
        return Err(PeerPredictionError::NoQuorum);
    }
    let decision = accepted as f64 / h as f64;
    Ok(Verdict {
        decision,
        trustworthy: h,
        outcome: Outcome::from_decision(decision, thresholds),
        opinions: weighed,
    })
}

/// How a reviewer turns its private signal into a posterior report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReportStrategy {
    Truthful,
    /// Reports `1 - y'` in place of its posterior `y'` with probability `prob`.
    Invert { prob: f64 },
    /// Members of a group agree on the majority signal among themselves and
    /// all report `1 - y'` for it.
    Collude { group: u32 },
}

#[derive(Debug, Clone)]
pub struct Reviewer {
    pub profile: NodeProfile,
    pub strategy: ReportStrategy,
    /// Time from block broadcast until this reviewer's posterior lands.
    pub latency: f64,
}

impl Reviewer {
    pub fn truthful(profile: NodeProfile, latency: f64) -> Self {
        Self {
            profile,
            strategy: ReportStrategy::Truthful,
            latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReviewParams {
    pub world: WorldPrior,
    pub alpha: f64,
    pub thresholds: Thresholds,
    pub capacity: usize,
}

impl Default for ReviewParams {
    fn default() -> Self {
        Self {
            world: WorldPrior::default(),
            alpha: 0.5,
            thresholds: Thresholds::default(),
            capacity: usize::MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReviewOutcome {
    pub beliefs: Vec<BeliefPair>,
    pub scores: Vec<ScoreRecord>,
    pub verdict: Verdict,
    /// Verdict had every reviewer reported truthfully with the same signals,
    /// pairing and trust.
    pub truthful_verdict: Verdict,
    pub signals: BTreeMap<NodeId, Judgement>,
}

/// One full verification round over `block`.
///
/// Each reviewer draws a private signal from `true_quality` and its own error
/// rates; a block that breaks a structural invariant is seen as a reject by
/// every reviewer. Trust weighing uses the pre-round trust of each reviewer.
pub fn review_round(
    block: &Block,
    true_quality: Judgement,
    reviewers: &[Reviewer],
    params: &ReviewParams,
    seed: u64,
) -> Result<ReviewOutcome, PeerPredictionError> {
    if reviewers.len() < 2 {
        return Err(PeerPredictionError::TooFewFollowers(reviewers.len()));
    }
    if !(0.0..=1.0).contains(&params.alpha) {
        return Err(PeerPredictionError::InvalidParameter("alpha must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let structurally_invalid = !validate_block(block, params.capacity).is_ok();
    let world = &params.world;

    let peers: Vec<usize> = (0..reviewers.len())
        .map(|i| {
            let mut j = rng.gen_range(0..reviewers.len() - 1);
            if j >= i {
                j += 1;
            }
            j
        })
        .collect();

    let signals: Vec<Judgement> = reviewers
        .iter()
        .map(|r| {
            if structurally_invalid {
                return Judgement::Reject;
            }
            let err = match true_quality {
                Judgement::Accept => r.profile.p_fa,
                Judgement::Reject => r.profile.p_md,
            };
            if rng.gen_bool(err) {
                true_quality.flipped()
            } else {
                true_quality
            }
        })
        .collect();

    let mut group_signal: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (r, s) in reviewers.iter().zip(&signals) {
        if let ReportStrategy::Collude { group } = r.strategy {
            let e = group_signal.entry(group).or_default();
            match s {
                Judgement::Accept => e.0 += 1,
                Judgement::Reject => e.1 += 1,
            }
        }
    }

    let mut inverted = vec![false; reviewers.len()];
    let reported: Vec<Judgement> = reviewers
        .iter()
        .zip(&signals)
        .enumerate()
        .map(|(i, (r, &s))| match r.strategy {
            ReportStrategy::Truthful => s,
            ReportStrategy::Invert { prob } => {
                inverted[i] = rng.gen_bool(prob.clamp(0.0, 1.0));
                s
            }
            ReportStrategy::Collude { group } => {
                let (acc, rej) = group_signal[&group];
                inverted[i] = true;
                if acc >= rej {
                    Judgement::Accept
                } else {
                    Judgement::Reject
                }
            }
        })
        .collect();

    let mut beliefs = Vec::with_capacity(reviewers.len());
    let mut opinions = BTreeMap::new();
    let mut truthful_opinions = BTreeMap::new();
    for (i, r) in reviewers.iter().enumerate() {
        let peer = &reviewers[peers[i]].profile;
        let prior = prior_belief(&r.profile, peer, world);
        let mut posterior = posterior_belief(&r.profile, peer, world, reported[i])?;
        if inverted[i] {
            posterior = 1.0 - posterior;
        }
        let honest_posterior = posterior_belief(&r.profile, peer, world, signals[i])?;
        opinions.insert(r.profile.node, infer_opinion(prior, posterior));
        truthful_opinions.insert(r.profile.node, infer_opinion(prior, honest_posterior));
        beliefs.push(BeliefPair {
            reviewer: r.profile.node,
            peer: peer.node,
            prior,
            posterior,
            report_latency: r.latency,
        });
    }

    let trust: BTreeMap<NodeId, f64> = reviewers
        .iter()
        .map(|r| (r.profile.node, r.profile.trust))
        .collect();
    let verdict = aggregate(&opinions, &trust, &params.thresholds)?;
    let truthful_verdict = aggregate(&truthful_opinions, &trust, &params.thresholds)?;

    let (lat_min, lat_max) = reviewers.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (lo.min(r.latency), hi.max(r.latency))
    });
    let mut scores = Vec::with_capacity(reviewers.len());
    for (i, r) in reviewers.iter().enumerate() {
        let peer_report = opinions[&reviewers[peers[i]].profile.node];
        let score = quadratic_score(beliefs[i].posterior, peer_report)?;
        let prompt = promptness(r.latency, lat_min, lat_max)?;
        let upd = update_trust(r.profile.trust_core, score, params.alpha, prompt.beta);
        scores.push(ScoreRecord {
            node: r.profile.node,
            score,
            trust_before: r.profile.trust,
            trust_after: upd.trust,
            core_after: upd.core,
            promptness: prompt.index,
        });
    }

    Ok(ReviewOutcome {
        beliefs,
        scores,
        verdict,
        truthful_verdict,
        signals: reviewers
            .iter()
            .zip(signals)
            .map(|(r, s)| (r.profile.node, s))
            .collect(),
    })
}
