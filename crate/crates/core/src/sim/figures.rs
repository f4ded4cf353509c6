//! Trust-dynamics experiments: honest versus malicious reviewers over
//! repeated rounds, and trust as a function of promptness and history weight.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::MALICIOUS_WARMUP;
use crate::model::{Block, BlockStatus, NodeId, NodeProfile, Transaction};
use crate::numfmt::float;
use crate::peer_prediction::{
    review_round, update_trust, Judgement, PeerPredictionError, ReportStrategy, ReviewParams,
    Reviewer, WorldPrior,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig7Config {
    pub seed: u64,
    pub iterations: usize,
    /// Size of the reviewing population; untracked members are honest.
    pub followers: usize,
    /// Tracked honest reviewers.
    pub honest: usize,
    /// Tracked malicious reviewers.
    pub malicious: usize,
    /// Report inversion probability once a malicious node stops pretending.
    pub flip_prob: f64,
    pub alpha: f64,
    pub p_fa: f64,
    pub p_md: f64,
    pub world_prior: f64,
    /// Identical for every reviewer, so promptness plays no part.
    pub latency: f64,
}

impl Default for Fig7Config {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 10,
            followers: 10,
            honest: 2,
            malicious: 2,
            flip_prob: 0.5,
            alpha: 0.5,
            p_fa: 0.1,
            p_md: 0.1,
            world_prior: 0.8,
            latency: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub node: NodeId,
    pub malicious: bool,
    /// `trust[0]` is the starting value, `trust[i]` the value after round `i`.
    pub trust: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig7Result {
    pub trajectories: Vec<Trajectory>,
}

impl Fig7Result {
    fn mean(&self, malicious: bool, iteration: usize) -> f64 {
        let group: Vec<f64> = self
            .trajectories
            .iter()
            .filter(|t| t.malicious == malicious)
            .map(|t| t.trust[iteration])
            .collect();
        group.iter().sum::<f64>() / group.len() as f64
    }

    pub fn honest_mean(&self, iteration: usize) -> f64 {
        self.mean(false, iteration)
    }

    pub fn malicious_mean(&self, iteration: usize) -> f64 {
        self.mean(true, iteration)
    }

    pub fn iterations(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.trust.len() - 1)
    }

    /// Honest mean above malicious mean after the last round.
    pub fn separated(&self) -> bool {
        let last = self.iterations();
        self.honest_mean(last) > self.malicious_mean(last)
    }

    /// CSV with header `iteration,node,role,trust`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,node,role,trust")?;
        for i in 0..=self.iterations() {
            for t in &self.trajectories {
                let role = if t.malicious { "malicious" } else { "honest" };
                writeln!(out, "{},{},{},{}", i, t.node, role, float(t.trust[i]))?;
            }
        }
        Ok(())
    }
}

/// Repeated verification rounds over a fixed population of reviewers, of
/// which `honest + malicious` are tracked. Malicious reviewers answer honestly
/// for their first rounds, then invert their reports with `flip_prob`.
pub fn run_fig7(cfg: &Fig7Config) -> Result<Fig7Result, PeerPredictionError> {
    let tracked = cfg.honest + cfg.malicious;
    if cfg.followers < 2 || cfg.followers < tracked {
        return Err(PeerPredictionError::TooFewFollowers(cfg.followers));
    }
    if !(0.0..=1.0).contains(&cfg.flip_prob) {
        return Err(PeerPredictionError::InvalidParameter("flip_prob must lie in [0, 1]"));
    }
    let world = WorldPrior::new(cfg.world_prior)?;
    let params = ReviewParams {
        world,
        alpha: cfg.alpha,
        ..ReviewParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut profiles = (0..cfg.followers)
        .map(|i| {
            NodeProfile::new(NodeId(i as u32 + 1), 1, cfg.p_fa, cfg.p_md)
                .map(|p| p.with_latency(cfg.latency))
                .map_err(|_| PeerPredictionError::InvalidParameter("p_fa + p_md must be below 1"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let malicious = |i: usize| i >= cfg.honest && i < tracked;
    let mut trajectories: Vec<Trajectory> = profiles
        .iter()
        .take(tracked)
        .enumerate()
        .map(|(i, p)| Trajectory {
            node: p.node,
            malicious: malicious(i),
            trust: vec![p.trust],
        })
        .collect();

    for round in 0..cfg.iterations {
        let height = round as u64 + 1;
        let block = Block {
            height,
            parent: Some(height - 1),
            leader: NodeId(0),
            created_at: height as f64,
            last_tx_time: height as f64 - 0.5,
            txs: vec![Transaction::normal(height, height as f64 - 0.5)],
            status: BlockStatus::Proposed,
        };
        let quality = if rng.gen_bool(cfg.world_prior) {
            Judgement::Accept
        } else {
            Judgement::Reject
        };
        let reviewers: Vec<Reviewer> = profiles
            .iter()
            .enumerate()
            .map(|(i, p)| Reviewer {
                profile: p.clone(),
                strategy: if malicious(i) && round as u32 >= MALICIOUS_WARMUP {
                    ReportStrategy::Invert {
                        prob: cfg.flip_prob,
                    }
                } else {
                    ReportStrategy::Truthful
                },
                latency: cfg.latency,
            })
            .collect();
        let outcome = review_round(&block, quality, &reviewers, &params, rng.gen())?;
        for s in &outcome.scores {
            let i = profiles
                .iter()
                .position(|p| p.node == s.node)
                .expect("score for a known reviewer");
            profiles[i].trust = s.trust_after;
            profiles[i].trust_core = s.core_after;
            if let Some(t) = trajectories.get_mut(i) {
                t.trust.push(s.trust_after);
            }
        }
    }
    Ok(Fig7Result { trajectories })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig8Config {
    /// Carried history blend `T_hat`.
    pub history: f64,
    /// Current-round score `R_q`.
    pub score: f64,
    /// History weight used for the promptness sweep.
    pub alpha: f64,
    /// Promptness used for the history-weight sweep.
    pub promptness: f64,
    pub promptness_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
}

impl Default for Fig8Config {
    fn default() -> Self {
        Self {
            history: 0.9,
            score: 0.6,
            alpha: 0.5,
            promptness: 0.8,
            promptness_grid: (3..=8).map(|i| f64::from(i) / 10.0).collect(),
            alpha_grid: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig8Result {
    /// `(promptness, trust)` at the fixed history weight.
    pub promptness_curve: Vec<(f64, f64)>,
    /// `(alpha, trust)` at the fixed promptness.
    pub alpha_curve: Vec<(f64, f64)>,
}

impl Fig8Result {
    /// CSV with header `curve,x,trust`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "curve,x,trust")?;
        for (name, curve) in [("promptness", &self.promptness_curve), ("alpha", &self.alpha_curve)] {
            for &(x, t) in curve {
                writeln!(out, "{},{},{}", name, float(x), float(t))?;
            }
        }
        Ok(())
    }
}

pub fn run_fig8(cfg: &Fig8Config) -> Result<Fig8Result, PeerPredictionError> {
    let unit = |v: f64, what: &'static str| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(PeerPredictionError::InvalidParameter(what))
        }
    };
    unit(cfg.history, "history must lie in [0, 1]")?;
    unit(cfg.score, "score must lie in [0, 1]")?;
    let trust = |alpha: f64, promptness: f64| update_trust(cfg.history, cfg.score, alpha, 1.0 - promptness).trust;
    let promptness_curve = cfg
        .promptness_grid
        .iter()
        .map(|&p| unit(p, "promptness must lie in [0, 1]").map(|p| (p, trust(cfg.alpha, p))))
        .collect::<Result<_, _>>()?;
    let alpha_curve = cfg
        .alpha_grid
        .iter()
        .map(|&a| unit(a, "alpha must lie in [0, 1]").map(|a| (a, trust(a, cfg.promptness))))
        .collect::<Result<_, _>>()?;
    Ok(Fig8Result {
        promptness_curve,
        alpha_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig8_shapes() {
        let r = run_fig8(&Fig8Config::default()).unwrap();
        assert_eq!(r.promptness_curve.len(), 6);
        assert!(r.promptness_curve.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(r.alpha_curve.windows(2).all(|w| w[1].1 < w[0].1));
        // alpha = 0 ignores the round score.
        let other = Fig8Config {
            score: 0.1,
            ..Fig8Config::default()
        };
        let a0 = run_fig8(&other).unwrap().alpha_curve[0].1;
        assert_eq!(a0, r.alpha_curve[0].1);
        // 0.5 * 0.6 + 0.5 * 0.9 + 0.8
        assert!((r.promptness_curve[5].1 - 1.55).abs() < 1e-12);
    }

    #[test]
    fn fig7_is_seeded() {
        let cfg = Fig7Config::default();
        assert_eq!(run_fig7(&cfg).unwrap(), run_fig7(&cfg).unwrap());
        let r = run_fig7(&cfg).unwrap();
        assert_eq!(r.iterations(), 10);
        assert_eq!(r.trajectories.len(), 4);
    }
}
