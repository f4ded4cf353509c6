//! Classifier features and the threshold labeling rule used to generate
//! ground truth.

use crate::model::NodeProfile;

/// Upper bound of the trust feature.
pub const TRUST_SCALE_MAX: f64 = 10.0;
/// Upper bound of the block-count feature.
pub const BLOCKS_MAX: u32 = 50;

/// Reference node whose single-feature sweeps define the flip points.
pub const BASELINE: FeatureVector = FeatureVector {
    trust_scaled: 1.0,
    peers: 800,
    blocks_generated: 5,
    voteout: false,
};
pub const PEERS_FLIP: u32 = 980;
pub const BLOCKS_FLIP: u32 = 15;
pub const TRUST_FLIP: f64 = 3.0;

const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Trust on the `[0, 10]` scale.
    pub trust_scaled: f64,
    pub peers: u32,
    pub blocks_generated: u32,
    pub voteout: bool,
}

impl FeatureVector {
    pub fn new(trust_scaled: f64, peers: u32, blocks_generated: u32, voteout: bool) -> Self {
        Self {
            trust_scaled,
            peers,
            blocks_generated,
            voteout,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.trust_scaled,
            self.peers as f64,
            self.blocks_generated as f64,
            if self.voteout { 1.0 } else { 0.0 },
        ]
    }
}

/// Maps a node profile onto the classifier's view: raw trust `[0, 2]` is
/// rescaled to `[0, 10]` and the vote-out count saturates to a flag.
pub fn extract_features(profile: &NodeProfile, blocks_generated: u32) -> FeatureVector {
    FeatureVector {
        trust_scaled: (profile.trust / 2.0).clamp(0.0, 1.0) * TRUST_SCALE_MAX,
        peers: profile.peers,
        blocks_generated,
        voteout: profile.voteouts >= 1,
    }
}

/// Linear threshold rule producing candidate/follower labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelingOracle {
    pub n_nodes: u32,
    pub w_peers: f64,
    pub w_blocks: f64,
    pub w_trust: f64,
    pub w_voteout: f64,
    pub theta: f64,
}

impl LabelingOracle {
    pub fn score(&self, f: &FeatureVector) -> f64 {
        let max_peers = f64::from(self.n_nodes.saturating_sub(1).max(1));
        self.w_peers * f64::from(f.peers) / max_peers
            + self.w_blocks * f64::from(f.blocks_generated) / f64::from(BLOCKS_MAX)
            + self.w_trust * f.trust_scaled / TRUST_SCALE_MAX
            - if f.voteout { self.w_voteout } else { 0.0 }
    }

    /// Scores within `SCORE_EPS` of the threshold count as reaching it, so
    /// the calibrated flip points survive floating-point rounding.
    pub fn is_candidate(&self, f: &FeatureVector) -> bool {
        self.score(f) >= self.theta - SCORE_EPS
    }

    /// Largest score any vote-out-free node can reach.
    pub fn max_positive_contribution(&self) -> f64 {
        self.w_peers + self.w_blocks + self.w_trust
    }
}

/// Solves for weights so that each single-feature sweep from [`BASELINE`]
/// crosses the threshold exactly at its flip point.
///
/// With `w_trust = 1` the common margin is `delta = (3 - 1) / 10 = 0.2`, which
/// fixes `w_blocks = delta * 50 / (15 - 5)` and
/// `w_peers = delta * (N - 1) / (980 - 800)`. The vote-out weight is twice the
/// combined maximum of the other three terms, so a flagged node can never
/// reach the threshold.
pub fn calibrate_oracle(n_nodes: u32) -> LabelingOracle {
    assert!(n_nodes >= 2, "calibration needs at least two nodes");
    let w_trust = 1.0;
    let delta = w_trust * (TRUST_FLIP - BASELINE.trust_scaled) / TRUST_SCALE_MAX;
    let w_blocks = delta * f64::from(BLOCKS_MAX)
        / f64::from(BLOCKS_FLIP - BASELINE.blocks_generated);
    let w_peers = delta * f64::from(n_nodes - 1) / f64::from(PEERS_FLIP - BASELINE.peers);
    let mut oracle = LabelingOracle {
        n_nodes,
        w_peers,
        w_blocks,
        w_trust,
        w_voteout: 0.0,
        theta: 0.0,
    };
    oracle.w_voteout = 2.0 * oracle.max_positive_contribution();
    oracle.theta = oracle.score(&BASELINE) + delta;
    oracle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeId;

    #[test]
    fn feature_extraction() {
        let p = NodeProfile::new(NodeId(0), 800, 0.1, 0.1).unwrap().with_trust(0.2);
        assert_eq!(extract_features(&p, 5), FeatureVector::new(1.0, 800, 5, false));
        let mut p = p.with_trust(2.0);
        p.voteouts = 3;
        let f = extract_features(&p, 0);
        assert_eq!(f.trust_scaled, 10.0);
        assert!(f.voteout);
    }

    /// Hand-solved system for N = 1000: delta = 0.2, w_blocks = 1,
    /// w_peers = 0.2 * 999 / 180 = 1.11, theta = 1.11 * 0.8 + 0.1 + 0.1 + 0.2.
    #[test]
    fn calibration_matches_hand_solution() {
        let o = calibrate_oracle(1000);
        assert!((o.w_trust - 1.0).abs() < 1e-12);
        assert!((o.w_blocks - 1.0).abs() < 1e-12);
        assert!((o.w_peers - 1.11).abs() < 1e-12);
        let theta = 1.11 * 800.0 / 999.0 + 0.1 + 0.1 + 0.2;
        assert!((o.theta - theta).abs() < 1e-12);
        assert!((o.theta - 1.2889).abs() < 1e-4);
        assert!(o.w_voteout >= 2.5);
        assert!(o.w_voteout > o.max_positive_contribution());
    }

    #[test]
    fn flip_points_hold_exactly() {
        let o = calibrate_oracle(1000);
        let base = BASELINE;
        assert!(!o.is_candidate(&base));
        assert!(o.is_candidate(&FeatureVector { peers: 980, ..base }));
        assert!(!o.is_candidate(&FeatureVector { peers: 979, ..base }));
        assert!(o.is_candidate(&FeatureVector { blocks_generated: 15, ..base }));
        assert!(!o.is_candidate(&FeatureVector { blocks_generated: 14, ..base }));
        assert!(o.is_candidate(&FeatureVector { trust_scaled: 3.0 + 1e-9, ..base }));
        assert!(!o.is_candidate(&FeatureVector { trust_scaled: 2.99, ..base }));
    }

    #[test]
    fn voteout_always_yields_follower() {
        for n in [10u32, 100, 1000] {
            let o = calibrate_oracle(n);
            let best = FeatureVector::new(10.0, n - 1, BLOCKS_MAX, true);
            assert!(!o.is_candidate(&best));
        }
    }
}
