use std::fs;

use priochain::engine::{decode_txs, encode_txs, EventKind, LedgerEvent};
use priochain::model::{NodeId, TxClass};
use priochain::peer_prediction::Thresholds;
use priochain::sim::attacks::ATTACKER;
use priochain::sim::metrics::{read_trace, write_trace};
use priochain::sim::{
    audit_trace, run_attack, run_fig7, run_scenario, Attack, BehaviorKind, BehaviorProfile,
    ConfigError, Fig7Config, ScenarioConfig,
};

fn thresholds(cfg: &ScenarioConfig) -> Thresholds {
    Thresholds::new(cfg.d_min, cfg.d_max).unwrap()
}

fn lines(trace: &[LedgerEvent]) -> Vec<String> {
    trace.iter().map(LedgerEvent::to_line).collect()
}

#[test]
fn same_config_same_trace() {
    let cfg = ScenarioConfig::honest(10, 5, 120.0);
    let (a, ta) = run_scenario(&cfg).unwrap();
    let (b, tb) = run_scenario(&cfg).unwrap();
    assert_eq!(lines(&ta), lines(&tb));
    assert_eq!(a, b);
    let other = ScenarioConfig::honest(10, 6, 120.0);
    assert_ne!(lines(&ta), lines(&run_scenario(&other).unwrap().1));
}

#[test]
fn priority_waits_at_most_one_verification_round() {
    let cfg = ScenarioConfig::honest(10, 11, 300.0);
    let (metrics, trace) = run_scenario(&cfg).unwrap();
    let round = 2.0 * cfg.network_latency.1;
    let delays = metrics.delays_of(TxClass::Priority);
    assert!(!delays.is_empty());
    assert!(delays.iter().all(|&d| (0.0..=round).contains(&d)), "{delays:?}");
    assert!(audit_trace(&trace, cfg.m, &thresholds(&cfg)).is_clean());
}

#[test]
fn empty_block_leader_never_gets_a_block_in() {
    let (summary, metrics, trace) = run_attack(Attack::EmptyBlock, 7).unwrap();
    assert_eq!(metrics.accepted_by(ATTACKER), 0);
    assert!(summary.attacker_voted_out >= 1);
    assert!(trace
        .iter()
        .any(|e| e.kind == EventKind::LeaderVotedOut && e.get("leader") == Some("3")));
    // The chain keeps growing under the next leaders.
    assert!(metrics.chain_height > 5);
}

#[test]
fn laggard_is_voted_out() {
    let (summary, metrics, _) = run_attack(Attack::Laggard { delay: 5.0 }, 0).unwrap();
    assert!(summary.attacker_voted_out >= 1);
    let late = metrics
        .built
        .iter()
        .find(|b| b.leader == ATTACKER)
        .expect("the laggard proposes");
    assert!(late.created_at - late.trigger_time >= 5.0 - 1e-9);
    assert!(!late.good);
}

#[test]
fn malicious_reviewers_lose_trust() {
    let mut cfg = ScenarioConfig::honest(20, 3, 300.0);
    let bad = [2usize, 9, 15];
    for &i in &bad {
        cfg.behaviors[i] = BehaviorProfile::with_kind(BehaviorKind::MaliciousReviewer { flip_prob: 1.0 });
    }
    let (metrics, trace) = run_scenario(&cfg).unwrap();
    assert!(audit_trace(&trace, cfg.m, &thresholds(&cfg)).is_clean());
    let mean = |pick: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = metrics
            .final_profiles
            .iter()
            .enumerate()
            .filter(|(i, _)| pick(*i))
            .map(|(_, p)| p.trust)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let honest = mean(&|i| !bad.contains(&i));
    let malicious = mean(&|i| bad.contains(&i));
    assert!(honest > malicious + 0.1, "honest {honest} malicious {malicious}");
}

#[test]
fn incentives_exhaust_the_budget() {
    let cfg = ScenarioConfig::honest(10, 2, 200.0);
    let (metrics, trace) = run_scenario(&cfg).unwrap();
    let ledger = &metrics.incentives;
    assert!((ledger.paid_from_budget() - cfg.incentive_budget).abs() < 1e-9);
    let accepted: Vec<(NodeId, usize)> = metrics
        .final_profiles
        .iter()
        .map(|p| (p.node, metrics.accepted_by(p.node)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let total: usize = accepted.iter().map(|a| a.1).sum();
    let leader_pot = cfg.incentive_budget * (1.0 - cfg.follower_share);
    for (node, n) in accepted {
        let want = leader_pot * n as f64 / total as f64;
        assert!((ledger.leader_rewards[&node] - want).abs() < 1e-9);
    }
    let paid = trace.iter().filter(|e| e.kind == EventKind::IncentivesPaid).count();
    assert!(paid > 0);
}

#[test]
fn audit_catches_a_replayed_transaction() {
    let cfg = ScenarioConfig::honest(10, 4, 120.0);
    let (_, trace) = run_scenario(&cfg).unwrap();
    let th = thresholds(&cfg);
    assert!(audit_trace(&trace, cfg.m, &th).is_clean());

    let proposals: Vec<usize> = trace
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::BlockProposed)
        .map(|(i, _)| i)
        .collect();
    let first_txs = decode_txs(trace[proposals[0]].get("txs").unwrap()).unwrap();
    let target = proposals[3];
    let mut txs = decode_txs(trace[target].get("txs").unwrap()).unwrap();
    txs.push(first_txs[0].clone());
    let mut tampered = trace.clone();
    let rec = &mut tampered[target];
    rec.payload.iter_mut().find(|(k, _)| k == "txs").unwrap().1 = encode_txs(&txs);

    let report = audit_trace(&tampered, cfg.m + 1, &th);
    assert!(
        report.violations.iter().any(|v| v.contains("replayed after commit")),
        "{:?}",
        report.violations
    );
}

#[test]
fn audit_catches_a_forged_outcome() {
    let cfg = ScenarioConfig::honest(10, 8, 120.0);
    let (_, mut trace) = run_scenario(&cfg).unwrap();
    let i = trace.iter().position(|e| e.kind == EventKind::Verdict).unwrap();
    trace[i].payload.iter_mut().find(|(k, _)| k == "outcome").unwrap().1 = "vote-out".into();
    let report = audit_trace(&trace, cfg.m, &thresholds(&cfg));
    assert!(!report.is_clean());
}

#[test]
fn metrics_files_carry_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::honest(10, 1, 60.0);
    let (metrics, trace) = run_scenario(&cfg).unwrap();
    metrics.write_dir(dir.path(), &trace).unwrap();
    let headers = [
        ("tx_delays.csv", "txid,class,arrival,included_at,delay"),
        ("blocks.csv", "height,leader,trigger_time,created_at,n_txs,good,outcome"),
        ("verdicts.csv", "time,height,leader,good,d,h,outcome,truthful_d,truthful_outcome"),
        ("trust.csv", "time,node,trust,score,promptness"),
        ("heights.csv", "time,height"),
        ("utilization.csv", "height,utilization"),
        ("nodes.csv", "node,trust,trust_core,peers,efficiency,voteouts,blocks_generated,reward"),
        ("summary.csv", "metric,value"),
    ];
    for (file, header) in headers {
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{file}");
    }
    let back = read_trace(&dir.path().join("trace.log")).unwrap();
    assert_eq!(lines(&back), lines(&trace));
    assert!(audit_trace(&back, cfg.m, &thresholds(&cfg)).is_clean());

    let copy = dir.path().join("copy.log");
    write_trace(&copy, &back).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(dir.path().join("trace.log")).unwrap());
}

const SCENARIO_TOML: &str = r#"
n_nodes = 12
seed = 21
duration = 90.0
tx_rate_normal = 1.5
tx_rate_priority = 0.2
m = 8
w = 4.0
network_latency = [0.1, 0.3]

[behavior.default]
kind = "honest"
p_fa = 0.05

[behavior.4]
kind = "malicious-reviewer"
flip_prob = 0.6

[behavior.7]
kind = "lazy-leader"
delay = 3.0
"#;

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, SCENARIO_TOML).unwrap();
    let cfg = ScenarioConfig::from_file(&path).unwrap();
    assert_eq!((cfg.n_nodes, cfg.seed, cfg.m), (12, 21, 8));
    assert_eq!(cfg.network_latency, (0.1, 0.3));
    assert_eq!(cfg.behaviors[4].kind, BehaviorKind::MaliciousReviewer { flip_prob: 0.6 });
    assert_eq!(cfg.behaviors[7].kind, BehaviorKind::LazyLeader { delay: 3.0 });
    assert_eq!(cfg.behaviors[0].p_fa, 0.05);
    assert_eq!(cfg.behaviors[4].p_fa, 0.05);
    let (_, trace) = run_scenario(&cfg).unwrap();
    assert!(audit_trace(&trace, cfg.m, &thresholds(&cfg)).is_clean());
}

#[test]
fn scenario_file_errors() {
    let unknown = format!("{SCENARIO_TOML}\nturbo = true\n");
    assert!(matches!(ScenarioConfig::from_toml_str(&unknown), Err(ConfigError::Parse(_))));
    let small = SCENARIO_TOML.replace("n_nodes = 12", "n_nodes = 4").replace("[behavior.4]", "[behavior.3]").replace("[behavior.7]", "[behavior.2]");
    assert!(matches!(ScenarioConfig::from_toml_str(&small), Err(ConfigError::Invalid { .. })));
    let thresholds = SCENARIO_TOML.replace("m = 8", "m = 8\nd_min = 0.8\nd_max = 0.2");
    assert!(matches!(ScenarioConfig::from_toml_str(&thresholds), Err(ConfigError::Invalid { .. })));
    let out_of_range = SCENARIO_TOML.replace("[behavior.7]", "[behavior.40]");
    assert!(ScenarioConfig::from_toml_str(&out_of_range).is_err());
    assert!(matches!(
        ScenarioConfig::from_file(std::path::Path::new("/nonexistent/s.toml")),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn fig7_default_separates() {
    let r = run_fig7(&Fig7Config::default()).unwrap();
    assert_eq!(r.iterations(), 10);
    assert!(r.separated());
}

#[test]
fn fig7_without_flipping_matches_honest() {
    let runs = 30;
    let gap: f64 = (0..runs)
        .map(|seed| {
            let r = run_fig7(&Fig7Config {
                seed,
                flip_prob: 0.0,
                ..Fig7Config::default()
            })
            .unwrap();
            r.honest_mean(10) - r.malicious_mean(10)
        })
        .sum::<f64>()
        / runs as f64;
    assert!(gap.abs() < 0.1, "{gap}");
}

/// Rounds are counted from zero, so iteration 2 is the first dishonest round
/// and its effect shows in `trust[3]`.
#[test]
fn fig7_always_flipping_stays_below_after_warmup() {
    let conforming = (0..30)
        .filter(|&seed| {
            let r = run_fig7(&Fig7Config {
                seed,
                flip_prob: 1.0,
                ..Fig7Config::default()
            })
            .unwrap();
            (3..=10).all(|i| r.malicious_mean(i) < r.honest_mean(i))
        })
        .count();
    assert!(conforming >= 28, "{conforming}/30 runs below at every iteration");
}
