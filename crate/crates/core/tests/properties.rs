use std::collections::BTreeMap;

use proptest::prelude::*;

use priochain::builder::{build, should_create, BuilderConfig, Trigger};
use priochain::election::mtrng_draw;
use priochain::engine::{EventKind, LedgerEvent};
use priochain::mempool::Mempool;
use priochain::model::{validate_block, NodeId, NodeProfile, Transaction, TxClass};
use priochain::peer_prediction::{
    aggregate, posterior_belief, prior_belief, quadratic_score, signal_probability, update_trust,
    Judgement, Thresholds, WorldPrior,
};
use priochain::sim::{audit_trace, run_scenario, ScenarioConfig};

fn profile(id: u32, p_fa: f64, p_md: f64) -> NodeProfile {
    NodeProfile::new(NodeId(id), 1, p_fa, p_md).unwrap()
}

/// Error rates with `p_fa + p_md < 1`.
fn rates() -> impl Strategy<Value = (f64, f64)> {
    (0.0..0.99f64, 0.0..1.0f64).prop_map(|(a, frac)| (a, frac * (0.99 - a)))
}

proptest! {
    #[test]
    fn score_is_bounded(y in 0.0..=1.0f64, outcome: bool) {
        let s = quadratic_score(y, outcome).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn truthful_report_maximizes_expected_score(q in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let expected = |r: f64| {
            q * quadratic_score(r, true).unwrap() + (1.0 - q) * quadratic_score(r, false).unwrap()
        };
        prop_assert!(expected(q) >= expected(y) - 1e-12);
    }

    #[test]
    fn prior_is_the_posterior_mixture(
        (fa_i, md_i) in rates(),
        (fa_j, md_j) in rates(),
        q in 0.001..0.999f64,
    ) {
        let (i, j) = (profile(0, fa_i, md_i), profile(1, fa_j, md_j));
        let world = WorldPrior::new(q).unwrap();
        let prior = prior_belief(&i, &j, &world);
        let pa = posterior_belief(&i, &j, &world, Judgement::Accept).unwrap();
        let pr = posterior_belief(&i, &j, &world, Judgement::Reject).unwrap();
        let sa = signal_probability(&i, &world, Judgement::Accept);
        let sr = signal_probability(&i, &world, Judgement::Reject);
        prop_assert!((prior - (pa * sa + pr * sr)).abs() < 1e-12);
        prop_assert!(pa > prior && prior > pr, "{pa} {prior} {pr}");
    }

    #[test]
    fn trust_stays_in_range(core in 0.0..=1.0f64, score in 0.0..=1.0f64, alpha in 0.0..=1.0f64, beta in 0.0..=1.0f64) {
        let t = update_trust(core, score, alpha, beta);
        prop_assert!((0.0..=2.0).contains(&t.trust));
        prop_assert!((0.0..=1.0).contains(&t.core));
    }

    #[test]
    fn untrusted_opinions_never_matter(
        nodes in prop::collection::vec((any::<bool>(), 0.0..=2.0f64), 1..30),
        flip in any::<prop::sample::Index>(),
    ) {
        prop_assume!(nodes.iter().any(|(_, t)| *t > 1.0));
        let opinions: BTreeMap<NodeId, bool> =
            nodes.iter().enumerate().map(|(i, (x, _))| (NodeId(i as u32), *x)).collect();
        let trust: BTreeMap<NodeId, f64> =
            nodes.iter().enumerate().map(|(i, (_, t))| (NodeId(i as u32), *t)).collect();
        let th = Thresholds::default();
        let base = aggregate(&opinions, &trust, &th).unwrap();
        let i = flip.index(nodes.len());
        if nodes[i].1 <= 1.0 {
            let mut other = opinions.clone();
            other.insert(NodeId(i as u32), !nodes[i].0);
            let again = aggregate(&other, &trust, &th).unwrap();
            prop_assert_eq!(base.decision, again.decision);
            prop_assert_eq!(base.outcome, again.outcome);
        }
        prop_assert!((0.0..=1.0).contains(&base.decision));
    }

    #[test]
    fn drained_blocks_are_valid_and_ordered(
        arrivals in prop::collection::vec((0.0..100.0f64, any::<bool>()), 1..60),
        capacity in 1usize..15,
    ) {
        let mut sorted = arrivals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pool = Mempool::new();
        for (id, &(t, prio)) in sorted.iter().enumerate() {
            let tx = if prio { Transaction::priority(id as u64, t) } else { Transaction::normal(id as u64, t) };
            pool.submit(tx, t).unwrap();
        }
        let cfg = BuilderConfig::new(capacity, 5.0).unwrap();
        let mut height = 1;
        let mut seen = Vec::new();
        while !pool.is_empty() {
            let before = pool.counts();
            let block = build(&mut pool, NodeId(0), height, 100.0, &cfg).unwrap();
            prop_assert!(validate_block(&block, capacity).is_ok());
            // Priority transactions leave first, each class oldest first.
            let split = block.txs.iter().position(|t| t.class == TxClass::Normal).unwrap_or(block.txs.len());
            prop_assert!(block.txs[split..].iter().all(|t| t.class == TxClass::Normal));
            prop_assert_eq!(split, before.0.min(capacity));
            for w in block.txs.windows(2).filter(|w| w[0].class == w[1].class) {
                prop_assert!(w[0].arrival_time <= w[1].arrival_time);
            }
            seen.extend(block.txs.iter().map(|t| t.txid));
            height += 1;
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..sorted.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn trigger_fires_on_any_condition(p in 0usize..3, n in 0usize..20, waited in 0.0..10.0f64) {
        let cfg = BuilderConfig::new(10, 5.0).unwrap();
        let fire = p >= 1 || n >= 10 || waited >= 5.0;
        prop_assert_eq!(should_create(p, n, waited, &cfg) == Trigger::CreateNow, fire);
    }

    #[test]
    fn draw_stays_in_range_and_repeats(
        entropy in prop::collection::vec(any::<u8>(), 0..64),
        salt: u64,
        height: u64,
        n in 1u32..20,
        b_max in 1u32..10,
    ) {
        let candidates: Vec<NodeId> = (0..n).map(NodeId).collect();
        let a = mtrng_draw(&entropy, salt, height, &candidates, b_max).unwrap();
        let b = mtrng_draw(&entropy, salt, height, &candidates, b_max).unwrap();
        prop_assert!(candidates.contains(&a.leader));
        prop_assert!((1..=b_max).contains(&a.budget));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn trace_lines_round_trip(time in 0.0..1e6f64, seq: u64, height: u64, d in 0.0..=1.0f64) {
        let e = LedgerEvent::new(time, seq, EventKind::BlockRejectedRetry)
            .with("height", height)
            .with("leader", NodeId(4))
            .with("d", priochain::numfmt::float(d));
        let back = LedgerEvent::parse_line(&e.to_line()).unwrap();
        prop_assert_eq!(back.to_line(), e.to_line());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulated_traces_audit_clean(
        seed: u64,
        normal in 0.2..3.0f64,
        priority in 0.0..0.5f64,
        m in 3usize..15,
        w in 1.0..8.0f64,
    ) {
        let mut cfg = ScenarioConfig::honest(10, seed, 60.0);
        cfg.tx_rate_normal = normal;
        cfg.tx_rate_priority = priority;
        cfg.m = m;
        cfg.w = w;
        let (metrics, trace) = run_scenario(&cfg).unwrap();
        let th = Thresholds::new(cfg.d_min, cfg.d_max).unwrap();
        let report = audit_trace(&trace, cfg.m, &th);
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        prop_assert!(trace.windows(2).all(|p| p[0].time <= p[1].time));
        for (_, u) in &metrics.utilization {
            prop_assert!(*u > 0.0 && *u <= 1.0);
        }
        for d in metrics.tx_delays() {
            prop_assert!(d.delay().is_none_or(|x| x >= 0.0));
        }

        // A replayed proposal appended at the end is caught.
        if let Some(p) = trace.iter().find(|e| e.kind == EventKind::BlockProposed) {
            let mut tampered = trace.clone();
            let last = tampered.last().unwrap().time;
            let mut dup = p.clone();
            dup.time = last;
            dup.seq = tampered.len() as u64;
            tampered.push(dup);
            prop_assert!(!audit_trace(&tampered, cfg.m, &th).is_clean());
        }
    }
}
