//! Discrete-event scenario runner.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{BehaviorKind, ConfigError, ScenarioConfig};
use super::metrics::{BuiltBlock, ClassifierStats, MetricsRecord, TrustSample, VerdictSample};
use crate::builder::{self, BuildError, BuilderConfig, Trigger};
use crate::election::dataset::{generate_scaled, DatasetError};
use crate::election::gbdt::{accuracy, logloss, train_classifier, BoostedEnsemble, TrainError, TrainParams};
use crate::election::{run_election, ElectionConfig, ElectionError, ElectionInput};
use crate::engine::{
    distribute_incentives, step, Command, ElectedInfo, EngineEvent, IncentiveConfig, LedgerEvent,
    Phase, ProtocolError, RoundState,
};
use crate::mempool::{Mempool, MempoolError};
use crate::model::{
    validate_block, Block, BlockStatus, ChainError, ChainState, ModelError, NodeId, NodeProfile,
    Time, Transaction, TxClass,
};
use crate::peer_prediction::{
    review_round, Judgement, PeerPredictionError, ReportStrategy, ReviewOutcome, ReviewParams,
    Reviewer, Thresholds, WorldPrior,
};

/// Reviews a malicious reviewer answers honestly before it starts lying.
pub const MALICIOUS_WARMUP: u32 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("election: {0}")]
    Election(#[from] ElectionError),
    #[error("verification: {0}")]
    Review(#[from] PeerPredictionError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("block building: {0}")]
    Build(#[from] BuildError),
    #[error("mempool: {0}")]
    Mempool(#[from] MempoolError),
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("node model: {0}")]
    Model(#[from] ModelError),
    #[error("classifier training: {0}")]
    Train(#[from] TrainError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
}

type TrainedModel = Arc<(BoostedEnsemble, ClassifierStats)>;
type ModelCache = Mutex<BTreeMap<(usize, usize, u64), TrainedModel>>;

/// Trains (or fetches the cached) election classifier for a network size.
pub fn election_model(n_nodes: usize, rows: usize, seed: u64) -> Result<TrainedModel, SimError> {
    static CACHE: OnceLock<ModelCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (n_nodes, rows, seed);
    if let Some(m) = cache.lock().expect("classifier cache poisoned").get(&key) {
        return Ok(Arc::clone(m));
    }
    let data = generate_scaled(rows, n_nodes, seed)?;
    let (model, history) = train_classifier(&data.rows, &TrainParams::default())?;
    let labels: Vec<bool> = data.rows.iter().map(|(_, y)| *y).collect();
    let probs: Vec<f64> = data.rows.iter().map(|(f, _)| model.predict_proba(f)).collect();
    let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let stats = ClassifierStats {
        rows,
        accuracy: accuracy(&preds, &labels).unwrap_or(0.0),
        logloss: logloss(&probs, &labels),
        final_train_logloss: history.train_logloss.last().copied().unwrap_or(f64::NAN),
    };
    let trained = Arc::new((model, stats));
    cache
        .lock()
        .expect("classifier cache poisoned")
        .insert(key, Arc::clone(&trained));
    Ok(trained)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Arrival(TxClass),
    /// Oldest normal transaction reached `w`.
    WaitTimer { generation: u64 },
    /// A lazy leader finally builds.
    DelayedBuild { generation: u64, trigger: Time },
    VerdictDue { generation: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: Time,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

struct PendingReview {
    block: Block,
    outcome: ReviewOutcome,
    good: bool,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    model: TrainedModel,
    builder: BuilderConfig,
    review: ReviewParams,
    profiles: Vec<NodeProfile>,
    pool: Mempool,
    chain: ChainState,
    round: RoundState,
    queue: BinaryHeap<Scheduled>,
    queue_seq: u64,
    trace: Vec<LedgerEvent>,
    metrics: MetricsRecord,
    next_txid: u64,
    /// Bumped whenever building restarts or ends; stale timers are ignored.
    generation: u64,
    triggered: bool,
    timer_armed: bool,
    pending: Option<PendingReview>,
    previous_candidates: Vec<NodeId>,
    reviews_done: Vec<u32>,
    accepted_by: BTreeMap<NodeId, u32>,
    fees_by: BTreeMap<NodeId, f64>,
    first_inclusion: BTreeMap<u64, usize>,
    arrival_rng: ChaCha8Rng,
    latency_rng: ChaCha8Rng,
    review_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs one scenario to completion and returns its metrics and audit trace.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(MetricsRecord, Vec<LedgerEvent>), SimError> {
    cfg.validate()?;
    let model = election_model(cfg.n_nodes, cfg.classifier_rows, cfg.classifier_seed)?;
    let mut peers_rng = stream(cfg.seed, 4);
    let profiles = cfg
        .behaviors
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let peers = peers_rng.gen_range(1..cfg.n_nodes as u32);
            NodeProfile::new(NodeId(i as u32), peers, b.p_fa, b.p_md)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut chain = ChainState::new();
    chain.append(Block::genesis(NodeId(0)))?;
    let mut sim = Sim {
        cfg,
        builder: BuilderConfig::new(cfg.m, cfg.w)?,
        review: ReviewParams {
            world: WorldPrior::new(cfg.world_prior)?,
            alpha: cfg.alpha,
            thresholds: Thresholds::new(cfg.d_min, cfg.d_max)?,
            capacity: cfg.m,
        },
        metrics: MetricsRecord {
            classifier: model.1,
            ..MetricsRecord::default()
        },
        model,
        profiles,
        pool: Mempool::new(),
        chain,
        round: RoundState::new(),
        queue: BinaryHeap::new(),
        queue_seq: 0,
        trace: Vec::new(),
        next_txid: 0,
        generation: 0,
        triggered: false,
        timer_armed: false,
        pending: None,
        previous_candidates: Vec::new(),
        reviews_done: vec![0; cfg.n_nodes],
        accepted_by: BTreeMap::new(),
        fees_by: BTreeMap::new(),
        first_inclusion: BTreeMap::new(),
        arrival_rng: stream(cfg.seed, 1),
        latency_rng: stream(cfg.seed, 2),
        review_rng: stream(cfg.seed, 3),
    };
    sim.run()?;
    Ok((sim.metrics, sim.trace))
}

impl Sim<'_> {
    fn schedule(&mut self, time: Time, ev: Ev) {
        self.queue.push(Scheduled {
            time,
            seq: self.queue_seq,
            ev,
        });
        self.queue_seq += 1;
    }

    fn schedule_arrival(&mut self, now: Time, class: TxClass) {
        let rate = match class {
            TxClass::Normal => self.cfg.tx_rate_normal,
            TxClass::Priority => self.cfg.tx_rate_priority,
        };
        if rate > 0.0 {
            // Inversion sampling of the exponential inter-arrival gap.
            let u: f64 = self.arrival_rng.gen();
            self.schedule(now - (1.0 - u).ln() / rate, Ev::Arrival(class));
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.schedule_arrival(0.0, TxClass::Normal);
        self.schedule_arrival(0.0, TxClass::Priority);
        self.elect(0.0, false)?;
        while let Some(next) = self.queue.pop() {
            if next.time > self.cfg.duration {
                break;
            }
            self.handle(next.time, next.ev)?;
        }
        self.finish()
    }

    fn handle(&mut self, now: Time, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrival(class) => {
                let txid = self.next_txid;
                self.next_txid += 1;
                let fee = match class {
                    TxClass::Normal => self.cfg.normal_fee,
                    TxClass::Priority => 0.0,
                };
                self.pool.submit(Transaction::new(txid, class, fee, now), now)?;
                self.metrics.arrivals.push((txid, class, now));
                self.schedule_arrival(now, class);
                self.check_trigger(now)?;
            }
            Ev::WaitTimer { generation } => {
                if generation == self.generation {
                    self.timer_armed = false;
                    if self.round.phase == Phase::Building && !self.triggered && !self.pool.is_empty() {
                        self.fire(now)?;
                    }
                }
            }
            Ev::DelayedBuild { generation, trigger } => {
                if generation == self.generation {
                    self.build_block(now, trigger)?;
                }
            }
            Ev::VerdictDue { generation } => {
                if generation == self.generation {
                    self.deliver_verdict(now)?;
                }
            }
        }
        Ok(())
    }

    fn leader_kind(&self) -> Option<BehaviorKind> {
        self.round
            .leader
            .map(|l| self.cfg.behaviors[l.0 as usize].kind)
    }

    /// Entry into the building phase for the current leader.
    fn start_building(&mut self, now: Time) -> Result<(), SimError> {
        self.generation += 1;
        self.triggered = false;
        self.timer_armed = false;
        if self.leader_kind() == Some(BehaviorKind::EmptyBlockAttacker) {
            self.triggered = true;
            return self.build_block(now, now);
        }
        self.check_trigger(now)
    }

    fn check_trigger(&mut self, now: Time) -> Result<(), SimError> {
        if self.round.phase != Phase::Building || self.triggered {
            return Ok(());
        }
        match builder::pool_trigger(&self.pool, now, &self.builder) {
            Trigger::CreateNow => self.fire(now),
            Trigger::Wait => {
                if !self.timer_armed {
                    if let Some(oldest) = self.pool.oldest_normal_arrival() {
                        self.timer_armed = true;
                        let generation = self.generation;
                        self.schedule(oldest + self.cfg.w, Ev::WaitTimer { generation });
                    }
                }
                Ok(())
            }
        }
    }

    fn fire(&mut self, now: Time) -> Result<(), SimError> {
        self.triggered = true;
        match self.leader_kind() {
            Some(BehaviorKind::LazyLeader { delay }) if delay > 0.0 => {
                let generation = self.generation;
                self.schedule(now + delay, Ev::DelayedBuild { generation, trigger: now });
                Ok(())
            }
            _ => self.build_block(now, now),
        }
    }

    fn build_block(&mut self, now: Time, trigger: Time) -> Result<(), SimError> {
        let leader = self.round.leader.expect("building without a leader");
        let height = self.chain.tip_height().map_or(0, |h| h + 1);
        let block = if self.leader_kind() == Some(BehaviorKind::EmptyBlockAttacker) {
            Block {
                height,
                parent: height.checked_sub(1),
                leader,
                created_at: now,
                last_tx_time: now,
                txs: Vec::new(),
                status: BlockStatus::Proposed,
            }
        } else {
            builder::build(&mut self.pool, leader, height, now, &self.builder)?
        };
        let report = validate_block(&block, self.cfg.m);
        let good = report.is_ok() && now - trigger <= self.cfg.lag_tolerance;
        let index = self.metrics.built.len();
        for tx in &block.txs {
            self.first_inclusion.entry(tx.txid).or_insert(index);
        }
        self.metrics.built.push(BuiltBlock {
            height,
            leader,
            trigger_time: trigger,
            created_at: now,
            txids: block.txs.iter().map(|t| t.txid).collect(),
            good,
            outcome: None,
        });
        let event = EngineEvent::BlockBuilt {
            block: block.clone(),
            report,
        };
        self.apply(now, &event)?;
        self.pending_review(now, block, good)
    }

    fn pending_review(&mut self, now: Time, block: Block, good: bool) -> Result<(), SimError> {
        let leader = block.leader;
        let (lo, hi) = self.cfg.network_latency;
        let mut reviewers = Vec::with_capacity(self.profiles.len() - 1);
        for p in self.profiles.iter().filter(|p| p.node != leader) {
            let behavior = self.cfg.behaviors[p.node.0 as usize];
            // Prior and posterior travel as two messages.
            let mut latency = 2.0 * behavior.extra_latency;
            for _ in 0..2 {
                latency += if hi > lo {
                    self.latency_rng.gen_range(lo..=hi)
                } else {
                    lo
                };
            }
            let strategy = match behavior.kind {
                BehaviorKind::MaliciousReviewer { flip_prob }
                    if self.reviews_done[p.node.0 as usize] >= MALICIOUS_WARMUP =>
                {
                    ReportStrategy::Invert { prob: flip_prob }
                }
                BehaviorKind::Colluder { group } => ReportStrategy::Collude { group },
                _ => ReportStrategy::Truthful,
            };
            reviewers.push(Reviewer {
                profile: p.clone().with_latency(latency),
                strategy,
                latency,
            });
        }
        let quality = if good {
            Judgement::Accept
        } else {
            Judgement::Reject
        };
        let seed = self.review_rng.next_u64();
        let outcome = review_round(&block, quality, &reviewers, &self.review, seed)?;
        let done_at = now
            + reviewers
                .iter()
                .map(|r| r.latency)
                .fold(0.0, f64::max);
        self.pending = Some(PendingReview {
            block,
            outcome,
            good,
        });
        let generation = self.generation;
        self.schedule(done_at, Ev::VerdictDue { generation });
        Ok(())
    }

    fn deliver_verdict(&mut self, now: Time) -> Result<(), SimError> {
        let PendingReview {
            block,
            outcome,
            good,
        } = self.pending.take().expect("verdict without a pending review");
        for s in &outcome.scores {
            let p = &mut self.profiles[s.node.0 as usize];
            p.trust = s.trust_after;
            p.trust_core = s.core_after;
            self.reviews_done[s.node.0 as usize] += 1;
            self.metrics.trust.push(TrustSample {
                time: now,
                node: s.node,
                trust: s.trust_after,
                score: s.score,
                promptness: s.promptness,
            });
        }
        if let Some(b) = self.metrics.built.last_mut() {
            b.outcome = Some(outcome.verdict.outcome);
        }
        self.metrics.verdicts.push(VerdictSample {
            time: now,
            height: block.height,
            leader: block.leader,
            good,
            decision: outcome.verdict.decision,
            trustworthy: outcome.verdict.trustworthy,
            outcome: outcome.verdict.outcome,
            truthful_decision: outcome.truthful_verdict.decision,
            truthful_outcome: outcome.truthful_verdict.outcome,
        });
        let event = EngineEvent::VerdictReached {
            height: block.height,
            verdict: outcome.verdict,
        };
        let commands = self.apply(now, &event)?;
        self.generation += 1;
        for c in commands {
            match c {
                Command::CommitBlock { .. } => {
                    let mut accepted = block.clone();
                    accepted.status = BlockStatus::Accepted;
                    let leader = &mut self.profiles[block.leader.0 as usize];
                    leader.blocks_generated += 1;
                    leader.efficiency = block.efficiency()?;
                    *self.accepted_by.entry(block.leader).or_default() += 1;
                    *self.fees_by.entry(block.leader).or_default() += block
                        .txs
                        .iter()
                        .filter(|t| !t.is_priority())
                        .map(|t| t.fee)
                        .sum::<f64>();
                    self.metrics
                        .utilization
                        .push((block.height, block.txs.len() as f64 / self.cfg.m as f64));
                    self.chain.append(accepted)?;
                    self.metrics.heights.push((now, block.height));
                }
                Command::RequeueTxs { .. } => {
                    self.pool.requeue(block.txs.iter().cloned(), now);
                }
                Command::RecordVoteOut { leader } => {
                    self.profiles[leader.0 as usize].voteouts += 1;
                    self.metrics.voteouts += 1;
                }
                Command::RunElection { voted_out } => self.elect(now, voted_out)?,
                Command::BuildBlock { .. } => self.start_building(now)?,
                Command::CollectVerdict { .. } => {}
            }
        }
        Ok(())
    }

    fn elect(&mut self, now: Time, voted_out: bool) -> Result<(), SimError> {
        let entropy = self.pool.entropy_sample();
        let input = ElectionInput {
            current_leader: self.round.leader,
            voted_out,
            previous_candidates: &self.previous_candidates,
            profiles: &self.profiles,
            entropy: &entropy,
            round_salt: self.round.term_index,
            last_height: self.chain.tip_height().unwrap_or(0),
        };
        let cfg = ElectionConfig {
            n_candidates: self.cfg.n_candidates,
            b_max: self.cfg.b_max,
        };
        let record = run_election(&input, &cfg, &self.model.0)?;
        let mut outcome = record.outcome;
        if let (Some(forced), 0) = (self.cfg.initial_leader, self.round.term_index) {
            if !outcome.candidates.contains(&forced) {
                outcome.candidates.pop();
                outcome.candidates.insert(0, forced);
            }
            outcome.leader = forced;
        }
        self.previous_candidates = outcome.candidates.clone();
        let event = EngineEvent::Elected(ElectedInfo {
            leader: outcome.leader,
            budget: outcome.budget,
            executor: record.executor,
            candidates: outcome.candidates,
        });
        let commands = self.apply(now, &event)?;
        for c in commands {
            if let Command::BuildBlock { .. } = c {
                self.start_building(now)?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, now: Time, event: &EngineEvent) -> Result<Vec<Command>, SimError> {
        let (state, events, commands) = step(&self.round, event, now, self.trace.len() as u64)?;
        self.round = state;
        self.trace.extend(events);
        Ok(commands)
    }

    fn finish(&mut self) -> Result<(), SimError> {
        let cfg = IncentiveConfig {
            follower_share: self.cfg.follower_share,
            fee_pass_through: self.cfg.fee_pass_through,
        };
        let ledger = distribute_incentives(
            &self.profiles,
            &self.accepted_by,
            &self.fees_by,
            self.cfg.incentive_budget,
            &cfg,
        )?;
        let events = ledger.to_events(self.cfg.duration, self.trace.len() as u64);
        self.trace.extend(events);
        self.metrics.incentives = ledger;
        self.metrics.final_profiles = self.profiles.clone();
        self.metrics.chain_height = self.chain.tip_height().unwrap_or(0);
        for (&txid, &index) in &self.first_inclusion {
            self.metrics.inclusion.insert(txid, index);
        }
        Ok(())
    }
}
