use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};

use super::datanode::DataNodeState;
use super::{
    keys_digest, ClockMode, HeightStats, LogRecord, Payload, SimConfig, SimError, SimEvent,
    SimOutcome, Tick, VerificationRecord,
};
use crate::codec::Canonical;
use crate::consensus::{
    build_candidate, choose_ommers, decrypt_features, finalize, ommer_records, select_task,
    select_winner, ConsensusError, MinerState, MiningConfig, MiningSession, Phase, SmlView,
};
use crate::data::{load_split, Dataset, DatasetKind};
use crate::fe::{group_gen, FunctionalKey, GroupParams};
use crate::hash::{sha256, sha256_concat, Hash256};
use crate::ledger::{
    AccountId, AccountState, Block, Chain, CiphertextBatch, OmmerRecord, RewardParams, Task,
    TaskId, TestData, OMMER_WINDOW, UNITS_PER_TOKEN,
};
use crate::rng::derive_seed;
use crate::sml::generate_for_shape;
use crate::tasks::{genesis_with_tasks, prepare_task, PreparedTask, TaskTemplate};
use crate::time::SimTime;

/// Chain-following state every node keeps.
struct Replica {
    chain: Chain,
    /// Tasks whose selection failed; their test sets are public.
    excluded: BTreeSet<TaskId>,
    attempts: u32,
    /// Candidates built on blocks this node has not appended yet.
    future: Vec<Block>,
    future_releases: Vec<TestData>,
    ommer_pool: BTreeMap<u64, Vec<OmmerRecord>>,
    keys: BTreeMap<(TaskId, Hash256), Vec<FunctionalKey>>,
    /// A released test set waiting for functional keys.
    awaiting: Option<TestData>,
    height_started: SimTime,
    /// Simulated duration of this node's latest training run at this
    /// height; miners only.
    training_time: Option<f64>,
}

impl Replica {
    fn new(chain: Chain) -> Self {
        Self {
            chain,
            excluded: BTreeSet::new(),
            attempts: 0,
            future: Vec::new(),
            future_releases: Vec::new(),
            ommer_pool: BTreeMap::new(),
            keys: BTreeMap::new(),
            awaiting: None,
            height_started: SimTime::ZERO,
            training_time: None,
        }
    }

    /// Files a candidate; true if it builds on the current head.
    fn receive(&mut self, received: &mut Vec<Block>, blk: Block) -> bool {
        let next = self.chain.height() + 1;
        if blk.height() == next && blk.header.prev_hash == self.chain.head_hash() {
            if !received.iter().any(|b| b.hash() == blk.hash()) {
                received.push(blk);
            }
            true
        } else {
            if blk.height() > next {
                self.future.push(blk);
            }
            false
        }
    }

    fn take_future(&mut self) -> Vec<Block> {
        std::mem::take(&mut self.future)
    }
}

struct MinerActor {
    state: MinerState,
    replica: Replica,
    mempool: Vec<(Task, Vec<CiphertextBatch>)>,
    cheat: bool,
}

struct DataActor {
    dn: DataNodeState,
    replica: Replica,
    received: Vec<Block>,
    template: TaskTemplate,
}

#[allow(clippy::large_enum_variant)]
enum Actor {
    Miner(MinerActor),
    Data(DataActor),
}

impl Actor {
    fn replica(&self) -> &Replica {
        match self {
            Actor::Miner(m) => &m.replica,
            Actor::Data(d) => &d.replica,
        }
    }
}

enum Settled {
    Appended(Box<Block>),
    Failed(TaskId),
}

/// Everything handlers touch besides the actor being driven.
struct Ctx<'a> {
    cfg: &'a SimConfig,
    group: GroupParams,
    mining: MiningConfig,
    datasets: BTreeMap<DatasetKind, Arc<(Dataset, Dataset)>>,
    views: HashMap<(TaskId, Hash256, Hash256, Option<Hash256>), Arc<SmlView>>,
    node_count: usize,
    observer: usize,
    now: SimTime,
    me: usize,
    out: Vec<(SimTime, usize, Payload)>,
    stats: Vec<HeightStats>,
    verifications: Vec<VerificationRecord>,
}

impl Ctx<'_> {
    fn latency(&self) -> SimTime {
        SimTime::from_secs_f64(self.cfg.latency)
    }

    fn send(&mut self, to: usize, payload: Payload) {
        let at = self.now + self.latency();
        self.out.push((at, to, payload));
    }

    fn schedule(&mut self, at: SimTime, tick: Tick) {
        self.out.push((at, self.me, Payload::Tick(tick)));
    }

    fn broadcast(&mut self, payload: Payload) {
        for to in 0..self.node_count {
            if to != self.me {
                self.send(to, payload.clone());
            }
        }
    }

    fn miners(&self) -> std::ops::Range<usize> {
        self.cfg.data_nodes..self.node_count
    }

    fn send_to_miners(&mut self, payload: Payload) {
        for to in self.miners() {
            self.send(to, payload.clone());
        }
    }

    fn dataset(&mut self, kind: DatasetKind) -> Result<Arc<(Dataset, Dataset)>, SimError> {
        if let Some(d) = self.datasets.get(&kind) {
            return Ok(d.clone());
        }
        let split = Arc::new(load_split(kind, &self.cfg.data_dir(), self.cfg.seed)?);
        self.datasets.insert(kind, split.clone());
        Ok(split)
    }

    /// The SML view of the task's training data (or of `test`), decrypted
    /// with `keys`. Cached on the task, head, key set and test set.
    fn view(
        &mut self,
        chain: &Chain,
        task: &Task,
        phs: &Hash256,
        keys: &[FunctionalKey],
        test: Option<&TestData>,
    ) -> Result<Arc<SmlView>, ConsensusError> {
        let key = (
            task.id,
            *phs,
            keys_digest(keys),
            test.map(|t| sha256(&t.to_canonical_bytes())),
        );
        if let Some(v) = self.views.get(&key) {
            return Ok(v.clone());
        }
        let view = match test {
            None => crate::consensus::training_view_with_keys(chain, task, phs, keys)?,
            Some(t) => {
                let sml = generate_for_shape(phs, task.sml)?;
                let features = decrypt_features(task, &sml, &t.ciphertexts, &t.labels, keys)?;
                SmlView { sml, features }
            }
        };
        let view = Arc::new(view);
        self.views.insert(key, view.clone());
        Ok(view)
    }
}

fn task_id_for(cfg: &SimConfig, node: usize, round: usize) -> TaskId {
    TaskId((round * cfg.data_nodes + node + 1) as u64)
}

fn prepare_next(
    ctx: &mut Ctx<'_>,
    dn: &DataNodeState,
    template: &TaskTemplate,
) -> Result<PreparedTask, SimError> {
    let id = task_id_for(ctx.cfg, dn.id.0 as usize, dn.posted_count());
    let split = ctx.dataset(template.dataset)?;
    let (train, test) = &*split;
    let params = template.params(id, dn.id, train.classes())?;
    Ok(prepare_task(
        &params,
        &ctx.group,
        train,
        test,
        derive_seed(ctx.cfg.seed, "task", id.0),
    )?)
}

/// Ranks, verifies and appends. Shared by miners and data nodes.
fn settle(
    ctx: &mut Ctx<'_>,
    replica: &mut Replica,
    received: &[Block],
    test: TestData,
    keys: &[FunctionalKey],
) -> Result<Settled, SimError> {
    let phs = replica.chain.head_hash();
    let height = replica.chain.height() + 1;
    let task = replica
        .chain
        .pending_task(test.task_id)
        .cloned()
        .ok_or(SimError::UnknownTask(test.task_id))?;
    let train = ctx.view(&replica.chain, &task, &phs, keys, None)?;
    let test_view = ctx.view(&replica.chain, &task, &phs, keys, Some(&test))?;
    let candidates: Vec<Block> = received
        .iter()
        .filter(|b| b.header.task_id == Some(task.id))
        .cloned()
        .collect();
    let result = select_winner(&candidates, &phs, &task, &train, &test_view, &test);
    let rejected: BTreeMap<Hash256, _> = match &result {
        Ok(sel) => sel.rejected.iter().cloned().collect(),
        Err(_) => BTreeMap::new(),
    };
    for b in &candidates {
        let rejection = match &result {
            Ok(_) => rejected.get(&b.hash()).cloned(),
            Err(_) => Some(
                crate::consensus::verify_block(b, &phs, &task, &train, &test)
                    .err()
                    .unwrap_or(crate::consensus::Rejection::WrongTask),
            ),
        };
        ctx.verifications.push(VerificationRecord {
            node: ctx.me,
            height,
            candidate: b.hash(),
            producer: b.header.winner,
            timestamp: b.header.timestamp,
            rejection,
        });
    }
    replica.awaiting = None;
    match result {
        Ok(sel) => {
            let ommers = choose_ommers(&replica.chain, &replica.ommer_pool, height);
            let cited = ommers.len();
            let released_at = test.released_at;
            let block = finalize(&sel.winner, test, sel.winner_test_accuracy, ommers);
            replica.chain.append(block.clone())?;
            let records = ommer_records(&sel, height);
            if !records.is_empty() {
                replica.ommer_pool.insert(height, records);
            }
            let keep_from = (height + 1).saturating_sub(OMMER_WINDOW);
            replica.ommer_pool.retain(|&h, _| h >= keep_from);
            replica.keys.clear();
            if ctx.me == ctx.observer {
                ctx.stats.push(HeightStats {
                    height,
                    task: task.id.0,
                    winner: block.header.winner.0,
                    started_at: replica.height_started.as_secs_f64(),
                    released_at: released_at.as_secs_f64(),
                    timestamp: block.header.timestamp.as_secs_f64(),
                    generation_time: (block.header.timestamp - replica.height_started)
                        .as_secs_f64(),
                    appended_at: ctx.now.as_secs_f64(),
                    candidates: candidates.len(),
                    rejected: sel.rejected.len(),
                    ommers_cited: cited,
                    train_accuracy: block.header.train_accuracy,
                    test_accuracy: block.header.test_accuracy,
                    attempts: replica.attempts + 1,
                    observer_training_time: replica.training_time,
                });
            }
            replica.attempts = 0;
            replica.height_started = ctx.now;
            replica.training_time = None;
            info!(
                "node {} appended height {height} won by {} (test acc {:.3})",
                ctx.me, block.header.winner, block.header.test_accuracy
            );
            Ok(Settled::Appended(Box::new(block)))
        }
        Err(ConsensusError::NoValidBlock) => {
            warn!(
                "node {}: no valid candidate for {} at height {height}",
                ctx.me, task.id
            );
            replica.excluded.insert(task.id);
            replica.attempts += 1;
            if replica.attempts >= ctx.cfg.max_attempts {
                return Err(SimError::HeightStalled { height });
            }
            Ok(Settled::Failed(task.id))
        }
        Err(e) => Err(e.into()),
    }
}

/// A test release is acted on once keys for the head are at hand.
fn on_release(
    ctx: &mut Ctx<'_>,
    replica: &mut Replica,
    received: &[Block],
    td: TestData,
    own_keys: Option<Vec<FunctionalKey>>,
) -> Result<Option<Settled>, SimError> {
    let phs = replica.chain.head_hash();
    let Some(task) = replica.chain.pending_task(td.task_id).cloned() else {
        if !replica.chain.is_solved(td.task_id) {
            replica.future_releases.push(td);
        }
        return Ok(None);
    };
    let keys = own_keys.or_else(|| replica.keys.get(&(task.id, phs)).cloned());
    match keys {
        Some(k) => settle(ctx, replica, received, td, &k).map(Some),
        None => {
            replica.awaiting = Some(td);
            ctx.send(
                task.poster.0 as usize,
                Payload::KeyRequest { task: task.id, phs },
            );
            Ok(None)
        }
    }
}

fn miner_begin(ctx: &mut Ctx<'_>, m: &mut MinerActor) {
    m.state.reset_height();
    if m.replica.chain.height() >= ctx.cfg.blocks {
        return;
    }
    let mut skip = m.replica.excluded.clone();
    skip.extend(m.state.flagged.iter().copied());
    let Some(task) = select_task(m.replica.chain.pending_tasks(), &skip) else {
        debug!(
            "miner {} has no task at height {}",
            ctx.me,
            m.replica.chain.height()
        );
        return;
    };
    let (id, owner) = (task.id, task.poster.0 as usize);
    m.state.current_task = Some(id);
    m.state.clock = ctx.now;
    let phs = m.replica.chain.head_hash();
    if m.replica.keys.contains_key(&(id, phs)) {
        let keys = m.replica.keys[&(id, phs)].clone();
        if let Err(e) = miner_train(ctx, m, id, phs, keys) {
            warn!("miner {}: {e}", ctx.me);
        }
    } else {
        ctx.send(owner, Payload::KeyRequest { task: id, phs });
    }
}

fn miner_train(
    ctx: &mut Ctx<'_>,
    m: &mut MinerActor,
    id: TaskId,
    phs: Hash256,
    keys: Vec<FunctionalKey>,
) -> Result<(), SimError> {
    let task = m
        .replica
        .chain
        .pending_task(id)
        .cloned()
        .ok_or(SimError::UnknownTask(id))?;
    let view = match ctx.view(&m.replica.chain, &task, &phs, &keys, None) {
        Ok(v) => v,
        Err(ConsensusError::Sml(e)) => {
            warn!("miner {} flags {id}: {e}", ctx.me);
            m.state.flagged.insert(id);
            miner_begin(ctx, m);
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let mut session = MiningSession::start(
        &task,
        phs,
        (*view).clone(),
        &ctx.mining,
        m.state.id,
        ctx.now,
    )?;
    let wall = Instant::now();
    let reason = session.run()?;
    let emit_at = match ctx.cfg.clock {
        ClockMode::Deterministic => session.now(),
        ClockMode::WallClock => ctx.now + SimTime::from_secs_f64(wall.elapsed().as_secs_f64()),
    };
    debug!(
        "miner {} trains {id} for {} steps ({reason:?}), emits at {emit_at}",
        ctx.me,
        session.steps()
    );
    m.replica.training_time = Some((emit_at - ctx.now).as_secs_f64());
    m.state.session = Some(session);
    m.state.phase = Phase::Training;
    ctx.schedule(emit_at, Tick::Emit { task: id, phs });
    Ok(())
}

fn miner_emit(ctx: &mut Ctx<'_>, m: &mut MinerActor, task: TaskId, phs: Hash256) {
    if m.state.phase != Phase::Training
        || m.state.current_task != Some(task)
        || m.replica.chain.head_hash() != phs
    {
        return;
    }
    let Some(session) = &m.state.session else {
        return;
    };
    let mut model = session.solution();
    if m.cheat {
        let foreign = sha256_concat(&[phs.as_bytes(), b"foreign", &(ctx.me as u64).to_be_bytes()]);
        model.sml = generate_for_shape(&foreign, session.task().sml).expect("shape was validated");
    }
    let blk = build_candidate(
        &m.replica.chain,
        m.state.id,
        task,
        model,
        ctx.now,
        &m.mempool,
    );
    m.state.phase = Phase::AwaitTest;
    m.state.clock = ctx.now;
    m.state.received_blks.push(blk.clone());
    ctx.broadcast(Payload::CandidateBlock(Box::new(blk)));
}

fn miner_after_settle(
    ctx: &mut Ctx<'_>,
    m: &mut MinerActor,
    settled: Settled,
) -> Result<(), SimError> {
    match settled {
        Settled::Appended(_) => {
            let chain = &m.replica.chain;
            m.mempool
                .retain(|(t, _)| chain.pending_task(t.id).is_none() && !chain.is_solved(t.id));
            miner_begin(ctx, m);
            for blk in m.replica.take_future() {
                m.replica.receive(&mut m.state.received_blks, blk);
            }
            for td in std::mem::take(&mut m.replica.future_releases) {
                handle_miner(ctx, m, Payload::TestRelease(Box::new(td)))?;
            }
        }
        Settled::Failed(task) => {
            m.state
                .received_blks
                .retain(|b| b.header.task_id != Some(task));
            miner_begin(ctx, m);
        }
    }
    Ok(())
}

fn handle_miner(ctx: &mut Ctx<'_>, m: &mut MinerActor, payload: Payload) -> Result<(), SimError> {
    match payload {
        Payload::Tick(Tick::Start) => miner_begin(ctx, m),
        Payload::TaskPost { task, batches } => {
            if !m.mempool.iter().any(|(t, _)| t.id == task.id) {
                m.mempool.push((task, batches));
            }
        }
        Payload::KeyRequest { .. } => {}
        Payload::KeyResponse { task, phs, keys } => {
            m.replica.keys.insert((task, phs), keys.clone());
            if m.replica.chain.head_hash() != phs {
                return Ok(());
            }
            if m.replica
                .awaiting
                .as_ref()
                .is_some_and(|t| t.task_id == task)
            {
                let td = m.replica.awaiting.take().unwrap();
                let received = m.state.received_blks.clone();
                if let Some(s) = on_release(ctx, &mut m.replica, &received, td, Some(keys))? {
                    miner_after_settle(ctx, m, s)?;
                }
            } else if m.state.current_task == Some(task) && m.state.phase == Phase::Idle {
                miner_train(ctx, m, task, phs, keys)?;
            }
        }
        Payload::Tick(Tick::Emit { task, phs }) => miner_emit(ctx, m, task, phs),
        Payload::CandidateBlock(b) => {
            m.replica.receive(&mut m.state.received_blks, *b);
        }
        Payload::TestRelease(td) => {
            if m.replica.chain.pending_task(td.task_id).is_some() {
                // Training stops; a run that has not emitted yet never will.
                m.state.phase = Phase::Verifying;
            }
            let received = m.state.received_blks.clone();
            if let Some(s) = on_release(ctx, &mut m.replica, &received, *td, None)? {
                miner_after_settle(ctx, m, s)?;
            }
        }
        Payload::Tick(_) => {}
    }
    Ok(())
}

fn dn_after_settle(ctx: &mut Ctx<'_>, d: &mut DataActor, settled: Settled) -> Result<(), SimError> {
    let own = |t: TaskId| d.dn.posted_task(t).is_some();
    let repost = match &settled {
        Settled::Appended(b) => {
            d.received.clear();
            for blk in d.replica.take_future() {
                d.replica.receive(&mut d.received, blk);
            }
            b.header.task_id.is_some_and(own)
        }
        Settled::Failed(t) => {
            let t = *t;
            d.received.retain(|b| b.header.task_id != Some(t));
            own(t)
        }
    };
    if repost && d.replica.chain.height() < ctx.cfg.blocks {
        let next = prepare_next(ctx, &d.dn, &d.template)?;
        ctx.send_to_miners(Payload::TaskPost {
            task: next.task.clone(),
            batches: vec![next.train.clone()],
        });
        d.dn.post(next);
    }
    if matches!(settled, Settled::Appended(_)) {
        for td in std::mem::take(&mut d.replica.future_releases) {
            handle_data(ctx, d, ctx.me, Payload::TestRelease(Box::new(td)))?;
        }
    }
    Ok(())
}

fn dn_release(ctx: &mut Ctx<'_>, d: &mut DataActor, task: TaskId) -> Result<(), SimError> {
    if d.dn.is_released(task) {
        return Ok(());
    }
    let td = d.dn.release_test_set(task, ctx.now)?;
    info!(
        "data node {} releases the test set of {task} at {}",
        ctx.me, ctx.now
    );
    ctx.broadcast(Payload::TestRelease(Box::new(td.clone())));
    let at = ctx.now + ctx.latency();
    ctx.schedule(at, Tick::Settle(Box::new(td)));
    Ok(())
}

fn handle_data(
    ctx: &mut Ctx<'_>,
    d: &mut DataActor,
    sender: usize,
    payload: Payload,
) -> Result<(), SimError> {
    match payload {
        Payload::KeyRequest { task, phs } => {
            let keys = match d.dn.serve_functional_keys(task, &phs) {
                Ok(k) => k,
                Err(e) => {
                    warn!("data node {} refuses a key request: {e}", ctx.me);
                    return Ok(());
                }
            };
            ctx.send(sender, Payload::KeyResponse { task, phs, keys });
            if d.dn.note_request(task, phs) && !d.dn.is_released(task) {
                let limit =
                    d.dn.posted_task(task)
                        .map_or(0.0, |t| t.model_spec.time_limit);
                let wait = limit + 2.0 * ctx.cfg.latency + ctx.cfg.release_delay;
                let at = ctx.now + SimTime::from_secs_f64(wait);
                ctx.schedule(at, Tick::Deadline { task, phs });
            }
        }
        Payload::KeyResponse { task, phs, keys } => {
            d.replica.keys.insert((task, phs), keys.clone());
            let waiting = d
                .replica
                .awaiting
                .as_ref()
                .is_some_and(|t| t.task_id == task);
            if waiting && d.replica.chain.head_hash() == phs {
                let td = d.replica.awaiting.take().unwrap();
                let received = d.received.clone();
                if let Some(s) = on_release(ctx, &mut d.replica, &received, td, Some(keys))? {
                    dn_after_settle(ctx, d, s)?;
                }
            }
        }
        Payload::CandidateBlock(b) => {
            if d.dn.note_candidate(&b) {
                let task = b.header.task_id.expect("counted candidates name a task");
                let at = ctx.now + SimTime::from_secs_f64(ctx.cfg.release_delay);
                ctx.schedule(at, Tick::ReleaseDue { task });
            }
            d.replica.receive(&mut d.received, *b);
        }
        Payload::Tick(Tick::ReleaseDue { task }) | Payload::Tick(Tick::Deadline { task, .. }) => {
            dn_release(ctx, d, task)?;
        }
        Payload::Tick(Tick::Settle(td)) => {
            let keys =
                d.dn.serve_functional_keys(td.task_id, &d.replica.chain.head_hash())?;
            let received = d.received.clone();
            if let Some(s) = on_release(ctx, &mut d.replica, &received, *td, Some(keys))? {
                dn_after_settle(ctx, d, s)?;
            }
        }
        Payload::TestRelease(td) => {
            let received = d.received.clone();
            if let Some(s) = on_release(ctx, &mut d.replica, &received, *td, None)? {
                dn_after_settle(ctx, d, s)?;
            }
        }
        Payload::TaskPost { .. } | Payload::Tick(_) => {}
    }
    Ok(())
}

fn node_name(cfg: &SimConfig, i: usize) -> String {
    if i < cfg.data_nodes {
        format!("dn-{i}")
    } else {
        format!("miner-{}", i - cfg.data_nodes)
    }
}

/// Runs the network until every node holds `cfg.blocks` blocks past
/// genesis.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let group = group_gen(cfg.lambda, derive_seed(cfg.seed, "group", 0))?;
    let node_count = cfg.data_nodes + cfg.miners;
    let mut ctx = Ctx {
        cfg,
        group,
        mining: MiningConfig {
            seconds_per_step: cfg.seconds_per_step,
            eval_every: cfg.eval_every,
            seed: cfg.seed,
        },
        datasets: BTreeMap::new(),
        views: HashMap::new(),
        node_count,
        observer: cfg.data_nodes,
        now: SimTime::ZERO,
        me: 0,
        out: Vec::new(),
        stats: Vec::new(),
        verifications: Vec::new(),
    };

    let mut dns = Vec::with_capacity(cfg.data_nodes);
    for i in 0..cfg.data_nodes {
        let template = cfg.tasks[i % cfg.tasks.len()].clone();
        let mut dn = DataNodeState::new(AccountId(i as u32), cfg.wait_count);
        let first = prepare_next(&mut ctx, &dn, &template)?;
        dn.post(first);
        dns.push((dn, template));
    }
    let firsts: Vec<&PreparedTask> = dns
        .iter()
        .map(|(dn, _)| {
            let id = task_id_for(cfg, dn.id.0 as usize, 0);
            dn.prepared(id).expect("first task was just posted")
        })
        .collect();
    let genesis = genesis_with_tasks(&firsts, SimTime::ZERO);
    let initial = AccountState::new(
        (0..cfg.data_nodes).map(|i| (AccountId(i as u32), cfg.initial_balance * UNITS_PER_TOKEN)),
    );
    let chain = Chain::new(
        genesis,
        initial,
        RewardParams {
            block_reward: cfg.block_reward * UNITS_PER_TOKEN,
        },
    )?;

    let mut actors: Vec<Actor> = dns
        .into_iter()
        .map(|(dn, template)| {
            Actor::Data(DataActor {
                dn,
                replica: Replica::new(chain.clone()),
                received: Vec::new(),
                template,
            })
        })
        .collect();
    for j in 0..cfg.miners {
        actors.push(Actor::Miner(MinerActor {
            state: MinerState::new(AccountId((cfg.data_nodes + j) as u32)),
            replica: Replica::new(chain.clone()),
            mempool: Vec::new(),
            cheat: cfg.cheaters.contains(&j),
        }));
    }

    let mut queue: BTreeMap<(SimTime, usize, u64), SimEvent> = BTreeMap::new();
    let mut seq = 0u64;
    let push = |queue: &mut BTreeMap<_, _>, ev: SimEvent| {
        queue.insert((ev.time, ev.recipient, ev.seq), ev);
    };
    for i in cfg.data_nodes..node_count {
        let ev = SimEvent {
            time: SimTime::ZERO,
            recipient: i,
            seq,
            sender: i,
            payload: Payload::Tick(Tick::Start),
        };
        push(&mut queue, ev);
        seq += 1;
    }
    let names: Vec<String> = (0..node_count).map(|i| node_name(cfg, i)).collect();
    let mut log = Vec::new();

    while let Some((_, ev)) = queue.pop_first() {
        let SimEvent {
            time,
            recipient: to,
            seq: id,
            sender: from,
            payload,
        } = ev;
        ctx.now = time;
        ctx.me = to;
        log.push(LogRecord {
            seq: id,
            time_us: time.micros(),
            from: names[from].clone(),
            to: names[to].clone(),
            kind: payload.kind(),
            digest: payload.digest().short(),
        });
        match &mut actors[to] {
            Actor::Miner(m) => handle_miner(&mut ctx, m, payload)?,
            Actor::Data(d) => handle_data(&mut ctx, d, from, payload)?,
        }
        for (at, recipient, payload) in ctx.out.drain(..) {
            let ev = SimEvent {
                time: at,
                recipient,
                seq,
                sender: to,
                payload,
            };
            push(&mut queue, ev);
            seq += 1;
        }
    }

    let lowest = actors
        .iter()
        .map(|a| a.replica().chain.height())
        .min()
        .unwrap_or(0);
    if lowest < cfg.blocks {
        return Err(SimError::Deadlock {
            height: lowest,
            time: ctx.now,
        });
    }
    let reference = actors[ctx.observer].replica().chain.clone();
    for a in &actors {
        let c = &a.replica().chain;
        for h in 0..=cfg.blocks {
            if c.block_hash(h) != reference.block_hash(h) {
                return Err(SimError::ChainDivergence { height: h });
            }
        }
    }
    Ok(SimOutcome {
        heads: actors
            .iter()
            .map(|a| a.replica().chain.head_hash())
            .collect(),
        chain: reference,
        node_names: names,
        stats: ctx.stats,
        log,
        verifications: ctx.verifications,
        cheaters: cfg
            .cheaters
            .iter()
            .map(|&j| AccountId((cfg.data_nodes + j) as u32))
            .collect(),
    })
}
