//! Discrete-event simulator of a permissioned ledger: k-of-any endorsement,
//! a single ordering sequencer that cuts blocks by size or timeout, a serial
//! committer and a hash-chained block log.
//!
//! Timing model (simulated milliseconds):
//! - each endorsing peer is a FIFO server whose service time is drawn
//!   uniformly from `mean ± jitter`; a transaction goes to the `k` live peers
//!   of the policy set that free up first and is endorsed when the last of
//!   them answers;
//! - the orderer cuts a block when it holds `max_block_size` transactions or
//!   `batch_timeout_ms` after the first transaction of the batch arrived;
//! - the committer validates blocks one at a time, spending
//!   `validation_base_ms + endorsements × validation_per_endorsement_ms` per
//!   transaction, and the whole block commits when validation ends.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{Effect, Operation};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("submission queue full ({0} transactions in flight)")]
    Backpressure(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("chain verification failed at height {height}: {reason}")]
    Chain { height: u64, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub event_id: String,
    pub timestamp: u64,
    pub requestor: String,
    pub patient_gid: String,
    pub operation: Operation,
    pub decision: Effect,
    pub rule_id: String,
    pub one_time_token_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationEvent {
    pub gid: String,
    pub role: String,
    pub display_name: String,
    pub organization: String,
    pub attributes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Access(AccessEvent),
    Registration(RegistrationEvent),
    Kv { key: String, value: String },
}

impl Payload {
    fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub peer_id: String,
    /// Placeholder signature: hex SHA-256 of peer id and tx id.
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub payload: Payload,
    pub submit_time: f64,
    pub endorsements: Vec<Endorsement>,
    pub commit_time: Option<f64>,
}

impl Transaction {
    /// Digest covering id, payload and endorsements.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.tx_id.as_bytes());
        h.update(self.payload.canonical_bytes());
        for e in &self.endorsements {
            h.update(e.peer_id.as_bytes());
            h.update(e.signature.as_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: String,
    pub txs: Vec<Transaction>,
    pub block_hash: String,
}

pub const GENESIS_PREV_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

pub fn compute_block_hash(height: u64, prev_hash: &str, txs: &[Transaction]) -> String {
    let mut h = Sha256::new();
    h.update(height.to_be_bytes());
    h.update(prev_hash.as_bytes());
    for tx in txs {
        h.update(tx.hash());
    }
    hex::encode(h.finalize())
}

/// Walks the chain from genesis recomputing every hash.
pub fn verify_chain(blocks: &[Block]) -> Result<(), LedgerError> {
    let mut prev = GENESIS_PREV_HASH.to_string();
    for (i, b) in blocks.iter().enumerate() {
        let fail = |reason: &str| LedgerError::Chain { height: b.height, reason: reason.into() };
        if b.height != i as u64 {
            return Err(fail("height out of sequence"));
        }
        if b.prev_hash != prev {
            return Err(fail("prev_hash mismatch"));
        }
        if compute_block_hash(b.height, &b.prev_hash, &b.txs) != b.block_hash {
            return Err(fail("block hash mismatch"));
        }
        prev = b.block_hash.clone();
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerProfile {
    pub id: String,
    #[serde(default = "default_latency_mean")]
    pub latency_mean_ms: f64,
    #[serde(default = "default_latency_jitter")]
    pub latency_jitter_ms: f64,
}

fn default_latency_mean() -> f64 {
    20.0
}

fn default_latency_jitter() -> f64 {
    5.0
}

impl PeerProfile {
    pub fn new(id: impl Into<String>) -> Self {
        PeerProfile { id: id.into(), latency_mean_ms: default_latency_mean(), latency_jitter_ms: default_latency_jitter() }
    }

    fn validate(&self) -> Result<(), LedgerError> {
        if !(self.latency_mean_ms.is_finite() && self.latency_jitter_ms.is_finite())
            || self.latency_jitter_ms < 0.0
            || self.latency_mean_ms - self.latency_jitter_ms < 0.0
        {
            return Err(LedgerError::Config(format!("peer {} latency must stay non-negative", self.id)));
        }
        Ok(())
    }
}

/// `k` endorsements from distinct members of `peer_set`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub k: usize,
    pub peer_set: Vec<String>,
}

impl EndorsementPolicy {
    pub fn new(k: usize, peer_set: Vec<String>) -> Result<Self, LedgerError> {
        let p = EndorsementPolicy { k, peer_set };
        p.validate()?;
        Ok(p)
    }

    pub fn k_of_any(k: usize, peers: &[PeerProfile]) -> Result<Self, LedgerError> {
        Self::new(k, peers.iter().map(|p| p.id.clone()).collect())
    }

    fn validate(&self) -> Result<(), LedgerError> {
        if self.k == 0 || self.k > self.peer_set.len() {
            return Err(LedgerError::Argument(format!("need 1 <= k <= {}, got {}", self.peer_set.len(), self.k)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    pub seed: u64,
    pub max_block_size: usize,
    pub batch_timeout_ms: f64,
    pub validation_base_ms: f64,
    pub validation_per_endorsement_ms: f64,
    pub queue_capacity: usize,
    pub peers: Vec<PeerProfile>,
    pub policy: EndorsementPolicy,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        let peers: Vec<PeerProfile> = (0..3).map(|i| PeerProfile::new(format!("peer{i}"))).collect();
        LedgerConfig {
            seed: 42,
            max_block_size: 10,
            batch_timeout_ms: 500.0,
            validation_base_ms: 23.0,
            validation_per_endorsement_ms: 29.0,
            queue_capacity: 1_000_000,
            policy: EndorsementPolicy { k: 1, peer_set: peers.iter().map(|p| p.id.clone()).collect() },
            peers,
        }
    }
}

impl LedgerConfig {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.max_block_size == 0 {
            return Err(LedgerError::Config("max_block_size must be positive".into()));
        }
        for (name, v) in [
            ("batch_timeout_ms", self.batch_timeout_ms),
            ("validation_base_ms", self.validation_base_ms),
            ("validation_per_endorsement_ms", self.validation_per_endorsement_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LedgerError::Config(format!("{name} must be a non-negative number")));
            }
        }
        for p in &self.peers {
            p.validate()?;
        }
        self.policy.validate()?;
        if let Some(unknown) = self.policy.peer_set.iter().find(|id| !self.peers.iter().any(|p| &p.id == *id)) {
            return Err(LedgerError::Config(format!("policy names unknown peer {unknown}")));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, LedgerError> {
        let cfg: LedgerConfig = toml::from_str(text).map_err(|e| LedgerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Endorsing,
    Ordering,
    Committed,
    EndorsementFailed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Endorse(usize),
    Endorsed(usize),
    BatchTimeout(u64),
    Commit(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then(o.seq.cmp(&self.seq))
    }
}

/// Filter for committed access events; `None` fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub patient_gid: Option<String>,
    pub requestor: Option<String>,
    pub decision: Option<Effect>,
}

impl EventFilter {
    pub fn patient(gid: impl Into<String>) -> Self {
        EventFilter { patient_gid: Some(gid.into()), ..Default::default() }
    }

    fn matches(&self, e: &AccessEvent) -> bool {
        self.patient_gid.as_ref().is_none_or(|g| g == &e.patient_gid)
            && self.requestor.as_ref().is_none_or(|r| r == &e.requestor)
            && self.decision.is_none_or(|d| d == e.decision)
    }
}

/// Cloneable handle for submitting from other threads; submissions enter the
/// simulator on the next [`Ledger::drain_submissions`].
#[derive(Clone, Debug)]
pub struct Submitter {
    tx: mpsc::Sender<(Payload, f64)>,
}

impl Submitter {
    pub fn submit(&self, payload: Payload, at: f64) -> Result<(), LedgerError> {
        self.tx.send((payload, at)).map_err(|_| LedgerError::Argument("ledger has been dropped".into()))
    }
}

pub struct Ledger {
    cfg: LedgerConfig,
    inbox: mpsc::Receiver<(Payload, f64)>,
    inbox_tx: mpsc::Sender<(Payload, f64)>,
    rng: ChaCha20Rng,
    now: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    txs: Vec<Transaction>,
    status: Vec<TxStatus>,
    peer_free_at: Vec<f64>,
    peer_alive: Vec<bool>,
    policy_peers: Vec<usize>,
    batch: Vec<usize>,
    batch_gen: u64,
    validator_free_at: f64,
    pending_blocks: BTreeMap<usize, Vec<usize>>,
    next_block_slot: usize,
    chain: Vec<Block>,
    in_flight: usize,
    nonce: u64,
}

impl Ledger {
    pub fn new(cfg: LedgerConfig) -> Result<Self, LedgerError> {
        cfg.validate()?;
        let (inbox_tx, inbox) = mpsc::channel();
        let policy_peers = cfg
            .policy
            .peer_set
            .iter()
            .map(|id| cfg.peers.iter().position(|p| &p.id == id).expect("validated"))
            .collect();
        Ok(Ledger {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            txs: Vec::new(),
            status: Vec::new(),
            peer_free_at: vec![0.0; cfg.peers.len()],
            peer_alive: vec![true; cfg.peers.len()],
            policy_peers,
            batch: Vec::new(),
            batch_gen: 0,
            validator_free_at: 0.0,
            pending_blocks: BTreeMap::new(),
            next_block_slot: 0,
            chain: Vec::new(),
            in_flight: 0,
            nonce: 0,
            inbox,
            inbox_tx,
            cfg,
        })
    }

    /// Resumes from a previously committed chain; simulated time continues
    /// after the last commit.
    pub fn with_chain(cfg: LedgerConfig, chain: Vec<Block>) -> Result<Self, LedgerError> {
        verify_chain(&chain)?;
        let mut l = Ledger::new(cfg)?;
        let last = chain.iter().flat_map(|b| &b.txs).filter_map(|t| t.commit_time).fold(0.0, f64::max);
        l.now = last;
        l.validator_free_at = last;
        l.peer_free_at.iter_mut().for_each(|t| *t = last);
        l.nonce = chain.iter().map(|b| b.txs.len() as u64).sum();
        l.rng = ChaCha20Rng::seed_from_u64(l.cfg.seed ^ l.nonce);
        l.chain = chain;
        Ok(l)
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn set_peer_alive(&mut self, peer_id: &str, alive: bool) -> Result<(), LedgerError> {
        let i = self
            .cfg
            .peers
            .iter()
            .position(|p| p.id == peer_id)
            .ok_or_else(|| LedgerError::Argument(format!("unknown peer {peer_id}")))?;
        self.peer_alive[i] = alive;
        Ok(())
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event { time, seq: self.seq, kind });
    }

    /// Queues a transaction at simulated time `at` (not before the current
    /// time) and returns its id.
    pub fn submit_transaction(&mut self, payload: Payload, at: f64) -> Result<String, LedgerError> {
        if self.in_flight >= self.cfg.queue_capacity {
            return Err(LedgerError::Backpressure(self.in_flight));
        }
        let at = at.max(self.now);
        self.nonce += 1;
        let salt: u64 = self.rng.gen();
        let mut h = Sha256::new();
        h.update(payload.canonical_bytes());
        h.update(at.to_bits().to_be_bytes());
        h.update(self.nonce.to_be_bytes());
        h.update(salt.to_be_bytes());
        let tx_id = hex::encode(h.finalize());
        let idx = self.txs.len();
        self.txs.push(Transaction { tx_id: tx_id.clone(), payload, submit_time: at, endorsements: Vec::new(), commit_time: None });
        self.status.push(TxStatus::Endorsing);
        self.in_flight += 1;
        self.schedule(at, EventKind::Endorse(idx));
        Ok(tx_id)
    }

    pub fn submitter(&self) -> Submitter {
        Submitter { tx: self.inbox_tx.clone() }
    }

    /// Moves queued submissions into the simulator in arrival order.
    pub fn drain_submissions(&mut self) -> Vec<Result<String, LedgerError>> {
        let mut out = Vec::new();
        while let Ok((payload, at)) = self.inbox.try_recv() {
            out.push(self.submit_transaction(payload, at));
        }
        out
    }

    pub fn submit(&mut self, payload: Payload) -> Result<String, LedgerError> {
        let now = self.now;
        self.submit_transaction(payload, now)
    }

    pub fn append_access_event(&mut self, event: AccessEvent) -> Result<String, LedgerError> {
        self.submit(Payload::Access(event))
    }

    fn sample_latency(&mut self, peer: usize) -> f64 {
        let p = &self.cfg.peers[peer];
        if p.latency_jitter_ms == 0.0 {
            p.latency_mean_ms
        } else {
            self.rng.gen_range(p.latency_mean_ms - p.latency_jitter_ms..=p.latency_mean_ms + p.latency_jitter_ms)
        }
    }

    fn on_endorse(&mut self, tx: usize) {
        let mut live: Vec<usize> = self.policy_peers.iter().copied().filter(|&p| self.peer_alive[p]).collect();
        if live.len() < self.cfg.policy.k {
            self.status[tx] = TxStatus::EndorsementFailed;
            self.in_flight -= 1;
            return;
        }
        live.sort_by(|&a, &b| self.peer_free_at[a].total_cmp(&self.peer_free_at[b]).then(a.cmp(&b)));
        let mut done = self.now;
        for &p in &live[..self.cfg.policy.k] {
            let start = self.peer_free_at[p].max(self.now);
            let end = start + self.sample_latency(p);
            self.peer_free_at[p] = end;
            done = done.max(end);
            let peer_id = self.cfg.peers[p].id.clone();
            let signature = hex::encode(Sha256::new().chain_update(peer_id.as_bytes()).chain_update(self.txs[tx].tx_id.as_bytes()).finalize());
            self.txs[tx].endorsements.push(Endorsement { peer_id, signature });
        }
        self.schedule(done, EventKind::Endorsed(tx));
    }

    fn on_endorsed(&mut self, tx: usize) {
        self.status[tx] = TxStatus::Ordering;
        self.batch.push(tx);
        if self.batch.len() == 1 {
            self.batch_gen += 1;
            let gen = self.batch_gen;
            self.schedule(self.now + self.cfg.batch_timeout_ms, EventKind::BatchTimeout(gen));
        }
        if self.batch.len() >= self.cfg.max_block_size {
            self.cut_block();
        }
    }

    fn cut_block(&mut self) {
        let txs = std::mem::take(&mut self.batch);
        self.batch_gen += 1;
        let start = self.validator_free_at.max(self.now);
        let cost: f64 = txs
            .iter()
            .map(|&t| self.cfg.validation_base_ms + self.txs[t].endorsements.len() as f64 * self.cfg.validation_per_endorsement_ms)
            .sum();
        let end = start + cost;
        self.validator_free_at = end;
        let slot = self.next_block_slot;
        self.next_block_slot += 1;
        self.pending_blocks.insert(slot, txs);
        self.schedule(end, EventKind::Commit(slot));
    }

    fn on_commit(&mut self, slot: usize) {
        let idxs = self.pending_blocks.remove(&slot).expect("scheduled block");
        let height = self.chain.len() as u64;
        let prev_hash = self.chain.last().map_or_else(|| GENESIS_PREV_HASH.to_string(), |b| b.block_hash.clone());
        let mut txs = Vec::with_capacity(idxs.len());
        for i in idxs {
            self.txs[i].commit_time = Some(self.now);
            self.status[i] = TxStatus::Committed;
            self.in_flight -= 1;
            txs.push(self.txs[i].clone());
        }
        let block_hash = compute_block_hash(height, &prev_hash, &txs);
        self.chain.push(Block { height, prev_hash, txs, block_hash });
    }

    fn step(&mut self) -> bool {
        let Some(ev) = self.events.pop() else { return false };
        self.now = self.now.max(ev.time);
        match ev.kind {
            EventKind::Endorse(t) => self.on_endorse(t),
            EventKind::Endorsed(t) => self.on_endorsed(t),
            EventKind::BatchTimeout(gen) => {
                if gen == self.batch_gen && !self.batch.is_empty() {
                    self.cut_block();
                }
            }
            EventKind::Commit(slot) => self.on_commit(slot),
        }
        true
    }

    /// Processes events up to and including simulated time `t`.
    pub fn run_until(&mut self, t: f64) {
        while self.events.peek().is_some_and(|e| e.time <= t) {
            self.step();
        }
        self.now = self.now.max(t);
    }

    pub fn run_to_quiescence(&mut self) {
        while self.step() {}
    }

    pub fn status(&self, tx_id: &str) -> Option<TxStatus> {
        self.txs.iter().position(|t| t.tx_id == tx_id).map(|i| self.status[i])
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn verify(&self) -> Result<(), LedgerError> {
        verify_chain(&self.chain)
    }

    pub fn committed(&self) -> impl Iterator<Item = &Transaction> {
        self.chain.iter().flat_map(|b| b.txs.iter())
    }

    /// Access events from committed blocks only.
    pub fn query_events(&self, filter: &EventFilter) -> Vec<AccessEvent> {
        self.committed()
            .filter_map(|t| match &t.payload {
                Payload::Access(e) if filter.matches(e) => Some(e.clone()),
                _ => None,
            })
            .collect()
    }

    /// Latest committed value per key.
    pub fn kv(&self, key: &str) -> Option<String> {
        self.committed()
            .filter_map(|t| match &t.payload {
                Payload::Kv { key: k, value } if k == key => Some(value.clone()),
                _ => None,
            })
            .last()
    }

    pub fn kv_prefix(&self, prefix: &str) -> BTreeMap<String, String> {
        self.committed()
            .filter_map(|t| match &t.payload {
                Payload::Kv { key, value } if key.starts_with(prefix) => Some((key.clone(), value.clone())),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub send_rate_tps: f64,
    pub duration_s: f64,
    pub k: usize,
    pub submitted: usize,
    pub committed: usize,
    pub failed: usize,
    pub throughput_tps: Stat,
    pub latency_ms: Stat,
}

pub const LOAD_CSV_HEADER: &str = "send_rate,k,min_tps,avg_tps,max_tps,min_latency_ms,avg_latency_ms,max_latency_ms";

#[derive(Serialize)]
struct LoadCsvRow {
    send_rate: f64,
    k: usize,
    min_tps: f64,
    avg_tps: f64,
    max_tps: f64,
    min_latency_ms: f64,
    avg_latency_ms: f64,
    max_latency_ms: f64,
}

pub fn load_csv(reports: &[LoadReport]) -> String {
    let rows: Vec<LoadCsvRow> = reports
        .iter()
        .map(|r| LoadCsvRow {
            send_rate: r.send_rate_tps,
            k: r.k,
            min_tps: r.throughput_tps.min,
            avg_tps: r.throughput_tps.avg,
            max_tps: r.throughput_tps.max,
            min_latency_ms: r.latency_ms.min,
            avg_latency_ms: r.latency_ms.avg,
            max_latency_ms: r.latency_ms.max,
        })
        .collect();
    crate::write_csv(LOAD_CSV_HEADER, &rows)
}

/// Fixed-rate load: one generic transaction every `1/send_rate_tps` seconds
/// for `duration_s`, then runs until everything settles. Throughput is
/// counted in whole one-second windows from the first submission to the last
/// commit: min and max over windows, avg is committed / window count.
pub fn run_load(send_rate_tps: f64, duration_s: f64, policy: EndorsementPolicy, peers: Vec<PeerProfile>, base: &LedgerConfig) -> Result<LoadReport, LedgerError> {
    if !(send_rate_tps.is_finite() && send_rate_tps > 0.0) {
        return Err(LedgerError::Argument(format!("send rate must be positive, got {send_rate_tps}")));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(LedgerError::Argument(format!("duration must be positive, got {duration_s}")));
    }
    let k = policy.k;
    let cfg = LedgerConfig { peers, policy, ..base.clone() };
    let mut ledger = Ledger::new(cfg)?;
    let n = (send_rate_tps * duration_s).round().max(1.0) as usize;
    let interval = 1000.0 / send_rate_tps;
    for i in 0..n {
        let at = i as f64 * interval;
        ledger.run_until(at);
        ledger.submit_transaction(Payload::Kv { key: format!("load/{i}"), value: String::new() }, at)?;
    }
    ledger.run_to_quiescence();
    let committed: Vec<&Transaction> = ledger.committed().collect();
    let failed = ledger.status.iter().filter(|s| **s == TxStatus::EndorsementFailed).count();
    if committed.is_empty() {
        let zero = Stat { min: 0.0, avg: 0.0, max: 0.0 };
        return Ok(LoadReport { send_rate_tps, duration_s, k, submitted: n, committed: 0, failed, throughput_tps: zero, latency_ms: zero });
    }
    let lat: Vec<f64> = committed.iter().map(|t| t.commit_time.expect("committed") - t.submit_time).collect();
    let latency_ms = Stat {
        min: lat.iter().copied().fold(f64::INFINITY, f64::min),
        avg: lat.iter().sum::<f64>() / lat.len() as f64,
        max: lat.iter().copied().fold(0.0, f64::max),
    };
    let start = committed.iter().map(|t| t.submit_time).fold(f64::INFINITY, f64::min);
    let end = committed.iter().map(|t| t.commit_time.expect("committed")).fold(0.0, f64::max);
    let span = (end - start).max(1e-9);
    let windows = (span / 1000.0).ceil().max(1.0) as usize;
    let mut counts = vec![0usize; windows];
    for t in &committed {
        let w = (((t.commit_time.expect("committed") - start) / 1000.0) as usize).min(windows - 1);
        counts[w] += 1;
    }
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let throughput_tps = Stat {
        min: rates.iter().copied().fold(f64::INFINITY, f64::min),
        avg: committed.len() as f64 / windows as f64,
        max: rates.iter().copied().fold(0.0, f64::max),
    };
    Ok(LoadReport { send_rate_tps, duration_s, k, submitted: n, committed: committed.len(), failed, throughput_tps, latency_ms })
}
