//! Deterministic discrete-event simulation of a permissioned chain whose
//! nodes run proof verification as contract execution.
//!
//! Each round the round-robin leader executes every pending transaction,
//! proposes a block with the verdicts, and followers re-execute and vote.
//! The block commits at `2f + 1` votes. Time is integer microseconds.

use crate::proof::{verify_bytes, Verdict, VerificationKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;
use thiserror::Error;

pub type NodeId = usize;
pub type TxId = [u8; 32];

pub const CSV_HEADER: &str = "nodes,payload_bytes,elapsed_ms,committed";
const VOTE_BYTES: usize = 96;
const PROPOSAL_OVERHEAD_BYTES: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} is silent and cannot accept submissions")]
    SilentNode(NodeId),
    #[error("transaction {0} already submitted")]
    Duplicate(String),
    #[error("no pending transactions")]
    NothingPending,
    #[error("round {round} led by node {leader} gathered {votes} of {needed} votes")]
    NoQuorum {
        round: u64,
        leader: NodeId,
        votes: usize,
        needed: usize,
    },
    #[error("{pending} transactions still pending after {rounds} rounds")]
    Liveness { rounds: u64, pending: usize },
    #[error("payload must be at least one byte")]
    EmptyPayload,
    #[error("safety violated at height {height} between nodes {a} and {b}")]
    Safety { height: usize, a: NodeId, b: NodeId },
    #[error("ledger of node {node} broken at height {height}")]
    BrokenChain { node: NodeId, height: usize },
    #[error("committed verdict for {tx} is {committed}, recomputation gives {recomputed}")]
    Validity {
        tx: String,
        committed: String,
        recomputed: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n: usize,
    /// Enforces `n = 3f + 1` unless set; otherwise `f = (n - 1) / 3`.
    pub crash_free: bool,
    pub latency_base_ms: f64,
    pub latency_per_kb_ms: f64,
    /// Uniform extra delay in `[0, jitter_ms)` per message.
    pub jitter_ms: f64,
    /// Modeled contract execution cost per transaction.
    pub exec_base_ms: f64,
    pub exec_per_kb_ms: f64,
    pub round_timeout_ms: f64,
    pub silent: Vec<NodeId>,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n: 4,
            crash_free: false,
            latency_base_ms: 5.0,
            latency_per_kb_ms: 0.08,
            jitter_ms: 0.0,
            exec_base_ms: 0.5,
            exec_per_kb_ms: 0.02,
            round_timeout_ms: 1000.0,
            silent: Vec::new(),
            seed: 7,
        }
    }
}

impl NetConfig {
    pub fn with_nodes(n: usize) -> Self {
        Self {
            n,
            crash_free: n == 0 || !(n - 1).is_multiple_of(3),
            ..Self::default()
        }
    }

    pub fn f(&self) -> usize {
        self.n.saturating_sub(1) / 3
    }

    pub fn quorum(&self) -> usize {
        2 * self.f() + 1
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.n == 0 {
            return Err(ChainError::Config("need at least one node".into()));
        }
        if !self.crash_free && self.n != 3 * self.f() + 1 {
            return Err(ChainError::Config(format!("n = {} is not 3f + 1", self.n)));
        }
        if self.crash_free && !self.silent.is_empty() {
            return Err(ChainError::Config("crash-free mode forbids silent nodes".into()));
        }
        for (name, v) in [
            ("latency_base_ms", self.latency_base_ms),
            ("latency_per_kb_ms", self.latency_per_kb_ms),
            ("jitter_ms", self.jitter_ms),
            ("exec_base_ms", self.exec_base_ms),
            ("exec_per_kb_ms", self.exec_per_kb_ms),
            ("round_timeout_ms", self.round_timeout_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ChainError::Config(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        if let Some(&bad) = self.silent.iter().find(|&&s| s >= self.n) {
            return Err(ChainError::UnknownNode(bad));
        }
        Ok(())
    }

    fn exec_cost_us(&self, payload: usize) -> u64 {
        ms_to_us(self.exec_base_ms + self.exec_per_kb_ms * payload as f64 / 1024.0)
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyTx {
    pub id: TxId,
    pub statement_bytes: Vec<u8>,
    pub proof_bytes: Vec<u8>,
    pub submitter: NodeId,
    pub verdict: Option<Verdict>,
}

impl VerifyTx {
    pub fn new(statement_bytes: Vec<u8>, proof_bytes: Vec<u8>, submitter: NodeId) -> Self {
        let id = Sha256::new()
            .chain_update(&statement_bytes)
            .chain_update(&proof_bytes)
            .finalize()
            .into();
        Self {
            id,
            statement_bytes,
            proof_bytes,
            submitter,
            verdict: None,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.statement_bytes.len() + self.proof_bytes.len()
    }

    pub fn id_hex(&self) -> String {
        hex::encode(self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: usize,
    pub prev_hash: [u8; 32],
    pub txs: Vec<VerifyTx>,
    pub proposer: NodeId,
    /// `(node, tag)` pairs; tags are placeholders, not signatures.
    pub votes: Vec<(NodeId, u64)>,
}

impl Block {
    pub fn genesis() -> Self {
        Self {
            height: 0,
            prev_hash: [0; 32],
            txs: Vec::new(),
            proposer: 0,
            votes: Vec::new(),
        }
    }

    /// Canonical bytes; votes are excluded so the hash is fixed before voting.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.height as u64).to_le_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&(self.proposer as u64).to_le_bytes());
        out.extend_from_slice(&(self.txs.len() as u64).to_le_bytes());
        for tx in &self.txs {
            out.extend_from_slice(&tx.id);
            let code = tx.verdict.map(|v| v.code()).unwrap_or_default();
            out.extend_from_slice(&(code.len() as u32).to_le_bytes());
            out.extend_from_slice(code.as_bytes());
        }
        out
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    fn wire_len(&self) -> usize {
        PROPOSAL_OVERHEAD_BYTES + self.txs.iter().map(|t| t.payload_len() + 64).sum::<usize>()
    }
}

#[derive(Debug, Serialize)]
struct BlockJson {
    height: usize,
    hash: String,
    prev_hash: String,
    proposer: NodeId,
    votes: Vec<NodeId>,
    txs: Vec<TxJson>,
}

#[derive(Debug, Serialize)]
struct TxJson {
    id: String,
    submitter: NodeId,
    payload_bytes: usize,
    verdict: String,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub ledger: Vec<Block>,
    /// Pending transactions in arrival order.
    mempool: BTreeMap<(u64, TxId), Arc<VerifyTx>>,
    committed: HashMap<TxId, Verdict>,
    pub silent: bool,
    /// Simulated time of this node's most recent activity, in microseconds.
    pub clock_us: u64,
}

impl NodeState {
    fn new(id: NodeId, silent: bool) -> Self {
        Self {
            id,
            ledger: vec![Block::genesis()],
            mempool: BTreeMap::new(),
            committed: HashMap::new(),
            silent,
            clock_us: 0,
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &VerifyTx> {
        self.mempool.values().map(|t| t.as_ref())
    }

    fn has_seen(&self, id: &TxId) -> bool {
        self.committed.contains_key(id) || self.mempool.keys().any(|k| &k.1 == id)
    }

    fn append(&mut self, block: Block) {
        for tx in &block.txs {
            self.committed
                .insert(tx.id, tx.verdict.expect("committed txs carry verdicts"));
        }
        self.mempool.retain(|k, _| !self.committed.contains_key(&k.1));
        self.ledger.push(block);
    }
}

#[derive(Debug, Clone)]
enum Msg {
    Gossip(Arc<VerifyTx>),
    Propose(Arc<Block>),
    Vote { from: NodeId, hash: [u8; 32] },
    Commit(Arc<Block>),
}

#[derive(Debug)]
struct Proposal {
    block: Arc<Block>,
    hash: [u8; 32],
    votes: Vec<(NodeId, u64)>,
    committed: bool,
}

/// Outcome of one successful round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub leader: NodeId,
    pub block: Block,
    pub started_us: u64,
    /// When the last honest node appended the block.
    pub finished_us: u64,
}

pub struct Simulation {
    cfg: NetConfig,
    vk: VerificationKey,
    nodes: Vec<NodeState>,
    now_us: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64, NodeId)>>,
    payloads: HashMap<u64, Msg>,
    uplink_free: Vec<u64>,
    cpu_free: Vec<u64>,
    rng: ChaCha20Rng,
    round: u64,
    submitted: Vec<TxId>,
    proposal: Option<Proposal>,
    commit_times: HashMap<NodeId, u64>,
}

impl Simulation {
    pub fn new(cfg: NetConfig, vk: VerificationKey) -> Result<Self, ChainError> {
        cfg.validate()?;
        let silent: HashSet<NodeId> = cfg.silent.iter().copied().collect();
        let nodes = (0..cfg.n)
            .map(|i| NodeState::new(i, silent.contains(&i)))
            .collect();
        Ok(Self {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            uplink_free: vec![0; cfg.n],
            cpu_free: vec![0; cfg.n],
            nodes,
            cfg,
            vk,
            now_us: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            payloads: HashMap::new(),
            round: 0,
            submitted: Vec::new(),
            proposal: None,
            commit_times: HashMap::new(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn now_ms(&self) -> f64 {
        self.now_us as f64 / 1000.0
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn honest(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().filter(|n| !n.silent)
    }

    /// Transmission on the sender's serialized uplink, then propagation.
    fn send(&mut self, from: NodeId, to: NodeId, bytes: usize, ready_us: u64, msg: Msg) {
        let depart = ready_us.max(self.uplink_free[from]);
        let transmit = ms_to_us(self.cfg.latency_per_kb_ms * bytes as f64 / 1024.0);
        self.uplink_free[from] = depart + transmit;
        let jitter = if self.cfg.jitter_ms > 0.0 {
            ms_to_us(self.rng.gen_range(0.0..self.cfg.jitter_ms))
        } else {
            0
        };
        let arrival = depart + transmit + ms_to_us(self.cfg.latency_base_ms) + jitter;
        self.seq += 1;
        self.payloads.insert(self.seq, msg);
        self.queue.push(Reverse((arrival, self.seq, to)));
    }

    pub fn submit_tx(&mut self, tx: VerifyTx, at_node: NodeId) -> Result<TxId, ChainError> {
        let node = self.nodes.get(at_node).ok_or(ChainError::UnknownNode(at_node))?;
        if node.silent {
            return Err(ChainError::SilentNode(at_node));
        }
        if self.submitted.contains(&tx.id) {
            return Err(ChainError::Duplicate(tx.id_hex()));
        }
        let id = tx.id;
        let tx = Arc::new(VerifyTx {
            submitter: at_node,
            verdict: None,
            ..tx
        });
        self.submitted.push(id);
        let now = self.now_us;
        self.nodes[at_node].mempool.insert((now, id), tx.clone());
        for to in (0..self.cfg.n).filter(|&t| t != at_node) {
            self.send(at_node, to, tx.payload_len(), now, Msg::Gossip(tx.clone()));
        }
        Ok(id)
    }

    /// Delivers messages until the network is idle.
    pub fn drain(&mut self) {
        while let Some(Reverse((t, seq, to))) = self.queue.pop() {
            self.now_us = self.now_us.max(t);
            let msg = self.payloads.remove(&seq).expect("queued payload");
            if !self.nodes[to].silent {
                self.nodes[to].clock_us = t;
                self.handle(to, t, msg);
            }
        }
    }

    fn execute(&mut self, node: NodeId, at: u64, txs: &[VerifyTx]) -> (u64, Vec<Verdict>) {
        let mut done = at.max(self.cpu_free[node]);
        let mut verdicts = Vec::with_capacity(txs.len());
        for tx in txs {
            verdicts.push(verify_bytes(&self.vk, &tx.statement_bytes, &tx.proof_bytes));
            done += self.cfg.exec_cost_us(tx.payload_len());
        }
        self.cpu_free[node] = done;
        self.nodes[node].clock_us = done;
        (done, verdicts)
    }

    fn handle(&mut self, at: NodeId, t: u64, msg: Msg) {
        match msg {
            Msg::Gossip(tx) => {
                if !self.nodes[at].has_seen(&tx.id) {
                    self.nodes[at].mempool.insert((t, tx.id), tx);
                }
            }
            Msg::Propose(block) => {
                let (done, verdicts) = self.execute(at, t, &block.txs);
                let agrees = block
                    .txs
                    .iter()
                    .zip(&verdicts)
                    .all(|(tx, v)| tx.verdict == Some(*v));
                if agrees {
                    let hash = block.hash();
                    let leader = block.proposer;
                    self.send(at, leader, VOTE_BYTES, done, Msg::Vote { from: at, hash });
                }
            }
            Msg::Vote { from, hash } => self.record_vote(from, hash, t),
            Msg::Commit(block) => {
                if self.nodes[at].ledger.len() == block.height {
                    self.nodes[at].append((*block).clone());
                    self.commit_times.insert(at, t);
                }
            }
        }
    }

    fn record_vote(&mut self, from: NodeId, hash: [u8; 32], t: u64) {
        let quorum = self.cfg.quorum();
        let Some(p) = self.proposal.as_mut() else { return };
        if p.hash != hash || p.votes.iter().any(|v| v.0 == from) {
            return;
        }
        p.votes.push((from, from as u64));
        if p.committed {
            // Late votes extend the leader's certificate; the hash excludes votes.
            let leader = p.block.proposer;
            if let Some(b) = self.nodes[leader].ledger.last_mut() {
                b.votes.push((from, from as u64));
            }
            return;
        }
        if p.votes.len() < quorum {
            return;
        }
        p.committed = true;
        let mut block = (*p.block).clone();
        block.votes = p.votes.clone();
        let block = Arc::new(block);
        let leader = block.proposer;
        self.nodes[leader].append((*block).clone());
        self.commit_times.insert(leader, t);
        let bytes = 40 + 16 * block.votes.len();
        for to in (0..self.cfg.n).filter(|&n| n != leader) {
            self.send(leader, to, bytes, t, Msg::Commit(block.clone()));
        }
    }

    pub fn leader_for(&self, round: u64) -> NodeId {
        (round % self.cfg.n as u64) as usize
    }

    /// Submitted transactions not yet committed at every honest node.
    pub fn pending_count(&self) -> usize {
        self.submitted
            .iter()
            .filter(|id| self.honest().any(|n| !n.committed.contains_key(*id)))
            .count()
    }

    /// Runs one propose/vote/commit round. Aborted rounds advance the clock
    /// by the round timeout and leave every transaction pending.
    pub fn consensus_round(&mut self) -> Result<RoundReport, ChainError> {
        if self.pending_count() == 0 {
            return Err(ChainError::NothingPending);
        }
        let round = self.round;
        self.round += 1;
        let leader = self.leader_for(round);
        let start = self.now_us;
        let needed = self.cfg.quorum();
        let timeout = start + ms_to_us(self.cfg.round_timeout_ms);
        if self.nodes[leader].silent {
            self.now_us = self.now_us.max(timeout);
            return Err(ChainError::NoQuorum {
                round,
                leader,
                votes: 0,
                needed,
            });
        }
        let mut txs: Vec<VerifyTx> = self.nodes[leader].pending().cloned().collect();
        let (done, verdicts) = self.execute(leader, start, &txs);
        for (tx, v) in txs.iter_mut().zip(verdicts) {
            tx.verdict = Some(v);
        }
        let prev = self.nodes[leader].ledger.last().expect("genesis");
        let block = Block {
            height: self.nodes[leader].ledger.len(),
            prev_hash: prev.hash(),
            txs,
            proposer: leader,
            votes: Vec::new(),
        };
        let hash = block.hash();
        let block = Arc::new(block);
        self.commit_times.clear();
        self.proposal = Some(Proposal {
            block: block.clone(),
            hash,
            votes: Vec::new(),
            committed: false,
        });
        self.record_vote(leader, hash, done);
        let bytes = block.wire_len();
        for to in (0..self.cfg.n).filter(|&n| n != leader) {
            self.send(leader, to, bytes, done, Msg::Propose(block.clone()));
        }
        self.drain();
        let p = self.proposal.take().expect("proposal in flight");
        if !p.committed {
            self.now_us = self.now_us.max(timeout);
            return Err(ChainError::NoQuorum {
                round,
                leader,
                votes: p.votes.len(),
                needed,
            });
        }
        let finished = self
            .honest()
            .map(|n| self.commit_times.get(&n.id).copied().unwrap_or(u64::MAX))
            .max()
            .unwrap_or(start);
        let committed = self.nodes[leader].ledger.last().unwrap().clone();
        Ok(RoundReport {
            round,
            leader,
            block: committed,
            started_us: start,
            finished_us: finished,
        })
    }

    /// Delivers all gossip, then runs rounds until nothing is pending.
    /// Aborted rounds count toward `max_rounds`.
    pub fn run_to_quiescence(&mut self, max_rounds: u64) -> Result<Vec<RoundReport>, ChainError> {
        self.drain();
        let mut reports = Vec::new();
        let mut rounds = 0;
        while self.pending_count() > 0 {
            if rounds == max_rounds {
                return Err(ChainError::Liveness {
                    rounds,
                    pending: self.pending_count(),
                });
            }
            rounds += 1;
            match self.consensus_round() {
                Ok(r) => reports.push(r),
                Err(ChainError::NoQuorum { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(reports)
    }

    pub fn query_verdict(&self, id: &TxId, at_node: NodeId) -> Option<Verdict> {
        self.nodes.get(at_node)?.committed.get(id).copied()
    }

    /// Honest ledgers are hash-linked and agree at every shared height.
    pub fn check_safety(&self) -> Result<(), ChainError> {
        let honest: Vec<&NodeState> = self.honest().collect();
        for n in &honest {
            for h in 1..n.ledger.len() {
                let b = &n.ledger[h];
                if b.height != h || b.prev_hash != n.ledger[h - 1].hash() || b.votes.len() < self.cfg.quorum()
                {
                    return Err(ChainError::BrokenChain {
                        node: n.id,
                        height: h,
                    });
                }
            }
        }
        for (i, a) in honest.iter().enumerate() {
            for b in &honest[i + 1..] {
                for h in 0..a.ledger.len().min(b.ledger.len()) {
                    if a.ledger[h].hash() != b.ledger[h].hash() {
                        return Err(ChainError::Safety {
                            height: h,
                            a: a.id,
                            b: b.id,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Every committed verdict equals an independent recomputation.
    pub fn check_validity(&self, vk: &VerificationKey) -> Result<(), ChainError> {
        for n in self.honest() {
            for tx in n.ledger.iter().flat_map(|b| &b.txs) {
                let again = verify_bytes(vk, &tx.statement_bytes, &tx.proof_bytes);
                if tx.verdict != Some(again) {
                    return Err(ChainError::Validity {
                        tx: tx.id_hex(),
                        committed: tx.verdict.map(|v| v.code()).unwrap_or_default(),
                        recomputed: again.code(),
                    });
                }
            }
        }
        Ok(())
    }

    /// One JSON object per block of `node`'s ledger, genesis included.
    pub fn ledger_jsonl(&self, node: NodeId) -> Result<String, ChainError> {
        let n = self.nodes.get(node).ok_or(ChainError::UnknownNode(node))?;
        let mut out = String::new();
        for b in &n.ledger {
            let view = BlockJson {
                height: b.height,
                hash: hex::encode(b.hash()),
                prev_hash: hex::encode(b.prev_hash),
                proposer: b.proposer,
                votes: b.votes.iter().map(|v| v.0).collect(),
                txs: b
                    .txs
                    .iter()
                    .map(|t| TxJson {
                        id: t.id_hex(),
                        submitter: t.submitter,
                        payload_bytes: t.payload_len(),
                        verdict: t.verdict.map(|v| v.code()).unwrap_or_default(),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&view).expect("plain data"));
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub nodes: usize,
    pub payload_bytes: usize,
    pub elapsed_ms: f64,
    pub committed: bool,
}

impl Measurement {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{}",
            self.nodes, self.payload_bytes, self.elapsed_ms, self.committed
        )
    }
}

/// Simulated time from submitting one transaction of `payload_bytes` to its
/// commit at every honest node. The payload is seeded filler, so the
/// contract rejects it as malformed; the verdict is still consensus data.
pub fn measure_consensus(
    base: &NetConfig,
    payload_bytes: usize,
    n: usize,
) -> Result<Measurement, ChainError> {
    if payload_bytes == 0 {
        return Err(ChainError::EmptyPayload);
    }
    let cfg = NetConfig {
        n,
        crash_free: base.crash_free || !(n.max(1) - 1).is_multiple_of(3),
        ..base.clone()
    };
    let mut sim = Simulation::new(cfg, placeholder_vk())?;
    let mut rng = ChaCha20Rng::seed_from_u64(base.seed ^ payload_bytes as u64);
    let mut payload = vec![0u8; payload_bytes];
    rng.fill(payload.as_mut_slice());
    let tx = VerifyTx::new(Vec::new(), payload, 0);
    let start = sim.now_us;
    let id = sim.submit_tx(tx, 0)?;
    let reports = sim.run_to_quiescence(n as u64)?;
    let finished = reports.last().map(|r| r.finished_us).unwrap_or(start);
    let committed = sim.honest().all(|node| node.committed.contains_key(&id));
    Ok(Measurement {
        nodes: n,
        payload_bytes,
        elapsed_ms: (finished - start) as f64 / 1000.0,
        committed,
    })
}

/// Key used where only the cost of running the contract matters.
pub fn placeholder_vk() -> VerificationKey {
    VerificationKey {
        circuit_digest: [0; 32],
        queries: 1,
        num_public: 0,
        field_id: crate::circuit::MODULUS,
    }
}
