//! Streamlet-style underlay protocols.
//!
//! Epochs last `epoch_len = max(2Δ, 1)` slots and are led round-robin
//! (`leader(e) = e mod n + 1`); epoch 0 belongs to genesis. The leader
//! proposes a block extending a longest notarized chain. A replica votes once
//! per epoch, for the leader's first proposal, provided the proposal belongs
//! to the current epoch and extends a longest notarized chain in its view. A
//! block with `notarize_threshold` distinct voters is notarized, and the
//! replica echoes the block together with its votes. In a notarized chain,
//! three adjacent blocks with consecutive epochs confirm the chain up to the
//! middle one.
//!
//! [`ProtocolKind::MajoritySync`] notarizes with a simple majority and is only
//! safe when messages arrive within Δ. [`ProtocolKind::PSyncQuorum`] uses
//! `2f + 1` votes. [`ProtocolKind::SyncFin`] runs the majority underlay and
//! adds the finality gadget on top (see [`crate::replica`]).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::auth::{KeyRing, Signer};
use crate::model::{
    chain_of, Block, BlockHash, BlockStore, Party, Payload, Proposal, ReplicaId, Slot, SyncFragment,
    TxId, TxInputMsg, Vote,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    MajoritySync,
    PsyncQuorum,
    Syncfin,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [
        ProtocolKind::MajoritySync,
        ProtocolKind::PsyncQuorum,
        ProtocolKind::Syncfin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::MajoritySync => "majority_sync",
            ProtocolKind::PsyncQuorum => "psync_quorum",
            ProtocolKind::Syncfin => "syncfin",
        }
    }

    pub fn has_gadget(&self) -> bool {
        matches!(self, ProtocolKind::Syncfin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub protocol: ProtocolKind,
    pub n: u32,
    pub f: u32,
    pub epoch_len: u64,
    pub notarize_threshold: usize,
}

impl ProtocolParams {
    pub fn new(protocol: ProtocolKind, n: u32, f: u32, delta: u64) -> Self {
        let notarize_threshold = match protocol {
            ProtocolKind::MajoritySync | ProtocolKind::Syncfin => n as usize / 2 + 1,
            ProtocolKind::PsyncQuorum => 2 * f as usize + 1,
        };
        ProtocolParams {
            protocol,
            n,
            f,
            epoch_len: (2 * delta).max(1),
            notarize_threshold,
        }
    }

    pub fn leader(&self, epoch: u64) -> ReplicaId {
        ReplicaId((epoch % self.n as u64) as u32 + 1)
    }

    pub fn epoch_of(&self, slot: Slot) -> u64 {
        slot / self.epoch_len
    }

    /// Client confirmation threshold on finality signatures.
    pub fn quorum(&self) -> usize {
        2 * self.f as usize + 1
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> {
        (1..=self.n).map(ReplicaId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    /// Every other replica.
    Replicas,
    /// Every other replica and every client.
    Everyone,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outgoing {
    pub audience: Audience,
    pub payload: Payload,
}

/// One replica's view of the underlay.
#[derive(Clone, Debug)]
pub struct UnderlayState {
    replica: ReplicaId,
    params: ProtocolParams,
    keys: KeyRing,
    store: BlockStore,
    votes_seen: BTreeMap<u64, BTreeMap<BlockHash, BTreeMap<ReplicaId, Vote>>>,
    voted_epochs: BTreeSet<u64>,
    proposals_seen: BTreeMap<u64, BlockHash>,
    awaiting_parent: BTreeSet<BlockHash>,
    notarized: BTreeSet<BlockHash>,
    /// Notarized blocks whose ancestors are all notarized; contains genesis.
    chain_notarized: BTreeSet<BlockHash>,
    confirmed_tip: BlockHash,
    /// Set when `chain_notarized` grew since the last confirmation pass.
    dirty: bool,
    mempool: BTreeSet<(Slot, TxId)>,
    slot: Slot,
    dropped: u64,
}

impl UnderlayState {
    pub fn new(replica: ReplicaId, params: ProtocolParams, keys: KeyRing) -> Self {
        UnderlayState {
            replica,
            params,
            keys,
            store: BlockStore::new(),
            votes_seen: BTreeMap::new(),
            voted_epochs: BTreeSet::new(),
            proposals_seen: BTreeMap::new(),
            awaiting_parent: BTreeSet::new(),
            notarized: BTreeSet::new(),
            chain_notarized: [BlockHash::GENESIS].into_iter().collect(),
            confirmed_tip: BlockHash::GENESIS,
            dirty: false,
            mempool: BTreeSet::new(),
            slot: 0,
            dropped: 0,
        }
    }

    pub fn replica(&self) -> ReplicaId {
        self.replica
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn voted_epochs(&self) -> &BTreeSet<u64> {
        &self.voted_epochs
    }

    pub fn is_notarized(&self, hash: &BlockHash) -> bool {
        self.notarized.contains(hash)
    }

    pub fn confirmed_tip(&self) -> BlockHash {
        self.confirmed_tip
    }

    /// Messages dropped for failed authentication or malformed content.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn mempool(&self) -> impl Iterator<Item = TxId> + '_ {
        self.mempool.iter().map(|(_, tx)| *tx)
    }

    /// genesis..=confirmed tip.
    pub fn confirmed_chain(&self) -> Vec<Block> {
        chain_of(&self.confirmed_tip, &self.store).expect("confirmed tip is connected")
    }

    /// Tip of a longest notarized chain, ties to the smallest hash.
    pub fn longest_notarized_tip(&self) -> BlockHash {
        let mut best = BlockHash::GENESIS;
        let mut best_height = 0;
        for h in &self.chain_notarized {
            let height = self.store.get(h).map_or(0, |b| b.height);
            // BTreeSet iterates in ascending hash order
            if height > best_height {
                best = *h;
                best_height = height;
            }
        }
        best
    }

    pub fn on_slot_begin(&mut self, slot: Slot, signer: &Signer) -> Vec<Outgoing> {
        self.slot = slot;
        let mut out = Vec::new();
        if slot % self.params.epoch_len != 0 {
            return out;
        }
        let epoch = self.params.epoch_of(slot);
        if epoch == 0 || self.params.leader(epoch) != self.replica {
            return out;
        }
        let parent = self.longest_notarized_tip();
        let chain = chain_of(&parent, &self.store).expect("notarized tip is connected");
        let included: BTreeSet<TxId> = chain.iter().flat_map(|b| b.payload.iter().copied()).collect();
        let payload = self
            .mempool
            .iter()
            .map(|(_, tx)| *tx)
            .filter(|tx| !included.contains(tx))
            .collect();
        let parent_block = chain.last().expect("chain is never empty");
        let proposal = signer.propose(Block {
            parent,
            height: parent_block.height + 1,
            epoch,
            proposer: self.replica,
            payload,
        });
        out.push(Outgoing {
            audience: Audience::Everyone,
            payload: Payload::Proposal(proposal.clone()),
        });
        self.on_proposal(&proposal, signer, &mut out);
        out
    }

    pub fn on_message(&mut self, slot: Slot, from: Party, payload: &Payload, signer: &Signer) -> Vec<Outgoing> {
        self.slot = slot;
        let mut out = Vec::new();
        match payload {
            Payload::Proposal(p) => self.on_proposal(p, signer, &mut out),
            Payload::Vote(v) => {
                let mut fresh = Vec::new();
                self.record_vote(v, &mut fresh);
                self.echo(fresh, &mut out);
            }
            Payload::Sync(fragment) => {
                let mut fresh = Vec::new();
                for block in &fragment.blocks {
                    self.add_block(block.clone(), signer, &mut fresh, &mut out);
                }
                for v in &fragment.votes {
                    self.record_vote(v, &mut fresh);
                }
                self.echo(fresh, &mut out);
            }
            Payload::TransactionInput(input) => {
                let fresh = self.mempool.insert((input.input_slot, input.tx));
                if fresh && from == Party::Environment {
                    out.push(Outgoing {
                        audience: Audience::Replicas,
                        payload: Payload::TransactionInput(TxInputMsg {
                            tx: input.tx,
                            input_slot: input.input_slot,
                        }),
                    });
                }
            }
            Payload::FinalitySignature(_) => {}
        }
        self.refresh_confirmation();
        out
    }

    fn on_proposal(&mut self, proposal: &Proposal, signer: &Signer, out: &mut Vec<Outgoing>) {
        let block = &proposal.block;
        if !self.keys.verify_proposal(proposal) || self.params.leader(block.epoch) != block.proposer {
            self.dropped += 1;
            return;
        }
        let hash = block.hash();
        match self.proposals_seen.get(&block.epoch) {
            Some(first) if *first != hash => {
                // equivocating leader: keep the block, never vote for it
                self.proposals_seen.entry(block.epoch).or_insert(hash);
                let mut fresh = Vec::new();
                self.add_block(block.clone(), signer, &mut fresh, out);
                self.echo(fresh, out);
                return;
            }
            Some(_) => {}
            None => {
                self.proposals_seen.insert(block.epoch, hash);
            }
        }
        if !self.store.contains(&block.parent) {
            self.awaiting_parent.insert(hash);
        }
        let mut fresh = Vec::new();
        self.add_block(block.clone(), signer, &mut fresh, out);
        self.echo(fresh, out);
        self.refresh_confirmation();
    }

    fn add_block(&mut self, block: Block, signer: &Signer, fresh: &mut Vec<BlockHash>, out: &mut Vec<Outgoing>) {
        let connected = match self.store.accept(block) {
            Ok(c) => c,
            Err(_) => {
                self.dropped += 1;
                return;
            }
        };
        for hash in connected {
            self.check_notarization(&hash, fresh);
            let own_first = self
                .store
                .get(&hash)
                .is_some_and(|b| self.proposals_seen.get(&b.epoch) == Some(&hash));
            if own_first {
                self.awaiting_parent.remove(&hash);
                self.try_vote(&hash, signer, fresh, out);
            }
        }
    }

    fn try_vote(&mut self, hash: &BlockHash, signer: &Signer, fresh: &mut Vec<BlockHash>, out: &mut Vec<Outgoing>) {
        let Some(block) = self.store.get(hash) else {
            return;
        };
        let epoch = block.epoch;
        if epoch != self.params.epoch_of(self.slot) || self.voted_epochs.contains(&epoch) {
            return;
        }
        if !self.chain_notarized.contains(&block.parent) {
            return;
        }
        let longest = self.store.get(&self.longest_notarized_tip()).map_or(0, |b| b.height);
        if block.height != longest + 1 {
            return;
        }
        self.voted_epochs.insert(epoch);
        let vote = signer.vote(epoch, *hash);
        out.push(Outgoing {
            audience: Audience::Everyone,
            payload: Payload::Vote(vote.clone()),
        });
        self.record_vote(&vote, fresh);
    }

    fn record_vote(&mut self, vote: &Vote, fresh: &mut Vec<BlockHash>) {
        if !self.keys.verify_vote(vote) {
            self.dropped += 1;
            return;
        }
        if let Some(b) = self.store.get(&vote.block) {
            if b.epoch != vote.epoch {
                self.dropped += 1;
                return;
            }
        }
        self.votes_seen
            .entry(vote.epoch)
            .or_default()
            .entry(vote.block)
            .or_default()
            .entry(vote.voter)
            .or_insert_with(|| vote.clone());
        self.check_notarization(&vote.block, fresh);
    }

    fn check_notarization(&mut self, hash: &BlockHash, fresh: &mut Vec<BlockHash>) {
        if self.notarized.contains(hash) {
            return;
        }
        let Some(block) = self.store.get(hash) else {
            return;
        };
        let count = self
            .votes_seen
            .get(&block.epoch)
            .and_then(|m| m.get(hash))
            .map_or(0, |v| v.len());
        if count < self.params.notarize_threshold {
            return;
        }
        self.notarized.insert(*hash);
        fresh.push(*hash);
        // extend fully-notarized chains downward
        let mut work = alloc::vec![*hash];
        while let Some(h) = work.pop() {
            let parent = self.store.get(&h).map(|b| b.parent);
            if self.notarized.contains(&h)
                && parent.is_some_and(|p| self.chain_notarized.contains(&p))
                && self.chain_notarized.insert(h)
            {
                self.dirty = true;
                work.extend(self.store.children(&h).copied());
            }
        }
    }

    fn echo(&mut self, fresh: Vec<BlockHash>, out: &mut Vec<Outgoing>) {
        if fresh.is_empty() {
            return;
        }
        let mut fragment = SyncFragment::default();
        for hash in fresh {
            let block = self.store.get(&hash).expect("notarized block is stored").clone();
            if let Some(votes) = self.votes_seen.get(&block.epoch).and_then(|m| m.get(&hash)) {
                fragment.votes.extend(votes.values().cloned());
            }
            fragment.blocks.push(block);
        }
        out.push(Outgoing {
            audience: Audience::Replicas,
            payload: Payload::Sync(fragment),
        });
    }

    fn refresh_confirmation(&mut self) {
        if !core::mem::take(&mut self.dirty) {
            return;
        }
        self.confirmed_tip = confirmed_tip(&self.store, &self.chain_notarized);
    }
}

/// Highest block confirmed by the three-consecutive-epochs rule over the
/// notarized chains in `chain_notarized`; ties go to the smallest hash.
pub fn confirmed_tip(store: &BlockStore, chain_notarized: &BTreeSet<BlockHash>) -> BlockHash {
    let mut best = BlockHash::GENESIS;
    let mut best_height = 0;
    for h in chain_notarized {
        let Some(b) = store.get(h) else { continue };
        if b.is_genesis() {
            continue;
        }
        let Some(p) = store.get(&b.parent) else { continue };
        if p.is_genesis() {
            continue;
        }
        let Some(g) = store.get(&p.parent) else { continue };
        if b.epoch == p.epoch + 1 && p.epoch == g.epoch + 1 && p.height > best_height {
            best = b.parent;
            best_height = p.height;
        } else if b.epoch == p.epoch + 1 && p.epoch == g.epoch + 1 && p.height == best_height && b.parent < best {
            best = b.parent;
        }
    }
    best
}
