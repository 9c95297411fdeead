//! Clients: observation, ledger confirmation, and the safety and liveness
//! checks over ledger snapshots.
//!
//! A client receives the blocks, votes and finality signatures replicas
//! broadcast and derives its ledger from them. Under [`ConfirmRule::Finality`]
//! a block counts once it and every ancestor carry `2f + 1` distinct valid
//! finality signatures; the ledger follows the highest such block, ties going
//! to the block observed first. Under [`ConfirmRule::Underlay`] the client
//! applies the underlay's own notarization and confirm rules to the votes it
//! saw, which is how the bare underlay protocols expose a ledger.
//!
//! A ledger never shrinks. When the preferred block no longer extends the
//! current ledger the client keeps the old ledger and raises its
//! inconsistency flag.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::auth::KeyRing;
use crate::model::{
    chain_of, Block, BlockHash, BlockStore, ClientId, FinalitySignature, Ledger, Payload, ReplicaId,
    Slot, TxId,
};
use crate::transcript::LogEntry;
use crate::underlay::{confirmed_tip, ProtocolParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmRule {
    Finality,
    Underlay,
}

impl ConfirmRule {
    pub fn for_params(params: &ProtocolParams) -> Self {
        if params.protocol.has_gadget() {
            ConfirmRule::Finality
        } else {
            ConfirmRule::Underlay
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Snapshot {
    pub client: ClientId,
    pub slot: Slot,
    pub ledger: Ledger,
    pub tip: BlockHash,
    pub tip_height: u64,
    pub inconsistent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub first: Snapshot,
    pub second: Snapshot,
}

#[derive(Clone, Debug)]
pub struct ClientView {
    id: ClientId,
    rule: ConfirmRule,
    params: ProtocolParams,
    keys: KeyRing,
    store: BlockStore,
    first_seen: BTreeMap<BlockHash, u64>,
    sigs: BTreeMap<BlockHash, BTreeMap<ReplicaId, FinalitySignature>>,
    votes: BTreeMap<BlockHash, BTreeMap<ReplicaId, u64>>,
    /// Blocks that pass the rule's threshold along their whole chain.
    certified: BTreeSet<BlockHash>,
    dirty: bool,
    ledger: Ledger,
    tip: BlockHash,
    inconsistent: bool,
    dropped: u64,
    log: Vec<LogEntry>,
}

impl ClientView {
    pub fn new(id: ClientId, rule: ConfirmRule, params: ProtocolParams, keys: KeyRing) -> Self {
        ClientView {
            id,
            rule,
            params,
            keys,
            store: BlockStore::new(),
            first_seen: BTreeMap::new(),
            sigs: BTreeMap::new(),
            votes: BTreeMap::new(),
            certified: [BlockHash::GENESIS].into_iter().collect(),
            dirty: false,
            ledger: Ledger::default(),
            tip: BlockHash::GENESIS,
            inconsistent: false,
            dropped: 0,
            log: Vec::new(),
        }
    }

    /// Rebuilds a view from its message log, confirming at every slot
    /// boundary as the simulator does.
    pub fn replay(id: ClientId, rule: ConfirmRule, params: ProtocolParams, keys: KeyRing, log: &[LogEntry]) -> Self {
        let mut view = ClientView::new(id, rule, params, keys);
        let mut current = None;
        for entry in log {
            if current.is_some_and(|s| s != entry.slot) {
                view.confirm();
            }
            current = Some(entry.slot);
            view.observe(entry.clone());
        }
        view.confirm();
        view
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn rule(&self) -> ConfirmRule {
        self.rule
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn tip(&self) -> BlockHash {
        self.tip
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn inconsistent(&self) -> bool {
        self.inconsistent
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Distinct valid signers recorded for `block` at its height.
    pub fn signers(&self, block: &BlockHash) -> BTreeSet<ReplicaId> {
        let height = self.store.get(block).map(|b| b.height);
        self.sigs
            .get(block)
            .map(|m| {
                m.values()
                    .filter(|s| Some(s.height) == height)
                    .map(|s| s.signer)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn snapshot(&self, slot: Slot) -> Snapshot {
        Snapshot {
            client: self.id,
            slot,
            ledger: self.ledger.clone(),
            tip: self.tip,
            tip_height: self.store.get(&self.tip).map_or(0, |b| b.height),
            inconsistent: self.inconsistent,
        }
    }

    pub fn observe(&mut self, entry: LogEntry) {
        match &entry.payload {
            Payload::Proposal(p) => {
                if self.keys.verify_proposal(p) {
                    self.add_block(p.block.clone());
                } else {
                    self.dropped += 1;
                }
            }
            Payload::Sync(fragment) => {
                for b in &fragment.blocks {
                    self.add_block(b.clone());
                }
                for v in &fragment.votes {
                    self.add_vote(v.voter, v.epoch, v.block, self.keys.verify_vote(v));
                }
            }
            Payload::Vote(v) => self.add_vote(v.voter, v.epoch, v.block, self.keys.verify_vote(v)),
            Payload::FinalitySignature(s) => {
                if self.keys.verify_finality(s) {
                    self.sigs.entry(s.block).or_default().entry(s.signer).or_insert_with(|| s.clone());
                    self.certify_from(s.block);
                } else {
                    self.dropped += 1;
                }
            }
            Payload::TransactionInput(_) => {}
        }
        self.log.push(entry);
    }

    fn add_block(&mut self, block: Block) {
        match self.store.accept(block) {
            Ok(connected) => {
                for h in connected {
                    let next = self.first_seen.len() as u64;
                    self.first_seen.entry(h).or_insert(next);
                    self.certify_from(h);
                }
            }
            Err(_) => self.dropped += 1,
        }
    }

    fn add_vote(&mut self, voter: ReplicaId, epoch: u64, block: BlockHash, valid: bool) {
        if !valid {
            self.dropped += 1;
            return;
        }
        self.votes.entry(block).or_default().entry(voter).or_insert(epoch);
        self.certify_from(block);
    }

    fn passes(&self, block: &Block, hash: &BlockHash) -> bool {
        match self.rule {
            ConfirmRule::Finality => {
                self.sigs.get(hash).map_or(0, |m| {
                    m.values().filter(|s| s.height == block.height).count()
                }) >= self.params.quorum()
            }
            ConfirmRule::Underlay => {
                self.votes.get(hash).map_or(0, |m| {
                    m.values().filter(|e| **e == block.epoch).count()
                }) >= self.params.notarize_threshold
            }
        }
    }

    fn certify_from(&mut self, hash: BlockHash) {
        let mut work = alloc::vec![hash];
        while let Some(h) = work.pop() {
            if self.certified.contains(&h) {
                continue;
            }
            let Some(block) = self.store.get(&h) else { continue };
            if !self.certified.contains(&block.parent) || !self.passes(block, &h) {
                continue;
            }
            self.certified.insert(h);
            self.dirty = true;
            work.extend(self.store.children(&h).copied());
        }
    }

    fn preferred_tip(&self) -> BlockHash {
        match self.rule {
            ConfirmRule::Finality => self
                .certified
                .iter()
                .filter_map(|h| self.store.get(h).map(|b| (h, b.height)))
                .max_by(|(ha, a), (hb, b)| {
                    a.cmp(b).then_with(|| {
                        // earlier observation wins, so compare reversed
                        let fa = self.first_seen.get(*ha).copied().unwrap_or(0);
                        let fb = self.first_seen.get(*hb).copied().unwrap_or(0);
                        fb.cmp(&fa)
                    })
                })
                .map_or(BlockHash::GENESIS, |(h, _)| *h),
            ConfirmRule::Underlay => confirmed_tip(&self.store, &self.certified),
        }
    }

    /// Re-evaluates the ledger; returns whether the confirmed tip moved.
    pub fn confirm(&mut self) -> bool {
        if !core::mem::take(&mut self.dirty) {
            return false;
        }
        let tip = self.preferred_tip();
        if tip == self.tip {
            return false;
        }
        let chain = chain_of(&tip, &self.store).expect("certified blocks are connected");
        let ledger = Ledger::from_chain(&chain);
        if !self.ledger.is_prefix_of(&ledger) {
            self.inconsistent = true;
            return false;
        }
        self.tip = tip;
        self.ledger = ledger;
        true
    }
}

/// Finds two snapshots whose ledgers conflict. Ledgers that are pairwise
/// prefix-related form a chain, so checking neighbours in length order is
/// enough.
pub fn safety_check(snapshots: &[Snapshot]) -> Option<SafetyViolation> {
    let mut sorted: Vec<&Snapshot> = snapshots.iter().collect();
    sorted.sort_by(|a, b| {
        a.ledger
            .len()
            .cmp(&b.ledger.len())
            .then(a.slot.cmp(&b.slot))
            .then(a.client.cmp(&b.client))
    });
    sorted.windows(2).find_map(|w| {
        (!w[0].ledger.is_prefix_of(&w[1].ledger)).then(|| SafetyViolation {
            first: w[0].clone(),
            second: w[1].clone(),
        })
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLatency {
    pub tx: TxId,
    pub input_slot: Slot,
    /// First slot by which every client's ledger holds the transaction.
    pub included: Option<Slot>,
    /// `included - max(input_slot, gst)`.
    pub latency: Option<u64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessReport {
    pub t_confirm: u64,
    pub gst: Option<Slot>,
    pub entries: Vec<TxLatency>,
    pub max_latency: Option<u64>,
    pub flagged: usize,
    /// Not yet included, with a deadline past the end of the run.
    pub pending: usize,
}

/// Checks every `(tx, input_slot)` against the client snapshots. `gst` is
/// `None` when the network never stabilized; `slots` is the run length.
pub fn liveness_report(
    inputs: &[(TxId, Slot)],
    snapshots: &[Snapshot],
    clients: &[ClientId],
    gst: Option<Slot>,
    t_confirm: u64,
    slots: u64,
) -> LivenessReport {
    let mut first: BTreeMap<(ClientId, TxId), Slot> = BTreeMap::new();
    for s in snapshots {
        for tx in &s.ledger.0 {
            first.entry((s.client, *tx)).or_insert(s.slot);
        }
    }
    let mut entries = Vec::new();
    for (tx, input_slot) in inputs {
        let included = clients
            .iter()
            .map(|c| first.get(&(*c, *tx)).copied())
            .try_fold(0, |acc: Slot, s| s.map(|s| acc.max(s)));
        let start = gst.map_or(*input_slot, |g| g.max(*input_slot));
        let latency = included.map(|i| i.saturating_sub(start));
        let flagged = gst.is_some()
            && match latency {
                Some(l) => l > t_confirm,
                None => start + t_confirm < slots,
            };
        entries.push(TxLatency {
            tx: *tx,
            input_slot: *input_slot,
            included,
            latency,
            flagged,
        });
    }
    LivenessReport {
        t_confirm,
        gst,
        max_latency: entries.iter().filter_map(|e| e.latency).max(),
        flagged: entries.iter().filter(|e| e.flagged).count(),
        pending: entries.iter().filter(|e| e.included.is_none() && !e.flagged).count(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Party, Proposal};
    use crate::underlay::ProtocolKind;

    fn params() -> ProtocolParams {
        ProtocolParams::new(ProtocolKind::Syncfin, 7, 2, 1)
    }

    fn proposal(parent: &Block, epoch: u64, tx: u64) -> Proposal {
        let leader = params().leader(epoch);
        KeyRing::default().signer(leader).propose(Block {
            parent: parent.hash(),
            height: parent.height + 1,
            epoch,
            proposer: leader,
            payload: alloc::vec![TxId(tx)],
        })
    }

    fn entry(slot: Slot, payload: Payload) -> LogEntry {
        LogEntry {
            slot,
            wave: 0,
            peer: Party::Replica(ReplicaId(1)),
            payload,
        }
    }

    fn sig(signer: u32, block: &Block) -> Payload {
        Payload::FinalitySignature(KeyRing::default().signer(ReplicaId(signer)).finality(block.height, block.hash()))
    }

    fn view() -> ClientView {
        ClientView::new(ClientId(1), ConfirmRule::Finality, params(), KeyRing::default())
    }

    #[test]
    fn quorum_on_block_and_prefix() {
        let mut v = view();
        let b1 = proposal(&Block::genesis(), 1, 10);
        let b2 = proposal(&b1.block, 2, 20);
        v.observe(entry(1, Payload::Proposal(b1.clone())));
        v.observe(entry(1, Payload::Proposal(b2.clone())));
        for s in 1..=4 {
            v.observe(entry(2, sig(s, &b1.block)));
        }
        assert!(!v.confirm());
        assert_eq!(v.signers(&b1.block.hash()).len(), 4);
        // duplicate signature changes nothing
        v.observe(entry(2, sig(4, &b1.block)));
        assert_eq!(v.signers(&b1.block.hash()).len(), 4);
        for s in 1..=5 {
            v.observe(entry(3, sig(s, &b2.block)));
        }
        assert!(!v.confirm(), "parent lacks a quorum");
        v.observe(entry(3, sig(5, &b1.block)));
        assert!(v.confirm());
        assert_eq!(v.ledger().0, alloc::vec![TxId(10), TxId(20)]);
    }

    #[test]
    fn signature_before_block_is_buffered() {
        let mut v = view();
        let b1 = proposal(&Block::genesis(), 1, 10);
        for s in 1..=5 {
            v.observe(entry(1, sig(s, &b1.block)));
        }
        assert!(!v.confirm());
        v.observe(entry(2, Payload::Proposal(b1)));
        assert!(v.confirm());
        assert_eq!(v.ledger().len(), 1);
    }

    #[test]
    fn conflicting_quorums_keep_first_and_flag() {
        let mut v = view();
        let a = proposal(&Block::genesis(), 1, 10);
        let b = proposal(&Block::genesis(), 2, 20);
        v.observe(entry(1, Payload::Proposal(a.clone())));
        v.observe(entry(1, Payload::Proposal(b.clone())));
        for s in 1..=5 {
            v.observe(entry(2, sig(s, &a.block)));
        }
        for s in 3..=7 {
            v.observe(entry(2, sig(s, &b.block)));
        }
        v.confirm();
        assert_eq!(v.tip(), a.block.hash());
        assert!(!v.inconsistent());

        let mut w = view();
        w.observe(entry(1, Payload::Proposal(a.clone())));
        w.observe(entry(1, Payload::Proposal(b.clone())));
        for s in 3..=7 {
            w.observe(entry(2, sig(s, &b.block)));
        }
        w.confirm();
        let c = proposal(&a.block, 3, 30);
        w.observe(entry(3, Payload::Proposal(c.clone())));
        for s in 1..=5 {
            w.observe(entry(3, sig(s, &a.block)));
            w.observe(entry(3, sig(s, &c.block)));
        }
        assert!(!w.confirm());
        assert!(w.inconsistent());
        assert_eq!(w.ledger().0, alloc::vec![TxId(20)]);
    }

    #[test]
    fn forged_signatures_are_dropped() {
        let mut v = view();
        let b1 = proposal(&Block::genesis(), 1, 10);
        let mut forged = KeyRing::default().signer(ReplicaId(2)).finality(1, b1.block.hash());
        forged.signer = ReplicaId(3);
        v.observe(entry(1, Payload::FinalitySignature(forged)));
        assert_eq!(v.dropped(), 1);
    }

    #[test]
    fn replay_reproduces_the_ledger() {
        let mut v = view();
        let b1 = proposal(&Block::genesis(), 1, 10);
        v.observe(entry(1, Payload::Proposal(b1.clone())));
        v.confirm();
        for s in 1..=5 {
            v.observe(entry(2, sig(s, &b1.block)));
        }
        v.confirm();
        let r = ClientView::replay(ClientId(1), ConfirmRule::Finality, params(), KeyRing::default(), v.log());
        assert_eq!(r.ledger(), v.ledger());
        assert_eq!(r.tip(), v.tip());
    }

    fn snap(client: u32, slot: Slot, txs: &[u64]) -> Snapshot {
        Snapshot {
            client: ClientId(client),
            slot,
            ledger: Ledger(txs.iter().map(|t| TxId(*t)).collect()),
            tip: BlockHash::GENESIS,
            tip_height: 0,
            inconsistent: false,
        }
    }

    #[test]
    fn safety_check_examples() {
        assert_eq!(safety_check(&[snap(1, 3, &[1, 2])]), None);
        assert_eq!(safety_check(&[snap(1, 3, &[1]), snap(2, 4, &[1, 2]), snap(1, 5, &[1, 2, 3])]), None);
        let v = safety_check(&[snap(1, 3, &[1, 2]), snap(2, 4, &[1, 3]), snap(1, 5, &[1, 2, 4])]).unwrap();
        assert!(v.first.ledger.conflicts_with(&v.second.ledger));
    }

    #[test]
    fn liveness_examples() {
        let empty = liveness_report(&[], &[], &[ClientId(1)], Some(0), 5, 100);
        assert!(empty.entries.is_empty());
        assert_eq!(empty.max_latency, None);

        let snaps = [snap(1, 4, &[1]), snap(2, 6, &[1]), snap(1, 30, &[1, 2])];
        let clients = [ClientId(1), ClientId(2)];
        let inputs = [(TxId(1), 2), (TxId(2), 3), (TxId(3), 98)];
        let r = liveness_report(&inputs, &snaps, &clients, Some(0), 10, 100);
        assert_eq!(r.entries[0].included, Some(6));
        assert_eq!(r.entries[0].latency, Some(4));
        assert!(!r.entries[0].flagged);
        // client 2 never includes tx 2
        assert!(r.entries[1].flagged);
        assert_eq!(r.pending, 1);
        assert_eq!(r.flagged, 1);

        // latency runs from gst when inputs precede it
        let r = liveness_report(&inputs[..1], &snaps, &clients, Some(5), 10, 100);
        assert_eq!(r.entries[0].latency, Some(1));
        // never-stabilizing network flags nothing
        let r = liveness_report(&inputs, &snaps, &clients, None, 0, 100);
        assert_eq!(r.flagged, 0);
    }
}
