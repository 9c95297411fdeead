//! Blocks, chains, ledgers and protocol messages.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auth::Tag;

/// Time slot index. Slot 0 is the first slot of every execution.
pub type Slot = u64;

/// Replica identity, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Client identity, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cl{}", self.0)
    }
}

/// Opaque transaction identifier issued by the environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u64);

/// Content hash of a block. Serialized as 64 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    /// Sentinel hash of the genesis block.
    pub const GENESIS: BlockHash = BlockHash([0; 32]);

    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(64);
        for b in self.0 {
            let _ = fmt::Write::write_fmt(&mut out, format_args!("{b:02x}"));
        }
        out
    }

    pub fn from_hex(s: &str) -> Option<BlockHash> {
        let bytes = s.as_bytes();
        if bytes.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, pair) in bytes.chunks(2).enumerate() {
            let hi = (pair[0] as char).to_digit(16)?;
            let lo = (pair[1] as char).to_digit(16)?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Some(BlockHash(out))
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // eight hex digits are plenty to tell blocks apart in diagnostics
        write!(f, "#{}", &self.to_hex()[..8])
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for BlockHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BlockHash::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Block {
    pub parent: BlockHash,
    pub height: u64,
    pub epoch: u64,
    pub proposer: ReplicaId,
    pub payload: Vec<TxId>,
}

impl Block {
    pub fn genesis() -> Block {
        Block {
            parent: BlockHash::GENESIS,
            height: 0,
            epoch: 0,
            proposer: ReplicaId(0),
            payload: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0
    }

    pub fn hash(&self) -> BlockHash {
        hash_block(self)
    }
}

/// Deterministic content hash. Genesis maps to [`BlockHash::GENESIS`].
pub fn hash_block(block: &Block) -> BlockHash {
    if block.is_genesis() {
        return BlockHash::GENESIS;
    }
    let mut h = Sha256::new();
    h.update(b"block");
    h.update(block.parent.0);
    h.update(block.height.to_le_bytes());
    h.update(block.epoch.to_le_bytes());
    h.update(block.proposer.0.to_le_bytes());
    h.update((block.payload.len() as u64).to_le_bytes());
    for tx in &block.payload {
        h.update(tx.0.to_le_bytes());
    }
    BlockHash(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("block {0} has an ancestor missing from the store")]
    MissingAncestor(BlockHash),
    #[error("block {0} does not extend its parent (height or epoch out of order)")]
    Malformed(BlockHash),
    #[error("two distinct blocks hash to {0}")]
    HashCollision(BlockHash),
}

/// Blocks indexed by hash, closed under parents.
///
/// Blocks whose parent is not yet known are parked and connected once the
/// parent arrives ([`BlockStore::accept`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStore {
    blocks: BTreeMap<BlockHash, Block>,
    children: BTreeMap<BlockHash, BTreeSet<BlockHash>>,
    orphans: BTreeMap<BlockHash, Vec<Block>>,
}

impl Default for BlockStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockStore {
    pub fn new() -> Self {
        let mut blocks = BTreeMap::new();
        blocks.insert(BlockHash::GENESIS, Block::genesis());
        BlockStore {
            blocks,
            children: BTreeMap::new(),
            orphans: BTreeMap::new(),
        }
    }

    pub fn get(&self, hash: &BlockHash) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn contains(&self, hash: &BlockHash) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BlockHash, &Block)> {
        self.blocks.iter()
    }

    pub fn children(&self, hash: &BlockHash) -> impl Iterator<Item = &BlockHash> {
        self.children.get(hash).into_iter().flatten()
    }

    /// Inserts a block whose parent is already stored.
    ///
    /// Returns `Ok(false)` if the identical block was already present.
    pub fn insert(&mut self, block: Block) -> Result<bool, StoreError> {
        let hash = block.hash();
        if let Some(existing) = self.blocks.get(&hash) {
            if *existing != block {
                return Err(StoreError::HashCollision(hash));
            }
            return Ok(false);
        }
        let parent = self
            .blocks
            .get(&block.parent)
            .ok_or(StoreError::MissingAncestor(hash))?;
        if block.height != parent.height + 1 || block.epoch <= parent.epoch {
            return Err(StoreError::Malformed(hash));
        }
        self.children.entry(block.parent).or_default().insert(hash);
        self.blocks.insert(hash, block);
        Ok(true)
    }

    /// Inserts `block`, parking it if its parent is unknown. Returns every
    /// block that became connected, ancestors first.
    pub fn accept(&mut self, block: Block) -> Result<Vec<BlockHash>, StoreError> {
        if !self.blocks.contains_key(&block.parent) {
            let parked = self.orphans.entry(block.parent).or_default();
            if !parked.contains(&block) {
                parked.push(block);
            }
            return Ok(Vec::new());
        }
        let mut connected = Vec::new();
        let mut work = alloc::vec![block];
        while let Some(b) = work.pop() {
            let hash = b.hash();
            match self.insert(b) {
                Ok(true) => {
                    connected.push(hash);
                    if let Some(kids) = self.orphans.remove(&hash) {
                        work.extend(kids.into_iter().rev());
                    }
                }
                Ok(false) => {}
                // malformed children of a known parent are dropped
                Err(StoreError::Malformed(_)) if !connected.is_empty() => {}
                Err(e) => return Err(e),
            }
        }
        Ok(connected)
    }

    /// `true` if `ancestor` lies on the chain from genesis to `block`
    /// (inclusive of `block` itself).
    pub fn is_ancestor(&self, ancestor: &BlockHash, block: &BlockHash) -> Result<bool, StoreError> {
        let target = self
            .blocks
            .get(ancestor)
            .ok_or(StoreError::MissingAncestor(*ancestor))?
            .height;
        let mut cur = *block;
        loop {
            let b = self.blocks.get(&cur).ok_or(StoreError::MissingAncestor(cur))?;
            if b.height < target {
                return Ok(false);
            }
            if b.height == target {
                return Ok(cur == *ancestor);
            }
            cur = b.parent;
        }
    }

    /// The ancestor of `block` at `height`, if `height <= block.height`.
    pub fn ancestor_at(&self, block: &BlockHash, height: u64) -> Result<Option<BlockHash>, StoreError> {
        let mut cur = *block;
        loop {
            let b = self.blocks.get(&cur).ok_or(StoreError::MissingAncestor(cur))?;
            if b.height < height {
                return Ok(None);
            }
            if b.height == height {
                return Ok(Some(cur));
            }
            cur = b.parent;
        }
    }
}

/// Returns genesis..=block in ancestor order.
pub fn chain_of(block: &BlockHash, store: &BlockStore) -> Result<Vec<Block>, StoreError> {
    let mut out = Vec::new();
    let mut cur = *block;
    loop {
        let b = store.get(&cur).ok_or(StoreError::MissingAncestor(cur))?;
        out.push(b.clone());
        if b.is_genesis() {
            break;
        }
        cur = b.parent;
    }
    out.reverse();
    Ok(out)
}

/// Two blocks conflict iff neither is an ancestor of the other.
pub fn conflicting(a: &BlockHash, b: &BlockHash, store: &BlockStore) -> Result<bool, StoreError> {
    let ha = store.get(a).ok_or(StoreError::MissingAncestor(*a))?.height;
    let hb = store.get(b).ok_or(StoreError::MissingAncestor(*b))?.height;
    let related = if ha <= hb {
        store.is_ancestor(a, b)?
    } else {
        store.is_ancestor(b, a)?
    };
    Ok(!related)
}

/// Ordered transaction sequence output by a client. No duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ledger(pub Vec<TxId>);

impl Ledger {
    /// Concatenates the payloads along `chain`, keeping the first occurrence
    /// of every transaction.
    pub fn from_chain(chain: &[Block]) -> Ledger {
        let mut seen = BTreeSet::new();
        let mut txs = Vec::new();
        for block in chain {
            for tx in &block.payload {
                if seen.insert(*tx) {
                    txs.push(*tx);
                }
            }
        }
        Ledger(txs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, tx: &TxId) -> bool {
        self.0.contains(tx)
    }

    pub fn is_prefix_of(&self, other: &Ledger) -> bool {
        is_prefix(self, other)
    }

    /// Neither ledger is a prefix of the other.
    pub fn conflicts_with(&self, other: &Ledger) -> bool {
        !is_prefix(self, other) && !is_prefix(other, self)
    }
}

pub fn is_prefix(a: &Ledger, b: &Ledger) -> bool {
    a.0.len() <= b.0.len() && a.0 == b.0[..a.0.len()]
}

/// Underlay vote for `block` in `epoch`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub voter: ReplicaId,
    pub epoch: u64,
    pub block: BlockHash,
    pub tag: Tag,
}

/// Gadget vote: `signer` finalizes `block` at `height`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FinalitySignature {
    pub signer: ReplicaId,
    pub height: u64,
    pub block: BlockHash,
    pub tag: Tag,
}

/// A block together with its proposer's tag.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub block: Block,
    pub tag: Tag,
}

/// Block-store fragment used for notarization echoes.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SyncFragment {
    pub blocks: Vec<Block>,
    pub votes: Vec<Vote>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxInputMsg {
    pub tx: TxId,
    pub input_slot: Slot,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Proposal(Proposal),
    Vote(Vote),
    FinalitySignature(FinalitySignature),
    TransactionInput(TxInputMsg),
    Sync(SyncFragment),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Environment,
    Replica(ReplicaId),
    Client(ClientId),
}

impl Party {
    pub fn replica(&self) -> Option<ReplicaId> {
        match self {
            Party::Replica(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Message {
    pub sender: Party,
    pub recipient: Party,
    pub payload: Payload,
    pub send_slot: Slot,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(parent: &Block, epoch: u64, proposer: u32, txs: &[u64]) -> Block {
        Block {
            parent: parent.hash(),
            height: parent.height + 1,
            epoch,
            proposer: ReplicaId(proposer),
            payload: txs.iter().copied().map(TxId).collect(),
        }
    }

    fn ledger(txs: &[u64]) -> Ledger {
        Ledger(txs.iter().copied().map(TxId).collect())
    }

    #[test]
    fn hashing_is_deterministic_and_distinguishes_payloads() {
        let g = Block::genesis();
        let a = block(&g, 1, 2, &[1]);
        let b = block(&g, 1, 2, &[2]);
        assert_eq!(hash_block(&a), hash_block(&a.clone()));
        assert_ne!(hash_block(&a), hash_block(&b));
        assert_eq!(hash_block(&g), BlockHash::GENESIS);
    }

    #[test]
    fn hex_round_trip() {
        let h = block(&Block::genesis(), 1, 2, &[7]).hash();
        assert_eq!(BlockHash::from_hex(&h.to_hex()), Some(h));
        assert_eq!(BlockHash::from_hex("zz"), None);
    }

    #[test]
    fn prefix_examples() {
        assert!(is_prefix(&ledger(&[]), &ledger(&[1, 2])));
        assert!(is_prefix(&ledger(&[1]), &ledger(&[1, 2])));
        assert!(!is_prefix(&ledger(&[1, 3]), &ledger(&[1, 2])));
    }

    #[test]
    fn chain_of_examples() {
        let mut store = BlockStore::new();
        assert_eq!(chain_of(&BlockHash::GENESIS, &store).unwrap().len(), 1);
        let g = Block::genesis();
        let b1 = block(&g, 1, 2, &[]);
        let b2 = block(&b1, 2, 3, &[]);
        store.insert(b1.clone()).unwrap();
        store.insert(b2.clone()).unwrap();
        let chain = chain_of(&b2.hash(), &store).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain[1], b1);

        let orphan = block(&block(&b2, 3, 4, &[]), 4, 5, &[]);
        assert_eq!(
            chain_of(&orphan.hash(), &store),
            Err(StoreError::MissingAncestor(orphan.hash()))
        );
        assert_eq!(
            store.insert(orphan.clone()),
            Err(StoreError::MissingAncestor(orphan.hash()))
        );
    }

    #[test]
    fn conflicting_examples() {
        let mut store = BlockStore::new();
        let g = Block::genesis();
        let p = block(&g, 1, 2, &[]);
        let c = block(&p, 2, 3, &[]);
        let s1 = block(&p, 3, 4, &[1]);
        let s2 = block(&p, 3, 4, &[2]);
        for b in [&p, &c, &s1, &s2] {
            store.insert(b.clone()).unwrap();
        }
        assert!(!conflicting(&p.hash(), &p.hash(), &store).unwrap());
        assert!(!conflicting(&p.hash(), &c.hash(), &store).unwrap());
        assert!(!conflicting(&c.hash(), &p.hash(), &store).unwrap());
        assert!(conflicting(&s1.hash(), &s2.hash(), &store).unwrap());
        assert!(conflicting(&c.hash(), &s1.hash(), &store).unwrap());
    }

    #[test]
    fn malformed_blocks_rejected() {
        let mut store = BlockStore::new();
        let g = Block::genesis();
        let mut bad = block(&g, 1, 1, &[]);
        bad.height = 5;
        assert!(matches!(store.insert(bad), Err(StoreError::Malformed(_))));
        let b1 = block(&g, 3, 1, &[]);
        store.insert(b1.clone()).unwrap();
        let stale = block(&b1, 3, 1, &[]);
        assert!(matches!(store.insert(stale), Err(StoreError::Malformed(_))));
    }

    #[test]
    fn accept_connects_orphans_in_order() {
        let mut store = BlockStore::new();
        let g = Block::genesis();
        let b1 = block(&g, 1, 2, &[]);
        let b2 = block(&b1, 2, 3, &[]);
        let b3 = block(&b2, 3, 4, &[]);
        assert!(store.accept(b3.clone()).unwrap().is_empty());
        assert!(store.accept(b2.clone()).unwrap().is_empty());
        let connected = store.accept(b1.clone()).unwrap();
        assert_eq!(connected, alloc::vec![b1.hash(), b2.hash(), b3.hash()]);
    }

    #[test]
    fn ledger_extraction_drops_duplicates() {
        let g = Block::genesis();
        let b1 = block(&g, 1, 1, &[1, 2]);
        let b2 = block(&b1, 2, 2, &[2, 3]);
        assert_eq!(Ledger::from_chain(&[g, b1, b2]), ledger(&[1, 2, 3]));
    }

    fn arb_ledger() -> impl Strategy<Value = Ledger> {
        // small alphabet so prefixes actually occur
        proptest::collection::vec(0u64..3, 0..6).prop_map(|v| Ledger(v.into_iter().map(TxId).collect()))
    }

    proptest! {
        #[test]
        fn prefix_is_a_partial_order(a in arb_ledger(), b in arb_ledger(), c in arb_ledger()) {
            prop_assert!(is_prefix(&a, &a));
            if is_prefix(&a, &b) && is_prefix(&b, &a) {
                prop_assert_eq!(&a, &b);
            }
            if is_prefix(&a, &b) && is_prefix(&b, &c) {
                prop_assert!(is_prefix(&a, &c));
            }
        }

        #[test]
        fn conflict_is_symmetric_and_irreflexive(forks in proptest::collection::vec((0usize..8, 0u64..4), 1..12)) {
            let mut store = BlockStore::new();
            let mut hashes = alloc::vec![BlockHash::GENESIS];
            for (i, (parent_ix, tx)) in forks.into_iter().enumerate() {
                let parent = store.get(&hashes[parent_ix % hashes.len()]).unwrap().clone();
                let b = block(&parent, parent.epoch + 1 + i as u64, 1, &[tx]);
                if store.insert(b.clone()).unwrap() {
                    hashes.push(b.hash());
                }
            }
            for a in &hashes {
                prop_assert!(!conflicting(a, a, &store).unwrap());
                for b in &hashes {
                    let ab = conflicting(a, b, &store).unwrap();
                    prop_assert_eq!(ab, conflicting(b, a, &store).unwrap());
                    let (ha, hb) = (store.get(a).unwrap().height, store.get(b).unwrap().height);
                    if ha == hb && a != b {
                        prop_assert!(ab);
                    }
                }
            }
        }
    }
}
