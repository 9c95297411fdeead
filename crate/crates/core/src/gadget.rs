//! Finality-signature gadget.
//!
//! Each replica signs at most one block per height: the first block it sees
//! confirmed by its underlay at that height. A block is refused, and never
//! signed, when its height already carries a different signature, when one of
//! its ancestors disagrees with an earlier signature, or when an ancestor was
//! refused. Honest signatures therefore always lie on a single chain.

use alloc::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::auth::Signer;
use crate::model::{chain_of, Block, BlockHash, BlockStore, FinalitySignature, ReplicaId, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GadgetError {
    #[error("replica {replica}: block {block:?} handed to the gadget before its parent")]
    OutOfOrder { replica: ReplicaId, block: BlockHash },
    #[error("replica {replica}: {source}")]
    Store { replica: ReplicaId, source: StoreError },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GadgetState {
    replica: ReplicaId,
    signed: BTreeMap<u64, BlockHash>,
    refused: BTreeSet<BlockHash>,
    processed: BTreeSet<BlockHash>,
}

impl GadgetState {
    pub fn new(replica: ReplicaId) -> Self {
        GadgetState {
            replica,
            signed: BTreeMap::new(),
            refused: BTreeSet::new(),
            processed: [BlockHash::GENESIS].into_iter().collect(),
        }
    }

    pub fn signed_view(&self) -> BTreeMap<u64, BlockHash> {
        self.signed.clone()
    }

    pub fn is_refused(&self, hash: &BlockHash) -> bool {
        self.refused.contains(hash)
    }

    pub fn has_processed(&self, hash: &BlockHash) -> bool {
        self.processed.contains(hash)
    }

    /// Handles a block that just became underlay-confirmed. Blocks must
    /// arrive parent first; a block seen before is ignored.
    pub fn on_underlay_confirmed(
        &mut self,
        block: &Block,
        store: &BlockStore,
        signer: &Signer,
    ) -> Result<Option<FinalitySignature>, GadgetError> {
        let hash = block.hash();
        if self.processed.contains(&hash) {
            return Ok(None);
        }
        if !self.processed.contains(&block.parent) {
            return Err(GadgetError::OutOfOrder {
                replica: self.replica,
                block: hash,
            });
        }
        let chain = chain_of(&hash, store).map_err(|source| GadgetError::Store {
            replica: self.replica,
            source,
        })?;
        self.processed.insert(hash);

        let ancestors = &chain[..chain.len() - 1];
        let ancestor_refused = ancestors.iter().any(|a| self.refused.contains(&a.hash()));
        let ancestor_mismatch = ancestors.iter().filter(|a| !a.is_genesis()).any(|a| {
            self.signed
                .get(&a.height)
                .is_some_and(|s| *s != a.hash())
        });
        match self.signed.get(&block.height) {
            Some(s) if *s == hash => return Ok(None),
            Some(_) => {
                self.refused.insert(hash);
                return Ok(None);
            }
            None => {}
        }
        if ancestor_refused || ancestor_mismatch {
            self.refused.insert(hash);
            return Ok(None);
        }
        self.signed.insert(block.height, hash);
        Ok(Some(signer.finality(block.height, hash)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::KeyRing;
    use crate::model::TxId;

    fn child(parent: &Block, epoch: u64, tx: u64) -> Block {
        Block {
            parent: parent.hash(),
            height: parent.height + 1,
            epoch,
            proposer: ReplicaId(1),
            payload: alloc::vec![TxId(tx)],
        }
    }

    #[test]
    fn first_confirmed_block_is_signed_conflicts_refused() {
        let signer = KeyRing::default().signer(ReplicaId(3));
        let mut store = BlockStore::new();
        let g = Block::genesis();
        let a1 = child(&g, 1, 1);
        let b1 = child(&g, 2, 2);
        let b2 = child(&b1, 3, 3);
        for b in [&a1, &b1, &b2] {
            store.insert(b.clone()).unwrap();
        }
        let mut gadget = GadgetState::new(ReplicaId(3));
        assert!(gadget.signed_view().is_empty());

        let sig = gadget.on_underlay_confirmed(&a1, &store, &signer).unwrap().unwrap();
        assert_eq!((sig.height, sig.block, sig.signer), (1, a1.hash(), ReplicaId(3)));
        assert!(KeyRing::default().verify_finality(&sig));
        let before = gadget.signed_view();
        assert_eq!(before.len(), 1);

        assert_eq!(gadget.on_underlay_confirmed(&b1, &store, &signer).unwrap(), None);
        assert!(gadget.is_refused(&b1.hash()));
        // height 2 is unsigned, but the parent was refused
        assert_eq!(gadget.on_underlay_confirmed(&b2, &store, &signer).unwrap(), None);
        assert!(gadget.is_refused(&b2.hash()));
        assert_eq!(gadget.signed_view(), before);
    }

    #[test]
    fn ancestor_mismatch_refuses() {
        let signer = KeyRing::default().signer(ReplicaId(1));
        let mut store = BlockStore::new();
        let g = Block::genesis();
        let a1 = child(&g, 1, 1);
        let a2 = child(&a1, 2, 2);
        let b1 = child(&g, 3, 3);
        let b2 = child(&b1, 4, 4);
        let b3 = child(&b2, 5, 5);
        for b in [&a1, &a2, &b1, &b2, &b3] {
            store.insert(b.clone()).unwrap();
        }
        let mut gadget = GadgetState::new(ReplicaId(1));
        assert!(gadget.on_underlay_confirmed(&a1, &store, &signer).unwrap().is_some());
        assert!(gadget.on_underlay_confirmed(&a2, &store, &signer).unwrap().is_some());
        assert!(gadget.on_underlay_confirmed(&b1, &store, &signer).unwrap().is_none());
        assert!(gadget.on_underlay_confirmed(&b2, &store, &signer).unwrap().is_none());
        // height 3 free, yet b3 descends from refused blocks
        assert!(gadget.on_underlay_confirmed(&b3, &store, &signer).unwrap().is_none());
        assert_eq!(gadget.signed_view().len(), 2);
    }

    #[test]
    fn out_of_order_is_an_error() {
        let signer = KeyRing::default().signer(ReplicaId(1));
        let mut store = BlockStore::new();
        let a1 = child(&Block::genesis(), 1, 1);
        let a2 = child(&a1, 2, 2);
        store.insert(a1).unwrap();
        store.insert(a2.clone()).unwrap();
        let mut gadget = GadgetState::new(ReplicaId(1));
        assert!(matches!(
            gadget.on_underlay_confirmed(&a2, &store, &signer),
            Err(GadgetError::OutOfOrder { .. })
        ));
    }
}
