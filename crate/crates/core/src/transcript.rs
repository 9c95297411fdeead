//! Execution transcripts and the checks that run over them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::KeyRing;
use crate::client::Snapshot;
use crate::model::{conflicting, BlockHash, BlockStore, ClientId, FinalitySignature, Party, Payload, ReplicaId, Slot};
use crate::replica::{recipients, Replica};
use crate::underlay::ProtocolParams;

/// One logged delivery or send. `wave` numbers the delivery rounds within a
/// slot: wave 0 carries the slot's scheduled deliveries, environment inputs
/// and slot-begin handlers; later waves carry same-slot deliveries. `peer` is
/// the sender for received entries and the recipient for sent entries.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogEntry {
    pub slot: Slot,
    pub wave: u32,
    pub peer: Party,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub params: Option<ProtocolParams>,
    pub slots: u64,
    pub clients: u32,
    pub corrupted: BTreeSet<ReplicaId>,
    pub received: BTreeMap<ReplicaId, Vec<LogEntry>>,
    pub sent: BTreeMap<ReplicaId, Vec<LogEntry>>,
    pub client_logs: BTreeMap<ClientId, Vec<LogEntry>>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("replica {replica} signed two blocks at height {height}")]
    DoubleSignature { replica: ReplicaId, height: u64 },
    #[error("replica {replica} signed conflicting blocks {a:?} and {b:?}")]
    ConflictingSignatures {
        replica: ReplicaId,
        a: BlockHash,
        b: BlockHash,
    },
    #[error("replica {replica} voted twice in epoch {epoch}")]
    DoubleVote { replica: ReplicaId, epoch: u64 },
    #[error("signed block {0:?} is missing from the block store")]
    UnknownBlock(BlockHash),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayMismatch {
    #[error("transcript carries no protocol parameters")]
    MissingParams,
    #[error("replica {replica} is not honest in this transcript")]
    NotHonest { replica: ReplicaId },
    #[error("replica {replica} diverged at sent entry {index}")]
    Diverged { replica: ReplicaId, index: usize },
    #[error("replica {replica} failed during replay: {reason}")]
    Failed { replica: ReplicaId, reason: alloc::string::String },
}

impl Transcript {
    pub fn honest(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        let n = self.params.map_or(0, |p| p.n);
        (1..=n).map(ReplicaId).filter(|r| !self.corrupted.contains(r))
    }

    /// Distinct finality signatures `replica` sent.
    pub fn finality_signatures(&self, replica: ReplicaId) -> BTreeSet<FinalitySignature> {
        self.sent
            .get(&replica)
            .into_iter()
            .flatten()
            .filter_map(|e| match &e.payload {
                Payload::FinalitySignature(s) if s.signer == replica => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    /// One finality signature per height and a single signed chain for every
    /// honest replica, checked against `store`.
    pub fn check_signature_invariants(&self, store: &BlockStore) -> Result<(), InvariantViolation> {
        for r in self.honest() {
            let sigs = self.finality_signatures(r);
            let mut by_height: BTreeMap<u64, BlockHash> = BTreeMap::new();
            for s in &sigs {
                if by_height.insert(s.height, s.block).is_some_and(|b| b != s.block) {
                    return Err(InvariantViolation::DoubleSignature {
                        replica: r,
                        height: s.height,
                    });
                }
            }
            let blocks: Vec<BlockHash> = by_height.into_values().collect();
            for (i, a) in blocks.iter().enumerate() {
                for b in &blocks[i + 1..] {
                    let c = conflicting(a, b, store).map_err(|_| InvariantViolation::UnknownBlock(*a))?;
                    if c {
                        return Err(InvariantViolation::ConflictingSignatures {
                            replica: r,
                            a: *a,
                            b: *b,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// No honest replica sends votes for two blocks in one epoch.
    pub fn check_single_vote(&self) -> Result<(), InvariantViolation> {
        for r in self.honest() {
            let mut epochs: BTreeMap<u64, BlockHash> = BTreeMap::new();
            for e in self.sent.get(&r).into_iter().flatten() {
                if let Payload::Vote(v) = &e.payload {
                    if v.voter == r && epochs.insert(v.epoch, v.block).is_some_and(|b| b != v.block) {
                        return Err(InvariantViolation::DoubleVote { replica: r, epoch: v.epoch });
                    }
                }
            }
        }
        Ok(())
    }

    /// Replays `replica`'s received log through fresh protocol code and
    /// checks that it reproduces the sent log exactly.
    pub fn replay_honest(&self, replica: ReplicaId, keys: &KeyRing) -> Result<(), ReplayMismatch> {
        let params = self.params.ok_or(ReplayMismatch::MissingParams)?;
        if self.corrupted.contains(&replica) {
            return Err(ReplayMismatch::NotHonest { replica });
        }
        let received = self.received.get(&replica).map(Vec::as_slice).unwrap_or(&[]);
        let expected = self.sent.get(&replica).map(Vec::as_slice).unwrap_or(&[]);
        let mut node = Replica::new(keys.signer(replica), params, keys.clone());
        let mut produced: Vec<LogEntry> = Vec::new();
        let fail = |e: crate::gadget::GadgetError| ReplayMismatch::Failed {
            replica,
            reason: alloc::format!("{e}"),
        };
        let mut cursor = 0;
        for slot in 0..self.slots {
            let mut wave = 0;
            loop {
                let mut out = Vec::new();
                while cursor < received.len() && received[cursor].slot == slot && received[cursor].wave == wave {
                    let e = &received[cursor];
                    out.extend(node.on_message(slot, e.peer, &e.payload).map_err(fail)?);
                    cursor += 1;
                }
                if wave == 0 {
                    out.extend(node.on_slot_begin(slot).map_err(fail)?);
                }
                for o in out {
                    for to in recipients(replica, o.audience, params.n, self.clients) {
                        produced.push(LogEntry {
                            slot,
                            wave,
                            peer: to,
                            payload: o.payload.clone(),
                        });
                    }
                }
                let more = cursor < received.len() && received[cursor].slot == slot;
                if !more {
                    break;
                }
                wave = received[cursor].wave;
            }
        }
        if let Some(index) = produced.iter().zip(expected).position(|(a, b)| a != b) {
            return Err(ReplayMismatch::Diverged { replica, index });
        }
        if produced.len() != expected.len() {
            return Err(ReplayMismatch::Diverged {
                replica,
                index: produced.len().min(expected.len()),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Block;
    use crate::underlay::ProtocolKind;

    fn transcript_with(sigs: &[(u32, u64, BlockHash)]) -> Transcript {
        let keys = KeyRing::default();
        let mut t = Transcript {
            params: Some(ProtocolParams::new(ProtocolKind::Syncfin, 4, 1, 1)),
            ..Transcript::default()
        };
        for (r, h, b) in sigs {
            t.sent.entry(ReplicaId(*r)).or_default().push(LogEntry {
                slot: 0,
                wave: 0,
                peer: Party::Replica(ReplicaId(1)),
                payload: Payload::FinalitySignature(keys.signer(ReplicaId(*r)).finality(*h, *b)),
            });
        }
        t
    }

    #[test]
    fn double_signature_detected_for_honest_only() {
        let mut store = BlockStore::new();
        let a = Block {
            parent: BlockHash::GENESIS,
            height: 1,
            epoch: 1,
            proposer: ReplicaId(2),
            payload: alloc::vec![],
        };
        let mut b = a.clone();
        b.epoch = 2;
        store.insert(a.clone()).unwrap();
        store.insert(b.clone()).unwrap();
        let ok = transcript_with(&[(2, 1, a.hash()), (2, 1, a.hash())]);
        assert_eq!(ok.check_signature_invariants(&store), Ok(()));
        let mut bad = transcript_with(&[(2, 1, a.hash()), (2, 1, b.hash())]);
        assert!(matches!(
            bad.check_signature_invariants(&store),
            Err(InvariantViolation::DoubleSignature { .. })
        ));
        bad.corrupted.insert(ReplicaId(2));
        assert_eq!(bad.check_signature_invariants(&store), Ok(()));
    }
}
