//! Simulated signatures.
//!
//! A [`Tag`] is a keyed digest over a domain-separated encoding of the signed
//! statement. Keys are derived from a key ring's master secret and a replica
//! index; the simulator is the only code that creates [`Signer`]s, and it
//! hands an adversary signers only for the replicas it corrupted.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Block, BlockHash, FinalitySignature, Proposal, ReplicaId, Vote};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyRing {
    master: [u8; 32],
}

impl Default for KeyRing {
    fn default() -> Self {
        KeyRing::new(*b"syncfin-simulated-key-ring-v1...")
    }
}

impl KeyRing {
    pub fn new(master: [u8; 32]) -> Self {
        KeyRing { master }
    }

    fn key(&self, id: ReplicaId) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master);
        h.update(id.0.to_le_bytes());
        h.finalize().into()
    }

    pub fn signer(&self, id: ReplicaId) -> Signer {
        Signer {
            id,
            key: self.key(id),
        }
    }

    fn check(&self, id: ReplicaId, statement: &Statement, tag: Tag) -> bool {
        id.0 != 0 && mac(&self.key(id), statement) == tag
    }

    pub fn verify_vote(&self, vote: &Vote) -> bool {
        self.check(vote.voter, &Statement::Vote(vote.epoch, vote.block), vote.tag)
    }

    pub fn verify_finality(&self, sig: &FinalitySignature) -> bool {
        self.check(sig.signer, &Statement::Finality(sig.height, sig.block), sig.tag)
    }

    pub fn verify_proposal(&self, proposal: &Proposal) -> bool {
        self.check(
            proposal.block.proposer,
            &Statement::Proposal(proposal.block.hash()),
            proposal.tag,
        )
    }
}

/// Signing capability for one replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signer {
    id: ReplicaId,
    key: [u8; 32],
}

impl Signer {
    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn vote(&self, epoch: u64, block: BlockHash) -> Vote {
        Vote {
            voter: self.id,
            epoch,
            block,
            tag: mac(&self.key, &Statement::Vote(epoch, block)),
        }
    }

    pub fn finality(&self, height: u64, block: BlockHash) -> FinalitySignature {
        FinalitySignature {
            signer: self.id,
            height,
            block,
            tag: mac(&self.key, &Statement::Finality(height, block)),
        }
    }

    /// Signs `block`, overwriting its proposer field with this signer.
    pub fn propose(&self, mut block: Block) -> Proposal {
        block.proposer = self.id;
        let tag = mac(&self.key, &Statement::Proposal(block.hash()));
        Proposal { block, tag }
    }
}

enum Statement {
    Vote(u64, BlockHash),
    Finality(u64, BlockHash),
    Proposal(BlockHash),
}

fn mac(key: &[u8; 32], statement: &Statement) -> Tag {
    let mut h = Sha256::new();
    h.update(key);
    match statement {
        Statement::Vote(epoch, block) => {
            h.update(b"vote");
            h.update(epoch.to_le_bytes());
            h.update(block.0);
        }
        Statement::Finality(height, block) => {
            h.update(b"finality");
            h.update(height.to_le_bytes());
            h.update(block.0);
        }
        Statement::Proposal(block) => {
            h.update(b"proposal");
            h.update(block.0);
        }
    }
    let digest: [u8; 32] = h.finalize().into();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    Tag(u64::from_le_bytes(word))
}
