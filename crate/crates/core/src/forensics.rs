//! Forensic analysis of a safety violation.
//!
//! Two clients whose ledgers conflict pool what they observed. The evidence
//! must reproduce both ledgers under the finality-signature confirmation
//! rule; the verdict then names every replica that signed two different
//! blocks at one height, each with the two signatures as proof.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::KeyRing;
use crate::client::ClientView;
use crate::model::{chain_of, Block, BlockHash, BlockStore, FinalitySignature, Ledger, Payload, ReplicaId};
use crate::underlay::ProtocolParams;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub ledgers: [Ledger; 2],
    pub tips: [BlockHash; 2],
    /// genesis..=tip for each side.
    pub chains: [Vec<Block>; 2],
    pub blocks: Vec<Block>,
    pub signatures: Vec<FinalitySignature>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProofPair {
    pub first: FinalitySignature,
    pub second: FinalitySignature,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accused: BTreeSet<ReplicaId>,
    pub proofs: Vec<ProofPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForensicError {
    #[error("client {client}: ledger cannot be re-derived from its message log")]
    IrreproducibleView { client: u32 },
    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),
}

fn insufficient(msg: &str) -> ForensicError {
    ForensicError::InsufficientEvidence(msg.into())
}

/// Pools two clients' observations when their ledgers conflict.
pub fn extract_evidence(a: &ClientView, b: &ClientView) -> Result<Option<Evidence>, ForensicError> {
    for view in [a, b] {
        let replayed = ClientView::replay(view.id(), view.rule(), view.params(), KeyRing::default(), view.log());
        if replayed.ledger() != view.ledger() || replayed.tip() != view.tip() {
            return Err(ForensicError::IrreproducibleView { client: view.id().0 });
        }
    }
    if !a.ledger().conflicts_with(b.ledger()) {
        return Ok(None);
    }
    let mut blocks = BTreeSet::new();
    let mut signatures = BTreeSet::new();
    for view in [a, b] {
        for e in view.log() {
            match &e.payload {
                Payload::Proposal(p) => {
                    blocks.insert(p.block.clone());
                }
                Payload::Sync(s) => blocks.extend(s.blocks.iter().cloned()),
                Payload::FinalitySignature(s) => {
                    signatures.insert(s.clone());
                }
                _ => {}
            }
        }
    }
    let chain = |v: &ClientView| chain_of(&v.tip(), v.store()).map_err(|_| insufficient("tip chain is not connected"));
    Ok(Some(Evidence {
        ledgers: [a.ledger().clone(), b.ledger().clone()],
        tips: [a.tip(), b.tip()],
        chains: [chain(a)?, chain(b)?],
        blocks: blocks.into_iter().collect(),
        signatures: signatures.into_iter().collect(),
    }))
}

/// Checks the evidence and names the double signers.
pub fn forensic(ev: &Evidence, params: &ProtocolParams) -> Result<Verdict, ForensicError> {
    let keys = KeyRing::default();
    let mut store = BlockStore::new();
    for b in ev.blocks.iter().chain(ev.chains.iter().flatten()) {
        let _ = store.accept(b.clone());
    }
    let valid: Vec<&FinalitySignature> = ev.signatures.iter().filter(|s| keys.verify_finality(s)).collect();
    if !ev.ledgers[0].conflicts_with(&ev.ledgers[1]) {
        return Err(insufficient("no conflict between the two ledgers"));
    }
    for k in 0..2 {
        let chain = chain_of(&ev.tips[k], &store).map_err(|_| insufficient("tip chain is not connected"))?;
        if chain != ev.chains[k] {
            return Err(insufficient("chain does not match its tip"));
        }
        if Ledger::from_chain(&chain) != ev.ledgers[k] {
            return Err(insufficient("ledger does not match its chain"));
        }
        let certified = chain.iter().skip(1).all(|b| {
            let hash = b.hash();
            valid.iter().filter(|s| s.block == hash && s.height == b.height).count() >= params.quorum()
        });
        if !certified {
            return Err(insufficient("chain lacks a quorum of finality signatures"));
        }
    }
    let mut by_signer_height: BTreeMap<(ReplicaId, u64), BTreeMap<BlockHash, &FinalitySignature>> = BTreeMap::new();
    for s in &valid {
        by_signer_height
            .entry((s.signer, s.height))
            .or_default()
            .entry(s.block)
            .or_insert(s);
    }
    let mut verdict = Verdict::default();
    for ((signer, _), blocks) in by_signer_height {
        if verdict.accused.contains(&signer) || blocks.len() < 2 {
            continue;
        }
        let mut it = blocks.into_values();
        let (first, second) = (it.next().expect("two entries"), it.next().expect("two entries"));
        verdict.accused.insert(signer);
        verdict.proofs.push(ProofPair {
            first: first.clone(),
            second: second.clone(),
        });
    }
    Ok(verdict)
}

/// Checks a verdict on its own: every proof is two authentic signatures by
/// the accused replica on different blocks at one height.
pub fn verify_verdict(v: &Verdict) -> bool {
    let keys = KeyRing::default();
    let proofs_ok = v.proofs.iter().all(|p| {
        p.first.signer == p.second.signer
            && p.first.height == p.second.height
            && p.first.block != p.second.block
            && keys.verify_finality(&p.first)
            && keys.verify_finality(&p.second)
    });
    let named: BTreeSet<ReplicaId> = v.proofs.iter().map(|p| p.first.signer).collect();
    proofs_ok && named == v.accused && named.len() == v.proofs.len()
}

/// Size of the smallest intersection of two `q`-subsets of `n` replicas.
pub fn min_quorum_overlap(n: usize, q: usize) -> usize {
    (2 * q).saturating_sub(n)
}
