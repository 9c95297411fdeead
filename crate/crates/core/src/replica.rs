//! A replica: the underlay state machine plus, for SyncFin, the gadget.

use alloc::vec::Vec;

use crate::auth::{KeyRing, Signer};
use crate::gadget::{GadgetError, GadgetState};
use crate::model::{chain_of, BlockHash, ClientId, Party, Payload, ReplicaId, Slot};
use crate::underlay::{Audience, Outgoing, ProtocolParams, UnderlayState};

#[derive(Clone, Debug)]
pub struct Replica {
    signer: Signer,
    underlay: UnderlayState,
    gadget: Option<GadgetState>,
    gadget_muted: bool,
    last_tip: BlockHash,
}

impl Replica {
    pub fn new(signer: Signer, params: ProtocolParams, keys: KeyRing) -> Self {
        let id = signer.id();
        Replica {
            underlay: UnderlayState::new(id, params, keys),
            gadget: params.protocol.has_gadget().then(|| GadgetState::new(id)),
            signer,
            gadget_muted: false,
            last_tip: BlockHash::GENESIS,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.signer.id()
    }

    pub fn underlay(&self) -> &UnderlayState {
        &self.underlay
    }

    pub fn gadget(&self) -> Option<&GadgetState> {
        self.gadget.as_ref()
    }

    /// Stops all gadget activity; the underlay keeps running.
    pub fn mute_gadget(&mut self) {
        self.gadget_muted = true;
    }

    pub fn on_slot_begin(&mut self, slot: Slot) -> Result<Vec<Outgoing>, GadgetError> {
        let mut out = self.underlay.on_slot_begin(slot, &self.signer);
        self.feed_gadget(&mut out)?;
        Ok(out)
    }

    pub fn on_message(&mut self, slot: Slot, from: Party, payload: &Payload) -> Result<Vec<Outgoing>, GadgetError> {
        let mut out = self.underlay.on_message(slot, from, payload, &self.signer);
        self.feed_gadget(&mut out)?;
        Ok(out)
    }

    fn feed_gadget(&mut self, out: &mut Vec<Outgoing>) -> Result<(), GadgetError> {
        let tip = self.underlay.confirmed_tip();
        if tip == self.last_tip {
            return Ok(());
        }
        self.last_tip = tip;
        let muted = self.gadget_muted;
        let Some(gadget) = self.gadget.as_mut().filter(|_| !muted) else {
            return Ok(());
        };
        let store = self.underlay.store();
        let chain = chain_of(&tip, store).map_err(|source| GadgetError::Store {
            replica: self.signer.id(),
            source,
        })?;
        for block in chain.iter().skip(1) {
            if gadget.has_processed(&block.hash()) {
                continue;
            }
            if let Some(sig) = gadget.on_underlay_confirmed(block, store, &self.signer)? {
                out.push(Outgoing {
                    audience: Audience::Everyone,
                    payload: Payload::FinalitySignature(sig),
                });
            }
        }
        Ok(())
    }
}

/// Concrete recipients of an outgoing payload from `sender`.
pub fn recipients(sender: ReplicaId, audience: Audience, n: u32, clients: u32) -> Vec<Party> {
    let mut to: Vec<Party> = (1..=n)
        .map(ReplicaId)
        .filter(|r| *r != sender)
        .map(Party::Replica)
        .collect();
    if audience == Audience::Everyone {
        to.extend((1..=clients).map(|c| Party::Client(ClientId(c))));
    }
    to
}
