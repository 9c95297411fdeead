//! Slot-driven network with an adversarial scheduler.
//!
//! Every submitted message gets a provisional delivery slot (`send + Δ`, or
//! `send` on a delay-free network). The adversary may move it anywhere in
//! `[send, max(send, GST) + Δ]` or hold it "until GST", which resolves to the
//! upper end of that window once GST is known. Deliveries due in the current
//! slot can be drained repeatedly ([`EventQueue::take_due`]), which is how
//! same-slot (instantaneous) delivery is realized.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Message, Party, ReplicaId, Slot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkMode {
    PartialSynchrony,
    Synchrony,
    DelayFree,
}

/// Global stabilization time as seen by the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gst {
    At(Slot),
    /// Will be declared by the adversary once its objective is met.
    Undeclared,
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub mode: NetworkMode,
    pub delta: u64,
    pub gst: Gst,
}

impl NetworkConfig {
    pub fn partial_synchrony(delta: u64, gst: Gst) -> Self {
        NetworkConfig {
            mode: NetworkMode::PartialSynchrony,
            delta,
            gst,
        }
    }

    pub fn synchrony(delta: u64) -> Self {
        NetworkConfig {
            mode: NetworkMode::Synchrony,
            delta,
            gst: Gst::At(0),
        }
    }

    pub fn delay_free() -> Self {
        NetworkConfig {
            mode: NetworkMode::DelayFree,
            delta: 0,
            gst: Gst::At(0),
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        match self.mode {
            NetworkMode::Synchrony if self.gst != Gst::At(0) => {
                Err(NetError::InvalidConfig("synchrony requires gst = 0"))
            }
            NetworkMode::DelayFree if self.gst != Gst::At(0) || self.delta != 0 => {
                Err(NetError::InvalidConfig("delay-free requires gst = 0 and delta = 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("{sender:?} may not send in the current context")]
    UnauthorizedSender { sender: Party },
    #[error("message stamped with slot {stamped} submitted in slot {now}")]
    WrongSendSlot { stamped: Slot, now: Slot },
    #[error("delivery at slot {requested} rejected: window is [{earliest}, {latest:?}]")]
    DelayRejected {
        requested: Slot,
        earliest: Slot,
        latest: Option<Slot>,
    },
    #[error("no pending message with id {0}")]
    UnknownMessage(u64),
    #[error("gst already fixed")]
    GstAlreadyFixed,
    #[error("gst {gst} declared in slot {now}, or a pending delivery would exceed its bound")]
    GstRejected { gst: Slot, now: Slot },
    #[error("more than {cap} same-slot deliveries in slot {slot}")]
    SlotOverflow { slot: Slot, cap: usize },
}

/// Who is submitting a message.
#[derive(Clone, Copy, Debug)]
pub enum Authority<'a> {
    /// An honest replica may only send its own messages.
    Replica(ReplicaId),
    /// The adversary sends on behalf of the replicas it corrupted.
    Adversary(&'a BTreeSet<ReplicaId>),
    Environment,
}

impl Authority<'_> {
    fn permits(&self, sender: &Party) -> bool {
        match (self, sender) {
            (Authority::Replica(me), Party::Replica(s)) => me == s,
            (Authority::Adversary(set), Party::Replica(s)) => set.contains(s),
            (Authority::Environment, Party::Environment) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PendingId(pub u64);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub submitted: u64,
    pub delivered: u64,
    /// Deliveries checked against `max(send, gst) + Δ` while GST was known.
    pub bound_checks: u64,
    pub max_delay: u64,
}

#[derive(Clone, Debug)]
struct Entry {
    msg: Message,
    delivery: Option<Slot>,
}

#[derive(Clone, Debug)]
pub struct EventQueue {
    config: NetworkConfig,
    gst: Gst,
    now: Slot,
    next_id: u64,
    pending: BTreeMap<u64, Entry>,
    due: BTreeMap<Slot, BTreeSet<u64>>,
    same_slot_cap: usize,
    same_slot_count: usize,
    stats: NetStats,
}

impl EventQueue {
    /// `same_slot_cap` bounds the number of messages delivered within the
    /// slot they were sent in.
    pub fn new(config: NetworkConfig, same_slot_cap: usize) -> Result<Self, NetError> {
        config.validate()?;
        Ok(EventQueue {
            config,
            gst: config.gst,
            now: 0,
            next_id: 0,
            pending: BTreeMap::new(),
            due: BTreeMap::new(),
            same_slot_cap,
            same_slot_count: 0,
            stats: NetStats::default(),
        })
    }

    pub fn now(&self) -> Slot {
        self.now
    }

    pub fn gst(&self) -> Gst {
        self.gst
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Upper end of the delivery window for a message sent in `send`, or
    /// `None` while GST is unknown.
    pub fn latest_delivery(&self, send: Slot) -> Option<Slot> {
        match self.gst {
            Gst::At(g) => Some(send.max(g) + self.config.delta),
            Gst::Undeclared | Gst::Never => None,
        }
    }

    pub fn submit(&mut self, msg: Message, authority: Authority<'_>) -> Result<PendingId, NetError> {
        if msg.send_slot != self.now {
            return Err(NetError::WrongSendSlot {
                stamped: msg.send_slot,
                now: self.now,
            });
        }
        if !authority.permits(&msg.sender) {
            return Err(NetError::UnauthorizedSender { sender: msg.sender });
        }
        let delivery = msg.send_slot + self.config.delta;
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert(
            id,
            Entry {
                msg,
                delivery: Some(delivery),
            },
        );
        self.due.entry(delivery).or_default().insert(id);
        self.stats.submitted += 1;
        Ok(PendingId(id))
    }

    fn unschedule(&mut self, id: u64) {
        if let Some(Some(slot)) = self.pending.get(&id).map(|e| e.delivery) {
            if let Some(set) = self.due.get_mut(&slot) {
                set.remove(&id);
                if set.is_empty() {
                    self.due.remove(&slot);
                }
            }
        }
    }

    /// Moves a pending message to `delivery`. Rejected if outside
    /// `[send, max(send, gst) + Δ]`.
    pub fn adversary_delay(&mut self, id: PendingId, delivery: Slot) -> Result<(), NetError> {
        let entry = self.pending.get(&id.0).ok_or(NetError::UnknownMessage(id.0))?;
        let send = entry.msg.send_slot;
        let earliest = send.max(self.now);
        let latest = self.latest_delivery(send);
        if delivery < earliest || latest.is_some_and(|l| delivery > l) {
            return Err(NetError::DelayRejected {
                requested: delivery,
                earliest,
                latest,
            });
        }
        self.unschedule(id.0);
        if let Some(e) = self.pending.get_mut(&id.0) {
            e.delivery = Some(delivery);
        }
        self.due.entry(delivery).or_default().insert(id.0);
        Ok(())
    }

    /// Maximal delay: delivered at `max(send, gst) + Δ`, or parked until
    /// GST is declared.
    pub fn hold_until_gst(&mut self, id: PendingId) -> Result<(), NetError> {
        let send = self
            .pending
            .get(&id.0)
            .ok_or(NetError::UnknownMessage(id.0))?
            .msg
            .send_slot;
        match self.latest_delivery(send) {
            Some(slot) => self.adversary_delay(id, slot),
            None => {
                self.unschedule(id.0);
                if let Some(e) = self.pending.get_mut(&id.0) {
                    e.delivery = None;
                }
                Ok(())
            }
        }
    }

    /// Fixes an adaptively chosen GST. Held messages are released at
    /// `max(send, gst) + Δ`.
    pub fn declare_gst(&mut self, gst: Slot) -> Result<(), NetError> {
        if self.gst != Gst::Undeclared {
            return Err(NetError::GstAlreadyFixed);
        }
        if gst < self.now {
            return Err(NetError::GstRejected { gst, now: self.now });
        }
        let delta = self.config.delta;
        let violates = self.pending.values().any(|e| {
            e.delivery
                .is_some_and(|d| d > e.msg.send_slot.max(gst) + delta)
        });
        if violates {
            return Err(NetError::GstRejected { gst, now: self.now });
        }
        self.gst = Gst::At(gst);
        let held: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, e)| e.delivery.is_none())
            .map(|(id, _)| *id)
            .collect();
        for id in held {
            let e = self.pending.get_mut(&id).expect("held entry");
            let slot = e.msg.send_slot.max(gst) + delta;
            e.delivery = Some(slot);
            self.due.entry(slot).or_default().insert(id);
        }
        Ok(())
    }

    /// Moves to the next slot and returns the messages due in it.
    pub fn advance(&mut self) -> Vec<Message> {
        self.now += 1;
        self.same_slot_count = 0;
        self.drain(self.now)
    }

    /// Messages due in the current slot that were scheduled after the last
    /// drain (same-slot deliveries).
    pub fn take_due(&mut self) -> Result<Vec<Message>, NetError> {
        let out = self.drain(self.now);
        self.same_slot_count += out.len();
        if self.same_slot_count > self.same_slot_cap {
            return Err(NetError::SlotOverflow {
                slot: self.now,
                cap: self.same_slot_cap,
            });
        }
        Ok(out)
    }

    fn drain(&mut self, slot: Slot) -> Vec<Message> {
        let ids = self.due.remove(&slot).unwrap_or_default();
        let mut out: Vec<Message> = ids
            .into_iter()
            .map(|id| self.pending.remove(&id).expect("scheduled entry").msg)
            .collect();
        for msg in &out {
            self.check_bound(msg, slot);
        }
        out.sort_by(|a, b| {
            (a.sender, a.recipient, &a.payload).cmp(&(b.sender, b.recipient, &b.payload))
        });
        self.stats.delivered += out.len() as u64;
        out
    }

    fn check_bound(&mut self, msg: &Message, delivery: Slot) {
        assert!(delivery >= msg.send_slot, "delivery before send: {msg:?}");
        if let Some(latest) = self.latest_delivery(msg.send_slot) {
            assert!(
                delivery <= latest,
                "delivery bound violated: sent {} delivered {} latest {}",
                msg.send_slot,
                delivery,
                latest
            );
            self.stats.bound_checks += 1;
        }
        self.stats.max_delay = self.stats.max_delay.max(delivery - msg.send_slot);
    }
}
