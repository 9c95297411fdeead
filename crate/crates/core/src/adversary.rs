//! Adversary strategies.
//!
//! The adversary owns the signing keys of the corrupted replicas and decides
//! the delay of every network message within the bound the network enforces.
//!
//! * `passive`: corrupted replicas run the honest protocol; every message
//!   takes Δ.
//! * `crash`: corrupted replicas send nothing.
//! * `split_brain`, `liveness_kill`, `forensic_trigger`: the replicas outside
//!   the active set are split into sides A and B (clients go to A when their
//!   index is odd). Until GST every message crossing the sides is held. Each
//!   active replica runs the protocol twice, one instance per side, so each
//!   side sees a full protocol run that the other side does not. The active
//!   instances on one side exchange messages directly. The attack phase ends
//!   once its goal is observed:
//!   - `split_brain`: the two sides' confirmed chains yield conflicting
//!     ledgers.
//!   - `liveness_kill`: the chains conflict and, with the gadget, every
//!     non-active replica signed its own side's block at a common conflicting
//!     height.
//!   - `forensic_trigger`: as `split_brain`, with every replica of each side,
//!     including both instances of every active replica, having signed its
//!     side's chain up to a conflicting height.
//!
//!   After the phase ends the active replicas fall silent; under
//!   `liveness_kill` the idle corrupted replicas also stop signing. If the
//!   goal is not met within `phase_budget` slots the attack fails.
//!
//! With `random_delays`, every message not otherwise held is held until GST
//! with probability 1/8 and otherwise delivered after a uniform delay in
//! `[1, Δ]`.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::KeyRing;
use crate::gadget::GadgetError;
use crate::model::{Block, BlockHash, Ledger, Message, Party, Payload, ReplicaId, Slot};
use crate::replica::{recipients, Replica};
use crate::underlay::{Outgoing, ProtocolParams};

pub const DEFAULT_PHASE_BUDGET: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Passive,
    Crash,
    SplitBrain,
    LivenessKill,
    ForensicTrigger,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Passive,
        StrategyKind::Crash,
        StrategyKind::SplitBrain,
        StrategyKind::LivenessKill,
        StrategyKind::ForensicTrigger,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Passive => "passive",
            StrategyKind::Crash => "crash",
            StrategyKind::SplitBrain => "split_brain",
            StrategyKind::LivenessKill => "liveness_kill",
            StrategyKind::ForensicTrigger => "forensic_trigger",
        }
    }

    pub fn splits(&self) -> bool {
        matches!(
            self,
            StrategyKind::SplitBrain | StrategyKind::LivenessKill | StrategyKind::ForensicTrigger
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub a: BTreeSet<ReplicaId>,
    pub b: BTreeSet<ReplicaId>,
}

fn default_phase_budget() -> u64 {
    DEFAULT_PHASE_BUDGET
}

/// Strategy as written in a scenario file. Omitted sets take the standard
/// values for `(n, f)`; see [`StrategyConfig::plan`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted: Option<BTreeSet<ReplicaId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<BTreeSet<ReplicaId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    #[serde(default = "default_phase_budget")]
    pub phase_budget: u64,
    #[serde(default)]
    pub random_delays: bool,
}

/// A fully resolved strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub kind: StrategyKind,
    pub corrupted: BTreeSet<ReplicaId>,
    pub active: BTreeSet<ReplicaId>,
    pub partition: Option<Partition>,
    pub phase_budget: u64,
    pub random_delays: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("strategy.{field}: {message}")]
pub struct PlanError {
    pub field: &'static str,
    pub message: String,
}

fn plan_error(field: &'static str, message: impl Into<String>) -> PlanError {
    PlanError {
        field,
        message: message.into(),
    }
}

fn ids(range: core::ops::RangeInclusive<u32>) -> BTreeSet<ReplicaId> {
    range.map(ReplicaId).collect()
}

fn halve(rest: &BTreeSet<ReplicaId>) -> Partition {
    let split = rest.len().div_ceil(2);
    Partition {
        a: rest.iter().take(split).copied().collect(),
        b: rest.iter().skip(split).copied().collect(),
    }
}

impl StrategyConfig {
    pub fn new(name: StrategyKind) -> Self {
        StrategyConfig {
            name,
            corrupted: None,
            active: None,
            partition: None,
            phase_budget: DEFAULT_PHASE_BUDGET,
            random_delays: false,
        }
    }

    pub fn with_random_delays(mut self) -> Self {
        self.random_delays = true;
        self
    }

    /// Resolves the strategy for `n` replicas tolerating `f` faults.
    ///
    /// Standard sets: `passive`, `crash`, `split_brain` and `liveness_kill`
    /// corrupt the last `f` replicas; `forensic_trigger` corrupts the last
    /// `f + 1`. The split strategies activate replica `n`
    /// (`forensic_trigger`: every corrupted replica) and halve the rest in
    /// index order, the first half forming side A.
    pub fn plan(&self, n: u32, f: u32) -> Result<AttackPlan, PlanError> {
        let kind = self.name;
        let corrupted = match &self.corrupted {
            Some(c) => c.clone(),
            None if kind == StrategyKind::ForensicTrigger => ids(n.saturating_sub(f).max(1)..=n),
            None => ids(n - f + 1..=n),
        };
        if let Some(r) = corrupted.iter().find(|r| r.0 == 0 || r.0 > n) {
            return Err(plan_error("corrupted", alloc::format!("replica {} does not exist", r.0)));
        }
        if corrupted.len() as u32 >= n {
            return Err(plan_error("corrupted", "at least one replica must stay honest"));
        }
        let active = match (&self.active, kind) {
            (Some(a), _) => a.clone(),
            (None, StrategyKind::ForensicTrigger) => corrupted.clone(),
            (None, k) if k.splits() => corrupted.iter().next_back().copied().into_iter().collect(),
            (None, _) => BTreeSet::new(),
        };
        if !active.is_subset(&corrupted) {
            return Err(plan_error("active", "active replicas must be corrupted"));
        }
        let partition = if kind.splits() {
            if active.is_empty() {
                return Err(plan_error("active", "split strategies need an active corrupted replica"));
            }
            let rest: BTreeSet<ReplicaId> = ids(1..=n).difference(&active).copied().collect();
            let p = self.partition.clone().unwrap_or_else(|| halve(&rest));
            if !p.a.is_disjoint(&p.b) {
                return Err(plan_error("partition", "sides overlap"));
            }
            if p.a.union(&p.b).copied().collect::<BTreeSet<_>>() != rest {
                return Err(plan_error("partition", "sides must cover exactly the non-active replicas"));
            }
            if p.a.is_empty() || p.b.is_empty() {
                return Err(plan_error("partition", "both sides need a replica"));
            }
            Some(p)
        } else {
            if !active.is_empty() || self.partition.is_some() {
                return Err(plan_error("partition", "only split strategies take active sets or partitions"));
            }
            None
        };
        Ok(AttackPlan {
            kind,
            corrupted,
            active,
            partition,
            phase_budget: self.phase_budget,
            random_delays: self.random_delays,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// Delivery decision for one message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delay {
    /// Δ after sending.
    Default,
    At(Slot),
    UntilGst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum AttackStatus {
    NotApplicable,
    InProgress,
    Succeeded { slot: Slot },
    Failed { slot: Slot },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub slot: Slot,
    pub event: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub strategy: StrategyKind,
    pub status: AttackStatus,
    /// Lowest height at which the two sides' confirmed chains differ.
    pub fork_height: Option<u64>,
    pub timeline: Vec<TimelineEvent>,
}

#[derive(Clone, Debug)]
struct Puppet {
    id: ReplicaId,
    side: Option<Side>,
    node: Replica,
    silent: bool,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    plan: AttackPlan,
    params: ProtocolParams,
    clients: u32,
    puppets: Vec<Puppet>,
    rng: ChaCha8Rng,
    status: AttackStatus,
    fork_height: Option<u64>,
    timeline: Vec<TimelineEvent>,
    /// Finality signatures from non-active replicas seen by each side's
    /// instances: side -> signer -> height -> block.
    seen: BTreeMap<Side, BTreeMap<ReplicaId, BTreeMap<u64, BlockHash>>>,
}

impl Adversary {
    pub fn new(plan: AttackPlan, params: ProtocolParams, keys: &KeyRing, clients: u32, seed: u64) -> Self {
        let mut puppets = Vec::new();
        for id in &plan.corrupted {
            let node = || Replica::new(keys.signer(*id), params, keys.clone());
            match plan.kind {
                StrategyKind::Crash => {}
                _ if plan.active.contains(id) => {
                    for side in [Side::A, Side::B] {
                        puppets.push(Puppet {
                            id: *id,
                            side: Some(side),
                            node: node(),
                            silent: false,
                        });
                    }
                }
                _ => puppets.push(Puppet {
                    id: *id,
                    side: None,
                    node: node(),
                    silent: false,
                }),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let status = if plan.kind.splits() {
            AttackStatus::InProgress
        } else {
            AttackStatus::NotApplicable
        };
        let timeline = if plan.kind.splits() {
            alloc::vec![TimelineEvent {
                slot: 0,
                event: "attack_started".into(),
            }]
        } else {
            Vec::new()
        };
        Adversary {
            plan,
            params,
            clients,
            puppets,
            rng,
            status,
            fork_height: None,
            timeline,
            seen: BTreeMap::new(),
        }
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    pub fn corrupted(&self) -> &BTreeSet<ReplicaId> {
        &self.plan.corrupted
    }

    pub fn status(&self) -> AttackStatus {
        self.status
    }

    pub fn note(&mut self, slot: Slot, event: &str) {
        self.timeline.push(TimelineEvent {
            slot,
            event: event.into(),
        });
    }

    pub fn report(&self) -> AttackReport {
        AttackReport {
            strategy: self.plan.kind,
            status: self.status,
            fork_height: self.fork_height,
            timeline: self.timeline.clone(),
        }
    }

    pub fn side_of(&self, party: Party) -> Option<Side> {
        let p = self.plan.partition.as_ref()?;
        match party {
            Party::Replica(r) if p.a.contains(&r) => Some(Side::A),
            Party::Replica(r) if p.b.contains(&r) => Some(Side::B),
            Party::Client(c) if c.0 % 2 == 1 => Some(Side::A),
            Party::Client(_) => Some(Side::B),
            _ => None,
        }
    }

    fn puppet_index(&self, id: ReplicaId, side: Option<Side>) -> Option<usize> {
        self.puppets.iter().position(|p| p.id == id && p.side == side)
    }

    /// Handles a network delivery addressed to a corrupted replica.
    pub fn on_deliver(&mut self, slot: Slot, msg: &Message) -> Result<Vec<Message>, GadgetError> {
        let Some(to) = msg.recipient.replica() else {
            return Ok(Vec::new());
        };
        let side = if self.plan.active.contains(&to) {
            match self.side_of(msg.sender) {
                Some(s) => Some(s),
                None => return Ok(Vec::new()),
            }
        } else {
            None
        };
        if let (Some(s), Payload::FinalitySignature(sig)) = (side, &msg.payload) {
            if msg.sender == Party::Replica(sig.signer) {
                self.seen
                    .entry(s)
                    .or_default()
                    .entry(sig.signer)
                    .or_default()
                    .entry(sig.height)
                    .or_insert(sig.block);
            }
        }
        let Some(idx) = self.puppet_index(to, side) else {
            return Ok(Vec::new());
        };
        let mut internal = VecDeque::new();
        internal.push_back((idx, msg.sender, msg.payload.clone()));
        self.pump(slot, internal, Vec::new())
    }

    /// Environment inputs reach corrupted replicas only under `passive`.
    pub fn on_environment(&mut self, slot: Slot, to: ReplicaId, payload: &Payload) -> Result<Vec<Message>, GadgetError> {
        if self.plan.kind != StrategyKind::Passive {
            return Ok(Vec::new());
        }
        let Some(idx) = self.puppet_index(to, None) else {
            return Ok(Vec::new());
        };
        let mut internal = VecDeque::new();
        internal.push_back((idx, Party::Environment, payload.clone()));
        self.pump(slot, internal, Vec::new())
    }

    pub fn on_slot_begin(&mut self, slot: Slot) -> Result<Vec<Message>, GadgetError> {
        let mut net = Vec::new();
        let mut internal = VecDeque::new();
        for idx in 0..self.puppets.len() {
            if self.puppets[idx].silent {
                continue;
            }
            let outs = self.puppets[idx].node.on_slot_begin(slot)?;
            self.emit(slot, idx, outs, &mut net, &mut internal);
        }
        self.pump(slot, internal, net)
    }

    fn pump(
        &mut self,
        slot: Slot,
        mut internal: VecDeque<(usize, Party, Payload)>,
        mut net: Vec<Message>,
    ) -> Result<Vec<Message>, GadgetError> {
        while let Some((idx, from, payload)) = internal.pop_front() {
            if self.puppets[idx].silent {
                continue;
            }
            let outs = self.puppets[idx].node.on_message(slot, from, &payload)?;
            self.emit(slot, idx, outs, &mut net, &mut internal);
        }
        Ok(net)
    }

    fn emit(
        &self,
        slot: Slot,
        idx: usize,
        outs: Vec<Outgoing>,
        net: &mut Vec<Message>,
        internal: &mut VecDeque<(usize, Party, Payload)>,
    ) {
        let (id, side) = (self.puppets[idx].id, self.puppets[idx].side);
        for o in outs {
            for to in recipients(id, o.audience, self.params.n, self.clients) {
                if let Some(s) = side {
                    if let Party::Replica(r) = to {
                        if self.plan.active.contains(&r) {
                            if let Some(j) = self.puppet_index(r, Some(s)) {
                                internal.push_back((j, Party::Replica(id), o.payload.clone()));
                            }
                            continue;
                        }
                    }
                    if self.side_of(to) != Some(s) {
                        continue;
                    }
                }
                net.push(Message {
                    sender: Party::Replica(id),
                    recipient: to,
                    payload: o.payload.clone(),
                    send_slot: slot,
                });
            }
        }
    }

    /// Chooses the delivery of a submitted message. `stable` is true once
    /// GST has passed.
    pub fn schedule(&mut self, msg: &Message, stable: bool) -> Delay {
        if msg.sender == Party::Environment {
            return Delay::Default;
        }
        if !stable {
            if let (Some(a), Some(b)) = (self.side_of(msg.sender), self.side_of(msg.recipient)) {
                if a != b {
                    return Delay::UntilGst;
                }
            }
        }
        if !self.plan.random_delays {
            return Delay::Default;
        }
        // draw both values so the stream does not depend on `stable`
        let hold = self.rng.random_ratio(1, 8);
        // epoch_len = max(2Δ, 1)
        let delta = self.params.epoch_len / 2;
        let extra = if delta == 0 { 0 } else { self.rng.random_range(1..=delta) };
        if hold && !stable {
            Delay::UntilGst
        } else if delta == 0 {
            Delay::Default
        } else {
            Delay::At(msg.send_slot + extra)
        }
    }

    /// Evaluates the phase-end condition after `slot`. Returns the new status
    /// when the attack phase just ended.
    pub fn end_of_slot(&mut self, slot: Slot) -> Option<AttackStatus> {
        if self.status != AttackStatus::InProgress {
            return None;
        }
        if self.goal_reached() {
            self.status = AttackStatus::Succeeded { slot };
            self.note(slot, "phase_end");
        } else if slot + 1 >= self.plan.phase_budget {
            self.status = AttackStatus::Failed { slot };
            self.note(slot, "attack_failed");
        } else {
            return None;
        }
        for p in self.puppets.iter_mut() {
            if self.plan.active.contains(&p.id) {
                p.silent = true;
            } else if self.plan.kind == StrategyKind::LivenessKill {
                p.node.mute_gadget();
            }
        }
        Some(self.status)
    }

    fn side_chain(&self, side: Side) -> Vec<Block> {
        let first = *self.plan.active.iter().next().expect("split strategies have an active replica");
        let idx = self.puppet_index(first, Some(side)).expect("active replicas have two instances");
        self.puppets[idx].node.underlay().confirmed_chain()
    }

    fn members(&self, side: Side) -> &BTreeSet<ReplicaId> {
        let p = self.plan.partition.as_ref().expect("split strategies have a partition");
        match side {
            Side::A => &p.a,
            Side::B => &p.b,
        }
    }

    /// Every replica on `side`, including the active instances, signed
    /// `block` at its height.
    fn side_signed(&self, side: Side, block: &Block, with_active: bool) -> bool {
        let hash = block.hash();
        let seen = self.seen.get(&side);
        let members_ok = self.members(side).iter().all(|m| {
            seen.and_then(|s| s.get(m))
                .and_then(|h| h.get(&block.height))
                == Some(&hash)
        });
        let active_ok = !with_active
            || self.puppets.iter().filter(|p| p.side == Some(side)).all(|p| {
                p.node
                    .gadget()
                    .is_some_and(|g| g.signed_view().get(&block.height) == Some(&hash))
            });
        members_ok && active_ok
    }

    fn goal_reached(&mut self) -> bool {
        let a = self.side_chain(Side::A);
        let b = self.side_chain(Side::B);
        let common = a.len().min(b.len()) - 1;
        let Some(fork) = (1..=common).find(|h| a[*h].hash() != b[*h].hash()) else {
            return false;
        };
        self.fork_height = Some(fork as u64);
        let gadget = self.params.protocol.has_gadget();
        let ledgers_conflict = |h: usize| Ledger::from_chain(&a[..=h]).conflicts_with(&Ledger::from_chain(&b[..=h]));
        match self.plan.kind {
            StrategyKind::SplitBrain => ledgers_conflict(common),
            StrategyKind::LivenessKill => {
                !gadget
                    || (fork..=common).any(|h| self.side_signed(Side::A, &a[h], false) && self.side_signed(Side::B, &b[h], false))
            }
            StrategyKind::ForensicTrigger if !gadget => ledgers_conflict(common),
            StrategyKind::ForensicTrigger => (fork..=common).any(|h| {
                ledgers_conflict(h)
                    && (1..=h).all(|k| self.side_signed(Side::A, &a[k], true) && self.side_signed(Side::B, &b[k], true))
            }),
            _ => false,
        }
    }
}
