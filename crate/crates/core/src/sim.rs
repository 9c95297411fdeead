//! Scenario driver.
//!
//! Every slot runs in waves. Wave 0 delivers the messages scheduled for the
//! slot, then the environment's transaction inputs, then the slot-begin
//! handlers. Each later wave delivers the messages sent for delivery within
//! the same slot, until none are left. At the end of the slot the adversary
//! checks its phase condition and every client re-evaluates its ledger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::adversary::{Adversary, AttackPlan, AttackReport, AttackStatus, Delay};
use crate::auth::KeyRing;
use crate::client::{liveness_report, safety_check, ClientView, ConfirmRule, LivenessReport, SafetyViolation, Snapshot};
use crate::forensics::{extract_evidence, Evidence, ForensicError};
use crate::gadget::GadgetError;
use crate::model::{
    chain_of, BlockHash, BlockStore, ClientId, Message, Party, Payload, ReplicaId, Slot, TxId, TxInputMsg,
};
use crate::net::{Authority, EventQueue, Gst, NetError, NetStats};
use crate::replica::{recipients, Replica};
use crate::scenario::{ConfigError, GstSetting, ScenarioConfig, TxInput};
use crate::transcript::{LogEntry, Transcript};
use crate::underlay::{Outgoing, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("gadget: {0}")]
    Gadget(#[from] GadgetError),
}

/// Same-slot delivery cap per slot: `10 n²`.
pub fn same_slot_cap(n: u32) -> usize {
    10 * (n as usize) * (n as usize)
}

pub struct Simulation {
    cfg: ScenarioConfig,
    params: ProtocolParams,
    queue: EventQueue,
    replicas: BTreeMap<ReplicaId, Replica>,
    adversary: Adversary,
    corrupted: BTreeSet<ReplicaId>,
    clients: BTreeMap<ClientId, ClientView>,
    inputs: BTreeMap<Slot, Vec<TxInput>>,
    transcript: Transcript,
    blocks: BlockStore,
    underlay_history: BTreeMap<ReplicaId, Vec<(Slot, BlockHash)>>,
    gst_declared: Option<Slot>,
    slot: Slot,
    wave: u32,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub config: ScenarioConfig,
    pub plan: AttackPlan,
    pub params: ProtocolParams,
    pub transcript: Transcript,
    pub clients: Vec<ClientView>,
    /// Every block any party sent.
    pub blocks: BlockStore,
    /// Underlay-confirmed tip changes of every honest replica.
    pub underlay_history: BTreeMap<ReplicaId, Vec<(Slot, BlockHash)>>,
    pub attack: AttackReport,
    /// `None` when the network never stabilized.
    pub gst: Option<Slot>,
    pub net: NetStats,
    pub tx_inputs: Vec<TxInput>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let plan = cfg.validate()?;
        let params = cfg.params();
        let keys = KeyRing::default();
        let queue = EventQueue::new(cfg.network(), same_slot_cap(cfg.n))?;
        let corrupted = plan.corrupted.clone();
        let replicas = params
            .replicas()
            .filter(|r| !corrupted.contains(r))
            .map(|r| (r, Replica::new(keys.signer(r), params, keys.clone())))
            .collect();
        let rule = ConfirmRule::for_params(&params);
        let clients = (1..=cfg.clients)
            .map(|c| (ClientId(c), ClientView::new(ClientId(c), rule, params, keys.clone())))
            .collect();
        let mut inputs: BTreeMap<Slot, Vec<TxInput>> = BTreeMap::new();
        for i in cfg.tx_inputs() {
            inputs.entry(i.slot).or_default().push(i);
        }
        let transcript = Transcript {
            params: Some(params),
            slots: cfg.slots,
            clients: cfg.clients,
            corrupted: corrupted.clone(),
            ..Transcript::default()
        };
        let adversary = Adversary::new(plan, params, &keys, cfg.clients, cfg.seed);
        let gst_declared = match cfg.gst {
            GstSetting::Fixed(g) => Some(g),
            _ => None,
        };
        Ok(Simulation {
            cfg: cfg.clone(),
            params,
            queue,
            replicas,
            adversary,
            corrupted,
            clients,
            inputs,
            transcript,
            blocks: BlockStore::new(),
            underlay_history: BTreeMap::new(),
            gst_declared,
            slot: 0,
            wave: 0,
        })
    }

    pub fn run(mut self) -> Result<Outcome, SimError> {
        if self.cfg.gst == GstSetting::OnAttackSuccess && !self.adversary.plan().kind.splits() {
            self.declare_gst(0)?;
        }
        for slot in 0..self.cfg.slots {
            self.step(slot)?;
        }
        let honest_inputs = self
            .cfg
            .tx_inputs()
            .into_iter()
            .filter(|i| !self.corrupted.contains(&i.target))
            .collect();
        self.transcript.snapshots.sort();
        Ok(Outcome {
            plan: self.adversary.plan().clone(),
            config: self.cfg,
            params: self.params,
            transcript: self.transcript,
            clients: self.clients.into_values().collect(),
            blocks: self.blocks,
            underlay_history: self.underlay_history,
            attack: self.adversary.report(),
            gst: self.gst_declared,
            net: self.queue.stats().clone(),
            tx_inputs: honest_inputs,
        })
    }

    fn declare_gst(&mut self, slot: Slot) -> Result<(), SimError> {
        self.queue.declare_gst(slot)?;
        self.gst_declared = Some(slot);
        self.adversary.note(self.slot, "gst_declared");
        Ok(())
    }

    fn step(&mut self, slot: Slot) -> Result<(), SimError> {
        self.slot = slot;
        self.wave = 0;
        let due = if slot == 0 { Vec::new() } else { self.queue.advance() };
        let mut outgoing = self.deliver(due)?;
        for input in self.inputs.remove(&slot).unwrap_or_default() {
            let payload = Payload::TransactionInput(TxInputMsg {
                tx: input.tx,
                input_slot: slot,
            });
            self.log_received(input.target, Party::Environment, &payload);
            if let Some(node) = self.replicas.get_mut(&input.target) {
                let outs = node.on_message(slot, Party::Environment, &payload)?;
                outgoing.extend(expand(input.target, outs, slot, &self.cfg));
            } else {
                outgoing.extend(self.adversary.on_environment(slot, input.target, &payload)?);
            }
        }
        for (id, node) in self.replicas.iter_mut() {
            let outs = node.on_slot_begin(slot)?;
            outgoing.extend(expand(*id, outs, slot, &self.cfg));
        }
        outgoing.extend(self.adversary.on_slot_begin(slot)?);
        self.submit(outgoing)?;
        loop {
            let due = self.queue.take_due()?;
            if due.is_empty() {
                break;
            }
            self.wave += 1;
            let outgoing = self.deliver(due)?;
            self.submit(outgoing)?;
        }

        if let Some(status) = self.adversary.end_of_slot(slot) {
            if matches!(status, AttackStatus::Succeeded { .. } | AttackStatus::Failed { .. })
                && self.cfg.gst == GstSetting::OnAttackSuccess
            {
                self.declare_gst(slot + self.cfg.delta)?;
            }
        }
        for view in self.clients.values_mut() {
            if view.confirm() {
                self.transcript.snapshots.push(view.snapshot(slot));
            }
        }
        for (id, node) in &self.replicas {
            let tip = node.underlay().confirmed_tip();
            let history = self.underlay_history.entry(*id).or_default();
            if history.last().map(|(_, t)| *t) != Some(tip) {
                history.push((slot, tip));
            }
        }
        Ok(())
    }

    fn log_received(&mut self, to: ReplicaId, from: Party, payload: &Payload) {
        self.transcript.received.entry(to).or_default().push(LogEntry {
            slot: self.slot,
            wave: self.wave,
            peer: from,
            payload: payload.clone(),
        });
    }

    fn deliver(&mut self, messages: Vec<Message>) -> Result<Vec<Message>, SimError> {
        let mut out = Vec::new();
        for msg in messages {
            match msg.recipient {
                Party::Replica(r) => {
                    self.log_received(r, msg.sender, &msg.payload);
                    if let Some(node) = self.replicas.get_mut(&r) {
                        let outs = node.on_message(self.slot, msg.sender, &msg.payload)?;
                        out.extend(expand(r, outs, self.slot, &self.cfg));
                    } else {
                        out.extend(self.adversary.on_deliver(self.slot, &msg)?);
                    }
                }
                Party::Client(c) => {
                    let entry = LogEntry {
                        slot: self.slot,
                        wave: self.wave,
                        peer: msg.sender,
                        payload: msg.payload,
                    };
                    self.transcript.client_logs.entry(c).or_default().push(entry.clone());
                    if let Some(view) = self.clients.get_mut(&c) {
                        view.observe(entry);
                    }
                }
                Party::Environment => {}
            }
        }
        Ok(out)
    }

    fn submit(&mut self, messages: Vec<Message>) -> Result<(), SimError> {
        let stable = matches!(self.queue.gst(), Gst::At(g) if self.slot >= g);
        for msg in messages {
            let Party::Replica(from) = msg.sender else { continue };
            self.transcript.sent.entry(from).or_default().push(LogEntry {
                slot: self.slot,
                wave: self.wave,
                peer: msg.recipient,
                payload: msg.payload.clone(),
            });
            match &msg.payload {
                Payload::Proposal(p) => {
                    let _ = self.blocks.accept(p.block.clone());
                }
                Payload::Sync(s) => {
                    for b in &s.blocks {
                        let _ = self.blocks.accept(b.clone());
                    }
                }
                _ => {}
            }
            let delay = self.adversary.schedule(&msg, stable);
            let authority = if self.corrupted.contains(&from) {
                Authority::Adversary(&self.corrupted)
            } else {
                Authority::Replica(from)
            };
            let send = msg.send_slot;
            let id = self.queue.submit(msg, authority)?;
            match delay {
                Delay::Default => {}
                Delay::At(slot) => {
                    // clamp into the window; the network re-checks the bound
                    let slot = self.queue.latest_delivery(send).map_or(slot, |l| slot.min(l));
                    self.queue.adversary_delay(id, slot)?;
                }
                Delay::UntilGst => self.queue.hold_until_gst(id)?,
            }
        }
        Ok(())
    }
}

fn expand(from: ReplicaId, outs: Vec<Outgoing>, slot: Slot, cfg: &ScenarioConfig) -> Vec<Message> {
    let mut msgs = Vec::new();
    for o in outs {
        for to in recipients(from, o.audience, cfg.n, cfg.clients) {
            msgs.push(Message {
                sender: Party::Replica(from),
                recipient: to,
                payload: o.payload.clone(),
                send_slot: slot,
            });
        }
    }
    msgs
}

impl Outcome {
    pub fn honest(&self) -> Vec<ReplicaId> {
        self.params
            .replicas()
            .filter(|r| !self.plan.corrupted.contains(r))
            .collect()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.transcript.snapshots
    }

    pub fn safety_violation(&self) -> Option<SafetyViolation> {
        safety_check(&self.transcript.snapshots)
    }

    pub fn liveness(&self, t_confirm: u64) -> LivenessReport {
        let inputs: Vec<(TxId, Slot)> = self.tx_inputs.iter().map(|i| (i.tx, i.slot)).collect();
        let clients: Vec<ClientId> = self.clients.iter().map(|c| c.id()).collect();
        liveness_report(
            &inputs,
            &self.transcript.snapshots,
            &clients,
            self.gst,
            t_confirm,
            self.config.slots,
        )
    }

    /// Two honest replicas' underlay-confirmed tips, both reached before
    /// `before`, that differ at a common height.
    pub fn underlay_conflict(&self, before: Slot) -> Option<(ReplicaId, BlockHash, ReplicaId, BlockHash)> {
        let mut tips: BTreeMap<BlockHash, BTreeSet<ReplicaId>> = BTreeMap::new();
        for (r, h) in &self.underlay_history {
            for (_, t) in h.iter().filter(|(s, _)| *s < before) {
                tips.entry(*t).or_default().insert(*r);
            }
        }
        // height -> block -> a (replica, tip) whose chain contains the block
        let mut at_height: BTreeMap<u64, BTreeMap<BlockHash, Vec<(ReplicaId, BlockHash)>>> = BTreeMap::new();
        for (tip, replicas) in &tips {
            let Ok(chain) = chain_of(tip, &self.blocks) else {
                continue;
            };
            for b in chain.iter().skip(1) {
                let holders = at_height.entry(b.height).or_default().entry(b.hash()).or_default();
                for r in replicas {
                    if !holders.iter().any(|(x, _)| x == r) {
                        holders.push((*r, *tip));
                    }
                }
            }
        }
        for blocks in at_height.values() {
            let holders: Vec<&Vec<(ReplicaId, BlockHash)>> = blocks.values().collect();
            for (i, xs) in holders.iter().enumerate() {
                for ys in &holders[i + 1..] {
                    for (ra, a) in xs.iter() {
                        if let Some((rb, b)) = ys.iter().find(|(rb, _)| rb != ra) {
                            return Some((*ra, *a, *rb, *b));
                        }
                    }
                }
            }
        }
        None
    }

    /// Evidence from the first pair of clients whose final ledgers conflict.
    pub fn evidence(&self) -> Result<Option<Evidence>, ForensicError> {
        for (i, a) in self.clients.iter().enumerate() {
            for b in &self.clients[i + 1..] {
                if let Some(ev) = extract_evidence(a, b)? {
                    return Ok(Some(ev));
                }
            }
        }
        Ok(None)
    }

    /// Every finality signature honest replicas sent.
    pub fn honest_signatures(&self) -> Vec<crate::model::FinalitySignature> {
        self.honest()
            .into_iter()
            .flat_map(|r| self.transcript.finality_signatures(r))
            .collect()
    }
}
