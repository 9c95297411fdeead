//! Record-and-replay construction showing that client observations cannot
//! identify corrupted replicas when the network model is not known.
//!
//! World 0 is a partially synchronous run with `f` corrupted replicas in
//! which two clients end up with conflicting ledgers. World `i`, for every
//! replica `i` that was honest in world 0 and is among the first `n - f`, is a
//! delay-free run where only replica `i` is honest. The other replicas, now
//! all corrupted, replay world 0: they hand `i` exactly the messages it
//! received in world 0 at the slots it received them, and they hand every
//! client its world-0 message log. Replica `i` runs the real protocol code
//! and must emit exactly what it emitted in world 0.
//!
//! The replaying replicas may only forward an object signed by `i` after `i`
//! produced it in the current world, and a client message attributed to `i`
//! must have been sent by `i` no later than its delivery slot. The client
//! channel is scheduled by the adversary, so these messages keep their
//! world-0 delivery slots.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{StrategyConfig, StrategyKind};
use crate::auth::KeyRing;
use crate::client::{safety_check, ClientView, ConfirmRule, SafetyViolation};
use crate::gadget::GadgetError;
use crate::model::{ClientId, Message, Party, Payload, ReplicaId, Slot, TxInputMsg};
use crate::net::{Authority, EventQueue, NetError, NetworkConfig};
use crate::replica::{recipients, Replica};
use crate::scenario::{GstSetting, ScenarioConfig, TxInput, TxSchedule};
use crate::sim::{same_slot_cap, SimError, Simulation};
use crate::transcript::{LogEntry, Transcript};
use crate::underlay::ProtocolKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("world 0 precondition unmet: {0}")]
    Precondition(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("world {world}: replica diverged in slot {slot}: {detail}")]
    Divergence { world: u32, slot: Slot, detail: String },
    #[error("world {world}: slot {slot}: {detail}")]
    Causality { world: u32, slot: Slot, detail: String },
    #[error("world {world}: network: {source}")]
    Net { world: u32, source: NetError },
    #[error("world {world}: gadget: {source}")]
    Gadget { world: u32, source: GadgetError },
}

/// The reference world-0 scenario: the bare majority underlay under the
/// split-brain strategy, GST at slot 60.
pub fn reference_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        protocol: ProtocolKind::MajoritySync,
        strategy: StrategyConfig {
            phase_budget: 60,
            ..StrategyConfig::new(StrategyKind::SplitBrain)
        },
        gst: GstSetting::Fixed(60),
        slots: 80,
        tx_schedule: TxSchedule::Generated { interval: 1, until: 60 },
        seed,
        ..ScenarioConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct World0 {
    pub config: ScenarioConfig,
    pub transcript: Transcript,
    pub violation: SafetyViolation,
}

pub fn record_world0(cfg: &ScenarioConfig) -> Result<World0, WorldError> {
    if cfg.f == 0 {
        return Err(WorldError::Precondition("f = 0 leaves no adversary to emulate".into()));
    }
    let outcome = Simulation::new(cfg)?.run()?;
    let violation = outcome
        .safety_violation()
        .ok_or_else(|| WorldError::Precondition("no client safety violation in world 0".into()))?;
    Ok(World0 {
        config: cfg.clone(),
        transcript: outcome.transcript,
        violation,
    })
}

/// Replica `honest` kept honest in a delay-free replay of `base`. The
/// environment's inputs are regenerated from `inputs`.
#[derive(Clone, Debug)]
pub struct WorldSpec<'a> {
    pub base: &'a Transcript,
    pub honest: ReplicaId,
    pub inputs: Vec<TxInput>,
}

/// Objects inside `payload` that carry `signer`'s signature.
fn signed_by(payload: &Payload, signer: ReplicaId) -> Vec<Payload> {
    match payload {
        Payload::Proposal(p) if p.block.proposer == signer => alloc::vec![payload.clone()],
        Payload::Vote(v) if v.voter == signer => alloc::vec![payload.clone()],
        Payload::FinalitySignature(s) if s.signer == signer => alloc::vec![payload.clone()],
        Payload::Sync(f) => f
            .votes
            .iter()
            .filter(|v| v.voter == signer)
            .map(|v| Payload::Vote(v.clone()))
            .collect(),
        _ => Vec::new(),
    }
}

pub fn replay_world(spec: &WorldSpec<'_>) -> Result<Transcript, WorldError> {
    let base = spec.base;
    let i = spec.honest;
    let world = i.0;
    let params = base
        .params
        .ok_or_else(|| WorldError::Precondition("transcript carries no protocol parameters".into()))?;
    if base.corrupted.contains(&i) || i.0 == 0 || i.0 > params.n - params.f {
        return Err(WorldError::Precondition(alloc::format!(
            "replica {i} must be honest in world 0 and among the first n - f"
        )));
    }
    let net = |source| WorldError::Net { world, source };
    let gadget = |source| WorldError::Gadget { world, source };
    let keys = KeyRing::default();
    let mut queue = EventQueue::new(NetworkConfig::delay_free(), same_slot_cap(params.n)).map_err(net)?;
    let corrupted: BTreeSet<ReplicaId> = params.replicas().filter(|r| *r != i).collect();
    let mut node = Replica::new(keys.signer(i), params, keys.clone());
    let rule = ConfirmRule::for_params(&params);
    let mut clients: BTreeMap<ClientId, ClientView> = (1..=base.clients)
        .map(|c| (ClientId(c), ClientView::new(ClientId(c), rule, params, keys.clone())))
        .collect();

    let mut out = Transcript {
        params: Some(params),
        slots: base.slots,
        clients: base.clients,
        corrupted: corrupted.clone(),
        ..Transcript::default()
    };
    let mut received: BTreeMap<(Slot, u32), Vec<&LogEntry>> = BTreeMap::new();
    for e in base.received.get(&i).into_iter().flatten() {
        if e.peer != Party::Environment {
            received.entry((e.slot, e.wave)).or_default().push(e);
        }
    }
    let mut client_entries: BTreeMap<Slot, Vec<(ClientId, &LogEntry)>> = BTreeMap::new();
    for (c, log) in &base.client_logs {
        for e in log {
            client_entries.entry(e.slot).or_default().push((*c, e));
        }
    }
    let mut inputs: BTreeMap<Slot, Vec<&TxInput>> = BTreeMap::new();
    for input in spec.inputs.iter().filter(|x| x.target == i) {
        inputs.entry(input.slot).or_default().push(input);
    }
    let expected = base.sent.get(&i).map(Vec::as_slice).unwrap_or(&[]);
    let mut cursor = 0usize;
    let mut emitted: BTreeSet<Payload> = BTreeSet::new();
    let mut to_clients: BTreeMap<(ClientId, Payload), Slot> = BTreeMap::new();

    for slot in 0..base.slots {
        if slot > 0 {
            queue.advance();
        }
        let mut waves: BTreeSet<u32> = received.range((slot, 0)..=(slot, u32::MAX)).map(|((_, w), _)| *w).collect();
        waves.insert(0);
        for wave in waves {
            for e in received.get(&(slot, wave)).into_iter().flatten() {
                for obj in signed_by(&e.payload, i) {
                    if !emitted.contains(&obj) {
                        return Err(WorldError::Causality {
                            world,
                            slot,
                            detail: alloc::format!("{} forwards an object replica {i} has not produced", party_name(e.peer)),
                        });
                    }
                }
                let msg = Message {
                    sender: e.peer,
                    recipient: Party::Replica(i),
                    payload: e.payload.clone(),
                    send_slot: slot,
                };
                queue.submit(msg, Authority::Adversary(&corrupted)).map_err(net)?;
            }
            let mut outs = Vec::new();
            for m in queue.take_due().map_err(net)? {
                if m.recipient != Party::Replica(i) {
                    continue;
                }
                out.received.entry(i).or_default().push(LogEntry {
                    slot,
                    wave,
                    peer: m.sender,
                    payload: m.payload.clone(),
                });
                outs.extend(node.on_message(slot, m.sender, &m.payload).map_err(gadget)?);
            }
            if wave == 0 {
                for input in inputs.remove(&slot).unwrap_or_default() {
                    let payload = Payload::TransactionInput(TxInputMsg {
                        tx: input.tx,
                        input_slot: slot,
                    });
                    out.received.entry(i).or_default().push(LogEntry {
                        slot,
                        wave,
                        peer: Party::Environment,
                        payload: payload.clone(),
                    });
                    outs.extend(node.on_message(slot, Party::Environment, &payload).map_err(gadget)?);
                }
                outs.extend(node.on_slot_begin(slot).map_err(gadget)?);
            }
            for o in outs {
                emitted.extend(signed_by(&o.payload, i));
                for to in recipients(i, o.audience, params.n, base.clients) {
                    let entry = LogEntry {
                        slot,
                        wave,
                        peer: to,
                        payload: o.payload.clone(),
                    };
                    if expected.get(cursor) != Some(&entry) {
                        return Err(WorldError::Divergence {
                            world,
                            slot,
                            detail: alloc::format!("sent entry {cursor} differs from world 0"),
                        });
                    }
                    cursor += 1;
                    out.sent.entry(i).or_default().push(entry);
                    match to {
                        Party::Client(c) => {
                            to_clients.entry((c, o.payload.clone())).or_insert(slot);
                        }
                        _ => {
                            let msg = Message {
                                sender: Party::Replica(i),
                                recipient: to,
                                payload: o.payload.clone(),
                                send_slot: slot,
                            };
                            queue.submit(msg, Authority::Replica(i)).map_err(net)?;
                        }
                    }
                }
            }
            // the replaying replicas absorb i's messages without reacting
            queue.take_due().map_err(net)?;
        }

        for (c, e) in client_entries.remove(&slot).unwrap_or_default() {
            if e.peer == Party::Replica(i) {
                let sent_at = to_clients.get(&(c, e.payload.clone()));
                if !sent_at.is_some_and(|s| *s <= slot) {
                    return Err(WorldError::Causality {
                        world,
                        slot,
                        detail: alloc::format!("client {c} expects a message replica {i} has not sent"),
                    });
                }
            } else if signed_by(&e.payload, i).iter().any(|o| !emitted.contains(o)) {
                return Err(WorldError::Causality {
                    world,
                    slot,
                    detail: alloc::format!("client {c} expects an object replica {i} has not produced"),
                });
            }
            out.client_logs.entry(c).or_default().push(e.clone());
            if let Some(view) = clients.get_mut(&c) {
                view.observe(e.clone());
            }
        }
        for view in clients.values_mut() {
            if view.confirm() {
                out.snapshots.push(view.snapshot(slot));
            }
        }
    }
    if cursor != expected.len() {
        return Err(WorldError::Divergence {
            world,
            slot: base.slots,
            detail: alloc::format!("{} world-0 sends never happened", expected.len() - cursor),
        });
    }
    out.snapshots.sort();
    Ok(out)
}

fn party_name(p: Party) -> String {
    match p {
        Party::Replica(r) => alloc::format!("replica {r}"),
        Party::Client(c) => alloc::format!("client {c}"),
        Party::Environment => "environment".into(),
    }
}

/// Replica `i`'s logs and every client log agree between the two worlds.
pub fn check_indistinguishable(t0: &Transcript, ti: &Transcript, i: ReplicaId) -> bool {
    t0.received.get(&i) == ti.received.get(&i)
        && t0.sent.get(&i) == ti.sent.get(&i)
        && t0.client_logs == ti.client_logs
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldRow {
    pub world: u32,
    pub honest: ReplicaId,
    pub corrupted: BTreeSet<ReplicaId>,
    pub indistinguishable: bool,
    pub violation: bool,
}

/// For an accused set of `f + 1` replicas, the first world in which it
/// names that world's only honest replica.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccusationRow {
    pub accused: BTreeSet<ReplicaId>,
    pub wrongs_world: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldsTable {
    pub n: u32,
    pub f: u32,
    pub world0_corrupted: BTreeSet<ReplicaId>,
    pub world0_violation: bool,
    pub rows: Vec<WorldRow>,
    pub accusations: Vec<AccusationRow>,
}

impl WorldsTable {
    pub fn all_indistinguishable(&self) -> bool {
        self.rows.iter().all(|r| r.indistinguishable && r.violation)
    }

    pub fn every_accusation_wrongs_someone(&self) -> bool {
        self.accusations.iter().all(|a| a.wrongs_world.is_some())
    }
}

/// Size-`k` subsets of `1..=n`, in lexicographic order.
pub fn subsets(n: u32, k: u32) -> Vec<BTreeSet<ReplicaId>> {
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() == k {
            out.push((0..n).filter(|b| mask >> b & 1 == 1).map(|b| ReplicaId(b + 1)).collect());
        }
    }
    out.sort();
    out
}

/// Records world 0 for `cfg`, replays every world and builds the table.
pub fn run_worlds(cfg: &ScenarioConfig) -> Result<WorldsTable, WorldError> {
    let w0 = record_world0(cfg)?;
    let inputs = cfg.tx_inputs();
    let params = cfg.params();
    let mut worlds = Vec::new();
    for i in 1..=params.n - params.f {
        let spec = WorldSpec {
            base: &w0.transcript,
            honest: ReplicaId(i),
            inputs: inputs.clone(),
        };
        worlds.push((ReplicaId(i), replay_world(&spec)?));
    }
    Ok(build_table(&w0, &worlds))
}

/// Compares each replayed world against world 0 and lists, for every
/// accused set of size `f + 1`, a world in which it names an honest replica.
pub fn build_table(w0: &World0, worlds: &[(ReplicaId, Transcript)]) -> WorldsTable {
    let params = w0.config.params();
    let rows: Vec<WorldRow> = worlds
        .iter()
        .map(|(honest, ti)| WorldRow {
            world: honest.0,
            honest: *honest,
            corrupted: ti.corrupted.clone(),
            indistinguishable: check_indistinguishable(&w0.transcript, ti, *honest),
            violation: safety_check(&ti.snapshots).is_some(),
        })
        .collect();
    let accusations = subsets(params.n, params.f + 1)
        .into_iter()
        .map(|accused| AccusationRow {
            wrongs_world: rows.iter().find(|r| accused.contains(&r.honest)).map(|r| r.world),
            accused,
        })
        .collect();
    WorldsTable {
        n: params.n,
        f: params.f,
        world0_corrupted: w0.transcript.corrupted.clone(),
        world0_violation: true,
        rows,
        accusations,
    }
}
