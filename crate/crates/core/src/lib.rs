//! Deterministic discrete-event simulation of a synchronous underlay
//! consensus protocol composed with a finality-signature gadget.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation: the block/ledger model, the slot-driven network with an
//! adversarial scheduler, the underlay protocols, the gadget, client
//! confirmation, forensics, adversary strategies, the scenario driver and the
//! world-replay harness. File formats, report emission and the command-line
//! front-end live in the `syncfin` crate.
//!
//! Cryptography is simulated. Replicas authenticate their votes, proposals
//! and finality signatures with keyed tags ([`auth`]); only the simulator
//! hands out signing capabilities, so an adversary can only sign for the
//! replicas it corrupted. There is no security parameter: every property is
//! checked exactly on deterministic runs.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adversary;
pub mod auth;
pub mod client;
pub mod forensics;
pub mod gadget;
pub mod model;
pub mod net;
pub mod replica;
pub mod scenario;
pub mod sim;
pub mod transcript;
pub mod underlay;
pub mod worlds;

pub use adversary::{StrategyConfig, StrategyKind};
pub use auth::{KeyRing, Signer, Tag};
pub use client::{ClientView, LivenessReport, SafetyViolation, Snapshot};
pub use forensics::{Evidence, Verdict};
pub use model::{
    Block, BlockHash, BlockStore, ClientId, FinalitySignature, Ledger, Message, Party, Payload,
    Proposal, ReplicaId, Slot, TxId, Vote,
};
pub use net::{EventQueue, Gst, NetworkConfig, NetworkMode};
pub use scenario::{GstSetting, ScenarioConfig, TxInput, TxSchedule};
pub use sim::{Outcome, Simulation};
pub use transcript::Transcript;
pub use underlay::{ProtocolKind, ProtocolParams};
