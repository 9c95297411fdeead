//! Scenario descriptions and their validation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::adversary::{AttackPlan, StrategyConfig, StrategyKind};
use crate::model::{ReplicaId, Slot, TxId};
use crate::net::{Gst, NetworkConfig};
use crate::underlay::{ProtocolKind, ProtocolParams};

pub const SCHEMA_VERSION: u32 = 1;

/// GST as written in a scenario: a slot, `"on_attack_success"` or
/// `"infinite"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GstSetting {
    Fixed(Slot),
    OnAttackSuccess,
    Infinite,
}

impl Serialize for GstSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GstSetting::Fixed(slot) => s.serialize_u64(*slot),
            GstSetting::OnAttackSuccess => s.serialize_str("on_attack_success"),
            GstSetting::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for GstSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = GstSetting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a slot number, \"on_attack_success\" or \"infinite\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<GstSetting, E> {
                Ok(GstSetting::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<GstSetting, E> {
                u64::try_from(v)
                    .map(GstSetting::Fixed)
                    .map_err(|_| E::custom("gst must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<GstSetting, E> {
                match v {
                    "on_attack_success" => Ok(GstSetting::OnAttackSuccess),
                    "infinite" => Ok(GstSetting::Infinite),
                    other => Err(E::unknown_variant(other, &["on_attack_success", "infinite"])),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxInput {
    pub slot: Slot,
    pub tx: TxId,
    pub target: ReplicaId,
}

/// Either an explicit list of inputs or one transaction every `interval`
/// slots before `until`, with targets cycling through every replica in a
/// seeded random order per cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TxSchedule {
    Explicit(Vec<TxInput>),
    Generated { interval: u64, until: Slot },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub n: u32,
    pub f: u32,
    pub delta: u64,
    pub gst: GstSetting,
    pub slots: u64,
    pub protocol: ProtocolKind,
    pub strategy: StrategyConfig,
    pub tx_schedule: TxSchedule,
    pub clients: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            n: 7,
            f: 2,
            delta: 1,
            gst: GstSetting::Fixed(0),
            slots: 400,
            protocol: ProtocolKind::Syncfin,
            strategy: StrategyConfig::new(StrategyKind::Passive),
            tx_schedule: TxSchedule::Generated {
                interval: 1,
                until: 360,
            },
            clients: 2,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(protocol: ProtocolKind, strategy: StrategyKind, gst: GstSetting, seed: u64) -> Self {
        ScenarioConfig {
            protocol,
            strategy: StrategyConfig::new(strategy),
            gst,
            seed,
            ..ScenarioConfig::default()
        }
    }

    pub fn params(&self) -> ProtocolParams {
        ProtocolParams::new(self.protocol, self.n, self.f, self.delta)
    }

    pub fn network(&self) -> NetworkConfig {
        match self.gst {
            GstSetting::Fixed(0) => NetworkConfig::synchrony(self.delta),
            GstSetting::Fixed(g) => NetworkConfig::partial_synchrony(self.delta, Gst::At(g)),
            GstSetting::OnAttackSuccess => NetworkConfig::partial_synchrony(self.delta, Gst::Undeclared),
            GstSetting::Infinite => NetworkConfig::partial_synchrony(self.delta, Gst::Never),
        }
    }

    /// Checks every field and resolves the strategy.
    pub fn validate(&self) -> Result<AttackPlan, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(
                "schema_version",
                alloc::format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.n == 0 {
            return Err(err("n", "n must be positive"));
        }
        if self.protocol == ProtocolKind::Syncfin && self.n != 3 * self.f + 1 {
            return Err(err("n", "n must equal 3f+1"));
        }
        if 3 * self.f >= self.n {
            return Err(err("f", "f must satisfy 3f < n"));
        }
        if self.slots == 0 {
            return Err(err("slots", "slots must be positive"));
        }
        if let GstSetting::Fixed(g) = self.gst {
            if self.slots < g {
                return Err(err("slots", "slots must be at least gst"));
            }
        }
        match &self.tx_schedule {
            TxSchedule::Explicit(inputs) => {
                for (i, input) in inputs.iter().enumerate() {
                    if input.target.0 == 0 || input.target.0 > self.n {
                        return Err(err(
                            &alloc::format!("tx_schedule[{i}].target"),
                            alloc::format!("replica {} does not exist", input.target.0),
                        ));
                    }
                }
            }
            TxSchedule::Generated { interval, .. } => {
                if *interval == 0 {
                    return Err(err("tx_schedule.interval", "interval must be positive"));
                }
            }
        }
        self.strategy.plan(self.n, self.f).map_err(|e| ConfigError {
            field: alloc::format!("strategy.{}", e.field),
            message: e.message,
        })
    }

    /// Transaction inputs sorted by slot; ids in an explicit schedule are
    /// kept as given.
    pub fn tx_inputs(&self) -> Vec<TxInput> {
        let mut inputs = match &self.tx_schedule {
            TxSchedule::Explicit(v) => v.clone(),
            TxSchedule::Generated { interval, until } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut cycle: Vec<ReplicaId> = Vec::new();
                let mut out = Vec::new();
                let mut slot = 0;
                let mut next = 1;
                while slot < *until {
                    if cycle.is_empty() {
                        cycle = (1..=self.n).map(ReplicaId).collect();
                        cycle.shuffle(&mut rng);
                        cycle.reverse();
                    }
                    let target = cycle.pop().expect("refilled above");
                    out.push(TxInput {
                        slot,
                        tx: TxId(next),
                        target,
                    });
                    next += 1;
                    slot += interval;
                }
                out
            }
        };
        inputs.sort_by_key(|i| i.slot);
        inputs
    }
}
