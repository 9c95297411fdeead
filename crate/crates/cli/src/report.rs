//! Run reports.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use syncfin_core::adversary::{AttackReport, AttackStatus};
use syncfin_core::forensics::{forensic, Evidence};
use syncfin_core::model::{BlockHash, ClientId, ReplicaId, Slot};
use syncfin_core::net::NetStats;
use syncfin_core::underlay::ProtocolParams;
use syncfin_core::{LivenessReport, Outcome, SafetyViolation, ScenarioConfig, Snapshot, Verdict};

use crate::io::digest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Confirmation deadline used in reports: ten epochs.
pub fn t_confirm(params: &ProtocolParams) -> u64 {
    10 * params.epoch_len
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLedger {
    pub client: ClientId,
    pub length: usize,
    pub tip: BlockHash,
    pub inconsistent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnderlayConflict {
    pub first: (ReplicaId, BlockHash),
    pub second: (ReplicaId, BlockHash),
}

/// Forensic result for the first conflicting client pair. Exactly one of
/// `verdict` and `error` is set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForensicResult {
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ScenarioConfig,
    pub corrupted: BTreeSet<ReplicaId>,
    pub gst: Option<Slot>,
    pub final_ledgers: Vec<FinalLedger>,
    pub snapshots: Vec<Snapshot>,
    pub safety_violation: Option<SafetyViolation>,
    /// Honest replicas whose underlay-confirmed chains disagreed at a common
    /// height before GST.
    pub underlay_conflict: Option<UnderlayConflict>,
    pub liveness: LivenessReport,
    pub forensic: Option<ForensicResult>,
    pub attack: AttackReport,
    pub net: NetStats,
    pub transcript_digest: String,
}

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_ATTACK_FAILED: i32 = 4;

impl RunReport {
    pub fn build(outcome: &Outcome) -> (RunReport, Option<Evidence>) {
        let evidence = outcome.evidence();
        let forensic_result = match &evidence {
            Ok(None) => None,
            Ok(Some(ev)) => Some(match forensic(ev, &outcome.params) {
                Ok(v) => ForensicResult {
                    verdict: Some(v),
                    error: None,
                },
                Err(e) => ForensicResult {
                    verdict: None,
                    error: Some(e.to_string()),
                },
            }),
            Err(e) => Some(ForensicResult {
                verdict: None,
                error: Some(e.to_string()),
            }),
        };
        let before = outcome.gst.unwrap_or(outcome.config.slots);
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: outcome.config.clone(),
            corrupted: outcome.plan.corrupted.clone(),
            gst: outcome.gst,
            final_ledgers: outcome
                .clients
                .iter()
                .map(|c| FinalLedger {
                    client: c.id(),
                    length: c.ledger().len(),
                    tip: c.tip(),
                    inconsistent: c.inconsistent(),
                })
                .collect(),
            snapshots: outcome.snapshots().to_vec(),
            safety_violation: outcome.safety_violation(),
            underlay_conflict: outcome.underlay_conflict(before).map(|(ra, a, rb, b)| UnderlayConflict {
                first: (ra, a),
                second: (rb, b),
            }),
            liveness: outcome.liveness(t_confirm(&outcome.params)),
            forensic: forensic_result,
            attack: outcome.attack.clone(),
            net: outcome.net.clone(),
            transcript_digest: digest(&outcome.transcript),
        };
        (report, evidence.ok().flatten())
    }

    pub fn exit_code(&self) -> i32 {
        if self.safety_violation.is_some() {
            EXIT_VIOLATION
        } else if matches!(self.attack.status, AttackStatus::Failed { .. }) {
            EXIT_ATTACK_FAILED
        } else {
            EXIT_CLEAN
        }
    }

    /// One line for the terminal.
    pub fn summary(&self) -> String {
        let accused = self
            .forensic
            .as_ref()
            .and_then(|f| f.verdict.as_ref())
            .map(|v| v.accused.iter().map(|r| r.0.to_string()).collect::<Vec<_>>().join(","));
        format!(
            "seed={} protocol={} strategy={} gst={} attack={} violation={} flagged={} pending={} max_latency={} accused={} digest={}",
            self.config.seed,
            self.config.protocol.name(),
            self.config.strategy.name.name(),
            self.gst.map_or("never".to_string(), |g| g.to_string()),
            status_name(&self.attack.status),
            self.safety_violation.is_some(),
            self.liveness.flagged,
            self.liveness.pending,
            self.liveness.max_latency.map_or("-".to_string(), |l| l.to_string()),
            accused.unwrap_or_else(|| "-".into()),
            &self.transcript_digest[..16],
        )
    }
}

fn status_name(s: &AttackStatus) -> String {
    match s {
        AttackStatus::NotApplicable => "n/a".into(),
        AttackStatus::InProgress => "in_progress".into(),
        AttackStatus::Succeeded { slot } => format!("succeeded@{slot}"),
        AttackStatus::Failed { slot } => format!("failed@{slot}"),
    }
}
