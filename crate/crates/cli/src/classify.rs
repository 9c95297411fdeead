//! Empirical membership of each protocol in the safety, liveness and
//! accountability classes.
//!
//! Every protocol runs the same battery of scenarios for a range of seeds.
//! A class is `yes` when no run in its part of the battery contradicts it.
//! Accountability is `n/a` when the over-threshold attack never produced a
//! violation to analyse.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use syncfin_core::adversary::{StrategyConfig, StrategyKind};
use syncfin_core::forensics::forensic;
use syncfin_core::underlay::ProtocolKind;
use syncfin_core::{GstSetting, ScenarioConfig, Simulation};

use crate::report::t_confirm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Yes,
    No,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Membership {
    fn from_bool(b: bool) -> Self {
        if b {
            Membership::Yes
        } else {
            Membership::No
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Membership::Yes => "yes",
            Membership::No => "no",
            Membership::NotApplicable => "n/a",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRow {
    pub protocol: ProtocolKind,
    pub safe_under_synchrony: Membership,
    pub live_under_synchrony: Membership,
    #[serde(rename = "final")]
    pub final_: Membership,
    pub accountable_safe: Membership,
    pub live_after_gst: Membership,
}

impl ClassRow {
    pub fn line(&self) -> String {
        format!(
            "{:<13} safe_sync={:<3} live_sync={:<3} final={:<3} accountable={:<3} live_after_gst={}",
            self.protocol.name(),
            self.safe_under_synchrony.name(),
            self.live_under_synchrony.name(),
            self.final_.name(),
            self.accountable_safe.name(),
            self.live_after_gst.name(),
        )
    }
}

/// The rows the battery is expected to reproduce.
pub fn expected_rows() -> Vec<ClassRow> {
    use Membership::*;
    let row = |protocol, a, b, c, d, e| ClassRow {
        protocol,
        safe_under_synchrony: a,
        live_under_synchrony: b,
        final_: c,
        accountable_safe: d,
        live_after_gst: e,
    };
    vec![
        row(ProtocolKind::MajoritySync, Yes, Yes, No, No, No),
        row(ProtocolKind::PsyncQuorum, Yes, Yes, Yes, No, Yes),
        row(ProtocolKind::Syncfin, Yes, Yes, Yes, Yes, No),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    SafeSync,
    LiveSync,
    Final,
    Accountable,
    LiveAfterGst,
}

/// Battery entries: a scenario and the classes it informs.
fn battery(protocol: ProtocolKind, seed: u64) -> Vec<(ScenarioConfig, Vec<Class>)> {
    use Class::*;
    use StrategyKind::*;
    let cfg = |kind, gst, random| ScenarioConfig {
        strategy: if random {
            StrategyConfig::new(kind).with_random_delays()
        } else {
            StrategyConfig::new(kind)
        },
        ..ScenarioConfig::new(protocol, kind, gst, seed)
    };
    let sync = GstSetting::Fixed(0);
    let adaptive = GstSetting::OnAttackSuccess;
    vec![
        (cfg(Passive, sync, false), vec![SafeSync, LiveSync]),
        (cfg(Crash, sync, false), vec![SafeSync, LiveSync]),
        (cfg(SplitBrain, sync, false), vec![SafeSync]),
        (cfg(LivenessKill, sync, false), vec![SafeSync]),
        (cfg(SplitBrain, adaptive, false), vec![Final, LiveAfterGst]),
        (cfg(LivenessKill, adaptive, false), vec![Final, LiveAfterGst]),
        (cfg(SplitBrain, adaptive, true), vec![Final]),
        (cfg(LivenessKill, adaptive, true), vec![Final]),
        (cfg(ForensicTrigger, adaptive, false), vec![Accountable]),
    ]
}

/// What one battery run says about its classes.
#[derive(Clone, Debug)]
struct Finding {
    protocol: ProtocolKind,
    classes: Vec<Class>,
    safe: bool,
    live: bool,
    /// `None` without a violation; otherwise whether forensics named at
    /// least `f + 1` replicas, all of them corrupted.
    accountable: Option<bool>,
}

fn examine(cfg: &ScenarioConfig, classes: Vec<Class>) -> Finding {
    let outcome = Simulation::new(cfg)
        .and_then(|s| s.run())
        .expect("battery scenarios are valid");
    let violation = outcome.safety_violation().is_some();
    let liveness = outcome.liveness(t_confirm(&outcome.params));
    let accountable = violation.then(|| {
        let corrupted: &BTreeSet<_> = &outcome.plan.corrupted;
        match outcome.evidence() {
            Ok(Some(ev)) => forensic(&ev, &outcome.params).is_ok_and(|v| {
                v.accused.len() > outcome.params.f as usize && v.accused.is_subset(corrupted)
            }),
            _ => false,
        }
    });
    Finding {
        protocol: cfg.protocol,
        classes,
        safe: !violation,
        live: liveness.flagged == 0 && liveness.pending == 0,
        accountable,
    }
}

/// Runs the battery for `seeds` seeds starting at `first_seed`, in
/// parallel; results are merged in seed order.
pub fn classify(first_seed: u64, seeds: u64) -> Vec<ClassRow> {
    let jobs: Vec<(ScenarioConfig, Vec<Class>)> = ProtocolKind::ALL
        .iter()
        .flat_map(|p| (first_seed..first_seed + seeds).flat_map(move |s| battery(*p, s)))
        .collect();
    let findings: Vec<Finding> = jobs.into_par_iter().map(|(cfg, classes)| examine(&cfg, classes)).collect();
    ProtocolKind::ALL
        .iter()
        .map(|p| {
            let mine: Vec<&Finding> = findings.iter().filter(|f| f.protocol == *p).collect();
            let all = |class: Class, ok: &dyn Fn(&Finding) -> bool| {
                Membership::from_bool(mine.iter().filter(|f| f.classes.contains(&class)).all(|f| ok(f)))
            };
            let induced: Vec<bool> = mine
                .iter()
                .filter(|f| f.classes.contains(&Class::Accountable))
                .filter_map(|f| f.accountable)
                .collect();
            ClassRow {
                protocol: *p,
                safe_under_synchrony: all(Class::SafeSync, &|f| f.safe),
                live_under_synchrony: all(Class::LiveSync, &|f| f.live),
                final_: all(Class::Final, &|f| f.safe),
                accountable_safe: if induced.is_empty() {
                    Membership::NotApplicable
                } else {
                    Membership::from_bool(induced.iter().all(|ok| *ok))
                },
                live_after_gst: all(Class::LiveAfterGst, &|f| f.live),
            }
        })
        .collect()
}
