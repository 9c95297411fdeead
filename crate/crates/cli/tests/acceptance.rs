//! Acceptance gate. Every criterion runs at its full tolerance and prints one
//! PASS/FAIL line; the test fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use syncfin::classify::{classify, expected_rows};
use syncfin::io::digest;
use syncfin_core::adversary::{AttackStatus, StrategyConfig, StrategyKind};
use syncfin_core::forensics::{forensic, min_quorum_overlap, verify_verdict};
use syncfin_core::model::{is_prefix, BlockHash, Ledger, Payload, ReplicaId, TxId};
use syncfin_core::underlay::ProtocolKind;
use syncfin_core::worlds::{reference_scenario, run_worlds};
use syncfin_core::{GstSetting, Outcome, ScenarioConfig, Simulation};

const SEEDS: u64 = 100;
const SWEEP_SEEDS: u64 = 1000;
/// Ten epochs of two slots.
const T_CONFIRM_BOUND: u64 = 20;

type Verdict = Result<String, String>;

fn simulate(cfg: &ScenarioConfig) -> Outcome {
    Simulation::new(cfg).unwrap().run().unwrap()
}

/// Invariants every transcript must satisfy, checked as it is produced.
fn invariants(o: &Outcome) -> Result<(), String> {
    o.transcript
        .check_signature_invariants(&o.blocks)
        .map_err(|e| format!("seed {}: {e}", o.config.seed))?;
    o.transcript
        .check_single_vote()
        .map_err(|e| format!("seed {}: {e}", o.config.seed))?;
    Ok(())
}

/// Re-running the first configuration of a criterion reproduces its digest.
fn deterministic(cfg: &ScenarioConfig) -> bool {
    digest(&simulate(cfg).transcript) == digest(&simulate(cfg).transcript)
}

fn sweep<T: Send>(seeds: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..seeds).into_par_iter().map(f).collect()
}

fn summarize(failed: Vec<String>, total: u64, detail: String) -> Verdict {
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}/{total} failed; first: {}", failed.len(), failed[0]))
    }
}

fn forensic_trigger(seed: u64) -> ScenarioConfig {
    ScenarioConfig::new(ProtocolKind::Syncfin, StrategyKind::ForensicTrigger, GstSetting::OnAttackSuccess, seed)
}

fn criterion1(stats: &mut Stats) -> Verdict {
    let results = sweep(SEEDS, |seed| {
        let o = simulate(&forensic_trigger(seed));
        invariants(&o)?;
        if o.safety_violation().is_none() {
            return Err(format!("seed {seed}: no violation"));
        }
        let ev = o
            .evidence()
            .map_err(|e| format!("seed {seed}: {e}"))?
            .ok_or(format!("seed {seed}: no conflicting clients"))?;
        let v = forensic(&ev, &o.params).map_err(|e| format!("seed {seed}: {e}"))?;
        let honest_accused = v.accused.difference(&o.plan.corrupted).count();
        if v.accused != o.plan.corrupted || v.accused.len() != 3 || honest_accused != 0 || !verify_verdict(&v) {
            return Err(format!("seed {seed}: accused {:?}", v.accused));
        }
        Ok(o.net.bound_checks)
    });
    let failed: Vec<String> = results.iter().filter_map(|r| r.clone().err()).collect();
    stats.bound_checks += results.iter().filter_map(|r| r.as_ref().ok()).sum::<u64>();
    stats.deterministic &= deterministic(&forensic_trigger(0));
    summarize(failed, SEEDS, format!("{SEEDS} seeds, accused = corrupted = {{5,6,7}}, 0 honest accused"))
}

fn criterion2(stats: &mut Stats) -> Verdict {
    let mut failed = Vec::new();
    let mut detail = Vec::new();
    for kind in [StrategyKind::Passive, StrategyKind::Crash] {
        let cfg = |seed| ScenarioConfig::new(ProtocolKind::Syncfin, kind, GstSetting::Fixed(0), seed);
        let results = sweep(SEEDS, |seed| {
            let o = simulate(&cfg(seed));
            invariants(&o)?;
            let report = o.liveness(T_CONFIRM_BOUND);
            if report.flagged != 0 || report.pending != 0 || report.entries.is_empty() {
                return Err(format!(
                    "{} seed {seed}: flagged {} pending {}",
                    kind.name(),
                    report.flagged,
                    report.pending
                ));
            }
            Ok((report.max_latency.unwrap_or(0), o.net.bound_checks))
        });
        stats.deterministic &= deterministic(&cfg(0));
        let measured = results.iter().filter_map(|r| r.as_ref().ok()).map(|(m, _)| *m).max().unwrap_or(0);
        stats.bound_checks += results.iter().filter_map(|r| r.as_ref().ok()).map(|(_, b)| *b).sum::<u64>();
        detail.push(format!("{}: measured Tconfirm={measured} slots", kind.name()));
        failed.extend(results.into_iter().filter_map(Result::err));
    }
    summarize(
        failed,
        2 * SEEDS,
        format!("{} (bound {T_CONFIRM_BOUND} slots = 10 epochs)", detail.join(", ")),
    )
}

fn criterion3(stats: &mut Stats) -> Verdict {
    let cfg = |seed| ScenarioConfig {
        slots: 500,
        tx_schedule: syncfin_core::TxSchedule::Generated {
            interval: 1,
            until: 480,
        },
        ..ScenarioConfig::new(ProtocolKind::Syncfin, StrategyKind::LivenessKill, GstSetting::OnAttackSuccess, seed)
    };
    let results = sweep(SEEDS, |seed| {
        let o = simulate(&cfg(seed));
        invariants(&o)?;
        if o.plan.active.len() != 1 {
            return Err(format!("seed {seed}: {} active replicas", o.plan.active.len()));
        }
        let AttackStatus::Succeeded { .. } = o.attack.status else {
            return Err(format!("seed {seed}: attack {:?}", o.attack.status));
        };
        let gst = o.gst.ok_or(format!("seed {seed}: no GST"))?;
        let epochs_after = (o.config.slots - gst) / o.params.epoch_len;
        if epochs_after < 200 {
            return Err(format!("seed {seed}: only {epochs_after} epochs after GST"));
        }
        if let Some(s) = o.snapshots().iter().find(|s| s.slot >= gst) {
            return Err(format!("seed {seed}: client {} ledger grew at slot {}", s.client, s.slot));
        }
        let fork = o.attack.fork_height.ok_or(format!("seed {seed}: no fork height"))?;
        let mut signers: BTreeMap<BlockHash, BTreeSet<ReplicaId>> = BTreeMap::new();
        for log in o.transcript.sent.values() {
            for e in log {
                if let Payload::FinalitySignature(s) = &e.payload {
                    if s.height >= fork {
                        signers.entry(s.block).or_default().insert(s.signer);
                    }
                }
            }
        }
        let most = signers.values().map(BTreeSet::len).max().unwrap_or(0);
        if most >= 5 {
            return Err(format!("seed {seed}: a post-fork block has {most} signatures"));
        }
        Ok(o.net.bound_checks)
    });
    stats.bound_checks += results.iter().filter_map(|r| r.as_ref().ok()).sum::<u64>();
    stats.deterministic &= deterministic(&cfg(0));
    let failed = results.into_iter().filter_map(Result::err).collect();
    summarize(
        failed,
        SEEDS,
        format!("{SEEDS} seeds, 1 active replica, no ledger growth for >= 200 epochs after GST, post-fork blocks < 5 signatures"),
    )
}

/// Seed `s` picks the strategy, whether delays are randomized and the GST.
fn adversarial(seed: u64) -> ScenarioConfig {
    let kinds = [
        StrategyKind::Passive,
        StrategyKind::Crash,
        StrategyKind::SplitBrain,
        StrategyKind::LivenessKill,
    ];
    let kind = kinds[(seed % 4) as usize];
    let gst = match (seed / 8) % 3 {
        0 => GstSetting::OnAttackSuccess,
        1 => GstSetting::Fixed(20 + seed % 100),
        _ => GstSetting::Infinite,
    };
    let strategy = if (seed / 4) % 2 == 0 {
        StrategyConfig::new(kind).with_random_delays()
    } else {
        StrategyConfig::new(kind)
    };
    ScenarioConfig {
        strategy,
        ..ScenarioConfig::new(ProtocolKind::Syncfin, kind, gst, seed)
    }
}

fn criterion4(stats: &mut Stats) -> Verdict {
    let results = sweep(SWEEP_SEEDS, |seed| {
        let cfg = adversarial(seed);
        let o = simulate(&cfg);
        invariants(&o)?;
        if o.plan.corrupted.len() > 2 {
            return Err(format!("seed {seed}: {} corrupted", o.plan.corrupted.len()));
        }
        match o.safety_violation() {
            Some(_) => Err(format!("seed {seed}: {} violated safety", cfg.strategy.name.name())),
            None => Ok(o.net.bound_checks),
        }
    });
    stats.bound_checks += results.iter().filter_map(|r| r.as_ref().ok()).sum::<u64>();
    stats.deterministic &= deterministic(&adversarial(4));
    let failed = results.into_iter().filter_map(Result::err).collect();
    summarize(
        failed,
        SWEEP_SEEDS,
        format!("{SWEEP_SEEDS} seeds over passive/crash/split_brain/liveness_kill, random and default delays, three GST settings: 0 violations"),
    )
}

fn criterion5(stats: &mut Stats) -> Verdict {
    let cfg = |seed| ScenarioConfig::new(ProtocolKind::MajoritySync, StrategyKind::SplitBrain, GstSetting::OnAttackSuccess, seed);
    let results = sweep(SEEDS, |seed| {
        let o = simulate(&cfg(seed));
        invariants(&o)?;
        if o.plan.active.len() != 1 {
            return Err(format!("seed {seed}: {} active replicas", o.plan.active.len()));
        }
        let gst = o.gst.ok_or(format!("seed {seed}: no GST"))?;
        let (ra, _, rb, _) = o
            .underlay_conflict(gst)
            .ok_or(format!("seed {seed}: no conflicting underlay-confirmed blocks before GST"))?;
        if o.plan.corrupted.contains(&ra) || o.plan.corrupted.contains(&rb) {
            return Err(format!("seed {seed}: conflict involves a corrupted replica"));
        }
        Ok(o.net.bound_checks)
    });
    stats.bound_checks += results.iter().filter_map(|r| r.as_ref().ok()).sum::<u64>();
    stats.deterministic &= deterministic(&cfg(0));
    let failed = results.into_iter().filter_map(Result::err).collect();
    summarize(failed, SEEDS, format!("{SEEDS} seeds, 1 deviating replica, honest underlay conflict before GST"))
}

fn criterion6(stats: &mut Stats) -> Verdict {
    let table = run_worlds(&reference_scenario(0)).map_err(|e| e.to_string())?;
    stats.deterministic &= run_worlds(&reference_scenario(0)).ok().as_ref() == Some(&table);
    let honest: BTreeSet<ReplicaId> = table.rows.iter().map(|r| r.honest).collect();
    let mut failed = Vec::new();
    if table.rows.len() != 5 || honest.len() != 5 {
        failed.push(format!("{} worlds with {} distinct honest replicas", table.rows.len(), honest.len()));
    }
    for r in &table.rows {
        if !r.indistinguishable || !r.violation {
            failed.push(format!("world {}: indistinguishable={} violation={}", r.world, r.indistinguishable, r.violation));
        }
    }
    summarize(failed, 5, "5 worlds indistinguishable, distinct honest replicas 1..5, violation in every world".into())
}

fn criterion7() -> Verdict {
    let mut failed = Vec::new();
    let mut pairs = 0u64;
    for (n, f) in [(4u32, 1u32), (7, 2), (10, 3)] {
        let q = 2 * f + 1;
        let sets: Vec<u32> = (0u32..1 << n).filter(|m| m.count_ones() == q).collect();
        for a in &sets {
            for b in &sets {
                pairs += 1;
                if (a & b).count_ones() < f + 1 {
                    failed.push(format!("n={n}: {a:b} & {b:b}"));
                }
            }
        }
        if min_quorum_overlap(n as usize, q as usize) != f as usize + 1 {
            failed.push(format!("n={n}: overlap bound"));
        }
    }
    summarize(failed, pairs, format!("{pairs} quorum pairs over (4,1), (7,2), (10,3); 441 pairs of 5-subsets of 7 all share >= 3"))
}

fn criterion8(stats: &Stats) -> Verdict {
    // prefix laws over every ledger of length <= 4 on a 2-letter alphabet
    let mut ledgers = vec![Ledger::default()];
    for len in 1..=4u32 {
        for bits in 0..1u32 << len {
            ledgers.push(Ledger((0..len).map(|i| TxId(u64::from(bits >> i & 1))).collect()));
        }
    }
    let mut failed = Vec::new();
    for a in &ledgers {
        if !is_prefix(a, a) {
            failed.push("reflexivity".to_string());
        }
        for b in &ledgers {
            if is_prefix(a, b) && is_prefix(b, a) && a != b {
                failed.push("antisymmetry".into());
            }
            for c in &ledgers {
                if is_prefix(a, b) && is_prefix(b, c) && !is_prefix(a, c) {
                    failed.push("transitivity".into());
                }
            }
        }
    }
    if stats.bound_checks == 0 {
        failed.push("no delivery was checked against its bound".into());
    }
    if !stats.deterministic {
        failed.push("a re-run produced a different transcript".into());
    }
    summarize(
        failed,
        1,
        format!(
            "prefix laws on {} ledgers; signature and vote invariants held on every transcript of criteria 1-6; {} deliveries within bound; re-runs identical",
            ledgers.len(),
            stats.bound_checks
        ),
    )
}

fn criterion9() -> Verdict {
    let rows = classify(0, 4);
    let lines: Vec<String> = rows.iter().map(|r| r.line()).collect();
    for l in &lines {
        println!("    {l}");
    }
    if rows == expected_rows() {
        Ok("rows match majority_sync, psync_quorum, syncfin expectations".into())
    } else {
        Err(format!("got {lines:?}"))
    }
}

struct Stats {
    bound_checks: u64,
    deterministic: bool,
}

#[test]
fn acceptance() {
    let mut stats = Stats {
        bound_checks: 0,
        deterministic: true,
    };
    let mut failed = Vec::new();
    let t = Instant::now();
    let mut record = |n: u32, name: &str, run: &mut dyn FnMut() -> Verdict| {
        let started = Instant::now();
        let v = run();
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        println!("criterion {n} [{tag}] {name}: {detail} ({:.1?})", started.elapsed());
        if v.is_err() {
            failed.push(n);
        }
    };
    record(1, "accountable safety under forensic_trigger", &mut || criterion1(&mut stats));
    record(2, "liveness under synchrony", &mut || criterion2(&mut stats));
    record(3, "liveness_kill stalls finality after GST", &mut || criterion3(&mut stats));
    record(4, "finality under adversarial delays", &mut || criterion4(&mut stats));
    record(5, "split_brain forks the bare underlay", &mut || criterion5(&mut stats));
    record(6, "indistinguishable worlds", &mut || criterion6(&mut stats));
    record(7, "quorum intersection", &mut criterion7);
    record(8, "invariant suites and determinism", &mut || criterion8(&stats));
    record(9, "classification rows", &mut criterion9);
    println!("acceptance suite finished in {:.1?}", t.elapsed());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn forensic_trigger_config_is_fixed() {
    let plan = forensic_trigger(0).validate().unwrap();
    let expected: BTreeSet<ReplicaId> = [5, 6, 7].into_iter().map(ReplicaId).collect();
    assert_eq!(plan.corrupted, expected);
}
