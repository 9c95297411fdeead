//! Subcommand bodies. Each returns the process exit code.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use syncfin_core::forensics::{forensic, Evidence, ForensicError};
use syncfin_core::model::ReplicaId;
use syncfin_core::worlds::{build_table, record_world0, reference_scenario, replay_world, WorldError, WorldSpec};
use syncfin_core::{ScenarioConfig, Simulation};

use crate::classify::{classify, expected_rows};
use crate::io::{load_config, read_json, to_pretty, write_json, CliError};
use crate::report::{RunReport, EXIT_CLEAN, EXIT_CONFIG, EXIT_VIOLATION};

/// Verdict names fewer than `f + 1` replicas.
pub const EXIT_FEW_ACCUSED: i32 = 5;
/// The evidence does not establish a certified conflict.
pub const EXIT_INSUFFICIENT: i32 = 6;
pub const EXIT_ERROR: i32 = 1;

pub fn exit_code_for(err: &CliError) -> i32 {
    match err {
        CliError::Parse { .. } | CliError::Config(_) => EXIT_CONFIG,
        CliError::Worlds(WorldError::Precondition(_)) => EXIT_CONFIG,
        CliError::Sim(syncfin_core::sim::SimError::Config(_)) => EXIT_CONFIG,
        CliError::Forensic(ForensicError::InsufficientEvidence(_)) => EXIT_INSUFFICIENT,
        _ => EXIT_ERROR,
    }
}

fn emit(out: &mut dyn Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

/// Runs `runs` consecutive seeds of the scenario and writes
/// `report-<seed>.json` (and `evidence-<seed>.json` when two clients
/// conflict) to `out_dir`.
pub fn run(
    config: Option<&Path>,
    seed: Option<u64>,
    runs: u64,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let base = load_config(config, seed)?;
    let configs: Vec<ScenarioConfig> = (0..runs.max(1))
        .map(|k| ScenarioConfig {
            seed: base.seed.wrapping_add(k),
            ..base.clone()
        })
        .collect();
    let results: Vec<Result<(RunReport, Option<Evidence>), CliError>> = configs
        .par_iter()
        .map(|cfg| Ok(RunReport::build(&Simulation::new(cfg)?.run()?)))
        .collect();
    let mut code = EXIT_CLEAN;
    for result in results {
        let (report, evidence) = result?;
        emit(out, &report.summary());
        if let Some(dir) = out_dir {
            let seed = report.config.seed;
            write_json(&dir.join(format!("report-{seed}.json")), &report)?;
            if let Some(ev) = evidence {
                write_json(&dir.join(format!("evidence-{seed}.json")), &ev)?;
            }
        }
        let c = report.exit_code();
        if code != EXIT_VIOLATION && c != EXIT_CLEAN {
            code = c;
        }
    }
    Ok(code)
}

/// Runs the classification battery and compares it with the expected rows.
pub fn classify_cmd(seed: u64, seeds: u64, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<i32, CliError> {
    let rows = classify(seed, seeds);
    for row in &rows {
        emit(out, &row.line());
    }
    if let Some(dir) = out_dir {
        write_json(&dir.join("classification.json"), &rows)?;
    }
    let matches = rows == expected_rows();
    emit(out, &format!("matches expected rows: {matches}"));
    Ok(if matches { EXIT_CLEAN } else { EXIT_VIOLATION })
}

/// Analyses an evidence file; parameters come from `config` or the
/// default scenario.
pub fn forensic_cmd(
    evidence: &Path,
    config: Option<&Path>,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let params = load_config(config, None)?.params();
    let ev: Evidence = read_json(evidence)?;
    let verdict = forensic(&ev, &params)?;
    let accused: Vec<String> = verdict.accused.iter().map(|r| r.0.to_string()).collect();
    emit(out, &format!("accused: [{}]", accused.join(",")));
    match out_dir {
        Some(dir) => write_json(&dir.join("verdict.json"), &verdict)?,
        None => emit(out, &to_pretty(&verdict)),
    }
    Ok(if verdict.accused.len() > params.f as usize {
        EXIT_CLEAN
    } else {
        EXIT_FEW_ACCUSED
    })
}

/// Records world 0, replays the other worlds in parallel and writes the
/// table plus every transcript.
pub fn worlds_cmd(
    config: Option<&Path>,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let cfg = match config {
        Some(_) => load_config(config, seed)?,
        None => reference_scenario(seed.unwrap_or(0)),
    };
    let w0 = record_world0(&cfg)?;
    let inputs = cfg.tx_inputs();
    let params = cfg.params();
    let worlds: Vec<(ReplicaId, syncfin_core::Transcript)> = (1..=params.n - params.f)
        .into_par_iter()
        .map(|i| {
            let spec = WorldSpec {
                base: &w0.transcript,
                honest: ReplicaId(i),
                inputs: inputs.clone(),
            };
            replay_world(&spec).map(|t| (ReplicaId(i), t))
        })
        .collect::<Result<_, _>>()?;
    let table = build_table(&w0, &worlds);
    for row in &table.rows {
        let corrupted: Vec<String> = row.corrupted.iter().map(|r| r.0.to_string()).collect();
        emit(
            out,
            &format!(
                "world {} honest={} corrupted={{{}}} indistinguishable={} violation={}",
                row.world,
                row.honest.0,
                corrupted.join(","),
                row.indistinguishable,
                row.violation
            ),
        );
    }
    let wronged = table.accusations.iter().filter(|a| a.wrongs_world.is_some()).count();
    emit(
        out,
        &format!("accused sets of size {} naming an honest replica in some world: {wronged}/{}", params.f + 1, table.accusations.len()),
    );
    if let Some(dir) = out_dir {
        write_json(&dir.join("worlds.json"), &table)?;
        write_json(&dir.join("world-0.json"), &w0.transcript)?;
        for (i, t) in &worlds {
            write_json(&dir.join(format!("world-{}.json", i.0)), t)?;
        }
    }
    Ok(if table.all_indistinguishable() {
        EXIT_CLEAN
    } else {
        EXIT_VIOLATION
    })
}
