use syncfin_core::adversary::StrategyKind;
use syncfin_core::underlay::ProtocolKind;
use syncfin_core::worlds::{record_world0, reference_scenario, replay_world, run_worlds, WorldError, WorldSpec};
use syncfin_core::{GstSetting, ScenarioConfig};

#[test]
fn reference_worlds_are_indistinguishable() {
    let table = run_worlds(&reference_scenario(0)).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.all_indistinguishable());
    let honest: Vec<u32> = table.rows.iter().map(|r| r.honest.0).collect();
    assert_eq!(honest, vec![1, 2, 3, 4, 5]);
    assert_eq!(table.accusations.len(), 35);
    assert!(table.every_accusation_wrongs_someone());
}

#[test]
fn perturbed_inputs_diverge() {
    let cfg = reference_scenario(0);
    let w0 = record_world0(&cfg).unwrap();
    let other = ScenarioConfig { seed: 1, ..cfg };
    let err = replay_world(&WorldSpec {
        base: &w0.transcript,
        honest: syncfin_core::model::ReplicaId(1),
        inputs: other.tx_inputs(),
    })
    .unwrap_err();
    assert!(matches!(err, WorldError::Divergence { world: 1, .. }), "{err}");
}

#[test]
fn world0_needs_a_violation_and_an_adversary() {
    let safe = ScenarioConfig::new(ProtocolKind::Syncfin, StrategyKind::Passive, GstSetting::Fixed(0), 0);
    assert!(matches!(record_world0(&safe), Err(WorldError::Precondition(_))));
    let no_faults = ScenarioConfig {
        n: 1,
        f: 0,
        protocol: ProtocolKind::MajoritySync,
        ..reference_scenario(0)
    };
    assert!(matches!(record_world0(&no_faults), Err(WorldError::Precondition(_))));
}

#[test]
fn corrupted_world0_replica_cannot_be_the_honest_one() {
    let cfg = reference_scenario(0);
    let w0 = record_world0(&cfg).unwrap();
    let err = replay_world(&WorldSpec {
        base: &w0.transcript,
        honest: syncfin_core::model::ReplicaId(7),
        inputs: cfg.tx_inputs(),
    })
    .unwrap_err();
    assert!(matches!(err, WorldError::Precondition(_)));
}
