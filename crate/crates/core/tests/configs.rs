use std::path::PathBuf;

use wlc::recovery::RecoveryStrategy;
use wlc::sim::{Fault, FaultScript, NetworkConfig};
use wlc::sql::value::RoundingMode;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn sample_network_config_loads() {
    let cfg = NetworkConfig::load(config_dir().join("network.toml")).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.org_ids(), ["O1", "O2", "O3"]);
    assert_eq!(cfg.policy().unwrap().threshold(), 2);
    assert_eq!(cfg.recovery, RecoveryStrategy::OptimizedPartialReplay);
    assert_eq!(cfg.organizations[1].extra_delay, 2);
    assert_eq!(cfg.organizations[2].quirks.decimal_rounding, RoundingMode::HalfEven);
    assert_eq!(NetworkConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn sample_fault_script_loads() {
    let script = FaultScript::load(config_dir().join("faults.toml")).unwrap();
    assert_eq!(script.faults.len(), 3);
    assert!(matches!(&script.faults[0], Fault::CorruptRow { org, tick: 12, .. } if org == "O1"));
    assert!(matches!(&script.faults[2], Fault::KillOrg { tick: 60, .. }));
}
