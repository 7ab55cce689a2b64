use std::path::PathBuf;

use openpneu::drive::run_local;
use openpneu::trajectory::Trajectory;
use openpneu_core::config::ConfigFile;
use openpneu_core::scenario::load_scenario;
use openpneu_core::Device;

fn sample(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../samples").join(name)
}

#[test]
fn samples_load_and_run() {
    let cfg = ConfigFile::load(sample("device.toml")).unwrap();
    assert_eq!(cfg.channels, 4);
    let mut device = Device::new(&cfg.device_config()).unwrap();
    assert_eq!(device.channel(3).unwrap().params.chamber.leak_coefficient, 0.02);
    let traj = Trajectory::load(sample("steps.json")).unwrap();
    let events = load_scenario(sample("bumps.json")).unwrap();
    let report = run_local::<std::io::Sink>(&mut device, &traj, &events, None).unwrap();
    assert_eq!(report.steps.len(), 20);
    assert!(report.max_settle_s.is_some());
}
