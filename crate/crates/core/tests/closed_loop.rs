use sas_sim::harness::{build_readout, ScenarioConfig};
use sas_sim::servo::{closed_loop_run, LockPhase, LoopConfig, Readout, Scenario, StartMode};
use sas_sim::spectrum::SpectrumModel;

fn setup() -> (LoopConfig, Readout) {
    let cfg = ScenarioConfig::bundled();
    let table = cfg.line_table().unwrap();
    let model = SpectrumModel::new(&table, &cfg.medium).unwrap();
    let readout = build_readout(&cfg, &model).unwrap();
    let mut lc = cfg.loop_config();
    lc.plant.linewidth = 0.0;
    lc.plant.drift_rate = 0.0;
    (lc, readout)
}

fn loses_lock(lc: &LoopConfig, readout: &Readout, step_k: f64) -> bool {
    let scenario = Scenario {
        start: StartMode::Locked,
        temperature_steps: vec![(0.01, step_k)],
        ..Scenario::default()
    };
    let log = closed_loop_run(lc, readout, &scenario, 20.0, 3).unwrap();
    log.fault.is_some() || log.samples.iter().any(|s| s.phase == LockPhase::Lost)
}

#[test]
fn capture_range_threshold_by_bisection() {
    let (lc, readout) = setup();
    let (mut held, mut lost) = (0.1, 1.0);
    assert!(!loses_lock(&lc, &readout, held));
    assert!(loses_lock(&lc, &readout, lost));
    while lost - held > 1e-3 {
        let mid = 0.5 * (held + lost);
        if loses_lock(&lc, &readout, mid) {
            lost = mid;
        } else {
            held = mid;
        }
    }
    // The first-order thermal lag turns the step into a detuning ramp of
    // initial rate k_temp·ΔT/τ. An integrating loop follows a ramp with a
    // constant lag, and the lock is lost once that lag reaches the loss
    // threshold.
    let hz_per_volt = (lc.plant.k_current * lc.plant.k_ctrl).abs();
    let lag_limit = lc.tuning.loss_fraction * readout.lock.error_amplitude;
    let predicted = lag_limit * lc.pid.ki * hz_per_volt * lc.plant.thermal_tau / lc.plant.k_temp;
    assert!(
        (held / predicted - 1.0).abs() < 0.02,
        "held up to {held} K, predicted {predicted} K"
    );
    // both signs are symmetric
    assert!(loses_lock(&lc, &readout, -lost - 2e-3));
    assert!(!loses_lock(&lc, &readout, -held + 2e-3));
}
