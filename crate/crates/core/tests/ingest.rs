use sas_sim::harness::{ingest_scope_text, run_sweep_experiment, Calibration, ColumnMap, HarnessError, ScenarioConfig};
use sas_sim::spectrum::{synthesize_sweep, NoiseConfig, SweepSpec};
use sas_sim::{FeatureId, LineTable};

fn window(table: &LineTable, id: &FeatureId, to_raw: impl Fn(f64) -> f64) -> (f64, f64) {
    let x = table.feature(id).unwrap().detuning_hz;
    let (a, b) = (to_raw(x - 15e6), to_raw(x + 15e6));
    (a.min(b), a.max(b))
}

/// Index of the largest differential sample within ±15 MHz of `nominal`.
fn peak_near(detuning: &[f64], diff: &[f64], nominal: f64) -> f64 {
    let i = (0..detuning.len())
        .filter(|&i| (detuning[i] - nominal).abs() <= 15e6)
        .max_by(|&a, &b| diff[a].total_cmp(&diff[b]))
        .unwrap();
    detuning[i]
}

#[test]
fn compressed_time_axis_recovers_pump_repump_spacing() {
    let cfg = ScenarioConfig::bundled();
    let table = cfg.line_table().unwrap();
    let sweep = SweepSpec {
        start_hz: -1.0e9,
        stop_hz: 7.0e9,
        samples: 80_001,
    };
    let trace = synthesize_sweep(&table, &cfg.medium, &sweep, &NoiseConfig::off()).unwrap();

    // a nominal 1 GHz/ms scope sweep played back twice as fast, with a
    // trigger offset
    let rate = 2.0 * 1e12;
    let to_raw = |nu: f64| (nu - sweep.start_hz) / rate - 0.3e-3;
    let mut text = String::from("# synthetic scope export\ntime_s,ch1,ch2\n");
    for i in 0..trace.len() {
        text.push_str(&format!(
            "{:?},{:?},{:?}\n",
            to_raw(trace.detuning_hz[i]),
            trace.reference[i],
            trace.probe[i]
        ));
    }

    // calibrate on two features within ~1.3 GHz, then extrapolate
    let a = FeatureId::default_pump();
    let b: FeatureId = "Rb85 F=3 F'=4".parse().unwrap();
    let cal = Calibration::from_table(&table, &a, window(&table, &a, to_raw), &b, window(&table, &b, to_raw)).unwrap();
    let cols = ColumnMap {
        axis: "time_s".into(),
        reference: "ch1".into(),
        probe: "ch2".into(),
        differential: None,
    };
    let (got, fit) = ingest_scope_text(&text, &cols, &cal).unwrap();
    assert!((fit.scale_hz_per_unit / rate - 1.0).abs() < 1e-3);

    let repump = FeatureId::default_repump();
    let expected = table.pump_repump_separation(&a, &repump).unwrap().abs();
    let pump_at = peak_near(
        &got.detuning_hz,
        &got.differential,
        table.feature(&a).unwrap().detuning_hz,
    );
    let repump_at = peak_near(
        &got.detuning_hz,
        &got.differential,
        table.feature(&repump).unwrap().detuning_hz,
    );
    let recovered = (repump_at - pump_at).abs();
    assert!((6.4e9..6.7e9).contains(&recovered));
    assert!(
        (recovered / expected - 1.0).abs() < 0.005,
        "recovered {recovered} vs {expected}"
    );
}

#[test]
fn shuffled_rows_are_rejected() {
    let cfg = ScenarioConfig::bundled();
    let out = run_sweep_experiment(&cfg).unwrap();
    let csv = &out
        .artifacts
        .iter()
        .find(|a| a.name == "sweep_trace.csv")
        .unwrap()
        .contents;
    let mut lines: Vec<&str> = csv.lines().collect();
    let first_data = lines.iter().position(|l| l.starts_with("detuning_hz")).unwrap() + 1;
    lines.swap(first_data + 100, first_data + 5000);
    let shuffled = lines.join("\n");

    let table = cfg.line_table().unwrap();
    let a = FeatureId::default_pump();
    let b = FeatureId::default_repump();
    let cal = Calibration::from_table(&table, &a, window(&table, &a, |x| x), &b, window(&table, &b, |x| x)).unwrap();
    let err = ingest_scope_text(&shuffled, &ColumnMap::default(), &cal).unwrap_err();
    assert!(matches!(err, HarnessError::NonMonotoneAxis { .. }), "{err}");
}
