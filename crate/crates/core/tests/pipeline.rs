use compdef::autotuner::{tune_model, TunerConfig};
use compdef::harness::{run_cell, ExperimentConfig};
use compdef::ir::generate_model;
use compdef::perfsim::{run_inference, total_latency, DeviceProfile};
use compdef::schedule::lower;
use compdef::Family;

#[test]
fn tuning_lowers_resnet_latency() {
    let g = generate_model(Family::ResnetMini, 2, 0).unwrap();
    let d = DeviceProfile::a100_like();
    let latency = |trials| {
        let t = tune_model(&g, &d, &TunerConfig::with_trials(trials, 0)).unwrap();
        total_latency(&run_inference(
            &lower(&g, &t.assignment).unwrap(),
            &d,
            0.0,
            0,
        ))
    };
    assert!(latency(512) < latency(0));
}

#[test]
fn tuning_is_independent_of_thread_count() {
    let g = generate_model(Family::DensenetMini, 1, 2).unwrap();
    let d = DeviceProfile::a100_like();
    let cfg = TunerConfig::with_trials(24, 9);
    let parallel = tune_model(&g, &d, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool.install(|| tune_model(&g, &d, &cfg).unwrap());
    assert_eq!(parallel.assignment, serial.assignment);
    assert_eq!(parallel.log_lines(), serial.log_lines());
}

#[test]
fn cell_scores_every_kernel() {
    let cfg = ExperimentConfig::default();
    let d = cfg.device_profile().unwrap();
    let victims = compdef::harness::load_victims(&cfg).unwrap();
    let (db, _) = compdef::harness::build_corpus_db(&cfg, &d, &victims).unwrap();
    let g = &victims[0];
    let a = run_cell(g, 8, 1, &cfg, &d, &db).unwrap();
    assert_eq!(a.prediction.sequence.len(), a.trace.records.len());
    assert_eq!(a.trace.records.len(), a.compiled.kernels.len());
    assert!((0.0..=1.0).contains(&a.score.value));
    // same inputs, same artifacts
    let b = run_cell(g, 8, 1, &cfg, &d, &db).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.prediction, b.prediction);
}
