use proptest::prelude::*;
use shiftlab::drift::{
    disagreement, drift_detector, make_concept, simulate_tracking, tradeoff_sweep, ConceptKind, TrackingConfig,
    TrackingStrategy,
};
use shiftlab::linalg::median;

fn short_run(steps: usize) -> TrackingConfig {
    TrackingConfig {
        steps,
        eval_samples: 1000,
        ..Default::default()
    }
}

fn median_tail(kind: ConceptKind, delta: f64, cfg: &TrackingConfig, seeds: u64, tail: usize) -> f64 {
    let mut tails: Vec<f64> = (0..seeds)
        .map(|seed| {
            let concept = make_concept(kind, delta, seed).unwrap();
            let cfg = TrackingConfig { seed, ..cfg.clone() };
            simulate_tracking(&concept, &TrackingStrategy::SlidingWindow, &cfg)
                .unwrap()
                .tail_mean(tail)
        })
        .collect();
    median(&mut tails)
}

#[test]
fn static_concept_is_learned() {
    let concept = make_concept(ConceptKind::RotatingHalfspace, 0.0, 7).unwrap();
    let trace = simulate_tracking(&concept, &TrackingStrategy::SlidingWindow, &short_run(100)).unwrap();
    assert_eq!(trace.risks.len(), 100);
    assert!(trace.tail_mean(50) < 0.05, "{}", trace.tail_mean(50));
}

#[test]
fn zero_drift_matches_static_concept() {
    // An abrupt switch that never happens inside the run is a static concept
    // with the same orientation.
    let drifting = make_concept(ConceptKind::RotatingHalfspace, 0.0, 3).unwrap();
    let fixed = make_concept(ConceptKind::AbruptSwitch, 0.0, 3)
        .unwrap()
        .with_switch_step(usize::MAX);
    let cfg = short_run(40);
    let a = simulate_tracking(&drifting, &TrackingStrategy::SlidingWindow, &cfg).unwrap();
    let b = simulate_tracking(&fixed, &TrackingStrategy::SlidingWindow, &cfg).unwrap();
    assert_eq!(a.risks, b.risks);
}

#[test]
fn traces_are_deterministic() {
    let concept = make_concept(ConceptKind::ShiftingThreshold, 0.05, 9).unwrap();
    for strategy in [
        TrackingStrategy::SlidingWindow,
        TrackingStrategy::PartialMemory { keep_fraction: 0.7 },
        TrackingStrategy::DecayWeighted { tau: 3.0 },
        TrackingStrategy::DetectAndReset {
            detector_window: 5,
            threshold: 0.2,
        },
    ] {
        let cfg = short_run(30);
        let a = simulate_tracking(&concept, &strategy, &cfg).unwrap();
        let b = simulate_tracking(&concept, &strategy, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.risks.iter().all(|r| (0.0..=1.0).contains(r)));
        assert_eq!(a.strategy, strategy.name());
    }
}

#[test]
fn faster_drift_costs_more() {
    let cfg = short_run(80);
    let slow = median_tail(ConceptKind::RotatingHalfspace, 0.02, &cfg, 20, 50);
    let fast = median_tail(ConceptKind::RotatingHalfspace, 0.2, &cfg, 20, 50);
    assert!(fast > slow, "fast {fast} slow {slow}");
}

#[test]
fn sweep_cell_reproduces_single_run() {
    let cfg = short_run(30);
    let table = tradeoff_sweep(ConceptKind::RotatingHalfspace, &[0.0], &[500], &[4], &cfg, 10).unwrap();
    let concept = make_concept(ConceptKind::RotatingHalfspace, 0.0, 4).unwrap();
    let single = simulate_tracking(
        &concept,
        &TrackingStrategy::SlidingWindow,
        &TrackingConfig { seed: 4, ..cfg },
    )
    .unwrap();
    assert_eq!(table.median_risk[0][0], single.tail_mean(10));
    assert!(tradeoff_sweep(ConceptKind::RotatingHalfspace, &[], &[500], &[4], &short_run(1), 1).is_err());
}

#[test]
fn small_window_pays_estimation_error() {
    // With large batches a window of 500 still covers a single step, so the
    // two windows see the same drift lag and differ only in sample size.
    let cfg = TrackingConfig {
        samples_per_step: 500,
        ..short_run(60)
    };
    let table = tradeoff_sweep(
        ConceptKind::RotatingHalfspace,
        &[0.05],
        &[50, 500],
        &(0..20).collect::<Vec<_>>(),
        &cfg,
        40,
    )
    .unwrap();
    let row = &table.median_risk[0];
    assert!(row[0] > row[1], "{row:?}");
    assert_eq!(table.window_inversions, vec![0]);
}

#[test]
fn abrupt_switch_is_detected_once() {
    for seed in 0..5 {
        let concept = make_concept(ConceptKind::AbruptSwitch, 0.0, seed).unwrap();
        let window = 5;
        let trace = simulate_tracking(
            &concept,
            &TrackingStrategy::DetectAndReset {
                detector_window: window,
                threshold: 0.2,
            },
            &TrackingConfig { seed, ..short_run(120) },
        )
        .unwrap();
        assert_eq!(trace.detections.len(), 1, "seed {seed}: {:?}", trace.detections);
        let at = trace.detections[0];
        assert!(at >= concept.switch_step && at < concept.switch_step + 2 * window);
        // recovery after the reset
        assert!(trace.tail_mean(20) < 0.05);
    }
}

#[test]
fn detector_step_change() {
    for window in 2..12 {
        for change in [2 * window, 30, 57] {
            let stream: Vec<f64> = (0..change + 40).map(|i| if i < change { 0.1 } else { 0.5 }).collect();
            let events = drift_detector(&stream, window, 0.2).unwrap();
            assert_eq!(events.len(), 1, "window {window}, change {change}: {events:?}");
            assert!(events[0] >= change && events[0] < change + 2 * window);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn disagreement_bounded_by_drift(
        seed in any::<u64>(),
        delta in 0.0f64..0.3,
        t in 0usize..60,
        kind in prop_oneof![Just(ConceptKind::RotatingHalfspace), Just(ConceptKind::ShiftingThreshold)],
    ) {
        let concept = make_concept(kind, delta, seed).unwrap();
        let d = disagreement(&concept, t, 20_000, seed ^ 1);
        prop_assert!(d <= delta + 0.015, "{d} > {delta}");
    }

    #[test]
    fn detector_silent_below_threshold(
        stream in proptest::collection::vec(0.0f64..0.15, 0..200),
        window in 2usize..20,
    ) {
        prop_assert!(drift_detector(&stream, window, 0.2).unwrap().is_empty());
    }
}
