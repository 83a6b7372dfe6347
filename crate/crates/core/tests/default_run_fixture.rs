//! Frozen outputs of the default 40 x 6 synthetic run. Any change to the
//! generator, preprocessing, solver or protocol shows up here first.

use fuseid_core::evaluation::{
    run_experiment, synthesize_dataset, ExperimentConfig, SplitPolicy, SynthSpec,
};

#[test]
fn default_run_is_frozen() {
    let dataset = synthesize_dataset(&SynthSpec::default()).unwrap();
    let result =
        run_experiment(&dataset, SplitPolicy::Halves, &ExperimentConfig::default()).unwrap();
    let t = &result.test;
    let sys = &result.system;

    assert_eq!(t.face.eer, 0.004166666666666667);
    assert_eq!(t.palm.eer, 0.01987179487179487);
    assert_eq!(t.fused.eer, 0.001282051282051282);
    assert_eq!(sys.face_report.components, 106);
    assert_eq!(sys.palm_report.components, 106);
    assert!((sys.policy.alpha() - 1.8571428571428572).abs() <= 1e-12);
    assert!((sys.policy.beta() - 0.14285714285714285).abs() <= 1e-12);
    assert!((sys.policy.threshold() - 0.6821474520074189).abs() <= 1e-12);

    // the synthetic set is meant to be informative but not trivially separable
    assert!(t.face.eer < 0.10 && t.palm.eer < 0.10);
    assert!(t.fused.eer < t.face.eer.min(t.palm.eer));
}
