//! Runs the default synthetic experiment and prints the summary table.

use std::time::Instant;

use fuseid_core::evaluation::{
    run_experiment, synthesize_dataset, ExperimentConfig, SplitPolicy, SynthSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = Instant::now();
    let dataset = synthesize_dataset(&SynthSpec::default())?;
    let result = run_experiment(&dataset, SplitPolicy::Halves, &ExperimentConfig::default())?;
    print!("{}", result.summary_table());
    let t = &result.test;
    println!(
        "EER face={:.4} palm={:.4} fused={:.4}  K face={} palm={}  alpha={:.4} beta={:.4} tau={:.4}",
        t.face.eer,
        t.palm.eer,
        t.fused.eer,
        result.system.face_report.components,
        result.system.palm_report.components,
        result.system.policy.alpha(),
        result.system.policy.beta(),
        result.system.policy.threshold(),
    );
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
