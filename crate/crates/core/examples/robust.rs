//! Synthesis that tolerates additive perturbations of each state matrix.

use qsrnet::fixtures;
use qsrnet::pipeline::{run_synthesis, PipelineOptions};

fn main() -> qsrnet::Result<()> {
    for eps in [0.0, 0.05, 0.2, 1.0] {
        let mut opts = PipelineOptions::default();
        opts.step.robust_eps = eps;
        let report = run_synthesis(&fixtures::t3_passive(), &opts)?;
        let margins: Vec<String> = report.steps.iter().map(|s| format!("{:?}", s.margin)).collect();
        println!("robust eps {eps:<5} certified = {:<5} margins {}", report.certified, margins.join(" "));
    }
    Ok(())
}
