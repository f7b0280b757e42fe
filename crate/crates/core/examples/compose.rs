//! Appending a subsystem to a certified network solves only the new node.

use qsrnet::fixtures;
use qsrnet::model::NewSubsystemFile;
use qsrnet::pipeline::{run_compositional, run_synthesis, PipelineOptions};

fn main() -> qsrnet::Result<()> {
    let opts = PipelineOptions::default();
    let base = fixtures::t3_passive();
    let before = run_synthesis(&base, &opts)?;
    println!("base certified = {} with {} gain blocks", before.certified, before.gains.len());

    let (subsystem, coupling, supply) = fixtures::sigma4_parts();
    let add = NewSubsystemFile { subsystem, coupling, supply, comment: None };
    let (extended, after) = run_compositional(&base, &before, &add, &opts)?;
    println!("extended network has {} subsystems", extended.len());
    println!("solved {:?}, certified = {}", after.solved, after.certified);
    let kept = before.gains.iter().all(|g| after.gains.contains(g));
    println!("earlier gains unchanged: {kept}");
    Ok(())
}
