//! Distributed analysis without control: a decoupled passive network
//! certifies, while the three-node benchmark fails at its first node.

use qsrnet::fixtures;
use qsrnet::pipeline::{run_analysis, PipelineOptions};

fn main() -> qsrnet::Result<()> {
    let opts = PipelineOptions::default();
    for (label, net) in [("decoupled", fixtures::decoupled_passive(3)), ("t3", fixtures::t3_passive())] {
        let report = run_analysis(&net, &opts)?;
        println!("{label}: certified = {}", report.certified);
        for st in &report.steps {
            println!("  {:<8} {:?} margin {:?}", st.name, st.status, st.margin);
        }
    }
    Ok(())
}
