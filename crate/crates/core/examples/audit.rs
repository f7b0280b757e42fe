//! Simulation with a dissipation audit: certified gains pass, negated gains
//! with the same storage fail.

use qsrnet::fixtures;
use qsrnet::pipeline::{run_synthesis, PipelineOptions};
use qsrnet::sim::{audit_dissipation, integrate, Disturbance, Scenario};

fn main() -> qsrnet::Result<()> {
    let net = fixtures::t3_passive();
    let report = run_synthesis(&net, &PipelineOptions::default())?;
    let sc = Scenario {
        comment: None,
        horizon: 5.0,
        step: 1e-3,
        x0: None,
        disturbance: Disturbance::PiecewiseConstant { amplitude: 1.0, hold: 0.1 },
        seed: 11,
        initial_modes: None,
        switching: vec![],
        output_stride: 1,
    };

    let mut flipped = report.clone();
    for g in &mut flipped.gains {
        g.k = -g.k.clone();
    }
    for (label, r) in [("certified", &report), ("negated", &flipped)] {
        let tr = integrate(&net, r, &sc)?;
        let a = audit_dissipation(&tr, 10);
        println!(
            "{label:<9} min slack {:+.4e} on [{:.2}, {:.2}]  tolerance {:.2e}  pass = {}",
            a.min_slack, a.worst_start, a.worst_end, a.tolerance, a.pass
        );
    }
    Ok(())
}
