//! Pick the identifier's gradient step on held-out trials, then compare it
//! against RLS-PAA with the tuned value.
//!
//!     cargo run --release --example tune_identifier

use semiadapt::eval::{
    run_experiment, tune_identifier_held_out, EvalMethod, ExperimentConfig, IDENTIFIER_GRID,
};

fn main() -> semiadapt::Result<()> {
    let mut cfg = ExperimentConfig::ti(0);
    let (best, score) = tune_identifier_held_out(&cfg, &IDENTIFIER_GRID)?;
    println!("grid {IDENTIFIER_GRID:?}");
    println!(
        "best step {} (held-out mean squared error {score:.4e})",
        best.step_size
    );

    cfg.identifier = best;
    cfg.methods = vec![EvalMethod::NnWithId, EvalMethod::NnWithRlsPaa];
    let report = run_experiment(&cfg)?;
    for m in &report.methods {
        println!("{:<14} pooled MSEE {:.4} cm^2", m.label, m.msee.pooled_cm2);
    }
    Ok(())
}
