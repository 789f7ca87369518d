//! Compare all four methods on the time-invariant and time-varying datasets.
//!
//!     cargo run --release --example compare_methods [ti|tv|both] [repetitions]

use std::time::Instant;

use semiadapt::eval::{run_experiment, ExperimentConfig};

fn main() -> semiadapt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("both");
    let repetitions = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut configs = Vec::new();
    if which != "tv" {
        configs.push(ExperimentConfig {
            repetitions,
            ..ExperimentConfig::ti(0)
        });
    }
    if which != "ti" {
        configs.push(ExperimentConfig {
            repetitions,
            ..ExperimentConfig::tv(0)
        });
    }

    for cfg in &configs {
        let start = Instant::now();
        let report = run_experiment(cfg)?;
        println!("== {} ({:.1?})", report.name, start.elapsed());
        for t in &report.training {
            println!(
                "  trained {:<10} {}  loss {:.4e} -> {:.4e}",
                t.network, t.architecture, t.first_epoch_loss, t.final_epoch_loss
            );
        }
        println!(
            "  {:<16} {:>14} {:>14} {:>9}",
            "method", "MSEE (native)", "MSEE (cm^2)", "coverage"
        );
        for m in &report.methods {
            println!(
                "  {:<16} {:>14.6} {:>14.3} {:>9.3}",
                m.label, m.msee.pooled, m.msee.pooled_cm2, m.coverage
            );
        }
        for l in &report.latency {
            if l.samples > 0 {
                println!(
                    "  latency {:<16} median {:>9.0} ns  p95 {:>9.0} ns  (uncertainty {:.0} ns)",
                    l.method.label(),
                    l.median_ns,
                    l.p95_ns,
                    l.uncertainty_mean_ns
                );
            }
        }
    }
    Ok(())
}
