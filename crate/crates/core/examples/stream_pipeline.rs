//! Feed measurements one at a time, as a live tracker would, and emit
//! StepResult JSON lines. Compares the three online methods on one stream.
//!
//!     cargo run --release --example stream_pipeline

use semiadapt::datagen::{gen_ti, make_samples, TiParams};
use semiadapt::io::measurements;
use semiadapt::mlp::{init_mlp, train, MlpConfig, TrainHyperparams};
use semiadapt::pipeline::{Method, Pipeline, PipelineConfig};

fn main() -> semiadapt::Result<()> {
    let trials = gen_ti(&TiParams::motion(1, 9))?;
    let samples: Vec<_> = trials[..40]
        .iter()
        .flat_map(|t| make_samples(t, 3, 3, false))
        .collect();
    let (model, _) = train(
        &init_mlp(&MlpConfig::standard(0))?,
        &samples,
        &TrainHyperparams::default(),
    )?;
    let stream = &trials[45];

    for method in [Method::RlsPaa, Method::Identifier, Method::None] {
        let cfg = PipelineConfig {
            method,
            ..PipelineConfig::default()
        };
        let mut pipeline = Pipeline::new(model.clone(), cfg)?;
        let mut sq = 0.0;
        let mut first = None;
        for m in measurements(stream) {
            if let Some(step) = pipeline.push(m)? {
                sq += step.apriori_error.norm_squared() / step.apriori_error.len() as f64;
                first.get_or_insert_with(|| step.to_json().to_string());
            }
        }
        let c = pipeline.counters();
        println!(
            "{method:<10} steps {:>3}  adaptations {:>3}  mean squared error {:.3e}",
            c.emitted,
            c.adaptations,
            sq / c.emitted as f64
        );
        if method == Method::RlsPaa {
            let line = first.unwrap_or_default();
            println!("  first result: {}...", &line[..line.len().min(160)]);
        }
    }
    Ok(())
}
