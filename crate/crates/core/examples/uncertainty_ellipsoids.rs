//! Online predictions with 95% error ellipsoids and their empirical coverage.
//!
//!     cargo run --release --example uncertainty_ellipsoids

use semiadapt::datagen::{gen_ti, make_samples, TiParams};
use semiadapt::io::measurements;
use semiadapt::mlp::{init_mlp, train, MlpConfig, TrainHyperparams};
use semiadapt::pipeline::{Pipeline, PipelineConfig};

fn main() -> semiadapt::Result<()> {
    let trials = gen_ti(&TiParams::motion(0, 5))?;
    let (train_set, test_set) = trials.split_at(40);
    let samples: Vec<_> = train_set
        .iter()
        .flat_map(|t| make_samples(t, 3, 3, false))
        .collect();
    let (model, _) = train(
        &init_mlp(&MlpConfig::standard(0))?,
        &samples,
        &TrainHyperparams::default(),
    )?;

    let mut pipeline = Pipeline::new(model, PipelineConfig::default())?;
    let (mut inside, mut total) = (0usize, 0usize);
    for (i, traj) in test_set.iter().enumerate() {
        pipeline.begin_trial();
        for m in measurements(traj) {
            let Some(step) = pipeline.push(m)? else {
                continue;
            };
            let flags = step.inside_flags();
            inside += flags.iter().filter(|&&f| f).count();
            total += flags.len();
            if i == 0 && step.k % 10 == 0 {
                let e = &step.prediction.ellipsoids[0];
                let (axes, _) = e.semi_axes();
                println!(
                    "k={:>2}  one-step mean ({:.3}, {:.3}, {:.3})  semi-axes ({:.2e}, {:.2e}, {:.2e})  inside {}",
                    step.k,
                    e.center[0],
                    e.center[1],
                    e.center[2],
                    axes[0],
                    axes[1],
                    axes[2],
                    flags[0]
                );
            }
        }
    }
    println!(
        "coverage of 95% ellipsoids: {inside}/{total} = {:.3}",
        inside as f64 / total as f64
    );
    println!("PSD clips: {}", pipeline.uncertainty().psd_clips());
    Ok(())
}
