//! Train the 9-40-9 offline network on time-invariant trajectories and save it.
//!
//!     cargo run --release --example train_offline [model.json]

use semiadapt::datagen::{gen_ti, make_samples, TiParams};
use semiadapt::mlp::{init_mlp, train, MlpConfig, MlpModel, TrainHyperparams};

fn main() -> semiadapt::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("semiadapt-model.json")
            .display()
            .to_string()
    });

    let mut samples = Vec::new();
    for class in 0..2 {
        for traj in gen_ti(&TiParams::motion(class, 1000 * class as u64))?
            .iter()
            .take(40)
        {
            samples.extend(make_samples(traj, 3, 3, false));
        }
    }
    println!("{} training samples", samples.len());

    let model = init_mlp(&MlpConfig::standard(0))?;
    let (model, history) = train(&model, &samples, &TrainHyperparams::default())?;
    for (epoch, loss) in history.iter().enumerate().step_by(10) {
        println!("epoch {epoch:>3}  loss {loss:.5}");
    }
    println!("final     loss {:.5}", history[history.len() - 1]);

    model.save(&path)?;
    let reloaded = MlpModel::load(&path)?;
    assert_eq!(reloaded, model);
    println!("saved to {path} (round trip exact)");
    Ok(())
}
