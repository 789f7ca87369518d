//! Adapt the output layer of a network whose true output layer has drifted.
//!
//! The stream is produced by a copy of the network with a perturbed output
//! layer; RLS recovers it from the hidden features alone.
//!
//!     cargo run --example rls_adaptation

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiadapt::mlp::{init_mlp, MlpConfig};
use semiadapt::rls::{init_rls, RlsConfig};

fn main() -> semiadapt::Result<()> {
    let offline = init_mlp(&MlpConfig::standard(3))?;
    let mut truth = offline.clone();
    let mut layer = truth.output_layer_augmented();
    layer.add_scalar_mut(0.05);
    layer[(0, 40)] += 0.5; // shift the first output's bias
    truth.set_output_layer_augmented(&layer)?;

    let mut rls = init_rls(&offline, RlsConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..=200 {
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi = offline.hidden_features(&x)?;
        let y: DVector<f64> = truth.forward(&x)?;
        let step = rls.update(&phi, &y)?;
        if k % 40 == 0 {
            let gap = (rls.output_layer() - &layer).amax();
            println!(
                "k={k:>3}  |a-priori error| {:.2e}  max parameter gap {:.2e}",
                step.apriori_error.amax(),
                gap
            );
        }
    }
    Ok(())
}
