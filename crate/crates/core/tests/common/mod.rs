#![allow(dead_code)]

pub mod invariants;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiadapt::datagen::Sample;
use semiadapt::mlp::{Layer, MlpConfig, MlpGradients, MlpModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random model with every weight and bias drawn uniformly from `±scale`.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    input: usize,
    hidden: &[usize],
    output: usize,
) -> MlpModel {
    let config = MlpConfig {
        input_dim: input,
        hidden_dims: hidden.to_vec(),
        output_dim: output,
        seed: 0,
    };
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let layers = dims
        .windows(2)
        .map(|w| Layer {
            weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
            bias: DVector::from_fn(w[1], |_, _| rng.random_range(-0.5..0.5)),
        })
        .collect();
    MlpModel::from_layers(config, layers).unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Sample {
    Sample::from_network_input(random_vec(rng, input, 1.0), random_vec(rng, output, 1.0), 0)
}

/// Feature vector of length `p` with non-negative entries and a trailing 1.
pub fn random_features(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    let mut v = DVector::from_fn(p, |_, _| rng.random_range(0.0..2.0));
    v[p - 1] = 1.0;
    v
}

/// Materialize the block-diagonal regressor: `blocks` copies of `phi^T`.
pub fn dense_regressor(phi: &DVector<f64>, blocks: usize) -> DMatrix<f64> {
    let p = phi.len();
    let mut m = DMatrix::zeros(blocks, blocks * p);
    for d in 0..blocks {
        for j in 0..p {
            m[(d, d * p + j)] = phi[j];
        }
    }
    m
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        m.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    m
}

/// Random symmetric PSD matrix `A A^T`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose()
}

/// Outcome of [`stationary_run`].
pub struct StationaryOutcome {
    /// Fraction of true positions inside their 95% ellipsoid.
    pub coverage: f64,
    /// Per output coordinate: tail mean squared a-priori error over tail mean predicted variance.
    pub consistency: Vec<f64>,
}

/// Stream with a fixed true output layer and known Gaussian noise, adapted by
/// RLS from the true parameters with the drift term disabled.
pub fn stationary_run(seed: u64, steps: usize, noise_sd: f64) -> StationaryOutcome {
    use nalgebra::Vector3;
    use rand_distr::{Distribution, Normal};
    use semiadapt::rls::{init_rls, RlsConfig};
    use semiadapt::uncertainty::{error_ellipsoids, UncertaintyConfig, UncertaintyState};

    let mut r = rng(seed);
    let model = random_model(&mut r, 9, &[40], 9);
    let truth_state = init_rls(&model, RlsConfig::default()).unwrap();
    let mut rls = truth_state.clone();
    let cfg = UncertaintyConfig {
        drift_compensation: false,
        ..UncertaintyConfig::default()
    };
    let mut u = UncertaintyState::new(9, 41, cfg).unwrap();
    u.set_noise_var(vec![noise_sd * noise_sd; 9]).unwrap();
    let noise = Normal::new(0.0, noise_sd).unwrap();

    let (mut inside, mut total) = (0usize, 0usize);
    let tail = steps / 2;
    let mut sq = [0.0; 9];
    let mut predicted = [0.0; 9];
    for k in 0..steps {
        let x = random_vec(&mut r, 9, 1.0);
        let phi = model.hidden_features(&x).unwrap();
        let y = truth_state
            .predict(&phi)
            .unwrap()
            .map(|v| v + noise.sample(&mut r));
        let mean = rls.predict(&phi).unwrap();
        let msee = u.propagate_state_msee(&phi).unwrap();
        for e in error_ellipsoids(&mean, &msee, 0.95)
            .unwrap()
            .iter()
            .enumerate()
        {
            let (m, ell) = e;
            let p = Vector3::new(y[3 * m], y[3 * m + 1], y[3 * m + 2]);
            inside += usize::from(ell.contains(&p));
            total += 1;
        }
        if k >= tail {
            for d in 0..9 {
                sq[d] += (y[d] - mean[d]).powi(2);
                predicted[d] += msee[(d, d)];
            }
        }
        let before = rls.theta_hat().clone();
        rls.update(&phi, &y).unwrap();
        u.update_param_msee(&before, &rls, &phi, &msee).unwrap();
    }
    StationaryOutcome {
        coverage: inside as f64 / total as f64,
        consistency: sq.iter().zip(&predicted).map(|(a, b)| a / b).collect(),
    }
}

/// Forward pass written with plain loops over the weight storage.
pub fn naive_forward(model: &MlpModel, input: &[f64]) -> Vec<f64> {
    let mut act = input.to_vec();
    let n = model.layers().len();
    for (li, layer) in model.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.shape();
        let mut next = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = layer.bias[r];
            for (c, a) in act.iter().enumerate().take(cols) {
                acc += layer.weights[(r, c)] * a;
            }
            next.push(if li + 1 < n { acc.max(0.0) } else { acc });
        }
        act = next;
    }
    act
}

pub fn mean_loss(model: &MlpModel, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| {
            naive_forward(model, s.network_input())
                .iter()
                .zip(&s.target)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Largest relative gap between backprop and central differences (h = 1e-5)
/// over every weight and bias.
pub fn max_fd_rel_error(model: &MlpModel, batch: &[Sample], grads: &MlpGradients) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, layer) in model.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.shape();
        for r in 0..rows {
            for c in 0..=cols {
                let bump = |delta: f64| {
                    let mut layers = model.layers().to_vec();
                    if c < cols {
                        layers[li].weights[(r, c)] += delta;
                    } else {
                        layers[li].bias[r] += delta;
                    }
                    mean_loss(
                        &MlpModel::from_layers(model.config().clone(), layers).unwrap(),
                        batch,
                    )
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let g = if c < cols {
                    grads.layers[li].weights[(r, c)]
                } else {
                    grads.layers[li].bias[r]
                };
                worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1e-3));
            }
        }
    }
    worst
}

/// Regularized least squares per block: (F0^-1 + sum phi phi^T) theta = F0^-1 theta0 + sum phi y.
pub fn batch_solution(
    theta0: &DVector<f64>,
    f0: f64,
    phis: &[DVector<f64>],
    ys: &[f64],
) -> DVector<f64> {
    let p = theta0.len();
    let mut a = DMatrix::identity(p, p) / f0;
    let mut b = theta0 / f0;
    for (phi, &y) in phis.iter().zip(ys) {
        a += phi * phi.transpose();
        b += phi * y;
    }
    a.lu().solve(&b).expect("normal equations are nonsingular")
}
