use super::{random_features, random_model, random_vec, rng};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use semiadapt::datagen::{gen_ti, gen_tv, TiParams, TvParams};
use semiadapt::pipeline::{run_stream, Measurement, Method, PipelineConfig};
use semiadapt::rls::{RlsConfig, RlsState};
use semiadapt::uncertainty::{project_psd, UncertaintyConfig, UncertaintyState};

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn random_state(seed: u64, blocks: usize, p: usize, cfg: RlsConfig) -> RlsState {
    let mut r = rng(seed);
    let theta: Vec<DVector<f64>> = (0..blocks)
        .map(|_| DVector::from_vec(random_vec(&mut r, p, 1.0)))
        .collect();
    RlsState::from_blocks(&theta, cfg).unwrap()
}

fn stream(seed: u64, len: usize) -> Vec<Measurement> {
    let mut r = rng(seed);
    let mut p = [0.5, 0.5, 0.5];
    (0..len)
        .map(|i| {
            let d = random_vec(&mut r, 3, 0.05);
            for a in 0..3 {
                p[a] += d[a];
            }
            Measurement {
                t: i as f64 * 0.05,
                position: p,
                action: 0,
            }
        })
        .collect()
}

fn config(strategy: u8) -> PipelineConfig {
    PipelineConfig {
        method: [Method::RlsPaa, Method::Identifier, Method::None][strategy as usize % 3],
        ..PipelineConfig::default()
    }
}

/// Cases per property.
pub const CASES: u32 = 128;

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new(config)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub fn gain_stays_symmetric_positive_definite() -> Result<(), String> {
    run(
        (
            any::<u64>(),
            0.9f64..=1.0,
            0.0f64..=2.0,
            0.1f64..1000.0,
            1usize..40,
        ),
        |(seed, lambda1, lambda2, f0, steps)| {
            let cfg = RlsConfig {
                lambda1,
                lambda2,
                f_init_scale: f0,
            };
            let mut state = random_state(seed, 3, 6, cfg);
            let mut r = rng(seed ^ 1);
            for _ in 0..steps {
                let phi = random_features(&mut r, 6);
                let y = DVector::from_vec(random_vec(&mut r, 3, 5.0));
                state.update(&phi, &y).unwrap();
                let f = state.gain();
                prop_assert!(asymmetry(f) < 1e-10 * (1.0 + f.amax()));
                prop_assert!(f.clone().cholesky().is_some());
            }
            Ok(())
        },
    )
}

pub fn information_form_identity() -> Result<(), String> {
    run(
        (any::<u64>(), 0.95f64..=1.0, 0.5f64..10.0, 0usize..10),
        |(seed, lambda1, f0, warmup)| {
            let cfg = RlsConfig {
                lambda1,
                lambda2: 1.0,
                f_init_scale: f0,
            };
            let mut state = random_state(seed, 2, 5, cfg);
            let mut r = rng(seed ^ 2);
            for _ in 0..=warmup {
                let phi = random_features(&mut r, 5);
                let inv_before = state.gain().clone().try_inverse().unwrap();
                state
                    .update(&phi, &DVector::from_vec(random_vec(&mut r, 2, 1.0)))
                    .unwrap();
                let want = inv_before * lambda1 + &phi * phi.transpose();
                let got = state.gain().clone().try_inverse().unwrap();
                prop_assert!((&got - &want).norm() <= 1e-6 * want.norm());
            }
            Ok(())
        },
    )
}

pub fn blocks_never_couple() -> Result<(), String> {
    run(
        (any::<u64>(), 1usize..20, 0usize..3),
        |(seed, steps, touched)| {
            let mut a = random_state(seed, 3, 4, RlsConfig::default());
            let mut b = a.clone();
            let mut r = rng(seed ^ 3);
            for _ in 0..steps {
                let phi = random_features(&mut r, 4);
                let y = DVector::from_vec(random_vec(&mut r, 3, 1.0));
                let mut y2 = y.clone();
                y2[touched] += 10.0;
                a.update(&phi, &y).unwrap();
                b.update(&phi, &y2).unwrap();
            }
            for d in 0..3 {
                let same = (a.block(d) - b.block(d)).amax() == 0.0;
                prop_assert_eq!(same, d != touched);
            }
            Ok(())
        },
    )
}

pub fn projection_yields_psd() -> Result<(), String> {
    run(
        (any::<u64>(), 1usize..12, -5.0f64..5.0),
        |(seed, n, shift)| {
            let mut r = rng(seed);
            let a = DMatrix::from_vec(n, n, random_vec(&mut r, n * n, 1.0));
            let mut m = (&a + a.transpose()) * 0.5 + DMatrix::identity(n, n) * shift;
            let was_psd = min_eig(&m) >= 0.0;
            let clipped = project_psd(&mut m);
            prop_assert!(asymmetry(&m) == 0.0);
            prop_assert!(min_eig(&m) >= -1e-10 * (1.0 + m.amax()));
            if was_psd {
                prop_assert!(!clipped);
            }
            Ok(())
        },
    )
}

pub fn msee_matrices_symmetric_and_psd() -> Result<(), String> {
    run(
        (any::<u64>(), 1usize..25, any::<bool>()),
        |(seed, steps, drift)| {
            let cfg = UncertaintyConfig {
                drift_compensation: drift,
                ..UncertaintyConfig::default()
            };
            let mut u = UncertaintyState::new(3, 5, cfg).unwrap();
            let mut rls = random_state(seed, 3, 5, RlsConfig::default());
            let mut r = rng(seed ^ 4);
            for _ in 0..steps {
                let phi = random_features(&mut r, 5);
                let x_xx = u.propagate_state_msee(&phi).unwrap();
                prop_assert!(asymmetry(&x_xx) == 0.0);
                prop_assert!(min_eig(&x_xx) >= -1e-10 * (1.0 + x_xx.amax()));
                let before = rls.theta_hat().clone();
                let step = rls
                    .update(&phi, &DVector::from_vec(random_vec(&mut r, 3, 2.0)))
                    .unwrap();
                u.update_param_msee(&before, &rls, &phi, &x_xx).unwrap();
                u.record_residual(&step.apriori_error).unwrap();
                for x in u.x_theta_theta() {
                    prop_assert!(asymmetry(x) == 0.0);
                    prop_assert!(min_eig(x) >= -1e-10 * (1.0 + x.amax()));
                }
            }
            Ok(())
        },
    )
}

pub fn generators_are_deterministic() -> Result<(), String> {
    run(
        (any::<u64>(), 0usize..2, 1usize..4),
        |(seed, class, trials)| {
            let ti = TiParams {
                trials,
                ..TiParams::motion(class, seed)
            };
            prop_assert_eq!(gen_ti(&ti).unwrap(), gen_ti(&ti).unwrap());
            let tv = TvParams {
                trials,
                duration: 1.0,
                ..TvParams::motion(class, seed)
            };
            prop_assert_eq!(gen_tv(&tv).unwrap(), gen_tv(&tv).unwrap());
            Ok(())
        },
    )
}

pub fn pipeline_is_deterministic() -> Result<(), String> {
    run((any::<u64>(), 0u8..3, 6usize..30), |(seed, method, len)| {
        let model = random_model(&mut rng(seed), 9, &[6], 9);
        let s = stream(seed, len);
        let a = run_stream(&model, s.clone(), &config(method)).unwrap();
        let b = run_stream(&model, s, &config(method)).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.prediction, &y.prediction);
            prop_assert_eq!(&x.apriori_error, &y.apriori_error);
        }
        Ok(())
    })
}

pub fn prefix_results_do_not_depend_on_later_data() -> Result<(), String> {
    run(
        (any::<u64>(), 0u8..3, 8usize..30, 0.0f64..1.0),
        |(seed, method, len, cut)| {
            let model = random_model(&mut rng(seed), 9, &[6], 9);
            let full = stream(seed, len);
            let k = ((len as f64 * cut) as usize).max(1);
            let head = run_stream(&model, full[..k].to_vec(), &config(method)).unwrap();
            let all = run_stream(&model, full, &config(method)).unwrap();
            prop_assert!(head.len() <= all.len());
            for (x, y) in head.iter().zip(&all) {
                prop_assert_eq!(x.k, y.k);
                prop_assert_eq!(&x.prediction, &y.prediction);
                prop_assert_eq!(&x.truth, &y.truth);
            }
            Ok(())
        },
    )
}

pub type Check = fn() -> Result<(), String>;

/// Every property with its name.
pub const SUITE: &[(&str, Check)] = &[
    (
        "gain_stays_symmetric_positive_definite",
        gain_stays_symmetric_positive_definite,
    ),
    ("information_form_identity", information_form_identity),
    ("blocks_never_couple", blocks_never_couple),
    ("projection_yields_psd", projection_yields_psd),
    (
        "msee_matrices_symmetric_and_psd",
        msee_matrices_symmetric_and_psd,
    ),
    ("generators_are_deterministic", generators_are_deterministic),
    ("pipeline_is_deterministic", pipeline_is_deterministic),
    (
        "prefix_results_do_not_depend_on_later_data",
        prefix_results_do_not_depend_on_later_data,
    ),
];
