mod common;

use common::{
    max_fd_rel_error, mean_loss, naive_forward, random_model, random_sample, random_vec, rng,
};
use semiadapt::datagen::{gen_ti, make_samples, Sample, TiParams};
use semiadapt::mlp::{init_mlp, train, MlpConfig, MlpModel, TrainHyperparams};
use semiadapt::Error;

#[test]
fn forward_matches_loop_oracle() {
    let mut r = rng(10);
    for case in 0..20 {
        let model = random_model(&mut r, 5, &[7, 4], 3);
        let x = random_vec(&mut r, 5, 2.0);
        let got = model.forward(&x).unwrap();
        let want = naive_forward(&model, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "case {case}: {g} vs {w}");
        }
    }
}

#[test]
fn relu_clamps_negative_pre_activation() {
    // one hidden unit that copies input 0; output = hidden
    let text = r#"{"config":{"input_dim":2,"hidden_dims":[1],"output_dim":1},
        "layers":[{"weights":[[1.0,0.0]],"bias":[0.0]},{"weights":[[1.0]],"bias":[0.0]}]}"#;
    let model = MlpModel::from_json(text).unwrap();
    assert_eq!(model.forward(&[-3.0, 5.0]).unwrap()[0], 0.0);
    assert_eq!(model.forward(&[2.5, 5.0]).unwrap()[0], 2.5);
}

#[test]
fn hand_written_2_2_1_file() {
    // h = relu(U x + c), y = w . h + b
    let text = r#"{
        "config": {"input_dim": 2, "hidden_dims": [2], "output_dim": 1, "seed": 0},
        "layers": [
            {"weights": [[1.0, -1.0], [0.5, 2.0]], "bias": [0.0, -1.0]},
            {"weights": [[3.0, -2.0]], "bias": [0.25]}
        ]
    }"#;
    let model = MlpModel::from_json(text).unwrap();
    // x = (1, 2): U x + c = (-1, 3.5) -> relu (0, 3.5) -> 3*0 - 2*3.5 + 0.25
    assert_eq!(model.forward(&[1.0, 2.0]).unwrap()[0], -6.75);
    // x = (2, 0): (2, 0) -> relu (2, 0) -> 6 + 0.25
    assert_eq!(model.forward(&[2.0, 0.0]).unwrap()[0], 6.25);
    let phi = model.hidden_features(&[1.0, 2.0]).unwrap();
    assert_eq!(phi.as_slice(), &[0.0, 3.5, 1.0]);

    let back = MlpModel::from_json(&model.to_json()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn malformed_model_files_name_the_field() {
    let base = r#"{"config":{"input_dim":2,"hidden_dims":[2],"output_dim":1},
        "layers":[{"weights":[[1.0,0.0],[0.0,1.0]],"bias":[0.0,0.0]},{"weights":[[1.0,1.0]],"bias":[0.0]}]}"#;
    assert!(MlpModel::from_json(base).is_ok());

    let short_row = base.replace("[[1.0,0.0],[0.0,1.0]]", "[[1.0,0.0],[0.0]]");
    match MlpModel::from_json(&short_row) {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "layers[0].weights[1]"),
        other => panic!("expected parse error, got {other:?}"),
    }
    let extra_row = base.replace("[[1.0,1.0]]", "[[1.0,1.0],[2.0,2.0]]");
    match MlpModel::from_json(&extra_row) {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "layers[1].weights"),
        other => panic!("expected parse error, got {other:?}"),
    }
    let bad_bias = base.replace("\"bias\":[0.0]}", "\"bias\":[0.0,1.0]}");
    assert!(matches!(
        MlpModel::from_json(&bad_bias),
        Err(Error::Parse { .. })
    ));
    assert!(MlpModel::from_json("{\"config\":").is_err());
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng(20);
    for case in 0..20 {
        let model = random_model(&mut r, 5, &[6], 3);
        let batch: Vec<Sample> = (0..4).map(|_| random_sample(&mut r, 5, 3)).collect();
        let (loss, grads) = model.loss_and_gradients(&batch).unwrap();
        assert!((loss - mean_loss(&model, &batch)).abs() < 1e-12);
        let worst = max_fd_rel_error(&model, &batch, &grads);
        assert!(worst < 1e-4, "case {case}: relative error {worst:e}");
    }
}

#[test]
fn duplicated_batch_has_same_loss_and_gradients() {
    let mut r = rng(30);
    let model = random_model(&mut r, 4, &[5], 2);
    let batch: Vec<Sample> = (0..3).map(|_| random_sample(&mut r, 4, 2)).collect();
    let doubled: Vec<Sample> = batch.iter().chain(&batch).cloned().collect();
    let (l1, g1) = model.loss_and_gradients(&batch).unwrap();
    let (l2, g2) = model.loss_and_gradients(&doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    assert!((g1.max_abs() - g2.max_abs()).abs() < 1e-14);
}

#[test]
fn init_shapes_and_errors() {
    let m = init_mlp(&MlpConfig::standard(1)).unwrap();
    assert_eq!(m.layers()[0].weights.shape(), (40, 9));
    assert_eq!(m.layers()[1].weights.shape(), (9, 40));
    assert_eq!(m, init_mlp(&MlpConfig::standard(1)).unwrap());
    let mut cfg = MlpConfig::standard(1);
    cfg.hidden_dims.clear();
    assert!(init_mlp(&cfg).is_err());
}

#[test]
fn single_point_training_descends_and_zero_epochs_fail() {
    let mut r = rng(40);
    let model = random_model(&mut r, 3, &[8], 2);
    let data = vec![random_sample(&mut r, 3, 2)];
    let hp = TrainHyperparams {
        learning_rate: 0.01,
        epochs: 200,
        ..TrainHyperparams::default()
    };
    let (trained, history) = train(&model, &data, &hp).unwrap();
    assert_eq!(history.len(), 200);
    let (after, _) = trained.loss_and_gradients(&data).unwrap();
    assert!(after < history[0]);

    let zero = TrainHyperparams {
        epochs: 0,
        ..TrainHyperparams::default()
    };
    assert!(matches!(train(&model, &data, &zero), Err(Error::Config(_))));
}

#[test]
fn ti_training_drops_loss_tenfold() {
    let mut samples = Vec::new();
    for class in 0..2 {
        for traj in gen_ti(&TiParams::motion(class, 1000 * class as u64))
            .unwrap()
            .iter()
            .take(40)
        {
            samples.extend(make_samples(traj, 3, 3, false));
        }
    }
    let model = init_mlp(&MlpConfig::standard(0)).unwrap();
    let (_, history) = train(&model, &samples, &TrainHyperparams::default()).unwrap();
    let ratio = history[0] / history[history.len() - 1];
    println!(
        "TI training: first epoch {:.4}, last epoch {:.4}, ratio {ratio:.1}",
        history[0], history[99]
    );
    assert!(ratio >= 10.0, "loss ratio {ratio}");
}
