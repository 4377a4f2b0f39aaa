//! Model-level contracts: encoder behavior across kinds, conditioning rules,
//! gradient flow, variable context sizes, and checkpointing.

use iida_core::datastore::{DatasetCollection, Split, SplitCounts};
use iida_core::envsim::{Family, Transition};
use iida_core::error::CoreError;
use iida_core::model::{
    evaluate_mse, train, DataStats, EncoderKind, Model, ModelSpec, TrainConfig,
};
use iida_core::numcore::ParamId;
use iida_core::rng::Prng;

fn small_spec(family: Family, encoder: EncoderKind, context_n: usize) -> ModelSpec {
    let mut spec = ModelSpec::defaults(family, encoder, context_n);
    spec.predictor_hidden = vec![32, 32];
    spec.avg_hidden = 32;
    spec.rnn_hidden = 16;
    spec.rnn_layers = 2;
    spec.tfm_width = 12;
    spec.tfm_heads = 3;
    spec
}

fn toy_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let family = Family::MultiStep;
    let params = family.nominal_params();
    let mut rng = Prng::seed_from(seed);
    (0..n)
        .map(|_| {
            let state = family.sample_start_state(&mut rng);
            let action = family.sample_action(&mut rng);
            let next_state = params.step(&state, &action).unwrap();
            Transition {
                env_id: 0,
                state,
                action,
                next_state,
            }
        })
        .collect()
}

fn model_of(encoder: EncoderKind) -> Model {
    Model::init(
        small_spec(Family::MultiStep, encoder, 4),
        DataStats::identity(Family::MultiStep),
        9,
    )
    .unwrap()
}

#[test]
fn empty_context_yields_the_no_context_vector() {
    for encoder in [EncoderKind::Avg, EncoderKind::Rnn, EncoderKind::Tfm] {
        let model = model_of(encoder);
        let z = model.encode(&[]).unwrap();
        assert_eq!(z, vec![0.0; model.spec.latent_dim], "{}", encoder.name());
    }
}

#[test]
fn avg_of_identical_tuples_equals_single_tuple() {
    let model = model_of(EncoderKind::Avg);
    let ts = toy_transitions(1, 3);
    let one = model.encode(&[&ts[0]]).unwrap();
    let five = model.encode(&[&ts[0]; 5]).unwrap();
    for (a, b) in one.iter().zip(&five) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn avg_latent_is_permutation_invariant() {
    let model = model_of(EncoderKind::Avg);
    let ts = toy_transitions(6, 4);
    let fwd: Vec<&Transition> = ts.iter().collect();
    let mut rev = fwd.clone();
    rev.reverse();
    let a = model.encode(&fwd).unwrap();
    let b = model.encode(&rev).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn tfm_latent_is_permutation_invariant_to_1e9() {
    let model = model_of(EncoderKind::Tfm);
    let ts = toy_transitions(7, 5);
    let fwd: Vec<&Transition> = ts.iter().collect();
    let perm: Vec<&Transition> = [3usize, 6, 0, 2, 5, 1, 4].iter().map(|&i| &ts[i]).collect();
    let a = model.encode(&fwd).unwrap();
    let b = model.encode(&perm).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let denom = x.abs().max(1.0);
        assert!((x - y).abs() / denom < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn rnn_latent_is_order_sensitive() {
    let model = model_of(EncoderKind::Rnn);
    let ts = toy_transitions(5, 6);
    let fwd: Vec<&Transition> = ts.iter().collect();
    let mut rev = fwd.clone();
    rev.reverse();
    let a = model.encode(&fwd).unwrap();
    let b = model.encode(&rev).unwrap();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-10, "rnn encoder unexpectedly order-invariant");
}

#[test]
fn encode_refuses_contextless_kinds() {
    assert!(model_of(EncoderKind::None).encode(&[]).is_err());
    assert!(model_of(EncoderKind::Explicit).encode(&[]).is_err());
}

#[test]
fn explicit_conditioning_is_the_normalized_truth() {
    let model = model_of(EncoderKind::Explicit);
    let params = Family::MultiStep.nominal_params();
    let z = model.conditioning(&[], Some(&params)).unwrap();
    assert_eq!(z, params.normalized());
    // and it fails without the ground truth
    assert!(model.conditioning(&[], None).is_err());
}

#[test]
fn zeroed_head_predicts_its_bias() {
    let mut model = model_of(EncoderKind::None);
    // zero the output layer weights, set its bias to a marker value
    for i in 0..model.params.len() {
        let id = ParamId(i);
        let name = model.params.name(id).to_string();
        if name == "pred.w2" {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        if name == "pred.b2" {
            model.params.get_mut(id).data_mut().fill(0.25);
        }
    }
    let t = &toy_transitions(1, 7)[0];
    let pred = model.predict(&t.state, &t.action, &[]).unwrap();
    // identity stats: raw prediction equals the bias itself
    for v in pred {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn variable_context_size_at_inference() {
    // trained (well, initialized) at N = 4; any N >= 0 must be accepted
    let model = model_of(EncoderKind::Avg);
    let ts = toy_transitions(9, 8);
    for n in [0usize, 1, 3, 9] {
        let ctx: Vec<&Transition> = ts.iter().take(n).collect();
        let z = model.encode(&ctx).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        let pred = model.predict(&ts[0].state, &ts[0].action, &z).unwrap();
        assert!(pred.iter().all(|v| v.is_finite()));
    }
}

fn tiny_linear_collection(seed: u64) -> DatasetCollection {
    DatasetCollection::generate(
        Family::Linear,
        SplitCounts {
            train: 2,
            val: 1,
            test: 1,
        },
        30,
        seed,
    )
    .unwrap()
}

#[test]
fn one_training_step_moves_encoder_and_predictor() {
    let collection = tiny_linear_collection(11);
    let spec = small_spec(Family::Linear, EncoderKind::Avg, 4);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::new(5)
    };
    let before = Model::init(spec.clone(), DataStats::identity(Family::Linear), cfg.seed).unwrap();
    let result = train(spec, &collection, &cfg).unwrap();
    let after = &result.final_model.params;
    let mut enc_changed = false;
    let mut pred_changed = false;
    for i in 0..after.len() {
        let id = ParamId(i);
        if before.params.get(id) != after.get(id) {
            if after.name(id).starts_with("enc") {
                enc_changed = true;
            }
            if after.name(id).starts_with("pred") {
                pred_changed = true;
            }
        }
    }
    assert!(enc_changed, "summarizer parameters did not move");
    assert!(pred_changed, "predictor parameters did not move");
}

#[test]
fn context_separates_predictions_after_training()
{
    // two envs with identical (s, a) and distinct s': after training, the
    // same (s, a) under different environment contexts must predict apart
    let collection = tiny_linear_collection(13);
    let spec = small_spec(Family::Linear, EncoderKind::Avg, 4);
    let result = train(
        spec,
        &collection,
        &TrainConfig {
            epochs: 300,
            ..TrainConfig::new(1)
        },
    )
    .unwrap();
    let model = &result.model;
    let trains = collection.envs_of(Split::Train);
    let (a, b) = (trains[0], trains[1]);
    let target = &a.transitions[0];

    let ctx_a: Vec<&Transition> = a.transitions.iter().skip(1).take(4).collect();
    let ctx_b: Vec<&Transition> = b.transitions.iter().skip(1).take(4).collect();
    let za = model.encode(&ctx_a).unwrap();
    let zb = model.encode(&ctx_b).unwrap();
    let pred_a = model.predict(&target.state, &target.action, &za).unwrap()[0];
    let pred_b = model.predict(&target.state, &target.action, &zb).unwrap()[0];

    let truth_a = a.transitions[0].next_state[0];
    let truth_b = b.transitions[0].next_state[0];
    assert!(
        (pred_a - truth_a).abs() < 0.3 * (truth_a - truth_b).abs(),
        "prediction under context A ({pred_a}) should be near {truth_a}"
    );
    assert!(
        (pred_b - truth_b).abs() < 0.3 * (truth_a - truth_b).abs(),
        "prediction under context B ({pred_b}) should be near {truth_b}"
    );
    assert!((pred_a - pred_b).abs() > 0.5 * (truth_a - truth_b).abs());
}

#[test]
fn untrained_zero_head_mse_equals_target_variance_around_train_mean() {
    let collection = tiny_linear_collection(17);
    let trains = collection.envs_of(Split::Train);
    let stats = DataStats::fit(&trains, Family::Linear);
    let mut model = Model::init(
        small_spec(Family::Linear, EncoderKind::None, 0),
        stats.clone(),
        3,
    )
    .unwrap();
    for i in 0..model.params.len() {
        let id = ParamId(i);
        if model.params.name(id) == "pred.w2" || model.params.name(id) == "pred.b2" {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
    }
    // the model now always predicts the train mean; its MSE must equal the
    // mean squared deviation of the split's targets from that mean
    let mse = evaluate_mse(&model, &collection, Split::Test, 0, 1).unwrap();
    let test = collection.envs_of(Split::Test);
    let mean = stats.next_state.mean[0];
    let expected: f64 = test
        .iter()
        .flat_map(|e| e.transitions.iter())
        .map(|t| (t.next_state[0] - mean) * (t.next_state[0] - mean))
        .sum::<f64>()
        / test.iter().map(|e| e.transitions.len()).sum::<usize>() as f64;
    assert!((mse - expected).abs() < 1e-9, "{mse} vs {expected}");
}

#[test]
fn checkpoint_roundtrip_preserves_predictions_bit_exactly() {
    let dir = std::env::temp_dir().join("iida-model-ckpt-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");

    let collection = tiny_linear_collection(23);
    let result = train(
        small_spec(Family::Linear, EncoderKind::Avg, 4),
        &collection,
        &TrainConfig {
            epochs: 3,
            ..TrainConfig::new(2)
        },
    )
    .unwrap();
    result.model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(result.model.params, loaded.params);
    assert_eq!(result.model.spec, loaded.spec);
    assert_eq!(result.model.stats, loaded.stats);

    let ts = collection.envs_of(Split::Test)[0];
    let ctx: Vec<&Transition> = ts.transitions.iter().take(4).collect();
    let (z0, z1) = (result.model.encode(&ctx).unwrap(), loaded.encode(&ctx).unwrap());
    assert_eq!(z0, z1);

    // re-saving reproduces the file byte for byte
    let path2 = dir.join("model2.json");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn exploding_update_aborts_with_batch_seed() {
    let collection = tiny_linear_collection(29);
    let spec = small_spec(Family::Linear, EncoderKind::Avg, 4);
    let result = train(
        spec,
        &collection,
        &TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e300,
            seed: 3,
        },
    );
    match result {
        Err(CoreError::NanLoss { batch_seed, .. }) => {
            assert_ne!(batch_seed, 0);
        }
        Err(other) => panic!("expected NanLoss, got {other}"),
        Ok(_) => panic!("training should have aborted on a non-finite loss"),
    }
}

#[test]
fn training_rejects_family_mismatch() {
    let collection = tiny_linear_collection(31);
    let spec = small_spec(Family::MultiStep, EncoderKind::Avg, 4);
    assert!(matches!(
        train(spec, &collection, &TrainConfig::new(0)),
        Err(CoreError::FamilyMismatch { .. })
    ));
}
