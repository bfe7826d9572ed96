//! End-to-end checks of the stochastic variants through the public model
//! API: mask statistics, ensemble round-robin, training outcomes, and the
//! checkpoint format.

use std::path::Path;

use uqbench::bayes::{
    epochs_for, load_model, save_model, train_stochastic, Arch, Head, StochasticModel, Variant,
};
use uqbench::nn::{Matrix, TrainConfig};
use uqbench::{seed, Error};

fn moons_data(n: usize, seed_val: u64) -> (Matrix, Vec<usize>) {
    let ds = uqbench::data::two_moons(n, 0.1, &mut seed::rng_from(seed_val)).unwrap();
    (ds.features().clone(), ds.labels().to_vec())
}

fn quick_train(model: &mut StochasticModel, n: usize, epochs: usize) -> (Matrix, Vec<usize>) {
    let (x, labels) = moons_data(n, 31);
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 77,
    };
    train_stochastic(model, &x, &labels, &cfg).unwrap();
    moons_data(200, 32)
}

#[test]
fn zero_rate_dropout_pass_is_deterministic() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.0 },
        Head::Softmax,
        4,
        11,
    )
    .unwrap();
    model.set_trained(true);
    let x = Matrix::from_vec(3, 2, vec![0.1, 0.2, -0.5, 1.0, 2.0, -1.0]).unwrap();
    // Different noise streams, identical outputs: nothing is stochastic.
    let a = model.sample_forward(&x, &mut seed::rng_from(1)).unwrap();
    let b = model.sample_forward(&x, &mut seed::rng_from(999)).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn untrained_model_refuses_predictions() {
    let model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.3 },
        Head::Softmax,
        4,
        11,
    )
    .unwrap();
    let x = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        model.sample_forward(&x, &mut seed::rng_from(1)),
        Err(Error::State(_))
    ));
    assert!(matches!(
        model.predict_t(&x, 4, &mut seed::rng_from(1)),
        Err(Error::State(_))
    ));
}

#[test]
fn dropout_masks_hit_rate_and_inverted_scale() {
    let rate = 0.3;
    let model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate },
        Head::Softmax,
        4,
        11,
    )
    .unwrap();
    let mut rng = seed::rng_from(5);
    let mut zeros = 0usize;
    let mut total = 0usize;
    let mut sum = 0.0;
    let keep_scale = 1.0 / (1.0 - rate);
    for _ in 0..50 {
        let noise = model.sample_noise(100, &mut rng);
        // Toy arch drops activations of both hidden layers, nothing else.
        assert!(noise.act_masks[0].is_some() && noise.act_masks[1].is_some());
        assert!(noise.act_masks[2].is_none());
        assert!(noise.weight_masks.iter().all(Option::is_none));
        for mask in noise.act_masks.iter().flatten() {
            for &v in mask.as_slice() {
                assert!(v == 0.0 || v == keep_scale, "mask entry {v}");
                zeros += usize::from(v == 0.0);
                sum += v;
                total += 1;
            }
        }
    }
    // 50 draws x 100 rows x 64 units = 320k entries; 3 sigma ~ 0.0024.
    let frac = zeros as f64 / total as f64;
    assert!((frac - rate).abs() < 0.01, "drop fraction {frac}");
    // Inverted scaling keeps the mask mean at 1 in expectation.
    let mean = sum / total as f64;
    assert!((mean - 1.0).abs() < 0.01, "mask mean {mean}");
}

#[test]
fn dropconnect_masks_only_flank_the_designated_layer() {
    let model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropConnect { rate: 0.3 },
        Head::Softmax,
        4,
        11,
    )
    .unwrap();
    let mut rng = seed::rng_from(6);
    let mut zeros = 0usize;
    let mut total = 0usize;
    for _ in 0..100 {
        let noise = model.sample_noise(8, &mut rng);
        assert!(noise.act_masks.iter().all(Option::is_none));
        // Weights entering and leaving hidden layer 1 are masked; the
        // input-side matrix is not.
        assert!(noise.weight_masks[0].is_none());
        for idx in [1usize, 2] {
            let mask = noise.weight_masks[idx].as_ref().unwrap();
            for &v in mask.as_slice() {
                zeros += usize::from(v == 0.0);
                total += 1;
            }
        }
    }
    let frac = zeros as f64 / total as f64;
    assert!((frac - 0.3).abs() < 0.01, "drop fraction {frac}");
}

#[test]
fn trained_dropout_spreads_passes() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.3 },
        Head::Softmax,
        8,
        11,
    )
    .unwrap();
    let (tx, _) = quick_train(&mut model, 200, 30);
    let passes = model.predict_t(&tx, 8, &mut seed::rng_from(3)).unwrap();
    assert_eq!(passes.len(), 8);
    // Some logit must move between passes, else the masks did nothing.
    let spread = (0..8)
        .map(|t| passes[t].get(0, 0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    assert!(spread.1 - spread.0 > 1e-6, "pass spread {spread:?}");
}

#[test]
fn trained_model_beats_chance_on_held_out_moons() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.3 },
        Head::Softmax,
        16,
        11,
    )
    .unwrap();
    let (tx, tl) = quick_train(&mut model, 400, 60);
    let ev = uqbench::experiments::evaluate(&model, &tx, &tl, 16, 100, 9).unwrap();
    assert!(ev.accuracy > 0.85, "held-out accuracy {}", ev.accuracy);
}

#[test]
fn ensemble_forces_one_pass_per_member() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::DeepEnsemble { members: 3 },
        Head::Softmax,
        50,
        11,
    )
    .unwrap();
    assert_eq!(model.passes, 3, "pass count collapses to the member count");
    let (tx, _) = quick_train(&mut model, 150, 10);
    let passes = model.predict_t(&tx, 50, &mut seed::rng_from(2)).unwrap();
    assert_eq!(passes.len(), 3, "requested 50, served one per member");
    // Members started and trained differently, so they disagree.
    for a in 0..3 {
        for b in (a + 1)..3 {
            let pa = model.nets[a].flat_params();
            let pb = model.nets[b].flat_params();
            let dist: f64 = pa
                .iter()
                .zip(&pb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(dist > 1e-3, "members {a},{b} are {dist} apart");
        }
    }
}

#[test]
fn singleton_ensemble_collapses_to_identical_passes() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::DeepEnsemble { members: 1 },
        Head::Softmax,
        50,
        11,
    )
    .unwrap();
    let (tx, _) = quick_train(&mut model, 100, 5);
    let passes = model.predict_t(&tx, 50, &mut seed::rng_from(2)).unwrap();
    assert_eq!(passes.len(), 1);
}

#[test]
fn flipout_passes_differ_without_dropout_sites() {
    let mut model =
        StochasticModel::new(&Arch::toy(2), Variant::Flipout, Head::Softmax, 4, 11).unwrap();
    model.set_trained(true);
    let x = Matrix::from_vec(2, 2, vec![0.5, -0.5, 1.0, 0.3]).unwrap();
    let mut rng = seed::rng_from(4);
    let a = model.sample_forward(&x, &mut rng).unwrap();
    let b = model.sample_forward(&x, &mut rng).unwrap();
    assert_ne!(a.as_slice(), b.as_slice(), "variational noise moved nothing");
    assert_eq!(epochs_for(Variant::Flipout, 100), 500);
    assert_eq!(epochs_for(Variant::McDropout { rate: 0.3 }, 100), 100);
}

#[test]
fn predictions_replay_bit_exactly_under_one_seed() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropConnect { rate: 0.2 },
        Head::Softmax,
        6,
        11,
    )
    .unwrap();
    let (tx, _) = quick_train(&mut model, 150, 10);
    let a = model.predict_t(&tx, 6, &mut seed::rng_from(12)).unwrap();
    let b = model.predict_t(&tx, 6, &mut seed::rng_from(12)).unwrap();
    for (ma, mb) in a.iter().zip(&b) {
        assert_eq!(ma.as_slice(), mb.as_slice());
    }
}

#[test]
fn gaussian_logits_head_trains_and_widens_output() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.3 },
        Head::GaussianLogits,
        8,
        11,
    )
    .unwrap();
    assert_eq!(model.nets[0].out_dim(), 4, "2 classes need 4 channels");
    let (tx, tl) = quick_train(&mut model, 300, 40);
    let ev = uqbench::experiments::evaluate(&model, &tx, &tl, 8, 200, 15).unwrap();
    assert!(ev.accuracy > 0.8, "held-out accuracy {}", ev.accuracy);
    assert!(ev.mean_au > 0.0);
}

#[test]
fn training_rejects_mismatched_and_out_of_range_labels() {
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.3 },
        Head::Softmax,
        4,
        11,
    )
    .unwrap();
    let x = Matrix::from_vec(2, 2, vec![0.0; 4]).unwrap();
    let cfg = TrainConfig::default();
    let short = train_stochastic(&mut model, &x, &[0], &cfg);
    assert!(matches!(short, Err(Error::Shape { .. })));
    let high = train_stochastic(&mut model, &x, &[0, 2], &cfg);
    assert!(matches!(high, Err(Error::Domain { .. })));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model =
        StochasticModel::new(&Arch::toy(2), Variant::Flipout, Head::GaussianLogits, 4, 11)
            .unwrap();
    let (tx, _) = quick_train(&mut model, 100, 3);
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.variant, model.variant);
    assert_eq!(loaded.head, model.head);
    assert_eq!(loaded.passes, model.passes);
    assert!(loaded.is_trained());
    assert_eq!(loaded.nets.len(), 1);
    assert_eq!(loaded.nets[0].flat_params(), model.nets[0].flat_params());
    // Same seed, same predictions, down to the last bit.
    let a = model.predict_t(&tx, 4, &mut seed::rng_from(8)).unwrap();
    let b = loaded.predict_t(&tx, 4, &mut seed::rng_from(8)).unwrap();
    for (ma, mb) in a.iter().zip(&b) {
        assert_eq!(ma.as_slice(), mb.as_slice());
    }
}

#[test]
fn checkpoint_ensemble_round_trip_keeps_all_members() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.ckpt");
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::DeepEnsemble { members: 2 },
        Head::Softmax,
        2,
        11,
    )
    .unwrap();
    quick_train(&mut model, 80, 2);
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.nets.len(), 2);
    for (a, b) in loaded.nets.iter().zip(&model.nets) {
        assert_eq!(a.flat_params(), b.flat_params());
    }
}

fn corrupt_checkpoint(edit: impl Fn(&mut String)) -> Result<StochasticModel, Error> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = StochasticModel::new(
        &Arch::toy(2),
        Variant::McDropout { rate: 0.1 },
        Head::Softmax,
        2,
        11,
    )
    .unwrap();
    model.set_trained(true);
    save_model(&model, &path).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    edit(&mut text);
    std::fs::write(&path, text).unwrap();
    load_model(&path)
}

#[test]
fn checkpoint_rejects_wrong_magic_version_and_truncation() {
    let bad_magic = corrupt_checkpoint(|t| *t = t.replacen("uqbench-checkpoint", "notes", 1));
    assert!(matches!(bad_magic, Err(Error::Checkpoint(_))));

    let bad_version = corrupt_checkpoint(|t| *t = t.replacen(" v1", " v9", 1));
    match bad_version {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("expected version rejection, got {other:?}"),
    }

    let truncated = corrupt_checkpoint(|t| {
        let half = t.len() / 2;
        t.truncate(half);
    });
    assert!(matches!(truncated, Err(Error::Checkpoint(_))));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let err = load_model(Path::new("/nonexistent/dir/model.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
