use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ric_core::data::Dataset;
use ric_core::nn::build_baseline;
use ric_core::optim::{cross_entropy, train, TrainConfig};
use ric_core::{ConvMode, Error, Tensor};

/// Noisy class-dependent stripes on a zero background.
fn synthetic(n: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * 32 * 32];
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    for (img, &label) in data.chunks_mut(32 * 32).zip(&labels) {
        for r in 6..26 {
            for c in 6..26 {
                let stripe = ((r + c * label) / 3) % 2 == 0;
                img[r * 32 + c] = if stripe { 0.8 } else { 0.0 } + rng.gen_range(0.0..0.2);
            }
        }
    }
    Dataset::new(Tensor::from_vec(&[n, 1, 32, 32], data).unwrap(), labels).unwrap()
}

fn full_batch_loss(net: &mut ric_core::nn::Network<f64>, data: &Dataset<f64>) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx).unwrap();
    net.train();
    let logits = net.forward(&x).unwrap();
    cross_entropy(&logits, &y).unwrap().0
}

#[test]
fn one_epoch_reduces_the_loss() {
    let data = synthetic(100, 1);
    let mut net = build_baseline::<f64>(ConvMode::Ric, 32, 2).unwrap();
    let before = full_batch_loss(&mut net.clone(), &data);
    let config = TrainConfig {
        epochs: 1,
        batch_size: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &data, Some(&data), &config, |_| {}).unwrap();
    assert_eq!(log.len(), 1);
    assert!(!net.is_training());
    let after = full_batch_loss(&mut net, &data);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let data = synthetic(40, 4);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 20,
        seed: 5,
        subset_size: Some(30),
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = build_baseline::<f64>(ConvMode::Standard, 32, 6).unwrap();
        let log = train(&mut net, &data, None, &config, |_| {}).unwrap();
        (net.state(), log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(log_a, log_b);
    assert_eq!(a.len(), b.len());
    for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "{na}");
    }
}

#[test]
fn empty_and_invalid_inputs_are_rejected() {
    let data = synthetic(10, 7);
    let mut net = build_baseline::<f64>(ConvMode::Standard, 32, 0).unwrap();
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut net, &data, None, &bad, |_| {}),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn diverging_loss_aborts_with_diagnostic() {
    let data = synthetic(20, 8);
    let mut net = build_baseline::<f64>(ConvMode::Standard, 32, 0).unwrap();
    for p in net.params_mut() {
        if p.name == "fc.weight" {
            p.value = p.value.map(|_| f64::NAN);
        }
    }
    let config = TrainConfig {
        epochs: 1,
        batch_size: 10,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &data, None, &config, |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0, .. }), "{err}");
}
