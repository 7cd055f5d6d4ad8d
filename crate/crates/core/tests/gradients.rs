//! Analytic backward passes against central finite differences, in f64.

use deepadc::nn::gradcheck::{check_layer, check_mse, randomized_suite, rel_err, H};
use deepadc::nn::{mse_loss, LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn conv1d_fixed_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = check_layer(
        LayerSpec::Conv1d { c_in: 4, c_out: 3 },
        &[2, 8, 4],
        &mut rng,
    );
    assert!(e < 1e-6, "{e}");
}

#[test]
fn batchnorm_fixed_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = check_layer(LayerSpec::BatchNorm1d { channels: 4 }, &[2, 8, 4], &mut rng);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn lstm_fixed_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = check_layer(
        LayerSpec::Lstm {
            input: 3,
            hidden: 4,
        },
        &[2, 5, 3],
        &mut rng,
    );
    assert!(e < 1e-5, "{e}");
}

#[test]
fn linear_fixed_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e = check_layer(
        LayerSpec::Linear {
            input: 6,
            output: 3,
        },
        &[5, 6],
        &mut rng,
    );
    assert!(e < 1e-7, "{e}");
}

#[test]
fn mse_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let e = check_mse(n, &mut rng);
        assert!(e < 1e-8, "{e}");
    }
}

#[test]
fn randomized_layer_shapes() {
    for (kind, e) in randomized_suite(100, 6) {
        assert!(e < 1e-4, "{kind}: {e}");
    }
}

#[test]
fn small_stack_end_to_end() {
    let specs = [
        LayerSpec::Conv1d { c_in: 1, c_out: 3 },
        LayerSpec::BatchNorm1d { channels: 3 },
        LayerSpec::Relu,
        LayerSpec::Lstm {
            input: 3,
            hidden: 2,
        },
        LayerSpec::Flatten,
        LayerSpec::Linear {
            input: 12,
            output: 1,
        },
    ];
    let mut net = Network::<f64>::seeded(&specs, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::new(&[3, 6, 1], rand_vec(18, &mut rng)).unwrap();
    let target = Tensor::new(&[3, 1], rand_vec(3, &mut rng)).unwrap();
    let y = net.forward(&x, true).unwrap();
    let (_, dy) = mse_loss(&y, &target).unwrap();
    net.zero_grads();
    net.backward(&dy).unwrap();
    let analytic = net.grads().to_vec();
    let mut numeric = vec![0.0; analytic.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + H;
        let lp = mse_loss(&net.forward(&x, true).unwrap(), &target)
            .unwrap()
            .0;
        net.params_mut()[i] = orig - H;
        let lm = mse_loss(&net.forward(&x, true).unwrap(), &target)
            .unwrap()
            .0;
        net.params_mut()[i] = orig;
        *slot = (lp - lm) / (2.0 * H);
    }
    let e = rel_err(&analytic, &numeric);
    assert!(e < 1e-4, "{e}");
}
