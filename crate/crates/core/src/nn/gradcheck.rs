//! Central finite-difference checks of the analytic backward passes, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mse_loss, Layer, LayerSpec, Tensor};

/// Finite-difference step.
pub const H: f64 = 1e-5;

fn rand_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Norm-wise relative error `|a - b| / (|a| + |b|)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error over the parameter and input gradients of one freshly
/// initialised layer under the loss `sum(r * y)` with random `r`.
pub fn check_layer(spec: LayerSpec, shape: &[usize], rng: &mut impl Rng) -> f64 {
    let mut layer = Layer::<f64>::new(spec);
    let mut p = rand_vec(spec.param_count(), rng);
    let n: usize = shape.iter().product();
    let mut xv = rand_vec(n, rng);
    if spec == LayerSpec::Relu {
        // keep the perturbation off the kink
        for v in &mut xv {
            if v.abs() < 10.0 * H {
                *v = 0.5;
            }
        }
    }
    let x = Tensor::new(shape, xv).expect("shape matches data");
    let y = layer.forward(&p, x.clone(), true).expect("forward");
    let r = Tensor::new(y.shape(), rand_vec(y.len(), rng)).expect("shape matches data");
    let mut g = vec![0.0; p.len()];
    let dx = layer
        .backward(&p, &mut g, r.clone(), true)
        .expect("backward")
        .expect("input gradient");

    let loss = |layer: &mut Layer<f64>, p: &[f64], x: &Tensor<f64>| -> f64 {
        let y = layer.forward(p, x.clone(), true).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut num_p = vec![0.0; p.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + H;
        let lp = loss(&mut layer, &p, &x);
        p[i] = orig - H;
        let lm = loss(&mut layer, &p, &x);
        p[i] = orig;
        num_p[i] = (lp - lm) / (2.0 * H);
    }
    let mut num_x = vec![0.0; n];
    let mut xp = x;
    for (i, slot) in num_x.iter_mut().enumerate() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + H;
        let lp = loss(&mut layer, &p, &xp);
        xp.data_mut()[i] = orig - H;
        let lm = loss(&mut layer, &p, &xp);
        xp.data_mut()[i] = orig;
        *slot = (lp - lm) / (2.0 * H);
    }
    rel_err(&g, &num_p).max(rel_err(dx.data(), &num_x))
}

/// Relative error of the mean-squared-error gradient for a random length-`n` prediction.
pub fn check_mse(n: usize, rng: &mut impl Rng) -> f64 {
    let pred = rand_vec(n, rng);
    let target = Tensor::new(&[n], rand_vec(n, rng)).expect("shape");
    let at = |v: Vec<f64>| mse_loss(&Tensor::new(&[n], v).expect("shape"), &target).expect("loss");
    let (_, g) = at(pred.clone());
    let num: Vec<f64> = (0..n)
        .map(|i| {
            let mut p = pred.clone();
            p[i] += H;
            let lp = at(p.clone()).0;
            p[i] -= 2.0 * H;
            (lp - at(p).0) / (2.0 * H)
        })
        .collect();
    rel_err(g.data(), &num)
}

/// Worst error per layer kind over `trials` randomly shaped cases of every kind.
pub fn randomized_suite(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![
        ("conv1d", 0.0),
        ("batchnorm1d", 0.0),
        ("relu", 0.0),
        ("lstm", 0.0),
        ("linear", 0.0),
        ("flatten", 0.0),
        ("mse", 0.0f64),
    ];
    for _ in 0..trials {
        let b = rng.random_range(1..=3);
        let t = rng.random_range(3..=7);
        let c = rng.random_range(1..=4);
        let o = rng.random_range(1..=4);
        let cases = [
            (LayerSpec::Conv1d { c_in: c, c_out: o }, vec![b, t, c]),
            (LayerSpec::BatchNorm1d { channels: c }, vec![b.max(2), t, c]),
            (LayerSpec::Relu, vec![b, t, c]),
            (
                LayerSpec::Lstm {
                    input: c,
                    hidden: o,
                },
                vec![b, t, c],
            ),
            (
                LayerSpec::Linear {
                    input: c,
                    output: o,
                },
                vec![b, c],
            ),
            (LayerSpec::Flatten, vec![b, t, c]),
        ];
        for (k, (spec, shape)) in cases.into_iter().enumerate() {
            let e = check_layer(spec, &shape, &mut rng);
            worst[k].1 = worst[k].1.max(e);
        }
        let n = rng.random_range(1..=20);
        worst[6].1 = worst[6].1.max(check_mse(n, &mut rng));
    }
    worst
}
