mod common;

use deepadc::calibrator::{
    build_network, infer_stream, make_mixed_windows, make_windows, table1_specs, train,
    NetworkModel, Predictor, StreamCorrector, TrainConfig, WindowConfig,
};
use deepadc::container::Container;
use deepadc::nn::{LayerSpec, OptimizerKind, Tensor};
use deepadc::Error;
use proptest::prelude::*;

fn ramp(n: usize, k: i16) -> Vec<i16> {
    (0..n)
        .map(|i| ((i as i64 * k as i64) % 4001 - 2000) as i16)
        .collect()
}

#[test]
fn one_window_at_the_minimum_length() {
    let ideal = ramp(64, 7);
    let ds = make_windows(
        &common::synthetic_capture(ramp(64, 3), ideal.clone()),
        WindowConfig::default(),
    )
    .unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.target_at(0), ideal[31] as f32 / 4096.0);
    assert!(make_windows(
        &common::synthetic_capture(ramp(63, 3), ramp(63, 7)),
        WindowConfig::default()
    )
    .is_err());
}

#[test]
fn window_count_is_length_minus_span() {
    let ds = make_windows(
        &common::synthetic_capture(ramp(1087, 3), ramp(1087, 5)),
        WindowConfig::default(),
    )
    .unwrap();
    assert_eq!(ds.len(), 1024);
}

#[test]
fn impairment_free_targets_sit_inside_their_windows() {
    let codes = ramp(500, 11);
    let ds = make_windows(
        &common::synthetic_capture(codes.clone(), codes),
        WindowConfig::default(),
    )
    .unwrap();
    for i in 0..ds.len() {
        assert_eq!(ds.window_at(i)[31], ds.target_at(i));
        assert!(ds.window_at(i).iter().all(|v| v.abs() <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrupting_one_sample_touches_exactly_the_covering_windows(
        len in 64usize..300,
        at_frac in 0.0f64..1.0,
        wl in 3usize..40,
        cur_frac in 0.0f64..1.0,
    ) {
        let window = WindowConfig { window_length: wl, current_index: ((wl as f64 * cur_frac) as usize).min(wl - 1) };
        let at = ((len as f64 * at_frac) as usize).min(len - 1);
        let base = common::synthetic_capture(ramp(len, 3), ramp(len, 5));
        let mut bad_in = base.clone();
        bad_in.nonideal_codes[at] = 4000;
        let mut bad_target = base.clone();
        bad_target.ideal_codes[at] = -4000;
        let a = make_windows(&base, window).unwrap();
        let b = make_windows(&bad_in, window).unwrap();
        let c = make_windows(&bad_target, window).unwrap();
        for j in 0..a.len() {
            let covers = j <= at && at < j + wl;
            prop_assert_eq!(a.window_at(j) != b.window_at(j), covers);
            prop_assert_eq!(a.target_at(j), b.target_at(j));
            prop_assert_eq!(a.target_at(j) != c.target_at(j), j + window.current_index == at);
            prop_assert_eq!(a.window_at(j), c.window_at(j));
        }
    }
}

#[test]
fn mixed_datasets_interleave_every_capture() {
    let caps: Vec<_> = [64, 256, 1024]
        .iter()
        .enumerate()
        .map(|(i, &o)| common::capture(o, 1, 50 + i as u64))
        .collect();
    let ds = make_mixed_windows(&caps, WindowConfig::default(), 9).unwrap();
    assert_eq!(ds.len(), 3 * (1024 - 63));
    assert_eq!(ds.shuffle_seed, Some(9));
    let head: std::collections::BTreeSet<usize> = (0..60).map(|i| ds.label_at(i)).collect();
    assert_eq!(
        head.len(),
        3,
        "first windows should already mix constellations"
    );
    let again = make_mixed_windows(&caps, WindowConfig::default(), 9).unwrap();
    assert!((0..ds.len()).all(|i| ds.window_at(i) == again.window_at(i)));
}

/// Closed-form parameter count of the stack, written out independently of the layer code.
fn expected_param_count() -> usize {
    let conv = |i: usize, o: usize| o * (i * 3 + 1);
    let bn = |c: usize| 2 * c;
    let lstm = |i: usize, h: usize| 4 * (i * h + h * h + h);
    conv(1, 64)
        + bn(64)
        + conv(64, 64)
        + bn(64)
        + conv(64, 128)
        + bn(128)
        + conv(128, 128)
        + bn(128)
        + lstm(128, 64)
        + lstm(64, 32)
        + lstm(32, 4)
        + 256
        + 1
}

#[test]
fn network_shape_count_and_seeding() {
    let a = build_network(WindowConfig::default(), 13, 3).unwrap();
    let b = build_network(WindowConfig::default(), 13, 3).unwrap();
    let c = build_network(WindowConfig::default(), 13, 4).unwrap();
    assert_eq!(a.param_count(), expected_param_count());
    assert_eq!(a.network.params(), b.network.params());
    assert_ne!(a.network.params(), c.network.params());
    assert_eq!(a.code_scale, 4096.0);
    let specs = table1_specs(64);
    assert_eq!(
        specs.last(),
        Some(&LayerSpec::Linear {
            input: 256,
            output: 1
        })
    );
    let mut net = a.network.clone();
    let y = net.forward(&Tensor::zeros(&[5, 64, 1]), true).unwrap();
    assert_eq!(y.shape(), &[5, 1]);
}

fn short_training(
    cap_seed: u64,
    cfg: &TrainConfig,
) -> (NetworkModel, deepadc::calibrator::TrainReport) {
    let cap = common::capture(256, 2, cap_seed);
    let mut ds = make_windows(&cap, WindowConfig::default()).unwrap();
    ds.shuffle(1);
    ds.truncate(600);
    train(&ds, cfg, None, 13, |_| {}).unwrap()
}

#[test]
fn training_is_reproducible_and_reports_every_epoch() {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 64,
        ..Default::default()
    };
    let (m1, r1) = short_training(60, &cfg);
    let (m2, r2) = short_training(60, &cfg);
    assert_eq!(m1.network.params(), m2.network.params());
    assert_eq!(r1.epochs.len(), 2);
    assert_eq!(r1.train_windows + r1.val_windows, 600);
    assert_eq!(r1.val_windows, 60);
    for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
        assert!(a.train_loss.is_finite() && a.val_loss.is_finite());
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
    }
    let best = r1
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r1.best_val_loss(), best);
    let csv = r1.to_csv();
    assert_eq!(
        csv.lines().next(),
        Some("epoch,train_loss,val_loss,seconds")
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn divergence_names_the_last_good_epoch() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        learning_rate: 1e30,
        optimizer: OptimizerKind::Sgd,
        ..Default::default()
    };
    let cap = common::capture(256, 2, 61);
    let ds = make_windows(&cap, WindowConfig::default()).unwrap();
    match train(&ds, &cfg, None, 13, |_| {}) {
        Err(Error::Diverged {
            epoch, last_good, ..
        }) => {
            assert_eq!(epoch, 1);
            assert_eq!(last_good, None);
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 64,
        ..Default::default()
    };
    let (model, _) = short_training(62, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dam");
    model.save(&path).unwrap();
    let back = NetworkModel::load(&path).unwrap();
    assert_eq!(back.network.params(), model.network.params());
    assert_eq!(back.window, model.window);
    let cap = common::capture(64, 1, 63);
    let a = infer_stream(&model, &cap.nonideal_codes).unwrap();
    let b = infer_stream(&back, &cap.nonideal_codes).unwrap();
    assert_eq!(a, b);

    let bytes = std::fs::read(&path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..2000]);
    assert!(header.contains("conv1d 1 64"), "header lists layer specs");
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(NetworkModel::load(&path), Err(Error::Format(_))));
    let c = Container::new("capture");
    assert!(NetworkModel::from_container(&c).is_err());
}

#[test]
fn resuming_continues_from_the_given_model() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        ..Default::default()
    };
    let cap = common::capture(256, 2, 64);
    let mut ds = make_windows(&cap, WindowConfig::default()).unwrap();
    ds.shuffle(2);
    ds.truncate(600);
    let (first, r1) = train(&ds, &cfg, None, 13, |_| {}).unwrap();
    let (second, r2) = train(&ds, &cfg, Some(first.clone()), 13, |_| {}).unwrap();
    assert_ne!(first.network.params(), second.network.params());
    let fresh_start = r1.epochs[0].val_loss;
    let resumed_end = r2.epochs.last().unwrap().val_loss;
    assert!(resumed_end < fresh_start, "{resumed_end} vs {fresh_start}");
    let other = WindowConfig {
        window_length: 32,
        current_index: 15,
    };
    let mut small = make_windows(&cap, other).unwrap();
    small.truncate(100);
    assert!(train(&small, &cfg, Some(first), 13, |_| {}).is_err());
}

#[test]
fn streaming_matches_batched_inference_bit_for_bit() {
    let cap = common::capture(128, 1, 65);
    let model = common::warmed_model(&cap, 11);
    let codes = &cap.nonideal_codes[..400];
    let batch = infer_stream(&model, codes).unwrap();
    assert_eq!(batch.first_index, 31);
    assert_eq!(batch.values.len(), 400 - 63);
    let mut sc = StreamCorrector::new(&model);
    let mut streamed = Vec::new();
    for (k, &c) in codes.iter().enumerate() {
        match sc.push(c).unwrap() {
            // the output for sample k - latency appears once sample k arrives
            Some(v) => {
                assert_eq!(
                    k - model.window.latency_samples(),
                    batch.first_index + streamed.len()
                );
                streamed.push(v);
            }
            None => assert!(k < 63),
        }
    }
    assert_eq!(streamed.len(), batch.values.len());
    assert!(streamed
        .iter()
        .zip(&batch.values)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn constant_stream_gives_a_constant_output() {
    let cap = common::capture(128, 1, 66);
    let model = common::warmed_model(&cap, 12);
    let out = infer_stream(&model, &vec![0i16; 2100]).unwrap();
    assert!(out
        .values
        .iter()
        .all(|v| v.to_bits() == out.values[0].to_bits()));
    assert!(infer_stream(&model, &[0i16; 63]).is_err());
    let z = model.predict(&[0.0; 64], 1).unwrap();
    assert_eq!(z[0] as f64, out.values[0]);
}
