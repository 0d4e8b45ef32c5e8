use proptest::prelude::*;

use risotto_core::network::build_network;
use risotto_core::train::{gradient_check, sgd_train, sgd_train_model, synth_blobs, FcModel, Schedule, TrainConfig};
use risotto_core::{BlockKind, InitScheme, NetworkSpec, RngStream, SchemeKind};

fn model(spec: &NetworkSpec, scheme: &InitScheme, seed: u64) -> FcModel {
    FcModel::from_network(spec, &build_network(spec, scheme, &RngStream::new(seed, 0)).unwrap()).unwrap()
}

fn plain(lr: f64, epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        momentum: 0.0,
        weight_decay: 0.0,
        schedule: Schedule::Constant,
        grad_check: false,
        ..TrainConfig::new(lr, epochs, batch, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Reverse-mode gradients agree with central differences away from kinks.
    #[test]
    fn gradients_match_differences_at_random_points(
        scheme in 0usize..7, half in 1usize..5, depth in 0usize..4, noise in 0.0f64..0.3, seed in any::<u64>(),
    ) {
        let scheme: InitScheme = InitScheme::NAMES[scheme].parse().unwrap();
        let spec = NetworkSpec::fc(3, 2 * half, depth, scheme.natural_kind(), 1.0, 3);
        let mut m = model(&spec, &scheme, seed);
        let mut r = RngStream::new(seed, 9);
        for (_, p) in m.params_mut() {
            for v in p.iter_mut() {
                *v += noise * r.standard_normal();
            }
        }
        let data = synth_blobs(3, 3, 4, 0.5, &RngStream::new(seed, 3)).unwrap();
        let rep = gradient_check(&m, &data.features, &data.labels, 20, 1e-5, &mut r).unwrap();
        prop_assert!(rep.max_rel_error < 1e-4, "{:?}", rep);
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss_constant() {
    let spec = NetworkSpec::fc(8, 16, 4, BlockKind::TypeC, 1.0, 2);
    let data = synth_blobs(2, 8, 30, 0.5, &RngStream::new(1, 0)).unwrap();
    let cfg = TrainConfig {
        grad_check: false,
        ..TrainConfig::new(0.0, 5, 60, 1)
    };
    let log = sgd_train(&spec, &SchemeKind::RisottoC.into(), &data, None, &cfg).unwrap();
    assert_eq!(log.steps.len(), 5);
    let first = log.steps[0].loss;
    assert!(log.steps.iter().all(|s| (s.loss - first).abs() < 1e-12));
    assert!((log.final_train_loss - first).abs() < 1e-12);
}

#[test]
fn one_small_step_decreases_the_loss_to_first_order() {
    let spec = NetworkSpec::fc(8, 16, 3, BlockKind::TypeC, 1.0, 2);
    let scheme: InitScheme = SchemeKind::HeNormal.into();
    let data = synth_blobs(2, 8, 40, 0.5, &RngStream::new(2, 0)).unwrap();
    let lr = 1e-5;
    let cfg = TrainConfig {
        max_steps: Some(1),
        ..plain(lr, 1, data.len(), 7)
    };
    let m0 = model(&spec, &scheme, 7);
    let (l0, mut g) = m0.loss_and_grad(&data.features, &data.labels).unwrap();
    let g2: f64 = g.params_mut().iter().flat_map(|(_, p)| p.iter()).map(|v| v * v).sum();
    let (m1, log) = sgd_train_model(&spec, &scheme, &data, None, &cfg).unwrap();
    assert_eq!(log.steps.len(), 1);
    let drop = l0 - m1.loss(&data.features, &data.labels).unwrap();
    let predicted = lr * g2;
    assert!((drop / predicted - 1.0).abs() < 0.1, "drop {drop}, predicted {predicted}");
}

#[test]
fn training_is_reproducible() {
    let spec = NetworkSpec::fc(6, 12, 3, BlockKind::TypeB, 1.0, 2);
    let data = synth_blobs(2, 6, 25, 0.5, &RngStream::new(4, 0)).unwrap();
    let cfg = TrainConfig::new(0.02, 3, 10, 11);
    let scheme: InitScheme = SchemeKind::RisottoB.into();
    let a = sgd_train(&spec, &scheme, &data, None, &cfg).unwrap();
    let b = sgd_train(&spec, &scheme, &data, None, &cfg).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.final_train_loss, b.final_train_loss);
    assert_eq!(a.final_alphas, b.final_alphas);
    let c = sgd_train(&spec, &scheme, &data, None, &TrainConfig::new(0.02, 3, 10, 12)).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn blobs_are_separable_by_nearest_mean() {
    let (k, dim) = (4, 10);
    let data = synth_blobs(k, dim, 200, 0.5, &RngStream::new(5, 0)).unwrap();
    let mut means = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &y) in data.features.rows().into_iter().zip(&data.labels) {
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(row) {
            *m += v;
        }
    }
    assert!(counts.iter().all(|&c| c == 200));
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= *c as f64);
    }
    let correct = data
        .features
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(row, &y)| {
            let d = |m: &Vec<f64>| row.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..k).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))) == Some(y)
        })
        .count();
    assert!(correct as f64 / data.len() as f64 > 0.99, "{correct}");
}

#[test]
fn risotto_learns_blobs() {
    let spec = NetworkSpec::fc(8, 16, 4, BlockKind::TypeC, 1.0, 3);
    let data = synth_blobs(3, 8, 60, 0.5, &RngStream::new(6, 0)).unwrap();
    let log = sgd_train(&spec, &SchemeKind::RisottoC.into(), &data, None, &TrainConfig::new(0.02, 30, 30, 6)).unwrap();
    assert!(!log.diverged);
    assert!(log.grad_check.unwrap().max_rel_error < 1e-4);
    assert!(log.final_train_accuracy > 0.95, "{}", log.final_train_accuracy);
    assert!(log.final_train_loss < log.steps[0].loss);
}
