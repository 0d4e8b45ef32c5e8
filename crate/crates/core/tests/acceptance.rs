//! Acceptance gate. Each test prints one `PASS`/`FAIL` line and then asserts.

use std::time::Instant;

use ndarray::Array3;
use rand::Rng;
use risotto_core::init::{init_risotto_b, init_risotto_c, BlockSpec, KernelSize};
use risotto_core::network::{
    effective_jacobian, effective_map, jacobian_report, lift, signal_split, ReportOptions,
};
use risotto_core::sigprop::{c_rho, g_rho, lemma_mc_check, mc_cov_trace, mc_norm_ratio, relu_gauss_cov};
use risotto_core::train::{alpha_sweep, gradient_check, sgd_train, sgd_train_model, synth_blobs, FcModel, TrainConfig};
use risotto_core::{network, BlockKind, FeatureMap, InitScheme, NetworkSpec, RngStream, SchemeKind};

fn report(id: u32, ok: bool, what: &str, start: Instant) {
    println!(
        "{} criterion {id}: {what} ({:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
}

fn gaussian_map(c: usize, h: usize, w: usize, rng: &mut RngStream) -> FeatureMap {
    Array3::from_shape_fn((c, h, w), |_| rng.standard_normal())
}

fn even_in(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    2 * rng.random_range(lo / 2..=hi / 2)
}

fn sq(x: &FeatureMap) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn effective_spectrum(w: &risotto_core::BlockWeights, x: &FeatureMap) -> Vec<f64> {
    risotto_core::linalg::svd_values(&effective_jacobian(w, x).unwrap()).unwrap()
}

#[test]
fn criterion_1_exact_dynamical_isometry() {
    let start = Instant::now();
    let mut rng = RngStream::new(101, 0);
    let alphas = [0.25, 0.5, 1.0, 2.0];
    let mut worst = 0.0f64;
    let mut count_ok = true;
    for i in 0..250u64 {
        let k = if rng.random_range(0..2) == 0 { 1 } else { 3 };
        let side = if k == 3 { 3 } else { rng.random_range(1..=2) };
        let n_in = even_in(&mut rng, 4, 64);
        let w = if i < 200 {
            let spec = BlockSpec {
                kind: BlockKind::TypeC,
                n_in,
                n_mid: even_in(&mut rng, 4, 64),
                n_out: even_in(&mut rng, 4, 64),
                k1: KernelSize::square(k),
                k2: KernelSize::square(k),
                alpha: alphas[rng.random_range(0..4)],
                beta: 1.0,
            };
            init_risotto_c(&spec, &RngStream::new(7, i)).unwrap()
        } else {
            let spec = BlockSpec::uniform(BlockKind::TypeB, n_in, k, 1.0);
            init_risotto_b(&spec, &RngStream::new(7, i)).unwrap()
        };
        let u = gaussian_map(n_in / 2, side, side, &mut rng);
        let s = effective_spectrum(&w, &lift(&u));
        let expect = (w.n_in().min(w.n_out()) / 2) * side * side;
        count_ok &= s.len() == expect;
        worst = s.iter().fold(worst, |m, v| m.max((v - 1.0).abs()));
    }
    let ok = count_ok && worst <= 1e-9;
    report(1, ok, &format!("max |sigma_eff - 1| = {worst:.2e} over 200 C + 50 B blocks"), start);
    assert!(ok);
}

#[test]
fn criterion_2_norm_and_similarity_preservation() {
    let start = Instant::now();
    let mut rng = RngStream::new(202, 0);
    let mut worst = 0.0f64;
    for i in 0..120u64 {
        let width = even_in(&mut rng, 4, 64);
        let k = if i % 2 == 0 { 1 } else { 3 };
        let side = if k == 3 { 3 } else { 1 };
        let w = if i % 3 == 0 {
            init_risotto_b(&BlockSpec::uniform(BlockKind::TypeB, width, k, 1.0), &RngStream::new(9, i)).unwrap()
        } else {
            let mut spec = BlockSpec::uniform(BlockKind::TypeC, width, k, [0.25, 0.5, 1.0, 2.0][i as usize % 4]);
            spec.n_mid = even_in(&mut rng, 4, 64);
            init_risotto_c(&spec, &RngStream::new(9, i)).unwrap()
        };
        for _ in 0..5 {
            let u = gaussian_map(width / 2, side, side, &mut rng);
            let v = gaussian_map(width / 2, side, side, &mut rng);
            let (x, xt) = (lift(&u), lift(&v));
            let (y, yt) = (
                network::block_forward(&w, &x).unwrap(),
                network::block_forward(&w, &xt).unwrap(),
            );
            let (_, _, uo) = signal_split(&y).unwrap();
            let (_, _, vo) = signal_split(&yt).unwrap();
            let dn = (sq(&y) - sq(&x)).abs() / sq(&x);
            let ds = (dot(&uo, &vo) - dot(&u, &v)).abs() / (sq(&u) * sq(&v)).sqrt();
            worst = worst.max(dn).max(ds);
        }
    }
    let ok = worst <= 1e-10;
    report(2, ok, &format!("max relative change in norm or inner product = {worst:.2e}"), start);
    assert!(ok);
}

#[test]
fn criterion_3_norm_propagation_monte_carlo() {
    let start = Instant::now();
    let spec = NetworkSpec::fc(32, 64, 8, BlockKind::TypeC, 1.0, 10);
    let mut r = RngStream::new(303, 0);
    let x = gaussian_map(32, 1, 1, &mut r);
    let m = mc_norm_ratio(&spec, &SchemeKind::HeNormal.into(), &x, 2000, &RngStream::new(303, 1)).unwrap();
    let ok = m.within(1.0, 3.0) && (0.9..=1.1).contains(&m.mean);
    report(3, ok, &format!("mean ratio {:.4} +- {:.4} (theory 1)", m.mean, m.stderr), start);
    assert!(ok);
}

#[test]
fn criterion_4_correlation_traces() {
    let start = Instant::now();
    let spec = NetworkSpec::fc(16, 32, 5, BlockKind::TypeC, 1.0, 10);
    let mut x = Array3::zeros((16, 1, 1));
    let mut xt = Array3::zeros((16, 1, 1));
    let rho0: f64 = 0.2;
    x[[0, 0, 0]] = 1.0;
    xt[[0, 0, 0]] = rho0;
    xt[[1, 0, 0]] = (1.0 - rho0 * rho0).sqrt();
    let he = mc_cov_trace(&spec, &SchemeKind::HeNormal.into(), &x, &xt, 50, &RngStream::new(404, 0)).unwrap();
    let last = he.layers.last().unwrap().corr.mean;
    let rises = last >= he.input_corr + 0.2;
    let monotone = he.layers.windows(2).all(|p| {
        let se = (p[0].corr.stderr.powi(2) + p[1].corr.stderr.powi(2)).sqrt();
        p[1].corr.mean >= p[0].corr.mean - 2.0 * se
    });
    let ris = mc_cov_trace(&spec, &SchemeKind::RisottoC.into(), &x, &xt, 50, &RngStream::new(404, 1)).unwrap();
    let dev = ris.max_effective_deviation.unwrap();
    let ok = he.input_corr <= 0.3 && rises && monotone && dev <= 1e-9;
    report(
        4,
        ok,
        &format!(
            "input corr {:.3}, He layer-5 corr {last:.3}, monotone {monotone}, Risotto max deviation {dev:.2e}",
            he.input_corr
        ),
        start,
    );
    assert!(ok);
}

#[test]
fn criterion_5_relu_gaussian_covariance() {
    let start = Instant::now();
    let scales: [(f64, f64); 3] = [(1.0, 1.0), (4.0, 0.25), (2.5, 7.0)];
    let mut worst_z = 0.0f64;
    let mut all = true;
    for (si, &(v11, v22)) in scales.iter().enumerate() {
        for i in 0..21 {
            let rho = -0.99 + 0.099 * i as f64;
            let v12 = rho * (v11 * v22).sqrt();
            let exact = relu_gauss_cov(v11, v22, v12).unwrap().exact_cov;
            let mc = lemma_mc_check(v11, v22, v12, 1_000_000, &RngStream::new(505, (si * 21 + i) as u64)).unwrap();
            let z = (mc.mean - exact).abs() / mc.stderr;
            worst_z = worst_z.max(z);
            all &= z <= 3.0;
        }
    }
    let endpoints = g_rho(1.0).unwrap() == 0.5
        && g_rho(-1.0).unwrap() == 0.0
        && c_rho(1.0).unwrap() == 0.25
        && c_rho(-1.0).unwrap() == 0.25;
    let ok = all && endpoints;
    report(5, ok, &format!("worst |z| = {worst_z:.2} over 63 points, exact endpoints {endpoints}"), start);
    assert!(ok);
}

fn scheme_for(name: &str, depth: usize) -> InitScheme {
    let mut s: InitScheme = name.parse().unwrap();
    if let SchemeKind::FixupLike { total_depth } = &mut s.kind {
        *total_depth = depth.max(1);
    }
    s
}

#[test]
fn criterion_6_gradient_correctness() {
    let start = Instant::now();
    let data = synth_blobs(3, 8, 20, 0.3, &RngStream::new(606, 0)).unwrap();
    let mut worst = 0.0f64;
    let mut min_checked = usize::MAX;
    for name in InitScheme::NAMES {
        for depth in [1, 2, 4, 8] {
            let scheme = scheme_for(name, depth);
            let spec = NetworkSpec::fc(8, 16, depth, scheme.natural_kind(), 1.0, 3);
            let mut cfg = TrainConfig::new(0.05, 2, 20, 606);
            cfg.grad_check = false;
            let (trained, _) = sgd_train_model(&spec, &scheme, &data, None, &cfg).unwrap();
            let w = risotto_core::network::build_network(&spec, &scheme, &RngStream::new(606, 0)).unwrap();
            let init = FcModel::from_network(&spec, &w).unwrap();
            for (j, model) in [init, trained].iter().enumerate() {
                let mut r = RngStream::new(606, 10 + j as u64);
                let g = gradient_check(model, &data.features, &data.labels, 50, 1e-5, &mut r).unwrap();
                worst = worst.max(g.max_rel_error);
                min_checked = min_checked.min(g.checked);
            }
        }
    }
    let ok = worst <= 1e-4 && min_checked == 50;
    report(
        6,
        ok,
        &format!("max relative error {worst:.2e}, fewest parameters checked {min_checked}"),
        start,
    );
    assert!(ok);
}

#[test]
fn criterion_7_trainability() {
    let start = Instant::now();
    let data = synth_blobs(2, 16, 500, 0.5, &RngStream::new(707, 0)).unwrap();
    let spec = NetworkSpec::fc(16, 64, 16, BlockKind::TypeC, 1.0, 2);
    // Batch 256: 4 steps per epoch, 2000 steps.
    let cfg = TrainConfig::new(0.1, 500, 256, 707);
    let log = sgd_train(&spec, &SchemeKind::RisottoC.into(), &data, None, &cfg).unwrap();
    let ok = log.steps.len() <= 2000 && !log.diverged && log.final_train_loss <= 0.1;
    report(
        7,
        ok,
        &format!("final train loss {:.4} after {} steps", log.final_train_loss, log.steps.len()),
        start,
    );
    let sweep = alpha_sweep(&spec, &[0.0, 1.0], &data, &cfg).unwrap();
    for row in &sweep {
        println!("  alpha {:.2}: final loss {:.4}, accuracy {:.3}", row.alpha, row.final_loss, row.final_accuracy);
    }
    if sweep[1].final_loss > sweep[0].final_loss {
        println!("  WARNING: alpha = 1 did not reach a lower loss than alpha = 0");
    }
    assert!(ok);
}

#[test]
fn criterion_8_raw_jacobian_structure() {
    let start = Instant::now();
    let mut rng = RngStream::new(808, 0);
    let mut worst = 0.0f64;
    let mut worst_fd = 0.0f64;
    let opts = ReportOptions {
        fd_step: 1e-6,
        ..ReportOptions::default()
    };
    for i in 0..40u64 {
        let width = even_in(&mut rng, 4, 32);
        let mut spec = BlockSpec::uniform(BlockKind::TypeC, width, 1, [0.25, 0.5, 1.0, 2.0][i as usize % 4]);
        spec.n_mid = even_in(&mut rng, 4, 32);
        let w = init_risotto_c(&spec, &RngStream::new(11, i)).unwrap();
        let u = gaussian_map(width / 2, 1, 1, &mut rng);
        let r = jacobian_report(&w, &lift(&u), &opts).unwrap();
        let s = &r.raw_singular_values;
        let half = s.len() / 2;
        worst = s[..half]
            .iter()
            .map(|v| (v - 2f64.sqrt()).abs())
            .chain(s[half..].iter().map(|v| v.abs()))
            .fold(worst, f64::max);
        worst_fd = worst_fd.max(r.analytic_vs_fd_gap.unwrap_or(f64::INFINITY));
        let out = effective_map(&w, &u).unwrap();
        assert_eq!(out.dim().0, width / 2);
    }
    let ok = worst <= 1e-9 && worst_fd <= 1e-6;
    report(
        8,
        ok,
        &format!("max deviation from {{sqrt 2, 0}} = {worst:.2e}, analytic-vs-FD gap {worst_fd:.2e}"),
        start,
    );
    assert!(ok);
}
