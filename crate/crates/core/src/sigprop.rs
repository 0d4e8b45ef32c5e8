//! Signal propagation: closed-form norm and covariance results for i.i.d.
//! Gaussian residual networks, the ReLU Gaussian covariance, and Monte-Carlo
//! estimators over ensembles of random initializations.
//!
//! Every estimator draws sample `i` from `rng.substream(i)` and reduces with
//! pairwise summation in sample order, so results do not depend on the number
//! of worker threads.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::init::{init_block, BlockKind, BlockSpec, InitScheme, SchemeKind};
use crate::linalg::{FeatureMap, RngStream};
use crate::network::{block_forward, build_network, forward, signal_split, NetworkSpec};

/// Default ReLU covariance constant c used by the covariance bound.
pub const DEFAULT_C: f64 = 0.24;

/// Samples per substream in [`lemma_mc_check`].
pub const LEMMA_CHUNK: usize = 4096;

/// Sum with pairwise (cascade) summation; the grouping depends on the length only.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStderr {
    /// Sample mean and standard error of the mean (unbiased variance).
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::Precondition(format!("need at least 2 samples, got {}", xs.len())));
        }
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Ok(Self {
            mean,
            stderr: (var / n).sqrt(),
            n: xs.len(),
        })
    }

    /// `|mean - target| <= k * stderr`, with exact equality accepted at zero stderr.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

fn sq_norm(x: &FeatureMap) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn inner(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn cosine(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let d = (sq_norm(a) * sq_norm(b)).sqrt();
    if d == 0.0 {
        0.0
    } else {
        inner(a, b) / d
    }
}

fn per_sample<T, F>(n: usize, rng: &RngStream, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RngStream) -> Result<T> + Sync,
{
    (0..n as u64).into_par_iter().map(|i| f(rng.substream(i))).collect()
}

// ---------------------------------------------------------------------------
// Norm propagation

/// Variances and widths of one Gaussian Type C block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTheory {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_skip: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_mid: usize,
    pub n_out: usize,
}

impl LayerTheory {
    /// `(N_out / 2)(alpha^2 s2^2 s1^2 N_mid / 2 + beta^2 s_skip^2)`.
    pub fn factor(&self) -> f64 {
        let (a2, b2) = (self.alpha * self.alpha, self.beta * self.beta);
        let s1 = self.sigma1 * self.sigma1;
        let s2 = self.sigma2 * self.sigma2;
        let sk = self.sigma_skip * self.sigma_skip;
        self.n_out as f64 / 2.0 * (a2 * s2 * s1 * self.n_mid as f64 / 2.0 + b2 * sk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropTheoryParams {
    pub n1: usize,
    pub sigma0: f64,
    pub layers: Vec<LayerTheory>,
}

impl PropTheoryParams {
    /// Parameters of a fully-connected network of Gaussian Type C blocks.
    pub fn from_spec(spec: &NetworkSpec, scheme: &InitScheme) -> Result<Self> {
        spec.validate()?;
        if !spec.is_fully_connected() {
            return Err(Error::Kind("norm theory covers fully-connected networks".into()));
        }
        if !matches!(scheme.kind, SchemeKind::HeNormal | SchemeKind::HeUniform | SchemeKind::BalancedNormal { .. }) {
            return Err(Error::Kind(format!("no i.i.d. norm theory for {}", scheme.name())));
        }
        let layers = spec
            .blocks
            .iter()
            .map(|b| {
                if b.kind != BlockKind::TypeC {
                    return Err(Error::Kind("norm theory needs random projection skips (Type C)".into()));
                }
                let s = scheme.sigmas(b);
                let (alpha, beta) = scheme.branch_weights(b);
                Ok(LayerTheory {
                    sigma1: s.w1,
                    sigma2: s.w2,
                    sigma_skip: s.skip,
                    alpha,
                    beta,
                    n_mid: b.n_mid,
                    n_out: b.n_out,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n1: spec.first_layer_out,
            sigma0: (2.0 / spec.first_layer_out as f64).sqrt(),
            layers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sig_ok = self.sigma0 >= 0.0
            && self
                .layers
                .iter()
                .all(|l| l.sigma1 >= 0.0 && l.sigma2 >= 0.0 && l.sigma_skip >= 0.0);
        let width_ok = self.n1 >= 1 && self.layers.iter().all(|l| l.n_mid >= 1 && l.n_out >= 1);
        if sig_ok && width_ok {
            Ok(())
        } else {
            Err(Error::Spec("theory parameters need sigma >= 0 and widths >= 1".into()))
        }
    }
}

/// Expected squared output norm of the first layer followed by every block.
pub fn expected_norm(p: &PropTheoryParams, input_sq_norm: f64) -> f64 {
    let first = p.n1 as f64 / 2.0 * p.sigma0 * p.sigma0;
    p.layers.iter().fold(first, |acc, l| acc * l.factor()) * input_sq_norm
}

/// Predicted `E ||x^l||^2 / ||x||^2` after `l` blocks, `l = 0..=L`, when a
/// prediction exists: the Gaussian formula for Type C nets, exactly 1 for
/// Risotto (when `input_dim <= N_1 / 2`) and for skip-only Type B schemes.
pub fn theory_norm_profile(spec: &NetworkSpec, scheme: &InitScheme) -> Option<Vec<f64>> {
    let l = spec.depth();
    match scheme.kind {
        SchemeKind::RisottoB | SchemeKind::RisottoC => {
            (spec.input_dim <= spec.first_layer_out / 2).then(|| vec![1.0; l + 1])
        }
        SchemeKind::SkipInit | SchemeKind::FixupLike { .. } if scheme.sigma.is_empty() => {
            let s0 = 2.0 / spec.first_layer_out as f64;
            Some(vec![spec.first_layer_out as f64 / 2.0 * s0; l + 1])
        }
        _ => {
            let p = PropTheoryParams::from_spec(spec, scheme).ok()?;
            let mut out = Vec::with_capacity(l + 1);
            let mut acc = expected_norm(
                &PropTheoryParams {
                    layers: Vec::new(),
                    ..p.clone()
                },
                1.0,
            );
            out.push(acc);
            for layer in &p.layers {
                acc *= layer.factor();
                out.push(acc);
            }
            Some(out)
        }
    }
}

/// Per-layer `||x^l||^2 / ||x||^2` over fresh initializations, `l = 0..=L`.
pub fn mc_norm_profile(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    x: &FeatureMap,
    n_samples: usize,
    rng: &RngStream,
) -> Result<Vec<MeanStderr>> {
    if n_samples < 2 {
        return Err(Error::Precondition("n_samples must be >= 2".into()));
    }
    let x2 = sq_norm(x);
    if x2 == 0.0 {
        return Err(Error::Precondition("input must be nonzero".into()));
    }
    let ratios = per_sample(n_samples, rng, |r| {
        let w = build_network(spec, scheme, &r)?;
        let act = forward(spec, &w, x)?;
        Ok(act.states.iter().map(|s| sq_norm(s) / x2).collect::<Vec<_>>())
    })?;
    (0..=spec.depth())
        .map(|l| MeanStderr::from_samples(&ratios.iter().map(|r| r[l]).collect::<Vec<_>>()))
        .collect()
}

/// Mean and standard error of `||x^L||^2 / ||x||^2`.
pub fn mc_norm_ratio(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    x: &FeatureMap,
    n_samples: usize,
    rng: &RngStream,
) -> Result<MeanStderr> {
    Ok(*mc_norm_profile(spec, scheme, x, n_samples, rng)?.last().expect("depth + 1 entries"))
}

// ---------------------------------------------------------------------------
// ReLU Gaussian covariance

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 48)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_nan() || rho.abs() > 1.0 {
        return Err(Error::Precondition(format!("rho must lie in [-1, 1], got {rho}")));
    }
    Ok(())
}

/// `g(rho) = (2 pi)^(-1/2) int_0^inf Phi(rho u / sqrt(1 - rho^2)) exp(-u^2 / 2) du`.
pub fn g_rho(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if rho == 1.0 {
        return Ok(0.5);
    }
    if rho == -1.0 {
        return Ok(0.0);
    }
    let s = rho / (1.0 - rho * rho).sqrt();
    let k = 1.0 / (2.0 * PI).sqrt();
    Ok(integrate(|u| k * std_normal_cdf(s * u) * (-0.5 * u * u).exp(), 0.0, 12.0, 1e-10))
}

/// `h(rho) = g(rho) rho + sqrt(1 - rho^2) / (2 pi)`, so that
/// `E[phi(z1) phi(z2)] = sqrt(v11 v22) h(rho)`.
pub fn h_rho(rho: f64) -> Result<f64> {
    Ok(g_rho(rho)? * rho + (1.0 - rho * rho).max(0.0).sqrt() / (2.0 * PI))
}

/// `c(rho) = h(rho) - rho / 4`.
pub fn c_rho(rho: f64) -> Result<f64> {
    Ok(h_rho(rho)? - rho / 4.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaEval {
    pub v11: f64,
    pub v22: f64,
    pub v12: f64,
    pub rho: f64,
    pub g_of_rho: f64,
    pub exact_cov: f64,
    pub bound_c: f64,
}

fn check_cov(v11: f64, v22: f64, v12: f64) -> Result<f64> {
    if !(v11 > 0.0 && v22 > 0.0 && v12.is_finite()) {
        return Err(Error::Precondition(format!("need v11, v22 > 0, got {v11}, {v22}")));
    }
    let s = (v11 * v22).sqrt();
    if v12.abs() > s * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "covariance is not positive semidefinite: |v12| = {} > {s}",
            v12.abs()
        )));
    }
    Ok((v12 / s).clamp(-1.0, 1.0))
}

/// `E[phi(z1) phi(z2)]` for `(z1, z2) ~ N(0, [[v11, v12], [v12, v22]])`.
pub fn relu_gauss_cov(v11: f64, v22: f64, v12: f64) -> Result<LemmaEval> {
    let rho = check_cov(v11, v22, v12)?;
    let g = g_rho(rho)?;
    let h = h_rho(rho)?;
    Ok(LemmaEval {
        v11,
        v22,
        v12,
        rho,
        g_of_rho: g,
        exact_cov: (v11 * v22).sqrt() * h,
        bound_c: h - rho / 4.0,
    })
}

/// Monte-Carlo estimate of `E[phi(z1) phi(z2)]` by Cholesky sampling.
/// Chunk `j` of [`LEMMA_CHUNK`] samples draws from `rng.substream(j)`.
pub fn lemma_mc_check(v11: f64, v22: f64, v12: f64, n_samples: usize, rng: &RngStream) -> Result<MeanStderr> {
    let rho = check_cov(v11, v22, v12)?;
    let a = v11.sqrt();
    let b = v12 / a;
    let c = if rho.abs() == 1.0 { 0.0 } else { (v22 - b * b).max(0.0).sqrt() };
    let chunks = n_samples.div_ceil(LEMMA_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let mut r = rng.substream(j as u64);
            let len = LEMMA_CHUNK.min(n_samples - j * LEMMA_CHUNK);
            (0..len)
                .map(|_| {
                    let e1 = r.standard_normal();
                    let e2 = r.standard_normal();
                    let z1 = a * e1;
                    let z2 = b * e1 + c * e2;
                    z1.max(0.0) * z2.max(0.0)
                })
                .collect()
        })
        .collect();
    MeanStderr::from_samples(&parts.concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub rho: f64,
    pub g: f64,
    pub h: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaScan {
    pub rows: Vec<LemmaRow>,
    pub c_min: f64,
    pub c_max: f64,
}

/// `n` equally spaced points on `[-1, 1]` (endpoints included, `n >= 2`).
pub fn rho_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| if i + 1 == n { 1.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Tabulate `g`, `h` and `c` over a grid and report the range of `c`.
pub fn lemma_constant_scan(grid: &[f64]) -> Result<LemmaScan> {
    let rows = grid
        .iter()
        .map(|&rho| {
            let g = g_rho(rho)?;
            let h = g * rho + (1.0 - rho * rho).max(0.0).sqrt() / (2.0 * PI);
            Ok(LemmaRow { rho, g, h, c: h - rho / 4.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let c_min = rows.iter().map(|r| r.c).fold(f64::INFINITY, f64::min);
    let c_max = rows.iter().map(|r| r.c).fold(f64::NEG_INFINITY, f64::max);
    Ok(LemmaScan { rows, c_min, c_max })
}

// ---------------------------------------------------------------------------
// Covariance propagation

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovBoundParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub c: f64,
    pub depth: usize,
    pub cov0: f64,
}

impl CovBoundParams {
    /// `gamma1 = (1 + beta^2) / 4`, `gamma2 = c (alpha^2 + 2)`.
    pub fn new(alpha: f64, beta: f64, c: f64, depth: usize, cov0: f64) -> Self {
        Self {
            gamma1: (1.0 + beta * beta) / 4.0,
            gamma2: c * (alpha * alpha + 2.0),
            c,
            depth,
            cov0,
        }
    }
}

/// Lower bounds `gamma1^l cov0 + gamma2 (1 - gamma1^l) / (1 - gamma1)` for `l = 0..=L`.
pub fn cov_bound_recursion(p: &CovBoundParams) -> Result<Vec<f64>> {
    if p.gamma1.is_nan() || p.gamma1 >= 1.0 {
        return Err(Error::Precondition(format!("gamma1 must be < 1, got {}", p.gamma1)));
    }
    Ok((0..=p.depth)
        .map(|l| {
            let g = p.gamma1.powi(l as i32);
            g * p.cov0 + p.gamma2 * (1.0 - g) / (1.0 - p.gamma1)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovLayer {
    /// State index: 0 after the first layer, `l` after block `l`.
    pub layer: usize,
    pub cov: MeanStderr,
    pub corr: MeanStderr,
    /// Cosine of the effective signals, when the state width is even.
    pub effective_corr: Option<MeanStderr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovTrace {
    pub scheme: String,
    pub n_samples: usize,
    pub input_norms: (f64, f64),
    /// Cosine of the two (normalized) inputs.
    pub input_corr: f64,
    pub layers: Vec<CovLayer>,
    /// Largest `|cos(u^l, u~^l) - input_corr|` over every sample and layer.
    pub max_effective_deviation: Option<f64>,
}

struct PairSample {
    cov: Vec<f64>,
    corr: Vec<f64>,
    eff: Option<Vec<f64>>,
}

/// Per-layer inner products and correlations of two inputs pushed through
/// the same random network, averaged over initializations. Inputs are
/// normalized to unit norm first.
pub fn mc_cov_trace(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    x: &FeatureMap,
    x_tilde: &FeatureMap,
    n_samples: usize,
    rng: &RngStream,
) -> Result<CovTrace> {
    if n_samples < 2 {
        return Err(Error::Precondition("n_samples must be >= 2".into()));
    }
    let (nx, nt) = (sq_norm(x).sqrt(), sq_norm(x_tilde).sqrt());
    if nx == 0.0 || nt == 0.0 {
        return Err(Error::Precondition("inputs must be nonzero".into()));
    }
    let (x, xt) = (x / nx, x_tilde / nt);
    let input_corr = inner(&x, &xt);
    let samples = per_sample(n_samples, rng, |r| {
        let w = build_network(spec, scheme, &r)?;
        let a = forward(spec, &w, &x)?;
        let b = forward(spec, &w, &xt)?;
        let pairs = a.states.iter().zip(&b.states);
        let cov = pairs.clone().map(|(p, q)| inner(p, q)).collect();
        let corr = pairs.clone().map(|(p, q)| cosine(p, q)).collect();
        let eff = pairs
            .map(|(p, q)| {
                let (_, _, u) = signal_split(p).ok()?;
                let (_, _, v) = signal_split(q).ok()?;
                Some(cosine(&u, &v))
            })
            .collect::<Option<Vec<_>>>();
        Ok(PairSample { cov, corr, eff })
    })?;
    let column = |f: &dyn Fn(&PairSample) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let all_eff = samples.iter().all(|s| s.eff.is_some());
    let mut layers = Vec::with_capacity(spec.depth() + 1);
    for l in 0..=spec.depth() {
        let effective_corr = if all_eff {
            Some(MeanStderr::from_samples(&column(&|s| s.eff.as_ref().expect("checked")[l]))?)
        } else {
            None
        };
        layers.push(CovLayer {
            layer: l,
            cov: MeanStderr::from_samples(&column(&|s| s.cov[l]))?,
            corr: MeanStderr::from_samples(&column(&|s| s.corr[l]))?,
            effective_corr,
        });
    }
    let max_effective_deviation = all_eff.then(|| {
        samples
            .iter()
            .flat_map(|s| s.eff.as_ref().expect("checked").iter())
            .map(|c| (c - input_corr).abs())
            .fold(0.0, f64::max)
    });
    Ok(CovTrace {
        scheme: scheme.name().to_string(),
        n_samples,
        input_norms: (nx, nt),
        input_corr,
        layers,
        max_effective_deviation,
    })
}

/// Both sides of the single-block covariance inequality, each averaged over
/// fresh blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovInequalityCheck {
    pub lhs: MeanStderr,
    pub rhs: MeanStderr,
    /// `lhs` is significantly (3 sigma, one-sided) below `rhs`.
    pub violated: bool,
}

/// Covariance inequality for one Gaussian Type C block at fixed states
/// `x, x~`. The expectation over `W1` on the right-hand side has no closed
/// form and is estimated from the same samples.
pub fn cov_inequality_check(
    spec: &BlockSpec,
    scheme: &InitScheme,
    c: f64,
    x: &FeatureMap,
    x_tilde: &FeatureMap,
    n_samples: usize,
    rng: &RngStream,
) -> Result<CovInequalityCheck> {
    if spec.kind != BlockKind::TypeC {
        return Err(Error::Kind("the covariance inequality is stated for projection skips".into()));
    }
    let s = scheme.sigmas(spec);
    let (alpha, beta) = scheme.branch_weights(spec);
    let (a2, b2) = (alpha * alpha, beta * beta);
    let (s1, s2, sk) = (s.w1 * s.w1, s.w2 * s.w2, s.skip * s.skip);
    let (n, nm) = (spec.n_out as f64, spec.n_mid as f64);
    let (x2, t2) = (sq_norm(x), sq_norm(x_tilde));
    let fixed = 0.25 * n / 2.0 * (a2 * s2 * s1 * nm / 2.0 + 2.0 * b2 * sk) * inner(x, x_tilde)
        + c / 4.0 * a2 * n * s2 * s1 * nm * (x2 * t2).sqrt();
    let pairs = per_sample(n_samples, rng, |r| {
        let w = init_block(spec, scheme, &r)?;
        let lhs = inner(&block_forward(&w, x)?, &block_forward(&w, x_tilde)?);
        let h = crate::linalg::relu(&crate::linalg::conv2d_same(&w.w1, x)?);
        let ht = crate::linalg::relu(&crate::linalg::conv2d_same(&w.w1, x_tilde)?);
        let v = a2 * s2 * sq_norm(&h) + b2 * sk * x2;
        let vt = a2 * s2 * sq_norm(&ht) + b2 * sk * t2;
        Ok((lhs, fixed + (v * vt).sqrt()))
    })?;
    let lhs = MeanStderr::from_samples(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let rhs = MeanStderr::from_samples(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
    Ok(CovInequalityCheck {
        lhs,
        rhs,
        violated: lhs.mean + 3.0 * se < rhs.mean,
    })
}

// ---------------------------------------------------------------------------
// CSV rows

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub scheme: String,
    #[serde(rename = "L")]
    pub depth: usize,
    pub width: usize,
    pub mean: f64,
    pub stderr: f64,
    pub theory: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovRow {
    pub layer: usize,
    pub mean_cov: f64,
    pub stderr: f64,
    pub mean_corr: f64,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCsvRow {
    pub rho: f64,
    pub g: f64,
    pub h: f64,
    pub c: f64,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
}

impl CovTrace {
    /// CSV rows; `mean_corr` is the effective-signal correlation when the
    /// scheme has looks-linear structure and the raw cosine otherwise.
    pub fn rows(&self, looks_linear: bool, bounds: Option<&[f64]>) -> Vec<CovRow> {
        self.layers
            .iter()
            .map(|l| CovRow {
                layer: l.layer,
                mean_cov: l.cov.mean,
                stderr: l.cov.stderr,
                mean_corr: match (&l.effective_corr, looks_linear) {
                    (Some(e), true) => e.mean,
                    _ => l.corr.mean,
                },
                bound: bounds.and_then(|b| b.get(l.layer).copied()),
            })
            .collect()
    }
}

pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
