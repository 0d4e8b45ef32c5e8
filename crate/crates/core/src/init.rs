//! Block initializers: Risotto for Type B and Type C residual blocks, and the
//! i.i.d. baselines (He normal/uniform, balanced normal, SkipInit, Fixup-like).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{haar_orthogonal, ConvKernel, Matrix, RngStream};

/// Residual block family: identity skip (B) or trainable 1x1 projection skip (C).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(alias = "B", alias = "b", alias = "type-b")]
    TypeB,
    #[serde(alias = "C", alias = "c", alias = "type-c")]
    TypeC,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "KernelSizeRepr", into = "[usize; 2]")]
pub struct KernelSize {
    pub h: usize,
    pub w: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KernelSizeRepr {
    Square(usize),
    Rect([usize; 2]),
}

impl From<KernelSizeRepr> for KernelSize {
    fn from(r: KernelSizeRepr) -> Self {
        match r {
            KernelSizeRepr::Square(k) => KernelSize::square(k),
            KernelSizeRepr::Rect([h, w]) => KernelSize { h, w },
        }
    }
}

impl From<KernelSize> for [usize; 2] {
    fn from(k: KernelSize) -> Self {
        [k.h, k.w]
    }
}

impl Default for KernelSize {
    fn default() -> Self {
        Self::square(1)
    }
}

impl KernelSize {
    pub fn square(k: usize) -> Self {
        Self { h: k, w: k }
    }

    pub fn taps(&self) -> usize {
        self.h * self.w
    }

    fn is_odd(&self) -> bool {
        self.h % 2 == 1 && self.w % 2 == 1
    }
}

fn one() -> f64 {
    1.0
}

/// Architecture of one residual block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub n_in: usize,
    pub n_mid: usize,
    pub n_out: usize,
    /// Kernel of the first residual layer.
    #[serde(default)]
    pub k1: KernelSize,
    /// Kernel of the second residual layer.
    #[serde(default)]
    pub k2: KernelSize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

impl BlockSpec {
    /// Fully-connected block (1x1 kernels).
    pub fn fc(kind: BlockKind, n_in: usize, n_mid: usize, n_out: usize, alpha: f64) -> Self {
        Self {
            kind,
            n_in,
            n_mid,
            n_out,
            k1: KernelSize::square(1),
            k2: KernelSize::square(1),
            alpha,
            beta: 1.0,
        }
    }

    /// Equal widths everywhere and square `k x k` kernels in both residual layers.
    pub fn uniform(kind: BlockKind, width: usize, k: usize, alpha: f64) -> Self {
        Self {
            kind,
            n_in: width,
            n_mid: width,
            n_out: width,
            k1: KernelSize::square(k),
            k2: KernelSize::square(k),
            alpha,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_mid == 0 || self.n_out == 0 {
            return Err(Error::Spec("block widths must be at least 1".into()));
        }
        if !self.k1.is_odd() || !self.k2.is_odd() {
            return Err(Error::Spec(format!(
                "kernel sides must be odd, got {:?} and {:?}",
                self.k1, self.k2
            )));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Spec("alpha and beta must be finite".into()));
        }
        if self.kind == BlockKind::TypeB && !(self.n_in == self.n_mid && self.n_mid == self.n_out) {
            return Err(Error::Spec(format!(
                "Type B blocks need equal widths, got {}/{}/{}",
                self.n_in, self.n_mid, self.n_out
            )));
        }
        Ok(())
    }

    fn require_even(&self) -> Result<()> {
        if !self.n_in.is_multiple_of(2) || !self.n_mid.is_multiple_of(2) || !self.n_out.is_multiple_of(2) {
            return Err(Error::Spec(format!(
                "looks-linear blocks need even widths, got {}/{}/{}",
                self.n_in, self.n_mid, self.n_out
            )));
        }
        Ok(())
    }

    fn require_kind(&self, kind: BlockKind, what: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind(format!("{what} requires {kind:?}, got {:?}", self.kind)));
        }
        Ok(())
    }
}

/// Optional replacements for the default standard deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SigmaOverrides {
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub skip: Option<f64>,
}

impl SigmaOverrides {
    pub fn is_empty(&self) -> bool {
        self.w1.is_none() && self.w2.is_none() && self.skip.is_none()
    }
}

/// Per-block standard deviations of the i.i.d. schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sigmas {
    pub w1: f64,
    pub w2: f64,
    pub skip: f64,
}

impl Sigmas {
    /// He-style fan-out variances:
    /// `sigma_1 = sqrt(2 / (N_mid k1 k1'))`, `sigma_2 = sqrt(2 / (N_out k2 k2'))`,
    /// `sigma_skip = sqrt(2 / N_out)`.
    pub fn default_for(spec: &BlockSpec) -> Self {
        Self {
            w1: (2.0 / (spec.n_mid * spec.k1.taps()) as f64).sqrt(),
            w2: (2.0 / (spec.n_out * spec.k2.taps()) as f64).sqrt(),
            skip: (2.0 / spec.n_out as f64).sqrt(),
        }
    }

    fn with(self, o: &SigmaOverrides) -> Self {
        Self {
            w1: o.w1.unwrap_or(self.w1),
            w2: o.w2.unwrap_or(self.w2),
            skip: o.skip.unwrap_or(self.skip),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchemeKind {
    HeNormal,
    HeUniform,
    BalancedNormal { alpha: f64, beta: f64 },
    SkipInit,
    FixupLike { total_depth: usize },
    RisottoB,
    RisottoC,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub kind: SchemeKind,
    #[serde(default)]
    pub sigma: SigmaOverrides,
}

impl From<SchemeKind> for InitScheme {
    fn from(kind: SchemeKind) -> Self {
        Self {
            kind,
            sigma: SigmaOverrides::default(),
        }
    }
}

impl InitScheme {
    pub const NAMES: [&'static str; 7] = [
        "he-normal",
        "he-uniform",
        "balanced",
        "skipinit",
        "fixup-like",
        "risotto-b",
        "risotto-c",
    ];

    pub fn name(&self) -> &'static str {
        match self.kind {
            SchemeKind::HeNormal => "he-normal",
            SchemeKind::HeUniform => "he-uniform",
            SchemeKind::BalancedNormal { .. } => "balanced",
            SchemeKind::SkipInit => "skipinit",
            SchemeKind::FixupLike { .. } => "fixup-like",
            SchemeKind::RisottoB => "risotto-b",
            SchemeKind::RisottoC => "risotto-c",
        }
    }

    pub fn is_risotto(&self) -> bool {
        matches!(self.kind, SchemeKind::RisottoB | SchemeKind::RisottoC)
    }

    /// Block family this scheme is built for when the caller does not say.
    pub fn natural_kind(&self) -> BlockKind {
        match self.kind {
            SchemeKind::SkipInit | SchemeKind::FixupLike { .. } | SchemeKind::RisottoB => BlockKind::TypeB,
            _ => BlockKind::TypeC,
        }
    }

    /// `(alpha, beta)` the scheme assigns to a block with this spec.
    pub fn branch_weights(&self, spec: &BlockSpec) -> (f64, f64) {
        match self.kind {
            SchemeKind::HeNormal | SchemeKind::HeUniform => (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            SchemeKind::BalancedNormal { alpha, beta } => (alpha, beta),
            SchemeKind::SkipInit => (0.0, 1.0),
            SchemeKind::FixupLike { .. } => (1.0, 1.0),
            SchemeKind::RisottoB | SchemeKind::RisottoC => (spec.alpha, 1.0),
        }
    }

    pub fn sigmas(&self, spec: &BlockSpec) -> Sigmas {
        Sigmas::default_for(spec).with(&self.sigma)
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    /// Parses the CLI names. `balanced` defaults to `alpha = beta = sqrt(0.5)`
    /// and `fixup-like` to a total depth of 1; callers adjust afterwards.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "he-normal" => SchemeKind::HeNormal,
            "he-uniform" => SchemeKind::HeUniform,
            "balanced" => SchemeKind::BalancedNormal {
                alpha: FRAC_1_SQRT_2,
                beta: FRAC_1_SQRT_2,
            },
            "skipinit" => SchemeKind::SkipInit,
            "fixup-like" => SchemeKind::FixupLike { total_depth: 1 },
            "risotto-b" => SchemeKind::RisottoB,
            "risotto-c" => SchemeKind::RisottoC,
            other => {
                return Err(Error::Spec(format!(
                    "unknown scheme {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(kind.into())
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Skip {
    Identity,
    Projection(ConvKernel),
}

/// Orthogonal submatrices a Risotto block was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct RisottoRecord {
    /// Absent for Type B (its first layer is the identity).
    pub u1: Option<Matrix>,
    pub u2: Matrix,
    pub m: Matrix,
    /// Absent for Type B (identity skip).
    pub u_skip: Option<Matrix>,
}

impl RisottoRecord {
    /// `M - alpha U2 U1`, the Type C skip submatrix.
    pub fn skip_from_parts(m: &Matrix, u2: &Matrix, u1: &Matrix, alpha: f64) -> Matrix {
        m - &(u2.dot(u1) * alpha)
    }
}

/// One initialized residual block: `phi(alpha f(x) + beta h(x))` with
/// `f(x) = W2 * phi(W1 * x + b1) + b2` and `h` the identity or `W_skip * x + b_skip`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub kind: BlockKind,
    pub w1: ConvKernel,
    pub w2: ConvKernel,
    pub skip: Skip,
    pub b1: Array1<f64>,
    pub b2: Array1<f64>,
    pub b_skip: Array1<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub record: Option<RisottoRecord>,
}

impl BlockWeights {
    pub fn n_in(&self) -> usize {
        self.w1.in_channels()
    }

    pub fn n_mid(&self) -> usize {
        self.w1.out_channels()
    }

    pub fn n_out(&self) -> usize {
        self.w2.out_channels()
    }

    /// Every kernel (including the skip projection) has zero off-center taps.
    pub fn is_delta(&self) -> bool {
        let skip_ok = match &self.skip {
            Skip::Identity => true,
            Skip::Projection(k) => k.is_delta(),
        };
        self.w1.is_delta() && self.w2.is_delta() && skip_ok
    }

    pub fn dump(&self, scheme: &InitScheme, spec: &BlockSpec, seed: u64) -> BlockDump {
        let rec = self.record.as_ref();
        BlockDump {
            scheme: scheme.name().to_string(),
            spec: spec.clone(),
            seed,
            alpha: self.alpha,
            beta: self.beta,
            centers: CenterDump {
                w1: nested(&self.w1.center()),
                w2: nested(&self.w2.center()),
                w_skip: match &self.skip {
                    Skip::Identity => None,
                    Skip::Projection(k) => Some(nested(&k.center())),
                },
                u1: rec.and_then(|r| r.u1.as_ref()).map(nested),
                u2: rec.map(|r| nested(&r.u2)),
                m: rec.map(|r| nested(&r.m)),
                u_skip: rec.and_then(|r| r.u_skip.as_ref()).map(nested),
            },
        }
    }
}

/// JSON document written by `init-dump`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub scheme: String,
    pub spec: BlockSpec,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub centers: CenterDump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterDump {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub w_skip: Option<Vec<Vec<f64>>>,
    pub u1: Option<Vec<Vec<f64>>>,
    pub u2: Option<Vec<Vec<f64>>>,
    pub m: Option<Vec<Vec<f64>>>,
    pub u_skip: Option<Vec<Vec<f64>>>,
}

pub fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Kernel whose center tap `(k1/2, k2/2)` holds `h` and every other tap is zero.
pub fn delta_embed(h: &Matrix, k1: usize, k2: usize) -> Result<ConvKernel> {
    let (r, c) = h.dim();
    let mut k = ConvKernel::zeros(r, c, k1, k2)?;
    k.data_mut().slice_mut(s![.., .., k1 / 2, k2 / 2]).assign(h);
    Ok(k)
}

/// `[U, -U; -U, U]`.
pub fn looks_linear(u: &Matrix) -> Matrix {
    let (r, c) = u.dim();
    let mut h = Array2::zeros((2 * r, 2 * c));
    h.slice_mut(s![..r, ..c]).assign(u);
    h.slice_mut(s![..r, c..]).assign(&-u);
    h.slice_mut(s![r.., ..c]).assign(&-u);
    h.slice_mut(s![r.., c..]).assign(u);
    h
}

/// `[U0; -U0]`.
pub fn first_layer_looks_linear(u0: &Matrix) -> Matrix {
    let (r, c) = u0.dim();
    let mut h = Array2::zeros((2 * r, c));
    h.slice_mut(s![..r, ..]).assign(u0);
    h.slice_mut(s![r.., ..]).assign(&-u0);
    h
}

/// Risotto for Type C blocks.
///
/// `U1` is `(n_mid/2) x (n_in/2)`, `U2` is `(n_out/2) x (n_mid/2)` and `M` is
/// `(n_out/2) x (n_in/2)`, each Haar from its own substream (0, 1, 2). The skip
/// submatrix is `M - alpha U2 U1`, so the block acts on the effective signal
/// as `M` for every alpha.
pub fn init_risotto_c(spec: &BlockSpec, rng: &RngStream) -> Result<BlockWeights> {
    spec.validate()?;
    spec.require_kind(BlockKind::TypeC, "Risotto C")?;
    spec.require_even()?;
    let (hi, hm, ho) = (spec.n_in / 2, spec.n_mid / 2, spec.n_out / 2);
    let u1 = haar_orthogonal(hm, hi, &mut rng.substream(0))?;
    let u2 = haar_orthogonal(ho, hm, &mut rng.substream(1))?;
    let m = haar_orthogonal(ho, hi, &mut rng.substream(2))?;
    let u_skip = RisottoRecord::skip_from_parts(&m, &u2, &u1, spec.alpha);
    Ok(BlockWeights {
        kind: BlockKind::TypeC,
        w1: delta_embed(&looks_linear(&u1), spec.k1.h, spec.k1.w)?,
        w2: delta_embed(&looks_linear(&u2), spec.k2.h, spec.k2.w)?,
        skip: Skip::Projection(delta_embed(&looks_linear(&u_skip), 1, 1)?),
        b1: Array1::zeros(spec.n_mid),
        b2: Array1::zeros(spec.n_out),
        b_skip: Array1::zeros(spec.n_out),
        alpha: spec.alpha,
        beta: 1.0,
        record: Some(RisottoRecord {
            u1: Some(u1),
            u2,
            m,
            u_skip: Some(u_skip),
        }),
    })
}

/// Risotto for Type B blocks.
///
/// `W1` is the delta identity. `W2` has center `[M - I/alpha, -M; -M, M - I/alpha]`,
/// i.e. the looks-linear lift of `M` minus `I/alpha`, whose top-left block is
/// `U2 = M - I/alpha`. Adding the identity skip cancels the `-I/alpha` part, so
/// at `alpha = 1` the block acts on the effective signal as `M`.
pub fn init_risotto_b(spec: &BlockSpec, rng: &RngStream) -> Result<BlockWeights> {
    spec.validate()?;
    spec.require_kind(BlockKind::TypeB, "Risotto B")?;
    spec.require_even()?;
    if spec.alpha == 0.0 {
        return Err(Error::Division("Risotto B divides by alpha; alpha = 0".into()));
    }
    let n = spec.n_in;
    let half = n / 2;
    let inv = 1.0 / spec.alpha;
    let m = haar_orthogonal(half, half, &mut rng.substream(2))?;
    let u2 = &m - &(Array2::<f64>::eye(half) * inv);
    let w2_center = looks_linear(&m) - &(Array2::<f64>::eye(n) * inv);
    Ok(BlockWeights {
        kind: BlockKind::TypeB,
        w1: delta_embed(&Array2::eye(n), spec.k1.h, spec.k1.w)?,
        w2: delta_embed(&w2_center, spec.k2.h, spec.k2.w)?,
        skip: Skip::Identity,
        b1: Array1::zeros(n),
        b2: Array1::zeros(n),
        b_skip: Array1::zeros(n),
        alpha: spec.alpha,
        beta: 1.0,
        record: Some(RisottoRecord {
            u1: None,
            u2,
            m,
            u_skip: None,
        }),
    })
}

#[derive(Clone, Copy)]
enum Taps {
    Normal,
    /// Uniform on `[-sigma sqrt 3, sigma sqrt 3]` (variance `sigma^2`).
    Uniform,
}

fn random_kernel(
    out: usize,
    inp: usize,
    k: KernelSize,
    sigma: f64,
    taps: Taps,
    mut rng: RngStream,
) -> Result<ConvKernel> {
    let bound = sigma * 3f64.sqrt();
    let data = Array4::from_shape_fn((out, inp, k.h, k.w), |_| match taps {
        Taps::Normal => sigma * rng.standard_normal(),
        Taps::Uniform => bound * (2.0 * rng.uniform() - 1.0),
    });
    ConvKernel::from_array(data)
}

fn random_block(
    spec: &BlockSpec,
    alpha: f64,
    beta: f64,
    sig: Sigmas,
    taps: Taps,
    rng: &RngStream,
) -> Result<BlockWeights> {
    let w1 = random_kernel(spec.n_mid, spec.n_in, spec.k1, sig.w1, taps, rng.substream(0))?;
    let w2 = random_kernel(spec.n_out, spec.n_mid, spec.k2, sig.w2, taps, rng.substream(1))?;
    let skip = match spec.kind {
        BlockKind::TypeB => Skip::Identity,
        BlockKind::TypeC => Skip::Projection(random_kernel(
            spec.n_out,
            spec.n_in,
            KernelSize::square(1),
            sig.skip,
            taps,
            rng.substream(2),
        )?),
    };
    Ok(BlockWeights {
        kind: spec.kind,
        w1,
        w2,
        skip,
        b1: Array1::zeros(spec.n_mid),
        b2: Array1::zeros(spec.n_out),
        b_skip: Array1::zeros(spec.n_out),
        alpha,
        beta,
        record: None,
    })
}

fn check_balanced(alpha: f64, beta: f64, overrides: &SigmaOverrides) -> Result<()> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Spec(format!("alpha, beta must be nonnegative, got {alpha}, {beta}")));
    }
    if overrides.is_empty() && (alpha * alpha + beta * beta - 1.0).abs() > 1e-12 {
        return Err(Error::Spec(format!(
            "balanced normal init needs alpha^2 + beta^2 = 1, got {}",
            alpha * alpha + beta * beta
        )));
    }
    Ok(())
}

/// I.i.d. Gaussian taps (HeNormal or BalancedNormal).
pub fn init_normal(spec: &BlockSpec, scheme: &InitScheme, rng: &RngStream) -> Result<BlockWeights> {
    spec.validate()?;
    if !matches!(scheme.kind, SchemeKind::HeNormal | SchemeKind::BalancedNormal { .. }) {
        return Err(Error::Spec(format!("init_normal does not build {}", scheme.name())));
    }
    let (alpha, beta) = scheme.branch_weights(spec);
    check_balanced(alpha, beta, &scheme.sigma)?;
    random_block(spec, alpha, beta, scheme.sigmas(spec), Taps::Normal, rng)
}

/// Variance-matched uniform taps with `alpha = beta = sqrt(0.5)`.
pub fn init_he_uniform(spec: &BlockSpec, rng: &RngStream) -> Result<BlockWeights> {
    init_he_uniform_with(spec, &SigmaOverrides::default(), rng)
}

fn init_he_uniform_with(spec: &BlockSpec, o: &SigmaOverrides, rng: &RngStream) -> Result<BlockWeights> {
    spec.validate()?;
    let sig = Sigmas::default_for(spec).with(o);
    random_block(spec, FRAC_1_SQRT_2, FRAC_1_SQRT_2, sig, Taps::Uniform, rng)
}

/// He-initialized residual branch behind `alpha = 0` and an identity skip.
pub fn init_skipinit(spec: &BlockSpec, rng: &RngStream) -> Result<BlockWeights> {
    init_skipinit_with(spec, &SigmaOverrides::default(), rng)
}

fn init_skipinit_with(spec: &BlockSpec, o: &SigmaOverrides, rng: &RngStream) -> Result<BlockWeights> {
    spec.validate()?;
    spec.require_kind(BlockKind::TypeB, "SkipInit")?;
    random_block(spec, 0.0, 1.0, Sigmas::default_for(spec).with(o), Taps::Normal, rng)
}

/// Zero `W2`, He `W1` scaled by `total_depth^(-1/2)`, identity skip, `alpha = 1`.
pub fn init_fixup_like(spec: &BlockSpec, total_depth: usize, rng: &RngStream) -> Result<BlockWeights> {
    init_fixup_like_with(spec, total_depth, &SigmaOverrides::default(), rng)
}

fn init_fixup_like_with(
    spec: &BlockSpec,
    total_depth: usize,
    o: &SigmaOverrides,
    rng: &RngStream,
) -> Result<BlockWeights> {
    spec.validate()?;
    spec.require_kind(BlockKind::TypeB, "Fixup-like init")?;
    if total_depth == 0 {
        return Err(Error::Spec("Fixup-like init needs total_depth >= 1".into()));
    }
    let mut sig = Sigmas::default_for(spec).with(o);
    sig.w1 /= (total_depth as f64).sqrt();
    let mut block = random_block(spec, 1.0, 1.0, sig, Taps::Normal, rng)?;
    block.w2.data_mut().fill(0.0);
    Ok(block)
}

/// Dispatch on the scheme.
pub fn init_block(spec: &BlockSpec, scheme: &InitScheme, rng: &RngStream) -> Result<BlockWeights> {
    match scheme.kind {
        SchemeKind::HeNormal | SchemeKind::BalancedNormal { .. } => init_normal(spec, scheme, rng),
        SchemeKind::HeUniform => init_he_uniform_with(spec, &scheme.sigma, rng),
        SchemeKind::SkipInit => init_skipinit_with(spec, &scheme.sigma, rng),
        SchemeKind::FixupLike { total_depth } => init_fixup_like_with(spec, total_depth, &scheme.sigma, rng),
        SchemeKind::RisottoB => init_risotto_b(spec, rng),
        SchemeKind::RisottoC => init_risotto_c(spec, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram_residual, max_abs_diff};
    use ndarray::array;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, 0)
    }

    #[test]
    fn delta_embed_places_center() {
        let h = array![[1.0, -2.0], [3.0, 4.0]];
        let k = delta_embed(&h, 1, 1).unwrap();
        assert_eq!(k.center(), h);
        let k = delta_embed(&h, 3, 3).unwrap();
        assert_eq!(k.center(), h);
        assert!(k.is_delta());
        let mass: f64 = k.data().iter().map(|v| v.abs()).sum();
        assert_eq!(mass, 10.0);
        assert!(delta_embed(&h, 2, 3).is_err());
    }

    #[test]
    fn looks_linear_blocks() {
        assert_eq!(looks_linear(&array![[1.0]]), array![[1.0, -1.0], [-1.0, 1.0]]);
        let u = array![[1.0, 2.0], [0.5, -1.0]];
        let h = looks_linear(&u);
        let v = array![0.3, -0.7];
        let vv = ndarray::concatenate![ndarray::Axis(0), v, v];
        assert!(h.dot(&vv).iter().all(|x| x.abs() == 0.0));
        let vm = ndarray::concatenate![ndarray::Axis(0), v, -&v];
        let uv = u.dot(&v) * 2.0;
        let expect = ndarray::concatenate![ndarray::Axis(0), uv, -&uv];
        assert!(max_abs_diff(&h.dot(&vm), &expect) < 1e-15);
    }

    #[test]
    fn first_layer_structure() {
        let h = first_layer_looks_linear(&Array2::eye(2));
        assert_eq!(h, array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        let u0 = array![[0.6, 0.8], [-0.8, 0.6]];
        let x = array![1.5, -2.0];
        let hx = first_layer_looks_linear(&u0).dot(&x);
        let top = hx.slice(s![..2]).to_owned();
        let bottom = hx.slice(s![2..]).to_owned();
        assert!(max_abs_diff(&(&top - &bottom), &(u0.dot(&x) * 2.0)) < 1e-15);
        let r = crate::linalg::relu(&hx);
        let d = &r.slice(s![..2]) - &r.slice(s![2..]);
        assert!(max_abs_diff(&d, &u0.dot(&x)) < 1e-15);
    }

    #[test]
    fn risotto_c_alpha_zero_skip_is_m() {
        let spec = BlockSpec::uniform(BlockKind::TypeC, 6, 3, 0.0);
        let w = init_risotto_c(&spec, &rng(1)).unwrap();
        let rec = w.record.as_ref().unwrap();
        assert_eq!(rec.u_skip.as_ref().unwrap(), &rec.m);
    }

    #[test]
    fn risotto_c_reconstruction() {
        let spec = BlockSpec::uniform(BlockKind::TypeC, 4, 1, 1.0);
        let w = init_risotto_c(&spec, &rng(2)).unwrap();
        let rec = w.record.as_ref().unwrap();
        let Skip::Projection(k) = &w.skip else { panic!("Type C has a projection skip") };
        let center = k.center();
        let top_left = center.slice(s![..2, ..2]).to_owned();
        let back = &top_left + &rec.u2.dot(rec.u1.as_ref().unwrap());
        assert!(max_abs_diff(&back, &rec.m) <= 1e-15);
        let rebuilt = RisottoRecord::skip_from_parts(&rec.m, &rec.u2, rec.u1.as_ref().unwrap(), w.alpha);
        assert_eq!(looks_linear(&rebuilt), center);
        for u in [rec.u1.as_ref().unwrap(), &rec.u2, &rec.m] {
            assert!(gram_residual(u) <= 1e-12);
        }
    }

    #[test]
    fn risotto_c_rectangular_shapes() {
        let spec = BlockSpec::fc(BlockKind::TypeC, 8, 12, 4, 0.5);
        let w = init_risotto_c(&spec, &rng(3)).unwrap();
        let rec = w.record.as_ref().unwrap();
        assert_eq!(rec.u1.as_ref().unwrap().dim(), (6, 4));
        assert_eq!(rec.u2.dim(), (2, 6));
        assert_eq!(rec.m.dim(), (2, 4));
    }

    #[test]
    fn risotto_c_errors() {
        let odd = BlockSpec::uniform(BlockKind::TypeC, 5, 1, 1.0);
        assert!(matches!(init_risotto_c(&odd, &rng(0)), Err(Error::Spec(_))));
        let b = BlockSpec::uniform(BlockKind::TypeB, 4, 1, 1.0);
        assert!(matches!(init_risotto_c(&b, &rng(0)), Err(Error::Kind(_))));
    }

    #[test]
    fn risotto_b_structure() {
        let spec = BlockSpec::uniform(BlockKind::TypeB, 4, 3, 1.0);
        let w = init_risotto_b(&spec, &rng(4)).unwrap();
        let rec = w.record.as_ref().unwrap();
        let c = w.w2.center();
        let tl = c.slice(s![..2, ..2]).to_owned();
        assert!(max_abs_diff(&tl, &(&rec.m - &Array2::<f64>::eye(2))) <= 1e-15);
        assert_eq!(tl, rec.u2);
        assert_eq!(w.w1.center(), Array2::<f64>::eye(4));
        assert!(w.is_delta());
        assert_eq!(w.skip, Skip::Identity);
        let x = ndarray::Array3::from_shape_fn((4, 3, 3), |(c, i, j)| (c + 2 * i) as f64 - j as f64);
        assert_eq!(crate::linalg::conv2d_same(&w.w1, &x).unwrap(), x);
    }

    #[test]
    fn risotto_b_errors() {
        let zero = BlockSpec::uniform(BlockKind::TypeB, 4, 1, 0.0);
        assert!(matches!(init_risotto_b(&zero, &rng(0)), Err(Error::Division(_))));
        let mut uneq = BlockSpec::uniform(BlockKind::TypeB, 4, 1, 1.0);
        uneq.n_mid = 6;
        assert!(matches!(init_risotto_b(&uneq, &rng(0)), Err(Error::Spec(_))));
    }

    #[test]
    fn normal_rejects_unbalanced() {
        let spec = BlockSpec::uniform(BlockKind::TypeC, 4, 1, 1.0);
        let bad: InitScheme = SchemeKind::BalancedNormal { alpha: 1.0, beta: 1.0 }.into();
        assert!(matches!(init_normal(&spec, &bad, &rng(0)), Err(Error::Spec(_))));
        let mut ok = bad;
        ok.sigma.w1 = Some(0.1);
        assert!(init_normal(&spec, &ok, &rng(0)).is_ok());
    }

    #[test]
    fn baselines_zero_biases_and_alpha() {
        let c = BlockSpec::uniform(BlockKind::TypeC, 6, 3, 1.0);
        let b = BlockSpec::uniform(BlockKind::TypeB, 6, 3, 1.0);
        let blocks = [
            init_normal(&c, &SchemeKind::HeNormal.into(), &rng(1)).unwrap(),
            init_he_uniform(&c, &rng(1)).unwrap(),
            init_skipinit(&b, &rng(1)).unwrap(),
            init_fixup_like(&b, 4, &rng(1)).unwrap(),
        ];
        for w in &blocks {
            assert!(w.b1.iter().chain(w.b2.iter()).chain(w.b_skip.iter()).all(|v| *v == 0.0));
        }
        assert_eq!(blocks[2].alpha, 0.0);
        assert!(blocks[2].w2.data().iter().any(|v| *v != 0.0));
        assert!(blocks[3].w2.data().iter().all(|v| *v == 0.0));
        assert_eq!(blocks[3].alpha, 1.0);
        assert!(matches!(init_fixup_like(&b, 0, &rng(1)), Err(Error::Spec(_))));
        assert!(matches!(init_skipinit(&c, &rng(1)), Err(Error::Kind(_))));
    }

    #[test]
    fn scheme_names_round_trip() {
        for name in InitScheme::NAMES {
            assert_eq!(name.parse::<InitScheme>().unwrap().name(), name);
        }
        assert!("xavier".parse::<InitScheme>().is_err());
    }

    #[test]
    fn kernel_size_json_forms() {
        let k: KernelSize = serde_json::from_str("3").unwrap();
        assert_eq!(k, KernelSize::square(3));
        let k: KernelSize = serde_json::from_str("[1, 3]").unwrap();
        assert_eq!(k, KernelSize { h: 1, w: 3 });
        assert_eq!(serde_json::to_string(&k).unwrap(), "[1,3]");
    }
}
