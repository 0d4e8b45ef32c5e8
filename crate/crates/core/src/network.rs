//! Residual forward pass, effective-signal extraction and block Jacobians.
//!
//! States are `(channels, height, width)` feature maps. A looks-linear state
//! splits along channels into a positive half `x+` and a negative half `x-`;
//! the effective signal is `u = x+ - x-`.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{
    delta_embed, first_layer_looks_linear, init_block, BlockKind, BlockSpec, BlockWeights, InitScheme,
    KernelSize, SchemeKind, Skip,
};
use crate::linalg::{conv2d_same, haar_orthogonal, kron_identity, relu, svd_values, ConvKernel, FeatureMap, Matrix, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    None,
    #[serde(alias = "avg", alias = "mean")]
    Average,
}

fn unit_spatial() -> [usize; 2] {
    [1, 1]
}

/// Residual network architecture:
/// `x^1 = phi(W0 * x)`, one residual block per entry of `blocks`,
/// then `z_out = W_out P(x^L) + b_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input channels (the input dimension of a fully-connected net).
    pub input_dim: usize,
    /// Spatial size `[H, W]`; `[1, 1]` for fully-connected nets.
    #[serde(default = "unit_spatial")]
    pub spatial: [usize; 2],
    /// `N_1`, output channels of the first layer.
    pub first_layer_out: usize,
    #[serde(default)]
    pub first_kernel: KernelSize,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub pooling: Pooling,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// Fully-connected network with `depth` equal-width blocks.
    pub fn fc(input_dim: usize, width: usize, depth: usize, kind: BlockKind, alpha: f64, output_dim: usize) -> Self {
        Self {
            input_dim,
            spatial: [1, 1],
            first_layer_out: width,
            first_kernel: KernelSize::square(1),
            blocks: (0..depth).map(|_| BlockSpec::uniform(kind, width, 1, alpha)).collect(),
            pooling: Pooling::None,
            output_dim,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn final_width(&self) -> usize {
        self.blocks.last().map_or(self.first_layer_out, |b| b.n_out)
    }

    pub fn spatial_size(&self) -> usize {
        self.spatial[0] * self.spatial[1]
    }

    pub fn is_fully_connected(&self) -> bool {
        self.spatial == [1, 1]
            && self.first_kernel.taps() == 1
            && self.blocks.iter().all(|b| b.k1.taps() == 1 && b.k2.taps() == 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.first_layer_out == 0 || self.output_dim == 0 {
            return Err(Error::Spec("input_dim, first_layer_out and output_dim must be >= 1".into()));
        }
        if self.spatial[0] == 0 || self.spatial[1] == 0 {
            return Err(Error::Spec("spatial size must be nonzero".into()));
        }
        if self.first_kernel.h.is_multiple_of(2) || self.first_kernel.w.is_multiple_of(2) {
            return Err(Error::Spec("first-layer kernel sides must be odd".into()));
        }
        let mut width = self.first_layer_out;
        for (l, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.n_in != width {
                return Err(Error::Spec(format!(
                    "block {} expects {} input channels but receives {width}",
                    l + 1,
                    b.n_in
                )));
            }
            width = b.n_out;
        }
        Ok(())
    }
}

/// One initialized network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub w0: ConvKernel,
    /// `U0` when the first layer has looks-linear structure.
    pub first_record: Option<Matrix>,
    pub blocks: Vec<BlockWeights>,
    pub w_out: Matrix,
    pub b_out: Array1<f64>,
}

/// Recorded states of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: FeatureMap,
    /// `preacts[0] = W0 * x`; `preacts[l]` is block `l`'s pre-activation.
    pub preacts: Vec<FeatureMap>,
    /// `states[l] = phi(preacts[l])`, the state after `l` blocks.
    pub states: Vec<FeatureMap>,
    pub output: Array1<f64>,
}

impl Activations {
    /// Effective signal of `states[l]`, when its width is even.
    pub fn effective(&self, l: usize) -> Option<FeatureMap> {
        signal_split(&self.states[l]).ok().map(|(_, _, u)| u)
    }
}

/// Intermediate quantities of one block evaluation.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    pub mid_pre: FeatureMap,
    pub mid: FeatureMap,
    pub branch: FeatureMap,
    pub skip: FeatureMap,
    pub pre: FeatureMap,
    pub out: FeatureMap,
}

fn add_bias(mut x: FeatureMap, b: &Array1<f64>) -> FeatureMap {
    for (mut ch, &bv) in x.axis_iter_mut(Axis(0)).zip(b.iter()) {
        if bv != 0.0 {
            ch += bv;
        }
    }
    x
}

pub fn block_trace(w: &BlockWeights, x: &FeatureMap) -> Result<BlockTrace> {
    if x.dim().0 != w.n_in() {
        return Err(Error::Dimension(format!(
            "block expects {} channels, state has {}",
            w.n_in(),
            x.dim().0
        )));
    }
    let mid_pre = add_bias(conv2d_same(&w.w1, x)?, &w.b1);
    let mid = relu(&mid_pre);
    let branch = add_bias(conv2d_same(&w.w2, &mid)?, &w.b2);
    let skip = match &w.skip {
        Skip::Identity => x.clone(),
        Skip::Projection(k) => add_bias(conv2d_same(k, x)?, &w.b_skip),
    };
    let pre = &branch * w.alpha + &(&skip * w.beta);
    let out = relu(&pre);
    Ok(BlockTrace {
        mid_pre,
        mid,
        branch,
        skip,
        pre,
        out,
    })
}

/// `phi(alpha f(x) + beta h(x))`.
pub fn block_forward(w: &BlockWeights, x: &FeatureMap) -> Result<FeatureMap> {
    Ok(block_trace(w, x)?.out)
}

pub fn pool(x: &FeatureMap, pooling: Pooling) -> Array1<f64> {
    match pooling {
        Pooling::None => x.iter().copied().collect(),
        Pooling::Average => x.axis_iter(Axis(0)).map(|ch| ch.mean().unwrap_or(0.0)).collect(),
    }
}

pub fn forward(spec: &NetworkSpec, weights: &NetworkWeights, x: &FeatureMap) -> Result<Activations> {
    let expect = (spec.input_dim, spec.spatial[0], spec.spatial[1]);
    if x.dim() != expect {
        return Err(Error::Dimension(format!("network expects input {expect:?}, got {:?}", x.dim())));
    }
    let z0 = conv2d_same(&weights.w0, x)?;
    let mut states = vec![relu(&z0)];
    let mut preacts = vec![z0];
    for w in &weights.blocks {
        let t = block_trace(w, states.last().expect("nonempty"))?;
        preacts.push(t.pre);
        states.push(t.out);
    }
    let pooled = pool(states.last().expect("nonempty"), spec.pooling);
    if pooled.len() != weights.w_out.ncols() {
        return Err(Error::Dimension(format!(
            "output layer expects {} features, pooled state has {}",
            weights.w_out.ncols(),
            pooled.len()
        )));
    }
    let output = weights.w_out.dot(&pooled) + &weights.b_out;
    Ok(Activations {
        input: x.clone(),
        preacts,
        states,
        output,
    })
}

/// Split an even-width state into `(x+, x-, u = x+ - x-)`.
pub fn signal_split(x: &FeatureMap) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
    let c = x.dim().0;
    if !c.is_multiple_of(2) {
        return Err(Error::Dimension(format!("signal split needs an even width, got {c}")));
    }
    let plus = x.slice(s![..c / 2, .., ..]).to_owned();
    let minus = x.slice(s![c / 2.., .., ..]).to_owned();
    let u = &plus - &minus;
    Ok((plus, minus, u))
}

/// Looks-linear lift `[phi(u); phi(-u)]`.
pub fn lift(u: &FeatureMap) -> FeatureMap {
    let neg = u.mapv(|v| -v);
    ndarray::concatenate![Axis(0), relu(u), relu(&neg)]
}

/// Nonnegative with disjointly supported halves.
pub fn is_complementary(x: &FeatureMap) -> bool {
    let c = x.dim().0;
    if !c.is_multiple_of(2) || x.iter().any(|v| *v < 0.0) {
        return false;
    }
    let plus = x.slice(s![..c / 2, .., ..]);
    let minus = x.slice(s![c / 2.., .., ..]);
    plus.iter().zip(minus.iter()).all(|(a, b)| *a == 0.0 || *b == 0.0)
}

fn flatten(x: &FeatureMap) -> Array1<f64> {
    x.iter().copied().collect()
}

fn unflatten(v: &Array1<f64>, shape: (usize, usize, usize)) -> FeatureMap {
    Array3::from_shape_vec(shape, v.to_vec()).expect("length matches shape")
}

fn scale_rows(m: &mut Matrix, mask: &FeatureMap) {
    for (mut row, &z) in m.rows_mut().into_iter().zip(mask.iter()) {
        if z <= 0.0 {
            row.fill(0.0);
        }
    }
}

/// Raw block Jacobian with the mask convention `phi'(0) = 0`.
#[derive(Clone, Debug)]
pub struct RawJacobian {
    pub matrix: Matrix,
    /// Some pre-activation was exactly zero, so the derivative there is a
    /// subgradient choice rather than a true derivative.
    pub zero_preactivation: bool,
}

/// `J = D_out (alpha K2 D_mid K1 + beta S)` in channel-major flattening.
pub fn block_jacobian(w: &BlockWeights, x: &FeatureMap) -> Result<RawJacobian> {
    let t = block_trace(w, x)?;
    let (_, h, wd) = x.dim();
    let mut dk1 = w.w1.operator(h, wd);
    scale_rows(&mut dk1, &t.mid_pre);
    let mut inner = w.w2.operator(h, wd).dot(&dk1) * w.alpha;
    match &w.skip {
        Skip::Identity => {
            for i in 0..inner.nrows() {
                inner[[i, i]] += w.beta;
            }
        }
        Skip::Projection(k) => inner.scaled_add(w.beta, &k.operator(h, wd)),
    }
    scale_rows(&mut inner, &t.pre);
    let zero_preactivation = t.mid_pre.iter().chain(t.pre.iter()).any(|v| *v == 0.0);
    Ok(RawJacobian {
        matrix: inner,
        zero_preactivation,
    })
}

/// Jacobian of the output effective signal with respect to the input
/// effective signal, `Delta_out J_raw L(u)`, where `L(u)` is the derivative of
/// the lift `u -> [phi(u); phi(-u)]` and `Delta` takes half differences.
pub fn effective_jacobian(w: &BlockWeights, x: &FeatureMap) -> Result<Matrix> {
    if !is_complementary(x) {
        return Err(Error::Precondition(
            "effective Jacobian needs a looks-linear input (nonnegative, disjoint halves)".into(),
        ));
    }
    if !w.n_out().is_multiple_of(2) {
        return Err(Error::Dimension(format!("block output width {} is odd", w.n_out())));
    }
    let raw = block_jacobian(w, x)?.matrix;
    let (_, _, u) = signal_split(x)?;
    let (_, h, wd) = x.dim();
    let hw = h * wd;
    let half_in = w.n_in() / 2 * hw;
    let half_out = w.n_out() / 2 * hw;
    let u = flatten(&u);
    // columns of J_raw L(u)
    let mut rl = Array2::zeros((raw.nrows(), half_in));
    for j in 0..half_in {
        if u[j] > 0.0 {
            rl.column_mut(j).assign(&raw.column(j));
        } else if u[j] < 0.0 {
            rl.column_mut(j).assign(&raw.column(j + half_in).mapv(|v| -v));
        }
    }
    Ok(&rl.slice(s![..half_out, ..]) - &rl.slice(s![half_out.., ..]))
}

/// The effective map `u -> split(block(lift(u))).u`.
pub fn effective_map(w: &BlockWeights, u: &FeatureMap) -> Result<FeatureMap> {
    let (_, _, out) = signal_split(&block_forward(w, &lift(u))?)?;
    Ok(out)
}

/// Central-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: F, x: &FeatureMap, step: f64) -> Result<Matrix>
where
    F: Fn(&FeatureMap) -> Result<FeatureMap>,
{
    let n = x.len();
    let shape = x.dim();
    let base = flatten(x);
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut plus = base.clone();
        plus[j] += step;
        let mut minus = base.clone();
        minus[j] -= step;
        let fp = flatten(&f(&unflatten(&plus, shape))?);
        let fm = flatten(&f(&unflatten(&minus, shape))?);
        cols.push((fp - fm) / (2.0 * step));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    let mut j = Array2::zeros((rows, n));
    for (k, c) in cols.into_iter().enumerate() {
        j.column_mut(k).assign(&c);
    }
    Ok(j)
}

/// Spectra and consistency checks for one block at one input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JacobianReport {
    pub raw_singular_values: Vec<f64>,
    pub effective_singular_values: Vec<f64>,
    /// `max |J_eff - M ⊗ I|` when the block recorded an `M`.
    pub effective_residual: Option<f64>,
    /// Largest analytic-vs-finite-difference gap over the Jacobians that were
    /// differentiable at the input; `None` when finite differences were skipped.
    pub analytic_vs_fd_gap: Option<f64>,
    pub zero_preactivation: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ReportOptions {
    pub raw_spectrum: bool,
    pub finite_differences: bool,
    pub fd_step: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            raw_spectrum: true,
            finite_differences: true,
            fd_step: 1e-6,
        }
    }
}

pub fn jacobian_report(w: &BlockWeights, x: &FeatureMap, opts: &ReportOptions) -> Result<JacobianReport> {
    let raw = block_jacobian(w, x)?;
    let raw_singular_values = if opts.raw_spectrum {
        svd_values(&raw.matrix)?
    } else {
        Vec::new()
    };
    let hw = x.dim().1 * x.dim().2;
    let mut gap: Option<f64> = None;
    let mut bump = |g: f64| gap = Some(gap.map_or(g, |v: f64| v.max(g)));
    if opts.finite_differences && !raw.zero_preactivation {
        let fd = finite_difference_jacobian(|v| block_forward(w, v), x, opts.fd_step)?;
        bump(crate::linalg::max_abs_diff(&fd, &raw.matrix));
    }
    let (effective_singular_values, effective_residual) = if is_complementary(x) && w.n_out().is_multiple_of(2) {
        let eff = effective_jacobian(w, x)?;
        let residual = w
            .record
            .as_ref()
            .filter(|r| r.m.dim() == (w.n_out() / 2, w.n_in() / 2))
            .map(|r| crate::linalg::max_abs_diff(&eff, &kron_identity(&r.m, hw)));
        if opts.finite_differences {
            let (_, _, u) = signal_split(x)?;
            if u.iter().all(|v| *v != 0.0) {
                let fd = finite_difference_jacobian(|v| effective_map(w, v), &u, opts.fd_step)?;
                bump(crate::linalg::max_abs_diff(&fd, &eff));
            }
        }
        (svd_values(&eff)?, residual)
    } else {
        (Vec::new(), None)
    };
    Ok(JacobianReport {
        raw_singular_values,
        effective_singular_values,
        effective_residual,
        analytic_vs_fd_gap: gap,
        zero_preactivation: raw.zero_preactivation,
    })
}

fn first_layer(spec: &NetworkSpec, scheme: &InitScheme, rng: &RngStream) -> Result<(ConvKernel, Option<Matrix>)> {
    let n1 = spec.first_layer_out;
    let k = spec.first_kernel;
    if scheme.is_risotto() {
        if !n1.is_multiple_of(2) {
            return Err(Error::Spec(format!("looks-linear first layer needs an even width, got {n1}")));
        }
        let u0 = haar_orthogonal(n1 / 2, spec.input_dim, &mut rng.clone())?;
        let w0 = delta_embed(&first_layer_looks_linear(&u0), k.h, k.w)?;
        Ok((w0, Some(u0)))
    } else {
        let sigma = (2.0 / (n1 * k.taps()) as f64).sqrt();
        let mut r = rng.clone();
        let uniform = matches!(scheme.kind, SchemeKind::HeUniform);
        let data = ndarray::Array4::from_shape_fn((n1, spec.input_dim, k.h, k.w), |_| {
            if uniform {
                sigma * 3f64.sqrt() * (2.0 * r.uniform() - 1.0)
            } else {
                sigma * r.standard_normal()
            }
        });
        Ok((ConvKernel::from_array(data)?, None))
    }
}

/// Initialize a whole network. Layer `l` draws from `rng.substream(l)`:
/// 0 for the first layer, `1..=L` for the blocks, `L + 1` for the output layer.
pub fn build_network(spec: &NetworkSpec, scheme: &InitScheme, rng: &RngStream) -> Result<NetworkWeights> {
    spec.validate()?;
    let (w0, first_record) = first_layer(spec, scheme, &rng.substream(0))?;
    let blocks = spec
        .blocks
        .iter()
        .enumerate()
        .map(|(l, b)| init_block(b, scheme, &rng.substream(l as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let fan_in = match spec.pooling {
        Pooling::Average => spec.final_width(),
        Pooling::None => spec.final_width() * spec.spatial_size(),
    };
    let w_out = rng
        .substream(spec.depth() as u64 + 1)
        .gaussian_matrix(spec.output_dim, fan_in, (2.0 / fan_in as f64).sqrt());
    Ok(NetworkWeights {
        w0,
        first_record,
        blocks,
        w_out,
        b_out: Array1::zeros(spec.output_dim),
    })
}

/// Product of the block effective Jacobians along a forward pass (last block first).
pub fn network_effective_jacobian(weights: &NetworkWeights, act: &Activations) -> Result<Matrix> {
    let first = act.states[0].dim();
    let mut total: Matrix = Array2::eye(first.0 / 2 * first.1 * first.2);
    for (l, w) in weights.blocks.iter().enumerate() {
        total = effective_jacobian(w, &act.states[l])?.dot(&total);
    }
    Ok(total)
}

/// Convenience: a `C x 1 x 1` feature map from a vector.
pub fn fc_state(v: &Array1<f64>) -> FeatureMap {
    Array3::from_shape_vec((v.len(), 1, 1), v.to_vec()).expect("length matches")
}
