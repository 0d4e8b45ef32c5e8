//! Dense numeric kernels shared by every other module.
//!
//! Matrices are row-major `ndarray` arrays of `f64`; feature maps are laid out
//! channel-major as `(channels, height, width)`. A fully-connected state is the
//! special case of a `C x 1 x 1` feature map.

use nalgebra::DMatrix;
use ndarray::{Array, Array2, Array3, Array4, Dimension};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type FeatureMap = Array3<f64>;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A replayable random stream identified by `(master_seed, stream_id)`.
///
/// The sequence is a pure function of the seed, the stream id and the
/// position within the stream, so any stream can be rebuilt at any point
/// with [`RngStream::at`]. Children obtained with [`RngStream::substream`]
/// are keyed on the parent's identity, never on its position, which makes
/// per-layer and per-sample initialization order independent.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    /// Rebuild a stream positioned at `counter` 32-bit words from its start.
    pub fn at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self::new(master_seed, stream_id);
        s.rng.set_word_pos(counter as u128);
        s
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    /// Independent child stream. Does not advance `self`.
    pub fn substream(&self, id: u64) -> RngStream {
        let child_seed = splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_add(1)));
        RngStream::new(child_seed, id)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> Matrix {
        Array2::from_shape_fn((rows, cols), |_| sigma * self.standard_normal())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Haar-distributed matrix with orthonormal rows (wide or square) or
/// orthonormal columns (tall).
///
/// QR of an i.i.d. Gaussian matrix, then column `j` of `Q` is multiplied by
/// `sign(R_jj)` (zero maps to `+1`). Without that correction the result is
/// biased by the sign convention of the QR routine.
pub fn haar_orthogonal(n_rows: usize, n_cols: usize, rng: &mut RngStream) -> Result<Matrix> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::Dimension(format!(
            "orthogonal matrix needs nonzero shape, got {n_rows}x{n_cols}"
        )));
    }
    let (tall, short) = (n_rows.max(n_cols), n_rows.min(n_cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.standard_normal());
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = Array2::from_shape_fn((tall, short), |(i, j)| q[(i, j)]);
    Ok(if n_rows >= n_cols { q } else { q.t().to_owned() })
}

/// Singular values in descending order, `min(rows, cols)` of them.
pub fn svd_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("singular values of a non-finite matrix".into()));
    }
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let dm = DMatrix::<f64>::from_fn(rows, cols, |i, j| m[[i, j]]);
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Orthonormality defect: `max |U U^T - I|` for wide/square `U`, `max |U^T U - I|` for tall.
pub fn gram_residual(u: &Matrix) -> f64 {
    let (r, c) = u.dim();
    let g = if r <= c { u.dot(&u.t()) } else { u.t().dot(u) };
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - target).abs());
        }
    }
    worst
}

pub fn max_abs_diff<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `M ⊗ I_n` in channel-major flattening: entry `(i*n + p, j*n + q)` is `m_ij δ_pq`.
pub fn kron_identity(m: &Matrix, n: usize) -> Matrix {
    let (r, c) = m.dim();
    let mut out = Array2::zeros((r * n, c * n));
    for i in 0..r {
        for j in 0..c {
            let v = m[[i, j]];
            if v != 0.0 {
                for p in 0..n {
                    out[[i * n + p, j * n + p]] = v;
                }
            }
        }
    }
    out
}

/// 4-D convolution kernel `(out_channels, in_channels, k1, k2)` with odd spatial sides.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    data: Array4<f64>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, k1: usize, k2: usize) -> Result<Self> {
        Self::from_array(Array4::zeros((out_channels, in_channels, k1, k2)))
    }

    pub fn from_array(data: Array4<f64>) -> Result<Self> {
        let (_, _, k1, k2) = data.dim();
        if k1 % 2 == 0 || k2 % 2 == 0 {
            return Err(Error::Spec(format!("kernel sides must be odd, got {k1}x{k2}")));
        }
        Ok(Self { data })
    }

    pub fn out_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn k1(&self) -> usize {
        self.data.dim().2
    }

    pub fn k2(&self) -> usize {
        self.data.dim().3
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<f64> {
        &mut self.data
    }

    pub fn center_index(&self) -> (usize, usize) {
        (self.k1() / 2, self.k2() / 2)
    }

    /// The channel matrix at the center tap.
    pub fn center(&self) -> Matrix {
        let (a, b) = self.center_index();
        self.data
            .slice(ndarray::s![.., .., a, b])
            .to_owned()
    }

    /// True when every off-center tap is exactly zero.
    pub fn is_delta(&self) -> bool {
        let (ca, cb) = self.center_index();
        self.data
            .indexed_iter()
            .all(|((_, _, a, b), &v)| (a == ca && b == cb) || v.to_bits() == 0)
    }

    /// Dense linear operator of [`conv2d_same`] on `in_channels x h x w` maps.
    pub fn operator(&self, h: usize, w: usize) -> Matrix {
        let (co, ci, k1, k2) = self.data.dim();
        let (c1, c2) = (k1 as isize / 2, k2 as isize / 2);
        let hw = h * w;
        let mut op = Array2::zeros((co * hw, ci * hw));
        for ((o, c, a, b), &v) in self.data.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            let (di, dj) = (a as isize - c1, b as isize - c2);
            for i in 0..h as isize {
                let si = i + di;
                if si < 0 || si >= h as isize {
                    continue;
                }
                for j in 0..w as isize {
                    let sj = j + dj;
                    if sj < 0 || sj >= w as isize {
                        continue;
                    }
                    let row = o * hw + (i as usize) * w + j as usize;
                    let col = c * hw + (si as usize) * w + sj as usize;
                    op[[row, col]] += v;
                }
            }
        }
        op
    }
}

/// Cross-correlation with zero "same" padding.
pub fn conv2d_same(kernel: &ConvKernel, input: &FeatureMap) -> Result<FeatureMap> {
    let (cin, h, w) = input.dim();
    if kernel.in_channels() != cin {
        return Err(Error::Dimension(format!(
            "kernel expects {} input channels, feature map has {cin}",
            kernel.in_channels()
        )));
    }
    let (co, _, k1, k2) = kernel.data.dim();
    let (c1, c2) = (k1 as isize / 2, k2 as isize / 2);
    let mut out = Array3::zeros((co, h, w));
    for ((o, c, a, b), &v) in kernel.data.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let (di, dj) = (a as isize - c1, b as isize - c2);
        let i_lo = (-di).max(0) as usize;
        let i_hi = (h as isize - di).min(h as isize).max(0) as usize;
        let j_lo = (-dj).max(0) as usize;
        let j_hi = (w as isize - dj).min(w as isize).max(0) as usize;
        for i in i_lo..i_hi {
            let si = (i as isize + di) as usize;
            for j in j_lo..j_hi {
                let sj = (j as isize + dj) as usize;
                out[[o, i, j]] += v * input[[c, si, sj]];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn haar_one_by_one_is_a_sign() {
        for seed in 0..20 {
            let q = haar_orthogonal(1, 1, &mut RngStream::new(seed, 0)).unwrap();
            assert_eq!(q[[0, 0]].abs(), 1.0);
        }
    }

    #[test]
    fn haar_square_and_rectangular_orthonormal() {
        let mut rng = RngStream::new(7, 3);
        let q = haar_orthogonal(4, 4, &mut rng).unwrap();
        assert!(q.t().dot(&q).iter().enumerate().all(|(k, v)| {
            let target = if k % 5 == 0 { 1.0 } else { 0.0 };
            (v - target).abs() <= 1e-12
        }));
        let u = haar_orthogonal(2, 5, &mut rng).unwrap();
        assert_eq!(u.dim(), (2, 5));
        let g = u.dot(&u.t());
        assert!((g[[0, 0]] - 1.0).abs() <= 1e-12);
        assert!((g[[1, 1]] - 1.0).abs() <= 1e-12);
        assert!(g[[0, 1]].abs() <= 1e-12);
        let t = haar_orthogonal(6, 3, &mut rng).unwrap();
        assert_eq!(t.dim(), (6, 3));
        assert!(gram_residual(&t) <= 1e-12);
    }

    #[test]
    fn haar_rejects_zero_dimension() {
        assert!(matches!(
            haar_orthogonal(0, 3, &mut RngStream::new(1, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn stream_replay_and_independence() {
        let mut a = RngStream::new(11, 2);
        let first: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let mut b = RngStream::new(11, 2);
        let again: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(first, again);

        let mut c = RngStream::new(11, 2);
        for _ in 0..4 {
            c.next_u64();
        }
        let mut replay = RngStream::at(11, 2, c.counter());
        assert_eq!(c.next_u64(), replay.next_u64());

        let mut other = RngStream::new(11, 3);
        assert_ne!(first[0], other.next_u64());
        let mut s0 = a.substream(0);
        let mut s1 = a.substream(1);
        assert_ne!(s0.next_u64(), s1.next_u64());
    }

    #[test]
    fn svd_trivial_cases() {
        let sv = svd_values(&Array2::eye(3)).unwrap();
        assert!(sv.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let sv = svd_values(&array![[3.0, 0.0], [0.0, -2.0]]).unwrap();
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
        let sv = svd_values(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(sv.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert_eq!(svd_values(&Array2::zeros((3, 5))).unwrap().len(), 3);
    }

    #[test]
    fn svd_rejects_nan() {
        let m = array![[1.0, f64::NAN]];
        assert!(matches!(svd_values(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&array![-1.0, 0.0, 2.0]), array![0.0, 0.0, 2.0]);
        assert_eq!(relu(&array![-1.0, -3.0]), array![0.0, 0.0]);
    }

    #[test]
    fn kernel_rejects_even_sides() {
        assert!(ConvKernel::zeros(2, 2, 2, 3).is_err());
        assert!(ConvKernel::zeros(2, 2, 3, 1).is_ok());
    }

    #[test]
    fn delta_identity_kernel_leaves_input_unchanged() {
        let mut k = ConvKernel::zeros(2, 2, 3, 3).unwrap();
        k.data_mut()[[0, 0, 1, 1]] = 1.0;
        k.data_mut()[[1, 1, 1, 1]] = 1.0;
        let x = Array3::from_shape_fn((2, 4, 5), |(c, i, j)| (c * 20 + i * 5 + j) as f64 - 7.5);
        assert_eq!(conv2d_same(&k, &x).unwrap(), x);
    }

    #[test]
    fn delta_kernel_on_single_pixel_is_matmul() {
        let h = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.25]];
        let mut k = ConvKernel::zeros(3, 2, 3, 3).unwrap();
        k.data_mut().slice_mut(ndarray::s![.., .., 1, 1]).assign(&h);
        let x = Array3::from_shape_vec((2, 1, 1), vec![2.0, -1.0]).unwrap();
        let y = conv2d_same(&k, &x).unwrap();
        let expect = h.dot(&array![2.0, -1.0]);
        for o in 0..3 {
            assert_eq!(y[[o, 0, 0]], expect[o]);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let k = ConvKernel::zeros(2, 3, 1, 1).unwrap();
        let x = Array3::zeros((2, 2, 2));
        assert!(matches!(conv2d_same(&k, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn operator_matches_conv() {
        let mut rng = RngStream::new(5, 0);
        let data = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.standard_normal());
        let k = ConvKernel::from_array(data).unwrap();
        let x = Array3::from_shape_fn((2, 4, 3), |_| rng.standard_normal());
        let y = conv2d_same(&k, &x).unwrap();
        let flat = x.iter().copied().collect::<ndarray::Array1<f64>>();
        let y2 = k.operator(4, 3).dot(&flat);
        for (a, b) in y.iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_identity_layout() {
        let m = array![[1.0, 2.0]];
        let k = kron_identity(&m, 2);
        assert_eq!(k, array![[1.0, 0.0, 2.0, 0.0], [0.0, 1.0, 0.0, 2.0]]);
    }
}
