//! Fixtures shared by the criterion benchmarks in `benches/`.

use ndarray::Array3;

use risotto_core::init::init_block;
use risotto_core::network::{build_network, forward};
use risotto_core::{BlockKind, BlockSpec, BlockWeights, FeatureMap, InitScheme, KernelSize, NetworkSpec, RngStream, SchemeKind};

/// A Risotto C block of the given width and kernel, with a looks-linear input
/// state on a `side x side` grid (the state a first layer would produce).
pub fn block_fixture(width: usize, k: usize, side: usize, seed: u64) -> risotto_core::Result<(BlockWeights, FeatureMap)> {
    let scheme: InitScheme = SchemeKind::RisottoC.into();
    let spec = BlockSpec::uniform(BlockKind::TypeC, width, k, 1.0);
    let w = init_block(&spec, &scheme, &RngStream::new(seed, 0))?;
    let net = NetworkSpec {
        spatial: [side, side],
        first_kernel: KernelSize::square(k),
        blocks: vec![spec],
        ..NetworkSpec::fc(width / 2, width, 1, BlockKind::TypeC, 1.0, 2)
    };
    let weights = build_network(&net, &scheme, &RngStream::new(seed, 1))?;
    let mut r = RngStream::new(seed, 2);
    let x = Array3::from_shape_fn((width / 2, side, side), |_| r.standard_normal());
    let state = forward(&net, &weights, &x)?.states.swap_remove(0);
    Ok((w, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use risotto_core::network::is_complementary;

    #[test]
    fn fixture_state_is_complementary() {
        let (w, x) = block_fixture(8, 3, 4, 0).unwrap();
        assert_eq!(x.dim(), (8, 4, 4));
        assert_eq!(w.n_in(), 8);
        assert!(is_complementary(&x));
    }
}
