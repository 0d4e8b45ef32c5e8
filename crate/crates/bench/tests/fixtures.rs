use risotto_bench::block_fixture;
use risotto_core::linalg::svd_values;
use risotto_core::network::effective_jacobian;

#[test]
fn fixture_blocks_are_isometric() {
    for (width, k, side) in [(16, 1, 1), (8, 3, 4)] {
        let (w, x) = block_fixture(width, k, side, 3).unwrap();
        let s = svd_values(&effective_jacobian(&w, &x).unwrap()).unwrap();
        assert_eq!(s.len(), width / 2 * side * side);
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}
