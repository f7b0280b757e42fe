mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn messengers_equal_ldl_pivots() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let rn = common::random_network(&mut rng, 2 + trial % 3);
        let gap = common::pivot_gap(&rn);
        assert!(gap < 1e-9, "trial {trial}: rel err {gap:.3e}");
    }
}
