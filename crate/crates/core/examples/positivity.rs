//! Sequential block positivity on a small symmetric matrix and the matching
//! block Cholesky factor.

use qsrnet::blockpd::{block_cholesky, sequential_positivity, BlockPartition, PivotTest};
use qsrnet::linalg::Mat;

fn main() -> qsrnet::Result<()> {
    let w = Mat::from_row_slice(
        4,
        4,
        &[4.0, 1.0, 0.5, 0.0, 1.0, 3.0, 0.0, 0.2, 0.5, 0.0, 2.0, 0.3, 0.0, 0.2, 0.3, 1.0],
    );
    let part = BlockPartition::new(vec![1, 2, 1])?;
    let pos = sequential_positivity(&w, &part, &[])?;
    println!("positive = {}  pivot margins {:?}", pos.positive, pos.margins);
    let l = block_cholesky(&w, &part)?;
    println!("block Cholesky factor:{l:.4}");
    println!("reconstruction error {:.2e}", (&l * l.transpose() - &w).norm());

    let mut indefinite = w.clone();
    indefinite[(3, 3)] = -0.5;
    let pos = sequential_positivity(&indefinite, &part, &[PivotTest::Strict; 3])?;
    println!("perturbed: positive = {}  failed at block {:?}", pos.positive, pos.failed_at);
    Ok(())
}
