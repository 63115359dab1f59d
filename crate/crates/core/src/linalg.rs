//! Thin wrappers over `nalgebra` dense factorizations.

use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Solves `a * x = b` by LU with partial pivoting followed by one step of iterative
/// refinement. `None` when the factorization is singular or the result is not finite.
pub fn solve_refined(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in descending order.
/// Column `k` of the returned matrix is the eigenvector of eigenvalue `k`.
pub fn symmetric_eigen_descending(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
