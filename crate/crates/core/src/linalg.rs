//! Small dense linear-algebra helpers for symmetric 3x3 matrices: ordered
//! eigen-decomposition, rank-cut pseudo-inverse and SPD solves.

use nalgebra::{Matrix3, Vector3};

/// Eigen-decomposition of a symmetric 3x3 matrix with eigenvalues sorted
/// ascending and eigenvector columns matching that order.
pub fn sym_eigen(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let vectors = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    (values, vectors)
}

/// Largest eigenvalue of a symmetric 3x3 matrix.
pub fn max_eigenvalue(m: &Matrix3<f64>) -> f64 {
    sym_eigen(m).0[2]
}

/// Smallest eigenvalue of a symmetric 3x3 matrix.
pub fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    sym_eigen(m).0[0]
}

/// True when the symmetric matrix is positive semidefinite up to `tol`
/// (smallest eigenvalue >= -tol).
pub fn is_psd(m: &Matrix3<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues at or
/// below `rel_cutoff * lambda_max` are treated as zero rank.
pub fn pseudo_inverse_psd(m: &Matrix3<f64>, rel_cutoff: f64) -> Matrix3<f64> {
    let (values, vectors) = sym_eigen(m);
    let lambda_max = values[2].max(0.0);
    let cutoff = rel_cutoff * lambda_max;
    let mut inv = Matrix3::zeros();
    for k in 0..3 {
        if values[k] > cutoff && values[k] > 0.0 {
            let v = vectors.column(k);
            inv += (v * v.transpose()) / values[k];
        }
    }
    inv
}

/// Quadratic form `delta^T m^{-1} delta` for symmetric positive-definite `m`,
/// via Cholesky. `None` when the factorization fails.
pub fn spd_quadratic_form(m: &Matrix3<f64>, delta: &Vector3<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(*m)?;
    let x = chol.solve(delta);
    Some(delta.dot(&x))
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Symmetrize a nearly-symmetric matrix; keeps accumulated products exactly
/// symmetric so eigen-solves stay well behaved.
pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        use rand::Rng;
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose()
    }

    #[test]
    fn eigenvalues_of_diagonal_matrix() {
        let m = Matrix3::from_diagonal(&Vector3::new(9.0, 1.0, 4.0));
        let (values, _) = sym_eigen(&m);
        assert_relative_eq!(values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(values[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(values[2], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random_psd(&mut rng);
            let (values, vectors) = sym_eigen(&m);
            let rebuilt = vectors * Matrix3::from_diagonal(&values) * vectors.transpose();
            assert_relative_eq!(m, rebuilt, epsilon = 1e-10);
        }
    }

    #[test]
    fn pseudo_inverse_satisfies_penrose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let m = random_psd(&mut rng);
            let pinv = pseudo_inverse_psd(&m, 1e-10);
            let back = m * pinv * m;
            let scale = m.norm().max(1e-30);
            assert!((back - m).norm() / scale < 1e-6);
        }
    }

    #[test]
    fn pseudo_inverse_of_rank_deficient_projector() {
        // diag(0, 2, 4) -> pinv diag(0, 0.5, 0.25)
        let m = Matrix3::from_diagonal(&Vector3::new(0.0, 2.0, 4.0));
        let pinv = pseudo_inverse_psd(&m, 1e-10);
        let expected = Matrix3::from_diagonal(&Vector3::new(0.0, 0.5, 0.25));
        assert_relative_eq!(pinv, expected, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_form_matches_closed_form() {
        let m = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 8.0));
        let d = Vector3::new(0.0, 0.0, 2.0);
        let q = spd_quadratic_form(&m, &d).unwrap();
        assert_relative_eq!(q, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_form_rejects_singular() {
        let m = Matrix3::zeros();
        assert!(spd_quadratic_form(&m, &Vector3::new(1.0, 0.0, 0.0)).is_none());
    }
}
