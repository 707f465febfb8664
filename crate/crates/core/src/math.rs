//! Small SO(3) helpers shared by the dynamics and the controller.

use nalgebra::{Matrix3, Vector3};

/// Skew-symmetric matrix of `v`, so that `hat(v) * w == v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Reads the vector out of a skew-symmetric matrix without checking symmetry.
///
/// With `m = [[0, a, b], [-a, 0, c], [-b, -c, 0]]` this is `(-c, b, -a)`.
pub fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    let a = m[(0, 1)];
    let b = m[(0, 2)];
    let c = m[(1, 2)];
    Vector3::new(-c, b, -a)
}

/// Largest absolute entry of `m + mᵀ`.
pub fn skew_residual(m: &Matrix3<f64>) -> f64 {
    (m + m.transpose()).amax()
}

/// Projects a near-orthonormal matrix back onto SO(3).
///
/// Newton iteration for the orthogonal polar factor, `X ← X(3I − XᵀX)/2`.
/// Converges quadratically for inputs already close to a rotation, which is
/// all the integrator ever hands it.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let identity = Matrix3::identity();
    let mut x = *m;
    for _ in 0..3 {
        let err = x.transpose() * x - identity;
        if err.amax() < 1e-15 {
            break;
        }
        x = x * (identity * 3.0 - x.transpose() * x) * 0.5;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_matches_cross_product() {
        let v = Vector3::new(0.3, -1.2, 2.0);
        let w = Vector3::new(-0.7, 0.1, 0.4);
        assert!((hat(&v) * w - v.cross(&w)).amax() < 1e-15);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let m = Matrix3::identity() + Matrix3::new(1e-6, 2e-7, 0.0, 0.0, -3e-7, 1e-6, 0.0, 0.0, 5e-7);
        let r = orthonormalize(&m);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-15);
        assert!((r.determinant() - 1.0).abs() < 1e-15);
    }
}
