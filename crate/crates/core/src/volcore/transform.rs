use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

/// `p ↦ matrix · p + translation`, used to map cube voxel coordinates back
/// to source world millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: Matrix3<f64>,
    pub translation: Vec3,
}

impl AffineTransform {
    pub fn new(matrix: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = AffineTransform { matrix, translation };
        if !t.is_invertible() {
            return Err(Error::Degenerate("affine matrix is singular".into()));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        AffineTransform { matrix: Matrix3::identity(), translation: Vec3::zeros() }
    }

    /// Axis-aligned scale followed by a shift.
    pub fn scale_shift(scale: Vec3, shift: Vec3) -> Result<Self> {
        AffineTransform::new(Matrix3::from_diagonal(&scale), shift)
    }

    fn is_invertible(&self) -> bool {
        let svd = self.matrix.svd(false, false);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        min > 0.0 && (max / min).is_finite() && self.translation.iter().all(|c| c.is_finite())
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.matrix * p + self.translation
    }

    pub fn apply_vector(&self, d: Vec3) -> Vec3 {
        self.matrix * d
    }

    pub fn inverse(&self) -> AffineTransform {
        let inv = self.matrix.try_inverse().expect("AffineTransform invariant: invertible matrix");
        AffineTransform { matrix: inv, translation: -(inv * self.translation) }
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        self.matrix.lu().solve(&(p - self.translation)).expect("invertible matrix")
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        AffineTransform {
            matrix: self.matrix * inner.matrix,
            translation: self.matrix * inner.translation + self.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn singular_rejected() {
        assert!(AffineTransform::new(Matrix3::zeros(), Vec3::zeros()).is_err());
        assert!(AffineTransform::scale_shift(Vec3::new(1.0, 0.0, 1.0), Vec3::zeros()).is_err());
    }

    #[test]
    fn compose_is_associative_and_inverts() {
        let a = AffineTransform::new(
            *Rotation3::from_euler_angles(0.3, -0.2, 1.1).matrix() * 2.0,
            Vec3::new(1.0, -4.0, 2.5),
        )
        .unwrap();
        let b = AffineTransform::scale_shift(Vec3::new(0.5, 1.5, 3.0), Vec3::new(-7.0, 0.0, 1.0)).unwrap();
        let c = AffineTransform::new(
            *Rotation3::from_euler_angles(-1.0, 0.5, 0.2).matrix(),
            Vec3::new(0.0, 9.0, -3.0),
        )
        .unwrap();
        let p = Vec3::new(3.0, -2.0, 8.0);
        let left = a.compose(&b).compose(&c).apply(p);
        let right = a.compose(&b.compose(&c)).apply(p);
        assert!((left - right).amax() < 1e-12);
        assert!((a.apply(b.apply(p)) - a.compose(&b).apply(p)).amax() < 1e-12);
        assert!((a.inverse().apply(a.apply(p)) - p).amax() < 1e-12);
        assert!((a.apply_inverse(a.apply(p)) - p).amax() < 1e-12);
    }
}
