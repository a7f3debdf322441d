//! Axis-angle rotations: exponential / logarithm maps and the left Jacobian.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. `exp(0)` is the exact identity.
pub fn exp_map(theta: &Vector3<f64>) -> Rotation3<f64> {
    if *theta == Vector3::zeros() {
        return Rotation3::identity();
    }
    Rotation3::from_scaled_axis(*theta)
}

/// Axis-angle vector with angle in [0, π].
pub fn log_map(r: &Rotation3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_rotation_matrix(r).scaled_axis()
}

/// Same rotation, angle brought into [0, π].
pub fn canonical(theta: &Vector3<f64>) -> Vector3<f64> {
    let a = theta.norm();
    if a <= std::f64::consts::PI {
        return *theta;
    }
    log_map(&exp_map(theta))
}

/// Left Jacobian of SO(3): `exp(θ + δ) ≈ exp(J_l(θ) δ) exp(θ)`.
pub fn left_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let a2 = theta.norm_squared();
    let k = hat(theta);
    let (b, c) = if a2 < 1e-8 {
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else {
        let a = a2.sqrt();
        ((1.0 - a.cos()) / a2, (a - a.sin()) / (a2 * a))
    };
    Matrix3::identity() + k * b + k * k * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-3.0f64..3.0).prop_map(Vector3::from)
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(exp_map(&Vector3::zeros()), Rotation3::identity());
        let p = Vector3::new(1.5, -2.25, 7.0);
        assert_eq!(exp_map(&Vector3::zeros()) * p, p);
    }

    #[test]
    fn quarter_turn() {
        let r = exp_map(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let v = r * Vector3::x();
        assert!((v - Vector3::y()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn log_inverts_exp(t in vec3()) {
            prop_assume!(t.norm() < std::f64::consts::PI - 1e-6);
            prop_assert!((log_map(&exp_map(&t)) - t).norm() < 1e-9);
        }

        #[test]
        fn canonical_keeps_rotation(t in prop::array::uniform3(-9.0f64..9.0).prop_map(Vector3::from)) {
            let c = canonical(&t);
            prop_assert!(c.norm() <= std::f64::consts::PI + 1e-12);
            prop_assert!((exp_map(&c).matrix() - exp_map(&t).matrix()).amax() < 1e-9);
        }

        #[test]
        fn left_jacobian_matches_finite_differences(t in vec3(), d in vec3()) {
            let h = 1e-6;
            let d = d.normalize() * h;
            let lhs = exp_map(&(t + d));
            let rhs = exp_map(&(left_jacobian(&t) * d)) * exp_map(&t);
            prop_assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-10);
        }
    }
}
