//! Shared linear-algebra aliases and small numeric helpers.

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
/// Jacobian of the pinhole projection: 2 rows, 3 columns.
pub type Mat2x3 = nalgebra::Matrix2x3<f64>;

/// Quaternion stored as (w, x, y, z).
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    if n <= 1e-300 {
        return IDENTITY_QUAT;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn rotation_from_unit_quat(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the four components of the unit quaternion.
pub fn rotation_from_unit_quat_backward(q: &Quat, dl_drot: &Mat3) -> Quat {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = dl_drot;
    // dR/dw
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    // dR/dx
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    // dR/dy
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    // dR/dz
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Pulls a gradient through `q_hat = q / |q|`.
pub fn quat_normalize_backward(q_raw: &Quat, dl_dunit: &Quat) -> Quat {
    let n = quat_norm(q_raw);
    if n <= 1e-300 {
        return [0.0; 4];
    }
    let u = quat_normalize(q_raw);
    let dot = u[0] * dl_dunit[0] + u[1] * dl_dunit[1] + u[2] * dl_dunit[2] + u[3] * dl_dunit[3];
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (dl_dunit[i] - u[i] * dot) / n;
    }
    out
}

/// Uniform random unit quaternion (Shoemake's method) from three uniforms in [0, 1).
pub fn uniform_quat(u1: f64, u2: f64, u3: f64) -> Quat {
    use std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
        b * (TAU * u3).cos(),
    ]
}

/// Compensated (Neumaier) accumulator for order-robust scatter sums.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.c += (self.sum - t) + value;
        } else {
            self.c += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quat_identity_rotation() {
        let r = rotation_from_unit_quat(&IDENTITY_QUAT);
        assert_relative_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quat_rotation_is_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = uniform_quat(rng.gen(), rng.gen(), rng.gen());
            let r = rotation_from_unit_quat(&q);
            assert_relative_eq!(r * r.transpose(), Mat3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quat_rotation_backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = uniform_quat(rng.gen(), rng.gen(), rng.gen());
            let g = Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            let grad = rotation_from_unit_quat_backward(&q, &g);
            let eps = 1e-6;
            for i in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += eps;
                qm[i] -= eps;
                let fp = (rotation_from_unit_quat(&qp)).component_mul(&g).sum();
                let fm = (rotation_from_unit_quat(&qm)).component_mul(&g).sum();
                let fd = (fp - fm) / (2.0 * eps);
                assert_relative_eq!(grad[i], fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn quat_normalize_backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let q: Quat = [rng.gen::<f64>() + 0.2, rng.gen(), rng.gen(), rng.gen()];
            let g: Quat = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
            let grad = quat_normalize_backward(&q, &g);
            let eps = 1e-7;
            for i in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += eps;
                qm[i] -= eps;
                let dot = |a: &Quat| {
                    let u = quat_normalize(a);
                    u[0] * g[0] + u[1] * g[1] + u[2] * g[2] + u[3] * g[3]
                };
                let fd = (dot(&qp) - dot(&qm)) / (2.0 * eps);
                assert_relative_eq!(grad[i], fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = Kahan::default();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_relative_eq!(acc.value(), 1000.0, epsilon = 1e-9);
    }
}
