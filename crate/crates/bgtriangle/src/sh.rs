//! Real spherical harmonics, bands 1 and 2.
//!
//! The diffuse color of a sub-primitive comes from the color control points;
//! the SH coefficients carry only the view-dependent residual on top of it,
//! so the DC band is omitted. Eight basis functions, three color channels.

use crate::geom::Vec3;

/// Basis functions per channel (bands 1 and 2).
pub const SH_BASIS_COUNT: usize = 8;
/// Stored coefficients: 8 basis functions x RGB, laid out basis-major.
pub const SH_RESIDUAL_COEFFS: usize = SH_BASIS_COUNT * 3;

const C1: f64 = 0.488_602_511_902_919_9;
const C2_0: f64 = 1.092_548_430_592_079_2;
const C2_1: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;

/// Basis values at a unit direction, ordered
/// `[Y1^-1, Y1^0, Y1^1, Y2^-2, Y2^-1, Y2^0, Y2^1, Y2^2]`.
pub fn sh_basis(dir: Vec3) -> [f64; SH_BASIS_COUNT] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        C1 * y,
        C1 * z,
        C1 * x,
        C2_0 * x * y,
        C2_0 * y * z,
        C2_1 * (3.0 * z * z - 1.0),
        C2_0 * x * z,
        C2_2 * (x * x - y * y),
    ]
}

/// Partials of each basis function with respect to the direction components.
pub fn sh_basis_gradient(dir: Vec3) -> [Vec3; SH_BASIS_COUNT] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        Vec3::new(0.0, C1, 0.0),
        Vec3::new(0.0, 0.0, C1),
        Vec3::new(C1, 0.0, 0.0),
        Vec3::new(C2_0 * y, C2_0 * x, 0.0),
        Vec3::new(0.0, C2_0 * z, C2_0 * y),
        Vec3::new(0.0, 0.0, 6.0 * C2_1 * z),
        Vec3::new(C2_0 * z, 0.0, C2_0 * x),
        Vec3::new(2.0 * C2_2 * x, -2.0 * C2_2 * y, 0.0),
    ]
}

/// RGB residual `sum_i coeffs[i] * Y_i(dir)`. `dir` must be unit length.
pub fn eval_sh_residual(coeffs: &[f64], dir: Vec3) -> Vec3 {
    debug_assert_eq!(coeffs.len(), SH_RESIDUAL_COEFFS);
    debug_assert!((dir.norm() - 1.0).abs() < 1e-9);
    let basis = sh_basis(dir);
    let mut out = Vec3::zeros();
    for (b, y) in basis.iter().enumerate() {
        out.x += y * coeffs[b * 3];
        out.y += y * coeffs[b * 3 + 1];
        out.z += y * coeffs[b * 3 + 2];
    }
    out
}
