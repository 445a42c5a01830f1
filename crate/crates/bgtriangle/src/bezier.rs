//! Degree-n Bézier triangles over barycentric domains.
//!
//! A Bézier triangle of degree `n` is controlled by `(n+1)(n+2)/2` points
//! indexed by `(i, j, k)` with `i + j + k = n`. A surface point at
//! barycentric coordinates `(u, v, w)` is the Bernstein-weighted sum of the
//! control points. The scene representation fixes `n = 2` (six control
//! points, the lowest degree that carries curvature), but the machinery here
//! is written for general `n`.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use std::ops::{Add, Mul};

/// Tolerance on `u + v + w = 1`.
pub const BC_SUM_TOLERANCE: f64 = 1e-12;

/// Degree used by every primitive in a scene.
pub const SCENE_DEGREE: u32 = 2;

/// Barycentric coordinates on the triangular domain.
///
/// Invariants: `u + v + w = 1` within 1e-12 and all components nonnegative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycentricCoord {
    u: f64,
    v: f64,
    w: f64,
}

impl BarycentricCoord {
    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        if !(u.is_finite() && v.is_finite() && w.is_finite()) {
            return Err(Error::InvalidBarycentric { u, v, w, reason: "non-finite component" });
        }
        if u < 0.0 || v < 0.0 || w < 0.0 {
            return Err(Error::InvalidBarycentric { u, v, w, reason: "negative component" });
        }
        if ((u + v + w) - 1.0).abs() > BC_SUM_TOLERANCE {
            return Err(Error::InvalidBarycentric { u, v, w, reason: "components do not sum to 1" });
        }
        Ok(Self { u, v, w })
    }

    /// Builds from `(v, w)`, clamping tiny numerical excursions outside the
    /// domain. Used where coordinates come out of interpolation arithmetic.
    pub fn from_vw_clamped(v: f64, w: f64) -> Self {
        let v = v.max(0.0);
        let w = w.max(0.0);
        let u = (1.0 - v - w).max(0.0);
        let sum = u + v + w;
        Self { u: u / sum, v: v / sum, w: w / sum }
    }

    pub fn corner_u() -> Self {
        Self { u: 1.0, v: 0.0, w: 0.0 }
    }

    pub fn corner_v() -> Self {
        Self { u: 0.0, v: 1.0, w: 0.0 }
    }

    pub fn corner_w() -> Self {
        Self { u: 0.0, v: 0.0, w: 1.0 }
    }

    pub fn centroid() -> Self {
        Self { u: 1.0 / 3.0, v: 1.0 / 3.0, w: 1.0 / 3.0 }
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    /// Affine combination of three barycentric points with weights `(a, b, c)`
    /// summing to one; maps a child-domain coordinate into the parent domain.
    pub fn combine(weights: [f64; 3], corners: &[BarycentricCoord; 3]) -> Self {
        let v = weights[0] * corners[0].v + weights[1] * corners[1].v + weights[2] * corners[2].v;
        let w = weights[0] * corners[0].w + weights[1] * corners[1].w + weights[2] * corners[2].w;
        Self::from_vw_clamped(v, w)
    }
}

const FACTORIALS: [f64; 13] = [
    1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0, 362880.0, 3628800.0, 39916800.0,
    479001600.0,
];

pub fn control_point_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 2) / 2) as usize
}

/// Index triples `(i, j, k)` with `i + j + k = degree`, in lexicographically
/// descending `(i, j)` order. This is the storage order used everywhere.
pub fn index_triples(degree: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::with_capacity(control_point_count(degree));
    for i in (0..=degree).rev() {
        for j in (0..=degree - i).rev() {
            out.push((i, j, degree - i - j));
        }
    }
    out
}

/// Position of `(i, j, k)` in the storage order.
pub fn index_of(degree: u32, i: u32, j: u32) -> usize {
    let row = degree - i; // rows of increasing j-span as i descends
    (row * (row + 1) / 2 + (degree - i - j)) as usize
}

fn multinomial(n: u32, i: u32, j: u32, k: u32) -> f64 {
    FACTORIALS[n as usize] / (FACTORIALS[i as usize] * FACTORIALS[j as usize] * FACTORIALS[k as usize])
}

fn powi_or_one(base: f64, exp: u32) -> f64 {
    if exp == 0 {
        1.0
    } else {
        base.powi(exp as i32)
    }
}

/// Bernstein polynomial `B^n_{i,j,k}(u, v, w) = n!/(i! j! k!) u^i v^j w^k`.
pub fn bernstein(degree: u32, i: u32, j: u32, k: u32, bc: BarycentricCoord) -> Result<f64> {
    if i + j + k != degree {
        return Err(Error::IndexSumMismatch { degree, i, j, k });
    }
    Ok(multinomial(degree, i, j, k)
        * powi_or_one(bc.u, i)
        * powi_or_one(bc.v, j)
        * powi_or_one(bc.w, k))
}

/// All Bernstein weights of a degree, in storage order.
pub fn bernstein_weights(degree: u32, bc: BarycentricCoord) -> Vec<f64> {
    index_triples(degree)
        .into_iter()
        .map(|(i, j, k)| {
            multinomial(degree, i, j, k)
                * powi_or_one(bc.u, i)
                * powi_or_one(bc.v, j)
                * powi_or_one(bc.w, k)
        })
        .collect()
}

/// Analytic partials `(dB/du, dB/dv, dB/dw)` of the Bernstein polynomial,
/// treating `u, v, w` as independent variables.
pub fn bernstein_gradient(
    degree: u32,
    i: u32,
    j: u32,
    k: u32,
    bc: BarycentricCoord,
) -> Result<[f64; 3]> {
    if i + j + k != degree {
        return Err(Error::IndexSumMismatch { degree, i, j, k });
    }
    let coef = multinomial(degree, i, j, k);
    let term = |e: u32, x: f64, rest: f64| {
        if e == 0 {
            0.0
        } else {
            coef * e as f64 * powi_or_one(x, e - 1) * rest
        }
    };
    let du = term(i, bc.u, powi_or_one(bc.v, j) * powi_or_one(bc.w, k));
    let dv = term(j, bc.v, powi_or_one(bc.u, i) * powi_or_one(bc.w, k));
    let dw = term(k, bc.w, powi_or_one(bc.u, i) * powi_or_one(bc.v, j));
    Ok([du, dv, dw])
}

/// One de Casteljau step: reduces a degree-`n` coefficient vector to degree
/// `n - 1` by evaluating the blossom argument `bc`.
fn de_casteljau_step<V>(degree: u32, values: &[V], bc: BarycentricCoord) -> Vec<V>
where
    V: Copy + Add<Output = V> + Mul<f64, Output = V>,
{
    debug_assert!(degree >= 1);
    let lower = degree - 1;
    index_triples(lower)
        .into_iter()
        .map(|(i, j, _k)| {
            values[index_of(degree, i + 1, j)] * bc.u
                + values[index_of(degree, i, j + 1)] * bc.v
                + values[index_of(degree, i, j)] * bc.w
        })
        .collect()
}

/// Evaluates the Bernstein-weighted sum for arbitrary control values
/// (positions, colors, scalars) via repeated de Casteljau steps.
pub fn evaluate_values<V>(degree: u32, values: &[V], bc: BarycentricCoord) -> Result<V>
where
    V: Copy + Add<Output = V> + Mul<f64, Output = V>,
{
    let expected = control_point_count(degree);
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "control value count",
            expected,
            got: values.len(),
        });
    }
    if degree == 0 {
        return Ok(values[0]);
    }
    let mut work = values.to_vec();
    for d in (1..=degree).rev() {
        work = de_casteljau_step(d, &work, bc);
        debug_assert_eq!(work.len(), control_point_count(d - 1));
    }
    Ok(work[0])
}

/// Blossom (polar form) of the control values at `degree` barycentric
/// arguments. Symmetric and multi-affine; `blossom(bc, bc, ..)` is the
/// surface point at `bc`.
pub fn blossom<V>(degree: u32, values: &[V], args: &[BarycentricCoord]) -> Result<V>
where
    V: Copy + Add<Output = V> + Mul<f64, Output = V>,
{
    let expected = control_point_count(degree);
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "control value count",
            expected,
            got: values.len(),
        });
    }
    if args.len() != degree as usize {
        return Err(Error::DimensionMismatch {
            context: "blossom argument count",
            expected: degree as usize,
            got: args.len(),
        });
    }
    if degree == 0 {
        return Ok(values[0]);
    }
    let mut work = values.to_vec();
    for (step, bc) in args.iter().enumerate() {
        work = de_casteljau_step(degree - step as u32, &work, *bc);
    }
    Ok(work[0])
}

/// Restricts the polynomial to the sub-triangle spanned by `corners`
/// (given in parent barycentric coordinates). The returned control values
/// reproduce the parent surface exactly over the sub-domain.
pub fn restrict_values<V>(
    degree: u32,
    values: &[V],
    corners: &[BarycentricCoord; 3],
) -> Result<Vec<V>>
where
    V: Copy + Add<Output = V> + Mul<f64, Output = V>,
{
    let mut out = Vec::with_capacity(control_point_count(degree));
    for (i, j, k) in index_triples(degree) {
        let mut args = Vec::with_capacity(degree as usize);
        args.extend(std::iter::repeat(corners[0]).take(i as usize));
        args.extend(std::iter::repeat(corners[1]).take(j as usize));
        args.extend(std::iter::repeat(corners[2]).take(k as usize));
        out.push(blossom(degree, values, &args)?);
    }
    Ok(out)
}

/// Parent-domain corners of the four midpoint-subdivision children.
///
/// Children 0..2 sit at the u, v, w corners; child 3 is the central
/// triangle. Each entry lists the parent coordinates of the child's own
/// (u, v, w) corners.
pub fn subdivision_corners() -> [[BarycentricCoord; 3]; 4] {
    let cu = BarycentricCoord::corner_u();
    let cv = BarycentricCoord::corner_v();
    let cw = BarycentricCoord::corner_w();
    let m = |a: BarycentricCoord, b: BarycentricCoord| {
        BarycentricCoord::from_vw_clamped(0.5 * (a.v + b.v), 0.5 * (a.w + b.w))
    };
    let muv = m(cu, cv);
    let muw = m(cu, cw);
    let mvw = m(cv, cw);
    [[cu, muv, muw], [muv, cv, mvw], [muw, mvw, cw], [mvw, muw, muv]]
}

/// The control net of one Bézier triangle: world-space positions in the
/// storage order of [`index_triples`].
#[derive(Clone, Debug, PartialEq)]
pub struct ControlNet {
    degree: u32,
    points: Vec<Vec3>,
}

impl ControlNet {
    pub fn new(degree: u32, points: Vec<Vec3>) -> Result<Self> {
        let expected = control_point_count(degree);
        if points.len() != expected {
            return Err(Error::ControlPointCount { degree, expected, got: points.len() });
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(Error::NonFiniteControlPoint);
        }
        Ok(Self { degree, points })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.points
    }

    /// Surface point `S(u, v, w)`.
    pub fn evaluate(&self, bc: BarycentricCoord) -> Vec3 {
        evaluate_values(self.degree, &self.points, bc).expect("net validated at construction")
    }

    /// Surface partials with respect to the free parameters `(v, w)`
    /// (with `u = 1 - v - w` substituted).
    pub fn tangents_vw(&self, bc: BarycentricCoord) -> (Vec3, Vec3) {
        let mut dv = Vec3::zeros();
        let mut dw = Vec3::zeros();
        for (idx, (i, j, k)) in index_triples(self.degree).into_iter().enumerate() {
            let g = bernstein_gradient(self.degree, i, j, k, bc).expect("indices valid");
            dv += self.points[idx] * (g[1] - g[0]);
            dw += self.points[idx] * (g[2] - g[0]);
        }
        (dv, dw)
    }

    /// Exact midpoint subdivision into four children (degree 2 only).
    pub fn subdivide_4(&self) -> Result<[ControlNet; 4]> {
        if self.degree != SCENE_DEGREE {
            return Err(Error::UnsupportedDegree(self.degree, SCENE_DEGREE));
        }
        let corners = subdivision_corners();
        let mut out = Vec::with_capacity(4);
        for c in &corners {
            out.push(ControlNet { degree: self.degree, points: restrict_values(self.degree, &self.points, c)? });
        }
        Ok(out.try_into().expect("four children"))
    }

    /// Axis-aligned bounds of the control points. The surface lies inside by
    /// the convex-hull property.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Edges of the control net graph: index pairs one step apart.
    pub fn net_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (i, j, k) in index_triples(self.degree) {
            if i > 0 && j < self.degree {
                edges.push((index_of(self.degree, i, j), index_of(self.degree, i - 1, j + 1)));
            }
            if i > 0 {
                edges.push((index_of(self.degree, i, j), index_of(self.degree, i - 1, j)));
            }
            if j > 0 && k < self.degree {
                edges.push((index_of(self.degree, i, j), index_of(self.degree, i, j - 1)));
            }
        }
        edges
    }
}

/// Uniformly distributed barycentric sample (area-uniform square-root warp).
pub fn uniform_barycentric(r1: f64, r2: f64) -> BarycentricCoord {
    let s = r1.sqrt();
    BarycentricCoord::from_vw_clamped(s * (1.0 - r2), s * r2)
}
