//! Per-primitive attribute maps.
//!
//! Each map is a multi-channel grid shaped as an isosceles right triangle:
//! of an `R x R` grid only the texels with `ix + iy <= R - 1` exist, giving
//! `R (R + 1) / 2` usable texels. Barycentric coordinates sample the grid at
//! `(x, y) = (v, w) * (R - 1)` with bilinear weights; weights of texels
//! falling outside the triangular half are dropped and the rest renormalized.

use crate::bezier::BarycentricCoord;
use crate::geom::Quat;

/// What a map stores. Resolution and channel count follow the kind:
/// rotation is a 4-channel quaternion grid with leg resolution 3, scaling a
/// 2-channel log-scale grid with leg resolution 3, and the SH residual a
/// single 24-channel texel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Rotation,
    Scaling,
    Sh,
}

impl AttributeKind {
    pub fn resolution(&self) -> u32 {
        match self {
            AttributeKind::Rotation | AttributeKind::Scaling => 3,
            AttributeKind::Sh => 1,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            AttributeKind::Rotation => 4,
            AttributeKind::Scaling => 2,
            AttributeKind::Sh => super::sh::SH_RESIDUAL_COEFFS,
        }
    }
}

/// Number of usable texels for a leg resolution.
pub fn texel_count(resolution: u32) -> usize {
    (resolution * (resolution + 1) / 2) as usize
}

/// Packed index of texel `(ix, iy)`; rows of decreasing length as iy grows.
pub fn texel_index(resolution: u32, ix: u32, iy: u32) -> usize {
    debug_assert!(ix + iy <= resolution - 1);
    let skipped: u32 = (0..iy).map(|r| resolution - r).sum();
    (skipped + ix) as usize
}

/// Up to four `(texel, weight)` pairs of the bilinear footprint at `bc`,
/// weights renormalized over the texels inside the triangular half.
pub fn sample_footprint(resolution: u32, bc: BarycentricCoord) -> Vec<(usize, f64)> {
    if resolution == 1 {
        return vec![(0, 1.0)];
    }
    let r1 = (resolution - 1) as f64;
    let x = bc.v() * r1;
    let y = bc.w() * r1;
    let x0 = (x.floor() as i64).clamp(0, resolution as i64 - 2) as u32;
    let y0 = (y.floor() as i64).clamp(0, resolution as i64 - 2) as u32;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let candidates = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut out = Vec::with_capacity(4);
    let mut total = 0.0;
    for (ix, iy, w) in candidates {
        if ix + iy <= resolution - 1 && w > 0.0 {
            out.push((texel_index(resolution, ix, iy), w));
            total += w;
        }
    }
    debug_assert!(total > 0.0);
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

/// A triangular multi-channel texel grid. Texel values are stored packed,
/// channel-major per texel: `values[texel * channels + channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMap {
    kind: AttributeKind,
    resolution: u32,
    channels: usize,
    values: Vec<f64>,
}

impl AttributeMap {
    pub fn new_constant(kind: AttributeKind, fill: &[f64]) -> Self {
        let resolution = kind.resolution();
        let channels = kind.channels();
        assert_eq!(fill.len(), channels, "fill must provide one value per channel");
        let mut values = Vec::with_capacity(texel_count(resolution) * channels);
        for _ in 0..texel_count(resolution) {
            values.extend_from_slice(fill);
        }
        Self { kind, resolution, channels, values }
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn texel_count(&self) -> usize {
        texel_count(self.resolution)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn texel(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn texel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * self.channels..(index + 1) * self.channels]
    }

    /// Raw interpolated value at `bc` (no per-kind post-processing).
    pub fn sample_raw(&self, bc: BarycentricCoord) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for (idx, w) in sample_footprint(self.resolution, bc) {
            for (o, v) in out.iter_mut().zip(self.texel(idx)) {
                *o += w * v;
            }
        }
        out
    }

    /// Interpolated quaternion, normalized to unit length on read.
    pub fn sample_quat(&self, bc: BarycentricCoord) -> Quat {
        debug_assert_eq!(self.channels, 4);
        let raw = self.sample_raw(bc);
        crate::geom::quat_normalize(&[raw[0], raw[1], raw[2], raw[3]])
    }

    /// Barycentric parameter of a texel center (the point whose footprint is
    /// exactly this texel). Used when resampling maps for split children.
    pub fn texel_center(&self, ix: u32, iy: u32) -> BarycentricCoord {
        if self.resolution == 1 {
            return BarycentricCoord::centroid();
        }
        let r1 = (self.resolution - 1) as f64;
        BarycentricCoord::from_vw_clamped(ix as f64 / r1, iy as f64 / r1)
    }

    /// Iterates `(packed index, ix, iy)` over the usable texels.
    pub fn texel_coords(&self) -> Vec<(usize, u32, u32)> {
        let mut out = Vec::with_capacity(self.texel_count());
        for iy in 0..self.resolution {
            for ix in 0..self.resolution - iy {
                out.push((texel_index(self.resolution, ix, iy), ix, iy));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn texel_counts() {
        assert_eq!(texel_count(1), 1);
        assert_eq!(texel_count(3), 6);
        assert_eq!(texel_count(8), 36);
    }

    #[test]
    fn packed_indices_cover_triangle() {
        let map = AttributeMap::new_constant(AttributeKind::Rotation, &[1.0, 0.0, 0.0, 0.0]);
        let coords = map.texel_coords();
        assert_eq!(coords.len(), 6);
        let mut seen: Vec<usize> = coords.iter().map(|(i, _, _)| *i).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn resolution_one_always_returns_single_texel() {
        let mut map = AttributeMap::new_constant(AttributeKind::Sh, &vec![0.0; 24]);
        map.texel_mut(0)[5] = 3.25;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let bc = crate::bezier::uniform_barycentric(rng.gen(), rng.gen());
            let s = map.sample_raw(bc);
            assert_eq!(s[5], 3.25);
            assert_eq!(s[0], 0.0);
        }
    }

    #[test]
    fn constant_map_samples_constant() {
        let map = AttributeMap::new_constant(AttributeKind::Scaling, &[-1.5, 0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let bc = crate::bezier::uniform_barycentric(rng.gen(), rng.gen());
            let s = map.sample_raw(bc);
            assert_abs_diff_eq!(s[0], -1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(s[1], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn texel_center_sampling_hits_texel_exactly() {
        // Direct grid-lookup oracle: at a texel center the footprint collapses
        // to that texel.
        let mut map = AttributeMap::new_constant(AttributeKind::Scaling, &[0.0, 0.0]);
        for (idx, _, _) in map.texel_coords() {
            map.texel_mut(idx)[0] = idx as f64 * 10.0;
            map.texel_mut(idx)[1] = idx as f64 - 3.0;
        }
        for (idx, ix, iy) in map.texel_coords() {
            let bc = map.texel_center(ix, iy);
            let s = map.sample_raw(bc);
            assert_abs_diff_eq!(s[0], idx as f64 * 10.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s[1], idx as f64 - 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn footprint_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let bc = crate::bezier::uniform_barycentric(rng.gen(), rng.gen());
            let fp = sample_footprint(3, bc);
            let sum: f64 = fp.iter().map(|(_, w)| w).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(fp.iter().all(|(_, w)| *w >= 0.0));
        }
    }

    #[test]
    fn sampling_is_continuous_in_bc() {
        // Lipschitz-style bound by dense sampling along a line through the
        // domain: adjacent samples at spacing 1e-3 move the value by less
        // than 10 * range * spacing * (R - 1).
        let mut map = AttributeMap::new_constant(AttributeKind::Scaling, &[0.0, 0.0]);
        for (idx, _, _) in map.texel_coords() {
            map.texel_mut(idx)[0] = (idx as f64 * 1.37).sin();
        }
        let range = 2.0;
        let spacing = 1e-3;
        let bound = 10.0 * range * spacing * 2.0;
        let mut prev: Option<f64> = None;
        let mut t = 0.0;
        while t <= 1.0 {
            // Diagonal path from the u corner to the midpoint of the v-w edge.
            let bc = BarycentricCoord::from_vw_clamped(0.5 * t, 0.5 * t);
            let s = map.sample_raw(bc)[0];
            if let Some(p) = prev {
                assert!((s - p).abs() < bound, "jump {} exceeds bound {}", (s - p).abs(), bound);
            }
            prev = Some(s);
            t += spacing;
        }
    }

    #[test]
    fn quaternion_samples_are_unit() {
        let mut map = AttributeMap::new_constant(AttributeKind::Rotation, &[1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (idx, _, _) in map.texel_coords() {
            let q = crate::geom::uniform_quat(rng.gen(), rng.gen(), rng.gen());
            map.texel_mut(idx).copy_from_slice(&[2.0 * q[0], 2.0 * q[1], 2.0 * q[2], 2.0 * q[3]]);
        }
        for _ in 0..100 {
            let bc = crate::bezier::uniform_barycentric(rng.gen(), rng.gen());
            let q = map.sample_quat(bc);
            assert_abs_diff_eq!(crate::geom::quat_norm(&q), 1.0, epsilon = 1e-12);
        }
    }
}
