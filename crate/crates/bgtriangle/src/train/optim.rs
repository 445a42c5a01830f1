//! First-order moment-based optimizer (Adam-style) over per-primitive
//! parameter groups, keyed by primitive id so split/prune survives cleanly.

use crate::backward::GradientBuffers;
use crate::error::{Error, Result};
use crate::scene::Scene;
use std::collections::BTreeMap;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Learning rates per parameter group, already scheduled for the step.
#[derive(Clone, Copy, Debug)]
pub struct GroupRates {
    pub position: f64,
    pub color: f64,
    pub rotation: f64,
    pub scaling: f64,
    pub sh: f64,
}

/// First and second moments for one primitive, flattened per group.
#[derive(Clone, Debug, Default)]
pub struct PrimitiveMoments {
    pub position: Vec<[f64; 2]>,
    pub color: Vec<[f64; 2]>,
    pub rotation: Vec<[f64; 2]>,
    pub scaling: Vec<[f64; 2]>,
    pub sh: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    /// Step counter (shared bias correction).
    pub step: u64,
    pub moments: BTreeMap<u64, PrimitiveMoments>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops moments of primitives no longer in the scene (pruned) —
    /// freshly split children start with zero moments automatically.
    pub fn retain_ids(&mut self, scene: &Scene) {
        let live: std::collections::BTreeSet<u64> =
            scene.primitives.iter().map(|p| p.id).collect();
        self.moments.retain(|id, _| live.contains(id));
    }
}

fn adam_update(
    value: &mut f64,
    grad: f64,
    m: &mut [f64; 2],
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    m[0] = BETA1 * m[0] + (1.0 - BETA1) * grad;
    m[1] = BETA2 * m[1] + (1.0 - BETA2) * grad * grad;
    let m_hat = m[0] / bias1;
    let v_hat = m[1] / bias2;
    *value -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

/// One optimizer step over the whole scene. Color control values are
/// clamped to [0, 1] afterwards; rotation texels are left raw (they
/// normalize on read).
pub fn step(
    scene: &mut Scene,
    grads: &GradientBuffers,
    state: &mut OptimizerState,
    rates: &GroupRates,
) -> Result<()> {
    assert_eq!(grads.prims.len(), scene.primitives.len(), "gradient shape mismatch");
    for (pg, prim) in grads.prims.iter().zip(&scene.primitives) {
        if !pg.is_finite() {
            return Err(Error::NonFiniteGradient { prim_id: prim.id, group: "optimizer step" });
        }
    }
    state.step += 1;
    let bias1 = 1.0 - BETA1.powi(state.step as i32);
    let bias2 = 1.0 - BETA2.powi(state.step as i32);

    for (prim, pg) in scene.primitives.iter_mut().zip(&grads.prims) {
        let m = state.moments.entry(prim.id).or_default();
        if m.position.is_empty() {
            m.position = vec![[0.0; 2]; 18];
            m.color = vec![[0.0; 2]; 18];
            m.rotation = vec![[0.0; 2]; prim.rotation_map.values().len()];
            m.scaling = vec![[0.0; 2]; prim.scaling_map.values().len()];
            m.sh = vec![[0.0; 2]; prim.sh_map.values().len()];
        }
        for (cp, g) in pg.position.iter().enumerate() {
            for axis in 0..3 {
                adam_update(
                    &mut prim.geometry.points_mut()[cp][axis],
                    g[axis],
                    &mut m.position[cp * 3 + axis],
                    rates.position,
                    bias1,
                    bias2,
                );
            }
        }
        for (cp, g) in pg.color.iter().enumerate() {
            for ch in 0..3 {
                adam_update(
                    &mut prim.color_net[cp][ch],
                    g[ch],
                    &mut m.color[cp * 3 + ch],
                    rates.color,
                    bias1,
                    bias2,
                );
                prim.color_net[cp][ch] = prim.color_net[cp][ch].clamp(0.0, 1.0);
            }
        }
        for (i, g) in pg.rotation_map.iter().enumerate() {
            adam_update(
                &mut prim.rotation_map.values_mut()[i],
                *g,
                &mut m.rotation[i],
                rates.rotation,
                bias1,
                bias2,
            );
        }
        for (i, g) in pg.scaling_map.iter().enumerate() {
            adam_update(
                &mut prim.scaling_map.values_mut()[i],
                *g,
                &mut m.scaling[i],
                rates.scaling,
                bias1,
                bias2,
            );
        }
        for (i, g) in pg.sh_map.iter().enumerate() {
            adam_update(&mut prim.sh_map.values_mut()[i], *g, &mut m.sh[i], rates.sh, bias1, bias2);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::scene::{flat_net_from_corners, BgTrianglePrimitive};
    use approx::assert_abs_diff_eq;

    fn one_prim_scene() -> Scene {
        let prim = BgTrianglePrimitive::new(
            0,
            flat_net_from_corners(
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ),
            Vec3::repeat(0.5),
        );
        Scene::new(vec![prim], 1)
    }

    fn rates() -> GroupRates {
        GroupRates { position: 0.01, color: 0.01, rotation: 0.01, scaling: 0.01, sh: 0.01 }
    }

    #[test]
    fn zero_gradient_leaves_scene_unchanged() {
        let mut scene = one_prim_scene();
        let before = scene.primitives[0].clone();
        let grads = GradientBuffers::zeros(&scene);
        let mut state = OptimizerState::new();
        step(&mut scene, &grads, &mut state, &rates()).unwrap();
        assert_eq!(state.step, 1);
        assert_eq!(scene.primitives[0].geometry.points(), before.geometry.points());
        assert_eq!(scene.primitives[0].color_net, before.color_net);
        assert_eq!(scene.primitives[0].rotation_map.values(), before.rotation_map.values());
    }

    #[test]
    fn constant_gradient_matches_hand_computed_two_steps() {
        // Hand calculation oracle for a single scalar with g = 0.3, lr = 0.1:
        // step 1: m = 0.03, v = 9e-5; m_hat = 0.3, v_hat = 0.09;
        //         delta = 0.1 * 0.3 / (0.3 + eps) ~ 0.1.
        // step 2: m = 0.057, v = 1.79991e-4; bias1 = 0.19, bias2 = 1.999e-3;
        //         m_hat = 0.3, v_hat = 0.0900045...; delta ~ 0.0999975.
        let g = 0.3;
        let lr = 0.1;
        let mut value = 1.0;
        let mut m = [0.0; 2];
        adam_update(&mut value, g, &mut m, lr, 1.0 - BETA1, 1.0 - BETA2);
        let m1 = (1.0 - BETA1) * g;
        let v1 = (1.0 - BETA2) * g * g;
        let expect1 = 1.0 - lr * (m1 / (1.0 - BETA1)) / ((v1 / (1.0 - BETA2)).sqrt() + ADAM_EPS);
        assert_abs_diff_eq!(value, expect1, epsilon = 1e-12);

        adam_update(
            &mut value,
            g,
            &mut m,
            lr,
            1.0 - BETA1 * BETA1,
            1.0 - BETA2 * BETA2,
        );
        let m2 = BETA1 * m1 + (1.0 - BETA1) * g;
        let v2 = BETA2 * v1 + (1.0 - BETA2) * g * g;
        let expect2 = expect1
            - lr * (m2 / (1.0 - BETA1 * BETA1)) / ((v2 / (1.0 - BETA2 * BETA2)).sqrt() + ADAM_EPS);
        assert_abs_diff_eq!(value, expect2, epsilon = 1e-12);
    }

    #[test]
    fn color_clamp_holds_at_bounds() {
        let mut scene = one_prim_scene();
        scene.primitives[0].color_net[0] = Vec3::new(1.0, 0.0, 0.5);
        let mut grads = GradientBuffers::zeros(&scene);
        // Positive gradient at value 1 pushes up: step moves it negative-ward
        // of the gradient... the optimizer subtracts, so a negative gradient
        // pushes the value up past 1 and the clamp holds it at 1.
        grads.prims[0].color[0] = Vec3::new(-1.0, 1.0, 0.0);
        let mut state = OptimizerState::new();
        step(&mut scene, &grads, &mut state, &rates()).unwrap();
        assert_eq!(scene.primitives[0].color_net[0][0], 1.0);
        assert_eq!(scene.primitives[0].color_net[0][1], 0.0);
        assert_eq!(scene.primitives[0].color_net[0][2], 0.5);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut scene = one_prim_scene();
        let mut grads = GradientBuffers::zeros(&scene);
        grads.prims[0].position[0].x = f64::NAN;
        let mut state = OptimizerState::new();
        assert!(matches!(
            step(&mut scene, &grads, &mut state, &rates()),
            Err(Error::NonFiniteGradient { .. })
        ));
    }
}
