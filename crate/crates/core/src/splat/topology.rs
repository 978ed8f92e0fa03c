use super::{logit, SplatScene};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

/// Removes primitives whose activated opacity is below `threshold`. Returns,
/// for each surviving primitive, its index before the prune.
pub fn prune(scene: &mut SplatScene, threshold: f64) -> Vec<usize> {
    let keep: Vec<usize> = (0..scene.len())
        .filter(|&i| !(scene.primitives[i].opacity() < threshold))
        .collect();
    reindex(scene, &keep);
    keep
}

/// Pre-activation opacity for each half of a split primitive so that the two
/// stacked copies composite to the parent's opacity: `1 - (1 - a')^2 = a`.
pub fn split_opacity_pre(opacity_pre: f64) -> f64 {
    let a = super::sigmoid(opacity_pre);
    let half = 1.0 - (1.0 - a).sqrt();
    if half <= 0.0 {
        // opacity underflowed; keep the clone negligible as well
        return opacity_pre - std::f64::consts::LN_2;
    }
    logit(half)
}

/// Clones every primitive whose mean accumulated positional-gradient norm
/// exceeds `grad_threshold`. The clone is inserted directly after its parent,
/// offset by `jitter * N(0, I)`, and parent and clone both take the split
/// opacity from [`split_opacity_pre`]. Clones inherit the parent's selection
/// bit. Statistics are reset. Returns the origin index of every primitive in
/// the new order.
pub fn densify(scene: &mut SplatScene, grad_threshold: f64, jitter: f64, seed: u64) -> Result<Vec<usize>> {
    if !(grad_threshold >= 0.0) || !(jitter >= 0.0) {
        return Err(Error::Config("densify threshold and jitter must be >= 0".into()));
    }
    let mut origin = Vec::with_capacity(scene.len());
    let mut prims = Vec::with_capacity(scene.len());
    for (i, p) in scene.primitives.iter().enumerate() {
        let n = scene.grad_count[i];
        let mean = if n > 0 { scene.grad_accum[i] / n as f64 } else { 0.0 };
        if n > 0 && mean > grad_threshold {
            let mut parent = p.clone();
            parent.opacity_pre = split_opacity_pre(p.opacity_pre);
            let mut child = parent.clone();
            if jitter > 0.0 {
                let mut rng = CounterRng::for_purpose(
                    seed,
                    &[tags::DENSIFY_JITTER, scene.step as u64, i as u64],
                );
                child.mu[0] += jitter * rng.normal();
                child.mu[1] += jitter * rng.normal();
            }
            prims.push(parent);
            prims.push(child);
            origin.push(i);
            origin.push(i);
        } else {
            prims.push(p.clone());
            origin.push(i);
        }
    }
    scene.selection = origin.iter().map(|&o| scene.selection[o]).collect();
    scene.primitives = prims;
    scene.grad_accum = vec![0.0; origin.len()];
    scene.grad_count = vec![0; origin.len()];
    Ok(origin)
}

fn reindex(scene: &mut SplatScene, keep: &[usize]) {
    scene.primitives = keep.iter().map(|&i| scene.primitives[i].clone()).collect();
    scene.selection = keep.iter().map(|&i| scene.selection[i]).collect();
    scene.grad_accum = keep.iter().map(|&i| scene.grad_accum[i]).collect();
    scene.grad_count = keep.iter().map(|&i| scene.grad_count[i]).collect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{logit, render, GaussianPrimitive, View};

    fn prim(x: f64, opacity: f64) -> GaussianPrimitive {
        GaussianPrimitive {
            mu: [x, 0.0],
            scale: [0.4, 0.3],
            rot: 0.1,
            opacity_pre: logit(opacity),
            color: [0.9, 0.3, 0.1],
        }
    }

    #[test]
    fn prune_threshold_zero_keeps_everything() {
        let mut s = SplatScene::new(vec![prim(0.0, 0.5), prim(0.1, 1e-6)]);
        assert_eq!(prune(&mut s, 0.0), vec![0, 1]);
    }

    #[test]
    fn prune_keeps_order() {
        let mut s = SplatScene::new(vec![prim(0.0, 0.9), prim(0.1, 0.01), prim(0.2, 0.5)]);
        s.selection = vec![false, true, true];
        let kept = prune(&mut s, 0.05);
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.selection, vec![false, true]);
        assert_eq!(s.primitives[1].mu[0], 0.2);
    }

    #[test]
    fn prune_everything() {
        let mut s = SplatScene::new(vec![prim(0.0, 0.001), prim(0.1, 0.002)]);
        prune(&mut s, 0.5);
        assert!(s.is_empty());
        assert!(s.selection.is_empty());
    }

    #[test]
    fn densify_without_stats_is_noop() {
        let mut s = SplatScene::new(vec![prim(0.0, 0.5), prim(0.1, 0.5)]);
        let before = s.clone();
        densify(&mut s, 0.0, 0.01, 1).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn densify_one_clone_keeps_order_and_mask() {
        let mut s = SplatScene::new(vec![prim(-0.2, 0.7), prim(0.1, 0.6), prim(0.3, 0.4)]);
        s.selection = vec![false, true, false];
        s.grad_accum[1] = 3.0;
        s.grad_count[1] = 2;
        let origin = densify(&mut s, 1.0, 0.01, 3).unwrap();
        assert_eq!(origin, vec![0, 1, 1, 2]);
        assert_eq!(s.len(), 4);
        assert_eq!(s.selection, vec![false, true, true, false]);
        assert!(s.grad_count.iter().all(|&c| c == 0));
    }

    #[test]
    fn zero_jitter_split_matches_composite_oracle() {
        // Two stacked copies with per-pixel alpha a' g composite to
        // 1 - (1 - a' g)^2 = a g + a'^2 g (1 - g): exact at the peak, with a
        // known residual elsewhere.
        let mut s = SplatScene::new(vec![prim(0.0, 0.6)]);
        s.grad_accum[0] = 1.0;
        s.grad_count[0] = 1;
        let v = View {
            rotation: 0.4,
            zoom: 1.7,
            translation: [0.05, -0.02],
            height: 16,
            width: 16,
        };
        let before = render(&s, &v).unwrap();
        densify(&mut s, 0.0, 0.0, 3).unwrap();
        let half = s.primitives[0].opacity();
        assert!((1.0 - (1.0 - half).powi(2) - 0.6).abs() < 1e-12);
        let after = render(&s, &v).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let g = before.pixel(y, x)[3] / 0.6;
                let expected = before.pixel(y, x)[3] + half * half * g * (1.0 - g);
                assert!((after.pixel(y, x)[3] - expected).abs() < 1e-12);
            }
        }
    }
}
