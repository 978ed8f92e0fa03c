use super::{sigmoid, Image, SplatScene, View, PARAMS_PER_PRIMITIVE};
use crate::error::{Error, Result};

/// Squared Mahalanobis distance beyond which the falloff is taken as exactly
/// zero (`exp(-69) < 1.1e-30`). Far tails otherwise feed subnormal products
/// into the composite, which change nothing visible and are very slow.
pub const FALLOFF_CUTOFF: f64 = 138.0;

/// Per-primitive constants shared by every pixel.
struct Prepared {
    mu: [f64; 2],
    cos: f64,
    sin: f64,
    inv_sx2: f64,
    inv_sy2: f64,
    sx: f64,
    sy: f64,
    opacity: f64,
    color: [f64; 3],
}

fn prepare(scene: &SplatScene) -> Result<Vec<Prepared>> {
    scene
        .primitives
        .iter()
        .map(|p| {
            p.validate()?;
            let (sin, cos) = p.rot.sin_cos();
            Ok(Prepared {
                mu: p.mu,
                cos,
                sin,
                inv_sx2: 1.0 / (p.scale[0] * p.scale[0]),
                inv_sy2: 1.0 / (p.scale[1] * p.scale[1]),
                sx: p.scale[0],
                sy: p.scale[1],
                opacity: sigmoid(p.opacity_pre),
                color: p.color,
            })
        })
        .collect()
}

impl Prepared {
    /// Local coordinates `u = R(rot)^T (p - mu)` and the Gaussian falloff.
    #[inline]
    fn eval(&self, p: [f64; 2]) -> (f64, f64, f64) {
        let d0 = p[0] - self.mu[0];
        let d1 = p[1] - self.mu[1];
        let u1 = self.cos * d0 + self.sin * d1;
        let u2 = -self.sin * d0 + self.cos * d1;
        let e = u1 * u1 * self.inv_sx2 + u2 * u2 * self.inv_sy2;
        let g = if e < FALLOFF_CUTOFF { (-0.5 * e).exp() } else { 0.0 };
        (u1, u2, g)
    }
}

/// Candidate primitives per pixel, in index order (CSR layout). A primitive is
/// listed for every pixel inside the screen-space bounding box of its cutoff
/// ellipse, padded slightly so rounding can never drop a pixel that the exact
/// test would keep.
fn bin(prims: &[Prepared], view: &View) -> (Vec<usize>, Vec<u32>) {
    let (h, w) = (view.height, view.width);
    let k = view.pixels_per_unit();
    let (vs, vc) = view.rotation.sin_cos();
    let boxes: Vec<Option<[usize; 4]>> = prims
        .iter()
        .map(|pr| {
            let (sx2, sy2) = (pr.sx * pr.sx, pr.sy * pr.sy);
            let sxx = pr.cos * pr.cos * sx2 + pr.sin * pr.sin * sy2;
            let syy = pr.sin * pr.sin * sx2 + pr.cos * pr.cos * sy2;
            let sxy = pr.cos * pr.sin * (sx2 - sy2);
            // covariance in view-aligned axes
            let qxx = vc * vc * sxx - 2.0 * vc * vs * sxy + vs * vs * syy;
            let qyy = vs * vs * sxx + 2.0 * vc * vs * sxy + vc * vc * syy;
            let hx = k * (FALLOFF_CUTOFF * qxx.max(0.0)).sqrt() * (1.0 + 1e-9) + 1e-6;
            let hy = k * (FALLOFF_CUTOFF * qyy.max(0.0)).sqrt() * (1.0 + 1e-9) + 1e-6;
            let qx = vc * pr.mu[0] - vs * pr.mu[1];
            let qy = vs * pr.mu[0] + vc * pr.mu[1];
            let cx = (qx + view.translation[0]) * k + w as f64 / 2.0 - 0.5;
            let cy = (qy + view.translation[1]) * k + h as f64 / 2.0 - 0.5;
            let range = |c: f64, r: f64, n: usize| -> Option<(usize, usize)> {
                let lo = (c - r).ceil().max(0.0);
                let hi = (c + r).floor().min(n as f64 - 1.0);
                (lo <= hi).then_some((lo as usize, hi as usize))
            };
            let (x0, x1) = range(cx, hx, w)?;
            let (y0, y1) = range(cy, hy, h)?;
            Some([x0, x1, y0, y1])
        })
        .collect();
    let mut offsets = vec![0usize; h * w + 1];
    for [x0, x1, y0, y1] in boxes.iter().flatten() {
        for y in *y0..=*y1 {
            for x in *x0..=*x1 {
                offsets[y * w + x + 1] += 1;
            }
        }
    }
    for p in 0..h * w {
        offsets[p + 1] += offsets[p];
    }
    let mut fill = offsets.clone();
    let mut list = vec![0u32; offsets[h * w]];
    for (i, b) in boxes.iter().enumerate() {
        if let Some([x0, x1, y0, y1]) = b {
            for y in *y0..=*y1 {
                for x in *x0..=*x1 {
                    let p = y * w + x;
                    list[fill[p]] = i as u32;
                    fill[p] += 1;
                }
            }
        }
    }
    (offsets, list)
}

/// Front-to-back composite in index order over a black background. Output
/// alpha is `1 - T_final`.
pub fn render(scene: &SplatScene, view: &View) -> Result<Image> {
    Ok(composite(scene, view, false)?.0)
}

/// Per-pixel record of every non-zero contribution from a forward pass, so
/// the backward pass needs no second evaluation of the falloffs.
#[derive(Clone, Debug)]
pub struct RenderCache {
    view: View,
    m: usize,
    /// `offsets[p]..offsets[p + 1]` indexes the entries of pixel `p`.
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

impl RenderCache {
    /// Number of pixels each primitive contributes to.
    pub fn footprint(&self) -> Vec<usize> {
        let mut n = vec![0; self.m];
        for e in &self.entries {
            n[e.i as usize] += 1;
        }
        n
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    i: u32,
    alpha: f64,
    trans: f64,
    u1: f64,
    u2: f64,
    g: f64,
}

/// [`render`] plus the cache consumed by [`render_backward_cached`].
pub fn render_cached(scene: &SplatScene, view: &View) -> Result<(Image, RenderCache)> {
    let (img, cache) = composite(scene, view, true)?;
    Ok((img, cache.expect("cache requested")))
}

fn composite(scene: &SplatScene, view: &View, keep: bool) -> Result<(Image, Option<RenderCache>)> {
    view.validate()?;
    let prims = prepare(scene)?;
    let (bins, cand) = bin(&prims, view);
    let mut img = Image::zeros(view.height, view.width);
    let mut offsets = Vec::with_capacity(if keep { view.height * view.width + 1 } else { 0 });
    let mut entries = Vec::new();
    for y in 0..view.height {
        for x in 0..view.width {
            if keep {
                offsets.push(entries.len());
            }
            let p = view.pixel_to_scene(y, x);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let px = y * view.width + x;
            for &i in &cand[bins[px]..bins[px + 1]] {
                let pr = &prims[i as usize];
                let (u1, u2, g) = pr.eval(p);
                let a = pr.opacity * g;
                if a == 0.0 {
                    continue;
                }
                if keep {
                    entries.push(Entry {
                        i,
                        alpha: a,
                        trans: t,
                        u1,
                        u2,
                        g,
                    });
                }
                let w = a * t;
                c[0] += pr.color[0] * w;
                c[1] += pr.color[1] * w;
                c[2] += pr.color[2] * w;
                t *= 1.0 - a;
                if t == 0.0 {
                    break;
                }
            }
            img.pixel_mut(y, x).copy_from_slice(&[c[0], c[1], c[2], 1.0 - t]);
        }
    }
    let cache = keep.then(|| {
        offsets.push(entries.len());
        RenderCache {
            view: *view,
            m: scene.len(),
            offsets,
            entries,
        }
    });
    Ok((img, cache))
}

/// Reverse-mode gradients of `sum(d_image * render(scene, view))` with respect
/// to every primitive parameter, in the flat layout. Primitives with
/// `active[i] == false` get zero gradients and cost only the compositing
/// bookkeeping.
pub fn render_backward(
    scene: &SplatScene,
    view: &View,
    d_image: &Image,
    active: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let (_, cache) = render_cached(scene, view)?;
    render_backward_cached(scene, &cache, d_image, active)
}

/// [`render_backward`] reusing the contributions recorded by
/// [`render_cached`] on the same scene.
pub fn render_backward_cached(
    scene: &SplatScene,
    cache: &RenderCache,
    d_image: &Image,
    active: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let view = &cache.view;
    if d_image.height != view.height || d_image.width != view.width {
        return Err(Error::Shape(format!(
            "d_image is {}x{}, view renders {}x{}",
            d_image.height, d_image.width, view.height, view.width
        )));
    }
    let m = scene.len();
    if cache.m != m {
        return Err(Error::Shape(format!("cache holds {} primitives, scene {m}", cache.m)));
    }
    if let Some(a) = active {
        if a.len() != m {
            return Err(Error::Shape(format!("active mask has {} entries for {m} primitives", a.len())));
        }
    }
    let prims = prepare(scene)?;
    let mut grads = vec![0.0; m * PARAMS_PER_PRIMITIVE];
    let is_active = |i: usize| active.is_none_or(|a| a[i]);

    for y in 0..view.height {
        for x in 0..view.width {
            let dc = d_image.pixel(y, x);
            if dc.iter().all(|&v| v == 0.0) {
                continue;
            }
            let px = y * view.width + x;
            let list = &cache.entries[cache.offsets[px]..cache.offsets[px + 1]];
            // Entries in front of the frontmost active one never feed an
            // active gradient.
            let first = match active {
                Some(_) => match list.iter().position(|e| is_active(e.i as usize)) {
                    Some(k) => k,
                    None => continue,
                },
                None => 0,
            };
            // `behind` is the composite of everything after i, relative to
            // the transmittance just past i.
            let mut behind = 0.0;
            for e in list[first..].iter().rev() {
                let i = e.i as usize;
                let pr = &prims[i];
                let a = e.alpha;
                // Alpha output composites a constant "colour" of 1.
                let gi = dc[0] * pr.color[0] + dc[1] * pr.color[1] + dc[2] * pr.color[2] + dc[3];
                if is_active(i) {
                    let ti = e.trans;
                    let da = ti * (gi - behind);
                    let (u1, u2, g) = (e.u1, e.u2, e.g);
                    let gr = &mut grads[i * PARAMS_PER_PRIMITIVE..(i + 1) * PARAMS_PER_PRIMITIVE];
                    let w = a * ti;
                    gr[6] += dc[0] * w;
                    gr[7] += dc[1] * w;
                    gr[8] += dc[2] * w;
                    gr[5] += da * g * pr.opacity * (1.0 - pr.opacity);
                    let de = -0.5 * da * pr.opacity * g;
                    gr[2] += de * (-2.0 * u1 * u1 / (pr.sx * pr.sx * pr.sx));
                    gr[3] += de * (-2.0 * u2 * u2 / (pr.sy * pr.sy * pr.sy));
                    gr[4] += de * 2.0 * u1 * u2 * (pr.inv_sx2 - pr.inv_sy2);
                    let k1 = 2.0 * u1 * pr.inv_sx2;
                    let k2 = 2.0 * u2 * pr.inv_sy2;
                    gr[0] -= de * (k1 * pr.cos - k2 * pr.sin);
                    gr[1] -= de * (k1 * pr.sin + k2 * pr.cos);
                }
                behind = gi * a + (1.0 - a) * behind;
            }
        }
    }
    Ok(grads)
}

/// Runs `f` over `items`, on scoped threads when more than one core is
/// available. Results are always in item order.
fn map_views<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 2 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    std::thread::scope(|s| {
        let hs: Vec<_> = items.iter().map(|it| s.spawn(move || f(it))).collect();
        hs.into_iter().map(|h| h.join().expect("view worker panicked")).collect()
    })
}

/// Renders several views, concurrently when cores allow; results are in view
/// order.
pub fn render_views(scene: &SplatScene, views: &[View]) -> Result<Vec<Image>> {
    map_views(views, |v| render(scene, v)).into_iter().collect()
}

/// [`render_cached`] for several views, concurrently, in view order.
pub fn render_views_cached(scene: &SplatScene, views: &[View]) -> Result<Vec<(Image, RenderCache)>> {
    map_views(views, |v| render_cached(scene, v)).into_iter().collect()
}

/// Sum over views of [`render_backward_cached`], added in view order.
pub fn render_backward_views_cached(
    scene: &SplatScene,
    caches: &[RenderCache],
    d_images: &[Image],
    active: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if caches.len() != d_images.len() {
        return Err(Error::Shape(format!("{} caches, {} image gradients", caches.len(), d_images.len())));
    }
    let pairs: Vec<_> = caches.iter().zip(d_images).collect();
    let per_view = map_views(&pairs, |(c, d)| render_backward_cached(scene, c, d, active))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_in_order(scene.len(), per_view))
}

fn sum_in_order(m: usize, per_view: Vec<Vec<f64>>) -> Vec<f64> {
    let mut total = vec![0.0; m * PARAMS_PER_PRIMITIVE];
    for g in per_view {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

/// Sum over views of [`render_backward`]. Per-view gradients are computed
/// concurrently and added in view order, so the result is deterministic.
pub fn render_backward_views(
    scene: &SplatScene,
    views: &[View],
    d_images: &[Image],
    active: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if views.len() != d_images.len() {
        return Err(Error::Shape(format!("{} views, {} image gradients", views.len(), d_images.len())));
    }
    let pairs: Vec<_> = views.iter().zip(d_images).collect();
    let per_view = map_views(&pairs, |(v, d)| render_backward(scene, v, d, active))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_in_order(scene.len(), per_view))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianPrimitive;

    fn view(n: usize) -> View {
        View {
            rotation: 0.0,
            zoom: 2.0,
            translation: [0.0, 0.0],
            height: n,
            width: n,
        }
    }

    fn prim(mu: [f64; 2], pre: f64, color: [f64; 3]) -> GaussianPrimitive {
        GaussianPrimitive {
            mu,
            scale: [0.5, 0.3],
            rot: 0.2,
            opacity_pre: pre,
            color,
        }
    }

    #[test]
    fn empty_scene_is_black() {
        let img = render(&SplatScene::new(vec![]), &view(8)).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_primitive_peak_equals_colour() {
        // odd size puts a pixel centre exactly on the origin
        let v = view(9);
        let scene = SplatScene::new(vec![prim([0.0, 0.0], 50.0, [0.2, 0.4, 0.6])]);
        let img = render(&scene, &v).unwrap();
        assert_eq!(img.pixel(4, 4), &[0.2, 0.4, 0.6, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let v = view(8);
        let scene = SplatScene::new(vec![prim([0.1, 0.0], 0.3, [1.0, 0.0, 0.0])]);
        let g = render_backward(&scene, &v, &Image::zeros(8, 8), None).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn colour_gradient_is_pixel_alpha() {
        let v = view(8);
        let scene = SplatScene::new(vec![prim([0.1, -0.2], 0.3, [0.5, 0.5, 0.5])]);
        let img = render(&scene, &v).unwrap();
        let mut d = Image::zeros(8, 8);
        d.pixel_mut(3, 5)[1] = 1.0;
        let g = render_backward(&scene, &v, &d, None).unwrap();
        assert!((g[7] - img.pixel(3, 5)[3]).abs() < 1e-15);
        assert_eq!(g[6], 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let scene = SplatScene::new(vec![]);
        assert!(render_backward(&scene, &view(8), &Image::zeros(4, 8), None).is_err());
    }

    #[test]
    fn inactive_primitives_get_no_gradient() {
        let v = view(8);
        let scene = SplatScene::new(vec![
            prim([0.0, 0.0], 0.0, [1.0, 0.0, 0.0]),
            prim([0.2, 0.1], 0.5, [0.0, 1.0, 0.0]),
        ]);
        let mut d = Image::zeros(8, 8);
        d.data.iter_mut().for_each(|v| *v = 1.0);
        let full = render_backward(&scene, &v, &d, None).unwrap();
        let part = render_backward(&scene, &v, &d, Some(&[false, true])).unwrap();
        assert!(part[..9].iter().all(|&x| x == 0.0));
        assert_eq!(part[9..], full[9..]);
    }

    /// Every primitive at every pixel, in index order, with the same cutoff.
    fn brute_force(scene: &SplatScene, v: &View) -> Image {
        let mut img = Image::zeros(v.height, v.width);
        for y in 0..v.height {
            for x in 0..v.width {
                let p = v.pixel_to_scene(y, x);
                let (mut t, mut c) = (1.0, [0.0; 3]);
                for pr in &scene.primitives {
                    let (s, co) = pr.rot.sin_cos();
                    let d = [p[0] - pr.mu[0], p[1] - pr.mu[1]];
                    let u1 = co * d[0] + s * d[1];
                    let u2 = -s * d[0] + co * d[1];
                    let e = u1 * u1 / (pr.scale[0] * pr.scale[0]) + u2 * u2 / (pr.scale[1] * pr.scale[1]);
                    if e >= FALLOFF_CUTOFF {
                        continue;
                    }
                    let a = pr.opacity() * (-0.5 * e).exp();
                    for (ck, pk) in c.iter_mut().zip(&pr.color) {
                        *ck += pk * a * t;
                    }
                    t *= 1.0 - a;
                }
                img.pixel_mut(y, x).copy_from_slice(&[c[0], c[1], c[2], 1.0 - t]);
            }
        }
        img
    }

    #[test]
    fn binned_render_matches_brute_force() {
        use crate::rng::{tags, CounterRng};
        use crate::splat::{sample_view, synthetic_scene, SyntheticSceneConfig, ViewConfig};
        for seed in 0..6u64 {
            let mut scene = synthetic_scene(&SyntheticSceneConfig::default(), seed).unwrap();
            let mut rng = CounterRng::for_purpose(seed, &[tags::TEST]);
            // a few thin, rotated and off-screen primitives as well
            for p in scene.primitives.iter_mut().take(10) {
                p.scale = [rng.uniform_in(0.002, 0.5), rng.uniform_in(0.002, 0.05)];
                p.rot = rng.uniform_in(-3.0, 3.0);
                p.mu[0] += rng.uniform_in(-2.0, 2.0);
            }
            let cfg = ViewConfig {
                height: 12,
                width: 20,
                ..ViewConfig::default()
            };
            let v = sample_view(seed, &cfg);
            let fast = render(&scene, &v).unwrap();
            let slow = brute_force(&scene, &v);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn two_primitive_composite_oracle() {
        let v = view(8);
        let p0 = prim([0.1, 0.0], 0.4, [0.9, 0.1, 0.2]);
        let p1 = prim([-0.2, 0.1], -0.3, [0.1, 0.8, 0.5]);
        let scene = SplatScene::new(vec![p0.clone(), p1.clone()]);
        let img = render(&scene, &v).unwrap();
        let falloff = |pr: &GaussianPrimitive, p: [f64; 2]| {
            let (s, c) = pr.rot.sin_cos();
            let d = [p[0] - pr.mu[0], p[1] - pr.mu[1]];
            let u = [c * d[0] + s * d[1], -s * d[0] + c * d[1]];
            pr.opacity() * (-0.5 * (u[0] * u[0] / (pr.scale[0] * pr.scale[0]) + u[1] * u[1] / (pr.scale[1] * pr.scale[1]))).exp()
        };
        for y in 0..8 {
            for x in 0..8 {
                let p = v.pixel_to_scene(y, x);
                let (a0, a1) = (falloff(&p0, p), falloff(&p1, p));
                for k in 0..3 {
                    let expected = p0.color[k] * a0 + p1.color[k] * a1 * (1.0 - a0);
                    assert!((img.pixel(y, x)[k] - expected).abs() < 1e-12);
                }
                assert!((img.pixel(y, x)[3] - (1.0 - (1.0 - a0) * (1.0 - a1))).abs() < 1e-12);
            }
        }
    }
}
