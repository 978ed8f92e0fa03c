use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};
use crate::splat::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Patch height and width in pixels.
    pub patch: [usize; 2],
    /// Projection entries are `N(0, (scale / sqrt(P))^2)` with `P` the
    /// flattened patch length.
    pub scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch: [4, 4],
            scale: 1.0,
            seed: 0,
        }
    }
}

/// Linear patch encoder: every non-overlapping `ph x pw` RGBA patch is
/// flattened (row, column, channel) and multiplied by one shared `D x P`
/// projection. No bias, so the map is exactly linear.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEncoder {
    pub patch: [usize; 2],
    pub dim: usize,
    /// Row-major `dim x patch_len`.
    pub projection: Vec<f64>,
}

impl LatentEncoder {
    pub fn new(dim: usize, cfg: &EncoderConfig) -> Result<Self> {
        let [ph, pw] = cfg.patch;
        if ph == 0 || pw == 0 || dim == 0 {
            return Err(Error::Config("encoder patch and dim must be positive".into()));
        }
        if !(cfg.scale > 0.0 && cfg.scale.is_finite()) {
            return Err(Error::Config("encoder scale must be > 0".into()));
        }
        let p = ph * pw * 4;
        let std = cfg.scale / (p as f64).sqrt();
        let mut rng = CounterRng::for_purpose(cfg.seed, &[tags::ENCODER, dim as u64, p as u64]);
        let projection = rng.normal_vec(dim * p).into_iter().map(|v| v * std).collect();
        Ok(Self {
            patch: cfg.patch,
            dim,
            projection,
        })
    }

    /// Encoder with an explicit projection (row-major `dim x ph*pw*4`).
    pub fn from_projection(patch: [usize; 2], dim: usize, projection: Vec<f64>) -> Result<Self> {
        if patch[0] == 0 || patch[1] == 0 || projection.len() != dim * patch[0] * patch[1] * 4 {
            return Err(Error::Shape(format!(
                "projection has {} entries, expected {dim} x {}",
                projection.len(),
                patch[0] * patch[1] * 4
            )));
        }
        Ok(Self {
            patch,
            dim,
            projection,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.patch[0] * self.patch[1] * 4
    }

    /// Latent grid size for an `h x w` image.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [ph, pw] = self.patch;
        if !h.is_multiple_of(ph) || !w.is_multiple_of(pw) {
            return Err(Error::Shape(format!("{h}x{w} image is not divisible into {ph}x{pw} patches")));
        }
        Ok((h / ph, w / pw))
    }

    fn patch_vec(&self, img: &Image, gy: usize, gx: usize, out: &mut [f64]) {
        let [ph, pw] = self.patch;
        for dy in 0..ph {
            for dx in 0..pw {
                let px = img.pixel(gy * ph + dy, gx * pw + dx);
                out[(dy * pw + dx) * 4..(dy * pw + dx + 1) * 4].copy_from_slice(px);
            }
        }
    }
}

/// Latent vectors of several views, index `((v * H + y) * W + x) * D + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(views: usize, height: usize, width: usize, dim: usize) -> Self {
        Self {
            views,
            height,
            width,
            dim,
            data: vec![0.0; views * height * width * dim],
        }
    }

    /// Number of latent vectors.
    pub fn cells(&self) -> usize {
        self.views * self.height * self.width
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn latent_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cells of view `v`.
    pub fn view_range(&self, v: usize) -> std::ops::Range<usize> {
        let n = self.height * self.width;
        v * n..(v + 1) * n
    }
}

pub fn encode_latents(images: &[Image], enc: &LatentEncoder) -> Result<LatentGrid> {
    let (h, w) = match images.first() {
        Some(img) => (img.height, img.width),
        None => return Ok(LatentGrid::zeros(0, 0, 0, enc.dim)),
    };
    if images.iter().any(|i| i.height != h || i.width != w) {
        return Err(Error::Shape("images differ in size".into()));
    }
    let (gh, gw) = enc.grid(h, w)?;
    let p = enc.patch_len();
    let mut out = LatentGrid::zeros(images.len(), gh, gw, enc.dim);
    let mut buf = vec![0.0; p];
    for (v, img) in images.iter().enumerate() {
        for gy in 0..gh {
            for gx in 0..gw {
                enc.patch_vec(img, gy, gx, &mut buf);
                let z = out.latent_mut((v * gh + gy) * gw + gx);
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = crate::linalg::dot(&enc.projection[k * p..(k + 1) * p], &buf);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`encode_latents`]: image-space gradients from latent-space
/// gradients.
pub fn encode_backward(d_latents: &LatentGrid, enc: &LatentEncoder) -> Vec<Image> {
    let [ph, pw] = enc.patch;
    let p = enc.patch_len();
    let (gh, gw) = (d_latents.height, d_latents.width);
    let mut buf = vec![0.0; p];
    (0..d_latents.views)
        .map(|v| {
            let mut img = Image::zeros(gh * ph, gw * pw);
            for gy in 0..gh {
                for gx in 0..gw {
                    let g = d_latents.latent((v * gh + gy) * gw + gx);
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    for (k, &gk) in g.iter().enumerate() {
                        if gk == 0.0 {
                            continue;
                        }
                        for (b, &pj) in buf.iter_mut().zip(&enc.projection[k * p..(k + 1) * p]) {
                            *b += gk * pj;
                        }
                    }
                    for dy in 0..ph {
                        for dx in 0..pw {
                            img.pixel_mut(gy * ph + dy, gx * pw + dx)
                                .copy_from_slice(&buf[(dy * pw + dx) * 4..(dy * pw + dx + 1) * 4]);
                        }
                    }
                }
            }
            img
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc() -> LatentEncoder {
        LatentEncoder::new(6, &EncoderConfig::default()).unwrap()
    }

    #[test]
    fn black_images_encode_to_zero() {
        let z = encode_latents(&[Image::zeros(8, 8)], &enc()).unwrap();
        assert_eq!(z.cells(), 4);
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_size_rejected() {
        assert!(matches!(encode_latents(&[Image::zeros(8, 6)], &enc()), Err(Error::Shape(_))));
    }

    #[test]
    fn adjoint_identity() {
        let e = enc();
        let mut rng = CounterRng::for_purpose(1, &[tags::TEST]);
        let mut img = Image::zeros(8, 12);
        img.data.iter_mut().for_each(|v| *v = rng.uniform());
        let z = encode_latents(&[img.clone()], &e).unwrap();
        let mut g = LatentGrid::zeros(1, z.height, z.width, e.dim);
        g.data.iter_mut().for_each(|v| *v = rng.normal());
        let back = &encode_backward(&g, &e)[0];
        let lhs: f64 = z.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
