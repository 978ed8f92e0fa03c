//! PNG output: frame encoding and small line charts for traces.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::splat::Image;

/// PNG bytes of an 8-bit RGBA buffer.
pub fn encode_png(width: usize, height: usize, rgba: &[u8]) -> Result<Vec<u8>> {
    if rgba.len() != width * height * 4 {
        return Err(Error::Shape(format!(
            "rgba buffer has {} bytes for {width}x{height}",
            rgba.len()
        )));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format { offset: 0, message: format!("png: {e}") })?;
        w.write_image_data(rgba)
            .map_err(|e| Error::Format { offset: 0, message: format!("png: {e}") })?;
    }
    Ok(out)
}

/// Decodes an RGBA8 PNG into `(width, height, bytes)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let fmt = |e: png::DecodingError| Error::format(0, format!("png: {e}"));
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(0, "png is not 8-bit RGBA"));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Frame PNG: colours composited over black.
pub fn image_png(img: &Image) -> Result<Vec<u8>> {
    encode_png(img.width, img.height, &img.to_rgba8())
}

/// Frames side by side with a one-pixel gap; all frames share a height.
pub fn strip_png(frames: &[Image]) -> Result<Vec<u8>> {
    let h = frames.first().map_or(0, |f| f.height);
    if h == 0 || frames.iter().any(|f| f.height != h) {
        return Err(Error::Shape("strip frames must be non-empty with equal heights".into()));
    }
    let w: usize = frames.iter().map(|f| f.width).sum::<usize>() + frames.len() - 1;
    let mut rgba = vec![255u8; w * h * 4];
    let mut x0 = 0;
    for f in frames {
        let px = f.to_rgba8();
        for y in 0..h {
            let src = &px[y * f.width * 4..(y + 1) * f.width * 4];
            rgba[(y * w + x0) * 4..(y * w + x0 + f.width) * 4].copy_from_slice(src);
        }
        x0 += f.width + 1;
    }
    encode_png(w, h, &rgba)
}

pub struct Series<'a> {
    pub ys: &'a [f64],
    pub color: [u8; 3],
}

const MARGIN: usize = 8;

/// Polylines of each series over its index, scaled jointly to the finite
/// data range, on a white canvas with a light zero line when zero is in
/// range. Vertical markers (x indices) are drawn in grey.
pub fn line_chart(series: &[Series], markers: &[usize], width: usize, height: usize) -> Result<Vec<u8>> {
    if width <= 2 * MARGIN || height <= 2 * MARGIN {
        return Err(Error::Config(format!("chart {width}x{height} is too small")));
    }
    let mut rgba = vec![255u8; width * height * 4];
    let n = series.iter().map(|s| s.ys.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.ys.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if n == 0 || !lo.is_finite() {
        return encode_png(width, height, &rgba);
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let pw = (width - 2 * MARGIN) as f64;
    let ph = (height - 2 * MARGIN) as f64;
    let sx = |i: f64| MARGIN as f64 + if n > 1 { i / (n - 1) as f64 * pw } else { pw / 2.0 };
    let sy = |v: f64| MARGIN as f64 + (hi - v) / (hi - lo) * ph;
    let mut canvas = Canvas { rgba: &mut rgba, width, height };
    for &m in markers {
        let x = sx(m as f64);
        canvas.line(x, MARGIN as f64, x, (height - MARGIN) as f64, [200, 200, 200]);
    }
    if lo < 0.0 && hi > 0.0 {
        canvas.line(MARGIN as f64, sy(0.0), (width - MARGIN) as f64, sy(0.0), [220, 220, 220]);
    }
    for s in series {
        let mut prev: Option<(f64, f64)> = None;
        for (i, &v) in s.ys.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = (sx(i as f64), sy(v));
            match prev {
                Some(q) => canvas.line(q.0, q.1, p.0, p.1, s.color),
                None => canvas.dot(p.0, p.1, s.color),
            }
            prev = Some(p);
        }
    }
    encode_png(width, height, &rgba)
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Canvas<'a> {
    rgba: &'a mut [u8],
    width: usize,
    height: usize,
}

impl Canvas<'_> {
    fn dot(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (x, y) = (x.round(), y.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 4;
        self.rgba[i..i + 3].copy_from_slice(&c);
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            self.dot(x0 + t * (x1 - x0), y0 + t * (y1 - y0), c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_bit_exact() {
        let rgba: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
        let bytes = encode_png(3, 5, &rgba).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), (3, 5, rgba));
    }

    #[test]
    fn chart_draws_series_pixels() {
        let ys = [0.0, 1.0, -1.0, 0.5];
        let bytes = line_chart(&[Series { ys: &ys, color: [255, 0, 0] }], &[2], 64, 48).unwrap();
        let (_, _, px) = decode_png(&bytes).unwrap();
        let red = px.chunks(4).filter(|p| p[..3] == [255, 0, 0]).count();
        assert!(red > 20);
    }

    #[test]
    fn strip_width_includes_gaps() {
        let f = Image::zeros(4, 5);
        let (w, h, _) = decode_png(&strip_png(&[f.clone(), f.clone(), f]).unwrap()).unwrap();
        assert_eq!((w, h), (17, 4));
    }
}
