//! Separable bicubic resampling and Gaussian blur with clamp-to-edge borders.

use crate::error::{dim_err, Error, Result};
use crate::imaging::ImagePlane;
use crate::tensor::{Real, Tensor};

/// Keys parameter used throughout the crate.
pub const BICUBIC_A: f64 = -0.5;

/// Keys piecewise-cubic kernel with parameter `a`, supported on `[-2, 2]`.
pub fn bicubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output taps of a 1-D resize: source indices (already clamped) and
/// normalized weights.
struct Taps {
    index: Vec<Vec<usize>>,
    weight: Vec<Vec<f64>>,
}

fn taps(in_len: usize, out_len: usize, antialias: bool) -> Taps {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    let mut index = Vec::with_capacity(out_len);
    let mut weight = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let u = (i as f64 + 0.5) / scale - 0.5;
        let lo = (u - support).floor() as i64;
        let hi = (u + support).ceil() as i64;
        let mut idx = Vec::new();
        let mut w = Vec::new();
        for j in lo..=hi {
            let k = bicubic_kernel((u - j as f64) * stretch, BICUBIC_A);
            if k == 0.0 {
                continue;
            }
            idx.push(j.clamp(0, in_len as i64 - 1) as usize);
            w.push(k);
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        index.push(idx);
        weight.push(w);
    }
    Taps { index, weight }
}

fn resize_plane(
    src: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Vec<f64> {
    let tx = taps(w, out_w, antialias);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..out_w {
            rows[y * out_w + x] = tx.index[x]
                .iter()
                .zip(&tx.weight[x])
                .map(|(&j, &k)| k * line[j])
                .sum();
        }
    }
    let ty = taps(h, out_h, antialias);
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for (&j, &k) in ty.index[y].iter().zip(&ty.weight[y]) {
            let line = &rows[j * out_w..(j + 1) * out_w];
            for (o, &v) in out[y * out_w..(y + 1) * out_w].iter_mut().zip(line) {
                *o += k * v;
            }
        }
    }
    out
}

/// Bicubic resize to explicit output dimensions. With `antialias`, a
/// downscaling axis stretches the kernel by the inverse scale.
pub fn resize_to(
    img: &ImagePlane,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Result<ImagePlane> {
    if img.height() == 0 || img.width() == 0 || out_h == 0 || out_w == 0 {
        return Err(dim_err!(
            "cannot resize {}x{} to {out_h}x{out_w}",
            img.height(),
            img.width()
        ));
    }
    img.map_planes(|p, h, w| Ok((resize_plane(p, h, w, out_h, out_w, antialias), out_h, out_w)))
}

/// Bicubic resize by `scale`; output sides are `ceil(side * scale)`.
pub fn resize_bicubic(img: &ImagePlane, scale: f64, antialias: bool) -> Result<ImagePlane> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Contract(format!(
            "resize scale must be positive, got {scale}"
        )));
    }
    let side = |n: usize| ((n as f64 * scale) - 1e-9).ceil().max(1.0) as usize;
    resize_to(img, side(img.height()), side(img.width()), antialias)
}

/// Antialiased downscale by exactly `1/s`; sides must be divisible by `s`.
pub fn downscale(img: &ImagePlane, s: usize) -> Result<ImagePlane> {
    let (h, w) = img.dims();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(dim_err!("{h}x{w} image is not divisible by scale {s}"));
    }
    resize_to(img, h / s, w / s, true)
}

/// Bicubic upscale by an integer factor.
pub fn upscale(img: &ImagePlane, s: usize) -> Result<ImagePlane> {
    if s == 0 {
        return Err(Error::Contract("upscale factor must be positive".into()));
    }
    resize_to(img, img.height() * s, img.width() * s, false)
}

/// Bicubic upscale of every plane of an NCHW tensor (computed in `f64`).
pub fn upscale_tensor<T: Real>(t: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = t.shape();
    if s == 0 || h == 0 || w == 0 {
        return Err(dim_err!("cannot upscale tensor {:?} by {s}", t.shape()));
    }
    let mut out = Vec::with_capacity(n * c * h * w * s * s);
    for item in 0..n {
        for ch in 0..c {
            let plane: Vec<f64> = t.plane(item, ch).iter().map(|v| v.as_f64()).collect();
            out.extend(
                resize_plane(&plane, h, w, h * s, w * s, false)
                    .into_iter()
                    .map(T::from_f64),
            );
        }
    }
    Tensor::from_vec([n, c, h * s, w * s], out)
}

/// Normalized 1-D Gaussian taps of radius `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> Result<ImagePlane> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let k = gaussian_taps(sigma);
    let r = (k.len() / 2) as i64;
    img.map_planes(|p, h, w| {
        let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        let mut rows = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * p[y * w + clamp(x as i64 + i as i64 - r, w)])
                    .sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * rows[clamp(y as i64 + i as i64 - r, h) * w + x])
                    .sum();
            }
        }
        Ok((out, h, w))
    })
}
