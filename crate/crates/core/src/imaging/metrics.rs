use super::{rgb_to_y, ColorSpace, ImagePlane};
use crate::error::{dim_err, Result};

/// How a super-resolved image is scored against ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    /// Pixels removed from every border before scoring.
    pub crop: usize,
    /// Convert RGB inputs to BT.601 luma first.
    pub y_only: bool,
    pub peak: f64,
}

impl EvalProtocol {
    /// Luma-only scoring with an `s`-pixel border crop.
    pub fn for_scale(s: usize) -> Self {
        EvalProtocol {
            crop: s,
            y_only: true,
            peak: 1.0,
        }
    }

    fn prepare(&self, img: &ImagePlane) -> Result<ImagePlane> {
        let img = if self.y_only && img.color() == ColorSpace::Rgb {
            rgb_to_y(img)?
        } else {
            img.clone()
        };
        let (h, w) = img.dims();
        if 2 * self.crop >= h.min(w) {
            return Err(dim_err!(
                "border crop {} leaves nothing of a {h}x{w} image",
                self.crop
            ));
        }
        img.crop(self.crop, self.crop, h - 2 * self.crop, w - 2 * self.crop)
    }
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, proto: &EvalProtocol) -> Result<f64> {
    a.check_same_dims(b)?;
    let (a, b) = (proto.prepare(a)?, proto.prepare(b)?);
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (proto.peak * proto.peak / mse).log10())
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, averaged over channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, proto: &EvalProtocol) -> Result<f64> {
    a.check_same_dims(b)?;
    let (a, b) = (proto.prepare(a)?, proto.prepare(b)?);
    let (h, w) = a.dims();
    if h < WINDOW || w < WINDOW {
        return Err(dim_err!(
            "SSIM needs at least {WINDOW}x{WINDOW} pixels after cropping, got {h}x{w}"
        ));
    }
    let c1 = (0.01 * proto.peak).powi(2);
    let c2 = (0.03 * proto.peak).powi(2);
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (x, y) = (a.plane(c), b.plane(c));
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let (mu_x, _, _) = filter_valid(x, h, w, &k);
        let (mu_y, _, _) = filter_valid(y, h, w, &k);
        let (xx, _, _) = filter_valid(&prod(x, x), h, w, &k);
        let (yy, _, _) = filter_valid(&prod(y, y), h, w, &k);
        let (xy, oh, ow) = filter_valid(&prod(x, y), h, w, &k);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok((total / a.channels() as f64).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImagePlane::from_planar(h, w, ColorSpace::Y, vals).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = noise(32, 32, 1);
        let p = EvalProtocol::for_scale(4);
        assert_eq!(psnr(&a, &a, &p).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
    }

    #[test]
    fn uniform_offset_closed_form() {
        let a = ImagePlane::filled(20, 20, ColorSpace::Y, 0.5);
        let b = ImagePlane::filled(20, 20, ColorSpace::Y, 0.5 + 1.0 / 255.0);
        let p = psnr(&a, &b, &EvalProtocol::for_scale(2)).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9, "{p}");
    }

    #[test]
    fn negative_image_has_low_ssim() {
        let a = noise(40, 40, 2);
        let neg = ImagePlane::from_fn(40, 40, ColorSpace::Y, |c, y, x| 1.0 - a.get(c, y, x));
        let s = ssim(&a, &neg, &EvalProtocol::for_scale(0)).unwrap();
        assert!(s < 0.5, "{s}");
        assert!(s >= -1.0);
    }

    #[test]
    fn psnr_is_symmetric_and_falls_with_noise() {
        let a = noise(24, 24, 3);
        let p = EvalProtocol::for_scale(2);
        let mut prev = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1] {
            let b = ImagePlane::from_fn(24, 24, ColorSpace::Y, |c, y, x| {
                a.get(c, y, x) + amp * if (x + y) % 2 == 0 { 1.0 } else { -1.0 }
            });
            let ab = psnr(&a, &b, &p).unwrap();
            assert_eq!(ab, psnr(&b, &a, &p).unwrap());
            assert!(ab < prev);
            prev = ab;
        }
    }

    #[test]
    fn crop_is_honored() {
        let a = ImagePlane::filled(20, 20, ColorSpace::Y, 0.5);
        let mut b = a.clone();
        b.set(0, 0, 0, 0.0);
        let full = EvalProtocol {
            crop: 0,
            ..EvalProtocol::for_scale(0)
        };
        assert!(psnr(&a, &b, &full).unwrap().is_finite());
        assert_eq!(
            psnr(&a, &b, &EvalProtocol::for_scale(2)).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn errors_on_small_or_mismatched_images() {
        let a = noise(12, 12, 4);
        let p = EvalProtocol::for_scale(2);
        assert!(ssim(&a, &a, &p).is_err());
        let b = noise(12, 13, 4);
        assert!(psnr(&a, &b, &p).is_err());
    }
}
