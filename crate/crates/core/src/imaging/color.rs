use super::{ColorSpace, ImagePlane};
use crate::error::{dim_err, Result};

/// BT.601 studio-swing luma on `[0, 1]` inputs:
/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`.
pub fn rgb_to_y(img: &ImagePlane) -> Result<ImagePlane> {
    if img.color() != ColorSpace::Rgb {
        return Err(dim_err!(
            "rgb_to_y needs a 3-channel RGB image, got {} channel(s)",
            img.channels()
        ));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((r, g), b)| (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)
        .collect();
    ImagePlane::from_planar(img.height(), img.width(), ColorSpace::Y, data)
}

const YCBCR: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det: f64 = (0..3).map(|k| m[0][k] * c(0, k)).sum();
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    out
}

fn mix(img: &ImagePlane, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<ImagePlane> {
    if img.color() != ColorSpace::Rgb {
        return Err(dim_err!(
            "colour conversion needs 3 channels, got {}",
            img.channels()
        ));
    }
    let n = img.height() * img.width();
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let px = f([img.plane(0)[i], img.plane(1)[i], img.plane(2)[i]]);
        for c in 0..3 {
            data[c * n + i] = px[c];
        }
    }
    ImagePlane::from_planar(img.height(), img.width(), ColorSpace::Rgb, data)
}

/// BT.601 studio-swing YCbCr, stored in the three planes of an RGB-typed image.
pub fn rgb_to_ycbcr(img: &ImagePlane) -> Result<ImagePlane> {
    mix(img, |p| {
        std::array::from_fn(|r| {
            (YCBCR[r][0] * p[0] + YCBCR[r][1] * p[1] + YCBCR[r][2] * p[2] + OFFSET[r]) / 255.0
        })
    })
}

/// Inverse of [`rgb_to_ycbcr`].
pub fn ycbcr_to_rgb(img: &ImagePlane) -> Result<ImagePlane> {
    let inv = inverse(&YCBCR);
    mix(img, |p| {
        let q: [f64; 3] = std::array::from_fn(|r| 255.0 * p[r] - OFFSET[r]);
        std::array::from_fn(|r| inv[r][0] * q[0] + inv[r][1] * q[1] + inv[r][2] * q[2])
    })
}

/// Copy `y` into plane 0 of a YCbCr image.
pub fn replace_luma(ycbcr: &ImagePlane, y: &ImagePlane) -> Result<ImagePlane> {
    if y.color() != ColorSpace::Y || ycbcr.color() != ColorSpace::Rgb || y.dims() != ycbcr.dims() {
        return Err(dim_err!(
            "cannot place a {:?} luma plane into a {:?} colour image",
            y.dims(),
            ycbcr.dims()
        ));
    }
    let mut out = ycbcr.clone();
    let n = y.data().len();
    out.data_mut()[..n].copy_from_slice(y.data());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f64) -> f64 {
        let img = ImagePlane::filled(1, 1, ColorSpace::Rgb, v);
        rgb_to_y(&img).unwrap().data()[0]
    }

    #[test]
    fn studio_swing_endpoints() {
        assert!((gray(1.0) - 235.0 / 255.0).abs() < 1e-12);
        assert!((gray(0.0) - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn gray_ramp_is_affine() {
        let (a, b, c) = (gray(0.1), gray(0.4), gray(0.7));
        assert!(((b - a) - (c - b)).abs() < 1e-12);
    }

    #[test]
    fn rejects_luma_input() {
        let img = ImagePlane::new(2, 2, ColorSpace::Y);
        assert!(rgb_to_y(&img).is_err());
    }

    #[test]
    fn ycbcr_round_trip_and_luma_agrees() {
        let img = ImagePlane::from_fn(5, 4, ColorSpace::Rgb, |c, y, x| {
            ((c * 7 + y * 3 + x * 5) % 11) as f64 / 10.0
        });
        let ycc = rgb_to_ycbcr(&img).unwrap();
        let y = rgb_to_y(&img).unwrap();
        assert!(ycc
            .plane(0)
            .iter()
            .zip(y.data())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let back = ycbcr_to_rgb(&ycc).unwrap();
        assert!(back
            .data()
            .iter()
            .zip(img.data())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        // Neutral gray has centred chroma.
        let g = rgb_to_ycbcr(&ImagePlane::filled(1, 1, ColorSpace::Rgb, 0.5)).unwrap();
        assert!((g.get(1, 0, 0) - 128.0 / 255.0).abs() < 1e-12);
        assert!((g.get(2, 0, 0) - 128.0 / 255.0).abs() < 1e-12);
    }
}
