//! Images, color conversion, file I/O, dataset degradation/augmentation and
//! quality metrics.

mod augment;
mod color;
mod io;
mod metrics;

use crate::error::{dim_err, Result};
use crate::ibp::resample;
use crate::tensor::{Real, Tensor};

pub use augment::{augment, flip_horizontal, flip_vertical, rotate90, Augmentation, PatchPair};
pub use color::{replace_luma, rgb_to_y, rgb_to_ycbcr, ycbcr_to_rgb};
pub use io::{load_image, save_image};
pub use metrics::{psnr, ssim, EvalProtocol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    /// Luminance only. Grayscale files load with this tag.
    Y,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        }
    }
}

/// Floating-point image in planar layout (`channel, row, column`).
///
/// Values are nominally in `[0, 1]`; they are clamped when read from or
/// written to a file, while intermediate results (residuals) may leave the
/// range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    color: ColorSpace,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, color: ColorSpace) -> Self {
        Self::filled(height, width, color, 0.0)
    }

    pub fn filled(height: usize, width: usize, color: ColorSpace, value: f64) -> Self {
        ImagePlane {
            height,
            width,
            color,
            data: vec![value; height * width * color.channels()],
        }
    }

    pub fn from_planar(
        height: usize,
        width: usize,
        color: ColorSpace,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != height * width * color.channels() {
            return Err(dim_err!(
                "{} values cannot form a {height}x{width} {:?} image",
                data.len(),
                color
            ));
        }
        Ok(ImagePlane {
            height,
            width,
            color,
            data,
        })
    }

    /// Build from per-pixel values; `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        color: ColorSpace,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * color.channels());
        for c in 0..color.channels() {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        ImagePlane {
            height,
            width,
            color,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.color.channels()
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Apply a single-channel transform to every channel. The transform maps
    /// `(values, height, width)` to `(values, new_height, new_width)`.
    pub fn map_planes(
        &self,
        mut f: impl FnMut(&[f64], usize, usize) -> Result<(Vec<f64>, usize, usize)>,
    ) -> Result<ImagePlane> {
        let mut data = Vec::new();
        let mut dims = (0, 0);
        for c in 0..self.channels() {
            let (plane, h, w) = f(self.plane(c), self.height, self.width)?;
            dims = (h, w);
            data.extend(plane);
        }
        ImagePlane::from_planar(dims.0, dims.1, self.color, data)
    }

    pub fn clamped(&self) -> ImagePlane {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn check_same_dims(&self, other: &ImagePlane) -> Result<()> {
        if self.height != other.height
            || self.width != other.width
            || self.channels() != other.channels()
        {
            return Err(dim_err!(
                "images differ in size: {}x{}x{} vs {}x{}x{}",
                self.height,
                self.width,
                self.channels(),
                other.height,
                other.width,
                other.channels()
            ));
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ImagePlane) -> Result<ImagePlane> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        ImagePlane::from_planar(self.height, self.width, self.color, data)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ImagePlane) -> Result<ImagePlane> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        ImagePlane::from_planar(self.height, self.width, self.color, data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sub-image of `height x width` starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImagePlane> {
        if top + height > self.height || left + width > self.width {
            return Err(dim_err!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height,
                self.width
            ));
        }
        Ok(ImagePlane::from_fn(height, width, self.color, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Largest top-left crop whose sides are multiples of `s`.
    pub fn crop_to_multiple(&self, s: usize) -> Result<ImagePlane> {
        let (h, w) = (self.height / s * s, self.width / s * s);
        if h == 0 || w == 0 {
            return Err(dim_err!(
                "{}x{} image is smaller than the scale factor {s}",
                self.height,
                self.width
            ));
        }
        self.crop(0, 0, h, w)
    }

    /// Single-item tensor of shape `(1, channels, height, width)`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.channels(), self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("image buffer matches its dimensions")
    }

    /// Image from batch item `item` of a tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, item: usize, color: ColorSpace) -> Result<Self> {
        if t.channels() != color.channels() || item >= t.batch() {
            return Err(dim_err!(
                "tensor {:?} item {item} cannot be read as a {:?} image",
                t.shape(),
                color
            ));
        }
        ImagePlane::from_planar(
            t.height(),
            t.width(),
            color,
            t.item(item).iter().map(|v| v.as_f64()).collect(),
        )
    }
}

/// Low-resolution counterpart of `hr`: crop to a multiple of `s`, then
/// antialiased bicubic downscale by exactly `1/s`.
pub fn degrade(hr: &ImagePlane, s: usize) -> Result<ImagePlane> {
    let cropped = hr.crop_to_multiple(s)?;
    resample::downscale(&cropped, s)
}
