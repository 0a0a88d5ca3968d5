use rand::Rng;

use super::ImagePlane;
use crate::error::{dim_err, Result};

/// Aligned low/high-resolution pair; `hr` is `scale` times larger than `lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: ImagePlane,
    pub hr: ImagePlane,
    pub scale: usize,
}

impl PatchPair {
    pub fn new(lr: ImagePlane, hr: ImagePlane, scale: usize) -> Result<Self> {
        if hr.height() != lr.height() * scale
            || hr.width() != lr.width() * scale
            || hr.channels() != lr.channels()
        {
            return Err(dim_err!(
                "HR {}x{}x{} is not {scale}x the LR {}x{}x{}",
                hr.height(),
                hr.width(),
                hr.channels(),
                lr.height(),
                lr.width(),
                lr.channels()
            ));
        }
        Ok(PatchPair { lr, hr, scale })
    }
}

/// One draw of the geometric augmentation. Crop offsets are in LR pixels;
/// the HR crop starts at `scale` times the same offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Number of counter-clockwise quarter turns, 0..4.
    pub rot90: u8,
    pub hflip: bool,
    pub vflip: bool,
    /// `(top, left, size)` of a square LR crop.
    pub crop: Option<(usize, usize, usize)>,
}

impl Augmentation {
    /// Random flips, rotation and (when `crop` is given) a uniformly placed
    /// square LR crop of that size.
    pub fn draw<R: Rng>(rng: &mut R, lr_dims: (usize, usize), crop: Option<usize>) -> Result<Self> {
        let crop = match crop {
            None => None,
            Some(size) => {
                let (h, w) = lr_dims;
                if size == 0 || size > h || size > w {
                    return Err(dim_err!(
                        "cannot crop {size}x{size} from a {h}x{w} LR patch"
                    ));
                }
                Some((
                    rng.gen_range(0..=h - size),
                    rng.gen_range(0..=w - size),
                    size,
                ))
            }
        };
        Ok(Augmentation {
            rot90: rng.gen_range(0..4),
            hflip: rng.gen(),
            vflip: rng.gen(),
            crop,
        })
    }

    /// HR crop window `(top, left, size)` implied by the LR crop.
    pub fn hr_crop(&self, scale: usize) -> Option<(usize, usize, usize)> {
        self.crop.map(|(t, l, n)| (t * scale, l * scale, n * scale))
    }

    pub fn apply_image(
        &self,
        img: &ImagePlane,
        crop: Option<(usize, usize, usize)>,
    ) -> Result<ImagePlane> {
        let mut out = match crop {
            Some((t, l, n)) => img.crop(t, l, n, n)?,
            None => img.clone(),
        };
        if self.hflip {
            out = flip_horizontal(&out);
        }
        if self.vflip {
            out = flip_vertical(&out);
        }
        for _ in 0..self.rot90 % 4 {
            out = rotate90(&out);
        }
        Ok(out)
    }

    pub fn apply(&self, pair: &PatchPair) -> Result<PatchPair> {
        let lr = self.apply_image(&pair.lr, self.crop)?;
        let hr = self.apply_image(&pair.hr, self.hr_crop(pair.scale))?;
        PatchPair::new(lr, hr, pair.scale)
    }
}

/// Draw an [`Augmentation`] and apply it to both halves of `pair`.
pub fn augment<R: Rng>(pair: &PatchPair, crop: Option<usize>, rng: &mut R) -> Result<PatchPair> {
    Augmentation::draw(rng, pair.lr.dims(), crop)?.apply(pair)
}

pub fn flip_horizontal(img: &ImagePlane) -> ImagePlane {
    let w = img.width();
    ImagePlane::from_fn(img.height(), w, img.color(), |c, y, x| {
        img.get(c, y, w - 1 - x)
    })
}

pub fn flip_vertical(img: &ImagePlane) -> ImagePlane {
    let h = img.height();
    ImagePlane::from_fn(h, img.width(), img.color(), |c, y, x| {
        img.get(c, h - 1 - y, x)
    })
}

/// Quarter turn counter-clockwise; an `h x w` image becomes `w x h`.
pub fn rotate90(img: &ImagePlane) -> ImagePlane {
    let w = img.width();
    ImagePlane::from_fn(w, img.height(), img.color(), |c, y, x| {
        img.get(c, x, w - 1 - y)
    })
}
