use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ibp::resample::resize_bicubic;
use crate::imaging::{
    degrade, load_image, rgb_to_y, Augmentation, ColorSpace, ImagePlane, PatchPair,
};
use crate::tensor::{Real, Tensor};

/// Training pairs held in memory as whole images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pairs: Vec<PatchPair>,
    scale: usize,
    color: ColorSpace,
}

fn convert(img: ImagePlane, color: ColorSpace) -> Result<ImagePlane> {
    match (img.color(), color) {
        (ColorSpace::Rgb, ColorSpace::Y) => rgb_to_y(&img),
        (ColorSpace::Y, ColorSpace::Rgb) => Err(Error::Dataset(
            "an RGB network cannot train on grayscale images".into(),
        )),
        _ => Ok(img),
    }
}

/// Image files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| {
                        matches!(
                            e.to_ascii_lowercase().as_str(),
                            "png" | "ppm" | "pgm" | "pnm"
                        )
                    })
                    .unwrap_or(false)
        })
        .collect();
    out.sort();
    Ok(out)
}

impl Dataset {
    /// Degrade each HR image (after colour conversion) to build the pairs.
    pub fn from_hr_images(
        images: Vec<ImagePlane>,
        scale: usize,
        color: ColorSpace,
    ) -> Result<Self> {
        let pairs = images
            .into_iter()
            .map(|hr| {
                let hr = convert(hr, color)?.crop_to_multiple(scale)?;
                let lr = degrade(&hr, scale)?;
                PatchPair::new(lr, hr, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs, scale, color)
    }

    pub fn from_pairs(pairs: Vec<PatchPair>, scale: usize, color: ColorSpace) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Dataset("no training images".into()));
        }
        if let Some(p) = pairs
            .iter()
            .find(|p| p.scale != scale || p.hr.color() != color)
        {
            return Err(Error::Dataset(format!(
                "pair with scale {} and {:?} does not fit a x{scale} {color:?} dataset",
                p.scale,
                p.hr.color()
            )));
        }
        Ok(Dataset {
            pairs,
            scale,
            color,
        })
    }

    /// Load a directory. With `LR/` and `HR/` subdirectories (the layout
    /// written by `prepare`) files are paired by name; otherwise every image
    /// in `dir` is an HR image and is degraded here.
    pub fn from_dir(dir: &Path, scale: usize, color: ColorSpace) -> Result<Self> {
        let (lr_dir, hr_dir) = (dir.join("LR"), dir.join("HR"));
        if lr_dir.is_dir() && hr_dir.is_dir() {
            let mut pairs = Vec::new();
            for hr_path in list_images(&hr_dir)? {
                let lr_path = lr_dir.join(hr_path.file_name().expect("listed files have names"));
                if !lr_path.exists() {
                    return Err(Error::Dataset(format!(
                        "{} has no LR counterpart {}",
                        hr_path.display(),
                        lr_path.display()
                    )));
                }
                let hr = convert(load_image(&hr_path)?, color)?;
                let lr = convert(load_image(&lr_path)?, color)?;
                pairs.push(
                    PatchPair::new(lr, hr, scale)
                        .map_err(|e| Error::Dataset(format!("{}: {e}", hr_path.display())))?,
                );
            }
            return Self::from_pairs(pairs, scale, color);
        }
        let images = list_images(dir)?
            .iter()
            .map(load_image)
            .collect::<Result<Vec<_>>>()?;
        Self::from_hr_images(images, scale, color)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PatchPair] {
        &self.pairs
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    /// Smallest LR side over the dataset.
    pub fn min_lr_side(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.lr.height().min(p.lr.width()))
            .min()
            .unwrap_or(0)
    }
}

/// Batch sampling settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampling {
    pub batch_size: usize,
    pub patch_size: usize,
    pub augment: bool,
    pub scale_jitter: Option<(f64, f64)>,
}

fn jittered<R: Rng>(pair: &PatchPair, range: (f64, f64), rng: &mut R) -> Result<PatchPair> {
    let f = if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    };
    let hr = resize_bicubic(&pair.hr, f, true)?.crop_to_multiple(pair.scale)?;
    let lr = degrade(&hr, pair.scale)?;
    PatchPair::new(lr, hr, pair.scale)
}

/// Draw `batch_size` aligned patch pairs: a uniformly chosen image, an
/// optional rescale, a random aligned crop and (with `augment`) random flips
/// and quarter turns. Returns `(lr, hr)` batches.
pub fn sample_batch<T: Real, R: Rng>(
    ds: &Dataset,
    sampling: &Sampling,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, p, s) = (sampling.batch_size, sampling.patch_size, ds.scale);
    if ds.min_lr_side() < p {
        return Err(Error::Dataset(format!(
            "LR patch {p} (HR {}) does not fit the smallest training image (LR side {})",
            p * s,
            ds.min_lr_side()
        )));
    }
    let c = ds.color.channels();
    let mut lr = Vec::with_capacity(n * c * p * p);
    let mut hr = Vec::with_capacity(n * c * p * p * s * s);
    for _ in 0..n {
        let idx = rng.gen_range(0..ds.len());
        let mut pair = &ds.pairs[idx];
        let owned;
        if let Some(range) = sampling.scale_jitter {
            owned = jittered(pair, range, rng)?;
            pair = &owned;
        }
        let mut aug = Augmentation::draw(rng, pair.lr.dims(), Some(p))?;
        if !sampling.augment {
            aug = Augmentation {
                crop: aug.crop,
                ..Augmentation::default()
            };
        }
        let out = aug.apply(pair)?;
        lr.extend(out.lr.data().iter().map(|&v| T::from_f64(v)));
        hr.extend(out.hr.data().iter().map(|&v| T::from_f64(v)));
    }
    Ok((
        Tensor::from_vec([n, c, p, p], lr)?,
        Tensor::from_vec([n, c, p * s, p * s], hr)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    fn textured(h: usize, w: usize, phase: f64) -> ImagePlane {
        ImagePlane::from_fn(h, w, ColorSpace::Rgb, |c, y, x| {
            0.5 + 0.3 * ((y as f64 * 0.31 + phase + c as f64).sin() * (x as f64 * 0.17).cos())
        })
    }

    fn dataset() -> Dataset {
        Dataset::from_hr_images(
            vec![textured(64, 72, 0.0), textured(80, 64, 1.0)],
            4,
            ColorSpace::Y,
        )
        .unwrap()
    }

    fn sampling(batch: usize, patch: usize) -> Sampling {
        Sampling {
            batch_size: batch,
            patch_size: patch,
            augment: true,
            scale_jitter: None,
        }
    }

    #[test]
    fn batch_shapes() {
        let (lr, hr) =
            sample_batch::<f32, _>(&dataset(), &sampling(16, 10), &mut seeded_rng(0)).unwrap();
        assert_eq!(lr.shape(), [16, 1, 10, 10]);
        assert_eq!(hr.shape(), [16, 1, 40, 40]);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = dataset();
        let draw = |seed| {
            let mut rng = seeded_rng(seed);
            (0..3)
                .map(|_| sample_batch::<f64, _>(&ds, &sampling(4, 8), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn patches_stay_aligned() {
        // Isometries and aligned crops commute with degradation away from
        // the image border, where clamping differs between whole image and
        // patch; compare interior pixels only.
        let ds = dataset();
        let mut rng = seeded_rng(3);
        for _ in 0..10 {
            let (lr, hr) = sample_batch::<f64, _>(&ds, &sampling(4, 12), &mut rng).unwrap();
            for i in 0..4 {
                let hr_img = ImagePlane::from_tensor(&hr, i, ColorSpace::Y).unwrap();
                let lr_img = ImagePlane::from_tensor(&lr, i, ColorSpace::Y).unwrap();
                let again = degrade(&hr_img, 4).unwrap();
                for y in 2..10 {
                    for x in 2..10 {
                        assert!((again.get(0, y, x) - lr_img.get(0, y, x)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn errors() {
        let ds = dataset();
        assert!(sample_batch::<f32, _>(&ds, &sampling(1, 17), &mut seeded_rng(0)).is_err());
        assert!(Dataset::from_hr_images(vec![], 2, ColorSpace::Y).is_err());
        let gray = ImagePlane::filled(8, 8, ColorSpace::Y, 0.5);
        assert!(Dataset::from_hr_images(vec![gray], 2, ColorSpace::Rgb).is_err());
    }

    #[test]
    fn jitter_keeps_alignment_contract() {
        let ds = dataset();
        let s = Sampling {
            scale_jitter: Some((0.75, 1.0)),
            ..sampling(2, 8)
        };
        let (lr, hr) = sample_batch::<f32, _>(&ds, &s, &mut seeded_rng(5)).unwrap();
        assert_eq!(lr.shape(), [2, 1, 8, 8]);
        assert_eq!(hr.shape(), [2, 1, 32, 32]);
    }
}
